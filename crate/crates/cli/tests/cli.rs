use std::fs;
use std::path::PathBuf;
use std::process::Command;

fn sdiot() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sdiot"))
}

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/scenarios").join(format!("{name}.scn"))
}

#[test]
fn validate_accepts_library_files() {
    let out = sdiot().args(["validate"]).arg(scenario("baseline")).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok: baseline"));
}

#[test]
fn validate_reports_line_and_field() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.scn");
    fs::write(&bad, "[scenario]\nname = x\n[modules]\nenabled = privacy, warp\n").unwrap();
    let out = sdiot().arg("validate").arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 4") && err.contains("modules.enabled"), "{err}");
}

#[test]
fn missing_file_is_a_config_error() {
    let out = sdiot().args(["run", "/nonexistent/x.scn"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn run_writes_report_and_audit_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let mut texts = Vec::new();
    for sub in ["a", "b"] {
        let out_dir = dir.path().join(sub);
        let st = sdiot()
            .args(["--log-level", "quiet", "run"])
            .arg(scenario("spoof"))
            .arg("--out")
            .arg(&out_dir)
            .status()
            .unwrap();
        assert_eq!(st.code(), Some(0));
        let files: Vec<Vec<u8>> = ["report.txt", "report.kv", "audit.log"]
            .iter()
            .map(|f| fs::read(out_dir.join(f)).unwrap())
            .collect();
        texts.push(files);
    }
    assert_eq!(texts[0], texts[1]);
    let kv = String::from_utf8(texts[0][1].clone()).unwrap();
    assert!(kv.contains("attack.0.outcome=detected"), "{kv}");
}

#[test]
fn seed_override_changes_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let digest = |seed: &str| {
        let out_dir = dir.path().join(seed);
        sdiot()
            .args(["--log-level", "quiet", "run"])
            .arg(scenario("baseline"))
            .args(["--seed", seed, "--out"])
            .arg(&out_dir)
            .status()
            .unwrap();
        let kv = fs::read_to_string(out_dir.join("report.kv")).unwrap();
        assert!(kv.contains(&format!("seed={seed}\n")));
        kv.lines().find(|l| l.starts_with("digest=")).unwrap().to_string()
    };
    assert_ne!(digest("1"), digest("2"));
}
