use sdiot_core::scenarios::{library_scenario, matrix_suite, run_scenario, Outcome, ScenarioSpec, LIBRARY};
use sdiot_core::{Module, ModuleSet};

fn lib(name: &str) -> ScenarioSpec {
    library_scenario(name).unwrap().unwrap()
}

fn without(spec: &ScenarioSpec, m: Module) -> ScenarioSpec {
    let rest: Vec<Module> = spec.modules.iter().filter(|x| *x != m).collect();
    spec.clone().with_modules(ModuleSet::of(&rest))
}

#[test]
fn baseline_is_quiet_and_exact() {
    let out = run_scenario(&lib("baseline")).unwrap();
    let r = &out.report;
    assert!(r.ok(), "{:?}", r.violations);
    assert!(r.alerts.is_empty());
    assert!(r.countermeasures.is_empty());
    assert!(r.sink.closed > 0);
    assert_eq!(r.sink.correct, r.sink.closed);
    assert!(r.aggregate_ok());
}

#[test]
fn privacy_stops_device_link_eavesdropping() {
    let spec = lib("eavesdrop_device");
    let on = run_scenario(&spec).unwrap().report;
    let off = run_scenario(&without(&spec, Module::Privacy)).unwrap().report;
    assert_eq!(on.outcomes[0].outcome, Outcome::Prevented);
    assert_eq!(on.outcomes[0].successes, 0);
    assert!(off.outcomes[0].successes > 0);
    assert_eq!(off.outcomes[0].outcome, Outcome::Missed);
}

#[test]
fn every_library_scenario_holds_its_invariants() {
    for (name, _) in LIBRARY {
        let r = run_scenario(&lib(name)).unwrap().report;
        assert!(r.violations.is_empty(), "{name}: {:?}", r.violations);
    }
}

#[test]
fn enabling_all_modules_never_helps_an_attacker() {
    for (name, _) in LIBRARY {
        let spec = lib(name);
        if spec.attacks.is_empty() {
            continue;
        }
        let on = run_scenario(&spec.clone().with_modules(ModuleSet::all())).unwrap().report;
        let off = run_scenario(&spec.with_modules(ModuleSet::none())).unwrap().report;
        for (a, b) in on.outcomes.iter().zip(&off.outcomes) {
            assert!(a.successes <= b.successes, "{name}: {} with defenses, {} without", a.successes, b.successes);
        }
    }
}

#[test]
fn seed_changes_the_run_but_not_its_verdicts() {
    let spec = lib("spoof");
    let a = run_scenario(&spec).unwrap().report;
    let b = run_scenario(&spec.clone().with_seed(spec.seed + 1)).unwrap().report;
    assert_ne!(a.digest, b.digest);
    assert!(matches!(a.outcomes[0].outcome, Outcome::Detected { .. } | Outcome::Prevented));
    assert!(matches!(b.outcomes[0].outcome, Outcome::Detected { .. } | Outcome::Prevented));
}

#[test]
fn grid_is_deterministic() {
    let a = matrix_suite();
    let b = matrix_suite();
    assert_eq!(a.render(), b.render());
    assert!(a.all_pass(), "{}", a.render());
}
