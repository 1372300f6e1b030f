use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::LevelFilter;

use sdiot_core::scenarios::{matrix_suite, parse_scenario, run_scenario, ScenarioSpec};

const EXIT_CONFIG: u8 = 1;
const EXIT_INVARIANT: u8 = 2;
const EXIT_CELL: u8 = 3;

#[derive(Parser)]
#[command(name = "sdiot", version, about = "Run security scenarios on a simulated software-defined IoT network")]
struct Cli {
    #[arg(long, value_enum, default_value = "info", global = true)]
    log_level: LogLevel,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum LogLevel {
    Quiet,
    Info,
    Trace,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario file and write its report and audit trail.
    Run {
        file: PathBuf,
        /// Override the seed in the file.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Parse and check a scenario file without running it.
    Validate { file: PathBuf },
    /// Run every coverage cell with its module on and off.
    Matrix {
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn load(file: &Path) -> Result<ScenarioSpec, String> {
    let text = fs::read_to_string(file).map_err(|e| format!("{}: {e}", file.display()))?;
    parse_scenario(&text).map_err(|e| format!("{}: {e}", file.display()))
}

fn write_all(dir: &Path, files: &[(&str, &str)]) -> Result<(), String> {
    fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    for (name, body) in files {
        let p = dir.join(name);
        fs::write(&p, body).map_err(|e| format!("{}: {e}", p.display()))?;
    }
    Ok(())
}

fn run(file: &Path, seed: Option<u64>, out: &Path, quiet: bool) -> ExitCode {
    let mut spec = match load(file) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    if let Some(seed) = seed {
        spec = spec.with_seed(seed);
    }
    let result = match run_scenario(&spec) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let report = &result.report;
    let text = report.render_text();
    let files = [
        ("report.txt", text.as_str()),
        ("report.kv", &report.render_kv()),
        ("audit.log", &result.audit.to_text()),
    ];
    if let Err(e) = write_all(out, &files) {
        eprintln!("error: {e}");
        return ExitCode::from(EXIT_CONFIG);
    }
    if !quiet {
        print!("{text}");
    }
    if report.ok() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_INVARIANT)
    }
}

fn matrix(out: &Path, quiet: bool) -> ExitCode {
    let grid = matrix_suite();
    let text = grid.render();
    if let Err(e) = write_all(out, &[("grid.txt", text.as_str())]) {
        eprintln!("error: {e}");
        return ExitCode::from(EXIT_CONFIG);
    }
    if !quiet {
        print!("{text}");
    }
    if grid.all_pass() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_CELL)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.log_level {
        LogLevel::Quiet => LevelFilter::Off,
        LogLevel::Info => LevelFilter::Info,
        LogLevel::Trace => LevelFilter::Trace,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    let quiet = matches!(cli.log_level, LogLevel::Quiet);
    match cli.command {
        Command::Run { file, seed, out } => run(&file, seed, &out, quiet),
        Command::Validate { file } => match load(&file) {
            Ok(spec) => {
                println!("ok: {} ({} attacks, modules {})", spec.name, spec.attacks.len(), spec.modules);
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(EXIT_CONFIG)
            }
        },
        Command::Matrix { out } => matrix(&out, quiet),
    }
}
