use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use caev::config::ScenarioConfig;
use caev::error::{ConfigError, SimError};
use caev::rl::policy::PolicyParameters;
use caev::rl::train;
use caev::sim::{self, SweepAxis};

/// Exit codes: 0 success, 2 validation error, 3 runtime failure.
const EXIT_VALIDATION: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "caev", version, about = "CACC electric-vehicle attack/defense simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Load and validate a scenario file without running anything.
    Validate { scenario: PathBuf },
    /// Run one scenario and write trace.csv + summary.json.
    Run {
        scenario: PathBuf,
        /// Output directory.
        #[arg(long, default_value = "caev-out")]
        out: PathBuf,
        /// Overwrite existing outputs.
        #[arg(long)]
        force: bool,
    },
    /// Train the defender policy; writes the checkpoint and curve.csv.
    Train {
        scenario: PathBuf,
        /// Override the scenario's episode count.
        #[arg(long)]
        episodes: Option<usize>,
        /// Policy checkpoint path; the reward curve lands next to it.
        #[arg(long, default_value = "policy.json")]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Sweep an attack-magnitude axis; writes sweep.csv + sweep.json.
    Sweep {
        scenario: PathBuf,
        /// `delta_a_max` or `delta_I_max`.
        #[arg(long)]
        axis: String,
        /// Comma-separated magnitudes.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long, default_value = "caev-sweep")]
        out: PathBuf,
        /// Worker threads.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        force: bool,
    },
    /// Generate plot-data CSVs and summary.txt from run/sweep outputs.
    Report { trace_dir: PathBuf },
}

enum CliError {
    Validation(String),
    Runtime(String),
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(c) => CliError::Validation(c.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

fn guard_overwrite(paths: &[&Path], force: bool) -> Result<(), CliError> {
    if force {
        return Ok(());
    }
    for p in paths {
        if p.exists() {
            return Err(CliError::Validation(format!(
                "{} exists; pass --force to overwrite",
                p.display()
            )));
        }
    }
    Ok(())
}

fn load_policy(cfg: &ScenarioConfig) -> Result<Option<PolicyParameters>, CliError> {
    if !cfg.defender.enabled {
        return Ok(None);
    }
    let rel = cfg
        .defender
        .policy
        .as_ref()
        .expect("validated: policy path set when defender enabled");
    let path = cfg.resolve(rel);
    let policy = PolicyParameters::load(&path)?;
    if policy.config_hash != cfg.hash() {
        log::info!(
            "policy {} was trained under a different scenario (hash mismatch)",
            path.display()
        );
    }
    Ok(Some(policy))
}

fn cmd_run(scenario: &Path, out: &Path, force: bool) -> Result<(), CliError> {
    let cfg = ScenarioConfig::load(scenario)?;
    let trace_path = out.join("trace.csv");
    let summary_path = out.join("summary.json");
    guard_overwrite(&[&trace_path, &summary_path], force)?;
    let policy = load_policy(&cfg)?;
    let trace = sim::run(&cfg, policy)?;
    std::fs::create_dir_all(out)?;
    trace.write_csv(&trace_path)?;
    trace.write_summary_json(&summary_path)?;
    let s = trace.summary;
    println!(
        "wrote {} ({} rows); min_d={:.3} max|e|={:.3} unsafe_entry={} collision={}",
        trace_path.display(),
        trace.rows.len(),
        s.min_d,
        s.max_abs_e,
        s.unsafe_entry,
        s.collision
    );
    Ok(())
}

fn cmd_train(
    scenario: &Path,
    episodes: Option<usize>,
    out: &Path,
    force: bool,
) -> Result<(), CliError> {
    let mut cfg = ScenarioConfig::load(scenario)?;
    if let Some(n) = episodes {
        cfg.training.episodes = n;
        cfg.validate()?;
    }
    let curve_path = out
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join("curve.csv");
    guard_overwrite(&[out, &curve_path], force)?;
    let result = train::train(&cfg)?;
    if let Some(dir) = out.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    result.policy.save(out)?;
    train::write_curve(&result.curve, &curve_path)?;
    let tail = &result.curve[result.curve.len().saturating_sub(50)..];
    println!(
        "wrote {} and {}; mean return over final {} episodes = {:.0}",
        out.display(),
        curve_path.display(),
        tail.len(),
        tail.iter().sum::<f64>() / tail.len() as f64
    );
    Ok(())
}

fn cmd_sweep(
    scenario: &Path,
    axis: &str,
    values: &[f64],
    out: &Path,
    jobs: usize,
    force: bool,
) -> Result<(), CliError> {
    let cfg = ScenarioConfig::load(scenario)?;
    let axis = SweepAxis::parse(axis).ok_or_else(|| {
        CliError::Validation(format!(
            "unknown axis `{axis}`; expected delta_a_max or delta_I_max"
        ))
    })?;
    let csv_path = out.join("sweep.csv");
    let json_path = out.join("sweep.json");
    guard_overwrite(&[&csv_path, &json_path], force)?;
    let policy = load_policy(&cfg)?;
    let report = sim::sweep(&cfg, axis, values, policy.as_ref(), jobs);
    if report.points.len() < values.len() {
        log::warn!(
            "{} of {} sweep runs failed; see log",
            values.len() - report.points.len(),
            values.len()
        );
    }
    std::fs::create_dir_all(out)?;
    report.write_csv(&csv_path)?;
    report.write_json(&json_path)?;
    match report.boundary {
        Some(b) => println!("wrote {}; safety boundary {}={b}", csv_path.display(), report.axis),
        None => println!("wrote {}; no safe magnitude in the swept set", csv_path.display()),
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.cmd {
        Cmd::Validate { scenario } => {
            ScenarioConfig::load(&scenario)?;
            println!("{}: ok", scenario.display());
            Ok(())
        }
        Cmd::Run { scenario, out, force } => cmd_run(&scenario, &out, force),
        Cmd::Train {
            scenario,
            episodes,
            out,
            force,
        } => cmd_train(&scenario, episodes, &out, force),
        Cmd::Sweep {
            scenario,
            axis,
            values,
            out,
            jobs,
            force,
        } => cmd_sweep(&scenario, &axis, &values, &out, jobs, force),
        Cmd::Report { trace_dir } => Ok(caev::report::report(&trace_dir)?),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CAEV_LOG", "warn")).init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_VALIDATION)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
