use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use levy_burgers::config::{parse_config, Profile, SimConfig, SuiteKind};
use levy_burgers::report::RunManifest;
use levy_burgers::suites::run_suite;
use levy_burgers::Error;

/// Worker-count override; unset means one worker per core.
const THREADS_VAR: &str = "LEVY_BURGERS_THREADS";

#[derive(Parser)]
#[command(name = "levy-burgers", version, about = "Stochastic Burgers simulation and verification suites")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One trajectory from `phi`.
    Simulate(Args),
    /// Monte Carlo statistics of the configured observables.
    Ensemble(Args),
    /// Mild solution by chained Picard iteration along one noise path.
    Picard(Args),
    VerifySubordinator(Args),
    VerifyConvolution(Args),
    VerifyPicard(Args),
    GradientCheck(Args),
    Ergodicity(Args),
    /// Every verification suite in turn.
    All(Args),
}

#[derive(clap::Args)]
struct Args {
    /// `key = value` configuration file; defaults apply when omitted.
    config: Option<PathBuf>,
    /// Output directory, overriding `output_path`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Sample-size profile, overriding `profile`.
    #[arg(long, value_enum)]
    profile: Option<ProfileArg>,
    /// Seed, overriding `seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileArg {
    Full,
    Quick,
}

enum Failure {
    Config(String),
    Runtime(String),
    BlowUp(String),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (suites, args) = match cli.command {
        Command::Simulate(a) => (vec![SuiteKind::Simulate], a),
        Command::Ensemble(a) => (vec![SuiteKind::Ensemble], a),
        Command::Picard(a) => (vec![SuiteKind::Picard], a),
        Command::VerifySubordinator(a) => (vec![SuiteKind::VerifySubordinator], a),
        Command::VerifyConvolution(a) => (vec![SuiteKind::VerifyConvolution], a),
        Command::VerifyPicard(a) => (vec![SuiteKind::VerifyPicard], a),
        Command::GradientCheck(a) => (vec![SuiteKind::GradientCheck], a),
        Command::Ergodicity(a) => (vec![SuiteKind::Ergodicity], a),
        Command::All(a) => (verification_suites(), a),
    };
    match run(&suites, &args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Config(m)) => {
            eprintln!("configuration error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::BlowUp(m)) => {
            eprintln!("blow-up: {m}");
            ExitCode::from(3)
        }
    }
}

fn verification_suites() -> Vec<SuiteKind> {
    SuiteKind::ALL
        .iter()
        .copied()
        .filter(|k| !matches!(k, SuiteKind::Simulate | SuiteKind::Ensemble | SuiteKind::Picard))
        .collect()
}

fn classify(e: Error) -> Failure {
    match e {
        Error::Config { .. } | Error::InvalidParameter(_) | Error::SingularIntensity { .. } => {
            Failure::Config(e.to_string())
        }
        Error::BlowUp { .. } => Failure::BlowUp(e.to_string()),
        other => Failure::Runtime(other.to_string()),
    }
}

fn load(args: &Args) -> Result<SimConfig, Failure> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
            parse_config(&text).map_err(classify)?
        }
        None => SimConfig::default(),
    };
    if let Some(p) = args.profile {
        cfg.profile = match p {
            ProfileArg::Full => Profile::Full,
            ProfileArg::Quick => Profile::Quick,
        };
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(out) = &args.out {
        cfg.output_path = out.clone();
    }
    cfg.validate().map_err(classify)?;
    Ok(cfg)
}

fn configure_pool() -> Result<(), Failure> {
    let Ok(value) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::Config(format!("{THREADS_VAR} must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Runtime(e.to_string()))
}

fn run(suites: &[SuiteKind], args: &Args) -> Result<bool, Failure> {
    let cfg = load(args)?;
    for &kind in suites {
        cfg.validate_for(kind).map_err(classify)?;
    }
    configure_pool()?;
    let dir = cfg.output_path.clone();
    let mut manifest = RunManifest::new(cfg.render());
    let mut all_pass = true;
    let mut over_budget = Vec::new();
    for &kind in suites {
        eprintln!("running {} ({} profile)", kind.name(), cfg.profile.name());
        let report = run_suite(kind, &cfg).map_err(classify)?;
        print!("== {} ==\n{}", kind.name(), report.summary());
        manifest.write_suite(&report, &dir).map_err(classify)?;
        all_pass &= report.passed();
        if report.censored_fraction() > cfg.censor_budget {
            over_budget.push(format!(
                "{}: {} of {} trajectories censored",
                kind.name(),
                report.censored,
                report.trajectories
            ));
        }
    }
    manifest.write(&dir).map_err(classify)?;
    if !over_budget.is_empty() {
        return Err(Failure::BlowUp(over_budget.join("; ")));
    }
    Ok(all_pass)
}
