use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use twinwatch::bus::EventBus;
use twinwatch::scenario::{
    exit, run_report, run_scenario, study_detection, study_estimation, study_sensitivity, write_run_report,
    write_scenario_report, write_study_report, ScenarioConfig, StudyConfig, StudyReport,
};
use twinwatch::store::Store;
use twinwatch::validator::{ThresholdTable, VerdictPolicy};
use twinwatch::{Error, Result, RunId};

#[derive(Parser)]
#[command(name = "twinwatch", version, about = "Continuous validation of a gantry-crane digital twin")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for reports (and the store, unless TWINWATCH_STORE is set).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    policy: Option<Policy>,
    #[arg(long, global = true)]
    replications: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Policy {
    Any,
    Majority,
}

impl From<Policy> for VerdictPolicy {
    fn from(p: Policy) -> Self {
        match p {
            Policy::Any => VerdictPolicy::AnyBreach,
            Policy::Majority => VerdictPolicy::MajorityVote,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the normal calibration runs only and write thresholds.json.
    Calibrate,
    /// Run the full validation loop.
    Run {
        /// Rebuild each run's input from its logged commanded velocity.
        #[arg(long)]
        legacy: bool,
    },
    Study {
        #[arg(value_enum)]
        kind: StudyKind,
    },
    /// Write reports for a stored run or re-render a study's files.
    Report {
        #[arg(long, conflicts_with = "study", required_unless_present = "study")]
        run: Option<u64>,
        #[arg(long, value_enum)]
        study: Option<StudyKind>,
        /// Threshold table to judge the run against.
        #[arg(long)]
        thresholds: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum StudyKind {
    Sensitivity,
    Detection,
    Estimation,
}

impl StudyKind {
    fn name(self) -> &'static str {
        match self {
            StudyKind::Sensitivity => "sensitivity",
            StudyKind::Detection => "detection",
            StudyKind::Estimation => "estimation",
        }
    }
}

fn scenario_config(c: &Common) -> Result<ScenarioConfig> {
    let mut cfg = match &c.config {
        Some(path) => ScenarioConfig::from_json_file(path)?,
        None => ScenarioConfig::default(),
    };
    if let Some(seed) = c.seed {
        cfg.execution.seed = seed;
    }
    if let Some(out) = &c.out {
        cfg.out = out.clone();
    }
    if let Some(p) = c.policy {
        cfg.policy = p.into();
    }
    if let Some(r) = c.replications {
        cfg.execution.replications = r;
    }
    Ok(cfg)
}

fn study_config(c: &Common) -> Result<StudyConfig> {
    let mut cfg = match &c.config {
        Some(path) => StudyConfig::from_json_file(path)?,
        None => StudyConfig::default(),
    };
    if let Some(seed) = c.seed {
        cfg.execution.seed = seed;
    }
    if let Some(out) = &c.out {
        cfg.out = out.clone();
    }
    if let Some(r) = c.replications {
        cfg.execution.replications = r;
    }
    Ok(cfg)
}

fn print_written(paths: &[PathBuf]) {
    for p in paths {
        println!("{}", p.display());
    }
}

fn run(cli: Cli) -> Result<i32> {
    let c = &cli.common;
    match cli.command {
        Command::Calibrate => {
            let mut cfg = scenario_config(c)?;
            cfg.runs = cfg.calibration_runs;
            cfg.faults.clear();
            cfg.thresholds_file = None;
            let report = run_scenario(&cfg, &EventBus::new())?;
            print_written(&write_scenario_report(&report, &cfg.out)?);
            println!("{}", cfg.out.join("thresholds.json").display());
            Ok(report.exit_code())
        }
        Command::Run { legacy } => {
            let mut cfg = scenario_config(c)?;
            cfg.legacy |= legacy;
            let report = run_scenario(&cfg, &EventBus::new())?;
            print_written(&write_scenario_report(&report, &cfg.out)?);
            Ok(report.exit_code())
        }
        Command::Study { kind } => {
            let cfg = study_config(c)?;
            let report = match kind {
                StudyKind::Sensitivity => study_sensitivity(&cfg)?,
                StudyKind::Detection => study_detection(&cfg)?,
                StudyKind::Estimation => study_estimation(&cfg)?,
            };
            print_written(&write_study_report(&report, &cfg.out)?);
            Ok(exit::SUCCESS)
        }
        Command::Report { run, study, thresholds } => {
            if let Some(kind) = study {
                let cfg = study_config(c)?;
                let path = cfg.out.join(format!("{}.json", kind.name()));
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
                let report: StudyReport = serde_json::from_str(&text)?;
                print_written(&write_study_report(&report, &cfg.out)?);
                return Ok(exit::SUCCESS);
            }
            let cfg = scenario_config(c)?;
            let store = Store::open_read_only(cfg.store_dir())?;
            let default_table = cfg.out.join("thresholds.json");
            let table_path = thresholds.or_else(|| default_table.exists().then_some(default_table));
            let table = table_path.as_deref().map(ThresholdTable::from_json_file).transpose()?;
            let id = RunId(run.unwrap_or_default());
            let report = run_report(&store, id, table.as_ref(), cfg.policy)?;
            print_written(&write_run_report(&report, &cfg.out)?);
            Ok(exit::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                Error::Config(_) => exit::CONFIG,
                _ => exit::ABORTED,
            };
            ExitCode::from(code as u8)
        }
    }
}

