//! Command-line front end.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::config::{parse_config, to_config_text, ConfigError};
use crate::harness::{aggregate, recovery_metric, run_experiment, window_mean, ExperimentConfig, HarnessError};
use crate::report::{activity_csv, aggregate_csv, curves_csv, heatmap_files};
use crate::snapshot::{self, SnapshotError};
use crate::verify::{run_checks, Updates};

pub const MANIFEST: &str = "manifest.txt";
pub const CURVES: &str = "curves.csv";
pub const AGGREGATE: &str = "aggregate.csv";
pub const ACTIVITY: &str = "activity.csv";
pub const MODELS_DIR: &str = "models";

#[derive(Debug, Parser)]
#[command(name = "optdiverse", version, about = "Option-critic experiments on tabular gridworlds")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train every run and write curves, aggregate, activity, heatmaps and a manifest.
    Run {
        #[command(flatten)]
        experiment: ExperimentArgs,
        /// Also write one model snapshot per run under `<out>/models`.
        #[arg(long)]
        save_models: bool,
    },
    /// Write only the termination heatmaps.
    Heatmap {
        #[command(flatten)]
        experiment: ExperimentArgs,
        /// Read snapshots from this directory instead of training.
        #[arg(long)]
        models: Option<PathBuf>,
    },
    /// Run the built-in oracle checks.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the fully resolved configuration.
    PrintConfig {
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Args, Clone, Default)]
pub struct Overrides {
    /// Override one config key, `key=value` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl Overrides {
    fn all(&self) -> Vec<String> {
        let mut out = self.set.clone();
        out.extend(self.runs.map(|n| format!("runs={n}")));
        out.extend(self.seed.map(|s| format!("seed={s}")));
        out
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error("{path}: {source}")]
    Snapshot { path: PathBuf, source: SnapshotError },
    #[error("no model snapshots in {0}")]
    NoModels(PathBuf),
    #[error("failed checks: {0}")]
    Verify(String),
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Read {
        path: path.to_path_buf(),
        source,
    })
}

fn load_config(path: Option<&Path>, overrides: &Overrides) -> Result<ExperimentConfig, CliError> {
    let text = match path {
        Some(p) => read(p)?,
        None => String::new(),
    };
    Ok(parse_config(&text, &overrides.all())?)
}

fn write_all(dir: &Path, files: &[(String, String)]) -> Result<(), CliError> {
    let wrap = |path: &Path| {
        let path = path.to_path_buf();
        move |source| CliError::Write { path, source }
    };
    fs::create_dir_all(dir).map_err(wrap(dir))?;
    for (name, contents) in files {
        let path = dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(wrap(parent))?;
        }
        fs::write(&path, contents).map_err(wrap(&path))?;
    }
    Ok(())
}

/// Resolved config followed by the per-run seeds and tool version as comments,
/// so the file parses back with [`parse_config`].
pub fn manifest(cfg: &ExperimentConfig) -> String {
    let mut out = format!("# optdiverse {}\n", env!("CARGO_PKG_VERSION"));
    out.push_str(&to_config_text(cfg));
    for run in 0..cfg.n_runs {
        let _ = writeln!(out, "# run {run} seed {}", cfg.seed_for_run(run));
    }
    out
}

fn cmd_run(experiment: &ExperimentArgs, save_models: bool) -> Result<(), CliError> {
    let cfg = load_config(Some(&experiment.config), &experiment.overrides)?;
    let grid = cfg.environment.build();
    let logs = run_experiment(&cfg)?;
    let curve = aggregate(&logs)?;
    let variant = cfg.variant.algorithm.name();

    let mut files = vec![
        (CURVES.to_string(), curves_csv(&logs, variant)),
        (AGGREGATE.to_string(), aggregate_csv(&curve, variant)),
        (ACTIVITY.to_string(), activity_csv(&logs)),
    ];
    files.extend(heatmap_files(logs.iter().map(|l| &l.final_model), &grid));
    if save_models {
        for log in &logs {
            files.push((
                format!("{MODELS_DIR}/run_{:04}.model", log.run),
                snapshot::to_text(&log.final_model),
            ));
        }
    }
    files.push((MANIFEST.to_string(), manifest(&cfg)));
    write_all(&experiment.out, &files)?;

    let pre_start = cfg.transfer_episode.saturating_sub(100);
    if let Ok(pre) = window_mean(&curve.mean, pre_start, cfg.transfer_episode - pre_start) {
        println!("{variant}: mean steps over episodes {pre_start}..{} = {pre:.2}", cfg.transfer_episode);
    }
    let window = 50.min(cfg.episodes_total - cfg.transfer_episode);
    let rec = recovery_metric(&curve, cfg.transfer_episode, window)?;
    println!("{variant}: recovery over {window} episodes after the change = {rec:.2}");
    println!("wrote {} files to {}", files.len(), experiment.out.display());
    Ok(())
}

fn cmd_heatmap(experiment: &ExperimentArgs, models: Option<&Path>) -> Result<(), CliError> {
    let cfg = load_config(Some(&experiment.config), &experiment.overrides)?;
    let grid = cfg.environment.build();
    let trained = match models {
        Some(dir) => {
            let entries = fs::read_dir(dir).map_err(|source| CliError::Read {
                path: dir.to_path_buf(),
                source,
            })?;
            let mut paths: Vec<PathBuf> = entries
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "model"))
                .collect();
            paths.sort();
            if paths.is_empty() {
                return Err(CliError::NoModels(dir.to_path_buf()));
            }
            paths
                .iter()
                .map(|p| {
                    snapshot::from_text(&read(p)?).map_err(|source| CliError::Snapshot {
                        path: p.clone(),
                        source,
                    })
                })
                .collect::<Result<Vec<_>, _>>()?
        }
        None => run_experiment(&cfg)?.into_iter().map(|l| l.final_model).collect(),
    };
    let files = heatmap_files(&trained, &grid);
    write_all(&experiment.out, &files)?;
    println!("wrote {} heatmaps to {}", files.len(), experiment.out.display());
    Ok(())
}

fn cmd_verify(seed: u64) -> Result<(), CliError> {
    let checks = run_checks(&Updates::default(), seed);
    let mut failed = Vec::new();
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        if !c.passed {
            failed.push(c.name);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Verify(failed.join(", ")))
    }
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run {
            experiment,
            save_models,
        } => cmd_run(&experiment, save_models),
        Command::Heatmap { experiment, models } => cmd_heatmap(&experiment, models.as_deref()),
        Command::Verify { seed } => cmd_verify(seed),
        Command::PrintConfig { config, overrides } => {
            let cfg = load_config(config.as_deref(), &overrides)?;
            print!("{}", to_config_text(&cfg));
            Ok(())
        }
    }
}

pub fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
