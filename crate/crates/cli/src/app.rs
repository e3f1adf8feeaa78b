//! Command-line parsing and exit codes.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};

use crate::config::{self, ExperimentConfig, PRESETS};
use crate::output::RunManifest;
use crate::{plot, run};

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "lightnet", version, about = "Train dense networks and analyze them as sparse graphs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train networks for every initializer and repeat.
    Train(RunArgs),
    /// Train a parent, prune it to each active fraction, reinitialize and retrain.
    PruneReinit(RunArgs),
    /// Monte Carlo complete-path fraction of the strongest edges.
    PathCurve(RunArgs),
    /// Lightning count x strength grid.
    ParamStudy(RunArgs),
    /// Per-layer |w| CDFs of trained networks or of a saved weights file.
    Cdf {
        #[command(flatten)]
        run: RunArgs,
        /// Weights JSON written by a previous run (skips training).
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Convert a run directory's CSVs into plot data.
    Plot {
        run_dir: PathBuf,
        /// Output directory (default `<run_dir>/plot`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List the built-in presets.
    Presets,
    /// Print a preset as a config file.
    ShowPreset { name: String },
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// TOML config, or a `manifest.json` of an earlier run to repeat it.
    #[arg(long, conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub preset: Option<String>,
    /// Base seed; repeat `r` uses `seed + r`.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Never download; fail if the data cache is cold.
    #[arg(long)]
    pub offline: bool,
    #[arg(long)]
    pub repeats: Option<usize>,
    /// Worker threads for parallel repeats, grid cells and trials.
    #[arg(long)]
    pub threads: Option<usize>,
}

fn default_preset(command: &str) -> &'static str {
    match command {
        "prune-reinit" => "prune-reinit-desk",
        "path-curve" => "path-curve-desk",
        "param-study" => "param-study-desk",
        "cdf" => "cdf",
        _ => "mnist-lenet-300-100",
    }
}

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    if path.extension().is_some_and(|e| e == "json") {
        Ok(RunManifest::load(path)?.config)
    } else {
        ExperimentConfig::load(path)
    }
}

/// Config from `--config`/`--preset` (or the command's default preset) with flag overrides applied.
pub fn resolve_config(args: &RunArgs, command: &str) -> Result<ExperimentConfig> {
    let mut config = match (&args.config, &args.preset) {
        (Some(path), _) => load_config(path)?,
        (None, Some(name)) => config::preset(name)?,
        (None, None) => config::preset(default_preset(command))?,
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(repeats) = args.repeats {
        config.repeats = repeats;
    }
    if args.offline {
        config.data.offline = true;
    }
    if let Some(out) = &args.out {
        config.output_dir = Some(out.clone());
    }
    Ok(config)
}

fn out_dir(config: &ExperimentConfig) -> PathBuf {
    config.output_dir.clone().unwrap_or_else(|| PathBuf::from("runs").join(&config.name))
}

fn set_threads(threads: Option<usize>) -> Result<()> {
    if let Some(n) = threads {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

pub fn execute(cli: Cli) -> Result<PathBuf> {
    let (args, command) = match &cli.command {
        Command::Plot { run_dir, out } => {
            let manifest = plot::cmd_plot(run_dir, out.as_deref())?;
            for f in &manifest.files {
                println!("{}", f.file);
            }
            return Ok(out.clone().unwrap_or_else(|| run_dir.join("plot")));
        }
        Command::Presets => {
            for (name, about) in PRESETS {
                println!("{name:<24} {about}");
            }
            return Ok(PathBuf::new());
        }
        Command::ShowPreset { name } => {
            print!("{}", config::preset(name)?.to_toml());
            return Ok(PathBuf::new());
        }
        Command::Train(a) => (a, "train"),
        Command::PruneReinit(a) => (a, "prune-reinit"),
        Command::PathCurve(a) => (a, "path-curve"),
        Command::ParamStudy(a) => (a, "param-study"),
        Command::Cdf { run, .. } => (run, "cdf"),
    };
    set_threads(args.threads)?;
    let config = resolve_config(args, command)?;
    let out = out_dir(&config);
    let dir = match &cli.command {
        Command::Train(_) => run::cmd_train(&config, &out)?.dir,
        Command::PruneReinit(_) => run::cmd_prune_reinit(&config, &out)?.dir,
        Command::PathCurve(_) => run::cmd_path_curve(&config, &out)?.dir,
        Command::ParamStudy(_) => run::cmd_param_study(&config, &out)?.dir,
        Command::Cdf { weights, .. } => run::cmd_cdf(&config, weights.as_deref(), &out)?.dir,
        _ => unreachable!(),
    };
    println!("{}", dir.display());
    Ok(dir)
}

/// 3 for non-finite arithmetic anywhere in the error chain, 2 otherwise.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    let numerical = err.chain().any(|e| e.downcast_ref::<lightnet::Error>().is_some_and(lightnet::Error::is_numerical));
    if numerical {
        EXIT_NUMERICAL
    } else {
        EXIT_USAGE
    }
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(_) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn flags_override_preset() {
        let args = RunArgs {
            preset: Some("mnist-lenet-300-100".into()),
            seed: Some(9),
            repeats: Some(4),
            offline: true,
            out: Some("x".into()),
            ..RunArgs::default()
        };
        let c = resolve_config(&args, "train").unwrap();
        assert_eq!((c.seed, c.repeats, c.data.offline), (9, 4, true));
        assert_eq!(c.output_dir, Some(PathBuf::from("x")));
    }

    #[test]
    fn numerical_errors_map_to_exit_3() {
        let err = anyhow::Error::from(lightnet::Error::Diverged { epoch: 1, step: 0 }).context("training");
        assert_eq!(exit_code(&err), 3);
        assert_eq!(exit_code(&anyhow::anyhow!("bad config")), 2);
    }
}
