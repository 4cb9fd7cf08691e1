//! Command-line front end for the face fitting pipeline.
//!
//! [`dispatch`] parses arguments, builds the effective configuration
//! (defaults, then `--config`, then flags), echoes it to
//! `<out>/effective_config.txt` and runs one subcommand. Exit codes: 0 on
//! success, 1 on usage errors, 2 on configuration, data or format errors.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{error::ErrorKind, Args, Parser, Subcommand};

pub use config::Config;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "facefit", version, about = "Fit a morphable face model to images with informed MCMC")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed; every random stream is derived from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for all outputs; created if missing.
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
}

#[derive(Args, Debug, Clone, Default)]
struct Chain {
    /// MCMC iterations per chain.
    #[arg(long)]
    iterations: Option<usize>,
    /// Probability of the local random-walk kernel (1 = uninformed).
    #[arg(long)]
    alpha: Option<f64>,
}

#[derive(Args, Debug, Clone, Default)]
struct Target {
    /// Target image as binary PPM.
    #[arg(long, value_name = "PPM", conflicts_with = "index")]
    image: Option<PathBuf>,
    /// Target image as a dataset record index.
    #[arg(long)]
    index: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the procedural morphable model (model.fmm).
    GenerateModel {
        #[command(flatten)]
        common: Common,
    },
    /// Render a synthetic training set from prior draws (dataset.fds).
    GenerateData {
        #[command(flatten)]
        common: Common,
        /// Number of records.
        #[arg(long)]
        count: Option<usize>,
    },
    /// Train the network on the first 90% of the dataset (weights.bnw, train_log.csv).
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Run one chain on a target image (trace.csv, best_fit.ppm, best_params.csv).
    Fit {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        chain: Chain,
        #[command(flatten)]
        target: Target,
    },
    /// Render draws from the predictive distribution for a target image.
    RenderSamples {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        target: Target,
        /// Number of sample images.
        #[arg(long)]
        count: Option<usize>,
    },
    /// Paired informed/uninformed chains over synthetic test images.
    Benchmark {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        chain: Chain,
        /// Number of test images.
        #[arg(long)]
        count: Option<usize>,
        /// Worker threads over images.
        #[arg(long)]
        threads: Option<usize>,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::GenerateModel { common }
            | Command::GenerateData { common, .. }
            | Command::Train { common }
            | Command::Fit { common, .. }
            | Command::RenderSamples { common, .. }
            | Command::Benchmark { common, .. } => common,
        }
    }

    fn apply(&self, cfg: &mut Config) {
        if let Some(seed) = self.common().seed {
            cfg.seed = seed;
        }
        let chain = |cfg: &mut Config, c: &Chain| {
            if let Some(i) = c.iterations {
                cfg.iterations = i;
            }
            if let Some(a) = c.alpha {
                cfg.alpha = a;
            }
        };
        let target = |cfg: &mut Config, t: &Target| {
            if let Some(p) = &t.image {
                cfg.target_image = p.display().to_string();
                cfg.target_index = None;
            }
            if let Some(i) = t.index {
                cfg.target_index = Some(i);
                cfg.target_image.clear();
            }
        };
        match self {
            Command::GenerateModel { .. } | Command::Train { .. } => {}
            Command::GenerateData { count, .. } => {
                if let Some(n) = count {
                    cfg.dataset_size = *n;
                }
            }
            Command::Fit { chain: c, target: t, .. } => {
                chain(cfg, c);
                target(cfg, t);
            }
            Command::RenderSamples { target: t, count, .. } => {
                target(cfg, t);
                if let Some(n) = count {
                    cfg.samples = *n;
                }
            }
            Command::Benchmark { chain: c, count, threads, .. } => {
                chain(cfg, c);
                if let Some(n) = count {
                    cfg.test_images = *n;
                }
                if let Some(t) = threads {
                    cfg.threads = *t;
                }
            }
        }
    }
}

fn run(command: &Command) -> Result<()> {
    let common = command.common();
    let mut cfg = match &common.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    command.apply(&mut cfg);
    let out: &Path = &common.out;
    std::fs::create_dir_all(out).with_context(|| format!("creating output directory {}", out.display()))?;
    std::fs::write(out.join("effective_config.txt"), cfg.render())
        .with_context(|| format!("writing {}", out.join("effective_config.txt").display()))?;
    match command {
        Command::GenerateModel { .. } => commands::generate_model_cmd(&cfg, out),
        Command::GenerateData { .. } => commands::generate_data_cmd(&cfg, out),
        Command::Train { .. } => commands::train_cmd(&cfg, out),
        Command::Fit { .. } => commands::fit_cmd(&cfg, out),
        Command::RenderSamples { .. } => commands::render_samples_cmd(&cfg, out),
        Command::Benchmark { .. } => commands::benchmark_cmd(&cfg, out),
    }
}

/// Runs the command line and returns the process exit code.
pub fn dispatch<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    match run(&cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("facefit: error: {msg}");
            EXIT_DATA
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn usage_errors_map_to_exit_one() {
        assert_eq!(dispatch(["facefit", "frobnicate"]), EXIT_USAGE);
        assert_eq!(dispatch(["facefit"]), EXIT_USAGE);
        assert_eq!(dispatch(["facefit", "fit", "--alpha", "high"]), EXIT_USAGE);
        assert_eq!(dispatch(["facefit", "--help"]), EXIT_OK);
    }

    #[test]
    fn flags_override_config_values() {
        let cli = Cli::try_parse_from([
            "facefit", "benchmark", "--seed", "9", "--iterations", "50", "--alpha", "0.3", "--count", "4", "--threads", "2",
        ])
        .unwrap();
        let mut cfg = Config::default();
        cli.command.apply(&mut cfg);
        assert_eq!((cfg.seed, cfg.iterations, cfg.alpha, cfg.test_images, cfg.threads), (9, 50, 0.3, 4, 2));

        let cli = Cli::try_parse_from(["facefit", "render-samples", "--count", "5", "--index", "3"]).unwrap();
        let mut cfg = Config::default();
        cfg.target_image = "a.ppm".into();
        cli.command.apply(&mut cfg);
        assert_eq!((cfg.samples, cfg.target_index, cfg.target_image.as_str()), (5, Some(3), ""));
    }
}
