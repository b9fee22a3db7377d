//! Command-line front end: `generate`, `train`, `analyze` and `sweep`.
//!
//! Every command resolves one [`CliConfig`] from an optional TOML file plus
//! dotted-path overrides, and writes that resolved document next to its outputs.
//! Exit codes: 0 on success, 1 on a runtime failure, 2 on a usage or validation error.

mod commands;
mod config;
mod svg;
mod sweep;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

pub use config::{
    apply_override, expand_dotted_flags, model_from_label, CliConfig, DataConfig, OutputConfig,
    SweepAxis, SweepConfig,
};
pub use svg::{line_chart, Series};

use crate::error::{Error, Result};

/// Environment variable naming the default output root.
pub const OUTPUT_DIR_ENV: &str = "NOSAF_OUTPUT_DIR";
pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.toml";

#[derive(Parser, Debug)]
#[command(name = "nosaf", version, about = "Node-weighted codebank GNNs on synthetic and bundled graphs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct CommonArgs {
    /// TOML config document.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory. Defaults to `$NOSAF_OUTPUT_DIR/<command>` or `runs/<command>`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Generator seed for `generate`; single training seed for `train` and `sweep`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for independent runs.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// `dotted.path=value` override, repeatable. `--dotted.path value` is shorthand.
    #[arg(long = "set", value_name = "PATH=VALUE")]
    pub set: Vec<String>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a labeled graph with controllable homophily and write it as a bundle.
    Generate {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        target_h: Option<f64>,
        #[arg(long)]
        avg_degree: Option<f64>,
        #[arg(long)]
        feature_dim: Option<usize>,
        #[arg(long)]
        class_separation: Option<f64>,
        #[arg(long)]
        noise_std: Option<f64>,
    },
    /// Train one model per seed on a bundle; write run logs, checkpoints and a summary CSV.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        bundle: Option<PathBuf>,
        /// Also write an SVG chart of per-layer smoothness.
        #[arg(long)]
        svg: bool,
    },
    /// Report homophily statistics, and per-layer smoothness when given a checkpoint.
    Analyze {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        bundle: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        bins: usize,
    },
    /// Run a grid over depth, homophily or variant into a long-format CSV.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        bundle: Option<PathBuf>,
        #[arg(long)]
        axis: Option<SweepAxis>,
        /// Comma-separated axis values.
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
        #[arg(long)]
        svg: bool,
    },
}

impl clap::ValueEnum for SweepAxis {
    fn value_variants<'a>() -> &'a [Self] {
        &[SweepAxis::Depth, SweepAxis::Homophily, SweepAxis::Variant]
    }

    fn to_possible_value(&self) -> Option<clap::builder::PossibleValue> {
        Some(clap::builder::PossibleValue::new(self.as_str()))
    }
}

impl CommonArgs {
    fn resolve(&self) -> Result<CliConfig> {
        CliConfig::resolve(self.config.as_deref(), &self.set)
    }

    fn out_dir(&self, command: &str) -> PathBuf {
        if let Some(out) = &self.out {
            return out.clone();
        }
        let root = std::env::var_os(OUTPUT_DIR_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from);
        root.join(command)
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(jobs) = self.jobs {
            if jobs == 0 {
                return Err(Error::Argument("--jobs must be at least 1".into()));
            }
            builder = builder.num_threads(jobs);
        }
        builder
            .build()
            .map_err(|e| Error::Argument(format!("cannot start worker pool: {e}")))
    }
}

/// Parses arguments (including the program name) and runs the command.
pub fn run_from_args(args: Vec<String>) -> Result<()> {
    let cli = Cli::try_parse_from(expand_dotted_flags(args)).map_err(|e| Error::Argument(e.to_string()))?;
    run(cli.command)
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Generate {
            common,
            n,
            k,
            target_h,
            avg_degree,
            feature_dim,
            class_separation,
            noise_std,
        } => {
            let mut cfg = common.resolve()?;
            let s = &mut cfg.sbm;
            s.n = n.unwrap_or(s.n);
            s.k = k.unwrap_or(s.k);
            s.target_h = target_h.unwrap_or(s.target_h);
            s.avg_degree = avg_degree.unwrap_or(s.avg_degree);
            s.feature_dim = feature_dim.unwrap_or(s.feature_dim);
            s.class_separation = class_separation.unwrap_or(s.class_separation);
            s.noise_std = noise_std.unwrap_or(s.noise_std);
            s.seed = common.seed.unwrap_or(s.seed);
            commands::generate(&cfg, &common.out_dir("generate"))
        }
        Command::Train { common, bundle, svg } => {
            let mut cfg = common.resolve()?;
            apply_training_flags(&mut cfg, &common, bundle);
            cfg.output.svg |= svg;
            let pool = common.pool()?;
            commands::train(&cfg, &common.out_dir("train"), &pool)
        }
        Command::Analyze {
            common,
            bundle,
            checkpoint,
            bins,
        } => {
            let mut cfg = common.resolve()?;
            if bundle.is_some() {
                cfg.data.bundle = bundle;
            }
            commands::analyze(&cfg, checkpoint.as_deref(), bins, &common.out_dir("analyze"))
        }
        Command::Sweep {
            common,
            bundle,
            axis,
            values,
            svg,
        } => {
            let mut cfg = common.resolve()?;
            apply_training_flags(&mut cfg, &common, bundle);
            if axis.is_some() {
                cfg.sweep.axis = axis;
            }
            if !values.is_empty() {
                cfg.sweep.values = values;
            }
            cfg.output.svg |= svg;
            let pool = common.pool()?;
            sweep::sweep(&cfg, &common.out_dir("sweep"), &pool)
        }
    }
}

fn apply_training_flags(cfg: &mut CliConfig, common: &CommonArgs, bundle: Option<PathBuf>) {
    if bundle.is_some() {
        cfg.data.bundle = bundle;
    }
    if let Some(seed) = common.seed {
        cfg.train.seeds = vec![seed];
    }
}

/// Runs the CLI and maps the outcome to a process exit code.
pub fn main_with_args(args: Vec<String>) -> ExitCode {
    let cli = match Cli::try_parse_from(expand_dotted_flags(args)) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
