//! `lanecast`: trajectory analytics for highway lane-change decisions.
//!
//! One TOML config defines a run; subcommands execute its stages in order
//! (synth or real input -> extract -> cluster -> build-datasets ->
//! train/sweep -> report). Every artifact is stamped with the hash of the
//! effective configuration and the seed, and reruns of an unchanged config
//! reproduce every output byte for byte.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 runtime failure.

mod config;
mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lanecast::error::Error;

use config::{from_flag, PipelineConfig};

const DEFAULT_CONFIG: &str = "lanecast.toml";

#[derive(Parser)]
#[command(name = "lanecast", version)]
#[command(about = "Lane-change decision pipeline: extract, cluster, fuzzify, classify")]
struct Cli {
    /// Config file (default: lanecast.toml if present, else built-in defaults).
    #[arg(short, long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Override the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out_dir: Option<PathBuf>,

    /// Override the input data directory.
    #[arg(long, global = true, value_name = "DIR")]
    input_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus into <out>/synth.
    Synth {
        /// Comma-separated presets (extraction_battery, style_blobs,
        /// truncations, double_changes, missing_neighbors).
        #[arg(long, value_delimiter = ',', value_name = "NAME")]
        presets: Option<Vec<String>>,
    },
    /// Extract the lane-change decision dataset from raw recordings.
    Extract,
    /// Cluster driving styles over the extracted events.
    Cluster {
        /// Number of styles (1..=3).
        #[arg(long)]
        k: Option<usize>,
        /// Independent k-means restarts.
        #[arg(long)]
        restarts: Option<usize>,
    },
    /// Materialize model-ready dataset variants as CSV files.
    BuildDatasets,
    /// Train and evaluate one classifier on one dataset variant.
    Train {
        /// Dataset variant: bird, bird_style, or fuzzy.
        #[arg(long)]
        variant: Option<String>,
        /// Classifier: forest or network.
        #[arg(long)]
        classifier: Option<String>,
        /// Distance fuzzy coefficient (with --variant fuzzy).
        #[arg(long)]
        a: Option<f64>,
        /// Speed fuzzy coefficient (with --variant fuzzy).
        #[arg(long)]
        b: Option<f64>,
    },
    /// Evaluate the baselines plus the fuzzy-coefficient grid.
    Sweep {
        /// Classifier: forest or network.
        #[arg(long)]
        classifier: Option<String>,
    },
    /// Consolidate the output directory into one summary document.
    Report,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 1,
        Error::Parse { .. } | Error::Data(_) | Error::Json(_) => 2,
        Error::Shape { .. } | Error::Io(_) => 3,
    }
}

fn effective_config(cli: &Cli) -> lanecast::error::Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None if std::path::Path::new(DEFAULT_CONFIG).is_file() => {
            PipelineConfig::load(std::path::Path::new(DEFAULT_CONFIG))?
        }
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = Some(seed);
    }
    if let Some(dir) = &cli.out_dir {
        cfg.output.dir = dir.clone();
    }
    if let Some(dir) = &cli.input_dir {
        cfg.input.data_dir = Some(dir.clone());
    }
    match &cli.command {
        Command::Synth {
            presets: Some(names),
        } => {
            cfg.synth.presets = names
                .iter()
                .map(|n| from_flag("synth preset", n))
                .collect::<lanecast::error::Result<_>>()?;
        }
        Command::Cluster { k, restarts } => {
            if let Some(k) = k {
                cfg.clustering.k = *k;
            }
            if let Some(restarts) = restarts {
                cfg.clustering.restarts = *restarts;
            }
        }
        Command::Train {
            variant,
            classifier,
            a,
            b,
        } => {
            if let Some(v) = variant {
                cfg.train.variant = v.clone();
            }
            if let Some(c) = classifier {
                cfg.classifier.kind = from_flag("classifier", c)?;
            }
            if let Some(a) = a {
                cfg.train.a = Some(*a);
            }
            if let Some(b) = b {
                cfg.train.b = Some(*b);
            }
        }
        Command::Sweep {
            classifier: Some(c),
        } => {
            cfg.classifier.kind = from_flag("classifier", c)?;
        }
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> lanecast::error::Result<()> {
    let cfg = effective_config(cli)?;
    match &cli.command {
        Command::Synth { .. } => pipeline::cmd_synth(&cfg),
        Command::Extract => pipeline::cmd_extract(&cfg),
        Command::Cluster { .. } => pipeline::cmd_cluster(&cfg),
        Command::BuildDatasets => pipeline::cmd_build_datasets(&cfg),
        Command::Train { .. } => pipeline::cmd_train(&cfg),
        Command::Sweep { .. } => pipeline::cmd_sweep(&cfg),
        Command::Report => pipeline::cmd_report(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests print to stdout and succeed; real
            // usage errors go to stderr and exit 1.
            let code = u8::from(e.use_stderr());
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
