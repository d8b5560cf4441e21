//! `sphtr`: sampling grids, symmetry groups, datasets, training and the
//! equivariance and ablation experiments, each writing CSV files and the
//! resolved configuration into an output directory.

mod commands;
mod setup;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "sphtr", version, about = "Spherical Transformer experiments")]
struct Cli {
    /// Master seed for every random component.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true, default_value = "sphtr-out")]
    out: PathBuf,

    /// Experiment config file (`key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override one config key, e.g. `--set epochs=2`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Root holding `mnist/` and `cifar-10-batches-bin/`.
    #[arg(long, global = true, env = "SPHTR_DATA")]
    data_root: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    Erp,
    Cube,
    Icosa,
}

/// Grid selection flags shared by several subcommands.
#[derive(Debug, Default, Args)]
struct GridArgs {
    /// Icosahedral subdivision level.
    #[arg(long)]
    div: Option<usize>,
    /// Icosahedral patch scale.
    #[arg(long)]
    k: Option<usize>,
    /// Cube face edge, in points.
    #[arg(long = "e", alias = "edge")]
    edge: Option<usize>,
    /// ERP height in pixels (width defaults to twice this).
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    patch_h: Option<usize>,
    #[arg(long)]
    patch_w: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Preset {
    Sphmnist,
    Sphcifar,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SolidArg {
    Cube,
    Icosa,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AblationArg {
    ClsToken,
    PatchScale,
}

#[derive(Debug, Subcommand)]
enum DatasetCommand {
    /// Convert raw images into rotated, sampled sequence caches.
    Build {
        #[arg(long)]
        method: Option<MethodArg>,
        #[command(flatten)]
        grid: GridArgs,
        /// mnist, cifar or synthetic.
        #[arg(long)]
        source: Option<String>,
        /// none, so3 or group (applies to both splits).
        #[arg(long)]
        rotate: Option<String>,
    },
    /// Print a cache header and label histogram.
    Inspect { file: PathBuf },
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a sampling grid and export its points.
    Grid {
        method: MethodArg,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Monte-Carlo uniformity of one grid or a three-method preset sweep.
    Uniformity {
        method: Option<MethodArg>,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long)]
        preset: Option<Preset>,
        /// Iterations.
        #[arg(long)]
        n: Option<usize>,
        /// Reference set size (default: the grid's point count).
        #[arg(long)]
        m: Option<usize>,
    },
    /// Enumerate a rotation group, check its axioms, optionally export its
    /// permutations of a grid.
    Groups {
        solid: SolidArg,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Build or inspect dataset caches.
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Train a classifier and log per-epoch loss and accuracy.
    Train {
        /// Use a prebuilt training cache instead of raw images.
        #[arg(long)]
        train_cache: Option<PathBuf>,
        #[arg(long)]
        test_cache: Option<PathBuf>,
    },
    /// Top-1 accuracy of a checkpoint on a test set.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        test_cache: Option<PathBuf>,
    },
    /// Equivariance error sweep over subdivision levels and depths.
    Equivariance,
    /// Class-token or patch-scale ablation.
    Ablate {
        which: AblationArg,
        /// Print and save the resolved run configs without training.
        #[arg(long)]
        dry_run: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
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
