//! Config resolution, output files and dataset loading shared by subcommands.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use sphtr::dataset::{build_dataset, load_source, SequenceSet, Split};
use sphtr::sampling::SamplingGrid;
use sphtr::{Error, ExperimentConfig, Result, SamplingMethod};

use crate::{Cli, GridArgs, MethodArg};

pub const RESOLVED_CONFIG: &str = "config.resolved";

pub struct Context {
    pub cfg: ExperimentConfig,
    pub out: PathBuf,
    pub data_root: Option<PathBuf>,
}

impl Context {
    /// Defaults, then the config file, then `--set` overrides, then the
    /// subcommand's own flags (`apply`), then `--seed`.
    pub fn resolve(cli: &Cli, apply: impl FnOnce(&mut ExperimentConfig) -> Result<()>) -> Result<Context> {
        let mut cfg = match &cli.config {
            Some(path) => ExperimentConfig::from_file(path)?,
            None => ExperimentConfig::default(),
        };
        for kv in &cli.overrides {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Argument(format!("--set expects KEY=VALUE, got `{kv}`")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        apply(&mut cfg)?;
        if let Some(seed) = cli.seed {
            cfg.seed = seed;
        }
        Ok(Context {
            cfg,
            out: cli.out.clone(),
            data_root: cli.data_root.clone(),
        })
    }

    /// Creates the output directory and writes the resolved config into it.
    pub fn prepare_output(&self) -> Result<()> {
        fs::create_dir_all(&self.out)?;
        fs::write(self.out.join(RESOLVED_CONFIG), self.cfg.resolved())?;
        Ok(())
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    pub fn grid(&self) -> Result<SamplingGrid> {
        self.cfg.grid().build()
    }

    /// Loads one split of the configured source and samples it on `grid`.
    pub fn build_split(&self, grid: &SamplingGrid, split: Split) -> Result<SequenceSet> {
        let dir = self.cfg.source_dir(self.data_root.as_deref())?;
        let (limit, rotate) = match split {
            Split::Train => (self.cfg.train_limit, self.cfg.rotate_train),
            Split::Test => (self.cfg.test_limit, self.cfg.rotate_test),
        };
        let raw = load_source(self.cfg.source, &dir, split, limit, self.cfg.seed)?;
        build_dataset(&raw, self.cfg.source, grid, rotate, split, self.cfg.seed)
    }
}

pub fn method(arg: MethodArg) -> SamplingMethod {
    match arg {
        MethodArg::Erp => SamplingMethod::Erp,
        MethodArg::Cube => SamplingMethod::Cube,
        MethodArg::Icosa => SamplingMethod::Icosa,
    }
}

/// Copies grid flags into the config.
pub fn apply_grid(cfg: &mut ExperimentConfig, m: Option<MethodArg>, g: &GridArgs) {
    if let Some(m) = m {
        cfg.method = method(m);
    }
    if let Some(v) = g.div {
        cfg.div = v;
    }
    if let Some(v) = g.k {
        cfg.patch_scale = v;
    }
    if let Some(v) = g.edge {
        cfg.edge = v;
    }
    if let Some(h) = g.height {
        cfg.erp_height = h;
        cfg.erp_width = g.width.unwrap_or(2 * h);
    } else if let Some(w) = g.width {
        cfg.erp_width = w;
    }
    if let Some(v) = g.patch_h {
        cfg.patch_h = v;
    }
    if let Some(v) = g.patch_w {
        cfg.patch_w = v;
    }
}

/// Writes a file through a buffered writer.
pub fn write_file(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    body(&mut w)?;
    w.flush()?;
    Ok(())
}

pub fn read_cache(path: &Path) -> Result<SequenceSet> {
    let file = File::open(path).map_err(|e| Error::Ingestion {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    SequenceSet::read_cache(std::io::BufReader::new(file))
}
