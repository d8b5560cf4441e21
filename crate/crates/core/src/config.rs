//! Flat `key = value` experiment configuration shared by every subcommand.
//!
//! Lines are `key = value`; blank lines and `#` comments are ignored. Unknown
//! or repeated keys are errors. Lists are comma separated.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::dataset::{RotateMode, Source};
use crate::equivariance::EquivarianceMode;
use crate::error::{Error, Result};
use crate::model::{Activation, LnVariant, ModelConfig, PoolOrder};
use crate::real::Precision;
use crate::sampling::{GridParams, SamplingMethod};

/// Every tunable of the experiments, with defaults for the small
/// icosahedral digit classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub precision: Precision,

    pub source: Source,
    /// Raw data directory; defaults to the source's directory under the data root.
    pub data_dir: Option<PathBuf>,
    pub rotate_train: RotateMode,
    pub rotate_test: RotateMode,
    pub train_limit: Option<usize>,
    pub test_limit: Option<usize>,

    pub method: SamplingMethod,
    pub div: usize,
    pub patch_scale: usize,
    pub edge: usize,
    pub erp_height: usize,
    pub erp_width: usize,
    pub patch_h: usize,
    pub patch_w: usize,

    pub model_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_hidden: usize,
    pub dropout: f64,
    pub pos_embedding: bool,
    pub cls_token: bool,
    pub ln_variant: LnVariant,
    pub pool_order: PoolOrder,
    pub activation: Activation,
    pub num_classes: usize,

    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,

    pub uniformity_iterations: usize,
    /// Reference set size; 0 means the grid's point count.
    pub uniformity_reference: usize,

    pub eq_modes: Vec<EquivarianceMode>,
    pub eq_divs: Vec<usize>,
    pub eq_layers: Vec<usize>,
    pub eq_samples: usize,
    pub eq_pos_embedding: Vec<bool>,

    pub ablate_patch_scales: Vec<usize>,
    pub ablate_seeds: Vec<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            precision: Precision::F32,
            source: Source::Mnist,
            data_dir: None,
            rotate_train: RotateMode::So3,
            rotate_test: RotateMode::So3,
            train_limit: None,
            test_limit: None,
            method: SamplingMethod::Icosa,
            div: 3,
            patch_scale: 0,
            edge: 15,
            erp_height: 25,
            erp_width: 50,
            patch_h: 5,
            patch_w: 5,
            model_dim: 24,
            layers: 8,
            heads: 8,
            ffn_hidden: 96,
            dropout: 0.1,
            pos_embedding: true,
            cls_token: false,
            ln_variant: LnVariant::Pre,
            pool_order: PoolOrder::NormThenMean,
            activation: Activation::Gelu,
            num_classes: 10,
            epochs: 200,
            batch_size: 128,
            lr: 1e-3,
            uniformity_iterations: 100,
            uniformity_reference: 0,
            eq_modes: vec![EquivarianceMode::PatchPerm],
            eq_divs: vec![1, 2, 3, 4],
            eq_layers: vec![1, 2, 4, 8],
            eq_samples: 100,
            eq_pos_embedding: vec![false, true],
            ablate_patch_scales: vec![0, 1, 2, 3],
            ablate_seeds: vec![0],
        }
    }
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::config(format!("`{key}`: cannot parse `{v}`")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::config(format!(
            "`{key}`: expected true or false, got `{v}`"
        ))),
    }
}

fn parse_enum<T>(key: &str, v: &str, parse: impl Fn(&str) -> Option<T>) -> Result<T> {
    parse(v).ok_or_else(|| Error::config(format!("`{key}`: unknown value `{v}`")))
}

fn parse_list<T>(key: &str, v: &str, item: impl Fn(&str, &str) -> Result<T>) -> Result<Vec<T>> {
    let items: Vec<T> = v
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| item(key, s))
        .collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(Error::config(format!("`{key}`: empty list")));
    }
    Ok(items)
}

fn parse_limit(key: &str, v: &str) -> Result<Option<usize>> {
    match v {
        "all" | "none" | "" => Ok(None),
        _ => parse_num(key, v).map(Some),
    }
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    /// Parses a config file body on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Applies `key = value` lines; keys may appear once per call.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected `key = value`", lineno + 1)))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::config(format!("line {}: `{key}` given twice", lineno + 1)));
            }
            self.set(key, value.trim())
                .map_err(|e| Error::config(format!("line {}: {}", lineno + 1, strip_prefix(&e))))?;
        }
        Ok(())
    }

    /// Sets one key.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse_num(key, v)?,
            "precision" => self.precision = parse_enum(key, v, Precision::parse)?,
            "source" => self.source = parse_enum(key, v, Source::parse)?,
            "data_dir" => self.data_dir = (!v.is_empty()).then(|| PathBuf::from(v)),
            "rotate_train" => self.rotate_train = parse_enum(key, v, RotateMode::parse)?,
            "rotate_test" => self.rotate_test = parse_enum(key, v, RotateMode::parse)?,
            "train_limit" => self.train_limit = parse_limit(key, v)?,
            "test_limit" => self.test_limit = parse_limit(key, v)?,
            "method" => self.method = parse_enum(key, v, SamplingMethod::parse)?,
            "div" => self.div = parse_num(key, v)?,
            "patch_scale" => self.patch_scale = parse_num(key, v)?,
            "edge" => self.edge = parse_num(key, v)?,
            "erp_height" => self.erp_height = parse_num(key, v)?,
            "erp_width" => self.erp_width = parse_num(key, v)?,
            "patch_h" => self.patch_h = parse_num(key, v)?,
            "patch_w" => self.patch_w = parse_num(key, v)?,
            "model_dim" => self.model_dim = parse_num(key, v)?,
            "layers" => self.layers = parse_num(key, v)?,
            "heads" => self.heads = parse_num(key, v)?,
            "ffn_hidden" => self.ffn_hidden = parse_num(key, v)?,
            "dropout" => self.dropout = parse_num(key, v)?,
            "pos_embedding" => self.pos_embedding = parse_bool(key, v)?,
            "cls_token" => self.cls_token = parse_bool(key, v)?,
            "ln_variant" => self.ln_variant = parse_enum(key, v, LnVariant::parse)?,
            "pool_order" => self.pool_order = parse_enum(key, v, PoolOrder::parse)?,
            "activation" => self.activation = parse_enum(key, v, Activation::parse)?,
            "num_classes" => self.num_classes = parse_num(key, v)?,
            "epochs" => self.epochs = parse_num(key, v)?,
            "batch_size" => self.batch_size = parse_num(key, v)?,
            "lr" => self.lr = parse_num(key, v)?,
            "uniformity_iterations" => self.uniformity_iterations = parse_num(key, v)?,
            "uniformity_reference" => self.uniformity_reference = parse_num(key, v)?,
            "eq_modes" => {
                self.eq_modes = parse_list(key, v, |k, s| parse_enum(k, s, EquivarianceMode::parse))?
            }
            "eq_divs" => self.eq_divs = parse_list(key, v, parse_num)?,
            "eq_layers" => self.eq_layers = parse_list(key, v, parse_num)?,
            "eq_samples" => self.eq_samples = parse_num(key, v)?,
            "eq_pos_embedding" => self.eq_pos_embedding = parse_list(key, v, parse_bool)?,
            "ablate_patch_scales" => self.ablate_patch_scales = parse_list(key, v, parse_num)?,
            "ablate_seeds" => self.ablate_seeds = parse_list(key, v, parse_num)?,
            _ => return Err(Error::config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Every key with its effective value, in the file syntax.
    pub fn resolved(&self) -> String {
        let limit = |l: Option<usize>| l.map_or("all".to_string(), |v| v.to_string());
        let pairs: Vec<(&str, String)> = vec![
            ("seed", self.seed.to_string()),
            ("precision", self.precision.to_string()),
            ("source", self.source.to_string()),
            (
                "data_dir",
                self.data_dir
                    .as_ref()
                    .map(|p| p.display().to_string())
                    .unwrap_or_default(),
            ),
            ("rotate_train", self.rotate_train.to_string()),
            ("rotate_test", self.rotate_test.to_string()),
            ("train_limit", limit(self.train_limit)),
            ("test_limit", limit(self.test_limit)),
            ("method", self.method.to_string()),
            ("div", self.div.to_string()),
            ("patch_scale", self.patch_scale.to_string()),
            ("edge", self.edge.to_string()),
            ("erp_height", self.erp_height.to_string()),
            ("erp_width", self.erp_width.to_string()),
            ("patch_h", self.patch_h.to_string()),
            ("patch_w", self.patch_w.to_string()),
            ("model_dim", self.model_dim.to_string()),
            ("layers", self.layers.to_string()),
            ("heads", self.heads.to_string()),
            ("ffn_hidden", self.ffn_hidden.to_string()),
            ("dropout", self.dropout.to_string()),
            ("pos_embedding", self.pos_embedding.to_string()),
            ("cls_token", self.cls_token.to_string()),
            ("ln_variant", self.ln_variant.to_string()),
            ("pool_order", self.pool_order.to_string()),
            ("activation", self.activation.to_string()),
            ("num_classes", self.num_classes.to_string()),
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("lr", self.lr.to_string()),
            ("uniformity_iterations", self.uniformity_iterations.to_string()),
            ("uniformity_reference", self.uniformity_reference.to_string()),
            ("eq_modes", join(&self.eq_modes)),
            ("eq_divs", join(&self.eq_divs)),
            ("eq_layers", join(&self.eq_layers)),
            ("eq_samples", self.eq_samples.to_string()),
            ("eq_pos_embedding", join(&self.eq_pos_embedding)),
            ("ablate_patch_scales", join(&self.ablate_patch_scales)),
            ("ablate_seeds", join(&self.ablate_seeds)),
        ];
        let mut out = String::new();
        for (k, v) in pairs {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Grid parameters selected by `method`.
    pub fn grid(&self) -> GridParams {
        match self.method {
            SamplingMethod::Erp => GridParams::Erp {
                height: self.erp_height,
                width: self.erp_width,
                patch_h: self.patch_h,
                patch_w: self.patch_w,
            },
            SamplingMethod::Cube => GridParams::Cube { edge: self.edge },
            SamplingMethod::Icosa => GridParams::Icosa {
                div: self.div,
                patch_scale: self.patch_scale,
            },
        }
    }

    /// Network shape for inputs of `num_patches` rows of `input_dim` values.
    pub fn model(&self, num_patches: usize, input_dim: usize) -> ModelConfig {
        ModelConfig {
            num_patches,
            input_dim,
            model_dim: self.model_dim,
            layers: self.layers,
            heads: self.heads,
            ffn_hidden: self.ffn_hidden,
            num_classes: self.num_classes,
            dropout: self.dropout,
            use_pos_embedding: self.pos_embedding,
            use_cls_token: self.cls_token,
            ln_variant: self.ln_variant,
            pool_order: self.pool_order,
            activation: self.activation,
            ln_eps: 1e-5,
        }
    }

    /// Raw data directory: `data_dir` if set, else the source's default
    /// directory under `root`.
    pub fn source_dir(&self, root: Option<&Path>) -> Result<PathBuf> {
        if let Some(d) = &self.data_dir {
            return Ok(d.clone());
        }
        match (self.source, root) {
            (Source::Synthetic, _) => Ok(PathBuf::new()),
            (source, Some(root)) => Ok(root.join(source.default_dir())),
            (source, None) => Err(Error::config(format!(
                "no data directory for {source}: set data_dir or the data root"
            ))),
        }
    }
}

fn strip_prefix(e: &Error) -> String {
    match e {
        Error::Config(msg) => msg.clone(),
        other => other.to_string(),
    }
}
