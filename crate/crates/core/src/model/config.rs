use std::fmt;

use crate::error::{Error, Result};

/// Where layer normalization sits relative to each residual sublayer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LnVariant {
    /// `s + F(LN(dropout(s)))`
    Pre,
    /// `LN(s + F(dropout(s)))`
    Post,
}

/// Order of the final normalization and the mean over patches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PoolOrder {
    NormThenMean,
    MeanThenNorm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Gelu,
    Relu,
}

macro_rules! named_enum {
    ($ty:ty { $($variant:ident => $name:literal),+ $(,)? }) => {
        impl $ty {
            pub fn name(self) -> &'static str {
                match self {
                    $(Self::$variant => $name),+
                }
            }

            pub fn parse(s: &str) -> Option<Self> {
                match s.to_ascii_lowercase().as_str() {
                    $($name => Some(Self::$variant),)+
                    _ => None,
                }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }
    };
}

named_enum!(LnVariant { Pre => "pre", Post => "post" });
named_enum!(PoolOrder { NormThenMean => "norm-then-mean", MeanThenNorm => "mean-then-norm" });
named_enum!(Activation { Gelu => "gelu", Relu => "relu" });

/// Shape and behaviour of a network.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Patches per input sequence.
    pub num_patches: usize,
    /// Values per patch, patch size times channels.
    pub input_dim: usize,
    pub model_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_hidden: usize,
    pub num_classes: usize,
    pub dropout: f64,
    pub use_pos_embedding: bool,
    pub use_cls_token: bool,
    pub ln_variant: LnVariant,
    pub pool_order: PoolOrder,
    pub activation: Activation,
    pub ln_eps: f64,
}

impl ModelConfig {
    /// The 24-dim, 8-layer, 8-head network with a 96-wide feed-forward block.
    pub fn small(num_patches: usize, input_dim: usize) -> Self {
        ModelConfig {
            num_patches,
            input_dim,
            model_dim: 24,
            layers: 8,
            heads: 8,
            ffn_hidden: 96,
            num_classes: 10,
            dropout: 0.1,
            use_pos_embedding: true,
            use_cls_token: false,
            ln_variant: LnVariant::Pre,
            pool_order: PoolOrder::NormThenMean,
            activation: Activation::Gelu,
            ln_eps: 1e-5,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads
    }

    /// Rows entering the encoder (one more with a class token).
    pub fn sequence_len(&self) -> usize {
        self.num_patches + usize::from(self.use_cls_token)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_patches", self.num_patches),
            ("input_dim", self.input_dim),
            ("model_dim", self.model_dim),
            ("heads", self.heads),
            ("ffn_hidden", self.ffn_hidden),
            ("num_classes", self.num_classes),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        if !self.model_dim.is_multiple_of(self.heads) {
            return Err(Error::config(format!(
                "model_dim {} is not divisible by {} heads",
                self.model_dim, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.ln_eps.is_nan() || self.ln_eps <= 0.0 {
            return Err(Error::config(format!("ln_eps {} must be positive", self.ln_eps)));
        }
        Ok(())
    }

    /// Trainable parameters, counted from the layout.
    pub fn param_count(&self) -> usize {
        let d = self.model_dim;
        let f = self.ffn_hidden;
        let embed = self.input_dim * d;
        let pos = if self.use_pos_embedding {
            self.sequence_len() * d
        } else {
            0
        };
        let cls = if self.use_cls_token { d } else { 0 };
        let per_layer = 4 * (d * d + d) + (d * f + f) + (f * d + d) + 4 * d;
        let head = 2 * d + d * self.num_classes + self.num_classes;
        embed + pos + cls + self.layers * per_layer + head
    }

    /// Smallest feed-forward width whose parameter count reaches `budget`,
    /// or `None` when even width 1 exceeds it.
    pub fn solve_ffn_hidden(&self, budget: usize) -> Option<usize> {
        let mut probe = self.clone();
        probe.ffn_hidden = 0;
        let base = probe.param_count();
        let per_unit = self.layers * (2 * self.model_dim + 1);
        if base + per_unit > budget || per_unit == 0 {
            return None;
        }
        Some((budget - base).div_ceil(per_unit))
    }
}
