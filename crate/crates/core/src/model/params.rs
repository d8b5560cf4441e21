use std::io::{Read, Write};

use rand::Rng;
use rand_distr::StandardNormal;

use super::config::ModelConfig;
use crate::autodiff::{read_checkpoint, write_checkpoint, Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::rng::{stream_id, stream_rng};

/// Standard deviation of the weight initialization.
pub const INIT_STD: f64 = 0.02;

/// Draws are redrawn beyond this many standard deviations.
const TRUNCATION: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Init {
    Normal,
    Zeros,
    Ones,
}

/// Indices of one encoder layer's tensors within the flat parameter list.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LayerSlots {
    pub ln1_gain: usize,
    pub ln1_bias: usize,
    pub q: (usize, usize),
    pub k: (usize, usize),
    pub v: (usize, usize),
    pub o: (usize, usize),
    pub ln2_gain: usize,
    pub ln2_bias: usize,
    pub w1: (usize, usize),
    pub w2: (usize, usize),
}

/// Where each named tensor lives in the flat parameter list.
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub embed: usize,
    pub pos: Option<usize>,
    pub cls: Option<usize>,
    pub layers: Vec<LayerSlots>,
    pub final_gain: usize,
    pub final_bias: usize,
    pub head: (usize, usize),
}

fn plan(config: &ModelConfig) -> (Layout, Vec<(String, Vec<usize>, Init)>) {
    let d = config.model_dim;
    let f = config.ffn_hidden;
    let mut specs: Vec<(String, Vec<usize>, Init)> = Vec::new();
    let mut push = |name: String, shape: Vec<usize>, init: Init| {
        specs.push((name, shape, init));
        specs.len() - 1
    };

    let embed = push("embed.weight".into(), vec![config.input_dim, d], Init::Normal);
    let pos = config
        .use_pos_embedding
        .then(|| push("embed.pos".into(), vec![config.sequence_len(), d], Init::Zeros));
    let cls = config
        .use_cls_token
        .then(|| push("embed.cls".into(), vec![1, d], Init::Zeros));

    let mut layers = Vec::with_capacity(config.layers);
    for l in 0..config.layers {
        let mut linear = |name: &str, rows: usize, cols: usize| {
            (
                push(format!("layer{l}.{name}.weight"), vec![rows, cols], Init::Normal),
                push(format!("layer{l}.{name}.bias"), vec![cols], Init::Zeros),
            )
        };
        let q = linear("attn.q", d, d);
        let k = linear("attn.k", d, d);
        let v = linear("attn.v", d, d);
        let o = linear("attn.o", d, d);
        let w1 = linear("ffn.up", d, f);
        let w2 = linear("ffn.down", f, d);
        let ln1_gain = push(format!("layer{l}.ln1.gain"), vec![d], Init::Ones);
        let ln1_bias = push(format!("layer{l}.ln1.bias"), vec![d], Init::Zeros);
        let ln2_gain = push(format!("layer{l}.ln2.gain"), vec![d], Init::Ones);
        let ln2_bias = push(format!("layer{l}.ln2.bias"), vec![d], Init::Zeros);
        layers.push(LayerSlots {
            ln1_gain,
            ln1_bias,
            q,
            k,
            v,
            o,
            ln2_gain,
            ln2_bias,
            w1,
            w2,
        });
    }
    let final_gain = push("final_ln.gain".into(), vec![d], Init::Ones);
    let final_bias = push("final_ln.bias".into(), vec![d], Init::Zeros);
    let head = (
        push("head.weight".into(), vec![d, config.num_classes], Init::Normal),
        push("head.bias".into(), vec![config.num_classes], Init::Zeros),
    );
    let layout = Layout {
        embed,
        pos,
        cls,
        layers,
        final_gain,
        final_bias,
        head,
    };
    (layout, specs)
}

/// One truncated-normal draw with standard deviation parameter `std`.
pub fn truncated_normal<R: Rng + ?Sized>(rng: &mut R, std: f64) -> f64 {
    loop {
        let z: f64 = rng.sample(StandardNormal);
        if z.abs() <= TRUNCATION {
            return z * std;
        }
    }
}

/// All trainable tensors of a network, in a fixed named order.
#[derive(Debug, Clone)]
pub struct ModelParams<T: Real> {
    config: ModelConfig,
    layout: Layout,
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> ModelParams<T> {
    /// Truncated-normal weights, zero biases and positional embedding, unit
    /// layer-norm gains. Each tensor draws from its own stream under `seed`.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (layout, specs) = plan(config);
        let mut names = Vec::with_capacity(specs.len());
        let mut tensors = Vec::with_capacity(specs.len());
        for (i, (name, shape, init)) in specs.into_iter().enumerate() {
            let t = match init {
                Init::Zeros => Tensor::zeros(&shape),
                Init::Ones => Tensor::ones(&shape),
                Init::Normal => {
                    let mut rng = stream_rng(seed, stream_id(&[0x1417, i as u64]));
                    Tensor::from_fn(&shape, |_| T::lit(truncated_normal(&mut rng, INIT_STD)))
                }
            };
            names.push(name);
            tensors.push(t);
        }
        Ok(ModelParams {
            config: config.clone(),
            layout,
            names,
            tensors,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub(crate) fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(move |i| &mut self.tensors[i])
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            config: self.config.clone(),
            layout: self.layout.clone(),
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    /// Replaces the (zero-initialized) positional embedding with
    /// truncated-normal values, so that it actually distinguishes positions.
    pub fn randomize_pos_embedding(&mut self, seed: u64) -> Result<()> {
        let i = self
            .layout
            .pos
            .ok_or_else(|| Error::config("model has no positional embedding"))?;
        let mut rng = stream_rng(seed, stream_id(&[0x9057]));
        for v in self.tensors[i].data_mut() {
            *v = T::lit(truncated_normal(&mut rng, INIT_STD));
        }
        Ok(())
    }

    /// Binds every tensor into `g` without copying.
    pub fn bind<'a>(&'a self, g: &mut Graph<'a, T>, trainable: bool) -> Vec<Var> {
        self.tensors.iter().map(|t| g.leaf_ref(t, trainable)).collect()
    }

    pub fn save<W: Write>(&self, w: W) -> Result<()> {
        let named: Vec<(&str, &Tensor<T>)> = self
            .names
            .iter()
            .map(String::as_str)
            .zip(self.tensors.iter())
            .collect();
        write_checkpoint(w, &named)
    }

    /// Loads a checkpoint written for the same configuration; names, order,
    /// shapes and finiteness are all checked.
    pub fn load<R: Read>(config: &ModelConfig, r: R) -> Result<Self> {
        let mut params = Self::init(config, 0)?;
        let stored = read_checkpoint::<T, R>(r)?;
        if stored.len() != params.names.len() {
            return Err(Error::Format(format!(
                "checkpoint holds {} tensors, the configuration needs {}",
                stored.len(),
                params.names.len()
            )));
        }
        for (i, (name, t)) in stored.into_iter().enumerate() {
            if name != params.names[i] {
                return Err(Error::Format(format!(
                    "checkpoint tensor {i} is `{name}`, expected `{}`",
                    params.names[i]
                )));
            }
            if t.shape() != params.tensors[i].shape() {
                return Err(Error::Format(format!(
                    "checkpoint tensor `{name}` has shape {:?}, expected {:?}",
                    t.shape(),
                    params.tensors[i].shape()
                )));
            }
            if t.data().iter().any(|v| !v.is_finite()) {
                return Err(Error::Format(format!("checkpoint tensor `{name}` is not finite")));
            }
            params.tensors[i] = t;
        }
        Ok(params)
    }
}
