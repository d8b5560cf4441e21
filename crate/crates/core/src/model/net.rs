use super::config::{Activation, LnVariant, PoolOrder};
use super::params::{LayerSlots, ModelParams};
use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::rng::SphtrRng;

/// Whether dropout is active, and the stream it draws from.
pub enum Mode<'r> {
    Eval,
    Train(&'r mut SphtrRng),
}

/// A network bound into a graph: parameter variables plus the layout.
pub struct Network<'p, T: Real> {
    params: &'p ModelParams<T>,
    vars: Vec<Var>,
}

impl<'p, T: Real> Network<'p, T> {
    pub fn bind(params: &'p ModelParams<T>, g: &mut Graph<'p, T>, trainable: bool) -> Self {
        let vars = params.bind(g, trainable);
        Network { params, vars }
    }

    /// Uses `params` for shapes and layout only; values come from `vars`,
    /// which must follow parameter order.
    pub fn with_vars(params: &'p ModelParams<T>, vars: Vec<Var>) -> Result<Self> {
        if vars.len() != params.tensors().len() {
            return Err(Error::argument(format!(
                "{} variables for {} parameter tensors",
                vars.len(),
                params.tensors().len()
            )));
        }
        Ok(Network { params, vars })
    }

    pub fn params(&self) -> &ModelParams<T> {
        self.params
    }

    /// Graph variable of every parameter tensor, in parameter order.
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    fn var(&self, slot: usize) -> Var {
        self.vars[slot]
    }

    fn dropout(&self, g: &mut Graph<'_, T>, x: Var, mode: &mut Mode<'_>) -> Result<Var> {
        match mode {
            Mode::Eval => Ok(x),
            Mode::Train(rng) => g.dropout(x, self.params.config().dropout, Some(&mut **rng)),
        }
    }

    fn linear(&self, g: &mut Graph<'_, T>, x: Var, (w, b): (usize, usize)) -> Result<Var> {
        let y = g.matmul(x, self.var(w))?;
        g.add(y, self.var(b))
    }

    fn layer_norm(&self, g: &mut Graph<'_, T>, x: Var, gain: usize, bias: usize) -> Result<Var> {
        let eps = T::lit(self.params.config().ln_eps);
        g.layer_norm(x, self.var(gain), self.var(bias), eps)
    }

    /// Patch embedding: `x E`, a class row in front if configured, plus the
    /// positional embedding if configured.
    pub fn embed(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let c = self.params.config();
        let expected = [c.num_patches, c.input_dim];
        if g.shape(x) != expected {
            return Err(Error::Shape {
                op: "embed",
                left: g.shape(x).to_vec(),
                right: expected.to_vec(),
            });
        }
        let layout = self.params.layout();
        let mut s = g.matmul(x, self.var(layout.embed))?;
        if let Some(cls) = layout.cls {
            s = g.concat_rows(&[self.var(cls), s])?;
        }
        if let Some(pos) = layout.pos {
            s = g.add(s, self.var(pos))?;
        }
        Ok(s)
    }

    /// Multi-head scaled dot-product self-attention over the rows of `u`.
    pub(crate) fn attention(&self, g: &mut Graph<'_, T>, u: Var, slots: &LayerSlots) -> Result<Var> {
        let c = self.params.config();
        let dh = c.head_dim();
        let q = self.linear(g, u, slots.q)?;
        let k = self.linear(g, u, slots.k)?;
        let v = self.linear(g, u, slots.v)?;
        let scale = T::lit(1.0 / (dh as f64).sqrt());
        let mut heads = Vec::with_capacity(c.heads);
        for h in 0..c.heads {
            let qh = g.slice_last(q, h * dh, dh)?;
            let kh = g.slice_last(k, h * dh, dh)?;
            let vh = g.slice_last(v, h * dh, dh)?;
            let kt = g.transpose_last(kh)?;
            let scores = g.matmul(qh, kt)?;
            let scores = g.scale(scores, scale);
            let weights = g.softmax(scores);
            heads.push(g.matmul(weights, vh)?);
        }
        let joined = g.concat_last(&heads)?;
        self.linear(g, joined, slots.o)
    }

    fn feed_forward(&self, g: &mut Graph<'_, T>, u: Var, slots: &LayerSlots) -> Result<Var> {
        let hidden = self.linear(g, u, slots.w1)?;
        let act = match self.params.config().activation {
            Activation::Gelu => g.gelu(hidden),
            Activation::Relu => g.relu(hidden),
        };
        self.linear(g, act, slots.w2)
    }

    /// One encoder layer: attention then feed-forward, each in a residual
    /// branch with layer norm placed per the configured variant.
    pub fn encoder_layer(
        &self,
        g: &mut Graph<'_, T>,
        layer: usize,
        s: Var,
        mode: &mut Mode<'_>,
    ) -> Result<Var> {
        let slots = self
            .params
            .layout()
            .layers
            .get(layer)
            .copied()
            .ok_or_else(|| Error::argument(format!("layer {layer} out of range")))?;
        match self.params.config().ln_variant {
            LnVariant::Pre => {
                let d = self.dropout(g, s, mode)?;
                let u = self.layer_norm(g, d, slots.ln1_gain, slots.ln1_bias)?;
                let a = self.attention(g, u, &slots)?;
                let mid = g.add(a, s)?;
                let d = self.dropout(g, mid, mode)?;
                let u = self.layer_norm(g, d, slots.ln2_gain, slots.ln2_bias)?;
                let f = self.feed_forward(g, u, &slots)?;
                g.add(f, mid)
            }
            LnVariant::Post => {
                let d = self.dropout(g, s, mode)?;
                let a = self.attention(g, d, &slots)?;
                let sum = g.add(a, s)?;
                let mid = self.layer_norm(g, sum, slots.ln1_gain, slots.ln1_bias)?;
                let d = self.dropout(g, mid, mode)?;
                let f = self.feed_forward(g, d, &slots)?;
                let sum = g.add(f, mid)?;
                self.layer_norm(g, sum, slots.ln2_gain, slots.ln2_bias)
            }
        }
    }

    /// Embedding followed by every encoder layer.
    pub fn encode(&self, g: &mut Graph<'_, T>, x: Var, mode: &mut Mode<'_>) -> Result<Var> {
        let mut s = self.embed(g, x)?;
        for l in 0..self.params.config().layers {
            s = self.encoder_layer(g, l, s, mode)?;
        }
        Ok(s)
    }

    /// Class logits from the encoder output: normalized rows averaged over
    /// patches (or the class row alone), then a linear head.
    pub fn classify(&self, g: &mut Graph<'_, T>, s: Var) -> Result<Var> {
        let c = self.params.config();
        let layout = self.params.layout();
        let (gain, bias) = (layout.final_gain, layout.final_bias);
        let pooled = if c.use_cls_token {
            let row = g.slice_rows(s, 0, 1)?;
            self.layer_norm(g, row, gain, bias)?
        } else {
            match c.pool_order {
                PoolOrder::NormThenMean => {
                    let n = self.layer_norm(g, s, gain, bias)?;
                    let m = g.mean(n, 0)?;
                    g.reshape(m, &[1, c.model_dim])?
                }
                PoolOrder::MeanThenNorm => {
                    let m = g.mean(s, 0)?;
                    let m = g.reshape(m, &[1, c.model_dim])?;
                    self.layer_norm(g, m, gain, bias)?
                }
            }
        };
        let logits = self.linear(g, pooled, layout.head)?;
        g.reshape(logits, &[c.num_classes])
    }

    pub fn forward(&self, g: &mut Graph<'_, T>, x: Var, mode: &mut Mode<'_>) -> Result<Var> {
        let s = self.encode(g, x, mode)?;
        self.classify(g, s)
    }
}

/// Index of the largest entry (first on ties).
pub fn argmax<T: Real>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Outcome of one example's forward and backward pass.
#[derive(Debug, Clone)]
pub struct ExampleGrad<T: Real> {
    pub loss: T,
    pub predicted: usize,
    pub grads: Vec<Tensor<T>>,
}

impl<T: Real> ModelParams<T> {
    /// Evaluation-mode logits for one `N x input_dim` example.
    pub fn logits(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let net = Network::bind(self, &mut g, false);
        let xv = g.leaf_ref(x, false);
        let out = net.forward(&mut g, xv, &mut Mode::Eval)?;
        Ok(g.value(out).clone())
    }

    /// Evaluation-mode encoder output (embedding plus all layers).
    pub fn encode(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let net = Network::bind(self, &mut g, false);
        let xv = g.leaf_ref(x, false);
        let out = net.encode(&mut g, xv, &mut Mode::Eval)?;
        Ok(g.value(out).clone())
    }

    /// Cross-entropy loss and its gradient for every parameter. Dropout is
    /// applied when `rng` is given.
    pub fn loss_and_grads(
        &self,
        x: &Tensor<T>,
        label: usize,
        rng: Option<&mut SphtrRng>,
    ) -> Result<ExampleGrad<T>> {
        let mut g = Graph::new();
        let net = Network::bind(self, &mut g, true);
        let xv = g.leaf_ref(x, false);
        let mut mode = match rng {
            Some(r) => Mode::Train(r),
            None => Mode::Eval,
        };
        let logits = net.forward(&mut g, xv, &mut mode)?;
        let predicted = argmax(g.value(logits).data());
        let loss = g.cross_entropy_with_logits(logits, label)?;
        let loss_value = g.value(loss).item()?;
        g.backward(loss)?;
        let grads = net
            .vars()
            .iter()
            .zip(self.tensors())
            .map(|(&v, t)| g.take_grad(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect();
        Ok(ExampleGrad {
            loss: loss_value,
            predicted,
            grads,
        })
    }
}
