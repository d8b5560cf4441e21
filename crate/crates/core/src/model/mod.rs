//! The patch-sequence transformer: embedding, encoder layers, pooled
//! classification head, and its training loop.

mod config;
mod net;
mod params;
mod train;

pub use config::{Activation, LnVariant, ModelConfig, PoolOrder};
pub use net::{argmax, ExampleGrad, Mode, Network};
pub use params::{truncated_normal, ModelParams, INIT_STD};
pub use train::{evaluate, example_tensor, train, write_epoch_csv, EpochLog, Evaluation, TrainOptions};

use crate::autodiff::{finite_difference_check, Tensor};
use crate::error::Result;

/// Finite-difference check of the full classifier's loss gradient with
/// respect to every parameter tensor (evaluation mode). Returns the worst
/// relative error per tensor, by name.
pub fn gradient_check(
    params: &ModelParams<f64>,
    x: &Tensor<f64>,
    label: usize,
    step: f64,
) -> Result<Vec<(String, f64)>> {
    let mut inputs = params.tensors().to_vec();
    inputs.push(x.clone());
    let errors = finite_difference_check(&inputs, step, |g, vars| {
        let (param_vars, xv) = vars.split_at(vars.len() - 1);
        let net = Network::with_vars(params, param_vars.to_vec())?;
        let logits = net.forward(g, xv[0], &mut Mode::Eval)?;
        g.cross_entropy_with_logits(logits, label)
    })?;
    Ok(params.names().iter().cloned().zip(errors).collect())
}
