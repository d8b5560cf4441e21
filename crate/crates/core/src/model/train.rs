use std::io::Write;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::net::argmax;
use super::params::ModelParams;
use crate::autodiff::{cosine_lr, Adam, Tensor};
use crate::dataset::SequenceSet;
use crate::error::{Error, Result};
use crate::real::Real;
use crate::rng::{stream_id, stream_rng};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    /// Peak learning rate; cosine-annealed per step to zero.
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            epochs: 20,
            batch_size: 128,
            lr: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub count: usize,
    pub correct: usize,
    pub mean_loss: f64,
}

impl Evaluation {
    pub fn accuracy(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.correct as f64 / self.count as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Learning rate of the epoch's last step.
    pub lr: f64,
    pub train: Evaluation,
    pub test: Option<Evaluation>,
}

/// The `N x (D*C)` matrix of example `i`.
pub fn example_tensor<T: Real>(set: &SequenceSet, i: usize) -> Tensor<T> {
    let data = set.example(i).iter().map(|&v| T::lit(f64::from(v))).collect();
    Tensor::new(vec![set.num_patches, set.input_dim()], data).expect("cache shape is consistent")
}

fn check_compatible<T: Real>(params: &ModelParams<T>, set: &SequenceSet) -> Result<()> {
    let c = params.config();
    if set.num_patches != c.num_patches || set.input_dim() != c.input_dim {
        return Err(Error::config(format!(
            "dataset rows are {}x{}, the model expects {}x{}",
            set.num_patches,
            set.input_dim(),
            c.num_patches,
            c.input_dim
        )));
    }
    if let Some(&bad) = set.labels().iter().find(|&&l| usize::from(l) >= c.num_classes) {
        return Err(Error::config(format!(
            "label {bad} outside the model's {} classes",
            c.num_classes
        )));
    }
    Ok(())
}

/// Top-1 accuracy and mean cross-entropy in evaluation mode.
pub fn evaluate<T: Real>(params: &ModelParams<T>, set: &SequenceSet) -> Result<Evaluation> {
    check_compatible(params, set)?;
    let per: Vec<(f64, bool)> = (0..set.len())
        .into_par_iter()
        .map(|i| {
            let logits = params.logits(&example_tensor(set, i))?;
            let label = usize::from(set.label(i));
            Ok((
                cross_entropy(logits.data(), label),
                argmax(logits.data()) == label,
            ))
        })
        .collect::<Result<_>>()?;
    let correct = per.iter().filter(|p| p.1).count();
    let total: f64 = per.iter().map(|p| p.0).sum();
    Ok(Evaluation {
        count: set.len(),
        correct,
        mean_loss: if per.is_empty() {
            0.0
        } else {
            total / per.len() as f64
        },
    })
}

fn cross_entropy<T: Real>(logits: &[T], label: usize) -> f64 {
    let z: Vec<f64> = logits.iter().map(|v| v.to_f64_lossy()).collect();
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    lse - z[label]
}

/// Mini-batch Adam with a per-step cosine schedule. Example gradients are
/// computed in parallel and summed in example order, so results do not
/// depend on the thread count. `on_epoch` sees every log as it is produced.
pub fn train<T: Real>(
    params: &mut ModelParams<T>,
    train_set: &SequenceSet,
    test_set: Option<&SequenceSet>,
    opts: &TrainOptions,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Vec<EpochLog>> {
    check_compatible(params, train_set)?;
    if let Some(t) = test_set {
        check_compatible(params, t)?;
    }
    if opts.batch_size == 0 {
        return Err(Error::config("batch_size must be positive"));
    }
    if train_set.is_empty() {
        return Err(Error::config("training set is empty"));
    }

    let steps_per_epoch = train_set.len().div_ceil(opts.batch_size);
    let total_steps = steps_per_epoch * opts.epochs;
    let mut adam = Adam::new(params.tensors());
    let names = params.names().to_vec();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut logs = Vec::with_capacity(opts.epochs);
    let mut step = 0;

    for epoch in 0..opts.epochs {
        let mut shuffle_rng = stream_rng(opts.seed, stream_id(&[0x5eed, epoch as u64]));
        order.shuffle(&mut shuffle_rng);

        let mut loss_sum = 0.0;
        let mut correct = 0;
        let mut lr = opts.lr;
        for batch in order.chunks(opts.batch_size) {
            let shared: &ModelParams<T> = params;
            let results: Vec<_> = batch
                .par_iter()
                .map(|&i| {
                    let mut rng = stream_rng(opts.seed, stream_id(&[0xd809, epoch as u64, i as u64]));
                    shared.loss_and_grads(
                        &example_tensor(train_set, i),
                        usize::from(train_set.label(i)),
                        Some(&mut rng),
                    )
                })
                .collect::<Result<_>>()?;

            let mut grads: Vec<Tensor<T>> = params
                .tensors()
                .iter()
                .map(|t| Tensor::zeros(t.shape()))
                .collect();
            for (r, &i) in results.iter().zip(batch) {
                loss_sum += r.loss.to_f64_lossy();
                correct += usize::from(r.predicted == usize::from(train_set.label(i)));
                for (acc, g) in grads.iter_mut().zip(&r.grads) {
                    acc.add_assign(g)?;
                }
            }
            let inv = T::lit(1.0 / batch.len() as f64);
            for g in &mut grads {
                g.scale_in_place(inv);
            }
            lr = cosine_lr(step, total_steps, opts.lr);
            adam.step(params.tensors_mut(), &grads, &names, lr)?;
            step += 1;
        }

        let train_eval = Evaluation {
            count: train_set.len(),
            correct,
            mean_loss: loss_sum / train_set.len() as f64,
        };
        let test = test_set.map(|t| evaluate(params, t)).transpose()?;
        let log = EpochLog {
            epoch: epoch + 1,
            lr,
            train: train_eval,
            test,
        };
        on_epoch(&log);
        logs.push(log);
    }
    Ok(logs)
}

/// Per-epoch CSV: training loss and accuracy are running values over the
/// epoch's batches (with dropout); test values are evaluation mode.
pub fn write_epoch_csv<W: Write>(logs: &[EpochLog], mut w: W) -> Result<()> {
    writeln!(w, "epoch,lr,train_loss,train_accuracy,test_loss,test_accuracy")?;
    for l in logs {
        let (tl, ta) = match &l.test {
            Some(t) => (format!("{:.6}", t.mean_loss), format!("{:.6}", t.accuracy())),
            None => (String::new(), String::new()),
        };
        writeln!(
            w,
            "{},{:.6e},{:.6},{:.6},{tl},{ta}",
            l.epoch,
            l.lr,
            l.train.mean_loss,
            l.train.accuracy()
        )?;
    }
    Ok(())
}
