use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::real::Real;

/// Adam with bias-corrected moments.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
}

impl<T: Real> Adam<T> {
    /// State for parameters shaped like `params`, with the usual defaults
    /// (0.9, 0.999, 1e-8).
    pub fn new(params: &[Tensor<T>]) -> Self {
        Self::with_betas(params, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(params: &[Tensor<T>], beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            beta1,
            beta2,
            eps,
            step: 0,
            first: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            second: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update of every parameter. Rejects non-finite gradients before
    /// touching any state, naming the offending parameter.
    pub fn step(
        &mut self,
        params: &mut [Tensor<T>],
        grads: &[Tensor<T>],
        names: &[String],
        lr: f64,
    ) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.first.len() {
            return Err(Error::argument(format!(
                "adam step with {} params, {} grads, {} state slots",
                params.len(),
                grads.len(),
                self.first.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            let name = names.get(i).map(String::as_str).unwrap_or("?");
            if p.shape() != g.shape() || p.shape() != self.first[i].shape() {
                return Err(Error::Training {
                    param: name.to_string(),
                    reason: format!("gradient shape {:?} for parameter {:?}", g.shape(), p.shape()),
                });
            }
            if g.data().iter().any(|v| !v.is_finite()) {
                return Err(Error::Training {
                    param: name.to_string(),
                    reason: "non-finite gradient".to_string(),
                });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let c1 = T::lit(1.0 - self.beta1.powi(t));
        let c2 = T::lit(1.0 - self.beta2.powi(t));
        let (lr, eps) = (T::lit(lr), T::lit(self.eps));
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mv = b1 * *mv + (T::one() - b1) * gv;
                *vv = b2 * *vv + (T::one() - b2) * gv * gv;
                let m_hat = *mv / c1;
                let v_hat = *vv / c2;
                *pv = *pv - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Cosine annealing from `lr0` at step 0 to zero at `total_steps`; steps past
/// the end clamp to the final value.
pub fn cosine_lr(step: usize, total_steps: usize, lr0: f64) -> f64 {
    if total_steps == 0 {
        return lr0;
    }
    let s = step.min(total_steps) as f64;
    lr0 * (1.0 + (std::f64::consts::PI * s / total_steps as f64).cos()) / 2.0
}
