//! Minimal reverse-mode automatic differentiation over dense tensors.

mod checkpoint;
mod graph;
mod optim;
mod tensor;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use graph::{Graph, Var};
pub use optim::{cosine_lr, Adam};
pub use tensor::Tensor;

use crate::error::Result;
use crate::real::Real;

/// Compares reverse-mode gradients of a scalar function against central
/// finite differences and returns the worst relative error per input.
///
/// `build` receives a fresh graph and one leaf per input and must return a
/// scalar. Relative error of a tensor is `max |analytic - numeric| /
/// max(max |numeric|, floor)`.
pub fn finite_difference_check<T, F>(inputs: &[Tensor<T>], step: f64, build: F) -> Result<Vec<f64>>
where
    T: Real,
    F: Fn(&mut Graph<'_, T>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor<T>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.leaf(t.clone(), false)).collect();
        let out = build(&mut g, &vars)?;
        Ok(g.value(out).item()?.to_f64_lossy())
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let out = build(&mut g, &vars)?;
    g.backward(out)?;

    let mut errors = Vec::with_capacity(inputs.len());
    let mut probe = inputs.to_vec();
    for (k, v) in vars.iter().enumerate() {
        let analytic: Vec<f64> = match g.grad(*v) {
            Some(t) => t.data().iter().map(|x| x.to_f64_lossy()).collect(),
            None => vec![0.0; inputs[k].len()],
        };
        let mut worst_abs: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for (i, &exact) in analytic.iter().enumerate() {
            let orig = probe[k].data()[i];
            probe[k].data_mut()[i] = orig + T::lit(step);
            let plus = eval(&probe)?;
            probe[k].data_mut()[i] = orig - T::lit(step);
            let minus = eval(&probe)?;
            probe[k].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            worst_abs = worst_abs.max((exact - numeric).abs());
            scale = scale.max(numeric.abs());
        }
        errors.push(worst_abs / scale.max(1e-8));
    }
    Ok(errors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::rng::{stream_rng, SphtrRng};
    use rand::Rng;

    fn random(shape: &[usize], rng: &mut SphtrRng) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    /// Weighted sum with fixed random weights, so every output entry matters.
    fn probe_loss(g: &mut Graph<'_, f64>, out: Var, seed: u64) -> Result<Var> {
        let mut rng = stream_rng(seed, 99);
        let w = random(g.shape(out), &mut rng);
        let w = g.constant(w);
        let prod = g.mul(out, w)?;
        Ok(g.sum_all(prod))
    }

    fn assert_grads(inputs: Vec<Tensor<f64>>, f: impl Fn(&mut Graph<'_, f64>, &[Var]) -> Result<Var>) {
        let errs = finite_difference_check(&inputs, 1e-5, |g, v| {
            let out = f(g, v)?;
            probe_loss(g, out, 5)
        })
        .unwrap();
        for (i, e) in errs.iter().enumerate() {
            assert!(*e <= 1e-6, "input {i}: relative error {e}");
        }
    }

    #[test]
    fn matmul_gradients() {
        let mut rng = stream_rng(1, 0);
        let a = random(&[4, 5], &mut rng);
        let b = random(&[5, 3], &mut rng);
        assert_grads(vec![a, b], |g, v| g.matmul(v[0], v[1]));
    }

    #[test]
    fn broadcast_add_scale_transpose_gradients() {
        let mut rng = stream_rng(2, 0);
        let a = random(&[3, 4], &mut rng);
        let b = random(&[4], &mut rng);
        assert_grads(vec![a.clone(), b], |g, v| {
            let s = g.add(v[0], v[1])?;
            let t = g.scale(s, 1.7);
            g.transpose_last(t)
        });
        let c = random(&[3, 4], &mut rng);
        assert_grads(vec![a, c], |g, v| g.add(v[0], v[1]));
    }

    #[test]
    fn softmax_layer_norm_activation_gradients() {
        let mut rng = stream_rng(3, 0);
        let x = random(&[3, 6], &mut rng);
        let gain = random(&[6], &mut rng);
        let bias = random(&[6], &mut rng);
        assert_grads(vec![x.clone()], |g, v| Ok(g.softmax(v[0])));
        assert_grads(vec![x.clone(), gain, bias], |g, v| {
            g.layer_norm(v[0], v[1], v[2], 1e-5)
        });
        assert_grads(vec![x.clone()], |g, v| Ok(g.gelu(v[0])));
        // Keep relu inputs away from the kink.
        let xr = x.map(|v| if v.abs() < 0.05 { v + 0.2 } else { v });
        assert_grads(vec![xr], |g, v| Ok(g.relu(v[0])));
    }

    #[test]
    fn mean_concat_slice_gradients() {
        let mut rng = stream_rng(4, 0);
        let x = random(&[4, 6], &mut rng);
        let y = random(&[4, 2], &mut rng);
        assert_grads(vec![x.clone()], |g, v| g.mean(v[0], 0));
        assert_grads(vec![x.clone()], |g, v| g.mean(v[0], 1));
        assert_grads(vec![x.clone(), y.clone()], |g, v| {
            let a = g.slice_last(v[0], 1, 3)?;
            let b = g.slice_last(v[0], 4, 2)?;
            g.concat_last(&[b, v[1], a])
        });
        let z = random(&[2, 6], &mut rng);
        assert_grads(vec![x, z], |g, v| {
            let top = g.slice_rows(v[0], 1, 2)?;
            let c = g.concat_rows(&[v[1], top])?;
            g.reshape(c, &[24])
        });
    }

    #[test]
    fn cross_entropy_gradient() {
        let mut rng = stream_rng(5, 0);
        let z = random(&[7], &mut rng);
        let errs = finite_difference_check(&[z], 1e-5, |g, v| g.cross_entropy_with_logits(v[0], 3)).unwrap();
        assert!(errs[0] <= 1e-6, "{errs:?}");
    }

    #[test]
    fn softmax_of_zero_row_is_uniform_and_shift_invariant() {
        let mut g = Graph::<f64>::new();
        let z = g.constant(Tensor::zeros(&[2, 4]));
        let s = g.softmax(z);
        assert!(g.value(s).data().iter().all(|&v| v == 0.25));

        let mut rng = stream_rng(6, 0);
        let x = random(&[5, 9], &mut rng);
        let shifted = x.map(|v| v + 123.0);
        let a = g.constant(x);
        let b = g.constant(shifted);
        let sa = g.softmax(a);
        let sb = g.softmax(b);
        for row in g.value(sa).data().chunks(9) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(g.value(sa).max_abs_diff(g.value(sb)) < 1e-12);
        let big = g.constant(Tensor::new(vec![2], vec![1000.0, 1000.0]).unwrap());
        let sbig = g.softmax(big);
        assert_eq!(g.value(sbig).data(), &[0.5, 0.5]);
    }

    #[test]
    fn layer_norm_of_constant_returns_bias() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::filled(&[2, 3], 4.2));
        let gain = g.constant(Tensor::new(vec![3], vec![2.0, -1.0, 0.5]).unwrap());
        let bias = g.constant(Tensor::new(vec![3], vec![0.1, 0.2, 0.3]).unwrap());
        let y = g.layer_norm(x, gain, bias, 1e-5).unwrap();
        assert_eq!(g.value(y).data(), &[0.1, 0.2, 0.3, 0.1, 0.2, 0.3]);
    }

    #[test]
    fn dropout_modes() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::ones(&[100_000]));
        let same = g.dropout::<SphtrRng>(x, 0.1, None).unwrap();
        assert_eq!(same, x);
        let mut rng = stream_rng(7, 0);
        let d = g.dropout(x, 0.3, Some(&mut rng)).unwrap();
        let mean = g.value(d).data().iter().sum::<f64>() / 100_000.0;
        assert!((mean - 1.0).abs() < 0.01, "{mean}");
        assert!(g.dropout(x, 1.0, Some(&mut rng)).is_err());
    }

    #[test]
    fn backward_simple_losses_and_accumulation() {
        let mut rng = stream_rng(8, 0);
        let w0 = random(&[3, 2], &mut rng);
        let mut g = Graph::new();
        let w = g.leaf(w0.clone(), true);
        let s = g.sum_all(w);
        g.backward(s).unwrap();
        assert!(g.grad(w).unwrap().data().iter().all(|&v| v == 1.0));
        g.backward(s).unwrap();
        assert!(g.grad(w).unwrap().data().iter().all(|&v| v == 2.0));
        g.zero_grad();

        let sq = g.mul(w, w).unwrap();
        let total = g.sum_all(sq);
        let half = g.scale(total, 0.5);
        g.backward(half).unwrap();
        assert!(g.grad(w).unwrap().max_abs_diff(&w0) < 1e-15);

        assert!(matches!(g.backward(w), Err(Error::Argument(_))));
    }

    #[test]
    fn shape_errors_name_both_shapes() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        match g.matmul(a, b) {
            Err(Error::Shape { left, right, .. }) => {
                assert_eq!(left, vec![2, 3]);
                assert_eq!(right, vec![2, 3]);
            }
            other => panic!("{other:?}"),
        }
        let c = g.constant(Tensor::zeros(&[2]));
        assert!(g.add(a, c).is_err());
        assert!(g.cross_entropy_with_logits(c, 2).is_err());
    }
}
