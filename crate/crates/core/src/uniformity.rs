//! Monte-Carlo uniformity of a point set: the mean inverse Hausdorff distance
//! between the set and uniform random reference sets on the sphere.

use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{UnitVector3, Vec3};
use crate::rng::{stream_rng, SphtrRng};
use crate::sampling::{GridParams, SamplingGrid};

/// `m` independent uniform points on the unit sphere (normalized Gaussians).
pub fn sample_uniform_sphere<R: Rng + ?Sized>(m: usize, rng: &mut R) -> Result<Vec<UnitVector3>> {
    if m == 0 {
        return Err(Error::argument("reference set size must be at least 1"));
    }
    let mut out = Vec::with_capacity(m);
    while out.len() < m {
        let v = Vec3::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        // A zero draw has probability zero; redraw rather than divide by it.
        if let Some(u) = UnitVector3::normalize(v) {
            out.push(u);
        }
    }
    Ok(out)
}

/// Symmetric Hausdorff distance under the Euclidean (chordal) metric.
///
/// Exhaustive `O(|x| |y|)` scan; both directed distances come out of a single
/// pass over the distance matrix.
pub fn hausdorff_distance(x: &[UnitVector3], y: &[UnitVector3]) -> Result<f64> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::argument("hausdorff distance of an empty set"));
    }
    let ys: Vec<[f64; 3]> = y.iter().map(|p| p.vec().to_array()).collect();
    let mut col_min = vec![f64::INFINITY; ys.len()];
    let mut sup_x: f64 = 0.0;
    for p in x {
        let [px, py, pz] = p.vec().to_array();
        let mut row_min = f64::INFINITY;
        for (q, cm) in ys.iter().zip(col_min.iter_mut()) {
            let dx = px - q[0];
            let dy = py - q[1];
            let dz = pz - q[2];
            let d2 = dx * dx + dy * dy + dz * dz;
            if d2 < row_min {
                row_min = d2;
            }
            if d2 < *cm {
                *cm = d2;
            }
        }
        sup_x = sup_x.max(row_min);
    }
    let sup_y = col_min.into_iter().fold(0.0, f64::max);
    Ok(sup_x.max(sup_y).sqrt())
}

/// Outcome of a uniformity run, including the full convergence trace.
#[derive(Debug, Clone, PartialEq)]
pub struct UniformityReport {
    pub grid: Option<GridParams>,
    pub num_points: usize,
    pub n_iterations: usize,
    pub reference_set_size: usize,
    pub values: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub final_value: f64,
    pub seed: u64,
}

impl UniformityReport {
    /// `max - min` of the running mean over its last `window` entries.
    pub fn trailing_range(&self, window: usize) -> f64 {
        let start = self.running_mean.len().saturating_sub(window);
        let tail = &self.running_mean[start..];
        let hi = tail.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = tail.iter().copied().fold(f64::INFINITY, f64::min);
        hi - lo
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let grid = self
            .grid
            .map(|g| g.to_string())
            .unwrap_or_else(|| "points".to_string());
        writeln!(
            w,
            "# sphtr-uniformity v1 {grid} points={} n={} m={} seed={} final={}",
            self.num_points, self.n_iterations, self.reference_set_size, self.seed, self.final_value
        )?;
        writeln!(w, "iteration,value,running_mean")?;
        for (i, (v, r)) in self.values.iter().zip(&self.running_mean).enumerate() {
            writeln!(w, "{},{v},{r}", i + 1)?;
        }
        Ok(())
    }
}

/// Uniformity of a grid with `n` reference sets of `m` uniform points each.
///
/// Iteration `i` draws from its own stream of `seed`, so the report does not
/// depend on how iterations are scheduled.
pub fn uniformity(grid: &SamplingGrid, n: usize, m: usize, seed: u64) -> Result<UniformityReport> {
    if m == 0 {
        return Err(Error::argument("reference set size must be at least 1"));
    }
    let mut report = uniformity_with_sampler(grid.points(), n, seed, |_, rng| sample_uniform_sphere(m, rng))?;
    report.grid = Some(grid.params());
    report.reference_set_size = m;
    Ok(report)
}

/// Uniformity of a bare point set with a caller-supplied reference sampler.
///
/// `sampler(i, rng)` produces the reference set for iteration `i`.
pub fn uniformity_with_sampler<F>(
    points: &[UnitVector3],
    n: usize,
    seed: u64,
    sampler: F,
) -> Result<UniformityReport>
where
    F: Fn(usize, &mut SphtrRng) -> Result<Vec<UnitVector3>> + Sync,
{
    if n == 0 {
        return Err(Error::argument("uniformity needs at least one iteration"));
    }
    if points.is_empty() {
        return Err(Error::argument("uniformity of an empty point set"));
    }
    let draws: Vec<(usize, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i as u64);
            let reference = sampler(i, &mut rng)?;
            let d = hausdorff_distance(&reference, points)?;
            Ok((reference.len(), 1.0 / d))
        })
        .collect::<Result<_>>()?;
    let values: Vec<f64> = draws.iter().map(|&(_, v)| v).collect();
    let mut running_mean = Vec::with_capacity(n);
    let mut acc = 0.0;
    for (i, v) in values.iter().enumerate() {
        acc += v;
        running_mean.push(acc / (i + 1) as f64);
    }
    Ok(UniformityReport {
        grid: None,
        num_points: points.len(),
        n_iterations: n,
        reference_set_size: draws[0].0,
        final_value: *running_mean.last().expect("n >= 1"),
        values,
        running_mean,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{build_cube_grid, build_icosa_grid};

    fn brute_force_hausdorff(x: &[UnitVector3], y: &[UnitVector3]) -> f64 {
        let directed = |a: &[UnitVector3], b: &[UnitVector3]| {
            a.iter()
                .map(|p| {
                    b.iter()
                        .map(|q| (p.vec() - q.vec()).norm())
                        .fold(f64::INFINITY, f64::min)
                })
                .fold(0.0, f64::max)
        };
        directed(x, y).max(directed(y, x))
    }

    #[test]
    fn uniform_samples_are_unit_and_centred() {
        let mut rng = stream_rng(3, 0);
        let pts = sample_uniform_sphere(1000, &mut rng).unwrap();
        let mut mean = Vec3::default();
        for p in &pts {
            assert!((p.vec().norm() - 1.0).abs() < 1e-12);
            mean = mean + p.vec().scale(1e-3);
        }
        assert!(mean.norm() < 0.1);
        assert_eq!(sample_uniform_sphere(1, &mut rng).unwrap().len(), 1);
        assert!(sample_uniform_sphere(0, &mut rng).is_err());
        let a = sample_uniform_sphere(5, &mut stream_rng(9, 2)).unwrap();
        let b = sample_uniform_sphere(5, &mut stream_rng(9, 2)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn hausdorff_basics() {
        let x = sample_uniform_sphere(40, &mut stream_rng(1, 0)).unwrap();
        assert_eq!(hausdorff_distance(&x, &x).unwrap(), 0.0);
        let e = UnitVector3::normalize(Vec3::new(1.0, 0.0, 0.0)).unwrap();
        let w = UnitVector3::normalize(Vec3::new(-1.0, 0.0, 0.0)).unwrap();
        assert_eq!(hausdorff_distance(&[e], &[w]).unwrap(), 2.0);
        assert!(hausdorff_distance(&[], &[e]).is_err());
        assert!(hausdorff_distance(&[e], &[]).is_err());
    }

    #[test]
    fn hausdorff_matches_brute_force_bitwise() {
        for s in 0..10 {
            let x = sample_uniform_sphere(50, &mut stream_rng(s, 0)).unwrap();
            let y = sample_uniform_sphere(50, &mut stream_rng(s, 1)).unwrap();
            let fast = hausdorff_distance(&x, &y).unwrap();
            assert_eq!(fast.to_bits(), brute_force_hausdorff(&x, &y).to_bits());
            assert_eq!(fast.to_bits(), hausdorff_distance(&y, &x).unwrap().to_bits());
        }
    }

    #[test]
    fn forced_antipodal_reference_gives_one_half() {
        let north = [UnitVector3::NORTH];
        let south = UnitVector3::normalize(Vec3::new(0.0, 0.0, -1.0)).unwrap();
        let r = uniformity_with_sampler(&north, 1, 0, |_, _| Ok(vec![south])).unwrap();
        assert_eq!(r.final_value, 0.5);
        assert_eq!(r.values, vec![0.5]);
    }

    #[test]
    fn report_is_reproducible_and_consistent() {
        let grid = build_icosa_grid(1, 0).unwrap();
        let a = uniformity(&grid, 8, 80, 11).unwrap();
        let b = uniformity(&grid, 8, 80, 11).unwrap();
        assert_eq!(a, b);
        let mean = a.values.iter().sum::<f64>() / a.values.len() as f64;
        assert!((a.final_value - mean).abs() < 1e-12);
        assert!(a.final_value > 0.0);
        assert_eq!(a.reference_set_size, 80);
        assert!(uniformity(&grid, 0, 10, 0).is_err());
        assert!(uniformity(&grid, 3, 0, 0).is_err());
    }

    #[test]
    fn more_points_more_uniform() {
        let coarse = uniformity(&build_cube_grid(4).unwrap(), 10, 96, 5).unwrap();
        let fine = uniformity(&build_cube_grid(12).unwrap(), 10, 864, 5).unwrap();
        assert!(fine.final_value > coarse.final_value);
    }

    #[test]
    fn trace_csv_shape() {
        let grid = build_icosa_grid(0, 0).unwrap();
        let r = uniformity(&grid, 3, 20, 1).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert!(text.lines().nth(1).unwrap() == "iteration,value,running_mean");
    }
}
