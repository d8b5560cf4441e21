//! Rotation equivariance error of the encoder: how far encoding a rotated
//! input is from permuting the encoding of the original input.

use std::fmt;
use std::io::Write;

use rayon::prelude::*;

use crate::autodiff::Tensor;
use crate::dataset::{build_dataset, RawSplit, RotateMode, Source, Split};
use crate::error::{Error, Result};
use crate::groups::{enumerate_group, group_permutations, PermutationPair, Solid};
use crate::model::{example_tensor, ModelConfig, ModelParams};
use crate::real::Real;
use crate::sampling::{GridParams, SamplingGrid};

/// How a symmetry rotation acts on the encoder input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EquivarianceMode {
    /// Rows (patches) are permuted; slot order inside each patch is kept.
    PatchPerm,
    /// Grid points are permuted as the rotated signal would be resampled,
    /// which may also reorder slots within a patch.
    Resample,
}

impl EquivarianceMode {
    pub fn name(self) -> &'static str {
        match self {
            EquivarianceMode::PatchPerm => "patch-perm",
            EquivarianceMode::Resample => "resample",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "patch-perm" | "patch" => Some(EquivarianceMode::PatchPerm),
            "resample" => Some(EquivarianceMode::Resample),
            _ => None,
        }
    }
}

impl fmt::Display for EquivarianceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquivarianceReport {
    pub mode: EquivarianceMode,
    pub grid: GridParams,
    pub layers: usize,
    /// Number of (sample, rotation) pairs averaged.
    pub n: usize,
    /// Mean error per group element, indexed by element id.
    pub per_rotation: Vec<f64>,
    pub aggregate: f64,
    pub precision: &'static str,
    pub use_pos_embedding: bool,
}

impl EquivarianceReport {
    /// `mode,div,layers,rotation_id,delta`; the `div` column holds the
    /// subdivision level (icosahedral grids) or the face edge (cube grids).
    pub fn write_csv<W: Write>(&self, mut w: W, header: bool) -> Result<()> {
        if header {
            writeln!(w, "mode,div,layers,rotation_id,delta")?;
        }
        let level = match self.grid {
            GridParams::Icosa { div, .. } => div,
            GridParams::Cube { edge } => edge,
            GridParams::Erp { height, .. } => height,
        };
        for (id, d) in self.per_rotation.iter().enumerate() {
            writeln!(w, "{},{level},{},{id},{d:.6e}", self.mode, self.layers)?;
        }
        Ok(())
    }
}

/// Population standard deviation over all entries.
fn std_all(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Moves point `m` of a point-major, channel-minor matrix to `perm[m]`.
fn permute_points<T: Real>(x: &Tensor<T>, perm: &[usize], channels: usize) -> Tensor<T> {
    let mut out = vec![T::zero(); x.len()];
    for (m, &to) in perm.iter().enumerate() {
        out[to * channels..(to + 1) * channels].copy_from_slice(&x.data()[m * channels..(m + 1) * channels]);
    }
    Tensor::new(x.shape().to_vec(), out).expect("same shape")
}

/// Row permutation of the encoder output: patch rows follow `patch_perm`,
/// a leading class row stays in place.
fn output_perm(patch_perm: &[usize], cls: bool) -> Vec<usize> {
    if cls {
        std::iter::once(0)
            .chain(patch_perm.iter().map(|&p| p + 1))
            .collect()
    } else {
        patch_perm.to_vec()
    }
}

/// Mean normalized mismatch between permuting the encoding and encoding the
/// rotated input, over every (sample, rotation) pair.
///
/// `perms[r]` must be the permutation pair of group element `r` on the grid
/// the samples were drawn from; `channels` is the number of values per point.
pub fn equivariance_error<T: Real>(
    params: &ModelParams<T>,
    grid: GridParams,
    perms: &[PermutationPair],
    samples: &[Tensor<T>],
    channels: usize,
    mode: EquivarianceMode,
) -> Result<EquivarianceReport> {
    if samples.is_empty() || perms.is_empty() {
        return Err(Error::argument(
            "equivariance needs at least one sample and one rotation",
        ));
    }
    let cls = params.config().use_cls_token;
    let encoded: Vec<Tensor<T>> = samples
        .par_iter()
        .map(|x| params.encode(x))
        .collect::<Result<_>>()?;

    let pairs: Vec<(usize, usize)> = (0..samples.len())
        .flat_map(|s| (0..perms.len()).map(move |r| (s, r)))
        .collect();
    let deltas: Vec<f64> = pairs
        .par_iter()
        .map(|&(s, r)| {
            let perm = &perms[r];
            let x = &samples[s];
            let rotated_input = match mode {
                EquivarianceMode::PatchPerm => x.scatter_rows(&perm.patch_perm)?,
                EquivarianceMode::Resample => permute_points(x, &perm.point_perm, channels),
            };
            let encoded_rotated = params.encode(&rotated_input)?;
            let rotated_output = encoded[s].scatter_rows(&output_perm(&perm.patch_perm, cls))?;
            let diff: Vec<f64> = rotated_output
                .data()
                .iter()
                .zip(encoded_rotated.data())
                .map(|(a, b)| (*a - *b).to_f64_lossy())
                .collect();
            let base: Vec<f64> = encoded[s].data().iter().map(|v| v.to_f64_lossy()).collect();
            let scale = std_all(&base);
            if scale.is_nan() || scale <= 0.0 {
                return Err(Error::argument("encoder output has zero spread"));
            }
            Ok(std_all(&diff) / scale)
        })
        .collect::<Result<_>>()?;

    let mut per_rotation = vec![0.0; perms.len()];
    for (&(_, r), d) in pairs.iter().zip(&deltas) {
        per_rotation[r] += d / samples.len() as f64;
    }
    Ok(EquivarianceReport {
        mode,
        grid,
        layers: params.config().layers,
        n: deltas.len(),
        per_rotation,
        aggregate: deltas.iter().sum::<f64>() / deltas.len() as f64,
        precision: T::NAME,
        use_pos_embedding: params.config().use_pos_embedding,
    })
}

/// One cell of an equivariance sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSpec {
    pub grid: GridParams,
    pub layers: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub samples: usize,
    pub mode: EquivarianceMode,
    pub use_pos_embedding: bool,
    pub use_cls_token: bool,
    pub seed: u64,
}

impl CellSpec {
    /// A 16-dim, 8-head encoder without positional embedding on `grid`.
    pub fn new(grid: GridParams, layers: usize, samples: usize, seed: u64) -> Self {
        CellSpec {
            grid,
            layers,
            model_dim: 16,
            heads: 8,
            samples,
            mode: EquivarianceMode::PatchPerm,
            use_pos_embedding: false,
            use_cls_token: false,
            seed,
        }
    }

    pub fn model_config(&self, grid: &SamplingGrid, channels: usize) -> ModelConfig {
        let mut c = ModelConfig::small(grid.num_patches(), grid.patch_size() * channels);
        c.model_dim = self.model_dim;
        c.heads = self.heads;
        c.layers = self.layers;
        c.ffn_hidden = 4 * self.model_dim;
        c.dropout = 0.0;
        c.use_pos_embedding = self.use_pos_embedding;
        c.use_cls_token = self.use_cls_token;
        c
    }
}

/// Builds the grid, group, a randomly initialized encoder and rotated
/// samples of `images`, then measures the equivariance error.
///
/// With a positional embedding enabled it is filled with random values,
/// since a zero embedding would not affect equivariance at all.
pub fn run_cell<T: Real>(spec: &CellSpec, images: &RawSplit, source: Source) -> Result<EquivarianceReport> {
    let grid = spec.grid.build()?;
    let solid = Solid::for_method(grid.method())
        .ok_or_else(|| Error::Unsupported(format!("{} grids have no symmetry group", grid.method())))?;
    if images.len() < spec.samples {
        return Err(Error::argument(format!(
            "{} samples requested, {} images given",
            spec.samples,
            images.len()
        )));
    }
    let group = enumerate_group(solid)?;
    let perms = group_permutations(&group, &grid)?;

    let subset = RawSplit {
        images: images.images[..spec.samples].to_vec(),
        labels: images.labels[..spec.samples].to_vec(),
    };
    let set = build_dataset(&subset, source, &grid, RotateMode::So3, Split::Test, spec.seed)?;
    let samples: Vec<Tensor<T>> = (0..set.len()).map(|i| example_tensor(&set, i)).collect();

    let mut params = ModelParams::<T>::init(&spec.model_config(&grid, set.channels), spec.seed)?;
    if spec.use_pos_embedding {
        params.randomize_pos_embedding(spec.seed)?;
    }
    equivariance_error(&params, spec.grid, &perms, &samples, set.channels, spec.mode)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synthetic_split;

    fn images() -> RawSplit {
        synthetic_split(Split::Test, 4, 3)
    }

    fn identity(solid: Solid) -> usize {
        enumerate_group(solid).unwrap().identity_id()
    }

    fn icosa(div: usize, k: usize) -> GridParams {
        GridParams::Icosa { div, patch_scale: k }
    }

    #[test]
    fn patch_permutation_is_structurally_exact() {
        let spec = CellSpec::new(icosa(2, 0), 2, 3, 1);
        let r = run_cell::<f64>(&spec, &images(), Source::Synthetic).unwrap();
        assert_eq!(r.per_rotation.len(), 60);
        assert_eq!(r.n, 180);
        assert_eq!(r.per_rotation[identity(Solid::Icosa)], 0.0);
        assert!(r.aggregate <= 1e-9, "{}", r.aggregate);

        let other_seed = run_cell::<f64>(
            &CellSpec {
                seed: 9,
                ..spec.clone()
            },
            &images(),
            Source::Synthetic,
        )
        .unwrap();
        assert!((other_seed.aggregate - r.aggregate).abs() <= 1e-9);
    }

    #[test]
    fn positional_embedding_is_detected() {
        let mut spec = CellSpec::new(icosa(1, 0), 1, 2, 2);
        spec.use_pos_embedding = true;
        let r = run_cell::<f64>(&spec, &images(), Source::Synthetic).unwrap();
        assert_eq!(r.per_rotation[identity(Solid::Icosa)], 0.0);
        assert!(r.aggregate > 1e-3, "{}", r.aggregate);
    }

    #[test]
    fn resampling_reorders_slots_and_shows_error() {
        let mut spec = CellSpec::new(icosa(2, 0), 1, 2, 4);
        spec.mode = EquivarianceMode::Resample;
        let r = run_cell::<f64>(&spec, &images(), Source::Synthetic).unwrap();
        assert_eq!(r.per_rotation[identity(Solid::Icosa)], 0.0);
        let id = identity(Solid::Icosa);
        assert!(r
            .per_rotation
            .iter()
            .enumerate()
            .all(|(i, &d)| i == id || d > 1e-6));

        // At div = k every patch is one point, so both readings agree.
        let mut single = CellSpec::new(icosa(1, 1), 1, 2, 4);
        single.mode = EquivarianceMode::Resample;
        let r = run_cell::<f64>(&single, &images(), Source::Synthetic).unwrap();
        assert!(r.aggregate <= 1e-9);
    }

    #[test]
    fn scale_of_inputs_does_not_matter() {
        let grid = crate::sampling::build_icosa_grid(1, 0).unwrap();
        let group = enumerate_group(Solid::Icosa).unwrap();
        let perms = group_permutations(&group, &grid).unwrap();
        let spec = CellSpec::new(icosa(1, 0), 2, 1, 5);
        let params = ModelParams::<f64>::init(&spec.model_config(&grid, 1), 5).unwrap();
        let set = build_dataset(
            &images(),
            Source::Synthetic,
            &grid,
            RotateMode::So3,
            Split::Test,
            5,
        )
        .unwrap();
        for s in [1e-2, 1.0, 1e2] {
            let x = example_tensor::<f64>(&set, 0).map(|v| v * s);
            let r =
                equivariance_error(&params, spec.grid, &perms, &[x], 1, EquivarianceMode::PatchPerm).unwrap();
            assert!(r.aggregate <= 1e-9);
        }
    }

    #[test]
    fn cube_grids_work_and_erp_is_unsupported() {
        let spec = CellSpec::new(GridParams::Cube { edge: 3 }, 1, 2, 6);
        let r = run_cell::<f64>(&spec, &images(), Source::Synthetic).unwrap();
        assert_eq!(r.per_rotation.len(), 24);
        assert!(r.aggregate <= 1e-9);
        let mut buf = Vec::new();
        r.write_csv(&mut buf, true).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 25);
        let id = identity(Solid::Cube);
        assert!(text.starts_with("mode,div,layers,rotation_id,delta\npatch-perm,3,1,0,"));
        assert!(text.contains(&format!("\npatch-perm,3,1,{id},0.000000e0\n")));

        let erp = CellSpec::new(
            GridParams::Erp {
                height: 4,
                width: 8,
                patch_h: 2,
                patch_w: 2,
            },
            1,
            2,
            6,
        );
        assert!(matches!(
            run_cell::<f64>(&erp, &images(), Source::Synthetic),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn class_token_row_is_held_fixed() {
        let mut spec = CellSpec::new(icosa(1, 0), 1, 2, 7);
        spec.use_cls_token = true;
        let r = run_cell::<f64>(&spec, &images(), Source::Synthetic).unwrap();
        assert!(r.aggregate <= 1e-9);
    }
}
