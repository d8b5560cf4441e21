//! Spherical classification datasets: planar images placed on the sphere,
//! randomly rotated, and sampled on a grid into patch sequences.

mod signal;
mod source;

pub use signal::{sample_sequence, Image, PatchSequence, SignalMapping, SphericalSignal};
pub use source::{
    load_cifar, load_mnist, load_source, read_cifar_batches, read_idx_pair, synthetic_digit, synthetic_split,
    write_idx_pair, RawSplit, Source, Split,
};

use std::fmt;
use std::io::{Read, Write};

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{Mat3, UnitVector3};
use crate::groups::{enumerate_group, random_so3, RotationElement, Solid};
use crate::rng::{stream_id, stream_rng};
use crate::sampling::{GridParams, SamplingGrid, SamplingMethod};

/// Field of view used to place CIFAR images on the sphere, in degrees.
pub const CIFAR_FOV_DEG: f64 = 65.5;

pub const CACHE_MAGIC: &[u8; 8] = b"SPHTRSEQ";
pub const CACHE_VERSION: u32 = 1;

/// Which rotation each example receives before sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RotateMode {
    None,
    /// Haar-uniform rotation.
    So3,
    /// Uniformly chosen element of the grid's symmetry group.
    Group,
}

impl RotateMode {
    pub fn name(self) -> &'static str {
        match self {
            RotateMode::None => "none",
            RotateMode::So3 => "so3",
            RotateMode::Group => "group",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Some(RotateMode::None),
            "so3" | "random" => Some(RotateMode::So3),
            "group" => Some(RotateMode::Group),
            _ => None,
        }
    }

    fn code(self) -> u32 {
        match self {
            RotateMode::None => 0,
            RotateMode::So3 => 1,
            RotateMode::Group => 2,
        }
    }

    fn from_code(c: u32) -> Option<Self> {
        [RotateMode::None, RotateMode::So3, RotateMode::Group]
            .into_iter()
            .find(|m| m.code() == c)
    }
}

impl fmt::Display for RotateMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// The spherical signal a source image becomes.
pub fn signal_for(source: Source, image: Image) -> Result<SphericalSignal> {
    match source {
        Source::Mnist | Source::Synthetic => Ok(SphericalSignal::full_sphere(image)),
        Source::Cifar => SphericalSignal::tangent_fov(image, CIFAR_FOV_DEG, UnitVector3::NORTH),
    }
}

/// A set of sampled examples stored in single precision, one `N x (D*C)`
/// matrix per example.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceSet {
    pub grid: GridParams,
    pub num_patches: usize,
    pub patch_size: usize,
    pub channels: usize,
    pub seed: u64,
    pub rotate: RotateMode,
    values: Vec<f32>,
    labels: Vec<u8>,
    /// Applied rotations; kept in memory only, not persisted in the cache.
    rotations: Vec<Option<RotationElement>>,
}

impl SequenceSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Values per patch row, `D * C`.
    pub fn input_dim(&self) -> usize {
        self.patch_size * self.channels
    }

    pub fn example_len(&self) -> usize {
        self.num_patches * self.input_dim()
    }

    pub fn example(&self, i: usize) -> &[f32] {
        let n = self.example_len();
        &self.values[i * n..(i + 1) * n]
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn rotations(&self) -> &[Option<RotationElement>] {
        &self.rotations
    }

    /// The first `n` examples.
    pub fn truncated(&self, n: usize) -> SequenceSet {
        let n = n.min(self.len());
        SequenceSet {
            values: self.values[..n * self.example_len()].to_vec(),
            labels: self.labels[..n].to_vec(),
            rotations: self.rotations.get(..n).map(<[_]>::to_vec).unwrap_or_default(),
            ..self.clone_header()
        }
    }

    fn clone_header(&self) -> SequenceSet {
        SequenceSet {
            grid: self.grid,
            num_patches: self.num_patches,
            patch_size: self.patch_size,
            channels: self.channels,
            seed: self.seed,
            rotate: self.rotate,
            values: Vec::new(),
            labels: Vec::new(),
            rotations: Vec::new(),
        }
    }

    /// Regroups an icosahedral set to patch scale `k`. Points keep their
    /// order for every `k`, so only the row split changes.
    pub fn regroup_icosa(&self, k: usize) -> Result<SequenceSet> {
        let GridParams::Icosa { div, .. } = self.grid else {
            return Err(Error::Unsupported(format!(
                "patch-scale regrouping needs an icosahedral set, got {}",
                self.grid
            )));
        };
        if k > div {
            return Err(Error::config(format!(
                "patch scale {k} exceeds subdivision {div}"
            )));
        }
        let num_patches = 20 * 4usize.pow(k as u32);
        let patch_size = 4usize.pow((div - k) as u32);
        Ok(SequenceSet {
            grid: GridParams::Icosa { div, patch_scale: k },
            num_patches,
            patch_size,
            values: self.values.clone(),
            labels: self.labels.clone(),
            rotations: self.rotations.clone(),
            ..self.clone_header()
        })
    }

    /// Little-endian cache encoding: header, then per example the `f32`
    /// matrix followed by the label byte.
    pub fn write_cache<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(CACHE_MAGIC)?;
        let method = method_code(self.grid.method());
        let words = self.grid.as_words();
        for v in [CACHE_VERSION, method, words[0], words[1], words[2], words[3]] {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in [self.num_patches, self.patch_size, self.channels] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&self.rotate.code().to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.example_len() * 4 + 1);
        for i in 0..self.len() {
            buf.clear();
            for v in self.example(i) {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            buf.push(self.labels[i]);
            w.write_all(&buf)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_cache<R: Read>(mut r: R) -> Result<SequenceSet> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(truncated)?;
        if &magic != CACHE_MAGIC {
            return Err(Error::Format("not a sequence cache (bad magic)".into()));
        }
        let mut u32s = [0u32; 9];
        for v in &mut u32s {
            *v = read_u32(&mut r)?;
        }
        let [version, method, w0, w1, w2, w3, n, d, c] = u32s;
        if version != CACHE_VERSION {
            return Err(Error::Format(format!(
                "cache version {version}, this build reads {CACHE_VERSION}"
            )));
        }
        let method = method_from_code(method)
            .ok_or_else(|| Error::Format(format!("unknown sampling method code {method}")))?;
        let grid = GridParams::from_words(method, [w0, w1, w2, w3]);
        let count = read_u64(&mut r)? as usize;
        let seed = read_u64(&mut r)?;
        let rotate_code = read_u32(&mut r)?;
        let rotate = RotateMode::from_code(rotate_code)
            .ok_or_else(|| Error::Format(format!("unknown rotation mode code {rotate_code}")))?;

        let (n, d, c) = (n as usize, d as usize, c as usize);
        let per = n * d * c;
        let mut values = Vec::with_capacity(count * per);
        let mut labels = Vec::with_capacity(count);
        let mut buf = vec![0u8; per * 4 + 1];
        for _ in 0..count {
            r.read_exact(&mut buf).map_err(truncated)?;
            values.extend(
                buf[..per * 4]
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])),
            );
            labels.push(buf[per * 4]);
        }
        Ok(SequenceSet {
            grid,
            num_patches: n,
            patch_size: d,
            channels: c,
            seed,
            rotate,
            values,
            labels,
            rotations: Vec::new(),
        })
    }

    /// One row per example: index, label, group element id (empty when the
    /// rotation is not a group element) and the row-major matrix.
    pub fn write_rotations_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "index,label,rotation_id,m00,m01,m02,m10,m11,m12,m20,m21,m22")?;
        for (i, r) in self.rotations.iter().enumerate() {
            let (id, m) = match r {
                Some(r) => (r.id.map(|v| v.to_string()).unwrap_or_default(), r.matrix),
                None => (String::new(), Mat3::IDENTITY),
            };
            write!(w, "{i},{},{id}", self.labels[i])?;
            for v in m.flat() {
                write!(w, ",{v:.17e}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Format("sequence cache is truncated".into())
    } else {
        Error::Io(e)
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u64::from_le_bytes(b))
}

fn method_code(m: SamplingMethod) -> u32 {
    match m {
        SamplingMethod::Erp => 0,
        SamplingMethod::Cube => 1,
        SamplingMethod::Icosa => 2,
    }
}

fn method_from_code(c: u32) -> Option<SamplingMethod> {
    [SamplingMethod::Erp, SamplingMethod::Cube, SamplingMethod::Icosa]
        .into_iter()
        .find(|&m| method_code(m) == c)
}

/// Samples every image of `raw` on `grid` after an independent rotation per
/// example. The rotation of example `i` depends only on `(seed, split, i)`.
pub fn build_dataset(
    raw: &RawSplit,
    source: Source,
    grid: &SamplingGrid,
    rotate: RotateMode,
    split: Split,
    seed: u64,
) -> Result<SequenceSet> {
    let group = match rotate {
        RotateMode::Group => {
            let solid = Solid::for_method(grid.method()).ok_or_else(|| {
                Error::Unsupported(format!("{} grids have no symmetry group", grid.method()))
            })?;
            Some(enumerate_group(solid)?)
        }
        _ => None,
    };

    let examples: Vec<(Vec<f32>, Option<RotationElement>)> = raw
        .images
        .par_iter()
        .zip(&raw.labels)
        .enumerate()
        .map(|(i, (image, &label))| {
            let mut rng = stream_rng(seed, stream_id(&[split.index(), i as u64]));
            let rotation = match (rotate, &group) {
                (RotateMode::None, _) => None,
                (RotateMode::So3, _) => Some(random_so3(&mut rng)),
                (RotateMode::Group, Some(g)) => Some(*g.get(rng.random_range(0..g.len()))),
                (RotateMode::Group, None) => unreachable!("group resolved above"),
            };
            let signal = signal_for(source, image.clone())?;
            let seq = sample_sequence(&signal, grid, rotation.as_ref(), label);
            Ok((seq.values.iter().map(|&v| v as f32).collect(), rotation))
        })
        .collect::<Result<_>>()?;

    let channels = source.channels();
    let mut values = Vec::with_capacity(examples.len() * grid.len() * channels);
    let mut rotations = Vec::with_capacity(examples.len());
    for (v, r) in examples {
        values.extend_from_slice(&v);
        rotations.push(r);
    }
    Ok(SequenceSet {
        grid: grid.params(),
        num_patches: grid.num_patches(),
        patch_size: grid.patch_size(),
        channels,
        seed,
        rotate,
        values,
        labels: raw.labels.clone(),
        rotations,
    })
}
