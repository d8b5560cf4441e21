//! Raw image sources: MNIST IDX files, CIFAR-10 binary batches, and a
//! synthetic seven-segment digit set for runs without downloaded data.
//!
//! MNIST IDX layout (big-endian): images start with magic 0x00000803, count,
//! rows, cols, followed by `count * rows * cols` bytes; labels start with
//! magic 0x00000801 and count, followed by `count` bytes.
//!
//! CIFAR-10 binary layout: each record is one label byte followed by 3072
//! bytes, the 32x32 red plane, then green, then blue, each row-major.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;

use super::signal::Image;
use crate::error::{Error, Result};
use crate::rng::{stream_id, stream_rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    pub(crate) fn index(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Test => 1,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Where the planar images come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Source {
    /// MNIST digits, mapped onto the full sphere.
    Mnist,
    /// CIFAR-10 images, placed in a field of view at the north pole.
    Cifar,
    /// Generated seven-segment digits, mapped like MNIST.
    Synthetic,
}

impl Source {
    pub fn name(self) -> &'static str {
        match self {
            Source::Mnist => "mnist",
            Source::Cifar => "cifar",
            Source::Synthetic => "synthetic",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mnist" | "sph-mnist" | "sphmnist" => Some(Source::Mnist),
            "cifar" | "cifar10" | "sph-cifar" | "sphcifar" => Some(Source::Cifar),
            "synthetic" | "synth" => Some(Source::Synthetic),
            _ => None,
        }
    }

    /// Conventional sub-directory under the data root.
    pub fn default_dir(self) -> &'static str {
        match self {
            Source::Mnist => "mnist",
            Source::Cifar => "cifar-10-batches-bin",
            Source::Synthetic => "",
        }
    }

    pub fn channels(self) -> usize {
        match self {
            Source::Cifar => 3,
            _ => 1,
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Labelled planar images of one split.
#[derive(Debug, Clone, Default)]
pub struct RawSplit {
    pub images: Vec<Image>,
    pub labels: Vec<u8>,
}

impl RawSplit {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::ingestion(path, e.to_string()))
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::ingestion(path, "truncated header"))
}

fn find_idx(dir: &Path, stem: &str, kind: &str) -> PathBuf {
    let hyphen = dir.join(format!("{stem}-{kind}"));
    if hyphen.exists() {
        return hyphen;
    }
    let dotted = dir.join(format!("{stem}.{kind}"));
    if dotted.exists() {
        return dotted;
    }
    hyphen
}

/// Reads an IDX image file and its label file.
pub fn read_idx_pair(images: &Path, labels: &Path, limit: Option<usize>) -> Result<RawSplit> {
    let img = read_file(images)?;
    if be_u32(&img, 0, images)? != 0x0803 {
        return Err(Error::ingestion(
            images,
            "bad magic, expected IDX3 unsigned byte images",
        ));
    }
    let count = be_u32(&img, 4, images)? as usize;
    let rows = be_u32(&img, 8, images)? as usize;
    let cols = be_u32(&img, 12, images)? as usize;
    if rows == 0 || cols == 0 {
        return Err(Error::ingestion(
            images,
            format!("empty image size {rows}x{cols}"),
        ));
    }
    let needed = 16 + count * rows * cols;
    if img.len() < needed {
        return Err(Error::ingestion(
            images,
            format!("truncated: {} bytes, header promises {needed}", img.len()),
        ));
    }

    let lab = read_file(labels)?;
    if be_u32(&lab, 0, labels)? != 0x0801 {
        return Err(Error::ingestion(
            labels,
            "bad magic, expected IDX1 unsigned byte labels",
        ));
    }
    let label_count = be_u32(&lab, 4, labels)? as usize;
    if label_count != count {
        return Err(Error::ingestion(
            labels,
            format!("{label_count} labels for {count} images"),
        ));
    }
    if lab.len() < 8 + count {
        return Err(Error::ingestion(labels, "truncated label data"));
    }

    let take = limit.map_or(count, |l| l.min(count));
    let mut out = RawSplit::default();
    for i in 0..take {
        let label = lab[8 + i];
        if label > 9 {
            return Err(Error::ingestion(
                labels,
                format!("label {label} at index {i} is not a digit"),
            ));
        }
        let start = 16 + i * rows * cols;
        out.images
            .push(Image::from_u8(rows, cols, 1, &img[start..start + rows * cols])?);
        out.labels.push(label);
    }
    Ok(out)
}

/// MNIST split from a directory holding the four standard IDX files.
pub fn load_mnist(dir: &Path, split: Split, limit: Option<usize>) -> Result<RawSplit> {
    let stem = match split {
        Split::Train => "train",
        Split::Test => "t10k",
    };
    read_idx_pair(
        &find_idx(dir, &format!("{stem}-images"), "idx3-ubyte"),
        &find_idx(dir, &format!("{stem}-labels"), "idx1-ubyte"),
        limit,
    )
}

const CIFAR_SIDE: usize = 32;
const CIFAR_RECORD: usize = 1 + 3 * CIFAR_SIDE * CIFAR_SIDE;

/// Reads CIFAR-10 binary batch files in order.
pub fn read_cifar_batches(files: &[PathBuf], limit: Option<usize>) -> Result<RawSplit> {
    let mut out = RawSplit::default();
    let plane = CIFAR_SIDE * CIFAR_SIDE;
    for path in files {
        let bytes = read_file(path)?;
        if bytes.is_empty() || bytes.len() % CIFAR_RECORD != 0 {
            return Err(Error::ingestion(
                path,
                format!(
                    "size {} is not a multiple of the {CIFAR_RECORD}-byte record",
                    bytes.len()
                ),
            ));
        }
        for (i, rec) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
            if limit.is_some_and(|l| out.len() >= l) {
                return Ok(out);
            }
            let label = rec[0];
            if label > 9 {
                return Err(Error::ingestion(path, format!("label {label} in record {i}")));
            }
            let mut data = Vec::with_capacity(3 * plane);
            for px in 0..plane {
                for ch in 0..3 {
                    data.push(f64::from(rec[1 + ch * plane + px]) / 255.0);
                }
            }
            out.images.push(Image::new(CIFAR_SIDE, CIFAR_SIDE, 3, data)?);
            out.labels.push(label);
        }
    }
    Ok(out)
}

/// CIFAR-10 split from the `cifar-10-batches-bin` directory.
pub fn load_cifar(dir: &Path, split: Split, limit: Option<usize>) -> Result<RawSplit> {
    let files: Vec<PathBuf> = match split {
        Split::Train => (1..=5).map(|i| dir.join(format!("data_batch_{i}.bin"))).collect(),
        Split::Test => vec![dir.join("test_batch.bin")],
    };
    read_cifar_batches(&files, limit)
}

// Seven-segment layout on a unit-wide, two-unit-tall box (y grows downwards).
const SEGMENTS: [((f64, f64), (f64, f64)); 7] = [
    ((0.0, 0.0), (1.0, 0.0)), // top
    ((1.0, 0.0), (1.0, 1.0)), // upper right
    ((1.0, 1.0), (1.0, 2.0)), // lower right
    ((0.0, 2.0), (1.0, 2.0)), // bottom
    ((0.0, 1.0), (0.0, 2.0)), // lower left
    ((0.0, 0.0), (0.0, 1.0)), // upper left
    ((0.0, 1.0), (1.0, 1.0)), // middle
];

const DIGIT_SEGMENTS: [u8; 10] = [
    0b0111111, 0b0000110, 0b1011011, 0b1001111, 0b1100110, 0b1101101, 0b1111101, 0b0000111, 0b1111111,
    0b1101111,
];

fn segment_distance(px: f64, py: f64, a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let t = (((px - a.0) * dx + (py - a.1) * dy) / (dx * dx + dy * dy)).clamp(0.0, 1.0);
    let (cx, cy) = (a.0 + t * dx, a.1 + t * dy);
    ((px - cx).powi(2) + (py - cy).powi(2)).sqrt()
}

/// A 28x28 seven-segment rendering of `digit` with random placement, size,
/// slant and stroke width.
pub fn synthetic_digit<R: Rng + ?Sized>(digit: u8, rng: &mut R) -> Image {
    const SIDE: usize = 28;
    let scale = rng.random_range(6.0..8.0);
    let slant = rng.random_range(-0.25..0.25);
    let thickness = rng.random_range(1.0..2.0);
    let cx = 14.0 + rng.random_range(-3.0..3.0);
    let cy = 14.0 + rng.random_range(-2.0..2.0);
    let place = |(x, y): (f64, f64)| {
        let ys = (y - 1.0) * scale;
        (cx + (x - 0.5) * scale - slant * ys, cy + ys)
    };
    let mask = DIGIT_SEGMENTS[usize::from(digit % 10)];
    let strokes: Vec<_> = SEGMENTS
        .iter()
        .enumerate()
        .filter(|(i, _)| mask >> i & 1 == 1)
        .map(|(_, &(a, b))| (place(a), place(b)))
        .collect();
    let mut data = vec![0.0; SIDE * SIDE];
    for r in 0..SIDE {
        for c in 0..SIDE {
            let (px, py) = (c as f64 + 0.5, r as f64 + 0.5);
            let d = strokes
                .iter()
                .map(|&(a, b)| segment_distance(px, py, a, b))
                .fold(f64::INFINITY, f64::min);
            data[r * SIDE + c] = (1.0 + thickness - d).clamp(0.0, 1.0);
        }
    }
    Image::new(SIDE, SIDE, 1, data).expect("fixed size")
}

/// `count` synthetic digits with labels cycling through 0..9.
pub fn synthetic_split(split: Split, count: usize, seed: u64) -> RawSplit {
    let mut out = RawSplit::default();
    for i in 0..count {
        let label = (i % 10) as u8;
        let mut rng = stream_rng(seed, stream_id(&[0x5157, split.index(), i as u64]));
        out.images.push(synthetic_digit(label, &mut rng));
        out.labels.push(label);
    }
    out
}

/// Loads a split of `source` from `dir` (ignored for the synthetic source,
/// where `limit` sets the count).
pub fn load_source(
    source: Source,
    dir: &Path,
    split: Split,
    limit: Option<usize>,
    seed: u64,
) -> Result<RawSplit> {
    match source {
        Source::Mnist => load_mnist(dir, split, limit),
        Source::Cifar => load_cifar(dir, split, limit),
        Source::Synthetic => {
            let default = match split {
                Split::Train => 2000,
                Split::Test => 500,
            };
            Ok(synthetic_split(split, limit.unwrap_or(default), seed))
        }
    }
}

/// Writes images and labels as an IDX pair (grayscale, 8-bit).
pub fn write_idx_pair(images: &Path, labels: &Path, split: &RawSplit) -> Result<()> {
    let (rows, cols) = split
        .images
        .first()
        .map_or((0, 0), |im| (im.height(), im.width()));
    let mut img = Vec::with_capacity(16 + split.len() * rows * cols);
    for v in [0x0803, split.len() as u32, rows as u32, cols as u32] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    for im in &split.images {
        if im.height() != rows || im.width() != cols || im.channels() != 1 {
            return Err(Error::argument("IDX export needs equally sized grayscale images"));
        }
        img.extend(
            im.data()
                .iter()
                .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
        );
    }
    let mut lab = Vec::with_capacity(8 + split.len());
    for v in [0x0801, split.len() as u32] {
        lab.extend_from_slice(&v.to_be_bytes());
    }
    lab.extend_from_slice(&split.labels);
    fs::write(images, img)?;
    fs::write(labels, lab)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn idx_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let raw = synthetic_split(Split::Train, 12, 4);
        let (ip, lp) = (
            dir.path().join("train-images-idx3-ubyte"),
            dir.path().join("train-labels-idx1-ubyte"),
        );
        write_idx_pair(&ip, &lp, &raw).unwrap();
        let back = load_mnist(dir.path(), Split::Train, Some(5)).unwrap();
        assert_eq!(back.len(), 5);
        assert_eq!(back.labels, raw.labels[..5]);
        assert_eq!(back.images[0].height(), 28);
        for (a, b) in back.images[3].data().iter().zip(raw.images[3].data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }

        let bytes = fs::read(&ip).unwrap();
        fs::write(&ip, &bytes[..bytes.len() - 10]).unwrap();
        match load_mnist(dir.path(), Split::Train, None) {
            Err(Error::Ingestion { path, .. }) => assert_eq!(path, ip),
            other => panic!("{other:?}"),
        }
        match load_mnist(dir.path(), Split::Test, None) {
            Err(Error::Ingestion { path, .. }) => assert!(path.ends_with("t10k-images-idx3-ubyte")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn cifar_planes_become_interleaved_pixels() {
        let dir = tempfile::tempdir().unwrap();
        let mut rec = vec![7u8];
        rec.extend(std::iter::repeat_n(255u8, 1024));
        rec.extend(std::iter::repeat_n(0u8, 1024));
        rec.extend(std::iter::repeat_n(51u8, 1024));
        let path = dir.path().join("test_batch.bin");
        fs::write(&path, [rec.clone(), rec].concat()).unwrap();
        let raw = load_cifar(dir.path(), Split::Test, None).unwrap();
        assert_eq!(raw.labels, vec![7, 7]);
        assert_eq!(raw.images[1].pixel(5, 9, 0), 1.0);
        assert_eq!(raw.images[1].pixel(5, 9, 1), 0.0);
        assert!((raw.images[1].pixel(5, 9, 2) - 0.2).abs() < 1e-12);

        fs::write(&path, [1u8; 100]).unwrap();
        assert!(matches!(
            load_cifar(dir.path(), Split::Test, None),
            Err(Error::Ingestion { .. })
        ));
    }

    #[test]
    fn synthetic_digits_are_deterministic_and_distinct() {
        let a = synthetic_split(Split::Train, 20, 1);
        let b = synthetic_split(Split::Train, 20, 1);
        assert_eq!(a.images, b.images);
        assert_ne!(a.images[1], a.images[11]);
        let ones: f64 = a.images[1].data().iter().sum();
        let eights: f64 = a.images[8].data().iter().sum();
        assert!(eights > ones);
        assert!(a
            .images
            .iter()
            .all(|im| im.data().iter().all(|v| (0.0..=1.0).contains(v))));
    }
}
