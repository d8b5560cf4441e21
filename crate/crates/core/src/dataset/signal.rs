//! Planar images placed on the sphere, and point sampling of the result.

use std::f64::consts::{PI, TAU};

use crate::error::{Error, Result};
use crate::geometry::{UnitVector3, Vec3};
use crate::groups::RotationElement;
use crate::sampling::{GridParams, SamplingGrid};

/// A planar image, row-major with interleaved channels, values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::argument(format!(
                "empty image {height}x{width}x{channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::argument(format!(
                "image {height}x{width}x{channels} needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        Ok(Image {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, v: f64) -> Result<Self> {
        Self::new(height, width, channels, vec![v; height * width * channels])
    }

    /// Grayscale image from 8-bit intensities.
    pub fn from_u8(height: usize, width: usize, channels: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(
            height,
            width,
            channels,
            bytes.iter().map(|&b| f64::from(b) / 255.0).collect(),
        )
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.data[(row * self.width + col) * self.channels + channel]
    }

    fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Bilinear lookup at fractional pixel coordinates (pixel centres are at
    /// integers). Rows clamp; columns wrap when `wrap` is set, else clamp.
    fn bilinear(&self, row: f64, col: f64, wrap: bool, out: &mut [f64]) {
        let r = row.clamp(0.0, (self.height - 1) as f64);
        let r0 = r.floor() as usize;
        let r1 = (r0 + 1).min(self.height - 1);
        let fr = r - r0 as f64;

        let (c0, c1, fc) = if wrap {
            let w = self.width as f64;
            let c = col.rem_euclid(w);
            let c0 = (c.floor() as usize).min(self.width - 1);
            (c0, (c0 + 1) % self.width, c - c0 as f64)
        } else {
            let c = col.clamp(0.0, (self.width - 1) as f64);
            let c0 = c.floor() as usize;
            (c0, (c0 + 1).min(self.width - 1), c - c0 as f64)
        };

        for (ch, o) in out.iter_mut().enumerate() {
            let top = self.pixel(r0, c0, ch) * (1.0 - fc) + self.pixel(r0, c1, ch) * fc;
            let bottom = self.pixel(r1, c0, ch) * (1.0 - fc) + self.pixel(r1, c1, ch) * fc;
            *o = top * (1.0 - fr) + bottom * fr;
        }
    }
}

/// How an image is placed on the sphere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SignalMapping {
    /// The image is an equirectangular texture stretched over the whole sphere.
    FullSphere,
    /// Gnomonic placement inside a square field of view around `center`.
    TangentFov { fov_deg: f64, center: UnitVector3 },
}

/// A function on the sphere backed by a planar image.
#[derive(Debug, Clone)]
pub struct SphericalSignal {
    image: Image,
    mapping: SignalMapping,
    background: f64,
    // Orthonormal tangent frame for the FOV mapping: right, up, forward.
    frame: [[f64; 3]; 3],
    tan_half_fov: f64,
}

/// Below this sine of the colatitude a point is treated as a pole.
const POLE_EPS: f64 = 1e-9;

impl SphericalSignal {
    /// Stretches the image over (colatitude, longitude), top row at the north pole.
    pub fn full_sphere(image: Image) -> Self {
        SphericalSignal {
            image,
            mapping: SignalMapping::FullSphere,
            background: 0.0,
            frame: [[0.0; 3]; 3],
            tan_half_fov: 0.0,
        }
    }

    /// Places the image on the tangent plane at `center`; points outside the
    /// field of view read as zero.
    ///
    /// The image's right and up directions follow the x and y axes when the
    /// centre is the north pole; for other centres the frame is built from
    /// the world z axis (or x near the poles).
    pub fn tangent_fov(image: Image, fov_deg: f64, center: UnitVector3) -> Result<Self> {
        if !(fov_deg > 0.0 && fov_deg < 180.0) {
            return Err(Error::argument(format!(
                "field of view {fov_deg} deg outside (0, 180)"
            )));
        }
        let c = center.vec();
        let (right, up) = if (c.z.abs() - 1.0).abs() < 1e-12 {
            let right = Vec3::new(1.0, 0.0, 0.0);
            (right, c.cross(right))
        } else {
            let helper = Vec3::new(0.0, 0.0, 1.0);
            let right = helper.cross(c);
            let right = right.scale(1.0 / right.norm());
            (right, c.cross(right))
        };
        Ok(SphericalSignal {
            image,
            mapping: SignalMapping::TangentFov { fov_deg, center },
            background: 0.0,
            frame: [right.to_array(), up.to_array(), c.to_array()],
            tan_half_fov: (fov_deg.to_radians() / 2.0).tan(),
        })
    }

    pub fn image(&self) -> &Image {
        &self.image
    }

    pub fn mapping(&self) -> SignalMapping {
        self.mapping
    }

    pub fn channels(&self) -> usize {
        self.image.channels
    }

    /// Writes the signal's channels at `p` into `out`.
    pub fn evaluate_into(&self, p: UnitVector3, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.image.channels);
        match self.mapping {
            SignalMapping::FullSphere => self.eval_full(p, out),
            SignalMapping::TangentFov { .. } => self.eval_fov(p, out),
        }
    }

    pub fn evaluate(&self, p: UnitVector3) -> Vec<f64> {
        let mut out = vec![0.0; self.image.channels];
        self.evaluate_into(p, &mut out);
        out
    }

    fn eval_full(&self, p: UnitVector3, out: &mut [f64]) {
        let h = self.image.height as f64;
        let w = self.image.width as f64;
        let sin_theta = (p.x() * p.x() + p.y() * p.y()).sqrt();
        if sin_theta < POLE_EPS {
            // Longitude is undefined at a pole; use the mean of the edge row.
            let row = if p.z() > 0.0 { 0 } else { self.image.height - 1 };
            for (ch, o) in out.iter_mut().enumerate() {
                let sum: f64 = (0..self.image.width).map(|c| self.image.pixel(row, c, ch)).sum();
                *o = sum / w;
            }
            return;
        }
        let row = p.colatitude() / PI * h - 0.5;
        let col = p.longitude() / TAU * w - 0.5;
        self.image.bilinear(row, col, true, out);
    }

    fn eval_fov(&self, p: UnitVector3, out: &mut [f64]) {
        let v = p.vec().to_array();
        let dot = |a: &[f64; 3]| a[0] * v[0] + a[1] * v[1] + a[2] * v[2];
        let forward = dot(&self.frame[2]);
        let u = dot(&self.frame[0]) / forward / self.tan_half_fov;
        let t = dot(&self.frame[1]) / forward / self.tan_half_fov;
        if forward <= 0.0 || u.abs() > 1.0 || t.abs() > 1.0 {
            out.fill(self.background);
            return;
        }
        let row = (1.0 - t) / 2.0 * self.image.height as f64 - 0.5;
        let col = (u + 1.0) / 2.0 * self.image.width as f64 - 0.5;
        self.image.bilinear(row, col, false, out);
    }

    /// Smallest and largest value the signal can take.
    pub fn value_range(&self) -> (f64, f64) {
        let (lo, hi) = self.image.min_max();
        match self.mapping {
            SignalMapping::FullSphere => (lo, hi),
            SignalMapping::TangentFov { .. } => (lo.min(self.background), hi.max(self.background)),
        }
    }
}

/// A sampled signal: one row per patch, `patch_size * channels` values per
/// row, slot-major and channel-minor.
#[derive(Debug, Clone)]
pub struct PatchSequence {
    pub grid: GridParams,
    pub num_patches: usize,
    pub patch_size: usize,
    pub channels: usize,
    pub values: Vec<f64>,
    pub label: u8,
    pub rotation: Option<RotationElement>,
}

impl PatchSequence {
    pub fn row_len(&self) -> usize {
        self.patch_size * self.channels
    }

    pub fn row(&self, j: usize) -> &[f64] {
        let n = self.row_len();
        &self.values[j * n..(j + 1) * n]
    }
}

/// Samples the signal rotated by `rotation` on every grid point, i.e. the
/// original signal at the inversely rotated points.
pub fn sample_sequence(
    signal: &SphericalSignal,
    grid: &SamplingGrid,
    rotation: Option<&RotationElement>,
    label: u8,
) -> PatchSequence {
    let c = signal.channels();
    let mut values = vec![0.0; grid.len() * c];
    let inverse = rotation.map(|r| r.inverse_matrix());
    for (p, out) in grid.points().iter().zip(values.chunks_mut(c)) {
        let q = match &inverse {
            Some(m) => m.rotate(*p),
            None => *p,
        };
        signal.evaluate_into(q, out);
    }
    PatchSequence {
        grid: grid.params(),
        num_patches: grid.num_patches(),
        patch_size: grid.patch_size(),
        channels: c,
        values,
        label,
        rotation: rotation.cloned(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::groups::{enumerate_group, group_permutations, Solid};
    use crate::sampling::build_icosa_grid;

    fn checkerboard() -> Image {
        Image::new(2, 2, 1, vec![0.1, 0.2, 0.3, 0.4]).unwrap()
    }

    #[test]
    fn constant_image_gives_constant_signal() {
        let s = SphericalSignal::full_sphere(Image::filled(5, 7, 2, 0.6).unwrap());
        for p in build_icosa_grid(2, 0).unwrap().points() {
            assert!(s.evaluate(*p).iter().all(|&v| (v - 0.6).abs() < 1e-15));
        }
        assert_eq!(s.evaluate(UnitVector3::NORTH), vec![0.6, 0.6]);
    }

    #[test]
    fn near_pole_reads_top_row() {
        let img = Image::new(
            3,
            4,
            1,
            vec![0.9, 0.9, 0.9, 0.9, 0.0, 0.0, 0.0, 0.0, 0.5, 0.5, 0.5, 0.5],
        )
        .unwrap();
        let s = SphericalSignal::full_sphere(img);
        let p = UnitVector3::from_spherical(0.05, 1.0);
        assert!((s.evaluate(p)[0] - 0.9).abs() < 1e-12);
        let south = UnitVector3::from_spherical(PI - 0.05, 4.0);
        assert!((s.evaluate(south)[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn checkerboard_octants_match_quadrants() {
        let img = checkerboard();
        let s = SphericalSignal::full_sphere(img.clone());
        // Octant midpoints sit at the pixel centres of the 2x2 texture.
        for (i, theta) in [PI / 4.0, 3.0 * PI / 4.0].into_iter().enumerate() {
            for (j, phi) in [PI / 2.0, 3.0 * PI / 2.0].into_iter().enumerate() {
                let v = s.evaluate(UnitVector3::from_spherical(theta, phi))[0];
                assert!((v - img.pixel(i, j, 0)).abs() < 1e-12, "{i} {j} {v}");
            }
        }
    }

    #[test]
    fn pixel_centres_reproduce_pixels() {
        let img = Image::new(4, 8, 1, (0..32).map(|i| i as f64 / 31.0).collect()).unwrap();
        let s = SphericalSignal::full_sphere(img.clone());
        for r in 0..4 {
            for c in 0..8 {
                let theta = PI * (r as f64 + 0.5) / 4.0;
                let phi = TAU * (c as f64 + 0.5) / 8.0;
                let v = s.evaluate(UnitVector3::from_spherical(theta, phi))[0];
                assert!((v - img.pixel(r, c, 0)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn longitude_wraps() {
        let img = Image::new(1, 4, 1, vec![0.0, 0.0, 0.0, 1.0]).unwrap();
        let s = SphericalSignal::full_sphere(img);
        // Halfway between the last column centre and the first one.
        let v = s.evaluate(UnitVector3::from_spherical(PI / 2.0, 0.0))[0];
        assert!((v - 0.5).abs() < 1e-12);
    }

    #[test]
    fn fov_centre_background_and_corner() {
        let mut data = vec![0.2; 9];
        data[4] = 0.8;
        let img = Image::new(3, 3, 1, data).unwrap();
        let s = SphericalSignal::tangent_fov(img, 65.5, UnitVector3::NORTH).unwrap();
        assert!((s.evaluate(UnitVector3::NORTH)[0] - 0.8).abs() < 1e-12);
        let side = UnitVector3::from_spherical(PI / 2.0, 0.3);
        assert_eq!(s.evaluate(side)[0], 0.0);

        // The (1, 1) corner ray.
        let t = (65.5f64.to_radians() / 2.0).tan();
        let corner = UnitVector3::normalize(Vec3::new(t, t, 1.0)).unwrap();
        let expected = (2f64.sqrt() * t).atan();
        assert!((corner.angle(UnitVector3::NORTH) - expected).abs() < 1e-12);
        assert!((s.evaluate(corner)[0] - 0.2).abs() < 1e-12);
        let outside = UnitVector3::normalize(Vec3::new(t * 1.01, 0.0, 1.0)).unwrap();
        assert_eq!(s.evaluate(outside)[0], 0.0);
    }

    #[test]
    fn fov_orientation_puts_top_row_towards_positive_y() {
        let img = Image::new(2, 2, 1, vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        let s = SphericalSignal::tangent_fov(img, 60.0, UnitVector3::NORTH).unwrap();
        let up = UnitVector3::from_spherical(0.3, PI / 2.0);
        let down = UnitVector3::from_spherical(0.3, 3.0 * PI / 2.0);
        assert_eq!(s.evaluate(up)[0], 1.0);
        assert_eq!(s.evaluate(down)[0], 0.0);
    }

    #[test]
    fn fov_rejects_bad_angles() {
        for fov in [0.0, -3.0, 180.0, f64::NAN] {
            assert!(SphericalSignal::tangent_fov(checkerboard(), fov, UnitVector3::NORTH).is_err());
        }
        assert!(Image::new(0, 3, 1, vec![]).is_err());
    }

    #[test]
    fn group_rotation_equals_point_permutation() {
        let img = Image::new(
            6,
            12,
            2,
            (0..144).map(|i| ((i * 37) % 101) as f64 / 100.0).collect(),
        )
        .unwrap();
        let s = SphericalSignal::full_sphere(img);
        let grid = build_icosa_grid(2, 1).unwrap();
        let group = enumerate_group(Solid::Icosa).unwrap();
        let perms = group_permutations(&group, &grid).unwrap();
        let base = sample_sequence(&s, &grid, None, 3);
        assert_eq!((base.num_patches, base.patch_size, base.channels), (80, 4, 2));
        for (r, perm) in group.elements().iter().zip(&perms) {
            let rotated = sample_sequence(&s, &grid, Some(r), 3);
            for (m, &to) in perm.point_perm.iter().enumerate() {
                for c in 0..2 {
                    let a = rotated.values[to * 2 + c];
                    let b = base.values[m * 2 + c];
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }
}
