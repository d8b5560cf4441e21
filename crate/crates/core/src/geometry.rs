//! Small fixed-size vector and matrix types for sphere geometry.
//!
//! Geometry is always evaluated in `f64`: grid symmetry is verified at 1e-9
//! rad and point norms at 1e-12, which `f32` cannot represent.

use std::ops::{Add, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn scale(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// A point on the unit sphere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitVector3(Vec3);

impl UnitVector3 {
    pub const NORTH: UnitVector3 = UnitVector3(Vec3::new(0.0, 0.0, 1.0));

    /// Normalizes `v`; `None` for a zero or non-finite vector.
    pub fn normalize(v: Vec3) -> Option<Self> {
        let n = v.norm();
        if n > 0.0 && n.is_finite() {
            Some(UnitVector3(v.scale(1.0 / n)))
        } else {
            None
        }
    }

    /// From colatitude `theta` in `[0, pi]` and longitude `phi`.
    pub fn from_spherical(theta: f64, phi: f64) -> Self {
        let (st, ct) = theta.sin_cos();
        let (sp, cp) = phi.sin_cos();
        UnitVector3(Vec3::new(st * cp, st * sp, ct))
    }

    pub fn vec(self) -> Vec3 {
        self.0
    }

    pub fn x(self) -> f64 {
        self.0.x
    }

    pub fn y(self) -> f64 {
        self.0.y
    }

    pub fn z(self) -> f64 {
        self.0.z
    }

    /// Colatitude in `[0, pi]`, accurate near the poles.
    pub fn colatitude(self) -> f64 {
        let r = (self.0.x * self.0.x + self.0.y * self.0.y).sqrt();
        r.atan2(self.0.z)
    }

    /// Longitude in `[0, 2 pi)`.
    pub fn longitude(self) -> f64 {
        let phi = self.0.y.atan2(self.0.x);
        if phi < 0.0 {
            phi + std::f64::consts::TAU
        } else {
            phi
        }
    }

    /// Euclidean (chordal) distance.
    pub fn chord(self, o: UnitVector3) -> f64 {
        (self.0 - o.0).norm()
    }

    /// Great-circle angle, stable for nearly coincident points.
    pub fn angle(self, o: UnitVector3) -> f64 {
        let c = self.chord(o);
        2.0 * (0.5 * c).min(1.0).asin()
    }
}

/// Row-major 3x3 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat3(pub [[f64; 3]; 3]);

impl Mat3 {
    pub const IDENTITY: Mat3 = Mat3([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);

    /// Right-handed rotation by `angle` about the unit `axis` (Rodrigues).
    pub fn rotation(axis: UnitVector3, angle: f64) -> Mat3 {
        let Vec3 { x, y, z } = axis.vec();
        let (s, c) = angle.sin_cos();
        let t = 1.0 - c;
        Mat3([
            [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
            [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
            [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
        ])
    }

    pub fn transpose(&self) -> Mat3 {
        let m = &self.0;
        let mut out = [[0.0; 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = m[j][i];
            }
        }
        Mat3(out)
    }

    pub fn det(&self) -> f64 {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn apply(&self, v: Vec3) -> Vec3 {
        let m = &self.0;
        Vec3::new(
            m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
            m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
            m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z,
        )
    }

    /// Rotating a unit vector; the result is renormalized only implicitly by
    /// orthogonality of `self`.
    pub fn rotate(&self, p: UnitVector3) -> UnitVector3 {
        UnitVector3(self.apply(p.vec()))
    }

    pub fn max_abs_diff(&self, o: &Mat3) -> f64 {
        let mut d: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                d = d.max((self.0[i][j] - o.0[i][j]).abs());
            }
        }
        d
    }

    /// Largest deviation of `self^T self` from the identity.
    pub fn orthogonality_error(&self) -> f64 {
        (self.transpose() * *self).max_abs_diff(&Mat3::IDENTITY)
    }

    pub fn flat(&self) -> [f64; 9] {
        let m = &self.0;
        [
            m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
        ]
    }
}

impl Mul for Mat3 {
    type Output = Mat3;
    fn mul(self, o: Mat3) -> Mat3 {
        let mut out = [[0.0; 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| self.0[i][k] * o.0[k][j]).sum();
            }
        }
        Mat3(out)
    }
}
