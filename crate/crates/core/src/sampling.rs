//! Sphere sampling grids: equirectangular, cube map and subdivided icosahedron.
//!
//! Every grid is an ordered point list grouped patch-major into `N` patches of
//! `D` slots. The order is fully determined by the parameters, so permutation
//! tables and dataset caches built on a grid are reproducible.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::io::Write;

use crate::error::{Error, Result};
use crate::geometry::{UnitVector3, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SamplingMethod {
    Erp,
    Cube,
    Icosa,
}

impl SamplingMethod {
    pub fn name(self) -> &'static str {
        match self {
            SamplingMethod::Erp => "erp",
            SamplingMethod::Cube => "cube",
            SamplingMethod::Icosa => "icosa",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "erp" => Some(SamplingMethod::Erp),
            "cube" => Some(SamplingMethod::Cube),
            "icosa" | "icosahedron" => Some(SamplingMethod::Icosa),
            _ => None,
        }
    }
}

impl fmt::Display for SamplingMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Construction parameters of a grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GridParams {
    Erp {
        height: usize,
        width: usize,
        patch_h: usize,
        patch_w: usize,
    },
    Cube {
        edge: usize,
    },
    Icosa {
        div: usize,
        patch_scale: usize,
    },
}

impl GridParams {
    pub fn method(&self) -> SamplingMethod {
        match self {
            GridParams::Erp { .. } => SamplingMethod::Erp,
            GridParams::Cube { .. } => SamplingMethod::Cube,
            GridParams::Icosa { .. } => SamplingMethod::Icosa,
        }
    }

    /// Builds the grid these parameters describe.
    pub fn build(&self) -> Result<SamplingGrid> {
        match *self {
            GridParams::Erp {
                height,
                width,
                patch_h,
                patch_w,
            } => build_erp_grid(height, width, patch_h, patch_w),
            GridParams::Cube { edge } => build_cube_grid(edge),
            GridParams::Icosa { div, patch_scale } => build_icosa_grid(div, patch_scale),
        }
    }

    /// Four integers identifying the grid, zero padded (used by binary headers).
    pub fn as_words(&self) -> [u32; 4] {
        match *self {
            GridParams::Erp {
                height,
                width,
                patch_h,
                patch_w,
            } => [height as u32, width as u32, patch_h as u32, patch_w as u32],
            GridParams::Cube { edge } => [edge as u32, 0, 0, 0],
            GridParams::Icosa { div, patch_scale } => [div as u32, patch_scale as u32, 0, 0],
        }
    }

    pub fn from_words(method: SamplingMethod, w: [u32; 4]) -> Self {
        match method {
            SamplingMethod::Erp => GridParams::Erp {
                height: w[0] as usize,
                width: w[1] as usize,
                patch_h: w[2] as usize,
                patch_w: w[3] as usize,
            },
            SamplingMethod::Cube => GridParams::Cube { edge: w[0] as usize },
            SamplingMethod::Icosa => GridParams::Icosa {
                div: w[0] as usize,
                patch_scale: w[1] as usize,
            },
        }
    }
}

impl fmt::Display for GridParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GridParams::Erp {
                height,
                width,
                patch_h,
                patch_w,
            } => write!(f, "erp h={height} w={width} ph={patch_h} pw={patch_w}"),
            GridParams::Cube { edge } => write!(f, "cube e={edge}"),
            GridParams::Icosa { div, patch_scale } => write!(f, "icosa div={div} k={patch_scale}"),
        }
    }
}

/// An ordered set of unit vectors grouped into `num_patches` patches of
/// `patch_size` consecutive points.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingGrid {
    params: GridParams,
    points: Vec<UnitVector3>,
    num_patches: usize,
    patch_size: usize,
}

impl SamplingGrid {
    pub fn params(&self) -> GridParams {
        self.params
    }

    pub fn method(&self) -> SamplingMethod {
        self.params.method()
    }

    pub fn points(&self) -> &[UnitVector3] {
        &self.points
    }

    pub fn num_patches(&self) -> usize {
        self.num_patches
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, patch: usize, slot: usize) -> UnitVector3 {
        self.points[patch * self.patch_size + slot]
    }

    /// Patch-major view: `N` slices of `D` points each.
    pub fn patch_view(&self) -> Vec<&[UnitVector3]> {
        self.points.chunks(self.patch_size).collect()
    }

    /// Same points regrouped with a different icosahedral patch scale.
    pub fn with_patch_scale(&self, k: usize) -> Result<SamplingGrid> {
        match self.params {
            GridParams::Icosa { div, .. } => {
                check_patch_scale(div, k)?;
                Ok(SamplingGrid {
                    params: GridParams::Icosa { div, patch_scale: k },
                    points: self.points.clone(),
                    num_patches: 20 * 4usize.pow(k as u32),
                    patch_size: 4usize.pow((div - k) as u32),
                })
            }
            _ => Err(Error::Unsupported(format!(
                "patch scale applies only to icosahedral grids, got {}",
                self.method()
            ))),
        }
    }

    pub fn csv_header(&self) -> String {
        format!(
            "# sphtr-grid v1 {} n={} d={}",
            self.params, self.num_patches, self.patch_size
        )
    }

    /// Writes `patch_index,slot_index,x,y,z` rows after a versioned header line.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", self.csv_header())?;
        writeln!(w, "patch_index,slot_index,x,y,z")?;
        for (j, patch) in self.patch_view().into_iter().enumerate() {
            for (s, p) in patch.iter().enumerate() {
                writeln!(w, "{j},{s},{},{},{}", p.x(), p.y(), p.z())?;
            }
        }
        Ok(())
    }
}

/// Equirectangular grid of `height x width` pixel centres, cut into
/// `patch_h x patch_w` patches.
///
/// Pixel `(i, j)` sits at colatitude `pi (i + 1/2) / height` and longitude
/// `2 pi (j + 1/2) / width`. Patches are ordered row-major over the patch
/// lattice and slots row-major inside each patch.
pub fn build_erp_grid(height: usize, width: usize, patch_h: usize, patch_w: usize) -> Result<SamplingGrid> {
    if height == 0 || width == 0 || patch_h == 0 || patch_w == 0 {
        return Err(Error::config("erp dimensions must be positive"));
    }
    if width != 2 * height {
        return Err(Error::config(format!(
            "erp grid needs width = 2 * height, got {height}x{width}"
        )));
    }
    if !height.is_multiple_of(patch_h) || !width.is_multiple_of(patch_w) {
        return Err(Error::config(format!(
            "erp patch {patch_h}x{patch_w} does not tile a {height}x{width} grid"
        )));
    }
    let (rows, cols) = (height / patch_h, width / patch_w);
    let mut points = Vec::with_capacity(height * width);
    for pr in 0..rows {
        for pc in 0..cols {
            for si in 0..patch_h {
                for sj in 0..patch_w {
                    let i = pr * patch_h + si;
                    let j = pc * patch_w + sj;
                    let theta = PI * (i as f64 + 0.5) / height as f64;
                    let phi = TAU * (j as f64 + 0.5) / width as f64;
                    points.push(UnitVector3::from_spherical(theta, phi));
                }
            }
        }
    }
    Ok(SamplingGrid {
        params: GridParams::Erp {
            height,
            width,
            patch_h,
            patch_w,
        },
        points,
        num_patches: rows * cols,
        patch_size: patch_h * patch_w,
    })
}

/// Cube faces in canonical order with their in-plane `(u, v)` axes.
pub const CUBE_FACES: [(Vec3, Vec3, Vec3); 6] = [
    (
        Vec3::new(1.0, 0.0, 0.0),
        Vec3::new(0.0, 1.0, 0.0),
        Vec3::new(0.0, 0.0, 1.0),
    ),
    (
        Vec3::new(-1.0, 0.0, 0.0),
        Vec3::new(0.0, -1.0, 0.0),
        Vec3::new(0.0, 0.0, 1.0),
    ),
    (
        Vec3::new(0.0, 1.0, 0.0),
        Vec3::new(-1.0, 0.0, 0.0),
        Vec3::new(0.0, 0.0, 1.0),
    ),
    (
        Vec3::new(0.0, -1.0, 0.0),
        Vec3::new(1.0, 0.0, 0.0),
        Vec3::new(0.0, 0.0, 1.0),
    ),
    (
        Vec3::new(0.0, 0.0, 1.0),
        Vec3::new(1.0, 0.0, 0.0),
        Vec3::new(0.0, 1.0, 0.0),
    ),
    (
        Vec3::new(0.0, 0.0, -1.0),
        Vec3::new(-1.0, 0.0, 0.0),
        Vec3::new(0.0, 1.0, 0.0),
    ),
];

/// Cube-map grid with an `edge x edge` pixel lattice on each face.
///
/// Faces come in the order +X, -X, +Y, -Y, +Z, -Z; each face is one patch and
/// its slots run row-major over `(v, u)` pixel centres.
pub fn build_cube_grid(edge: usize) -> Result<SamplingGrid> {
    if edge == 0 {
        return Err(Error::config("cube edge must be at least 1"));
    }
    let coord = |i: usize| 2.0 * (i as f64 + 0.5) / edge as f64 - 1.0;
    let mut points = Vec::with_capacity(6 * edge * edge);
    for (normal, u_axis, v_axis) in CUBE_FACES {
        for row in 0..edge {
            for col in 0..edge {
                let dir = normal + u_axis.scale(coord(col)) + v_axis.scale(coord(row));
                points.push(UnitVector3::normalize(dir).expect("cube directions are non-zero"));
            }
        }
    }
    Ok(SamplingGrid {
        params: GridParams::Cube { edge },
        points,
        num_patches: 6,
        patch_size: edge * edge,
    })
}

/// The 12 vertices and 20 faces of the canonical icosahedron.
#[derive(Debug, Clone)]
pub struct Icosahedron {
    /// Unit vertices sorted lexicographically by `(z, y, x)`.
    pub vertices: Vec<UnitVector3>,
    /// Vertex index triples with outward (counter-clockwise) winding.
    pub faces: Vec<[usize; 3]>,
}

impl Icosahedron {
    pub fn canonical() -> Self {
        let g = (1.0 + 5f64.sqrt()) / 2.0;
        let mut raw = Vec::with_capacity(12);
        for a in [-1.0, 1.0] {
            for b in [-g, g] {
                raw.push(Vec3::new(0.0, a, b));
                raw.push(Vec3::new(a, b, 0.0));
                raw.push(Vec3::new(b, 0.0, a));
            }
        }
        raw.sort_by(|p, q| {
            (p.z, p.y, p.x)
                .partial_cmp(&(q.z, q.y, q.x))
                .expect("finite coordinates")
        });
        let vertices: Vec<UnitVector3> = raw
            .into_iter()
            .map(|v| UnitVector3::normalize(v).expect("non-zero vertex"))
            .collect();

        // Edge length of the unit icosahedron, 2 / sqrt(1 + g^2).
        let edge = 2.0 / (1.0 + g * g).sqrt();
        let adjacent = |a: usize, b: usize| (vertices[a].chord(vertices[b]) - edge).abs() < 1e-9;
        let mut faces = Vec::with_capacity(20);
        for a in 0..12 {
            for b in a + 1..12 {
                for c in b + 1..12 {
                    if adjacent(a, b) && adjacent(b, c) && adjacent(a, c) {
                        let (pa, pb, pc) = (vertices[a].vec(), vertices[b].vec(), vertices[c].vec());
                        let normal = (pb - pa).cross(pc - pa);
                        if normal.dot(pa + pb + pc) > 0.0 {
                            faces.push([a, b, c]);
                        } else {
                            faces.push([a, c, b]);
                        }
                    }
                }
            }
        }
        debug_assert_eq!(faces.len(), 20);
        Icosahedron { vertices, faces }
    }

    /// Normalized centroid of face `f`.
    pub fn face_center(&self, f: usize) -> UnitVector3 {
        let [a, b, c] = self.faces[f];
        let sum = self.vertices[a].vec() + self.vertices[b].vec() + self.vertices[c].vec();
        UnitVector3::normalize(sum).expect("face centroid is non-zero")
    }
}

fn check_patch_scale(div: usize, k: usize) -> Result<()> {
    if k > div {
        Err(Error::config(format!(
            "patch scale k={k} exceeds division level div={div}"
        )))
    } else {
        Ok(())
    }
}

/// Subdivided icosahedron grid: one sample per sub-triangle, `20 * 4^div`
/// points grouped into `20 * 4^k` patches of `4^(div - k)` slots.
///
/// Each face is split `div` times into four planar sub-triangles; the sample
/// is the planar centroid pushed onto the sphere. Children are enumerated
/// depth-first as corner-0, corner-1, corner-2, centre, so the descendants of
/// every depth-`k` triangle are contiguous and form one patch.
pub fn build_icosa_grid(div: usize, k: usize) -> Result<SamplingGrid> {
    check_patch_scale(div, k)?;
    if div > 10 {
        return Err(Error::config(format!("division level {div} is too large")));
    }
    let ico = Icosahedron::canonical();
    let mut points = Vec::with_capacity(20 * 4usize.pow(div as u32));
    for face in &ico.faces {
        let tri = face.map(|v| ico.vertices[v].vec());
        subdivide(tri, div, &mut points);
    }
    Ok(SamplingGrid {
        params: GridParams::Icosa { div, patch_scale: k },
        points,
        num_patches: 20 * 4usize.pow(k as u32),
        patch_size: 4usize.pow((div - k) as u32),
    })
}

fn subdivide(tri: [Vec3; 3], depth: usize, out: &mut Vec<UnitVector3>) {
    let [a, b, c] = tri;
    if depth == 0 {
        let centroid = (a + b + c).scale(1.0 / 3.0);
        out.push(UnitVector3::normalize(centroid).expect("centroid is non-zero"));
        return;
    }
    let ab = (a + b).scale(0.5);
    let bc = (b + c).scale(0.5);
    let ca = (c + a).scale(0.5);
    subdivide([a, ab, ca], depth - 1, out);
    subdivide([ab, b, bc], depth - 1, out);
    subdivide([ca, bc, c], depth - 1, out);
    subdivide([bc, ca, ab], depth - 1, out);
}
