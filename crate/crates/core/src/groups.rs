//! Proper rotation groups of the cube and icosahedron, and their action on
//! sampling grids as point and patch permutations.

use std::collections::HashMap;
use std::f64::consts::{FRAC_PI_2, TAU};
use std::fmt;
use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{Mat3, UnitVector3, Vec3};
use crate::sampling::{Icosahedron, SamplingGrid, SamplingMethod};

/// Angular tolerance for matching a rotated grid point to an original one.
pub const MATCH_TOLERANCE: f64 = 1e-9;

/// Entry-wise tolerance for identifying two group elements.
pub const ELEMENT_TOLERANCE: f64 = 1e-8;

const MAX_GROUP_ORDER: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Solid {
    Cube,
    Icosa,
}

impl Solid {
    pub fn name(self) -> &'static str {
        match self {
            Solid::Cube => "cube",
            Solid::Icosa => "icosa",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cube" => Some(Solid::Cube),
            "icosa" | "icosahedron" => Some(Solid::Icosa),
            _ => None,
        }
    }

    /// The solid whose symmetry group acts on grids of `method`, if any.
    pub fn for_method(method: SamplingMethod) -> Option<Self> {
        match method {
            SamplingMethod::Cube => Some(Solid::Cube),
            SamplingMethod::Icosa => Some(Solid::Icosa),
            SamplingMethod::Erp => None,
        }
    }

    fn generators(self) -> [Mat3; 2] {
        match self {
            Solid::Icosa => {
                let ico = Icosahedron::canonical();
                [
                    Mat3::rotation(ico.vertices[0], TAU / 5.0),
                    Mat3::rotation(ico.face_center(0), TAU / 3.0),
                ]
            }
            Solid::Cube => {
                let diagonal = UnitVector3::normalize(Vec3::new(1.0, 1.0, 1.0)).unwrap();
                [
                    Mat3::rotation(UnitVector3::NORTH, FRAC_PI_2),
                    Mat3::rotation(diagonal, TAU / 3.0),
                ]
            }
        }
    }
}

impl fmt::Display for Solid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A proper rotation, optionally tagged with its index in a symmetry group.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationElement {
    pub matrix: Mat3,
    pub id: Option<usize>,
    pub solid: Option<Solid>,
}

impl RotationElement {
    pub fn identity() -> Self {
        Self::free(Mat3::IDENTITY)
    }

    /// A rotation not belonging to any enumerated group.
    pub fn free(matrix: Mat3) -> Self {
        RotationElement {
            matrix,
            id: None,
            solid: None,
        }
    }

    pub fn inverse_matrix(&self) -> Mat3 {
        self.matrix.transpose()
    }

    /// Rotation angle in radians, from the trace.
    pub fn angle(&self) -> f64 {
        let m = &self.matrix.0;
        let c = ((m[0][0] + m[1][1] + m[2][2] - 1.0) / 2.0).clamp(-1.0, 1.0);
        c.acos()
    }

    pub fn is_proper_rotation(&self, tol: f64) -> bool {
        self.matrix.orthogonality_error() <= tol && (self.matrix.det() - 1.0).abs() <= tol
    }
}

/// The finite rotation group of a regular solid with stable element ids.
#[derive(Debug, Clone)]
pub struct RotationGroup {
    solid: Solid,
    elements: Vec<RotationElement>,
}

/// Result of checking the group axioms numerically.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxiomReport {
    pub order: usize,
    pub has_identity: bool,
    pub closed: bool,
    pub inverses: bool,
    /// Largest distance from a product to its nearest element.
    pub closure_error: f64,
    pub max_orthogonality_error: f64,
    pub max_det_error: f64,
}

impl AxiomReport {
    pub fn holds(&self) -> bool {
        self.has_identity && self.closed && self.inverses
    }
}

/// Enumerates the proper rotation group of `solid` by closing two generators.
///
/// Icosahedron: order-5 turn about a vertex axis and order-3 turn about a face
/// axis (60 elements). Cube: quarter turn about a face axis and order-3 turn
/// about a body diagonal (24 elements). Ids follow the lexicographic order of
/// the flattened matrices.
pub fn enumerate_group(solid: Solid) -> Result<RotationGroup> {
    let generators = solid.generators();
    let mut found: Vec<Mat3> = vec![Mat3::IDENTITY];
    let mut frontier = 0;
    while frontier < found.len() {
        let current = found[frontier];
        frontier += 1;
        for g in &generators {
            let product = *g * current;
            if !found.iter().any(|m| m.max_abs_diff(&product) < ELEMENT_TOLERANCE) {
                found.push(product);
                if found.len() > MAX_GROUP_ORDER {
                    return Err(Error::Internal(format!(
                        "{solid} generators did not close within {MAX_GROUP_ORDER} elements"
                    )));
                }
            }
        }
    }
    found.sort_by(cmp_flat);
    let elements = found
        .into_iter()
        .enumerate()
        .map(|(id, matrix)| RotationElement {
            matrix,
            id: Some(id),
            solid: Some(solid),
        })
        .collect();
    Ok(RotationGroup { solid, elements })
}

fn cmp_flat(a: &Mat3, b: &Mat3) -> std::cmp::Ordering {
    for (x, y) in a.flat().iter().zip(b.flat().iter()) {
        if (x - y).abs() >= ELEMENT_TOLERANCE {
            return x.partial_cmp(y).expect("finite matrix entries");
        }
    }
    std::cmp::Ordering::Equal
}

impl RotationGroup {
    pub fn solid(&self) -> Solid {
        self.solid
    }

    pub fn elements(&self) -> &[RotationElement] {
        &self.elements
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn get(&self, id: usize) -> &RotationElement {
        &self.elements[id]
    }

    /// Id of the element equal to `m` within [`ELEMENT_TOLERANCE`].
    pub fn find(&self, m: &Mat3) -> Option<usize> {
        self.elements
            .iter()
            .position(|e| e.matrix.max_abs_diff(m) < ELEMENT_TOLERANCE)
    }

    pub fn identity_id(&self) -> usize {
        self.find(&Mat3::IDENTITY)
            .expect("enumerated groups contain the identity")
    }

    pub fn check_axioms(&self) -> AxiomReport {
        let mut closure_error: f64 = 0.0;
        let mut closed = true;
        let mut inverses = true;
        let mut max_orthogonality_error: f64 = 0.0;
        let mut max_det_error: f64 = 0.0;
        for a in &self.elements {
            max_orthogonality_error = max_orthogonality_error.max(a.matrix.orthogonality_error());
            max_det_error = max_det_error.max((a.matrix.det() - 1.0).abs());
            if self.find(&a.inverse_matrix()).is_none() {
                inverses = false;
            }
            for b in &self.elements {
                let p = a.matrix * b.matrix;
                let nearest = self
                    .elements
                    .iter()
                    .map(|e| e.matrix.max_abs_diff(&p))
                    .fold(f64::INFINITY, f64::min);
                closure_error = closure_error.max(nearest);
                if nearest >= ELEMENT_TOLERANCE {
                    closed = false;
                }
            }
        }
        AxiomReport {
            order: self.len(),
            has_identity: self.find(&Mat3::IDENTITY).is_some(),
            closed,
            inverses,
            closure_error,
            max_orthogonality_error,
            max_det_error,
        }
    }

    /// Writes `id,m00,...,m22,angle_deg`, one row per element.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# sphtr-group v1 solid={} order={}", self.solid, self.len())?;
        writeln!(w, "id,m00,m01,m02,m10,m11,m12,m20,m21,m22,angle_deg")?;
        for e in &self.elements {
            let f = e.matrix.flat();
            let cells: Vec<String> = f.iter().map(|v| format!("{v}")).collect();
            writeln!(
                w,
                "{},{},{}",
                e.id.unwrap_or(0),
                cells.join(","),
                e.angle().to_degrees()
            )?;
        }
        Ok(())
    }
}

/// The permutations a rotation induces on a symmetric grid.
///
/// `point_perm[m]` is the index of the grid point that `R * p_m` lands on, so
/// rotating a sampled signal moves the value at slot `m` to slot
/// `point_perm[m]`. `patch_perm` is the same map on whole patches.
#[derive(Debug, Clone, PartialEq)]
pub struct PermutationPair {
    pub patch_perm: Vec<usize>,
    pub point_perm: Vec<usize>,
    pub within_patch_aligned: bool,
    /// Largest angle between a rotated point and its match, in radians.
    pub max_match_error: f64,
}

impl PermutationPair {
    pub fn identity(num_patches: usize, patch_size: usize) -> Self {
        PermutationPair {
            patch_perm: (0..num_patches).collect(),
            point_perm: (0..num_patches * patch_size).collect(),
            within_patch_aligned: true,
            max_match_error: 0.0,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.point_perm.iter().enumerate().all(|(i, &j)| i == j)
    }
}

/// Spatial hash over grid points for nearest-point queries at tiny radii.
#[derive(Debug, Clone)]
pub struct PointMatcher {
    points: Vec<UnitVector3>,
    cells: HashMap<(i64, i64, i64), Vec<u32>>,
}

const CELL: f64 = 1e-6;

fn cell_of(v: Vec3) -> (i64, i64, i64) {
    (
        (v.x / CELL).floor() as i64,
        (v.y / CELL).floor() as i64,
        (v.z / CELL).floor() as i64,
    )
}

impl PointMatcher {
    pub fn new(points: &[UnitVector3]) -> Self {
        let mut cells: HashMap<(i64, i64, i64), Vec<u32>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(cell_of(p.vec())).or_default().push(i as u32);
        }
        PointMatcher {
            points: points.to_vec(),
            cells,
        }
    }

    /// Nearest point within about one cell of `q`, with its angular distance.
    pub fn nearest(&self, q: UnitVector3) -> Option<(usize, f64)> {
        let (cx, cy, cz) = cell_of(q.vec());
        let mut best: Option<(usize, f64)> = None;
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(ids) = self.cells.get(&(cx + dx, cy + dy, cz + dz)) {
                        for &i in ids {
                            let d = self.points[i as usize].angle(q);
                            if best.is_none_or(|(_, bd)| d < bd) {
                                best = Some((i as usize, d));
                            }
                        }
                    }
                }
            }
        }
        best
    }

    fn brute_force_nearest(&self, q: UnitVector3) -> f64 {
        self.points
            .iter()
            .map(|p| p.angle(q))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Reduces a rotation to its point and patch permutations on `grid`.
pub fn rotation_to_permutation(rotation: &RotationElement, grid: &SamplingGrid) -> Result<PermutationPair> {
    check_grid_matches(rotation.solid, grid)?;
    let matcher = PointMatcher::new(grid.points());
    permutation_with(&matcher, rotation, grid)
}

/// Permutations for every element of `group`, in element order.
pub fn group_permutations(group: &RotationGroup, grid: &SamplingGrid) -> Result<Vec<PermutationPair>> {
    check_grid_matches(Some(group.solid()), grid)?;
    let matcher = PointMatcher::new(grid.points());
    group
        .elements()
        .par_iter()
        .map(|r| permutation_with(&matcher, r, grid))
        .collect()
}

fn check_grid_matches(solid: Option<Solid>, grid: &SamplingGrid) -> Result<()> {
    let grid_solid = Solid::for_method(grid.method());
    match (solid, grid_solid) {
        (_, None) => Err(Error::Unsupported(format!(
            "{} grids have no polyhedral symmetry group",
            grid.method()
        ))),
        (Some(s), Some(g)) if s != g => Err(Error::Unsupported(format!(
            "{s} rotation applied to a {} grid",
            grid.method()
        ))),
        _ => Ok(()),
    }
}

fn permutation_with(
    matcher: &PointMatcher,
    rotation: &RotationElement,
    grid: &SamplingGrid,
) -> Result<PermutationPair> {
    let n = grid.len();
    let mut point_perm = Vec::with_capacity(n);
    let mut hit = vec![false; n];
    let mut max_match_error: f64 = 0.0;
    for (m, p) in grid.points().iter().enumerate() {
        let q = rotation.matrix.rotate(*p);
        let (idx, err) = match matcher.nearest(q) {
            Some(found) if found.1 <= MATCH_TOLERANCE => found,
            _ => {
                return Err(Error::geometry(format!(
                    "rotated point {m} is {:.3e} rad from the nearest grid point",
                    matcher.brute_force_nearest(q)
                )))
            }
        };
        if hit[idx] {
            return Err(Error::geometry(format!(
                "point permutation is not bijective: two points map to {idx}"
            )));
        }
        hit[idx] = true;
        max_match_error = max_match_error.max(err);
        point_perm.push(idx);
    }

    let d = grid.patch_size();
    let mut patch_perm = Vec::with_capacity(grid.num_patches());
    let mut within_patch_aligned = true;
    for j in 0..grid.num_patches() {
        let target = point_perm[j * d] / d;
        for s in 0..d {
            let image = point_perm[j * d + s];
            if image / d != target {
                return Err(Error::geometry(format!(
                    "rotation splits patch {j} across several patches"
                )));
            }
            if image != target * d + s {
                within_patch_aligned = false;
            }
        }
        patch_perm.push(target);
    }
    Ok(PermutationPair {
        patch_perm,
        point_perm,
        within_patch_aligned,
        max_match_error,
    })
}

/// Writes `rotation_id,patch_index,image_patch_index` rows for every element.
pub fn write_permutation_csv<W: Write>(
    mut w: W,
    group: &RotationGroup,
    grid: &SamplingGrid,
    perms: &[PermutationPair],
) -> Result<()> {
    writeln!(
        w,
        "# sphtr-perm v1 solid={} {} n={} d={}",
        group.solid(),
        grid.params(),
        grid.num_patches(),
        grid.patch_size()
    )?;
    writeln!(w, "rotation_id,patch_index,image_patch_index")?;
    for (e, p) in group.elements().iter().zip(perms) {
        for (j, &t) in p.patch_perm.iter().enumerate() {
            writeln!(w, "{},{j},{t}", e.id.unwrap_or(0))?;
        }
    }
    Ok(())
}

/// Haar-uniform random rotation from a normalized Gaussian quaternion.
pub fn random_so3<R: Rng + ?Sized>(rng: &mut R) -> RotationElement {
    let (w, x, y, z) = loop {
        let q: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 1e-12 {
            break (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
        }
    };
    RotationElement::free(Mat3([
        [
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
        ],
        [
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
        ],
        [
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ],
    ]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use crate::sampling::{build_cube_grid, build_erp_grid, build_icosa_grid};

    /// Independent closure: multiply every pair until nothing new appears.
    fn brute_force_closure(gens: &[Mat3]) -> Vec<Mat3> {
        let mut set: Vec<Mat3> = gens.to_vec();
        loop {
            let mut added = false;
            let snapshot = set.clone();
            for a in &snapshot {
                for b in &snapshot {
                    let p = *a * *b;
                    if !set.iter().any(|m| m.max_abs_diff(&p) < 1e-8) {
                        set.push(p);
                        added = true;
                    }
                }
            }
            if !added {
                return set;
            }
        }
    }

    #[test]
    fn group_orders() {
        let ico = enumerate_group(Solid::Icosa).unwrap();
        assert_eq!(ico.len(), 60);
        let cube = enumerate_group(Solid::Cube).unwrap();
        assert_eq!(cube.len(), 24);
        assert_eq!(brute_force_closure(&Solid::Cube.generators()).len(), 24);
        assert_eq!(brute_force_closure(&Solid::Icosa.generators()).len(), 60);
        for g in [&ico, &cube] {
            let report = g.check_axioms();
            assert!(report.holds(), "{report:?}");
            assert!(report.closure_error < 1e-8);
            assert!(report.max_orthogonality_error < 1e-10);
            assert!(report.max_det_error < 1e-10);
        }
    }

    #[test]
    fn ids_are_stable() {
        let a = enumerate_group(Solid::Icosa).unwrap();
        let b = enumerate_group(Solid::Icosa).unwrap();
        for (x, y) in a.elements().iter().zip(b.elements()) {
            assert_eq!(x, y);
        }
    }

    #[test]
    fn identity_gives_identity_permutation() {
        let grid = build_icosa_grid(2, 0).unwrap();
        let p = rotation_to_permutation(&RotationElement::identity(), &grid).unwrap();
        assert!(p.is_identity());
        assert!(p.within_patch_aligned);
        assert_eq!(p.patch_perm, (0..20).collect::<Vec<_>>());
    }

    #[test]
    fn cube_quarter_turn_cycles_side_faces() {
        let grid = build_cube_grid(1).unwrap();
        let r = RotationElement::free(Mat3::rotation(UnitVector3::NORTH, FRAC_PI_2));
        let p = rotation_to_permutation(&r, &grid).unwrap();
        // Faces: 0 +X, 1 -X, 2 +Y, 3 -Y, 4 +Z, 5 -Z.
        assert_eq!(p.patch_perm, vec![2, 3, 1, 0, 4, 5]);
    }

    #[test]
    fn icosa_face_permutation_matches_direct_centroids() {
        let ico = Icosahedron::canonical();
        let group = enumerate_group(Solid::Icosa).unwrap();
        let grid = build_icosa_grid(0, 0).unwrap();
        for r in group.elements() {
            let p = rotation_to_permutation(r, &grid).unwrap();
            for f in 0..20 {
                let moved = r.matrix.rotate(ico.face_center(f));
                let target = (0..20)
                    .min_by(|&a, &b| {
                        moved
                            .angle(ico.face_center(a))
                            .partial_cmp(&moved.angle(ico.face_center(b)))
                            .unwrap()
                    })
                    .unwrap();
                assert_eq!(p.patch_perm[f], target);
            }
            let fixed = p.patch_perm.iter().enumerate().filter(|(i, &j)| *i == j).count();
            let angle = r.angle();
            // Only the identity and the face-axis thirds fix faces.
            let third = (angle - TAU / 3.0).abs() < 1e-9;
            if angle < 1e-9 {
                assert_eq!(fixed, 20);
            } else if third {
                assert_eq!(fixed, 2);
            } else {
                assert_eq!(fixed, 0);
            }
        }
    }

    #[test]
    fn alignment_only_for_identity_on_k0() {
        let group = enumerate_group(Solid::Icosa).unwrap();
        let grid = build_icosa_grid(1, 0).unwrap();
        let perms = group_permutations(&group, &grid).unwrap();
        let id = group.identity_id();
        for (i, p) in perms.iter().enumerate() {
            assert_eq!(p.within_patch_aligned, i == id, "element {i}");
        }
    }

    #[test]
    fn erp_and_mismatched_grids_are_rejected() {
        let erp = build_erp_grid(4, 8, 2, 2).unwrap();
        let group = enumerate_group(Solid::Icosa).unwrap();
        assert!(matches!(
            rotation_to_permutation(group.get(0), &erp),
            Err(Error::Unsupported(_))
        ));
        let cube = build_cube_grid(2).unwrap();
        assert!(matches!(
            rotation_to_permutation(group.get(0), &cube),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn non_symmetry_is_a_geometry_error() {
        let grid = build_icosa_grid(1, 0).unwrap();
        let r = RotationElement::free(Mat3::rotation(UnitVector3::NORTH, 0.1));
        assert!(matches!(
            rotation_to_permutation(&r, &grid),
            Err(Error::Geometry(_))
        ));
    }

    #[test]
    fn random_rotations_are_proper_and_seeded() {
        let mut rng = stream_rng(7, 0);
        let a = random_so3(&mut rng);
        let b = random_so3(&mut stream_rng(7, 0));
        assert_eq!(a, b);
        let mut mean = [0.0; 9];
        let n = 10_000;
        for _ in 0..n {
            let r = random_so3(&mut rng);
            assert!(r.is_proper_rotation(1e-10));
            for (m, v) in mean.iter_mut().zip(r.matrix.flat()) {
                *m += v / n as f64;
            }
        }
        assert!(mean.iter().all(|m| m.abs() < 0.02), "{mean:?}");
    }
}
