//! Point, mesh and plane geometry shared by every other module.
//!
//! Distances are in meters. Nearest-neighbour queries go through a k-d tree
//! that returns exactly what a brute-force scan returns, including the
//! lowest-index tie break.

mod hull;
mod kdtree;
mod mesh;
pub mod rotation;
pub mod shapes;

pub use hull::convex_hull;
pub use kdtree::KdTree;
pub use mesh::{closest_point_on_triangle, TriMesh};

use nalgebra::{Matrix3, Matrix4, SymmetricEigen, Vector3};

use crate::{Error, Result};

pub type Point3 = Vector3<f64>;

/// Ordered points with optional per-point integer labels.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointSet {
    points: Vec<Point3>,
    labels: Option<Vec<u8>>,
}

impl PointSet {
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        if points.iter().any(|p| !is_finite(p)) {
            return Err(Error::NonFinite("point set"));
        }
        Ok(Self { points, labels: None })
    }

    pub fn with_labels(points: Vec<Point3>, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != points.len() {
            return Err(Error::LengthMismatch {
                expected: points.len(),
                got: labels.len(),
            });
        }
        let mut set = Self::new(points)?;
        set.labels = Some(labels);
        Ok(set)
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn into_points(self) -> Vec<Point3> {
        self.points
    }

    /// Points carrying `label`, in original order.
    pub fn select_label(&self, label: u8) -> PointSet {
        let points = match &self.labels {
            Some(labels) => self
                .points
                .iter()
                .zip(labels)
                .filter(|(_, &l)| l == label)
                .map(|(p, _)| *p)
                .collect(),
            None => Vec::new(),
        };
        PointSet {
            labels: Some(vec![label; points.len()]),
            points,
        }
    }

    pub fn count_label(&self, label: u8) -> usize {
        self.labels.as_ref().map_or(0, |l| l.iter().filter(|&&x| x == label).count())
    }

    pub fn transformed(&self, tf: &RigidTransform) -> PointSet {
        PointSet {
            points: self.points.iter().map(|p| tf.apply(p)).collect(),
            labels: self.labels.clone(),
        }
    }
}

impl From<Vec<Point3>> for PointSet {
    fn from(points: Vec<Point3>) -> Self {
        PointSet { points, labels: None }
    }
}

pub(crate) fn is_finite(p: &Point3) -> bool {
    p.iter().all(|c| c.is_finite())
}

#[inline]
pub fn dist_sq(a: &Point3, b: &Point3) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let dz = a.z - b.z;
    dx * dx + dy * dy + dz * dz
}

/// Index and squared distance of the nearest target for every query.
pub fn nearest_neighbors(queries: &[Point3], targets: &[Point3]) -> Result<Vec<(usize, f64)>> {
    if targets.is_empty() {
        return Err(Error::EmptyTargets);
    }
    let tree = KdTree::build(targets);
    Ok(queries.iter().map(|q| tree.nearest(q)).collect())
}

/// Squared distance from every query to its nearest target.
pub fn nearest_dist_sq(queries: &[Point3], targets: &[Point3]) -> Result<Vec<f64>> {
    Ok(nearest_neighbors(queries, targets)?.into_iter().map(|(_, d)| d).collect())
}

/// Sum of the two directed mean squared nearest-neighbour distances.
pub fn chamfer_distance(a: &[Point3], b: &[Point3]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("chamfer operand"));
    }
    let ab: f64 = nearest_dist_sq(a, b)?.iter().sum::<f64>() / a.len() as f64;
    let ba: f64 = nearest_dist_sq(b, a)?.iter().sum::<f64>() / b.len() as f64;
    Ok(ab + ba)
}

/// Plane `{x : normal . x + offset = 0}` with a unit normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    normal: Point3,
    offset: f64,
}

impl Plane {
    pub fn new(normal: Point3, offset: f64) -> Result<Self> {
        let n = normal.norm();
        if !n.is_finite() || n < 1e-12 || !offset.is_finite() {
            return Err(Error::Config("plane normal must be finite and non-zero".into()));
        }
        Ok(Self {
            normal: normal / n,
            offset: offset / n,
        })
    }

    /// The horizontal plane `z = height`, front side up.
    pub fn horizontal(height: f64) -> Self {
        Self {
            normal: Point3::z(),
            offset: -height,
        }
    }

    pub fn normal(&self) -> Point3 {
        self.normal
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn signed_distance(&self, p: &Point3) -> f64 {
        signed_plane_distance(p, self)
    }
}

pub fn signed_plane_distance(p: &Point3, plane: &Plane) -> f64 {
    plane.normal.dot(p) + plane.offset
}

/// Least-squares plane through `points`, normal pointing into +z.
pub fn fit_plane(points: &[Point3]) -> Result<Plane> {
    if points.len() < 3 {
        return Err(Error::DegeneratePoints);
    }
    let n = points.len() as f64;
    let centroid = points.iter().sum::<Point3>() / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - centroid;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let (lo, mid, hi) = (eig.eigenvalues[order[0]], eig.eigenvalues[order[1]], eig.eigenvalues[order[2]]);
    // Collinear or coincident input leaves only one spread direction.
    if hi <= 0.0 || mid <= 1e-12 * hi || !lo.is_finite() {
        return Err(Error::DegeneratePoints);
    }
    let mut normal: Point3 = eig.eigenvectors.column(order[0]).into_owned().normalize();
    if front_flip(&normal) {
        normal = -normal;
    }
    Ok(Plane {
        normal,
        offset: -normal.dot(&centroid),
    })
}

fn front_flip(n: &Point3) -> bool {
    for c in [n.z, n.y, n.x] {
        if c != 0.0 {
            return c < 0.0;
        }
    }
    false
}

/// Rotation followed by translation: `x -> R x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Point3,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Point3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Point3) -> Result<Self> {
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        let det = rotation.determinant();
        if !(ortho <= 1e-9 && (det - 1.0).abs() <= 1e-9) || !is_finite(&translation) {
            return Err(Error::Config("rotation must be orthonormal with det 1".into()));
        }
        Ok(Self { rotation, translation })
    }

    pub fn from_axis_angle(axis_angle: &Point3, translation: Point3) -> Self {
        Self {
            rotation: rotation::exp_so3(axis_angle),
            translation,
        }
    }

    pub fn apply(&self, p: &Point3) -> Point3 {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Row-major 4x4 rows, as stored in scene manifests.
    pub fn to_rows(&self) -> [[f64; 4]; 4] {
        let m = self.to_matrix();
        let mut rows = [[0.0; 4]; 4];
        for (r, row) in rows.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = m[(r, c)];
            }
        }
        rows
    }

    pub fn from_rows(rows: &[[f64; 4]; 4]) -> Result<Self> {
        let rotation = Matrix3::from_fn(|r, c| rows[r][c]);
        let translation = Point3::new(rows[0][3], rows[1][3], rows[2][3]);
        Self::new(rotation, translation)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Point3,
    pub max: Point3,
}

impl Aabb {
    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Point3>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = *it.next()?;
        let mut b = Aabb { min: first, max: first };
        for p in it {
            b.min = b.min.inf(p);
            b.max = b.max.sup(p);
        }
        Some(b)
    }

    pub fn contains(&self, p: &Point3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn intersection(&self, other: &Aabb) -> Option<Aabb> {
        let min = self.min.sup(&other.min);
        let max = self.max.inf(&other.max);
        (0..3).all(|i| min[i] <= max[i]).then_some(Aabb { min, max })
    }

    pub fn expanded(&self, margin: f64) -> Aabb {
        let m = Point3::repeat(margin);
        Aabb {
            min: self.min - m,
            max: self.max + m,
        }
    }
}
