use std::collections::HashMap;

use rand::Rng;

use super::{is_finite, Aabb, Point3, RigidTransform};
use crate::{Error, Result};

/// Primary ray direction for parity tests; slightly off-axis so that rays
/// from grid-aligned points avoid edges and vertices of axis-aligned meshes.
const RAY_DIR: [f64; 3] = [1.0, 1e-4, 2e-4];
const RAY_DIR_JITTER: [f64; 3] = [1.0, -3.1e-4, 1.7e-4];
const HIT_EPS: f64 = 1e-10;

/// Indexed triangle mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    vertices: Vec<Point3>,
    faces: Vec<[usize; 3]>,
}

impl TriMesh {
    pub fn new(vertices: Vec<Point3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        if let Some(p) = vertices.iter().find(|p| !is_finite(p)) {
            return Err(Error::InvalidMesh(format!("non-finite vertex {p:?}")));
        }
        for f in &faces {
            if f.iter().any(|&i| i >= vertices.len()) {
                return Err(Error::InvalidMesh(format!("face {f:?} out of range")));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::InvalidMesh(format!("degenerate face {f:?}")));
            }
        }
        Ok(Self { vertices, faces })
    }

    /// Builds without validation; callers guarantee the invariants.
    pub(crate) fn from_parts_unchecked(vertices: Vec<Point3>, faces: Vec<[usize; 3]>) -> Self {
        Self { vertices, faces }
    }

    pub fn vertices(&self) -> &[Point3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn triangle(&self, f: usize) -> [Point3; 3] {
        let [a, b, c] = self.faces[f];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn aabb(&self) -> Option<Aabb> {
        Aabb::from_points(&self.vertices)
    }

    pub fn transformed(&self, tf: &RigidTransform) -> TriMesh {
        TriMesh {
            vertices: self.vertices.iter().map(|p| tf.apply(p)).collect(),
            faces: self.faces.clone(),
        }
    }

    pub fn with_vertices(&self, vertices: Vec<Point3>) -> Result<TriMesh> {
        if vertices.len() != self.vertices.len() {
            return Err(Error::LengthMismatch {
                expected: self.vertices.len(),
                got: vertices.len(),
            });
        }
        TriMesh::new(vertices, self.faces.clone())
    }

    /// Closed and consistently oriented: every directed edge appears exactly
    /// once and its reverse exactly once.
    pub fn is_watertight(&self) -> bool {
        if self.faces.is_empty() {
            return false;
        }
        let mut directed: HashMap<(usize, usize), u32> = HashMap::with_capacity(self.faces.len() * 3);
        for f in &self.faces {
            for k in 0..3 {
                *directed.entry((f[k], f[(k + 1) % 3])).or_default() += 1;
            }
        }
        directed.iter().all(|(&(a, b), &n)| n == 1 && directed.get(&(b, a)) == Some(&1))
    }

    pub fn ensure_watertight(&self) -> Result<()> {
        if self.is_watertight() {
            Ok(())
        } else {
            Err(Error::OpenMesh)
        }
    }

    /// Enclosed volume by the divergence theorem (positive for outward faces).
    pub fn volume(&self) -> f64 {
        self.faces
            .iter()
            .map(|&[a, b, c]| self.vertices[a].dot(&self.vertices[b].cross(&self.vertices[c])) / 6.0)
            .sum()
    }

    /// Centroid of the enclosed solid; falls back to the vertex mean for
    /// meshes with vanishing volume.
    pub fn solid_centroid(&self) -> Point3 {
        let mut vol = 0.0;
        let mut acc = Point3::zeros();
        for &[a, b, c] in &self.faces {
            let (p, q, r) = (self.vertices[a], self.vertices[b], self.vertices[c]);
            let v = p.dot(&q.cross(&r)) / 6.0;
            vol += v;
            acc += (p + q + r) * (v / 4.0);
        }
        if vol.abs() > 1e-15 {
            acc / vol
        } else {
            self.vertices.iter().sum::<Point3>() / self.vertices.len().max(1) as f64
        }
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.faces.len())
            .map(|f| {
                let [a, b, c] = self.triangle(f);
                (b - a).cross(&(c - a)).norm() / 2.0
            })
            .sum()
    }

    /// Area-weighted uniform samples on the surface.
    pub fn sample_surface<R: Rng>(&self, n: usize, rng: &mut R) -> Vec<Point3> {
        let mut cumulative = Vec::with_capacity(self.faces.len());
        let mut total = 0.0;
        for f in 0..self.faces.len() {
            let [a, b, c] = self.triangle(f);
            total += (b - a).cross(&(c - a)).norm() / 2.0;
            cumulative.push(total);
        }
        (0..n)
            .map(|_| {
                let x = rng.random::<f64>() * total;
                let f = cumulative.partition_point(|&c| c < x).min(self.faces.len() - 1);
                let [a, b, c] = self.triangle(f);
                let (mut u, mut v): (f64, f64) = (rng.random(), rng.random());
                if u + v > 1.0 {
                    u = 1.0 - u;
                    v = 1.0 - v;
                }
                a + (b - a) * u + (c - a) * v
            })
            .collect()
    }

    /// Euclidean distance from `p` to the nearest surface point.
    pub fn distance_to_surface(&self, p: &Point3) -> f64 {
        self.distance_sq_to_surface(p).sqrt()
    }

    pub fn distance_sq_to_surface(&self, p: &Point3) -> f64 {
        let mut best = f64::INFINITY;
        for f in 0..self.faces.len() {
            let [a, b, c] = self.triangle(f);
            let q = closest_point_on_triangle(p, &a, &b, &c);
            best = best.min((q - p).norm_squared());
        }
        best
    }

    /// Strict interior test for each point via ray-crossing parity.
    pub fn contains_points(&self, points: &[Point3]) -> Result<Vec<bool>> {
        self.ensure_watertight()?;
        let Some(bounds) = self.aabb() else {
            return Ok(vec![false; points.len()]);
        };
        let tris = self.prepared_triangles();
        Ok(points.iter().map(|p| bounds.contains(p) && parity_inside(p, &tris)).collect())
    }

    fn prepared_triangles(&self) -> Vec<PreparedTri> {
        (0..self.faces.len())
            .map(|f| {
                let [a, b, c] = self.triangle(f);
                PreparedTri {
                    a,
                    e1: b - a,
                    e2: c - a,
                    min: a.inf(&b).inf(&c),
                    max: a.sup(&b).sup(&c),
                }
            })
            .collect()
    }
}

struct PreparedTri {
    a: Point3,
    e1: Point3,
    e2: Point3,
    min: Point3,
    max: Point3,
}

enum Crossing {
    Count(u32),
    Ambiguous,
}

fn count_crossings(p: &Point3, dir: &Point3, tris: &[PreparedTri]) -> Crossing {
    let mut count = 0;
    for t in tris {
        // The ray travels towards +x with tiny y/z drift; skip triangles that
        // are entirely behind it or far off its y/z band.
        if t.max.x < p.x {
            continue;
        }
        let reach = (t.max.x - p.x).max(0.0);
        let dy = dir.y.abs() * reach + 1e-12;
        let dz = dir.z.abs() * reach + 1e-12;
        if t.min.y > p.y + dy || t.max.y < p.y - dy || t.min.z > p.z + dz || t.max.z < p.z - dz {
            continue;
        }
        // Möller–Trumbore.
        let pvec = dir.cross(&t.e2);
        let det = t.e1.dot(&pvec);
        let scale = t.e1.norm() * t.e2.norm() * dir.norm();
        if det.abs() <= HIT_EPS * scale {
            continue;
        }
        let inv = 1.0 / det;
        let tvec = p - t.a;
        let u = tvec.dot(&pvec) * inv;
        if !(-HIT_EPS..=1.0 + HIT_EPS).contains(&u) {
            continue;
        }
        let qvec = tvec.cross(&t.e1);
        let v = dir.dot(&qvec) * inv;
        if v < -HIT_EPS || u + v > 1.0 + HIT_EPS {
            continue;
        }
        let dist = t.e2.dot(&qvec) * inv;
        if dist < -HIT_EPS {
            continue;
        }
        if u.abs() <= HIT_EPS || v.abs() <= HIT_EPS || (1.0 - u - v).abs() <= HIT_EPS || dist <= HIT_EPS {
            return Crossing::Ambiguous;
        }
        count += 1;
    }
    Crossing::Count(count)
}

fn parity_inside(p: &Point3, tris: &[PreparedTri]) -> bool {
    let primary = Point3::from(RAY_DIR);
    match count_crossings(p, &primary, tris) {
        Crossing::Count(n) => n % 2 == 1,
        Crossing::Ambiguous => match count_crossings(p, &Point3::from(RAY_DIR_JITTER), tris) {
            Crossing::Count(n) => n % 2 == 1,
            // On-surface points are not strictly inside.
            Crossing::Ambiguous => false,
        },
    }
}

/// Closest point of triangle `abc` to `p` (Voronoi-region method).
pub fn closest_point_on_triangle(p: &Point3, a: &Point3, b: &Point3, c: &Point3) -> Point3 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return a + ab * v;
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return a + ac * w;
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * w;
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}

#[cfg(test)]
mod tests {
    use super::super::shapes;
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cube_inside_outside() {
        let cube = shapes::cuboid(Point3::repeat(1.0));
        assert!(cube.is_watertight());
        let res = cube.contains_points(&[Point3::zeros(), Point3::new(10.0, 0.0, 0.0)]).unwrap();
        assert_eq!(res, vec![true, false]);
        assert!((cube.volume() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn open_mesh_rejected() {
        let cube = shapes::cuboid(Point3::repeat(1.0));
        let mut faces = cube.faces().to_vec();
        faces.pop();
        let open = TriMesh::new(cube.vertices().to_vec(), faces).unwrap();
        assert!(matches!(open.contains_points(&[Point3::zeros()]), Err(Error::OpenMesh)));
    }

    #[test]
    fn invalid_faces_rejected() {
        let v = vec![Point3::zeros(), Point3::x(), Point3::y()];
        assert!(TriMesh::new(v.clone(), vec![[0, 1, 3]]).is_err());
        assert!(TriMesh::new(v, vec![[0, 1, 1]]).is_err());
    }

    #[test]
    fn sphere_parity_matches_radius() {
        let r = 0.5;
        let sphere = shapes::icosphere(r, 3);
        // Chord sagitta of the subdivided sphere bounds the ambiguity band.
        let inner = sphere
            .faces()
            .iter()
            .map(|&[a, b, c]| {
                let v = sphere.vertices();
                let n = (v[b] - v[a]).cross(&(v[c] - v[a])).normalize();
                n.dot(&v[a]).abs()
            })
            .fold(f64::INFINITY, f64::min);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts: Vec<Point3> = (0..4000)
            .map(|_| Point3::new(rng.random(), rng.random(), rng.random()) * 1.4 - Point3::repeat(0.7))
            .filter(|p| p.norm() < inner || p.norm() > r)
            .take(1000)
            .collect();
        assert_eq!(pts.len(), 1000);
        let inside = sphere.contains_points(&pts).unwrap();
        for (p, &ins) in pts.iter().zip(&inside) {
            assert_eq!(ins, p.norm() < r, "{p:?}");
        }
    }

    #[test]
    fn convex_mesh_agrees_with_half_spaces() {
        let mesh = shapes::cylinder(0.3, 0.8, 24);
        let tris: Vec<[Point3; 3]> = (0..mesh.faces().len()).map(|f| mesh.triangle(f)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let pts: Vec<Point3> = (0..10_000)
            .map(|_| Point3::new(rng.random(), rng.random(), rng.random()) * 1.2 - Point3::new(0.6, 0.6, 0.2))
            .collect();
        let inside = mesh.contains_points(&pts).unwrap();
        let mut checked = 0;
        for (p, &ins) in pts.iter().zip(&inside) {
            let sd = tris
                .iter()
                .map(|[a, b, c]| {
                    let n = (b - a).cross(&(c - a)).normalize();
                    n.dot(&(p - a))
                })
                .fold(f64::NEG_INFINITY, f64::max);
            if sd.abs() > 1e-9 {
                assert_eq!(ins, sd < 0.0, "{p:?}");
                checked += 1;
            }
        }
        assert!(checked > 9_900);
    }

    #[test]
    fn closest_point_regions() {
        let a = Point3::zeros();
        let b = Point3::x();
        let c = Point3::y();
        assert_eq!(closest_point_on_triangle(&Point3::new(-1.0, -1.0, 0.0), &a, &b, &c), a);
        let q = closest_point_on_triangle(&Point3::new(0.2, 0.2, 1.0), &a, &b, &c);
        assert!((q - Point3::new(0.2, 0.2, 0.0)).norm() < 1e-12);
        let q = closest_point_on_triangle(&Point3::new(1.0, 1.0, 0.0), &a, &b, &c);
        assert!((q - Point3::new(0.5, 0.5, 0.0)).norm() < 1e-12);
    }
}
