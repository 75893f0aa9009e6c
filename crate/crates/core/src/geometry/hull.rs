use std::collections::HashSet;

use super::Point3;
use crate::{Error, Result};

struct Facet {
    v: [usize; 3],
    normal: Point3,
    offset: f64,
}

impl Facet {
    fn new(points: &[Point3], v: [usize; 3]) -> Self {
        let [a, b, c] = v.map(|i| points[i]);
        let normal = (b - a).cross(&(c - a)).normalize();
        Facet {
            v,
            normal,
            offset: -normal.dot(&a),
        }
    }

    fn height(&self, p: &Point3) -> f64 {
        self.normal.dot(p) + self.offset
    }
}

/// Incremental 3-D convex hull. Returns outward-oriented triangles indexing
/// into `points`; points within a relative tolerance of a facet are treated
/// as lying on it.
pub fn convex_hull(points: &[Point3]) -> Result<Vec<[usize; 3]>> {
    if points.len() < 4 {
        return Err(Error::DegeneratePoints);
    }
    let lo = points.iter().fold(Point3::repeat(f64::INFINITY), |m, p| m.inf(p));
    let hi = points.iter().fold(Point3::repeat(f64::NEG_INFINITY), |m, p| m.sup(p));
    let eps = 1e-9 * (hi - lo).norm().max(1e-300);

    let i0 = (0..points.len()).min_by(|&a, &b| points[a].x.total_cmp(&points[b].x)).unwrap_or(0);
    let far = |f: &dyn Fn(&Point3) -> f64| {
        (0..points.len())
            .max_by(|&a, &b| f(&points[a]).total_cmp(&f(&points[b])))
            .unwrap_or(0)
    };
    let i1 = far(&|p| (p - points[i0]).norm());
    let axis = points[i1] - points[i0];
    if axis.norm() <= eps {
        return Err(Error::DegeneratePoints);
    }
    let d = axis.normalize();
    let i2 = far(&|p| {
        let r = p - points[i0];
        (r - d * r.dot(&d)).norm()
    });
    let n = axis.cross(&(points[i2] - points[i0]));
    if n.norm() <= eps * axis.norm() {
        return Err(Error::DegeneratePoints);
    }
    let n = n.normalize();
    let i3 = far(&|p| (p - points[i0]).dot(&n).abs());
    if (points[i3] - points[i0]).dot(&n).abs() <= eps {
        return Err(Error::DegeneratePoints);
    }

    let interior = (points[i0] + points[i1] + points[i2] + points[i3]) / 4.0;
    let mut facets: Vec<Facet> = Vec::new();
    for tri in [[i0, i1, i2], [i0, i1, i3], [i0, i2, i3], [i1, i2, i3]] {
        let mut f = Facet::new(points, tri);
        if f.height(&interior) > 0.0 {
            f = Facet::new(points, [tri[0], tri[2], tri[1]]);
        }
        facets.push(f);
    }

    let seed = [i0, i1, i2, i3];
    for (pi, p) in points.iter().enumerate() {
        if seed.contains(&pi) {
            continue;
        }
        let visible: Vec<bool> = facets.iter().map(|f| f.height(p) > eps).collect();
        if !visible.iter().any(|&v| v) {
            continue;
        }
        let mut edges: HashSet<(usize, usize)> = HashSet::new();
        for (f, _) in facets.iter().zip(&visible).filter(|(_, &v)| v) {
            for k in 0..3 {
                edges.insert((f.v[k], f.v[(k + 1) % 3]));
            }
        }
        let mut horizon: Vec<(usize, usize)> = edges.iter().copied().filter(|&(a, b)| !edges.contains(&(b, a))).collect();
        horizon.sort_unstable();
        let mut kept: Vec<Facet> = facets.into_iter().zip(visible).filter(|(_, v)| !v).map(|(f, _)| f).collect();
        for (a, b) in horizon {
            kept.push(Facet::new(points, [a, b, pi]));
        }
        facets = kept;
    }
    Ok(facets.into_iter().map(|f| f.v).collect())
}

#[cfg(test)]
mod tests {
    use super::super::shapes;
    use super::*;

    #[test]
    fn hull_of_cube_corners() {
        let cube = shapes::cuboid(Point3::repeat(2.0));
        let mut pts = cube.vertices().to_vec();
        pts.push(Point3::new(0.1, 0.2, -0.3));
        let hull = convex_hull(&pts).unwrap();
        assert_eq!(hull.len(), 12);
        assert!(hull.iter().all(|f| !f.contains(&8)));
        for f in &hull {
            let facet = Facet::new(&pts, *f);
            assert!(pts.iter().all(|p| facet.height(p) <= 1e-9));
        }
    }

    #[test]
    fn hull_rejects_flat_input() {
        let pts: Vec<Point3> = (0..10).map(|i| Point3::new(i as f64, (i * i) as f64, 0.0)).collect();
        assert!(convex_hull(&pts).is_err());
    }
}
