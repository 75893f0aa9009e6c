//! Training objectives for the perception heads and the grasp denoiser.
//!
//! Each geometric loss has a `*_with_grad` form returning the gradient with
//! respect to the moving points plus the discrete choices (active sets and
//! nearest-neighbour indices) that the gradient was taken under.

use serde::{Deserialize, Serialize};

use crate::geometry::{nearest_neighbors, Plane, Point3, PointSet, TriMesh};
use crate::{Error, Result};

/// Weights of the perception and denoiser objectives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub gsp: f64,
    pub gcp: f64,
    pub param: f64,
    pub vertex: f64,
    pub cmap: f64,
    pub penetration: f64,
    pub plane: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self::view_split()
    }
}

impl LossWeights {
    pub fn view_split() -> Self {
        LossWeights {
            gsp: 5.0,
            gcp: 2.0,
            param: 300.0,
            vertex: 15.0,
            cmap: 300.0,
            penetration: 15.0,
            plane: 1.0,
        }
    }

    pub fn object_split() -> Self {
        LossWeights {
            penetration: 20.0,
            param: 250.0,
            ..Self::view_split()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.gsp, self.gcp, self.param, self.vertex, self.cmap, self.penetration, self.plane];
        if all.iter().all(|w| w.is_finite() && *w >= 0.0) {
            Ok(())
        } else {
            Err(Error::Config("loss weights must be finite and nonnegative".into()))
        }
    }
}

/// Squared-distance thresholds, in m².
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MergeConfig {
    pub merge_threshold: f64,
    pub cmap_threshold: f64,
}

impl Default for MergeConfig {
    fn default() -> Self {
        MergeConfig {
            merge_threshold: 1e-4,
            cmap_threshold: 1e-4,
        }
    }
}

impl MergeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.merge_threshold > 0.0 && self.cmap_threshold > 0.0 {
            Ok(())
        } else {
            Err(Error::Config("merge and cmap thresholds must be positive".into()))
        }
    }
}

/// Unweighted denoiser loss terms.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub param: f64,
    pub vertex: f64,
    pub cmap: f64,
    pub penetration: f64,
    pub plane: f64,
}

/// `(L_param, L_V)`: mean absolute parameter error and mean squared vertex
/// distance.
pub fn recon_loss(h0_pred: &[f64], h0: &[f64], v_pred: &[Point3], v_true: &[Point3]) -> Result<(f64, f64)> {
    check_len(h0.len(), h0_pred.len())?;
    check_len(v_true.len(), v_pred.len())?;
    if h0.is_empty() || v_true.is_empty() {
        return Err(Error::Empty("reconstruction inputs"));
    }
    let param = h0_pred.iter().zip(h0).map(|(a, b)| (a - b).abs()).sum::<f64>() / h0.len() as f64;
    let vertex = v_pred.iter().zip(v_true).map(|(a, b)| (a - b).norm_squared()).sum::<f64>() / v_true.len() as f64;
    Ok((param, vertex))
}

/// Value and gradient of a nearest-neighbour loss, with the discrete
/// choices it was evaluated under.
#[derive(Debug, Clone, PartialEq)]
pub struct PointLossGrad {
    pub value: f64,
    /// Gradient with respect to each moving point.
    pub grad: Vec<Point3>,
    /// `(fixed point, moving point)` pairs that contributed.
    pub active: Vec<(usize, usize)>,
}

/// Contact loss: sum over object points of the squared distance to
/// the nearest contact point, counting only distances `≤ threshold`.
pub fn cmap_loss(contact_pts: &[Point3], object_pts: &[Point3], threshold: f64) -> Result<f64> {
    Ok(cmap_loss_with_grad(contact_pts, object_pts, threshold)?.value)
}

pub fn cmap_loss_with_grad(contact_pts: &[Point3], object_pts: &[Point3], threshold: f64) -> Result<PointLossGrad> {
    if object_pts.is_empty() {
        return Err(Error::Empty("object points"));
    }
    let nn = nearest_neighbors(object_pts, contact_pts)?;
    let mut out = PointLossGrad {
        value: 0.0,
        grad: vec![Point3::zeros(); contact_pts.len()],
        active: Vec::new(),
    };
    for (i, &(j, d)) in nn.iter().enumerate() {
        if d <= threshold {
            out.value += d;
            out.grad[j] += 2.0 * (contact_pts[j] - object_pts[i]);
            out.active.push((i, j));
        }
    }
    Ok(out)
}

/// Penetration loss: mean squared distance from object points strictly
/// inside the hand to their nearest hand vertex; 0 with no interior points.
pub fn penetration_loss(object_pts: &[Point3], hand: &TriMesh) -> Result<f64> {
    Ok(penetration_loss_with_grad(object_pts, hand)?.value)
}

pub fn penetration_loss_with_grad(object_pts: &[Point3], hand: &TriMesh) -> Result<PointLossGrad> {
    let inside = hand.contains_points(object_pts)?;
    let interior: Vec<usize> = (0..object_pts.len()).filter(|&i| inside[i]).collect();
    let mut out = PointLossGrad {
        value: 0.0,
        grad: vec![Point3::zeros(); hand.vertices().len()],
        active: Vec::with_capacity(interior.len()),
    };
    if interior.is_empty() {
        return Ok(out);
    }
    let queries: Vec<Point3> = interior.iter().map(|&i| object_pts[i]).collect();
    let nn = nearest_neighbors(&queries, hand.vertices())?;
    let scale = 1.0 / interior.len() as f64;
    for (k, &(j, d)) in nn.iter().enumerate() {
        out.value += d * scale;
        out.grad[j] += 2.0 * scale * (hand.vertices()[j] - queries[k]);
        out.active.push((interior[k], j));
    }
    Ok(out)
}

/// Plane loss: summed absolute signed distance of vertices behind the
/// plane.
pub fn plane_loss(vertices: &[Point3], plane: &Plane) -> f64 {
    plane_loss_with_grad(vertices, plane).value
}

pub fn plane_loss_with_grad(vertices: &[Point3], plane: &Plane) -> PointLossGrad {
    let mut out = PointLossGrad {
        value: 0.0,
        grad: vec![Point3::zeros(); vertices.len()],
        active: Vec::new(),
    };
    for (i, v) in vertices.iter().enumerate() {
        let s = plane.signed_distance(v);
        if s < 0.0 {
            out.value -= s;
            out.grad[i] = -plane.normal();
            out.active.push((0, i));
        }
    }
    out
}

/// Union of the scene points with the completed points whose squared
/// distance to every scene point is at least `theta`. Kept completion points
/// are appended after the scene points and labeled as object when the scene
/// carries labels.
pub fn merge_completion(scene: &PointSet, completed: &[Point3], theta: f64) -> Result<PointSet> {
    let kept = kept_completion(scene.points(), completed, theta)?;
    let mut points = scene.points().to_vec();
    points.extend(kept.iter().map(|&i| completed[i]));
    match scene.labels() {
        Some(labels) => {
            let mut labels = labels.to_vec();
            labels.resize(points.len(), crate::scene::LABEL_OBJECT);
            PointSet::with_labels(points, labels)
        }
        None => PointSet::new(points),
    }
}

/// Indices of completed points that survive the merge filter.
pub fn kept_completion(scene: &[Point3], completed: &[Point3], theta: f64) -> Result<Vec<usize>> {
    if completed.is_empty() {
        return Ok(Vec::new());
    }
    let nn = nearest_neighbors(completed, scene)?;
    Ok(nn.iter().enumerate().filter(|(_, (_, d))| *d >= theta).map(|(i, _)| i).collect())
}

/// Weighted sum of the denoiser terms.
pub fn diff_loss(c: &LossComponents, w: &LossWeights) -> Result<f64> {
    let terms = [
        (c.param, w.param, "L_param"),
        (c.vertex, w.vertex, "L_V"),
        (c.cmap, w.cmap, "L_cmap"),
        (c.penetration, w.penetration, "L_penetr"),
        (c.plane, w.plane, "L_plane"),
    ];
    let mut total = 0.0;
    for (value, weight, name) in terms {
        if !value.is_finite() {
            return Err(Error::NonFinite(name));
        }
        if value < 0.0 {
            return Err(Error::Config(format!("{name} is negative ({value})")));
        }
        total += weight * value;
    }
    Ok(total)
}

/// Weighted sum of the perception terms.
pub fn global_perception_loss(l_gsp: f64, l_gcp: f64, w: &LossWeights) -> Result<f64> {
    if !l_gsp.is_finite() || !l_gcp.is_finite() {
        return Err(Error::NonFinite("perception loss"));
    }
    Ok(w.gsp * l_gsp + w.gcp * l_gcp)
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::LengthMismatch { expected, got })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::shapes::cuboid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(rng: &mut ChaCha8Rng, n: usize, s: f64) -> Vec<Point3> {
        (0..n)
            .map(|_| Point3::new(rng.random_range(-s..s), rng.random_range(-s..s), rng.random_range(-s..s)))
            .collect()
    }

    #[test]
    fn weights_defaults() {
        let v = LossWeights::view_split();
        assert_eq!((v.param, v.vertex, v.cmap, v.penetration, v.plane), (300.0, 15.0, 300.0, 15.0, 1.0));
        let o = LossWeights::object_split();
        assert_eq!((o.penetration, o.param), (20.0, 250.0));
        assert_eq!((o.vertex, o.cmap, o.plane), (15.0, 300.0, 1.0));
        assert_eq!(global_perception_loss(0.0, 0.0, &v).unwrap(), 0.0);
        assert_eq!(global_perception_loss(1.0, 1.0, &v).unwrap(), 7.0);
        assert_eq!(diff_loss(&LossComponents::default(), &v).unwrap(), 0.0);
        let neg = LossComponents {
            plane: -1.0,
            ..Default::default()
        };
        assert!(diff_loss(&neg, &v).is_err());
    }

    #[test]
    fn diff_loss_is_linear() {
        let w = LossWeights::view_split();
        let c = LossComponents {
            param: 0.1,
            vertex: 0.2,
            cmap: 0.3,
            penetration: 0.4,
            plane: 0.5,
        };
        let want = 300.0 * 0.1 + 15.0 * 0.2 + 300.0 * 0.3 + 15.0 * 0.4 + 0.5;
        assert!((diff_loss(&c, &w).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn recon_cases() {
        let h: Vec<f64> = (0..61).map(|i| i as f64 * 0.01).collect();
        let v = vec![Point3::new(0.1, 0.2, 0.3); 778];
        assert_eq!(recon_loss(&h, &h, &v, &v).unwrap(), (0.0, 0.0));
        let shifted: Vec<f64> = h.iter().map(|x| x + 1.0).collect();
        assert!((recon_loss(&shifted, &h, &v, &v).unwrap().0 - 1.0).abs() < 1e-12);
        assert!(recon_loss(&h[..60], &h, &v, &v).is_err());
        assert!(recon_loss(&h, &h, &v[..777], &v).is_err());
    }

    #[test]
    fn cmap_cases() {
        let far = [Point3::new(1.0, 0.0, 0.0)];
        let obj = [Point3::zeros(), Point3::new(0.0, 0.001, 0.0)];
        assert_eq!(cmap_loss(&far, &obj, 1e-4).unwrap(), 0.0);
        let on = [Point3::zeros()];
        assert!((cmap_loss(&on, &obj, 1e-4).unwrap() - 1e-6).abs() < 1e-18);
        assert!(cmap_loss(&[], &obj, 1e-4).is_err());
        assert!(cmap_loss(&on, &[], 1e-4).is_err());
    }

    #[test]
    fn cmap_monotone_along_sweep() {
        let obj: Vec<Point3> = (0..20).map(|i| Point3::new(i as f64 * 0.002, 0.0, 0.0)).collect();
        let mut last = f64::INFINITY;
        for k in 0..=40 {
            let h = 0.012 - k as f64 * 0.0003;
            let contacts: Vec<Point3> = obj.iter().map(|p| p + Point3::new(0.0, h, 0.0)).collect();
            let v = cmap_loss(&contacts, &obj, 1e-4).unwrap();
            if k > 0 && h < 0.0099 {
                assert!(v <= last + 1e-15);
            }
            last = v;
        }
        assert!(last < 1e-30);
    }

    #[test]
    fn penetration_cube_fixture() {
        let cube = cuboid(Point3::repeat(0.1));
        let p = Point3::new(0.04, 0.04, 0.04);
        let v = penetration_loss(&[p, Point3::new(1.0, 0.0, 0.0)], &cube).unwrap();
        let want = (p - Point3::repeat(0.05)).norm_squared();
        assert!((v - want).abs() < 1e-18);
        let q = Point3::repeat(0.05 - 0.01 / 3f64.sqrt());
        assert!((penetration_loss(&[q], &cube).unwrap() - 1e-4).abs() < 1e-15);
        assert_eq!(penetration_loss(&[Point3::new(0.2, 0.0, 0.0)], &cube).unwrap(), 0.0);
    }

    #[test]
    fn plane_cases() {
        let plane = Plane::horizontal(0.0);
        let mut v = vec![Point3::new(0.0, 0.0, 0.1); 10];
        assert_eq!(plane_loss(&v, &plane), 0.0);
        v[3].z = -0.02;
        assert!((plane_loss(&v, &plane) - 0.02).abs() < 1e-15);
    }

    #[test]
    fn merge_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let scene = PointSet::from(cloud(&mut rng, 50, 0.1));
        let same = merge_completion(&scene, scene.points(), 1e-4).unwrap();
        assert_eq!(same.points(), scene.points());
        let far: Vec<Point3> = cloud(&mut rng, 30, 0.1).iter().map(|p| p + Point3::repeat(5.0)).collect();
        assert_eq!(merge_completion(&scene, &far, 1e-4).unwrap().len(), 80);
        let labeled = PointSet::with_labels(scene.points().to_vec(), vec![0; 50]).unwrap();
        let merged = merge_completion(&labeled, &far, 1e-4).unwrap();
        assert_eq!(merged.count_label(crate::scene::LABEL_OBJECT), 30);
    }

    fn grad_check(f: &dyn Fn(&[Point3]) -> f64, x: &[Point3], g: &[Point3]) {
        let h = 1e-7;
        for i in 0..x.len() {
            for a in 0..3 {
                let mut xp = x.to_vec();
                let mut xm = x.to_vec();
                xp[i][a] += h;
                xm[i][a] -= h;
                let fd = (f(&xp) - f(&xm)) / (2.0 * h);
                let an = g[i][a];
                let denom = fd.abs().max(an.abs()).max(1e-8);
                assert!((fd - an).abs() / denom < 1e-4, "i={i} a={a} fd={fd} an={an}");
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let obj = cloud(&mut rng, 200, 0.03);
        let contacts = cloud(&mut rng, 20, 0.03);
        let thr = 1e-4;
        let g = cmap_loss_with_grad(&contacts, &obj, thr).unwrap();
        assert!(!g.active.is_empty());
        grad_check(&|c| cmap_loss(c, &obj, thr).unwrap(), &contacts, &g.grad);

        let plane = Plane::new(Point3::new(0.1, 0.2, 1.0), 0.005).unwrap();
        let g = plane_loss_with_grad(&contacts, &plane);
        grad_check(&|c| plane_loss(c, &plane), &contacts, &g.grad);

        let cube = cuboid(Point3::repeat(0.04));
        let g = penetration_loss_with_grad(&obj, &cube).unwrap();
        assert!(!g.active.is_empty());
        grad_check(
            &|v| penetration_loss(&obj, &cube.with_vertices(v.to_vec()).unwrap()).unwrap(),
            cube.vertices(),
            &g.grad,
        );
    }
}
