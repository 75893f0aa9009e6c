//! Grasp evaluation: penetration, simulated displacement, contact ratio,
//! pose diversity and classification F1.

use std::collections::BTreeSet;

use nalgebra::{Matrix3, Matrix3x6, Matrix6, Vector6};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::rotation::{axis_angle_split, exp_so3, hat};
use crate::geometry::{Aabb, Point3, TriMesh};
use crate::hand::{HandParams, NUM_JOINTS};
use crate::{Error, Result};

/// Largest depth, in cm, of a hand vertex inside the object.
pub fn penetration_depth(hand: &[Point3], object: &TriMesh) -> Result<f64> {
    let inside = object.contains_points(hand)?;
    let depth = hand
        .iter()
        .zip(&inside)
        .filter(|(_, &i)| i)
        .map(|(p, _)| object.distance_to_surface(p))
        .fold(0.0, f64::max);
    Ok(depth * 100.0)
}

/// Volume, in cm³, of grid cells whose centers lie inside both meshes. The
/// grid has edge `voxel` (m) with cell centers at `(i + ½)·voxel`.
pub fn penetration_volume(hand: &TriMesh, object: &TriMesh, voxel: f64) -> Result<f64> {
    if voxel <= 0.0 || !voxel.is_finite() {
        return Err(Error::Config("voxel edge must be positive".into()));
    }
    hand.ensure_watertight()?;
    object.ensure_watertight()?;
    let (Some(a), Some(b)) = (hand.aabb(), object.aabb()) else {
        return Ok(0.0);
    };
    let Some(bx) = a.intersection(&b) else {
        return Ok(0.0);
    };
    let lo = bx.min.map(|v| (v / voxel - 0.5).ceil() as i64);
    let hi = bx.max.map(|v| (v / voxel - 0.5).floor() as i64);
    let mut centers = Vec::new();
    for i in lo.x..=hi.x {
        for j in lo.y..=hi.y {
            for k in lo.z..=hi.z {
                centers.push(Point3::new(i as f64 + 0.5, j as f64 + 0.5, k as f64 + 0.5) * voxel);
            }
        }
    }
    if centers.is_empty() {
        return Ok(0.0);
    }
    let in_a = hand.contains_points(&centers)?;
    let in_b = object.contains_points(&centers)?;
    let n = in_a.iter().zip(&in_b).filter(|(x, y)| **x && **y).count();
    Ok(n as f64 * (voxel * 100.0).powi(3))
}

/// Distance from the hand to the object surface; 0 when a vertex is inside.
pub fn hand_object_distance(hand: &[Point3], object: &TriMesh) -> Result<f64> {
    if hand.is_empty() {
        return Err(Error::Empty("hand vertices"));
    }
    let inside = object.contains_points(hand)?;
    if inside.iter().any(|&i| i) {
        return Ok(0.0);
    }
    Ok(hand
        .par_iter()
        .map(|p| object.distance_to_surface(p))
        .reduce(|| f64::INFINITY, f64::min))
}

/// Percentage of grasps whose hand comes within `tol` (m) of its object.
pub fn contact_ratio(grasps: &[(&[Point3], &TriMesh)], tol: f64) -> Result<f64> {
    let d: Vec<f64> = grasps.iter().map(|(h, o)| hand_object_distance(h, o)).collect::<Result<_>>()?;
    contact_ratio_from_distances(&d, tol)
}

pub fn contact_ratio_from_distances(distances: &[f64], tol: f64) -> Result<f64> {
    if distances.is_empty() {
        return Err(Error::Empty("grasp set"));
    }
    let n = distances.iter().filter(|&&d| d <= tol).count();
    Ok(100.0 * n as f64 / distances.len() as f64)
}

/// Pose diversity `(σ²_axis, σ²_angle)` of the 15 finger joints, in units of
/// 10⁻². Unbiased sample variances; a zero rotation contributes the x axis.
pub fn diversity(grasps: &[HandParams]) -> Result<(f64, f64)> {
    let n = grasps.len();
    if n < 2 {
        return Err(Error::Config("diversity needs at least two grasps".into()));
    }
    let var = |xs: &mut dyn Iterator<Item = f64>| {
        // Shifted by the first sample so identical inputs give exactly 0.
        let v: Vec<f64> = xs.collect();
        let d: Vec<f64> = v.iter().map(|x| x - v[0]).collect();
        let m = d.iter().sum::<f64>() / n as f64;
        d.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64
    };
    let (mut axis, mut angle) = (0.0, 0.0);
    for j in 1..NUM_JOINTS {
        let split: Vec<(Point3, f64)> = grasps.iter().map(|g| axis_angle_split(&g.joint_pose(j))).collect();
        let per_coord: f64 = (0..3).map(|c| var(&mut split.iter().map(|s| s.0[c]))).sum::<f64>() / 3.0;
        axis += per_coord;
        angle += var(&mut split.iter().map(|s| s.1));
    }
    let joints = (NUM_JOINTS - 1) as f64;
    Ok((100.0 * axis / joints, 100.0 * angle / joints))
}

/// Macro-averaged F1 over the union of predicted and true labels.
pub fn f1_score(predicted: &[usize], truth: &[usize]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::LengthMismatch {
            expected: truth.len(),
            got: predicted.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::Empty("label set"));
    }
    let classes: BTreeSet<usize> = predicted.iter().chain(truth).copied().collect();
    let mut total = 0.0;
    for &c in &classes {
        let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
        for (&p, &t) in predicted.iter().zip(truth) {
            match (p == c, t == c) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                _ => {}
            }
        }
        total += 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64;
    }
    Ok(total / classes.len() as f64)
}

/// Penalty-contact rigid-body simulation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Gravitational acceleration magnitude, m/s².
    pub gravity: f64,
    /// Unit direction of gravity.
    pub gravity_dir: [f64; 3],
    pub timestep: f64,
    pub duration: f64,
    /// Normal spring constant per hand vertex, N/m.
    pub stiffness: f64,
    /// Normal damping per hand vertex, N·s/m.
    pub damping: f64,
    pub friction: f64,
    /// Tangential speed, m/s, at which friction reaches its Coulomb bound.
    pub friction_slip: f64,
    /// Hand vertices closer than this to the object surface push on it, m.
    pub contact_distance: f64,
    pub density: f64,
    /// Edge length of the object distance-field grid, m.
    pub grid: f64,
    /// Displacement cap, m.
    pub cap: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            gravity: 9.8,
            gravity_dir: [0.0, 0.0, -1.0],
            timestep: 2e-4,
            duration: 1.0,
            stiffness: 1000.0,
            damping: 0.5,
            friction: 1.0,
            friction_slip: 1e-3,
            contact_distance: 3e-3,
            density: 1000.0,
            grid: 3e-3,
            cap: 0.5,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.timestep, self.duration, self.stiffness, self.density, self.grid, self.cap];
        if positive.iter().all(|v| *v > 0.0 && v.is_finite())
            && self.gravity >= 0.0
            && self.damping >= 0.0
            && self.friction >= 0.0
            && self.contact_distance >= 0.0
        {
            Ok(())
        } else {
            Err(Error::Config("invalid simulation config".into()))
        }
    }
}

/// Signed distance field of a closed mesh sampled on a regular grid
/// (negative inside), with trilinear interpolation.
pub struct DistanceField {
    origin: Point3,
    step: f64,
    dims: [usize; 3],
    values: Vec<f64>,
}

impl DistanceField {
    pub fn new(mesh: &TriMesh, step: f64, margin: f64) -> Result<Self> {
        // Grid symmetric about the bounding-box center so that symmetric
        // objects get symmetric interpolation error.
        let bounds = mesh.aabb().ok_or(Error::Empty("object mesh"))?.expanded(margin + 2.0 * step);
        let center = (bounds.min + bounds.max) / 2.0;
        let half = (bounds.max - bounds.min) / 2.0;
        let cells = [0, 1, 2].map(|a| (half[a] / step).ceil() as usize);
        let dims = cells.map(|c| 2 * c + 1);
        let origin = center - Point3::new(cells[0] as f64, cells[1] as f64, cells[2] as f64) * step;
        let mut points = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
        for i in 0..dims[0] {
            for j in 0..dims[1] {
                for k in 0..dims[2] {
                    points.push(origin + Point3::new(i as f64, j as f64, k as f64) * step);
                }
            }
        }
        let inside = mesh.contains_points(&points)?;
        let values = points
            .par_iter()
            .zip(&inside)
            .map(|(p, &i)| {
                let d = mesh.distance_to_surface(p);
                if i {
                    -d
                } else {
                    d
                }
            })
            .collect();
        Ok(DistanceField {
            origin,
            step,
            dims,
            values,
        })
    }

    fn at(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[(i * self.dims[1] + j) * self.dims[2] + k]
    }

    /// Distance and its gradient, or `None` outside the grid.
    pub fn sample(&self, p: &Point3) -> Option<(f64, Point3)> {
        let g = (p - self.origin) / self.step;
        let mut idx = [0usize; 3];
        let mut f = [0.0; 3];
        for a in 0..3 {
            if g[a] < 0.0 || g[a] >= (self.dims[a] - 1) as f64 {
                return None;
            }
            idx[a] = g[a].floor() as usize;
            f[a] = g[a] - idx[a] as f64;
        }
        let [i, j, k] = idx;
        let c = |di: usize, dj: usize, dk: usize| self.at(i + di, j + dj, k + dk);
        let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
        let (fx, fy, fz) = (f[0], f[1], f[2]);
        let c00 = lerp(c(0, 0, 0), c(1, 0, 0), fx);
        let c10 = lerp(c(0, 1, 0), c(1, 1, 0), fx);
        let c01 = lerp(c(0, 0, 1), c(1, 0, 1), fx);
        let c11 = lerp(c(0, 1, 1), c(1, 1, 1), fx);
        let c0 = lerp(c00, c10, fy);
        let c1 = lerp(c01, c11, fy);
        let value = lerp(c0, c1, fz);
        let dz = c1 - c0;
        let dy = lerp(c10 - c00, c11 - c01, fz);
        let dx = lerp(
            lerp(c(1, 0, 0) - c(0, 0, 0), c(1, 1, 0) - c(0, 1, 0), fy),
            lerp(c(1, 0, 1) - c(0, 0, 1), c(1, 1, 1) - c(0, 1, 1), fy),
            fz,
        );
        Some((value, Point3::new(dx, dy, dz) / self.step))
    }
}

/// Mass properties of a closed mesh of unit density: volume, center of mass
/// and inertia about it.
fn mass_properties(mesh: &TriMesh) -> (f64, Point3, Matrix3<f64>) {
    let canon = Matrix3::new(2.0, 1.0, 1.0, 1.0, 2.0, 1.0, 1.0, 1.0, 2.0) / 120.0;
    let mut cov = Matrix3::zeros();
    let mut vol = 0.0;
    let mut first = Point3::zeros();
    for f in 0..mesh.faces().len() {
        let [a, b, c] = mesh.triangle(f);
        let m = Matrix3::from_columns(&[a, b, c]);
        let det = m.determinant();
        cov += det * m * canon * m.transpose();
        vol += det / 6.0;
        first += det / 24.0 * (a + b + c);
    }
    let com = first / vol;
    let cov = cov - vol * com * com.transpose();
    let inertia = Matrix3::identity() * cov.trace() - cov;
    (vol, com, inertia)
}

/// Object center-of-mass displacement, in cm, after the object is released
/// under gravity against the static hand. The hand acts through its
/// vertices; the table is absent.
pub fn grasp_displacement(hand: &[Point3], object: &TriMesh, cfg: &SimConfig) -> Result<f64> {
    let field = DistanceField::new(object, cfg.grid, cfg.contact_distance)?;
    grasp_displacement_with_field(hand, object, &field, cfg)
}

pub fn grasp_displacement_with_field(hand: &[Point3], object: &TriMesh, field: &DistanceField, cfg: &SimConfig) -> Result<f64> {
    cfg.validate()?;
    object.ensure_watertight()?;
    let (vol, com0, inertia0) = mass_properties(object);
    if vol <= 0.0 {
        return Err(Error::InvalidMesh("object has no volume".into()));
    }
    let mass = vol * cfg.density;
    let inertia_body = inertia0 * cfg.density;
    let down = Point3::from(cfg.gravity_dir).normalize();

    // Only vertices that can come near the object are worth checking.
    let reach = Aabb::from_points(object.vertices())
        .ok_or(Error::Empty("object mesh"))?
        .expanded(cfg.contact_distance + cfg.cap + 0.01);
    let active: Vec<Point3> = hand.iter().copied().filter(|p| reach.contains(p)).collect();

    let mut x = com0;
    let mut rot = Matrix3::<f64>::identity();
    let mut v = Point3::zeros();
    let mut w = Point3::zeros();
    let steps = (cfg.duration / cfg.timestep).round() as usize;
    let dt = cfg.timestep;
    for _ in 0..steps {
        // Spring and gravity forces are explicit; damping and friction are
        // linear in the body velocity and integrated implicitly.
        let mut force = down * (cfg.gravity * mass);
        let mut torque = Point3::zeros();
        let mut c = Matrix6::<f64>::zeros();
        for p in &active {
            // Hand vertex in the object's reference frame.
            let r = p - x;
            let local = rot.transpose() * r + com0;
            let Some((phi, grad)) = field.sample(&local) else { continue };
            if phi >= cfg.contact_distance {
                continue;
            }
            let gn = grad.norm();
            if gn < 1e-12 {
                continue;
            }
            // Outward object normal at the contact, in world coordinates.
            let n = rot * (grad / gn);
            let spring = cfg.stiffness * (cfg.contact_distance - phi);
            // The hand pushes the object along -n.
            let f = -n * spring;
            force += f;
            torque += r.cross(&f);
            let vp = v + w.cross(&r);
            let vt = vp - n * vp.dot(&n);
            let ct = cfg.friction * spring / vt.norm().max(cfg.friction_slip);
            let nn = n * n.transpose();
            let cc = nn * cfg.damping + (Matrix3::identity() - nn) * ct;
            let mut j = Matrix3x6::<f64>::zeros();
            j.fixed_view_mut::<3, 3>(0, 0).copy_from(&Matrix3::identity());
            j.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-hat(&r)));
            c += j.transpose() * cc * j;
        }
        let i_world = rot * inertia_body * rot.transpose();
        let mut m = Matrix6::<f64>::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&(Matrix3::identity() * mass));
        m.fixed_view_mut::<3, 3>(3, 3).copy_from(&i_world);
        let mut u = Vector6::zeros();
        u.fixed_rows_mut::<3>(0).copy_from(&v);
        u.fixed_rows_mut::<3>(3).copy_from(&w);
        let mut gen = Vector6::zeros();
        gen.fixed_rows_mut::<3>(0).copy_from(&force);
        gen.fixed_rows_mut::<3>(3).copy_from(&(torque - w.cross(&(i_world * w))));
        let a = m + c * dt;
        let rhs = m * u + gen * dt;
        let u = a.cholesky().ok_or(Error::SimulationDiverged)?.solve(&rhs);
        v = u.fixed_rows::<3>(0).into_owned();
        w = u.fixed_rows::<3>(3).into_owned();
        x += v * dt;
        rot = exp_so3(&(w * dt)) * rot;
        if !x.iter().chain(v.iter()).chain(w.iter()).all(|c| c.is_finite()) {
            return Err(Error::SimulationDiverged);
        }
        if (x - com0).norm() >= cfg.cap {
            return Ok(cfg.cap * 100.0);
        }
    }
    Ok(((x - com0).norm() * 100.0).min(cfg.cap * 100.0))
}

/// Metric bundle for one grasp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraspReport {
    pub penetration_depth_cm: f64,
    pub penetration_volume_cm3: f64,
    pub displacement_cm: f64,
    pub contact: bool,
    /// Per finger joint `(unit axis, angle in radians)`.
    pub joints: Vec<([f64; 3], f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PenetrationSummary {
    pub depth_cm: f64,
    pub volume_cm3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisplaceSummary {
    pub mean_cm: f64,
    /// Sample standard deviation (n − 1 denominator), cm.
    pub var_cm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiversitySummary {
    pub axis: f64,
    pub angle: f64,
}

/// Aggregate report over a grasp set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub penetration: PenetrationSummary,
    pub displace: DisplaceSummary,
    pub contact_ratio_pct: f64,
    pub diversity: DiversitySummary,
}

/// Evaluation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub voxel: f64,
    pub contact_tol: f64,
    pub sim: SimConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            voxel: 5e-3,
            contact_tol: 5e-3,
            sim: SimConfig::default(),
        }
    }
}

/// Per-grasp metrics for posed hands against one object.
pub fn evaluate_hands(
    hands: &[TriMesh],
    params: &[HandParams],
    object: &TriMesh,
    cfg: &EvalConfig,
) -> Result<(EvalReport, Vec<GraspReport>)> {
    if hands.is_empty() {
        return Err(Error::Empty("grasp set"));
    }
    object.ensure_watertight()?;
    let field = DistanceField::new(object, cfg.sim.grid, cfg.sim.contact_distance)?;
    let reports: Vec<GraspReport> = hands
        .iter()
        .zip(params)
        .map(|(h, p)| {
            let depth = penetration_depth(h.vertices(), object)?;
            let volume = penetration_volume(h, object, cfg.voxel)?;
            let disp = grasp_displacement_with_field(h.vertices(), object, &field, &cfg.sim)?;
            let dist = hand_object_distance(h.vertices(), object)?;
            let joints = (1..NUM_JOINTS)
                .map(|j| {
                    let (a, t) = axis_angle_split(&p.joint_pose(j));
                    ([a.x, a.y, a.z], t)
                })
                .collect();
            Ok(GraspReport {
                penetration_depth_cm: depth,
                penetration_volume_cm3: volume,
                displacement_cm: disp,
                contact: dist <= cfg.contact_tol,
                joints,
            })
        })
        .collect::<Result<_>>()?;
    let n = reports.len() as f64;
    let mean = |f: &dyn Fn(&GraspReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    let disp_mean = mean(&|r| r.displacement_cm);
    let disp_std = if reports.len() > 1 {
        (reports.iter().map(|r| (r.displacement_cm - disp_mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let (axis, angle) = if params.len() >= 2 { diversity(params)? } else { (0.0, 0.0) };
    let report = EvalReport {
        penetration: PenetrationSummary {
            depth_cm: mean(&|r| r.penetration_depth_cm),
            volume_cm3: mean(&|r| r.penetration_volume_cm3),
        },
        displace: DisplaceSummary {
            mean_cm: disp_mean,
            var_cm: disp_std,
        },
        contact_ratio_pct: 100.0 * reports.iter().filter(|r| r.contact).count() as f64 / n,
        diversity: DiversitySummary { axis, angle },
    };
    Ok((report, reports))
}
