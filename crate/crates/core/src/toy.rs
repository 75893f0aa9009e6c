//! In-repo toy objects and candidate grasps, so that dataset generation and
//! training run without external assets.

use nalgebra::Matrix3;

use crate::geometry::rotation::log_so3;
use crate::geometry::shapes::{cuboid, cylinder, icosphere};
use crate::geometry::{Point3, TriMesh};
use crate::hand::{hand_forward, HandModel, HandParams};
use crate::metrics::penetration_depth;
use crate::Result;

/// Category ids of the toy families.
pub const SPHERE: usize = 0;
pub const BOX: usize = 1;
pub const CYLINDER: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct ToyObject {
    pub id: String,
    pub category: usize,
    pub mesh: TriMesh,
}

/// Spheres, boxes and upright cylinders at three sizes each.
pub fn toy_objects() -> Vec<ToyObject> {
    let mut out = Vec::new();
    for (k, r) in [0.030, 0.040, 0.050].into_iter().enumerate() {
        out.push(ToyObject {
            id: format!("sphere_{k}"),
            category: SPHERE,
            mesh: icosphere(r, 3),
        });
    }
    for (k, s) in [[0.06, 0.05, 0.04], [0.08, 0.06, 0.05], [0.10, 0.07, 0.06]].into_iter().enumerate() {
        out.push(ToyObject {
            id: format!("box_{k}"),
            category: BOX,
            mesh: cuboid(Point3::from(s)),
        });
    }
    for (k, (r, h)) in [(0.025, 0.08), (0.030, 0.10), (0.035, 0.12)].into_iter().enumerate() {
        out.push(ToyObject {
            id: format!("cylinder_{k}"),
            category: CYLINDER,
            mesh: cylinder(r, h, 32),
        });
    }
    out
}

/// Center of the palm's inner face in the hand rest frame.
const PALM_CENTER: [f64; 3] = [0.0, 0.045, 0.0];
/// Gap between the closest hand vertex and the object surface.
const GAP: f64 = 0.002;
/// Flexion of every non-thumb finger joint, radians about the rest x axis.
const FLEX: f64 = -0.15;

fn approach_directions() -> Vec<Point3> {
    let mut dirs = Vec::new();
    for x in -1i32..=1 {
        for y in -1i32..=1 {
            for z in -1i32..=1 {
                if (x, y, z) != (0, 0, 0) {
                    dirs.push(Point3::new(x as f64, y as f64, z as f64).normalize());
                }
            }
        }
    }
    dirs
}

/// Wrist rotation whose palm normal (rest −z) faces `-d` and whose fingers
/// (rest +y) point along `u`.
fn palm_frame(d: &Point3, u: &Point3) -> Matrix3<f64> {
    Matrix3::from_columns(&[u.cross(d), *u, *d])
}

fn signed_gap(hand: &[Point3], object: &TriMesh) -> Result<f64> {
    let depth = penetration_depth(hand, object)? / 100.0;
    if depth > 0.0 {
        return Ok(-depth);
    }
    Ok(hand.iter().map(|p| object.distance_to_surface(p)).fold(f64::INFINITY, f64::min))
}

/// Candidate grasps in the object frame: for each of 26 approach directions
/// and two finger orientations, a slightly curled hand is slid along the
/// approach axis until its closest vertex sits a small gap off the surface.
/// Candidates that still penetrate are dropped.
pub fn toy_grasp_candidates(model: &HandModel, object: &TriMesh) -> Result<Vec<HandParams>> {
    let mut frames = Vec::new();
    for d in approach_directions() {
        let helper = if d.z.abs() < 0.9 { Point3::z() } else { Point3::x() };
        let u0 = helper.cross(&d).normalize();
        frames.push((d, u0));
        frames.push((d, d.cross(&u0)));
    }
    slide_candidates(model, object, &frames)
}

/// The single top-down candidate for an object already posed in the scene
/// frame, fingers along +y.
pub fn toy_top_grasp(model: &HandModel, posed: &TriMesh) -> Result<Vec<HandParams>> {
    slide_candidates(model, posed, &[(Point3::z(), Point3::y())])
}

fn slide_candidates(model: &HandModel, object: &TriMesh, frames: &[(Point3, Point3)]) -> Result<Vec<HandParams>> {
    let center = object.solid_centroid();
    let mut base = HandParams::default();
    for j in 0..12 {
        base.set_joint_pose(j, Point3::new(FLEX, 0.0, 0.0));
    }
    let palm = Point3::from(PALM_CENTER);
    let mut out = Vec::new();
    for (d, u) in frames {
        let rot = palm_frame(d, u);
        let aa = log_so3(&rot);
        let support = object
            .vertices()
            .iter()
            .map(|v| (v - center).dot(d))
            .fold(f64::NEG_INFINITY, f64::max);
        let mut offset = support + 0.02;
        let mut params = base;
        let mut ok = false;
        for _ in 0..8 {
            params.set_wrist(aa, center + d * offset - rot * palm);
            let hand = hand_forward(model, &params)?;
            let gap = signed_gap(hand.vertices(), object)?;
            if gap > 0.0 && (gap - GAP).abs() < 2e-4 {
                ok = true;
                break;
            }
            offset += GAP - gap;
        }
        if ok {
            out.push(params);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hand::build_capsule_hand;

    #[test]
    fn objects_are_closed() {
        let objs = toy_objects();
        assert_eq!(objs.len(), 9);
        for o in &objs {
            assert!(o.mesh.is_watertight(), "{}", o.id);
            assert!(o.mesh.volume() > 0.0);
        }
    }

    #[test]
    fn candidates_touch_without_penetrating() {
        let model = build_capsule_hand(0);
        let obj = &toy_objects()[3];
        let cands = toy_grasp_candidates(&model, &obj.mesh).unwrap();
        assert!(cands.len() >= 26, "{}", cands.len());
        for c in &cands {
            let hand = hand_forward(&model, c).unwrap();
            let gap = signed_gap(hand.vertices(), &obj.mesh).unwrap();
            assert!(gap > 0.0 && gap < 3e-3, "{gap}");
        }
    }

    #[test]
    fn top_grasp_sits_above_every_toy_object() {
        let model = build_capsule_hand(0);
        for o in toy_objects() {
            let top = toy_top_grasp(&model, &o.mesh).unwrap();
            assert_eq!(top.len(), 1, "{}", o.id);
            let hand = hand_forward(&model, &top[0]).unwrap();
            let gap = signed_gap(hand.vertices(), &o.mesh).unwrap();
            assert!(gap > 0.0 && gap < 3e-3, "{} {gap}", o.id);
        }
    }
}
