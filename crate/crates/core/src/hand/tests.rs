use super::*;
use crate::geometry::rotation::exp_so3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub(crate) fn random_params(rng: &mut ChaCha8Rng) -> HandParams {
    let mut p = [0.0; NUM_PARAMS];
    for v in &mut p[SHAPE_RANGE] {
        *v = rng.random_range(-1.5..1.5);
    }
    for v in &mut p[POSE_RANGE] {
        *v = rng.random_range(-0.5..0.5);
    }
    for v in &mut p[ROT_RANGE] {
        *v = rng.random_range(-1.0..1.0);
    }
    for v in &mut p[TRANS_RANGE] {
        *v = rng.random_range(-0.1..0.1);
    }
    HandParams(p)
}

#[test]
fn construction_is_deterministic() {
    assert_eq!(build_capsule_hand(0), build_capsule_hand(0));
    assert_ne!(build_capsule_hand(0).shape_basis, build_capsule_hand(1).shape_basis);
}

#[test]
fn model_invariants() {
    for seed in [0, 3, 17] {
        let m = build_capsule_hand(seed);
        assert_eq!(m.rest_vertices().len(), NUM_VERTICES);
        for w in m.weights() {
            assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            assert!(w.iter().all(|&x| x >= 0.0));
        }
        assert!(m.rest_mesh().is_watertight());
        assert_eq!(m.parents()[0], None);
        assert!(m.shape_basis().iter().all(|b| b.len() == NUM_VERTICES));
    }
}

#[test]
fn every_edge_shared_by_two_faces() {
    use std::collections::HashMap;
    let m = build_capsule_hand(0);
    let mut count: HashMap<(usize, usize), usize> = HashMap::new();
    for f in m.faces() {
        for k in 0..3 {
            let (a, b) = (f[k], f[(k + 1) % 3]);
            *count.entry((a.min(b), a.max(b))).or_default() += 1;
        }
    }
    assert!(count.values().all(|&c| c == 2));
}

#[test]
fn rest_mesh_components_do_not_overlap() {
    // Parity tests by vertex-on-other-component: no vertex of the palm may lie
    // inside a finger and vice versa.
    let m = build_capsule_hand(0);
    let inside = m.rest_mesh().contains_points(m.rest_vertices()).unwrap();
    assert!(inside.iter().all(|&x| !x));
}

#[test]
fn contact_spec_defaults() {
    let m = build_capsule_hand(0);
    let c = m.contact().indices();
    assert!(!c.is_empty());
    assert!(c.windows(2).all(|w| w[0] < w[1]));
    assert!(c.iter().all(|&i| i < NUM_VERTICES));
}

#[test]
fn zero_params_reproduce_rest() {
    let m = build_capsule_hand(0);
    let mesh = hand_forward(&m, &HandParams::default()).unwrap();
    assert_eq!(mesh.vertices(), m.rest_vertices());
    assert_eq!(hand_point_cloud(&mesh).points(), m.rest_vertices());
}

#[test]
fn pure_translation() {
    let m = build_capsule_hand(0);
    let mut p = HandParams::default();
    p.set_wrist(Point3::zeros(), Point3::new(0.1, 0.0, 0.0));
    let mesh = hand_forward(&m, &p).unwrap();
    for (a, b) in mesh.vertices().iter().zip(m.rest_vertices()) {
        assert!((a - b - Point3::new(0.1, 0.0, 0.0)).norm() < 1e-12);
    }
}

#[test]
fn wrist_rotation_rotates_rest_mesh() {
    let m = build_capsule_hand(0);
    let r = Point3::new(0.4, -0.7, 1.1);
    let mut p = HandParams::default();
    p.set_wrist(r, Point3::zeros());
    let mesh = hand_forward(&m, &p).unwrap();
    let rot = exp_so3(&r);
    for (a, b) in mesh.vertices().iter().zip(m.rest_vertices()) {
        assert!((a - rot * b).norm() < 1e-12);
    }
}

#[test]
fn rigid_equivariance() {
    let m = build_capsule_hand(0);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..5 {
        let p = random_params(&mut rng);
        let tf = RigidTransform::from_axis_angle(
            &Point3::new(rng.random_range(-2.0..2.0), rng.random(), rng.random()),
            Point3::new(rng.random(), rng.random(), rng.random()),
        );
        let moved = hand_forward(&m, &p.transformed(&tf)).unwrap();
        let base = hand_forward(&m, &p).unwrap();
        for (a, b) in moved.vertices().iter().zip(base.vertices()) {
            assert!((a - tf.apply(b)).norm() < 1e-9);
        }
    }
}

#[test]
fn non_finite_params_rejected() {
    let m = build_capsule_hand(0);
    let mut p = HandParams::default();
    p.0[12] = f64::NAN;
    assert!(hand_forward(&m, &p).is_err());
    assert!(HandParams::from_slice(&[0.0; 60]).is_err());
}

#[test]
fn shape_is_affine_at_zero_pose() {
    let m = build_capsule_hand(0);
    let h = 1e-3;
    for k in 0..NUM_SHAPE {
        let mut plus = HandParams::default();
        let mut minus = HandParams::default();
        plus.0[k] = h;
        minus.0[k] = -h;
        let vp = hand_forward(&m, &plus).unwrap();
        let vm = hand_forward(&m, &minus).unwrap();
        for v in 0..NUM_VERTICES {
            let slope = (vp.vertices()[v] - vm.vertices()[v]) / (2.0 * h);
            assert!((slope - m.shape_basis()[k][v]).norm() < 1e-8);
        }
    }
}

#[test]
fn jacobian_matches_central_differences() {
    let m = build_capsule_hand(0);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let h = 1e-5;
    for trial in 0..3 {
        let p = if trial == 0 {
            HandParams::default()
        } else {
            random_params(&mut rng)
        };
        let (_, jac) = hand_forward_with_jacobian(&m, &p).unwrap();
        for col in 0..NUM_PARAMS {
            let mut plus = p;
            let mut minus = p;
            plus.0[col] += h;
            minus.0[col] -= h;
            let vp = hand_forward(&m, &plus).unwrap();
            let vm = hand_forward(&m, &minus).unwrap();
            let (mut err, mut norm) = (0.0, 0.0);
            for v in 0..NUM_VERTICES {
                let fd = (vp.vertices()[v] - vm.vertices()[v]) / (2.0 * h);
                for a in 0..3 {
                    err += (fd[a] - jac.get(v, a, col)).powi(2);
                    norm += fd[a] * fd[a];
                }
            }
            let rel = err.sqrt() / norm.sqrt().max(1e-12);
            assert!(rel < 1e-4, "trial {trial} param {col}: rel err {rel}");
        }
    }
}

#[test]
fn vertex_order_survives_forward() {
    let m = build_capsule_hand(0);
    let mut p = HandParams::default();
    p.set_wrist(Point3::zeros(), Point3::new(0.0, 0.0, 0.25));
    let cloud = hand_point_cloud(&hand_forward(&m, &p).unwrap());
    assert_eq!(cloud.len(), NUM_VERTICES);
    for (i, q) in cloud.points().iter().enumerate() {
        assert_eq!(*q, m.rest_vertices()[i] + Point3::new(0.0, 0.0, 0.25));
    }
}
