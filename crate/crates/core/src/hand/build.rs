use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ContactSpec, HandModel, NUM_JOINTS, NUM_SHAPE, NUM_VERTICES};
use crate::geometry::Point3;

const PALM_RINGS: usize = 13;
const PALM_SEGMENTS: usize = 22;
const FINGER_RINGS: usize = 12;
const RING_VERTS: usize = 8;
const BLEND_HALF_WIDTH: f64 = 0.006;
const WEIGHT_QUANTUM: f64 = 1024.0;

struct FingerSpec {
    base: Point3,
    dir: Point3,
    lengths: [f64; 3],
    radius: f64,
    /// Joint ids of the MCP, PIP and DIP joints.
    joints: [usize; 3],
}

fn finger_specs() -> [FingerSpec; 5] {
    let y = Point3::y();
    [
        FingerSpec {
            base: Point3::new(0.030, 0.098, 0.0),
            dir: y,
            lengths: [0.040, 0.025, 0.020],
            radius: 0.0090,
            joints: [1, 2, 3],
        },
        FingerSpec {
            base: Point3::new(0.010, 0.098, 0.0),
            dir: y,
            lengths: [0.045, 0.028, 0.022],
            radius: 0.0095,
            joints: [4, 5, 6],
        },
        FingerSpec {
            base: Point3::new(-0.030, 0.098, 0.0),
            dir: y,
            lengths: [0.032, 0.020, 0.018],
            radius: 0.0080,
            joints: [7, 8, 9],
        },
        FingerSpec {
            base: Point3::new(-0.010, 0.098, 0.0),
            dir: y,
            lengths: [0.042, 0.026, 0.021],
            radius: 0.0090,
            joints: [10, 11, 12],
        },
        FingerSpec {
            base: Point3::new(0.056, 0.022, -0.004),
            dir: Point3::new(0.75, 0.55, -0.35).normalize(),
            lengths: [0.035, 0.030, 0.024],
            radius: 0.0105,
            joints: [13, 14, 15],
        },
    ]
}

fn f32_round(p: Point3) -> Point3 {
    p.map(|c| c as f32 as f64)
}

fn quantize(t: f64) -> f64 {
    (t.clamp(0.0, 1.0) * WEIGHT_QUANTUM).round() / WEIGHT_QUANTUM
}

/// Cumulative blend coefficient across a joint boundary at arc length `b`.
fn blend(s: f64, b: f64) -> f64 {
    quantize((s - (b - BLEND_HALF_WIDTH)) / (2.0 * BLEND_HALF_WIDTH))
}

struct Component {
    first: usize,
    count: usize,
    faces: Vec<[usize; 3]>,
}

/// Reverses a component's winding when its enclosed volume comes out negative.
fn orient_outward(verts: &[Point3], comp: &mut Component) {
    let vol: f64 = comp.faces.iter().map(|&[a, b, c]| verts[a].dot(&verts[b].cross(&verts[c]))).sum();
    if vol < 0.0 {
        for f in &mut comp.faces {
            f.swap(1, 2);
        }
    }
}

fn build_palm(verts: &mut Vec<Point3>) -> Component {
    let first = verts.len();
    let center = Point3::new(0.0, 0.045, 0.0);
    let half = Point3::new(0.042, 0.048, 0.013);
    let boxify = |s: Point3| -> Point3 {
        let q = s.map(|c| c.signum() * c.abs().powf(0.35));
        center + half.component_mul(&q)
    };
    verts.push(boxify(Point3::new(0.0, -1.0, 0.0)));
    for i in 0..PALM_RINGS {
        let phi = std::f64::consts::PI * (PALM_RINGS - i) as f64 / (PALM_RINGS + 1) as f64;
        for j in 0..PALM_SEGMENTS {
            let lam = std::f64::consts::TAU * j as f64 / PALM_SEGMENTS as f64;
            let s = Point3::new(phi.sin() * lam.cos(), phi.cos(), phi.sin() * lam.sin());
            verts.push(boxify(s));
        }
    }
    verts.push(boxify(Point3::new(0.0, 1.0, 0.0)));
    let ring = |i: usize, j: usize| first + 1 + i * PALM_SEGMENTS + (j % PALM_SEGMENTS);
    let south = first;
    let north = first + 1 + PALM_RINGS * PALM_SEGMENTS;
    let mut faces = Vec::new();
    for j in 0..PALM_SEGMENTS {
        faces.push([south, ring(0, j + 1), ring(0, j)]);
        faces.push([north, ring(PALM_RINGS - 1, j), ring(PALM_RINGS - 1, j + 1)]);
    }
    for i in 0..PALM_RINGS - 1 {
        for j in 0..PALM_SEGMENTS {
            faces.push([ring(i, j), ring(i, j + 1), ring(i + 1, j + 1)]);
            faces.push([ring(i, j), ring(i + 1, j + 1), ring(i + 1, j)]);
        }
    }
    Component {
        first,
        count: verts.len() - first,
        faces,
    }
}

/// Capped tube along the finger axis. Returns the component and each
/// vertex's arc-length coordinate measured from the MCP joint.
fn build_finger(verts: &mut Vec<Point3>, spec: &FingerSpec) -> (Component, Vec<f64>) {
    let first = verts.len();
    let total: f64 = spec.lengths.iter().sum();
    let d = spec.dir;
    let u2 = (Point3::z() - d * d.z).normalize();
    let u1 = u2.cross(&d);
    let radius_at = |s: f64| spec.radius * (1.0 - 0.2 * s / total);
    let mut arc = Vec::new();

    let base_apex = -0.3 * spec.radius;
    verts.push(spec.base + d * base_apex);
    arc.push(base_apex);
    for i in 0..FINGER_RINGS {
        let s = total * i as f64 / (FINGER_RINGS - 1) as f64;
        let r = radius_at(s);
        for k in 0..RING_VERTS {
            let a = std::f64::consts::TAU * k as f64 / RING_VERTS as f64;
            verts.push(spec.base + d * s + (u1 * a.cos() + u2 * a.sin()) * r);
            arc.push(s);
        }
    }
    let tip_apex = total + 0.8 * radius_at(total);
    verts.push(spec.base + d * tip_apex);
    arc.push(tip_apex);

    let ring = |i: usize, k: usize| first + 1 + i * RING_VERTS + (k % RING_VERTS);
    let base = first;
    let tip = verts.len() - 1;
    let mut faces = Vec::new();
    for k in 0..RING_VERTS {
        faces.push([base, ring(0, k + 1), ring(0, k)]);
        faces.push([tip, ring(FINGER_RINGS - 1, k), ring(FINGER_RINGS - 1, k + 1)]);
    }
    for i in 0..FINGER_RINGS - 1 {
        for k in 0..RING_VERTS {
            faces.push([ring(i, k), ring(i, k + 1), ring(i + 1, k + 1)]);
            faces.push([ring(i, k), ring(i + 1, k + 1), ring(i + 1, k)]);
        }
    }
    (
        Component {
            first,
            count: verts.len() - first,
            faces,
        },
        arc,
    )
}

/// Smooth low-frequency displacement field: a sum of three seeded sinusoids.
struct SmoothField {
    terms: Vec<(Point3, Point3, f64)>,
}

impl SmoothField {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let terms = (0..3)
            .map(|_| {
                let amp = Point3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ) * 8e-4;
                let dir = Point3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                )
                .normalize();
                let freq = rng.random_range(10.0..30.0);
                let phase = rng.random_range(0.0..std::f64::consts::TAU);
                (amp, dir * freq, phase)
            })
            .collect();
        SmoothField { terms }
    }

    fn eval(&self, p: &Point3) -> Point3 {
        self.terms.iter().map(|(amp, w, phase)| amp * (w.dot(p) + phase).sin()).sum()
    }
}

/// Deterministic procedural hand: a rounded palm plus five three-segment
/// capped finger tubes, 778 vertices in total, 16 joints in MANO order
/// (wrist, index, middle, pinky, ring, thumb). All stored reals are
/// f32-representable so the model survives serialization unchanged.
pub fn build_capsule_hand(seed: u64) -> HandModel {
    let mut verts = Vec::with_capacity(NUM_VERTICES);
    let mut weights = Vec::with_capacity(NUM_VERTICES);
    let mut faces = Vec::new();

    let mut palm = build_palm(&mut verts);
    orient_outward(&verts, &mut palm);
    faces.extend(&palm.faces);
    // Palm vertices follow the wrist rigidly.
    for _ in 0..palm.count {
        let mut w = [0.0; NUM_JOINTS];
        w[0] = 1.0;
        weights.push(w);
    }
    let palm_range = palm.first..palm.first + palm.count;

    let specs = finger_specs();
    let mut rest_joints = [Point3::zeros(); NUM_JOINTS];
    let mut parents = [None; NUM_JOINTS];
    let mut finger_ranges = Vec::new();
    let mut tips = Vec::new();
    for spec in &specs {
        let [j1, j2, j3] = spec.joints;
        rest_joints[j1] = spec.base;
        rest_joints[j2] = spec.base + spec.dir * spec.lengths[0];
        rest_joints[j3] = spec.base + spec.dir * (spec.lengths[0] + spec.lengths[1]);
        parents[j1] = Some(0);
        parents[j2] = Some(j1);
        parents[j3] = Some(j2);

        let (mut comp, arc) = build_finger(&mut verts, spec);
        orient_outward(&verts, &mut comp);
        faces.extend(&comp.faces);
        let b1 = spec.lengths[0];
        let b2 = spec.lengths[0] + spec.lengths[1];
        for &s in &arc {
            let (t0, t1, t2) = (blend(s, 0.0), blend(s, b1), blend(s, b2));
            let mut w = [0.0; NUM_JOINTS];
            w[0] = 1.0 - t0;
            w[j1] = t0 - t1;
            w[j2] = t1 - t2;
            w[j3] = t2;
            weights.push(w);
        }
        finger_ranges.push(comp.first..comp.first + comp.count);
        tips.push(verts[comp.first + comp.count - 1]);
    }
    debug_assert_eq!(verts.len(), NUM_VERTICES);

    let verts: Vec<Point3> = verts.into_iter().map(f32_round).collect();
    let rest_joints = rest_joints.map(f32_round);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fields: Vec<SmoothField> = (0..NUM_SHAPE).map(|_| SmoothField::random(&mut rng)).collect();
    let shape_basis: Vec<Vec<Point3>> = fields
        .iter()
        .map(|f| verts.iter().map(|p| f32_round(f.eval(p))).collect())
        .collect();
    let joint_basis: Vec<[Point3; NUM_JOINTS]> = fields.iter().map(|f| rest_joints.map(|j| f32_round(f.eval(&j)))).collect();

    let contact = default_contact(&verts, palm_range, &finger_ranges, &tips);
    HandModel::from_parts(verts, faces, parents, rest_joints, weights, shape_basis, joint_basis, contact)
        .expect("procedural hand satisfies model invariants")
}

/// The tenth of each finger's vertices nearest its tip, plus a patch on the
/// palm's inner face.
fn default_contact(verts: &[Point3], palm: std::ops::Range<usize>, fingers: &[std::ops::Range<usize>], tips: &[Point3]) -> ContactSpec {
    let mut out = Vec::new();
    for (range, tip) in fingers.iter().zip(tips) {
        let mut idx: Vec<usize> = range.clone().collect();
        idx.sort_by(|&a, &b| {
            (verts[a] - tip)
                .norm_squared()
                .total_cmp(&(verts[b] - tip).norm_squared())
                .then(a.cmp(&b))
        });
        let take = range.len().div_ceil(10);
        out.extend_from_slice(&idx[..take]);
    }
    out.extend(palm.filter(|&i| {
        let p = verts[i];
        p.z < -0.010 && p.x.abs() < 0.028 && (p.y - 0.05).abs() < 0.032
    }));
    ContactSpec::new(out).expect("contact patch is non-empty")
}
