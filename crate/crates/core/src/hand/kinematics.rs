use nalgebra::Matrix3;

use super::{HandMesh, HandModel, HandParams, NUM_JOINTS, NUM_PARAMS, NUM_SHAPE, NUM_VERTICES, POSE_RANGE, ROT_RANGE, TRANS_RANGE};
use crate::geometry::rotation::{exp_so3, exp_so3_with_jacobian};
use crate::geometry::Point3;
use crate::Result;

/// Dense Jacobian of the 778×3 vertex coordinates with respect to the 61
/// parameters, row-major over `(vertex, axis)`.
#[derive(Debug, Clone)]
pub struct HandJacobian {
    data: Vec<f64>,
}

impl HandJacobian {
    fn zeros() -> Self {
        HandJacobian {
            data: vec![0.0; NUM_VERTICES * 3 * NUM_PARAMS],
        }
    }

    /// d vertex[v][axis] / d param[p].
    pub fn get(&self, v: usize, axis: usize, p: usize) -> f64 {
        self.data[(3 * v + axis) * NUM_PARAMS + p]
    }

    fn add_column(&mut self, p: usize, v: usize, d: &Point3) {
        let base = 3 * v * NUM_PARAMS + p;
        self.data[base] += d.x;
        self.data[base + NUM_PARAMS] += d.y;
        self.data[base + 2 * NUM_PARAMS] += d.z;
    }

    /// Gradient with respect to parameters given per-vertex gradients.
    pub fn vjp(&self, vertex_grad: &[Point3]) -> [f64; NUM_PARAMS] {
        let mut out = [0.0; NUM_PARAMS];
        for (v, g) in vertex_grad.iter().enumerate() {
            for axis in 0..3 {
                let gv = g[axis];
                if gv == 0.0 {
                    continue;
                }
                let row = &self.data[(3 * v + axis) * NUM_PARAMS..(3 * v + axis + 1) * NUM_PARAMS];
                for (o, &j) in out.iter_mut().zip(row) {
                    *o += j * gv;
                }
            }
        }
        out
    }
}

struct Posed {
    shaped: Vec<Point3>,
    joints: [Point3; NUM_JOINTS],
    local: [Matrix3<f64>; NUM_JOINTS],
    local_d: [[Matrix3<f64>; 3]; NUM_JOINTS],
    rot: [Matrix3<f64>; NUM_JOINTS],
    lbs: Vec<Point3>,
    wrist: Matrix3<f64>,
    wrist_d: [Matrix3<f64>; 3],
}

fn pose(model: &HandModel, params: &HandParams, with_derivatives: bool) -> Posed {
    let beta = params.shape();
    let mut shaped = model.rest_vertices.clone();
    let mut joints = model.rest_joints;
    for (k, &b) in beta.iter().enumerate() {
        if b == 0.0 {
            continue;
        }
        for (v, d) in shaped.iter_mut().zip(&model.shape_basis[k]) {
            *v += d * b;
        }
        for (j, d) in joints.iter_mut().zip(&model.joint_basis[k]) {
            *j += d * b;
        }
    }

    let mut local = [Matrix3::identity(); NUM_JOINTS];
    let mut local_d = [[Matrix3::zeros(); 3]; NUM_JOINTS];
    for j in 1..NUM_JOINTS {
        let aa = params.joint_pose(j - 1);
        if with_derivatives {
            let (r, dr) = exp_so3_with_jacobian(&aa);
            local[j] = r;
            local_d[j] = dr;
        } else {
            local[j] = exp_so3(&aa);
        }
    }

    let mut rot = [Matrix3::identity(); NUM_JOINTS];
    let mut trans = [Point3::zeros(); NUM_JOINTS];
    trans[0] = joints[0];
    for j in 1..NUM_JOINTS {
        let p = model.parents[j].expect("non-root joint has a parent");
        rot[j] = rot[p] * local[j];
        trans[j] = rot[p] * (joints[j] - joints[p]) + trans[p];
    }

    let lbs = shaped
        .iter()
        .zip(&model.sparse_weights)
        .map(|(v, ws)| ws.iter().map(|&(j, w)| (rot[j] * (v - joints[j]) + trans[j]) * w).sum())
        .collect();

    let wrist_aa = params.wrist_rotation();
    let (wrist, wrist_d) = if with_derivatives {
        exp_so3_with_jacobian(&wrist_aa)
    } else {
        (exp_so3(&wrist_aa), [Matrix3::zeros(); 3])
    };

    Posed {
        shaped,
        joints,
        local,
        local_d,
        rot,
        lbs,
        wrist,
        wrist_d,
    }
}

fn finish(model: &HandModel, posed: &Posed, params: &HandParams) -> HandMesh {
    let t = params.wrist_translation();
    let verts = posed.lbs.iter().map(|v| posed.wrist * v + t).collect();
    HandMesh::new(verts, &model.faces)
}

/// Posed hand mesh for `params`.
pub fn hand_forward(model: &HandModel, params: &HandParams) -> Result<HandMesh> {
    params.validate()?;
    let posed = pose(model, params, false);
    Ok(finish(model, &posed, params))
}

/// Posed mesh plus the analytic vertex Jacobian.
pub fn hand_forward_with_jacobian(model: &HandModel, params: &HandParams) -> Result<(HandMesh, HandJacobian)> {
    params.validate()?;
    let posed = pose(model, params, true);
    let mesh = finish(model, &posed, params);
    let mut jac = HandJacobian::zeros();
    let parents = &model.parents;

    // Shape: rest vertices and joints move, rotations do not.
    for k in 0..NUM_SHAPE {
        let dj = &model.joint_basis[k];
        let mut dtrans = [Point3::zeros(); NUM_JOINTS];
        dtrans[0] = dj[0];
        for j in 1..NUM_JOINTS {
            let p = parents[j].expect("parent");
            dtrans[j] = posed.rot[p] * (dj[j] - dj[p]) + dtrans[p];
        }
        for (v, ws) in model.sparse_weights.iter().enumerate() {
            let dv = model.shape_basis[k][v];
            let d: Point3 = ws.iter().map(|&(j, w)| (posed.rot[j] * (dv - dj[j]) + dtrans[j]) * w).sum();
            jac.add_column(k, v, &(posed.wrist * d));
        }
    }

    // Pose: joint `j` perturbs its own subtree only.
    for j in 1..NUM_JOINTS {
        let pj = parents[j].expect("parent");
        let in_subtree = subtree(parents, j);
        for axis in 0..3 {
            let mut drot = [Matrix3::zeros(); NUM_JOINTS];
            let mut dtrans = [Point3::zeros(); NUM_JOINTS];
            drot[j] = posed.rot[pj] * posed.local_d[j][axis];
            for k in j + 1..NUM_JOINTS {
                if !in_subtree[k] {
                    continue;
                }
                let p = parents[k].expect("parent");
                drot[k] = drot[p] * posed.local[k];
                dtrans[k] = drot[p] * (posed.joints[k] - posed.joints[p]) + dtrans[p];
            }
            let col = POSE_RANGE.start + 3 * (j - 1) + axis;
            for (v, ws) in model.sparse_weights.iter().enumerate() {
                if !ws.iter().any(|&(k, _)| in_subtree[k]) {
                    continue;
                }
                let vs = posed.shaped[v];
                let d: Point3 = ws
                    .iter()
                    .filter(|&&(k, _)| in_subtree[k])
                    .map(|&(k, w)| (drot[k] * (vs - posed.joints[k]) + dtrans[k]) * w)
                    .sum();
                jac.add_column(col, v, &(posed.wrist * d));
            }
        }
    }

    for axis in 0..3 {
        let col = ROT_RANGE.start + axis;
        for (v, l) in posed.lbs.iter().enumerate() {
            jac.add_column(col, v, &(posed.wrist_d[axis] * l));
        }
        let col = TRANS_RANGE.start + axis;
        let e = Point3::ith(axis, 1.0);
        for v in 0..NUM_VERTICES {
            jac.add_column(col, v, &e);
        }
    }
    Ok((mesh, jac))
}

fn subtree(parents: &[Option<usize>; NUM_JOINTS], root: usize) -> [bool; NUM_JOINTS] {
    let mut mark = [false; NUM_JOINTS];
    mark[root] = true;
    for k in root + 1..NUM_JOINTS {
        if let Some(p) = parents[k] {
            mark[k] = mark[p];
        }
    }
    mark
}
