//! Graph nodes for the hand model and the geometric losses.

use std::hash::{DefaultHasher, Hash, Hasher};

use super::{CustomOp, Graph, Tensor, Var};
use crate::diffusion::NormalizationSpec;
use crate::geometry::{nearest_neighbors, Plane, Point3, TriMesh};
use crate::hand::{hand_forward_with_jacobian, HandJacobian, HandMesh, HandModel, NUM_PARAMS};
use crate::losses::{cmap_loss_with_grad, penetration_loss_with_grad, plane_loss_with_grad, PointLossGrad};
use crate::{Error, Result};

/// Scalar op whose local gradient was computed during the forward pass.
struct ScalarOp {
    grad: Vec<f64>,
    signature: u64,
}

impl CustomOp for ScalarOp {
    fn backward(&self, grad_out: &[f64]) -> Vec<Vec<f64>> {
        vec![self.grad.iter().map(|g| g * grad_out[0]).collect()]
    }

    fn signature(&self) -> u64 {
        self.signature
    }
}

struct HandOp {
    jacobian: HandJacobian,
    half: [f64; NUM_PARAMS],
}

impl CustomOp for HandOp {
    fn backward(&self, grad_out: &[f64]) -> Vec<Vec<f64>> {
        let vg: Vec<Point3> = grad_out.chunks_exact(3).map(|c| Point3::new(c[0], c[1], c[2])).collect();
        let gp = self.jacobian.vjp(&vg);
        vec![gp.iter().zip(&self.half).map(|(g, h)| g * h).collect()]
    }
}

fn points_of(t: &Tensor) -> Result<Vec<Point3>> {
    if t.dims2().1 != 3 {
        return Err(Error::ShapeMismatch(format!("expected N×3 points, got {:?}", t.shape())));
    }
    Ok(t.data().chunks_exact(3).map(|c| Point3::new(c[0], c[1], c[2])).collect())
}

fn flatten(points: &[Point3]) -> Vec<f64> {
    points.iter().flat_map(|p| [p.x, p.y, p.z]).collect()
}

fn hash_pairs(active: &[(usize, usize)]) -> u64 {
    let mut h = DefaultHasher::new();
    active.hash(&mut h);
    h.finish()
}

fn push_point_loss(g: &mut Graph, input: Var, r: PointLossGrad) -> Var {
    let op = ScalarOp {
        grad: flatten(&r.grad),
        signature: hash_pairs(&r.active),
    };
    g.custom(&[input], Tensor::scalar(r.value), Box::new(op))
}

/// Posed vertices (`778 × 3`) from a normalized `1 × 61` parameter row.
pub fn hand_vertices(g: &mut Graph, model: &HandModel, spec: &NormalizationSpec, h0: Var) -> Result<(Var, HandMesh)> {
    let params = spec.denormalize(g.value(h0).data())?;
    let (mesh, jacobian) = hand_forward_with_jacobian(model, &params)?;
    let value = Tensor::matrix(mesh.vertices().len(), 3, flatten(mesh.vertices()))?;
    let op = HandOp {
        jacobian,
        half: spec.affine().1,
    };
    Ok((g.custom(&[h0], value, Box::new(op)), mesh))
}

/// Chamfer distance from moving points `pred` (`N × 3`) to a fixed target.
pub fn chamfer_to(g: &mut Graph, pred: Var, target: &[Point3]) -> Result<Var> {
    let a = points_of(g.value(pred))?;
    if a.is_empty() || target.is_empty() {
        return Err(Error::Empty("chamfer input"));
    }
    let fwd = nearest_neighbors(&a, target)?;
    let bwd = nearest_neighbors(target, &a)?;
    let (na, nb) = (a.len() as f64, target.len() as f64);
    let mut grad = vec![Point3::zeros(); a.len()];
    let mut value = 0.0;
    for (i, &(j, d)) in fwd.iter().enumerate() {
        value += d / na;
        grad[i] += 2.0 / na * (a[i] - target[j]);
    }
    let mut back = 0.0;
    for (j, &(i, d)) in bwd.iter().enumerate() {
        back += d / nb;
        grad[i] += 2.0 / nb * (a[i] - target[j]);
    }
    let mut pairs: Vec<(usize, usize)> = fwd.iter().enumerate().map(|(i, &(j, _))| (i, j)).collect();
    pairs.extend(bwd.iter().enumerate().map(|(j, &(i, _))| (j, i)));
    let r = PointLossGrad {
        value: value + back,
        grad,
        active: pairs,
    };
    Ok(push_point_loss(g, pred, r))
}

/// Contact loss with the hand's contact vertices moving.
pub fn cmap_op(g: &mut Graph, vertices: Var, contact: &[usize], object: &[Point3], threshold: f64) -> Result<Var> {
    let v = points_of(g.value(vertices))?;
    let pts: Vec<Point3> = contact.iter().map(|&i| v[i]).collect();
    let r = cmap_loss_with_grad(&pts, object, threshold)?;
    let mut grad = vec![Point3::zeros(); v.len()];
    for (k, &i) in contact.iter().enumerate() {
        grad[i] += r.grad[k];
    }
    let r = PointLossGrad { grad, ..r };
    Ok(push_point_loss(g, vertices, r))
}

/// Penetration loss of fixed object points against the moving hand.
pub fn penetration_op(g: &mut Graph, vertices: Var, faces: &[[usize; 3]], object: &[Point3]) -> Result<Var> {
    let v = points_of(g.value(vertices))?;
    let mesh = TriMesh::new(v, faces.to_vec())?;
    let r = penetration_loss_with_grad(object, &mesh)?;
    Ok(push_point_loss(g, vertices, r))
}

/// Plane loss of the moving hand vertices.
pub fn plane_op(g: &mut Graph, vertices: Var, plane: &Plane) -> Result<Var> {
    let v = points_of(g.value(vertices))?;
    let r = plane_loss_with_grad(&v, plane);
    Ok(push_point_loss(g, vertices, r))
}

/// Mean squared distance of moving vertices to fixed targets.
pub fn vertex_mse(g: &mut Graph, vertices: Var, target: &[Point3]) -> Result<Var> {
    let t = g.input(Tensor::matrix(target.len(), 3, flatten(target))?);
    let d = g.sub(vertices, t)?;
    let sq = g.square(d);
    let s = g.sum(sq);
    Ok(g.scale(s, 1.0 / target.len().max(1) as f64))
}

pub(crate) fn points_tensor(points: &[Point3]) -> Tensor {
    Tensor::matrix(points.len(), 3, flatten(points)).expect("sized")
}
