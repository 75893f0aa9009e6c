//! Procedural articulated hand with a 61-dimensional parameter vector.
//!
//! The parameter layout is `[shape β ×10, pose θ ×45, wrist rotation ×3,
//! wrist translation ×3]`. Pose entries are axis-angle rotations of the 15
//! finger joints expressed in the rest frame. Vertices are produced by linear
//! blend skinning of the shaped rest mesh followed by the wrist rigid motion,
//! so the wrist sits at the origin of the rest frame.

mod build;
mod kinematics;

pub use build::build_capsule_hand;
pub use kinematics::{hand_forward, hand_forward_with_jacobian, HandJacobian};

use crate::geometry::{Point3, PointSet, RigidTransform, TriMesh};
use crate::{Error, Result};

pub const NUM_VERTICES: usize = 778;
pub const NUM_JOINTS: usize = 16;
pub const NUM_SHAPE: usize = 10;
pub const NUM_POSE: usize = 45;
pub const NUM_PARAMS: usize = 61;

/// Offsets of each parameter group in the flattened vector.
pub const SHAPE_RANGE: std::ops::Range<usize> = 0..10;
pub const POSE_RANGE: std::ops::Range<usize> = 10..55;
pub const ROT_RANGE: std::ops::Range<usize> = 55..58;
pub const TRANS_RANGE: std::ops::Range<usize> = 58..61;

/// Hand grasp parameters, stored flat in `[β, θ, R, T]` order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HandParams(pub [f64; NUM_PARAMS]);

impl Default for HandParams {
    fn default() -> Self {
        HandParams([0.0; NUM_PARAMS])
    }
}

impl HandParams {
    pub fn from_slice(values: &[f64]) -> Result<Self> {
        if values.len() != NUM_PARAMS {
            return Err(Error::LengthMismatch {
                expected: NUM_PARAMS,
                got: values.len(),
            });
        }
        let mut out = [0.0; NUM_PARAMS];
        out.copy_from_slice(values);
        let params = HandParams(out);
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if self.0.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite("hand parameters"))
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn shape(&self) -> &[f64] {
        &self.0[SHAPE_RANGE]
    }

    /// Axis-angle of finger joint `j` in `0..15`.
    pub fn joint_pose(&self, j: usize) -> Point3 {
        let o = POSE_RANGE.start + 3 * j;
        Point3::new(self.0[o], self.0[o + 1], self.0[o + 2])
    }

    pub fn set_joint_pose(&mut self, j: usize, v: Point3) {
        let o = POSE_RANGE.start + 3 * j;
        self.0[o..o + 3].copy_from_slice(v.as_slice());
    }

    pub fn wrist_rotation(&self) -> Point3 {
        Point3::from_column_slice(&self.0[ROT_RANGE])
    }

    pub fn wrist_translation(&self) -> Point3 {
        Point3::from_column_slice(&self.0[TRANS_RANGE])
    }

    pub fn set_wrist(&mut self, rotation: Point3, translation: Point3) {
        self.0[ROT_RANGE].copy_from_slice(rotation.as_slice());
        self.0[TRANS_RANGE].copy_from_slice(translation.as_slice());
    }

    /// Applies `tf` after the current wrist motion. Because the wrist rotates
    /// about the rest-frame origin, the posed mesh moves rigidly with `tf`.
    pub fn transformed(&self, tf: &RigidTransform) -> HandParams {
        let wrist = RigidTransform::from_axis_angle(&self.wrist_rotation(), self.wrist_translation());
        let moved = tf.compose(&wrist);
        let mut out = *self;
        out.set_wrist(crate::geometry::rotation::log_so3(&moved.rotation), moved.translation);
        out
    }
}

/// Vertex indices used as hand contact points.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContactSpec(Vec<usize>);

impl ContactSpec {
    pub fn new(mut indices: Vec<usize>) -> Result<Self> {
        indices.sort_unstable();
        indices.dedup();
        if indices.is_empty() || indices.iter().any(|&i| i >= NUM_VERTICES) {
            return Err(Error::Config("contact indices must be non-empty and < 778".into()));
        }
        Ok(Self(indices))
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }
}

/// Kinematic tree, skinning data and shape basis.
#[derive(Debug, Clone, PartialEq)]
pub struct HandModel {
    pub(crate) rest_vertices: Vec<Point3>,
    pub(crate) faces: Vec<[usize; 3]>,
    pub(crate) parents: [Option<usize>; NUM_JOINTS],
    pub(crate) rest_joints: [Point3; NUM_JOINTS],
    /// Dense 778×16 skinning weights.
    pub(crate) weights: Vec<[f64; NUM_JOINTS]>,
    /// Per shape coefficient, one displacement per vertex.
    pub(crate) shape_basis: Vec<Vec<Point3>>,
    /// Per shape coefficient, one displacement per joint.
    pub(crate) joint_basis: Vec<[Point3; NUM_JOINTS]>,
    pub(crate) contact: ContactSpec,
    /// Non-zero weights per vertex, derived from `weights`.
    pub(crate) sparse_weights: Vec<Vec<(usize, f64)>>,
}

impl HandModel {
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        rest_vertices: Vec<Point3>,
        faces: Vec<[usize; 3]>,
        parents: [Option<usize>; NUM_JOINTS],
        rest_joints: [Point3; NUM_JOINTS],
        weights: Vec<[f64; NUM_JOINTS]>,
        shape_basis: Vec<Vec<Point3>>,
        joint_basis: Vec<[Point3; NUM_JOINTS]>,
        contact: ContactSpec,
    ) -> Result<Self> {
        if rest_vertices.len() != NUM_VERTICES || weights.len() != NUM_VERTICES {
            return Err(Error::LengthMismatch {
                expected: NUM_VERTICES,
                got: rest_vertices.len().min(weights.len()),
            });
        }
        if shape_basis.len() != NUM_SHAPE || joint_basis.len() != NUM_SHAPE || shape_basis.iter().any(|b| b.len() != NUM_VERTICES) {
            return Err(Error::ShapeMismatch("shape basis must be 10×778".into()));
        }
        if parents[0].is_some() || (1..NUM_JOINTS).any(|j| parents[j].is_none_or(|p| p >= j)) {
            return Err(Error::Config(
                "joint tree must be rooted at the wrist and topologically ordered".into(),
            ));
        }
        for w in &weights {
            let sum: f64 = w.iter().sum();
            if w.iter().any(|&x| x.is_nan() || x < 0.0) || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Config("skinning weights must be non-negative and sum to 1".into()));
            }
        }
        TriMesh::new(rest_vertices.clone(), faces.clone())?;
        let sparse_weights = weights
            .iter()
            .map(|w| w.iter().enumerate().filter(|(_, &x)| x != 0.0).map(|(j, &x)| (j, x)).collect())
            .collect();
        Ok(Self {
            rest_vertices,
            faces,
            parents,
            rest_joints,
            weights,
            shape_basis,
            joint_basis,
            contact,
            sparse_weights,
        })
    }

    pub fn rest_vertices(&self) -> &[Point3] {
        &self.rest_vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn parents(&self) -> &[Option<usize>; NUM_JOINTS] {
        &self.parents
    }

    pub fn rest_joints(&self) -> &[Point3; NUM_JOINTS] {
        &self.rest_joints
    }

    pub fn weights(&self) -> &[[f64; NUM_JOINTS]] {
        &self.weights
    }

    pub fn shape_basis(&self) -> &[Vec<Point3>] {
        &self.shape_basis
    }

    pub fn joint_basis(&self) -> &[[Point3; NUM_JOINTS]] {
        &self.joint_basis
    }

    pub fn contact(&self) -> &ContactSpec {
        &self.contact
    }

    pub fn with_contact(mut self, contact: ContactSpec) -> Self {
        self.contact = contact;
        self
    }

    pub fn rest_mesh(&self) -> TriMesh {
        TriMesh::from_parts_unchecked(self.rest_vertices.clone(), self.faces.clone())
    }
}

/// Posed hand surface.
#[derive(Debug, Clone, PartialEq)]
pub struct HandMesh {
    mesh: TriMesh,
}

impl HandMesh {
    pub(crate) fn new(vertices: Vec<Point3>, faces: &[[usize; 3]]) -> Self {
        HandMesh {
            mesh: TriMesh::from_parts_unchecked(vertices, faces.to_vec()),
        }
    }

    pub fn vertices(&self) -> &[Point3] {
        self.mesh.vertices()
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        self.mesh.faces()
    }

    pub fn mesh(&self) -> &TriMesh {
        &self.mesh
    }

    pub fn into_mesh(self) -> TriMesh {
        self.mesh
    }

    pub fn contact_points(&self, spec: &ContactSpec) -> Vec<Point3> {
        spec.indices().iter().map(|&i| self.vertices()[i]).collect()
    }
}

/// The posed vertices as an ordered point set.
pub fn hand_point_cloud(mesh: &HandMesh) -> PointSet {
    PointSet::from(mesh.vertices().to_vec())
}

#[cfg(test)]
mod tests;
