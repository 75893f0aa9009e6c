//! Synthetic single-view scenes: camera ring, depth rasterization,
//! backprojection, point sampling, resting poses and grasp annotation.

use nalgebra::{Matrix3, Rotation3, Unit};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{convex_hull, Plane, Point3, PointSet, RigidTransform, TriMesh};
use crate::hand::{hand_forward, HandModel, HandParams};
use crate::{Error, Result};

pub const LABEL_TABLE: u8 = 0;
pub const LABEL_OBJECT: u8 = 1;
/// Label of pixels that see nothing.
pub const LABEL_NONE: u8 = 255;
/// Depth value of pixels that see nothing.
pub const INVALID_DEPTH: f64 = 0.0;

/// Pinhole intrinsics; pixel `(u, v)` has its center at the integer index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub near: f64,
    pub far: f64,
}

impl Default for Intrinsics {
    fn default() -> Self {
        Intrinsics {
            fx: 309.0,
            fy: 309.0,
            cx: 128.0,
            cy: 128.0,
            width: 256,
            height: 256,
            near: 0.01,
            far: 10.0,
        }
    }
}

impl Intrinsics {
    /// Camera-frame ray through pixel `(u, v)`, scaled to unit depth.
    pub fn ray(&self, u: usize, v: usize) -> Point3 {
        Point3::new((u as f64 - self.cx) / self.fx, (v as f64 - self.cy) / self.fy, 1.0)
    }
}

/// Camera-to-world pose (x right, y down, z along the optical axis).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub pose: RigidTransform,
    pub intrinsics: Intrinsics,
}

impl Camera {
    /// Camera at `eye` looking at `target`, with image "up" towards +z.
    pub fn look_at(eye: Point3, target: Point3, intrinsics: Intrinsics) -> Result<Self> {
        let f = target - eye;
        if f.norm() < 1e-12 {
            return Err(Error::Config("camera eye coincides with target".into()));
        }
        let f = f.normalize();
        let mut right = f.cross(&Point3::z());
        if right.norm() < 1e-9 {
            right = Point3::x();
        }
        let right = right.normalize();
        let down = f.cross(&right);
        let rot = Matrix3::from_columns(&[right, down, f]);
        Ok(Camera {
            pose: RigidTransform::new(rot, eye)?,
            intrinsics,
        })
    }

    pub fn position(&self) -> Point3 {
        self.pose.translation
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraRingConfig {
    pub heights: Vec<f64>,
    pub cameras_per_ring: usize,
    pub spacing_deg: f64,
    pub radius: f64,
    pub look_at: [f64; 3],
    pub intrinsics: Intrinsics,
}

impl Default for CameraRingConfig {
    fn default() -> Self {
        CameraRingConfig {
            heights: vec![0.25, 0.45, 0.65],
            cameras_per_ring: 12,
            spacing_deg: 30.0,
            radius: 0.5,
            look_at: [0.0; 3],
            intrinsics: Intrinsics::default(),
        }
    }
}

/// Cameras ordered ring-major, then by angle.
pub fn camera_ring(config: &CameraRingConfig) -> Result<Vec<Camera>> {
    if config.radius <= 0.0 || !config.radius.is_finite() {
        return Err(Error::Config("camera ring radius must be positive".into()));
    }
    if config.heights.iter().any(|&h| h <= 0.0) {
        return Err(Error::Config("camera heights must be positive".into()));
    }
    if (config.cameras_per_ring as f64 * config.spacing_deg - 360.0).abs() > 1e-9 {
        return Err(Error::Config("cameras per ring × spacing must be 360°".into()));
    }
    let target = Point3::from(config.look_at);
    let mut cams = Vec::with_capacity(config.heights.len() * config.cameras_per_ring);
    for &h in &config.heights {
        for k in 0..config.cameras_per_ring {
            let a = (k as f64 * config.spacing_deg).to_radians();
            let eye = target + Point3::new(config.radius * a.cos(), config.radius * a.sin(), h);
            cams.push(Camera::look_at(eye, target, config.intrinsics)?);
        }
    }
    Ok(cams)
}

/// Row-major depth map in meters; [`INVALID_DEPTH`] marks background.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    pub width: usize,
    pub height: usize,
    pub depth: Vec<f64>,
}

impl DepthImage {
    pub fn at(&self, u: usize, v: usize) -> f64 {
        self.depth[v * self.width + u]
    }

    pub fn valid_count(&self) -> usize {
        self.depth.iter().filter(|&&d| d != INVALID_DEPTH).count()
    }
}

/// World-space triangle with a label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledTriangle {
    pub vertices: [Point3; 3],
    pub label: u8,
}

/// Z-buffer rasterization: each pixel keeps the nearest hit of its
/// center ray. Returns depth and the label image.
pub fn rasterize(triangles: &[LabeledTriangle], camera: &Camera) -> (DepthImage, Vec<u8>) {
    let k = camera.intrinsics;
    let (w, h) = (k.width, k.height);
    let mut depth = vec![f64::INFINITY; w * h];
    let mut labels = vec![LABEL_NONE; w * h];
    let inv = camera.pose.inverse();
    for tri in triangles {
        let c = tri.vertices.map(|p| inv.apply(&p));
        let (u0, u1, v0, v1) = if c.iter().all(|p| p.z > k.near) {
            let uv = c.map(|p| (k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy));
            let umin = uv.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
            let umax = uv.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
            let vmin = uv.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
            let vmax = uv.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
            if umax < 0.0 || vmax < 0.0 || umin > (w - 1) as f64 || vmin > (h - 1) as f64 {
                continue;
            }
            (
                umin.floor().max(0.0) as usize,
                (umax.ceil() as usize).min(w - 1),
                vmin.floor().max(0.0) as usize,
                (vmax.ceil() as usize).min(h - 1),
            )
        } else if c.iter().all(|p| p.z <= k.near) {
            continue;
        } else {
            (0, w - 1, 0, h - 1)
        };
        for v in v0..=v1 {
            for u in u0..=u1 {
                let d = k.ray(u, v);
                if let Some(z) = ray_triangle(&d, &c) {
                    let i = v * w + u;
                    if z > k.near && z < k.far && z < depth[i] {
                        depth[i] = z;
                        labels[i] = tri.label;
                    }
                }
            }
        }
    }
    for d in &mut depth {
        if !d.is_finite() {
            *d = INVALID_DEPTH;
        }
    }
    (
        DepthImage {
            width: w,
            height: h,
            depth,
        },
        labels,
    )
}

/// Depth along a ray from the origin with `dir.z = 1`; edges are inclusive.
fn ray_triangle(dir: &Point3, t: &[Point3; 3]) -> Option<f64> {
    let e1 = t[1] - t[0];
    let e2 = t[2] - t[0];
    let p = dir.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-18 {
        return None;
    }
    let inv = 1.0 / det;
    let s = -t[0];
    let a = s.dot(&p) * inv;
    let eps = 1e-9;
    if a < -eps || a > 1.0 + eps {
        return None;
    }
    let q = s.cross(&e1);
    let b = dir.dot(&q) * inv;
    if b < -eps || a + b > 1.0 + eps {
        return None;
    }
    let dist = e2.dot(&q) * inv;
    if dist <= 0.0 {
        return None;
    }
    // Exact depth from the plane equation rather than barycentric interpolation.
    let n = e1.cross(&e2);
    Some(n.dot(&t[0]) / n.dot(dir))
}

/// An object resting on a finite rectangular table.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneInstance {
    /// Object mesh in its own frame.
    pub object: TriMesh,
    pub pose: RigidTransform,
    pub table: Plane,
    /// Half extents of the table rectangle along its two tangent axes.
    pub table_half_extent: [f64; 2],
}

impl SceneInstance {
    pub fn new(object: TriMesh, pose: RigidTransform, table: Plane, table_half_extent: [f64; 2]) -> Result<Self> {
        let s = SceneInstance {
            object,
            pose,
            table,
            table_half_extent,
        };
        let lowest = s
            .posed_object()
            .vertices()
            .iter()
            .map(|v| table.signed_distance(v))
            .fold(f64::INFINITY, f64::min);
        if lowest < -1e-3 {
            return Err(Error::Config(format!("object sinks {:.4} m into the table", -lowest)));
        }
        Ok(s)
    }

    pub fn posed_object(&self) -> TriMesh {
        self.object.transformed(&self.pose)
    }

    /// Center and tangent axes of the table rectangle.
    pub fn table_frame(&self) -> (Point3, Point3, Point3) {
        let n = self.table.normal();
        let center = -self.table.offset() * n;
        let mut u = Point3::x() - n * n.x;
        if u.norm() < 1e-6 {
            u = Point3::y() - n * n.y;
        }
        let u = u.normalize();
        (center, u, n.cross(&u))
    }

    pub fn triangles(&self) -> Vec<LabeledTriangle> {
        let (c, u, v) = self.table_frame();
        let [hx, hy] = self.table_half_extent;
        let corners = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)].map(|(a, b)| c + hx * a * u + hy * b * v);
        let mut out = vec![
            LabeledTriangle {
                vertices: [corners[0], corners[1], corners[2]],
                label: LABEL_TABLE,
            },
            LabeledTriangle {
                vertices: [corners[0], corners[2], corners[3]],
                label: LABEL_TABLE,
            },
        ];
        let obj = self.posed_object();
        out.extend((0..obj.faces().len()).map(|f| LabeledTriangle {
            vertices: obj.triangle(f),
            label: LABEL_OBJECT,
        }));
        out
    }
}

pub fn render(scene: &SceneInstance, camera: &Camera) -> (DepthImage, Vec<u8>) {
    rasterize(&scene.triangles(), camera)
}

pub fn render_depth(scene: &SceneInstance, camera: &Camera) -> DepthImage {
    render(scene, camera).0
}

/// One labeled world-space point per valid pixel, in row-major pixel order.
pub fn backproject(depth: &DepthImage, camera: &Camera, labels: &[u8]) -> Result<PointSet> {
    if labels.len() != depth.depth.len() {
        return Err(Error::LengthMismatch {
            expected: depth.depth.len(),
            got: labels.len(),
        });
    }
    let mut pts = Vec::new();
    let mut lab = Vec::new();
    for v in 0..depth.height {
        for u in 0..depth.width {
            let i = v * depth.width + u;
            let z = depth.depth[i];
            if z == INVALID_DEPTH || labels[i] == LABEL_NONE {
                continue;
            }
            pts.push(camera.pose.apply(&(camera.intrinsics.ray(u, v) * z)));
            lab.push(labels[i]);
        }
    }
    PointSet::with_labels(pts, lab)
}

/// Per-label farthest-point sampling to the requested counts; labels with
/// too few points are topped up by sampling with replacement. Table points
/// come first in the output.
pub fn sample_scene_cloud(cloud: &PointSet, n_object: usize, n_table: usize, seed: u64) -> Result<PointSet> {
    let labels = cloud.labels().ok_or(Error::LabelExhausted("scene cloud has no labels"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pts = Vec::with_capacity(n_object + n_table);
    let mut lab = Vec::with_capacity(n_object + n_table);
    for (label, n, name) in [(LABEL_TABLE, n_table, "table"), (LABEL_OBJECT, n_object, "object")] {
        if n == 0 {
            continue;
        }
        let idx: Vec<usize> = (0..cloud.len()).filter(|&i| labels[i] == label).collect();
        if idx.is_empty() {
            return Err(Error::LabelExhausted(name));
        }
        let subset: Vec<Point3> = idx.iter().map(|&i| cloud.points()[i]).collect();
        let chosen = if subset.len() >= n {
            farthest_point_sampling(&subset, n, &mut rng)
        } else {
            let mut all: Vec<usize> = (0..subset.len()).collect();
            all.extend((0..n - subset.len()).map(|_| rng.random_range(0..subset.len())));
            all
        };
        pts.extend(chosen.iter().map(|&i| subset[i]));
        lab.extend(std::iter::repeat_n(label, n));
    }
    PointSet::with_labels(pts, lab)
}

/// Indices of `n ≤ points.len()` farthest-point samples, starting from a
/// random point; ties go to the lowest index.
pub fn farthest_point_sampling<R: Rng>(points: &[Point3], n: usize, rng: &mut R) -> Vec<usize> {
    if n == 0 || points.is_empty() {
        return Vec::new();
    }
    let n = n.min(points.len());
    let mut chosen = Vec::with_capacity(n);
    let mut best = vec![f64::INFINITY; points.len()];
    let mut cur = rng.random_range(0..points.len());
    for _ in 0..n {
        chosen.push(cur);
        let c = points[cur];
        let mut next = 0;
        let mut far = f64::NEG_INFINITY;
        for (i, p) in points.iter().enumerate() {
            let d = (p - c).norm_squared();
            if d < best[i] {
                best[i] = d;
            }
            if best[i] > far {
                far = best[i];
                next = i;
            }
        }
        cur = next;
    }
    chosen
}

/// Resting pose on the plane `z = 0`: a convex-hull face whose support
/// polygon contains the projected center of mass is placed flush, with a
/// random yaw and the center of mass above the origin.
pub fn stable_pose(object: &TriMesh, seed: u64) -> Result<RigidTransform> {
    object.ensure_watertight()?;
    let verts = object.vertices();
    let hull = convex_hull(verts)?;
    let com = object.solid_centroid();
    let scale = object.aabb().map_or(1.0, |b| (b.max - b.min).norm());

    // Group hull triangles into planar faces.
    let mut faces: Vec<(Point3, f64, Vec<[usize; 3]>)> = Vec::new();
    for t in &hull {
        let [a, b, c] = t.map(|i| verts[i]);
        let n = (b - a).cross(&(c - a));
        if n.norm() < 1e-15 {
            continue;
        }
        let n = n.normalize();
        let d = -n.dot(&a);
        match faces
            .iter_mut()
            .find(|(m, e, _)| (m - n).norm() < 1e-6 && (e - d).abs() < 1e-6 * scale)
        {
            Some(f) => f.2.push(*t),
            None => faces.push((n, d, vec![*t])),
        }
    }
    let stable: Vec<&(Point3, f64, Vec<[usize; 3]>)> = faces
        .iter()
        .filter(|(n, d, tris)| {
            let p = com - n * (n.dot(&com) + d);
            tris.iter().any(|t| in_triangle(&p, &t.map(|i| verts[i]), n))
        })
        .collect();
    if stable.is_empty() {
        return Err(Error::DegeneratePoints);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, _, _) = stable[rng.random_range(0..stable.len())];
    let down = -Point3::z();
    let align = if (n - down).norm() < 1e-12 {
        Rotation3::identity()
    } else if (n + down).norm() < 1e-12 {
        Rotation3::from_axis_angle(&Point3::x_axis(), std::f64::consts::PI)
    } else {
        Rotation3::rotation_between(n, &down).unwrap_or_else(Rotation3::identity)
    };
    let yaw = Rotation3::from_axis_angle(&Unit::new_normalize(Point3::z()), rng.random_range(0.0..std::f64::consts::TAU));
    let rot = (yaw * align).into_inner();
    let rotated: Vec<Point3> = verts.iter().map(|v| rot * v).collect();
    let min_z = rotated.iter().map(|v| v.z).fold(f64::INFINITY, f64::min);
    let c = rot * com;
    RigidTransform::new(rot, Point3::new(-c.x, -c.y, -min_z))
}

fn in_triangle(p: &Point3, t: &[Point3; 3], n: &Point3) -> bool {
    (0..3).all(|i| {
        let a = t[i];
        let b = t[(i + 1) % 3];
        (b - a).cross(&(p - a)).dot(n) >= -1e-12
    })
}

/// Drops candidates with any posed vertex behind the table plane and returns
/// the survivor whose contact vertices are closest on average to the object
/// surface, with its index. Ties go to the lowest index.
pub fn filter_grasps(grasps: &[HandParams], scene: &SceneInstance, model: &HandModel) -> Result<(usize, HandParams)> {
    if grasps.is_empty() {
        return Err(Error::Empty("grasp candidates"));
    }
    let object = scene.posed_object();
    let mut best: Option<(usize, f64)> = None;
    for (i, g) in grasps.iter().enumerate() {
        let mesh = hand_forward(model, g)?;
        if mesh.vertices().iter().any(|v| scene.table.signed_distance(v) < 0.0) {
            continue;
        }
        let contact = mesh.contact_points(model.contact());
        let d = contact.iter().map(|p| object.distance_to_surface(p)).sum::<f64>() / contact.len() as f64;
        if best.is_none_or(|(_, b)| d < b) {
            best = Some((i, d));
        }
    }
    best.map(|(i, _)| (i, grasps[i])).ok_or(Error::NoCollisionFreeGrasp)
}
