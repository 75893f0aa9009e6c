//! Axis-angle rotations and their derivatives.

use nalgebra::{Matrix3, Vector3};

pub fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rodrigues coefficients `(a, b, c, d)` with `R = I + aK + bK²`,
/// `da/dv = c v` and `db/dv = d v`.
fn coefficients(theta: f64) -> (f64, f64, f64, f64) {
    if theta < 1e-2 {
        let t2 = theta * theta;
        let t4 = t2 * t2;
        (
            1.0 - t2 / 6.0 + t4 / 120.0,
            0.5 - t2 / 24.0 + t4 / 720.0,
            -1.0 / 3.0 + t2 / 30.0 - t4 / 840.0,
            -1.0 / 12.0 + t2 / 180.0 - t4 / 6720.0,
        )
    } else {
        let (s, c) = theta.sin_cos();
        let t2 = theta * theta;
        (
            s / theta,
            (1.0 - c) / t2,
            (theta * c - s) / (t2 * theta),
            (theta * s - 2.0 * (1.0 - c)) / (t2 * t2),
        )
    }
}

pub fn exp_so3(v: &Vector3<f64>) -> Matrix3<f64> {
    let (a, b, _, _) = coefficients(v.norm());
    let k = hat(v);
    Matrix3::identity() + k * a + k * k * b
}

/// Rotation matrix and its partial derivatives with respect to each
/// axis-angle component.
pub fn exp_so3_with_jacobian(v: &Vector3<f64>) -> (Matrix3<f64>, [Matrix3<f64>; 3]) {
    let (a, b, c, d) = coefficients(v.norm());
    let k = hat(v);
    let k2 = k * k;
    let r = Matrix3::identity() + k * a + k2 * b;
    let mut dr = [Matrix3::zeros(); 3];
    for (i, out) in dr.iter_mut().enumerate() {
        let e = hat(&Vector3::ith(i, 1.0));
        *out = k * (c * v[i]) + e * a + k2 * (d * v[i]) + (e * k + k * e) * b;
    }
    (r, dr)
}

/// Axis-angle vector of a rotation matrix, angle in `[0, π]`.
pub fn log_so3(r: &Matrix3<f64>) -> Vector3<f64> {
    let cos = ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let theta = cos.acos();
    let w = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    if theta < 1e-6 {
        return w * 0.5 * (1.0 + theta * theta / 6.0);
    }
    if std::f64::consts::PI - theta > 1e-4 {
        return w * (theta / (2.0 * theta.sin()));
    }
    // Near π the antisymmetric part vanishes; recover the axis from n nᵀ.
    let nn = ((r + r.transpose()) * 0.5 - Matrix3::identity() * cos) / (1.0 - cos);
    let i = (0..3).max_by(|&a, &b| nn[(a, a)].total_cmp(&nn[(b, b)])).unwrap_or(0);
    let mut axis = nn.column(i).into_owned() / nn[(i, i)].max(1e-300).sqrt();
    axis.normalize_mut();
    if axis.dot(&w) < 0.0 {
        axis = -axis;
    }
    axis * theta
}

/// Split an axis-angle vector into `(unit axis, angle)`. A zero rotation
/// reports the x axis.
pub fn axis_angle_split(v: &Vector3<f64>) -> (Vector3<f64>, f64) {
    let angle = v.norm();
    if angle == 0.0 {
        (Vector3::x(), 0.0)
    } else {
        (v / angle, angle)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exp_is_orthonormal() {
        for v in [
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1e-5, -2e-5, 3e-6),
            Vector3::new(0.3, -1.2, 2.0),
        ] {
            let r = exp_so3(&v);
            assert!((r.transpose() * r - Matrix3::identity()).abs().max() < 1e-14);
            assert!((r.determinant() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let h = 1e-6;
        for v in [
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(0.004, -0.002, 0.001),
            Vector3::new(0.7, 0.2, -1.1),
            Vector3::new(2.5, 0.4, 0.9),
        ] {
            let (_, dr) = exp_so3_with_jacobian(&v);
            for (i, d) in dr.iter().enumerate() {
                let mut vp = v;
                let mut vm = v;
                vp[i] += h;
                vm[i] -= h;
                let fd = (exp_so3(&vp) - exp_so3(&vm)) / (2.0 * h);
                assert!((fd - d).abs().max() < 1e-8, "component {i} at {v:?}");
            }
        }
    }

    #[test]
    fn log_inverts_exp() {
        for v in [
            Vector3::new(1e-9, 0.0, 0.0),
            Vector3::new(0.3, -0.4, 0.5),
            Vector3::new(0.0, 3.1, 0.0),
            Vector3::new(1.0, 1.0, 1.0).normalize() * (std::f64::consts::PI - 1e-6),
        ] {
            let back = exp_so3(&log_so3(&exp_so3(&v)));
            assert!((back - exp_so3(&v)).abs().max() < 1e-9, "{v:?}");
        }
    }
}
