//! Quaternion helpers. Quaternions are stored `[w, x, y, z]`.

use nalgebra::{Matrix3, Quaternion, Unit, UnitQuaternion, Vector3};

pub const IDENTITY: [f64; 4] = [1.0, 0.0, 0.0, 0.0];

pub fn norm(q: &[f64; 4]) -> f64 {
    q.iter().map(|c| c * c).sum::<f64>().sqrt()
}

pub fn normalized(q: &[f64; 4]) -> [f64; 4] {
    let n = norm(q);
    [q[0] / n, q[1] / n, q[2] / n, q[3] / n]
}

/// Rotation matrix of a unit quaternion.
pub fn to_matrix(q: &[f64; 4]) -> Matrix3<f64> {
    let [w, x, y, z] = *q;
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Pulls a gradient with respect to `to_matrix(q)` back onto the components of `q`.
pub fn matrix_grad_to_quat(q: &[f64; 4], g: &Matrix3<f64>) -> [f64; 4] {
    let [w, x, y, z] = *q;
    let d = |m: Matrix3<f64>| 2.0 * g.component_mul(&m).sum();
    [
        d(Matrix3::new(0.0, -z, y, z, 0.0, -x, -y, x, 0.0)),
        d(Matrix3::new(0.0, y, z, y, -2.0 * x, -w, z, w, -2.0 * x)),
        d(Matrix3::new(-2.0 * y, x, w, x, 0.0, z, -w, z, -2.0 * y)),
        d(Matrix3::new(-2.0 * z, -w, x, w, -2.0 * z, y, x, y, 0.0)),
    ]
}

/// Pulls a gradient with respect to `normalized(q)` back onto the raw `q`.
pub fn normalize_grad(q: &[f64; 4], g: &[f64; 4]) -> [f64; 4] {
    let n = norm(q);
    let u = normalized(q);
    let radial: f64 = u.iter().zip(g).map(|(a, b)| a * b).sum();
    [
        (g[0] - u[0] * radial) / n,
        (g[1] - u[1] * radial) / n,
        (g[2] - u[2] * radial) / n,
        (g[3] - u[3] * radial) / n,
    ]
}

pub fn to_unit(q: &[f64; 4]) -> UnitQuaternion<f64> {
    UnitQuaternion::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3]))
}

pub fn from_unit(q: &UnitQuaternion<f64>) -> [f64; 4] {
    [q.w, q.i, q.j, q.k]
}

/// Hamilton product `a * b` (apply `b` first, then `a`).
pub fn mul(a: &[f64; 4], b: &[f64; 4]) -> [f64; 4] {
    from_unit(&(to_unit(a) * to_unit(b)))
}

pub fn from_axis_angle(axis_angle: &[f64; 3]) -> [f64; 4] {
    from_unit(&UnitQuaternion::from_scaled_axis(Vector3::from(*axis_angle)))
}

pub fn to_axis_angle(q: &[f64; 4]) -> [f64; 3] {
    to_unit(q).scaled_axis().into()
}

pub fn from_axis(axis: &Vector3<f64>, angle: f64) -> [f64; 4] {
    from_unit(&UnitQuaternion::from_axis_angle(&Unit::new_normalize(*axis), angle))
}

/// Geodesic angle between two rotations, in radians.
pub fn angle_between(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    to_unit(a).angle_to(&to_unit(b))
}
