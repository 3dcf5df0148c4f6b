//! Rotation-matrix helpers shared across the crate.
//!
//! Rotations live as `Matrix3<f64>` everywhere inside the engine; unit
//! quaternions `(w, x, y, z)` only appear at file and wire boundaries.

use nalgebra::{Matrix3, Quaternion, Rotation3, Unit, UnitQuaternion, Vector3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub type Mat3 = Matrix3<f64>;
pub type Vec3 = Vector3<f64>;

/// Tolerance used for the orthonormality and determinant checks on poses.
pub const ROTATION_TOLERANCE: f64 = 1e-6;

/// Frobenius norm of `RᵀR − I` and `|det R − 1|`.
pub fn rotation_defect(r: &Mat3) -> (f64, f64) {
    let ortho = (r.transpose() * r - Mat3::identity()).norm();
    let det = (r.determinant() - 1.0).abs();
    (ortho, det)
}

pub fn is_rotation(r: &Mat3) -> bool {
    if !r.iter().all(|x| x.is_finite()) {
        return false;
    }
    let (ortho, det) = rotation_defect(r);
    ortho < ROTATION_TOLERANCE && det < ROTATION_TOLERANCE
}

pub fn axis_angle(axis: &Vec3, angle: f64) -> Mat3 {
    Rotation3::from_axis_angle(&Unit::new_normalize(*axis), angle).into_inner()
}

/// Unit quaternion `(w, x, y, z)` to rotation matrix. The input must already
/// be unit-norm.
pub fn quat_to_matrix(q: [f64; 4]) -> Mat3 {
    let uq = UnitQuaternion::new_unchecked(Quaternion::new(q[0], q[1], q[2], q[3]));
    uq.to_rotation_matrix().into_inner()
}

/// Rotation matrix to unit quaternion `(w, x, y, z)` with `w ≥ 0`.
pub fn matrix_to_quat(r: &Mat3) -> [f64; 4] {
    let uq = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*r));
    let q = uq.quaternion();
    let s = if q.w < 0.0 { -1.0 } else { 1.0 };
    [s * q.w, s * q.i, s * q.j, s * q.k]
}

pub fn random_unit_vector<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    loop {
        let v = Vec3::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        );
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

/// Rotation about a uniformly random axis by an angle uniform in
/// `[-max_angle, max_angle]`.
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R, max_angle: f64) -> Mat3 {
    let axis = random_unit_vector(rng);
    if max_angle == 0.0 {
        return Mat3::identity();
    }
    let angle = rng.random_range(-max_angle..=max_angle);
    axis_angle(&axis, angle)
}

/// Uniformly distributed rotation (Haar measure) via a normalized Gaussian
/// quaternion.
pub fn uniform_rotation<R: Rng + ?Sized>(rng: &mut R) -> Mat3 {
    loop {
        let q: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
        let n = q.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return quat_to_matrix(q.map(|x| x / n));
        }
    }
}
