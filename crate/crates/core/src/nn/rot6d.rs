//! Continuous 6D rotation parameterization: two 3-vectors orthonormalized by
//! Gram–Schmidt, third column from the cross product.

use crate::rotation::{Mat3, Vec3};

const DEGENERATE: f64 = 1e-12;
const PERTURBATION: f64 = 1e-8;

/// Forward result with the intermediates the backward pass needs.
#[derive(Clone, Debug)]
pub struct Orthonormalized {
    pub rotation: Mat3,
    /// The input was near-zero or near-parallel and had to be perturbed.
    pub degenerate: bool,
    a1: Vec3,
    a2: Vec3,
}

pub fn orthonormalize_6d(v: &[f64; 6]) -> Orthonormalized {
    let mut a1 = Vec3::new(v[0], v[1], v[2]);
    let mut a2 = Vec3::new(v[3], v[4], v[5]);
    let mut degenerate = false;

    if !(a1.norm() > DEGENERATE) {
        a1 += Vec3::new(PERTURBATION, 0.0, 0.0);
        if !(a1.norm() > DEGENERATE) {
            a1 = Vec3::x();
        }
        degenerate = true;
    }
    let b1 = a1.normalize();
    let u2 = a2 - b1 * b1.dot(&a2);
    if !(u2.norm() > DEGENERATE * a2.norm().max(1.0)) {
        // Nudge along the axis least aligned with b1.
        let k = (0..3)
            .min_by(|&i, &j| b1[i].abs().total_cmp(&b1[j].abs()))
            .unwrap();
        let mut e = Vec3::zeros();
        e[k] = PERTURBATION * a2.norm().max(1.0);
        a2 += e;
        if !((a2 - b1 * b1.dot(&a2)).norm() > DEGENERATE * a2.norm().max(1.0)) {
            a2 = e;
        }
        degenerate = true;
    }
    let b1 = a1.normalize();
    let u2 = a2 - b1 * b1.dot(&a2);
    // second pass: after a near-parallel nudge the first one loses digits
    let b2 = (u2 - b1 * b1.dot(&u2)).normalize();
    let b3 = b1.cross(&b2);
    Orthonormalized {
        rotation: Mat3::from_columns(&[b1, b2, b3]),
        degenerate,
        a1,
        a2,
    }
}

/// Gradient of a scalar loss with respect to the 6 inputs, given its
/// gradient with respect to the output matrix.
pub fn orthonormalize_6d_backward(fwd: &Orthonormalized, grad: &Mat3) -> [f64; 6] {
    let (a1, a2) = (fwd.a1, fwd.a2);
    let n1 = a1.norm();
    let b1 = a1 / n1;
    let u2 = a2 - b1 * b1.dot(&a2);
    let n2 = u2.norm();
    let b2 = u2 / n2;

    let mut gb1: Vec3 = grad.column(0).into();
    let mut gb2: Vec3 = grad.column(1).into();
    let gb3: Vec3 = grad.column(2).into();

    // b3 = b1 × b2
    gb1 += b2.cross(&gb3);
    gb2 += gb3.cross(&b1);

    // b2 = u2 / |u2|
    let gu2 = (gb2 - b2 * b2.dot(&gb2)) / n2;
    // u2 = a2 - (b1·a2) b1
    let ga2 = gu2 - b1 * b1.dot(&gu2);
    gb1 -= gu2 * b1.dot(&a2) + a2 * b1.dot(&gu2);
    // b1 = a1 / |a1|
    let ga1 = (gb1 - b1 * b1.dot(&gb1)) / n1;

    [ga1[0], ga1[1], ga1[2], ga2[0], ga2[1], ga2[2]]
}
