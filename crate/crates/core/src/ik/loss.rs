use serde::{Deserialize, Serialize};

use super::effector::{EffectorSet, Target};
use crate::rotation::{Mat3, Vec3};
use crate::skeleton::{fk_backward, posed, Pose, SkeletonTemplate};

/// Clamp keeping `arccos` differentiable at the trace extremes.
pub const GE_CLAMP: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub position: f64,
    pub rotation: f64,
    pub root: f64,
    pub look_at: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            position: 1.0,
            rotation: 0.1,
            root: 1.0,
            look_at: 0.1,
        }
    }
}

impl LossWeights {
    pub fn zero() -> Self {
        Self {
            position: 0.0,
            rotation: 0.0,
            root: 0.0,
            look_at: 0.0,
        }
    }

    pub fn validate(&self) -> crate::Result<()> {
        let w = [self.position, self.rotation, self.root, self.look_at];
        if w.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(crate::Error::Input(format!(
                "loss weights must be finite and non-negative: {w:?}"
            )));
        }
        Ok(())
    }
}

/// Loss value split by term (weights already applied).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub position: f64,
    pub rotation: f64,
    pub root: f64,
    pub look_at: f64,
}

impl LossTerms {
    pub fn total(&self) -> f64 {
        self.position + self.rotation + self.root + self.look_at
    }
}

/// Gradient of the loss with respect to the predicted pose.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseGradient {
    pub root: Vec3,
    pub rotations: Vec<Mat3>,
}

/// Geodesic angle with the trace argument clamped to
/// `[-1 + GE_CLAMP, 1 - GE_CLAMP]`, shifted so equal rotations score 0.
/// Returns the value and `d/dR̂`.
pub fn geodesic_smooth(r_hat: &Mat3, r: &Mat3) -> (f64, Mat3) {
    let raw = (r_hat.component_mul(r).sum() - 1.0) / 2.0;
    let lo = -1.0 + GE_CLAMP;
    let hi = 1.0 - GE_CLAMP;
    let c = raw.clamp(lo, hi);
    let value = c.acos() - hi.acos();
    let grad = if raw > lo && raw < hi {
        r * (-0.5 / (1.0 - c * c).sqrt())
    } else {
        Mat3::zeros()
    };
    (value, grad)
}

/// Training loss for one prediction.
///
/// `target_positions` are the FK positions of `target` under `shape`;
/// `offsets` the shaped bone offsets for that shape.
#[allow(clippy::too_many_arguments)]
pub fn ik_loss(
    pred: &Pose,
    target: &Pose,
    target_positions: &[Vec3],
    template: &SkeletonTemplate,
    offsets: &[Vec3],
    effectors: &EffectorSet,
    weights: &LossWeights,
) -> (LossTerms, PoseGradient) {
    let n = template.len();
    let parents = template.parents();
    let state = posed(&parents, offsets, pred);
    let mut terms = LossTerms::default();
    let mut g_pos = vec![Vec3::zeros(); n];
    let mut g_glob = vec![Mat3::zeros(); n];
    let inv_n = 1.0 / n as f64;

    if weights.position != 0.0 {
        for j in 0..n {
            let d = state.positions[j] - target_positions[j];
            terms.position += d.norm_squared();
            g_pos[j] += d * (2.0 * weights.position * inv_n);
        }
        terms.position *= weights.position * inv_n;
    }

    let mut g_local = vec![Mat3::zeros(); n];
    if weights.rotation != 0.0 {
        for j in 0..n {
            let (v, g) = geodesic_smooth(&pred.rotations[j], &target.rotations[j]);
            terms.rotation += v;
            g_local[j] += g * (weights.rotation * inv_n);
        }
        terms.rotation *= weights.rotation * inv_n;
    }

    let mut g_root = Vec3::zeros();
    if weights.root != 0.0 {
        let d = pred.root_position - target.root_position;
        terms.root = weights.root * d.norm_squared();
        g_root += d * (2.0 * weights.root);
    }

    let looks: Vec<_> = effectors
        .effectors()
        .iter()
        .filter_map(|e| match e.target {
            Target::LookAt(p) => Some((e.joint, p)),
            _ => None,
        })
        .collect();
    if weights.look_at != 0.0 && !looks.is_empty() {
        let scale = weights.look_at / looks.len() as f64;
        for (j, t) in looks {
            let axis = template.joints()[j].forward_axis;
            let u = state.globals[j] * axis;
            let v = t - state.positions[j];
            let (nu, nv) = (u.norm(), v.norm());
            if nv < 1e-12 {
                continue;
            }
            let cos = u.dot(&v) / (nu * nv);
            terms.look_at += scale * (1.0 - cos);
            let dcos_du = (v / nv - u * (cos / nu)) / nu;
            let dcos_dv = (u / nu - v * (cos / nv)) / nv;
            g_glob[j] -= dcos_du * axis.transpose() * scale;
            // v = t - p_j
            g_pos[j] += dcos_dv * scale;
        }
    }

    let (gr, gl) = fk_backward(&parents, offsets, pred, &state, &g_pos, &g_glob);
    for (a, b) in g_local.iter_mut().zip(gl) {
        *a += b;
    }
    (
        terms,
        PoseGradient {
            root: g_root + gr,
            rotations: g_local,
        },
    )
}
