//! Pose-evaluation metrics: geodesic rotation error, MPJPE and
//! Procrustes-aligned MPJPE.

use nalgebra::SVD;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rotation::{is_rotation, Mat3, Vec3};

/// Angle of the relative rotation `R̂ᵀR`, in radians, in `[0, π]`.
pub fn geodesic_error(r: &Mat3, r_hat: &Mat3) -> Result<f64> {
    if !is_rotation(r) || !is_rotation(r_hat) {
        return Err(Error::Input("geodesic error needs proper rotations".into()));
    }
    Ok(geodesic_unchecked(r, r_hat))
}

/// Evaluated as `atan2(sin, cos)` of the relative rotation: equal to the
/// clamped `arccos((tr(R̂ᵀR) - 1) / 2)` but without its loss of precision
/// near 0 and π.
pub(crate) fn geodesic_unchecked(r: &Mat3, r_hat: &Mat3) -> f64 {
    let m = r_hat.transpose() * r;
    let cos = ((m.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let sin = 0.5
        * Vec3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]).norm();
    sin.atan2(cos)
}

/// Mean Euclidean distance over all points, meters.
pub fn mpjpe(p: &[Vec3], p_hat: &[Vec3]) -> Result<f64> {
    check_same_len(p.len(), p_hat.len())?;
    if p.is_empty() {
        return Err(Error::Input("mpjpe of an empty point set".into()));
    }
    let total: f64 = p.iter().zip(p_hat).map(|(a, b)| (a - b).norm()).sum();
    Ok(total / p.len() as f64)
}

/// Similarity transform `x ↦ s·Q·x + t`.
#[derive(Clone, Debug, PartialEq)]
pub struct Similarity {
    pub scale: f64,
    pub rotation: Mat3,
    pub translation: Vec3,
    /// Set when the cross-covariance was rank deficient and only the
    /// translation was fitted.
    pub degenerate: bool,
}

impl Similarity {
    pub fn apply(&self, x: &Vec3) -> Vec3 {
        self.rotation * x * self.scale + self.translation
    }
}

/// Least-squares similarity mapping `source` onto `target` (centered
/// cross-covariance SVD with reflection correction).
pub fn procrustes(target: &[Vec3], source: &[Vec3]) -> Result<Similarity> {
    check_same_len(target.len(), source.len())?;
    if target.len() < 3 {
        return Err(Error::Input(format!(
            "procrustes alignment needs at least 3 points, got {}",
            target.len()
        )));
    }
    let n = target.len() as f64;
    let mu_y: Vec3 = target.iter().sum::<Vec3>() / n;
    let mu_x: Vec3 = source.iter().sum::<Vec3>() / n;
    let mut cov = Mat3::zeros();
    let mut var_x = 0.0;
    for (y, x) in target.iter().zip(source) {
        let xc = x - mu_x;
        cov += (y - mu_y) * xc.transpose();
        var_x += xc.norm_squared();
    }
    cov /= n;
    var_x /= n;

    let translation_only = Similarity {
        scale: 1.0,
        rotation: Mat3::identity(),
        translation: mu_y - mu_x,
        degenerate: true,
    };
    if var_x <= f64::MIN_POSITIVE {
        return Ok(translation_only);
    }
    let svd = SVD::new(cov, true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Ok(translation_only),
    };
    let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    if !(sv[0] > 0.0) || sv[1] <= 1e-12 * sv[0] {
        return Ok(translation_only);
    }

    // nalgebra does not order singular values; flip the column paired with
    // the smallest one when the fit would be a reflection.
    let d = svd.singular_values;
    let smallest = (0..3).min_by(|&a, &b| d[a].total_cmp(&d[b])).unwrap();
    let mut s = Mat3::identity();
    if (u.determinant() * v_t.determinant()) < 0.0 {
        s[(smallest, smallest)] = -1.0;
    }
    let rotation = u * s * v_t;
    let trace_ds: f64 = (0..3).map(|k| d[k] * s[(k, k)]).sum();
    let scale = trace_ds / var_x;
    let translation = mu_y - rotation * mu_x * scale;
    Ok(Similarity {
        scale,
        rotation,
        translation,
        degenerate: false,
    })
}

/// MPJPE after aligning each predicted pose to its ground truth with
/// [`procrustes`]. Returns the error and whether any pose fell back to
/// translation-only alignment.
pub fn pa_mpjpe(poses: &[Vec<Vec3>], predictions: &[Vec<Vec3>]) -> Result<(f64, bool)> {
    check_same_len(poses.len(), predictions.len())?;
    let mut total = 0.0;
    let mut count = 0usize;
    let mut degenerate = false;
    for (p, p_hat) in poses.iter().zip(predictions) {
        let sim = procrustes(p, p_hat)?;
        degenerate |= sim.degenerate;
        for (a, b) in p.iter().zip(p_hat) {
            total += (a - sim.apply(b)).norm();
        }
        count += p.len();
    }
    if count == 0 {
        return Err(Error::Input("pa-mpjpe of an empty batch".into()));
    }
    Ok((total / count as f64, degenerate))
}

fn check_same_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Dimension {
            context: "metric inputs",
            expected: a,
            actual: b,
        });
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mpjpe_mm: f64,
    pub pa_mpjpe_mm: f64,
    pub ge_rad: f64,
    pub n_poses: usize,
    pub n_joints: usize,
}

/// Streaming aggregation over poses; all three metrics average over every
/// joint of every pose.
#[derive(Debug, Default)]
pub struct MetricAccumulator {
    pos_sum: f64,
    pa_sum: f64,
    ge_sum: f64,
    joints: usize,
    rotations: usize,
    poses: usize,
    n_joints: usize,
}

impl MetricAccumulator {
    pub fn add(
        &mut self,
        target_positions: &[Vec3],
        predicted_positions: &[Vec3],
        target_rotations: &[Mat3],
        predicted_rotations: &[Mat3],
    ) -> Result<()> {
        let n = target_positions.len();
        let m = mpjpe(target_positions, predicted_positions)?;
        let sim = procrustes(target_positions, predicted_positions)?;
        let pa: f64 = target_positions
            .iter()
            .zip(predicted_positions)
            .map(|(a, b)| (a - sim.apply(b)).norm())
            .sum();
        check_same_len(target_rotations.len(), predicted_rotations.len())?;
        for (r, r_hat) in target_rotations.iter().zip(predicted_rotations) {
            self.ge_sum += geodesic_error(r, r_hat)?;
        }
        self.rotations += target_rotations.len();
        self.pos_sum += m * n as f64;
        self.pa_sum += pa;
        self.joints += n;
        self.poses += 1;
        self.n_joints = n;
        Ok(())
    }

    pub fn report(&self) -> MetricReport {
        let j = self.joints.max(1) as f64;
        MetricReport {
            mpjpe_mm: 1000.0 * self.pos_sum / j,
            pa_mpjpe_mm: 1000.0 * self.pa_sum / j,
            ge_rad: self.ge_sum / self.rotations.max(1) as f64,
            n_poses: self.poses,
            n_joints: self.n_joints,
        }
    }
}
