use super::{JointPositions, Pose, ShapeParams, SkeletonTemplate};
use crate::error::{Error, Result};
use crate::rotation::{Mat3, Vec3};

/// Per-joint local offsets for a body shape:
/// `o_j = s · (t_j + B_j β)` with the gender variant substituted first.
pub fn shaped_offsets(template: &SkeletonTemplate, shape: &ShapeParams) -> Vec<Vec3> {
    let (rest, basis) = template.resolved(shape.gender);
    let betas = shape.betas_vector();
    rest.iter()
        .zip(basis)
        .map(|(t, b)| (t + b * betas) * shape.scale)
        .collect()
}

/// Global rotations and positions of every joint.
#[derive(Clone, Debug, PartialEq)]
pub struct FkState {
    pub globals: Vec<Mat3>,
    pub positions: Vec<Vec3>,
}

/// Poses precomputed offsets along a topologically sorted hierarchy.
pub fn posed(parents: &[Option<usize>], offsets: &[Vec3], pose: &Pose) -> FkState {
    let n = parents.len();
    let mut globals = Vec::with_capacity(n);
    let mut positions = Vec::with_capacity(n);
    for j in 0..n {
        match parents[j] {
            None => {
                globals.push(pose.rotations[j]);
                positions.push(pose.root_position);
            }
            Some(p) => {
                let gp = globals[p];
                positions.push(positions[p] + gp * offsets[j]);
                globals.push(gp * pose.rotations[j]);
            }
        }
    }
    FkState { globals, positions }
}

pub fn forward_kinematics_full(
    template: &SkeletonTemplate,
    shape: &ShapeParams,
    pose: &Pose,
) -> Result<FkState> {
    if pose.rotations.len() != template.len() {
        return Err(Error::Dimension {
            context: "forward kinematics pose",
            expected: template.len(),
            actual: pose.rotations.len(),
        });
    }
    let offsets = shaped_offsets(template, shape);
    Ok(posed(&template.parents(), &offsets, pose))
}

pub fn forward_kinematics(
    template: &SkeletonTemplate,
    shape: &ShapeParams,
    pose: &Pose,
) -> Result<JointPositions> {
    forward_kinematics_full(template, shape, pose).map(|s| JointPositions {
        positions: s.positions,
    })
}

/// Identity rotations with the root at the origin.
pub fn tpose(template: &SkeletonTemplate, _shape: &ShapeParams) -> Pose {
    Pose::identity(template.len())
}

/// Reverse-mode pass through [`posed`]: given loss gradients with respect to
/// global positions and global rotations, returns the gradients with respect
/// to the root position and each local rotation matrix.
pub fn fk_backward(
    parents: &[Option<usize>],
    offsets: &[Vec3],
    pose: &Pose,
    state: &FkState,
    grad_positions: &[Vec3],
    grad_globals: &[Mat3],
) -> (Vec3, Vec<Mat3>) {
    let n = parents.len();
    let mut gp: Vec<Vec3> = grad_positions.to_vec();
    let mut gg: Vec<Mat3> = grad_globals.to_vec();
    let mut g_local = vec![Mat3::zeros(); n];
    let mut g_root = Vec3::zeros();
    for j in (0..n).rev() {
        match parents[j] {
            None => {
                g_local[j] += gg[j];
                g_root += gp[j];
            }
            Some(p) => {
                // p_j = p_p + G_p o_j ; G_j = G_p R_j
                let gpj = gp[j];
                gp[p] += gpj;
                let ggj = gg[j];
                let gpar = state.globals[p];
                gg[p] += gpj * offsets[j].transpose() + ggj * pose.rotations[j].transpose();
                g_local[j] += gpar.transpose() * ggj;
            }
        }
    }
    (g_root, g_local)
}
