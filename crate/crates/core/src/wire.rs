//! Structured-text shapes shared by files, the CLI and the service.
//! Rotations travel as unit quaternions `[w, x, y, z]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ik::{Effector, EffectorSet, Target};
use crate::recovery::{RecoveryResult, Termination};
use crate::rotation::{matrix_to_quat, quat_to_matrix, Vec3};
use crate::skeleton::{Gender, Pose, ShapeParams, SkeletonTemplate, SHAPE_DIMS};

/// Largest accepted deviation of a quaternion norm from 1.
pub const QUAT_NORM_TOLERANCE: f64 = 1e-3;

/// Rescales `q` to unit length when it is off by more than rounding noise,
/// so normalizing an already normalized quaternion is a no-op.
pub fn normalize_quat(q: [f64; 4]) -> Result<[f64; 4]> {
    if q.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("quaternion has non-finite components".into()));
    }
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if (n - 1.0).abs() > QUAT_NORM_TOLERANCE {
        return Err(Error::Input(format!(
            "quaternion norm {n} is not within {QUAT_NORM_TOLERANCE} of 1"
        )));
    }
    if (n - 1.0).abs() <= 4.0 * f64::EPSILON {
        return Ok(q);
    }
    Ok(q.map(|v| v / n))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeWire {
    #[serde(default)]
    pub betas: [f64; SHAPE_DIMS],
    #[serde(default = "neutral")]
    pub gender: Gender,
    #[serde(default = "one")]
    pub scale: f64,
}

fn neutral() -> Gender {
    Gender::Neutral
}

fn one() -> f64 {
    1.0
}

impl Default for ShapeWire {
    fn default() -> Self {
        ShapeParams::neutral().into()
    }
}

impl From<ShapeParams> for ShapeWire {
    fn from(s: ShapeParams) -> Self {
        Self {
            betas: s.betas,
            gender: s.gender,
            scale: s.scale,
        }
    }
}

impl ShapeWire {
    pub fn to_shape(&self) -> Result<ShapeParams> {
        let s = ShapeParams::new(self.betas, self.gender, self.scale);
        s.validate()?;
        Ok(s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseWire {
    pub root: [f64; 3],
    pub rotations: Vec<[f64; 4]>,
}

impl PoseWire {
    pub fn from_pose(p: &Pose) -> Self {
        Self {
            root: [p.root_position.x, p.root_position.y, p.root_position.z],
            rotations: p.rotations.iter().map(matrix_to_quat).collect(),
        }
    }

    /// Normalized quaternions, checked against the joint count.
    pub fn normalized_quats(&self, joint_count: usize) -> Result<Vec<[f64; 4]>> {
        if self.rotations.len() != joint_count {
            return Err(Error::Dimension {
                context: "pose rotations",
                expected: joint_count,
                actual: self.rotations.len(),
            });
        }
        if self.root.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("root position is not finite".into()));
        }
        self.rotations
            .iter()
            .enumerate()
            .map(|(j, q)| {
                normalize_quat(*q).map_err(|e| Error::Input(format!("rotation {j}: {e}")))
            })
            .collect()
    }

    pub fn to_pose(&self, joint_count: usize) -> Result<Pose> {
        let quats = self.normalized_quats(joint_count)?;
        let pose = Pose {
            root_position: Vec3::from(self.root),
            rotations: quats.into_iter().map(quat_to_matrix).collect(),
        };
        pose.validate(joint_count)?;
        Ok(pose)
    }
}

/// Joint given by index or by name.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum JointRef {
    Index(usize),
    Name(String),
}

impl JointRef {
    pub fn resolve(&self, template: &SkeletonTemplate) -> Result<usize> {
        match self {
            JointRef::Index(i) if *i < template.len() => Ok(*i),
            JointRef::Index(i) => Err(Error::Input(format!(
                "joint index {i} out of range (0..{})",
                template.len()
            ))),
            JointRef::Name(n) => template
                .joint_index(n)
                .ok_or_else(|| Error::MissingJoint(n.clone())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum EffectorWire {
    Position {
        joint: JointRef,
        target: [f64; 3],
        #[serde(default)]
        tolerance: f64,
    },
    Rotation {
        joint: JointRef,
        rotation: [f64; 4],
        #[serde(default)]
        tolerance: f64,
    },
    #[serde(rename = "lookat")]
    LookAt {
        joint: JointRef,
        target: [f64; 3],
        #[serde(default)]
        tolerance: f64,
    },
}

impl EffectorWire {
    pub fn from_effector(e: &Effector, template: &SkeletonTemplate) -> Self {
        let joint = JointRef::Name(template.joints()[e.joint].name.clone());
        let tolerance = e.tolerance;
        match e.target {
            Target::Position(p) => Self::Position {
                joint,
                target: p.into(),
                tolerance,
            },
            Target::Rotation(r) => Self::Rotation {
                joint,
                rotation: matrix_to_quat(&r),
                tolerance,
            },
            Target::LookAt(p) => Self::LookAt {
                joint,
                target: p.into(),
                tolerance,
            },
        }
    }

    pub fn to_effector(&self, template: &SkeletonTemplate) -> Result<Effector> {
        let e = match self {
            Self::Position {
                joint,
                target,
                tolerance,
            } => Effector::position(joint.resolve(template)?, Vec3::from(*target))
                .with_tolerance(*tolerance),
            Self::Rotation {
                joint,
                rotation,
                tolerance,
            } => Effector::rotation(joint.resolve(template)?, quat_to_matrix(normalize_quat(*rotation)?))
                .with_tolerance(*tolerance),
            Self::LookAt {
                joint,
                target,
                tolerance,
            } => Effector::look_at(joint.resolve(template)?, Vec3::from(*target))
                .with_tolerance(*tolerance),
        };
        e.validate(template.len())?;
        Ok(e)
    }
}

pub fn effectors_from_wire(list: &[EffectorWire], template: &SkeletonTemplate) -> Result<EffectorSet> {
    let effectors = list
        .iter()
        .enumerate()
        .map(|(i, w)| {
            w.to_effector(template)
                .map_err(|e| Error::Input(format!("effector {i}: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    EffectorSet::new(effectors, template.len())
}

pub fn effectors_to_wire(set: &EffectorSet, template: &SkeletonTemplate) -> Vec<EffectorWire> {
    set.effectors()
        .iter()
        .map(|e| EffectorWire::from_effector(e, template))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveryStepWire {
    pub step: usize,
    pub effector: EffectorWire,
    pub error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveryResultWire {
    pub effectors: Vec<EffectorWire>,
    pub error_trace: Vec<RecoveryStepWire>,
    pub terminated_by: Termination,
    pub initial_error: f64,
    pub candidate_evaluations: usize,
}

impl RecoveryResultWire {
    pub fn new(r: &RecoveryResult, template: &SkeletonTemplate) -> Self {
        Self {
            effectors: effectors_to_wire(&r.effectors, template),
            error_trace: r
                .trace
                .iter()
                .map(|s| RecoveryStepWire {
                    step: s.step,
                    effector: EffectorWire::from_effector(&s.effector, template),
                    error: s.error,
                })
                .collect(),
            terminated_by: r.terminated_by,
            initial_error: r.initial_error,
            candidate_evaluations: r.candidate_evaluations,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rotation::{random_rotation, Mat3};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn slightly_short_quaternion_is_renormalized() {
        let q = normalize_quat([0.9999, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(q, [1.0, 0.0, 0.0, 0.0]);
        assert!(normalize_quat([0.5, 0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn normalization_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let r = random_rotation(&mut rng, 3.0);
            let q = matrix_to_quat(&r).map(|v| v * 1.0004);
            let once = normalize_quat(q).unwrap();
            assert_eq!(normalize_quat(once).unwrap(), once);
        }
    }

    #[test]
    fn effector_json_by_name_or_index() {
        let t = SkeletonTemplate::bundled();
        let a: EffectorWire =
            serde_json::from_str(r#"{"kind":"position","joint":"head","target":[0,1.6,0]}"#).unwrap();
        let b: EffectorWire =
            serde_json::from_str(r#"{"kind":"rotation","joint":3,"rotation":[1,0,0,0],"tolerance":0.5}"#).unwrap();
        let ea = a.to_effector(&t).unwrap();
        assert_eq!(ea.joint, t.joint_index("head").unwrap());
        let eb = b.to_effector(&t).unwrap();
        assert_eq!(eb.target, Target::Rotation(Mat3::identity()));
        assert_eq!(eb.tolerance, 0.5);
        let bad: EffectorWire =
            serde_json::from_str(r#"{"kind":"lookat","joint":"tail","target":[0,0,0]}"#).unwrap();
        assert!(matches!(bad.to_effector(&t), Err(Error::MissingJoint(_))));
    }

    #[test]
    fn pose_wire_count_checked() {
        let w = PoseWire {
            root: [0.0; 3],
            rotations: vec![[1.0, 0.0, 0.0, 0.0]; 23],
        };
        assert!(matches!(w.to_pose(24), Err(Error::Dimension { actual: 23, .. })));
    }

    #[test]
    fn shape_defaults() {
        let s: ShapeWire = serde_json::from_str("{}").unwrap();
        assert_eq!(s.to_shape().unwrap(), ShapeParams::neutral());
        let bad: ShapeWire = serde_json::from_str(r#"{"scale": -1}"#).unwrap();
        assert!(bad.to_shape().is_err());
    }
}
