//! Parametric skeleton: template data, shape blending, poses and forward
//! kinematics.
//!
//! Bone offsets are blended linearly in the shape coefficients,
//! `o_j = s · (t_j + B_j β)`, and posed along the joint hierarchy with local
//! rotation matrices.

mod fk;
mod template;

pub use fk::{
    fk_backward, forward_kinematics, forward_kinematics_full, posed, shaped_offsets, tpose,
    FkState,
};
pub use template::{
    load_skeleton, load_user_skeleton, validate_skeleton, validate_structure, GenderVariant,
    Joint, ShapeBasisBlock, SkeletonDoc, SkeletonTemplate, Violation, CANONICAL_JOINT_COUNT,
};

use nalgebra::SVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rotation::{is_rotation, random_rotation, Mat3, Vec3};

pub const SHAPE_DIMS: usize = 10;

pub type Betas = SVector<f64, SHAPE_DIMS>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Female,
    Male,
    Neutral,
}

impl Gender {
    pub const ALL: [Gender; 3] = [Gender::Female, Gender::Male, Gender::Neutral];

    pub fn one_hot(self) -> [f64; 3] {
        let mut v = [0.0; 3];
        v[self.index()] = 1.0;
        v
    }

    pub fn index(self) -> usize {
        match self {
            Gender::Female => 0,
            Gender::Male => 1,
            Gender::Neutral => 2,
        }
    }
}

/// Body morphology: shape coefficients, gender and a global scale.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeParams {
    pub betas: [f64; SHAPE_DIMS],
    pub gender: Gender,
    #[serde(default = "unit_scale")]
    pub scale: f64,
}

fn unit_scale() -> f64 {
    1.0
}

impl Default for ShapeParams {
    fn default() -> Self {
        Self::neutral()
    }
}

impl ShapeParams {
    pub fn neutral() -> Self {
        Self {
            betas: [0.0; SHAPE_DIMS],
            gender: Gender::Neutral,
            scale: 1.0,
        }
    }

    pub fn new(betas: [f64; SHAPE_DIMS], gender: Gender, scale: f64) -> Self {
        Self {
            betas,
            gender,
            scale,
        }
    }

    pub fn betas_vector(&self) -> Betas {
        Betas::from_column_slice(&self.betas)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::Input(format!(
                "scale must be positive and finite, got {}",
                self.scale
            )));
        }
        if let Some(k) = self.betas.iter().position(|b| !b.is_finite()) {
            return Err(Error::Input(format!("betas[{k}] is not finite")));
        }
        Ok(())
    }
}

/// Root position plus one local rotation per joint.
#[derive(Clone, Debug, PartialEq)]
pub struct Pose {
    pub root_position: Vec3,
    pub rotations: Vec<Mat3>,
}

impl Pose {
    pub fn identity(joint_count: usize) -> Self {
        Self {
            root_position: Vec3::zeros(),
            rotations: vec![Mat3::identity(); joint_count],
        }
    }

    pub fn validate(&self, joint_count: usize) -> Result<()> {
        if self.rotations.len() != joint_count {
            return Err(Error::Dimension {
                context: "pose rotations",
                expected: joint_count,
                actual: self.rotations.len(),
            });
        }
        if !self.root_position.iter().all(|x| x.is_finite()) {
            return Err(Error::Input("root position is not finite".into()));
        }
        if let Some(j) = self.rotations.iter().position(|r| !is_rotation(r)) {
            return Err(Error::Input(format!("rotation {j} is not a proper rotation")));
        }
        Ok(())
    }
}

/// Global joint positions in meters.
#[derive(Clone, Debug, PartialEq)]
pub struct JointPositions {
    pub positions: Vec<Vec3>,
}

impl JointPositions {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Source of random synthetic poses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseSampler {
    /// Maximum rotation angle per joint, radians.
    pub joint_limits: Vec<f64>,
    pub root_min: [f64; 3],
    pub root_max: [f64; 3],
}

impl PoseSampler {
    pub fn uniform(joint_count: usize, limit: f64) -> Self {
        Self {
            joint_limits: vec![limit; joint_count],
            root_min: [-1.0, 0.8, -1.0],
            root_max: [1.0, 1.2, 1.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(l) = self
            .joint_limits
            .iter()
            .find(|l| !(0.0..=std::f64::consts::PI).contains(*l))
        {
            return Err(Error::Input(format!("joint limit {l} outside [0, pi]")));
        }
        if (0..3).any(|k| !(self.root_min[k] <= self.root_max[k])) {
            return Err(Error::Input("root box has min > max".into()));
        }
        Ok(())
    }
}

/// Each joint rotates about a uniformly random axis by an angle uniform in
/// `[-limit, limit]`; the root lands uniformly inside the configured box.
pub fn sample_random_pose<R: Rng + ?Sized>(rng: &mut R, sampler: &PoseSampler) -> Pose {
    let rotations = sampler
        .joint_limits
        .iter()
        .map(|&limit| random_rotation(rng, limit))
        .collect();
    let root_position = Vec3::from_fn(|k, _| {
        let (lo, hi) = (sampler.root_min[k], sampler.root_max[k]);
        if lo == hi {
            lo
        } else {
            rng.random_range(lo..hi)
        }
    });
    Pose {
        root_position,
        rotations,
    }
}
