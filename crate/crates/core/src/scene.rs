//! Multi-person scenes from external pose estimates, and the bootstrap that
//! turns each estimate into an editable solver state.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ik::{IkInput, IkModel};
use crate::recovery::{recover_effectors, RecoveryConfig, RecoveryResult};
use crate::retarget::{approximate_user_skeleton, retarget_pose, JointMap, UserSkeleton};
use crate::rotation::{quat_to_matrix, Vec3};
use crate::shape_inversion::{ShapeBank, ShapeEstimate};
use crate::skeleton::{Gender, Pose, ShapeParams, SkeletonTemplate, SHAPE_DIMS};
use crate::wire::PoseWire;

pub const SCENE_VERSION: u32 = 1;

/// Interchange file: +Y up, meters, roots in the world frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneDoc {
    pub version: u32,
    #[serde(default)]
    pub source: String,
    pub persons: Vec<PersonDoc>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PersonDoc {
    pub betas: [f64; SHAPE_DIMS],
    pub gender: Gender,
    #[serde(default = "unit_scale")]
    pub scale: f64,
    pub root: [f64; 3],
    pub rotations: Vec<[f64; 4]>,
}

fn unit_scale() -> f64 {
    1.0
}

/// One estimated person. The normalized quaternions are kept alongside the
/// matrices so export reproduces the imported file.
#[derive(Clone, Debug, PartialEq)]
pub struct Person {
    pub shape: ShapeParams,
    pub pose: Pose,
    quaternions: Vec<[f64; 4]>,
}

impl Person {
    pub fn quaternions(&self) -> &[[f64; 4]] {
        &self.quaternions
    }

    fn from_doc(doc: &PersonDoc, joint_count: usize) -> Result<Self> {
        let shape = ShapeParams::new(doc.betas, doc.gender, doc.scale);
        shape.validate()?;
        let wire = PoseWire {
            root: doc.root,
            rotations: doc.rotations.clone(),
        };
        let quaternions = wire.normalized_quats(joint_count)?;
        let pose = Pose {
            root_position: Vec3::from(doc.root),
            rotations: quaternions.iter().map(|q| quat_to_matrix(*q)).collect(),
        };
        pose.validate(joint_count)?;
        Ok(Self {
            shape,
            pose,
            quaternions,
        })
    }

    fn to_doc(&self) -> PersonDoc {
        PersonDoc {
            betas: self.shape.betas,
            gender: self.shape.gender,
            scale: self.shape.scale,
            root: self.pose.root_position.into(),
            rotations: self.quaternions.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub source: String,
    pub persons: Vec<Person>,
}

pub fn parse_scene(text: &str, joint_count: usize) -> Result<Scene> {
    let doc: SceneDoc = serde_json::from_str(text)?;
    scene_from_doc(&doc, joint_count)
}

pub fn scene_from_doc(doc: &SceneDoc, joint_count: usize) -> Result<Scene> {
    if doc.version != SCENE_VERSION {
        return Err(Error::Input(format!(
            "unsupported scene version {} (expected {SCENE_VERSION})",
            doc.version
        )));
    }
    let persons = doc
        .persons
        .iter()
        .enumerate()
        .map(|(i, p)| {
            Person::from_doc(p, joint_count).map_err(|e| Error::Scene {
                person: i,
                message: e.to_string(),
            })
        })
        .collect::<Result<_>>()?;
    Ok(Scene {
        source: doc.source.clone(),
        persons,
    })
}

pub fn import_scene(path: impl AsRef<Path>, joint_count: usize) -> Result<Scene> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scene(&text, joint_count)
}

pub fn scene_to_doc(scene: &Scene) -> SceneDoc {
    SceneDoc {
        version: SCENE_VERSION,
        source: scene.source.clone(),
        persons: scene.persons.iter().map(Person::to_doc).collect(),
    }
}

pub fn export_scene(scene: &Scene) -> String {
    serde_json::to_string_pretty(&scene_to_doc(scene)).expect("scene serializes")
}

/// Editable solver state for one person.
#[derive(Clone, Debug, PartialEq)]
pub struct PersonState {
    /// Shape the solver runs with.
    pub shape: ShapeParams,
    /// Target pose on the canonical skeleton under `shape`.
    pub pose: Pose,
    pub recovery: RecoveryResult,
    /// Solver output for the recovered effectors; what an editor displays.
    pub solved: Pose,
    /// Present when a user character drove the shape.
    pub shape_estimate: Option<ShapeEstimate>,
}

impl PersonState {
    /// The canonical pose transferred onto the user rig.
    pub fn pose_on_character(&self, template: &SkeletonTemplate, user: &UserSkeleton) -> Result<Pose> {
        retarget_pose(
            template,
            &self.shape,
            &user.template,
            &ShapeParams::neutral(),
            &user.map.inverse(),
            &self.pose,
        )
    }
}

/// Shape inversion (with a user character) → retarget → effector recovery.
pub fn bootstrap_person(
    person: &Person,
    user: Option<&UserSkeleton>,
    model: &IkModel,
    template: &SkeletonTemplate,
    bank: &ShapeBank,
    config: &RecoveryConfig,
) -> Result<PersonState> {
    let (shape, pose, shape_estimate) = match user {
        None => (person.shape, person.pose.clone(), None),
        Some(user) => {
            let est = approximate_user_skeleton(user, bank)?;
            let shape = est.to_shape();
            let pose = retarget_pose(
                template,
                &person.shape,
                template,
                &shape,
                &JointMap::identity(template),
                &person.pose,
            )?;
            (shape, pose, Some(est))
        }
    };
    // running out of candidates still leaves a usable best-so-far set
    let recovery = match recover_effectors(model, template, &shape, &pose, config) {
        Err(Error::Exhausted { best }) => *best,
        other => other?,
    };
    let solved = model.solve(
        template,
        &IkInput {
            effectors: recovery.effectors.clone(),
            shape,
        },
    )?;
    Ok(PersonState {
        shape,
        pose,
        recovery,
        solved,
        shape_estimate,
    })
}

pub fn bootstrap_scene(
    scene: &Scene,
    user: Option<&UserSkeleton>,
    model: &IkModel,
    template: &SkeletonTemplate,
    bank: &ShapeBank,
    config: &RecoveryConfig,
) -> Result<Vec<PersonState>> {
    scene
        .persons
        .iter()
        .enumerate()
        .map(|(i, p)| {
            bootstrap_person(p, user, model, template, bank, config).map_err(|e| Error::Scene {
                person: i,
                message: e.to_string(),
            })
        })
        .collect()
}
