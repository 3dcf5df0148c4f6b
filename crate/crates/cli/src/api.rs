//! Request and response bodies shared by the CLI and the service, and the
//! pure functions that answer them.

use std::collections::BTreeMap;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use morphik::ik::{EffectorKind, IkInput, IkModel};
use morphik::nn::{checkpoint_digest, Checkpoint};
use morphik::recovery::{recover_effectors, RecoveryConfig, RecoveryResult};
use morphik::retarget::{approximate_user_skeleton, JointMap, UserSkeleton};
use morphik::scene::{bootstrap_person, scene_from_doc, PersonState, SceneDoc};
use morphik::shape_inversion::{invert_shape, ShapeBank, ShapeEstimate, SkeletonFeatures, FEATURE_DIMS};
use morphik::skeleton::{load_skeleton, SkeletonDoc, SkeletonTemplate};
use morphik::wire::{effectors_from_wire, EffectorWire, PoseWire, RecoveryResultWire, ShapeWire};
use morphik::Error;

/// Machine-readable failure. `status` follows HTTP conventions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, thiserror::Error)]
#[error("{message}")]
pub struct ApiError {
    #[serde(skip)]
    pub status: u16,
    pub kind: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
}

impl ApiError {
    pub fn new(status: u16, kind: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            kind: kind.to_string(),
            message: message.into(),
            path: None,
        }
    }

    pub fn at(mut self, path: &str) -> Self {
        if self.path.is_none() {
            self.path = Some(path.to_string());
        }
        self
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let kind = match &e {
            Error::Dimension { .. } => "dimension",
            Error::Skeleton(_) => "invalid_skeleton",
            Error::MissingJoint(_) => "missing_joint",
            Error::Input(_) => "invalid_input",
            Error::NonFinite { .. } => "non_finite",
            Error::TemplateMismatch { .. } => "template_mismatch",
            Error::DegenerateSkeleton(_) => "degenerate_skeleton",
            Error::Exhausted { .. } => "exhausted",
            Error::Checkpoint(_) => "checkpoint",
            Error::BankFormat(_) => "bank_format",
            Error::Scene { .. } => "scene",
            Error::Io { .. } => "io",
            Error::Json(_) => "malformed",
        };
        let status = match &e {
            Error::Json(_) => 400,
            Error::Io { .. } => 500,
            _ => 422,
        };
        Self::new(status, kind, e.to_string())
    }
}

pub type ApiResult<T> = Result<T, ApiError>;

/// Parses a JSON document, reporting the field path of the first error.
pub fn parse_json<T: DeserializeOwned>(bytes: &[u8]) -> ApiResult<T> {
    let mut de = serde_json::Deserializer::from_slice(bytes);
    let value = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        let err = ApiError::new(400, "malformed", e.inner().to_string());
        if path == "." {
            err
        } else {
            err.at(&path)
        }
    })?;
    de.end()
        .map_err(|e| ApiError::new(400, "malformed", e.to_string()))?;
    Ok(value)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> ApiResult<T> {
    let bytes = std::fs::read(path)
        .map_err(|e| ApiError::new(500, "io", format!("{}: {e}", path.display())))?;
    parse_json(&bytes).map_err(|e| ApiError {
        message: format!("{}: {}", path.display(), e.message),
        ..e
    })
}

/// The canonical skeleton and a frozen model trained for it.
#[derive(Clone, Debug)]
pub struct Artifacts {
    pub template: SkeletonTemplate,
    pub model: IkModel,
    /// SHA-256 of the checkpoint file bytes.
    pub checkpoint_hash: String,
}

impl Artifacts {
    pub fn load(checkpoint: &Path, skeleton: Option<&Path>) -> ApiResult<Self> {
        let template = match skeleton {
            Some(p) => load_skeleton(p)?,
            None => SkeletonTemplate::bundled(),
        };
        let bytes = std::fs::read(checkpoint)
            .map_err(|e| ApiError::new(500, "io", format!("{}: {e}", checkpoint.display())))?;
        let model = IkModel::from_checkpoint(&Checkpoint::from_bytes(&bytes)?)?;
        model.check_template(&template)?;
        Ok(Self {
            template,
            model,
            checkpoint_hash: checkpoint_digest(&bytes),
        })
    }
}

pub fn load_bank(path: &Path, template: &SkeletonTemplate) -> ApiResult<ShapeBank> {
    let bank = ShapeBank::load(path)?;
    if bank.template_id() != template.id() {
        return Err(Error::TemplateMismatch {
            expected: bank.template_id().to_string(),
            actual: template.id().to_string(),
        }
        .into());
    }
    Ok(bank)
}

/// Body plus the hash of the checkpoint that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub checkpoint_hash: String,
    #[serde(flatten)]
    pub body: T,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveRequest {
    #[serde(default)]
    pub shape: ShapeWire,
    #[serde(default)]
    pub effectors: Vec<EffectorWire>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveResponse {
    pub pose: PoseWire,
}

pub fn solve(a: &Artifacts, req: &SolveRequest) -> ApiResult<SolveResponse> {
    let shape = req.shape.to_shape().map_err(|e| ApiError::from(e).at("shape"))?;
    let effectors =
        effectors_from_wire(&req.effectors, &a.template).map_err(|e| ApiError::from(e).at("effectors"))?;
    let pose = a.model.solve(&a.template, &IkInput { effectors, shape })?;
    Ok(SolveResponse {
        pose: PoseWire::from_pose(&pose),
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InvertShapeRequest {
    #[serde(default)]
    pub features: Option<[f64; FEATURE_DIMS]>,
    #[serde(default)]
    pub skeleton: Option<SkeletonDoc>,
    /// User joint name → canonical joint name. Defaults to matching names.
    #[serde(default)]
    pub map: Option<BTreeMap<String, String>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeEstimateWire {
    pub betas: [f64; morphik::skeleton::SHAPE_DIMS],
    pub scale: f64,
    pub ess: f64,
    pub fallback: bool,
}

impl From<&ShapeEstimate> for ShapeEstimateWire {
    fn from(e: &ShapeEstimate) -> Self {
        Self {
            betas: e.betas,
            scale: e.scale,
            ess: e.effective_sample_size,
            fallback: e.fallback_used,
        }
    }
}

/// Joints present under the same name in both rigs.
pub fn name_matching_map(user: &SkeletonTemplate, canonical: &SkeletonTemplate) -> JointMap {
    JointMap {
        map: user
            .joints()
            .iter()
            .filter(|j| canonical.joint_index(&j.name).is_some())
            .map(|j| (j.name.clone(), j.name.clone()))
            .collect(),
    }
}

pub fn user_skeleton(
    doc: &SkeletonDoc,
    map: Option<&BTreeMap<String, String>>,
    canonical: &SkeletonTemplate,
) -> ApiResult<UserSkeleton> {
    let template = SkeletonTemplate::from_doc(doc.clone()).map_err(|e| ApiError::from(e).at("skeleton"))?;
    let map = match map {
        Some(m) => JointMap::new(m.clone()).map_err(|e| ApiError::from(e).at("map"))?,
        None => name_matching_map(&template, canonical),
    };
    UserSkeleton::new(template, map, canonical).map_err(|e| ApiError::from(e).at("map"))
}

pub fn invert(canonical: &SkeletonTemplate, bank: &ShapeBank, req: &InvertShapeRequest) -> ApiResult<ShapeEstimateWire> {
    let est = match (&req.features, &req.skeleton) {
        (Some(f), None) => {
            if req.map.is_some() {
                return Err(ApiError::new(422, "invalid_input", "`map` only applies with `skeleton`").at("map"));
            }
            invert_shape(bank, &SkeletonFeatures(*f)).map_err(|e| ApiError::from(e).at("features"))?
        }
        (None, Some(doc)) => approximate_user_skeleton(&user_skeleton(doc, req.map.as_ref(), canonical)?, bank)?,
        _ => {
            return Err(ApiError::new(
                422,
                "invalid_input",
                "give exactly one of `features` or `skeleton`",
            ))
        }
    };
    Ok((&est).into())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecoverRequest {
    #[serde(default)]
    pub shape: ShapeWire,
    pub pose: PoseWire,
    #[serde(default)]
    pub max: Option<usize>,
    #[serde(default)]
    pub threshold: Option<f64>,
    #[serde(default)]
    pub kinds: Option<Vec<EffectorKind>>,
}

impl RecoverRequest {
    pub fn config(&self) -> RecoveryConfig {
        let d = RecoveryConfig::default();
        RecoveryConfig {
            max_effectors: self.max.unwrap_or(d.max_effectors),
            error_threshold: self.threshold.unwrap_or(d.error_threshold),
            kinds: self.kinds.clone().unwrap_or(d.kinds),
        }
    }
}

/// Exhaustion is not a failure here: the best-so-far set is returned with
/// `terminated_by = exhausted`.
fn recover_or_best(
    a: &Artifacts,
    shape: &morphik::skeleton::ShapeParams,
    pose: &morphik::skeleton::Pose,
    config: &RecoveryConfig,
) -> ApiResult<RecoveryResult> {
    match recover_effectors(&a.model, &a.template, shape, pose, config) {
        Ok(r) => Ok(r),
        Err(Error::Exhausted { best }) => Ok(*best),
        Err(e) => Err(e.into()),
    }
}

pub fn recover(a: &Artifacts, req: &RecoverRequest) -> ApiResult<RecoveryResultWire> {
    let shape = req.shape.to_shape().map_err(|e| ApiError::from(e).at("shape"))?;
    let pose = req
        .pose
        .to_pose(a.template.len())
        .map_err(|e| ApiError::from(e).at("pose"))?;
    let config = req.config();
    config.validate()?;
    let r = recover_or_best(a, &shape, &pose, &config)?;
    Ok(RecoveryResultWire::new(&r, &a.template))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapRequest {
    pub scene: SceneDoc,
    #[serde(default)]
    pub character: Option<SkeletonDoc>,
    #[serde(default)]
    pub map: Option<BTreeMap<String, String>>,
    #[serde(default)]
    pub recovery: RecoveryConfig,
}

/// Editable starting point for one person.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PersonStateWire {
    pub shape: ShapeWire,
    /// Full pose the effectors were recovered from.
    pub target: PoseWire,
    /// Solver output for the recovered effectors.
    pub pose: PoseWire,
    pub recovery: RecoveryResultWire,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shape_estimate: Option<ShapeEstimateWire>,
    /// `pose` transferred onto the user character, when one was given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub character_pose: Option<PoseWire>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResponse {
    pub persons: Vec<PersonStateWire>,
}

pub fn bootstrap(a: &Artifacts, bank: &ShapeBank, req: &BootstrapRequest) -> ApiResult<BootstrapResponse> {
    req.recovery.validate().map_err(|e| ApiError::from(e).at("recovery"))?;
    let scene = scene_from_doc(&req.scene, a.template.len()).map_err(|e| ApiError::from(e).at("scene"))?;
    let user = match &req.character {
        Some(doc) => Some(user_skeleton(doc, req.map.as_ref(), &a.template).map_err(|e| e.at("character"))?),
        None if req.map.is_some() => {
            return Err(ApiError::new(422, "invalid_input", "`map` only applies with `character`").at("map"))
        }
        None => None,
    };
    let persons = scene
        .persons
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let state = bootstrap_person(p, user.as_ref(), &a.model, &a.template, bank, &req.recovery)
                .map_err(|e| ApiError::from(e).at(&format!("scene.persons[{i}]")))?;
            person_wire(a, &state, user.as_ref()).map_err(|e| e.at(&format!("scene.persons[{i}]")))
        })
        .collect::<ApiResult<_>>()?;
    Ok(BootstrapResponse { persons })
}

fn person_wire(a: &Artifacts, s: &PersonState, user: Option<&UserSkeleton>) -> ApiResult<PersonStateWire> {
    let character_pose = match user {
        Some(u) => {
            let solved = PersonState {
                pose: s.solved.clone(),
                ..s.clone()
            };
            Some(PoseWire::from_pose(&solved.pose_on_character(&a.template, u)?))
        }
        None => None,
    };
    Ok(PersonStateWire {
        shape: s.shape.into(),
        target: PoseWire::from_pose(&s.pose),
        pose: PoseWire::from_pose(&s.solved),
        recovery: RecoveryResultWire::new(&s.recovery, &a.template),
        shape_estimate: s.shape_estimate.as_ref().map(Into::into),
        character_pose,
    })
}
