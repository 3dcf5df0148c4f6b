//! Greedy extraction of a small effector set that reproduces a full pose
//! through the learned solver.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ik::{Effector, EffectorKind, EffectorSet, IkInput, IkModel};
use crate::metrics::mpjpe;
use crate::skeleton::{forward_kinematics, forward_kinematics_full, FkState, Pose, ShapeParams, SkeletonTemplate};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecoveryConfig {
    pub max_effectors: usize,
    /// Mean per-joint error, meters.
    pub error_threshold: f64,
    pub kinds: Vec<EffectorKind>,
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        Self {
            max_effectors: 6,
            error_threshold: 0.02,
            kinds: vec![EffectorKind::Position, EffectorKind::Rotation],
        }
    }
}

impl RecoveryConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_effectors == 0 {
            return Err(Error::Input("max_effectors must be at least 1".into()));
        }
        if !(self.error_threshold > 0.0) {
            return Err(Error::Input("error_threshold must be positive".into()));
        }
        if self.kinds.is_empty() || self.kinds.contains(&EffectorKind::LookAt) {
            return Err(Error::Input(
                "candidate kinds must be a non-empty subset of {position, rotation}".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Threshold,
    MaxCount,
    /// Ran out of candidates first; only seen inside [`Error::Exhausted`].
    Exhausted,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecoveryStep {
    pub step: usize,
    pub effector: Effector,
    /// Mean per-joint error of the committed set, meters.
    pub error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecoveryResult {
    pub effectors: EffectorSet,
    pub trace: Vec<RecoveryStep>,
    pub terminated_by: Termination,
    /// Error of the empty-set solve.
    pub initial_error: f64,
    /// Number of solver calls spent on candidate sets.
    pub candidate_evaluations: usize,
}

impl RecoveryResult {
    pub fn final_error(&self) -> f64 {
        self.trace.last().map_or(self.initial_error, |s| s.error)
    }
}

/// Mean per-joint distance between FK of the solve and `target_positions`.
pub fn reconstruction_error(
    model: &IkModel,
    template: &SkeletonTemplate,
    shape: &ShapeParams,
    effectors: &EffectorSet,
    target_positions: &[crate::rotation::Vec3],
) -> Result<f64> {
    let input = IkInput {
        effectors: effectors.clone(),
        shape: *shape,
    };
    let pose = model.solve(template, &input)?;
    mpjpe(target_positions, &forward_kinematics(template, shape, &pose)?.positions)
}

/// Candidates in tie-break order: joint ascending, then kind order.
pub fn candidate_effectors(config: &RecoveryConfig, state: &FkState) -> Vec<Effector> {
    let mut kinds = config.kinds.clone();
    kinds.sort();
    kinds.dedup();
    (0..state.positions.len())
        .flat_map(|j| kinds.iter().map(move |&k| (k, j)))
        .map(|(k, j)| Effector::from_fk(k, j, state))
        .collect()
}

pub fn recover_effectors(
    model: &IkModel,
    template: &SkeletonTemplate,
    shape: &ShapeParams,
    target: &Pose,
    config: &RecoveryConfig,
) -> Result<RecoveryResult> {
    config.validate()?;
    model.check_template(template)?;
    shape.validate()?;
    target.validate(template.len())?;
    let state = forward_kinematics_full(template, shape, target)?;
    let joints = template.len();

    let initial_error =
        reconstruction_error(model, template, shape, &EffectorSet::empty(), &state.positions)?;
    let mut result = RecoveryResult {
        effectors: EffectorSet::empty(),
        trace: Vec::new(),
        terminated_by: Termination::Threshold,
        initial_error,
        candidate_evaluations: 0,
    };
    if initial_error < config.error_threshold {
        return Ok(result);
    }

    let candidates = candidate_effectors(config, &state);
    loop {
        let remaining: Vec<&Effector> = candidates
            .iter()
            .filter(|c| !result.effectors.contains(c.kind(), c.joint))
            .collect();
        if remaining.is_empty() {
            result.terminated_by = Termination::Exhausted;
            return Err(Error::Exhausted {
                best: Box::new(result),
            });
        }
        let inputs: Vec<IkInput> = remaining
            .iter()
            .map(|c| {
                let mut set = result.effectors.clone();
                set.push(**c, joints).expect("candidate not yet selected");
                IkInput {
                    effectors: set,
                    shape: *shape,
                }
            })
            .collect();
        let poses = model.solve_batch(template, &inputs)?;
        result.candidate_evaluations += poses.len();

        let mut best: Option<(usize, f64)> = None;
        for (i, pose) in poses.iter().enumerate() {
            let pred = forward_kinematics(template, shape, pose)?;
            let err = mpjpe(&state.positions, &pred.positions)?;
            if best.is_none_or(|(_, b)| err < b) {
                best = Some((i, err));
            }
        }
        let (i, error) = best.expect("at least one candidate");
        let chosen = *remaining[i];
        result.effectors.push(chosen, joints)?;
        result.trace.push(RecoveryStep {
            step: result.trace.len(),
            effector: chosen,
            error,
        });
        if error < config.error_threshold {
            result.terminated_by = Termination::Threshold;
            return Ok(result);
        }
        if result.effectors.len() >= config.max_effectors {
            result.terminated_by = Termination::MaxCount;
            return Ok(result);
        }
    }
}
