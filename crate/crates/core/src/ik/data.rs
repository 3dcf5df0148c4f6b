use rand::seq::IndexedRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::effector::{Effector, EffectorKind, EffectorSet, IkInput, Target, DEFAULT_MAX_EFFECTORS};
use super::loss::LossWeights;
use crate::error::{Error, Result};
use crate::skeleton::{
    forward_kinematics_full, sample_random_pose, Gender, JointPositions, Pose, PoseSampler,
    ShapeParams, SkeletonTemplate, SHAPE_DIMS,
};

/// How many effectors of which kinds a randomized example carries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectorScheme {
    pub min_count: usize,
    pub max_count: usize,
    /// Probabilities for position, rotation, look-at.
    pub kind_probs: [f64; 3],
    /// Look-at target distance range along the forward ray, meters.
    pub look_distance: (f64, f64),
}

impl Default for EffectorScheme {
    fn default() -> Self {
        Self {
            min_count: 3,
            max_count: DEFAULT_MAX_EFFECTORS,
            kind_probs: [0.6, 0.3, 0.1],
            look_distance: (0.5, 2.0),
        }
    }
}

impl EffectorScheme {
    pub fn validate(&self, joint_count: usize) -> Result<()> {
        let sum: f64 = self.kind_probs.iter().sum();
        if self.kind_probs.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Input(format!(
                "effector kind probabilities must be non-negative and sum to 1: {:?}",
                self.kind_probs
            )));
        }
        if self.min_count > self.max_count {
            return Err(Error::Input("effector min_count exceeds max_count".into()));
        }
        if self.max_count > joint_count {
            return Err(Error::Input(format!(
                "effector max_count {} exceeds joint count {joint_count}",
                self.max_count
            )));
        }
        let (lo, hi) = self.look_distance;
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::Input("look-at distance range must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub dataset_size: usize,
    /// Per-joint maximum rotation angle, radians.
    pub pose_limit: f64,
    pub root_min: [f64; 3],
    pub root_max: [f64; 3],
    pub scheme: EffectorScheme,
    pub beta_augmentation: bool,
    pub beta_variance: f64,
    pub loss: LossWeights,
    pub lr: f64,
    /// Final learning rate of the cosine schedule.
    pub lr_min: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    pub validation_size: usize,
    /// Steps between held-out evaluations; 0 disables them.
    pub eval_every: usize,
    pub token_dim: usize,
    pub token_layers: usize,
    pub hidden_dim: usize,
    pub residual_blocks: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let box_ = PoseSampler::uniform(0, 0.0);
        Self {
            dataset_size: 50_000,
            pose_limit: std::f64::consts::FRAC_PI_4,
            root_min: box_.root_min,
            root_max: box_.root_max,
            scheme: EffectorScheme::default(),
            beta_augmentation: false,
            beta_variance: 1.0,
            loss: LossWeights::default(),
            lr: 1e-3,
            lr_min: 1e-5,
            batch_size: 64,
            steps: 2000,
            seed: 0,
            validation_size: 256,
            eval_every: 250,
            token_dim: 64,
            token_layers: 3,
            hidden_dim: 256,
            residual_blocks: 4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, joint_count: usize) -> Result<()> {
        self.scheme.validate(joint_count)?;
        self.loss.validate()?;
        self.sampler(joint_count).validate()?;
        if self.dataset_size == 0 || self.batch_size == 0 {
            return Err(Error::Input("dataset and batch size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr_min >= 0.0 && self.lr_min <= self.lr) {
            return Err(Error::Input("need 0 <= lr_min <= lr and lr > 0".into()));
        }
        if !(self.beta_variance >= 0.0) {
            return Err(Error::Input("beta variance must be non-negative".into()));
        }
        Ok(())
    }

    pub fn sampler(&self, joint_count: usize) -> PoseSampler {
        PoseSampler {
            joint_limits: vec![self.pose_limit; joint_count],
            root_min: self.root_min,
            root_max: self.root_max,
        }
    }
}

/// A solver query together with the pose that generated it.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingExample {
    pub input: IkInput,
    pub target: Pose,
    pub positions: JointPositions,
}

/// Shape with β ~ N(0, 1) clipped to [-5, 5], uniform gender, unit scale.
pub fn sample_shape<R: Rng + ?Sized>(rng: &mut R) -> ShapeParams {
    let mut betas = [0.0; SHAPE_DIMS];
    for b in &mut betas {
        let v: f64 = StandardNormal.sample(rng);
        *b = v.clamp(-5.0, 5.0);
    }
    let gender = *Gender::ALL.choose(rng).expect("non-empty");
    ShapeParams::new(betas, gender, 1.0)
}

/// Draws `n ~ U{min..max}` distinct `(kind, joint)` pairs; the kind is drawn
/// first, then a joint not yet used for that kind.
pub fn sample_effectors<R: Rng + ?Sized>(
    rng: &mut R,
    template: &SkeletonTemplate,
    scheme: &EffectorScheme,
    state: &crate::skeleton::FkState,
) -> EffectorSet {
    let joints = template.len();
    let n = rng.random_range(scheme.min_count..=scheme.max_count);
    let mut used = [vec![false; joints], vec![false; joints], vec![false; joints]];
    let mut effectors = Vec::with_capacity(n);
    while effectors.len() < n {
        let kind = sample_kind(rng, &scheme.kind_probs);
        let free: Vec<usize> = (0..joints).filter(|&j| !used[kind.index()][j]).collect();
        let Some(&joint) = free.choose(rng) else {
            continue;
        };
        used[kind.index()][joint] = true;
        let e = match kind {
            EffectorKind::LookAt => {
                let (lo, hi) = scheme.look_distance;
                let d = if lo == hi { lo } else { rng.random_range(lo..hi) };
                Effector::look_at_from_fk(template, joint, state, d)
            }
            k => Effector::from_fk(k, joint, state),
        };
        effectors.push(e.with_tolerance(rng.random_range(0.0..1.0)));
    }
    EffectorSet::new(effectors, joints).expect("sampled effectors are distinct and valid")
}

fn sample_kind<R: Rng + ?Sized>(rng: &mut R, probs: &[f64; 3]) -> EffectorKind {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, p) in EffectorKind::ALL.iter().zip(probs) {
        acc += p;
        if u < acc {
            return *k;
        }
    }
    // rounding slack: last kind with nonzero mass
    *EffectorKind::ALL
        .iter()
        .zip(probs)
        .rev()
        .find(|(_, p)| **p > 0.0)
        .expect("probabilities sum to 1")
        .0
}

/// Shape and pose of a target, with its FK state.
pub fn sample_target<R: Rng + ?Sized>(
    rng: &mut R,
    template: &SkeletonTemplate,
    config: &TrainConfig,
) -> (ShapeParams, Pose) {
    let shape = sample_shape(rng);
    let pose = sample_random_pose(rng, &config.sampler(template.len()));
    (shape, pose)
}

/// One randomized example drawn entirely from `rng`.
pub fn make_training_example<R: Rng + ?Sized>(
    template: &SkeletonTemplate,
    rng: &mut R,
    config: &TrainConfig,
) -> TrainingExample {
    let (shape, pose) = sample_target(rng, template, config);
    example_with_effectors(template, shape, pose, rng, &config.scheme)
}

pub(crate) fn example_with_effectors<R: Rng + ?Sized>(
    template: &SkeletonTemplate,
    shape: ShapeParams,
    pose: Pose,
    rng: &mut R,
    scheme: &EffectorScheme,
) -> TrainingExample {
    let state = forward_kinematics_full(template, &shape, &pose).expect("pose matches template");
    let effectors = sample_effectors(rng, template, scheme, &state);
    TrainingExample {
        input: IkInput { effectors, shape },
        target: pose,
        positions: JointPositions {
            positions: state.positions,
        },
    }
}

/// Adds `ε ~ N(0, variance·I)` to β and recomputes every position-derived
/// quantity under the new shape with the same rotations.
pub fn augment_beta<R: Rng + ?Sized>(
    template: &SkeletonTemplate,
    example: &TrainingExample,
    rng: &mut R,
    variance: f64,
) -> TrainingExample {
    let normal = Normal::new(0.0, variance.sqrt()).expect("variance is non-negative");
    let mut shape = example.input.shape;
    for b in &mut shape.betas {
        *b += normal.sample(rng);
    }
    let state =
        forward_kinematics_full(template, &shape, &example.target).expect("pose matches template");
    let mut effectors = example.input.effectors.clone();
    for e in effectors.effectors_mut() {
        let j = e.joint;
        e.target = match e.target {
            Target::Position(_) => Target::Position(state.positions[j]),
            Target::Rotation(_) => Target::Rotation(state.globals[j]),
            // global rotations do not depend on β; the ray only translates
            Target::LookAt(t) => {
                Target::LookAt(t + (state.positions[j] - example.positions.positions[j]))
            }
        };
    }
    TrainingExample {
        input: IkInput { effectors, shape },
        target: example.target.clone(),
        positions: JointPositions {
            positions: state.positions,
        },
    }
}

/// Stream offset separating held-out examples from training indices.
pub(crate) const HELD_OUT_STREAM: u64 = 1 << 40;

/// Per-index generator for the synthetic dataset.
pub(crate) fn index_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Held-out examples (disjoint from any training index), fully determined by
/// `seed`.
pub fn held_out_examples(
    template: &SkeletonTemplate,
    config: &TrainConfig,
    n: usize,
    seed: u64,
) -> Vec<TrainingExample> {
    (0..n as u64)
        .map(|i| {
            let mut rng = index_rng(seed, HELD_OUT_STREAM + i);
            make_training_example(template, &mut rng, config)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::forward_kinematics;

    #[test]
    fn same_seed_same_example() {
        let t = SkeletonTemplate::bundled();
        let c = TrainConfig::default();
        let a = make_training_example(&t, &mut ChaCha8Rng::seed_from_u64(4), &c);
        let b = make_training_example(&t, &mut ChaCha8Rng::seed_from_u64(4), &c);
        assert_eq!(a, b);
    }

    #[test]
    fn all_positions_equal_fk() {
        let t = SkeletonTemplate::bundled();
        let c = TrainConfig {
            scheme: EffectorScheme {
                min_count: 24,
                max_count: 24,
                kind_probs: [1.0, 0.0, 0.0],
                ..EffectorScheme::default()
            },
            ..TrainConfig::default()
        };
        let ex = make_training_example(&t, &mut ChaCha8Rng::seed_from_u64(1), &c);
        assert_eq!(ex.input.effectors.len(), 24);
        for e in ex.input.effectors.effectors() {
            assert_eq!(e.target, Target::Position(ex.positions.positions[e.joint]));
        }
    }

    #[test]
    fn counts_within_scheme() {
        let t = SkeletonTemplate::bundled();
        let c = TrainConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            let ex = make_training_example(&t, &mut rng, &c);
            let n = ex.input.effectors.len();
            assert!((3..=16).contains(&n));
        }
    }

    #[test]
    fn zero_variance_augmentation_is_identity() {
        let t = SkeletonTemplate::bundled();
        let c = TrainConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ex = make_training_example(&t, &mut rng, &c);
        let aug = augment_beta(&t, &ex, &mut rng, 0.0);
        assert_eq!(aug, ex);
    }

    #[test]
    fn augmented_positions_follow_new_shape() {
        let t = SkeletonTemplate::bundled();
        let c = TrainConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let ex = make_training_example(&t, &mut rng, &c);
        let aug = augment_beta(&t, &ex, &mut rng, 1.0);
        let fk = forward_kinematics(&t, &aug.input.shape, &ex.target).unwrap();
        assert_eq!(fk, aug.positions);
        assert_ne!(aug.positions, ex.positions);
    }

    #[test]
    fn bad_probabilities_rejected() {
        let s = EffectorScheme {
            kind_probs: [0.5, 0.3, 0.1],
            ..EffectorScheme::default()
        };
        assert!(s.validate(24).is_err());
    }
}
