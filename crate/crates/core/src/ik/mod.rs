//! Learned inverse kinematics conditioned on body shape and gender.

mod data;
mod effector;
mod loss;
mod model;
mod train;

pub use data::{
    augment_beta, held_out_examples, make_training_example, sample_effectors, sample_shape,
    sample_target, EffectorScheme, TrainConfig, TrainingExample,
};
pub use effector::{
    encode_conditioning, encode_effector, Effector, EffectorKind, EffectorSet, IkInput, Target,
    CONDITION_DIMS, DEFAULT_MAX_EFFECTORS, TOKEN_DIMS,
};
pub use loss::{geodesic_smooth, ik_loss, LossTerms, LossWeights, PoseGradient, GE_CLAMP};
pub use model::{Architecture, IkModel};
pub use train::{
    architecture_for, batch_loss, train, train_with_progress, validation_metrics, TraceEntry,
    TrainTrace, VALIDATION_SEED,
};

use crate::error::Result;
use crate::metrics::MetricReport;
use crate::skeleton::SkeletonTemplate;

/// Runs the randomized effector scheme of `config` over `n` held-out poses
/// drawn from `seed` and aggregates MPJPE, PA-MPJPE and GE.
pub fn evaluate(
    model: &IkModel,
    template: &SkeletonTemplate,
    config: &TrainConfig,
    n: usize,
    seed: u64,
) -> Result<MetricReport> {
    config.validate(template.len())?;
    let examples = held_out_examples(template, config, n, seed);
    validation_metrics(model, template, &examples)
}
