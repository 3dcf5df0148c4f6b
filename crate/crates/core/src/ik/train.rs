use rand::Rng;
use serde::{Deserialize, Serialize};

use super::data::{augment_beta, example_with_effectors, held_out_examples, index_rng, sample_target, TrainConfig, TrainingExample};
use super::loss::{ik_loss, LossTerms, LossWeights};
use super::model::{Architecture, Batch, IkModel};
use crate::error::Result;
use crate::metrics::{MetricAccumulator, MetricReport};
use crate::nn::{adam_step, orthonormalize_6d_backward, AdamConfig, AdamState, Tensor};
use crate::skeleton::{shaped_offsets, SkeletonTemplate};

/// Seed used for the held-out set during training.
pub const VALIDATION_SEED: u64 = 0x7e57;

/// Mean loss over a batch, with parameter gradients when requested.
pub fn batch_loss(
    model: &IkModel,
    template: &SkeletonTemplate,
    examples: &[TrainingExample],
    weights: &LossWeights,
    with_grad: bool,
) -> Result<(LossTerms, Option<Vec<Tensor>>)> {
    let batch = Batch::from_inputs(examples.iter().map(|e| &e.input));
    let cache = model.forward(&batch)?;
    let b = examples.len();
    let inv_b = 1.0 / b as f64;
    let out_dim = model.architecture().output_dim();
    let mut grad_out = Tensor::zeros(&[b, out_dim]);
    let mut total = LossTerms::default();
    for (i, (ex, dec)) in examples.iter().zip(&cache.decoded).enumerate() {
        let pred = dec.pose();
        let offsets = shaped_offsets(template, &ex.input.shape);
        let (terms, g) = ik_loss(
            &pred,
            &ex.target,
            &ex.positions.positions,
            template,
            &offsets,
            &ex.input.effectors,
            weights,
        );
        total.position += terms.position * inv_b;
        total.rotation += terms.rotation * inv_b;
        total.root += terms.root * inv_b;
        total.look_at += terms.look_at * inv_b;
        if with_grad {
            let row = grad_out.row_mut(i);
            for k in 0..3 {
                row[k] = g.root[k] * inv_b;
            }
            for (j, (fwd, gr)) in dec.rotations.iter().zip(&g.rotations).enumerate() {
                let g6 = orthonormalize_6d_backward(fwd, gr);
                for k in 0..6 {
                    row[3 + 6 * j + k] = g6[k] * inv_b;
                }
            }
        }
    }
    if !with_grad {
        return Ok((total, None));
    }
    let mut grads = model.zero_grads();
    model.backward(&batch, &cache, &grad_out, &mut grads);
    Ok((total, Some(grads)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub step: usize,
    /// Loss of the batch that produced this state; none before the first step.
    pub train_loss: Option<f64>,
    pub validation_loss: f64,
    pub validation: MetricReport,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub entries: Vec<TraceEntry>,
}

fn cosine_lr(config: &TrainConfig, step: usize) -> f64 {
    if config.steps <= 1 {
        return config.lr;
    }
    let t = step as f64 / (config.steps - 1) as f64;
    config.lr_min + 0.5 * (config.lr - config.lr_min) * (1.0 + (std::f64::consts::PI * t).cos())
}

pub fn architecture_for(template: &SkeletonTemplate, config: &TrainConfig) -> Architecture {
    Architecture {
        token_dim: config.token_dim,
        token_layers: config.token_layers,
        hidden_dim: config.hidden_dim,
        residual_blocks: config.residual_blocks,
        ..Architecture::default_for(template, config.seed)
    }
}

/// Solves every held-out example and aggregates pose metrics.
pub fn validation_metrics(
    model: &IkModel,
    template: &SkeletonTemplate,
    examples: &[TrainingExample],
) -> Result<MetricReport> {
    let inputs: Vec<_> = examples.iter().map(|e| e.input.clone()).collect();
    let mut acc = MetricAccumulator::default();
    for chunk in inputs.chunks(256).zip(examples.chunks(256)) {
        let poses = model.solve_batch(template, chunk.0)?;
        for (pose, ex) in poses.iter().zip(chunk.1) {
            let pred = crate::skeleton::forward_kinematics(template, &ex.input.shape, pose)?;
            acc.add(
                &ex.positions.positions,
                &pred.positions,
                &ex.target.rotations,
                &pose.rotations,
            )?;
        }
    }
    Ok(acc.report())
}

/// Trains from scratch. Deterministic given the config.
///
/// Example `i` of the synthetic dataset draws its shape and pose from a
/// generator keyed on `(seed, i)`; effectors (and β noise when enabled) are
/// redrawn every time the example is visited.
pub fn train(template: &SkeletonTemplate, config: &TrainConfig) -> Result<(IkModel, TrainTrace)> {
    train_with_progress(template, config, |_| {})
}

pub fn train_with_progress(
    template: &SkeletonTemplate,
    config: &TrainConfig,
    mut progress: impl FnMut(&TraceEntry),
) -> Result<(IkModel, TrainTrace)> {
    config.validate(template.len())?;
    let mut model = IkModel::new(architecture_for(template, config))?;
    let validation = held_out_examples(template, config, config.validation_size, VALIDATION_SEED);
    let mut adam = AdamState::new(model.params(), AdamConfig::default());
    let mut trace = TrainTrace::default();
    let mut step_rng = index_rng(config.seed, u64::MAX);

    let mut record = |model: &IkModel, step: usize, train_loss: Option<f64>, trace: &mut TrainTrace| -> Result<()> {
        if validation.is_empty() {
            return Ok(());
        }
        let (vl, _) = batch_loss(model, template, &validation, &config.loss, false)?;
        let entry = TraceEntry {
            step,
            train_loss,
            validation_loss: vl.total(),
            validation: validation_metrics(model, template, &validation)?,
        };
        progress(&entry);
        trace.entries.push(entry);
        Ok(())
    };

    let mut last_loss = None;
    for step in 0..config.steps {
        if config.eval_every > 0 && step % config.eval_every == 0 {
            record(&model, step, last_loss, &mut trace)?;
        }
        let batch: Vec<TrainingExample> = (0..config.batch_size)
            .map(|_| {
                let idx = step_rng.random_range(0..config.dataset_size as u64);
                let (shape, pose) = sample_target(&mut index_rng(config.seed, idx), template, config);
                let ex = example_with_effectors(template, shape, pose, &mut step_rng, &config.scheme);
                if config.beta_augmentation {
                    augment_beta(template, &ex, &mut step_rng, config.beta_variance)
                } else {
                    ex
                }
            })
            .collect();
        let (terms, grads) = batch_loss(&model, template, &batch, &config.loss, true)?;
        last_loss = Some(terms.total());
        let grads = grads.expect("requested");
        adam_step(&mut model.params_mut(), &grads, &mut adam, cosine_lr(config, step));
    }
    if config.eval_every > 0 || config.steps == 0 {
        record(&model, config.steps, last_loss, &mut trace)?;
    }
    Ok((model, trace))
}
