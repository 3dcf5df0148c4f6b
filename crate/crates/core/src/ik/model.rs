use serde::{Deserialize, Serialize};

use super::effector::{encode_conditioning, encode_effector, IkInput, CONDITION_DIMS, TOKEN_DIMS};
use crate::error::{Error, Result};
use crate::nn::{
    orthonormalize_6d, Cache, Checkpoint, DType, LayerSpec, Orthonormalized, Sequential, Tensor,
    TrainingMeta,
};
use crate::rotation::Vec3;
use crate::skeleton::{Pose, SkeletonTemplate, CANONICAL_JOINT_COUNT};

/// Added to every 6D head output so a zero head decodes to identity.
const IDENTITY_6D: [f64; 6] = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];

/// Network dimensions plus the skeleton the model was trained for.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub token_dim: usize,
    /// Hidden layers in the per-token MLP, after the input projection.
    pub token_layers: usize,
    pub hidden_dim: usize,
    pub residual_blocks: usize,
    pub joints: usize,
    pub template_id: String,
    pub init_seed: u64,
}

impl Architecture {
    pub fn default_for(template: &SkeletonTemplate, init_seed: u64) -> Self {
        Self {
            token_dim: 64,
            token_layers: 3,
            hidden_dim: 256,
            residual_blocks: 4,
            joints: template.len(),
            template_id: template.id().to_string(),
            init_seed,
        }
    }

    pub fn output_dim(&self) -> usize {
        3 + 6 * self.joints
    }

    pub fn descriptor(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("architecture serializes")
    }

    fn token_specs(&self) -> Vec<LayerSpec> {
        let s = self.init_seed;
        let mut specs = vec![LayerSpec::linear(TOKEN_DIMS, self.token_dim, s)];
        for i in 0..self.token_layers {
            specs.push(LayerSpec::relu(self.token_dim));
            specs.push(LayerSpec::linear(
                self.token_dim,
                self.token_dim,
                s.wrapping_add(1 + i as u64),
            ));
        }
        specs
    }

    fn decoder_specs(&self) -> Vec<LayerSpec> {
        let s = self.init_seed.wrapping_add(1000);
        let mut specs = vec![LayerSpec::linear(
            self.token_dim + CONDITION_DIMS,
            self.hidden_dim,
            s,
        )];
        for i in 0..self.residual_blocks {
            specs.push(LayerSpec::residual(self.hidden_dim, s.wrapping_add(1 + i as u64)));
        }
        specs.push(LayerSpec::layer_norm(self.hidden_dim));
        specs.push(LayerSpec::linear(
            self.hidden_dim,
            self.output_dim(),
            s.wrapping_add(500),
        ));
        specs
    }
}

/// Learned IK solver: per-token MLP, masked mean pooling, conditioned
/// residual decoder, 6D rotation head.
#[derive(Clone, Debug, PartialEq)]
pub struct IkModel {
    arch: Architecture,
    token_net: Sequential,
    decoder: Sequential,
}

/// Batched network inputs.
pub(crate) struct Batch {
    /// All tokens of all examples, stacked.
    pub tokens: Tensor,
    /// Token count per example.
    pub counts: Vec<usize>,
    pub conditions: Tensor,
}

impl Batch {
    pub fn from_inputs<'a>(inputs: impl IntoIterator<Item = &'a IkInput>) -> Self {
        let mut tokens = Vec::new();
        let mut counts = Vec::new();
        let mut conditions = Vec::new();
        for input in inputs {
            for e in input.effectors.effectors() {
                tokens.extend_from_slice(&encode_effector(e, &input.shape));
            }
            counts.push(input.effectors.len());
            conditions.extend_from_slice(&encode_conditioning(&input.shape));
        }
        let n_tok = tokens.len() / TOKEN_DIMS;
        let b = counts.len();
        Self {
            tokens: Tensor::matrix(n_tok, TOKEN_DIMS, tokens),
            counts,
            conditions: Tensor::matrix(b, CONDITION_DIMS, conditions),
        }
    }
}

pub(crate) struct ForwardCache {
    token_caches: Vec<Cache>,
    decoder_caches: Vec<Cache>,
    pub decoded: Vec<Decoded>,
}

/// Head output for one example.
pub(crate) struct Decoded {
    pub root: Vec3,
    pub rotations: Vec<Orthonormalized>,
}

impl Decoded {
    pub fn pose(&self) -> Pose {
        Pose {
            root_position: self.root,
            rotations: self.rotations.iter().map(|o| o.rotation).collect(),
        }
    }
}

impl IkModel {
    pub fn new(arch: Architecture) -> Result<Self> {
        if arch.joints != CANONICAL_JOINT_COUNT {
            return Err(Error::Dimension {
                context: "model joint count",
                expected: CANONICAL_JOINT_COUNT,
                actual: arch.joints,
            });
        }
        if arch.token_dim == 0 || arch.hidden_dim == 0 {
            return Err(Error::Input("network widths must be positive".into()));
        }
        Ok(Self {
            token_net: Sequential::from_specs(&arch.token_specs())?,
            decoder: Sequential::from_specs(&arch.decoder_specs())?,
            arch,
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn template_id(&self) -> &str {
        &self.arch.template_id
    }

    pub fn check_template(&self, template: &SkeletonTemplate) -> Result<()> {
        if template.id() != self.arch.template_id {
            return Err(Error::TemplateMismatch {
                expected: self.arch.template_id.clone(),
                actual: template.id().to_string(),
            });
        }
        Ok(())
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut p = self.token_net.params();
        p.extend(self.decoder.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.token_net.params_mut();
        p.extend(self.decoder.params_mut());
        p
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut n = self.token_net.param_names("token");
        n.extend(self.decoder.param_names("decoder"));
        n
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    pub(crate) fn forward(&self, batch: &Batch) -> Result<ForwardCache> {
        let b = batch.counts.len();
        let d = self.arch.token_dim;
        let n_token_layers = self.token_net.layers.len();
        let (token_out, token_caches) = if batch.tokens.rows() > 0 {
            self.token_net.forward(&batch.tokens, 0)?
        } else {
            (Tensor::zeros(&[0, d]), Vec::new())
        };

        // masked mean pooling, concatenated with the shape condition
        let width = d + CONDITION_DIMS;
        let mut pooled = Tensor::zeros(&[b, width]);
        let mut start = 0;
        for (i, &n) in batch.counts.iter().enumerate() {
            let row = pooled.row_mut(i);
            if n > 0 {
                for t in start..start + n {
                    for (acc, v) in row[..d].iter_mut().zip(token_out.row(t)) {
                        *acc += v;
                    }
                }
                let inv = 1.0 / n as f64;
                row[..d].iter_mut().for_each(|v| *v *= inv);
            }
            row[d..].copy_from_slice(batch.conditions.row(i));
            start += n;
        }

        let (out, decoder_caches) = self.decoder.forward(&pooled, n_token_layers)?;
        let decoded = (0..b).map(|i| self.decode_row(out.row(i))).collect();
        Ok(ForwardCache {
            token_caches,
            decoder_caches,
            decoded,
        })
    }

    fn decode_row(&self, row: &[f64]) -> Decoded {
        let root = Vec3::new(row[0], row[1], row[2]);
        let rotations = (0..self.arch.joints)
            .map(|j| {
                let mut v = [0.0; 6];
                for k in 0..6 {
                    v[k] = row[3 + 6 * j + k] + IDENTITY_6D[k];
                }
                orthonormalize_6d(&v)
            })
            .collect();
        Decoded { root, rotations }
    }

    /// Backpropagates gradients of the raw head output (one row per example)
    /// into parameter gradient buffers aligned with [`IkModel::params`].
    pub(crate) fn backward(
        &self,
        batch: &Batch,
        cache: &ForwardCache,
        grad_out: &Tensor,
        grads: &mut [Tensor],
    ) {
        let n_token_params = self.token_net.params().len();
        let (g_token, g_dec) = grads.split_at_mut(n_token_params);
        let g_pooled = self
            .decoder
            .backward(&cache.decoder_caches, grad_out, g_dec);
        if batch.tokens.rows() == 0 {
            return;
        }
        let d = self.arch.token_dim;
        let mut g_tokens = Tensor::zeros(&[batch.tokens.rows(), d]);
        let mut start = 0;
        for (i, &n) in batch.counts.iter().enumerate() {
            let inv = 1.0 / n.max(1) as f64;
            let src = &g_pooled.row(i)[..d];
            for t in start..start + n {
                for (dst, v) in g_tokens.row_mut(t).iter_mut().zip(src) {
                    *dst = v * inv;
                }
            }
            start += n;
        }
        self.token_net
            .backward(&cache.token_caches, &g_tokens, g_token);
    }

    pub fn zero_grads(&self) -> Vec<Tensor> {
        self.params().iter().map(|t| t.zeros_like()).collect()
    }

    pub fn solve(&self, template: &SkeletonTemplate, input: &IkInput) -> Result<Pose> {
        Ok(self
            .solve_batch(template, std::slice::from_ref(input))?
            .pop()
            .expect("one pose per input"))
    }

    /// Every pose in the result depends only on its own input.
    pub fn solve_batch(&self, template: &SkeletonTemplate, inputs: &[IkInput]) -> Result<Vec<Pose>> {
        self.check_template(template)?;
        for input in inputs {
            input.shape.validate()?;
            for e in input.effectors.effectors() {
                e.validate(self.arch.joints)?;
            }
        }
        let batch = Batch::from_inputs(inputs);
        let cache = self.forward(&batch)?;
        Ok(cache.decoded.iter().map(Decoded::pose).collect())
    }

    pub fn to_checkpoint(&self, training: TrainingMeta, dtype: DType) -> Checkpoint {
        Checkpoint {
            architecture: self.arch.descriptor(),
            tensors: self
                .param_names()
                .into_iter()
                .zip(self.params().into_iter().cloned())
                .collect(),
            training,
            dtype,
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let arch: Architecture = serde_json::from_value(ckpt.architecture.clone())?;
        let mut model = Self::new(arch)?;
        let names = model.param_names();
        if names.len() != ckpt.tensors.len() {
            return Err(crate::error::CheckpointError::Corrupt(format!(
                "expected {} tensors, found {}",
                names.len(),
                ckpt.tensors.len()
            ))
            .into());
        }
        for ((name, dst), (found, src)) in names
            .iter()
            .zip(model.params_mut())
            .zip(&ckpt.tensors)
        {
            if name != found || dst.shape() != src.shape() {
                return Err(crate::error::CheckpointError::Corrupt(format!(
                    "tensor `{found}` {:?} does not fit `{name}` {:?}",
                    src.shape(),
                    dst.shape()
                ))
                .into());
            }
            *dst = src.clone();
        }
        Ok(model)
    }
}
