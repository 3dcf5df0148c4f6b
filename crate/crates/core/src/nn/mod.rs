//! Minimal dense network substrate with explicit gradients.

mod adam;
mod checkpoint;
mod layers;
mod rot6d;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{
    architecture_hash, checkpoint_digest, load_checkpoint, save_checkpoint, Checkpoint, DType,
    TrainingMeta, CHECKPOINT_VERSION,
};
pub use layers::{Cache, Layer, LayerKind, LayerNorm, LayerSpec, Linear, ResidualBlock, Sequential};
pub use rot6d::{orthonormalize_6d, orthonormalize_6d_backward, Orthonormalized};
pub use tensor::Tensor;
