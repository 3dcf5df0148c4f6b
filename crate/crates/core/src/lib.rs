//! Shape-aware learned inverse kinematics for a parametric humanoid
//! skeleton, with kernel-density shape inversion, greedy effector recovery,
//! retargeting and a scene bootstrap pipeline.

pub mod error;
pub mod ik;
pub mod metrics;
pub mod nn;
pub mod recovery;
pub mod retarget;
pub mod rotation;
pub mod scene;
pub mod shape_inversion;
pub mod skeleton;
pub mod wire;

pub use error::{CheckpointError, Error, Result};
