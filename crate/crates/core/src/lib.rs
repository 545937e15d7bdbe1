//! Continual learning with information-bottleneck masked sub-networks.
//!
//! Each backbone weight carries a variational multiplier `μ + ε·σ`. A per-layer KL
//! penalty drives unneeded multipliers toward zero; after a task finishes, weights
//! whose `μ²/σ²` exceeds one form that task's binary mask. Masks of finished tasks
//! are frozen, and every task is later evaluated through its own mask and stored
//! multipliers, so earlier tasks cannot be forgotten.

pub mod decompose;
pub mod error;
pub mod harness;
pub mod mask;
pub mod metrics;
pub mod network;
pub mod tensor;
pub mod vib;

pub use decompose::{decompose_ratio, k_rank, update_schedule, CompressionSchedule, GammaEvent};
pub use error::{IbmError, Result};
pub use mask::{
    check_capacity, combine_masks, compute_alpha, extract_mask, freeze_gradients, reinit_va_params,
    BinaryMask, CumulativeMask, MemoryPool, TaskArtifact,
};
pub use metrics::{acc, accuracy, bwt, fwt, AccuracyMatrix, FwtRange};
pub use network::{AdamConfig, AdamState, Head, LossScale, Network};
pub use tensor::{gaussian_sample, svd, Matrix, SeededRng, Svd};
pub use vib::{Activation, NoiseMode, VaParams, VibLayer};
