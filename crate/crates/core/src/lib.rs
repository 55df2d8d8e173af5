//! Grouped, vector-quantized speaker/accent disentanglement at desk scale.

pub mod data;
pub mod embedding;
pub mod error;
pub mod metrics;
pub mod mlvae;
pub mod model;
pub mod tensor;
pub mod vq;

pub use data::{Dataset, SynthSpec, Utterance};
pub use embedding::{EmbeddingKind, EmbeddingRecord, LabelKind};
pub use error::{Error, Result};
pub use mlvae::{GaussianPosterior, GroupIndex};
pub use model::{LossBreakdown, Model, ModelConfig, TrainedModel};
pub use tensor::{Graph, NodeId, Tensor};
pub use vq::{Branch, Codebook, QuantizationResult};
