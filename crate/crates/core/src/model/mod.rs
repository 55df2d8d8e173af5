//! The toy encoder/decoder, its objective, training and inference.

mod checkpoint;
mod config;
mod inference;
mod loss;
mod network;
mod optim;
mod schedule;
mod train;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use config::{CodebookSizes, ModelConfig, REFERENCE_TOTAL_STEPS};
pub use inference::{convert, extract_embeddings, reconstruct, Conversion, Converter, ForwardOutput};
pub use loss::{reconstruction_loss, reconstruction_loss_rows, LossBreakdown, LossNodes};
pub use network::{build_model, parameter_count, BatchForward, BoundParams, BranchForward, Mode, Model, Param};
pub use optim::{Adam, ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON};
pub use schedule::learning_rate;
pub use train::{train, train_from, StepRecord, TrainedModel, Trainer};

/// Learning-rate multiplier applied at each anneal step.
pub const ANNEAL_FACTOR: f64 = 0.3;
