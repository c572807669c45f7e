//! Density network: configuration, forward/backward passes and training.

pub mod adam;
pub mod config;
pub mod density;
pub mod mlp;
pub mod train;

pub use adam::{AdamConfig, AdamState};
pub use config::{CovarianceMode, LayerSpec, NetworkConfig, Segment};
pub use density::{assemble_cholesky, cholesky_to_covariance, mvn_nll, symmetrize, DensityPrediction, LOG_DIAG_BOUND};
pub use mlp::{backward, forward, forward_heads, forward_heads_mc, mean_nll, objective, Batch, HeadOutputs, Mode, NetworkParams};
pub use train::{evaluate, train, DatasetView, EarlyStopping, EpochRecord, InMemoryData, TrainConfig, TrainHistory, TrainingData};
