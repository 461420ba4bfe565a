//! Canonical manifold flows: injective normalizing flows (a latent flow `h`,
//! zero padding, then a data-space flow `f`) trained with a penalty that
//! pushes the pullback metric `JᵀJ` toward diagonal.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod datasets;
pub mod error;
pub mod evalkit;
pub mod flownet;
pub mod injective;
pub mod linalg;
pub mod metric;
pub mod scalar;
pub mod training;

pub use checkpoint::Checkpoint;
pub use config::RunConfig;
pub use error::{Error, ErrorKind, Result};
pub use flownet::{FlowModule, FlowSpec, LayerSpec, ParamGrad};
pub use injective::{InjectiveFlow, LatentPrior};
pub use linalg::{Matrix, Rng};
pub use metric::{EstimatorConfig, EstimatorMode, MetricTensor};
pub use training::{LossBreakdown, TrainConfig};
