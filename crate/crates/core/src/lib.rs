//! Class specific mean autoencoders for binary (minor/adult) classification:
//! dense linear algebra, CSMA training with plain and denoising baselines,
//! a classifier head, dataset handling, evaluation metrics and the
//! experiment pipeline behind the `csma` binary.

pub mod autoencoder;
pub mod classifier;
pub mod data;
pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod linalg;
pub mod metrics;
pub mod persist;

pub use autoencoder::{CsmaModel, LayerWeights, TrainConfig};
pub use classifier::ClassifierModel;
pub use data::{LabeledDataset, PerturbationSpec};
pub use error::{Error, Result};
pub use linalg::{Matrix, Rng};
pub use metrics::{EvalReport, McNemarResult};
