//! Skip-GANomaly: adversarial training of a skip-connected encoder-decoder
//! on normal-only images, with per-sample anomaly scores and ROC/AUC
//! evaluation.
//!
//! The library is generic over the scalar type (`f32` or `f64`); the
//! aliases below fix it for the common cases.

mod error;
mod scalar;

pub mod data;
pub mod evaluation;
pub mod model;
pub mod nn;
pub mod objectives;
pub mod scoring;
pub mod synthetic;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub use data::{AnomalyDataset, LabeledImage};
pub use evaluation::{auc, roc_curve, EvalReport, RocCurve};
pub use model::{build_discriminator, build_generator, Discriminator, Generator, GeneratorConfig};
pub use objectives::{LatentNorm, LossReport, LossWeights};
pub use scoring::{score_dataset, ScoreConfig, ScoredSample};
pub use synthetic::SyntheticSpec;
pub use trainer::{fit, Checkpoint, TrainConfig, TrainHistory, Trainer};

pub type Generator32 = Generator<f32>;
pub type Generator64 = Generator<f64>;
pub type Discriminator32 = Discriminator<f32>;
pub type Discriminator64 = Discriminator<f64>;
pub type Trainer32 = Trainer<f32>;
pub type Trainer64 = Trainer<f64>;
pub type Checkpoint32 = Checkpoint<f32>;
pub type Image32 = LabeledImage<f32>;
pub type Dataset32 = AnomalyDataset<f32>;
