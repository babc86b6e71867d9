//! Graph-convolutional recommendation with inverse-propensity neighbor
//! aggregation.
//!
//! The pipeline is: [`data`] builds splits from an interaction log,
//! [`graph`] holds the training interactions, [`propensity`] estimates item
//! exposure, [`aggregation`] turns both into a sparse propagation operator,
//! [`model`] propagates layer-0 embeddings through it, [`training`] fits the
//! embeddings with (IPS-)BPR and [`evaluation`] ranks held-out positives.
//!
//! Numeric types are generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the common `f64` instantiation.

pub mod aggregation;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod graph;
pub mod matrix;
pub mod model;
pub mod propensity;
pub mod scalar;
pub mod training;

pub use aggregation::{AggregationOperator, Normalization, Strategy};
pub use checkpoint::{read_checkpoint, write_checkpoint, CheckpointMeta};
pub use data::{Dataset, InputFormat, SplitConfig};
pub use error::{Error, Result};
pub use evaluation::{evaluate, EvalConfig, EvalReport};
pub use graph::{InteractionGraph, Side};
pub use matrix::Matrix;
pub use model::{EmbeddingModel, FinalEmbeddings};
pub use propensity::PropensityTable;
pub use scalar::Scalar;
pub use training::{train, LossKind, TrainConfig, TrainOutcome};

pub type Operator = AggregationOperator<f64>;
pub type Model = EmbeddingModel<f64>;
pub type Embeddings = FinalEmbeddings<f64>;
pub type Propensities = PropensityTable<f64>;
pub type DenseMatrix = Matrix<f64>;

pub type Operator32 = AggregationOperator<f32>;
pub type Model32 = EmbeddingModel<f32>;
pub type Embeddings32 = FinalEmbeddings<f32>;
pub type Propensities32 = PropensityTable<f32>;
