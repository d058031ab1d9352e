//! Text classification with a small self-attention encoder, hybrid
//! mean/attention pooling and a softmax head, trained by hand-written
//! backpropagation in `f64`.
//!
//! Pipeline: [`ingest`] turns text into padded id sequences, [`encoder`]
//! produces contextual hidden states, [`aggregate`] pools them into one
//! vector, and [`classify`] maps that vector to class probabilities.
//! [`train`] fits the whole model with Adam; [`metrics`] and [`harness`]
//! evaluate it and run the sensitivity sweeps.

pub mod aggregate;
pub mod checkpoint;
pub mod classify;
pub mod config;
pub mod encoder;
pub mod error;
pub mod gradcheck;
pub mod harness;
pub mod ingest;
pub mod metrics;
pub mod model;
pub mod numeric;
pub mod optim;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError};
pub use config::{BetaSource, ModelDims, TrainConfig};
pub use error::{Error, Result};
pub use ingest::{DatasetSplit, EncodedExample, RawExample, Vocabulary};
pub use metrics::MetricsReport;
pub use model::ModelParams;
pub use numeric::{Matrix, Rng};
