//! Commonsense-enhanced multimodal intent recognition.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`] and [`autodiff`]: a small dense tensor engine with
//!   reverse-mode differentiation, generic over `f32`/`f64`.
//! - [`nn`]: parameter initialisation, linear layers and the LSTM cell.
//! - [`bundle`]: the on-disk feature bundle, padding, and synthetic data.
//! - [`coke`]: commonsense relation retrieval and template rendering.
//! - [`tem`], [`maf`], [`head`], [`model`]: the fusion network.
//! - [`train`], [`metrics`]: AdamW fitting, early stopping, evaluation.
//! - [`checkpoint`]: parameter save and load.
//! - [`experiment`]: the train/ablate/sweep harness used by the CLI.

pub mod autodiff;
pub mod bundle;
pub mod checkpoint;
pub mod coke;
pub mod error;
pub mod experiment;
pub mod head;
pub mod maf;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod rng;
pub mod tem;
pub mod tensor;
pub mod train;

pub use autodiff::{Graph, Mode, NodeId, ParamId, ParamStore, Parameter};
pub use bundle::{
    load_bundle, write_bundle, Bundle, DatasetManifest, Dims, Lengths, Split, UtteranceRecord,
};
pub use coke::{retrieve, KnowledgeStore};
pub use error::{Result, TecoError};
pub use experiment::{ExperimentConfig, RunResult, Task};
pub use metrics::{compute_metrics, MetricsReport};
pub use model::{Ablation, Modalities, ModelConfig, ModelInput, TecoModel, Variant};
pub use rng::SplitRng;
pub use tensor::{Real, Tensor};
pub use train::{fit, TrainConfig};
