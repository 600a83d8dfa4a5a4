//! Deterministic federated-learning simulation for intrusion-detection
//! classifiers.
//!
//! The pipeline runs `data` (CSV ingestion or synthetic blobs, label
//! collapsing, benign redistribution, balancing, server test split) into
//! `partition` (IID or category-skewed clients) into `fl` (FedAvg, FedProx
//! and Scaffold rounds over an MLP from `model`). `harness` wires it
//! together and writes plot-ready metrics.

pub mod data;
pub mod error;
pub mod fl;
pub mod harness;
pub mod model;
pub mod numerics;
pub mod partition;

pub use data::{Dataset, Granularity, SynthSpec};
pub use error::{Error, Result};
pub use fl::{ClientState, ClientUpdate, RoundReport, ServerState, Strategy};
pub use harness::{ExperimentConfig, MetricsRow};
pub use model::{MlpConfig, ParameterVector};
pub use numerics::{Matrix, SeededRng};
pub use partition::{PartitionMode, PartitionPlan};
