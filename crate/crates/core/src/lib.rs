//! Hierarchical semi-supervised active learning over precomputed feature
//! embeddings.
//!
//! The crate implements the full query-train loop: a softmax classifier
//! head trained with confidence-masked self-training and an EMA shadow,
//! a hierarchical query engine (mini-batch partitioning, spectral
//! clustering on kNN graphs, uncertainty-aware cluster sampling), six
//! baseline query strategies behind the same interface, and a multi-round
//! experiment harness with binary feature/checkpoint formats and a CLI.

pub mod baselines;
pub mod data;
pub mod error;
pub mod hal;
pub mod harness;
pub mod io;
pub mod metrics;
pub mod model;
pub mod pool;
pub mod rng;
pub mod spectral;
pub mod ssl;

pub use data::{FeatureMatrix, LabelVector};
pub use error::{Error, ParseError, Result};
pub use metrics::{compute_metrics, MetricsRecord};
pub use pool::{make_budget_schedule, update_pools, BudgetSchedule, PoolState};
