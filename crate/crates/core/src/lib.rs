//! Transductive active learning on a similarity graph.
//!
//! The pipeline is: load a [`Dataset`], build a [`SimilarityGraph`] (perplexity
//! calibrated RBF weights over a kNN support), propagate labels with the
//! harmonic solution ([`HarmonicModel`]), and pick oracle queries by expected
//! error reduction. Hierarchical subquery evaluation ([`strategies::select_hse`])
//! walks an authority-shift [`ClusterTree`] so only `O(log N)` candidates are
//! scored per query.
//!
//! Candidate scoring and per-node graph work run on rayon when the `parallel`
//! feature is enabled (the default). [`Execution::Sequential`] forces the
//! single-threaded path at runtime, which is what the benches compare against.

extern crate self as hse_core;

pub mod dataset;
pub mod eer;
pub mod error;
pub mod exec;
pub mod graph;
pub mod grf;
pub mod hierarchy;
pub mod session;
pub mod strategies;
pub mod synthetic;
#[cfg(test)]
mod testing;

pub use dataset::{split_state, Dataset, DatasetMeta};
pub use eer::{expected_error, expected_risk, select_min_risk, RiskEvaluator, RiskReport};
pub use error::{HseError, Result};
pub use exec::Execution;
pub use graph::{GraphKind, SimilarityGraph};
pub use grf::{predict, HarmonicModel, LabelState};
pub use hierarchy::{build_hierarchy, ClusterTree, TreeNode};
pub use session::{auc, run_simulated, start_session, ActiveSession, LearningCurve, SessionConfig, SimulationResult};
pub use strategies::{SelectionTrace, StrategyConfig, StrategyKind};


