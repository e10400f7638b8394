//! Network Hawkes binomial topic model.
//!
//! Timestamped text events on a network of sources are modeled as a marked
//! multivariate Hawkes process whose marks are binary bags of words. This
//! crate covers the whole workflow:
//!
//! - [`corpus`]: ingestion, tokenization, keyword expansion, dictionary and marks
//! - [`model`]: parameters, mark masses, intensity and log-likelihood
//! - [`inference`]: EM fitting and branching probabilities
//! - [`simulator`]: branching-process simulation with ground-truth parentage
//! - [`topics`]: branching forests, topic clusters, timelines and UCI coherence
//! - [`influence`]: influence networks, degree rankings and activity decomposition

// negated comparisons are there so NaN fails them
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod corpus;
pub mod error;
pub mod inference;
pub mod influence;
pub mod io;
pub mod mark;
pub mod model;
pub mod simulator;
pub mod topics;

pub use corpus::{Dictionary, MarkedEvent, NodeInfo, NodeRoster, RawPost, TokenizedPost};
pub use error::{HbtmError, Result};
pub use inference::{e_step, fit, initialize, m_step, BranchingMatrix, FitConfig, FitReport, Tying};
pub use influence::{activity_decomposition, degree_rankings, influence_network, InfluenceNetwork, NodeActivity};
pub use mark::Mark;
pub use model::{intensity, j0_log_mass, j1_log_mass, log_likelihood, mark_overlap, ModelParams, OverlapCounts};
pub use simulator::{branching_ratio, simulate, SimulatedEvent};
pub use topics::{extract_clusters, sample_forest, uci_coherence, BranchingForest, ForestMode, TopicCluster};
