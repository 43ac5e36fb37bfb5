//! Sample-efficient deep RL for task-oriented dialogue policies.
//!
//! This crate implements a small but complete policy-optimization stack:
//!
//! - [`nn`] — dense feed-forward networks with exact analytic gradients and
//!   an Adam optimizer, all on flat `f64` parameter vectors;
//! - [`env`] — a desk-scale slot-filling dialogue MDP with an agenda-based
//!   user simulator, a semantic-error channel and a hand-crafted rule policy;
//! - [`replay`] — bounded FIFO experience pools and a frozen supervised pool;
//! - [`acer`] — advantage actor-critic (A2C) and its off-policy variant with
//!   experience replay, importance-sampling corrections and a trust-region
//!   gradient projection (TRACER);
//! - [`enacer`] — episodic natural actor-critic with experience replay, with
//!   the natural gradient estimated by least squares over episode scores;
//! - [`dqn`] — a Q-learning baseline with target network and double-DQN
//!   targets;
//! - [`demo`] — demonstration corpora, supervised pre-training and the
//!   combined RL+SL replay objective;
//! - [`harness`] — training loops, ε-greedy behaviour policies, periodic
//!   evaluation and CSV/JSONL reporting.
//!
//! Every gradient in the crate is written by hand and checked against
//! central finite differences in the test suite. Runs are reproducible:
//! the same configuration and seed give byte-identical learning curves.

pub mod acer;
pub mod demo;
pub mod dqn;
pub mod enacer;
pub mod env;
pub mod harness;
pub mod nn;
pub mod replay;
pub(crate) mod rng;

pub use rng::stream_rng;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("network specs do not match")]
    SpecMismatch,
    #[error("gradient contains non-finite entries; update rejected")]
    NonFiniteGradient,
    #[error("action index {action} out of range (action count {count})")]
    ActionOutOfRange { action: usize, count: usize },
    #[error("behaviour probability must be positive, got {0}")]
    NonPositiveBehaviourProb(f64),
    #[error("cannot sample from an empty pool")]
    EmptyPool,
    #[error("supervised pool is frozen; demonstration data is never overwritten")]
    FrozenPool,
    #[error("episode is already finished; call reset before stepping")]
    EpisodeDone,
    #[error("episode is still running; success is defined only at termination")]
    EpisodeNotDone,
    #[error("least-squares system is singular; retry with ridge > 0")]
    SingularSystem,
    #[error("invalid ontology: {0}")]
    InvalidOntology(String),
    #[error("unsupported configuration: {0}")]
    UnsupportedConfig(String),
    #[error("corpus error: {0}")]
    Corpus(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
