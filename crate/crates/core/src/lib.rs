//! Offline actor-critic kernels (TD3, TD3+BC, AWAC, IQL and advantage-sampled
//! actor-critic), a log-space sampling tree, critic ensembles with tunable
//! pessimism, evaluation-time action selection, a synthetic multi-objective
//! dataset pipeline and estimator bias/variance diagnostics.

pub mod algos;
pub mod analysis;
pub mod datasets;
pub mod error;
pub mod logtree;
pub mod nets;
pub mod stats;

pub use error::{Error, ParseError, Result};
pub use logtree::LogSumExpTree;
