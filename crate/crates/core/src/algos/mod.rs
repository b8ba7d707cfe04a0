//! Offline actor-critic training: TD3, TD3+BC, AWAC, IQL and advantage-sampled
//! actor-critic (ASAC), sharing one critic ensemble with tunable pessimism.

pub mod bc;
pub mod config;
pub mod es;
pub mod losses;
pub mod train;

pub use bc::BehaviorCloning;
pub use config::{AlgoConfig, Algorithm};
pub use es::{evaluate, evaluation_sampling_action, ActionMode};
pub use losses::{ensemble_aggregate, expectile_loss, wis_weights};
pub use train::{write_metrics_csv, Agent, Archs, StepMetrics, TrainState};
