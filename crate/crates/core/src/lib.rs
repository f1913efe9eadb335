//! Multi-agent deep Q-learning with depthwise-convolution communication and
//! an enhanced mean-field estimate of neighbor interactions.
//!
//! Module map:
//! - [`nn`]: parameters, dense layers, optimizer, gradient checking, checkpoints
//! - [`dccp`]: grid topologies and the depthwise-convolution communication layer
//! - [`mean_field`]: mean actions, the mean-field Q baseline rule, Taylor-remainder probe
//! - [`predictors`]: Q-value (PRN) and observation (OPN) predictors
//! - [`vfn`]: value network with state estimation, mean-field estimate and DQN head
//! - [`envs`]: `TrafficGridLite` and `SyncGrid`
//! - [`trainer`]: rollouts, joint replay, the three-loss update and target sync
//! - [`experiment`]: run configs, multi-seed runs, summaries and comparisons
//! - [`verify`]: finite-difference and brute-force equivalence suites

pub mod dccp;
pub mod envs;
pub mod error;
pub mod experiment;
pub mod mean_field;
pub mod nn;
pub mod predictors;
pub mod trainer;
pub mod verify;
pub mod vfn;

pub use error::{Error, Result};
