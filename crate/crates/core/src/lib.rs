//! Transductive off-policy PPO (ToPPO) with PPO and GePPO-style baselines,
//! plus an exact tabular-MDP oracle for the performance identities and lower
//! bounds the method rests on.
//!
//! Module map:
//! - [`autodiff`]: reverse-mode AD, dense layers, Adam.
//! - [`policy`]: categorical / diagonal-Gaussian policies and the value network.
//! - [`envs`]: cart-pole, pendulum, tabular MDPs and the random-MDP generator.
//! - [`oracle`]: exact dynamic programming on tabular MDPs.
//! - [`estimators`]: GAE, V-trace, advantage normalization.
//! - [`objectives`]: PPO / ToPPO / GePPO clipped surrogates and the value loss.
//! - [`buffer`]: the behavior-policy set with KL-based selection.
//! - [`trainer`]: the ToPPO, PPO and GePPO training loops.
//! - [`config`], [`metrics`]: experiment configuration and CSV output.

pub mod autodiff;
pub mod buffer;
pub mod config;
pub mod envs;
mod error;
pub mod estimators;
pub mod metrics;
pub mod objectives;
pub mod oracle;
pub mod policy;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
