//! Load-balanced top-k expert routing for Mixture-of-Experts gates.
//!
//! The main router ([`batch::balance_batch`]) keeps a per-expert dual
//! vector `q` for each gate and routes every token to the top-k of
//! `s - q`, refreshing `q` by a few exact coordinate-descent steps on the
//! dual of the capacitated assignment LP. Around it sit online variants
//! ([`online`]), baseline routers and balance metrics ([`baselines`]), exact
//! solvers used as ground truth ([`oracle`]) and an experiment harness
//! ([`harness`]).

pub mod baselines;
pub mod batch;
pub mod error;
pub mod harness;
pub mod online;
pub mod oracle;
pub mod order_stat;
pub mod routing;

pub use error::{Error, Result};
pub use routing::{Assignment, BalanceConfig, LoadVector, ScoreMatrix};
