//! Per-batch balancing by coordinate descent on the LP dual.
//!
//! The capacitated assignment LP
//!
//! ```text
//! max  sum_ij s_ij x_ij
//! s.t. sum_j x_ij <= k,  sum_i x_ij <= C,  0 <= x <= 1
//! ```
//!
//! has dual variables `p` (one per token) and `q` (one per expert). With the
//! slack variables eliminated (`r_ij = max(s_ij - p_i - q_j, 0)`) the dual
//! objective is
//!
//! ```text
//! D(p, q) = k * sum p + C * sum q + sum_ij max(s_ij - p_i - q_j, 0)
//! ```
//!
//! which is convex and piecewise linear. Minimizing it exactly in one
//! coordinate gives an order statistic: `p_i` is the (k+1)-th largest of
//! `s_i - q`, `q_j` the (floor(kn/m)+1)-th largest of `s_j - p`, both clamped
//! at zero. A gate keeps `q` between batches; `p` lives for one batch only.

use crate::error::{Error, Result};
use crate::order_stat::clamped_rth_largest;
use crate::routing::{route_with_offsets, Assignment, BalanceConfig, ScoreMatrix};

/// Persistent dual memory of one gate.
#[derive(Debug, Clone, PartialEq)]
pub struct DualState {
    q: Vec<f64>,
    last_dual_objective: Option<f64>,
}

impl DualState {
    /// Fresh state with `q = 0`.
    pub fn new(experts: usize) -> Self {
        Self {
            q: vec![0.0; experts],
            last_dual_objective: None,
        }
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    /// Dual objective at the end of the most recent batch.
    pub fn last_dual_objective(&self) -> Option<f64> {
        self.last_dual_objective
    }

    pub fn reset(&mut self) {
        self.q.fill(0.0);
        self.last_dual_objective = None;
    }
}

/// Result of balancing one batch.
#[derive(Debug, Clone)]
pub struct BatchOutcome {
    pub assignment: Assignment,
    /// Token duals after the final iteration.
    pub p: Vec<f64>,
    /// `D(0, q_in)` followed by the objective after every single update,
    /// i.e. `2T + 1` values that should never increase.
    pub dual_trace: Vec<f64>,
}

fn check_nonneg(name: &str, v: &[f64]) -> Result<()> {
    match v.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
        Some(bad) => Err(Error::Domain(format!("{name} must be finite and >= 0, found {bad}"))),
        None => Ok(()),
    }
}

/// Token duals: `p_i = max(0, (k+1)-th largest of s_i - q)`.
pub fn update_p(scores: &ScoreMatrix, q: &[f64], k: usize) -> Result<Vec<f64>> {
    let m = scores.cols();
    if q.len() != m {
        return Err(Error::Structure(format!("q has {} entries for {m} experts", q.len())));
    }
    if k == 0 || k >= m {
        return Err(Error::Config(format!("top-k must satisfy 1 <= k < m, got k={k}, m={m}")));
    }
    check_nonneg("q", q)?;
    let mut scratch = vec![0.0; m];
    Ok(scores
        .iter_rows()
        .map(|row| {
            for ((dst, s), qj) in scratch.iter_mut().zip(row).zip(q) {
                *dst = s - qj;
            }
            clamped_rth_largest(&mut scratch, k + 1)
        })
        .collect())
}

/// Expert duals: `q_j = max(0, (floor(kn/m)+1)-th largest of s_j - p)`.
pub fn update_q(scores: &ScoreMatrix, p: &[f64], cfg: &BalanceConfig) -> Result<Vec<f64>> {
    scores.check_shape(cfg)?;
    if p.len() != scores.rows() {
        return Err(Error::Structure(format!(
            "p has {} entries for {} tokens",
            p.len(),
            scores.rows()
        )));
    }
    check_nonneg("p", p)?;
    let rank = cfg.capacity_rank();
    let mut scratch = vec![0.0; scores.rows()];
    Ok((0..scores.cols())
        .map(|j| {
            for (i, dst) in scratch.iter_mut().enumerate() {
                *dst = scores.get(i, j) - p[i];
            }
            clamped_rth_largest(&mut scratch, rank)
        })
        .collect())
}

/// `D(p, q) = k*sum(p) + C*sum(q) + sum_ij max(s_ij - p_i - q_j, 0)` with
/// `C = ceil(kn/m)`.
pub fn dual_objective(scores: &ScoreMatrix, p: &[f64], q: &[f64], cfg: &BalanceConfig) -> Result<f64> {
    scores.check_shape(cfg)?;
    if p.len() != scores.rows() || q.len() != scores.cols() {
        return Err(Error::Structure(format!(
            "dual vectors of length {}/{} for a {}x{} matrix",
            p.len(),
            q.len(),
            scores.rows(),
            scores.cols()
        )));
    }
    let slack: f64 = scores
        .iter_rows()
        .zip(p)
        .map(|(row, pi)| {
            row.iter()
                .zip(q)
                .map(|(s, qj)| (s - pi - qj).max(0.0))
                .sum::<f64>()
        })
        .sum();
    let token_term = cfg.top_k() as f64 * p.iter().sum::<f64>();
    let expert_term = cfg.capacity() as f64 * q.iter().sum::<f64>();
    Ok(token_term + expert_term + slack)
}

/// Returns the first index where `trace` increases by more than
/// `rel_tol * max(1, |previous|)`.
pub fn find_descent_violation(trace: &[f64], rel_tol: f64) -> Option<usize> {
    trace
        .windows(2)
        .position(|w| w[1] > w[0] + rel_tol * w[0].abs().max(1.0))
        .map(|i| i + 1)
}

/// Runs `T` rounds of (p-update, q-update) from the stored `q`, then routes
/// every token to the top-k of `s_i - q`.
///
/// `q` is written back into `state`; `p` is returned for diagnostics only.
pub fn balance_batch(scores: &ScoreMatrix, state: &mut DualState, cfg: &BalanceConfig) -> Result<BatchOutcome> {
    scores.check_shape(cfg)?;
    if state.q.len() != cfg.experts() {
        return Err(Error::Structure(format!(
            "dual state has {} experts, config has {}",
            state.q.len(),
            cfg.experts()
        )));
    }

    let mut q = state.q.clone();
    let mut p = vec![0.0; scores.rows()];
    let mut dual_trace = Vec::with_capacity(2 * cfg.iters() + 1);
    dual_trace.push(dual_objective(scores, &p, &q, cfg)?);
    for _ in 0..cfg.iters() {
        p = update_p(scores, &q, cfg.top_k())?;
        dual_trace.push(dual_objective(scores, &p, &q, cfg)?);
        q = update_q(scores, &p, cfg)?;
        dual_trace.push(dual_objective(scores, &p, &q, cfg)?);
    }

    let assignment = route_with_offsets(scores, &q, cfg.top_k())?;
    state.q = q;
    state.last_dual_objective = dual_trace.last().copied();
    Ok(BatchOutcome {
        assignment,
        p,
        dual_trace,
    })
}
