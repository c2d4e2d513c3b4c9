//! Exact solvers for the capacitated assignment problem on small and
//! medium instances, and the weak-duality check that ties the dual
//! balancer to them.

mod exhaustive;
mod flow;

pub use exhaustive::{is_enumerable, search_space, solve_exhaustive, MAX_ENUMERATION};
pub use flow::{solve_flow, MAX_FLOW_CELLS};

use crate::batch::dual_objective;
use crate::error::{Error, Result};
use crate::routing::{BalanceConfig, ScoreMatrix};

/// Tolerance below zero accepted for a weak-duality gap.
pub const DUALITY_TOLERANCE: f64 = 1e-9;

/// An optimal integral assignment and its objective.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactSolution {
    experts: usize,
    selections: Vec<Vec<usize>>,
    objective: f64,
}

impl ExactSolution {
    fn from_selections(scores: &ScoreMatrix, selections: Vec<Vec<usize>>) -> Self {
        let objective = selections
            .iter()
            .enumerate()
            .flat_map(|(i, sel)| sel.iter().map(move |&j| (i, j)))
            .map(|(i, j)| scores.get(i, j))
            .sum();
        Self {
            experts: scores.cols(),
            selections,
            objective,
        }
    }

    /// Expert sets per token, each sorted ascending.
    pub fn selections(&self) -> &[Vec<usize>] {
        &self.selections
    }

    pub fn objective(&self) -> f64 {
        self.objective
    }

    /// Dense 0/1 matrix `x`.
    pub fn x(&self) -> Vec<Vec<u8>> {
        self.selections
            .iter()
            .map(|sel| {
                let mut row = vec![0u8; self.experts];
                for &j in sel {
                    row[j] = 1;
                }
                row
            })
            .collect()
    }

    pub fn loads(&self) -> Vec<usize> {
        let mut loads = vec![0; self.experts];
        for &j in self.selections.iter().flatten() {
            loads[j] += 1;
        }
        loads
    }

    /// Exactly `k` distinct experts per token and no expert above capacity.
    pub fn is_feasible(&self, cfg: &BalanceConfig) -> bool {
        let per_token = self.selections.iter().all(|sel| {
            let mut s = sel.clone();
            s.sort_unstable();
            s.dedup();
            s.len() == cfg.top_k() && sel.len() == cfg.top_k() && s.iter().all(|&j| j < self.experts)
        });
        per_token && self.loads().iter().all(|&l| l <= cfg.capacity())
    }
}

/// Best available exact solver: enumeration when small enough, otherwise
/// min-cost flow when the capacity is integral.
pub fn solve_best(scores: &ScoreMatrix, cfg: &BalanceConfig) -> Result<ExactSolution> {
    if is_enumerable(cfg) {
        solve_exhaustive(scores, cfg)
    } else {
        solve_flow(scores, cfg)
    }
}

/// `D(p, q) - OPT`; fails when it is below `-DUALITY_TOLERANCE`.
pub fn verify_weak_duality(
    scores: &ScoreMatrix,
    p: &[f64],
    q: &[f64],
    cfg: &BalanceConfig,
    solution: &ExactSolution,
) -> Result<f64> {
    if p.iter().chain(q).any(|&v| v.is_nan() || v < 0.0) {
        return Err(Error::Domain("dual variables must be non-negative".into()));
    }
    let gap = dual_objective(scores, p, q, cfg)? - solution.objective();
    if gap < -DUALITY_TOLERANCE {
        return Err(Error::Invariant(format!("weak duality violated: gap {gap:e}")));
    }
    Ok(gap)
}
