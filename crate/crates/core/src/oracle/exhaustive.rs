use crate::error::{Error, Result};
use crate::routing::{BalanceConfig, ScoreMatrix};

use super::ExactSolution;

/// Largest search space `(m choose k)^n` the enumerator accepts.
pub const MAX_ENUMERATION: f64 = 1e7;

/// All k-subsets of `0..m` in lexicographic order.
pub(crate) fn combinations(m: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, m: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for j in start..=(m - (k - cur.len())) {
            cur.push(j);
            rec(j + 1, m, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, m, k, &mut Vec::with_capacity(k), &mut out);
    out
}

/// Size of the enumeration space, `(m choose k)^n`, as a float.
pub fn search_space(cfg: &BalanceConfig) -> f64 {
    let (m, k) = (cfg.experts() as f64, cfg.top_k());
    let mut choose = 1.0;
    for i in 0..k {
        choose = choose * (m - i as f64) / (i as f64 + 1.0);
    }
    choose.powi(cfg.tokens() as i32)
}

pub fn is_enumerable(cfg: &BalanceConfig) -> bool {
    search_space(cfg) <= MAX_ENUMERATION
}

struct Search<'a> {
    scores: &'a ScoreMatrix,
    combos: Vec<Vec<usize>>,
    combo_value: Vec<Vec<f64>>,
    // best achievable value from token i onwards, ignoring capacity
    suffix_bound: Vec<f64>,
    capacity: usize,
    loads: Vec<usize>,
    current: Vec<usize>,
    best: Option<(f64, Vec<usize>)>,
}

impl Search<'_> {
    fn run(&mut self, token: usize, value: f64) {
        if token == self.scores.rows() {
            if self.best.as_ref().is_none_or(|(b, _)| value > *b) {
                self.best = Some((value, self.current.clone()));
            }
            return;
        }
        if let Some((best, _)) = &self.best {
            if value + self.suffix_bound[token] < best - 1e-9 {
                return;
            }
        }
        for c in 0..self.combos.len() {
            if self.combos[c].iter().any(|&j| self.loads[j] >= self.capacity) {
                continue;
            }
            for &j in &self.combos[c] {
                self.loads[j] += 1;
            }
            self.current.push(c);
            let v = value + self.combo_value[token][c];
            self.run(token + 1, v);
            self.current.pop();
            for &j in &self.combos[c] {
                self.loads[j] -= 1;
            }
        }
    }
}

/// Maximizes total score with exactly `k` experts per token and at most
/// `ceil(kn/m)` tokens per expert, by enumerating every per-token k-subset.
///
/// Among equal optima the lexicographically smallest selection sequence
/// wins. Refuses instances whose search space exceeds [`MAX_ENUMERATION`].
pub fn solve_exhaustive(scores: &ScoreMatrix, cfg: &BalanceConfig) -> Result<ExactSolution> {
    scores.check_shape(cfg)?;
    if !is_enumerable(cfg) {
        return Err(Error::TooLarge(format!(
            "(m choose k)^n = {:.3e} exceeds the enumeration limit {MAX_ENUMERATION:.0e}",
            search_space(cfg)
        )));
    }
    let combos = combinations(cfg.experts(), cfg.top_k());
    let combo_value: Vec<Vec<f64>> = (0..scores.rows())
        .map(|i| {
            combos
                .iter()
                .map(|c| c.iter().map(|&j| scores.get(i, j)).sum())
                .collect()
        })
        .collect();
    let mut suffix_bound = vec![0.0; scores.rows() + 1];
    for i in (0..scores.rows()).rev() {
        let best = combo_value[i].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        suffix_bound[i] = suffix_bound[i + 1] + best;
    }

    let mut search = Search {
        scores,
        combos,
        combo_value,
        suffix_bound,
        capacity: cfg.capacity(),
        loads: vec![0; cfg.experts()],
        current: Vec::with_capacity(scores.rows()),
        best: None,
    };
    search.run(0, 0.0);
    let (_, picks) = search
        .best
        .ok_or_else(|| Error::Invariant("no capacity-feasible assignment exists".into()))?;
    let selections = picks.iter().map(|&c| search.combos[c].clone()).collect();
    Ok(ExactSolution::from_selections(scores, selections))
}
