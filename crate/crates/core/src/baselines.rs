//! Baseline routers and load-balance metrics.

use crate::error::{Error, Result};
use crate::routing::{route_with_offsets, Assignment, BalanceConfig, LoadVector, ScoreMatrix};

/// Default bias update rate of the loss-free router.
pub const DEFAULT_BIAS_RATE: f64 = 0.001;

/// Plain per-token top-k of raw scores.
pub fn route_greedy(scores: &ScoreMatrix, k: usize) -> Result<Assignment> {
    route_with_offsets(scores, &vec![0.0; scores.cols()], k)
}

/// Per-expert selection bias of the loss-free router.
///
/// The bias only reorders experts; gate values always come from the raw
/// scores.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasState {
    bias: Vec<f64>,
    rate: f64,
}

impl BiasState {
    pub fn new(experts: usize, rate: f64) -> Result<Self> {
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(Error::Config(format!("bias rate must be > 0, got {rate}")));
        }
        Ok(Self {
            bias: vec![0.0; experts],
            rate,
        })
    }

    pub fn with_bias(bias: Vec<f64>, rate: f64) -> Result<Self> {
        let mut state = Self::new(bias.len(), rate)?;
        if bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::Domain("bias must be finite".into()));
        }
        state.bias = bias;
        Ok(state)
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    /// `b_j += u * sign(mean_load - load_j)` with `sign(0) = 0`.
    pub fn update(&mut self, loads: &LoadVector) -> Result<()> {
        if loads.counts().len() != self.bias.len() {
            return Err(Error::Structure(format!(
                "{} loads for {} experts",
                loads.counts().len(),
                self.bias.len()
            )));
        }
        let mean = loads.total() as f64 / self.bias.len() as f64;
        for (b, &load) in self.bias.iter_mut().zip(loads.counts()) {
            let diff = mean - load as f64;
            if diff > 0.0 {
                *b += self.rate;
            } else if diff < 0.0 {
                *b -= self.rate;
            }
        }
        Ok(())
    }
}

/// Top-k of `s + b`, gates from raw `s`.
pub fn route_lossfree(scores: &ScoreMatrix, bias: &BiasState, k: usize) -> Result<Assignment> {
    if bias.bias.len() != scores.cols() {
        return Err(Error::Structure(format!(
            "bias has {} entries for {} experts",
            bias.bias.len(),
            scores.cols()
        )));
    }
    let offsets: Vec<f64> = bias.bias.iter().map(|b| -b).collect();
    route_with_offsets(scores, &offsets, k)
}

/// `max_j load_j / mean_load - 1`.
pub fn max_vio(loads: &LoadVector) -> Result<f64> {
    let total = loads.total();
    if total == 0 || loads.counts().is_empty() {
        return Err(Error::Empty("max_vio of a batch with no routed tokens".into()));
    }
    let mean = total as f64 / loads.counts().len() as f64;
    Ok(loads.max() as f64 / mean - 1.0)
}

/// `(mean, max)` of a per-step MaxVio series.
pub fn avg_sup_maxvio(series: &[f64]) -> Result<(f64, f64)> {
    if series.is_empty() {
        return Err(Error::Empty("MaxVio series has no steps".into()));
    }
    let avg = series.iter().sum::<f64>() / series.len() as f64;
    let sup = series.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok((avg, sup))
}

/// Per-step MaxVio values of one run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MaxVioSeries(Vec<f64>);

impl MaxVioSeries {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, value: f64) {
        self.0.push(value);
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn avg_sup(&self) -> Result<(f64, f64)> {
        avg_sup_maxvio(&self.0)
    }
}

/// Auxiliary balance loss `alpha * sum_j f_j P_j`, reported as a metric only.
///
/// `f_j = m/(kn) * #tokens routed to j`, `P_j = mean score of expert j`.
pub fn aux_loss_value(scores: &ScoreMatrix, assignment: &Assignment, alpha: f64, cfg: &BalanceConfig) -> Result<f64> {
    scores.check_shape(cfg)?;
    if assignment.tokens() != scores.rows() || assignment.experts() != scores.cols() {
        return Err(Error::Structure("assignment does not match score matrix".into()));
    }
    let m = cfg.experts() as f64;
    let n = cfg.tokens() as f64;
    let k = cfg.top_k() as f64;
    let loads = assignment.loads();
    let total: f64 = (0..scores.cols())
        .map(|j| {
            let f = m / (k * n) * loads.counts()[j] as f64;
            let p = (0..scores.rows()).map(|i| scores.get(i, j)).sum::<f64>() / n;
            f * p
        })
        .sum();
    Ok(alpha * total)
}
