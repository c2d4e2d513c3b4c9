//! Per-token online balancing on one gate.
//!
//! Each arriving token is routed with the current expert duals `q` first,
//! and only then are the duals refreshed from the token's scores and the
//! per-expert history of past `s_j - p` values. Two history backends exist:
//!
//! * exact: every value kept in an [`ExpertHistory`], so `q_j` is the true
//!   order statistic;
//! * approximate: one [`BucketHistogram`] per expert, so state size does not
//!   grow with the stream and `q_j` is interpolated inside a bucket.

mod histogram;
mod history;

pub use histogram::BucketHistogram;
pub use history::ExpertHistory;

use std::collections::VecDeque;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::order_stat::clamped_rth_largest;
use crate::routing::{ingest_score, select_topk_adjusted, BalanceConfig, LoadVector};

/// How long recorded history and window loads live.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WindowMode {
    /// Clear everything after every `n` tokens (one batch = one instance).
    #[default]
    Batch,
    /// Keep exactly the most recent `n` tokens.
    Sliding,
    /// Never forget.
    Unbounded,
}

impl FromStr for WindowMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "batch" => Ok(WindowMode::Batch),
            "sliding" => Ok(WindowMode::Sliding),
            "unbounded" => Ok(WindowMode::Unbounded),
            other => Err(Error::Config(format!(
                "unknown window mode {other:?} (expected batch, sliding or unbounded)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
enum Histories {
    Exact(Vec<ExpertHistory>),
    Approx(Vec<BucketHistogram>),
}

/// Routing decision for one token.
#[derive(Debug, Clone, PartialEq)]
pub struct OnlineStep {
    pub selected: Vec<usize>,
    /// Raw scores of the selected experts, aligned with `selected`.
    pub gates: Vec<f64>,
    /// Token dual after the last refresh iteration.
    pub p: f64,
}

/// Dual state and history of one gate in online mode.
#[derive(Debug, Clone)]
pub struct OnlineGateState {
    cfg: BalanceConfig,
    window: WindowMode,
    keep_q_on_reset: bool,
    q: Vec<f64>,
    histories: Histories,
    loads: LoadVector,
    tokens_seen: u64,
    window_tokens: usize,
    // sliding mode only: inserted values and selection per token
    recent: VecDeque<(Vec<f64>, Vec<usize>)>,
}

impl OnlineGateState {
    /// Exact variant; `cfg.tokens()` is the window length `n`.
    pub fn exact(cfg: BalanceConfig, window: WindowMode) -> Self {
        let rank = cfg.capacity_rank();
        let histories = Histories::Exact((0..cfg.experts()).map(|_| ExpertHistory::new(rank)).collect());
        Self::with_histories(cfg, window, histories)
    }

    /// Bucketed variant with `buckets` counters per expert.
    pub fn approx(cfg: BalanceConfig, window: WindowMode, buckets: usize) -> Result<Self> {
        if buckets < 1 {
            return Err(Error::Config("bucket count must be >= 1".into()));
        }
        if window == WindowMode::Sliding {
            return Err(Error::Config(
                "sliding windows need to forget individual values; use exact histories".into(),
            ));
        }
        let histories = Histories::Approx((0..cfg.experts()).map(|_| BucketHistogram::new(buckets)).collect());
        Ok(Self::with_histories(cfg, window, histories))
    }

    fn with_histories(cfg: BalanceConfig, window: WindowMode, histories: Histories) -> Self {
        Self {
            cfg,
            window,
            keep_q_on_reset: true,
            q: vec![0.0; cfg.experts()],
            histories,
            loads: LoadVector::zeros(cfg.experts()),
            tokens_seen: 0,
            window_tokens: 0,
            recent: VecDeque::new(),
        }
    }

    /// Whether automatic batch-window resets keep `q` (default) or zero it.
    pub fn keep_q_on_reset(mut self, keep: bool) -> Self {
        self.keep_q_on_reset = keep;
        self
    }

    pub fn config(&self) -> &BalanceConfig {
        &self.cfg
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn is_exact(&self) -> bool {
        matches!(self.histories, Histories::Exact(_))
    }

    pub fn tokens_seen(&self) -> u64 {
        self.tokens_seen
    }

    /// Tokens recorded in the current window.
    pub fn window_tokens(&self) -> usize {
        self.window_tokens
    }

    /// Per-expert loads within the current window.
    pub fn window_loads(&self) -> &LoadVector {
        &self.loads
    }

    /// Exact histories, if this is the exact variant.
    pub fn exact_histories(&self) -> Option<&[ExpertHistory]> {
        match &self.histories {
            Histories::Exact(h) => Some(h),
            Histories::Approx(_) => None,
        }
    }

    pub fn histograms(&self) -> Option<&[BucketHistogram]> {
        match &self.histories {
            Histories::Approx(h) => Some(h),
            Histories::Exact(_) => None,
        }
    }

    /// Bytes held by the state, counting heap buffers at their capacity.
    pub fn footprint_bytes(&self) -> usize {
        let hist = match &self.histories {
            Histories::Exact(h) => h.iter().map(ExpertHistory::footprint_bytes).sum::<usize>(),
            Histories::Approx(h) => h.iter().map(BucketHistogram::footprint_bytes).sum(),
        };
        let recent: usize = self
            .recent
            .iter()
            .map(|(v, s)| v.capacity() * 8 + s.capacity() * std::mem::size_of::<usize>())
            .sum();
        std::mem::size_of::<Self>()
            + self.q.capacity() * std::mem::size_of::<f64>()
            + std::mem::size_of_val(self.loads.counts())
            + hist
            + recent
            + self.recent.capacity() * std::mem::size_of::<(Vec<f64>, Vec<usize>)>()
    }

    /// Clears histories and window loads; `q` survives when `keep_q`.
    pub fn reset_window(&mut self, keep_q: bool) {
        match &mut self.histories {
            Histories::Exact(h) => h.iter_mut().for_each(ExpertHistory::clear),
            Histories::Approx(h) => h.iter_mut().for_each(BucketHistogram::clear),
        }
        self.loads = LoadVector::zeros(self.cfg.experts());
        self.window_tokens = 0;
        self.recent.clear();
        if !keep_q {
            self.q.fill(0.0);
        }
    }

    fn refresh_q(&mut self, j: usize, candidate: f64) {
        let rank = self.cfg.capacity_rank();
        let v = match &self.histories {
            Histories::Exact(h) => h[j].rth_largest_with(candidate),
            Histories::Approx(h) => h[j].rth_largest_with(rank, Some(candidate)),
        };
        self.q[j] = v.map_or(0.0, |v| v.max(0.0));
    }

    /// Routes one token, then refreshes the duals and records its values.
    pub fn step(&mut self, scores: &[f64]) -> Result<OnlineStep> {
        let m = self.cfg.experts();
        let k = self.cfg.top_k();
        if scores.len() != m {
            return Err(Error::Structure(format!("token has {} scores, gate has {m} experts", scores.len())));
        }
        let scores = scores.iter().map(|&s| ingest_score(s)).collect::<Result<Vec<_>>>()?;

        let selected = select_topk_adjusted(&scores, &self.q, k, self.loads.counts())?;
        let gates = selected.iter().map(|&j| scores[j]).collect();

        let mut p = 0.0;
        let mut scratch = vec![0.0; m];
        for _ in 0..self.cfg.iters() {
            for ((dst, s), q) in scratch.iter_mut().zip(&scores).zip(&self.q) {
                *dst = s - q;
            }
            p = clamped_rth_largest(&mut scratch, k + 1);
            for (j, s) in scores.iter().enumerate() {
                self.refresh_q(j, s - p);
            }
        }

        let inserted: Vec<f64> = scores.iter().map(|s| s - p).collect();
        match &mut self.histories {
            Histories::Exact(h) => {
                for (hist, &x) in h.iter_mut().zip(&inserted) {
                    hist.insert(x);
                }
            }
            Histories::Approx(h) => {
                for (hist, &x) in h.iter_mut().zip(&inserted) {
                    hist.insert(x);
                }
            }
        }
        self.loads.add(&selected);
        self.tokens_seen += 1;
        self.window_tokens += 1;

        match self.window {
            WindowMode::Batch if self.window_tokens == self.cfg.tokens() => {
                self.reset_window(self.keep_q_on_reset);
            }
            WindowMode::Sliding => {
                self.recent.push_back((inserted, selected.clone()));
                if self.recent.len() > self.cfg.tokens() {
                    let (old_values, old_sel) = self.recent.pop_front().expect("non-empty");
                    if let Histories::Exact(h) = &mut self.histories {
                        for (hist, x) in h.iter_mut().zip(old_values) {
                            let removed = hist.remove(x);
                            debug_assert!(removed);
                        }
                    }
                    let mut counts = self.loads.counts().to_vec();
                    for j in old_sel {
                        counts[j] -= 1;
                    }
                    self.loads = LoadVector::new(counts);
                    self.window_tokens -= 1;
                }
            }
            _ => {}
        }

        Ok(OnlineStep { selected, gates, p })
    }
}
