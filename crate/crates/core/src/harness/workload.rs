//! Synthetic routing-score workloads.
//!
//! Every `(seed, layer, step)` triple maps to its own RNG stream, so a
//! batch can be regenerated in any order, on any thread, bit-identically.

use std::path::PathBuf;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::routing::{clamp_score, BalanceConfig, ScoreMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WorkloadKind {
    /// i.i.d. standard-normal logits.
    Uniform,
    /// Fixed popularity ramp `skew * (m - j) / m` plus noise.
    Skew,
    /// Popularity ramp that random-walks across steps.
    Drift,
    /// Scores read from trace files.
    Trace,
}

impl FromStr for WorkloadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Self::Uniform),
            "skew" => Ok(Self::Skew),
            "drift" => Ok(Self::Drift),
            "trace" => Ok(Self::Trace),
            other => Err(Error::Config(format!(
                "unknown workload {other:?} (expected uniform, skew, drift or trace)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadSpec {
    pub kind: WorkloadKind,
    pub skew: f64,
    pub drift: f64,
    /// Standard deviation of the per-token logit noise.
    pub noise: f64,
    pub seed: u64,
    pub layers: usize,
    pub steps: usize,
    pub cfg: BalanceConfig,
    /// Trace file, or prefix of per-layer trace files.
    pub trace: Option<PathBuf>,
}

impl WorkloadSpec {
    pub fn new(kind: WorkloadKind, cfg: BalanceConfig) -> Self {
        Self {
            kind,
            skew: 2.0,
            drift: 0.05,
            noise: 1.0,
            seed: 0,
            layers: 1,
            steps: 200,
            cfg,
            trace: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("steps must be >= 1".into()));
        }
        if self.layers == 0 {
            return Err(Error::Config("layers must be >= 1".into()));
        }
        for (name, v) in [("skew", self.skew), ("drift", self.drift), ("noise", self.noise)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if self.kind == WorkloadKind::Trace && self.trace.is_none() {
            return Err(Error::Config("trace workload requires a trace path".into()));
        }
        Ok(())
    }
}

const TAG_TOKENS: u64 = 0x746f6b656e73;
const TAG_DRIFT: u64 = 0x6472696674;

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Independent RNG for one `(seed, layer, step, purpose)` cell.
fn cell_rng(seed: u64, layer: usize, step: usize, tag: u64) -> ChaCha8Rng {
    let mut h = splitmix(seed);
    for part in [layer as u64, step as u64, tag] {
        h = splitmix(h ^ part);
    }
    ChaCha8Rng::seed_from_u64(h)
}

fn softmax_into(logits: &[f64], out: &mut Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let start = out.len();
    out.extend(logits.iter().map(|l| (l - max).exp()));
    let z: f64 = out[start..].iter().sum();
    for v in &mut out[start..] {
        *v = clamp_score(*v / z);
    }
}

/// Per-expert popularity offsets added to every token's logits.
fn popularity(spec: &WorkloadSpec, layer: usize, step: usize) -> Vec<f64> {
    let m = spec.cfg.experts();
    let mut pop: Vec<f64> = match spec.kind {
        WorkloadKind::Uniform | WorkloadKind::Trace => vec![0.0; m],
        WorkloadKind::Skew | WorkloadKind::Drift => {
            (0..m).map(|j| spec.skew * (m - j) as f64 / m as f64).collect()
        }
    };
    if spec.kind == WorkloadKind::Drift && spec.drift > 0.0 {
        for s in 1..=step {
            let mut rng = cell_rng(spec.seed, layer, s, TAG_DRIFT);
            for p in pop.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *p += spec.drift * z;
            }
        }
    }
    pop
}

/// Score matrix of batch `step` (1-based) on `layer`.
pub fn gen_workload(spec: &WorkloadSpec, step: usize, layer: usize) -> Result<ScoreMatrix> {
    if spec.kind == WorkloadKind::Trace {
        return Err(Error::Config("trace workloads are read from files, not generated".into()));
    }
    let (n, m) = (spec.cfg.tokens(), spec.cfg.experts());
    let pop = popularity(spec, layer, step);
    let mut rng = cell_rng(spec.seed, layer, step, TAG_TOKENS);
    let mut logits = vec![0.0; m];
    let mut data = Vec::with_capacity(n * m);
    for _ in 0..n {
        for (l, p) in logits.iter_mut().zip(&pop) {
            let z: f64 = StandardNormal.sample(&mut rng);
            *l = p + spec.noise * z;
        }
        softmax_into(&logits, &mut data);
    }
    ScoreMatrix::new(n, m, data)
}
