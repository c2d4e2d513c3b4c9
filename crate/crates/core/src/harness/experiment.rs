//! Multi-step, multi-layer simulation of several routers on one workload.

use std::borrow::Cow;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;

use crate::baselines::{max_vio, route_greedy, route_lossfree, BiasState, DEFAULT_BIAS_RATE};
use crate::batch::{balance_batch, find_descent_violation, DualState};
use crate::error::{Error, Result};
use crate::online::{OnlineGateState, WindowMode};
use crate::oracle::{is_enumerable, solve_exhaustive, verify_weak_duality};
use crate::routing::{build_gates, Assignment, BalanceConfig, ScoreMatrix};

use super::report::{RunReport, StepRecord};
use super::trace::{read_trace, resolve_layer_trace};
use super::workload::{gen_workload, WorkloadKind, WorkloadSpec};

/// Relative tolerance of the per-step dual descent assertion.
pub const DESCENT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    Greedy,
    LossFree,
    Bip,
    Online,
    OnlineApprox,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [
        Algorithm::Greedy,
        Algorithm::LossFree,
        Algorithm::Bip,
        Algorithm::Online,
        Algorithm::OnlineApprox,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Greedy => "greedy",
            Algorithm::LossFree => "lossfree",
            Algorithm::Bip => "bip",
            Algorithm::Online => "online",
            Algorithm::OnlineApprox => "online-approx",
        }
    }

    /// Comma-separated list, e.g. `greedy,bip`. Duplicates are refused.
    pub fn parse_list(s: &str) -> Result<Vec<Algorithm>> {
        let mut out = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let algo: Algorithm = part.parse()?;
            if out.contains(&algo) {
                return Err(Error::Config(format!("algorithm {part} listed twice")));
            }
            out.push(algo);
        }
        if out.is_empty() {
            return Err(Error::Config("no algorithms selected".into()));
        }
        Ok(out)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown algorithm {s:?} (expected greedy, lossfree, bip, online or online-approx)"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub algorithms: Vec<Algorithm>,
    pub bias_rate: f64,
    pub buckets: usize,
    pub window: WindowMode,
    /// Zero the dual state at every step instead of warm-starting.
    pub cold_start: bool,
    /// Record per-cell wall-clock time in the summary.
    pub timing: bool,
    /// Check BIP duals against the exact optimum on enumerable instances.
    pub oracle_check: bool,
    /// Evaluate (layer, algorithm) cells on the rayon pool.
    pub parallel: bool,
}

impl RunOptions {
    pub fn new(algorithms: Vec<Algorithm>) -> Self {
        Self {
            algorithms,
            bias_rate: DEFAULT_BIAS_RATE,
            buckets: 100,
            window: WindowMode::Batch,
            cold_start: false,
            timing: false,
            oracle_check: true,
            parallel: true,
        }
    }
}

enum Source<'a> {
    Generated(&'a WorkloadSpec),
    Loaded(&'a [Vec<ScoreMatrix>]),
}

impl Source<'_> {
    fn batch(&self, layer: usize, step: usize) -> Result<Cow<'_, ScoreMatrix>> {
        match self {
            Source::Generated(spec) => gen_workload(spec, step, layer).map(Cow::Owned),
            Source::Loaded(layers) => Ok(Cow::Borrowed(&layers[layer][step - 1])),
        }
    }
}

/// Runs every selected algorithm on every layer of `spec`.
///
/// Trace workloads take the batch size from the files; `spec.steps` must
/// not exceed the number of steps in the trace.
pub fn run_experiment(spec: &WorkloadSpec, opts: &RunOptions) -> Result<RunReport> {
    spec.validate()?;
    if spec.kind != WorkloadKind::Trace {
        return run_cells(&Source::Generated(spec), &spec.cfg, spec.layers, spec.steps, opts);
    }
    let base = spec.trace.as_deref().expect("validated");
    let layers = (0..spec.layers)
        .map(|l| read_trace(&resolve_layer_trace(base, l, spec.layers)))
        .collect::<Result<Vec<_>>>()?;
    run_on_batches(&spec.cfg, &layers, spec.steps, opts)
}

/// Runs on preloaded batches, `layers[l][s]` being step `s + 1` of layer `l`.
///
/// `cfg.tokens()` is replaced by the batch size found in the data.
pub fn run_on_batches(cfg: &BalanceConfig, layers: &[Vec<ScoreMatrix>], steps: usize, opts: &RunOptions) -> Result<RunReport> {
    if steps == 0 {
        return Err(Error::Config("steps must be >= 1".into()));
    }
    let first = layers
        .first()
        .and_then(|l| l.first())
        .ok_or_else(|| Error::Empty("no score batches".into()))?;
    let cfg = cfg.with_tokens(first.rows())?;
    for (l, batches) in layers.iter().enumerate() {
        if batches.len() < steps {
            return Err(Error::Structure(format!(
                "layer {l} has {} steps, {steps} requested",
                batches.len()
            )));
        }
        for b in &batches[..steps] {
            b.check_shape(&cfg)?;
        }
    }
    run_cells(&Source::Loaded(layers), &cfg, layers.len(), steps, opts)
}

fn run_cells(src: &Source<'_>, cfg: &BalanceConfig, layers: usize, steps: usize, opts: &RunOptions) -> Result<RunReport> {
    if opts.algorithms.is_empty() {
        return Err(Error::Config("no algorithms selected".into()));
    }
    if steps == 0 {
        return Err(Error::Config("steps must be >= 1".into()));
    }
    let cells: Vec<(usize, Algorithm)> = (0..layers)
        .flat_map(|l| opts.algorithms.iter().map(move |&a| (l, a)))
        .collect();
    let run = |&(layer, algo): &(usize, Algorithm)| run_cell(src, cfg, layer, algo, steps, opts);
    let results: Vec<(Vec<StepRecord>, Option<f64>)> = if opts.parallel {
        cells.par_iter().map(run).collect::<Result<_>>()?
    } else {
        cells.iter().map(run).collect::<Result<_>>()?
    };

    let mut rows = Vec::with_capacity(cells.len() * steps);
    for s in 0..steps {
        rows.extend(results.iter().map(|(r, _)| r[s].clone()));
    }
    let series: Vec<(String, usize, Option<f64>)> = cells
        .iter()
        .zip(&results)
        .map(|(&(l, a), (_, wall))| (a.name().to_string(), l, *wall))
        .collect();
    RunReport::from_steps(rows, &series)
}

enum Router {
    Greedy,
    LossFree(BiasState),
    Bip(DualState),
    Online(Box<OnlineGateState>),
}

fn run_cell(
    src: &Source<'_>,
    cfg: &BalanceConfig,
    layer: usize,
    algo: Algorithm,
    steps: usize,
    opts: &RunOptions,
) -> Result<(Vec<StepRecord>, Option<f64>)> {
    let started = Instant::now();
    let keep_q = !opts.cold_start;
    let mut router = match algo {
        Algorithm::Greedy => Router::Greedy,
        Algorithm::LossFree => Router::LossFree(BiasState::new(cfg.experts(), opts.bias_rate)?),
        Algorithm::Bip => Router::Bip(DualState::new(cfg.experts())),
        Algorithm::Online => Router::Online(Box::new(OnlineGateState::exact(*cfg, opts.window).keep_q_on_reset(keep_q))),
        Algorithm::OnlineApprox => Router::Online(Box::new(
            OnlineGateState::approx(*cfg, opts.window, opts.buckets)?.keep_q_on_reset(keep_q),
        )),
    };
    let check_oracle = opts.oracle_check && is_enumerable(cfg);

    let mut rows = Vec::with_capacity(steps);
    for step in 1..=steps {
        let scores = src.batch(layer, step)?;
        let scores = scores.as_ref();
        let mut dual_obj = None;
        let assignment: Assignment = match &mut router {
            Router::Greedy => route_greedy(scores, cfg.top_k())?,
            Router::LossFree(bias) => {
                let a = route_lossfree(scores, bias, cfg.top_k())?;
                bias.update(&a.loads())?;
                a
            }
            Router::Bip(state) => {
                if opts.cold_start {
                    state.reset();
                }
                let out = balance_batch(scores, state, cfg)?;
                if let Some(at) = find_descent_violation(&out.dual_trace, DESCENT_TOLERANCE) {
                    return Err(Error::Invariant(format!(
                        "dual objective rose at update {at} of step {step}, layer {layer}: {} -> {}",
                        out.dual_trace[at - 1],
                        out.dual_trace[at]
                    )));
                }
                if check_oracle {
                    let best = solve_exhaustive(scores, cfg)?;
                    verify_weak_duality(scores, &out.p, state.q(), cfg, &best)?;
                }
                dual_obj = out.dual_trace.last().copied();
                out.assignment
            }
            Router::Online(state) => {
                let mut selections = Vec::with_capacity(scores.rows());
                for row in scores.iter_rows() {
                    selections.push(state.step(row)?.selected);
                }
                build_gates(scores, selections, cfg.top_k())?
            }
        };
        rows.push(StepRecord {
            step,
            layer,
            algo: algo.name().to_string(),
            max_vio: max_vio(&assignment.loads())?,
            score: assignment.score_total(),
            dual_obj,
        });
    }
    let wall_ms = opts.timing.then(|| started.elapsed().as_secs_f64() * 1e3);
    Ok((rows, wall_ms))
}
