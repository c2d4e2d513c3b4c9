use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use bipbal::baselines::DEFAULT_BIAS_RATE;
use bipbal::harness::report::read_steps_csv;
use bipbal::harness::trace::{layer_trace_path, read_trace, resolve_layer_trace};
use bipbal::harness::{emit_report, gen_workload, run_experiment, write_trace, Algorithm, RunOptions, WorkloadKind, WorkloadSpec};
use bipbal::oracle::{solve_best, DUALITY_TOLERANCE};
use bipbal::{BalanceConfig, Error, Result};

#[derive(Parser)]
#[command(name = "bipbal", version, about = "Load-balanced top-k expert routing simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate routers over a workload and write steps.csv and summary.json.
    Run(RunArgs),
    /// Print the exact optimum of every step of a trace.
    Oracle(OracleArgs),
    /// Write a synthetic workload as trace CSV files.
    GenTrace(GenTraceArgs),
}

#[derive(Args)]
struct WorkloadArgs {
    #[arg(long, default_value_t = 16)]
    experts: usize,
    #[arg(long = "topk", default_value_t = 4)]
    top_k: usize,
    /// Tokens per batch (ignored for trace workloads).
    #[arg(long, default_value_t = 1024)]
    tokens: usize,
    /// Number of batches; trace workloads default to the whole trace.
    #[arg(long)]
    steps: Option<usize>,
    /// Dual refresh iterations per batch or token.
    #[arg(long, default_value_t = 4)]
    iters: usize,
    /// uniform, skew, drift or trace.
    #[arg(long, default_value = "skew")]
    workload: String,
    #[arg(long, default_value_t = 2.0)]
    skew: f64,
    #[arg(long, default_value_t = 0.05)]
    drift: f64,
    /// Standard deviation of the logit noise.
    #[arg(long, default_value_t = 1.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    layers: usize,
    /// Trace file or per-layer prefix; implies `--workload trace`.
    #[arg(long)]
    trace: Option<PathBuf>,
}

const DEFAULT_STEPS: usize = 200;

#[derive(Args)]
struct RunArgs {
    /// Comma-separated: greedy, lossfree, bip, online, online-approx.
    #[arg(long, default_value = "greedy,lossfree,bip")]
    algo: String,
    #[command(flatten)]
    workload: WorkloadArgs,
    /// Histogram buckets of online-approx.
    #[arg(long, default_value_t = 100)]
    buckets: usize,
    /// Online history window: batch, sliding or unbounded.
    #[arg(long, default_value = "batch")]
    window: String,
    #[arg(long, default_value_t = DEFAULT_BIAS_RATE)]
    bias_rate: f64,
    /// Zero the dual state before every batch.
    #[arg(long)]
    cold_start: bool,
    /// Record wall-clock time per (layer, algorithm) in summary.json.
    #[arg(long)]
    timing: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    trace: PathBuf,
    #[arg(long)]
    experts: usize,
    #[arg(long = "topk")]
    top_k: usize,
    /// steps.csv of a run on the same trace; adds dual objective and gap columns.
    #[arg(long)]
    bip_log: Option<PathBuf>,
    /// Layer of the run log to compare against.
    #[arg(long, default_value_t = 0)]
    layer: usize,
}

#[derive(Args)]
struct GenTraceArgs {
    #[command(flatten)]
    workload: WorkloadArgs,
    /// Output file; multi-layer workloads write `<out>_layer<i>.csv`.
    #[arg(long)]
    out: PathBuf,
}

fn workload_spec(args: &WorkloadArgs) -> Result<WorkloadSpec> {
    let kind: WorkloadKind = if args.trace.is_some() {
        WorkloadKind::Trace
    } else {
        args.workload.parse()?
    };
    let cfg = BalanceConfig::new(args.experts, args.top_k, args.tokens, args.iters)?;
    let mut spec = WorkloadSpec::new(kind, cfg);
    spec.skew = args.skew;
    spec.drift = args.drift;
    spec.noise = args.noise;
    spec.seed = args.seed;
    spec.layers = args.layers;
    spec.trace = args.trace.clone();
    spec.steps = match (args.steps, &args.trace) {
        (Some(s), _) => s,
        (None, None) => DEFAULT_STEPS,
        (None, Some(base)) => {
            let first = resolve_layer_trace(base, 0, args.layers);
            read_trace(&first)?.len()
        }
    };
    spec.validate()?;
    Ok(spec)
}

fn cmd_run(args: &RunArgs) -> Result<()> {
    let spec = workload_spec(&args.workload)?;
    let mut opts = RunOptions::new(Algorithm::parse_list(&args.algo)?);
    opts.buckets = args.buckets;
    opts.window = args.window.parse()?;
    opts.bias_rate = args.bias_rate;
    opts.cold_start = args.cold_start;
    opts.timing = args.timing;
    let report = run_experiment(&spec, &opts)?;
    emit_report(&report, &args.out)?;
    println!("{:<14} {:>5} {:>12} {:>12} {:>16}", "algo", "layer", "avg_max_vio", "sup_max_vio", "total_score");
    for s in report.summary() {
        println!(
            "{:<14} {:>5} {:>12.6} {:>12.6} {:>16.6}",
            s.algo, s.layer, s.avg_max_vio, s.sup_max_vio, s.total_score
        );
    }
    Ok(())
}

fn cmd_oracle(args: &OracleArgs) -> Result<()> {
    let batches = read_trace(&args.trace)?;
    let log = args.bip_log.as_deref().map(read_steps_csv).transpose()?;
    let dual_of = |step: usize| -> Result<f64> {
        let rows = log.as_deref().unwrap_or_default();
        rows.iter()
            .find(|r| r.algo == Algorithm::Bip.name() && r.layer == args.layer && r.step == step)
            .and_then(|r| r.dual_obj)
            .ok_or_else(|| Error::Structure(format!("run log has no bip dual objective for step {step}, layer {}", args.layer)))
    };

    if log.is_some() {
        println!("step,optimum,dual_obj,gap");
    } else {
        println!("step,optimum");
    }
    let mut worst: Option<(usize, f64)> = None;
    for (idx, scores) in batches.iter().enumerate() {
        let step = idx + 1;
        let cfg = BalanceConfig::new(args.experts, args.top_k, scores.rows(), 1)?;
        scores.check_shape(&cfg)?;
        let best = solve_best(scores, &cfg)?;
        if log.is_some() {
            let dual = dual_of(step)?;
            let gap = dual - best.objective();
            println!("{step},{},{dual},{gap}", best.objective());
            if worst.is_none_or(|(_, g)| gap < g) {
                worst = Some((step, gap));
            }
        } else {
            println!("{step},{}", best.objective());
        }
    }
    match worst {
        Some((step, gap)) if gap < -DUALITY_TOLERANCE => Err(Error::Invariant(format!(
            "weak duality violated at step {step}: gap {gap:e}"
        ))),
        _ => Ok(()),
    }
}

fn cmd_gen_trace(args: &GenTraceArgs) -> Result<()> {
    let spec = workload_spec(&args.workload)?;
    if spec.kind == WorkloadKind::Trace {
        return Err(Error::Config("gen-trace needs a synthetic workload".into()));
    }
    for layer in 0..spec.layers {
        let batches = (1..=spec.steps)
            .map(|step| gen_workload(&spec, step, layer))
            .collect::<Result<Vec<_>>>()?;
        let path = if spec.layers == 1 {
            args.out.clone()
        } else {
            layer_trace_path(&args.out, layer)
        };
        write_trace(&path, &batches)?;
    }
    Ok(())
}

fn error_line(kind: &str, message: &str) -> String {
    serde_json::json!({ "error": kind, "message": message }).to_string()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{}", error_line("usage", e.to_string().trim()));
            return ExitCode::from(2);
        }
    };
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Oracle(a) => cmd_oracle(a),
        Command::GenTrace(a) => cmd_gen_trace(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_line(e.kind(), &e.to_string()));
            ExitCode::FAILURE
        }
    }
}

