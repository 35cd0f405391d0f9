//! Command-line driver: simulate streams, run detectors, localize changes,
//! run experiment presets, and evaluate size bounds.
//!
//! Exit codes: 0 success, 2 configuration or input validation failure,
//! 1 runtime failure. All randomness flows from --seed, so the same argv and
//! input files always produce byte-identical outputs.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cpl_core::bounds::{length_bound, simulate_delay, BoundMode, HardnessProfile};
use cpl_core::detectors::{run_to_stop, DetectorSpec, MeanFamily, StopOutcome};
use cpl_core::harness::{
    duality_check, mixture_atoms, mixture_weights, records_csv, records_json, run_experiment,
    summary_json, ExperimentConfig, ExperimentResult, HarnessError, SettingId,
};
use cpl_core::localize::adaptive::{
    adaptive_set_known, AdaptiveConfig, Truncation, DEFAULT_UNBOUNDED_HORIZON,
};
use cpl_core::localize::estimate_known_lr;
use cpl_core::localize::universal::{universal_set, EProcessPair};
use cpl_core::models::{huber_clip, ChangeIndex, Model, PathSampler};
use cpl_core::rng::stream;
use cpl_core::survival::{estimate_survival, SurvivalCurve, SurvivalKind};

const GAUSS_PRE: &str = r#"{"kind":"gaussian","mean":0.0,"sd":1.0}"#;
const GAUSS_POST: &str = r#"{"kind":"gaussian","mean":1.0,"sd":1.0}"#;

#[derive(Parser)]
#[command(
    name = "cpl",
    version,
    about = "Sequential change detection with finite-sample changepoint localization"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample an observation stream to CSV (one value per line)
    Simulate(SimulateArgs),
    /// Run a detector over a data file and report the alarm time
    Detect(DetectArgs),
    /// Detect on one stream and build a confidence set for the change time
    Localize(LocalizeArgs),
    /// Run a named experiment preset and write records plus summaries
    Experiment(ExperimentArgs),
    /// Evaluate the analytic bound on the expected conditional set size
    Bounds(BoundsArgs),
    /// Compare our confidence sets against the reflected-walk baseline
    CompareBaseline(CompareArgs),
    /// Check the per-candidate rejection budget empirically
    Duality(DualityArgs),
}

#[derive(Debug)]
enum CliError {
    Config(String),
    Runtime(String),
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Config(m) => CliError::Config(m),
            HarnessError::Run(m) => CliError::Runtime(m),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = apply_thread_cap().and_then(|()| match cli.command {
        Command::Simulate(a) => run_simulate(a),
        Command::Detect(a) => run_detect(a),
        Command::Localize(a) => run_localize(a),
        Command::Experiment(a) => run_experiment_cmd(a),
        Command::Bounds(a) => run_bounds(a),
        Command::CompareBaseline(a) => run_compare(a),
        Command::Duality(a) => run_duality(a),
    });
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(m)) => {
            eprintln!("configuration error: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}

/// CPL_THREADS caps the rayon pool; unset means rayon's default.
fn apply_thread_cap() -> Result<(), CliError> {
    match std::env::var("CPL_THREADS") {
        Ok(v) => {
            let n: usize = v
                .parse()
                .ok()
                .filter(|&n| n >= 1)
                .ok_or_else(|| CliError::Config(format!("CPL_THREADS must be a positive integer, got '{v}'")))?;
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))
        }
        Err(_) => Ok(()),
    }
}

/// Parse a JSON value given inline or as @path-to-file.
fn json_arg<T: serde::de::DeserializeOwned>(what: &str, s: &str) -> Result<T, CliError> {
    let text = match s.strip_prefix('@') {
        Some(path) => fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{what}: reading {path}: {e}")))?,
        None => s.to_string(),
    };
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{what}: {e}")))
}

fn model_arg(what: &str, s: &str) -> Result<Model, CliError> {
    let m: Model = json_arg(what, s)?;
    m.validate().map_err(|e| CliError::Config(format!("{what}: {e}")))?;
    Ok(m)
}

/// One observation per line; a single non-numeric first line is treated as a
/// header; blank lines are skipped.
fn read_data(path: &PathBuf) -> Result<Vec<f64>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("reading {}: {e}", path.display())))?;
    let mut out = Vec::new();
    let mut seen_lines = 0usize;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        seen_lines += 1;
        match line.parse::<f64>() {
            Ok(v) => out.push(v),
            Err(_) if seen_lines == 1 => {} // header
            Err(_) => {
                return Err(CliError::Config(format!(
                    "{} line {}: not a number: '{line}'",
                    path.display(),
                    i + 1
                )))
            }
        }
    }
    if out.is_empty() {
        return Err(CliError::Config(format!("{}: no observations", path.display())));
    }
    Ok(out)
}

fn write_or_print(out: &Option<PathBuf>, content: &str) -> Result<(), CliError> {
    match out {
        Some(p) => fs::write(p, content)
            .map_err(|e| CliError::Runtime(format!("writing {}: {e}", p.display()))),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

#[derive(Args)]
struct DetectorFlags {
    /// Detector family with benchmark-default parameters (see README)
    #[arg(long, default_value = "cusum_lr")]
    detector: String,
    /// Detector threshold
    #[arg(long, default_value_t = 1000.0)]
    threshold: f64,
    /// Full detector spec as JSON (inline or @file); overrides --detector
    #[arg(long)]
    detector_config: Option<String>,
}

impl DetectorFlags {
    fn build(&self) -> Result<DetectorSpec, CliError> {
        let spec = match &self.detector_config {
            Some(s) => json_arg::<DetectorSpec>("detector config", s)?,
            None => default_detector(&self.detector, self.threshold)?,
        };
        spec.validate().map_err(|e| CliError::Config(format!("detector: {e}")))?;
        Ok(spec)
    }
}

fn default_detector(family: &str, a: f64) -> Result<DetectorSpec, CliError> {
    let g0 = Model::Gaussian { mean: 0.0, sd: 1.0 };
    let g1 = Model::Gaussian { mean: 1.0, sd: 1.0 };
    let fam = MeanFamily::Gaussian { sd: 1.0 };
    Ok(match family {
        "cusum" | "cusum_lr" => DetectorSpec::CusumLr { pre: g0, post: g1, a },
        "sr" => DetectorSpec::Sr { pre: g0, post: g1, a },
        "lr_pfa" => DetectorSpec::LrPfa { pre: g0, post: g1, a },
        "weighted_cusum" => DetectorSpec::WeightedCusum {
            atoms: mixture_atoms(0.75, true),
            weights: mixture_weights(),
            family: fam,
            den_param: 0.0,
            a,
        },
        "mixture_lr_pfa" => DetectorSpec::MixtureLrPfa {
            atoms: mixture_atoms(0.75, true),
            weights: mixture_weights(),
            family: fam,
            den_param: 0.0,
            a,
        },
        "wcs_ripr" => DetectorSpec::WcsRipr {
            atoms: mixture_atoms(0.75, true),
            weights: mixture_weights(),
            family: fam,
            pre_boundary: 0.25,
            a,
        },
        "mixture_lr_ripr_pfa" => DetectorSpec::MixtureLrRiprPfa {
            atoms: mixture_atoms(0.75, true),
            weights: mixture_weights(),
            family: fam,
            pre_boundary: 0.25,
            a,
        },
        "e_hist" => DetectorSpec::EHist { bins: 10, a },
        "e_subgaussian" => DetectorSpec::ESubgaussian { boundary: 0.5, a },
        "huber_cusum" => {
            let clip = huber_clip(0.0, 1.0, 1.0, 0.01)
                .map_err(|e| CliError::Config(format!("huber clip: {e}")))?;
            DetectorSpec::HuberCusum {
                pre: g0,
                post: g1,
                clip_lo: clip.c_lo,
                clip_hi: clip.c_hi,
                a,
            }
        }
        "markov_cusum" => DetectorSpec::MarkovCusum { p0: 0.75, p1: 0.25, a },
        "reflected" => DetectorSpec::ReflectedSum { d: a },
        other => {
            return Err(CliError::Config(format!(
                "unknown detector family '{other}' (use --detector-config for a custom spec)"
            )))
        }
    })
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

#[derive(Args)]
struct SimulateArgs {
    /// Pre-change model JSON (inline or @file)
    #[arg(long, default_value = GAUSS_PRE)]
    pre: String,
    /// Post-change model JSON; requires --change-at
    #[arg(long)]
    post: Option<String>,
    /// 1-based index of the first post-change observation
    #[arg(long)]
    change_at: Option<usize>,
    /// Number of observations
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run_simulate(a: SimulateArgs) -> Result<(), CliError> {
    if a.n == 0 {
        return Err(CliError::Config("--n must be >= 1".into()));
    }
    let pre = model_arg("pre model", &a.pre)?;
    let (post, change) = match (&a.post, a.change_at) {
        (Some(p), Some(t)) if t >= 1 => (model_arg("post model", p)?, ChangeIndex::At(t)),
        (Some(_), Some(_)) => return Err(CliError::Config("--change-at is 1-based".into())),
        (None, None) => (pre.clone(), ChangeIndex::Infinite),
        _ => return Err(CliError::Config("--post and --change-at go together".into())),
    };
    let mut sampler = PathSampler::new(&pre, &post, change, stream(a.seed, "simulate", 0));
    let mut csv = String::new();
    for _ in 0..a.n {
        csv.push_str(&format!("{}\n", sampler.draw()));
    }
    write_or_print(&a.out, &csv)
}

// ---------------------------------------------------------------------------
// detect
// ---------------------------------------------------------------------------

#[derive(Args)]
struct DetectArgs {
    /// Input data file, one observation per line
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    det: DetectorFlags,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run_detect(a: DetectArgs) -> Result<(), CliError> {
    let data = read_data(&a.data)?;
    let spec = a.det.build()?;
    let outcome =
        run_to_stop(&spec, &data).map_err(|e| CliError::Runtime(format!("detector: {e}")))?;
    let doc = match outcome {
        StopOutcome::StoppedAt(tau) => serde_json::json!({
            "n": data.len(), "alarm": true, "tau": tau,
        }),
        StopOutcome::Censored(n) => serde_json::json!({
            "n": n, "alarm": false, "tau": null,
        }),
    };
    write_or_print(&a.out, &format!("{doc:#}\n"))
}

// ---------------------------------------------------------------------------
// localize
// ---------------------------------------------------------------------------

#[derive(Args)]
struct LocalizeArgs {
    /// Input data file, one observation per line
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    det: DetectorFlags,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// universal | adaptive
    #[arg(long, default_value = "universal")]
    method: String,
    /// E-process pair JSON for the universal method (defaults to the
    /// likelihood-ratio pair of --pre and --post)
    #[arg(long)]
    pair: Option<String>,
    /// Pre-change model (point estimate, adaptive simulations, survival)
    #[arg(long, default_value = GAUSS_PRE)]
    pre: String,
    /// Post-change model (point estimate, adaptive simulations)
    #[arg(long, default_value = GAUSS_POST)]
    post: String,
    /// unit | plain | asymptotic | negative_binomial:<r>
    #[arg(long, default_value = "asymptotic")]
    survival: String,
    /// Simulations for the survival-curve estimate
    #[arg(long, default_value_t = 100)]
    survival_n: usize,
    /// No-change model for survival calibration (defaults to --pre)
    #[arg(long)]
    survival_model: Option<String>,
    /// Simulations per candidate for the adaptive method
    #[arg(long, default_value_t = 100)]
    b_sims: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run_localize(a: LocalizeArgs) -> Result<(), CliError> {
    if !(a.alpha > 0.0 && a.alpha < 1.0) {
        return Err(CliError::Config(format!("--alpha must be in (0,1), got {}", a.alpha)));
    }
    let data = read_data(&a.data)?;
    let spec = a.det.build()?;
    let pre = model_arg("pre model", &a.pre)?;
    let post = model_arg("post model", &a.post)?;
    let tau = match run_to_stop(&spec, &data)
        .map_err(|e| CliError::Runtime(format!("detector: {e}")))?
    {
        StopOutcome::StoppedAt(tau) => tau,
        StopOutcome::Censored(_) => {
            println!("no alarm");
            return Ok(());
        }
    };
    let curve = match a.survival.as_str() {
        "unit" => SurvivalCurve::unit(tau),
        other => {
            let kind = match other {
                "plain" => SurvivalKind::Plain,
                "asymptotic" => SurvivalKind::Asymptotic,
                s => match s.strip_prefix("negative_binomial:") {
                    Some(r) => SurvivalKind::NegativeBinomial {
                        r: r.parse().map_err(|_| {
                            CliError::Config(format!("bad negative binomial count '{r}'"))
                        })?,
                    },
                    None => {
                        return Err(CliError::Config(format!("unknown survival kind '{other}'")))
                    }
                },
            };
            let sm = match &a.survival_model {
                Some(s) => model_arg("survival model", s)?,
                None => pre.clone(),
            };
            estimate_survival(&sm, &spec, tau, a.survival_n, kind, a.seed)
                .map_err(|e| CliError::Runtime(format!("survival calibration: {e}")))?
        }
    };
    let t_hat = estimate_known_lr(&pre, &post, &data[..tau])
        .map_err(|e| CliError::Runtime(format!("point estimate: {e}")))?
        .t_hat;
    let doc = match a.method.as_str() {
        "universal" => {
            let pair = match &a.pair {
                Some(s) => json_arg::<EProcessPair>("e-process pair", s)?,
                None => EProcessPair {
                    forward: cpl_core::eprocesses::EProcessFamily::LikelihoodRatio {
                        num: pre.clone(),
                        den: post.clone(),
                    },
                    backward: cpl_core::eprocesses::EProcessFamily::LikelihoodRatio {
                        num: post.clone(),
                        den: pre.clone(),
                    },
                },
            };
            let out = universal_set(&pair, &data, tau, t_hat, a.alpha, &curve)
                .map_err(|e| CliError::Runtime(format!("universal set: {e}")))?;
            serde_json::json!({
                "method": "universal",
                "tau": tau,
                "t_hat": out.t_hat,
                "size": out.accepted.len(),
                "accepted": out.accepted,
                "statistics": out.statistics,
                "thresholds": out.thresholds,
            })
        }
        "adaptive" => {
            let cfg = AdaptiveConfig {
                alpha: a.alpha,
                beta: 0.0,
                gamma: 0.0,
                b_sims: a.b_sims,
                truncation: Truncation::Unbounded { horizon: DEFAULT_UNBOUNDED_HORIZON },
                master_seed: a.seed,
            };
            let out = adaptive_set_known(&pre, &post, &spec, &data, tau, &curve, &cfg)
                .map_err(|e| CliError::Runtime(format!("adaptive set: {e}")))?;
            let flags: Vec<String> = out.flags.iter().map(|f| format!("{f:?}")).collect();
            serde_json::json!({
                "method": "adaptive",
                "tau": tau,
                "t_hat": t_hat,
                "size": out.accepted.len(),
                "accepted": out.accepted,
                "flags": flags,
            })
        }
        other => return Err(CliError::Config(format!("unknown method '{other}'"))),
    };
    write_or_print(&a.out, &format!("{doc:#}\n"))
}

// ---------------------------------------------------------------------------
// experiment
// ---------------------------------------------------------------------------

#[derive(Args)]
struct ExperimentArgs {
    /// Experiment config JSON (inline or @file)
    #[arg(long)]
    config: String,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for records.csv and summary.json
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write per-run accepted sets to sets.json
    #[arg(long, default_value_t = false)]
    sets: bool,
}

fn run_experiment_cmd(a: ExperimentArgs) -> Result<(), CliError> {
    let mut cfg: ExperimentConfig = json_arg("experiment config", &a.config)?;
    if let Some(r) = a.runs {
        cfg.runs = Some(r);
    }
    if let Some(s) = a.seed {
        cfg.master_seed = s;
    }
    let result = run_experiment(&cfg)?;
    write_experiment_outputs(&result, &a.out, a.sets)?;
    print_summaries(&result);
    Ok(())
}

fn write_experiment_outputs(
    result: &ExperimentResult,
    out: &Option<PathBuf>,
    sets: bool,
) -> Result<(), CliError> {
    let Some(dir) = out else { return Ok(()) };
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Runtime(format!("creating {}: {e}", dir.display())))?;
    let write = |name: &str, content: String| -> Result<(), CliError> {
        let path = dir.join(name);
        fs::write(&path, content)
            .map_err(|e| CliError::Runtime(format!("writing {}: {e}", path.display())))
    };
    write("records.csv", records_csv(&result.records))?;
    write("summary.json", summary_json(result)? + "\n")?;
    if sets {
        write("sets.json", records_json(&result.records)? + "\n")?;
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into())
}

fn print_summaries(result: &ExperimentResult) {
    println!(
        "{:<10} {:>6} {:>7} {:>9} {:>9} {:>9} {:>10} {:>11} {:>10}",
        "method", "runs", "n_cond", "cond_cov", "se", "marg_cov", "mean_size", "mean_|err|", "mean_delay"
    );
    for s in &result.summaries {
        println!(
            "{:<10} {:>6} {:>7} {:>9} {:>9} {:>9.4} {:>10} {:>11} {:>10}",
            s.method,
            s.n_runs,
            s.n_conditional,
            fmt_opt(s.conditional_coverage),
            fmt_opt(s.conditional_coverage_se),
            s.marginal_coverage,
            fmt_opt(s.mean_conditional_size),
            fmt_opt(s.mean_abs_err),
            fmt_opt(s.mean_delay),
        );
        if s.zero_conditional {
            println!("  note: no run had its alarm at or after the change");
        }
    }
    if let Some(p) = &result.params {
        println!(
            "params     pre_cov={} post_cov={} (se {}) mean_pre_len={} mean_post_len={}",
            fmt_opt(p.pre_coverage),
            fmt_opt(p.post_coverage),
            fmt_opt(p.post_coverage_se),
            fmt_opt(p.mean_pre_len),
            fmt_opt(p.mean_post_len),
        );
    }
    if result.survival_flagged {
        println!("note: survival estimator hit its simulation cap; tail values use a fallback");
    }
}

// ---------------------------------------------------------------------------
// bounds
// ---------------------------------------------------------------------------

#[derive(Args)]
struct BoundsArgs {
    #[arg(long, default_value = GAUSS_PRE)]
    pre: String,
    #[arg(long, default_value = GAUSS_POST)]
    post: String,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Survival probability at the change time
    #[arg(long, default_value_t = 0.9)]
    p_detect: f64,
    #[arg(long, default_value_t = 100)]
    t_change: usize,
    /// plain | sensitive | composite
    #[arg(long, default_value = "plain")]
    mode: String,
    /// Expected conditional delay; simulated with the detector when omitted
    #[arg(long)]
    delay: Option<f64>,
    #[command(flatten)]
    det: DetectorFlags,
    /// Simulations for the delay estimate
    #[arg(long, default_value_t = 200)]
    delay_runs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run_bounds(a: BoundsArgs) -> Result<(), CliError> {
    let pre = model_arg("pre model", &a.pre)?;
    let post = model_arg("post model", &a.post)?;
    let mode = match a.mode.as_str() {
        "plain" => BoundMode::Plain,
        "sensitive" => BoundMode::Sensitive,
        "composite" => BoundMode::Composite,
        other => return Err(CliError::Config(format!("unknown bound mode '{other}'"))),
    };
    let profile = HardnessProfile::new(&pre, &post)
        .map_err(|e| CliError::Config(format!("hardness profile: {e}")))?;
    let delay = match a.delay {
        Some(d) => d,
        None => {
            let spec = a.det.build()?;
            simulate_delay(&pre, &post, &spec, a.t_change, a.delay_runs, a.t_change + 5000, a.seed)
                .map_err(|e| CliError::Runtime(format!("delay simulation: {e}")))?
        }
    };
    let bound = length_bound(&profile, a.alpha, a.p_detect, a.t_change, delay, mode)
        .map_err(|e| CliError::Config(format!("bound: {e}")))?;
    let doc = serde_json::json!({
        "s0": profile.s0,
        "rho0_min": profile.rho0_min,
        "s1": profile.s1,
        "rho1_min": profile.rho1_min,
        "delay_used": delay,
        "term_pre": bound.term_pre,
        "term_mid": bound.term_mid,
        "term_post": bound.term_post,
        "total": bound.total,
        "assumptions_used": bound.assumptions_used,
    });
    write_or_print(&a.out, &format!("{doc:#}\n"))
}

// ---------------------------------------------------------------------------
// compare-baseline
// ---------------------------------------------------------------------------

#[derive(Args)]
struct CompareArgs {
    /// Mean shift: data is N(-shift, 1) switching to N(+shift, 1)
    #[arg(long, default_value_t = 0.25)]
    shift: f64,
    /// Walk threshold (defaults keyed to the published shifts)
    #[arg(long)]
    d: Option<f64>,
    #[arg(long, default_value_t = 200)]
    runs: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long)]
    t_change: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for records.csv and summary.json
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run_compare(a: CompareArgs) -> Result<(), CliError> {
    let mut cfg = ExperimentConfig::preset(SettingId::BaselineCompare);
    cfg.theta1_boundary = Some(a.shift);
    cfg.detector_a = a.d;
    cfg.runs = Some(a.runs);
    cfg.alpha = Some(a.alpha);
    cfg.t_change = a.t_change;
    cfg.master_seed = a.seed;
    let result = run_experiment(&cfg)?;
    write_experiment_outputs(&result, &a.out, false)?;
    print_summaries(&result);
    Ok(())
}

// ---------------------------------------------------------------------------
// duality
// ---------------------------------------------------------------------------

#[derive(Args)]
struct DualityArgs {
    /// Experiment config JSON (inline or @file); must include the universal
    /// method
    #[arg(long)]
    config: String,
    /// Comma-separated candidate change times
    #[arg(long, default_value = "1,5,10,25,50")]
    grid: String,
    /// Simulations per grid point
    #[arg(long, default_value_t = 400)]
    sims: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run_duality(a: DualityArgs) -> Result<(), CliError> {
    let mut cfg: ExperimentConfig = json_arg("experiment config", &a.config)?;
    if let Some(s) = a.seed {
        cfg.master_seed = s;
    }
    let grid: Vec<usize> = a
        .grid
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| CliError::Config(format!("bad grid entry '{s}'")))
        })
        .collect::<Result<_, _>>()?;
    let report = duality_check(&cfg, &grid, a.sims)?;
    for row in &report.rows {
        println!(
            "t={:<5} budget={:.4} rate={:.4} ({}/{} rejections, {} censored) {}",
            row.t,
            row.budget,
            row.rate,
            row.rejections,
            row.n_sims,
            row.censored,
            if row.pass { "PASS" } else { "FAIL" }
        );
    }
    println!("{}", if report.all_pass { "all pass" } else { "budget violations found" });
    if a.out.is_some() {
        let doc = serde_json::to_string_pretty(&report)
            .map_err(|e| CliError::Runtime(format!("serializing report: {e}")))?;
        write_or_print(&a.out, &(doc + "\n"))?;
    }
    Ok(())
}
