//! Experiment runner: samples observation streams, runs the configured
//! detector, builds the configured confidence sets at each alarm, and
//! aggregates coverage and size statistics.
//!
//! Replications are parallel but deterministic: every random quantity is
//! drawn from a stream keyed by (master seed, purpose label, run index), and
//! aggregation is an ordered fold, so the same configuration and seed always
//! produce byte-identical output regardless of thread count.

mod plan;

pub use plan::{mixture_atoms, mixture_weights, ObservationFamily, PostVariant};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::confseq::param_set_union;
use crate::detectors::{detector_step, hist_row_log_products, run_until_stop, StopOutcome};
use crate::localize::adaptive::{
    adaptive_set_comp, adaptive_set_comp_post, adaptive_set_known, Truncation,
};
use crate::localize::universal::{universal_set, UniversalEvaluator};
use crate::localize::{
    estimate_from_scores, estimate_from_suffix_terms, estimate_known_lr, estimate_profile_both,
    estimate_profile_post, estimate_subgaussian_native,
};
use crate::models::{ChangeIndex, PathSampler};
use crate::reflected::walk_confidence_set;
use crate::rng::stream;
use crate::survival::{estimate_survival, SurvivalCurve, SurvivalKind};

use plan::{AdaptiveVariant, HatRecipe, Plan};

/// Errors from configuration resolution (reject before running) or from a
/// failure inside a replication.
#[derive(Debug)]
pub enum HarnessError {
    Config(String),
    Run(String),
}

impl std::fmt::Display for HarnessError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            HarnessError::Config(m) => write!(f, "configuration error: {m}"),
            HarnessError::Run(m) => write!(f, "run error: {m}"),
        }
    }
}

impl std::error::Error for HarnessError {}

/// Named experiment presets. The Roman-numeral settings are the Gaussian
/// benchmark family; the `*_pfa` settings use detectors with bounded false
/// alarm probability instead of bounded average run length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SettingId {
    #[serde(rename = "I")]
    I,
    #[serde(rename = "II")]
    II,
    #[serde(rename = "III")]
    III,
    #[serde(rename = "IV")]
    IV,
    #[serde(rename = "V")]
    V,
    #[serde(rename = "VI")]
    VI,
    #[serde(rename = "A_pfa")]
    APfa,
    #[serde(rename = "B_pfa")]
    BPfa,
    #[serde(rename = "C_pfa")]
    CPfa,
    #[serde(rename = "markov")]
    Markov,
    #[serde(rename = "poisson_I")]
    PoissonI,
    #[serde(rename = "poisson_II")]
    PoissonII,
    #[serde(rename = "poisson_III")]
    PoissonIII,
    #[serde(rename = "baseline_compare")]
    BaselineCompare,
    #[serde(rename = "ratio_sweep")]
    RatioSweep,
}

/// Confidence-set constructions the harness can run side by side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Threshold test on the two-sided e-process statistic.
    Universal,
    /// Simulation-calibrated rank test.
    Adaptive,
    /// Reflected-walk zero-crossing set (comparison method).
    Baseline,
}

impl Method {
    fn name(self) -> &'static str {
        match self {
            Method::Universal => "universal",
            Method::Adaptive => "adaptive",
            Method::Baseline => "baseline",
        }
    }
}

/// Experiment request: a setting preset plus optional overrides. Unset
/// fields take the setting's published defaults (desk-scale run counts).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub setting: SettingId,
    #[serde(default)]
    pub t_change: Option<usize>,
    /// Detector threshold (the walk threshold for the baseline setting).
    #[serde(default)]
    pub detector_a: Option<f64>,
    #[serde(default)]
    pub methods: Option<Vec<Method>>,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default)]
    pub gamma: Option<f64>,
    /// Failure budget of the parameter confidence sets.
    #[serde(default)]
    pub eta: Option<f64>,
    #[serde(default)]
    pub runs: Option<usize>,
    /// Survival-curve calibration simulations (N).
    #[serde(default)]
    pub n_survival: Option<usize>,
    /// Simulations per candidate in the adaptive method (B).
    #[serde(default)]
    pub b_sims: Option<usize>,
    /// Simulation truncation rule of the adaptive method (L).
    #[serde(default)]
    pub truncation: Option<Truncation>,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub survival_kind: Option<SurvivalKind>,
    /// Pre-change class boundary (upper end) where composite.
    #[serde(default)]
    pub theta0_boundary: Option<f64>,
    /// Post-change class boundary (lower end) where composite; the mean
    /// shift in the baseline comparison.
    #[serde(default)]
    pub theta1_boundary: Option<f64>,
    /// Post-change generator for the bounded-support setting.
    #[serde(default)]
    pub post_variant: Option<PostVariant>,
    /// Contamination fraction for the robust setting.
    #[serde(default)]
    pub epsilon: Option<f64>,
    /// Observation family for the settings that come in two flavors.
    #[serde(default)]
    pub observation_family: Option<ObservationFamily>,
    /// Safety cap on a single detection run.
    #[serde(default)]
    pub horizon: Option<usize>,
}

impl ExperimentConfig {
    /// Minimal config: a setting with all defaults.
    #[must_use]
    pub fn preset(setting: SettingId) -> Self {
        ExperimentConfig {
            setting,
            t_change: None,
            detector_a: None,
            methods: None,
            alpha: None,
            beta: None,
            gamma: None,
            eta: None,
            runs: None,
            n_survival: None,
            b_sims: None,
            truncation: None,
            master_seed: 0,
            survival_kind: None,
            theta0_boundary: None,
            theta1_boundary: None,
            post_variant: None,
            epsilon: None,
            observation_family: None,
            horizon: None,
        }
    }

    /// Validate without running.
    pub fn validate(&self) -> Result<(), HarnessError> {
        self.resolve().map(|_| ())
    }
}

/// One confidence set on one run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodRecord {
    pub size: usize,
    /// Whether the set contains the true change time. Meaningful as a
    /// conditional quantity only when the alarm came at or after the change;
    /// on false alarms it is false by construction.
    pub covered: bool,
    /// Accepted candidate times, ascending.
    pub accepted: Vec<usize>,
}

/// Parameter confidence sets on one run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamRecord {
    pub pre_covered: bool,
    pub post_covered: bool,
    pub pre_len: f64,
    pub post_len: f64,
    pub pre_unbounded: bool,
}

/// Everything recorded about one replication.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: usize,
    /// Alarm time; the safety horizon if censored.
    pub tau: usize,
    /// The detector never stopped within the safety horizon.
    pub censored: bool,
    /// The alarm came before the change (tau < T).
    pub false_alarm: bool,
    /// Point estimate of the change time; 0 when unavailable.
    pub t_hat: usize,
    /// tau - T when the alarm came at or after the change.
    pub delay: Option<usize>,
    pub universal: Option<MethodRecord>,
    pub adaptive: Option<MethodRecord>,
    pub baseline: Option<MethodRecord>,
    pub params: Option<ParamRecord>,
    pub flags: Vec<String>,
}

impl RunRecord {
    fn method(&self, m: Method) -> Option<&MethodRecord> {
        match m {
            Method::Universal => self.universal.as_ref(),
            Method::Adaptive => self.adaptive.as_ref(),
            Method::Baseline => self.baseline.as_ref(),
        }
    }
}

/// Aggregated statistics for one method. Conditional statistics are over the
/// runs where the alarm came at or after the change; marginal coverage is
/// over all runs (censored and false-alarm runs count as uncovered).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub n_runs: usize,
    pub n_conditional: usize,
    /// No run had its alarm at or after the change, so the conditional
    /// columns are undefined.
    pub zero_conditional: bool,
    pub conditional_coverage: Option<f64>,
    /// Binomial standard error sqrt(p (1-p) / n_conditional).
    pub conditional_coverage_se: Option<f64>,
    pub marginal_coverage: f64,
    pub mean_conditional_size: Option<f64>,
    pub mean_abs_err: Option<f64>,
    pub mean_delay: Option<f64>,
}

/// Aggregated parameter-set statistics (conditional runs only).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamSummary {
    pub n_conditional: usize,
    pub pre_coverage: Option<f64>,
    pub post_coverage: Option<f64>,
    pub post_coverage_se: Option<f64>,
    pub mean_pre_len: Option<f64>,
    pub mean_post_len: Option<f64>,
}

/// Full output of one experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub records: Vec<RunRecord>,
    pub summaries: Vec<SummaryRow>,
    pub params: Option<ParamSummary>,
    /// The survival estimator hit its simulation pool cap.
    pub survival_flagged: bool,
    /// Largest alarm time over the replications (survival curve length).
    pub tau_cap: usize,
}

fn mean_of(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Fold run records into one summary row for a method. Conditional rows are
/// the non-censored runs with tau >= T; marginal coverage divides by all
/// runs.
#[must_use]
pub fn aggregate(records: &[RunRecord], method: Method) -> SummaryRow {
    let n_runs = records.len();
    let mut n_cond = 0usize;
    let mut cond_covered = 0usize;
    let mut marg_covered = 0usize;
    let mut sizes = Vec::new();
    let mut abs_errs = Vec::new();
    let mut delays = Vec::new();
    for r in records {
        let rec = r.method(method);
        if rec.is_some_and(|m| m.covered) {
            marg_covered += 1;
        }
        if r.censored || r.false_alarm {
            continue;
        }
        let Some(m) = rec else { continue };
        n_cond += 1;
        if m.covered {
            cond_covered += 1;
        }
        sizes.push(m.size as f64);
        if let Some(d) = r.delay {
            delays.push(d as f64);
            abs_errs.push((r.t_hat as f64 - (r.tau as f64 - d as f64)).abs());
        }
    }
    let conditional_coverage = (n_cond > 0).then(|| cond_covered as f64 / n_cond as f64);
    let conditional_coverage_se =
        conditional_coverage.map(|p| (p * (1.0 - p) / n_cond as f64).sqrt());
    SummaryRow {
        method: method.name().to_string(),
        n_runs,
        n_conditional: n_cond,
        zero_conditional: n_cond == 0,
        conditional_coverage,
        conditional_coverage_se,
        marginal_coverage: marg_covered as f64 / n_runs as f64,
        mean_conditional_size: mean_of(&sizes),
        mean_abs_err: mean_of(&abs_errs),
        mean_delay: mean_of(&delays),
    }
}

fn aggregate_params(records: &[RunRecord]) -> Option<ParamSummary> {
    let cond: Vec<&ParamRecord> = records
        .iter()
        .filter(|r| !r.censored && !r.false_alarm)
        .filter_map(|r| r.params.as_ref())
        .collect();
    if records.iter().all(|r| r.params.is_none()) {
        return None;
    }
    let n = cond.len();
    let frac = |f: &dyn Fn(&ParamRecord) -> bool| {
        (n > 0).then(|| cond.iter().filter(|p| f(p)).count() as f64 / n as f64)
    };
    let post_coverage = frac(&|p| p.post_covered);
    Some(ParamSummary {
        n_conditional: n,
        pre_coverage: frac(&|p| p.pre_covered),
        post_coverage,
        post_coverage_se: post_coverage.map(|p| (p * (1.0 - p) / n as f64).sqrt()),
        mean_pre_len: mean_of(&cond.iter().map(|p| p.pre_len).collect::<Vec<_>>()),
        mean_post_len: mean_of(&cond.iter().map(|p| p.post_len).collect::<Vec<_>>()),
    })
}

struct Detection {
    tau: usize,
    censored: bool,
    data: Vec<f64>,
}

fn run_detection(plan: &Plan, j: usize) -> Result<Detection, HarnessError> {
    let rng = stream(plan.master_seed, "path", j as u64);
    let mut sampler = PathSampler::new(&plan.pre, &plan.post, ChangeIndex::At(plan.t_change), rng);
    let (outcome, data) = run_until_stop(&plan.detector, plan.horizon, |_| sampler.draw())
        .map_err(|e| HarnessError::Run(format!("run {j}: detector: {e}")))?;
    Ok(match outcome {
        StopOutcome::StoppedAt(t) => Detection { tau: t, censored: false, data },
        StopOutcome::Censored(cap) => Detection { tau: cap, censored: true, data },
    })
}

fn point_estimate(plan: &Plan, data: &[f64]) -> Result<usize, HarnessError> {
    let err = |e: String| HarnessError::Run(format!("point estimate: {e}"));
    Ok(match &plan.hat {
        HatRecipe::KnownLr { pre, post } => {
            estimate_known_lr(pre, post, data).map_err(|e| err(e.to_string()))?.t_hat
        }
        HatRecipe::ProfilePost { family, theta0, space } => {
            estimate_profile_post(family, *theta0, *space, data).t_hat
        }
        HatRecipe::ProfileBoth { family, pre_space, post_space } => {
            estimate_profile_both(family, *pre_space, *post_space, data).t_hat
        }
        HatRecipe::HistRows => {
            let mut state = plan.detector.init();
            for &x in data {
                detector_step(&plan.detector, &mut state, x).map_err(|e| err(e.to_string()))?;
            }
            estimate_from_scores(&hist_row_log_products(&state)).t_hat
        }
        HatRecipe::Subgaussian { boundary } => estimate_subgaussian_native(*boundary, data).t_hat,
        HatRecipe::ClippedSuffix { pre, post, c_lo, c_hi } => {
            let mut terms = Vec::with_capacity(data.len());
            for &x in data {
                let llr = post.log_density(x).map_err(|e| err(e.to_string()))?
                    - pre.log_density(x).map_err(|e| err(e.to_string()))?;
                terms.push(llr.clamp(c_lo.ln(), c_hi.ln()));
            }
            estimate_from_suffix_terms(&terms).t_hat
        }
    })
}

fn localize_run(
    plan: &Plan,
    survival: &SurvivalCurve,
    j: usize,
    det: &Detection,
) -> Result<RunRecord, HarnessError> {
    if det.censored {
        return Ok(RunRecord {
            run: j,
            tau: det.tau,
            censored: true,
            false_alarm: false,
            t_hat: 0,
            delay: None,
            universal: None,
            adaptive: None,
            baseline: None,
            params: None,
            flags: vec!["detector_censored".to_string()],
        });
    }
    let tau = det.tau;
    let data = &det.data;
    let t = plan.t_change;
    let false_alarm = tau < t;
    let t_hat = point_estimate(plan, data)?;
    let mut flags = Vec::new();
    let covered = |accepted: &[usize]| accepted.binary_search(&t).is_ok();
    let run_err = |what: &str, e: String| HarnessError::Run(format!("run {j}: {what}: {e}"));

    let universal = match &plan.universal {
        Some(up) => {
            let out = universal_set(&up.pair, data, tau, t_hat, up.alpha, survival)
                .map_err(|e| run_err("universal set", e.to_string()))?;
            Some(MethodRecord {
                size: out.accepted.len(),
                covered: covered(&out.accepted),
                accepted: out.accepted,
            })
        }
        None => None,
    };

    let adaptive = match &plan.adaptive {
        Some(ap) => {
            let mut cfg = ap.cfg;
            cfg.master_seed = stream(plan.master_seed, "run-seed", j as u64).random();
            let out = match &ap.variant {
                AdaptiveVariant::Known { pre, post } => {
                    adaptive_set_known(pre, post, &plan.detector, data, tau, survival, &cfg)
                }
                AdaptiveVariant::CompPost { family, theta0, theta1_space } => adaptive_set_comp_post(
                    family,
                    *theta0,
                    *theta1_space,
                    &plan.detector,
                    data,
                    tau,
                    survival,
                    &cfg,
                ),
                AdaptiveVariant::Comp { family, theta0_space, theta1_space } => adaptive_set_comp(
                    family,
                    *theta0_space,
                    *theta1_space,
                    &plan.detector,
                    data,
                    tau,
                    survival,
                    &cfg,
                ),
            }
            .map_err(|e| run_err("adaptive set", e.to_string()))?;
            for f in &out.flags {
                flags.push(format!("{f:?}"));
            }
            Some(MethodRecord {
                size: out.accepted.len(),
                covered: covered(&out.accepted),
                accepted: out.accepted,
            })
        }
        None => None,
    };

    let baseline = match &plan.baseline {
        Some(bp) => {
            let set = walk_confidence_set(data, tau, bp.alpha, bp.theta1)
                .map_err(|e| run_err("baseline set", e.to_string()))?;
            if set.clamped {
                flags.push("baseline_clamped".to_string());
            }
            Some(MethodRecord {
                size: set.accepted.len(),
                covered: covered(&set.accepted),
                accepted: set.accepted,
            })
        }
        None => None,
    };

    let params = match &plan.params {
        Some(pp) => {
            let accepted = adaptive
                .as_ref()
                .or(universal.as_ref())
                .map(|m| m.accepted.as_slice())
                .unwrap_or(&[]);
            let union = param_set_union(
                &pp.family,
                data,
                accepted,
                tau,
                pp.eta,
                survival,
                pp.theta0_space,
                pp.theta1_space,
            )
            .map_err(|e| run_err("parameter sets", e.to_string()))?;
            let len = |ivs: &[crate::confseq::Interval]| {
                ivs.iter().map(|iv| iv.width().max(0.0)).sum::<f64>()
            };
            Some(ParamRecord {
                pre_covered: union.pre.iter().any(|iv| iv.contains(pp.theta0_true)),
                post_covered: union.post.iter().any(|iv| iv.contains(pp.theta1_true)),
                pre_len: len(&union.pre),
                post_len: len(&union.post),
                pre_unbounded: union.pre_unbounded,
            })
        }
        None => None,
    };

    Ok(RunRecord {
        run: j,
        tau,
        censored: false,
        false_alarm,
        t_hat,
        delay: (tau >= t).then(|| tau - t),
        universal,
        adaptive,
        baseline,
        params,
        flags,
    })
}

/// Run the configured experiment: detect on every replication, calibrate the
/// survival curve once at the largest alarm time, then localize every
/// replication with each configured method.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult, HarnessError> {
    let plan = cfg.resolve()?;
    let detections: Vec<Detection> = (0..plan.runs)
        .into_par_iter()
        .map(|j| run_detection(&plan, j))
        .collect::<Result<_, _>>()?;
    let tau_cap = detections
        .iter()
        .filter(|d| !d.censored)
        .map(|d| d.tau)
        .max()
        .ok_or_else(|| HarnessError::Run("no replication produced an alarm".into()))?;
    let survival = match &plan.survival_model {
        Some(model) => estimate_survival(
            model,
            &plan.detector,
            tau_cap,
            plan.n_survival,
            plan.survival_kind,
            plan.master_seed,
        )
        .map_err(|e| HarnessError::Run(format!("survival calibration: {e}")))?,
        None => SurvivalCurve::unit(tau_cap),
    };
    let records: Vec<RunRecord> = detections
        .par_iter()
        .enumerate()
        .map(|(j, det)| localize_run(&plan, &survival, j, det))
        .collect::<Result<_, _>>()?;
    let mut summaries = Vec::new();
    for m in [Method::Universal, Method::Adaptive, Method::Baseline] {
        let present = match m {
            Method::Universal => plan.universal.is_some(),
            Method::Adaptive => plan.adaptive.is_some(),
            Method::Baseline => plan.baseline.is_some(),
        };
        if present {
            summaries.push(aggregate(&records, m));
        }
    }
    let params = aggregate_params(&records);
    Ok(ExperimentResult { records, summaries, params, survival_flagged: survival.flagged, tau_cap })
}

/// One grid point of the rejection-budget check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DualityRow {
    pub t: usize,
    /// alpha * (estimated probability the alarm is at or after t under no
    /// change): the rejection budget granted to this candidate.
    pub budget: f64,
    pub n_sims: usize,
    pub rejections: usize,
    pub rate: f64,
    /// Simulations still running at the safety horizon (counted as
    /// non-rejections).
    pub censored: usize,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DualityReport {
    pub rows: Vec<DualityRow>,
    pub all_pass: bool,
}

/// Empirical check of the testing-confidence duality: for each grid time t,
/// simulate streams whose change truly happens at t, and compare the
/// universal test's rejection rate of the true t against its budget
/// alpha * P(tau >= t under no change), with a three-standard-error margin.
pub fn duality_check(
    cfg: &ExperimentConfig,
    grid: &[usize],
    n_sims: usize,
) -> Result<DualityReport, HarnessError> {
    let plan = cfg.resolve()?;
    let up = plan
        .universal
        .as_ref()
        .ok_or_else(|| HarnessError::Config("duality check needs the universal method".into()))?;
    if n_sims == 0 || grid.is_empty() {
        return Err(HarnessError::Config("duality check needs a grid and sims".into()));
    }
    let t_max = *grid.iter().max().expect("nonempty");
    if grid.iter().any(|&t| t == 0) {
        return Err(HarnessError::Config("grid times are 1-based".into()));
    }
    let survival = match &plan.survival_model {
        Some(model) => estimate_survival(
            model,
            &plan.detector,
            t_max,
            plan.n_survival,
            plan.survival_kind,
            plan.master_seed,
        )
        .map_err(|e| HarnessError::Run(format!("survival calibration: {e}")))?,
        None => SurvivalCurve::unit(t_max),
    };
    let mut rows = Vec::with_capacity(grid.len());
    for &t in grid {
        let r_t = survival.at(t);
        let budget = up.alpha * r_t;
        let threshold = (2.0 / (up.alpha * r_t)).ln();
        let outcomes: Vec<Result<(bool, bool), HarnessError>> = (0..n_sims)
            .into_par_iter()
            .map(|j| {
                let rng = stream(plan.master_seed, "duality", ((t as u64) << 32) | j as u64);
                let mut sampler = PathSampler::new(&plan.pre, &plan.post, ChangeIndex::At(t), rng);
                let (outcome, data) = run_until_stop(&plan.detector, plan.horizon, |_| sampler.draw())
                    .map_err(|e| HarnessError::Run(format!("duality sim: {e}")))?;
                let tau = match outcome {
                    StopOutcome::StoppedAt(s) => s,
                    StopOutcome::Censored(_) => return Ok((false, true)),
                };
                if tau < t {
                    // the alarm preceded the candidate: the bounded event
                    // cannot occur
                    return Ok((false, false));
                }
                let t_hat = point_estimate(&plan, &data)?;
                let eval = UniversalEvaluator::new(&up.pair, &data)
                    .map_err(|e| HarnessError::Run(format!("duality eval: {e}")))?;
                let m = eval
                    .statistic(t, t_hat)
                    .map_err(|e| HarnessError::Run(format!("duality statistic: {e}")))?;
                Ok((m >= threshold, false))
            })
            .collect();
        let mut rejections = 0usize;
        let mut censored = 0usize;
        for o in outcomes {
            let (rej, cen) = o?;
            rejections += usize::from(rej);
            censored += usize::from(cen);
        }
        let rate = rejections as f64 / n_sims as f64;
        let margin = 3.0 * (budget * (1.0 - budget) / n_sims as f64).sqrt();
        rows.push(DualityRow {
            t,
            budget,
            n_sims,
            rejections,
            rate,
            censored,
            pass: rate <= budget + margin,
        });
    }
    let all_pass = rows.iter().all(|r| r.pass);
    Ok(DualityReport { rows, all_pass })
}

fn csv_opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Render records as CSV, one row per replication. Accepted sets are not
/// included (see the JSON emitters for set membership).
#[must_use]
pub fn records_csv(records: &[RunRecord]) -> String {
    let mut out = String::from(
        "run,tau,censored,false_alarm,t_hat,delay,\
         universal_size,universal_covered,adaptive_size,adaptive_covered,\
         baseline_size,baseline_covered,pre_covered,post_covered,pre_len,post_len,flags\n",
    );
    for r in records {
        let m = |rec: &Option<MethodRecord>| match rec {
            Some(m) => (m.size.to_string(), u8::from(m.covered).to_string()),
            None => (String::new(), String::new()),
        };
        let (us, uc) = m(&r.universal);
        let (as_, ac) = m(&r.adaptive);
        let (bs, bc) = m(&r.baseline);
        let (pc, qc, pl, ql) = match &r.params {
            Some(p) => (
                u8::from(p.pre_covered).to_string(),
                u8::from(p.post_covered).to_string(),
                format!("{}", p.pre_len),
                format!("{}", p.post_len),
            ),
            None => (String::new(), String::new(), String::new(), String::new()),
        };
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.run,
            r.tau,
            u8::from(r.censored),
            u8::from(r.false_alarm),
            r.t_hat,
            csv_opt(r.delay),
            us,
            uc,
            as_,
            ac,
            bs,
            bc,
            pc,
            qc,
            pl,
            ql,
            r.flags.join(";"),
        ));
    }
    out
}

/// Summary (and parameter summary) as pretty JSON.
pub fn summary_json(result: &ExperimentResult) -> Result<String, HarnessError> {
    #[derive(Serialize)]
    struct Doc<'a> {
        summaries: &'a [SummaryRow],
        #[serde(skip_serializing_if = "Option::is_none")]
        params: &'a Option<ParamSummary>,
        survival_flagged: bool,
        tau_cap: usize,
    }
    serde_json::to_string_pretty(&Doc {
        summaries: &result.summaries,
        params: &result.params,
        survival_flagged: result.survival_flagged,
        tau_cap: result.tau_cap,
    })
    .map_err(|e| HarnessError::Run(format!("serializing summary: {e}")))
}

/// Per-run set membership as pretty JSON (for external plotting).
pub fn records_json(records: &[RunRecord]) -> Result<String, HarnessError> {
    serde_json::to_string_pretty(records)
        .map_err(|e| HarnessError::Run(format!("serializing records: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_setting_i() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::preset(SettingId::I);
        cfg.t_change = Some(12);
        cfg.detector_a = Some(50.0);
        cfg.runs = Some(4);
        cfg.n_survival = Some(16);
        cfg.b_sims = Some(16);
        cfg.master_seed = 7;
        cfg
    }

    #[test]
    fn setting_i_smoke_runs_both_methods() {
        let res = run_experiment(&small_setting_i()).unwrap();
        assert_eq!(res.records.len(), 4);
        assert_eq!(res.summaries.len(), 2);
        assert_eq!(res.summaries[0].method, "universal");
        assert_eq!(res.summaries[1].method, "adaptive");
        for r in &res.records {
            assert!(!r.censored);
            let u = r.universal.as_ref().unwrap();
            assert_eq!(u.size, u.accepted.len());
            assert!(u.accepted.iter().all(|&t| t >= 1 && t <= r.tau));
            assert!(r.t_hat >= 1 && r.t_hat <= r.tau);
        }
    }

    #[test]
    fn reruns_and_single_thread_pool_are_byte_identical() {
        let cfg = small_setting_i();
        let a = records_csv(&run_experiment(&cfg).unwrap().records);
        let b = records_csv(&run_experiment(&cfg).unwrap().records);
        assert_eq!(a, b, "same config and seed must reproduce exactly");
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let c = pool.install(|| records_csv(&run_experiment(&cfg).unwrap().records));
        assert_eq!(a, c, "serial execution must match parallel execution");
    }

    #[test]
    fn seed_change_changes_output() {
        let mut cfg = small_setting_i();
        let a = records_csv(&run_experiment(&cfg).unwrap().records);
        cfg.master_seed = 8;
        let b = records_csv(&run_experiment(&cfg).unwrap().records);
        assert_ne!(a, b);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = ExperimentConfig::preset(SettingId::IV);
        cfg.methods = Some(vec![Method::Adaptive]);
        assert!(matches!(cfg.validate(), Err(HarnessError::Config(_))));
        let mut cfg = ExperimentConfig::preset(SettingId::I);
        cfg.runs = Some(0);
        assert!(matches!(cfg.validate(), Err(HarnessError::Config(_))));
        let mut cfg = ExperimentConfig::preset(SettingId::I);
        cfg.alpha = Some(1.5);
        assert!(matches!(cfg.validate(), Err(HarnessError::Config(_))));
        let mut cfg = ExperimentConfig::preset(SettingId::BaselineCompare);
        cfg.theta1_boundary = Some(0.4);
        assert!(
            matches!(cfg.validate(), Err(HarnessError::Config(_))),
            "unknown shift needs an explicit threshold"
        );
        cfg.detector_a = Some(6.0);
        cfg.validate().unwrap();
    }

    #[test]
    fn every_setting_runs_at_tiny_scale() {
        let all = [
            SettingId::I,
            SettingId::II,
            SettingId::III,
            SettingId::IV,
            SettingId::V,
            SettingId::VI,
            SettingId::APfa,
            SettingId::BPfa,
            SettingId::CPfa,
            SettingId::Markov,
            SettingId::PoissonI,
            SettingId::PoissonII,
            SettingId::PoissonIII,
            SettingId::BaselineCompare,
            SettingId::RatioSweep,
        ];
        for setting in all {
            let mut cfg = ExperimentConfig::preset(setting);
            cfg.t_change = Some(10);
            cfg.detector_a = Some(40.0);
            cfg.runs = Some(2);
            cfg.n_survival = Some(6);
            cfg.b_sims = Some(6);
            cfg.master_seed = 11;
            let res = run_experiment(&cfg)
                .unwrap_or_else(|e| panic!("setting {setting:?} failed: {e}"));
            assert_eq!(res.records.len(), 2, "setting {setting:?}");
            assert!(!res.summaries.is_empty(), "setting {setting:?}");
        }
    }

    #[test]
    fn config_json_round_trips() {
        let cfg = small_setting_i();
        let s = serde_json::to_string(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(back.setting, SettingId::I);
        assert_eq!(back.t_change, Some(12));
        let named: ExperimentConfig =
            serde_json::from_str(r#"{"setting":"poisson_II","runs":3}"#).unwrap();
        assert_eq!(named.setting, SettingId::PoissonII);
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"setting":"nope"}"#).is_err());
        assert!(
            serde_json::from_str::<ExperimentConfig>(r#"{"setting":"I","typo":1}"#).is_err(),
            "unknown fields must be rejected"
        );
    }

    fn rec(
        run: usize,
        tau: usize,
        censored: bool,
        false_alarm: bool,
        t_hat: usize,
        delay: Option<usize>,
        uni: Option<(usize, bool)>,
    ) -> RunRecord {
        RunRecord {
            run,
            tau,
            censored,
            false_alarm,
            t_hat,
            delay,
            universal: uni.map(|(size, covered)| MethodRecord {
                size,
                covered,
                accepted: Vec::new(),
            }),
            adaptive: None,
            baseline: None,
            params: None,
            flags: Vec::new(),
        }
    }

    #[test]
    fn aggregate_matches_hand_computed_sheet() {
        // 20 records: 2 censored, 6 false alarms, 12 conditional runs.
        // Conditional: sizes 10..21, covered on 9 of 12, delays 5..16,
        // t_hat = T - 2 on even runs and T + 1 on odd (T = 50).
        let mut records = Vec::new();
        for j in 0..2 {
            records.push(rec(j, 1000, true, false, 0, None, None));
        }
        for j in 2..8 {
            // false alarms: tau = 40 < 50, sets cannot cover
            records.push(rec(j, 40, false, true, 3, None, Some((7, false))));
        }
        for (i, j) in (8..20).enumerate() {
            let covered = i < 9;
            let t_hat = if j % 2 == 0 { 48 } else { 51 };
            records.push(rec(
                j,
                50 + 5 + i,
                false,
                false,
                t_hat,
                Some(5 + i),
                Some((10 + i, covered)),
            ));
        }
        let row = aggregate(&records, Method::Universal);
        assert_eq!(row.n_runs, 20);
        assert_eq!(row.n_conditional, 12);
        assert!(!row.zero_conditional);
        // 9 / 12 = 0.75 conditional, 9 / 20 = 0.45 marginal
        assert_eq!(row.conditional_coverage, Some(0.75));
        assert_eq!(row.marginal_coverage, 0.45);
        // SE = sqrt(0.75 * 0.25 / 12)
        let se = row.conditional_coverage_se.unwrap();
        assert!((se - (0.75f64 * 0.25 / 12.0).sqrt()).abs() < 1e-15);
        // sizes 10..=21 mean = 15.5; delays 5..=16 mean = 10.5
        assert_eq!(row.mean_conditional_size, Some(15.5));
        assert_eq!(row.mean_delay, Some(10.5));
        // |t_hat - 50|: six runs at 2, six at 1 -> 1.5
        assert_eq!(row.mean_abs_err, Some(1.5));
    }

    #[test]
    fn aggregate_half_covered_of_four() {
        let mut records = Vec::new();
        for j in 0..4 {
            records.push(rec(j, 60, false, false, 55, Some(10), Some((12, j < 2))));
        }
        let row = aggregate(&records, Method::Universal);
        assert_eq!(row.conditional_coverage, Some(0.5));
        assert_eq!(row.conditional_coverage_se, Some(0.25));
    }

    #[test]
    fn aggregate_flags_zero_conditional() {
        let records = vec![rec(0, 10, false, true, 2, None, Some((3, false)))];
        let row = aggregate(&records, Method::Universal);
        assert!(row.zero_conditional);
        assert_eq!(row.conditional_coverage, None);
        assert_eq!(row.marginal_coverage, 0.0);
    }

    #[test]
    fn csv_layout_is_stable() {
        let records = vec![rec(0, 25, false, false, 20, Some(5), Some((6, true)))];
        let csv = records_csv(&records);
        let mut lines = csv.lines();
        assert!(lines.next().unwrap().starts_with("run,tau,censored"));
        assert_eq!(lines.next().unwrap(), "0,25,0,0,20,5,6,1,,,,,,,,,");
    }

    #[test]
    fn duality_budget_is_alpha_at_t_one() {
        let mut cfg = small_setting_i();
        cfg.t_change = Some(5);
        let report = duality_check(&cfg, &[1], 40).unwrap();
        assert_eq!(report.rows.len(), 1);
        let row = &report.rows[0];
        // every no-change run survives to t = 1, so the budget is alpha
        assert!((row.budget - 0.05).abs() < 1e-12, "budget {}", row.budget);
    }
}
