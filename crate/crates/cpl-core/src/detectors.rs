//! Sequential change detectors. Each family maintains a scan statistic over a
//! stream of observations and stops the first time the statistic crosses its
//! threshold.
//!
//! Conventions:
//! - Ratio-based families track their statistic in log space; `statistic`
//!   returns that log value (the natural-scale statistic is exp of it and is
//!   always nonnegative). The raw-sum family `reflected_sum` reports its raw
//!   nonnegative value directly.
//! - Stopping times are 1-based: a detector that crosses while absorbing the
//!   n-th observation stops at tau = n.
//! - Stepping a stopped detector is a usage error.

use crate::models::{Model, ModelError};
use crate::util::log_sum_exp;
use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum DetectorError {
    AlreadyStopped,
    BadObservation(ModelError),
    InvalidSpec(String),
    /// The operation needs a monotonicity guarantee this family does not have.
    Unsupported(&'static str),
}

impl fmt::Display for DetectorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DetectorError::AlreadyStopped => write!(f, "detector already stopped"),
            DetectorError::BadObservation(e) => write!(f, "bad observation: {e}"),
            DetectorError::InvalidSpec(s) => write!(f, "invalid detector spec: {s}"),
            DetectorError::Unsupported(s) => write!(f, "unsupported for this detector family: {s}"),
        }
    }
}

impl std::error::Error for DetectorError {}

impl From<ModelError> for DetectorError {
    fn from(e: ModelError) -> Self {
        DetectorError::BadObservation(e)
    }
}

/// One-parameter families used by the mixture detectors and the parametric
/// confidence-set machinery.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum MeanFamily {
    Gaussian { sd: f64 },
    Poisson,
}

impl MeanFamily {
    /// log f_theta(x) for the family (Poisson x must be a nonnegative integer).
    #[must_use]
    pub fn log_density(&self, theta: f64, x: f64) -> f64 {
        match self {
            MeanFamily::Gaussian { sd } => crate::util::normal_log_pdf(x, theta, *sd),
            MeanFamily::Poisson => {
                if theta == 0.0 {
                    return if x == 0.0 { 0.0 } else { f64::NEG_INFINITY };
                }
                x * theta.ln() - theta - crate::util::ln_gamma(x + 1.0)
            }
        }
    }

    /// log [f_num(x) / f_den(x)], in closed form (factorials cancel).
    #[must_use]
    pub fn log_lr(&self, num: f64, den: f64, x: f64) -> f64 {
        match self {
            MeanFamily::Gaussian { sd } => (num - den) / (sd * sd) * (x - 0.5 * (num + den)),
            MeanFamily::Poisson => {
                if num == 0.0 || den == 0.0 {
                    return self.log_density(num, x) - self.log_density(den, x);
                }
                x * (num / den).ln() - (num - den)
            }
        }
    }
}

/// Detector families. Serialized with a `family` tag; thresholds are given on
/// the natural scale (`a`), converted to log space internally.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DetectorSpec {
    /// CUSUM of the likelihood ratio post/pre: M_n = max(M_{n-1}, 1) * LR(x_n).
    CusumLr { pre: Model, post: Model, a: f64 },
    /// Shiryaev-Roberts: R_n = (1 + R_{n-1}) * LR(x_n).
    Sr { pre: Model, post: Model, a: f64 },
    /// Plain likelihood-ratio martingale from n = 1 (bounded false-alarm
    /// probability 1/a instead of bounded average run length).
    LrPfa { pre: Model, post: Model, a: f64 },
    /// Weighted CUSUM: max over start j of sum_k w_k prod_{i=j}^n
    /// f_{atom_k}(x_i) / f_{den}(x_i).
    WeightedCusum {
        atoms: Vec<f64>,
        weights: Vec<f64>,
        family: MeanFamily,
        den_param: f64,
        a: f64,
    },
    /// Weighted CUSUM whose denominator is the pre-change class boundary
    /// (the representative closest to the alternative class).
    WcsRipr {
        atoms: Vec<f64>,
        weights: Vec<f64>,
        family: MeanFamily,
        pre_boundary: f64,
        a: f64,
    },
    /// Mixture likelihood-ratio martingale from n = 1 (PFA-controlled).
    MixtureLrPfa {
        atoms: Vec<f64>,
        weights: Vec<f64>,
        family: MeanFamily,
        den_param: f64,
        a: f64,
    },
    /// PFA-controlled mixture with the pre-class boundary as denominator.
    MixtureLrRiprPfa {
        atoms: Vec<f64>,
        weights: Vec<f64>,
        family: MeanFamily,
        pre_boundary: f64,
        a: f64,
    },
    /// Histogram plug-in e-detector on [0,1]: per start j, the product of
    /// Laplace-smoothed histogram predictives over the uniform base density.
    EHist { bins: usize, a: f64 },
    /// Sub-Gaussian plug-in e-detector: factors
    /// exp(nu_n (x - boundary) - nu_n^2 / 2) with
    /// nu_n = min(0, mean of all past observations) - boundary.
    ESubgaussian { boundary: f64, a: f64 },
    /// CUSUM of a clipped likelihood ratio (robust to contamination).
    HuberCusum { pre: Model, post: Model, clip_lo: f64, clip_hi: f64, a: f64 },
    /// Two-state Markov scan: per window, (p1/p0)^{#0->1} ((1-p1)/(1-p0))^{#0->0}
    /// (transitions out of state 1 have the same probability in both regimes).
    MarkovCusum { p0: f64, p1: f64, a: f64 },
    /// Reflected CUSUM of the raw observations: T_n = max(0, T_{n-1} + x_n),
    /// stops at T_n >= d.
    ReflectedSum { d: f64 },
}

fn check_mixture(atoms: &[f64], weights: &[f64]) -> Result<(), DetectorError> {
    if atoms.is_empty() || atoms.len() != weights.len() {
        return Err(DetectorError::InvalidSpec(
            "mixture atoms/weights must be nonempty and the same length".into(),
        ));
    }
    let s: f64 = weights.iter().sum();
    if weights.iter().any(|&w| w <= 0.0) || (s - 1.0).abs() > 1e-6 {
        return Err(DetectorError::InvalidSpec(format!(
            "mixture weights must be positive and sum to 1 (sum = {s})"
        )));
    }
    Ok(())
}

impl DetectorSpec {
    pub fn validate(&self) -> Result<(), DetectorError> {
        let a = self.threshold();
        if !a.is_finite() || a <= 0.0 {
            return Err(DetectorError::InvalidSpec(format!("threshold a = {a} must be positive")));
        }
        match self {
            DetectorSpec::CusumLr { pre, post, .. }
            | DetectorSpec::Sr { pre, post, .. }
            | DetectorSpec::LrPfa { pre, post, .. } => {
                pre.validate()?;
                post.validate()?;
                if pre.is_sequential() != post.is_sequential() {
                    return Err(DetectorError::InvalidSpec(
                        "pre and post must both be sequential or both i.i.d.".into(),
                    ));
                }
            }
            DetectorSpec::WeightedCusum { atoms, weights, .. }
            | DetectorSpec::WcsRipr { atoms, weights, .. }
            | DetectorSpec::MixtureLrPfa { atoms, weights, .. }
            | DetectorSpec::MixtureLrRiprPfa { atoms, weights, .. } => {
                check_mixture(atoms, weights)?;
            }
            DetectorSpec::EHist { bins, .. } => {
                if *bins < 2 {
                    return Err(DetectorError::InvalidSpec("e_hist needs at least 2 bins".into()));
                }
            }
            DetectorSpec::ESubgaussian { .. } => {}
            DetectorSpec::HuberCusum { pre, post, clip_lo, clip_hi, .. } => {
                pre.validate()?;
                post.validate()?;
                if !(0.0 < *clip_lo && clip_lo <= clip_hi) {
                    return Err(DetectorError::InvalidSpec(format!(
                        "clip bounds must satisfy 0 < lo <= hi (got {clip_lo}, {clip_hi})"
                    )));
                }
            }
            DetectorSpec::MarkovCusum { p0, p1, .. } => {
                for (n, v) in [("p0", p0), ("p1", p1)] {
                    if !(0.0 < *v && *v < 1.0) {
                        return Err(DetectorError::InvalidSpec(format!("{n} = {v} not in (0,1)")));
                    }
                }
            }
            DetectorSpec::ReflectedSum { .. } => {}
        }
        Ok(())
    }

    /// The crossing threshold on the natural scale.
    #[must_use]
    pub fn threshold(&self) -> f64 {
        match self {
            DetectorSpec::CusumLr { a, .. }
            | DetectorSpec::Sr { a, .. }
            | DetectorSpec::LrPfa { a, .. }
            | DetectorSpec::WeightedCusum { a, .. }
            | DetectorSpec::WcsRipr { a, .. }
            | DetectorSpec::MixtureLrPfa { a, .. }
            | DetectorSpec::MixtureLrRiprPfa { a, .. }
            | DetectorSpec::EHist { a, .. }
            | DetectorSpec::ESubgaussian { a, .. }
            | DetectorSpec::HuberCusum { a, .. }
            | DetectorSpec::MarkovCusum { a, .. } => *a,
            DetectorSpec::ReflectedSum { d } => *d,
        }
    }

    /// Whether the scan statistic is nondecreasing in every observation, so a
    /// pointwise-larger coupled path stops no later. Holds for the mean-family
    /// mixtures with every atom above the denominator and for the
    /// location/rate likelihood-ratio recursions with an upward shift.
    #[must_use]
    pub fn post_upward_monotone(&self) -> bool {
        fn mean_of(model: &Model) -> Option<f64> {
            match model {
                Model::Gaussian { mean, .. } => Some(*mean),
                Model::Poisson { rate } => Some(*rate),
                _ => None,
            }
        }
        match self {
            DetectorSpec::CusumLr { pre, post, .. }
            | DetectorSpec::Sr { pre, post, .. }
            | DetectorSpec::LrPfa { pre, post, .. } => match (mean_of(pre), mean_of(post)) {
                (Some(m0), Some(m1)) => m1 > m0,
                _ => false,
            },
            DetectorSpec::WeightedCusum { atoms, den_param, .. }
            | DetectorSpec::MixtureLrPfa { atoms, den_param, .. } => {
                atoms.iter().all(|&t| t > *den_param)
            }
            DetectorSpec::WcsRipr { atoms, pre_boundary, .. }
            | DetectorSpec::MixtureLrRiprPfa { atoms, pre_boundary, .. } => {
                atoms.iter().all(|&t| t > *pre_boundary)
            }
            DetectorSpec::ReflectedSum { .. } => true,
            _ => false,
        }
    }

    /// Fresh state for this detector.
    #[must_use]
    pub fn init(&self) -> DetectorState {
        let inner = match self {
            DetectorSpec::CusumLr { .. } => Inner::Reflected { w: 0.0, prev: None },
            DetectorSpec::Sr { .. } => Inner::Sr { log_r: f64::NEG_INFINITY, prev: None },
            DetectorSpec::LrPfa { .. } => Inner::Global { log_l: 0.0, prev: None },
            DetectorSpec::WeightedCusum { atoms, .. } | DetectorSpec::WcsRipr { atoms, .. } => {
                Inner::WeightedRows { rows: Vec::new(), k: atoms.len() }
            }
            DetectorSpec::MixtureLrPfa { atoms, .. }
            | DetectorSpec::MixtureLrRiprPfa { atoms, .. } => {
                Inner::MixtureGlobal { per_atom: vec![0.0; atoms.len()] }
            }
            DetectorSpec::EHist { bins, .. } => Inner::HistRows { rows: Vec::new(), bins: *bins },
            DetectorSpec::ESubgaussian { .. } => Inner::SubgScan { w: 0.0, sum: 0.0, count: 0 },
            DetectorSpec::HuberCusum { .. } => Inner::Reflected { w: 0.0, prev: None },
            DetectorSpec::MarkovCusum { .. } => {
                Inner::MarkovScan { prev: None, score: 0.0, run_min: 0.0, stat: 0.0 }
            }
            DetectorSpec::ReflectedSum { .. } => Inner::RawReflected { t: 0.0 },
        };
        DetectorState { n: 0, stopped: false, inner }
    }
}

#[derive(Debug, Clone)]
enum Inner {
    /// Reflected log recursion: w = max(w, 0) + increment.
    Reflected { w: f64, prev: Option<f64> },
    Sr { log_r: f64, prev: Option<f64> },
    Global { log_l: f64, prev: Option<f64> },
    /// Per-start, per-atom log products, flat with stride k.
    WeightedRows { rows: Vec<f64>, k: usize },
    MixtureGlobal { per_atom: Vec<f64> },
    HistRows { rows: Vec<HistRow>, bins: usize },
    SubgScan { w: f64, sum: f64, count: usize },
    MarkovScan { prev: Option<f64>, score: f64, run_min: f64, stat: f64 },
    RawReflected { t: f64 },
}

#[derive(Debug, Clone)]
struct HistRow {
    counts: Vec<u32>,
    total: u32,
    log_prod: f64,
}

/// Running state of a detector.
#[derive(Debug, Clone)]
pub struct DetectorState {
    /// Number of observations absorbed.
    pub n: usize,
    pub stopped: bool,
    inner: Inner,
}

impl DetectorState {
    /// Current scan statistic: log scale for ratio families, raw for
    /// `reflected_sum`. Zero observations give the at-rest value.
    #[must_use]
    pub fn statistic(&self, spec: &DetectorSpec) -> f64 {
        match (&self.inner, spec) {
            (Inner::Reflected { w, .. }, _) => *w,
            (Inner::Sr { log_r, .. }, _) => *log_r,
            (Inner::Global { log_l, .. }, _) => *log_l,
            (Inner::WeightedRows { rows, k }, spec) => {
                let (weights, _) = mixture_parts(spec);
                rows.chunks_exact(*k)
                    .map(|row| {
                        let terms: Vec<f64> =
                            row.iter().zip(weights).map(|(&r, &w)| r + w.ln()).collect();
                        log_sum_exp(&terms)
                    })
                    .fold(f64::NEG_INFINITY, f64::max)
            }
            (Inner::MixtureGlobal { per_atom }, spec) => {
                let (weights, _) = mixture_parts(spec);
                let terms: Vec<f64> =
                    per_atom.iter().zip(weights).map(|(&r, &w)| r + w.ln()).collect();
                log_sum_exp(&terms)
            }
            (Inner::HistRows { rows, .. }, _) => {
                rows.iter().map(|r| r.log_prod).fold(f64::NEG_INFINITY, f64::max)
            }
            (Inner::SubgScan { w, .. }, _) => *w,
            (Inner::MarkovScan { stat, .. }, _) => *stat,
            (Inner::RawReflected { t }, _) => *t,
        }
    }

    fn crossed(&self, spec: &DetectorSpec) -> bool {
        match spec {
            DetectorSpec::ReflectedSum { d } => self.statistic(spec) >= *d,
            _ => self.statistic(spec) >= spec.threshold().ln(),
        }
    }
}

fn mixture_parts(spec: &DetectorSpec) -> (&[f64], &[f64]) {
    // returns (log-weight slice placeholder, atoms); log weights are computed
    // lazily below to keep the state free of derived caches
    match spec {
        DetectorSpec::WeightedCusum { weights, atoms, .. }
        | DetectorSpec::WcsRipr { weights, atoms, .. }
        | DetectorSpec::MixtureLrPfa { weights, atoms, .. }
        | DetectorSpec::MixtureLrRiprPfa { weights, atoms, .. } => (weights, atoms),
        _ => (&[], &[]),
    }
}

/// Absorb one observation. Returns true if the detector stops at this step.
pub fn detector_step(
    spec: &DetectorSpec,
    state: &mut DetectorState,
    x: f64,
) -> Result<bool, DetectorError> {
    if state.stopped {
        return Err(DetectorError::AlreadyStopped);
    }
    match (&mut state.inner, spec) {
        (Inner::Reflected { w, prev }, DetectorSpec::CusumLr { pre, post, .. }) => {
            let llr = post.log_density_given(*prev, x)? - pre.log_density_given(*prev, x)?;
            *w = w.max(0.0) + llr;
            if pre.is_sequential() {
                *prev = Some(x);
            }
        }
        (Inner::Reflected { w, prev }, DetectorSpec::HuberCusum { pre, post, clip_lo, clip_hi, .. }) => {
            let llr = post.log_density_given(*prev, x)? - pre.log_density_given(*prev, x)?;
            *w = w.max(0.0) + llr.clamp(clip_lo.ln(), clip_hi.ln());
            if pre.is_sequential() {
                *prev = Some(x);
            }
        }
        (Inner::Sr { log_r, prev }, DetectorSpec::Sr { pre, post, .. }) => {
            let llr = post.log_density_given(*prev, x)? - pre.log_density_given(*prev, x)?;
            *log_r = crate::util::log_add_exp(0.0, *log_r) + llr;
            if pre.is_sequential() {
                *prev = Some(x);
            }
        }
        (Inner::Global { log_l, prev }, DetectorSpec::LrPfa { pre, post, .. }) => {
            let llr = post.log_density_given(*prev, x)? - pre.log_density_given(*prev, x)?;
            *log_l += llr;
            if pre.is_sequential() {
                *prev = Some(x);
            }
        }
        (
            Inner::WeightedRows { rows, k },
            DetectorSpec::WeightedCusum { atoms, family, den_param, .. },
        ) => {
            step_weighted_rows(rows, *k, atoms, family, *den_param, x);
        }
        (
            Inner::WeightedRows { rows, k },
            DetectorSpec::WcsRipr { atoms, family, pre_boundary, .. },
        ) => {
            step_weighted_rows(rows, *k, atoms, family, *pre_boundary, x);
        }
        (
            Inner::MixtureGlobal { per_atom },
            DetectorSpec::MixtureLrPfa { atoms, family, den_param, .. },
        ) => {
            for (r, &t) in per_atom.iter_mut().zip(atoms) {
                *r += family.log_lr(t, *den_param, x);
            }
        }
        (
            Inner::MixtureGlobal { per_atom },
            DetectorSpec::MixtureLrRiprPfa { atoms, family, pre_boundary, .. },
        ) => {
            for (r, &t) in per_atom.iter_mut().zip(atoms) {
                *r += family.log_lr(t, *pre_boundary, x);
            }
        }
        (Inner::HistRows { rows, bins }, DetectorSpec::EHist { .. }) => {
            let b = *bins;
            let bin = hist_bin(x, b);
            let log_b = (b as f64).ln();
            for row in rows.iter_mut() {
                // predictive (1 + same-bin count) / (bins + window length),
                // scored against the uniform base 1/bins
                let p_hat =
                    (1.0 + f64::from(row.counts[bin])) / (b as f64 + f64::from(row.total));
                row.log_prod += p_hat.ln() + log_b;
                row.counts[bin] += 1;
                row.total += 1;
            }
            let mut counts = vec![0u32; b];
            counts[bin] = 1;
            // new start: empty window, predictive = base, factor 1
            rows.push(HistRow { counts, total: 1, log_prod: 0.0 });
        }
        (Inner::SubgScan { w, sum, count }, DetectorSpec::ESubgaussian { boundary, .. }) => {
            let past_mean = if *count == 0 { 0.0 } else { *sum / *count as f64 };
            let nu = past_mean.min(0.0) - boundary;
            // exponent is centered at the pre-class boundary so the factor
            // has mean exactly 1 at the boundary (least favorable) point
            *w = w.max(0.0) + nu * (x - boundary) - 0.5 * nu * nu;
            *sum += x;
            *count += 1;
        }
        (Inner::MarkovScan { prev, score, run_min, stat }, DetectorSpec::MarkovCusum { p0, p1, .. }) => {
            if x != 0.0 && x != 1.0 {
                return Err(DetectorError::BadObservation(ModelError::OutOfDomain {
                    kind: "markov_cusum",
                    x,
                }));
            }
            if let Some(p) = *prev {
                // transitions out of state 1 cancel (the 1->1 probability is
                // shared by both regimes), so only 0->x transitions score
                let a = (p1 / p0).ln();
                let b = ((1.0 - p1) / (1.0 - p0)).ln();
                if p == 0.0 && x == 1.0 {
                    *score += a;
                } else if p == 0.0 && x == 0.0 {
                    *score += b;
                }
            }
            *run_min = run_min.min(*score);
            *stat = *score - *run_min;
            *prev = Some(x);
        }
        (Inner::RawReflected { t }, DetectorSpec::ReflectedSum { .. }) => {
            *t = (*t + x).max(0.0);
        }
        _ => {
            return Err(DetectorError::InvalidSpec(
                "state does not belong to this detector spec".into(),
            ))
        }
    }
    state.n += 1;
    if state.crossed(spec) {
        state.stopped = true;
    }
    Ok(state.stopped)
}

fn step_weighted_rows(
    rows: &mut Vec<f64>,
    k: usize,
    atoms: &[f64],
    family: &MeanFamily,
    den: f64,
    x: f64,
) {
    let incr: Vec<f64> = atoms.iter().map(|&t| family.log_lr(t, den, x)).collect();
    for row in rows.chunks_exact_mut(k) {
        for (r, &d) in row.iter_mut().zip(&incr) {
            *r += d;
        }
    }
    rows.extend_from_slice(&incr);
}

fn hist_bin(x: f64, bins: usize) -> usize {
    // [0,1] observations; the right edge belongs to the last bin
    let i = (x * bins as f64).floor() as isize;
    i.clamp(0, bins as isize - 1) as usize
}

/// Outcome of running a detector over a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopOutcome {
    /// Stopped at this 1-based time.
    StoppedAt(usize),
    /// Exhausted the stream / cap at this length without stopping.
    Censored(usize),
}

impl StopOutcome {
    #[must_use]
    pub fn stopped(&self) -> Option<usize> {
        match self {
            StopOutcome::StoppedAt(t) => Some(*t),
            StopOutcome::Censored(_) => None,
        }
    }

    /// The stop time, with censoring treated as +infinity.
    #[must_use]
    pub fn time_or_inf(&self) -> usize {
        match self {
            StopOutcome::StoppedAt(t) => *t,
            StopOutcome::Censored(_) => usize::MAX,
        }
    }
}

/// Run on a fixed stream; censored at the stream length if no crossing.
pub fn run_to_stop(spec: &DetectorSpec, xs: &[f64]) -> Result<StopOutcome, DetectorError> {
    let mut state = spec.init();
    for (i, &x) in xs.iter().enumerate() {
        if detector_step(spec, &mut state, x)? {
            return Ok(StopOutcome::StoppedAt(i + 1));
        }
    }
    Ok(StopOutcome::Censored(xs.len()))
}

/// Run against a lazily generated stream (next(i) produces the 1-based i-th
/// observation), up to `cap` observations. Returns the outcome and the
/// consumed prefix.
pub fn run_until_stop(
    spec: &DetectorSpec,
    cap: usize,
    mut next: impl FnMut(usize) -> f64,
) -> Result<(StopOutcome, Vec<f64>), DetectorError> {
    let mut state = spec.init();
    let mut xs = Vec::new();
    for i in 1..=cap {
        let x = next(i);
        xs.push(x);
        if detector_step(spec, &mut state, x)? {
            return Ok((StopOutcome::StoppedAt(i), xs));
        }
    }
    Ok((StopOutcome::Censored(cap), xs))
}

/// Bracket on the stopping time of a coupled path over a parameter interval.
/// For an upward-monotone detector, t1 (at theta_hi) <= t2 (at theta_lo).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MonotoneBracket {
    pub t1: StopOutcome,
    pub t2: StopOutcome,
}

/// Stopping-time bracket over [theta_lo, theta_hi] for a detector whose
/// statistic is monotone in the post-change parameter under pointwise-coupled
/// paths. `path_at(theta, cap)` must build the coupled path of length >= the
/// stop time or cap.
pub fn stop_time_bounds(
    spec: &DetectorSpec,
    mut path_at: impl FnMut(f64, usize) -> Vec<f64>,
    theta_lo: f64,
    theta_hi: f64,
    cap: usize,
) -> Result<MonotoneBracket, DetectorError> {
    if !spec.post_upward_monotone() {
        return Err(DetectorError::Unsupported(
            "stop_time_bounds needs an upward-monotone statistic",
        ));
    }
    if theta_lo > theta_hi {
        return Err(DetectorError::InvalidSpec(format!(
            "bracket interval is empty: [{theta_lo}, {theta_hi}]"
        )));
    }
    let hi_path = path_at(theta_hi, cap);
    let t1 = run_to_stop(spec, &hi_path[..hi_path.len().min(cap)])?;
    let lo_path = path_at(theta_lo, cap);
    let t2 = run_to_stop(spec, &lo_path[..lo_path.len().min(cap)])?;
    debug_assert!(t1.time_or_inf() <= t2.time_or_inf(), "monotone coupling violated");
    Ok(MonotoneBracket { t1, t2 })
}

/// Convenience: the e-detector row values of the histogram family at the
/// current state, one log product per start index (used by the plug-in point
/// estimate). Row j (1-based start) is at index j-1.
#[must_use]
pub fn hist_row_log_products(state: &DetectorState) -> Vec<f64> {
    match &state.inner {
        Inner::HistRows { rows, .. } => rows.iter().map(|r| r.log_prod).collect(),
        _ => Vec::new(),
    }
}

/// The running means used by the sub-Gaussian detector are recomputed by the
/// localization side; expose the raw prefix state for verification.
#[must_use]
pub fn subgaussian_scan_value(state: &DetectorState) -> Option<f64> {
    match &state.inner {
        Inner::SubgScan { w, .. } => Some(*w),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gauss(mean: f64) -> Model {
        Model::Gaussian { mean, sd: 1.0 }
    }

    #[test]
    fn cusum_stops_at_seven_for_constant_unit_llr() {
        // LR = e per step: threshold 1000 crossed when n >= ln(1000) = 6.9
        // Gaussian 0 -> 1 has llr = x - 1/2, so x = 1.5 gives llr = 1 exactly.
        let spec = DetectorSpec::CusumLr { pre: gauss(0.0), post: gauss(1.0), a: 1000.0 };
        let xs = vec![1.5; 50];
        assert_eq!(run_to_stop(&spec, &xs).unwrap(), StopOutcome::StoppedAt(7));
    }

    #[test]
    fn censoring_reports_cap() {
        let spec = DetectorSpec::CusumLr { pre: gauss(0.0), post: gauss(1.0), a: 1000.0 };
        let xs = vec![0.0; 20];
        assert_eq!(run_to_stop(&spec, &xs).unwrap(), StopOutcome::Censored(20));
    }

    #[test]
    fn step_after_stop_is_an_error() {
        let spec = DetectorSpec::ReflectedSum { d: 5.0 };
        let mut st = spec.init();
        assert!(detector_step(&spec, &mut st, 10.0).unwrap());
        assert!(matches!(
            detector_step(&spec, &mut st, 1.0),
            Err(DetectorError::AlreadyStopped)
        ));
    }

    #[test]
    fn cusum_recursion_equals_brute_force_scan() {
        // brute force: max over starts j of sum_{i=j}^n llr_i
        let spec = DetectorSpec::CusumLr { pre: gauss(0.0), post: gauss(1.0), a: 1e12 };
        let mut rng = crate::rng::stream(11, "test", 0);
        let xs: Vec<f64> = (0..60).map(|_| gauss(0.3).sample(&mut rng)).collect();
        let mut state = spec.init();
        for (n, &x) in xs.iter().enumerate() {
            detector_step(&spec, &mut state, x).unwrap();
            let llr: Vec<f64> = xs[..=n].iter().map(|&v| v - 0.5).collect();
            let brute = (0..llr.len())
                .map(|j| llr[j..].iter().sum::<f64>())
                .fold(f64::NEG_INFINITY, f64::max);
            assert!((state.statistic(&spec) - brute).abs() < 1e-10, "n = {n}");
        }
    }

    #[test]
    fn weighted_cusum_matches_brute_force_mixture() {
        let atoms = vec![0.75, 0.95, 1.15];
        let weights = vec![0.5, 0.3, 0.2];
        let spec = DetectorSpec::WeightedCusum {
            atoms: atoms.clone(),
            weights: weights.clone(),
            family: MeanFamily::Gaussian { sd: 1.0 },
            den_param: 0.0,
            a: 1e12,
        };
        let mut rng = crate::rng::stream(12, "test", 0);
        let xs: Vec<f64> = (0..20).map(|_| gauss(0.5).sample(&mut rng)).collect();
        let mut state = spec.init();
        for (n, &x) in xs.iter().enumerate() {
            detector_step(&spec, &mut state, x).unwrap();
            let mut brute = f64::NEG_INFINITY;
            for j in 0..=n {
                let mut mix = 0.0;
                for (&t, &w) in atoms.iter().zip(&weights) {
                    let s: f64 = xs[j..=n].iter().map(|&v| t * (v - 0.5 * t)).sum();
                    mix += w * s.exp();
                }
                brute = brute.max(mix.ln());
            }
            assert!((state.statistic(&spec) - brute).abs() < 1e-9, "n = {n}");
        }
    }

    #[test]
    fn markov_scan_matches_brute_force_windows() {
        let (p0, p1) = (0.75, 0.25);
        let spec = DetectorSpec::MarkovCusum { p0, p1, a: 1e12 };
        let mut rng = crate::rng::stream(13, "test", 0);
        let chain = Model::Markov2 { p01: 0.6, p11: 0.4, init_p1: 0.5 };
        let mut xs = Vec::new();
        let mut prev = None;
        for _ in 0..40 {
            let x = chain.sample_given(prev, &mut rng);
            prev = Some(x);
            xs.push(x);
        }
        let mut state = spec.init();
        let a = (p1 / p0).ln();
        let b = ((1.0 - p1) / (1.0 - p0)).ln();
        for (n, &x) in xs.iter().enumerate() {
            detector_step(&spec, &mut state, x).unwrap();
            let mut brute = f64::NEG_INFINITY;
            for j in 0..=n {
                let mut s = 0.0;
                for i in (j + 1)..=n {
                    if xs[i - 1] == 0.0 && xs[i] == 1.0 {
                        s += a;
                    } else if xs[i - 1] == 0.0 && xs[i] == 0.0 {
                        s += b;
                    }
                }
                brute = brute.max(s);
            }
            assert!((state.statistic(&spec) - brute).abs() < 1e-10, "n = {n}");
        }
    }

    #[test]
    fn hist_rows_use_laplace_predictives() {
        let spec = DetectorSpec::EHist { bins: 10, a: 1e12 };
        let mut state = spec.init();
        // first observation: new row factor 1
        detector_step(&spec, &mut state, 0.05).unwrap();
        assert_eq!(state.statistic(&spec), 0.0);
        // second obs in the same bin: row 1 factor (1+1)/(10+1) * 10 = 20/11
        detector_step(&spec, &mut state, 0.07).unwrap();
        let rows = hist_row_log_products(&state);
        assert!((rows[0] - (20.0_f64 / 11.0).ln()).abs() < 1e-12);
        assert_eq!(rows[1], 0.0);
        // right edge clamps into the last bin
        assert_eq!(super::hist_bin(1.0, 10), 9);
    }

    #[test]
    fn threshold_monotonicity_in_a() {
        let mut rng = crate::rng::stream(14, "test", 0);
        let xs: Vec<f64> = (0..4000).map(|_| gauss(0.6).sample(&mut rng)).collect();
        let tau = |a: f64| {
            let spec = DetectorSpec::CusumLr { pre: gauss(0.0), post: gauss(1.0), a };
            run_to_stop(&spec, &xs).unwrap().time_or_inf()
        };
        assert!(tau(10.0) <= tau(100.0));
        assert!(tau(100.0) <= tau(1000.0));
    }
}
