//! Simulation-calibrated confidence sets for the change time. Each candidate
//! t is kept or dropped by comparing an observed localization statistic with
//! its Monte Carlo distribution under a change at t, via a rank test whose
//! level is discounted by the no-change survival probability.
//!
//! Three constructions: fully known pre and post distributions; known pre
//! with composite post (simulations bounded over a post confidence
//! sequence); both composite (bounded over pre and post sets). Composite
//! simulations never evaluate one parameter at a time: a closed-form upper
//! bound (Gaussian) or an exact enumeration over thinning break points
//! (Poisson) covers the whole parameter rectangle per simulation.

use super::{glr_known_pre, glr_profile_both, known_lr_cumsum, LocalizeError};
use crate::confseq::{confidence_sequence, fixed_ci, Interval};
use crate::detectors::{run_until_stop, DetectorError, DetectorSpec, MeanFamily, StopOutcome};
use crate::models::{poisson_thin, ChangeIndex, Model, PathSampler};
use crate::rng::{stream, Prng};
use crate::survival::SurvivalCurve;
use crate::util::ceil_snapped;
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;

/// Statistic of a truncated simulation: simulations that stop before the
/// candidate change rank below every real value, censored ones above.
#[derive(Debug, Clone, Copy)]
pub enum TruncatedStat {
    NegInf,
    Finite(f64),
    PosInf,
}

impl TruncatedStat {
    /// Wraps a log-scale statistic, mapping infinite values to the matching
    /// sentinel. NaN is a bug upstream.
    #[must_use]
    pub fn from_log(v: f64) -> Self {
        assert!(!v.is_nan(), "statistic is NaN");
        if v == f64::NEG_INFINITY {
            TruncatedStat::NegInf
        } else if v == f64::INFINITY {
            TruncatedStat::PosInf
        } else {
            TruncatedStat::Finite(v)
        }
    }

    fn tag(&self) -> i8 {
        match self {
            TruncatedStat::NegInf => -1,
            TruncatedStat::Finite(_) => 0,
            TruncatedStat::PosInf => 1,
        }
    }
}

impl PartialEq for TruncatedStat {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for TruncatedStat {}

impl PartialOrd for TruncatedStat {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for TruncatedStat {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (TruncatedStat::Finite(a), TruncatedStat::Finite(b)) => a.total_cmp(b),
            _ => self.tag().cmp(&other.tag()),
        }
    }
}

/// Rank test with ties favoring acceptance: the observed value is kept iff
/// 1 + #{simulations strictly below it} <= ceil((1 - c)(B + 1)).
#[must_use]
pub fn rank_quantile_accept(sims: &[TruncatedStat], observed: TruncatedStat, c: f64) -> bool {
    let rank = 1 + sims.iter().filter(|s| **s < observed).count();
    let k = ceil_snapped((1.0 - c) * (sims.len() as f64 + 1.0));
    rank <= k
}

/// How long each simulation may run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Truncation {
    /// Cap at factor * tau; censored simulations rank above everything
    /// (the default, factor 4).
    MultipleOfTau { factor: usize },
    /// Fixed cap with the same censoring convention.
    Fixed { cap: usize },
    /// No statistical truncation, for detectors that stop almost surely:
    /// a simulation still running at the safety horizon ranks below
    /// everything and raises a flag.
    Unbounded { horizon: usize },
}

pub const DEFAULT_UNBOUNDED_HORIZON: usize = 1_000_000;

impl Truncation {
    /// (cap, unbounded?) for an observed stopping time.
    #[must_use]
    pub fn cap_for(&self, tau: usize) -> (usize, bool) {
        match self {
            Truncation::MultipleOfTau { factor } => (factor * tau, false),
            Truncation::Fixed { cap } => (*cap, false),
            Truncation::Unbounded { horizon } => (*horizon, true),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdaptiveConfig {
    pub alpha: f64,
    /// Failure probability budget of the post-parameter confidence sequence.
    pub beta: f64,
    /// Failure probability budget of the pre-parameter confidence interval.
    pub gamma: f64,
    /// Simulations per candidate.
    pub b_sims: usize,
    pub truncation: Truncation,
    pub master_seed: u64,
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        AdaptiveConfig {
            alpha: 0.05,
            beta: 0.0,
            gamma: 0.0,
            b_sims: 100,
            truncation: Truncation::MultipleOfTau { factor: 4 },
            master_seed: 0,
        }
    }
}

/// Conditions under which a candidate was kept without (or despite) the
/// simulation evidence, or where a simulation hit the safety horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "flag", rename_all = "snake_case")]
pub enum AcceptFlag {
    /// The post confidence sequence missed the post space entirely.
    EmptyPostSet { t: usize },
    /// The pre confidence interval missed the pre space entirely.
    EmptyPreSet { t: usize },
    /// No pre-change data (t = 1) in the fully composite construction.
    UnboundedPre { t: usize },
    /// The post set has no finite upper endpoint, so no master rate exists.
    UnboundedPost { t: usize },
    /// A simulation was still running at the safety horizon.
    HorizonCensored { t: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdaptiveOutcome {
    /// Accepted candidate times, ascending.
    pub accepted: Vec<usize>,
    pub flags: Vec<AcceptFlag>,
}

fn check_common(
    data: &[f64],
    tau: usize,
    survival: &SurvivalCurve,
    cfg: &AdaptiveConfig,
) -> Result<(), LocalizeError> {
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(LocalizeError::BadInput(format!("alpha must be in (0,1), got {}", cfg.alpha)));
    }
    if cfg.b_sims == 0 {
        return Err(LocalizeError::BadInput("need at least one simulation".into()));
    }
    if tau == 0 || tau > data.len() {
        return Err(LocalizeError::BadInput(format!(
            "need 1 <= tau <= data length, got tau={tau} len={}",
            data.len()
        )));
    }
    if survival.len() < tau {
        return Err(LocalizeError::BadInput(format!(
            "survival curve of length {} is shorter than tau = {tau}",
            survival.len()
        )));
    }
    Ok(())
}

fn survival_at(survival: &SurvivalCurve, t: usize) -> Result<f64, LocalizeError> {
    let r = survival.at(t);
    if r <= 0.0 {
        return Err(LocalizeError::ZeroSurvival { t });
    }
    Ok(r)
}

/// Smallest-index argmin of cum[j-1] over j = 1..=n: the change-time
/// estimate maximizing the suffix log likelihood ratio.
fn t_hat_from_cumsum(cum: &[f64], n: usize) -> usize {
    let mut best = 1usize;
    for j in 2..=n {
        if cum[j - 1] < cum[best - 1] {
            best = j;
        }
    }
    best
}

// ---------------------------------------------------------------------------
// Fully known pre and post distributions
// ---------------------------------------------------------------------------

/// Confidence set for the change time with known pre and post distributions:
/// for each t, B detector runs are simulated with the change planted at t,
/// the localization statistic is recomputed on each simulated prefix, and t
/// survives a rank test at level alpha * r_t.
pub fn adaptive_set_known(
    pre: &Model,
    post: &Model,
    detector: &DetectorSpec,
    data: &[f64],
    tau: usize,
    survival: &SurvivalCurve,
    cfg: &AdaptiveConfig,
) -> Result<AdaptiveOutcome, LocalizeError> {
    check_common(data, tau, survival, cfg)?;
    detector.validate()?;
    pre.validate()?;
    post.validate()?;
    let (cap, unbounded) = cfg.truncation.cap_for(tau);
    let cum_obs = known_lr_cumsum(pre, post, &data[..tau])?;
    let t_hat_obs = t_hat_from_cumsum(&cum_obs, tau);

    let per_t: Vec<(bool, Vec<AcceptFlag>)> = (1..=tau)
        .into_par_iter()
        .map(|t| -> Result<(bool, Vec<AcceptFlag>), LocalizeError> {
            let r = survival_at(survival, t)?;
            let observed = TruncatedStat::from_log(cum_obs[t - 1] - cum_obs[t_hat_obs - 1]);
            let mut flags = Vec::new();
            let mut sims = Vec::with_capacity(cfg.b_sims);
            for j in 0..cfg.b_sims as u64 {
                let rng = stream(cfg.master_seed, "adaptive", j);
                let mut sampler = PathSampler::new(pre, post, ChangeIndex::At(t), rng);
                let (outcome, path) = run_until_stop(detector, cap, |_| sampler.draw())?;
                let stat = match outcome {
                    StopOutcome::Censored(_) if unbounded => {
                        flags.push(AcceptFlag::HorizonCensored { t });
                        TruncatedStat::NegInf
                    }
                    StopOutcome::Censored(_) => TruncatedStat::PosInf,
                    StopOutcome::StoppedAt(tp) if tp < t => TruncatedStat::NegInf,
                    StopOutcome::StoppedAt(tp) => {
                        let cum = known_lr_cumsum(pre, post, &path[..tp])?;
                        let th = t_hat_from_cumsum(&cum, tp);
                        TruncatedStat::from_log(cum[t - 1] - cum[th - 1])
                    }
                };
                sims.push(stat);
            }
            Ok((rank_quantile_accept(&sims, observed, cfg.alpha * r), flags))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut accepted = Vec::new();
    let mut flags = Vec::new();
    for (idx, (acc, fl)) in per_t.into_iter().enumerate() {
        if acc {
            accepted.push(idx + 1);
        }
        flags.extend(fl);
    }
    Ok(AdaptiveOutcome { accepted, flags })
}

// ---------------------------------------------------------------------------
// Shared Gaussian noise and bracket machinery
// ---------------------------------------------------------------------------

/// Lazily extended shared noise path for one simulation index; both bracket
/// corners and the bound evaluation read the same realization.
struct EpsBuffer {
    rng: Prng,
    normal: Normal<f64>,
    buf: Vec<f64>,
}

impl EpsBuffer {
    fn new(master: u64, j: u64, sd: f64) -> Self {
        EpsBuffer {
            rng: stream(master, "adaptive", j),
            normal: Normal::new(0.0, sd).expect("positive sd"),
            buf: Vec::new(),
        }
    }

    /// 0-based noise value, extending the path as needed.
    fn get(&mut self, idx: usize) -> f64 {
        while self.buf.len() <= idx {
            let v = self.normal.sample(&mut self.rng);
            self.buf.push(v);
        }
        self.buf[idx]
    }

    fn prefix(&mut self, len: usize) -> &[f64] {
        self.get(len - 1);
        &self.buf[..len]
    }
}

/// The deterministic noise path simulation j would use, for external
/// verification of brackets and bounds.
#[must_use]
pub fn gaussian_noise_path(master_seed: u64, j: u64, sd: f64, len: usize) -> Vec<f64> {
    let mut eps = EpsBuffer::new(master_seed, j, sd);
    eps.prefix(len).to_vec()
}

fn run_corner(
    detector: &DetectorSpec,
    eps: &mut EpsBuffer,
    t: usize,
    pre_theta: f64,
    post_theta: f64,
    cap: usize,
) -> Result<StopOutcome, DetectorError> {
    let (out, _) = run_until_stop(detector, cap, |i| {
        let base = eps.get(i - 1);
        if i < t {
            pre_theta + base
        } else {
            post_theta + base
        }
    })?;
    Ok(out)
}

enum BracketCase {
    AllEarly,
    Censored,
    Finite { t_lo: usize, t_hi: usize },
}

fn classify_bracket(t: usize, t1: StopOutcome, t2: StopOutcome) -> BracketCase {
    match t2 {
        StopOutcome::Censored(_) => BracketCase::Censored,
        StopOutcome::StoppedAt(s2) if s2 < t => BracketCase::AllEarly,
        StopOutcome::StoppedAt(s2) => {
            let s1 = t1.stopped().unwrap_or(s2).min(s2);
            BracketCase::Finite { t_lo: t.max(s1), t_hi: s2 }
        }
    }
}

// ---------------------------------------------------------------------------
// Closed-form Gaussian bounds over a parameter rectangle
// ---------------------------------------------------------------------------

/// Upper bound on the known-pre profile statistic over every path
/// y = theta0 + eps + delta * 1(n >= t) with delta in [delta_lo, delta_hi]
/// and truncation point t' in [t_lo, t_hi]. For each split i the statistic
/// is a concave quadratic in delta, maximized at its clamped vertex; the
/// pre segment contributes raw squares (the pre parameter is fixed), the
/// profiled segments centered squares.
#[must_use]
pub fn sup_bound_gaussian_known_pre(
    eps: &[f64],
    sd: f64,
    t: usize,
    t_lo: usize,
    t_hi: usize,
    delta_lo: f64,
    delta_hi: f64,
) -> f64 {
    assert!(t >= 1 && t_lo >= t && t_lo <= t_hi && t_hi <= eps.len(), "bad bound window");
    assert!(delta_lo <= delta_hi, "empty delta interval");
    let scale = 1.0 / (2.0 * sd * sd);
    let n = t_hi;
    let mut e1 = vec![0.0; n + 1];
    let mut e2 = vec![0.0; n + 1];
    for i in 0..n {
        e1[i + 1] = e1[i] + eps[i];
        e2[i + 1] = e2[i] + eps[i] * eps[i];
    }
    // centered sum of squares over the 1-based inclusive segment [a, b]
    let css = |a: usize, b: usize| -> f64 {
        if a > b {
            return 0.0;
        }
        let m = (b - a + 1) as f64;
        let s = e1[b] - e1[a - 1];
        ((e2[b] - e2[a - 1]) - s * s / m).max(0.0)
    };
    let vertex = |a1: f64, a2: f64| (-a1 / (2.0 * a2)).clamp(delta_lo, delta_hi);
    let mut best = 0.0f64;
    for tp in t_lo..=t_hi {
        let q = (tp - t + 1) as f64;
        let d = e2[t - 1] + css(t, tp);
        let mut min_a = d; // split at t itself
        for i in 1..t {
            let m = (tp - i + 1) as f64;
            let ti = (t - i) as f64;
            let seg_mean = (e1[tp] - e1[i - 1]) / m;
            let a2 = ti * q / m;
            let a1 = -2.0 * ((e1[t - 1] - e1[i - 1]) - ti * seg_mean);
            let base = e2[i - 1] + css(i, tp);
            let ds = vertex(a1, a2);
            min_a = min_a.min(base + a1 * ds + a2 * ds * ds);
        }
        for i in (t + 1)..=tp {
            let a2 = (i - t) as f64;
            let a1 = 2.0 * (e1[i - 1] - e1[t - 1]);
            let base = e2[i - 1] + css(i, tp);
            let ds = vertex(a1, a2);
            min_a = min_a.min(base + a1 * ds + a2 * ds * ds);
        }
        best = best.max(scale * (d - min_a));
    }
    best
}

/// Upper bound on the doubly profiled statistic over every path
/// y = theta + eps + delta * 1(n >= t), delta = theta' - theta in
/// [delta_lo, delta_hi], t' in [t_lo, t_hi]. Both segments are profiled, so
/// only the mean shift delta survives in the quadratics; requires t >= 2.
#[must_use]
pub fn sup_bound_gaussian_profile_both(
    eps: &[f64],
    sd: f64,
    t: usize,
    t_lo: usize,
    t_hi: usize,
    delta_lo: f64,
    delta_hi: f64,
) -> f64 {
    assert!(t >= 2 && t_lo >= t && t_lo <= t_hi && t_hi <= eps.len(), "bad bound window");
    assert!(delta_lo <= delta_hi, "empty delta interval");
    let scale = 1.0 / (2.0 * sd * sd);
    let n = t_hi;
    let mut e1 = vec![0.0; n + 1];
    let mut e2 = vec![0.0; n + 1];
    for i in 0..n {
        e1[i + 1] = e1[i] + eps[i];
        e2[i + 1] = e2[i] + eps[i] * eps[i];
    }
    let css = |a: usize, b: usize| -> f64 {
        if a > b {
            return 0.0;
        }
        let m = (b - a + 1) as f64;
        let s = e1[b] - e1[a - 1];
        ((e2[b] - e2[a - 1]) - s * s / m).max(0.0)
    };
    let vertex = |a1: f64, a2: f64| (-a1 / (2.0 * a2)).clamp(delta_lo, delta_hi);
    let mut best = 0.0f64;
    for tp in t_lo..=t_hi {
        let q = (tp - t + 1) as f64;
        let d = css(1, t - 1) + css(t, tp);
        let mut min_a = d;
        for i in 1..t {
            let m = (tp - i + 1) as f64;
            let ti = (t - i) as f64;
            let seg_mean = (e1[tp] - e1[i - 1]) / m;
            let a2 = ti * q / m;
            let a1 = -2.0 * ((e1[t - 1] - e1[i - 1]) - ti * seg_mean);
            let base = css(1, i - 1) + css(i, tp);
            let ds = vertex(a1, a2);
            min_a = min_a.min(base + a1 * ds + a2 * ds * ds);
        }
        for i in (t + 1)..=tp {
            let im1 = (i - 1) as f64;
            let a2 = (t - 1) as f64 * (i - t) as f64 / im1;
            let a1 = -2.0 * (e1[t - 1] - (t - 1) as f64 * e1[i - 1] / im1);
            let base = css(1, i - 1) + css(i, tp);
            let ds = vertex(a1, a2);
            min_a = min_a.min(base + a1 * ds + a2 * ds * ds);
        }
        best = best.max(scale * (d - min_a));
    }
    best
}

// ---------------------------------------------------------------------------
// Poisson thinning with exact enumeration over break points
// ---------------------------------------------------------------------------

/// Master Poisson path at the dominating rate plus one uniform mark per
/// event; thinning the marks reproduces any smaller rate, and the statistic
/// is piecewise constant in the rate with breaks exactly at lambda * mark.
fn poisson_master(master: u64, j: u64, lambda: f64, len: usize) -> (Vec<usize>, Vec<Vec<f64>>) {
    let mut rng = stream(master, "adaptive", j);
    let pois = Poisson::new(lambda).expect("positive master rate");
    let mut counts = Vec::with_capacity(len);
    let mut marks = Vec::with_capacity(len);
    for _ in 0..len {
        let c = pois.sample(&mut rng) as usize;
        let mut u = Vec::with_capacity(c);
        for _ in 0..c {
            u.push(rng.random::<f64>());
        }
        counts.push(c);
        marks.push(u);
    }
    (counts, marks)
}

/// Thinned count at 1-based position i of a path changing rate at t.
fn thin_one(
    counts: &[usize],
    marks: &[Vec<f64>],
    i: usize,
    t: usize,
    pre_rate: f64,
    post_rate: f64,
    lambda: f64,
) -> f64 {
    let rate = if i < t { pre_rate } else { post_rate };
    let ratio = (rate / lambda).clamp(0.0, 1.0);
    poisson_thin(counts[i - 1], &marks[i - 1], ratio).expect("ratio in [0,1]") as f64
}

/// The thinned path is piecewise constant in the rate, changing only at the
/// break points. Both endpoints plus one interior point per gap between
/// consecutive break points together visit every distinct path; midpoints
/// keep the choice away from the float-equality boundary.
fn enriched_candidates(mut pts: Vec<f64>, lo: f64, hi: f64) -> Vec<f64> {
    pts.retain(|&p| p >= lo && p <= hi);
    pts.push(lo);
    pts.push(hi);
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let mut out = vec![lo, hi];
    for w in pts.windows(2) {
        out.push((w[0] + w[1]) / 2.0);
    }
    out.sort_by(f64::total_cmp);
    out.dedup();
    out
}

// ---------------------------------------------------------------------------
// Known pre, composite post
// ---------------------------------------------------------------------------

/// Confidence set for the change time with a known pre parameter and a
/// composite post class. Per candidate t the post parameter is bounded by a
/// confidence sequence at failure probability beta * r_t, each simulation is
/// summarized by a statistic dominating every post parameter in that set,
/// and t survives a rank test at level alpha * r_t. Coverage cost: alpha
/// plus beta.
pub fn adaptive_set_comp_post(
    family: &MeanFamily,
    theta0: f64,
    theta1_space: Interval,
    detector: &DetectorSpec,
    data: &[f64],
    tau: usize,
    survival: &SurvivalCurve,
    cfg: &AdaptiveConfig,
) -> Result<AdaptiveOutcome, LocalizeError> {
    check_common(data, tau, survival, cfg)?;
    detector.validate()?;
    if !detector.post_upward_monotone() {
        return Err(LocalizeError::Detector(DetectorError::Unsupported(
            "composite simulation needs an upward-monotone detector",
        )));
    }
    if !(cfg.beta > 0.0) {
        return Err(LocalizeError::BadInput("beta must be positive".into()));
    }
    let (cap, unbounded) = cfg.truncation.cap_for(tau);

    let per_t: Vec<(bool, Vec<AcceptFlag>)> = (1..=tau)
        .into_par_iter()
        .map(|t| -> Result<(bool, Vec<AcceptFlag>), LocalizeError> {
            let r = survival_at(survival, t)?;
            let mut flags = Vec::new();
            let s_post =
                confidence_sequence(family, &data[t - 1..tau], cfg.beta * r)?.intersect(&theta1_space);
            if s_post.is_empty() {
                flags.push(AcceptFlag::EmptyPostSet { t });
                return Ok((true, flags));
            }
            if !s_post.hi.is_finite() {
                flags.push(AcceptFlag::UnboundedPost { t });
                return Ok((true, flags));
            }
            let observed =
                TruncatedStat::from_log(glr_known_pre(family, theta0, &data[..tau], t));
            let mut sims = Vec::with_capacity(cfg.b_sims);
            for j in 0..cfg.b_sims as u64 {
                let stat = match family {
                    MeanFamily::Gaussian { sd } => {
                        let mut eps = EpsBuffer::new(cfg.master_seed, j, *sd);
                        let t1 = run_corner(detector, &mut eps, t, theta0, s_post.hi, cap)?;
                        let t2 = run_corner(detector, &mut eps, t, theta0, s_post.lo, cap)?;
                        match classify_bracket(t, t1, t2) {
                            BracketCase::AllEarly => TruncatedStat::NegInf,
                            BracketCase::Censored => {
                                if unbounded {
                                    flags.push(AcceptFlag::HorizonCensored { t });
                                    TruncatedStat::NegInf
                                } else {
                                    TruncatedStat::PosInf
                                }
                            }
                            BracketCase::Finite { t_lo, t_hi } => {
                                let e = eps.prefix(t_hi);
                                TruncatedStat::from_log(sup_bound_gaussian_known_pre(
                                    e,
                                    *sd,
                                    t,
                                    t_lo,
                                    t_hi,
                                    s_post.lo - theta0,
                                    s_post.hi - theta0,
                                ))
                            }
                        }
                    }
                    MeanFamily::Poisson => {
                        if !(theta0 > 0.0) {
                            return Err(LocalizeError::BadInput(
                                "Poisson pre rate must be positive".into(),
                            ));
                        }
                        let (stat, horizon_hit) = poisson_sup_known_pre(
                            cfg.master_seed,
                            j,
                            detector,
                            theta0,
                            s_post,
                            t,
                            cap,
                            unbounded,
                        )?;
                        if horizon_hit {
                            flags.push(AcceptFlag::HorizonCensored { t });
                        }
                        stat
                    }
                };
                sims.push(stat);
            }
            Ok((rank_quantile_accept(&sims, observed, cfg.alpha * r), flags))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut accepted = Vec::new();
    let mut flags = Vec::new();
    for (idx, (acc, fl)) in per_t.into_iter().enumerate() {
        if acc {
            accepted.push(idx + 1);
        }
        flags.extend(fl);
    }
    Ok(AdaptiveOutcome { accepted, flags })
}

/// Exact supremum of the known-pre statistic over the post set for one
/// Poisson simulation: evaluates the statistic on one thinned path per
/// constancy piece of the post rate, growing the master path until all
/// evaluated paths stop or the cap is hit.
#[allow(clippy::too_many_arguments)]
fn poisson_sup_known_pre(
    master: u64,
    j: u64,
    detector: &DetectorSpec,
    theta0: f64,
    s_post: Interval,
    t: usize,
    cap: usize,
    unbounded: bool,
) -> Result<(TruncatedStat, bool), LocalizeError> {
    let lambda = theta0.max(s_post.hi);
    let mut len = if unbounded { (2 * t).max(64).min(cap) } else { cap };
    loop {
        // redrawing from the same stream reproduces the shorter prefix
        let (counts, marks) = poisson_master(master, j, lambda, len);
        let mut cand = Vec::new();
        for n in t..=len {
            for &u in &marks[n - 1] {
                cand.push(lambda * u);
            }
        }
        let points = enriched_candidates(cand, s_post.lo, s_post.hi);
        let mut best = TruncatedStat::NegInf;
        let mut blocked = false;
        for &theta in &points {
            let (outcome, y) = run_until_stop(detector, len, |i| {
                thin_one(&counts, &marks, i, t, theta0, theta, lambda)
            })?;
            match outcome {
                StopOutcome::Censored(_) => blocked = true,
                StopOutcome::StoppedAt(tp) if tp < t => {}
                StopOutcome::StoppedAt(_) => {
                    let v = glr_known_pre(&MeanFamily::Poisson, theta0, &y, t);
                    best = best.max(TruncatedStat::from_log(v));
                }
            }
        }
        if blocked {
            if !unbounded {
                return Ok((TruncatedStat::PosInf, false));
            }
            if len >= cap {
                // horizon: still-running paths rank below everything
                return Ok((best, true));
            }
            len = (len * 2).min(cap);
            continue;
        }
        return Ok((best, false));
    }
}

// ---------------------------------------------------------------------------
// Composite pre and post
// ---------------------------------------------------------------------------

/// Confidence set for the change time with composite pre and post classes.
/// Per candidate t >= 2 the pre parameter is bounded by a fixed-sample
/// interval on the data before t (failure probability gamma * r_t), the
/// post parameter by a confidence sequence from t (beta * r_t), and each
/// simulation is summarized by a statistic dominating the whole parameter
/// rectangle. t = 1 is kept unconditionally and flagged: there is no
/// pre-change data to bound the pre parameter. Coverage cost: alpha + beta
/// + gamma. The survival curve must be calibrated under the least favorable
/// pre distribution.
pub fn adaptive_set_comp(
    family: &MeanFamily,
    theta0_space: Interval,
    theta1_space: Interval,
    detector: &DetectorSpec,
    data: &[f64],
    tau: usize,
    survival: &SurvivalCurve,
    cfg: &AdaptiveConfig,
) -> Result<AdaptiveOutcome, LocalizeError> {
    check_common(data, tau, survival, cfg)?;
    detector.validate()?;
    if !detector.post_upward_monotone() {
        return Err(LocalizeError::Detector(DetectorError::Unsupported(
            "composite simulation needs an upward-monotone detector",
        )));
    }
    if !(cfg.beta > 0.0 && cfg.gamma > 0.0) {
        return Err(LocalizeError::BadInput("beta and gamma must be positive".into()));
    }
    let (cap, unbounded) = cfg.truncation.cap_for(tau);

    let per_t: Vec<(bool, Vec<AcceptFlag>)> = (1..=tau)
        .into_par_iter()
        .map(|t| -> Result<(bool, Vec<AcceptFlag>), LocalizeError> {
            let r = survival_at(survival, t)?;
            let mut flags = Vec::new();
            if t == 1 {
                flags.push(AcceptFlag::UnboundedPre { t });
                return Ok((true, flags));
            }
            let s_pre = fixed_ci(family, &data[..t - 1], cfg.gamma * r)?.intersect(&theta0_space);
            if s_pre.is_empty() {
                flags.push(AcceptFlag::EmptyPreSet { t });
                return Ok((true, flags));
            }
            let s_post =
                confidence_sequence(family, &data[t - 1..tau], cfg.beta * r)?.intersect(&theta1_space);
            if s_post.is_empty() {
                flags.push(AcceptFlag::EmptyPostSet { t });
                return Ok((true, flags));
            }
            if !s_post.hi.is_finite() || !s_pre.hi.is_finite() || !s_pre.lo.is_finite() {
                flags.push(AcceptFlag::UnboundedPost { t });
                return Ok((true, flags));
            }
            let observed = TruncatedStat::from_log(glr_profile_both(family, &data[..tau], t));
            let delta_lo = s_post.lo - s_pre.hi;
            let delta_hi = s_post.hi - s_pre.lo;
            let mut sims = Vec::with_capacity(cfg.b_sims);
            for j in 0..cfg.b_sims as u64 {
                let stat = match family {
                    MeanFamily::Gaussian { sd } => {
                        let mut eps = EpsBuffer::new(cfg.master_seed, j, *sd);
                        let t1 = run_corner(detector, &mut eps, t, s_pre.hi, s_post.hi, cap)?;
                        let t2 = run_corner(detector, &mut eps, t, s_pre.lo, s_post.lo, cap)?;
                        match classify_bracket(t, t1, t2) {
                            BracketCase::AllEarly => TruncatedStat::NegInf,
                            BracketCase::Censored => {
                                if unbounded {
                                    flags.push(AcceptFlag::HorizonCensored { t });
                                    TruncatedStat::NegInf
                                } else {
                                    TruncatedStat::PosInf
                                }
                            }
                            BracketCase::Finite { t_lo, t_hi } => {
                                let e = eps.prefix(t_hi);
                                TruncatedStat::from_log(sup_bound_gaussian_profile_both(
                                    e, *sd, t, t_lo, t_hi, delta_lo, delta_hi,
                                ))
                            }
                        }
                    }
                    MeanFamily::Poisson => {
                        let (stat, horizon_hit) = poisson_sup_profile_both(
                            cfg.master_seed,
                            j,
                            detector,
                            s_pre,
                            s_post,
                            t,
                            cap,
                            unbounded,
                        )?;
                        if horizon_hit {
                            flags.push(AcceptFlag::HorizonCensored { t });
                        }
                        stat
                    }
                };
                sims.push(stat);
            }
            Ok((rank_quantile_accept(&sims, observed, cfg.alpha * r), flags))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut accepted = Vec::new();
    let mut flags = Vec::new();
    for (idx, (acc, fl)) in per_t.into_iter().enumerate() {
        if acc {
            accepted.push(idx + 1);
        }
        flags.extend(fl);
    }
    Ok(AdaptiveOutcome { accepted, flags })
}

/// Exact supremum of the doubly profiled statistic over the pre x post
/// rectangle for one Poisson simulation: thinning break points before t
/// enumerate the pre-rate pieces, those from t the post-rate pieces, and
/// one path per pair of pieces is evaluated.
#[allow(clippy::too_many_arguments)]
fn poisson_sup_profile_both(
    master: u64,
    j: u64,
    detector: &DetectorSpec,
    s_pre: Interval,
    s_post: Interval,
    t: usize,
    cap: usize,
    unbounded: bool,
) -> Result<(TruncatedStat, bool), LocalizeError> {
    let lambda = s_pre.hi.max(s_post.hi);
    if !(lambda > 0.0) {
        return Err(LocalizeError::BadInput("degenerate zero-rate parameter sets".into()));
    }
    let mut len = if unbounded { (2 * t).max(64).min(cap) } else { cap };
    loop {
        let (counts, marks) = poisson_master(master, j, lambda, len);
        let mut pre_cand = Vec::new();
        for n in 1..t {
            for &u in &marks[n - 1] {
                pre_cand.push(lambda * u);
            }
        }
        let mut post_cand = Vec::new();
        for n in t..=len {
            for &u in &marks[n - 1] {
                post_cand.push(lambda * u);
            }
        }
        let pre_points = enriched_candidates(pre_cand, s_pre.lo, s_pre.hi);
        let post_points = enriched_candidates(post_cand, s_post.lo, s_post.hi);
        let mut best = TruncatedStat::NegInf;
        let mut blocked = false;
        for &ta in &pre_points {
            for &tb in &post_points {
                let (outcome, y) = run_until_stop(detector, len, |i| {
                    thin_one(&counts, &marks, i, t, ta, tb, lambda)
                })?;
                match outcome {
                    StopOutcome::Censored(_) => blocked = true,
                    StopOutcome::StoppedAt(tp) if tp < t => {}
                    StopOutcome::StoppedAt(_) => {
                        let v = glr_profile_both(&MeanFamily::Poisson, &y, t);
                        best = best.max(TruncatedStat::from_log(v));
                    }
                }
            }
        }
        if blocked {
            if !unbounded {
                return Ok((TruncatedStat::PosInf, false));
            }
            if len >= cap {
                return Ok((best, true));
            }
            len = (len * 2).min(cap);
            continue;
        }
        return Ok((best, false));
    }
}

// ---------------------------------------------------------------------------
// Grid alternative (Gaussian)
// ---------------------------------------------------------------------------

/// Grid-search alternative to the composite constructions: candidate t is
/// kept iff the rank test at level alpha * r_t accepts under at least one
/// (pre, post) mean pair from the grids, each pair simulated with fully
/// known parameters on the shared noise. A single pair reduces exactly to
/// the known-parameters construction.
#[allow(clippy::too_many_arguments)]
pub fn adaptive_set_grid(
    sd: f64,
    pre_grid: &[f64],
    post_grid: &[f64],
    detector: &DetectorSpec,
    data: &[f64],
    tau: usize,
    survival: &SurvivalCurve,
    cfg: &AdaptiveConfig,
) -> Result<AdaptiveOutcome, LocalizeError> {
    check_common(data, tau, survival, cfg)?;
    detector.validate()?;
    if pre_grid.is_empty() || post_grid.is_empty() {
        return Err(LocalizeError::BadInput("empty parameter grid".into()));
    }
    let (cap, unbounded) = cfg.truncation.cap_for(tau);

    // per-pair cumulative log likelihood ratios of the observed data
    let pair_cums: Vec<(f64, f64, Vec<f64>, usize)> = pre_grid
        .iter()
        .flat_map(|&g0| post_grid.iter().map(move |&g1| (g0, g1)))
        .map(|(g0, g1)| {
            let mut cum = Vec::with_capacity(tau + 1);
            cum.push(0.0);
            let mut acc = 0.0;
            for &x in &data[..tau] {
                acc += (g1 - g0) / (sd * sd) * (x - (g0 + g1) / 2.0);
                cum.push(acc);
            }
            let th = t_hat_from_cumsum(&cum, tau);
            (g0, g1, cum, th)
        })
        .collect();

    let per_t: Vec<(bool, Vec<AcceptFlag>)> = (1..=tau)
        .into_par_iter()
        .map(|t| -> Result<(bool, Vec<AcceptFlag>), LocalizeError> {
            let r = survival_at(survival, t)?;
            let mut flags = Vec::new();
            let mut any = false;
            for (g0, g1, cum_obs, th_obs) in &pair_cums {
                let observed = TruncatedStat::from_log(cum_obs[t - 1] - cum_obs[th_obs - 1]);
                let mut sims = Vec::with_capacity(cfg.b_sims);
                for j in 0..cfg.b_sims as u64 {
                    let mut eps = EpsBuffer::new(cfg.master_seed, j, sd);
                    let (outcome, path) = run_until_stop(detector, cap, |i| {
                        let base = eps.get(i - 1);
                        if i < t {
                            g0 + base
                        } else {
                            g1 + base
                        }
                    })?;
                    let stat = match outcome {
                        StopOutcome::Censored(_) if unbounded => {
                            flags.push(AcceptFlag::HorizonCensored { t });
                            TruncatedStat::NegInf
                        }
                        StopOutcome::Censored(_) => TruncatedStat::PosInf,
                        StopOutcome::StoppedAt(tp) if tp < t => TruncatedStat::NegInf,
                        StopOutcome::StoppedAt(tp) => {
                            let mut cum = Vec::with_capacity(tp + 1);
                            cum.push(0.0);
                            let mut acc = 0.0;
                            for &x in &path[..tp] {
                                acc += (g1 - g0) / (sd * sd) * (x - (g0 + g1) / 2.0);
                                cum.push(acc);
                            }
                            let th = t_hat_from_cumsum(&cum, tp);
                            TruncatedStat::from_log(cum[t - 1] - cum[th - 1])
                        }
                    };
                    sims.push(stat);
                }
                if rank_quantile_accept(&sims, observed, cfg.alpha * r) {
                    any = true;
                    break;
                }
            }
            Ok((any, flags))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut accepted = Vec::new();
    let mut flags = Vec::new();
    for (idx, (acc, fl)) in per_t.into_iter().enumerate() {
        if acc {
            accepted.push(idx + 1);
        }
        flags.extend(fl);
    }
    Ok(AdaptiveOutcome { accepted, flags })
}
