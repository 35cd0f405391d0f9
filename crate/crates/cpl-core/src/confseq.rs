//! Confidence intervals and time-uniform confidence sequences for the mean
//! parameter of the supported one-parameter families, plus the union
//! construction that turns an accepted set of candidate change times into
//! confidence sets for the pre- and post-change parameters.

use crate::detectors::MeanFamily;
use crate::survival::SurvivalCurve;
use crate::util::{golden_section_min, ln_gamma, mean, normal_quantile, scan_and_bisect};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq)]
pub enum ConfSeqError {
    EmptyData,
    InvalidLevel(f64),
    Unsupported(&'static str),
}

impl std::fmt::Display for ConfSeqError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConfSeqError::EmptyData => write!(f, "confidence set needs at least one observation"),
            ConfSeqError::InvalidLevel(b) => write!(f, "failure probability must be positive, got {b}"),
            ConfSeqError::Unsupported(s) => write!(f, "unsupported: {s}"),
        }
    }
}

impl std::error::Error for ConfSeqError {}

/// Closed interval [lo, hi]; lo > hi encodes the empty set, and infinite
/// endpoints encode half-lines or the whole line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const EMPTY: Interval = Interval { lo: 1.0, hi: 0.0 };

    #[must_use]
    pub fn new(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }

    #[must_use]
    pub fn all() -> Self {
        Interval { lo: f64::NEG_INFINITY, hi: f64::INFINITY }
    }

    #[must_use]
    pub fn is_empty(&self) -> bool {
        self.lo > self.hi
    }

    #[must_use]
    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    #[must_use]
    pub fn intersect(&self, other: &Interval) -> Interval {
        Interval { lo: self.lo.max(other.lo), hi: self.hi.min(other.hi) }
    }

    #[must_use]
    pub fn width(&self) -> f64 {
        if self.is_empty() { 0.0 } else { self.hi - self.lo }
    }
}

/// Merge a collection of intervals into disjoint sorted intervals
/// (overlapping or touching pieces coalesce). Empty members are dropped.
#[must_use]
pub fn merge_union(mut intervals: Vec<Interval>) -> Vec<Interval> {
    intervals.retain(|iv| !iv.is_empty());
    intervals.sort_by(|a, b| a.lo.partial_cmp(&b.lo).expect("non-NaN interval"));
    let mut out: Vec<Interval> = Vec::with_capacity(intervals.len());
    for iv in intervals {
        match out.last_mut() {
            Some(last) if iv.lo <= last.hi => last.hi = last.hi.max(iv.hi),
            _ => out.push(iv),
        }
    }
    out
}

fn check_level(beta: f64) -> Result<f64, ConfSeqError> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(ConfSeqError::InvalidLevel(beta));
    }
    // failure probabilities above 1 only make the set smaller; clamp so the
    // closed forms stay in their intended range
    Ok(beta.min(1.0))
}

/// Time-uniform confidence sequence for a unit-variance Gaussian mean:
/// sample mean plus/minus sqrt((ln ln(2n) + 0.72 ln(10.4 / beta)) / n),
/// valid simultaneously over all n with failure probability beta.
pub fn gaussian_cs(data: &[f64], sd: f64, beta: f64) -> Result<Interval, ConfSeqError> {
    let beta = check_level(beta)?;
    if data.is_empty() {
        return Err(ConfSeqError::EmptyData);
    }
    let n = data.len() as f64;
    // the iterated logarithm dips negative for n = 1; the bracket stays
    // positive in every supported regime but clamp defensively
    let inner = ((2.0 * n).ln().ln() + 0.72 * (10.4 / beta).ln()).max(0.0);
    let radius = sd * (inner / n).sqrt();
    let m = mean(data);
    Ok(Interval::new(m - radius, m + radius))
}

/// Fixed-sample z-interval for a Gaussian mean with known sd.
pub fn gaussian_ci(data: &[f64], sd: f64, gamma: f64) -> Result<Interval, ConfSeqError> {
    let gamma = check_level(gamma)?;
    if data.is_empty() {
        return Err(ConfSeqError::EmptyData);
    }
    let n = data.len() as f64;
    let z = normal_quantile(1.0 - gamma / 2.0);
    let m = mean(data);
    let radius = z * sd / n.sqrt();
    Ok(Interval::new(m - radius, m + radius))
}

/// Gamma-mixture boundary for the Poisson-rate confidence sequence: the set
/// {theta > 0 : h(theta) <= 0} where, with S = sum of counts, n observations,
/// and mixing weight c = 1,
///   h(theta) = n theta - S ln theta - ln(1/beta)
///            - ln Gamma(c theta) + c theta ln c
///            + ln Gamma(S + c theta) - (S + c theta) ln(n + c).
/// The underlying mixture integral is integral_0^inf e^{-a v} v^{b-1} dv
/// = Gamma(b) / a^b.
fn poisson_h(theta: f64, n: f64, s: f64, beta: f64) -> f64 {
    let c = 1.0;
    n * theta - s * theta.ln() - (1.0 / beta).ln() - ln_gamma(c * theta)
        + c * theta * c.ln()
        + ln_gamma(s + c * theta)
        - (s + c * theta) * (n + c).ln()
}

/// Time-uniform confidence sequence for a Poisson rate. Returns the interval
/// of rates whose mixture e-process stays below 1/beta; lo = 0 or
/// hi = infinity when the respective boundary never crosses.
pub fn poisson_cs(data: &[f64], beta: f64) -> Result<Interval, ConfSeqError> {
    let beta = check_level(beta)?;
    if data.is_empty() {
        return Err(ConfSeqError::EmptyData);
    }
    let n = data.len() as f64;
    let s: f64 = data.iter().sum();
    if s < 0.0 {
        return Err(ConfSeqError::Unsupported("negative Poisson counts"));
    }
    let h = |theta: f64| poisson_h(theta, n, s, beta);
    let m = s / n;
    if s == 0.0 {
        // h reduces to theta (n - ln(n + 1)) - ln(1/beta): increasing, root
        // in closed form, lower endpoint 0
        let hi = (1.0 / beta).ln() / (n - (n + 1.0).ln());
        return Ok(Interval::new(0.0, hi.max(0.0)));
    }
    // h is decreasing then increasing around the empirical rate; locate the
    // minimum, then bisect each crossing
    let lo_bracket = 1e-6_f64.min(m * 1e-3);
    let mut hi_bracket = (3.0 * m).max(10.0);
    let (theta_min, h_min) = golden_section_min(h, lo_bracket, hi_bracket, 1e-10);
    if h_min > 0.0 {
        return Ok(Interval::EMPTY);
    }
    let lo = if h(lo_bracket) <= 0.0 {
        0.0
    } else {
        scan_and_bisect(h, lo_bracket, theta_min, 256, 1e-10).unwrap_or(lo_bracket)
    };
    // expand until the upper boundary is bracketed; an unbracketable
    // boundary (tiny beta) means the set is a half-line
    let mut expansions = 0;
    while h(hi_bracket) <= 0.0 && expansions < 60 {
        hi_bracket *= 2.0;
        expansions += 1;
    }
    let hi = if h(hi_bracket) <= 0.0 {
        f64::INFINITY
    } else {
        scan_and_bisect(h, theta_min.max(lo), hi_bracket, 256, 1e-10).unwrap_or(hi_bracket)
    };
    Ok(Interval::new(lo, hi))
}

/// Family-dispatched time-uniform confidence sequence.
pub fn confidence_sequence(
    family: &MeanFamily,
    data: &[f64],
    beta: f64,
) -> Result<Interval, ConfSeqError> {
    match family {
        MeanFamily::Gaussian { sd } => gaussian_cs(data, *sd, beta),
        MeanFamily::Poisson => poisson_cs(data, beta),
    }
}

/// Family-dispatched fixed-sample confidence interval. The Poisson side
/// reuses the time-uniform construction, which is valid (conservative) at a
/// fixed sample size.
pub fn fixed_ci(family: &MeanFamily, data: &[f64], gamma: f64) -> Result<Interval, ConfSeqError> {
    match family {
        MeanFamily::Gaussian { sd } => gaussian_ci(data, *sd, gamma),
        MeanFamily::Poisson => poisson_cs(data, gamma),
    }
}

/// Confidence sets for the pre- and post-change parameters, unioned over the
/// accepted change times.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamUnion {
    /// Disjoint sorted intervals covering the pre-change parameter.
    pub pre: Vec<Interval>,
    /// Disjoint sorted intervals covering the post-change parameter.
    pub post: Vec<Interval>,
    /// Set when the accepted set contains t = 1, which leaves no pre-change
    /// data; the pre side then falls back to the whole parameter space.
    pub pre_unbounded: bool,
}

/// Union construction over the accepted candidate set: for each accepted t,
/// the post-change parameter gets the confidence sequence on X_t..X_tau at
/// failure probability eta * r_t, the pre-change parameter the fixed-sample
/// interval on X_1..X_{t-1} at the same discounted level; both clipped to
/// their parameter spaces and merged across t.
#[allow(clippy::too_many_arguments)]
pub fn param_set_union(
    family: &MeanFamily,
    data: &[f64],
    accepted: &[usize],
    tau: usize,
    eta: f64,
    survival: &SurvivalCurve,
    theta0_space: Interval,
    theta1_space: Interval,
) -> Result<ParamUnion, ConfSeqError> {
    if eta <= 0.0 {
        return Err(ConfSeqError::InvalidLevel(eta));
    }
    let mut pre = Vec::new();
    let mut post = Vec::new();
    let mut pre_unbounded = false;
    for &t in accepted {
        assert!(t >= 1 && t <= tau && tau <= data.len(), "accepted time out of range");
        let level = eta * survival.at(t);
        let cs = confidence_sequence(family, &data[t - 1..tau], level)?;
        post.push(cs.intersect(&theta1_space));
        if t == 1 {
            pre_unbounded = true;
            pre.push(theta0_space);
        } else {
            let ci = fixed_ci(family, &data[..t - 1], level)?;
            pre.push(ci.intersect(&theta0_space));
        }
    }
    Ok(ParamUnion { pre: merge_union(pre), post: merge_union(post), pre_unbounded })
}
