//! Observation models: the distribution kinds the detectors and confidence
//! sets operate on, plus path sampling and the noise couplings used by the
//! simulation-calibrated sets.
//!
//! Support conventions: a point where the density is zero but the argument is
//! a legal observation for the kind (e.g. a uniform evaluated outside its
//! interval, mixtures with gaps) yields log-density -inf; an argument that is
//! not a legal observation at all (a non-integer count for Poisson, a value
//! outside {0,1} for Bernoulli) is a domain error. This keeps mixture sums
//! well defined while still catching category mistakes.

use crate::rng::Prng;
use crate::util;
use rand::Rng;
use rand_distr::Distribution as RandDistribution;
use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum ModelError {
    InvalidParam(String),
    /// The argument is not a legal observation for this kind.
    OutOfDomain { kind: &'static str, x: f64 },
    /// The kind is sequential and needs the previous state.
    NeedsHistory,
    BadCoupling(String),
}

impl fmt::Display for ModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelError::InvalidParam(s) => write!(f, "invalid model parameter: {s}"),
            ModelError::OutOfDomain { kind, x } => {
                write!(f, "value {x} is not a legal observation for kind {kind}")
            }
            ModelError::NeedsHistory => {
                write!(f, "sequential kind needs the previous state; use the *_given form")
            }
            ModelError::BadCoupling(s) => write!(f, "invalid coupling: {s}"),
        }
    }
}

impl std::error::Error for ModelError {}

/// Observation model kinds. Serialized as tagged JSON, e.g.
/// `{"kind":"gaussian","mean":0.0,"sd":1.0}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Model {
    Gaussian {
        mean: f64,
        sd: f64,
    },
    Poisson {
        rate: f64,
    },
    Bernoulli {
        p: f64,
    },
    Uniform {
        lo: f64,
        hi: f64,
    },
    /// Density (power+1) * (1-x)^power on [0,1]; power = 3 gives 4(1-x)^3.
    BetaLikeDensity {
        power: u32,
    },
    Cauchy {
        location: f64,
        scale: f64,
    },
    FiniteMixture {
        weights: Vec<f64>,
        components: Vec<Model>,
    },
    /// Two-state chain on {0,1}: p01 = P(1 | prev 0), p11 = P(1 | prev 1),
    /// init_p1 = P(first draw = 1).
    Markov2 {
        p01: f64,
        p11: f64,
        init_p1: f64,
    },
    Contaminated {
        base: Box<Model>,
        eps: f64,
        contaminant: Box<Model>,
    },
    /// Least favorable distribution of the eps-contamination neighborhood
    /// around N(mean0, sd) when tested against N(mean1, sd): keeps the
    /// Gaussian shape below the upper clip point and continues with the
    /// alternative density rescaled by the clip constant above it, which
    /// makes the clipped likelihood ratio an exact density ratio.
    HuberLfdPre {
        mean0: f64,
        mean1: f64,
        sd: f64,
        eps: f64,
    },
}

/// Clip constants of the two-sided contamination-robust likelihood ratio for
/// a Gaussian mean pair: ratios are clamped to [c_lo, c_hi], reached at the
/// observation cut points x_lo < x_hi.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HuberClip {
    pub c_lo: f64,
    pub c_hi: f64,
    pub x_lo: f64,
    pub x_hi: f64,
}

/// Solve for the clip constants of the eps-contamination neighborhoods around
/// N(mean0, sd) vs N(mean1, sd). The upper cut x_hi satisfies
/// Phi((x-mean0)/sd) + e^{-delta (x-m)/sd^2} (1 - Phi((x-mean1)/sd)) = 1/(1-eps)
/// (the normalization of the least favorable null density), with
/// delta = mean1 - mean0 and m the midpoint; the lower cut is its mirror
/// image, so c_lo = 1/c_hi.
pub fn huber_clip(mean0: f64, mean1: f64, sd: f64, eps: f64) -> Result<HuberClip, ModelError> {
    if !(sd.is_finite() && sd > 0.0 && mean0.is_finite() && mean1.is_finite() && mean1 > mean0) {
        return Err(ModelError::InvalidParam(format!(
            "huber pair needs mean1 > mean0 and sd > 0, got ({mean0}, {mean1}, sd={sd})"
        )));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(ModelError::InvalidParam(format!("huber eps = {eps} not in (0,1)")));
    }
    let delta = mean1 - mean0;
    let mid = 0.5 * (mean0 + mean1);
    let target = 1.0 / (1.0 - eps);
    // strictly decreasing in x: +inf at -inf, 1 - target < 0 at +inf
    let g = |x: f64| {
        util::normal_cdf((x - mean0) / sd)
            + (-delta * (x - mid) / (sd * sd)).exp() * (1.0 - util::normal_cdf((x - mean1) / sd))
            - target
    };
    let mut lo = mid;
    let mut step = sd;
    while g(lo) <= 0.0 {
        lo -= step;
        step *= 2.0;
        if step > 1e6 * sd {
            return Err(ModelError::InvalidParam(format!("huber eps = {eps} too large to solve")));
        }
    }
    let mut hi = lo + step;
    while g(hi) > 0.0 {
        hi += step;
        step *= 2.0;
    }
    let x_hi = util::bisect_root(g, lo, hi, 1e-12)
        .ok_or_else(|| ModelError::InvalidParam("huber cut bracketing failed".into()))?;
    if x_hi <= mid {
        return Err(ModelError::InvalidParam(format!(
            "huber eps = {eps} leaves no separation between the classes"
        )));
    }
    let c_hi = (delta * (x_hi - mid) / (sd * sd)).exp();
    Ok(HuberClip { c_lo: 1.0 / c_hi, c_hi, x_lo: 2.0 * mid - x_hi, x_hi })
}

fn prob(v: f64, what: &str) -> Result<(), ModelError> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(ModelError::InvalidParam(format!("{what} = {v} not in [0,1]")))
    }
}

impl Model {
    pub fn validate(&self) -> Result<(), ModelError> {
        match self {
            Model::Gaussian { sd, mean } => {
                if !sd.is_finite() || *sd <= 0.0 || !mean.is_finite() {
                    return Err(ModelError::InvalidParam(format!("gaussian(mean={mean}, sd={sd})")));
                }
            }
            Model::Poisson { rate } => {
                if !rate.is_finite() || *rate < 0.0 {
                    return Err(ModelError::InvalidParam(format!("poisson(rate={rate})")));
                }
            }
            Model::Bernoulli { p } => prob(*p, "bernoulli p")?,
            Model::Uniform { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite() && hi > lo) {
                    return Err(ModelError::InvalidParam(format!("uniform(lo={lo}, hi={hi})")));
                }
            }
            Model::BetaLikeDensity { .. } => {}
            Model::Cauchy { location, scale } => {
                if !location.is_finite() || !scale.is_finite() || *scale <= 0.0 {
                    return Err(ModelError::InvalidParam(format!(
                        "cauchy(location={location}, scale={scale})"
                    )));
                }
            }
            Model::FiniteMixture { weights, components } => {
                if weights.len() != components.len() || components.is_empty() {
                    return Err(ModelError::InvalidParam(
                        "finite_mixture weights/components length mismatch or empty".into(),
                    ));
                }
                let s: f64 = weights.iter().sum();
                if weights.iter().any(|&w| w < 0.0) || (s - 1.0).abs() > 1e-6 {
                    return Err(ModelError::InvalidParam(format!(
                        "finite_mixture weights must be nonnegative and sum to 1 (sum = {s})"
                    )));
                }
                for c in components {
                    c.validate()?;
                    if matches!(c, Model::Markov2 { .. }) {
                        return Err(ModelError::InvalidParam(
                            "finite_mixture cannot contain a sequential kind".into(),
                        ));
                    }
                }
            }
            Model::Markov2 { p01, p11, init_p1 } => {
                prob(*p01, "markov2 p01")?;
                prob(*p11, "markov2 p11")?;
                prob(*init_p1, "markov2 init_p1")?;
            }
            Model::Contaminated { base, eps, contaminant } => {
                prob(*eps, "contaminated eps")?;
                base.validate()?;
                contaminant.validate()?;
                if matches!(**base, Model::Markov2 { .. }) || matches!(**contaminant, Model::Markov2 { .. }) {
                    return Err(ModelError::InvalidParam(
                        "contaminated cannot wrap a sequential kind".into(),
                    ));
                }
            }
            Model::HuberLfdPre { mean0, mean1, sd, eps } => {
                huber_clip(*mean0, *mean1, *sd, *eps)?;
            }
        }
        Ok(())
    }

    /// True if the kind is a sequential (history-dependent) model.
    #[must_use]
    pub fn is_sequential(&self) -> bool {
        matches!(self, Model::Markov2 { .. })
    }

    /// Log density (or log pmf) at x for i.i.d. kinds.
    pub fn log_density(&self, x: f64) -> Result<f64, ModelError> {
        if self.is_sequential() {
            return Err(ModelError::NeedsHistory);
        }
        self.log_density_given(None, x)
    }

    /// Log density at x; `prev` is the previous observation, used only by
    /// sequential kinds (None means x is the first draw of the stream).
    pub fn log_density_given(&self, prev: Option<f64>, x: f64) -> Result<f64, ModelError> {
        match self {
            Model::Gaussian { mean, sd } => Ok(util::normal_log_pdf(x, *mean, *sd)),
            Model::Poisson { rate } => {
                if x < 0.0 || x.fract() != 0.0 || !x.is_finite() {
                    return Err(ModelError::OutOfDomain { kind: "poisson", x });
                }
                if *rate == 0.0 {
                    // rate zero is the unit mass at zero counts
                    return Ok(if x == 0.0 { 0.0 } else { f64::NEG_INFINITY });
                }
                Ok(x * rate.ln() - rate - util::ln_gamma(x + 1.0))
            }
            Model::Bernoulli { p } => {
                let prob1 = *p;
                if x == 1.0 {
                    Ok(if prob1 > 0.0 { prob1.ln() } else { f64::NEG_INFINITY })
                } else if x == 0.0 {
                    let q = 1.0 - prob1;
                    Ok(if q > 0.0 { q.ln() } else { f64::NEG_INFINITY })
                } else {
                    Err(ModelError::OutOfDomain { kind: "bernoulli", x })
                }
            }
            Model::Uniform { lo, hi } => Ok(if x >= *lo && x <= *hi {
                -(hi - lo).ln()
            } else {
                f64::NEG_INFINITY
            }),
            Model::BetaLikeDensity { power } => {
                let k = f64::from(*power);
                Ok(if (0.0..=1.0).contains(&x) {
                    (k + 1.0).ln() + k * (1.0 - x).ln()
                } else {
                    f64::NEG_INFINITY
                })
            }
            Model::Cauchy { location, scale } => {
                let z = (x - location) / scale;
                Ok(-(core::f64::consts::PI * scale * (1.0 + z * z)).ln())
            }
            Model::FiniteMixture { weights, components } => {
                let mut terms = Vec::with_capacity(components.len());
                for (w, c) in weights.iter().zip(components) {
                    if *w == 0.0 {
                        continue;
                    }
                    terms.push(w.ln() + c.log_density_given(None, x)?);
                }
                Ok(util::log_sum_exp(&terms))
            }
            Model::Markov2 { p01, p11, init_p1 } => {
                if x != 0.0 && x != 1.0 {
                    return Err(ModelError::OutOfDomain { kind: "markov2", x });
                }
                let p1 = match prev {
                    None => *init_p1,
                    Some(s) if s == 0.0 => *p01,
                    Some(s) if s == 1.0 => *p11,
                    Some(s) => return Err(ModelError::OutOfDomain { kind: "markov2 prev", x: s }),
                };
                let pr = if x == 1.0 { p1 } else { 1.0 - p1 };
                Ok(if pr > 0.0 { pr.ln() } else { f64::NEG_INFINITY })
            }
            Model::Contaminated { base, eps, contaminant } => {
                let a = (1.0 - eps).ln() + base.log_density_given(None, x)?;
                let b = if *eps > 0.0 {
                    eps.ln() + contaminant.log_density_given(None, x)?
                } else {
                    f64::NEG_INFINITY
                };
                Ok(util::log_add_exp(a, b))
            }
            Model::HuberLfdPre { mean0, mean1, sd, eps } => {
                let clip = huber_clip(*mean0, *mean1, *sd, *eps)?;
                let keep = (1.0 - eps).ln();
                Ok(if x <= clip.x_hi {
                    keep + util::normal_log_pdf(x, *mean0, *sd)
                } else {
                    keep - clip.c_hi.ln() + util::normal_log_pdf(x, *mean1, *sd)
                })
            }
        }
    }

    /// Draw one observation; `prev` feeds sequential kinds.
    pub fn sample_given(&self, prev: Option<f64>, rng: &mut Prng) -> f64 {
        match self {
            Model::Gaussian { mean, sd } => {
                let n = rand_distr::Normal::new(*mean, *sd).expect("validated");
                n.sample(rng)
            }
            Model::Poisson { rate } => {
                if *rate == 0.0 {
                    return 0.0;
                }
                let p = rand_distr::Poisson::new(*rate).expect("validated");
                p.sample(rng)
            }
            Model::Bernoulli { p } => {
                if rng.random::<f64>() < *p {
                    1.0
                } else {
                    0.0
                }
            }
            Model::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
            Model::BetaLikeDensity { power } => {
                // inverse CDF: F(x) = 1 - (1-x)^{power+1}
                let u: f64 = rng.random();
                1.0 - (1.0 - u).powf(1.0 / (f64::from(*power) + 1.0))
            }
            Model::Cauchy { location, scale } => {
                // inverse CDF from a single uniform
                let u: f64 = rng.random();
                location + scale * (core::f64::consts::PI * (u - 0.5)).tan()
            }
            Model::FiniteMixture { weights, components } => {
                let mut u: f64 = rng.random();
                for (w, c) in weights.iter().zip(components) {
                    if u < *w {
                        return c.sample_given(None, rng);
                    }
                    u -= w;
                }
                components.last().expect("nonempty").sample_given(None, rng)
            }
            Model::Markov2 { p01, p11, init_p1 } => {
                let p1 = match prev {
                    None => *init_p1,
                    Some(s) if s == 1.0 => *p11,
                    _ => *p01,
                };
                if rng.random::<f64>() < p1 {
                    1.0
                } else {
                    0.0
                }
            }
            Model::Contaminated { base, eps, contaminant } => {
                if rng.random::<f64>() < *eps {
                    contaminant.sample_given(None, rng)
                } else {
                    base.sample_given(None, rng)
                }
            }
            Model::HuberLfdPre { mean0, mean1, sd, eps } => {
                // exact inverse CDF: Gaussian body below the cut, rescaled
                // alternative tail above it
                let clip = huber_clip(*mean0, *mean1, *sd, *eps).expect("validated");
                let keep = 1.0 - eps;
                let p_below = keep * util::normal_cdf((clip.x_hi - mean0) / sd);
                let u: f64 = rng.random();
                let unit = |p: f64| p.clamp(f64::MIN_POSITIVE, 1.0 - 1e-16);
                if u <= p_below {
                    mean0 + sd * util::normal_quantile(unit(u / keep))
                } else {
                    let tail_base = util::normal_cdf((clip.x_hi - mean1) / sd);
                    let v = tail_base + clip.c_hi * (u - p_below) / keep;
                    mean1 + sd * util::normal_quantile(unit(v))
                }
            }
        }
    }

    /// Draw one observation from an i.i.d. kind.
    pub fn sample(&self, rng: &mut Prng) -> f64 {
        self.sample_given(None, rng)
    }
}

/// Where the post-change regime starts: the first post-change draw has
/// 1-based index `At(t)`; `Infinite` means no change ever occurs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChangeIndex {
    At(usize),
    Infinite,
}

/// A sampled observation stream.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObservationPath {
    pub values: Vec<f64>,
    /// 1-based first post-change index; None when the change never happens.
    pub change_index: Option<usize>,
    pub seed: u64,
}

/// Incremental sampler for a pre/post pair with a change index. Sequential
/// kinds carry their state across the change: the first post-change draw
/// conditions on the last pre-change observation.
pub struct PathSampler<'a> {
    pre: &'a Model,
    post: &'a Model,
    change: ChangeIndex,
    rng: Prng,
    prev: Option<f64>,
    next_index: usize,
}

impl<'a> PathSampler<'a> {
    pub fn new(pre: &'a Model, post: &'a Model, change: ChangeIndex, rng: Prng) -> Self {
        PathSampler { pre, post, change, rng, prev: None, next_index: 1 }
    }

    /// 1-based index of the next draw.
    #[must_use]
    pub fn next_index(&self) -> usize {
        self.next_index
    }

    pub fn draw(&mut self) -> f64 {
        let model = match self.change {
            ChangeIndex::At(t) if self.next_index >= t => self.post,
            _ => self.pre,
        };
        let x = model.sample_given(self.prev, &mut self.rng);
        self.prev = Some(x);
        self.next_index += 1;
        x
    }
}

/// Sample a full path of length `horizon`. Deterministic in `seed`.
pub fn sample_path(
    pre: &Model,
    post: &Model,
    change: ChangeIndex,
    horizon: usize,
    seed: u64,
) -> ObservationPath {
    let rng = crate::rng::stream(seed, "path", 0);
    let mut s = PathSampler::new(pre, post, change, rng);
    let values = (0..horizon).map(|_| s.draw()).collect();
    ObservationPath {
        values,
        change_index: match change {
            ChangeIndex::At(t) => Some(t),
            ChangeIndex::Infinite => None,
        },
        seed,
    }
}

// ---------------------------------------------------------------------------
// couplings
// ---------------------------------------------------------------------------

/// How a simulated observation drawn at a base parameter is transported to
/// another parameter value without fresh randomness.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum CouplingRule {
    /// y = x + (theta - base); x was drawn at location `base`.
    Location { base: f64 },
    /// y = x * theta / base; base must be nonzero.
    Scale { base: f64 },
    /// y = F_theta^{-1}(F_base(x)) for the exponential-rate family.
    InverseCdfExponential { base_rate: f64 },
}

/// Transport `x` (drawn at the rule's base parameter) to parameter `theta`.
pub fn couple(rule: &CouplingRule, x: f64, theta: f64) -> Result<f64, ModelError> {
    match rule {
        CouplingRule::Location { base } => Ok(x + theta - base),
        CouplingRule::Scale { base } => {
            if *base == 0.0 {
                Err(ModelError::BadCoupling("scale coupling with base 0".into()))
            } else {
                Ok(x * theta / base)
            }
        }
        CouplingRule::InverseCdfExponential { base_rate } => {
            if *base_rate <= 0.0 || theta <= 0.0 {
                return Err(ModelError::BadCoupling(format!(
                    "exponential rates must be positive (base={base_rate}, theta={theta})"
                )));
            }
            // F_b(x) = 1 - exp(-b x); F_t^{-1}(u) = -ln(1-u)/t, so y = x * b / t.
            Ok(x * base_rate / theta)
        }
    }
}

/// Thin a Poisson count drawn at the base rate down to a sub-rate: the number
/// of the count's `uniforms` that fall below `ratio` (strict inequality).
/// `ratio` is theta / base_rate and must lie in [0, 1].
pub fn poisson_thin(count: usize, uniforms: &[f64], ratio: f64) -> Result<usize, ModelError> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(ModelError::BadCoupling(format!("thinning ratio {ratio} outside [0,1]")));
    }
    if uniforms.len() < count {
        return Err(ModelError::BadCoupling(format!(
            "need {count} uniforms for thinning, got {}",
            uniforms.len()
        )));
    }
    Ok(uniforms[..count].iter().filter(|&&u| u < ratio).count())
}
