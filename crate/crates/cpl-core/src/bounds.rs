//! Numerical evaluation of the expected-size bounds for the universal
//! confidence set. The hardness profile rho(s) = E_f[(g/f)^s], s in (0,1),
//! measures how close two distributions are (1 iff identical); the bound
//! combines a geometric pre-change term driven by rho's minimum, the
//! singleton term, and a post-change term equal to the expected conditional
//! detection delay or its analytic refinement, whichever is smaller.

use crate::detectors::{run_to_stop, DetectorSpec, StopOutcome};
use crate::models::{ChangeIndex, Model, PathSampler};
use crate::rng::stream;
use crate::util::{adaptive_simpson, golden_section_min};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum BoundsError {
    BadInput(String),
    /// The two models coincide: rho = 1 and the geometric term diverges.
    Degenerate(&'static str),
    Unsupported(&'static str),
    /// A Monte Carlo term came out non-finite.
    Nonintegrable,
}

impl fmt::Display for BoundsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BoundsError::BadInput(s) => write!(f, "bad input: {s}"),
            BoundsError::Degenerate(s) => write!(f, "degenerate bound: {s}"),
            BoundsError::Unsupported(s) => write!(f, "unsupported: {s}"),
            BoundsError::Nonintegrable => write!(f, "nonintegrable density ratio"),
        }
    }
}

impl std::error::Error for BoundsError {}

const MC_SAMPLES: usize = 1_000_000;
const MC_SEED: u64 = 0x00c0_ffee;

fn bounded_support(model: &Model) -> Option<(f64, f64)> {
    match model {
        Model::Uniform { lo, hi } => Some((*lo, *hi)),
        Model::BetaLikeDensity { .. } => Some((0.0, 1.0)),
        _ => None,
    }
}

/// E_{model0}[(f1/f0)^s] for s in [0, 1]: closed form for Gaussians with a
/// shared sd and for Poisson pairs, quadrature when both supports are
/// bounded, otherwise a Monte Carlo average over 10^6 draws from model0.
pub fn rho_eval(model0: &Model, model1: &Model, s: f64) -> Result<f64, BoundsError> {
    Ok(rho_eval_detailed(model0, model1, s)?.0)
}

/// rho together with the standard error of its Monte Carlo estimate
/// (0 for the exact routes).
pub fn rho_eval_detailed(
    model0: &Model,
    model1: &Model,
    s: f64,
) -> Result<(f64, f64), BoundsError> {
    if !(0.0..=1.0).contains(&s) {
        return Err(BoundsError::BadInput(format!("s must be in [0,1], got {s}")));
    }
    if model0.is_sequential() || model1.is_sequential() {
        return Err(BoundsError::Unsupported("hardness profile needs i.i.d. models"));
    }
    if s == 0.0 || s == 1.0 {
        return Ok((1.0, 0.0));
    }
    match (model0, model1) {
        (Model::Gaussian { mean: m0, sd: s0 }, Model::Gaussian { mean: m1, sd: s1 })
            if (s0 - s1).abs() < 1e-15 =>
        {
            let k = (m1 - m0) * (m1 - m0) / (2.0 * s0 * s0);
            Ok(((-s * (1.0 - s) * k).exp(), 0.0))
        }
        (Model::Poisson { rate: l0 }, Model::Poisson { rate: l1 }) => {
            // sum_k pmf0^(1-s) pmf1^s telescopes into a single exponential
            let v = (-(1.0 - s) * l0 - s * l1 + l0.powf(1.0 - s) * l1.powf(s)).exp();
            Ok((v, 0.0))
        }
        (Model::Bernoulli { p: p0 }, Model::Bernoulli { p: p1 }) => {
            let v = (1.0 - p0).powf(1.0 - s) * (1.0 - p1).powf(s)
                + p0.powf(1.0 - s) * p1.powf(s);
            Ok((v, 0.0))
        }
        _ => {
            if let (Some((a0, b0)), Some((a1, b1))) =
                (bounded_support(model0), bounded_support(model1))
            {
                let (lo, hi) = (a0.max(a1), b0.min(b1));
                if lo >= hi {
                    return Ok((0.0, 0.0));
                }
                let f = |x: f64| {
                    let l0 = model0.log_density(x).unwrap_or(f64::NEG_INFINITY);
                    let l1 = model1.log_density(x).unwrap_or(f64::NEG_INFINITY);
                    let v = ((1.0 - s) * l0 + s * l1).exp();
                    if v.is_finite() {
                        v
                    } else {
                        0.0
                    }
                };
                return Ok((adaptive_simpson(f, lo, hi, 1e-10), 0.0));
            }
            // Monte Carlo from model0; the mean always exists (rho <= 1) but
            // the variance may not for heavy-tailed ratios, in which case the
            // reported SE is only indicative
            let mut rng = stream(MC_SEED, "rho", 0);
            let mut sum = 0.0;
            let mut sumsq = 0.0;
            for _ in 0..MC_SAMPLES {
                let x = model0.sample_given(None, &mut rng);
                let l0 = model0.log_density(x).unwrap_or(f64::NEG_INFINITY);
                let l1 = model1.log_density(x).unwrap_or(f64::NEG_INFINITY);
                let term = (s * (l1 - l0)).exp();
                if term.is_nan() || term.is_infinite() {
                    return Err(BoundsError::Nonintegrable);
                }
                sum += term;
                sumsq += term * term;
            }
            let n = MC_SAMPLES as f64;
            let mean = sum / n;
            let var = (sumsq / n - mean * mean).max(0.0);
            Ok((mean, (var / n).sqrt()))
        }
    }
}

/// Both hardness profiles of a pre/post pair with their minimizers:
/// rho0 integrates under the pre model, rho1 under the post model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HardnessProfile {
    pre: Model,
    post: Model,
    pub s0: f64,
    pub s1: f64,
    pub rho0_min: f64,
    pub rho1_min: f64,
}

/// Golden-section minimizer of a rho profile over s in (0,1), interval
/// narrowed below 1e-8.
pub fn minimize_rho(
    rho: impl Fn(f64) -> Result<f64, BoundsError>,
) -> Result<(f64, f64), BoundsError> {
    // surface evaluation errors once, then scan cleanly
    rho(0.5)?;
    let err = std::cell::RefCell::new(None);
    let (s_star, rho_star) = golden_section_min(
        |s| match rho(s) {
            Ok(v) => v,
            Err(e) => {
                *err.borrow_mut() = Some(e);
                f64::INFINITY
            }
        },
        1e-9,
        1.0 - 1e-9,
        1e-8,
    );
    if let Some(e) = err.into_inner() {
        return Err(e);
    }
    Ok((s_star, rho_star))
}

impl HardnessProfile {
    pub fn new(pre: &Model, post: &Model) -> Result<Self, BoundsError> {
        let (s0, rho0_min) = minimize_rho(|s| rho_eval(pre, post, s))?;
        let (s1, rho1_min) = minimize_rho(|s| rho_eval(post, pre, s))?;
        Ok(HardnessProfile {
            pre: pre.clone(),
            post: post.clone(),
            s0,
            s1,
            rho0_min,
            rho1_min,
        })
    }

    pub fn rho0(&self, s: f64) -> Result<f64, BoundsError> {
        rho_eval(&self.pre, &self.post, s)
    }

    pub fn rho1(&self, s: f64) -> Result<f64, BoundsError> {
        rho_eval(&self.post, &self.pre, s)
    }
}

/// Which bound variant to evaluate. Plain uses the raw delay as the
/// post-change term and a geometric sum starting at k = 1; sensitive
/// replaces the delay by the smaller of delay and the analytic refinement
/// (valid for detectors that stop sooner under a change than without one);
/// composite starts the geometric sum at k = 0 and applies to composite
/// classes through a least favorable pair, assuming the stopping time is
/// well behaved under that pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundMode {
    Plain,
    Sensitive,
    Composite,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LengthBound {
    pub term_pre: f64,
    pub term_mid: f64,
    pub term_post: f64,
    pub total: f64,
    pub assumptions_used: Vec<String>,
}

/// Upper bound on the expected conditional size of the universal set at a
/// change time t_change, survival probability p_t there, and observed (or
/// simulated) expected conditional delay.
pub fn length_bound(
    profile: &HardnessProfile,
    alpha: f64,
    p_t: f64,
    t_change: usize,
    delay: f64,
    mode: BoundMode,
) -> Result<LengthBound, BoundsError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(BoundsError::BadInput(format!("alpha must be in (0,1), got {alpha}")));
    }
    if !(p_t > 0.0 && p_t <= 1.0) {
        return Err(BoundsError::BadInput(format!("p_t must be in (0,1], got {p_t}")));
    }
    if !(delay >= 0.0) {
        return Err(BoundsError::BadInput(format!("delay must be >= 0, got {delay}")));
    }
    if t_change == 0 {
        return Err(BoundsError::BadInput("t_change must be >= 1".into()));
    }
    let rho0 = profile.rho0_min;
    let rho1 = profile.rho1_min;
    if rho0 >= 1.0 - 1e-12 {
        return Err(BoundsError::Degenerate("rho0 = 1: identical pre and post models"));
    }
    let tm1 = (t_change as f64) - 1.0;
    let geom = match mode {
        // sum_{k=1}^{T-2} rho^k
        BoundMode::Plain | BoundMode::Sensitive => {
            if t_change <= 2 {
                0.0
            } else {
                (rho0 - rho0.powf(tm1)) / (1.0 - rho0)
            }
        }
        // sum_{k=0}^{T-2} rho^k
        BoundMode::Composite => (1.0 - rho0.powf(tm1)) / (1.0 - rho0),
    };
    let term_pre = (2.0 / alpha).powf(profile.s0) * p_t.powf(-(profile.s0 + 1.0)) * geom;
    let psi = if rho1 >= 1.0 - 1e-12 {
        f64::INFINITY
    } else {
        ((2.0 / alpha).powf(profile.s1) * rho1.powf(profile.s1)
            / (1.0 - rho1.powf(profile.s1))
            + rho1 / (1.0 - rho1))
            / p_t
    };
    let (term_post, assumptions_used) = match mode {
        BoundMode::Plain => (delay, vec!["plain".to_string()]),
        BoundMode::Sensitive => (delay.min(psi), vec!["plain".to_string(), "sensitive".to_string()]),
        BoundMode::Composite => (delay.min(psi), vec!["well_behaved".to_string()]),
    };
    let total = term_pre + 1.0 + term_post;
    Ok(LengthBound { term_pre, term_mid: 1.0, term_post, total, assumptions_used })
}

/// Expected |tau - t_change| conditional on tau >= t_change, estimated by
/// simulation; runs that stop early or never stop within the cap are
/// excluded from the average.
pub fn simulate_delay(
    pre: &Model,
    post: &Model,
    detector: &DetectorSpec,
    t_change: usize,
    runs: usize,
    cap: usize,
    seed: u64,
) -> Result<f64, BoundsError> {
    if runs == 0 || t_change == 0 || cap < t_change {
        return Err(BoundsError::BadInput(
            "need runs >= 1 and cap >= t_change >= 1".into(),
        ));
    }
    let delays: Vec<Option<f64>> = (0..runs as u64)
        .into_par_iter()
        .map(|j| {
            let rng = stream(seed, "delay", j);
            let mut sampler = PathSampler::new(pre, post, ChangeIndex::At(t_change), rng);
            let path: Vec<f64> = (0..cap).map(|_| sampler.draw()).collect();
            match run_to_stop(detector, &path) {
                Ok(StopOutcome::StoppedAt(tau)) if tau >= t_change => {
                    Some((tau as f64 - t_change as f64).abs())
                }
                _ => None,
            }
        })
        .collect();
    let kept: Vec<f64> = delays.into_iter().flatten().collect();
    if kept.is_empty() {
        return Err(BoundsError::BadInput(
            "no simulated run stopped at or after the change within the cap".into(),
        ));
    }
    Ok(kept.iter().sum::<f64>() / kept.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gauss(mean: f64) -> Model {
        Model::Gaussian { mean, sd: 1.0 }
    }

    #[test]
    fn gaussian_rho_closed_form() {
        let v = rho_eval(&gauss(0.0), &gauss(1.0), 0.5).unwrap();
        assert!((v - (-0.125f64).exp()).abs() < 1e-14);
        assert!((v - 0.88250).abs() < 1e-5);
        assert_eq!(rho_eval(&gauss(0.0), &gauss(1.0), 0.0).unwrap(), 1.0);
        assert_eq!(rho_eval(&gauss(0.0), &gauss(1.0), 1.0).unwrap(), 1.0);
    }

    #[test]
    fn poisson_rho_matches_direct_series() {
        let (l0, l1, s) = (1.0, 2.0, 0.35);
        let closed = rho_eval(
            &Model::Poisson { rate: l0 },
            &Model::Poisson { rate: l1 },
            s,
        )
        .unwrap();
        // independent evaluation: truncated sum of pmf0^(1-s) pmf1^s
        let mut direct = 0.0;
        let mut log_fact = 0.0;
        for k in 0..200 {
            if k > 0 {
                log_fact += (k as f64).ln();
            }
            let lp0 = -l0 + k as f64 * l0.ln() - log_fact;
            let lp1 = -l1 + k as f64 * l1.ln() - log_fact;
            direct += ((1.0 - s) * lp0 + s * lp1).exp();
        }
        assert!((closed - direct).abs() < 1e-12, "closed {closed} direct {direct}");
    }

    #[test]
    fn quadrature_route_handles_bounded_supports() {
        let u = Model::Uniform { lo: 0.0, hi: 1.0 };
        let b = Model::BetaLikeDensity { power: 3 };
        let v = rho_eval(&u, &b, 0.5).unwrap();
        // int_0^1 sqrt(4(1-x)^3) dx = 2 * (2/5) = 0.8
        assert!((v - 0.8).abs() < 1e-9, "got {v}");
    }

    #[test]
    fn minimizer_hits_half_for_symmetric_gaussians() {
        let p = HardnessProfile::new(&gauss(0.0), &gauss(1.0)).unwrap();
        assert!((p.s0 - 0.5).abs() < 1e-6, "s0 = {}", p.s0);
        assert!((p.s1 - 0.5).abs() < 1e-6);
        assert!(p.rho0_min < 1.0 && p.rho1_min < 1.0);
        // golden section agrees with a dense grid scan
        let mut grid_best = (0.0, f64::INFINITY);
        for i in 1..100_000 {
            let s = i as f64 / 100_000.0;
            let v = p.rho0(s).unwrap();
            if v < grid_best.1 {
                grid_best = (s, v);
            }
        }
        assert!((p.s0 - grid_best.0).abs() < 1e-4);
        assert!((p.rho0_min - grid_best.1).abs() < 1e-10);
    }

    #[test]
    fn length_bound_reference_arithmetic() {
        let p = HardnessProfile::new(&gauss(0.0), &gauss(1.0)).unwrap();
        let b = length_bound(&p, 0.05, 0.9, 100, 14.0, BoundMode::Plain).unwrap();
        assert!((b.term_pre - 55.6).abs() < 0.1, "term_pre = {}", b.term_pre);
        assert_eq!(b.term_mid, 1.0);
        assert_eq!(b.term_post, 14.0);
        assert!((b.total - (b.term_pre + 15.0)).abs() < 1e-12);
    }

    #[test]
    fn geometric_sum_empty_at_t1() {
        let p = HardnessProfile::new(&gauss(0.0), &gauss(1.0)).unwrap();
        for mode in [BoundMode::Plain, BoundMode::Sensitive, BoundMode::Composite] {
            let b = length_bound(&p, 0.05, 0.9, 1, 5.0, mode).unwrap();
            assert_eq!(b.term_pre, 0.0, "{mode:?}");
        }
        // plain keeps the empty sum through T = 2
        let b2 = length_bound(&p, 0.05, 0.9, 2, 5.0, BoundMode::Plain).unwrap();
        assert_eq!(b2.term_pre, 0.0);
    }

    #[test]
    fn composite_exceeds_plain_by_the_leading_term() {
        // the composite geometric sum starts one step earlier, adding
        // exactly the k = 0 term to the plain sum
        let p = HardnessProfile::new(&gauss(0.0), &gauss(1.0)).unwrap();
        let plain = length_bound(&p, 0.05, 0.9, 100, 14.0, BoundMode::Plain).unwrap();
        let comp = length_bound(&p, 0.05, 0.9, 100, 14.0, BoundMode::Composite).unwrap();
        let lead = (2.0f64 / 0.05).powf(p.s0) * 0.9f64.powf(-(p.s0 + 1.0));
        assert!((comp.term_pre - plain.term_pre - lead).abs() < 1e-9);
    }

    #[test]
    fn bound_monotone_in_survival_and_separation() {
        let p = HardnessProfile::new(&gauss(0.0), &gauss(1.0)).unwrap();
        let lo = length_bound(&p, 0.05, 0.5, 100, 10.0, BoundMode::Sensitive).unwrap();
        let hi = length_bound(&p, 0.05, 0.95, 100, 10.0, BoundMode::Sensitive).unwrap();
        assert!(hi.total < lo.total);
        let wide = HardnessProfile::new(&gauss(0.0), &gauss(2.0)).unwrap();
        let easy = length_bound(&wide, 0.05, 0.9, 100, 10.0, BoundMode::Sensitive).unwrap();
        let hard = length_bound(&p, 0.05, 0.9, 100, 10.0, BoundMode::Sensitive).unwrap();
        assert!(easy.term_pre < hard.term_pre);
    }

    #[test]
    fn identical_models_are_degenerate() {
        let p = HardnessProfile {
            pre: gauss(0.0),
            post: gauss(0.0),
            s0: 0.5,
            s1: 0.5,
            rho0_min: 1.0,
            rho1_min: 1.0,
        };
        assert!(matches!(
            length_bound(&p, 0.05, 0.9, 100, 5.0, BoundMode::Plain),
            Err(BoundsError::Degenerate(_))
        ));
    }

    #[test]
    fn simulated_delay_is_positive_and_finite() {
        let det = DetectorSpec::CusumLr { pre: gauss(0.0), post: gauss(1.0), a: 100.0 };
        let d = simulate_delay(&gauss(0.0), &gauss(1.0), &det, 20, 100, 400, 5).unwrap();
        assert!(d > 0.0 && d < 100.0, "delay = {d}");
    }
}
