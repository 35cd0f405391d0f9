//! Changepoint localization: point estimates of the change time, the
//! universal confidence-set construction, and the simulation-calibrated
//! adaptive constructions.

pub mod adaptive;
pub mod universal;

use crate::confseq::{ConfSeqError, Interval};
use crate::detectors::{DetectorError, MeanFamily};
use crate::eprocesses::EProcessError;
use crate::models::{Model, ModelError};

#[derive(Debug)]
pub enum LocalizeError {
    Detector(DetectorError),
    EProcess(EProcessError),
    ConfSeq(ConfSeqError),
    Model(ModelError),
    /// The survival estimate hit zero at an in-range t, so the threshold is
    /// undefined; use a strictly positive estimator.
    ZeroSurvival { t: usize },
    BadInput(String),
}

impl std::fmt::Display for LocalizeError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LocalizeError::Detector(e) => write!(f, "detector: {e}"),
            LocalizeError::EProcess(e) => write!(f, "e-process: {e}"),
            LocalizeError::ConfSeq(e) => write!(f, "confidence set: {e}"),
            LocalizeError::Model(e) => write!(f, "model: {e}"),
            LocalizeError::ZeroSurvival { t } => {
                write!(f, "survival estimate is zero at t = {t}; threshold undefined")
            }
            LocalizeError::BadInput(s) => write!(f, "bad input: {s}"),
        }
    }
}

impl std::error::Error for LocalizeError {}

impl From<DetectorError> for LocalizeError {
    fn from(e: DetectorError) -> Self {
        LocalizeError::Detector(e)
    }
}
impl From<EProcessError> for LocalizeError {
    fn from(e: EProcessError) -> Self {
        LocalizeError::EProcess(e)
    }
}
impl From<ConfSeqError> for LocalizeError {
    fn from(e: ConfSeqError) -> Self {
        LocalizeError::ConfSeq(e)
    }
}
impl From<ModelError> for LocalizeError {
    fn from(e: ModelError) -> Self {
        LocalizeError::Model(e)
    }
}

/// A point estimate of the change time with its achieved score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChangepointEstimate {
    /// 1-based estimated first post-change index.
    pub t_hat: usize,
    pub score: f64,
}

/// argmax_j sum_{i=j..n} terms[i-1] over j = 1..=n, smallest index on ties.
#[must_use]
pub fn estimate_from_suffix_terms(terms: &[f64]) -> ChangepointEstimate {
    assert!(!terms.is_empty(), "point estimate needs data");
    let mut suffix = 0.0;
    let mut scores = vec![0.0; terms.len()];
    for j in (0..terms.len()).rev() {
        suffix += terms[j];
        scores[j] = suffix;
    }
    estimate_from_scores(&scores)
}

/// argmax over 1-based positions with the smallest index winning ties.
#[must_use]
pub fn estimate_from_scores(scores: &[f64]) -> ChangepointEstimate {
    assert!(!scores.is_empty(), "point estimate needs data");
    let mut best = 0;
    for (j, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = j;
        }
    }
    ChangepointEstimate { t_hat: best + 1, score: scores[best] }
}

/// Per-observation log likelihood ratios log(post/pre). For sequential
/// models both sides must share the initial distribution so the first factor
/// cancels; the first term is then zero.
pub fn known_lr_terms(pre: &Model, post: &Model, data: &[f64]) -> Result<Vec<f64>, ModelError> {
    let sequential = pre.is_sequential() || post.is_sequential();
    let mut terms = Vec::with_capacity(data.len());
    for (idx, &x) in data.iter().enumerate() {
        if sequential {
            if idx == 0 {
                terms.push(0.0);
            } else {
                let prev = data[idx - 1];
                terms.push(post.log_density_given(Some(prev), x)? - pre.log_density_given(Some(prev), x)?);
            }
        } else {
            terms.push(post.log_density(x)? - pre.log_density(x)?);
        }
    }
    Ok(terms)
}

/// Cumulative log likelihood ratios: cum[0] = 0, cum[i] = sum of the first i
/// terms. The familiar identities follow: the score of a change at j is
/// cum[n] - cum[j-1], and the two-sided localization statistic at t given
/// the estimate is cum[t-1] - cum[t_hat-1].
pub fn known_lr_cumsum(pre: &Model, post: &Model, data: &[f64]) -> Result<Vec<f64>, ModelError> {
    let terms = known_lr_terms(pre, post, data)?;
    let mut cum = Vec::with_capacity(terms.len() + 1);
    cum.push(0.0);
    let mut acc = 0.0;
    for t in terms {
        acc += t;
        cum.push(acc);
    }
    Ok(cum)
}

/// Change-time estimate for fully known pre and post models.
pub fn estimate_known_lr(
    pre: &Model,
    post: &Model,
    data: &[f64],
) -> Result<ChangepointEstimate, ModelError> {
    Ok(estimate_from_suffix_terms(&known_lr_terms(pre, post, data)?))
}

fn clamp_to(x: f64, iv: Interval) -> f64 {
    x.clamp(iv.lo, iv.hi)
}

/// Sum of log densities of data[a..b] (0-based half-open) at mean theta.
fn seg_loglik(family: &MeanFamily, data: &[f64], a: usize, b: usize, theta: f64) -> f64 {
    data[a..b].iter().map(|&x| family.log_density(theta, x)).sum()
}

fn seg_mean(data: &[f64], a: usize, b: usize) -> f64 {
    if a >= b {
        0.0
    } else {
        data[a..b].iter().sum::<f64>() / (b - a) as f64
    }
}

/// Change-time estimate with known pre parameter and a post parameter
/// profiled over its space (MLE clamped into theta1_space).
#[must_use]
pub fn estimate_profile_post(
    family: &MeanFamily,
    theta0: f64,
    theta1_space: Interval,
    data: &[f64],
) -> ChangepointEstimate {
    let n = data.len();
    let mut scores = vec![0.0; n];
    for j in 1..=n {
        let theta1 = clamp_to(seg_mean(data, j - 1, n), theta1_space);
        scores[j - 1] =
            seg_loglik(family, data, j - 1, n, theta1) - seg_loglik(family, data, j - 1, n, theta0);
    }
    estimate_from_scores(&scores)
}

/// Change-time estimate with both parameters profiled over their spaces
/// (clamped MLEs); j = 1 leaves the pre segment empty with zero contribution.
#[must_use]
pub fn estimate_profile_both(
    family: &MeanFamily,
    theta0_space: Interval,
    theta1_space: Interval,
    data: &[f64],
) -> ChangepointEstimate {
    let n = data.len();
    let mut scores = vec![0.0; n];
    for j in 1..=n {
        let pre = if j == 1 {
            0.0
        } else {
            let theta0 = clamp_to(seg_mean(data, 0, j - 1), theta0_space);
            seg_loglik(family, data, 0, j - 1, theta0)
        };
        let theta1 = clamp_to(seg_mean(data, j - 1, n), theta1_space);
        scores[j - 1] = pre + seg_loglik(family, data, j - 1, n, theta1);
    }
    estimate_from_scores(&scores)
}

/// Change-time estimate from the scaled-bet e-process used for bounded-mean
/// pre classes: bets nu_i = min(0, mean of the global past) - boundary, score
/// of start t is sum_{i=t..n} (nu_i (x_i - boundary) - nu_i^2 / 2), the
/// exponent centered at the pre-class boundary like the matching detector.
#[must_use]
pub fn estimate_subgaussian_native(boundary: f64, data: &[f64]) -> ChangepointEstimate {
    let n = data.len();
    let mut terms = vec![0.0; n];
    let mut past_sum = 0.0;
    for i in 1..=n {
        let past_mean = if i == 1 { 0.0 } else { past_sum / (i - 1) as f64 };
        let nu = past_mean.min(0.0) - boundary;
        terms[i - 1] = nu * (data[i - 1] - boundary) - nu * nu / 2.0;
        past_sum += data[i - 1];
    }
    estimate_from_suffix_terms(&terms)
}

/// Generalized likelihood-ratio localization statistic with a known pre
/// parameter: max over split points i of the profile log likelihood of
/// data[..n] (pre fixed at theta0, post at the unconstrained sample mean of
/// the tail), minus the same quantity at split t.
#[must_use]
pub fn glr_known_pre(family: &MeanFamily, theta0: f64, data: &[f64], t: usize) -> f64 {
    let n = data.len();
    assert!(t >= 1 && t <= n, "split out of range");
    match family {
        MeanFamily::Gaussian { sd } => {
            let scale = 1.0 / (2.0 * sd * sd);
            // prefix sums of (x - theta0) and (x - theta0)^2
            let mut c1 = vec![0.0; n + 1];
            let mut c2 = vec![0.0; n + 1];
            for (i, &x) in data.iter().enumerate() {
                let e = x - theta0;
                c1[i + 1] = c1[i] + e;
                c2[i + 1] = c2[i] + e * e;
            }
            let css = |a: usize, b: usize| -> f64 {
                // centered sum of squares of data[a..b], 0-based half-open
                let m = (b - a) as f64;
                if m < 1.0 {
                    return 0.0;
                }
                let s = c1[b] - c1[a];
                (c2[b] - c2[a]) - s * s / m
            };
            let level = |i: usize| -scale * (c2[i - 1] + css(i - 1, n));
            let mut best = f64::NEG_INFINITY;
            for i in 1..=n {
                best = best.max(level(i));
            }
            best - level(t)
        }
        MeanFamily::Poisson => {
            let mut c1 = vec![0.0; n + 1];
            for (i, &x) in data.iter().enumerate() {
                c1[i + 1] = c1[i] + x;
            }
            // profile Poisson log likelihood of data[a..b] (factorials
            // dropped; they cancel in the difference)
            let gseg = |a: usize, b: usize| -> f64 {
                let m = (b - a) as f64;
                let s = c1[b] - c1[a];
                if m < 1.0 || s <= 0.0 {
                    0.0
                } else {
                    s * (s / m).ln() - s
                }
            };
            let level = |i: usize| -> f64 {
                let s_pre = c1[i - 1];
                let pre = s_pre * theta0.ln() - (i - 1) as f64 * theta0;
                pre + gseg(i - 1, n)
            };
            let mut best = f64::NEG_INFINITY;
            for i in 1..=n {
                best = best.max(level(i));
            }
            best - level(t)
        }
    }
}

/// Generalized likelihood-ratio localization statistic with both parameters
/// profiled (unconstrained sample means on each side of the split).
#[must_use]
pub fn glr_profile_both(family: &MeanFamily, data: &[f64], t: usize) -> f64 {
    let n = data.len();
    assert!(t >= 1 && t <= n, "split out of range");
    match family {
        MeanFamily::Gaussian { sd } => {
            let scale = 1.0 / (2.0 * sd * sd);
            let mut c1 = vec![0.0; n + 1];
            let mut c2 = vec![0.0; n + 1];
            for (i, &x) in data.iter().enumerate() {
                c1[i + 1] = c1[i] + x;
                c2[i + 1] = c2[i] + x * x;
            }
            let css = |a: usize, b: usize| -> f64 {
                let m = (b - a) as f64;
                if m < 1.0 {
                    return 0.0;
                }
                let s = c1[b] - c1[a];
                (c2[b] - c2[a]) - s * s / m
            };
            let level = |i: usize| -scale * (css(0, i - 1) + css(i - 1, n));
            let mut best = f64::NEG_INFINITY;
            for i in 1..=n {
                best = best.max(level(i));
            }
            best - level(t)
        }
        MeanFamily::Poisson => {
            let mut c1 = vec![0.0; n + 1];
            for (i, &x) in data.iter().enumerate() {
                c1[i + 1] = c1[i] + x;
            }
            let gseg = |a: usize, b: usize| -> f64 {
                let m = (b - a) as f64;
                let s = c1[b] - c1[a];
                if m < 1.0 || s <= 0.0 {
                    0.0
                } else {
                    s * (s / m).ln() - s
                }
            };
            let level = |i: usize| gseg(0, i - 1) + gseg(i - 1, n);
            let mut best = f64::NEG_INFINITY;
            for i in 1..=n {
                best = best.max(level(i));
            }
            best - level(t)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suffix_argmax_prefers_smallest_index() {
        // terms -0.1, 0.05, 2.0, 1.8: suffix sums 3.75, 3.85, 3.8, 1.8
        let e = estimate_from_suffix_terms(&[-0.1, 0.05, 2.0, 1.8]);
        assert_eq!(e.t_hat, 2);
        assert!((e.score - 3.85).abs() < 1e-12);
        // exact tie goes to the earlier index
        let e = estimate_from_scores(&[1.0, 2.0, 2.0, 0.0]);
        assert_eq!(e.t_hat, 2);
    }

    #[test]
    fn known_lr_estimate_matches_brute_force() {
        let pre = Model::Gaussian { mean: 0.0, sd: 1.0 };
        let post = Model::Gaussian { mean: 1.0, sd: 1.0 };
        let data = vec![0.3, -1.2, 0.4, 1.8, 0.9, 2.1, 0.7];
        let e = estimate_known_lr(&pre, &post, &data).unwrap();
        let mut best = (0, f64::NEG_INFINITY);
        for j in 1..=data.len() {
            let s: f64 = data[j - 1..]
                .iter()
                .map(|&x| post.log_density(x).unwrap() - pre.log_density(x).unwrap())
                .sum();
            if s > best.1 {
                best = (j, s);
            }
        }
        assert_eq!(e.t_hat, best.0);
        assert!((e.score - best.1).abs() < 1e-10);
    }

    #[test]
    fn profile_estimates_clamp_into_spaces() {
        let fam = MeanFamily::Gaussian { sd: 1.0 };
        let data = vec![0.1, -0.2, 0.0, 2.4, 2.0, 2.2];
        let e = estimate_profile_post(&fam, 0.0, Interval::new(0.75, f64::INFINITY), &data);
        assert_eq!(e.t_hat, 4);
        let e2 = estimate_profile_both(
            &fam,
            Interval::new(f64::NEG_INFINITY, 0.25),
            Interval::new(0.75, f64::INFINITY),
            &data,
        );
        assert_eq!(e2.t_hat, 4);
    }

    #[test]
    fn glr_zero_at_best_split() {
        let fam = MeanFamily::Gaussian { sd: 1.0 };
        let data = vec![0.0, 0.2, -0.1, 3.0, 2.9, 3.1];
        // the best split must score zero against itself and others positive
        let mut at_best = f64::INFINITY;
        for t in 1..=data.len() {
            let g = glr_known_pre(&fam, 0.0, &data, t);
            assert!(g >= -1e-12);
            at_best = at_best.min(g);
        }
        assert!(at_best.abs() < 1e-12);
        assert!(glr_known_pre(&fam, 0.0, &data, 4).abs() < 1e-12);
        assert!(glr_profile_both(&fam, &data, 4).abs() < 1e-12);
    }

    #[test]
    fn glr_poisson_matches_direct_profile() {
        let data = vec![1.0, 0.0, 2.0, 5.0, 4.0, 6.0];
        let t = 3;
        let direct = |t: usize| -> f64 {
            let n = data.len();
            let level = |i: usize| -> f64 {
                let pre: f64 = data[..i - 1].iter().map(|&x| x * 1.0f64.ln() - 1.0).sum();
                let s: f64 = data[i - 1..].iter().sum();
                let m = (n - i + 1) as f64;
                let post = if s > 0.0 { s * (s / m).ln() - s } else { 0.0 };
                pre + post
            };
            (1..=n).map(level).fold(f64::NEG_INFINITY, f64::max) - level(t)
        };
        let got = glr_known_pre(&MeanFamily::Poisson, 1.0, &data, t);
        assert!((got - direct(t)).abs() < 1e-10, "{got} vs {}", direct(t));
    }

    #[test]
    fn subgaussian_native_estimate_finds_downshift() {
        // pre mean 1, post well below the 0.5 boundary
        let data = vec![1.1, 0.9, 1.3, 0.8, -1.0, -0.9, -1.2, -0.8];
        let e = estimate_subgaussian_native(0.5, &data);
        assert_eq!(e.t_hat, 5);
    }
}
