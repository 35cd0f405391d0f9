//! Baselines built on the reflected random walk T_n = max(0, T_{n-1} + X_n):
//! an asymptotic confidence set for the change time read off the walk's
//! zeros and sub-threshold excursion, and a bias-corrected normal interval
//! for the post-change mean. Both serve as comparison methods; neither
//! carries finite-sample guarantees.

use crate::localize::LocalizeError;
use crate::util::normal_quantile;
use serde::{Deserialize, Serialize};

/// Walk values T_0..=T_n (T_0 = 0) for the given observations.
#[must_use]
pub fn reflected_walk(data: &[f64]) -> Vec<f64> {
    let mut walk = Vec::with_capacity(data.len() + 1);
    walk.push(0.0);
    let mut t = 0.0f64;
    for &x in data {
        t = (t + x).max(0.0);
        walk.push(t);
    }
    walk
}

/// Tuning constants (s, c) for a symmetric mean change from -theta1 to
/// theta1: s determines how many past excursions the set keeps (as the
/// ceil(|s|)-th last zero), c the sub-threshold band after the last zero.
#[must_use]
pub fn walk_constants(alpha: f64, theta1: f64) -> (f64, f64) {
    let s = alpha.ln() * (1.0 / (2.0_f64.sqrt() * theta1) + 0.088);
    let c = -(1.0 - (1.0 - alpha).sqrt()).ln() / (2.0 * theta1) - 0.583;
    (s, c)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WalkSet {
    /// Accepted change times in the first-post-observation convention
    /// (walk index + 1), ascending.
    pub accepted: Vec<usize>,
    /// Walk index of the last zero before the stopping time.
    pub nu_hat: usize,
    /// Walk index where the backward zero count ran out, the left end of
    /// the contiguous part of the set.
    pub l_s: usize,
    /// True when fewer zeros existed than requested and l_s fell back to 0.
    pub clamped: bool,
    pub s: f64,
    pub c: f64,
}

/// Confidence set for the change time given the walk stopped at tau
/// (T_tau >= threshold): the band {k >= nu_hat : T_k <= c} united with all
/// indices from the m-th last zero before nu_hat up to nu_hat. Indices are
/// reported as change times t = k + 1.
pub fn walk_confidence_set_raw(
    data: &[f64],
    tau: usize,
    m: usize,
    s: f64,
    c: f64,
) -> Result<WalkSet, LocalizeError> {
    if tau == 0 || tau > data.len() {
        return Err(LocalizeError::BadInput(format!(
            "need 1 <= tau <= data length, got tau={tau} len={}",
            data.len()
        )));
    }
    let walk = reflected_walk(&data[..tau]);
    let nu_hat = (0..tau).rev().find(|&k| walk[k] == 0.0).unwrap_or(0);
    let mut l_s = nu_hat;
    let mut clamped = false;
    let mut remaining = m;
    while remaining > 0 {
        match (0..l_s).rev().find(|&k| walk[k] == 0.0) {
            Some(z) => l_s = z,
            None => {
                l_s = 0;
                clamped = true;
                break;
            }
        }
        remaining -= 1;
    }
    let mut accepted: Vec<usize> = (l_s..nu_hat).map(|k| k + 1).collect();
    for k in nu_hat..=tau {
        if walk[k] <= c {
            accepted.push(k + 1);
        }
    }
    accepted.sort_unstable();
    accepted.dedup();
    Ok(WalkSet { accepted, nu_hat, l_s, clamped, s, c })
}

/// Confidence set with the symmetric-change tuning constants at level alpha.
pub fn walk_confidence_set(
    data: &[f64],
    tau: usize,
    alpha: f64,
    theta1: f64,
) -> Result<WalkSet, LocalizeError> {
    if !(alpha > 0.0 && alpha < 1.0) || !(theta1 > 0.0) {
        return Err(LocalizeError::BadInput(format!(
            "need alpha in (0,1) and theta1 > 0, got alpha={alpha} theta1={theta1}"
        )));
    }
    let (s, c) = walk_constants(alpha, theta1);
    walk_confidence_set_raw(data, tau, s.abs().ceil() as usize, s, c)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PostMeanInterval {
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Bias-corrected normal interval for the post-change mean after the walk
/// crossed threshold d at tau, with nu_hat the last zero: the raw estimate
/// T_tau / (tau - nu_hat) is shifted down by the overshoot bias and widened
/// by a variance correction. Returns None when the correction terms are
/// undefined (d * estimate <= 13/16) or the excursion is empty.
#[must_use]
pub fn post_mean_interval(
    walk_at_tau: f64,
    excursion_len: usize,
    d: f64,
    alpha_prime: f64,
) -> Option<PostMeanInterval> {
    if excursion_len == 0 {
        return None;
    }
    let n = excursion_len as f64;
    let estimate = walk_at_tau / n;
    let var_term = 1.0 - 13.0 / (16.0 * d * estimate);
    if !(d * estimate > 0.0) || var_term <= 0.0 {
        return None;
    }
    let center = estimate - 4.0 / (5.0 * (d * estimate * n).sqrt());
    let half = normal_quantile(1.0 - alpha_prime / 2.0) * var_term.sqrt() / n.sqrt();
    Some(PostMeanInterval { estimate, lo: center - half, hi: center + half })
}
