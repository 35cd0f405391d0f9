//! Universal confidence set for the change time: every candidate t whose
//! two-sided e-process statistic stays strictly below the survival-discounted
//! threshold is retained. Valid for any detector, any stopping time.

use super::LocalizeError;
use crate::eprocesses::{backward_eval, forward_eval, Direction, EProcessError, EProcessFamily, EProcessSpec};
use crate::survival::{SurvivalCurve, SurvivalKind};
use crate::util::{log_sum_exp, LN_2};
use serde::{Deserialize, Serialize};

/// Forward and backward e-process families making up the two-sided
/// localization statistic. The forward side measures pre-looking evidence
/// after the candidate (it grows under the pre distribution), the backward
/// side post-looking evidence before the estimate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EProcessPair {
    pub forward: EProcessFamily,
    pub backward: EProcessFamily,
}

/// Which distribution calibrates the survival curve and therefore the
/// threshold. The set construction is identical in all three; the mode is
/// carried for configuration and reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UniversalMode {
    /// Calibrated under the known pre-change distribution.
    KnownPre,
    /// Calibrated under the least favorable pre-change distribution.
    LfdPre,
    /// False-alarm-probability variant: no survival discount (unit curve).
    Pfa,
}

/// One direction of the statistic with per-observation cumulative factors
/// where the family allows it; segment evaluations are then O(1) (or O(k)
/// across k mixture atoms), with the window-dependent plug-in families
/// falling back to direct evaluation.
enum DirCache {
    /// cum[i] = sum of the first i per-observation log factors.
    Cum(Vec<f64>),
    /// Per-atom cumulative log ratios plus log weights.
    Mixture { cums: Vec<Vec<f64>>, log_w: Vec<f64> },
    PerEval,
}

fn build_cache(
    family: &EProcessFamily,
    direction: Direction,
    data: &[f64],
) -> Result<DirCache, EProcessError> {
    let per_obs = |terms: Vec<f64>| -> DirCache {
        let mut cum = Vec::with_capacity(terms.len() + 1);
        cum.push(0.0);
        let mut acc = 0.0;
        for t in terms {
            acc += t;
            cum.push(acc);
        }
        DirCache::Cum(cum)
    };
    Ok(match family {
        EProcessFamily::LikelihoodRatio { num, den } => {
            let mut terms = Vec::with_capacity(data.len());
            let sequential = num.is_sequential() || den.is_sequential();
            for (idx, &x) in data.iter().enumerate() {
                let v = if sequential {
                    if idx == 0 {
                        // shared initial distribution cancels
                        0.0
                    } else {
                        let prev = Some(data[idx - 1]);
                        num.log_density_given(prev, x).map_err(EProcessError::BadObservation)?
                            - den.log_density_given(prev, x).map_err(EProcessError::BadObservation)?
                    }
                } else {
                    num.log_density(x).map_err(EProcessError::BadObservation)?
                        - den.log_density(x).map_err(EProcessError::BadObservation)?
                };
                terms.push(v);
            }
            per_obs(terms)
        }
        EProcessFamily::DiscreteMixture { atoms, weights, family, den_param } => {
            let mut cums = Vec::with_capacity(atoms.len());
            for &atom in atoms {
                let mut cum = Vec::with_capacity(data.len() + 1);
                cum.push(0.0);
                let mut acc = 0.0;
                for &x in data {
                    acc += family.log_lr(atom, *den_param, x);
                    cum.push(acc);
                }
                cums.push(cum);
            }
            DirCache::Mixture { cums, log_w: weights.iter().map(|w| w.ln()).collect() }
        }
        EProcessFamily::NumeraireBoundedMean { mu } => {
            let lambda = crate::eprocesses::numeraire_lambda_star(*mu)?.lambda_star;
            let mut terms = Vec::with_capacity(data.len());
            for &x in data {
                if !(0.0..=1.0).contains(&x) {
                    return Err(EProcessError::BadObservation(
                        crate::models::ModelError::OutOfDomain { kind: "numeraire", x },
                    ));
                }
                terms.push((1.0 + lambda * (x - mu)).ln());
            }
            per_obs(terms)
        }
        EProcessFamily::HuberLfd { pre, post, clip_lo, clip_hi } => {
            let mut terms = Vec::with_capacity(data.len());
            for &x in data {
                let llr = post.log_density(x).map_err(EProcessError::BadObservation)?
                    - pre.log_density(x).map_err(EProcessError::BadObservation)?;
                let pi = llr.exp().clamp(*clip_lo, *clip_hi);
                // forward bets against the clipped ratio, backward on it
                terms.push(match direction {
                    Direction::Forward => -pi.ln(),
                    Direction::Backward => pi.ln(),
                });
            }
            per_obs(terms)
        }
        EProcessFamily::HistogramPlugin { .. } | EProcessFamily::SubgaussianPlugin { .. } => {
            DirCache::PerEval
        }
    })
}

/// Cached evaluator for the two-sided statistic over all candidates of one
/// observed path.
pub struct UniversalEvaluator<'a> {
    data: &'a [f64],
    pair: &'a EProcessPair,
    forward: DirCache,
    backward: DirCache,
}

impl<'a> UniversalEvaluator<'a> {
    pub fn new(pair: &'a EProcessPair, data: &'a [f64]) -> Result<Self, EProcessError> {
        Ok(UniversalEvaluator {
            data,
            pair,
            forward: build_cache(&pair.forward, Direction::Forward, data)?,
            backward: build_cache(&pair.backward, Direction::Backward, data)?,
        })
    }

    /// log of the forward process anchored at t evaluated at n (segment
    /// t..=n, requires t <= n).
    pub fn forward_log(&self, t: usize, n: usize) -> Result<f64, EProcessError> {
        match &self.forward {
            DirCache::Cum(cum) => Ok(cum[n] - cum[t - 1]),
            DirCache::Mixture { cums, log_w } => {
                let vals: Vec<f64> = cums
                    .iter()
                    .zip(log_w)
                    .map(|(c, lw)| lw + c[n] - c[t - 1])
                    .collect();
                Ok(log_sum_exp(&vals))
            }
            DirCache::PerEval => {
                let spec = EProcessSpec {
                    family: self.pair.forward.clone(),
                    direction: Direction::Forward,
                    anchor: t,
                };
                forward_eval(&spec, self.data, n)
            }
        }
    }

    /// log of the backward process anchored at t evaluated at n (segment
    /// n..=t-1, requires n <= t - 1).
    pub fn backward_log(&self, t: usize, n: usize) -> Result<f64, EProcessError> {
        match &self.backward {
            DirCache::Cum(cum) => Ok(cum[t - 1] - cum[n - 1]),
            DirCache::Mixture { cums, log_w } => {
                let vals: Vec<f64> = cums
                    .iter()
                    .zip(log_w)
                    .map(|(c, lw)| lw + c[t - 1] - c[n - 1])
                    .collect();
                Ok(log_sum_exp(&vals))
            }
            DirCache::PerEval => {
                let spec = EProcessSpec {
                    family: self.pair.backward.clone(),
                    direction: Direction::Backward,
                    anchor: t,
                };
                backward_eval(&spec, self.data, n)
            }
        }
    }

    /// The two-sided localization statistic at candidate t given the point
    /// estimate: forward evidence over t..t_hat-1 when t precedes the
    /// estimate, backward evidence over t_hat..t-1 when it follows, zero at
    /// the estimate itself. Log scale.
    pub fn statistic(&self, t: usize, t_hat: usize) -> Result<f64, EProcessError> {
        use std::cmp::Ordering;
        match t.cmp(&t_hat) {
            Ordering::Equal => Ok(0.0),
            Ordering::Less => self.forward_log(t, t_hat - 1),
            Ordering::Greater => self.backward_log(t, t_hat),
        }
    }
}

/// Output of a confidence-set construction for the change time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LocalizeOutput {
    /// Accepted candidate times, ascending.
    pub accepted: Vec<usize>,
    pub t_hat: usize,
    /// Statistic per candidate t = 1..=tau (log scale).
    pub statistics: Vec<f64>,
    /// Acceptance thresholds per candidate (log scale).
    pub thresholds: Vec<f64>,
}

/// Universal confidence set: accept t iff the statistic is strictly below
/// log(2 / (alpha r_t)). The survival curve encodes the calibration mode
/// (pass the unit curve for the false-alarm-probability variant).
pub fn universal_set(
    pair: &EProcessPair,
    data: &[f64],
    tau: usize,
    t_hat: usize,
    alpha: f64,
    survival: &SurvivalCurve,
) -> Result<LocalizeOutput, LocalizeError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(LocalizeError::BadInput(format!("alpha must be in (0,1), got {alpha}")));
    }
    if tau == 0 || tau > data.len() || t_hat == 0 || t_hat > tau {
        return Err(LocalizeError::BadInput(format!(
            "need 1 <= t_hat <= tau <= data length, got t_hat={t_hat} tau={tau} len={}",
            data.len()
        )));
    }
    if survival.len() < tau {
        return Err(LocalizeError::BadInput(format!(
            "survival curve of length {} is shorter than tau = {tau}",
            survival.len()
        )));
    }
    let eval = UniversalEvaluator::new(pair, data).map_err(LocalizeError::EProcess)?;
    let mut accepted = Vec::new();
    let mut statistics = Vec::with_capacity(tau);
    let mut thresholds = Vec::with_capacity(tau);
    for t in 1..=tau {
        let r = survival.at(t);
        if r <= 0.0 {
            // only the plain estimator can reach zero; the positive
            // estimators make the threshold well defined everywhere
            debug_assert!(matches!(survival.kind, SurvivalKind::Plain));
            return Err(LocalizeError::ZeroSurvival { t });
        }
        let m = eval.statistic(t, t_hat).map_err(LocalizeError::EProcess)?;
        let threshold = LN_2 - (alpha * r).ln();
        if m < threshold {
            accepted.push(t);
        }
        statistics.push(m);
        thresholds.push(threshold);
    }
    Ok(LocalizeOutput { accepted, t_hat, statistics, thresholds })
}
