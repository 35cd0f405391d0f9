//! No-change survival curves r_t ~ P(tau >= t): the data-free calibration
//! input of the confidence sets. Estimated by simulating the detector on
//! streams drawn from the calibration (pre-change) distribution, truncated at
//! the observed stopping time; truncated runs count as surviving through the
//! truncation point.

use crate::detectors::{run_until_stop, DetectorError, DetectorSpec, StopOutcome};
use crate::models::{ChangeIndex, Model, PathSampler};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SurvivalKind {
    /// Empirical fraction of survivors; can reach zero (rejected by the
    /// threshold rule downstream; prefer the other estimators).
    Plain,
    /// (1 + survivors) / (N + 1); strictly positive, the default.
    Asymptotic,
    /// Negative-binomial stopping: per t, simulate until r survivors are
    /// seen, estimate (r - 1) / (N_t - 1). Unbiased and strictly positive;
    /// r must be at least 2.
    NegativeBinomial { r: usize },
}

/// Estimated survival curve over t = 1..=tau_cap.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SurvivalCurve {
    /// values[t - 1] estimates P(tau >= t).
    pub values: Vec<f64>,
    pub kind: SurvivalKind,
    /// Simulations consumed (the final pool size for negative-binomial).
    pub n_sims: usize,
    /// Set when the negative-binomial pool hit its cap before finding the
    /// requested survivors; the affected tail uses a fallback estimate.
    pub flagged: bool,
}

impl SurvivalCurve {
    /// r_t (t is 1-based and must be within the curve).
    #[must_use]
    pub fn at(&self, t: usize) -> f64 {
        self.values[t - 1]
    }

    #[must_use]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    #[must_use]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// The trivial curve r == 1, used by the false-alarm-probability variants
    /// whose thresholds do not discount by survival.
    #[must_use]
    pub fn unit(tau_cap: usize) -> Self {
        SurvivalCurve {
            values: vec![1.0; tau_cap],
            kind: SurvivalKind::Plain,
            n_sims: 0,
            flagged: false,
        }
    }
}

/// Hard ceiling on the negative-binomial simulation pool.
const NB_POOL_CAP: usize = 200_000;

/// Generic driver: `sim_stop(j)` returns the j-th simulated stopping time,
/// already truncated so that any value > tau_cap means "survived through
/// tau_cap" (use usize::MAX for censored runs).
pub fn estimate_survival_from(
    mut sim_stop: impl FnMut(u64) -> usize,
    tau_cap: usize,
    n: usize,
    kind: SurvivalKind,
) -> SurvivalCurve {
    assert!(tau_cap >= 1, "survival curve needs tau_cap >= 1");
    match kind {
        SurvivalKind::Plain | SurvivalKind::Asymptotic => {
            let stops: Vec<usize> = (0..n as u64).map(&mut sim_stop).collect();
            let values = (1..=tau_cap)
                .map(|t| {
                    let s = stops.iter().filter(|&&tau| tau >= t).count();
                    match kind {
                        SurvivalKind::Plain => s as f64 / n as f64,
                        _ => (1.0 + s as f64) / (n as f64 + 1.0),
                    }
                })
                .collect();
            SurvivalCurve { values, kind, n_sims: n, flagged: false }
        }
        SurvivalKind::NegativeBinomial { r } => {
            assert!(r >= 2, "negative-binomial estimator needs r >= 2");
            let mut pool: Vec<usize> = Vec::new();
            let mut flagged = false;
            let mut values = Vec::with_capacity(tau_cap);
            for t in 1..=tau_cap {
                // N_t = 1-based pool index of the r-th survivor at t; the
                // survivor sets shrink as t grows, so N_t is nondecreasing
                // and the pool is shared across t.
                let mut survivors = 0usize;
                let mut n_t = None;
                let mut idx = 0usize;
                loop {
                    if idx == pool.len() {
                        if pool.len() >= NB_POOL_CAP {
                            break;
                        }
                        pool.push(sim_stop(pool.len() as u64));
                    }
                    if pool[idx] >= t {
                        survivors += 1;
                        if survivors == r {
                            n_t = Some(idx + 1);
                            break;
                        }
                    }
                    idx += 1;
                }
                let v = match n_t {
                    Some(n_t) => (r as f64 - 1.0) / (n_t as f64 - 1.0),
                    None => {
                        flagged = true;
                        // fallback keeps positivity and monotonicity
                        (1.0 + survivors as f64) / (pool.len() as f64 + 1.0)
                    }
                };
                values.push(v);
            }
            SurvivalCurve { values, kind, n_sims: pool.len(), flagged }
        }
    }
}

/// Simulate the detector on streams from `calibration_model` (no change) and
/// estimate the survival curve. Simulation j draws from the disjoint stream
/// (master_seed, "survival", j), so calibration noise never collides with the
/// observation path or the adaptive simulations.
pub fn estimate_survival(
    calibration_model: &Model,
    spec: &DetectorSpec,
    tau_cap: usize,
    n: usize,
    kind: SurvivalKind,
    master_seed: u64,
) -> Result<SurvivalCurve, DetectorError> {
    spec.validate()?;
    calibration_model.validate().map_err(DetectorError::BadObservation)?;
    let sim = |j: u64| -> Result<usize, DetectorError> {
        let rng = crate::rng::stream(master_seed, "survival", j);
        let mut sampler =
            PathSampler::new(calibration_model, calibration_model, ChangeIndex::Infinite, rng);
        let (outcome, _) = run_until_stop(spec, tau_cap, |_| sampler.draw())?;
        Ok(match outcome {
            StopOutcome::StoppedAt(t) => t,
            StopOutcome::Censored(_) => usize::MAX,
        })
    };
    match kind {
        SurvivalKind::Plain | SurvivalKind::Asymptotic => {
            // embarrassingly parallel and order-deterministic by index
            let stops: Vec<Result<usize, DetectorError>> =
                (0..n as u64).into_par_iter().map(sim).collect();
            let mut resolved = Vec::with_capacity(n);
            for s in stops {
                resolved.push(s?);
            }
            let mut it = resolved.into_iter();
            Ok(estimate_survival_from(move |_| it.next().expect("n sims"), tau_cap, n, kind))
        }
        SurvivalKind::NegativeBinomial { .. } => {
            let mut err = None;
            let curve = estimate_survival_from(
                |j| match sim(j) {
                    Ok(v) => v,
                    Err(e) => {
                        err.get_or_insert(e);
                        usize::MAX
                    }
                },
                tau_cap,
                n,
                kind,
            );
            match err {
                Some(e) => Err(e),
                None => Ok(curve),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_values_match_contract() {
        // 5 sims, all surviving through t = 3
        let c = estimate_survival_from(|_| 10, 3, 5, SurvivalKind::Asymptotic);
        assert_eq!(c.at(3), 1.0);
        // none survive t = 3
        let c = estimate_survival_from(|_| 1, 3, 5, SurvivalKind::Asymptotic);
        assert!((c.at(3) - 1.0 / 6.0).abs() < 1e-12);
        let c = estimate_survival_from(|_| 1, 3, 5, SurvivalKind::Plain);
        assert_eq!(c.at(3), 0.0);
        // r = 2 with the second survivor arriving as the third sim
        let stops = [5usize, 1, 5, 1, 5];
        let mut it = stops.iter().copied().cycle();
        let c = estimate_survival_from(
            move |_| it.next().unwrap(),
            2,
            0,
            SurvivalKind::NegativeBinomial { r: 2 },
        );
        assert!((c.at(2) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn curves_are_nonincreasing_in_t() {
        let stops = [3usize, 7, 2, 9, 4, 4, 1, 6, 8, 2];
        for kind in [
            SurvivalKind::Plain,
            SurvivalKind::Asymptotic,
            SurvivalKind::NegativeBinomial { r: 3 },
        ] {
            let mut it = stops.iter().copied().cycle();
            let c = estimate_survival_from(move |_| it.next().unwrap(), 9, 10, kind);
            for t in 2..=9 {
                assert!(
                    c.at(t) <= c.at(t - 1) + 1e-12,
                    "{kind:?} not monotone at t = {t}"
                );
            }
        }
    }

    #[test]
    fn censored_runs_survive_through_cap() {
        let c = estimate_survival_from(|_| usize::MAX, 5, 4, SurvivalKind::Plain);
        assert!(c.values.iter().all(|&v| v == 1.0));
    }
}
