//! Anchored e-processes: nonnegative processes with expectation at most one
//! under the relevant null, evaluated over forward segments [t, n] or backward
//! segments [n, t-1] relative to an anchor t.
//!
//! The plug-in families estimate their per-step predictive from observations
//! strictly inside the already-processed part of the segment (earlier indices
//! when running forward, later indices when running backward), never from the
//! observation being scored. This predictability is what makes them valid,
//! and is pinned by tests that perturb observations outside the window.

use crate::detectors::MeanFamily;
use crate::models::{Model, ModelError};
use crate::util::log_sum_exp;
use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum EProcessError {
    WrongDirection { expected: Direction },
    /// Evaluation indices do not form a valid segment for this direction.
    BadSegment { anchor: usize, n: usize, len: usize },
    BadObservation(ModelError),
    InvalidSpec(String),
    /// Root solve failed (no sign change in the search interval).
    NoRoot,
}

impl fmt::Display for EProcessError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EProcessError::WrongDirection { expected } => {
                write!(f, "e-process direction mismatch (expected {expected:?})")
            }
            EProcessError::BadSegment { anchor, n, len } => {
                write!(f, "invalid segment: anchor {anchor}, n {n}, data length {len}")
            }
            EProcessError::BadObservation(e) => write!(f, "bad observation: {e}"),
            EProcessError::InvalidSpec(s) => write!(f, "invalid e-process spec: {s}"),
            EProcessError::NoRoot => write!(f, "root solve failed"),
        }
    }
}

impl std::error::Error for EProcessError {}

impl From<ModelError> for EProcessError {
    fn from(e: ModelError) -> Self {
        EProcessError::BadObservation(e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forward,
    Backward,
}

/// E-process families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EProcessFamily {
    /// prod num(x_i) / den(x_i) over the segment.
    LikelihoodRatio { num: Model, den: Model },
    /// sum_k w_k prod f_{atom_k}(x_i) / f_den(x_i).
    DiscreteMixture {
        atoms: Vec<f64>,
        weights: Vec<f64>,
        family: MeanFamily,
        den_param: f64,
    },
    /// prod (1 + lambda* (x_i - mu)) for [0,1]-valued data with null mean mu;
    /// lambda* is the numeraire growth rate solved from the one-sided
    /// boundary condition.
    NumeraireBoundedMean { mu: f64 },
    /// prod p_hat(x_i) / (1/bins) with Laplace-smoothed histogram predictives
    /// estimated inside the processed part of the segment. `literal_window`
    /// switches the backward window to the as-published indexing.
    HistogramPlugin { bins: usize, literal_window: bool },
    /// Scaled-bet plug-in for sub-Gaussian mean classes. Forward (post
    /// class, mean at most 0): factors exp(lam_i x_i - lam_i^2 / 2) with
    /// lam_i = max(boundary, running segment mean). Backward (pre class,
    /// mean at least boundary): factors exp(nu_i (x_i - boundary) -
    /// nu_i^2 / 2) with nu_i = min(0, running segment mean) - boundary.
    SubgaussianPlugin { boundary: f64 },
    /// Clipped likelihood ratio pi = clamp(f_post / f_pre, clip_lo, clip_hi):
    /// forward uses 1/pi (a nonnegative supermartingale under the
    /// contamination-neighborhood null via its least favorable distribution),
    /// backward uses pi.
    HuberLfd { pre: Model, post: Model, clip_lo: f64, clip_hi: f64 },
}

/// An e-process with its direction and anchor time t (1-based).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EProcessSpec {
    pub family: EProcessFamily,
    pub direction: Direction,
    pub anchor: usize,
}

/// Solution of the numeraire boundary equation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NumeraireSolution {
    pub lambda_star: f64,
    /// |g(lambda_star)| at the returned root.
    pub residual: f64,
}

/// Solve g(lambda) = e^lambda (1 - lambda mu) - (1 + lambda (1 - mu)) = 0 for
/// the positive root in (0, 1/mu). Requires 0 < mu < 1/2 (the root exists and
/// the factors 1 + lambda (x - mu) stay positive on [0,1]).
pub fn numeraire_lambda_star(mu: f64) -> Result<NumeraireSolution, EProcessError> {
    if !(0.0 < mu && mu < 0.5) {
        return Err(EProcessError::InvalidSpec(format!(
            "numeraire null mean {mu} outside (0, 0.5)"
        )));
    }
    let g = |l: f64| l.exp() * (1.0 - l * mu) - (1.0 + l * (1.0 - mu));
    let hi = 1.0 / mu - 1e-9;
    let root = crate::util::scan_and_bisect(g, 1e-6, hi, 512, 1e-13)
        .ok_or(EProcessError::NoRoot)?;
    let residual = g(root).abs();
    if residual > 1e-10 {
        return Err(EProcessError::NoRoot);
    }
    Ok(NumeraireSolution { lambda_star: root, residual })
}

fn clamp_llr(pre: &Model, post: &Model, lo: f64, hi: f64, x: f64) -> Result<f64, EProcessError> {
    let llr = post.log_density(x)? - pre.log_density(x)?;
    Ok(llr.clamp(lo.ln(), hi.ln()))
}

/// Log value of the forward process at time n >= anchor: the product over
/// i in [anchor, n] of the family's factors. `data` is the full observed
/// prefix (1-based indexing maps x_i to data[i-1]); sequential factors may
/// look at data[anchor-2] for the entering history.
pub fn forward_eval(spec: &EProcessSpec, data: &[f64], n: usize) -> Result<f64, EProcessError> {
    if spec.direction != Direction::Forward {
        return Err(EProcessError::WrongDirection { expected: Direction::Forward });
    }
    let t = spec.anchor;
    if t < 1 || n < t || n > data.len() {
        return Err(EProcessError::BadSegment { anchor: t, n, len: data.len() });
    }
    match &spec.family {
        EProcessFamily::LikelihoodRatio { num, den } => {
            let mut acc = 0.0;
            for i in t..=n {
                let prev = if num.is_sequential() && i >= 2 { Some(data[i - 2]) } else { None };
                acc += num.log_density_given(prev, data[i - 1])?
                    - den.log_density_given(prev, data[i - 1])?;
            }
            Ok(acc)
        }
        EProcessFamily::DiscreteMixture { atoms, weights, family, den_param } => {
            let mut per_atom: Vec<f64> = weights.iter().map(|w| w.ln()).collect();
            for i in t..=n {
                for (acc, &atom) in per_atom.iter_mut().zip(atoms) {
                    *acc += family.log_lr(atom, *den_param, data[i - 1]);
                }
            }
            Ok(log_sum_exp(&per_atom))
        }
        EProcessFamily::NumeraireBoundedMean { mu } => {
            let lambda = numeraire_lambda_star(*mu)?.lambda_star;
            let mut acc = 0.0;
            for i in t..=n {
                let x = data[i - 1];
                if !(0.0..=1.0).contains(&x) {
                    return Err(EProcessError::BadObservation(ModelError::OutOfDomain {
                        kind: "numeraire_bounded_mean",
                        x,
                    }));
                }
                acc += (1.0 + lambda * (x - mu)).ln();
            }
            Ok(acc)
        }
        EProcessFamily::HistogramPlugin { bins, .. } => {
            // scored against the uniform base 1/bins; window {anchor .. i-1}
            let b = *bins;
            let mut counts = vec![0u32; b];
            let mut acc = 0.0;
            for (len, i) in (t..=n).enumerate() {
                let bin = hist_bin(data[i - 1], b);
                let p_hat = (1.0 + f64::from(counts[bin])) / (b as f64 + len as f64);
                acc += (p_hat * b as f64).ln();
                counts[bin] += 1;
            }
            Ok(acc)
        }
        EProcessFamily::SubgaussianPlugin { boundary } => {
            let mut sum = 0.0;
            let mut acc = 0.0;
            for (len, i) in (t..=n).enumerate() {
                let seg_mean = if len == 0 { 0.0 } else { sum / len as f64 };
                let lam = seg_mean.max(*boundary);
                let x = data[i - 1];
                acc += lam * x - 0.5 * lam * lam;
                sum += x;
            }
            Ok(acc)
        }
        EProcessFamily::HuberLfd { pre, post, clip_lo, clip_hi } => {
            let mut acc = 0.0;
            for i in t..=n {
                acc -= clamp_llr(pre, post, *clip_lo, *clip_hi, data[i - 1])?;
            }
            Ok(acc)
        }
    }
}

/// Log value of the backward process at time n < anchor: the product over
/// i in [n, anchor-1], processed from anchor-1 down to n. Plug-in families
/// estimate from already-processed (later-index) observations only.
pub fn backward_eval(spec: &EProcessSpec, data: &[f64], n: usize) -> Result<f64, EProcessError> {
    if spec.direction != Direction::Backward {
        return Err(EProcessError::WrongDirection { expected: Direction::Backward });
    }
    let t = spec.anchor;
    if n < 1 || n >= t || t > data.len() + 1 {
        return Err(EProcessError::BadSegment { anchor: t, n, len: data.len() });
    }
    match &spec.family {
        EProcessFamily::LikelihoodRatio { num, den } => {
            let mut acc = 0.0;
            for i in n..t {
                let prev = if num.is_sequential() && i >= 2 { Some(data[i - 2]) } else { None };
                acc += num.log_density_given(prev, data[i - 1])?
                    - den.log_density_given(prev, data[i - 1])?;
            }
            Ok(acc)
        }
        EProcessFamily::DiscreteMixture { atoms, weights, family, den_param } => {
            let mut per_atom: Vec<f64> = weights.iter().map(|w| w.ln()).collect();
            for i in n..t {
                for (acc, &atom) in per_atom.iter_mut().zip(atoms) {
                    *acc += family.log_lr(atom, *den_param, data[i - 1]);
                }
            }
            Ok(log_sum_exp(&per_atom))
        }
        EProcessFamily::NumeraireBoundedMean { mu } => {
            let lambda = numeraire_lambda_star(*mu)?.lambda_star;
            let mut acc = 0.0;
            for i in n..t {
                let x = data[i - 1];
                if !(0.0..=1.0).contains(&x) {
                    return Err(EProcessError::BadObservation(ModelError::OutOfDomain {
                        kind: "numeraire_bounded_mean",
                        x,
                    }));
                }
                acc += (1.0 + lambda * (x - mu)).ln();
            }
            Ok(acc)
        }
        EProcessFamily::HistogramPlugin { bins, literal_window } => {
            let b = *bins;
            let mut acc = 0.0;
            if !*literal_window {
                // default: window {i+1 .. t-1}, denominator bins + (t-1-i)
                let mut counts = vec![0u32; b];
                let mut seen = 0u32;
                for i in (n..t).rev() {
                    let bin = hist_bin(data[i - 1], b);
                    let p_hat = (1.0 + f64::from(counts[bin])) / (b as f64 + f64::from(seen));
                    acc += (p_hat * b as f64).ln();
                    counts[bin] += 1;
                    seen += 1;
                }
            } else {
                // as-published variant: window {i-1 .. t-1} clamped to valid
                // indices, denominator (bins - 1) + (t - i) kept as written
                for i in (n..t).rev() {
                    let lo = i.saturating_sub(1).max(1);
                    let bin = hist_bin(data[i - 1], b);
                    let cnt = (lo..t)
                        .filter(|&j| hist_bin(data[j - 1], b) == bin)
                        .count() as f64;
                    let p_hat = (1.0 + cnt) / ((b as f64 - 1.0) + (t - i) as f64);
                    acc += (p_hat * b as f64).ln();
                }
            }
            Ok(acc)
        }
        EProcessFamily::SubgaussianPlugin { boundary } => {
            // nu_i = min(0, mean of {i+1 .. t-1}) - boundary; the exponent
            // is centered at the boundary so each factor has mean exactly 1
            // at the pre-class boundary and at most 1 above it
            let mut sum = 0.0;
            let mut cnt = 0usize;
            let mut acc = 0.0;
            for i in (n..t).rev() {
                let seg_mean = if cnt == 0 { 0.0 } else { sum / cnt as f64 };
                let nu = seg_mean.min(0.0) - boundary;
                let x = data[i - 1];
                acc += nu * (x - boundary) - 0.5 * nu * nu;
                sum += x;
                cnt += 1;
            }
            Ok(acc)
        }
        EProcessFamily::HuberLfd { pre, post, clip_lo, clip_hi } => {
            let mut acc = 0.0;
            for i in n..t {
                acc += clamp_llr(pre, post, *clip_lo, *clip_hi, data[i - 1])?;
            }
            Ok(acc)
        }
    }
}

fn hist_bin(x: f64, bins: usize) -> usize {
    let i = (x * bins as f64).floor() as isize;
    i.clamp(0, bins as isize - 1) as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Model;

    fn gauss(mean: f64) -> Model {
        Model::Gaussian { mean, sd: 1.0 }
    }

    #[test]
    fn lambda_star_solves_boundary_equation() {
        let sol = numeraire_lambda_star(0.25).unwrap();
        assert!(sol.residual <= 1e-10);
        assert!((sol.lambda_star - 3.59).abs() < 0.01);
        // smaller null mean allows a larger growth rate
        let hi = numeraire_lambda_star(0.45).unwrap();
        assert!(sol.lambda_star > hi.lambda_star);
        // factors stay positive at both endpoints of [0,1]
        assert!(1.0 - sol.lambda_star * 0.25 > 0.0);
        assert!(numeraire_lambda_star(0.6).is_err());
    }

    #[test]
    fn forward_and_backward_respect_direction_and_segments() {
        let spec = EProcessSpec {
            family: EProcessFamily::LikelihoodRatio { num: gauss(0.0), den: gauss(1.0) },
            direction: Direction::Forward,
            anchor: 3,
        };
        let data = vec![0.1, 0.2, 0.3, 0.4, 0.5];
        assert!(forward_eval(&spec, &data, 4).is_ok());
        assert!(forward_eval(&spec, &data, 2).is_err());
        assert!(backward_eval(&spec, &data, 1).is_err()); // wrong direction
        let bspec = EProcessSpec { direction: Direction::Backward, ..spec };
        assert!(backward_eval(&bspec, &data, 2).is_ok());
        assert!(backward_eval(&bspec, &data, 3).is_err()); // n must be < anchor
    }

    #[test]
    fn swapping_numerator_and_denominator_negates_log_value() {
        let data: Vec<f64> = vec![0.3, -0.7, 1.2, 0.05, 2.0];
        let fwd = EProcessSpec {
            family: EProcessFamily::LikelihoodRatio { num: gauss(0.0), den: gauss(1.0) },
            direction: Direction::Forward,
            anchor: 2,
        };
        let swapped = EProcessSpec {
            family: EProcessFamily::LikelihoodRatio { num: gauss(1.0), den: gauss(0.0) },
            direction: Direction::Forward,
            anchor: 2,
        };
        for n in 2..=5 {
            let a = forward_eval(&fwd, &data, n).unwrap();
            let b = forward_eval(&swapped, &data, n).unwrap();
            assert!((a + b).abs() < 1e-10);
        }
    }

    #[test]
    fn histogram_plugin_never_peeks_at_scored_or_outside_observations() {
        let spec = EProcessSpec {
            family: EProcessFamily::HistogramPlugin { bins: 10, literal_window: false },
            direction: Direction::Backward,
            anchor: 6,
        };
        let data = vec![0.05, 0.15, 0.25, 0.35, 0.45, 0.55, 0.65];
        let v = backward_eval(&spec, &data, 2).unwrap();
        // perturbing observations outside [2, 5] must not change the value
        let mut other = data.clone();
        other[0] = 0.99; // index 1 < n
        other[5] = 0.01; // index 6 >= anchor
        other[6] = 0.42;
        let w = backward_eval(&spec, &other, 2).unwrap();
        assert_eq!(v.to_bits(), w.to_bits());
    }

    #[test]
    fn backward_histogram_first_step_scores_at_base_rate() {
        // single-element segment {t-1}: empty window, p_hat = 1/bins, factor 1
        let spec = EProcessSpec {
            family: EProcessFamily::HistogramPlugin { bins: 10, literal_window: false },
            direction: Direction::Backward,
            anchor: 4,
        };
        let data = vec![0.11, 0.52, 0.93, 0.2];
        let v = backward_eval(&spec, &data, 3).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn subgaussian_plugin_uses_only_later_observations_backward() {
        let spec = EProcessSpec {
            family: EProcessFamily::SubgaussianPlugin { boundary: 0.5 },
            direction: Direction::Backward,
            anchor: 5,
        };
        let data = vec![9.0, 1.0, 2.0, -1.0, 7.0];
        // segment {2,3,4} processed 4,3,2: nu_4 = -0.5; nu_3 = min(0,-1)-0.5;
        // nu_2 = min(0, mean(2,-1)) - 0.5 = -0.5
        let v = backward_eval(&spec, &data, 2).unwrap();
        let nu4 = -0.5_f64;
        let nu3 = -1.5_f64;
        let nu2 = -0.5_f64;
        // each exponent is nu * (x - boundary) - nu^2 / 2 with boundary 0.5
        let expect = nu4 * (-1.0 - 0.5) - 0.5 * nu4 * nu4 + nu3 * (2.0 - 0.5) - 0.5 * nu3 * nu3
            + nu2 * (1.0 - 0.5)
            - 0.5 * nu2 * nu2;
        assert!((v - expect).abs() < 1e-12);
    }
}
