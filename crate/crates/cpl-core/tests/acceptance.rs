//! End-to-end acceptance checks at benchmark scale: coverage, set size,
//! calibration, and bound guarantees, one criterion per test. Replication
//! counts and tolerances are fixed so every check is deterministic for a
//! given seed while leaving room for Monte Carlo error.

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use cpl_core::bounds::{length_bound, BoundMode, HardnessProfile};
use cpl_core::confseq::poisson_cs;
use cpl_core::detectors::{run_until_stop, DetectorSpec, MeanFamily, StopOutcome};
use cpl_core::eprocesses::EProcessFamily;
use cpl_core::harness::{
    run_experiment, ExperimentConfig, ExperimentResult, SettingId, SummaryRow,
};
use cpl_core::localize::adaptive::{
    gaussian_noise_path, rank_quantile_accept, sup_bound_gaussian_known_pre,
    sup_bound_gaussian_profile_both, TruncatedStat,
};
use cpl_core::localize::universal::{EProcessPair, UniversalEvaluator};
use cpl_core::localize::{estimate_known_lr, glr_known_pre, glr_profile_both};
use cpl_core::models::{poisson_thin, ChangeIndex, Model, PathSampler};
use cpl_core::rng::stream;
use cpl_core::survival::{estimate_survival, SurvivalKind};
use cpl_core::util::{
    adaptive_simpson, chi_square_pvalue, ks_pvalue, ks_statistic, ln_gamma, normal_cdf,
};
use rand::Rng;
use rayon::prelude::*;

fn gauss(mean: f64) -> Model {
    Model::Gaussian { mean, sd: 1.0 }
}

fn row<'a>(result: &'a ExperimentResult, method: &str) -> &'a SummaryRow {
    result
        .summaries
        .iter()
        .find(|r| r.method == method)
        .unwrap_or_else(|| panic!("no summary row for method {method}"))
}

struct TimedResult {
    result: ExperimentResult,
    elapsed: Duration,
}

/// The 200-run Gaussian 0 -> 1 benchmark (change at 100, CUSUM threshold
/// 1000, level 0.05), shared by the coverage test and the bound test.
fn gaussian_benchmark() -> &'static TimedResult {
    static CELL: OnceLock<TimedResult> = OnceLock::new();
    CELL.get_or_init(|| {
        let mut cfg = ExperimentConfig::preset(SettingId::I);
        cfg.runs = Some(200);
        cfg.master_seed = 20_260_816;
        let start = Instant::now();
        let result = run_experiment(&cfg).expect("benchmark experiment runs");
        TimedResult { result, elapsed: start.elapsed() }
    })
}

// 1. Gaussian benchmark: conditional coverage, mean set size, point-estimate
//    error, and wall-clock budget at 200 replications.
#[test]
fn gaussian_benchmark_hits_coverage_size_and_error_targets() {
    let timed = gaussian_benchmark();
    let uni = row(&timed.result, "universal");
    let ada = row(&timed.result, "adaptive");

    let uni_cov = uni.conditional_coverage.expect("universal conditional runs");
    let ada_cov = ada.conditional_coverage.expect("adaptive conditional runs");
    assert!(uni_cov >= 0.93, "universal conditional coverage {uni_cov:.3} < 0.93");
    assert!(ada_cov >= 0.90, "adaptive conditional coverage {ada_cov:.3} < 0.90");

    let uni_size = uni.mean_conditional_size.expect("universal sizes");
    let ada_size = ada.mean_conditional_size.expect("adaptive sizes");
    assert!(
        (10.0..=22.0).contains(&uni_size),
        "universal mean conditional size {uni_size:.2} outside [10, 22]"
    );
    assert!(
        (8.0..=18.0).contains(&ada_size),
        "adaptive mean conditional size {ada_size:.2} outside [8, 18]"
    );

    let err = uni.mean_abs_err.expect("point-estimate errors");
    assert!(
        (1.5..=4.5).contains(&err),
        "mean |estimate - change| {err:.2} outside [1.5, 4.5]"
    );

    assert!(
        timed.elapsed < Duration::from_secs(600),
        "benchmark took {:.1}s, budget is 600s",
        timed.elapsed.as_secs_f64()
    );
}

// 2. The two-sided localization statistic evaluated at the true change time
//    clears 2/alpha with probability at most alpha (plus Monte Carlo slack).
#[test]
fn statistic_at_true_change_rarely_clears_twice_inverse_level() {
    let alpha = 0.05f64;
    let threshold = (2.0 / alpha).ln();
    let t_change = 25usize;
    let pre = gauss(0.0);
    let post = gauss(1.0);
    let spec = DetectorSpec::CusumLr { pre: pre.clone(), post: post.clone(), a: 1000.0 };
    let pair = EProcessPair {
        forward: EProcessFamily::LikelihoodRatio { num: pre.clone(), den: post.clone() },
        backward: EProcessFamily::LikelihoodRatio { num: post.clone(), den: pre.clone() },
    };
    let n_sims = 2000u64;
    let exceed: usize = (0..n_sims)
        .into_par_iter()
        .map(|j| {
            let rng = stream(0xACC2, "alarm", j);
            let mut sampler = PathSampler::new(&pre, &post, ChangeIndex::At(t_change), rng);
            let (outcome, xs) =
                run_until_stop(&spec, 5000, |_| sampler.draw()).expect("detector run");
            let tau = match outcome {
                StopOutcome::StoppedAt(t) => t,
                StopOutcome::Censored(_) => return 0,
            };
            if tau < t_change {
                // alarm before the candidate: the statistic is never formed
                return 0;
            }
            let t_hat = estimate_known_lr(&pre, &post, &xs[..tau]).expect("estimate").t_hat;
            let eval = UniversalEvaluator::new(&pair, &xs[..tau]).expect("evaluator");
            let m = eval.statistic(t_change, t_hat).expect("statistic");
            usize::from(m >= threshold)
        })
        .sum();
    let rate = exceed as f64 / n_sims as f64;
    assert!(
        rate <= 0.07,
        "exceedance rate {rate:.4} > 0.07 at threshold 2/alpha over 2000 simulations"
    );
}

// 3. The rank rule is an exact level-c test under exchangeability: its
//    rejection rate matches c to binomial error at 99 simulations per trial.
#[test]
fn rank_rule_rejects_at_its_nominal_level() {
    let trials = 2000usize;
    let b = 99usize;
    for (k, c) in [(0u64, 0.05f64), (1, 0.2)] {
        let rejections: usize = (0..trials as u64)
            .into_par_iter()
            .map(|j| {
                let mut rng = stream(0xACC3 + k, "rank", j);
                let observed = TruncatedStat::from_log(rng.random::<f64>());
                let sims: Vec<TruncatedStat> =
                    (0..b).map(|_| TruncatedStat::from_log(rng.random::<f64>())).collect();
                usize::from(!rank_quantile_accept(&sims, observed, c))
            })
            .sum();
        let rate = rejections as f64 / trials as f64;
        let se = (c * (1.0 - c) / trials as f64).sqrt();
        assert!(
            rate <= c + 3.0 * se,
            "rank rule at level {c}: rejection rate {rate:.4} > {:.4}",
            c + 3.0 * se
        );
        assert!(
            rate >= c - 3.0 * se,
            "rank rule at level {c}: rejection rate {rate:.4} < {:.4} (the rule is exact)",
            c - 3.0 * se
        );
    }
}

// 4. The plain likelihood-ratio detector at threshold 1000 false-alarms with
//    probability at most 1/1000; the empirical fraction over 2000 no-change
//    runs must stay within binomial slack of that.
#[test]
fn plain_likelihood_ratio_detector_respects_false_alarm_budget() {
    let pre = gauss(0.0);
    let spec = DetectorSpec::LrPfa { pre: pre.clone(), post: gauss(1.0), a: 1000.0 };
    let runs = 2000u64;
    let stops: usize = (0..runs)
        .into_par_iter()
        .map(|j| {
            let rng = stream(0xACC4, "pfa", j);
            let mut sampler = PathSampler::new(&pre, &pre, ChangeIndex::Infinite, rng);
            let (outcome, _) =
                run_until_stop(&spec, 5000, |_| sampler.draw()).expect("detector run");
            usize::from(matches!(outcome, StopOutcome::StoppedAt(_)))
        })
        .sum();
    let rate = stops as f64 / runs as f64;
    assert!(rate <= 0.004, "false-alarm fraction {rate} > 0.004 over 2000 runs");
}

// 5. Negative-binomial survival estimation is unbiased: on a detector whose
//    stopping time is exactly Geometric(1/2), the mean of 2000 independent
//    estimates of r_3 = 1/4 stays within two standard errors of the truth.
#[test]
fn negative_binomial_survival_estimator_is_unbiased_on_geometric_stopping() {
    // pre U[0,1], post U[0,1/2]: the likelihood ratio is 2 on x <= 1/2 and 0
    // above, so a ratio CUSUM with threshold in (1, 2] alarms exactly at the
    // first observation <= 1/2.
    let q = 0.5;
    let pre = Model::Uniform { lo: 0.0, hi: 1.0 };
    let post = Model::Uniform { lo: 0.0, hi: q };
    let spec = DetectorSpec::CusumLr { pre: pre.clone(), post, a: 1.9 };
    let t = 3usize;
    let truth = (1.0 - q).powi(t as i32 - 1);
    let reps = 2000usize;
    let estimates: Vec<f64> = (0..reps as u64)
        .into_par_iter()
        .map(|k| {
            let curve = estimate_survival(
                &pre,
                &spec,
                t,
                32,
                SurvivalKind::NegativeBinomial { r: 20 },
                0xACC5_0000 + k,
            )
            .expect("survival estimate");
            assert!(!curve.flagged, "simulation pool cap hit");
            curve.at(t)
        })
        .collect();
    let mean = estimates.iter().sum::<f64>() / reps as f64;
    let var =
        estimates.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (reps as f64 - 1.0);
    let se = (var / reps as f64).sqrt();
    assert!(
        (mean - truth).abs() <= 2.0 * se,
        "mean estimate {mean:.5} is more than 2 SE = {:.5} from the truth {truth}",
        2.0 * se
    );
}

// 6. The shared-noise and thinning couplings reproduce their target laws:
//    Kolmogorov-Smirnov for the Gaussian location coupling, chi-square for
//    Poisson thinning, 10^4 draws each.
#[test]
fn shared_noise_and_poisson_thinning_match_their_target_laws() {
    let n = 10_000usize;
    let mut draws = gaussian_noise_path(0xACC6, 0, 1.0, n);
    let d = ks_statistic(&mut draws, normal_cdf);
    let p = ks_pvalue(d, n);
    assert!(p > 0.001, "KS p-value {p:.5} <= 0.001 for the shared Gaussian noise");

    // Pois(3) thinned by 2/3 must be Pois(2); bins 0..=6 with the tail lumped
    let lambda = 3.0;
    let theta = 2.0;
    let mut rng = stream(0xACC6, "thin", 1);
    let pois = rand_distr::Poisson::new(lambda).expect("valid rate");
    let mut observed = [0.0f64; 8];
    for _ in 0..n {
        let count = rand_distr::Distribution::sample(&pois, &mut rng) as usize;
        let marks: Vec<f64> = (0..count).map(|_| rng.random::<f64>()).collect();
        let thinned = poisson_thin(count, &marks, theta / lambda).expect("ratio in [0,1]");
        observed[thinned.min(7)] += 1.0;
    }
    let mut expected = [0.0f64; 8];
    let mut cum = 0.0;
    for (k, slot) in expected.iter_mut().take(7).enumerate() {
        let pmf = (-theta + k as f64 * theta.ln() - ln_gamma(k as f64 + 1.0)).exp();
        *slot = n as f64 * pmf;
        cum += pmf;
    }
    expected[7] = n as f64 * (1.0 - cum);
    let p2 = chi_square_pvalue(&observed, &expected);
    assert!(p2 > 0.001, "chi-square p-value {p2:.5} <= 0.001 for Poisson thinning");
}

// 7. Shared-noise stopping-time brackets: for every post mean inside the
//    bracket, the coupled stopping time lies between the corner stopping
//    times. 20 brackets, 500 interior parameters each, zero violations.
#[test]
fn stopping_time_brackets_contain_every_interior_parameter() {
    let pre = gauss(0.0);
    let spec = DetectorSpec::CusumLr { pre, post: gauss(1.0), a: 100.0 };
    let cap = 4000usize;
    let violations: usize = (0..20u64)
        .into_par_iter()
        .map(|inst| {
            let mut rng = stream(0xACC7, "bracket", inst);
            let eps = gaussian_noise_path(0xACC7_7777, inst, 1.0, cap);
            let t = 1 + (rng.random::<u64>() % 30) as usize;
            let lo = 0.3 + 0.5 * rng.random::<f64>();
            let hi = lo + 0.1 + 0.9 * rng.random::<f64>();
            let tau_at = |theta: f64| -> usize {
                let (outcome, _) = run_until_stop(&spec, cap, |i| {
                    if i < t {
                        eps[i - 1]
                    } else {
                        theta + eps[i - 1]
                    }
                })
                .expect("detector run");
                match outcome {
                    StopOutcome::StoppedAt(v) => v,
                    StopOutcome::Censored(_) => cap + 1,
                }
            };
            // a larger post mean can only push the alarm earlier
            let latest = tau_at(lo);
            let earliest = tau_at(hi);
            let mut bad = 0usize;
            for _ in 0..500 {
                let theta = lo + (hi - lo) * rng.random::<f64>();
                let tau = tau_at(theta);
                if !(earliest <= tau && tau <= latest) {
                    bad += 1;
                }
            }
            bad
        })
        .sum();
    assert_eq!(violations, 0, "found {violations} bracket violations");
}

// 8. The closed-form sup bounds dominate brute-force re-evaluation on
//    parameter grids: 50 random instances, a 50-point grid for the known-pre
//    bound and a 10x10 grid for the doubly profiled bound, zero violations.
#[test]
fn closed_form_sup_bounds_dominate_grid_reevaluation() {
    let family = MeanFamily::Gaussian { sd: 1.0 };
    let violations: usize = (0..50u64)
        .into_par_iter()
        .map(|inst| {
            let mut rng = stream(0xACC8, "supgrid", inst);
            let len = 80usize;
            let eps = gaussian_noise_path(0xACC8_8888, inst, 1.0, len);
            let t = 2 + (rng.random::<u64>() % 39) as usize;
            let t_lo = t + (rng.random::<u64>() % 10) as usize;
            let t_hi = (t_lo + 5 + (rng.random::<u64>() % 25) as usize).min(len);
            let d_lo = -1.0 + rng.random::<f64>();
            let d_hi = d_lo + 0.2 + 2.0 * rng.random::<f64>();
            let mut bad = 0usize;

            let v = sup_bound_gaussian_known_pre(&eps, 1.0, t, t_lo, t_hi, d_lo, d_hi);
            for g in 0..50 {
                let delta = d_lo + (d_hi - d_lo) * g as f64 / 49.0;
                let y: Vec<f64> = (1..=t_hi)
                    .map(|i| eps[i - 1] + if i >= t { delta } else { 0.0 })
                    .collect();
                for tp in t_lo..=t_hi {
                    if glr_known_pre(&family, 0.0, &y[..tp], t) > v + 1e-9 {
                        bad += 1;
                    }
                }
            }

            let u = sup_bound_gaussian_profile_both(&eps, 1.0, t, t_lo, t_hi, d_lo, d_hi);
            for g0 in 0..10 {
                let theta0 = -1.0 + 2.0 * g0 as f64 / 9.0;
                for g1 in 0..10 {
                    let delta = d_lo + (d_hi - d_lo) * g1 as f64 / 9.0;
                    let y: Vec<f64> = (1..=t_hi)
                        .map(|i| theta0 + eps[i - 1] + if i >= t { delta } else { 0.0 })
                        .collect();
                    for tp in t_lo..=t_hi {
                        if glr_profile_both(&family, &y[..tp], t) > u + 1e-9 {
                            bad += 1;
                        }
                    }
                }
            }
            bad
        })
        .sum();
    assert_eq!(violations, 0, "{violations} grid evaluations exceeded their sup bound");
}

// 9. The analytic size bound evaluated with the observed detection delay and
//    survival probability dominates the observed mean conditional size on
//    the Gaussian benchmark.
#[test]
fn analytic_size_bound_dominates_observed_mean_size() {
    let timed = gaussian_benchmark();
    let uni = row(&timed.result, "universal");
    let observed = uni.mean_conditional_size.expect("conditional sizes");
    let delay = uni.mean_delay.expect("conditional delays");
    // runs that alarmed before the change are exactly those with tau < T
    let n = timed.result.records.len() as f64;
    let p_t = timed.result.records.iter().filter(|r| !r.false_alarm).count() as f64 / n;
    let profile = HardnessProfile::new(&gauss(0.0), &gauss(1.0)).expect("profile");
    let bound =
        length_bound(&profile, 0.05, p_t, 100, delay, BoundMode::Plain).expect("bound");
    assert!(
        bound.total >= observed,
        "size bound {:.2} < observed mean conditional size {:.2}",
        bound.total,
        observed
    );
}

// 10. Against the reflected-walk baseline on paired negative/positive means:
//     our simulation-calibrated set keeps coverage while the baseline loses
//     at least five points of it, at comparable set sizes.
#[test]
fn simulation_calibrated_set_beats_reflected_walk_baseline() {
    let mut cfg = ExperimentConfig::preset(SettingId::BaselineCompare);
    cfg.runs = Some(200);
    cfg.master_seed = 0xACCA;
    let result = run_experiment(&cfg).expect("comparison experiment runs");
    let ours = row(&result, "adaptive");
    let theirs = row(&result, "baseline");
    let ours_cov = ours.conditional_coverage.expect("conditional runs");
    let theirs_cov = theirs.conditional_coverage.expect("conditional runs");
    assert!(ours_cov >= 0.90, "adaptive conditional coverage {ours_cov:.3} < 0.90");
    assert!(
        theirs_cov <= ours_cov - 0.05,
        "baseline coverage {theirs_cov:.3} is not at least 0.05 below ours {ours_cov:.3}"
    );
    for (name, summary) in [("adaptive", ours), ("baseline", theirs)] {
        let size = summary.mean_conditional_size.expect("conditional sizes");
        assert!(
            (0.7 * 46.0..=1.3 * 48.0).contains(&size),
            "{name} mean conditional size {size:.1} outside [32.2, 62.4]"
        );
    }
}

// 11. The gamma integral behind the Poisson confidence sequence matches
//     quadrature, and the sequence is time-uniform at its nominal level over
//     500 Pois(2) streams of length 200.
#[test]
fn gamma_mixture_integral_and_poisson_cs_calibration() {
    for a in [0.5f64, 1.0, 2.0, 5.0] {
        for b in [0.5f64, 1.0, 2.0, 5.0] {
            let closed = (ln_gamma(b) - b * a.ln()).exp();
            // v = u^2 removes the v^{b-1} endpoint singularity at b = 1/2
            let umax = (400.0f64 / a).sqrt();
            let quad = adaptive_simpson(
                |u| 2.0 * u.powf(2.0 * b - 1.0) * (-a * u * u).exp(),
                0.0,
                umax,
                1e-12,
            );
            assert!(
                (closed - quad).abs() <= 1e-8 * closed.max(1.0),
                "a={a} b={b}: closed form {closed:.12e} vs quadrature {quad:.12e}"
            );
        }
    }

    let beta = 0.05;
    let streams = 500u64;
    let len = 200usize;
    let rate = 2.0;
    let model = Model::Poisson { rate };
    let misses: usize = (0..streams)
        .into_par_iter()
        .map(|j| {
            let rng = stream(0xACCB, "pois", j);
            let mut sampler = PathSampler::new(&model, &model, ChangeIndex::Infinite, rng);
            let xs: Vec<f64> = (0..len).map(|_| sampler.draw()).collect();
            let missed = (1..=len)
                .any(|n| !poisson_cs(&xs[..n], beta).expect("confidence sequence").contains(rate));
            usize::from(missed)
        })
        .sum();
    let miss_rate = misses as f64 / streams as f64;
    let budget = beta + 3.0 * (beta * (1.0 - beta) / streams as f64).sqrt();
    assert!(
        miss_rate <= budget,
        "time-uniform non-coverage {miss_rate:.4} > {budget:.4} over 500 streams"
    );
}

// 12. The two composite-pre calibration settings reproduce their reference
//     mean sizes (24.14 and 27.65) within 40% at 100 runs without losing
//     coverage.
#[test]
fn composite_pre_settings_hit_reference_coverage_and_size() {
    for (setting, target, seed) in
        [(SettingId::IV, 24.14, 0xACC_C0u64), (SettingId::V, 27.65, 0xACC_C1)]
    {
        let mut cfg = ExperimentConfig::preset(setting);
        cfg.runs = Some(100);
        cfg.master_seed = seed;
        let result = run_experiment(&cfg).expect("experiment runs");
        let uni = row(&result, "universal");
        let cov = uni.conditional_coverage.expect("conditional runs");
        let size = uni.mean_conditional_size.expect("conditional sizes");
        assert!(cov >= 0.90, "{setting:?}: conditional coverage {cov:.3} < 0.90");
        assert!(
            (0.6 * target..=1.4 * target).contains(&size),
            "{setting:?}: mean conditional size {size:.2} outside 40% of {target}"
        );
    }
}

// 13. The contamination-robust setting at eps = 0.01 reproduces its
//     reference mean size (16.74) within 40% at 100 runs without losing
//     coverage.
#[test]
fn contamination_robust_setting_hits_reference_coverage_and_size() {
    let mut cfg = ExperimentConfig::preset(SettingId::VI);
    cfg.runs = Some(100);
    cfg.master_seed = 0xACCD;
    let result = run_experiment(&cfg).expect("experiment runs");
    let uni = row(&result, "universal");
    let cov = uni.conditional_coverage.expect("conditional runs");
    let size = uni.mean_conditional_size.expect("conditional sizes");
    assert!(cov >= 0.90, "conditional coverage {cov:.3} < 0.90");
    assert!(
        (0.6 * 16.74..=1.4 * 16.74).contains(&size),
        "mean conditional size {size:.2} outside 40% of 16.74"
    );
}

// 14. Post-parameter confidence sets: conditional coverage of the true post
//     mean at levels alpha = beta = eta = 0.05 stays near its target.
#[test]
fn post_parameter_interval_covers_at_reference_level() {
    let mut cfg = ExperimentConfig::preset(SettingId::II);
    cfg.runs = Some(200);
    cfg.alpha = Some(0.05);
    cfg.beta = Some(0.05);
    cfg.eta = Some(0.05);
    cfg.master_seed = 0xACCE;
    let result = run_experiment(&cfg).expect("experiment runs");
    let params = result.params.expect("parameter summaries present");
    let covered = params.post_coverage.expect("conditional runs");
    let n = params.n_conditional as f64;
    let floor = 0.85 - 3.0 * (0.85 * 0.15 / n).sqrt();
    assert!(
        covered >= floor,
        "post-parameter conditional coverage {covered:.3} < {floor:.3}"
    );
}

// 15. The two-state chain setting reproduces its reference mean size (36.12)
//     within 40% at 100 runs without losing coverage.
#[test]
fn markov_setting_hits_reference_coverage_and_size() {
    let mut cfg = ExperimentConfig::preset(SettingId::Markov);
    cfg.runs = Some(100);
    cfg.master_seed = 0xACCF;
    let result = run_experiment(&cfg).expect("experiment runs");
    let ada = row(&result, "adaptive");
    let cov = ada.conditional_coverage.expect("conditional runs");
    let size = ada.mean_conditional_size.expect("conditional sizes");
    assert!(cov >= 0.90, "conditional coverage {cov:.3} < 0.90");
    assert!(
        (0.6 * 36.12..=1.4 * 36.12).contains(&size),
        "mean conditional size {size:.2} outside 40% of 36.12"
    );
}

// 16. A late change (T = 2000) with a small threshold shows the marginal vs
//     conditional gap: most alarms are false, so marginal coverage collapses
//     while conditional coverage holds.
#[test]
fn late_change_separates_marginal_from_conditional_coverage() {
    let mut cfg = ExperimentConfig::preset(SettingId::RatioSweep);
    cfg.runs = Some(200);
    cfg.master_seed = 0xACD0;
    let result = run_experiment(&cfg).expect("experiment runs");
    let uni = row(&result, "universal");
    let cond = uni.conditional_coverage.expect("conditional runs");
    assert!(
        uni.marginal_coverage <= 0.25,
        "marginal coverage {:.3} > 0.25",
        uni.marginal_coverage
    );
    assert!(cond >= 0.90, "conditional coverage {cond:.3} < 0.90");
}
