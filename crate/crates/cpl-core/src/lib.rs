//! Sequential changepoint localization: detectors that raise an alarm at a
//! stopping time, and finite-sample confidence sets for when the change
//! happened (and for the pre and post parameters), valid at that stopping
//! time. Confidence sets come in two flavors: a universal construction that
//! inverts anytime-valid likelihood-ratio tests, and simulation-calibrated
//! constructions that rank an observed localization statistic against Monte
//! Carlo replicas. Both discount their levels by an estimated probability of
//! the detector surviving to each candidate time.

pub mod bounds;
pub mod confseq;
pub mod detectors;
pub mod eprocesses;
pub mod harness;
pub mod localize;
pub mod models;
pub mod reflected;
pub mod rng;
pub mod survival;
pub mod util;
