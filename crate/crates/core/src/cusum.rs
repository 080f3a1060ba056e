//! The detector: reflected-random-walk recursion, threshold stopping, and
//! the pathwise Bayesian loss.
//!
//! The statistic `Xi` starts at zero, each observation adds its score, and
//! the sum reflects at zero: `Xi_{n+1} = max(0, Xi_n + F_{n+1})`. The alarm
//! fires at the first `n` with `Xi_n >= H`. Since `Xi_0 = 0` and `H > 0`,
//! the stop time is always at least 1.

use crate::error::Result;
use crate::model::{Obs, Statistic};

/// State of one detector run.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorState {
    /// Current statistic value; nonnegative by reflection.
    pub xi: f64,
    /// Steps processed so far (the detector clock).
    pub n: usize,
    /// Alarm threshold.
    pub threshold: f64,
    /// Whether the threshold has been crossed.
    pub stopped: bool,
    /// Stop time, set when `stopped`.
    pub stop_time: Option<usize>,
}

impl DetectorState {
    pub fn new(threshold: f64) -> Self {
        assert!(threshold > 0.0, "threshold must be positive");
        DetectorState { xi: 0.0, n: 0, threshold, stopped: false, stop_time: None }
    }

    /// Feed one score; no-op once stopped.
    pub fn step(&mut self, score: f64) {
        if self.stopped {
            return;
        }
        self.n += 1;
        self.xi = cusum_update(self.xi, score);
        if self.xi >= self.threshold {
            self.stopped = true;
            self.stop_time = Some(self.n);
        }
    }
}

/// One reflected-random-walk update: `max(0, xi + f)`.
#[inline]
pub fn cusum_update(xi: f64, f: f64) -> f64 {
    debug_assert!(xi >= 0.0);
    (xi + f).max(0.0)
}

/// Run the detector over an observation stream.
///
/// The recursion is initialized at `Xi_0 = 0` aligned with
/// `observations[0]`; update `n >= 1` consumes `observations[n]` (the time-0
/// observation carries no update). If the threshold is never crossed within
/// the stream the returned state is un-stopped and the caller decides the
/// censoring policy.
pub fn run_detector(observations: &[Obs], stat: &Statistic, threshold: f64) -> Result<DetectorState> {
    let mut state = DetectorState::new(threshold);
    for obs in observations.iter().skip(1) {
        state.step(stat.eval(obs)?);
        if state.stopped {
            break;
        }
    }
    Ok(state)
}

/// Run the detector over pre-scored values `f_1, f_2, ...`.
pub fn run_detector_scores(scores: impl IntoIterator<Item = f64>, threshold: f64) -> DetectorState {
    let mut state = DetectorState::new(threshold);
    for f in scores {
        state.step(f);
        if state.stopped {
            break;
        }
    }
    state
}

/// Pathwise Bayesian loss `(stop - change)_+ + kappa * (stop - change)_-`:
/// delay counts at unit rate, eagerness at rate `kappa`.
pub fn pathwise_loss(stop_time: usize, change_time: usize, kappa: f64) -> f64 {
    let d = stop_time as f64 - change_time as f64;
    d.max(0.0) + kappa * (-d).max(0.0)
}
