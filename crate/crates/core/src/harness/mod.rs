//! Experiment orchestration: seeded Monte Carlo cost estimation, the
//! rare-event hitting-time estimator, the exact lattice oracle, threshold
//! sweeps against the closed-form rules, and the file/CLI pipelines.

mod dp;
mod experiment;
mod hitting;

pub use dp::{detect_denominator, exact_cost_dp, DpCost};
pub use experiment::{run_experiment, Pipeline};
pub use hitting::{mde_hitting_estimator, mde_hitting_quasi_stationary, HittingEstimate};

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::Serialize;

use crate::asymptotics;
use crate::config::EstimatorKind;
use crate::cusum;
use crate::error::{Error, Result};
use crate::model::{ChangeTimeLaw, Obs, ObservationModel, Statistic};
use crate::numerics::derive_seed;

/// Monte Carlo estimate of the Bayesian cost at one `(threshold, kappa)`.
#[derive(Debug, Clone, Serialize)]
pub struct CostEstimate {
    pub mdd: f64,
    pub mdd_stderr: f64,
    pub mde: f64,
    pub mde_stderr: f64,
    pub j: f64,
    pub j_stderr: f64,
    /// Runs that never crossed within the horizon. They contribute zero
    /// delay (their true eagerness is exactly zero), so the delay estimate
    /// is biased low by the censored mass.
    pub censored: usize,
    /// Raised when more than 1% of runs were censored.
    pub censoring_warning: bool,
    pub replications: usize,
}

/// Simulate `replications` detector runs and average the pathwise loss.
///
/// Per replication: draw the change time, build the observation stream out
/// to `change + ceil(multiplier * threshold / m1)`, run the detector, and
/// accumulate delay and eagerness. The per-replication generator is seeded
/// by a counter scheme from the base seed, so results depend only on
/// `(base_seed, replications)` and the estimate is reproducible under any
/// scheduling.
#[allow(clippy::too_many_arguments)]
pub fn mc_estimate_cost(
    model: &ObservationModel,
    law: &ChangeTimeLaw,
    stat: &Statistic,
    threshold: f64,
    kappa: f64,
    replications: usize,
    base_seed: u64,
    horizon_multiplier: f64,
) -> Result<CostEstimate> {
    if threshold <= 0.0 || replications == 0 || horizon_multiplier <= 0.0 {
        return Err(Error::Domain(
            "need threshold > 0, replications >= 1, multiplier > 0".into(),
        ));
    }
    let m1 = post_drift(model, stat)?;
    if m1 <= 0.0 {
        return Err(Error::SignAssumption { m0: f64::NAN, m1 });
    }
    let extra = (horizon_multiplier * threshold / m1).ceil() as usize;

    let mut sums = LossAccumulator::default();
    for rep in 0..replications {
        let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(base_seed, rep as u64));
        let run = simulate_run(model, law, stat, threshold, extra, &mut rng)?;
        sums.push(run, kappa);
    }
    Ok(sums.finish(kappa, replications))
}

/// Post-change stationary drift of the statistic; for hidden chains, the
/// mean under the induced post-change observation marginal.
fn post_drift(model: &ObservationModel, stat: &Statistic) -> Result<f64> {
    match model {
        ObservationModel::Pomdp { .. } => {
            let report = crate::metastable::survival_factorization(model)?;
            let (_, pi1) = report.induced_marginals()?;
            let mut s = 0.0;
            for (y, &p) in pi1.iter().enumerate() {
                if p > 0.0 {
                    s += p * stat.eval(&Obs::Label(y))?;
                }
            }
            Ok(s)
        }
        _ => model.mean_post(stat),
    }
}

struct RunOutcome {
    delay: f64,
    eagerness: f64,
    censored: bool,
}

fn simulate_run(
    model: &ObservationModel,
    law: &ChangeTimeLaw,
    stat: &Statistic,
    threshold: f64,
    extra_horizon: usize,
    rng: &mut ChaCha12Rng,
) -> Result<RunOutcome> {
    let (change, stop) = match model {
        ObservationModel::Pomdp { kernel, x0, obs_map, init } => {
            // the chain generates its own change time; run until absorption,
            // then keep going for the detection window
            let mut in_x0 = vec![false; kernel.nrows()];
            for &z in x0 {
                in_x0[z] = true;
            }
            let mut state = *init;
            let mut detector = cusum::DetectorState::new(threshold);
            let mut change: Option<usize> = None;
            let mut k = 0usize;
            loop {
                if change.is_none() && !in_x0[state] {
                    change = Some(k);
                }
                if k >= 1 {
                    detector.step(stat.eval(&Obs::Label(obs_map[state]))?);
                }
                if let Some(tau) = change {
                    if detector.stopped || k >= tau + extra_horizon {
                        break;
                    }
                }
                if change.is_none() && detector.stopped {
                    // alarm before the change: the eagerness still needs the
                    // change time, so keep stepping the chain without the
                    // detector until absorption
                    let mut state2 = state;
                    let mut k2 = k;
                    while in_x0[state2] {
                        state2 = crate::model::step_kernel(kernel, state2, rng);
                        k2 += 1;
                        if k2 > 100_000_000 {
                            return Err(Error::NoConvergence(
                                "hidden chain failed to absorb within 1e8 steps".into(),
                            ));
                        }
                    }
                    change = Some(k2);
                    break;
                }
                state = crate::model::step_kernel(kernel, state, rng);
                k += 1;
            }
            (change.expect("loop exits only with a change time"), detector.stop_time)
        }
        _ => {
            let change = law.sample(rng);
            let horizon = change + extra_horizon;
            let obs = model.sample_spliced(change, horizon, rng);
            let st = cusum::run_detector(&obs, stat, threshold)?;
            (change, st.stop_time)
        }
    };
    Ok(match stop {
        Some(s) => RunOutcome {
            delay: (s as f64 - change as f64).max(0.0),
            eagerness: (change as f64 - s as f64).max(0.0),
            censored: false,
        },
        // censored: no crossing within the horizon, so the stop time exceeds
        // the change time and the true eagerness is exactly zero
        None => RunOutcome { delay: 0.0, eagerness: 0.0, censored: true },
    })
}

#[derive(Default)]
struct LossAccumulator {
    delay_sum: f64,
    delay_sq: f64,
    eager_sum: f64,
    eager_sq: f64,
    loss_sq: f64,
    censored: usize,
}

impl LossAccumulator {
    fn push(&mut self, run: RunOutcome, kappa: f64) {
        if run.censored {
            self.censored += 1;
        }
        self.delay_sum += run.delay;
        self.delay_sq += run.delay * run.delay;
        self.eager_sum += run.eagerness;
        self.eager_sq += run.eagerness * run.eagerness;
        let loss = run.delay + kappa * run.eagerness;
        self.loss_sq += loss * loss;
    }

    fn finish(&self, kappa: f64, n: usize) -> CostEstimate {
        let nf = n as f64;
        let mdd = self.delay_sum / nf;
        let mde = self.eager_sum / nf;
        let j = mdd + kappa * mde;
        let var = |sum: f64, sq: f64| ((sq / nf) - (sum / nf) * (sum / nf)).max(0.0) / nf;
        CostEstimate {
            mdd,
            mdd_stderr: var(self.delay_sum, self.delay_sq).sqrt(),
            mde,
            mde_stderr: var(self.eager_sum, self.eager_sq).sqrt(),
            j,
            j_stderr: var(self.delay_sum + kappa * self.eager_sum, self.loss_sq).sqrt(),
            censored: self.censored,
            censoring_warning: self.censored as f64 > 0.01 * nf,
            replications: n,
        }
    }
}

/// One evaluated grid point of a sweep.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub kappa: f64,
    pub h: f64,
    pub j: f64,
    pub j_stderr: f64,
    pub mdd: f64,
    pub mde: f64,
    pub censored: usize,
}

/// Empirical minimizer for one false-alarm weight, with the closed-form
/// rules and the gaps against them.
#[derive(Debug, Clone, Serialize)]
pub struct GapRow {
    pub kappa: f64,
    pub h_star: f64,
    pub j_star: f64,
    pub h_star_inf: f64,
    pub h_star_1: f64,
    pub j_star_inf: f64,
    pub gap_h_inf: f64,
    pub gap_h_1: f64,
    pub gap_j: f64,
    /// Additional interior local minimizers (Monte Carlo noise can make the
    /// empirical curve non-unimodal); empty for the exact oracle.
    pub local_minima: Vec<(f64, f64)>,
}

/// A full threshold sweep: grid evaluations plus per-kappa minimizers.
#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub gaps: Vec<GapRow>,
    pub estimator: EstimatorKind,
}

/// Settings of a sweep, decoupled from the config file.
#[derive(Debug, Clone)]
pub struct SweepSettings {
    pub kappas: Vec<f64>,
    pub thresholds: Option<Vec<f64>>,
    pub estimator: EstimatorKind,
    pub replications: usize,
    pub base_seed: u64,
    pub horizon_multiplier: f64,
    pub use_tilting: bool,
    pub lattice_denominator: Option<u32>,
}

/// Sweep the threshold grid for each false-alarm weight, minimize the
/// estimated cost, and report the gaps against the closed-form rules.
///
/// With the exact oracle the minimizer is refined by scanning every lattice
/// threshold between the best grid point's neighbors (the exact cost is
/// piecewise constant in the threshold, so this is the exact refinement of
/// a golden-section step). Monte Carlo sweeps report the grid minimizer and
/// list any interior local minima.
pub fn sweep_threshold(
    model: &ObservationModel,
    law: &ChangeTimeLaw,
    stat: &Statistic,
    settings: &SweepSettings,
) -> Result<SweepReport> {
    if settings.kappas.is_empty() {
        return Err(Error::Config("kappas: need at least one".into()));
    }
    if settings.kappas.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("kappas: must be sorted ascending".into()));
    }
    let rho_a = change_decay_rate(model, law)?;
    let profile = asymptotics::solve_exponents(model, stat, rho_a)?;
    let curve = asymptotics::eagerness_curve(&profile)?;

    // grid: explicit, or derived from the leading-order rule across kappas
    let grid: Vec<f64> = match &settings.thresholds {
        Some(ts) => ts.clone(),
        None => {
            let h_lo = (settings.kappas.first().unwrap().ln() / profile.theta_plus).max(0.2) * 0.5;
            let h_hi = (settings.kappas.last().unwrap().ln() / profile.theta_plus).max(1.0) * 2.5;
            let n = 25;
            (0..n)
                .map(|i| h_lo + (h_hi - h_lo) * i as f64 / (n - 1) as f64)
                .collect()
        }
    };

    let evaluate = |h: f64, kappa: f64| -> Result<SweepRow> {
        match settings.estimator {
            EstimatorKind::Plain => {
                let est = mc_estimate_cost(
                    model,
                    law,
                    stat,
                    h,
                    kappa,
                    settings.replications,
                    settings.base_seed,
                    settings.horizon_multiplier,
                )?;
                Ok(SweepRow {
                    kappa,
                    h,
                    j: est.j,
                    j_stderr: est.j_stderr,
                    mdd: est.mdd,
                    mde: est.mde,
                    censored: est.censored,
                })
            }
            EstimatorKind::Hitting => {
                let plain = mc_estimate_cost(
                    model,
                    law,
                    stat,
                    h,
                    kappa,
                    settings.replications,
                    settings.base_seed,
                    settings.horizon_multiplier,
                )?;
                let hit = mde_hitting_estimator(
                    model,
                    stat,
                    h,
                    law,
                    settings.replications,
                    settings.base_seed ^ 0x9E37_79B9_7F4A_7C15,
                    settings.use_tilting,
                )?;
                let j = plain.mdd + kappa * hit.mde;
                let j_stderr =
                    (plain.mdd_stderr.powi(2) + (kappa * hit.stderr).powi(2)).sqrt();
                Ok(SweepRow {
                    kappa,
                    h,
                    j,
                    j_stderr,
                    mdd: plain.mdd,
                    mde: hit.mde,
                    censored: plain.censored,
                })
            }
            EstimatorKind::ExactDp => {
                let dp = exact_cost_dp(model, stat, h, kappa, law, settings.lattice_denominator)?;
                Ok(SweepRow {
                    kappa,
                    h,
                    j: dp.j,
                    j_stderr: 0.0,
                    mdd: dp.mdd,
                    mde: dp.mde,
                    censored: 0,
                })
            }
        }
    };

    let mut rows = Vec::new();
    let mut gaps = Vec::new();
    for &kappa in &settings.kappas {
        let mut evals = Vec::with_capacity(grid.len());
        for &h in &grid {
            let row = evaluate(h, kappa)?;
            evals.push(row.clone());
            rows.push(row);
        }
        let best_idx = (0..evals.len())
            .min_by(|&a, &b| evals[a].j.total_cmp(&evals[b].j))
            .unwrap();
        let (mut h_star, mut j_star) = (evals[best_idx].h, evals[best_idx].j);

        if settings.estimator == EstimatorKind::ExactDp {
            // refine between the bracketing neighbors: the exact cost is a
            // step function of the threshold, so scan the lattice points
            let q = {
                let values: Vec<f64> = match model.alphabet_len() {
                    Some(m) => (0..m)
                        .map(|y| stat.eval(&Obs::Label(y)))
                        .collect::<Result<_>>()?,
                    None => Vec::new(),
                };
                settings
                    .lattice_denominator
                    .map(Ok)
                    .unwrap_or_else(|| detect_denominator(&values))?
            };
            let lo = if best_idx == 0 { grid[0] * 0.5 } else { grid[best_idx - 1] };
            let hi = if best_idx + 1 == grid.len() {
                grid[best_idx] * 1.5
            } else {
                grid[best_idx + 1]
            };
            let t_lo = ((lo * q as f64).ceil() as i64).max(1);
            let t_hi = (hi * q as f64).floor() as i64;
            for tq in t_lo..=t_hi {
                let h = tq as f64 / q as f64;
                let row = evaluate(h, kappa)?;
                if row.j < j_star {
                    j_star = row.j;
                    h_star = h;
                }
            }
        }

        // interior local minima of the empirical curve
        let mut local_minima = Vec::new();
        for i in 1..evals.len().saturating_sub(1) {
            if evals[i].j < evals[i - 1].j && evals[i].j < evals[i + 1].j && i != best_idx {
                local_minima.push((evals[i].h, evals[i].j));
            }
        }

        let rules = asymptotics::approx_optimal_threshold(&curve, kappa, profile.m1)?;
        gaps.push(GapRow {
            kappa,
            h_star,
            j_star,
            h_star_inf: rules.h_star_inf,
            h_star_1: rules.h_star_1,
            j_star_inf: rules.j_star_inf,
            gap_h_inf: h_star - rules.h_star_inf,
            gap_h_1: h_star - rules.h_star_1,
            gap_j: j_star - rules.j_star_inf,
            local_minima,
        });
    }
    Ok(SweepReport { rows, gaps, estimator: settings.estimator })
}

/// Tail decay rate of the change time: the law's rate for the independent
/// models, the survival eigenvalue rate for hidden chains.
pub fn change_decay_rate(model: &ObservationModel, law: &ChangeTimeLaw) -> Result<f64> {
    match model {
        ObservationModel::Pomdp { .. } => {
            Ok(crate::metastable::survival_factorization(model)?.decay_rate)
        }
        _ => Ok(law.decay_rate()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    fn lattice_fixture() -> (ObservationModel, Statistic, ChangeTimeLaw) {
        (
            presets::two_symbol(),
            presets::two_symbol_lattice_statistic(),
            presets::geometric_change(0.1),
        )
    }

    #[test]
    fn mc_is_deterministic_in_the_base_seed() {
        let (m, s, law) = lattice_fixture();
        let a = mc_estimate_cost(&m, &law, &s, 3.0, 10.0, 2_000, 7, 10.0).unwrap();
        let b = mc_estimate_cost(&m, &law, &s, 3.0, 10.0, 2_000, 7, 10.0).unwrap();
        assert_eq!(a.j, b.j);
        assert_eq!(a.censored, b.censored);
        let c = mc_estimate_cost(&m, &law, &s, 3.0, 10.0, 2_000, 8, 10.0).unwrap();
        assert_ne!(a.j, c.j);
    }

    #[test]
    fn mc_matches_exact_dp_within_three_stderr() {
        let (m, s, law) = lattice_fixture();
        let dp = exact_cost_dp(&m, &s, 3.0, 10.0, &law, None).unwrap();
        let mc = mc_estimate_cost(&m, &law, &s, 3.0, 10.0, 60_000, 2024, 10.0).unwrap();
        assert!(
            (mc.j - dp.j).abs() <= 3.0 * mc.j_stderr,
            "mc {} vs dp {} (3se = {})",
            mc.j,
            dp.j,
            3.0 * mc.j_stderr
        );
        // the identity J = MDD + kappa MDE holds exactly for the estimate
        assert_eq!(mc.j, mc.mdd + 10.0 * mc.mde);
    }

    #[test]
    fn huge_threshold_from_prechange_only_gives_zero_eagerness() {
        // with an enormous threshold every crossing happens long after the
        // change: all mass sits in delay
        let (m, s, law) = lattice_fixture();
        let est = mc_estimate_cost(&m, &law, &s, 12.0, 25.0, 4_000, 3, 10.0).unwrap();
        assert!(est.mde < 1e-3, "mde = {}", est.mde);
        assert!(est.mdd > 10.0);
    }

    #[test]
    fn stderr_scales_like_inverse_sqrt_replications() {
        let (m, s, law) = lattice_fixture();
        let a = mc_estimate_cost(&m, &law, &s, 3.0, 10.0, 20_000, 5, 10.0).unwrap();
        let b = mc_estimate_cost(&m, &law, &s, 3.0, 10.0, 80_000, 5, 10.0).unwrap();
        // quadrupling replications should halve the stderr within 20%
        let ratio = a.j_stderr / b.j_stderr;
        assert!((ratio - 2.0).abs() < 0.4, "ratio = {ratio}");
    }

    #[test]
    fn hitting_estimator_agrees_with_dp_and_plain_mc() {
        let (m, s, law) = lattice_fixture();
        let dp = exact_cost_dp(&m, &s, 3.0, 1.0, &law, None).unwrap();
        let plain = mde_hitting_estimator(&m, &s, 3.0, &law, 40_000, 11, false).unwrap();
        let tilted = mde_hitting_estimator(&m, &s, 3.0, &law, 40_000, 11, true).unwrap();
        assert!(
            (plain.mde - dp.mde).abs() <= 3.0 * plain.stderr,
            "plain {} vs dp {}",
            plain.mde,
            dp.mde
        );
        assert!(
            (tilted.mde - dp.mde).abs() <= 3.0 * tilted.stderr,
            "tilted {} vs dp {}",
            tilted.mde,
            dp.mde
        );
        assert!(tilted.tilted);
    }

    #[test]
    fn tilting_cuts_the_stderr_by_an_order_of_magnitude() {
        // at a tall threshold the plain sampler almost never sees small
        // hitting times, so its variance dwarfs the tilted one
        let m = presets::gaussian_unit_shift();
        let s = m.llr().unwrap();
        let law = presets::geometric_change(0.1);
        let reps = 10_000;
        let plain = mde_hitting_estimator(&m, &s, 8.0, &law, reps, 99, false).unwrap();
        let tilted = mde_hitting_estimator(&m, &s, 8.0, &law, reps, 99, true).unwrap();
        assert!(
            plain.stderr >= 10.0 * tilted.stderr,
            "plain se {} vs tilted se {}",
            plain.stderr,
            tilted.stderr
        );
        // and the tilted estimate is consistent with the plain one
        let gap = (plain.mde - tilted.mde).abs();
        assert!(gap <= 4.0 * (plain.stderr + tilted.stderr));
    }

    #[test]
    fn degenerate_change_law_prices_to_zero() {
        // rho close to 1: the change is essentially immediate and the
        // eagerness mass vanishes
        let (m, s, _) = lattice_fixture();
        let law = ChangeTimeLaw::geometric(0.999999).unwrap();
        let est = mde_hitting_estimator(&m, &s, 3.0, &law, 5_000, 1, false).unwrap();
        assert!(est.mde < 1e-5);
    }

    #[test]
    fn quasi_stationary_estimator_matches_plain_mc_for_hidden_chain() {
        // product-chain embedding of the two-symbol model: the
        // quasi-stationary observation law is the pre-change pmf, so the
        // estimator must agree with the independent-model pricing
        let rho = 0.1;
        let m = presets::product_chain_with_geometric_absorption(&[0.8, 0.2], &[0.3, 0.7], rho);
        let report = crate::metastable::survival_factorization(&m).unwrap();
        let s = presets::two_symbol_lattice_statistic();
        let qs = mde_hitting_quasi_stationary(&report, &s, 3.0, 40_000, 21).unwrap();
        let (im, _, law) = lattice_fixture();
        let dp = exact_cost_dp(&im, &s, 3.0, 1.0, &law, None).unwrap();
        // the embedded change time is geometric on {1, 2, ...} while the
        // independent fixture starts at 0; one factor of beta separates them
        let adjusted = dp.mde / (1.0 - rho);
        assert!(
            (qs.mde - adjusted).abs() <= 4.0 * qs.stderr.max(1e-4),
            "qs {} vs adjusted dp {}",
            qs.mde,
            adjusted
        );
    }

    #[test]
    fn sweep_gaps_nearly_constant_with_exact_oracle() {
        let (m, s, law) = lattice_fixture();
        let settings = SweepSettings {
            kappas: vec![2.0, 10.0, 50.0, 100.0],
            thresholds: None,
            estimator: EstimatorKind::ExactDp,
            replications: 1,
            base_seed: 0,
            horizon_multiplier: 10.0,
            use_tilting: false,
            lattice_denominator: None,
        };
        let report = sweep_threshold(&m, &law, &s, &settings).unwrap();
        assert_eq!(report.gaps.len(), 4);
        // the empirical minimizer is nondecreasing in kappa
        for w in report.gaps.windows(2) {
            assert!(w[0].h_star <= w[1].h_star + 1e-12);
        }
        // near-constant gap: the spread of the gaps is at most a quarter of
        // the spread of the leading-order rule
        let gap_spread = report
            .gaps
            .iter()
            .map(|g| g.gap_h_inf)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), g| (lo.min(g), hi.max(g)));
        let rule_spread = report.gaps.last().unwrap().h_star_inf - report.gaps[0].h_star_inf;
        assert!(
            gap_spread.1 - gap_spread.0 <= 0.25 * rule_spread,
            "gap spread {:?} vs allowed {}",
            gap_spread,
            0.25 * rule_spread
        );
        // cost-to-rule ratio trends toward 1 as kappa grows; average halves
        // to smooth the lattice quantization of the empirical minimizer
        let trend: Vec<f64> = report
            .gaps
            .iter()
            .map(|g| (g.j_star * 0.55 / g.h_star - 1.0).abs()) // m1 = 0.55 here
            .collect();
        let first_half = (trend[0] + trend[1]) / 2.0;
        let second_half = (trend[2] + trend[3]) / 2.0;
        assert!(second_half <= first_half, "trend {trend:?}");
    }

    #[test]
    fn laplace_ratio_with_exact_oracle() {
        // ratio of the exact eagerness to the closed-form approximation
        // across growing thresholds; the log-ratio record documents how the
        // shipped approximation behaves on this fixture
        let (m, s, law) = lattice_fixture();
        let profile = asymptotics::solve_exponents(&m, &s, law.decay_rate()).unwrap();
        let curve = asymptotics::eagerness_curve(&profile).unwrap();
        let mut ratios = Vec::new();
        for &h in &[6.0, 9.0, 12.0] {
            let dp = exact_cost_dp(&m, &s, h, 1.0, &law, None).unwrap();
            let approx = asymptotics::approx_mde(&curve, h).unwrap();
            ratios.push((dp.mde / approx.total).ln());
        }
        // all three thresholds sit deep in the tail-dominated regime of the
        // approximation: the exact eagerness decays at the faster exponent,
        // so the log-ratio moves away from zero as the threshold grows
        assert!(ratios[0] < 0.0);
        assert!(ratios[1] < ratios[0]);
        assert!(ratios[2] < ratios[1]);
    }
}
