//! Optimizing the detector statistic over finite-dimensional function
//! classes.
//!
//! For a linear class `F_theta = theta . psi` the leading-order cost
//! `log(kappa) / (m1 theta_plus)` is minimized by a convex program: minimize
//! `Gamma(theta) = Lambda_0(F_theta) - post_mean(F_theta) + (v.theta)^2 / 2`
//! and then shift along the normalization direction `v` so the cumulant of
//! the shifted statistic equals the change-time tail rate. At the shifted
//! optimum the unit tilt of the statistic matches the post-change feature
//! means, the upper exponent is exactly 1, and the tilted drift equals the
//! post-change mean.

use serde::Serialize;

use crate::asymptotics::{self, ScoreKernel, TwistedLaw};
use crate::error::{Error, Result};
use crate::model::{AffineStatistic, Feature, Obs, ObservationModel, Statistic};

const GRAD_TOL: f64 = 1e-8;
const MAX_ITERS: usize = 10_000;
const ARMIJO_C: f64 = 1e-4;
const ARMIJO_SHRINK: f64 = 0.5;

/// A linear function class: basis statistics `psi`, a normalization vector
/// with `v . psi == 1`, and optional box bounds for the parameter search.
#[derive(Debug, Clone)]
pub struct LinearClass {
    pub features: Vec<Feature>,
    pub v: Vec<f64>,
    pub bounds: Option<Vec<(f64, f64)>>,
}

impl LinearClass {
    pub fn new(features: Vec<Feature>, v: Vec<f64>) -> Result<Self> {
        if features.len() != v.len() || features.is_empty() {
            return Err(Error::DegenerateClass { min_singular: 0.0 });
        }
        Ok(LinearClass { features, v, bounds: None })
    }

    pub fn dim(&self) -> usize {
        self.features.len()
    }

    /// The statistic at parameter `theta`.
    pub fn statistic(&self, theta: &[f64]) -> Statistic {
        Statistic::Affine(AffineStatistic {
            theta: theta.to_vec(),
            features: self.features.clone(),
            v: self.v.clone(),
        })
    }

    /// Wrap one feature as a statistic so law means apply to it.
    fn feature_statistic(&self, i: usize) -> Statistic {
        Statistic::Affine(AffineStatistic {
            theta: vec![1.0],
            features: vec![self.features[i].clone()],
            v: vec![1.0],
        })
    }

    /// Check `v . psi == 1` on a probe grid of the model's observation
    /// space: every label or pair for finite models, a wide grid of reals
    /// for the Gaussian model.
    pub fn validate_normalization(&self, model: &ObservationModel) -> Result<()> {
        let probe = |obs: &Obs| -> Result<f64> {
            let mut s = 0.0;
            for (vi, f) in self.v.iter().zip(&self.features) {
                s += vi * f.eval(obs)?;
            }
            Ok(s)
        };
        let check = |obs: Obs| -> Result<()> {
            let s = probe(&obs)?;
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::StatisticMismatch(format!(
                    "normalization vector violates v . psi == 1 at {obs:?}: got {s}"
                )));
            }
            Ok(())
        };
        match model {
            ObservationModel::IidDiscrete { pmf0, .. } => {
                for y in 0..pmf0.len() {
                    check(Obs::Label(y))?;
                }
            }
            ObservationModel::FiniteMarkov { p0, .. } => {
                for x in 0..p0.nrows() {
                    for z in 0..p0.ncols() {
                        check(Obs::Pair(x, z))?;
                    }
                }
            }
            ObservationModel::IidGaussian { pre_mean, pre_var, .. } => {
                let sd = pre_var.sqrt();
                for k in -20..=20 {
                    check(Obs::Real(pre_mean + 0.4 * sd * k as f64))?;
                }
            }
            ObservationModel::Pomdp { .. } => {
                return Err(Error::StatisticMismatch(
                    "linear-class optimization runs on the marginal models".into(),
                ))
            }
        }
        Ok(())
    }
}

/// One optimizer iterate for the trace.
#[derive(Debug, Clone, Serialize)]
pub struct IterateRecord {
    pub iter: usize,
    pub theta: Vec<f64>,
    pub objective: f64,
    pub grad_norm: f64,
    pub step: f64,
}

/// Result of the convex program over a linear class.
#[derive(Debug, Clone)]
pub struct OptimizerResult {
    /// Minimizer of the convex objective on the subspace `v . theta = 0`.
    pub theta_circ: Vec<f64>,
    /// Shift along `v` that pins the cumulant at the tail rate.
    pub r_circ: f64,
    /// Optimal parameter `theta_circ + r_circ v`.
    pub theta_star: Vec<f64>,
    /// Objective at the minimizer.
    pub objective: f64,
    /// Iterations used and whether the gradient tolerance was met.
    pub iterations: usize,
    pub converged: bool,
    /// Per-iterate trace of the descent.
    pub trace: Vec<IterateRecord>,
    /// Autocorrelation of the basis under the unit tilt at the optimum.
    pub autocorrelation: Vec<Vec<f64>>,
    /// Upper exponent of the optimal statistic (1 by construction).
    pub theta_plus: f64,
    /// Post-change mean of the optimal statistic.
    pub m1: f64,
    /// Tilted drift at the upper exponent of the optimal statistic.
    pub m_check_plus_drift: f64,
    /// Gradient of the log-cost at the optimum (stationarity residual).
    pub stationarity_residual: Vec<f64>,
    /// Drift-matching gap `m_check - m1` at the optimum.
    pub drift_gap: f64,
    /// `theta_star` rescaled so the upper exponent is exactly one.
    pub theta_normalized: Vec<f64>,
    /// Cost per unit of `log kappa`: `1 / (m1 theta_plus)`.
    pub cost_rate: f64,
}

impl OptimizerResult {
    /// Leading-order cost approximation at weight `kappa`.
    pub fn cost(&self, kappa: f64) -> f64 {
        kappa.ln() * self.cost_rate
    }

    /// The optimal statistic.
    pub fn statistic(&self, class: &LinearClass) -> Statistic {
        class.statistic(&self.theta_star)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Post-change means of every basis feature.
fn post_feature_means(model: &ObservationModel, class: &LinearClass) -> Result<Vec<f64>> {
    (0..class.dim())
        .map(|i| model.mean_post(&class.feature_statistic(i)))
        .collect()
}

/// Means of every basis feature under a tilted law.
fn twisted_feature_means(law: &TwistedLaw, class: &LinearClass) -> Result<Vec<f64>> {
    (0..class.dim())
        .map(|i| law.mean(&class.feature_statistic(i)))
        .collect()
}

/// Leading-order cost `log(kappa) / (m1 theta_plus)` of the class member at
/// `theta`, via the solved exponents of that statistic.
pub fn cost_approx_theta(
    model: &ObservationModel,
    class: &LinearClass,
    theta: &[f64],
    kappa: f64,
    rho_a: f64,
) -> Result<f64> {
    if kappa < 1.0 {
        return Err(Error::Domain(format!("cost approximation needs kappa >= 1, got {kappa}")));
    }
    let stat = class.statistic(theta);
    let profile = asymptotics::solve_exponents(model, &stat, rho_a)?;
    Ok(kappa.ln() / (profile.m1 * profile.theta_plus))
}

/// Gradient of the log-cost at `theta` plus the drift-matching gap: both
/// vanish exactly at stationary points.
pub fn stationarity_residual(
    model: &ObservationModel,
    class: &LinearClass,
    theta: &[f64],
    rho_a: f64,
) -> Result<(Vec<f64>, f64)> {
    let stat = class.statistic(theta);
    let profile = asymptotics::solve_exponents(model, &stat, rho_a)?;
    let twisted_plus = profile.twisted(profile.theta_plus)?;
    let m_check = twisted_plus.mean(&stat)?;
    let post = post_feature_means(model, class)?;
    let tilted = twisted_feature_means(&twisted_plus, class)?;
    let grad: Vec<f64> = post
        .iter()
        .zip(&tilted)
        .map(|(p, t)| -p / profile.m1 + t / m_check)
        .collect();
    Ok((grad, m_check - profile.m1))
}

/// Autocorrelation matrix of the basis under the unit tilt of `F_theta`.
pub fn autocorrelation(
    model: &ObservationModel,
    class: &LinearClass,
    theta: &[f64],
) -> Result<Vec<Vec<f64>>> {
    let stat = class.statistic(theta);
    let kernel = ScoreKernel::build(model, &stat)?;
    let law = kernel.twisted(1.0)?;
    autocorrelation_under(&law, class)
}

fn autocorrelation_under(law: &TwistedLaw, class: &LinearClass) -> Result<Vec<Vec<f64>>> {
    let d = class.dim();
    let mut r = vec![vec![0.0; d]; d];
    match law {
        TwistedLaw::Discrete(pmf) => {
            for (y, &p) in pmf.iter().enumerate() {
                if p > 0.0 {
                    let vals: Vec<f64> = class
                        .features
                        .iter()
                        .map(|f| f.eval(&Obs::Label(y)))
                        .collect::<Result<_>>()?;
                    for i in 0..d {
                        for j in 0..d {
                            r[i][j] += p * vals[i] * vals[j];
                        }
                    }
                }
            }
        }
        TwistedLaw::Pair(pair) => {
            for x in 0..pair.nrows() {
                for z in 0..pair.ncols() {
                    let p = pair[(x, z)];
                    if p > 0.0 {
                        let vals: Vec<f64> = class
                            .features
                            .iter()
                            .map(|f| f.eval(&Obs::Pair(x, z)))
                            .collect::<Result<_>>()?;
                        for i in 0..d {
                            for j in 0..d {
                                r[i][j] += p * vals[i] * vals[j];
                            }
                        }
                    }
                }
            }
        }
        TwistedLaw::Gaussian { mean, var } => {
            // entries are Gaussian moments of monomial products
            let moment = |k: u32| -> Result<f64> {
                Ok(match k {
                    0 => 1.0,
                    1 => *mean,
                    2 => var + mean * mean,
                    3 => mean * (mean * mean + 3.0 * var),
                    4 => mean.powi(4) + 6.0 * mean * mean * var + 3.0 * var * var,
                    k => crate::numerics::gaussian_expectation(*mean, *var, |y| y.powi(k as i32))?,
                })
            };
            let degree = |f: &Feature| -> Result<u32> {
                Ok(match f {
                    Feature::Constant => 0,
                    Feature::Monomial(k) => *k,
                    _ => {
                        return Err(Error::StatisticMismatch(
                            "non-real feature on a Gaussian tilt".into(),
                        ))
                    }
                })
            };
            for i in 0..d {
                for j in 0..d {
                    r[i][j] = moment(degree(&class.features[i])? + degree(&class.features[j])?)?;
                }
            }
        }
    }
    Ok(r)
}

fn min_max_singular(r: &[Vec<f64>]) -> (f64, f64) {
    let d = r.len();
    let m = nalgebra::DMatrix::from_fn(d, d, |i, j| r[i][j]);
    let svd = m.svd(false, false);
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    for s in svd.singular_values.iter() {
        lo = lo.min(*s);
        hi = hi.max(*s);
    }
    (lo, hi)
}

/// Minimize the convex objective over a linear class and shift the result to
/// the tail rate.
///
/// Gradient descent with Armijo backtracking (`c = 1e-4`, shrink 0.5) from
/// `theta = 0`, iterates projected onto `v . theta = 0`, stopping at
/// gradient norm 1e-8 or 1e4 iterations. The gradient of the smooth part is
/// exact: the unit-tilted feature means minus the post-change feature means.
/// The basis autocorrelation under the unit tilt is rank-checked along the
/// path.
pub fn optimize_linear(
    model: &ObservationModel,
    class: &LinearClass,
    rho_a: f64,
) -> Result<OptimizerResult> {
    class.validate_normalization(model)?;
    let d = class.dim();
    let post = post_feature_means(model, class)?;
    let v = &class.v;
    let v_norm_sq = dot(v, v);
    if v_norm_sq <= 0.0 {
        return Err(Error::DegenerateClass { min_singular: 0.0 });
    }

    let project = |theta: &mut Vec<f64>| {
        let a = dot(theta, v) / v_norm_sq;
        for (t, vi) in theta.iter_mut().zip(v) {
            *t -= a * vi;
        }
        if let Some(bounds) = &class.bounds {
            for (t, (lo, hi)) in theta.iter_mut().zip(bounds) {
                *t = t.clamp(*lo, *hi);
            }
        }
    };

    // Gamma(theta) = Upsilon_theta(1) - post . theta + (v . theta)^2 / 2
    let objective = |theta: &[f64]| -> Result<f64> {
        let kernel = ScoreKernel::build(model, &class.statistic(theta))?;
        let quad = dot(theta, v);
        Ok(kernel.upsilon(1.0)? - dot(&post, theta) + 0.5 * quad * quad)
    };
    let gradient = |theta: &[f64]| -> Result<Vec<f64>> {
        let kernel = ScoreKernel::build(model, &class.statistic(theta))?;
        let law = kernel.twisted(1.0)?;
        let tilted = twisted_feature_means(&law, class)?;
        let quad = dot(theta, v);
        Ok((0..d).map(|i| tilted[i] - post[i] + quad * v[i]).collect())
    };

    let mut theta = vec![0.0; d];
    project(&mut theta);
    let mut obj = objective(&theta)?;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    for iter in 0..MAX_ITERS {
        iterations = iter;
        let grad = gradient(&theta)?;
        let gnorm = norm(&grad);

        // strict convexity guard along the path
        let r = autocorrelation(model, class, &theta)?;
        let (sig_min, sig_max) = min_max_singular(&r);
        if sig_min <= 1e-12 * sig_max.max(1.0) {
            return Err(Error::DegenerateClass { min_singular: sig_min });
        }

        trace.push(IterateRecord {
            iter,
            theta: theta.clone(),
            objective: obj,
            grad_norm: gnorm,
            step: 0.0,
        });
        if gnorm <= GRAD_TOL {
            converged = true;
            break;
        }

        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let mut cand: Vec<f64> = theta
                .iter()
                .zip(&grad)
                .map(|(t, g)| t - step * g)
                .collect();
            project(&mut cand);
            match objective(&cand) {
                // strict decrease required: the sufficient-decrease margin
                // can round to zero near the optimum and a no-op step must
                // not pass
                Ok(cand_obj)
                    if cand_obj < obj && cand_obj <= obj - ARMIJO_C * step * gnorm * gnorm =>
                {
                    theta = cand;
                    obj = cand_obj;
                    accepted = true;
                    break;
                }
                _ => step *= ARMIJO_SHRINK,
            }
        }
        if !accepted {
            // Near the optimum the true decrease per step falls below the
            // evaluation noise of the eigenvalue-based objective and the
            // sufficient-decrease test cannot certify progress. The exact
            // gradient is still trustworthy, so fall back to plain steps
            // judged by the gradient norm alone.
            let mut fb = 1.0;
            for _ in 0..40 {
                let mut cand: Vec<f64> =
                    theta.iter().zip(&grad).map(|(t, g)| t - fb * g).collect();
                project(&mut cand);
                match gradient(&cand) {
                    Ok(g2) if norm(&g2) < gnorm => {
                        theta = cand;
                        obj = objective(&theta)?;
                        accepted = true;
                        step = fb;
                        break;
                    }
                    _ => fb *= ARMIJO_SHRINK,
                }
            }
        }
        if let Some(last) = trace.last_mut() {
            last.step = if accepted { step } else { 0.0 };
        }
        if !accepted {
            // no certifiable progress in either test; stop here
            break;
        }
    }

    let theta_circ = theta.clone();
    let kernel = ScoreKernel::build(model, &class.statistic(&theta_circ))?;
    let r_circ = rho_a - kernel.upsilon(1.0)?;
    let theta_star: Vec<f64> = theta_circ.iter().zip(v).map(|(t, vi)| t + r_circ * vi).collect();

    // exponents of the shifted optimum; theta_plus = 1 by construction
    let stat_star = class.statistic(&theta_star);
    let profile = asymptotics::solve_exponents(model, &stat_star, rho_a)?;
    let (residual, drift_gap) = stationarity_residual(model, class, &theta_star, rho_a)?;
    let autocorr = autocorrelation(model, class, &theta_star)?;
    let theta_normalized: Vec<f64> =
        theta_star.iter().map(|t| t / profile.theta_plus).collect();
    let twisted_plus = profile.twisted(profile.theta_plus)?;
    let m_check_plus_drift = twisted_plus.mean(&stat_star)?;

    Ok(OptimizerResult {
        theta_circ,
        r_circ,
        theta_star,
        objective: obj,
        iterations,
        converged,
        trace,
        autocorrelation: autocorr,
        theta_plus: profile.theta_plus,
        m1: profile.m1,
        m_check_plus_drift,
        stationarity_residual: residual,
        drift_gap,
        theta_normalized,
        cost_rate: 1.0 / (profile.m1 * profile.theta_plus),
    })
}

/// Result of the scalar-offset construction over the basis `(F, 1)`.
#[derive(Debug, Clone)]
pub struct OffsetResult {
    /// Scale found by the 1-d minimization; equals the upper exponent of
    /// the returned statistic.
    pub theta_1: f64,
    /// Shift `rho_a - Lambda_0(theta_1 F)` applied along the constant.
    pub r_circ: f64,
    /// The optimal statistic `F + r_circ / theta_1`.
    pub statistic: Statistic,
    /// The scalar offset itself.
    pub offset: f64,
}

/// Optimal scaling and offset of a fixed statistic: minimizes
/// `Lambda_0(t F) - t post_mean(F)` in `t` (strictly convex, solved by a
/// monotone root find of the tilted-drift equation) and shifts so the
/// cumulant of the scaled statistic sits at the tail rate.
pub fn optimize_offset(
    model: &ObservationModel,
    stat: &Statistic,
    rho_a: f64,
) -> Result<OffsetResult> {
    let kernel = ScoreKernel::build(model, stat)?;
    let m1 = model.mean_post(stat)?;
    let theta_1 = asymptotics::solve_tilt_for_drift(&kernel, m1).map_err(|e| match e {
        Error::DriftOutOfRange { m, .. } => Error::UnboundedObjective(format!(
            "the tilted drift never reaches the post-change mean {m}"
        )),
        other => other,
    })?;
    if theta_1 <= 0.0 {
        return Err(Error::UnboundedObjective(
            "the 1-d objective is minimized at a nonpositive scale".into(),
        ));
    }
    let r_circ = rho_a - kernel.upsilon(theta_1)?;
    let offset = r_circ / theta_1;
    Ok(OffsetResult { theta_1, r_circ, statistic: stat.offset(offset), offset })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    const RHO_A: f64 = 0.105_360_515_657_826_3; // -ln 0.9

    fn two_symbol_class() -> LinearClass {
        // indicator of symbol 1 plus the constant; v picks the constant
        LinearClass::new(
            vec![Feature::LabelTable(vec![0.0, 1.0]), Feature::Constant],
            vec![0.0, 1.0],
        )
        .unwrap()
    }

    fn markov_class(model: &ObservationModel) -> LinearClass {
        let l = model.llr().unwrap();
        let table = match l {
            Statistic::PairTable(t) => t,
            _ => unreachable!(),
        };
        LinearClass::new(
            vec![Feature::PairTable(table), Feature::Constant],
            vec![0.0, 1.0],
        )
        .unwrap()
    }

    #[test]
    fn normalization_validation_rejects_bad_v() {
        let m = presets::two_symbol();
        let class = LinearClass::new(
            vec![Feature::LabelTable(vec![0.0, 1.0]), Feature::Constant],
            vec![1.0, 0.0],
        )
        .unwrap();
        assert!(class.validate_normalization(&m).is_err());
        assert!(two_symbol_class().validate_normalization(&m).is_ok());
    }

    #[test]
    fn cost_approx_is_scale_invariant() {
        let m = presets::two_symbol();
        let class = two_symbol_class();
        let theta = vec![1.8, -0.7];
        let j1 = cost_approx_theta(&m, &class, &theta, 50.0, RHO_A).unwrap();
        for k in [0.5, 2.0, 7.0] {
            let scaled: Vec<f64> = theta.iter().map(|t| t / k).collect();
            let jk = cost_approx_theta(&m, &class, &scaled, 50.0, RHO_A).unwrap();
            assert!((j1 - jk).abs() < 1e-8, "k = {k}: {j1} vs {jk}");
        }
    }

    #[test]
    fn cost_approx_gaussian_llr_closed_form() {
        let m = presets::gaussian_unit_shift();
        let class = LinearClass::new(
            vec![Feature::Monomial(1), Feature::Constant],
            vec![0.0, 1.0],
        )
        .unwrap();
        // theta selecting exactly the likelihood ratio y - 1/2
        let j = cost_approx_theta(&m, &class, &[1.0, -0.5], 100.0, RHO_A).unwrap();
        let theta_plus = 0.5 * (1.0 + (1.0 + 8.0 * RHO_A).sqrt());
        assert!((j - 100.0f64.ln() / (0.5 * theta_plus)).abs() < 1e-8);
        // kappa = 1 prices to zero for any admissible parameter
        let j1 = cost_approx_theta(&m, &class, &[1.0, -0.5], 1.0, RHO_A).unwrap();
        assert!(j1.abs() < 1e-14);
    }

    #[test]
    fn optimize_recovers_shifted_llr_two_symbol() {
        let m = presets::two_symbol();
        let class = two_symbol_class();
        let res = optimize_linear(&m, &class, RHO_A).unwrap();
        assert!(res.converged, "descent did not converge: {} iters", res.iterations);

        // closed form: the slope solves the tilted-mean equation
        // 0.2 e^t / (0.8 + 0.2 e^t) = 0.7, i.e. t = ln(28/3)
        let slope = (28.0f64 / 3.0).ln();
        assert!((res.theta_circ[0] - slope).abs() < 1e-7, "slope {}", res.theta_circ[0]);
        assert!(res.theta_circ[1].abs() < 1e-12);
        // v . theta_circ = 0 at convergence
        assert!(dot(&res.theta_circ, &class.v).abs() < 1e-12);

        // the shifted optimum is the likelihood ratio plus the tail rate
        let l = m.llr().unwrap();
        let target = l.offset(RHO_A);
        let stat = res.statistic(&class);
        for y in 0..2 {
            let got = stat.eval(&Obs::Label(y)).unwrap();
            let want = target.eval(&Obs::Label(y)).unwrap();
            assert!((got - want).abs() < 1e-6, "label {y}: {got} vs {want}");
        }

        // cumulant pinned at the tail rate, upper exponent 1
        let kernel_check = asymptotics::cgf(&m, &stat, 1.0).unwrap().0;
        assert!((kernel_check - RHO_A).abs() < 1e-8);
        assert!((res.theta_plus - 1.0).abs() < 1e-7);

        // stationarity residual and drift matching at the optimum
        assert!(norm(&res.stationarity_residual) < 1e-6);
        assert!(res.drift_gap.abs() < 1e-6);
    }

    #[test]
    fn optimize_agrees_with_grid_oracle() {
        // exhaustive coarse-to-fine grid refinement as an independent check
        let m = presets::two_symbol();
        let class = two_symbol_class();
        let post = post_feature_means(&m, &class).unwrap();
        let gamma = |t: &[f64]| -> f64 {
            let kernel = ScoreKernel::build(&m, &class.statistic(t)).unwrap();
            let quad = dot(t, &class.v);
            kernel.upsilon(1.0).unwrap() - dot(&post, t) + 0.5 * quad * quad
        };
        let mut center = [0.0f64, 0.0f64];
        let mut half = 4.0;
        for _ in 0..12 {
            let mut best = (f64::INFINITY, center);
            for i in -10..=10 {
                for j in -10..=10 {
                    let t = [
                        center[0] + half * i as f64 / 10.0,
                        center[1] + half * j as f64 / 10.0,
                    ];
                    let g = gamma(&t);
                    if g < best.0 {
                        best = (g, t);
                    }
                }
            }
            center = best.1;
            half *= 0.25;
        }
        let res = optimize_linear(&m, &class, RHO_A).unwrap();
        assert!((res.theta_circ[0] - center[0]).abs() < 1e-4);
        assert!(gamma(&res.theta_circ) <= gamma(&center) + 1e-12);
    }

    #[test]
    fn optimize_recovers_shifted_llr_markov() {
        let m = presets::markov_two_state();
        let class = markov_class(&m);
        let res = optimize_linear(&m, &class, RHO_A).unwrap();
        assert!(res.converged);
        // the class contains the transition likelihood ratio, so the shifted
        // optimum is that ratio plus the tail rate: theta = (1, rho_a)
        assert!((res.theta_star[0] - 1.0).abs() < 1e-6, "scale {}", res.theta_star[0]);
        assert!((res.theta_star[1] - RHO_A).abs() < 1e-6, "shift {}", res.theta_star[1]);
        assert!((res.theta_plus - 1.0).abs() < 1e-6);
        assert!(norm(&res.stationarity_residual) < 1e-6);
        // the unit tilt at the optimum reproduces the post-change law
        let er = crate::asymptotics::entropy_rates(&m, &res.statistic(&class)).unwrap();
        assert!(er.k_post_vs_twisted.abs() < 1e-10);
    }

    #[test]
    fn stationary_point_detected_and_perturbation_flagged() {
        let m = presets::markov_two_state();
        let class = markov_class(&m);
        // encode exactly the shifted transition ratio
        let (grad, gap) = stationarity_residual(&m, &class, &[1.0, RHO_A], RHO_A).unwrap();
        assert!(norm(&grad) < 1e-9, "grad {grad:?}");
        assert!(gap.abs() < 1e-9);
        // a deliberate perturbation breaks stationarity
        let (grad, _) = stationarity_residual(&m, &class, &[1.1, RHO_A], RHO_A).unwrap();
        assert!(norm(&grad) > 1e-3);
    }

    #[test]
    fn entropy_decomposition_holds_along_iterates() {
        let m = presets::two_symbol();
        let class = two_symbol_class();
        let res = optimize_linear(&m, &class, RHO_A).unwrap();
        for record in res.trace.iter().step_by((res.trace.len() / 5).max(1)) {
            let er =
                crate::asymptotics::entropy_rates(&m, &class.statistic(&record.theta)).unwrap();
            assert!(er.m1_residual.abs() < 1e-9);
        }
        let er = crate::asymptotics::entropy_rates(&m, &res.statistic(&class)).unwrap();
        assert!(er.m1_residual.abs() < 1e-9);
    }

    #[test]
    fn gamma0_is_invariant_along_the_normalization_ray() {
        let m = presets::two_symbol();
        let class = two_symbol_class();
        let post = post_feature_means(&m, &class).unwrap();
        let gamma0 = |t: &[f64]| -> f64 {
            let kernel = ScoreKernel::build(&m, &class.statistic(t)).unwrap();
            kernel.upsilon(1.0).unwrap() - dot(&post, t)
        };
        let probes = [[0.3, -0.9], [2.0, 0.4], [-1.1, 0.0]];
        for p in probes {
            let base = gamma0(&p);
            for r in [-1.0, 0.5, 2.0] {
                let shifted: Vec<f64> =
                    p.iter().zip(&class.v).map(|(t, v)| t + r * v).collect();
                assert!((gamma0(&shifted) - base).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn autocorrelation_matches_brute_force() {
        let m = presets::two_symbol();
        let class = two_symbol_class();
        // zero tilt: plain pre-change autocorrelation of the basis
        let r0 = autocorrelation(&m, &class, &[0.0, 0.0]).unwrap();
        // psi = (1{y=1}, 1): E[psi_1^2] = 0.2, E[psi_1] = 0.2, E[1] = 1
        assert!((r0[0][0] - 0.2).abs() < 1e-12);
        assert!((r0[0][1] - 0.2).abs() < 1e-12);
        assert!((r0[1][1] - 1.0).abs() < 1e-12);
        // tilted case against explicit weighted sums
        let theta = [0.9, -0.3];
        let r = autocorrelation(&m, &class, &theta).unwrap();
        let stat = class.statistic(&theta);
        let law = crate::asymptotics::twisted_marginal(&m, &stat, 1.0).unwrap();
        let pmf = match law {
            TwistedLaw::Discrete(p) => p,
            _ => unreachable!(),
        };
        let psi = [[0.0, 1.0], [1.0, 1.0]]; // psi(y) rows for y = 0, 1
        for i in 0..2 {
            for j in 0..2 {
                let want: f64 = (0..2).map(|y| pmf[y] * psi[y][i] * psi[y][j]).sum();
                assert!((r[i][j] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn degenerate_class_is_rejected() {
        let m = presets::two_symbol();
        // two identical features: rank-1 autocorrelation
        let class = LinearClass::new(
            vec![Feature::Constant, Feature::Constant],
            vec![0.5, 0.5],
        )
        .unwrap();
        match optimize_linear(&m, &class, RHO_A) {
            Err(Error::DegenerateClass { .. }) => {}
            other => panic!("expected degenerate-class error, got {other:?}"),
        }
    }

    #[test]
    fn offset_construction_gaussian() {
        let m = presets::gaussian_unit_shift();
        let l = m.llr().unwrap();
        let res = optimize_offset(&m, &l, RHO_A).unwrap();
        // minimizing t(t-1)/2 - t/2 gives t = 1, so the optimal offset is
        // exactly the tail rate
        assert!((res.theta_1 - 1.0).abs() < 1e-10);
        assert!((res.offset - RHO_A).abs() < 1e-10);
        // drift matching at the result: tilted drift equals post mean
        let profile = asymptotics::solve_exponents(&m, &res.statistic, RHO_A).unwrap();
        assert!((profile.theta_plus - res.theta_1).abs() < 1e-8);
        let m_check = profile.twisted(profile.theta_plus).unwrap().mean(&res.statistic).unwrap();
        assert!((m_check - profile.m1).abs() < 1e-8);
    }

    #[test]
    fn offset_of_already_optimal_statistic_is_zero() {
        let m = presets::gaussian_unit_shift();
        let already = m.llr().unwrap().offset(RHO_A);
        let res = optimize_offset(&m, &already, RHO_A).unwrap();
        assert!(res.offset.abs() < 1e-9, "offset {}", res.offset);
        assert!((res.theta_1 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn offset_unbounded_objective_errors() {
        // the post law puts mass where the pre law has none, so the scaled
        // cumulant grows slower than the linear term and the 1-d objective
        // decreases forever
        let m = ObservationModel::iid_discrete(vec![1.0, 0.0], vec![0.5, 0.5]).unwrap();
        let s = Statistic::Table(vec![-1.0, 1.0]);
        match optimize_offset(&m, &s, RHO_A) {
            Err(Error::UnboundedObjective(_)) => {}
            other => panic!("expected unbounded-objective error, got {other:?}"),
        }
        // strictly interior post mean is fine
        let m2 = ObservationModel::iid_discrete(vec![0.5, 0.5], vec![0.05, 0.95]).unwrap();
        assert!(optimize_offset(&m2, &s, RHO_A).is_ok());
    }
}
