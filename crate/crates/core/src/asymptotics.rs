//! The analytic engine: cumulant generating functions, exponential tilting,
//! convex duality, the eagerness exponent, and the closed-form threshold and
//! cost approximations.
//!
//! For a statistic F with pre-change cumulant function
//! `Upsilon(theta) = Lambda_0(theta F)`, two exponents organize everything:
//! the strictly positive root `theta_0` of `Upsilon = 0` and the larger root
//! `theta_plus` of `Upsilon = rho_a`, where `rho_a` is the tail decay rate
//! of the change time. Tilted means at those roots give the drifts
//! `m_check_0 < m_check_plus` of the conditioned walk, the convex dual
//! `I_0(m) = sup_theta [theta m - Upsilon(theta)]` prices drift deviations,
//! and the eagerness exponent `G(s) = e_0(s) + rho_a s` is minimized at
//! `s* = 1/m_check_plus` with `G(s*) = theta_plus`. A Laplace expansion of
//! `sum_n exp(-H G(n/H))` yields the closed-form false-alarm (eagerness)
//! approximations and the log-threshold rules.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{Obs, ObservationModel, Statistic};
use crate::numerics;

const ROOT_RESIDUAL_TOL: f64 = 1e-12;

// ---------------------------------------------------------------------------
// Score kernels: a statistic resolved against a model
// ---------------------------------------------------------------------------

/// A statistic flattened onto a concrete model so that cumulants, tilted
/// means, and tilted laws are directly computable.
#[derive(Debug, Clone, PartialEq)]
pub(crate) enum ScoreKernel {
    /// i.i.d. finite alphabet: pre-change pmf and per-symbol scores.
    Discrete { pmf0: Vec<f64>, f: Vec<f64> },
    /// Stationary Markov pairs: pre-change kernel and per-transition scores.
    Markov { p0: DMatrix<f64>, f: DMatrix<f64> },
    /// Gaussian observations with a quadratic score.
    Gaussian { mu: f64, var: f64, a2: f64, a1: f64, a0: f64 },
}

impl ScoreKernel {
    pub(crate) fn build(model: &ObservationModel, stat: &Statistic) -> Result<ScoreKernel> {
        match model {
            ObservationModel::IidDiscrete { pmf0, .. } => {
                let f = (0..pmf0.len())
                    .map(|y| stat.eval(&Obs::Label(y)))
                    .collect::<Result<Vec<f64>>>()?;
                Ok(ScoreKernel::Discrete { pmf0: pmf0.clone(), f })
            }
            ObservationModel::FiniteMarkov { p0, .. } => {
                let n = p0.nrows();
                let mut f = DMatrix::<f64>::zeros(n, n);
                for x in 0..n {
                    for z in 0..n {
                        f[(x, z)] = stat.eval(&Obs::Pair(x, z))?;
                    }
                }
                Ok(ScoreKernel::Markov { p0: p0.clone(), f })
            }
            ObservationModel::IidGaussian { pre_mean, pre_var, .. } => {
                let (a2, a1, a0) = quadratic_coefficients(stat)?;
                Ok(ScoreKernel::Gaussian { mu: *pre_mean, var: *pre_var, a2, a1, a0 })
            }
            ObservationModel::Pomdp { .. } => Err(Error::StatisticMismatch(
                "hidden-chain cumulants live in the metastable module (conditional form)".into(),
            )),
        }
    }

    /// Upsilon(theta) = Lambda_0(theta F).
    pub(crate) fn upsilon(&self, theta: f64) -> Result<f64> {
        match self {
            ScoreKernel::Discrete { pmf0, f } => Ok(numerics::log_sum_exp_weighted(
                pmf0.iter().zip(f).map(|(&w, &x)| (w, theta * x)),
            )),
            ScoreKernel::Markov { p0, f } => {
                let (log_lambda, _, _, _) = tilted_markov(p0, f, theta)?;
                Ok(log_lambda)
            }
            ScoreKernel::Gaussian { mu, var, a2, a1, a0 } => {
                let (p, q) = tilted_gaussian_pq(*mu, *var, *a2, *a1, theta)?;
                Ok(theta * a0 - 0.5 * (2.0 * var * p).ln() + q * q / (4.0 * p)
                    - mu * mu / (2.0 * var))
            }
        }
    }

    /// First derivative: the tilted mean of F.
    pub(crate) fn upsilon_d1(&self, theta: f64) -> Result<f64> {
        match self {
            ScoreKernel::Discrete { pmf0, f } => {
                let w = tilted_pmf(pmf0, f, theta);
                Ok(w.iter().zip(f).map(|(&p, &x)| p * x).sum())
            }
            ScoreKernel::Markov { p0, f } => {
                let (_, _, _, pair) = tilted_markov(p0, f, theta)?;
                Ok(pair
                    .iter()
                    .zip(f.iter())
                    .map(|(&p, &x)| if p > 0.0 { p * x } else { 0.0 })
                    .sum())
            }
            ScoreKernel::Gaussian { mu, var, a2, a1, a0 } => {
                let (p, q) = tilted_gaussian_pq(*mu, *var, *a2, *a1, theta)?;
                let tv = 0.5 / p;
                let tm = q * tv;
                Ok(a2 * (tv + tm * tm) + a1 * tm + a0)
            }
        }
    }

    /// Second derivative: exact tilted variance for i.i.d. kernels, a
    /// Richardson-extrapolated central difference of the exact tilted mean
    /// for Markov kernels.
    pub(crate) fn upsilon_d2(&self, theta: f64) -> Result<f64> {
        match self {
            ScoreKernel::Discrete { pmf0, f } => {
                let w = tilted_pmf(pmf0, f, theta);
                let m: f64 = w.iter().zip(f).map(|(&p, &x)| p * x).sum();
                Ok(w.iter().zip(f).map(|(&p, &x)| p * (x - m) * (x - m)).sum())
            }
            ScoreKernel::Markov { .. } => {
                let h = 1e-4 * theta.abs().max(1.0);
                let diff = |h: f64| -> Result<f64> {
                    Ok((self.upsilon_d1(theta + h)? - self.upsilon_d1(theta - h)?) / (2.0 * h))
                };
                let d_h = diff(h)?;
                let d_h2 = diff(0.5 * h)?;
                Ok((4.0 * d_h2 - d_h) / 3.0)
            }
            ScoreKernel::Gaussian { mu, var, a2, a1, .. } => {
                let (p, q) = tilted_gaussian_pq(*mu, *var, *a2, *a1, theta)?;
                let tv = 0.5 / p;
                let tm = q * tv;
                // Var(a2 Y^2 + a1 Y) for Y ~ N(tm, tv)
                let lin = 2.0 * a2 * tm + a1;
                Ok(2.0 * a2 * a2 * tv * tv + lin * lin * tv)
            }
        }
    }

    /// Tilted observation law at parameter `theta`.
    pub(crate) fn twisted(&self, theta: f64) -> Result<TwistedLaw> {
        match self {
            ScoreKernel::Discrete { pmf0, f } => Ok(TwistedLaw::Discrete(tilted_pmf(pmf0, f, theta))),
            ScoreKernel::Markov { p0, f } => {
                let (_, _, _, pair) = tilted_markov(p0, f, theta)?;
                Ok(TwistedLaw::Pair(pair))
            }
            ScoreKernel::Gaussian { mu, var, a2, a1, .. } => {
                let (p, q) = tilted_gaussian_pq(*mu, *var, *a2, *a1, theta)?;
                let tv = 0.5 / p;
                Ok(TwistedLaw::Gaussian { mean: q * tv, var: tv })
            }
        }
    }

    /// Open domain endpoint above which the cumulant diverges (`+inf` when
    /// the cumulant is entire).
    fn domain_hi(&self) -> f64 {
        match self {
            ScoreKernel::Gaussian { var, a2, .. } if *a2 > 0.0 => 1.0 / (2.0 * var * a2),
            _ => f64::INFINITY,
        }
    }

    fn domain_lo(&self) -> f64 {
        match self {
            ScoreKernel::Gaussian { var, a2, .. } if *a2 < 0.0 => 1.0 / (2.0 * var * a2),
            _ => f64::NEG_INFINITY,
        }
    }
}

fn quadratic_coefficients(stat: &Statistic) -> Result<(f64, f64, f64)> {
    match stat {
        Statistic::Quadratic { a2, a1, a0 } => Ok((*a2, *a1, *a0)),
        Statistic::Affine(a) => {
            let (mut a2, mut a1, mut a0) = (0.0, 0.0, 0.0);
            for (t, feat) in a.theta.iter().zip(&a.features) {
                match feat {
                    crate::model::Feature::Constant => a0 += t,
                    crate::model::Feature::Monomial(0) => a0 += t,
                    crate::model::Feature::Monomial(1) => a1 += t,
                    crate::model::Feature::Monomial(2) => a2 += t,
                    crate::model::Feature::Monomial(k) => {
                        return Err(Error::Domain(format!(
                            "cumulant of a degree-{k} monomial score diverges for every positive tilt"
                        )))
                    }
                    _ => {
                        return Err(Error::StatisticMismatch(
                            "non-real feature on the Gaussian model".into(),
                        ))
                    }
                }
            }
            Ok((a2, a1, a0))
        }
        _ => Err(Error::StatisticMismatch(
            "tabular statistic on the Gaussian model".into(),
        )),
    }
}

fn tilted_pmf(pmf0: &[f64], f: &[f64], theta: f64) -> Vec<f64> {
    let log_z = numerics::log_sum_exp_weighted(pmf0.iter().zip(f).map(|(&w, &x)| (w, theta * x)));
    pmf0.iter()
        .zip(f)
        .map(|(&w, &x)| if w > 0.0 { (w.ln() + theta * x - log_z).exp() } else { 0.0 })
        .collect()
}

/// Tilted Markov data at parameter theta: returns
/// `(log lambda, u, v, pair law)` for the matrix `p0(x,z) exp(theta f(x,z))`
/// where `(lambda, u, v)` is the Perron-Frobenius triple and the pair law is
/// `u(x) p0(x,z) exp(theta f) v(z) / lambda`, normalized.
fn tilted_markov(
    p0: &DMatrix<f64>,
    f: &DMatrix<f64>,
    theta: f64,
) -> Result<(f64, Vec<f64>, Vec<f64>, DMatrix<f64>)> {
    let n = p0.nrows();
    // factor out the largest exponent so the tilted matrix cannot overflow
    let mut shift = f64::NEG_INFINITY;
    for x in 0..n {
        for z in 0..n {
            if p0[(x, z)] > 0.0 {
                shift = shift.max(theta * f[(x, z)]);
            }
        }
    }
    let mut m = DMatrix::<f64>::zeros(n, n);
    for x in 0..n {
        for z in 0..n {
            if p0[(x, z)] > 0.0 {
                m[(x, z)] = p0[(x, z)] * (theta * f[(x, z)] - shift).exp();
            }
        }
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::DivergentCgf { theta });
    }
    let (lambda, u, v) = numerics::perron_triple(&m)?;
    let mut pair = DMatrix::<f64>::zeros(n, n);
    let mut total = 0.0;
    for x in 0..n {
        for z in 0..n {
            let w = u[x] * m[(x, z)] * v[z] / lambda;
            pair[(x, z)] = w;
            total += w;
        }
    }
    // u.v = 1 makes the total 1 up to eigen-solve residual; renormalize and
    // insist the drift is at solver tolerance
    if (total - 1.0).abs() > 1e-10 {
        return Err(Error::NoConvergence(format!(
            "tilted pair law normalization drift {}",
            total - 1.0
        )));
    }
    pair /= total;
    Ok((shift + lambda.ln(), u, v, pair))
}

fn tilted_gaussian_pq(mu: f64, var: f64, a2: f64, a1: f64, theta: f64) -> Result<(f64, f64)> {
    let p = 0.5 / var - theta * a2;
    if p <= 0.0 {
        return Err(Error::DivergentCgf { theta });
    }
    Ok((p, mu / var + theta * a1))
}

/// A tilted observation law.
#[derive(Debug, Clone, PartialEq)]
pub enum TwistedLaw {
    /// Tilted pmf over labels.
    Discrete(Vec<f64>),
    /// Tilted stationary pair law over transitions.
    Pair(DMatrix<f64>),
    /// Tilted Gaussian.
    Gaussian { mean: f64, var: f64 },
}

impl TwistedLaw {
    /// Mean of a statistic under this law (finite sums or closed form).
    pub fn mean(&self, stat: &Statistic) -> Result<f64> {
        match self {
            TwistedLaw::Discrete(pmf) => {
                let mut s = 0.0;
                for (y, &p) in pmf.iter().enumerate() {
                    if p > 0.0 {
                        s += p * stat.eval(&Obs::Label(y))?;
                    }
                }
                Ok(s)
            }
            TwistedLaw::Pair(pair) => {
                let mut s = 0.0;
                for x in 0..pair.nrows() {
                    for z in 0..pair.ncols() {
                        let p = pair[(x, z)];
                        if p > 0.0 {
                            s += p * stat.eval(&Obs::Pair(x, z))?;
                        }
                    }
                }
                Ok(s)
            }
            TwistedLaw::Gaussian { mean, var } => stat.gaussian_mean(*mean, *var),
        }
    }
}

// ---------------------------------------------------------------------------
// Public operations
// ---------------------------------------------------------------------------

/// Evaluate `(Upsilon(theta), Upsilon'(theta), Upsilon''(theta))`.
pub fn cgf(model: &ObservationModel, stat: &Statistic, theta: f64) -> Result<(f64, f64, f64)> {
    let k = ScoreKernel::build(model, stat)?;
    Ok((k.upsilon(theta)?, k.upsilon_d1(theta)?, k.upsilon_d2(theta)?))
}

/// Tilted observation law at parameter `theta`.
pub fn twisted_marginal(model: &ObservationModel, stat: &Statistic, theta: f64) -> Result<TwistedLaw> {
    ScoreKernel::build(model, stat)?.twisted(theta)
}

/// The cumulant profile of a statistic on a model: the function
/// `Upsilon = Lambda_0(theta F)` together with its two detection exponents
/// and the associated drifts and means.
#[derive(Debug, Clone)]
pub struct CgfProfile {
    kernel: ScoreKernel,
    /// Tail decay rate of the change-time law.
    pub rho_a: f64,
    /// Strictly positive root of `Upsilon = 0`.
    pub theta_0: f64,
    /// Root of `Upsilon = rho_a` above `theta_0`.
    pub theta_plus: f64,
    /// Tilted drift at `theta_0`.
    pub m_check_0: f64,
    /// Tilted drift at `theta_plus`.
    pub m_check_plus: f64,
    /// Pre-change mean of the statistic (`Upsilon'(0)`).
    pub m0: f64,
    /// Post-change stationary mean of the statistic.
    pub m1: f64,
}

/// Solve for the exponents `theta_0 < theta_plus` and tilted drifts.
///
/// `theta_0` is isolated by doubling from 1e-6 until `Upsilon > 0` and then
/// bisecting (convexity plus `Upsilon'(0) = m0 < 0` make the positive root
/// unique); `theta_plus` solves `Upsilon = rho_a` on `(theta_0, inf)` the
/// same way. Residuals are driven to 1e-12.
pub fn solve_exponents(model: &ObservationModel, stat: &Statistic, rho_a: f64) -> Result<CgfProfile> {
    if rho_a <= 0.0 {
        return Err(Error::Domain(format!("tail rate must be positive, got {rho_a}")));
    }
    let kernel = ScoreKernel::build(model, stat)?;
    let m0 = kernel.upsilon_d1(0.0)?;
    let m1 = model.mean_post(stat)?;
    if m0 >= 0.0 || m1 <= 0.0 {
        return Err(Error::SignAssumption { m0, m1 });
    }

    let domain_hi = kernel.domain_hi();
    let clamp = |t: f64| {
        if domain_hi.is_finite() {
            t.min(domain_hi * (1.0 - 1e-12))
        } else {
            t
        }
    };

    // theta_0: first positive root of Upsilon
    let mut lo = 1e-6;
    if kernel.upsilon(lo)? > 0.0 {
        // extremely steep profiles: shrink once more toward zero
        lo = 1e-12;
    }
    let mut hi = lo;
    loop {
        let next = clamp(hi * 2.0);
        if next <= hi {
            return Err(Error::ExponentsUnavailable(
                "cumulant never returns to zero within its domain".into(),
            ));
        }
        hi = next;
        match kernel.upsilon(hi) {
            Ok(v) if v > 0.0 => break,
            Ok(_) => {
                if hi > 1e9 {
                    return Err(Error::ExponentsUnavailable(
                        "no positive root of the cumulant below 1e9".into(),
                    ));
                }
            }
            Err(_) => {
                return Err(Error::ExponentsUnavailable(
                    "cumulant diverges before crossing zero".into(),
                ))
            }
        }
    }
    let k0 = kernel.clone();
    let theta_0 = numerics::bisect(hi / 2.0, hi, ROOT_RESIDUAL_TOL, move |t| {
        k0.upsilon(t).unwrap_or(f64::INFINITY)
    })?;

    // theta_plus: root of Upsilon = rho_a above theta_0
    let mut hi = theta_0;
    loop {
        let step = (hi - theta_0).max(theta_0 * 1e-3).max(1e-9);
        let next = clamp(hi + 2.0 * step);
        if next <= hi {
            return Err(Error::ExponentsUnavailable(
                "cumulant never reaches the tail rate within its domain".into(),
            ));
        }
        hi = next;
        match kernel.upsilon(hi) {
            Ok(v) if v > rho_a => break,
            Ok(_) => {
                if hi > 1e9 {
                    return Err(Error::ExponentsUnavailable(
                        "no root at the tail rate below 1e9".into(),
                    ));
                }
            }
            Err(_) => {
                return Err(Error::ExponentsUnavailable(
                    "cumulant diverges before reaching the tail rate".into(),
                ))
            }
        }
    }
    let k1 = kernel.clone();
    let theta_plus = numerics::bisect(theta_0, hi, ROOT_RESIDUAL_TOL, move |t| {
        k1.upsilon(t).map(|v| v - rho_a).unwrap_or(f64::INFINITY)
    })?;

    let m_check_0 = kernel.upsilon_d1(theta_0)?;
    let m_check_plus = kernel.upsilon_d1(theta_plus)?;
    Ok(CgfProfile {
        kernel,
        rho_a,
        theta_0,
        theta_plus,
        m_check_0,
        m_check_plus,
        m0,
        m1,
    })
}

impl CgfProfile {
    pub fn upsilon(&self, theta: f64) -> Result<f64> {
        self.kernel.upsilon(theta)
    }

    pub fn upsilon_d1(&self, theta: f64) -> Result<f64> {
        self.kernel.upsilon_d1(theta)
    }

    pub fn upsilon_d2(&self, theta: f64) -> Result<f64> {
        self.kernel.upsilon_d2(theta)
    }

    /// Tilted observation law at `theta`.
    pub fn twisted(&self, theta: f64) -> Result<TwistedLaw> {
        self.kernel.twisted(theta)
    }

    /// Convex dual at drift `m`: returns `(I_0(m), theta(m))` where
    /// `theta(m)` solves `Upsilon'(theta) = m` (monotone in `theta`).
    pub fn rate(&self, m: f64) -> Result<(f64, f64)> {
        let theta_m = solve_tilt_for_drift(&self.kernel, m)?;
        let i0 = theta_m * m - self.kernel.upsilon(theta_m)?;
        Ok((i0, theta_m))
    }
}

/// Solve `Upsilon'(theta) = m` by bracket expansion from zero and bisection;
/// `Upsilon'` is increasing by convexity.
pub(crate) fn solve_tilt_for_drift(kernel: &ScoreKernel, m: f64) -> Result<f64> {
    let lo_edge = kernel.domain_lo();
    let hi_edge = kernel.domain_hi();
    let clamp = |t: f64| -> f64 {
        let mut t = t;
        if hi_edge.is_finite() {
            t = t.min(hi_edge - (hi_edge.abs() + 1.0) * 1e-12);
        }
        if lo_edge.is_finite() {
            t = t.max(lo_edge + (lo_edge.abs() + 1.0) * 1e-12);
        }
        t
    };
    let m0 = kernel.upsilon_d1(0.0)?;
    let (mut lo, mut hi);
    if m >= m0 {
        lo = 0.0;
        hi = 1.0;
        loop {
            hi = clamp(hi);
            let d = kernel.upsilon_d1(hi).unwrap_or(f64::INFINITY);
            if d >= m {
                break;
            }
            let next = clamp(hi * 2.0);
            if next <= hi || hi > 1e8 {
                let d_max = kernel.upsilon_d1(clamp(1e8)).unwrap_or(d);
                return Err(Error::DriftOutOfRange { m, lo: m0, hi: d_max });
            }
            hi = next;
        }
    } else {
        hi = 0.0;
        lo = -1.0;
        loop {
            lo = clamp(lo);
            let d = kernel.upsilon_d1(lo).unwrap_or(f64::NEG_INFINITY);
            if d <= m {
                break;
            }
            let next = clamp(lo * 2.0);
            if next >= lo || lo < -1e8 {
                let d_min = kernel.upsilon_d1(clamp(-1e8)).unwrap_or(d);
                return Err(Error::DriftOutOfRange { m, lo: d_min, hi: m0 });
            }
            lo = next;
        }
    }
    let k = kernel.clone();
    let f_tol = ROOT_RESIDUAL_TOL * m.abs().max(1.0);
    numerics::bisect(lo, hi, f_tol, move |t| {
        k.upsilon_d1(t).map(|v| v - m).unwrap_or(f64::INFINITY)
    })
}

/// The convex dual `I_0` packaged as a standalone callable.
#[derive(Debug, Clone)]
pub struct RateFunction {
    profile: CgfProfile,
}

impl RateFunction {
    pub fn new(profile: CgfProfile) -> Self {
        RateFunction { profile }
    }

    /// `(I_0(m), theta(m))`.
    pub fn eval(&self, m: f64) -> Result<(f64, f64)> {
        self.profile.rate(m)
    }

    /// Attainable drift bracket `(m0, m_check_plus]` used by grid checks.
    pub fn drift_bracket(&self) -> (f64, f64) {
        (self.profile.m0, self.profile.m_check_plus)
    }
}

/// Most-likely path to the threshold in scaled time `T`: flat, a linear rise
/// at the cheapest feasible slope, then post-peak decay at the pre-change
/// drift.
#[derive(Debug, Clone, Serialize)]
pub struct MostLikelyPath {
    /// Knots `(t, x_t)` of the piecewise-linear path on `[0, T]`.
    pub knots: Vec<(f64, f64)>,
    /// Slope of the rising segment (`max(1/T, m_check_0)`).
    pub rise_slope: f64,
    /// Slope after the peak (the negative pre-change drift `m0`).
    pub decay_slope: f64,
}

/// Hitting exponent `e_0(T)` over the window `[0, T]`, with the optimal
/// path: `T I_0(1/T)` while the window binds (`T < 1/m_check_0`), constant
/// `theta_0` afterwards.
pub fn path_exponent(profile: &CgfProfile, horizon: f64) -> Result<(f64, MostLikelyPath)> {
    if horizon <= 0.0 {
        return Err(Error::Domain(format!("window must be positive, got {horizon}")));
    }
    let m = (1.0 / horizon).max(profile.m_check_0);
    let (i0, _) = profile.rate(m)?;
    let e0 = i0 / m;

    let t1 = 1.0 / m;
    let mut knots = vec![(0.0, 0.0), (t1, 1.0)];
    if t1 < horizon {
        let m0 = profile.m0;
        let t_zero = t1 + 1.0 / (-m0);
        if t_zero < horizon {
            knots.push((t_zero, 0.0));
            knots.push((horizon, 0.0));
        } else {
            knots.push((horizon, 1.0 + m0 * (horizon - t1)));
        }
    }
    Ok((
        e0,
        MostLikelyPath { knots, rise_slope: m, decay_slope: profile.m0 },
    ))
}

/// The eagerness exponent `G` and the Laplace data extracted from it.
#[derive(Debug, Clone)]
pub struct EagernessCurve {
    profile: CgfProfile,
    /// Minimizer of `G`: `1/m_check_plus`.
    pub s_star: f64,
    /// Kink where the exponent plateaus: `1/m_check_0`.
    pub s_zero: f64,
    /// Laplace curvature constant `Upsilon''(theta_plus) / theta_plus^3`.
    pub gamma_sq: f64,
    /// Window exponent for Riemann-sum validations, fixed at 0.75.
    pub epsilon: f64,
}

/// Build the eagerness curve from a solved profile.
pub fn eagerness_curve(profile: &CgfProfile) -> Result<EagernessCurve> {
    let gamma_sq = profile.upsilon_d2(profile.theta_plus)? / profile.theta_plus.powi(3);
    Ok(EagernessCurve {
        s_star: 1.0 / profile.m_check_plus,
        s_zero: 1.0 / profile.m_check_0,
        gamma_sq,
        epsilon: 0.75,
        profile: profile.clone(),
    })
}

impl EagernessCurve {
    pub fn profile(&self) -> &CgfProfile {
        &self.profile
    }

    /// `e_0(s)`.
    pub fn e0(&self, s: f64) -> Result<f64> {
        Ok(path_exponent(&self.profile, s)?.0)
    }

    /// `G(s) = e_0(s) + rho_a s`.
    pub fn g(&self, s: f64) -> Result<f64> {
        Ok(self.e0(s)? + self.profile.rho_a * s)
    }

    /// Centered exponent `G(s) - theta_plus` (zero at the minimizer).
    pub fn g_centered(&self, s: f64) -> Result<f64> {
        Ok(self.g(s)? - self.profile.theta_plus)
    }

    /// Laplace window half-width `H^(epsilon - 1)`.
    pub fn delta_h(&self, threshold: f64) -> f64 {
        threshold.powf(-1.0 + self.epsilon)
    }

    /// Peak (Laplace) term of the eagerness approximation.
    pub fn mde1_inf(&self, threshold: f64) -> f64 {
        threshold.sqrt()
            * (2.0 * std::f64::consts::PI * self.gamma_sq).sqrt()
            * (-threshold * self.profile.theta_plus).exp()
    }

    /// Geometric-tail term of the eagerness approximation.
    pub fn mde2_inf(&self, threshold: f64) -> f64 {
        (-threshold * self.profile.theta_0).exp() / (1.0 - (-self.profile.rho_a).exp())
    }
}

/// Eagerness approximation at a threshold: peak term, tail term, total.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MdeApprox {
    pub mde1: f64,
    pub mde2: f64,
    pub total: f64,
}

/// `MDE ~ mde1 + mde2`; the tail term is always included so the
/// approximation stays meaningful when the change-time tail rate is small.
pub fn approx_mde(curve: &EagernessCurve, threshold: f64) -> Result<MdeApprox> {
    if threshold <= 0.0 {
        return Err(Error::Domain(format!("threshold must be positive, got {threshold}")));
    }
    let mde1 = curve.mde1_inf(threshold);
    let mde2 = curve.mde2_inf(threshold);
    Ok(MdeApprox { mde1, mde2, total: mde1 + mde2 })
}

/// Closed-form cost approximation `H/m1 + kappa (mde1 + mde2)`.
pub fn approx_cost(curve: &EagernessCurve, threshold: f64, kappa: f64, m1: f64) -> Result<f64> {
    if kappa < 0.0 || m1 <= 0.0 {
        return Err(Error::Domain("need kappa >= 0 and m1 > 0".into()));
    }
    Ok(threshold / m1 + kappa * approx_mde(curve, threshold)?.total)
}

/// Closed-form threshold rules and their costs.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ThresholdApprox {
    /// Leading-order rule `log(kappa) / theta_plus`.
    pub h_star_inf: f64,
    /// Refined rule `(log kappa + b) / theta_plus`.
    pub h_star_1: f64,
    /// Refinement constant `b = log(m1 sqrt(pi gamma^2 theta_plus))`.
    pub b: f64,
    /// Leading-order cost `h_star_inf / m1`.
    pub j_star_inf: f64,
    /// Numeric minimizer of the closed-form cost (cross-check).
    pub h_numeric: f64,
    /// Closed-form cost at the numeric minimizer.
    pub j_numeric: f64,
}

/// Threshold approximations for false-alarm weight `kappa > 1`, plus a
/// grid-plus-golden-section numeric minimizer of [`approx_cost`] for
/// cross-checking the closed forms.
pub fn approx_optimal_threshold(
    curve: &EagernessCurve,
    kappa: f64,
    m1: f64,
) -> Result<ThresholdApprox> {
    if kappa <= 1.0 {
        return Err(Error::Domain(format!(
            "threshold rules need kappa > 1 for a positive log, got {kappa}"
        )));
    }
    let theta_plus = curve.profile.theta_plus;
    let h_star_inf = kappa.ln() / theta_plus;
    let b = (m1 * (std::f64::consts::PI * curve.gamma_sq * theta_plus).sqrt()).ln();
    let h_star_1 = (kappa.ln() + b) / theta_plus;
    let j_star_inf = h_star_inf / m1;

    // coarse scan, then golden-section refinement between the bracketing
    // neighbors of the best grid point
    let hi = 10.0 * h_star_inf;
    let grid = 400;
    let mut best = (f64::INFINITY, hi);
    for i in 1..=grid {
        let h = hi * i as f64 / grid as f64;
        let j = approx_cost(curve, h, kappa, m1)?;
        if j < best.0 {
            best = (j, h);
        }
    }
    let step = hi / grid as f64;
    let lo_h = (best.1 - step).max(step * 1e-3);
    let hi_h = (best.1 + step).min(hi);
    let (h_numeric, j_numeric) = numerics::golden_section_min(lo_h, hi_h, 1e-10, |h| {
        approx_cost(curve, h, kappa, m1).unwrap_or(f64::INFINITY)
    });
    Ok(ThresholdApprox { h_star_inf, h_star_1, b, j_star_inf, h_numeric, j_numeric })
}

// ---------------------------------------------------------------------------
// Log-Lambert inverse pair
// ---------------------------------------------------------------------------

/// `W(z) = z - log z` (z > 0), the map inverted approximately by [`lambert_inverse`].
pub fn lambert_w_form(z: f64) -> Result<f64> {
    if z <= 0.0 {
        return Err(Error::Domain(format!("need z > 0, got {z}")));
    }
    Ok(z - z.ln())
}

/// Approximate inverse `L(w) = w + log w` (w > 0).
pub fn lambert_inverse(w: f64) -> Result<f64> {
    if w <= 0.0 {
        return Err(Error::Domain(format!("need w > 0, got {w}")));
    }
    Ok(w + w.ln())
}

/// Residual of the inverse pair at `z > 1`: returns
/// `(eps, bound) = (z - L(W(z)), log(z) / (z - log z))` with
/// `0 <= eps <= bound`.
pub fn lambert_bound_check(z: f64) -> Result<(f64, f64)> {
    if z <= 1.0 {
        return Err(Error::Domain(format!("the residual bound needs z > 1, got {z}")));
    }
    let eps = z - lambert_inverse(lambert_w_form(z)?)?;
    let bound = z.ln() / (z - z.ln());
    Ok((eps, bound))
}

// ---------------------------------------------------------------------------
// Entropy rates
// ---------------------------------------------------------------------------

/// Relative-entropy quantities at the unit tilt of a statistic.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct EntropyRates {
    /// Rate of the tilted pre-change process against the pre-change process:
    /// the tilted mean minus the cumulant at unit tilt.
    pub k_twisted_vs_pre: f64,
    /// Model relative entropy rate of post against pre (finite double sum);
    /// infinite on support mismatch.
    pub k_post_vs_pre: f64,
    /// Rate of the post-change process against the tilted pre-change
    /// process; zero exactly when the unit tilt reproduces the post law.
    pub k_post_vs_twisted: f64,
    /// Residual of `m1 = Lambda_0(F) + K(post||pre) - K(post||twisted)`.
    pub m1_residual: f64,
}

/// Entropy-rate identities at the unit tilt (finite models only).
pub fn entropy_rates(model: &ObservationModel, stat: &Statistic) -> Result<EntropyRates> {
    let kernel = ScoreKernel::build(model, stat)?;
    let lambda0 = kernel.upsilon(1.0)?;
    let twisted_mean = kernel.upsilon_d1(1.0)?;
    let k_twisted_vs_pre = twisted_mean - lambda0;
    let m1 = model.mean_post(stat)?;

    let rel_ent = |p: &[f64], q: &[f64]| -> f64 {
        let mut s = 0.0;
        for (&a, &b) in p.iter().zip(q) {
            if a > 0.0 {
                if b <= 0.0 {
                    return f64::INFINITY;
                }
                s += a * (a / b).ln();
            }
        }
        s
    };

    let (k_post_vs_pre, k_post_vs_twisted) = match (model, kernel.twisted(1.0)?) {
        (ObservationModel::IidDiscrete { pmf0, pmf1 }, TwistedLaw::Discrete(tw)) => {
            (rel_ent(pmf1, pmf0), rel_ent(pmf1, &tw))
        }
        (ObservationModel::FiniteMarkov { p0, p1, mu1, .. }, TwistedLaw::Pair(pair)) => {
            let n = p0.nrows();
            // twisted transition kernel from the stationary pair law
            let mut row_mass = vec![0.0; n];
            for x in 0..n {
                for z in 0..n {
                    row_mass[x] += pair[(x, z)];
                }
            }
            let mut k10 = 0.0;
            let mut k1t = 0.0;
            'outer: for x in 0..n {
                for z in 0..n {
                    let w = mu1[x] * p1[(x, z)];
                    if w > 0.0 {
                        if p0[(x, z)] <= 0.0 || pair[(x, z)] <= 0.0 {
                            k10 = f64::INFINITY;
                            k1t = f64::INFINITY;
                            break 'outer;
                        }
                        k10 += w * (p1[(x, z)] / p0[(x, z)]).ln();
                        let twisted_kernel = pair[(x, z)] / row_mass[x];
                        k1t += w * (p1[(x, z)] / twisted_kernel).ln();
                    }
                }
            }
            (k10, k1t)
        }
        _ => {
            return Err(Error::StatisticMismatch(
                "entropy rates are defined for finite models".into(),
            ))
        }
    };

    let m1_residual = if k_post_vs_pre.is_finite() && k_post_vs_twisted.is_finite() {
        m1 - (lambda0 + k_post_vs_pre - k_post_vs_twisted)
    } else {
        f64::INFINITY
    };
    Ok(EntropyRates { k_twisted_vs_pre, k_post_vs_pre, k_post_vs_twisted, m1_residual })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    const RHO_A: f64 = 0.105_360_515_657_826_3; // -ln 0.9

    /// Closed-form oracle for the unit-shift Gaussian likelihood-ratio
    /// profile: Upsilon(t) = t(t-1)/2, so theta_0 = 1 and theta_plus solves
    /// the quadratic t^2 - t - 2 rho = 0.
    fn gaussian_oracle() -> (f64, f64, f64, f64) {
        let theta_plus = 0.5 * (1.0 + (1.0 + 8.0 * RHO_A).sqrt());
        (1.0, theta_plus, 0.5, theta_plus - 0.5)
    }

    fn gaussian_profile() -> CgfProfile {
        let model = presets::gaussian_unit_shift();
        let stat = model.llr().unwrap();
        solve_exponents(&model, &stat, RHO_A).unwrap()
    }

    fn two_symbol_profile() -> CgfProfile {
        let model = presets::two_symbol();
        let stat = model.llr().unwrap();
        solve_exponents(&model, &stat, RHO_A).unwrap()
    }

    #[test]
    fn gaussian_cgf_closed_form() {
        let model = presets::gaussian_unit_shift();
        let stat = model.llr().unwrap();
        for theta in [-1.0, 0.0, 0.5, 1.0, 1.5, 2.0] {
            let (u, d1, d2) = cgf(&model, &stat, theta).unwrap();
            assert!((u - 0.5 * theta * (theta - 1.0)).abs() < 1e-12, "u({theta}) = {u}");
            assert!((d1 - (theta - 0.5)).abs() < 1e-12);
            assert!((d2 - 1.0).abs() < 1e-12);
        }
        // Upsilon(2) = 1
        assert!((cgf(&model, &stat, 2.0).unwrap().0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cgf_vanishes_at_zero_everywhere() {
        let models: Vec<(ObservationModel, Statistic)> = vec![
            {
                let m = presets::gaussian_unit_shift();
                let s = m.llr().unwrap();
                (m, s)
            },
            {
                let m = presets::two_symbol();
                let s = m.llr().unwrap();
                (m, s)
            },
            {
                let m = presets::markov_two_state();
                let s = m.llr().unwrap();
                (m, s)
            },
        ];
        for (m, s) in &models {
            assert!(cgf(m, s, 0.0).unwrap().0.abs() < 1e-12);
        }
    }

    #[test]
    fn llr_cgf_is_zero_at_unit_tilt() {
        // the unit tilt of the likelihood ratio reproduces the post-change
        // law, so the cumulant vanishes there
        let m = presets::two_symbol();
        let s = m.llr().unwrap();
        assert!(cgf(&m, &s, 1.0).unwrap().0.abs() < 1e-12);
        let m = presets::markov_two_state();
        let s = m.llr().unwrap();
        assert!(cgf(&m, &s, 1.0).unwrap().0.abs() < 1e-11);
    }

    #[test]
    fn gaussian_cgf_matches_quadrature() {
        // independent route: direct Gauss-Hermite integration of exp(theta F)
        let model = presets::gaussian_unit_shift();
        let stat = model.llr().unwrap();
        for theta in [0.3, 1.2] {
            let direct = crate::numerics::gaussian_expectation(0.0, 1.0, |y| {
                (theta * (y - 0.5)).exp()
            })
            .unwrap()
            .ln();
            let (u, _, _) = cgf(&model, &stat, theta).unwrap();
            assert!((u - direct).abs() < 1e-10);
        }
    }

    #[test]
    fn unequal_variance_llr_cgf_matches_quadrature() {
        let model = ObservationModel::iid_gaussian(0.0, 1.0, 0.8, 1.7).unwrap();
        let stat = model.llr().unwrap();
        for theta in [0.2, 0.45] {
            let direct = crate::numerics::gaussian_expectation(0.0, 1.0, |y| {
                (theta * stat.eval(&Obs::Real(y)).unwrap()).exp()
            })
            .unwrap()
            .ln();
            let (u, _, _) = cgf(&model, &stat, theta).unwrap();
            assert!((u - direct).abs() < 1e-9, "theta = {theta}: {u} vs {direct}");
        }
        // divergence guard: the quadratic term flips sign of the integrand tail
        let bad = cgf(&model, &stat, 5.0);
        assert!(matches!(bad, Err(Error::DivergentCgf { .. })));
    }

    #[test]
    fn gaussian_exponents_match_quadratic_formula() {
        let p = gaussian_profile();
        let (t0, tp, mc0, mcp) = gaussian_oracle();
        assert!((p.theta_0 - t0).abs() < 1e-10);
        assert!((p.theta_plus - tp).abs() < 1e-10);
        assert!((p.m_check_0 - mc0).abs() < 1e-10);
        assert!((p.m_check_plus - mcp).abs() < 1e-10);
        assert!((p.m0 + 0.5).abs() < 1e-12);
        assert!((p.m1 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn llr_theta0_is_one_on_all_fixtures() {
        for profile in [gaussian_profile(), two_symbol_profile()] {
            assert!((profile.theta_0 - 1.0).abs() < 1e-10);
        }
        let m = presets::markov_two_state();
        let s = m.llr().unwrap();
        let p = solve_exponents(&m, &s, RHO_A).unwrap();
        assert!((p.theta_0 - 1.0).abs() < 1e-10);
    }

    #[test]
    fn theta_plus_decreases_to_theta0_with_vanishing_tail_rate() {
        let model = presets::gaussian_unit_shift();
        let stat = model.llr().unwrap();
        let mut prev = f64::INFINITY;
        for rho_a in [0.2, 0.1, 0.05, 0.01, 1e-3, 1e-5] {
            let p = solve_exponents(&model, &stat, rho_a).unwrap();
            assert!(p.theta_plus > p.theta_0);
            assert!(p.theta_plus < prev);
            prev = p.theta_plus;
        }
        assert!(prev - 1.0 < 1e-2);
    }

    #[test]
    fn twisted_marginal_identities() {
        let m = presets::two_symbol();
        let s = m.llr().unwrap();
        // zero tilt returns the pre-change pmf
        match twisted_marginal(&m, &s, 0.0).unwrap() {
            TwistedLaw::Discrete(p) => {
                assert!((p[0] - 0.8).abs() < 1e-14);
                assert!((p[1] - 0.2).abs() < 1e-14);
            }
            _ => panic!("wrong law kind"),
        }
        // unit tilt of the likelihood ratio reproduces the post-change pmf
        match twisted_marginal(&m, &s, 1.0).unwrap() {
            TwistedLaw::Discrete(p) => {
                assert!((p[0] - 0.3).abs() < 1e-12);
                assert!((p[1] - 0.7).abs() < 1e-12);
            }
            _ => panic!("wrong law kind"),
        }
        // Gaussian tilt identity: twisted law is N(theta, 1) and its mean of
        // F equals the cumulant derivative
        let g = presets::gaussian_unit_shift();
        let ls = g.llr().unwrap();
        for theta in [0.4, 1.0, 1.7] {
            match twisted_marginal(&g, &ls, theta).unwrap() {
                TwistedLaw::Gaussian { mean, var } => {
                    assert!((mean - theta).abs() < 1e-12);
                    assert!((var - 1.0).abs() < 1e-12);
                }
                _ => panic!("wrong law kind"),
            }
            let tw = twisted_marginal(&g, &ls, theta).unwrap();
            let mean_f = tw.mean(&ls).unwrap();
            assert!((mean_f - (theta - 0.5)).abs() < 1e-12);
        }
    }

    #[test]
    fn twisted_pair_law_sums_to_one() {
        let m = presets::markov_two_state();
        let s = m.llr().unwrap();
        for theta in [0.0, 0.7, 1.0, 1.9] {
            match twisted_marginal(&m, &s, theta).unwrap() {
                TwistedLaw::Pair(pair) => {
                    let total: f64 = pair.iter().sum();
                    assert!((total - 1.0).abs() < 1e-12);
                    assert!(pair.iter().all(|&p| p >= 0.0));
                }
                _ => panic!("wrong law kind"),
            }
        }
    }

    #[test]
    fn rate_function_duality_identities() {
        for p in [gaussian_profile(), two_symbol_profile()] {
            // I_0(m0) = 0, attained at zero tilt
            let (i0, th) = p.rate(p.m0).unwrap();
            assert!(i0.abs() < 1e-10, "I0(m0) = {i0}");
            assert!(th.abs() < 1e-8);
            // I_0 at the two tilted drifts
            let (i0, _) = p.rate(p.m_check_0).unwrap();
            assert!((i0 - p.m_check_0 * p.theta_0).abs() < 1e-8);
            let (i0, _) = p.rate(p.m_check_plus).unwrap();
            assert!((i0 - (p.m_check_plus * p.theta_plus - p.rho_a)).abs() < 1e-8);
            // duality round trip on a drift grid
            for k in 1..=8 {
                let m = p.m0 + (p.m_check_plus - p.m0) * k as f64 / 8.0;
                let (_, theta_m) = p.rate(m).unwrap();
                assert!((p.upsilon_d1(theta_m).unwrap() - m).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn rate_function_rejects_unattainable_drift() {
        let p = two_symbol_profile();
        // the two-symbol score is bounded by the largest table value
        let err = p.rate(2.0).unwrap_err();
        assert!(matches!(err, Error::DriftOutOfRange { .. }));
    }

    #[test]
    fn rate_derivative_matches_maximizer_on_grid() {
        // finite-difference I_0'(m) against theta(m), 1e-6 tolerance
        let p = gaussian_profile();
        let h = 1e-5;
        for k in 1..=6 {
            let m = p.m0 + (p.m_check_plus - p.m0) * k as f64 / 6.5;
            let (ip, _) = p.rate(m + h).unwrap();
            let (im, _) = p.rate(m - h).unwrap();
            let (_, theta_m) = p.rate(m).unwrap();
            assert!(((ip - im) / (2.0 * h) - theta_m).abs() < 1e-6);
        }
    }

    #[test]
    fn path_exponent_plateau_and_closed_form() {
        let p = gaussian_profile();
        // beyond the kink the exponent is the flat value theta_0
        for t in [2.0, 3.0, 10.0] {
            let (e0, _) = path_exponent(&p, t).unwrap();
            assert!((e0 - p.theta_0).abs() < 1e-9, "e0({t}) = {e0}");
        }
        // window T = 1 < 1/m_check_0 = 2: dual of t(t-1)/2 at drift 1 gives
        // I_0(1) = (1 + 1/2)^2 / 2 = 9/8
        let (e0, path) = path_exponent(&p, 1.0).unwrap();
        assert!((e0 - 1.125).abs() < 1e-9);
        assert!((path.rise_slope - 1.0).abs() < 1e-9);
        // e0 nonincreasing in the window length
        let mut prev = f64::INFINITY;
        for k in 1..=30 {
            let t = 0.2 + 0.12 * k as f64;
            let (e0, _) = path_exponent(&p, t).unwrap();
            assert!(e0 <= prev + 1e-12);
            prev = e0;
        }
    }

    #[test]
    fn most_likely_path_knots_decay_to_zero() {
        let p = gaussian_profile();
        let (_, path) = path_exponent(&p, 10.0).unwrap();
        // rise at m_check_0 = 1/2 to the threshold at t = 2, then decay at
        // slope m0 = -1/2 back to zero at t = 4
        assert_eq!(path.knots.len(), 4);
        assert!((path.knots[1].0 - 2.0).abs() < 1e-8);
        assert!((path.knots[1].1 - 1.0).abs() < 1e-12);
        assert!((path.knots[2].0 - 4.0).abs() < 1e-8);
        assert_eq!(path.knots[3], (10.0, 0.0));
        assert!((path.decay_slope + 0.5).abs() < 1e-12);
    }

    #[test]
    fn eagerness_geometry() {
        for p in [gaussian_profile(), two_symbol_profile()] {
            let curve = eagerness_curve(&p).unwrap();
            // G attains theta_plus at its minimizer
            let g_star = curve.g(curve.s_star).unwrap();
            assert!((g_star - p.theta_plus).abs() < 1e-8);
            // and theta_0 + rho_a s at the kink
            let g_zero = curve.g(curve.s_zero).unwrap();
            assert!((g_zero - (p.theta_0 + p.rho_a * curve.s_zero)).abs() < 1e-8);
            // affine with slope rho_a beyond the kink
            for s in [curve.s_zero * 1.2, curve.s_zero * 2.0, curve.s_zero * 5.0] {
                let h = 1e-4;
                let slope = (curve.g(s + h).unwrap() - curve.g(s - h).unwrap()) / (2.0 * h);
                assert!((slope - p.rho_a).abs() < 1e-6);
            }
            // and strictly convex before the minimizer
            let s = 0.7 * curve.s_star;
            let h = 1e-3;
            let dd = curve.g(s + h).unwrap() - 2.0 * curve.g(s).unwrap() + curve.g(s - h).unwrap();
            assert!(dd > 0.0);
        }
    }

    #[test]
    fn gaussian_gamma_sq_closed_form() {
        let p = gaussian_profile();
        let curve = eagerness_curve(&p).unwrap();
        // Upsilon'' = 1 for the unit-shift ratio, so the curvature constant
        // is theta_plus^-3
        let oracle = p.theta_plus.powi(-3);
        assert!((curve.gamma_sq - oracle).abs() < 1e-10);
    }

    #[test]
    fn gamma_sq_consistent_with_dual_curvature() {
        // Upsilon''(theta_plus) equals 1 / I_0''(m_check_plus); estimate the
        // dual second derivative by differencing the maximizer theta(m)
        for p in [gaussian_profile(), two_symbol_profile()] {
            let h = 1e-5 * p.m_check_plus.abs().max(1.0);
            let (_, tp) = p.rate(p.m_check_plus + h).unwrap();
            let (_, tm) = p.rate(p.m_check_plus - h).unwrap();
            let i0_dd = (tp - tm) / (2.0 * h);
            let direct = p.upsilon_d2(p.theta_plus).unwrap();
            assert!(
                (direct * i0_dd - 1.0).abs() < 1e-6,
                "duality product = {}",
                direct * i0_dd
            );
        }
    }

    #[test]
    fn mde_approximation_closed_forms() {
        let p = gaussian_profile();
        let curve = eagerness_curve(&p).unwrap();
        let approx = approx_mde(&curve, 5.0).unwrap();
        // oracle: plug the quadratic-formula exponents into the two terms
        let (_, tp, _, _) = gaussian_oracle();
        let gamma_sq = tp.powi(-3);
        let mde1 = 5.0f64.sqrt() * (2.0 * std::f64::consts::PI * gamma_sq).sqrt() * (-5.0 * tp).exp();
        let mde2 = (-5.0f64).exp() / (1.0 - 0.9);
        assert!((approx.mde1 - mde1).abs() < 1e-12);
        assert!((approx.mde2 - mde2).abs() < 1e-12);
        assert!((approx.total - (mde1 + mde2)).abs() < 1e-12);
        assert!((approx.mde2 - 0.067_379_469_990_854_67).abs() < 1e-12);
        // total decreases monotonically to zero on a growing grid
        let mut prev = f64::INFINITY;
        for k in 1..=30 {
            let t = approx_mde(&curve, k as f64).unwrap().total;
            assert!(t < prev);
            prev = t;
        }
        assert!(prev < 1e-8);
    }

    #[test]
    fn cost_approximation_and_convexity() {
        let p = gaussian_profile();
        let curve = eagerness_curve(&p).unwrap();
        // kappa = 0 leaves only the delay term
        let j0 = approx_cost(&curve, 5.0, 0.0, p.m1).unwrap();
        assert!((j0 - 10.0).abs() < 1e-12);
        // plug-in of the two mde terms
        let approx = approx_mde(&curve, 5.0).unwrap();
        let j = approx_cost(&curve, 5.0, 10.0, p.m1).unwrap();
        assert!((j - (10.0 + 10.0 * approx.total)).abs() < 1e-12);
        // convex in the threshold on a grid
        let grid: Vec<f64> = (1..=60).map(|k| 0.2 * k as f64).collect();
        let js: Vec<f64> = grid
            .iter()
            .map(|&h| approx_cost(&curve, h, 10.0, p.m1).unwrap())
            .collect();
        for w in js.windows(3) {
            assert!(w[0] - 2.0 * w[1] + w[2] >= -1e-9);
        }
    }

    #[test]
    fn threshold_rules_closed_forms() {
        let p = gaussian_profile();
        let curve = eagerness_curve(&p).unwrap();
        let (_, tp, _, _) = gaussian_oracle();
        let t100 = approx_optimal_threshold(&curve, 100.0, p.m1).unwrap();
        assert!((t100.h_star_inf - 100.0f64.ln() / tp).abs() < 1e-10);
        let gamma_sq = tp.powi(-3);
        let b = (0.5 * (std::f64::consts::PI * gamma_sq * tp).sqrt()).ln();
        assert!((t100.b - b).abs() < 1e-10);
        assert!((t100.h_star_1 - (100.0f64.ln() + b) / tp).abs() < 1e-10);
        assert!((t100.j_star_inf - t100.h_star_inf / 0.5).abs() < 1e-12);
        // the refinement gap b / theta_plus does not depend on kappa
        let gaps: Vec<f64> = [2.0, 10.0, 100.0]
            .iter()
            .map(|&k| {
                let t = approx_optimal_threshold(&curve, k, p.m1).unwrap();
                t.h_star_1 - t.h_star_inf
            })
            .collect();
        assert!((gaps[0] - gaps[1]).abs() < 1e-12);
        assert!((gaps[1] - gaps[2]).abs() < 1e-12);
        // numeric minimizer actually minimizes the closed-form cost nearby
        for h in [t100.h_numeric * 0.9, t100.h_numeric * 1.1] {
            assert!(approx_cost(&curve, h, 100.0, p.m1).unwrap() >= t100.j_numeric - 1e-12);
        }
        assert!(approx_optimal_threshold(&curve, 1.0, p.m1).is_err());
    }

    #[test]
    fn lambert_inverse_pair() {
        let e = std::f64::consts::E;
        let (eps, bound) = lambert_bound_check(e).unwrap();
        // W(e) = e - 1, L(e - 1) = e - 1 + ln(e - 1)
        let l = (e - 1.0) + (e - 1.0f64).ln();
        assert!((l - 2.259_606_6).abs() < 1e-6);
        assert!((eps - (e - l)).abs() < 1e-14);
        assert!((eps - 0.458_675_2).abs() < 1e-6);
        assert!((bound - 1.0 / (e - 1.0)).abs() < 1e-14);
        assert!(eps >= 0.0 && eps <= bound);
        // large z: the bound collapses
        let (eps6, bound6) = lambert_bound_check(1e6).unwrap();
        assert!(bound6 < 1.4e-5);
        assert!(eps6 >= 0.0 && eps6 <= bound6);
        // monotone decay of the residual along a log grid
        let mut prev = f64::INFINITY;
        for k in 1..=6 {
            let (eps, bound) = lambert_bound_check(10f64.powi(k)).unwrap();
            assert!(eps >= 0.0 && eps <= bound);
            assert!(eps < prev);
            prev = eps;
        }
        assert!(lambert_bound_check(1.0).is_err());
        assert!(lambert_inverse(0.0).is_err());
    }

    #[test]
    fn entropy_rates_llr_identities() {
        // unit tilt of the likelihood ratio reproduces the post law, so the
        // post-vs-twisted rate vanishes and the decomposition closes
        let m = presets::two_symbol();
        let s = m.llr().unwrap();
        let er = entropy_rates(&m, &s).unwrap();
        assert!(er.k_post_vs_twisted.abs() < 1e-12);
        assert!(er.m1_residual.abs() < 1e-9);
        let m1 = m.mean_post(&s).unwrap();
        assert!((er.k_twisted_vs_pre - m1).abs() < 1e-12);
        assert!((er.k_twisted_vs_pre - 0.58268).abs() < 1e-5);

        let mk = presets::markov_two_state();
        let sk = mk.llr().unwrap();
        let er = entropy_rates(&mk, &sk).unwrap();
        assert!(er.k_post_vs_twisted.abs() < 1e-10);
        assert!(er.m1_residual.abs() < 1e-9);
    }

    #[test]
    fn entropy_rates_zero_statistic() {
        let m = presets::two_symbol();
        let zero = Statistic::Table(vec![0.0, 0.0]);
        let er = entropy_rates(&m, &zero).unwrap();
        assert!(er.k_twisted_vs_pre.abs() < 1e-14);
    }

    #[test]
    fn entropy_rates_decomposition_off_llr() {
        // the decomposition holds for any admissible statistic
        let m = presets::two_symbol();
        let s = Statistic::Table(vec![-0.5, 1.0]);
        let er = entropy_rates(&m, &s).unwrap();
        assert!(er.m1_residual.abs() < 1e-9, "residual {}", er.m1_residual);
        let mk = presets::markov_two_state();
        let sk = Statistic::PairTable(nalgebra::DMatrix::from_row_slice(
            2,
            2,
            &[-0.4, 0.9, 0.3, -0.8],
        ));
        let er = entropy_rates(&mk, &sk).unwrap();
        assert!(er.m1_residual.abs() < 1e-9, "residual {}", er.m1_residual);
    }

    #[test]
    fn entropy_rates_support_mismatch_is_infinite() {
        let m = ObservationModel::iid_discrete(vec![0.0, 1.0], vec![0.5, 0.5]).unwrap();
        let s = Statistic::Table(vec![-1.0, 1.0]);
        let er = entropy_rates(&m, &s).unwrap();
        assert!(er.k_post_vs_pre.is_infinite());
    }

    #[test]
    fn riemann_sum_matches_window_integral_at_desk_scale() {
        // sum_n exp(-H Gc(n/H)) over |n/H - s*| <= delta_H against
        // H * integral of exp(-H Gc(s)) over the same window: the ratio
        // approaches 1 and the error shrinks as H grows
        let p = gaussian_profile();
        let curve = eagerness_curve(&p).unwrap();
        let mut errs = Vec::new();
        for &h in &[20.0, 40.0, 80.0] {
            let delta = curve.delta_h(h);
            let lo = curve.s_star - delta;
            let hi = curve.s_star + delta;
            let mut sum = 0.0;
            let n_lo = (lo * h).ceil() as i64;
            let n_hi = (hi * h).floor() as i64;
            for n in n_lo..=n_hi {
                let s = n as f64 / h;
                sum += (-h * curve.g_centered(s).unwrap()).exp();
            }
            let integral = crate::numerics::simpson(lo, hi, 4000, |s| {
                (-h * curve.g_centered(s).unwrap()).exp()
            });
            let ratio = sum / (h * integral);
            errs.push((ratio - 1.0).abs());
        }
        assert!(errs[0] < 0.05, "errs = {errs:?}");
        assert!(errs[1] < errs[0]);
        assert!(errs[2] < errs[1]);
    }

    #[test]
    fn gaussian_tail_sandwich() {
        // x/(1+x^2) f(x) < Q(x) < f(x)/x with Q computed by quadrature
        let f = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        for k in 1..=16 {
            let x = 0.5 * k as f64;
            let q = crate::numerics::simpson(x, x + 40.0, 200_000, f);
            assert!(x / (1.0 + x * x) * f(x) < q, "lower bound fails at {x}");
            assert!(q < f(x) / x, "upper bound fails at {x}");
        }
    }
}
