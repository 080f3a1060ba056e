//! Observation models, change-time laws, and statistic function classes.
//!
//! A model pairs a pre-change law with a post-change law (or wraps a single
//! hidden chain with an absorbing post-change region) and provides exact
//! means, likelihood ratios, and seeded samplers. The detector in
//! [`crate::cusum`] is driven by a scalar statistic of each observation;
//! the statistic variants here cover tabular scores on finite alphabets,
//! transition-pair scores for Markov observations, closed-form quadratic
//! scores on the real line, and parametric affine-in-features classes used
//! by the optimizer.

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics;

const PMF_SUM_TOL: f64 = 1e-12;
const STATIONARY_TOL: f64 = 1e-10;

// ---------------------------------------------------------------------------
// Observations
// ---------------------------------------------------------------------------

/// A single observation. Finite-alphabet models emit `Label`, the Gaussian
/// model emits `Real`, and Markov models emit the transition pair
/// `(from, to)` so that pair statistics are functions of one observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Obs {
    Label(usize),
    Real(f64),
    Pair(usize, usize),
}

// ---------------------------------------------------------------------------
// Observation models
// ---------------------------------------------------------------------------

/// Pre/post-change observation law pair, or a hidden-chain model in which the
/// change time is the absorption time of the chain.
#[derive(Debug, Clone, PartialEq)]
pub enum ObservationModel {
    /// i.i.d. Gaussian observations: N(pre_mean, pre_var) before the change,
    /// N(post_mean, post_var) after.
    IidGaussian {
        pre_mean: f64,
        pre_var: f64,
        post_mean: f64,
        post_var: f64,
    },
    /// i.i.d. draws from a finite alphabet `0..m`, pmf `pmf0` before the
    /// change and `pmf1` after.
    IidDiscrete { pmf0: Vec<f64>, pmf1: Vec<f64> },
    /// Stationary finite-state Markov chains with kernels `p0`, `p1` and
    /// their stationary pmfs. Observations are transition pairs.
    FiniteMarkov {
        p0: DMatrix<f64>,
        p1: DMatrix<f64>,
        mu0: Vec<f64>,
        mu1: Vec<f64>,
    },
    /// Partially observed chain: one kernel on states `0..n`, a pre-change
    /// region `x0` whose complement is absorbing, and an observation label
    /// per state. The change time is the hitting time of the complement.
    Pomdp {
        kernel: DMatrix<f64>,
        x0: Vec<usize>,
        obs_map: Vec<usize>,
        init: usize,
    },
}

fn check_pmf(p: &[f64], what: &str) -> Result<()> {
    if p.is_empty() {
        return Err(Error::InvalidModel(format!("{what} is empty")));
    }
    if p.iter().any(|&x| x < 0.0 || !x.is_finite()) {
        return Err(Error::InvalidModel(format!("{what} has a negative or non-finite entry")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > PMF_SUM_TOL {
        return Err(Error::InvalidModel(format!("{what} sums to {s}, not 1")));
    }
    Ok(())
}

fn check_kernel(p: &DMatrix<f64>, what: &str) -> Result<()> {
    if p.nrows() != p.ncols() || p.nrows() == 0 {
        return Err(Error::InvalidModel(format!("{what} must be square and nonempty")));
    }
    for i in 0..p.nrows() {
        let row: Vec<f64> = (0..p.ncols()).map(|j| p[(i, j)]).collect();
        check_pmf(&row, &format!("{what} row {i}"))?;
    }
    Ok(())
}

/// Stationary pmf of a row-stochastic kernel via a dense linear solve of
/// `mu P = mu`, `sum(mu) = 1`.
pub fn stationary_pmf(p: &DMatrix<f64>) -> Result<Vec<f64>> {
    let n = p.nrows();
    // (P^T - I) mu = 0 with the last equation replaced by sum(mu) = 1
    let mut a = p.transpose() - DMatrix::<f64>::identity(n, n);
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut b = nalgebra::DVector::<f64>::zeros(n);
    b[n - 1] = 1.0;
    let lu = a.lu();
    let mu = lu
        .solve(&b)
        .ok_or_else(|| Error::InvalidModel("kernel has no unique stationary pmf".into()))?;
    let v: Vec<f64> = mu.iter().copied().collect();
    if v.iter().any(|&x| x < -1e-9) {
        return Err(Error::InvalidModel("stationary solve produced negative mass".into()));
    }
    let s: f64 = v.iter().sum();
    Ok(v.iter().map(|&x| (x / s).max(0.0)).collect())
}

impl ObservationModel {
    /// i.i.d. Gaussian model; variances must be positive.
    pub fn iid_gaussian(pre_mean: f64, pre_var: f64, post_mean: f64, post_var: f64) -> Result<Self> {
        if pre_var <= 0.0 || post_var <= 0.0 {
            return Err(Error::InvalidModel("variances must be positive".into()));
        }
        Ok(ObservationModel::IidGaussian { pre_mean, pre_var, post_mean, post_var })
    }

    /// i.i.d. finite-alphabet model.
    pub fn iid_discrete(pmf0: Vec<f64>, pmf1: Vec<f64>) -> Result<Self> {
        check_pmf(&pmf0, "pmf0")?;
        check_pmf(&pmf1, "pmf1")?;
        if pmf0.len() != pmf1.len() {
            return Err(Error::InvalidModel("pmf0 and pmf1 have different alphabets".into()));
        }
        Ok(ObservationModel::IidDiscrete { pmf0, pmf1 })
    }

    /// Stationary Markov model; stationary pmfs are solved from the kernels.
    pub fn finite_markov(p0: DMatrix<f64>, p1: DMatrix<f64>) -> Result<Self> {
        check_kernel(&p0, "p0")?;
        check_kernel(&p1, "p1")?;
        if p0.nrows() != p1.nrows() {
            return Err(Error::InvalidModel("p0 and p1 have different state counts".into()));
        }
        let mu0 = stationary_pmf(&p0)?;
        let mu1 = stationary_pmf(&p1)?;
        let model = ObservationModel::FiniteMarkov { p0, p1, mu0, mu1 };
        model.check_stationarity()?;
        Ok(model)
    }

    /// Hidden-chain model. `x0` lists the pre-change states; every state not
    /// in `x0` must be absorbing as a set.
    pub fn pomdp(kernel: DMatrix<f64>, x0: Vec<usize>, obs_map: Vec<usize>, init: usize) -> Result<Self> {
        check_kernel(&kernel, "kernel")?;
        let n = kernel.nrows();
        if obs_map.len() != n {
            return Err(Error::InvalidModel("obs_map length must match state count".into()));
        }
        let mut in_x0 = vec![false; n];
        for &z in &x0 {
            if z >= n {
                return Err(Error::InvalidModel(format!("x0 state {z} out of range")));
            }
            in_x0[z] = true;
        }
        if x0.is_empty() || x0.len() == n {
            return Err(Error::InvalidModel("x0 must be a proper nonempty subset of the states".into()));
        }
        for z in 0..n {
            if !in_x0[z] {
                for z2 in 0..n {
                    if in_x0[z2] && kernel[(z, z2)] != 0.0 {
                        return Err(Error::InvalidModel(format!(
                            "post-change region not absorbing: kernel[({z},{z2})] = {}",
                            kernel[(z, z2)]
                        )));
                    }
                }
            }
        }
        if !in_x0.get(init).copied().unwrap_or(false) {
            return Err(Error::InvalidModel("initial state must lie in x0".into()));
        }
        Ok(ObservationModel::Pomdp { kernel, x0, obs_map, init })
    }

    fn check_stationarity(&self) -> Result<()> {
        if let ObservationModel::FiniteMarkov { p0, p1, mu0, mu1 } = self {
            for (p, mu, name) in [(p0, mu0, "mu0"), (p1, mu1, "mu1")] {
                let n = p.nrows();
                for j in 0..n {
                    let lhs: f64 = (0..n).map(|i| mu[i] * p[(i, j)]).sum();
                    if (lhs - mu[j]).abs() > STATIONARY_TOL {
                        return Err(Error::InvalidModel(format!(
                            "{name} not stationary at state {j}: residual {}",
                            lhs - mu[j]
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Exact log likelihood ratio statistic of this model (post over pre).
    ///
    /// Errors when pre-change mass vanishes on a cell that carries
    /// post-change mass, or for the hidden-chain variant where the marginal
    /// likelihood ratio is not a function of one observation.
    pub fn llr(&self) -> Result<Statistic> {
        match self {
            ObservationModel::IidGaussian { pre_mean, pre_var, post_mean, post_var } => {
                // log N(m1,v1)(y) - log N(m0,v0)(y), a quadratic in y
                let (m0, v0, m1, v1) = (*pre_mean, *pre_var, *post_mean, *post_var);
                let a2 = 0.5 / v0 - 0.5 / v1;
                let a1 = m1 / v1 - m0 / v0;
                let a0 = 0.5 * (v0 / v1).ln() + 0.5 * (m0 * m0 / v0 - m1 * m1 / v1);
                Ok(Statistic::Quadratic { a2, a1, a0 })
            }
            ObservationModel::IidDiscrete { pmf0, pmf1 } => {
                let mut values = Vec::with_capacity(pmf0.len());
                for (y, (&p0, &p1)) in pmf0.iter().zip(pmf1).enumerate() {
                    if p0 == 0.0 && p1 > 0.0 {
                        return Err(Error::UnboundedLlr { index: format!("symbol {y}") });
                    }
                    values.push(if p1 == 0.0 && p0 == 0.0 { 0.0 } else if p1 == 0.0 {
                        f64::NEG_INFINITY
                    } else {
                        (p1 / p0).ln()
                    });
                }
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::UnboundedLlr { index: "post-change support gap".into() });
                }
                Ok(Statistic::Table(values))
            }
            ObservationModel::FiniteMarkov { p0, p1, .. } => {
                let n = p0.nrows();
                let mut l = DMatrix::<f64>::zeros(n, n);
                for i in 0..n {
                    for j in 0..n {
                        let (a, b) = (p0[(i, j)], p1[(i, j)]);
                        if a == 0.0 && b > 0.0 {
                            return Err(Error::UnboundedLlr { index: format!("transition ({i},{j})") });
                        }
                        l[(i, j)] = if b == 0.0 { 0.0 } else { (b / a).ln() };
                    }
                }
                Ok(Statistic::PairTable(l))
            }
            ObservationModel::Pomdp { .. } => Err(Error::StatisticMismatch(
                "the hidden-chain model has no single-observation likelihood ratio".into(),
            )),
        }
    }

    /// Mean of `stat` under the pre-change stationary observation law.
    pub fn mean_pre(&self, stat: &Statistic) -> Result<f64> {
        self.mean_under(stat, false)
    }

    /// Mean of `stat` under the post-change stationary observation law.
    pub fn mean_post(&self, stat: &Statistic) -> Result<f64> {
        self.mean_under(stat, true)
    }

    fn mean_under(&self, stat: &Statistic, post: bool) -> Result<f64> {
        match self {
            ObservationModel::IidGaussian { pre_mean, pre_var, post_mean, post_var } => {
                let (mu, var) = if post { (*post_mean, *post_var) } else { (*pre_mean, *pre_var) };
                stat.gaussian_mean(mu, var)
            }
            ObservationModel::IidDiscrete { pmf0, pmf1 } => {
                let pmf = if post { pmf1 } else { pmf0 };
                let mut s = 0.0;
                for (y, &p) in pmf.iter().enumerate() {
                    if p > 0.0 {
                        s += p * stat.eval(&Obs::Label(y))?;
                    }
                }
                Ok(s)
            }
            ObservationModel::FiniteMarkov { p0, p1, mu0, mu1 } => {
                let (p, mu) = if post { (p1, mu1) } else { (p0, mu0) };
                let n = p.nrows();
                let mut s = 0.0;
                for x in 0..n {
                    for z in 0..n {
                        let w = mu[x] * p[(x, z)];
                        if w > 0.0 {
                            s += w * stat.eval(&Obs::Pair(x, z))?;
                        }
                    }
                }
                Ok(s)
            }
            ObservationModel::Pomdp { .. } => Err(Error::StatisticMismatch(
                "stationary means of the hidden-chain model come from the metastable analysis".into(),
            )),
        }
    }

    /// Pre/post stationary means `(m0, m1)` of `stat`, enforcing the sign
    /// convention `m0 < 0 < m1`. On violation the error carries both values
    /// so callers may proceed for diagnostics.
    pub fn stationary_means(&self, stat: &Statistic) -> Result<(f64, f64)> {
        let m0 = self.mean_pre(stat)?;
        let m1 = self.mean_post(stat)?;
        if m0 >= 0.0 || m1 <= 0.0 {
            return Err(Error::SignAssumption { m0, m1 });
        }
        Ok((m0, m1))
    }

    /// Alphabet size of the observation space for finite models.
    pub fn alphabet_len(&self) -> Option<usize> {
        match self {
            ObservationModel::IidDiscrete { pmf0, .. } => Some(pmf0.len()),
            ObservationModel::Pomdp { obs_map, .. } => obs_map.iter().max().map(|&m| m + 1),
            _ => None,
        }
    }

    /// Sample a change time and an observation stream `Y_0 ..= Y_horizon`.
    ///
    /// Observations with index `k < change_time` follow the pre-change law
    /// and the rest follow the post-change law; the pre- and post-change
    /// processes and the change time are sampled independently of each
    /// other. Deterministic for a fixed seed. For the hidden-chain variant
    /// the change time is the absorption time of the chain (the law argument
    /// is ignored) and is `None` when absorption happens after the horizon.
    pub fn sample_path(&self, law: &ChangeTimeLaw, seed: u64, horizon: usize) -> SamplePath {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        match self {
            ObservationModel::Pomdp { kernel, x0, obs_map, init } => {
                let mut in_x0 = vec![false; kernel.nrows()];
                for &z in x0 {
                    in_x0[z] = true;
                }
                let mut obs = Vec::with_capacity(horizon + 1);
                let mut state = *init;
                let mut change: Option<usize> = None;
                for k in 0..=horizon {
                    if change.is_none() && !in_x0[state] {
                        change = Some(k);
                    }
                    obs.push(Obs::Label(obs_map[state]));
                    state = step_kernel(kernel, state, &mut rng);
                }
                SamplePath { change_time: change, observations: obs }
            }
            _ => {
                let tau = law.sample(&mut rng);
                let obs = self.sample_spliced(tau, horizon, &mut rng);
                SamplePath { change_time: Some(tau), observations: obs }
            }
        }
    }

    /// Observation stream for a given change time (independent-model variants).
    pub(crate) fn sample_spliced(&self, tau: usize, horizon: usize, rng: &mut ChaCha12Rng) -> Vec<Obs> {
        let mut obs = Vec::with_capacity(horizon + 1);
        match self {
            ObservationModel::IidGaussian { pre_mean, pre_var, post_mean, post_var } => {
                let pre = rand_distr::Normal::new(*pre_mean, pre_var.sqrt()).expect("validated");
                let post = rand_distr::Normal::new(*post_mean, post_var.sqrt()).expect("validated");
                for k in 0..=horizon {
                    let d = if k < tau { &pre } else { &post };
                    obs.push(Obs::Real(rng.sample(d)));
                }
            }
            ObservationModel::IidDiscrete { pmf0, pmf1 } => {
                for k in 0..=horizon {
                    let pmf = if k < tau { pmf0 } else { pmf1 };
                    obs.push(Obs::Label(sample_pmf(pmf, rng)));
                }
            }
            ObservationModel::FiniteMarkov { p0, p1, mu0, mu1 } => {
                // two independent stationary chains, each seeded one step back
                // so that Y_0 is already a stationary transition pair
                let mut pre_state = sample_pmf(mu0, rng);
                let mut post_state = sample_pmf(mu1, rng);
                for k in 0..=horizon {
                    if k < tau {
                        let next = step_kernel(p0, pre_state, rng);
                        obs.push(Obs::Pair(pre_state, next));
                        pre_state = next;
                        post_state = step_kernel(p1, post_state, rng);
                    } else {
                        let next = step_kernel(p1, post_state, rng);
                        obs.push(Obs::Pair(post_state, next));
                        post_state = next;
                    }
                }
            }
            ObservationModel::Pomdp { .. } => unreachable!("hidden chain paths are sampled jointly"),
        }
        obs
    }
}

fn sample_pmf(pmf: &[f64], rng: &mut ChaCha12Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in pmf.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    pmf.len() - 1
}

pub(crate) fn step_kernel(p: &DMatrix<f64>, from: usize, rng: &mut ChaCha12Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for j in 0..p.ncols() {
        acc += p[(from, j)];
        if u < acc {
            return j;
        }
    }
    p.ncols() - 1
}

/// A sampled change time plus the observation stream `Y_0 ..= Y_horizon`.
#[derive(Debug, Clone)]
pub struct SamplePath {
    pub change_time: Option<usize>,
    pub observations: Vec<Obs>,
}

// ---------------------------------------------------------------------------
// Change-time laws
// ---------------------------------------------------------------------------

/// Law of the change time on `{0, 1, 2, ...}` with survival
/// `S(n) = P(tau >= n)`, `S(0) = 1`. Geometric components are parameterized
/// so that `S(n) = (1 - rho)^n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ChangeTimeLaw {
    Geometric { rho: f64 },
    GeometricMixture { components: Vec<MixtureComponent> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub rho: f64,
}

impl ChangeTimeLaw {
    pub fn geometric(rho: f64) -> Result<Self> {
        let law = ChangeTimeLaw::Geometric { rho };
        law.validate()?;
        Ok(law)
    }

    pub fn mixture(components: Vec<(f64, f64)>) -> Result<Self> {
        let law = ChangeTimeLaw::GeometricMixture {
            components: components
                .into_iter()
                .map(|(weight, rho)| MixtureComponent { weight, rho })
                .collect(),
        };
        law.validate()?;
        Ok(law)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ChangeTimeLaw::Geometric { rho } => {
                if !(*rho > 0.0 && *rho < 1.0) {
                    return Err(Error::InvalidLaw(format!("rho = {rho} not in (0, 1)")));
                }
            }
            ChangeTimeLaw::GeometricMixture { components } => {
                if components.is_empty() {
                    return Err(Error::InvalidLaw("mixture has no components".into()));
                }
                let mut wsum = 0.0;
                for c in components {
                    if !(c.rho > 0.0 && c.rho < 1.0) {
                        return Err(Error::InvalidLaw(format!("rho = {} not in (0, 1)", c.rho)));
                    }
                    if c.weight <= 0.0 {
                        return Err(Error::InvalidLaw(format!("weight = {} not positive", c.weight)));
                    }
                    wsum += c.weight;
                }
                if (wsum - 1.0).abs() > PMF_SUM_TOL {
                    return Err(Error::InvalidLaw(format!("weights sum to {wsum}, not 1")));
                }
            }
        }
        Ok(())
    }

    /// Mixture view: list of `(weight, rho)` pairs.
    pub fn components(&self) -> Vec<(f64, f64)> {
        match self {
            ChangeTimeLaw::Geometric { rho } => vec![(1.0, *rho)],
            ChangeTimeLaw::GeometricMixture { components } => {
                components.iter().map(|c| (c.weight, c.rho)).collect()
            }
        }
    }

    /// Survival `S(n) = P(tau >= n)`, exact.
    pub fn survival(&self, n: u64) -> f64 {
        self.components()
            .iter()
            .map(|(w, rho)| w * (1.0 - rho).powi(n.min(i32::MAX as u64) as i32))
            .sum()
    }

    /// Tail decay rate: `-(1/n) log S(n) -> decay_rate`. For mixtures the
    /// smallest exponent dominates the tail.
    pub fn decay_rate(&self) -> f64 {
        self.components()
            .iter()
            .map(|(_, rho)| -(1.0 - rho).ln())
            .fold(f64::INFINITY, f64::min)
    }

    /// Draw a change time by inverse transform on the mixture.
    pub fn sample(&self, rng: &mut ChaCha12Rng) -> usize {
        let comps = self.components();
        let mut idx = 0;
        if comps.len() > 1 {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for (i, (w, _)) in comps.iter().enumerate() {
                acc += w;
                if u < acc {
                    idx = i;
                    break;
                }
                idx = i;
            }
        }
        let rho = comps[idx].1;
        // P{tau = k} = rho (1-rho)^k  <=>  tau = floor(log U / log(1-rho))
        let u: f64 = rng.random();
        let t = (u.ln() / (1.0 - rho).ln()).floor();
        if t < 0.0 {
            0
        } else {
            t as usize
        }
    }
}

// ---------------------------------------------------------------------------
// Statistics
// ---------------------------------------------------------------------------

/// Scalar score of one observation, the driver of the CUSUM recursion.
#[derive(Debug, Clone, PartialEq)]
pub enum Statistic {
    /// Score per observation label.
    Table(Vec<f64>),
    /// Score per transition pair `(from, to)`.
    PairTable(DMatrix<f64>),
    /// Closed-form quadratic score on real observations:
    /// `a2 y^2 + a1 y + a0`. The Gaussian likelihood ratio has this form.
    Quadratic { a2: f64, a1: f64, a0: f64 },
    /// Affine-in-features score `theta . psi(y)` with a normalization vector
    /// `v` satisfying `v . psi == 1`.
    Affine(AffineStatistic),
}

/// Parametric statistic `F_theta(y) = theta . psi(y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineStatistic {
    pub theta: Vec<f64>,
    pub features: Vec<Feature>,
    pub v: Vec<f64>,
}

/// One basis statistic of an affine class.
#[derive(Debug, Clone, PartialEq)]
pub enum Feature {
    /// Constant 1.
    Constant,
    /// Table over observation labels.
    LabelTable(Vec<f64>),
    /// Table over transition pairs.
    PairTable(DMatrix<f64>),
    /// Monomial `y^k` on real observations.
    Monomial(u32),
}

impl Feature {
    pub fn eval(&self, obs: &Obs) -> Result<f64> {
        match (self, obs) {
            (Feature::Constant, _) => Ok(1.0),
            (Feature::LabelTable(t), Obs::Label(y)) => t
                .get(*y)
                .copied()
                .ok_or_else(|| Error::StatisticMismatch(format!("label {y} outside feature table"))),
            (Feature::PairTable(t), Obs::Pair(x, z)) => {
                if *x < t.nrows() && *z < t.ncols() {
                    Ok(t[(*x, *z)])
                } else {
                    Err(Error::StatisticMismatch(format!("pair ({x},{z}) outside feature table")))
                }
            }
            (Feature::Monomial(k), Obs::Real(y)) => Ok(y.powi(*k as i32)),
            _ => Err(Error::StatisticMismatch(
                "feature and observation kinds do not match".into(),
            )),
        }
    }
}

impl AffineStatistic {
    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn eval(&self, obs: &Obs) -> Result<f64> {
        let mut s = 0.0;
        for (t, f) in self.theta.iter().zip(&self.features) {
            s += t * f.eval(obs)?;
        }
        Ok(s)
    }
}

impl Statistic {
    /// Evaluate the score of one observation.
    pub fn eval(&self, obs: &Obs) -> Result<f64> {
        match (self, obs) {
            (Statistic::Table(t), Obs::Label(y)) => t
                .get(*y)
                .copied()
                .ok_or_else(|| Error::StatisticMismatch(format!("label {y} outside score table"))),
            (Statistic::PairTable(t), Obs::Pair(x, z)) => {
                if *x < t.nrows() && *z < t.ncols() {
                    Ok(t[(*x, *z)])
                } else {
                    Err(Error::StatisticMismatch(format!("pair ({x},{z}) outside score table")))
                }
            }
            (Statistic::Quadratic { a2, a1, a0 }, Obs::Real(y)) => Ok((a2 * y + a1) * y + a0),
            (Statistic::Affine(a), _) => a.eval(obs),
            _ => Err(Error::StatisticMismatch(
                "statistic and observation kinds do not match".into(),
            )),
        }
    }

    /// Mean under N(mu, var): closed form for quadratic/affine-in-monomial
    /// scores, Gauss-Hermite quadrature otherwise.
    pub(crate) fn gaussian_mean(&self, mu: f64, var: f64) -> Result<f64> {
        match self {
            Statistic::Quadratic { a2, a1, a0 } => Ok(a2 * (var + mu * mu) + a1 * mu + a0),
            Statistic::Affine(a) => {
                let mut s = 0.0;
                for (t, f) in a.theta.iter().zip(&a.features) {
                    s += t * match f {
                        Feature::Constant => 1.0,
                        Feature::Monomial(0) => 1.0,
                        Feature::Monomial(1) => mu,
                        Feature::Monomial(2) => var + mu * mu,
                        Feature::Monomial(k) => {
                            let k = *k;
                            numerics::gaussian_expectation(mu, var, |y| y.powi(k as i32))?
                        }
                        _ => {
                            return Err(Error::StatisticMismatch(
                                "non-real feature evaluated on the Gaussian model".into(),
                            ))
                        }
                    };
                }
                Ok(s)
            }
            Statistic::Table(_) | Statistic::PairTable(_) => Err(Error::StatisticMismatch(
                "tabular statistic evaluated on the Gaussian model".into(),
            )),
        }
    }

    /// Scale the statistic by `k`, preserving its form.
    pub fn scaled(&self, k: f64) -> Statistic {
        match self {
            Statistic::Table(t) => Statistic::Table(t.iter().map(|v| k * v).collect()),
            Statistic::PairTable(t) => Statistic::PairTable(t.map(|v| k * v)),
            Statistic::Quadratic { a2, a1, a0 } => Statistic::Quadratic { a2: k * a2, a1: k * a1, a0: k * a0 },
            Statistic::Affine(a) => Statistic::Affine(AffineStatistic {
                theta: a.theta.iter().map(|t| k * t).collect(),
                features: a.features.clone(),
                v: a.v.clone(),
            }),
        }
    }

    /// Add a constant offset, preserving the form where possible.
    pub fn offset(&self, c: f64) -> Statistic {
        match self {
            Statistic::Table(t) => Statistic::Table(t.iter().map(|v| v + c).collect()),
            Statistic::PairTable(t) => Statistic::PairTable(t.map(|v| v + c)),
            Statistic::Quadratic { a2, a1, a0 } => Statistic::Quadratic { a2: *a2, a1: *a1, a0: a0 + c },
            Statistic::Affine(a) => {
                // v . psi == 1 makes (theta + c v) . psi = F + c
                Statistic::Affine(AffineStatistic {
                    theta: a.theta.iter().zip(&a.v).map(|(t, v)| t + c * v).collect(),
                    features: a.features.clone(),
                    v: a.v.clone(),
                })
            }
        }
    }
}
