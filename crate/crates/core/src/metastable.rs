//! Metastability analysis of hidden-chain models.
//!
//! When the change time is the absorption time of a finite chain, the
//! pre-change block `M` of the kernel (rows and columns restricted to the
//! surviving region) governs everything: its Perron-Frobenius eigenvalue
//! `lambda in (0, 1)` gives the tail decay rate `-log lambda` of the change
//! time, the eigenvector-twisted kernel is an honest Markov chain whose
//! invariant pmf describes the process conditioned on survival, and the
//! conditional law of the state given survival converges geometrically to
//! the eigenvector-weighted (Yaglom) pmf. Feeding the induced observation
//! marginals and the conditional cumulant below into the analysis pipeline
//! reproduces the detection approximations of the independent-change-time
//! model.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{stationary_pmf, Obs, ObservationModel, Statistic};
use crate::numerics;

/// Spectral summary of the survival block of an absorbing chain.
#[derive(Debug, Clone)]
pub struct MetastableReport {
    /// Full chain kernel.
    pub kernel: DMatrix<f64>,
    /// Global indices of the pre-change (surviving) states, in order.
    pub x0: Vec<usize>,
    /// Observation label per global state.
    pub obs_map: Vec<usize>,
    /// Survival block `M[i][j] = P(x0[i], x0[j])`.
    pub restricted: DMatrix<f64>,
    /// Perron-Frobenius eigenvalue of the survival block, in (0, 1).
    pub lambda: f64,
    /// Left eigenvector (scaled so `u . v = 1`).
    pub u: Vec<f64>,
    /// Right eigenvector (scaled to unit sup-norm).
    pub v: Vec<f64>,
    /// Eigenvector-twisted kernel `P_twist[i][j] = M[i][j] v[j] / (lambda v[i])`,
    /// row-stochastic on the surviving states.
    pub twisted_kernel: DMatrix<f64>,
    /// Invariant pmf of the twisted kernel: `u[i] v[i]` normalized.
    pub quasi_stationary: Vec<f64>,
    /// Yaglom (conditional-on-survival) pmf: `quasi_stationary[i] / v[i]`
    /// normalized, proportional to `u`.
    pub conditional_law: Vec<f64>,
    /// Tail decay rate of the change time: `-log lambda`.
    pub decay_rate: f64,
    /// Expected absorption time from each surviving state (the stopping
    /// cost per unit of false-alarm weight in the optimal-stopping view).
    pub expected_absorption: Vec<f64>,
    /// Per-state running cost of not stopping: 1 on the absorbed region.
    pub running_cost: Vec<f64>,
}

fn check_preconditions(kernel: &DMatrix<f64>, x0: &[usize]) -> Result<()> {
    let n = kernel.nrows();
    let mut in_x0 = vec![false; n];
    for &z in x0 {
        in_x0[z] = true;
    }

    // absorbing complement
    for z in 0..n {
        if !in_x0[z] {
            for z2 in 0..n {
                if in_x0[z2] && kernel[(z, z2)] > 0.0 {
                    return Err(Error::ChainPrecondition(format!(
                        "absorbing: post-change state {z} leaks back to {z2}"
                    )));
                }
            }
        }
    }

    // uni-chain: some absorbed state reachable from every state
    let reaches = |target: usize| -> bool {
        let mut seen = vec![false; n];
        let mut stack = vec![target];
        seen[target] = true;
        while let Some(j) = stack.pop() {
            for i in 0..n {
                if !seen[i] && kernel[(i, j)] > 0.0 {
                    seen[i] = true;
                    stack.push(i);
                }
            }
        }
        seen.iter().all(|&s| s)
    };
    let ok = (0..n).filter(|z| !in_x0[*z]).any(reaches);
    if !ok {
        return Err(Error::ChainPrecondition(
            "uni-chain: no absorbed state is reachable from every state".into(),
        ));
    }

    // primitivity of the survival block: some power at most n0^2 has a
    // strictly positive column (every surviving state reaches one common
    // state in exactly k steps)
    let n0 = x0.len();
    let words = n0.div_ceil(64);
    let mut base = vec![vec![0u64; words]; n0]; // boolean rows of M
    for (i, &zi) in x0.iter().enumerate() {
        for (j, &zj) in x0.iter().enumerate() {
            if kernel[(zi, zj)] > 0.0 {
                base[i][j / 64] |= 1 << (j % 64);
            }
        }
    }
    let full_col = |b: &Vec<Vec<u64>>, j: usize| (0..n0).all(|i| b[i][j / 64] >> (j % 64) & 1 == 1);
    let mut power = base.clone();
    let mut seen = std::collections::HashSet::new();
    let mut found = false;
    for _ in 0..n0 * n0 {
        if (0..n0).any(|j| full_col(&power, j)) {
            found = true;
            break;
        }
        if !seen.insert(power.clone()) {
            break; // boolean powers entered a cycle with no positive column
        }
        // boolean matrix product power <- power * base
        let mut next = vec![vec![0u64; words]; n0];
        for i in 0..n0 {
            for k in 0..n0 {
                if power[i][k / 64] >> (k % 64) & 1 == 1 {
                    for w in 0..words {
                        next[i][w] |= base[k][w];
                    }
                }
            }
        }
        power = next;
    }
    if !found {
        return Err(Error::ChainPrecondition(
            "primitivity: no power of the survival block has a strictly positive column".into(),
        ));
    }
    Ok(())
}

/// Perron-Frobenius factorization of the survival block of an absorbing
/// chain, with the twisted kernel and its invariant and Yaglom pmfs.
pub fn survival_factorization(model: &ObservationModel) -> Result<MetastableReport> {
    match model {
        ObservationModel::Pomdp { kernel, x0, obs_map, .. } => {
            survival_factorization_raw(kernel, x0, obs_map)
        }
        _ => Err(Error::StatisticMismatch(
            "metastability analysis applies to the hidden-chain model".into(),
        )),
    }
}

/// As [`survival_factorization`] but from raw parts.
pub fn survival_factorization_raw(
    kernel: &DMatrix<f64>,
    x0: &[usize],
    obs_map: &[usize],
) -> Result<MetastableReport> {
    check_preconditions(kernel, x0)?;
    let n0 = x0.len();
    let mut restricted = DMatrix::<f64>::zeros(n0, n0);
    for (i, &zi) in x0.iter().enumerate() {
        for (j, &zj) in x0.iter().enumerate() {
            restricted[(i, j)] = kernel[(zi, zj)];
        }
    }
    let (lambda, u, v) = numerics::perron_triple(&restricted)?;
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::ChainPrecondition(format!(
            "survival eigenvalue {lambda} outside (0, 1); the surviving region never drains"
        )));
    }
    // residual check at solver tolerance
    for i in 0..n0 {
        let mv: f64 = (0..n0).map(|j| restricted[(i, j)] * v[j]).sum();
        if (mv - lambda * v[i]).abs() > 1e-10 * lambda.max(1e-30) {
            return Err(Error::NoConvergence(format!(
                "eigen residual {} at row {i}",
                mv - lambda * v[i]
            )));
        }
    }

    let mut twisted = DMatrix::<f64>::zeros(n0, n0);
    for i in 0..n0 {
        for j in 0..n0 {
            twisted[(i, j)] = restricted[(i, j)] * v[j] / (lambda * v[i]);
        }
        let row_sum: f64 = (0..n0).map(|j| twisted[(i, j)]).sum();
        if (row_sum - 1.0).abs() > 1e-12 {
            return Err(Error::NoConvergence(format!(
                "twisted kernel row {i} sums to {row_sum}"
            )));
        }
    }

    let mut quasi: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a * b).collect();
    let qsum: f64 = quasi.iter().sum();
    for q in &mut quasi {
        *q /= qsum;
    }
    let mut yaglom: Vec<f64> = quasi.iter().zip(&v).map(|(q, vi)| q / vi).collect();
    let ysum: f64 = yaglom.iter().sum();
    for y in &mut yaglom {
        *y /= ysum;
    }

    // expected absorption times: (I - M) t = 1
    let ident = DMatrix::<f64>::identity(n0, n0);
    let rhs = nalgebra::DVector::<f64>::from_element(n0, 1.0);
    let t = (ident - &restricted)
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::NoConvergence("absorption-time solve failed".into()))?;

    let n = kernel.nrows();
    let mut running = vec![1.0; n];
    for &z in x0 {
        running[z] = 0.0;
    }

    Ok(MetastableReport {
        kernel: kernel.clone(),
        x0: x0.to_vec(),
        obs_map: obs_map.to_vec(),
        restricted,
        lambda,
        u,
        v,
        twisted_kernel: twisted,
        quasi_stationary: quasi,
        conditional_law: yaglom,
        decay_rate: -lambda.ln(),
        expected_absorption: t.iter().copied().collect(),
        running_cost: running,
    })
}

/// One row of a survival table.
#[derive(Debug, Clone, Serialize)]
pub struct SurvivalRow {
    pub n: usize,
    /// `P(change >= n)` from the initial state.
    pub survival: f64,
    /// `survival * lambda^-n`.
    pub scaled: f64,
    /// `P(state = x0[j] | change > n)` over the surviving states.
    pub conditional: Vec<f64>,
}

/// Exact survival table with the fitted prefactor and the geometric-decay
/// diagnostics of the two error sequences.
#[derive(Debug, Clone, Serialize)]
pub struct SurvivalCurve {
    pub rows: Vec<SurvivalRow>,
    /// Prefactor fitted by least squares on the last 20 scaled points.
    pub b0: f64,
    /// Log-error regression of `|scaled - b0|`: slope and r-squared.
    pub eps_a_slope: f64,
    pub eps_a_r2: f64,
    /// Log-error regression of the sup-distance between the conditional law
    /// and the Yaglom pmf.
    pub eps_b_slope: f64,
    pub eps_b_r2: f64,
}

impl MetastableReport {
    fn local_index(&self, z_init: usize) -> Result<usize> {
        self.x0
            .iter()
            .position(|&z| z == z_init)
            .ok_or_else(|| Error::Domain(format!("initial state {z_init} is not a surviving state")))
    }

    /// Exact survival probabilities and conditional laws by matrix powers of
    /// the survival block, scaled each step to avoid underflow.
    pub fn survival_curve(&self, z_init: usize, n_max: usize) -> Result<SurvivalCurve> {
        let start = self.local_index(z_init)?;
        let n0 = self.x0.len();
        let mut rows = Vec::with_capacity(n_max + 1);
        let mut r = vec![0.0; n0];
        r[start] = 1.0;
        // survival(n) is the total mass of the (n-1)-step restricted row,
        // while the conditional law at n is the normalized n-step row
        let mut log_curr = 0.0f64; // log mass of the n-step row
        let mut log_prev = 0.0f64; // log mass of the (n-1)-step row
        for n in 0..=n_max {
            let survival = if n == 0 { 1.0 } else { log_prev.exp() };
            rows.push(SurvivalRow {
                n,
                survival,
                scaled: if n == 0 {
                    1.0
                } else {
                    (log_prev - n as f64 * self.lambda.ln()).exp()
                },
                conditional: r.clone(),
            });
            // advance the normalized row through the survival block
            let mut next = vec![0.0; n0];
            for i in 0..n0 {
                if r[i] > 0.0 {
                    for j in 0..n0 {
                        next[j] += r[i] * self.restricted[(i, j)];
                    }
                }
            }
            let mass: f64 = next.iter().sum();
            if mass <= 0.0 {
                return Err(Error::ChainPrecondition(
                    "survival mass vanished exactly; the surviving region is transient in one step"
                        .into(),
                ));
            }
            for x in &mut next {
                *x /= mass;
            }
            log_prev = log_curr;
            log_curr += mass.ln();
            r = next;
        }

        // wait for the transient to pass, then fit the prefactor on the tail
        let tail = 20.min(rows.len().saturating_sub(1));
        let b0 = rows[rows.len() - tail..]
            .iter()
            .map(|row| row.scaled)
            .sum::<f64>()
            / tail as f64;

        // geometric-decay diagnostics, restricted to the range where the
        // error still dominates both float noise and the bias of the fitted
        // prefactor (the tail mean of b0 is itself off by a residual
        // geometric term)
        let mut xs_a = Vec::new();
        let mut ys_a = Vec::new();
        let mut xs_b = Vec::new();
        let mut ys_b = Vec::new();
        for row in rows.iter().skip(1) {
            let eps_a = (row.scaled - b0).abs();
            if eps_a > 1e-9 * b0.abs().max(1e-300) {
                xs_a.push(row.n as f64);
                ys_a.push(eps_a.ln());
            }
            let eps_b = row
                .conditional
                .iter()
                .zip(&self.conditional_law)
                .map(|(c, y)| (c / y - 1.0).abs())
                .fold(0.0f64, f64::max);
            if eps_b > 1e-9 {
                xs_b.push(row.n as f64);
                ys_b.push(eps_b.ln());
            }
        }
        let (eps_a_slope, eps_a_r2) = if xs_a.len() >= 3 {
            let (_, s, r2) = numerics::linear_fit(&xs_a, &ys_a);
            (s, r2)
        } else {
            (f64::NEG_INFINITY, 1.0)
        };
        let (eps_b_slope, eps_b_r2) = if xs_b.len() >= 3 {
            let (_, s, r2) = numerics::linear_fit(&xs_b, &ys_b);
            (s, r2)
        } else {
            (f64::NEG_INFINITY, 1.0)
        };

        Ok(SurvivalCurve { rows, b0, eps_a_slope, eps_a_r2, eps_b_slope, eps_b_r2 })
    }

    /// Observation pmfs induced by the factorization: the pre-change
    /// marginal pushes the Yaglom pmf through the observation map, the
    /// post-change marginal pushes the chain's invariant pmf (supported on
    /// the absorbed region).
    pub fn induced_marginals(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = self.kernel.nrows();
        let n_labels = self.obs_map.iter().max().map(|&m| m + 1).unwrap_or(0);
        let invariant = stationary_pmf(&self.kernel)?;
        let mut in_x0 = vec![false; n];
        for &z in &self.x0 {
            in_x0[z] = true;
        }
        let mut pi0 = vec![0.0; n_labels];
        for (i, &z) in self.x0.iter().enumerate() {
            pi0[self.obs_map[z]] += self.conditional_law[i];
        }
        let mut pi1 = vec![0.0; n_labels];
        let mut mass1 = 0.0;
        for z in 0..n {
            if !in_x0[z] {
                pi1[self.obs_map[z]] += invariant[z];
                mass1 += invariant[z];
            }
        }
        if mass1 <= 0.0 {
            return Err(Error::ChainPrecondition(
                "invariant pmf puts no mass on the absorbed region".into(),
            ));
        }
        for p in &mut pi1 {
            *p /= mass1;
        }
        Ok((pi0, pi1))
    }

    /// Conditional cumulant of an observation statistic given survival:
    /// the growth-rate gap `log lambda_F - log lambda`, where `lambda_F` is
    /// the Perron-Frobenius eigenvalue of the survival block tilted by
    /// `exp(theta F(h(state)))`.
    pub fn conditional_cgf(&self, stat: &Statistic, theta: f64) -> Result<f64> {
        let n0 = self.x0.len();
        let mut scores = Vec::with_capacity(n0);
        for &z in &self.x0 {
            scores.push(stat.eval(&Obs::Label(self.obs_map[z]))?);
        }
        // factor out the peak exponent so the tilt cannot overflow
        let shift = scores
            .iter()
            .map(|&f| theta * f)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut tilted = DMatrix::<f64>::zeros(n0, n0);
        for i in 0..n0 {
            for j in 0..n0 {
                tilted[(i, j)] = self.restricted[(i, j)] * (theta * scores[j] - shift).exp();
            }
        }
        if tilted.iter().any(|x| !x.is_finite()) {
            return Err(Error::DivergentCgf { theta });
        }
        let (lambda_f, _, _) = numerics::perron_triple(&tilted)?;
        Ok(shift + lambda_f.ln() - self.lambda.ln())
    }
}
