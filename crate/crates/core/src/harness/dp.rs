//! Exact cost evaluation for lattice-valued statistics on i.i.d. finite
//! models.
//!
//! When every score is a multiple of `1/q` the detector statistic lives on
//! the lattice `{0, 1/q, 2/q, ...}` and the run is an absorbing random walk
//! on finitely many states. Conditioning on the geometric phase of the
//! change time turns both loss terms into linear solves:
//!
//! - eagerness: `E[(stop - change)_-] = sum_i w_i (b_i / rho_i) E[b_i^sigma]`
//!   where `sigma` is the pre-change hitting time, `b_i = 1 - rho_i`, and
//!   the generating function `E[b^sigma]` solves `(I - b P0) phi = b r0`;
//! - delay: conditioning on the change time `a` leaves the pre-change
//!   occupation measure after `a - 1` steps, summed in closed form by the
//!   resolvent `R_b = delta_0 (I - b P0)^-1`, against the expected
//!   post-change passage times `T` solving `(I - P1) T = 1`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{ChangeTimeLaw, Obs, ObservationModel, Statistic};

const MAX_LATTICE_STATES: u64 = 1_000_000;
const DENSE_LIMIT: usize = 2_048;
const ITER_TOL: f64 = 1e-12;

/// Exact Bayesian cost of a lattice detector.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct DpCost {
    pub mdd: f64,
    pub mde: f64,
    pub j: f64,
    /// Transient lattice states below the threshold.
    pub lattice_states: usize,
    /// Detected or supplied lattice denominator.
    pub denominator: u32,
}

/// Sparse one-step structure of the lattice walk: for each symbol, the
/// integer jump and its probability; destinations clamp to 0 below and
/// absorb at or above the threshold state count.
struct LatticeWalk {
    states: usize,
    jumps: Vec<i64>,
    pmf: Vec<f64>,
}

impl LatticeWalk {
    fn apply(&self, j: usize, y: usize) -> Option<usize> {
        let dest = j as i64 + self.jumps[y];
        if dest >= self.states as i64 {
            None // absorbed
        } else {
            Some(dest.max(0) as usize)
        }
    }

    /// x_out = (P x)_j + absorb_value * r_j, substochastic transition applied
    /// to a column vector with a boundary contribution.
    fn matvec(&self, x: &[f64], absorb_value: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.states];
        for j in 0..self.states {
            let mut acc = 0.0;
            for (y, &p) in self.pmf.iter().enumerate() {
                if p > 0.0 {
                    acc += p * match self.apply(j, y) {
                        Some(dest) => x[dest],
                        None => absorb_value,
                    };
                }
            }
            out[j] = acc;
        }
        out
    }

    fn dense(&self) -> (DMatrix<f64>, DVector<f64>) {
        let t = self.states;
        let mut p = DMatrix::<f64>::zeros(t, t);
        let mut r = DVector::<f64>::zeros(t);
        for j in 0..t {
            for (y, &w) in self.pmf.iter().enumerate() {
                if w > 0.0 {
                    match self.apply(j, y) {
                        Some(dest) => p[(j, dest)] += w,
                        None => r[j] += w,
                    }
                }
            }
        }
        (p, r)
    }
}

/// Solve `(I - beta P) x = rhs` for the substochastic lattice walk: dense LU
/// up to [`DENSE_LIMIT`] states, damped fixed-point iteration (convergent
/// for beta <= 1 with leak) beyond.
fn solve_resolvent(walk: &LatticeWalk, beta: f64, rhs: &[f64], transpose: bool) -> Result<Vec<f64>> {
    let t = walk.states;
    if t <= DENSE_LIMIT {
        let (p, _) = walk.dense();
        let a = DMatrix::<f64>::identity(t, t) - (if transpose { p.transpose() } else { p }) * beta;
        let b = DVector::from_column_slice(rhs);
        let x = a
            .lu()
            .solve(&b)
            .ok_or_else(|| Error::NoConvergence("lattice resolvent solve failed".into()))?;
        return Ok(x.iter().copied().collect());
    }
    // fixed point x <- beta P x + rhs; contraction factor at most beta, and
    // strictly below 1 through the absorbing leak even at beta = 1
    let mut x = vec![0.0; t];
    let scale = rhs.iter().fold(0.0f64, |a, &b| a.max(b.abs())).max(1e-300);
    for sweep in 0..400_000 {
        let px = if transpose {
            // transpose application: out[dest] += p * x[src]
            let mut out = vec![0.0; t];
            for j in 0..t {
                if x[j] != 0.0 {
                    for (y, &p) in walk.pmf.iter().enumerate() {
                        if p > 0.0 {
                            if let Some(dest) = walk.apply(j, y) {
                                out[dest] += p * x[j];
                            }
                        }
                    }
                }
            }
            out
        } else {
            walk.matvec(&x, 0.0)
        };
        let mut delta = 0.0f64;
        for j in 0..t {
            let next = beta * px[j] + rhs[j];
            delta = delta.max((next - x[j]).abs());
            x[j] = next;
        }
        if delta <= ITER_TOL * scale {
            return Ok(x);
        }
        if sweep == 399_999 {
            return Err(Error::NoConvergence(format!(
                "lattice fixed-point iteration stalled at delta {delta}"
            )));
        }
    }
    unreachable!()
}

/// Detect the smallest denominator `q` putting all score values on `Z/q`.
pub fn detect_denominator(values: &[f64]) -> Result<u32> {
    for q in 1..=u32::pow(2, 16) {
        let ok = values.iter().all(|&f| {
            let scaled = f * q as f64;
            (scaled - scaled.round()).abs() <= 1e-9
        });
        if ok {
            return Ok(q);
        }
    }
    Err(Error::Resource(
        "statistic values do not lie on a lattice with denominator up to 2^16".into(),
    ))
}

/// Exact `(MDD, MDE, J)` for a lattice statistic on an i.i.d. finite model
/// under a geometric-mixture change time.
pub fn exact_cost_dp(
    model: &ObservationModel,
    stat: &Statistic,
    threshold: f64,
    kappa: f64,
    law: &ChangeTimeLaw,
    denominator: Option<u32>,
) -> Result<DpCost> {
    let (pmf0, pmf1) = match model {
        ObservationModel::IidDiscrete { pmf0, pmf1 } => (pmf0.clone(), pmf1.clone()),
        _ => {
            return Err(Error::Resource(
                "the exact oracle runs on i.i.d. finite-alphabet models".into(),
            ))
        }
    };
    if threshold <= 0.0 || kappa < 0.0 {
        return Err(Error::Domain("need threshold > 0 and kappa >= 0".into()));
    }
    let values: Vec<f64> = (0..pmf0.len())
        .map(|y| stat.eval(&Obs::Label(y)))
        .collect::<Result<_>>()?;
    let q = match denominator {
        Some(q) if q >= 1 => {
            let ok = values.iter().all(|&f| {
                let scaled = f * q as f64;
                (scaled - scaled.round()).abs() <= 1e-9
            });
            if !ok {
                return Err(Error::Resource(format!(
                    "statistic values are not multiples of 1/{q}"
                )));
            }
            q
        }
        Some(_) => return Err(Error::Resource("denominator must be >= 1".into())),
        None => detect_denominator(&values)?,
    };
    let jumps: Vec<i64> = values.iter().map(|&f| (f * q as f64).round() as i64).collect();
    let states_u64 = (threshold * q as f64 - 1e-9).ceil().max(1.0) as u64;
    if states_u64 > MAX_LATTICE_STATES {
        return Err(Error::Resource(format!(
            "lattice needs {states_u64} states, above the {MAX_LATTICE_STATES} cap"
        )));
    }
    let t = states_u64 as usize;

    let pre = LatticeWalk { states: t, jumps: jumps.clone(), pmf: pmf0 };
    let post = LatticeWalk { states: t, jumps, pmf: pmf1 };

    // expected post-change passage times: (I - P1) T = 1
    let passage = solve_resolvent(&post, 1.0, &vec![1.0; t], false)?;
    if passage.iter().any(|&x| !(x.is_finite() && x >= 1.0)) {
        return Err(Error::NoConvergence(
            "post-change passage times are not finite and positive".into(),
        ));
    }

    let mut mdd = 0.0;
    let mut mde = 0.0;
    for (w, rho) in law.components() {
        let beta = 1.0 - rho;
        // eagerness: generating function of the pre-change hitting time
        let (_, r0) = {
            // one-step absorption probabilities under the pre-change law
            let mut r = vec![0.0; t];
            for j in 0..t {
                for (y, &p) in pre.pmf.iter().enumerate() {
                    if p > 0.0 && pre.apply(j, y).is_none() {
                        r[j] += p;
                    }
                }
            }
            ((), r)
        };
        let rhs: Vec<f64> = r0.iter().map(|&x| beta * x).collect();
        let phi = solve_resolvent(&pre, beta, &rhs, false)?;
        mde += w * (beta / rho) * phi[0];

        // delay: resolvent of the pre-change occupation measure from state 0
        let mut e0 = vec![0.0; t];
        e0[0] = 1.0;
        let resolvent = solve_resolvent(&pre, beta, &e0, true)?;
        let weighted: f64 = resolvent
            .iter()
            .zip(&passage)
            .map(|(r, t)| r * (t - 1.0))
            .sum();
        mdd += w * (rho * passage[0] + rho * beta * weighted);
    }

    Ok(DpCost { mdd, mde, j: mdd + kappa * mde, lattice_states: t, denominator: q })
}
