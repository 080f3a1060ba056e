//! Canonical small models used in examples, docs, and the test suites.

use nalgebra::DMatrix;

use crate::model::{ChangeTimeLaw, ObservationModel, Statistic};

/// Unit-shift Gaussian model: N(0,1) before the change, N(1,1) after.
/// Its likelihood ratio is `y - 1/2` and the cumulant of the ratio is
/// `theta (theta - 1) / 2`.
pub fn gaussian_unit_shift() -> ObservationModel {
    ObservationModel::iid_gaussian(0.0, 1.0, 1.0, 1.0).expect("valid")
}

/// Two-symbol model with pre-change pmf (0.8, 0.2) and post-change pmf
/// (0.3, 0.7).
pub fn two_symbol() -> ObservationModel {
    ObservationModel::iid_discrete(vec![0.8, 0.2], vec![0.3, 0.7]).expect("valid")
}

/// Half-integer score table `(-1/2, +1)` on the two-symbol model; the
/// values sit on the lattice `Z/2`, which the exact DP oracle requires.
pub fn two_symbol_lattice_statistic() -> Statistic {
    Statistic::Table(vec![-0.5, 1.0])
}

/// Two-state Markov model with strictly positive kernels.
pub fn markov_two_state() -> ObservationModel {
    let p0 = DMatrix::from_row_slice(2, 2, &[0.7, 0.3, 0.4, 0.6]);
    let p1 = DMatrix::from_row_slice(2, 2, &[0.2, 0.8, 0.5, 0.5]);
    ObservationModel::finite_markov(p0, p1).expect("valid")
}

/// Geometric change time with success probability 0.1, so the survival is
/// `0.9^n` and the tail rate is `-log 0.9`.
pub fn geometric_change(rho: f64) -> ChangeTimeLaw {
    ChangeTimeLaw::geometric(rho).expect("valid")
}

/// Three-state hidden chain whose third state is absorbing. The survival
/// block has eigenvalues 0.6 and 0.3.
pub fn three_state_chain() -> ObservationModel {
    let kernel = DMatrix::from_row_slice(3, 3, &[0.5, 0.2, 0.3, 0.1, 0.4, 0.5, 0.0, 0.0, 1.0]);
    ObservationModel::pomdp(kernel, vec![0, 1], vec![0, 1, 2], 0).expect("valid")
}

/// Product-chain embedding of an i.i.d. two-symbol model with geometric
/// absorption: states `(phase, symbol)` with phase 0 pre-change emitting
/// symbols from `pmf0`, jumping to the absorbing phase 1 with probability
/// `rho` per step, and phase 1 emitting from `pmf1` forever.
pub fn product_chain_with_geometric_absorption(
    pmf0: &[f64],
    pmf1: &[f64],
    rho: f64,
) -> ObservationModel {
    let m = pmf0.len();
    assert_eq!(m, pmf1.len());
    let n = 2 * m;
    let mut kernel = DMatrix::<f64>::zeros(n, n);
    for y in 0..m {
        for y2 in 0..m {
            // pre-change states 0..m, post-change states m..2m
            kernel[(y, y2)] = (1.0 - rho) * pmf0[y2];
            kernel[(y, m + y2)] = rho * pmf1[y2];
            kernel[(m + y, m + y2)] = pmf1[y2];
        }
    }
    let x0 = (0..m).collect();
    let obs_map = (0..m).chain(0..m).collect();
    ObservationModel::pomdp(kernel, x0, obs_map, 0).expect("valid")
}
