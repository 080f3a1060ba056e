//! Small numerical routines shared across the crate: root bracketing and
//! bisection, golden-section minimization, Gauss-Hermite quadrature,
//! counter-based seed derivation, and least-squares line fitting.

use crate::error::{Error, Result};

/// Stable log(sum(w_i * exp(x_i))) with nonnegative weights.
pub fn log_sum_exp_weighted(pairs: impl Iterator<Item = (f64, f64)> + Clone) -> f64 {
    let m = pairs
        .clone()
        .filter(|(w, _)| *w > 0.0)
        .map(|(_, x)| x)
        .fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let s: f64 = pairs
        .filter(|(w, _)| *w > 0.0)
        .map(|(w, x)| w * (x - m).exp())
        .sum();
    m + s.ln()
}

/// Bisection on a bracketing interval `[lo, hi]` with `f(lo) <= 0 <= f(hi)`
/// (or the reverse). Runs until `|f| <= f_tol` or the interval collapses.
pub fn bisect(mut lo: f64, mut hi: f64, f_tol: f64, mut f: impl FnMut(f64) -> f64) -> Result<f64> {
    let mut flo = f(lo);
    let fhi = f(hi);
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.signum() == fhi.signum() {
        return Err(Error::NoConvergence(format!(
            "bisection bracket does not straddle a root: f({lo}) = {flo}, f({hi}) = {fhi}"
        )));
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm.abs() <= f_tol {
            return Ok(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
        if (hi - lo).abs() <= f64::EPSILON * (1.0 + lo.abs() + hi.abs()) {
            return Ok(0.5 * (lo + hi));
        }
    }
    let mid = 0.5 * (lo + hi);
    if f(mid).abs() <= f_tol * 100.0 {
        Ok(mid)
    } else {
        Err(Error::NoConvergence(format!(
            "bisection residual above tolerance at x = {mid}"
        )))
    }
}

/// Golden-section minimization of a unimodal function on `[lo, hi]`.
pub fn golden_section_min(lo: f64, hi: f64, x_tol: f64, mut f: impl FnMut(f64) -> f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > x_tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}

/// Gauss-Hermite nodes and weights for n points, computed by the
/// Golub-Welsch eigen decomposition of the Jacobi matrix. The rule is for
/// weight exp(-x^2); see [`gaussian_expectation`] for the N(mu, sigma^2) map.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut jacobi = nalgebra::DMatrix::<f64>::zeros(n, n);
    for i in 1..n {
        let off = (i as f64 / 2.0).sqrt();
        jacobi[(i - 1, i)] = off;
        jacobi[(i, i - 1)] = off;
    }
    let eig = nalgebra::SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|j| {
            let x = eig.eigenvalues[j];
            let v0 = eig.eigenvectors[(0, j)];
            // total mass of exp(-x^2) is sqrt(pi)
            (x, v0 * v0 * std::f64::consts::PI.sqrt())
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// E[g(Y)] for Y ~ N(mu, sigma^2) by Gauss-Hermite quadrature, doubling the
/// node count from 64 until two successive estimates differ by < 1e-10.
pub fn gaussian_expectation(mu: f64, var: f64, g: impl Fn(f64) -> f64) -> Result<f64> {
    let sigma = var.sqrt();
    let sqrt_pi = std::f64::consts::PI.sqrt();
    let eval = |n: usize| -> f64 {
        let (nodes, weights) = gauss_hermite(n);
        nodes
            .iter()
            .zip(&weights)
            .map(|(&x, &w)| w * g(mu + sigma * std::f64::consts::SQRT_2 * x))
            .sum::<f64>()
            / sqrt_pi
    };
    let mut n = 64;
    let mut prev = eval(n);
    while n < 2048 {
        n *= 2;
        let cur = eval(n);
        if (cur - prev).abs() < 1e-10 * (1.0 + cur.abs()) {
            return Ok(cur);
        }
        prev = cur;
    }
    Err(Error::NoConvergence(
        "Gauss-Hermite quadrature did not stabilize by 2048 nodes".into(),
    ))
}

/// Composite Simpson integration on [a, b] with n (even) panels.
pub fn simpson(a: f64, b: f64, n: usize, f: impl Fn(f64) -> f64) -> f64 {
    let n = if n % 2 == 0 { n } else { n + 1 };
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let x = a + h * i as f64;
        s += if i % 2 == 1 { 4.0 * f(x) } else { 2.0 * f(x) };
    }
    s * h / 3.0
}

/// SplitMix64 step; used to derive independent per-replication seeds from a
/// base seed and a replication counter, so results do not depend on how the
/// replications are scheduled.
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for replication `index` in the stream identified by `base`.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    splitmix64(base ^ splitmix64(index.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

/// Perron-Frobenius triple `(lambda, u, v)` of a nonnegative square matrix:
/// `M v = lambda v`, `u^T M = lambda u^T`, with `v` scaled to unit sup-norm
/// and `u` scaled so that `u . v = 1`.
///
/// Power iteration on the diagonally shifted matrix `M + cI` (the shift
/// leaves eigenvectors unchanged and makes the dominant eigenvalue strictly
/// separated in modulus even for periodic chains), tolerance 1e-14 on the
/// eigenvalue drift, capped at 1e5 iterations. If iteration stalls and the
/// matrix is small enough, falls back to a dense full-spectrum solve plus
/// shifted inverse iteration.
pub fn perron_triple(m: &nalgebra::DMatrix<f64>) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let n = m.nrows();
    assert_eq!(n, m.ncols());
    if m.iter().any(|&x| x < 0.0 || !x.is_finite()) {
        return Err(Error::Domain("matrix must be nonnegative and finite".into()));
    }
    let shift: f64 = (0..n)
        .map(|i| (0..n).map(|j| m[(i, j)]).sum::<f64>())
        .fold(0.0, f64::max)
        .max(1e-300);
    let shifted = m + nalgebra::DMatrix::<f64>::identity(n, n) * shift;

    let iterate = |mat: &nalgebra::DMatrix<f64>| -> Option<(f64, nalgebra::DVector<f64>)> {
        let mut x = nalgebra::DVector::<f64>::from_element(n, 1.0 / n as f64);
        let mut lambda_prev = f64::NAN;
        for _ in 0..100_000 {
            let y = mat * &x;
            let norm = y.amax();
            if norm == 0.0 {
                return None;
            }
            let x_next = &y / norm;
            let lambda = x_next.dot(&(mat * &x_next)) / x_next.dot(&x_next);
            if (lambda - lambda_prev).abs() <= 1e-14 * (1.0 + lambda.abs()) {
                return Some((lambda, x_next));
            }
            lambda_prev = lambda;
            x = x_next;
        }
        None
    };

    let right = iterate(&shifted);
    let left = iterate(&shifted.transpose());
    let (lambda, v, u) = match (right, left) {
        (Some((lr, v)), Some((_, u))) => (lr - shift, v, u),
        _ => {
            if n > 200 {
                return Err(Error::NoConvergence(
                    "power iteration stalled and the matrix is too large for a dense fallback".into(),
                ));
            }
            dense_perron_fallback(m)?
        }
    };

    if v.iter().any(|&x| x <= 0.0) || u.iter().any(|&x| x <= 0.0) {
        return Err(Error::Domain(
            "dominant eigenvector is not strictly positive (matrix not primitive on its support)"
                .into(),
        ));
    }
    let vmax = v.amax();
    let v: Vec<f64> = v.iter().map(|x| x / vmax).collect();
    let dot: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
    let u: Vec<f64> = u.iter().map(|x| x / dot).collect();
    Ok((lambda, u, v))
}

fn dense_perron_fallback(
    m: &nalgebra::DMatrix<f64>,
) -> Result<(f64, nalgebra::DVector<f64>, nalgebra::DVector<f64>)> {
    let eigs = m.clone().complex_eigenvalues();
    let lambda = eigs
        .iter()
        .map(|c| c.norm())
        .fold(0.0f64, f64::max);
    let inv_iter = |mat: &nalgebra::DMatrix<f64>| -> Result<nalgebra::DVector<f64>> {
        let n = mat.nrows();
        let shifted = mat - nalgebra::DMatrix::<f64>::identity(n, n) * (lambda * (1.0 + 1e-10) + 1e-300);
        let lu = shifted.lu();
        let mut x = nalgebra::DVector::<f64>::from_element(n, 1.0);
        for _ in 0..200 {
            let y = lu
                .solve(&x)
                .ok_or_else(|| Error::NoConvergence("singular shift in inverse iteration".into()))?;
            let norm = y.amax();
            x = &y / norm;
        }
        // fix the overall sign so the vector is positive
        if x.iter().sum::<f64>() < 0.0 {
            x = -x;
        }
        Ok(x)
    };
    let v = inv_iter(m)?;
    let u = inv_iter(&m.transpose())?;
    Ok((lambda, v, u))
}

/// Least-squares line fit `y ~ a + b x`; returns (intercept, slope, r_squared).
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    (intercept, slope, r2)
}

/// Format with 12 significant digits; used for all CSV output.
pub fn fmt_sig12(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    format!("{x:.11e}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bisect_finds_sqrt2() {
        let r = bisect(0.0, 2.0, 1e-14, |x| x * x - 2.0).unwrap();
        assert!((r - std::f64::consts::SQRT_2).abs() < 1e-9);
    }

    #[test]
    fn golden_section_on_parabola() {
        let (x, _) = golden_section_min(-1.0, 5.0, 1e-10, |x| (x - 2.0) * (x - 2.0));
        assert!((x - 2.0).abs() < 1e-8);
    }

    #[test]
    fn gauss_hermite_matches_gaussian_moments() {
        // E[Y^2] = mu^2 + var, E[Y^4] = mu^4 + 6 mu^2 var + 3 var^2
        let (mu, var) = (0.7, 1.3);
        let m2 = gaussian_expectation(mu, var, |y| y * y).unwrap();
        let m4 = gaussian_expectation(mu, var, |y| y.powi(4)).unwrap();
        assert!((m2 - (mu * mu + var)).abs() < 1e-10);
        let exact4 = mu.powi(4) + 6.0 * mu * mu * var + 3.0 * var * var;
        assert!((m4 - exact4).abs() < 1e-9 * exact4);
    }

    #[test]
    fn simpson_integrates_cubic_exactly() {
        let v = simpson(0.0, 2.0, 64, |x| x * x * x);
        assert!((v - 4.0).abs() < 1e-12);
    }

    #[test]
    fn derive_seed_changes_with_index_and_base() {
        assert_ne!(derive_seed(1, 0), derive_seed(1, 1));
        assert_ne!(derive_seed(1, 0), derive_seed(2, 0));
        assert_eq!(derive_seed(7, 42), derive_seed(7, 42));
    }

    #[test]
    fn perron_triple_on_2x2_survival_block() {
        // characteristic polynomial x^2 - 0.9x + 0.18 has roots 0.6 and 0.3
        let m = nalgebra::DMatrix::from_row_slice(2, 2, &[0.5, 0.2, 0.1, 0.4]);
        let (lambda, u, v) = perron_triple(&m).unwrap();
        assert!((lambda - 0.6).abs() < 1e-12);
        assert!((v[0] - 1.0).abs() < 1e-10);
        assert!((v[1] - 0.5).abs() < 1e-10);
        // u proportional to (1, 1), scaled so u.v = 1
        assert!((u[0] - u[1]).abs() < 1e-10);
        assert!((u[0] * v[0] + u[1] * v[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn perron_triple_handles_periodic_matrix() {
        // plain power iteration oscillates on this 2-cycle; the diagonal
        // shift restores convergence
        let m = nalgebra::DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let (lambda, _, v) = perron_triple(&m).unwrap();
        assert!((lambda - 1.0).abs() < 1e-12);
        assert!((v[0] - v[1]).abs() < 1e-10);
    }

    #[test]
    fn linear_fit_recovers_line() {
        let xs: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 - 0.5 * x).collect();
        let (a, b, r2) = linear_fit(&xs, &ys);
        assert!((a - 3.0).abs() < 1e-12);
        assert!((b + 0.5).abs() < 1e-12);
        assert!((r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn log_sum_exp_weighted_matches_direct() {
        let pairs = vec![(0.3, 1.0), (0.7, -2.0)];
        let direct = (0.3f64 * 1.0f64.exp() + 0.7 * (-2.0f64).exp()).ln();
        let lse = log_sum_exp_weighted(pairs.iter().copied());
        assert!((lse - direct).abs() < 1e-14);
    }
}
