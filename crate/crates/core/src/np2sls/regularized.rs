//! Least squares under a quadratic ball constraint `beta' Lambda beta <= B`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_BISECTION: usize = 200;
/// Relative tolerance on `beta' Lambda beta = B` when the constraint binds.
pub const CONSTRAINT_RTOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularizedSolution {
    pub beta: Vec<f64>,
    /// `||b - M beta||^2`.
    pub residual: f64,
    /// Lagrange multiplier; zero when the constraint is inactive.
    pub multiplier: f64,
    /// Numerical rank of `M`.
    pub rank: usize,
}

impl RegularizedSolution {
    pub fn constraint_active(&self) -> bool {
        self.multiplier > 0.0
    }
}

/// `argmin ||b - M beta||^2` subject to `beta' Lambda beta <= bound`.
///
/// Works in `gamma = L' beta` with `Lambda = L L'`, where the problem is a
/// ridge path in the singular basis of `M L^{-T}`.
pub fn solve_regularized(
    m: &DMatrix<f64>,
    b: &DVector<f64>,
    lambda: &DMatrix<f64>,
    bound: f64,
) -> Result<RegularizedSolution> {
    let k = m.ncols();
    if m.nrows() != b.len() {
        return Err(Error::InvalidInput(format!(
            "design has {} rows but response has {}",
            m.nrows(),
            b.len()
        )));
    }
    if lambda.nrows() != k || lambda.ncols() != k {
        return Err(Error::InvalidInput(format!(
            "penalty matrix must be {k}x{k}"
        )));
    }
    if !(bound > 0.0 && bound.is_finite()) {
        return Err(Error::InvalidInput(format!("bound must be positive, got {bound}")));
    }
    let chol = lambda
        .clone()
        .cholesky()
        .ok_or_else(|| Error::InvalidInput("penalty matrix is not positive definite".into()))?;
    let l = chol.l();
    // A = M L^{-T}
    let lt_inv = l
        .transpose()
        .try_inverse()
        .ok_or_else(|| Error::InvalidInput("penalty matrix is singular".into()))?;
    let a = m * &lt_inv;
    let svd = a.clone().svd(true, true);
    let u = svd.u.as_ref().expect("u requested");
    let vt = svd.v_t.as_ref().expect("v_t requested");
    let s = &svd.singular_values;
    let smax = s.iter().copied().fold(0.0, f64::max);
    let cut = smax * (m.nrows().max(k) as f64) * f64::EPSILON;
    let rank = s.iter().filter(|&&v| v > cut).count();
    let c: Vec<f64> = (0..s.len()).map(|i| u.column(i).dot(b)).collect();

    let gamma_at = |mu: f64| -> DVector<f64> {
        let mut g = DVector::zeros(k);
        for i in 0..s.len() {
            if s[i] <= cut {
                continue;
            }
            let f = s[i] * c[i] / (s[i] * s[i] + mu);
            g += vt.row(i).transpose() * f;
        }
        g
    };
    let finish = |gamma: DVector<f64>, mu: f64| {
        let beta = &lt_inv * &gamma;
        let r = b - m * &beta;
        RegularizedSolution {
            beta: beta.iter().copied().collect(),
            residual: r.norm_squared(),
            multiplier: mu,
            rank,
        }
    };

    let g0 = gamma_at(0.0);
    if g0.norm_squared() <= bound {
        return Ok(finish(g0, 0.0));
    }
    // ||gamma(mu)|| <= ||A'b|| / mu, so this upper end is feasible.
    let atb = a.transpose() * b;
    let mut hi = (atb.norm() / bound.sqrt()).max(f64::MIN_POSITIVE).ln();
    let mut lo = hi - 80.0 * std::f64::consts::LN_10;
    if gamma_at(lo.exp()).norm_squared() <= bound {
        return Ok(finish(gamma_at(lo.exp()), lo.exp()));
    }
    for _ in 0..MAX_BISECTION {
        let mid = 0.5 * (lo + hi);
        let n2 = gamma_at(mid.exp()).norm_squared();
        if n2 > bound {
            lo = mid;
        } else {
            hi = mid;
        }
        let n_hi = gamma_at(hi.exp()).norm_squared();
        if (bound - n_hi) <= 1e-3 * CONSTRAINT_RTOL * bound || hi - lo < 1e-14 {
            return Ok(finish(gamma_at(hi.exp()), hi.exp()));
        }
    }
    let n_hi = gamma_at(hi.exp()).norm_squared();
    if (bound - n_hi).abs() <= CONSTRAINT_RTOL * bound {
        return Ok(finish(gamma_at(hi.exp()), hi.exp()));
    }
    Err(Error::Solver(format!(
        "multiplier bisection did not converge in {MAX_BISECTION} iterations"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn quad(beta: &[f64], lambda: &DMatrix<f64>) -> f64 {
        let v = DVector::from_column_slice(beta);
        (v.transpose() * lambda * &v)[(0, 0)]
    }

    #[test]
    fn projection_onto_unit_ball() {
        let m = DMatrix::identity(2, 2);
        let b = DVector::from_vec(vec![10.0, 0.0]);
        let sol = solve_regularized(&m, &b, &DMatrix::identity(2, 2), 1.0).unwrap();
        assert!((sol.beta[0] - 1.0).abs() < 1e-6, "{:?}", sol.beta);
        assert!(sol.beta[1].abs() < 1e-12);
        assert!(sol.constraint_active());
    }

    #[test]
    fn inactive_constraint_returns_least_squares() {
        let m = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let b = DVector::from_vec(vec![0.1, 0.2, 0.25]);
        let sol = solve_regularized(&m, &b, &DMatrix::identity(2, 2), 10.0).unwrap();
        let ls = m.clone().svd(true, true).solve(&b, 1e-14).unwrap();
        assert_eq!(sol.multiplier, 0.0);
        for i in 0..2 {
            assert!((sol.beta[i] - ls[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_response_gives_zero() {
        let m = DMatrix::from_row_slice(2, 2, &[0.3, 0.2, 0.1, 0.4]);
        let b = DVector::zeros(2);
        let sol = solve_regularized(&m, &b, &DMatrix::identity(2, 2), 1.0).unwrap();
        assert!(sol.beta.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_indefinite_penalty() {
        let m = DMatrix::identity(2, 2);
        let b = DVector::from_vec(vec![1.0, 1.0]);
        let lam = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(solve_regularized(&m, &b, &lam, 1.0).is_err());
    }

    fn instance() -> impl Strategy<Value = (DMatrix<f64>, DVector<f64>, DMatrix<f64>, f64)> {
        (1usize..6, 1usize..5).prop_flat_map(|(rows, k)| {
            (
                proptest::collection::vec(-3.0f64..3.0, rows * k),
                proptest::collection::vec(-5.0f64..5.0, rows),
                proptest::collection::vec(-1.0f64..1.0, k * k),
                -3.0f64..3.0,
            )
                .prop_map(move |(mv, bv, lv, log_b)| {
                    let m = DMatrix::from_row_slice(rows, k, &mv);
                    let b = DVector::from_vec(bv);
                    let r = DMatrix::from_row_slice(k, k, &lv);
                    let lam = &r * r.transpose() + DMatrix::identity(k, k) * 0.1;
                    (m, b, lam, 10f64.powf(log_b))
                })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn constraint_is_satisfied((m, b, lam, bound) in instance()) {
            let sol = solve_regularized(&m, &b, &lam, bound).unwrap();
            prop_assert!(quad(&sol.beta, &lam) <= bound * (1.0 + CONSTRAINT_RTOL));
            if sol.constraint_active() {
                prop_assert!((quad(&sol.beta, &lam) - bound).abs() <= CONSTRAINT_RTOL * bound);
            }
        }

        #[test]
        fn residual_is_monotone_in_bound((m, b, lam, bound) in instance()) {
            let small = solve_regularized(&m, &b, &lam, bound).unwrap();
            let large = solve_regularized(&m, &b, &lam, bound * 2.0).unwrap();
            prop_assert!(large.residual <= small.residual * (1.0 + 1e-9) + 1e-12);
        }

        #[test]
        fn large_bound_passes_through((m, b, lam, _bound) in instance()) {
            let ls = solve_regularized(&m, &b, &lam, 1e300).unwrap();
            prop_assert_eq!(ls.multiplier, 0.0);
            let again = solve_regularized(&m, &b, &lam, quad(&ls.beta, &lam) * 1.5 + 1e-12).unwrap();
            prop_assert_eq!(again.multiplier, 0.0);
            for (a, c) in ls.beta.iter().zip(&again.beta) {
                prop_assert!((a - c).abs() <= 1e-12 * (1.0 + a.abs()));
            }
        }
    }
}
