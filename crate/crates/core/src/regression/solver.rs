//! Weighted least-squares core.
//!
//! Every fit in the crate reduces to minimizing Σ wᵢ(yᵢ − xᵢᵀβ)². The solve
//! goes through a QR factorization of the weighted design matrix rather than
//! the normal equations: the growth basis carries x² terms up to 85² and the
//! Gram matrix squares that conditioning.

use nalgebra::{DMatrix, DVector};

use crate::basis::BasisSpec;
use crate::error::{Error, Result};

#[derive(Debug)]
pub(crate) struct WlsSolution {
    pub beta: Vec<f64>,
    pub fitted: Vec<f64>,
    pub residuals: Vec<f64>,
    /// Weighted residual sum of squares.
    pub ssr: f64,
    pub r_squared: f64,
    /// (XᵀWX)⁻¹ from the R factor.
    pub xtwx_inv: DMatrix<f64>,
    /// ssr / (n − k).
    pub sigma2_hat: f64,
}

pub(crate) fn design_matrix(basis: &BasisSpec, xs: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(xs.len(), basis.len(), |i, j| {
        basis.terms()[j].evaluate(xs[i])
    })
}

/// R² on the working (weighted) response: 1 − SSR/SST with the weighted mean,
/// defined as 1 for an exact fit of a constant response and clamped to [0, 1].
pub(crate) fn weighted_r_squared(ys: &[f64], fitted: &[f64], weights: &[f64]) -> f64 {
    let wsum: f64 = weights.iter().sum();
    if wsum <= 0.0 {
        return 0.0;
    }
    let ybar = ys
        .iter()
        .zip(weights)
        .map(|(y, w)| w * y)
        .sum::<f64>()
        / wsum;
    let mut ssr = 0.0;
    let mut sst = 0.0;
    for i in 0..ys.len() {
        ssr += weights[i] * (ys[i] - fitted[i]).powi(2);
        sst += weights[i] * (ys[i] - ybar).powi(2);
    }
    if sst == 0.0 {
        if ssr == 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        (1.0 - ssr / sst).clamp(0.0, 1.0)
    }
}

/// Report basis terms whose weighted design column is (numerically) a linear
/// combination of the preceding columns, by greedy Gram-Schmidt.
fn collinear_terms(basis: &BasisSpec, xw: &DMatrix<f64>) -> Vec<&'static str> {
    let k = xw.ncols();
    let mut accepted: Vec<DVector<f64>> = Vec::with_capacity(k);
    let mut collinear = Vec::new();
    for j in 0..k {
        let mut col = xw.column(j).into_owned();
        let norm0 = col.norm();
        for q in &accepted {
            let proj = q.dot(&col);
            col -= q * proj;
        }
        // A second orthogonalization pass keeps the test honest near the
        // tolerance boundary.
        for q in &accepted {
            let proj = q.dot(&col);
            col -= q * proj;
        }
        let norm = col.norm();
        if norm0 == 0.0 || norm <= 1e-8 * norm0 {
            collinear.push(basis.terms()[j].as_str());
        } else {
            accepted.push(col / norm);
        }
    }
    collinear
}

/// Solve the weighted least-squares problem for `basis` over `(xs, ys)`.
/// Weights must be non-negative and finite; rows with zero weight drop out of
/// the objective but stay in the residual vector.
pub(crate) fn solve_wls(
    basis: &BasisSpec,
    xs: &[f64],
    ys: &[f64],
    weights: &[f64],
) -> Result<WlsSolution> {
    let n = xs.len();
    let k = basis.len();
    if ys.len() != n || weights.len() != n {
        return Err(Error::invalid("xs, ys and weights must have equal length"));
    }
    if n < k + 1 {
        return Err(Error::InsufficientData {
            required: k + 1,
            actual: n,
        });
    }
    for &w in weights {
        if !w.is_finite() || w < 0.0 {
            return Err(Error::invalid(format!("invalid weight {w}")));
        }
    }
    let positive = weights.iter().filter(|&&w| w > 0.0).count();
    if positive < k + 1 {
        return Err(Error::InsufficientData {
            required: k + 1,
            actual: positive,
        });
    }

    let x = design_matrix(basis, xs);
    let sqrt_w: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
    let mut xw = x.clone();
    for i in 0..n {
        for j in 0..k {
            xw[(i, j)] *= sqrt_w[i];
        }
    }
    let yw = DVector::from_fn(n, |i, _| ys[i] * sqrt_w[i]);

    let bad = collinear_terms(basis, &xw);
    if !bad.is_empty() {
        return Err(Error::SingularDesign {
            terms: bad.join(", "),
        });
    }

    let qr = xw.qr();
    let qty = qr.q().transpose() * &yw;
    let r = qr.r();
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::SingularDesign {
            terms: "triangular solve failed".into(),
        })?;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(k, k))
        .ok_or_else(|| Error::SingularDesign {
            terms: "triangular inverse failed".into(),
        })?;
    let xtwx_inv = &r_inv * r_inv.transpose();

    let fitted_vec = &x * &beta;
    let fitted: Vec<f64> = fitted_vec.iter().copied().collect();
    let residuals: Vec<f64> = ys.iter().zip(&fitted).map(|(y, f)| y - f).collect();
    let ssr: f64 = residuals
        .iter()
        .zip(weights)
        .map(|(r, w)| w * r * r)
        .sum();
    let r_squared = weighted_r_squared(ys, &fitted, weights);
    let dof = (n - k).max(1) as f64;

    Ok(WlsSolution {
        beta: beta.iter().copied().collect(),
        fitted,
        residuals,
        ssr,
        r_squared,
        xtwx_inv,
        sigma2_hat: ssr / dof,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::Covariate;
    use approx::assert_relative_eq;

    #[test]
    fn exact_line() {
        let basis = BasisSpec::linear(Covariate::Fa);
        let sol = solve_wls(
            &basis,
            &[0.0, 1.0, 2.0],
            &[1.0, 3.0, 5.0],
            &[1.0, 1.0, 1.0],
        )
        .unwrap();
        assert_relative_eq!(sol.beta[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(sol.beta[1], 2.0, epsilon = 1e-12);
        assert_relative_eq!(sol.r_squared, 1.0);
    }

    #[test]
    fn duplicate_covariate_is_singular_for_slope_terms() {
        let basis = BasisSpec::quadratic(Covariate::Fa);
        let err = solve_wls(
            &basis,
            &[2.0, 2.0, 2.0, 2.0],
            &[1.0, 1.0, 1.0, 1.0],
            &[1.0; 4],
        )
        .unwrap_err();
        match err {
            Error::SingularDesign { terms } => {
                assert!(terms.contains('x'), "{terms}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn too_few_points() {
        let basis = BasisSpec::quadratic(Covariate::Fa);
        assert!(matches!(
            solve_wls(&basis, &[1.0, 2.0], &[1.0, 2.0], &[1.0, 1.0]),
            Err(Error::InsufficientData { .. })
        ));
    }

    #[test]
    fn residuals_orthogonal_to_weighted_columns() {
        let basis = BasisSpec::quadratic(Covariate::Fa);
        let xs: Vec<f64> = (0..40).map(|i| 26.0 + 1.5 * i as f64).collect();
        let ys: Vec<f64> = xs
            .iter()
            .enumerate()
            .map(|(i, x)| 0.3 * x * x - 2.0 * x + 5.0 + ((i * 37 % 11) as f64 - 5.0))
            .collect();
        let ws: Vec<f64> = (0..40).map(|i| 0.5 + (i % 4) as f64).collect();
        let sol = solve_wls(&basis, &xs, &ys, &ws).unwrap();
        let x = design_matrix(&basis, &xs);
        let col_scale = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        for j in 0..basis.len() {
            let dot: f64 = (0..xs.len())
                .map(|i| ws[i] * x[(i, j)] * sol.residuals[i])
                .sum();
            assert!(dot.abs() < 1e-8 * col_scale, "column {j}: {dot}");
        }
    }
}
