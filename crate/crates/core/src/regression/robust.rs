//! Robust M-estimation by iteratively reweighted least squares with the
//! bisquare weight function.

use nalgebra::DMatrix;

use crate::basis::BasisSpec;
use crate::chart::MeanModel;
use crate::cohort::Cohort;
use crate::error::{Error, Result};

use super::solver::{design_matrix, solve_wls, weighted_r_squared};
use super::FitReport;

/// Bisquare tuning constant for 95% Gaussian efficiency.
pub const DEFAULT_BISQUARE_TUNING: f64 = 4.685;

/// Inverse of the asymptotic Gaussian efficiency at the default tuning,
/// applied to the robust covariance.
const EFFICIENCY_CORRECTION: f64 = 1.0 / 0.95;

const MAX_ITERATIONS: usize = 100;
const COEF_TOL: f64 = 1e-8;

fn bisquare(u: f64, c: f64) -> f64 {
    let a = (u / c).abs();
    if a >= 1.0 {
        0.0
    } else {
        let t = 1.0 - a * a;
        t * t
    }
}

/// MAD-style residual scale: 1.4826 × median |r|. When more than half the
/// residuals vanish the median collapses to zero even in the presence of
/// outliers, so the mean absolute residual is used as a fallback.
fn residual_scale(residuals: &[f64]) -> f64 {
    let mut abs: Vec<f64> = residuals.iter().map(|r| r.abs()).collect();
    abs.sort_by(|a, b| a.total_cmp(b));
    let n = abs.len();
    let median = if n % 2 == 1 {
        abs[n / 2]
    } else {
        0.5 * (abs[n / 2 - 1] + abs[n / 2])
    };
    let scale = 1.4826 * median;
    if scale > 0.0 {
        scale
    } else {
        1.4826 * abs.iter().sum::<f64>() / n as f64
    }
}

/// Bisquare IRLS fit of the response implied by `basis`. The starting point is
/// a least-squares fit restricted to observations whose plain-LS residual lies
/// between the 10th and 90th percentiles; the scale is re-estimated every
/// iteration and the loop stops when no coefficient moves by more than 1e-8.
pub fn fit_robust(cohort: &Cohort, basis: &BasisSpec, tuning: f64) -> Result<FitReport> {
    if !(tuning > 0.0) {
        return Err(Error::invalid("tuning constant must be positive"));
    }
    let response = basis.covariate().response();
    let xs = cohort.values(basis.covariate());
    let ys = cohort.values(response);
    let base_weights = cohort.weights();
    let n = xs.len();
    let k = basis.len();
    if n < 2 * (k + 1) {
        return Err(Error::InsufficientData {
            required: 2 * (k + 1),
            actual: n,
        });
    }

    let response_span = ys.iter().fold(0.0f64, |a, y| a.max(y.abs())).max(1.0);
    let exact_tol = 1e-12 * response_span;

    // Trimmed-LS initialization.
    let plain = solve_wls(basis, &xs, &ys, &base_weights)?;
    let mut sorted = plain.residuals.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let lo = sorted[((0.10 * (n - 1) as f64).round() as usize).min(n - 1)];
    let hi = sorted[((0.90 * (n - 1) as f64).round() as usize).min(n - 1)];
    let trim_weights: Vec<f64> = plain
        .residuals
        .iter()
        .zip(&base_weights)
        .map(|(r, w)| if *r >= lo && *r <= hi { *w } else { 0.0 })
        .collect();
    let kept = trim_weights.iter().filter(|w| **w > 0.0).count();
    let mut beta = if kept >= k + 1 {
        solve_wls(basis, &xs, &ys, &trim_weights)?.beta
    } else {
        plain.beta.clone()
    };

    let x = design_matrix(basis, &xs);
    let predict = |beta: &[f64], i: usize| -> f64 {
        (0..k).map(|j| x[(i, j)] * beta[j]).sum()
    };

    let mut iterations = 0usize;
    let mut converged = false;
    let mut scale;
    loop {
        let residuals: Vec<f64> = (0..n).map(|i| ys[i] - predict(&beta, i)).collect();
        scale = residual_scale(&residuals);
        if scale <= exact_tol {
            // Exact fit: nothing left to reweight.
            let robust_weights = vec![1.0; n];
            return finalize(
                cohort, basis, &xs, &ys, beta, robust_weights, scale, iterations, true,
            );
        }
        let bis: Vec<f64> = residuals
            .iter()
            .map(|r| bisquare(r / scale, tuning))
            .collect();
        let weights: Vec<f64> = bis
            .iter()
            .zip(&base_weights)
            .map(|(b, w)| b * w)
            .collect();
        let sol = solve_wls(basis, &xs, &ys, &weights)?;
        iterations += 1;
        let delta = sol
            .beta
            .iter()
            .zip(&beta)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        beta = sol.beta;
        if delta < COEF_TOL {
            converged = true;
            break;
        }
        if iterations >= MAX_ITERATIONS {
            break;
        }
    }

    // Final weights from the final coefficients and scale.
    let residuals: Vec<f64> = (0..n).map(|i| ys[i] - predict(&beta, i)).collect();
    scale = residual_scale(&residuals);
    let robust_weights: Vec<f64> = if scale <= exact_tol {
        vec![1.0; n]
    } else {
        residuals
            .iter()
            .map(|r| bisquare(r / scale, tuning))
            .collect()
    };
    finalize(
        cohort,
        basis,
        &xs,
        &ys,
        beta,
        robust_weights,
        scale,
        iterations,
        converged,
    )
}

#[allow(clippy::too_many_arguments)]
fn finalize(
    cohort: &Cohort,
    basis: &BasisSpec,
    xs: &[f64],
    ys: &[f64],
    beta: Vec<f64>,
    robust_weights: Vec<f64>,
    scale: f64,
    iterations: usize,
    converged: bool,
) -> Result<FitReport> {
    let n = xs.len();
    let k = basis.len();
    let x = design_matrix(basis, xs);
    let fitted: Vec<f64> = (0..n)
        .map(|i| (0..k).map(|j| x[(i, j)] * beta[j]).sum())
        .collect();
    let residuals: Vec<f64> = ys.iter().zip(&fitted).map(|(y, f)| y - f).collect();
    let weights: Vec<f64> = robust_weights
        .iter()
        .zip(cohort.weights())
        .map(|(b, w)| b * w)
        .collect();
    let r_squared = weighted_r_squared(ys, &fitted, &weights);

    // Robust covariance: scale² · efficiency correction ·
    // (XᵀWX)⁻¹ (XᵀW²X) (XᵀWX)⁻¹ with W the combined weights.
    let mut xtwx: DMatrix<f64> = DMatrix::zeros(k, k);
    let mut xtw2x: DMatrix<f64> = DMatrix::zeros(k, k);
    for i in 0..n {
        let w = weights[i];
        for a in 0..k {
            for b in 0..k {
                xtwx[(a, b)] += w * x[(i, a)] * x[(i, b)];
                xtw2x[(a, b)] += w * w * x[(i, a)] * x[(i, b)];
            }
        }
    }
    let covariance = match xtwx.clone().try_inverse() {
        Some(inv) => &inv * xtw2x * &inv * (scale * scale * EFFICIENCY_CORRECTION),
        None => DMatrix::zeros(k, k),
    };

    Ok(FitReport {
        mean: MeanModel::new(basis.clone(), beta)?,
        variance: None,
        residuals,
        robust_weights,
        r_squared,
        coefficient_covariance: covariance,
        scale,
        iterations,
        converged,
    })
}
