//! Variance modelling and two-stage generalized least squares.

use nalgebra::DMatrix;

use crate::basis::BasisSpec;
use crate::chart::{MeanModel, VarianceModel, DEFAULT_VARIANCE_FLOOR};
use crate::cohort::Cohort;
use crate::error::{Error, Result};

use super::solver::{design_matrix, solve_wls};
use super::{fit_robust, FitReport, DEFAULT_BISQUARE_TUNING};

/// Fraction of the mean positive fitted variance used to floor the GLS
/// weights. A fitted variance polynomial can dip to zero or below near the
/// domain edges; weighting by its raw reciprocal would let a handful of
/// observations dominate the fit.
const WEIGHT_FLOOR_FRACTION: f64 = 0.05;

/// A fitted variance model plus its degeneracy diagnostics.
#[derive(Debug, Clone)]
pub struct VarianceFit {
    pub model: VarianceModel,
    /// Fraction of the observed covariate range where σ²(x) ≤ floor.
    pub degenerate_fraction: f64,
    /// Set when more than 10% of the observed range is degenerate.
    pub degenerate: bool,
}

/// Least-squares fit of squared residuals on `basis`, giving σ²(x).
pub fn fit_variance_model(
    residuals: &[f64],
    covariate_values: &[f64],
    basis: &BasisSpec,
) -> Result<VarianceFit> {
    if residuals.len() != covariate_values.len() {
        return Err(Error::invalid(
            "residuals and covariate values must have equal length",
        ));
    }
    let squared: Vec<f64> = residuals.iter().map(|r| r * r).collect();
    let weights = vec![1.0; residuals.len()];
    let sol = solve_wls(basis, covariate_values, &squared, &weights)?;
    let model = VarianceModel::new(basis.clone(), sol.beta, DEFAULT_VARIANCE_FLOOR)?;

    let lo = covariate_values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = covariate_values
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let mut degenerate_points = 0usize;
    let steps = 1000usize;
    for i in 0..=steps {
        let x = lo + (hi - lo) * i as f64 / steps as f64;
        if model.sigma2(x) <= model.floor() {
            degenerate_points += 1;
        }
    }
    let degenerate_fraction = degenerate_points as f64 / (steps + 1) as f64;
    Ok(VarianceFit {
        model,
        degenerate_fraction,
        degenerate: degenerate_fraction > 0.10,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct HeteroOptions {
    /// Number of variance-fit / reweighted-fit rounds after stage 1.
    pub rounds: usize,
    /// Use a robust fit for stage 1 instead of ordinary least squares.
    pub robust_stage1: bool,
}

impl Default for HeteroOptions {
    fn default() -> Self {
        HeteroOptions {
            rounds: 2,
            robust_stage1: false,
        }
    }
}

/// Two-stage generalized least squares: an unweighted mean fit, a variance
/// model on its residuals, then a refit weighted by the reciprocal fitted
/// variance, with the last two stages repeated `rounds` times. The coefficient
/// covariance is the heteroskedasticity-consistent sandwich (HC1).
pub fn fit_heteroskedastic(
    cohort: &Cohort,
    mean_basis: &BasisSpec,
    variance_basis: &BasisSpec,
    options: HeteroOptions,
) -> Result<FitReport> {
    if variance_basis.covariate() != mean_basis.covariate() {
        return Err(Error::invalid(
            "mean and variance bases must share a covariate",
        ));
    }
    let response = mean_basis.covariate().response();
    let xs = cohort.values(mean_basis.covariate());
    let ys = cohort.values(response);
    let base_weights = cohort.weights();

    let stage1 = if options.robust_stage1 {
        fit_robust(cohort, mean_basis, DEFAULT_BISQUARE_TUNING)?
    } else {
        super::fit_least_squares(cohort, mean_basis, response, None)?
    };

    let n = xs.len();
    let k = mean_basis.len();
    let mut residuals = stage1.residuals.clone();
    let mut variance: Option<VarianceFit> = None;
    let mut gls_weights = vec![1.0; n];
    let mut sol = None;

    for _ in 0..options.rounds.max(1) {
        let vfit = fit_variance_model(&residuals, &xs, variance_basis)?;
        let fitted_var: Vec<f64> = xs.iter().map(|&x| vfit.model.sigma2(x)).collect();
        let positive: Vec<f64> = fitted_var.iter().cloned().filter(|v| *v > 0.0).collect();
        if positive.is_empty() {
            return Err(Error::DegenerateVariance {
                context: "heteroskedastic weights".into(),
                at: xs[0],
                sigma2: fitted_var[0],
                floor: vfit.model.floor(),
            });
        }
        let floor = (positive.iter().sum::<f64>() / positive.len() as f64
            * WEIGHT_FLOOR_FRACTION)
            .max(vfit.model.floor());
        for (w, v) in gls_weights.iter_mut().zip(&fitted_var) {
            *w = 1.0 / v.max(floor);
            if !w.is_finite() {
                return Err(Error::DegenerateVariance {
                    context: "heteroskedastic weights".into(),
                    at: 0.0,
                    sigma2: *v,
                    floor,
                });
            }
        }
        let weights: Vec<f64> = base_weights
            .iter()
            .zip(&gls_weights)
            .map(|(b, g)| b * g)
            .collect();
        let s = solve_wls(mean_basis, &xs, &ys, &weights)?;
        residuals = s.residuals.clone();
        variance = Some(vfit);
        sol = Some((s, weights));
    }

    let (sol, weights) = sol.expect("at least one GLS round");
    let vfit = variance.expect("at least one variance fit");

    // HC1 sandwich: (XᵀWX)⁻¹ (Σ wᵢ² rᵢ² xᵢxᵢᵀ) (XᵀWX)⁻¹ · n/(n−k).
    let x = design_matrix(mean_basis, &xs);
    let mut meat: DMatrix<f64> = DMatrix::zeros(k, k);
    for i in 0..n {
        let wr2 = weights[i] * weights[i] * sol.residuals[i] * sol.residuals[i];
        for a in 0..k {
            for b in 0..k {
                meat[(a, b)] += wr2 * x[(i, a)] * x[(i, b)];
            }
        }
    }
    let bread = &sol.xtwx_inv;
    let cov = bread * meat * bread * (n as f64 / (n - k) as f64);

    Ok(FitReport {
        mean: MeanModel::new(mean_basis.clone(), sol.beta)?,
        variance: Some(vfit.model),
        residuals: sol.residuals,
        robust_weights: vec![1.0; n],
        r_squared: sol.r_squared,
        coefficient_covariance: cov,
        scale: sol.sigma2_hat.sqrt(),
        iterations: options.rounds.max(1),
        converged: true,
    })
}
