//! Fitting kernels: weighted least squares, two-stage heteroskedastic
//! generalized least squares, and robust M-estimation.

mod hetero;
mod robust;
pub(crate) mod solver;

use nalgebra::DMatrix;
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use crate::basis::{BasisSpec, Covariate};
use crate::chart::{MeanModel, VarianceModel};
use crate::cohort::Cohort;
use crate::error::{Error, Result};

pub use hetero::{fit_heteroskedastic, fit_variance_model, HeteroOptions, VarianceFit};
pub use robust::{fit_robust, DEFAULT_BISQUARE_TUNING};

/// Everything a fit produces: the mean model, an optional variance model,
/// residual diagnostics and a coefficient covariance estimate.
#[derive(Debug, Clone)]
pub struct FitReport {
    pub mean: MeanModel,
    pub variance: Option<VarianceModel>,
    /// Per-observation residuals y − ŷ on the response scale.
    pub residuals: Vec<f64>,
    /// Per-observation robustness weights in [0, 1]; all 1 for non-robust fits.
    pub robust_weights: Vec<f64>,
    /// 1 − SSR/SST on the working (weighted) response.
    pub r_squared: f64,
    pub coefficient_covariance: DMatrix<f64>,
    /// Residual scale: robust MAD scale for M-fits, √(SSR/(n−k)) otherwise.
    pub scale: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl FitReport {
    pub fn coefficients(&self) -> &[f64] {
        self.mean.coefficients()
    }
}

pub(crate) fn response_values(cohort: &Cohort, basis: &BasisSpec) -> (Vec<f64>, Vec<f64>) {
    let response = basis.covariate().response();
    (
        cohort.values(basis.covariate()),
        cohort.values(response),
    )
}

/// Weighted least squares of the response implied by `basis` (a basis over FA
/// predicts CRL and vice versa). Weights are the cohort weights, multiplied by
/// `extra_weights` when given.
pub fn fit_least_squares(
    cohort: &Cohort,
    basis: &BasisSpec,
    response: Covariate,
    extra_weights: Option<&[f64]>,
) -> Result<FitReport> {
    if response == basis.covariate() {
        return Err(Error::invalid(format!(
            "response {response} cannot equal the basis covariate"
        )));
    }
    let xs = cohort.values(basis.covariate());
    let ys = cohort.values(response);
    let mut weights = cohort.weights();
    if let Some(extra) = extra_weights {
        if extra.len() != weights.len() {
            return Err(Error::invalid("extra weight vector length mismatch"));
        }
        for (w, e) in weights.iter_mut().zip(extra) {
            *w *= e;
        }
    }
    let sol = solver::solve_wls(basis, &xs, &ys, &weights)?;
    let n = xs.len();
    let k = basis.len();
    let cov = &sol.xtwx_inv * sol.sigma2_hat;
    Ok(FitReport {
        mean: MeanModel::new(basis.clone(), sol.beta)?,
        variance: None,
        residuals: sol.residuals,
        robust_weights: vec![1.0; n],
        r_squared: sol.r_squared,
        coefficient_covariance: cov,
        scale: (sol.ssr / (n - k).max(1) as f64).sqrt(),
        iterations: 1,
        converged: true,
    })
}

/// F-test of the highest-degree basis term: the fitted basis against the same
/// basis without its last term, F = (SSR_restricted − SSR_full)/(SSR_full/(n−k))
/// on (1, n−k) degrees of freedom.
pub fn highest_degree_test(fit: &FitReport, cohort: &Cohort) -> Result<(f64, f64)> {
    let basis = fit.mean.basis();
    if basis.len() < 2 {
        return Err(Error::invalid(
            "highest-degree test needs at least two basis terms",
        ));
    }
    let (xs, ys) = response_values(cohort, basis);
    let weights = cohort.weights();
    let full = solver::solve_wls(basis, &xs, &ys, &weights)?;
    let restricted_basis = basis.drop_last_term()?;
    let restricted = solver::solve_wls(&restricted_basis, &xs, &ys, &weights)?;

    let n = xs.len();
    let k = basis.len();
    let df2 = (n - k) as f64;
    if full.ssr <= 0.0 {
        // Exact fit: the restricted model cannot compete.
        return Ok((f64::INFINITY, 0.0));
    }
    let f_stat = (restricted.ssr - full.ssr) / (full.ssr / df2);
    let f_stat = f_stat.max(0.0);
    let dist = FisherSnedecor::new(1.0, df2)
        .map_err(|e| Error::invalid(format!("F distribution: {e}")))?;
    let p = (1.0 - dist.cdf(f_stat)).clamp(0.0, 1.0);
    Ok((f_stat, p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::BasisSpec;
    use crate::cohort::{Measurement, Source};
    use approx::assert_relative_eq;
    use chrono::NaiveDate;

    pub(crate) fn cohort_from_xy(xs: &[f64], ys: &[f64]) -> Cohort {
        // Covariate = FA, response = CRL.
        let date = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
        let ms = xs
            .iter()
            .zip(ys)
            .enumerate()
            .map(|(i, (&x, &y))| {
                Measurement::raw(format!("p{i}"), date, x, y, 1.0, Source::Spontaneous).unwrap()
            })
            .collect();
        Cohort::new(ms, "test")
    }

    #[test]
    fn exact_line_recovery() {
        let cohort = cohort_from_xy(&[0.1, 1.0, 2.0], &[1.2, 3.0, 5.0]);
        let basis = BasisSpec::linear(Covariate::Fa);
        let fit = fit_least_squares(&cohort, &basis, Covariate::Crl, None).unwrap();
        assert_relative_eq!(fit.coefficients()[0], 1.0, epsilon = 1e-10);
        assert_relative_eq!(fit.coefficients()[1], 2.0, epsilon = 1e-10);
        assert_relative_eq!(fit.r_squared, 1.0);
    }

    #[test]
    fn exact_quadratic_interpolation() {
        // Six points sampled from a degree-2 polynomial recover it exactly.
        let coeffs = [-3.3108, -0.2087, 1.5250e-2];
        let xs: Vec<f64> = vec![26.0, 38.0, 50.0, 62.0, 74.0, 85.0];
        let ys: Vec<f64> = xs
            .iter()
            .map(|&x| coeffs[0] + coeffs[1] * x + coeffs[2] * x * x)
            .collect();
        let cohort = cohort_from_xy(&xs, &ys);
        let fit = fit_least_squares(
            &cohort,
            &BasisSpec::quadratic(Covariate::Fa),
            Covariate::Crl,
            None,
        )
        .unwrap();
        for (est, truth) in fit.coefficients().iter().zip(coeffs) {
            assert_relative_eq!(est, &truth, epsilon = 1e-10);
        }
    }

    #[test]
    fn matches_normal_equation_oracle_on_noisy_points() {
        let xs = [0.0, 1.0, 2.0, 3.0, 4.0];
        let ys = [1.1, 2.9, 5.2, 6.8, 9.1];
        let cohort = cohort_from_xy(&xs, &ys);
        let fit = fit_least_squares(
            &cohort,
            &BasisSpec::linear(Covariate::Fa),
            Covariate::Crl,
            None,
        )
        .unwrap();
        // Independent route: closed-form normal equations.
        let n = xs.len() as f64;
        let sx: f64 = xs.iter().sum();
        let sy: f64 = ys.iter().sum();
        let sxx: f64 = xs.iter().map(|x| x * x).sum();
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| x * y).sum();
        let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        let intercept = (sy - slope * sx) / n;
        assert_relative_eq!(intercept, 1.04, epsilon = 1e-12);
        assert_relative_eq!(slope, 1.99, epsilon = 1e-12);
        assert_relative_eq!(fit.coefficients()[0], intercept, epsilon = 1e-10);
        assert_relative_eq!(fit.coefficients()[1], slope, epsilon = 1e-10);
    }

    #[test]
    fn response_must_differ_from_covariate() {
        let cohort = cohort_from_xy(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]);
        assert!(fit_least_squares(
            &cohort,
            &BasisSpec::linear(Covariate::Fa),
            Covariate::Fa,
            None
        )
        .is_err());
    }

    #[test]
    fn quadratic_term_significant_on_exact_quadratic() {
        let xs: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| 1.0 + 0.5 * x + 0.2 * x * x).collect();
        let cohort = cohort_from_xy(&xs, &ys);
        let basis = BasisSpec::quadratic(Covariate::Fa);
        let fit = fit_least_squares(&cohort, &basis, Covariate::Crl, None).unwrap();
        let (f, p) = highest_degree_test(&fit, &cohort).unwrap();
        assert!(f > 1e10 || f.is_infinite());
        assert!(p < 1e-10);
    }

    #[test]
    fn f_statistic_matches_hand_computation_on_eight_points() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0];
        let ys = [2.3, 2.9, 4.1, 4.2, 5.6, 6.4, 6.5, 8.3];
        let cohort = cohort_from_xy(&xs, &ys);
        let basis = BasisSpec::quadratic(Covariate::Fa);
        let fit = fit_least_squares(&cohort, &basis, Covariate::Crl, None).unwrap();
        let (f, _p) = highest_degree_test(&fit, &cohort).unwrap();

        // Hand route via closed-form normal equations for both models.
        let ssr = |design: &dyn Fn(f64) -> Vec<f64>, kk: usize| -> f64 {
            // Solve (X^T X) b = X^T y by Gaussian elimination.
            let mut g = vec![vec![0.0; kk + 1]; kk];
            for (x, y) in xs.iter().zip(&ys) {
                let row = design(*x);
                for a in 0..kk {
                    for b in 0..kk {
                        g[a][b] += row[a] * row[b];
                    }
                    g[a][kk] += row[a] * y;
                }
            }
            for col in 0..kk {
                let piv = (col..kk).max_by(|&a, &b| g[a][col].abs().total_cmp(&g[b][col].abs())).unwrap();
                g.swap(col, piv);
                for rr in 0..kk {
                    if rr != col {
                        let f = g[rr][col] / g[col][col];
                        for cc in col..=kk {
                            g[rr][cc] -= f * g[col][cc];
                        }
                    }
                }
            }
            let beta: Vec<f64> = (0..kk).map(|i| g[i][kk] / g[i][i]).collect();
            xs.iter()
                .zip(&ys)
                .map(|(x, y)| {
                    let row = design(*x);
                    let fitv: f64 = row.iter().zip(&beta).map(|(a, b)| a * b).sum();
                    (y - fitv).powi(2)
                })
                .sum()
        };
        let ssr_full = ssr(&|x| vec![1.0, x, x * x], 3);
        let ssr_restricted = ssr(&|x| vec![1.0, x], 2);
        let f_hand = (ssr_restricted - ssr_full) / (ssr_full / (8.0 - 3.0));
        assert_relative_eq!(f, f_hand, epsilon = 1e-9, max_relative = 1e-9);
    }

    #[test]
    fn pure_noise_p_values_are_uniform() {
        // Size calibration: fraction of p < 0.05 over 200 seeds is 0.05 +- 0.03.
        use rand::{Rng, SeedableRng};
        let mut rejections = 0;
        for seed in 0..200u64 {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let xs: Vec<f64> = (0..100).map(|_| rng.gen_range(0.0..10.0)).collect();
            let ys: Vec<f64> = (0..100)
                .map(|_| {
                    let u: f64 = rng.gen_range(1e-12..1.0);
                    let v: f64 = rng.gen_range(0.0..1.0);
                    (-2.0 * u.ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos()
                })
                .collect();
            let cohort = cohort_from_xy(&xs, &ys);
            let basis = BasisSpec::quadratic(Covariate::Fa);
            let fit = fit_least_squares(&cohort, &basis, Covariate::Crl, None).unwrap();
            let (_f, p) = highest_degree_test(&fit, &cohort).unwrap();
            if p < 0.05 {
                rejections += 1;
            }
        }
        let rate = rejections as f64 / 200.0;
        assert!((rate - 0.05).abs() <= 0.03, "rejection rate {rate}");
    }
}
