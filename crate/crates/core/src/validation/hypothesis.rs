//! Hypothesis tests: Wilcoxon rank-sum, Chow, Wald and the paired
//! over-estimation t-test.

use nalgebra::DVector;
use statrs::distribution::{ChiSquared, ContinuousCDF, FisherSnedecor, Normal, StudentsT};

use crate::basis::BasisSpec;
use crate::cohort::Cohort;
use crate::error::{Error, Result};
use crate::regression::solver::solve_wls;
use crate::regression::FitReport;

#[derive(Debug, Clone, Copy)]
pub struct TestOutcome {
    pub statistic: f64,
    pub p_value: f64,
    pub degenerate: bool,
}

/// Two-sample rank-sum test with midrank ties. The statistic is the
/// Mann-Whitney U of the first sample; the two-sided p-value comes from the
/// normal approximation with tie-corrected variance and continuity correction.
pub fn wilcoxon_rank_sum(a: &[f64], b: &[f64]) -> Result<TestOutcome> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("rank-sum test needs two non-empty samples"));
    }
    let na = a.len() as f64;
    let nb = b.len() as f64;
    let n = na + nb;

    let mut pooled: Vec<(f64, bool)> = a
        .iter()
        .map(|&v| (v, true))
        .chain(b.iter().map(|&v| (v, false)))
        .collect();
    pooled.sort_by(|x, y| x.0.total_cmp(&y.0));

    // Midranks and tie-group sizes.
    let mut rank_sum_a = 0.0;
    let mut tie_correction = 0.0;
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i;
        while j + 1 < pooled.len() && pooled[j + 1].0 == pooled[i].0 {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        let midrank = (i + j + 2) as f64 / 2.0;
        for item in &pooled[i..=j] {
            if item.1 {
                rank_sum_a += midrank;
            }
        }
        tie_correction += t * t * t - t;
        i = j + 1;
    }

    let u = rank_sum_a - na * (na + 1.0) / 2.0;
    let mean = na * nb / 2.0;
    let var = na * nb / 12.0 * ((n + 1.0) - tie_correction / (n * (n - 1.0)));
    if var <= 0.0 {
        // Everything tied across both samples.
        return Ok(TestOutcome {
            statistic: u,
            p_value: 1.0,
            degenerate: true,
        });
    }
    let diff = u - mean;
    let z = if diff.abs() <= 0.5 {
        0.0
    } else {
        (diff.abs() - 0.5) / var.sqrt()
    };
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let p = (2.0 * (1.0 - normal.cdf(z))).clamp(0.0, 1.0);
    Ok(TestOutcome {
        statistic: u,
        p_value: p,
        degenerate: false,
    })
}

/// Chow test: does one regression fit both cohorts as well as two separate
/// ones? F = [(SSR_pooled − SSR_a − SSR_b)/k] / [(SSR_a + SSR_b)/(n_a+n_b−2k)].
pub fn chow_test(cohort_a: &Cohort, cohort_b: &Cohort, basis: &BasisSpec) -> Result<TestOutcome> {
    let k = basis.len();
    if cohort_a.len() <= k || cohort_b.len() <= k {
        return Err(Error::InsufficientData {
            required: k + 1,
            actual: cohort_a.len().min(cohort_b.len()),
        });
    }
    let response = basis.covariate().response();
    let ssr = |c: &Cohort| -> Result<f64> {
        Ok(solve_wls(
            basis,
            &c.values(basis.covariate()),
            &c.values(response),
            &c.weights(),
        )?
        .ssr)
    };
    let ssr_a = ssr(cohort_a)?;
    let ssr_b = ssr(cohort_b)?;
    let mut pooled_rows: Vec<_> = cohort_a.iter().cloned().collect();
    pooled_rows.extend(cohort_b.iter().cloned());
    let pooled = Cohort::new(pooled_rows, "pooled");
    let ssr_pooled = ssr(&pooled)?;

    if ssr_a + ssr_b == 0.0 {
        return Err(Error::DegenerateTest(
            "both group fits are exact; the Chow statistic is undefined".into(),
        ));
    }
    let df2 = (cohort_a.len() + cohort_b.len() - 2 * k) as f64;
    let f_stat = (((ssr_pooled - ssr_a - ssr_b) / k as f64) / ((ssr_a + ssr_b) / df2)).max(0.0);
    let dist = FisherSnedecor::new(k as f64, df2)
        .map_err(|e| Error::invalid(format!("F distribution: {e}")))?;
    Ok(TestOutcome {
        statistic: f_stat,
        p_value: (1.0 - dist.cdf(f_stat)).clamp(0.0, 1.0),
        degenerate: false,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct WaldOutcome {
    pub statistic: f64,
    pub p_value: f64,
    pub degrees_of_freedom: usize,
    /// Set when the covariance was singular and a pseudo-inverse was used
    /// with rank-adjusted degrees of freedom.
    pub rank_deficient: bool,
}

/// Wald test of H0: β = β₀ using the fit's stored coefficient covariance
/// (sandwich for GLS fits, robust covariance for M-fits).
pub fn wald_coefficient_test(fit: &FitReport, hypothesized: &[f64]) -> Result<WaldOutcome> {
    let beta = fit.coefficients();
    let k = beta.len();
    if hypothesized.len() != k {
        return Err(Error::invalid(format!(
            "hypothesized vector has length {}, expected {k}",
            hypothesized.len()
        )));
    }
    let d = DVector::from_fn(k, |i, _| beta[i] - hypothesized[i]);
    let cov = &fit.coefficient_covariance;
    let (inv, df, rank_deficient) = match cov.clone().try_inverse() {
        Some(inv) => (inv, k, false),
        None => {
            let svd = cov.clone().svd(true, true);
            let rank = svd.rank(1e-12);
            let pinv = svd
                .pseudo_inverse(1e-12)
                .map_err(|e| Error::invalid(format!("pseudo-inverse failed: {e}")))?;
            (pinv, rank, true)
        }
    };
    let w = (d.transpose() * inv * d)[(0, 0)].max(0.0);
    if df == 0 {
        return Err(Error::DegenerateTest("covariance has rank zero".into()));
    }
    let chi = ChiSquared::new(df as f64)
        .map_err(|e| Error::invalid(format!("chi-square distribution: {e}")))?;
    Ok(WaldOutcome {
        statistic: w,
        p_value: (1.0 - chi.cdf(w)).clamp(0.0, 1.0),
        degrees_of_freedom: df,
        rank_deficient,
    })
}

/// Paired comparison of over-estimation propensity: per observation the
/// indicator difference 1{e_a > 0} − 1{e_b > 0}, tested against zero mean with
/// a one-sided (greater) one-sample t-test.
pub fn overestimation_test(errors_a: &[f64], errors_b: &[f64]) -> Result<TestOutcome> {
    let n = errors_a.len();
    if n == 0 || errors_b.len() != n {
        return Err(Error::invalid(
            "paired test needs equal-length non-empty error vectors",
        ));
    }
    let diffs: Vec<f64> = errors_a
        .iter()
        .zip(errors_b)
        .map(|(a, b)| (if *a > 0.0 { 1.0 } else { 0.0 }) - (if *b > 0.0 { 1.0 } else { 0.0 }))
        .collect();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let ss: f64 = diffs.iter().map(|d| (d - mean).powi(2)).sum();
    if ss == 0.0 {
        // Zero variance: every pair agrees. p by convention.
        return Ok(TestOutcome {
            statistic: if mean > 0.0 {
                f64::INFINITY
            } else if mean < 0.0 {
                f64::NEG_INFINITY
            } else {
                0.0
            },
            p_value: if mean == 0.0 { 1.0 } else if mean > 0.0 { 0.0 } else { 1.0 },
            degenerate: true,
        });
    }
    if n < 2 {
        return Err(Error::InsufficientData {
            required: 2,
            actual: n,
        });
    }
    let sd = (ss / (n - 1) as f64).sqrt();
    let t = mean / (sd / (n as f64).sqrt());
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .map_err(|e| Error::invalid(format!("t distribution: {e}")))?;
    Ok(TestOutcome {
        statistic: t,
        p_value: (1.0 - dist.cdf(t)).clamp(0.0, 1.0),
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::Covariate;
    use crate::cohort::{Measurement, Source};
    use approx::assert_relative_eq;
    use chrono::NaiveDate;

    fn growth_cohort(xs: &[f64], ys: &[f64]) -> Cohort {
        let date = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
        Cohort::new(
            xs.iter()
                .zip(ys)
                .enumerate()
                .map(|(i, (&x, &y))| {
                    Measurement::raw(format!("p{i}"), date, x, y, 1.0, Source::Spontaneous)
                        .unwrap()
                })
                .collect(),
            "test",
        )
    }

    #[test]
    fn identical_samples_do_not_reject() {
        let out = wilcoxon_rank_sum(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!(out.p_value > 0.95, "p = {}", out.p_value);
    }

    #[test]
    fn complete_separation_has_extreme_u() {
        let out = wilcoxon_rank_sum(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert_relative_eq!(out.statistic, 0.0);
        assert!(out.p_value < 0.1);
    }

    #[test]
    fn all_values_identical_is_degenerate() {
        let out = wilcoxon_rank_sum(&[5.0, 5.0], &[5.0, 5.0, 5.0]).unwrap();
        assert!(out.degenerate);
        assert_relative_eq!(out.p_value, 1.0);
    }

    #[test]
    fn normal_approximation_matches_exact_enumeration() {
        // Fixed n = 4 + 4 instance; exact two-sided p by enumerating all
        // C(8,4) assignments of the pooled values to group A.
        let a = [1.2, 3.4, 2.2, 5.6];
        let b = [4.4, 6.1, 7.3, 5.9];
        let out = wilcoxon_rank_sum(&a, &b).unwrap();

        let pooled: Vec<f64> = a.iter().chain(b.iter()).copied().collect();
        let n = pooled.len();
        let na = a.len();
        let mut ranks = vec![0.0; n];
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&x, &y| pooled[x].total_cmp(&pooled[y]));
        for (r, &idx) in order.iter().enumerate() {
            ranks[idx] = (r + 1) as f64;
        }
        let u_of = |mask: u32| -> f64 {
            let mut w = 0.0;
            for (i, r) in ranks.iter().enumerate() {
                if mask & (1 << i) != 0 {
                    w += r;
                }
            }
            w - (na * (na + 1)) as f64 / 2.0
        };
        let observed_u = u_of(0b0000_1111);
        assert_relative_eq!(observed_u, out.statistic);
        let mu = (na * (n - na)) as f64 / 2.0;
        let mut extreme = 0usize;
        let mut total = 0usize;
        for mask in 0u32..(1 << n) {
            if mask.count_ones() as usize == na {
                total += 1;
                if (u_of(mask) - mu).abs() >= (observed_u - mu).abs() {
                    extreme += 1;
                }
            }
        }
        let exact_p = extreme as f64 / total as f64;
        assert!(
            (out.p_value - exact_p).abs() <= 0.02,
            "normal p {} vs exact {exact_p}",
            out.p_value
        );
    }

    #[test]
    fn chow_detects_separated_groups() {
        // Parallel lines offset by 10 with tiny noise.
        let xs: Vec<f64> = (0..30).map(|i| i as f64 / 3.0).collect();
        let noise = |i: usize| ((i * 73 % 19) as f64 - 9.0) / 90.0;
        let ya: Vec<f64> = xs.iter().enumerate().map(|(i, x)| 1.0 + 2.0 * x + noise(i)).collect();
        let yb: Vec<f64> = xs
            .iter()
            .enumerate()
            .map(|(i, x)| 11.0 + 2.0 * x + noise(i + 7))
            .collect();
        let a = growth_cohort(&xs, &ya);
        let b = growth_cohort(&xs, &yb);
        let out = chow_test(&a, &b, &BasisSpec::linear(Covariate::Fa)).unwrap();
        assert!(out.p_value < 1e-6, "p = {}", out.p_value);
    }

    #[test]
    fn chow_matches_hand_computation_on_twelve_points() {
        let xa = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let ya = [1.1, 2.3, 2.9, 4.2, 4.8, 6.3];
        let xb = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let yb = [2.0, 2.6, 3.9, 4.5, 5.8, 6.1];
        let a = growth_cohort(&xa, &ya);
        let b = growth_cohort(&xb, &yb);
        let out = chow_test(&a, &b, &BasisSpec::linear(Covariate::Fa)).unwrap();

        // Closed-form SSR for a straight-line fit.
        let ssr_line = |xs: &[f64], ys: &[f64]| -> f64 {
            let n = xs.len() as f64;
            let sx: f64 = xs.iter().sum();
            let sy: f64 = ys.iter().sum();
            let sxx: f64 = xs.iter().map(|x| x * x).sum();
            let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x * y).sum();
            let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
            let intercept = (sy - slope * sx) / n;
            xs.iter()
                .zip(ys)
                .map(|(x, y)| (y - intercept - slope * x).powi(2))
                .sum()
        };
        let ssr_a = ssr_line(&xa, &ya);
        let ssr_b = ssr_line(&xb, &yb);
        let pooled_x: Vec<f64> = xa.iter().chain(xb.iter()).copied().collect();
        let pooled_y: Vec<f64> = ya.iter().chain(yb.iter()).copied().collect();
        let ssr_p = ssr_line(&pooled_x, &pooled_y);
        let f_hand = ((ssr_p - ssr_a - ssr_b) / 2.0) / ((ssr_a + ssr_b) / (12.0 - 4.0));
        assert_relative_eq!(out.statistic, f_hand, epsilon = 1e-9, max_relative = 1e-9);
    }

    #[test]
    fn chow_exact_fits_are_degenerate() {
        let xs = [1.0, 2.0, 3.0];
        let ys = [2.0, 4.0, 6.0];
        let a = growth_cohort(&xs, &ys);
        let b = growth_cohort(&xs, &[3.0, 5.0, 7.0]);
        assert!(matches!(
            chow_test(&a, &b, &BasisSpec::linear(Covariate::Fa)),
            Err(Error::DegenerateTest(_))
        ));
    }

    #[test]
    fn wald_is_zero_at_the_estimate() {
        let xs: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs
            .iter()
            .enumerate()
            .map(|(i, x)| 1.0 + 0.5 * x + ((i % 5) as f64 - 2.0) * 0.1)
            .collect();
        let cohort = growth_cohort(&xs, &ys);
        let fit = crate::regression::fit_least_squares(
            &cohort,
            &BasisSpec::linear(Covariate::Fa),
            Covariate::Crl,
            None,
        )
        .unwrap();
        let beta: Vec<f64> = fit.coefficients().to_vec();
        let out = wald_coefficient_test(&fit, &beta).unwrap();
        assert_relative_eq!(out.statistic, 0.0, epsilon = 1e-12);
        assert_relative_eq!(out.p_value, 1.0);
        assert!(!out.rank_deficient);
    }

    #[test]
    fn overestimation_complete_separation() {
        let a = vec![1.0; 30];
        let b = vec![-1.0; 30];
        let out = overestimation_test(&a, &b).unwrap();
        assert!(out.degenerate);
        assert!(out.p_value < 1e-6);
    }

    #[test]
    fn overestimation_identical_vectors_degenerate() {
        let a = [0.5, -0.5, 1.5, -1.5];
        let out = overestimation_test(&a, &a).unwrap();
        assert!(out.degenerate);
        assert_relative_eq!(out.p_value, 1.0);
    }

    #[test]
    fn overestimation_matches_hand_computation_on_twenty_pairs() {
        // Errors chosen so the indicator differences are a known mix.
        let errors_a: Vec<f64> = (0..20)
            .map(|i| if i % 3 == 0 { -(i as f64) - 1.0 } else { i as f64 + 1.0 })
            .collect();
        let errors_b: Vec<f64> = (0..20)
            .map(|i| if i % 4 == 0 { i as f64 + 1.0 } else { -(i as f64) - 1.0 })
            .collect();
        let out = overestimation_test(&errors_a, &errors_b).unwrap();

        let d: Vec<f64> = errors_a
            .iter()
            .zip(&errors_b)
            .map(|(a, b)| {
                (if *a > 0.0 { 1.0 } else { 0.0 }) - (if *b > 0.0 { 1.0 } else { 0.0 })
            })
            .collect();
        let mean = d.iter().sum::<f64>() / 20.0;
        let sd = (d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 19.0).sqrt();
        let t_hand = mean / (sd / 20.0_f64.sqrt());
        assert_relative_eq!(out.statistic, t_hand, epsilon = 1e-9, max_relative = 1e-9);
    }

    #[test]
    fn p_values_in_unit_interval_and_order_invariant() {
        let a = [3.0, 1.0, 4.0, 1.5, 9.0];
        let b = [2.0, 6.0, 5.0, 3.5];
        let p1 = wilcoxon_rank_sum(&a, &b).unwrap();
        let mut a2 = a;
        a2.reverse();
        let p2 = wilcoxon_rank_sum(&a2, &b).unwrap();
        assert_eq!(p1.p_value, p2.p_value);
        assert!((0.0..=1.0).contains(&p1.p_value));
    }
}
