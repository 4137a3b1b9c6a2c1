//! Model validation: leave-one-out cross-validation with best-performance
//! ranking, error summaries, and the hypothesis tests used to compare curves
//! and cohorts.

mod hypothesis;

use rayon::prelude::*;
use serde::Serialize;
use std::collections::BTreeMap;

use crate::basis::BasisSpec;
use crate::chart::GrowthChart;
use crate::cohort::Cohort;
use crate::error::{Error, Result};
use crate::regression::{
    fit_heteroskedastic, fit_least_squares, fit_robust, FitReport, HeteroOptions,
};

pub use hypothesis::{
    chow_test, overestimation_test, wald_coefficient_test, wilcoxon_rank_sum, TestOutcome,
    WaldOutcome,
};

/// How a REFIT model is refitted on each training fold.
#[derive(Debug, Clone, PartialEq)]
pub enum FitMethod {
    LeastSquares,
    Heteroskedastic { rounds: usize },
    Robust { tuning: f64 },
}

impl FitMethod {
    pub(crate) fn fit(&self, cohort: &Cohort, basis: &BasisSpec) -> Result<FitReport> {
        match self {
            FitMethod::LeastSquares => {
                fit_least_squares(cohort, basis, basis.covariate().response(), None)
            }
            FitMethod::Heteroskedastic { rounds } => fit_heteroskedastic(
                cohort,
                basis,
                basis,
                HeteroOptions {
                    rounds: *rounds,
                    robust_stage1: false,
                },
            ),
            FitMethod::Robust { tuning } => fit_robust(cohort, basis, *tuning),
        }
    }
}

/// A model entering the comparison: either refitted on every training fold or
/// a fixed published chart that ignores the training data entirely.
#[derive(Debug, Clone)]
pub enum ModelUnderTest {
    Refit {
        name: String,
        basis: BasisSpec,
        method: FitMethod,
    },
    Fixed {
        name: String,
        chart: GrowthChart,
    },
}

impl ModelUnderTest {
    pub fn name(&self) -> &str {
        match self {
            ModelUnderTest::Refit { name, .. } => name,
            ModelUnderTest::Fixed { name, .. } => name,
        }
    }

    fn covariate(&self) -> crate::basis::Covariate {
        match self {
            ModelUnderTest::Refit { basis, .. } => basis.covariate(),
            ModelUnderTest::Fixed { chart, .. } => match chart.predicts() {
                crate::chart::Predicts::CrlFromFa => crate::basis::Covariate::Fa,
                crate::chart::Predicts::FaFromCrl => crate::basis::Covariate::Crl,
            },
        }
    }
}

/// Location and spread of prediction errors (error = prediction − observation).
#[derive(Debug, Clone, Serialize)]
pub struct ErrorSummary {
    pub n: usize,
    pub min_abs: f64,
    pub median_abs: f64,
    pub mean_abs: f64,
    pub max_abs: f64,
    pub min: f64,
    pub median: f64,
    pub mean: f64,
    pub max: f64,
    /// Sample standard deviation of signed errors; absent for n = 1.
    pub std_dev: Option<f64>,
    /// Median and mean of |error|/observation·100 over non-zero observations.
    pub median_abs_rel: Option<f64>,
    pub mean_abs_rel: Option<f64>,
    /// Observations excluded from the relative statistics because they were 0.
    pub relative_excluded: usize,
}

fn median_of_sorted(values: &[f64]) -> f64 {
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// All summary statistics for one prediction vector.
pub fn error_summary(predictions: &[f64], observations: &[f64]) -> Result<ErrorSummary> {
    let n = predictions.len();
    if n == 0 || observations.len() != n {
        return Err(Error::invalid(
            "predictions and observations must be non-empty and equal length",
        ));
    }
    let errors: Vec<f64> = predictions
        .iter()
        .zip(observations)
        .map(|(p, o)| p - o)
        .collect();
    let mut signed = errors.clone();
    signed.sort_by(|a, b| a.total_cmp(b));
    let mut abs: Vec<f64> = errors.iter().map(|e| e.abs()).collect();
    abs.sort_by(|a, b| a.total_cmp(b));

    let mean = errors.iter().sum::<f64>() / n as f64;
    let mean_abs = abs.iter().sum::<f64>() / n as f64;
    let std_dev = if n > 1 {
        let ss: f64 = errors.iter().map(|e| (e - mean).powi(2)).sum();
        Some((ss / (n - 1) as f64).sqrt())
    } else {
        None
    };

    let mut rel: Vec<f64> = Vec::with_capacity(n);
    let mut relative_excluded = 0;
    for (e, o) in errors.iter().zip(observations) {
        if *o == 0.0 {
            relative_excluded += 1;
        } else {
            rel.push((e / o).abs() * 100.0);
        }
    }
    rel.sort_by(|a, b| a.total_cmp(b));
    let (median_abs_rel, mean_abs_rel) = if rel.is_empty() {
        (None, None)
    } else {
        (
            Some(median_of_sorted(&rel)),
            Some(rel.iter().sum::<f64>() / rel.len() as f64),
        )
    };

    Ok(ErrorSummary {
        n,
        min_abs: abs[0],
        median_abs: median_of_sorted(&abs),
        mean_abs,
        max_abs: abs[n - 1],
        min: signed[0],
        median: median_of_sorted(&signed),
        mean,
        max: signed[n - 1],
        std_dev,
        median_abs_rel,
        mean_abs_rel,
        relative_excluded,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ModelScore {
    pub model: String,
    pub count: f64,
    pub percent: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PairwiseScore {
    pub a: String,
    pub b: String,
    pub count_a: f64,
    pub count_b: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Exclusion {
    pub model: String,
    pub fold: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReportMetadata {
    pub tie_rule: String,
    pub n_folds: usize,
}

/// Best-performance counts, pairwise duels and per-model error summaries.
#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub overall: Vec<ModelScore>,
    pub pairwise: Vec<PairwiseScore>,
    pub summaries: BTreeMap<String, ErrorSummary>,
    pub exclusions: Vec<Exclusion>,
    pub metadata: ReportMetadata,
}

impl ValidationReport {
    /// Model names ranked by descending best-performance count.
    pub fn ranking(&self) -> Vec<&str> {
        let mut order: Vec<&ModelScore> = self.overall.iter().collect();
        order.sort_by(|a, b| b.count.total_cmp(&a.count));
        order.iter().map(|s| s.model.as_str()).collect()
    }

    /// Plain-text rendering in the count-and-percent table style, e.g.
    /// `192 (33.68)`.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        out.push_str("Number of best performances\n");
        for s in &self.overall {
            out.push_str(&format!(
                "  {:<24} {}\n",
                s.model,
                format_count_percent(s.count, s.percent)
            ));
        }
        out.push_str("Pairwise best counts\n");
        for p in &self.pairwise {
            let total = p.count_a + p.count_b;
            let pct = |c: f64| if total > 0.0 { c / total * 100.0 } else { 0.0 };
            out.push_str(&format!(
                "  {:<24} {:<16} vs {:<24} {}\n",
                p.a,
                format_count_percent(p.count_a, pct(p.count_a)),
                p.b,
                format_count_percent(p.count_b, pct(p.count_b)),
            ));
        }
        out.push_str("Error summaries (error = prediction - observation)\n");
        for (name, s) in &self.summaries {
            out.push_str(&format!(
                "  {:<24} abs[min {:.4} median {:.4} mean {:.4} max {:.4}]",
                name, s.min_abs, s.median_abs, s.mean_abs, s.max_abs
            ));
            out.push_str(&format!(
                " signed[min {:.4} median {:.4} mean {:.4} max {:.4}]",
                s.min, s.median, s.mean, s.max
            ));
            match s.std_dev {
                Some(sd) => out.push_str(&format!(" sd {sd:.4}\n")),
                None => out.push_str(" sd n/a\n"),
            }
        }
        if !self.exclusions.is_empty() {
            out.push_str(&format!(
                "Excluded (out of domain): {} model-fold pairs\n",
                self.exclusions.len()
            ));
        }
        out
    }
}

pub(crate) fn format_count_percent(count: f64, percent: f64) -> String {
    if (count - count.round()).abs() < 1e-9 {
        format!("{:.0} ({:.2})", count.round(), percent)
    } else {
        format!("{count:.1} ({percent:.2})")
    }
}

/// Leave-one-out cross-validation of the given models over one cohort.
///
/// For every observation, REFIT models retrain on the remaining n−1 rows
/// (carrying their pipeline weights) and FIXED charts evaluate directly;
/// the model with the smallest absolute prediction error wins the fold. Exact
/// ties split the fold evenly (1/t to each of t tied models overall, 1/2 each
/// pairwise). FIXED models that cannot cover an observation (domain error)
/// sit that fold out and are listed in the report's exclusions.
pub fn loocv_compare(cohort: &Cohort, models: &[ModelUnderTest]) -> Result<ValidationReport> {
    if models.len() < 2 {
        return Err(Error::invalid("cross-validation needs at least two models"));
    }
    let covariate = models[0].covariate();
    if models.iter().any(|m| m.covariate() != covariate) {
        return Err(Error::invalid(
            "all models under test must predict the same variable",
        ));
    }
    let n = cohort.len();
    if n < 2 {
        return Err(Error::InsufficientData {
            required: 2,
            actual: n,
        });
    }
    let xs = cohort.values(covariate);
    let obs = cohort.values(covariate.response());

    // Per-fold predictions, folds evaluated in parallel and merged by index.
    let fold_results: Vec<Result<Vec<Option<f64>>>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut row = Vec::with_capacity(models.len());
            for model in models {
                let pred = match model {
                    ModelUnderTest::Fixed { chart, .. } => match chart.evaluate(xs[i]) {
                        Ok(eval) => Some(eval.mean),
                        Err(Error::OutsideDomain { .. }) => None,
                        Err(e) => {
                            return Err(Error::FoldFailed {
                                fold: i,
                                source: Box::new(e),
                            })
                        }
                    },
                    ModelUnderTest::Refit { basis, method, .. } => {
                        let train = cohort.without(i);
                        let fit = method.fit(&train, basis).map_err(|e| Error::FoldFailed {
                            fold: i,
                            source: Box::new(e),
                        })?;
                        Some(fit.mean.evaluate(xs[i]).map_err(|e| Error::FoldFailed {
                            fold: i,
                            source: Box::new(e),
                        })?)
                    }
                };
                row.push(pred);
            }
            Ok(row)
        })
        .collect();

    let mut predictions: Vec<Vec<Option<f64>>> = Vec::with_capacity(n);
    for r in fold_results {
        predictions.push(r?);
    }

    let m = models.len();
    let mut overall = vec![0.0f64; m];
    let mut pair_counts = vec![vec![0.0f64; m]; m];
    let mut exclusions = Vec::new();

    for (fold, row) in predictions.iter().enumerate() {
        let abs_err: Vec<Option<f64>> = row
            .iter()
            .map(|p| p.map(|p| (p - obs[fold]).abs()))
            .collect();
        for (j, e) in abs_err.iter().enumerate() {
            if e.is_none() {
                exclusions.push(Exclusion {
                    model: models[j].name().to_string(),
                    fold,
                    reason: "observation outside chart domain".to_string(),
                });
            }
        }
        let best = abs_err
            .iter()
            .flatten()
            .fold(f64::INFINITY, |a, &b| a.min(b));
        if best.is_finite() {
            let tied: Vec<usize> = abs_err
                .iter()
                .enumerate()
                .filter(|(_, e)| **e == Some(best))
                .map(|(j, _)| j)
                .collect();
            let share = 1.0 / tied.len() as f64;
            for j in tied {
                overall[j] += share;
            }
        }
        for a in 0..m {
            for b in (a + 1)..m {
                if let (Some(ea), Some(eb)) = (abs_err[a], abs_err[b]) {
                    if ea < eb {
                        pair_counts[a][b] += 1.0;
                    } else if eb < ea {
                        pair_counts[b][a] += 1.0;
                    } else {
                        pair_counts[a][b] += 0.5;
                        pair_counts[b][a] += 0.5;
                    }
                }
            }
        }
    }

    let mut summaries = BTreeMap::new();
    for (j, model) in models.iter().enumerate() {
        let mut preds = Vec::new();
        let mut seen = Vec::new();
        for (fold, row) in predictions.iter().enumerate() {
            if let Some(p) = row[j] {
                preds.push(p);
                seen.push(obs[fold]);
            }
        }
        if !preds.is_empty() {
            summaries.insert(model.name().to_string(), error_summary(&preds, &seen)?);
        }
    }

    let overall = models
        .iter()
        .enumerate()
        .map(|(j, model)| ModelScore {
            model: model.name().to_string(),
            count: overall[j],
            percent: overall[j] / n as f64 * 100.0,
        })
        .collect();
    let mut pairwise = Vec::new();
    for a in 0..m {
        for b in (a + 1)..m {
            pairwise.push(PairwiseScore {
                a: models[a].name().to_string(),
                b: models[b].name().to_string(),
                count_a: pair_counts[a][b],
                count_b: pair_counts[b][a],
            });
        }
    }

    Ok(ValidationReport {
        overall,
        pairwise,
        summaries,
        exclusions,
        metadata: ReportMetadata {
            tie_rule: "exact ties share the fold: 1/t overall, 1/2 pairwise".to_string(),
            n_folds: n,
        },
    })
}
