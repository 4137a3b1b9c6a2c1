//! JSON document formats: chart files, fit diagnostics, mixture fits, trim
//! reports and simulation specs.
//!
//! Chart files carry every coefficient digit; serde_json round-trips f64
//! exactly (shortest representation that parses back to the same bits).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::age::AgeKind;
use crate::basis::{BasisSpec, BasisTerm, Covariate};
use crate::chart::{
    CorrectiveFactor, GrowthChart, MeanModel, Predicts, ResponseTransform, VarianceModel,
};
use crate::cohort::Source;
use crate::error::{Error, Result};
use crate::mixture::MixtureFit;
use crate::pipeline::TrimReport;
use crate::regression::FitReport;
use crate::validation::ValidationReport;

pub const CHART_SCHEMA_VERSION: u32 = 1;

/// On-disk chart document. The mean and variance models share the `terms`
/// list, matching how the charts are fitted.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChartDocument {
    pub schema_version: u32,
    pub name: String,
    pub predicts: Predicts,
    pub covariate: Covariate,
    pub terms: Vec<BasisTerm>,
    pub response_transform: ResponseTransform,
    pub age_form: AgeKind,
    pub mean_coefficients: Vec<f64>,
    pub variance_coefficients: Option<Vec<f64>>,
    pub variance_floor: f64,
    pub kappa: f64,
    pub domain: [f64; 2],
    pub citation: String,
    #[serde(default)]
    pub corrective_factor: Option<CorrectiveFactor>,
}

impl ChartDocument {
    pub fn from_chart(chart: &GrowthChart) -> Result<Self> {
        let mean = chart.mean();
        let variance_coefficients = match chart.variance() {
            Some(v) => {
                if v.basis() != mean.basis() {
                    return Err(Error::invalid(
                        "chart files require mean and variance to share one basis",
                    ));
                }
                Some(v.coefficients().to_vec())
            }
            None => None,
        };
        Ok(ChartDocument {
            schema_version: CHART_SCHEMA_VERSION,
            name: chart.name().to_string(),
            predicts: chart.predicts(),
            covariate: mean.basis().covariate(),
            terms: mean.basis().terms().to_vec(),
            response_transform: mean.response_transform(),
            age_form: chart.age_form(),
            mean_coefficients: mean.coefficients().to_vec(),
            variance_coefficients,
            variance_floor: chart
                .variance()
                .map(|v| v.floor())
                .unwrap_or(crate::chart::DEFAULT_VARIANCE_FLOOR),
            kappa: chart.kappa(),
            domain: [chart.domain().0, chart.domain().1],
            citation: chart.citation().to_string(),
            corrective_factor: chart.corrective().copied(),
        })
    }

    pub fn into_chart(self) -> Result<GrowthChart> {
        if self.schema_version != CHART_SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                found: self.schema_version,
                expected: CHART_SCHEMA_VERSION,
            });
        }
        let basis = BasisSpec::new(self.covariate, self.terms)?;
        let mean = MeanModel::with_transform(
            basis.clone(),
            self.mean_coefficients,
            self.response_transform,
        )?;
        let variance = match self.variance_coefficients {
            Some(coeffs) => Some(VarianceModel::new(basis, coeffs, self.variance_floor)?),
            None => None,
        };
        let mut chart = GrowthChart::new(
            self.name,
            mean,
            variance,
            self.kappa,
            (self.domain[0], self.domain[1]),
            self.predicts,
            self.age_form,
            self.citation,
        )?;
        chart.set_corrective(self.corrective_factor);
        Ok(chart)
    }
}

pub fn chart_to_json(chart: &GrowthChart) -> Result<String> {
    let doc = ChartDocument::from_chart(chart)?;
    serde_json::to_string_pretty(&doc).map_err(|e| Error::ChartParse(e.to_string()))
}

pub fn chart_from_json(json: &str) -> Result<GrowthChart> {
    let doc: ChartDocument =
        serde_json::from_str(json).map_err(|e| Error::ChartParse(e.to_string()))?;
    doc.into_chart()
}

pub fn save_chart(chart: &GrowthChart, path: impl AsRef<Path>) -> Result<()> {
    let mut json = chart_to_json(chart)?;
    json.push('\n');
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load_chart(path: impl AsRef<Path>) -> Result<GrowthChart> {
    let json = std::fs::read_to_string(path)?;
    chart_from_json(&json)
}

/// Diagnostics block attached to fitted charts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub r_squared: f64,
    pub scale: f64,
    pub iterations: usize,
    pub converged: bool,
    pub robust_weights: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitDocument {
    #[serde(flatten)]
    pub chart: ChartDocument,
    pub diagnostics: FitDiagnostics,
}

/// Promote a fit to a chart over the given domain, with the fit diagnostics
/// alongside.
pub fn fit_to_document(
    fit: &FitReport,
    name: &str,
    domain: (f64, f64),
    kappa: f64,
    citation: &str,
) -> Result<FitDocument> {
    let chart = fit_to_chart(fit, name, domain, kappa, citation)?;
    Ok(FitDocument {
        chart: ChartDocument::from_chart(&chart)?,
        diagnostics: FitDiagnostics {
            r_squared: fit.r_squared,
            scale: fit.scale,
            iterations: fit.iterations,
            converged: fit.converged,
            robust_weights: fit.robust_weights.clone(),
        },
    })
}

pub fn fit_to_chart(
    fit: &FitReport,
    name: &str,
    domain: (f64, f64),
    kappa: f64,
    citation: &str,
) -> Result<GrowthChart> {
    let predicts = match fit.mean.basis().covariate() {
        Covariate::Fa => Predicts::CrlFromFa,
        Covariate::Crl => Predicts::FaFromCrl,
    };
    GrowthChart::new(
        name,
        fit.mean.clone(),
        fit.variance.clone(),
        kappa,
        domain,
        predicts,
        AgeKind::Fa,
        citation,
    )
}

/// Mixture fit as two chart-like component blocks plus the fit summary.
pub fn mixture_to_json(fit: &MixtureFit, breakpoint: Option<f64>) -> Result<String> {
    let component = |c: &crate::mixture::MixtureComponent, idx: usize| {
        serde_json::json!({
            "name": format!("component_{}", idx + 1),
            "covariate": c.mean.basis().covariate(),
            "terms": c.mean.basis().terms(),
            "mean_coefficients": c.mean.coefficients(),
            "noise_sd": c.noise_sd,
            "mixing_weight": c.mixing_weight,
            "r_squared": c.r_squared,
        })
    };
    let doc = serde_json::json!({
        "components": [component(&fit.components[0], 0), component(&fit.components[1], 1)],
        "mixing_weights": [fit.components[0].mixing_weight, fit.components[1].mixing_weight],
        "loglik": fit.log_likelihood,
        "breakpoint": breakpoint,
        "seed": fit.seed,
        "iterations": fit.iterations,
        "collapsed_restarts": fit.collapsed_restarts,
    });
    serde_json::to_string_pretty(&doc).map_err(|e| Error::ChartParse(e.to_string()))
}

/// Trim report as `{n_in, removed_low, removed_high, kept_ids}`.
pub fn trim_report_to_json(report: &TrimReport) -> Result<String> {
    let doc = serde_json::json!({
        "n_in": report.n_in,
        "removed_low": report.removed_low,
        "removed_high": report.removed_high,
        "kept_ids": report.kept_ids,
    });
    serde_json::to_string_pretty(&doc).map_err(|e| Error::ChartParse(e.to_string()))
}

pub fn validation_report_to_json(report: &ValidationReport) -> Result<String> {
    serde_json::to_string_pretty(report).map_err(|e| Error::ChartParse(e.to_string()))
}

/// Simulation spec as read from a JSON config file. The chart is referenced by
/// registry name or by a path to a chart file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSpecDocument {
    pub chart: String,
    pub n: usize,
    pub covariate_dist: CovariateDistDocument,
    pub noise: NoiseDocument,
    #[serde(default)]
    pub contamination: Option<ContaminationDocument>,
    pub seed: u64,
    #[serde(default)]
    pub source: Option<Source>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateDistDocument {
    Uniform { lo: f64, hi: f64 },
    Empirical(Vec<f64>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseDocument {
    ChartVariance,
    ConstantSd(f64),
    UniformHalfWidth(f64),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContaminationDocument {
    pub fraction: f64,
    pub offset: f64,
}

impl SimSpecDocument {
    /// Resolve the chart reference and build a runnable spec.
    pub fn into_sim_spec(self, chart: GrowthChart) -> crate::simulate::SimSpec {
        let mut spec = crate::simulate::SimSpec::new(chart, self.n, self.seed);
        spec = spec.with_covariate(match self.covariate_dist {
            CovariateDistDocument::Uniform { lo, hi } => {
                crate::simulate::CovariateDist::Uniform { lo, hi }
            }
            CovariateDistDocument::Empirical(v) => crate::simulate::CovariateDist::Empirical(v),
        });
        spec = spec.with_noise(match self.noise {
            NoiseDocument::ChartVariance => crate::simulate::NoiseSpec::ChartVariance,
            NoiseDocument::ConstantSd(s) => crate::simulate::NoiseSpec::ConstantSd(s),
            NoiseDocument::UniformHalfWidth(h) => {
                crate::simulate::NoiseSpec::UniformHalfWidth(h)
            }
        });
        if let Some(c) = self.contamination {
            spec = spec.with_contamination(crate::simulate::Contamination {
                fraction: c.fraction,
                offset: c.offset,
            });
        }
        if let Some(s) = self.source {
            spec = spec.with_source(s);
        }
        spec
    }
}

/// Render a cohort in the standard CSV schema.
pub fn cohort_to_csv(cohort: &crate::cohort::Cohort) -> String {
    let mut out = String::from("pregnancy_id,exam_date,fa_days,crl_mm,source,weight\n");
    for m in cohort.iter() {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            m.pregnancy_id,
            m.exam_date.format("%Y-%m-%d"),
            m.fa_days(),
            m.crl(),
            m.source,
            m.weight(),
        ));
    }
    out
}
