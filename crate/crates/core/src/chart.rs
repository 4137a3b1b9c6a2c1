//! Mean models, variance models and growth charts.
//!
//! A [`GrowthChart`] pairs a mean curve with an optional standard-deviation
//! curve over a validity domain. Charts evaluate in canonical units — foetal
//! age in days on the growth side, crown-rump length in mm on the dating side —
//! even when the published equation was written in gestational age; the
//! `age_form` field records the published convention and the involutive
//! FA/GA offset is applied at evaluation time so coefficients stay verbatim.

use serde::{Deserialize, Serialize};

use crate::age::{AgeKind, GA_FA_OFFSET_DAYS};
use crate::basis::BasisSpec;
use crate::error::{Error, Result};

/// Default coverage constant for symmetric confidence bands.
pub const DEFAULT_KAPPA: f64 = 1.96;

/// Variance values at or below this floor are treated as degenerate.
pub const DEFAULT_VARIANCE_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ResponseTransform {
    #[serde(rename = "identity")]
    Identity,
    /// The linear predictor models the square root of the response and is
    /// squared at evaluation (used by charts fitted on √CRL).
    #[serde(rename = "square")]
    Square,
}

/// A linear-in-basis mean curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanModel {
    basis: BasisSpec,
    coefficients: Vec<f64>,
    response_transform: ResponseTransform,
}

impl MeanModel {
    pub fn new(basis: BasisSpec, coefficients: Vec<f64>) -> Result<Self> {
        Self::with_transform(basis, coefficients, ResponseTransform::Identity)
    }

    pub fn with_transform(
        basis: BasisSpec,
        coefficients: Vec<f64>,
        response_transform: ResponseTransform,
    ) -> Result<Self> {
        if coefficients.len() != basis.len() {
            return Err(Error::invalid(format!(
                "{} coefficients for a {}-term basis",
                coefficients.len(),
                basis.len()
            )));
        }
        if coefficients.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("non-finite mean coefficient"));
        }
        Ok(MeanModel {
            basis,
            coefficients,
            response_transform,
        })
    }

    pub fn basis(&self) -> &BasisSpec {
        &self.basis
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn response_transform(&self) -> ResponseTransform {
        self.response_transform
    }

    /// The raw dot product of coefficients with basis values.
    pub fn linear_predictor(&self, x: f64) -> f64 {
        self.basis
            .row(x)
            .iter()
            .zip(&self.coefficients)
            .map(|(b, c)| b * c)
            .sum()
    }

    /// Mean response at `x`, applying the response transform. A square
    /// transform refuses negative inner values rather than squaring them.
    pub fn evaluate(&self, x: f64) -> Result<f64> {
        let inner = self.linear_predictor(x);
        match self.response_transform {
            ResponseTransform::Identity => Ok(inner),
            ResponseTransform::Square => {
                if inner < 0.0 {
                    Err(Error::NegativeSquareRoot { at: x })
                } else {
                    Ok(inner * inner)
                }
            }
        }
    }

    /// Re-express a pure polynomial model in the shifted covariate `x + delta`,
    /// so that `shifted(x) == original(x + delta)`. Used to translate GA-form
    /// coefficients into FA form for coefficient-level comparisons.
    pub fn shift_covariate(&self, delta: f64) -> Result<MeanModel> {
        use crate::basis::BasisTerm;
        if !self.basis.is_polynomial() || self.response_transform != ResponseTransform::Identity {
            return Err(Error::invalid(
                "covariate shift is only defined for identity polynomial models",
            ));
        }
        // Collect (degree -> coefficient), expand (x + delta)^d binomially.
        let mut out = vec![0.0; 3];
        for (term, &c) in self.basis.terms().iter().zip(&self.coefficients) {
            match term {
                BasisTerm::One => out[0] += c,
                BasisTerm::X => {
                    out[0] += c * delta;
                    out[1] += c;
                }
                BasisTerm::X2 => {
                    out[0] += c * delta * delta;
                    out[1] += 2.0 * c * delta;
                    out[2] += c;
                }
                BasisTerm::SqrtX => unreachable!(),
            }
        }
        let mut coeffs = Vec::new();
        let mut terms = Vec::new();
        for (d, t) in [BasisTerm::One, BasisTerm::X, BasisTerm::X2]
            .into_iter()
            .enumerate()
        {
            if self.basis.terms().contains(&t) || out[d] != 0.0 {
                terms.push(t);
                coeffs.push(out[d]);
            }
        }
        MeanModel::new(BasisSpec::new(self.basis.covariate(), terms)?, coeffs)
    }
}

/// A linear-in-basis model of the residual variance σ²(x).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceModel {
    basis: BasisSpec,
    coefficients: Vec<f64>,
    floor: f64,
}

impl VarianceModel {
    pub fn new(basis: BasisSpec, coefficients: Vec<f64>, floor: f64) -> Result<Self> {
        if coefficients.len() != basis.len() {
            return Err(Error::invalid(format!(
                "{} variance coefficients for a {}-term basis",
                coefficients.len(),
                basis.len()
            )));
        }
        if !(floor > 0.0) || !floor.is_finite() {
            return Err(Error::invalid("variance floor must be positive and finite"));
        }
        Ok(VarianceModel {
            basis,
            coefficients,
            floor,
        })
    }

    pub fn with_default_floor(basis: BasisSpec, coefficients: Vec<f64>) -> Result<Self> {
        Self::new(basis, coefficients, DEFAULT_VARIANCE_FLOOR)
    }

    pub fn basis(&self) -> &BasisSpec {
        &self.basis
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    /// Raw σ²(x), no floor applied.
    pub fn sigma2(&self, x: f64) -> f64 {
        self.basis
            .row(x)
            .iter()
            .zip(&self.coefficients)
            .map(|(b, c)| b * c)
            .sum()
    }

    /// σ(x) = √max(σ², floor); values at or below the floor are degenerate and
    /// reported as an error instead of being clamped silently.
    pub fn sigma(&self, x: f64, context: &str) -> Result<f64> {
        let s2 = self.sigma2(x);
        if !s2.is_finite() || s2 <= self.floor {
            return Err(Error::DegenerateVariance {
                context: context.to_string(),
                at: x,
                sigma2: s2,
                floor: self.floor,
            });
        }
        Ok(s2.max(self.floor).sqrt())
    }
}

/// The corrective offset some historical charts subtracted to compensate for
/// machine calibration: output = raw − (subtract_mm + fraction·raw).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrectiveFactor {
    pub subtract_mm: f64,
    pub fraction: f64,
    pub enabled: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Predicts {
    #[serde(rename = "CRL_from_FA")]
    CrlFromFa,
    #[serde(rename = "FA_from_CRL")]
    FaFromCrl,
}

impl std::fmt::Display for Predicts {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Predicts::CrlFromFa => write!(f, "CRL_from_FA"),
            Predicts::FaFromCrl => write!(f, "FA_from_CRL"),
        }
    }
}

/// Result of evaluating a chart at one covariate value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub mean: f64,
    pub sd: Option<f64>,
}

/// A named growth or dating curve: mean model, optional variance model,
/// coverage constant and validity domain.
#[derive(Debug, Clone, PartialEq)]
pub struct GrowthChart {
    name: String,
    mean: MeanModel,
    variance: Option<VarianceModel>,
    kappa: f64,
    domain: (f64, f64),
    predicts: Predicts,
    age_form: AgeKind,
    corrective: Option<CorrectiveFactor>,
    citation: String,
}

impl GrowthChart {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        mean: MeanModel,
        variance: Option<VarianceModel>,
        kappa: f64,
        domain: (f64, f64),
        predicts: Predicts,
        age_form: AgeKind,
        citation: impl Into<String>,
    ) -> Result<Self> {
        if !(domain.0 < domain.1) {
            return Err(Error::invalid(format!(
                "chart domain [{}, {}] must have lower < upper",
                domain.0, domain.1
            )));
        }
        if !(kappa > 0.0) || !kappa.is_finite() {
            return Err(Error::invalid("kappa must be positive and finite"));
        }
        if let Some(v) = &variance {
            if v.basis().covariate() != mean.basis().covariate() {
                return Err(Error::invalid(
                    "mean and variance models must share a covariate",
                ));
            }
        }
        Ok(GrowthChart {
            name: name.into(),
            mean,
            variance,
            kappa,
            domain,
            predicts,
            age_form,
            corrective: None,
            citation: citation.into(),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn mean(&self) -> &MeanModel {
        &self.mean
    }

    pub fn variance(&self) -> Option<&VarianceModel> {
        self.variance.as_ref()
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn domain(&self) -> (f64, f64) {
        self.domain
    }

    pub fn predicts(&self) -> Predicts {
        self.predicts
    }

    pub fn age_form(&self) -> AgeKind {
        self.age_form
    }

    pub fn corrective(&self) -> Option<&CorrectiveFactor> {
        self.corrective.as_ref()
    }

    pub fn citation(&self) -> &str {
        &self.citation
    }

    pub fn with_kappa(mut self, kappa: f64) -> Self {
        self.kappa = kappa;
        self
    }

    pub(crate) fn with_corrective_metadata(mut self, factor: CorrectiveFactor) -> Self {
        self.corrective = Some(factor);
        self
    }

    pub(crate) fn set_corrective(&mut self, corrective: Option<CorrectiveFactor>) {
        self.corrective = corrective;
    }

    /// Copy of the chart with the corrective factor toggled (charts without
    /// corrective metadata are returned unchanged).
    pub fn with_corrective_enabled(mut self, enabled: bool) -> Self {
        if let Some(c) = &mut self.corrective {
            c.enabled = enabled;
        }
        self
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.domain.0 && x <= self.domain.1
    }

    fn check_domain(&self, x: f64) -> Result<()> {
        if !x.is_finite() || !self.contains(x) {
            return Err(Error::OutsideDomain {
                chart: self.name.clone(),
                value: x,
                lo: self.domain.0,
                hi: self.domain.1,
            });
        }
        Ok(())
    }

    /// The covariate value the published equation actually consumes. Growth
    /// charts written in GA are shifted by +14 days; dating charts take CRL
    /// directly.
    fn published_covariate(&self, x: f64) -> f64 {
        match (self.predicts, self.age_form) {
            (Predicts::CrlFromFa, AgeKind::Ga) => x + GA_FA_OFFSET_DAYS,
            _ => x,
        }
    }

    /// Mean and standard deviation at `x` (FA days for growth charts, CRL mm
    /// for dating charts). The mean of a GA-form dating chart is converted
    /// back to FA days; the SD is shift-invariant.
    pub fn evaluate(&self, x: f64) -> Result<Evaluation> {
        self.check_domain(x)?;
        let u = self.published_covariate(x);
        let mut mean = self.mean.evaluate(u)?;
        if self.predicts == Predicts::FaFromCrl && self.age_form == AgeKind::Ga {
            mean -= GA_FA_OFFSET_DAYS;
        }
        if let Some(c) = &self.corrective {
            if c.enabled {
                mean -= c.subtract_mm + c.fraction * mean;
            }
        }
        let sd = match &self.variance {
            Some(v) => Some(v.sigma(u, &self.name)?),
            None => None,
        };
        Ok(Evaluation { mean, sd })
    }

    /// Mean only; shorthand for `evaluate(x)?.mean`.
    pub fn mean_at(&self, x: f64) -> Result<f64> {
        Ok(self.evaluate(x)?.mean)
    }

    /// SD only; errors when the chart has no variance model.
    pub fn sd_at(&self, x: f64) -> Result<f64> {
        self.evaluate(x)?.sd.ok_or_else(|| Error::MissingVariance {
            chart: self.name.clone(),
            operation: "sd_at".into(),
        })
    }

    /// The mean model rewritten in FA form (polynomial charts only); identity
    /// for charts already in FA form.
    pub fn mean_in_fa_form(&self) -> Result<MeanModel> {
        match (self.predicts, self.age_form) {
            (Predicts::CrlFromFa, AgeKind::Ga) => self.mean.shift_covariate(GA_FA_OFFSET_DAYS),
            _ => Ok(self.mean.clone()),
        }
    }
}
