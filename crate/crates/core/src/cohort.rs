//! Measurements and cohorts.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::age::Age;
use crate::basis::Covariate;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Source {
    #[serde(rename = "IVF")]
    Ivf,
    #[serde(rename = "SPONTANEOUS")]
    Spontaneous,
}

impl std::str::FromStr for Source {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "IVF" => Ok(Source::Ivf),
            "SPONTANEOUS" => Ok(Source::Spontaneous),
            other => Err(Error::invalid(format!("unknown source `{other}`"))),
        }
    }
}

impl std::fmt::Display for Source {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Source::Ivf => write!(f, "IVF"),
            Source::Spontaneous => write!(f, "SPONTANEOUS"),
        }
    }
}

/// One scan record: a (foetal age, crown-rump length) pair with its pregnancy
/// identity, exam date, fitting weight and conception mode. The optional
/// screening flags mirror upstream eligibility columns when the source data
/// carries them.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub pregnancy_id: String,
    pub exam_date: NaiveDate,
    fa: Age,
    crl: f64,
    weight: f64,
    pub source: Source,
    pub regular_cycles: Option<bool>,
    pub no_contraception: Option<bool>,
}

impl Measurement {
    pub fn new(
        pregnancy_id: impl Into<String>,
        exam_date: NaiveDate,
        fa_days: f64,
        crl_mm: f64,
        weight: f64,
        source: Source,
    ) -> Result<Self> {
        if !(crl_mm > 0.0) || !crl_mm.is_finite() {
            return Err(Error::invalid(format!("CRL must be positive, got {crl_mm}")));
        }
        if !(fa_days > 0.0) {
            return Err(Error::invalid(format!("FA must be positive, got {fa_days}")));
        }
        Measurement::raw(pregnancy_id, exam_date, fa_days, crl_mm, weight, source)
    }

    /// Constructor for synthetic records. Gaussian simulation around small
    /// means can legitimately produce non-positive responses; ingestion of
    /// real data goes through [`Measurement::new`] which rejects them.
    pub(crate) fn raw(
        pregnancy_id: impl Into<String>,
        exam_date: NaiveDate,
        fa_days: f64,
        crl_mm: f64,
        weight: f64,
        source: Source,
    ) -> Result<Self> {
        if !fa_days.is_finite() || !crl_mm.is_finite() {
            return Err(Error::invalid("non-finite measurement"));
        }
        if !(weight > 0.0) || !weight.is_finite() {
            return Err(Error::invalid(format!(
                "weight must be positive, got {weight}"
            )));
        }
        Ok(Measurement {
            pregnancy_id: pregnancy_id.into(),
            exam_date,
            fa: Age::fa(fa_days)?,
            crl: crl_mm,
            weight,
            source,
            regular_cycles: None,
            no_contraception: None,
        })
    }

    pub fn fa(&self) -> Age {
        self.fa
    }

    pub fn fa_days(&self) -> f64 {
        self.fa.days()
    }

    pub fn crl(&self) -> f64 {
        self.crl
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn value(&self, variable: Covariate) -> f64 {
        match variable {
            Covariate::Fa => self.fa_days(),
            Covariate::Crl => self.crl,
        }
    }

    pub(crate) fn with_weight(&self, weight: f64) -> Measurement {
        let mut m = self.clone();
        m.weight = weight;
        m
    }
}

/// An immutable, ordered collection of measurements. All pipeline and fitting
/// operations take a cohort by reference and return new cohorts.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Cohort {
    measurements: Vec<Measurement>,
    provenance: String,
}

impl Cohort {
    pub fn new(measurements: Vec<Measurement>, provenance: impl Into<String>) -> Self {
        Cohort {
            measurements,
            provenance: provenance.into(),
        }
    }

    pub fn measurements(&self) -> &[Measurement] {
        &self.measurements
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.measurements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.measurements.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Measurement> {
        self.measurements.iter()
    }

    pub fn get(&self, i: usize) -> Option<&Measurement> {
        self.measurements.get(i)
    }

    pub fn values(&self, variable: Covariate) -> Vec<f64> {
        self.measurements.iter().map(|m| m.value(variable)).collect()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.measurements.iter().map(|m| m.weight()).collect()
    }

    /// New cohort with observation `index` removed (for leave-one-out folds).
    pub fn without(&self, index: usize) -> Cohort {
        let mut kept = Vec::with_capacity(self.measurements.len().saturating_sub(1));
        for (i, m) in self.measurements.iter().enumerate() {
            if i != index {
                kept.push(m.clone());
            }
        }
        Cohort::new(kept, self.provenance.clone())
    }

    pub(crate) fn derive(&self, measurements: Vec<Measurement>, note: &str) -> Cohort {
        let provenance = if self.provenance.is_empty() {
            note.to_string()
        } else {
            format!("{}; {}", self.provenance, note)
        };
        Cohort::new(measurements, provenance)
    }
}
