//! Regression bases.
//!
//! Every model in the crate is linear in a small set of basis functions of a
//! single covariate. Two bases cover the whole domain: the degree-2 polynomial
//! `{1, x, x²}` for growth curves in foetal age, and `{1, √x, x}` for dating
//! curves in crown-rump length.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which measured quantity a basis (or a response) refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Covariate {
    /// Foetal age in days.
    #[serde(rename = "FA")]
    Fa,
    /// Crown-rump length in mm.
    #[serde(rename = "CRL")]
    Crl,
}

impl Covariate {
    /// The variable a basis over `self` predicts.
    pub fn response(self) -> Covariate {
        match self {
            Covariate::Fa => Covariate::Crl,
            Covariate::Crl => Covariate::Fa,
        }
    }
}

impl std::fmt::Display for Covariate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Covariate::Fa => write!(f, "FA"),
            Covariate::Crl => write!(f, "CRL"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BasisTerm {
    #[serde(rename = "1")]
    One,
    #[serde(rename = "x")]
    X,
    #[serde(rename = "x2")]
    X2,
    #[serde(rename = "sqrtx")]
    SqrtX,
}

impl BasisTerm {
    pub fn evaluate(self, x: f64) -> f64 {
        match self {
            BasisTerm::One => 1.0,
            BasisTerm::X => x,
            BasisTerm::X2 => x * x,
            BasisTerm::SqrtX => x.max(0.0).sqrt(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BasisTerm::One => "1",
            BasisTerm::X => "x",
            BasisTerm::X2 => "x2",
            BasisTerm::SqrtX => "sqrtx",
        }
    }
}

/// An ordered, duplicate-free list of basis functions over one covariate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasisSpec {
    covariate: Covariate,
    terms: Vec<BasisTerm>,
}

impl BasisSpec {
    pub fn new(covariate: Covariate, terms: Vec<BasisTerm>) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::invalid("basis needs at least one term"));
        }
        for (i, t) in terms.iter().enumerate() {
            if terms[..i].contains(t) {
                return Err(Error::invalid(format!(
                    "duplicate basis term `{}`",
                    t.as_str()
                )));
            }
        }
        Ok(BasisSpec { covariate, terms })
    }

    /// `{1, x, x²}` over foetal age: the growth-curve basis.
    pub fn growth_polynomial() -> Self {
        BasisSpec {
            covariate: Covariate::Fa,
            terms: vec![BasisTerm::One, BasisTerm::X, BasisTerm::X2],
        }
    }

    /// `{1, √x, x}` over crown-rump length: the dating basis.
    pub fn dating() -> Self {
        BasisSpec {
            covariate: Covariate::Crl,
            terms: vec![BasisTerm::One, BasisTerm::SqrtX, BasisTerm::X],
        }
    }

    /// `{1, x}` over the given covariate.
    pub fn linear(covariate: Covariate) -> Self {
        BasisSpec {
            covariate,
            terms: vec![BasisTerm::One, BasisTerm::X],
        }
    }

    /// `{1, x, x²}` over the given covariate.
    pub fn quadratic(covariate: Covariate) -> Self {
        BasisSpec {
            covariate,
            terms: vec![BasisTerm::One, BasisTerm::X, BasisTerm::X2],
        }
    }

    pub fn covariate(&self) -> Covariate {
        self.covariate
    }

    pub fn terms(&self) -> &[BasisTerm] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Basis values at one covariate value, in term order.
    pub fn row(&self, x: f64) -> Vec<f64> {
        self.terms.iter().map(|t| t.evaluate(x)).collect()
    }

    /// The basis without its last (highest-order) term, for nested F-tests.
    pub fn drop_last_term(&self) -> Result<Self> {
        if self.terms.len() < 2 {
            return Err(Error::invalid(
                "cannot drop the last term of a single-term basis",
            ));
        }
        Ok(BasisSpec {
            covariate: self.covariate,
            terms: self.terms[..self.terms.len() - 1].to_vec(),
        })
    }

    /// True when the terms are a pure polynomial (no square root).
    pub fn is_polynomial(&self) -> bool {
        !self.terms.contains(&BasisTerm::SqrtX)
    }
}
