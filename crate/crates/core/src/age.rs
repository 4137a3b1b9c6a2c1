//! Foetal and gestational ages in days.
//!
//! Ages are always carried in days together with their convention. The two
//! conventions differ by a fixed offset: gestational age counts from the last
//! menstruation, foetal age from fertilization, and GA = FA + 14 exactly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Days between the gestational and foetal age origins.
pub const GA_FA_OFFSET_DAYS: f64 = 14.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AgeKind {
    /// Foetal age: days since fertilization.
    #[serde(rename = "FA")]
    Fa,
    /// Gestational age: days since last menstruation.
    #[serde(rename = "GA")]
    Ga,
}

impl std::fmt::Display for AgeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AgeKind::Fa => write!(f, "FA"),
            AgeKind::Ga => write!(f, "GA"),
        }
    }
}

/// An age in days, tagged with its convention.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Age {
    days: f64,
    kind: AgeKind,
}

impl Age {
    pub fn new(days: f64, kind: AgeKind) -> Result<Self> {
        if !days.is_finite() || days < 0.0 {
            return Err(Error::AgeDomain(format!(
                "{kind} of {days} days is not a finite non-negative value"
            )));
        }
        Ok(Age { days, kind })
    }

    pub fn fa(days: f64) -> Result<Self> {
        Age::new(days, AgeKind::Fa)
    }

    pub fn ga(days: f64) -> Result<Self> {
        Age::new(days, AgeKind::Ga)
    }

    pub fn days(&self) -> f64 {
        self.days
    }

    pub fn kind(&self) -> AgeKind {
        self.kind
    }

    /// Convert to the target convention. Same-kind conversion is the identity;
    /// GA below 14 days has no FA counterpart and is rejected.
    pub fn convert(&self, target: AgeKind) -> Result<Age> {
        match (self.kind, target) {
            (a, b) if a == b => Ok(*self),
            (AgeKind::Fa, AgeKind::Ga) => Age::ga(self.days + GA_FA_OFFSET_DAYS),
            (AgeKind::Ga, AgeKind::Fa) => {
                if self.days < GA_FA_OFFSET_DAYS {
                    Err(Error::AgeDomain(format!(
                        "GA of {} days is before fertilization (needs GA >= 14)",
                        self.days
                    )))
                } else {
                    Age::fa(self.days - GA_FA_OFFSET_DAYS)
                }
            }
            _ => unreachable!(),
        }
    }
}

/// Split a day count into completed weeks and remaining days, the `8 + 0`
/// rendering used by dating tables.
pub fn fa_to_weeks_days(fa_days: i64) -> Result<(i64, i64)> {
    if fa_days < 0 {
        return Err(Error::AgeDomain(format!(
            "cannot render {fa_days} days as weeks+days"
        )));
    }
    Ok((fa_days / 7, fa_days % 7))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fa_to_ga_adds_offset() {
        let fa = Age::fa(56.0).unwrap();
        let ga = fa.convert(AgeKind::Ga).unwrap();
        assert_eq!(ga.days(), 70.0);
        assert_eq!(ga.kind(), AgeKind::Ga);
    }

    #[test]
    fn ga_to_fa_subtracts_offset() {
        let ga = Age::ga(42.0).unwrap();
        let fa = ga.convert(AgeKind::Fa).unwrap();
        assert_eq!(fa.days(), 28.0);
    }

    #[test]
    fn table_boundary_round_trip() {
        // The screening boundary quoted as "GA under 75 days (FA under 61 days)".
        let fa = Age::fa(61.0).unwrap();
        assert_eq!(fa.convert(AgeKind::Ga).unwrap().days(), 75.0);
    }

    #[test]
    fn same_kind_is_identity() {
        let fa = Age::fa(30.5).unwrap();
        assert_eq!(fa.convert(AgeKind::Fa).unwrap(), fa);
    }

    #[test]
    fn early_ga_has_no_fa() {
        let ga = Age::ga(10.0).unwrap();
        assert!(matches!(ga.convert(AgeKind::Fa), Err(Error::AgeDomain(_))));
    }

    #[test]
    fn rejects_negative_and_non_finite() {
        assert!(Age::fa(-1.0).is_err());
        assert!(Age::fa(f64::NAN).is_err());
        assert!(Age::ga(f64::INFINITY).is_err());
    }

    #[test]
    fn weeks_days_rendering() {
        assert_eq!(fa_to_weeks_days(56).unwrap(), (8, 0));
        assert_eq!(fa_to_weeks_days(26).unwrap(), (3, 5));
        assert_eq!(fa_to_weeks_days(0).unwrap(), (0, 0));
        assert!(fa_to_weeks_days(-1).is_err());
    }
}
