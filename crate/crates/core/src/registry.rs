//! Registry of published reference equations.
//!
//! Coefficients are stored exactly as printed in their sources; charts whose
//! published form uses gestational age carry `age_form = GA` and are shifted
//! at evaluation instead of having their coefficients rewritten. Validity
//! domains follow the tabulated grids: growth charts cover FA 26–85 days
//! (the Papaioannou fit is capped at GA 75 = FA 61 days, beyond which it is
//! known to deteriorate), dating charts cover CRL 1–84 mm.

use std::collections::BTreeMap;

use crate::age::AgeKind;
use crate::basis::{BasisSpec, BasisTerm, Covariate};
use crate::chart::{
    CorrectiveFactor, GrowthChart, MeanModel, Predicts, ResponseTransform, VarianceModel,
    DEFAULT_KAPPA,
};
use crate::error::{Error, Result};

const GROWTH_DOMAIN: (f64, f64) = (26.0, 85.0);
const DATING_DOMAIN: (f64, f64) = (1.0, 84.0);

/// Read-only map of named reference charts.
#[derive(Debug, Clone)]
pub struct ReferenceRegistry {
    charts: BTreeMap<String, GrowthChart>,
}

impl ReferenceRegistry {
    /// The preloaded standard registry.
    pub fn standard() -> Self {
        let mut charts = BTreeMap::new();
        for chart in build_standard_charts() {
            charts.insert(chart.name().to_string(), chart);
        }
        ReferenceRegistry { charts }
    }

    pub fn lookup(&self, name: &str) -> Result<&GrowthChart> {
        self.charts.get(name).ok_or_else(|| Error::UnknownChart {
            name: name.to_string(),
            available: self.names().join(", "),
        })
    }

    pub fn names(&self) -> Vec<String> {
        self.charts.keys().cloned().collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &GrowthChart)> {
        self.charts.iter()
    }

    pub fn len(&self) -> usize {
        self.charts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.charts.is_empty()
    }
}

fn growth_mean(coeffs: [f64; 3]) -> MeanModel {
    MeanModel::new(BasisSpec::quadratic(Covariate::Fa), coeffs.to_vec()).expect("static basis")
}

fn growth_variance(coeffs: [f64; 3]) -> VarianceModel {
    VarianceModel::with_default_floor(BasisSpec::quadratic(Covariate::Fa), coeffs.to_vec())
        .expect("static basis")
}

fn dating_mean(coeffs: [f64; 3]) -> MeanModel {
    MeanModel::new(BasisSpec::dating(), coeffs.to_vec()).expect("static basis")
}

fn dating_variance(coeffs: [f64; 3]) -> VarianceModel {
    VarianceModel::with_default_floor(BasisSpec::dating(), coeffs.to_vec()).expect("static basis")
}

fn build_standard_charts() -> Vec<GrowthChart> {
    let mut charts = Vec::new();

    // CRL growth, IVF-dated cohort (robust fit).
    charts.push(
        GrowthChart::new(
            "eq1_ivf_crl",
            growth_mean([-3.3108, -0.2087, 1.5250e-2]),
            Some(growth_variance([46.2354, -2.0194, 0.0230])),
            DEFAULT_KAPPA,
            GROWTH_DOMAIN,
            Predicts::CrlFromFa,
            AgeKind::Fa,
            "CRL growth curve calibrated on IVF-dated pregnancies, R^2 = 73.79%",
        )
        .unwrap(),
    );

    // CRL growth, spontaneous-conception cohort. The coverage constant was
    // calibrated to 1.85 for 95% empirical coverage; the companion figure uses
    // 1.96, so kappa stays a per-chart field rather than a constant.
    charts.push(
        GrowthChart::new(
            "eq2_spont_crl",
            growth_mean([-4.1212, -0.1824, 0.0148]),
            Some(growth_variance([-53.1054, 2.5634, -0.0189])),
            1.85,
            GROWTH_DOMAIN,
            Predicts::CrlFromFa,
            AgeKind::Fa,
            "CRL growth curve from spontaneous pregnancies, R^2 = 78.48%; \
             kappa 1.85 calibrated for 95% coverage (1.96 used in band figures)",
        )
        .unwrap(),
    );

    // FA dating from CRL, spontaneous cohort (heteroskedastic fit).
    charts.push(
        GrowthChart::new(
            "eq3_spont_fa",
            dating_mean([19.1732, 6.0266, 0.0955]),
            Some(dating_variance([33.1275, -4.9440, 0.2270])),
            DEFAULT_KAPPA,
            DATING_DOMAIN,
            Predicts::FaFromCrl,
            AgeKind::Fa,
            "FA dating curve from spontaneous pregnancies, R^2 = 99.71%",
        )
        .unwrap(),
    );

    // FA dating from CRL, IVF cohort (heteroskedastic fit).
    charts.push(
        GrowthChart::new(
            "eq4_ivf_fa",
            dating_mean([18.0739, 5.6925, 0.1549]),
            Some(dating_variance([7.3281, -1.6397, 0.1688])),
            DEFAULT_KAPPA,
            DATING_DOMAIN,
            Predicts::FaFromCrl,
            AgeKind::Fa,
            "FA dating curve from IVF pregnancies, R^2 = 99.87%",
        )
        .unwrap(),
    );

    // Robust companions of the dating fits.
    charts.push(
        GrowthChart::new(
            "eq7_ivf_fa_robust",
            dating_mean([17.8994, 5.7617, 0.1471]),
            Some(dating_variance([7.3281, -1.6397, 0.1688])),
            DEFAULT_KAPPA,
            DATING_DOMAIN,
            Predicts::FaFromCrl,
            AgeKind::Fa,
            "Robust FA dating curve from IVF pregnancies",
        )
        .unwrap(),
    );
    charts.push(
        GrowthChart::new(
            "eq8_spont_fa_robust",
            dating_mean([19.2702, 5.7804, 0.1271]),
            Some(dating_variance([41.8353, -8.3486, 0.5198])),
            DEFAULT_KAPPA,
            DATING_DOMAIN,
            Predicts::FaFromCrl,
            AgeKind::Fa,
            "Robust FA dating curve from spontaneous pregnancies",
        )
        .unwrap(),
    );

    // Robinson 1973 growth curve (GA form). The published corrective factor
    // of (1 mm + 3.7%) is kept as metadata, disabled by default.
    charts.push(
        GrowthChart::new(
            "robinson_crl",
            MeanModel::new(
                BasisSpec::quadratic(Covariate::Fa),
                vec![7.295, -0.6444, 0.0144],
            )
            .unwrap(),
            None,
            DEFAULT_KAPPA,
            GROWTH_DOMAIN,
            Predicts::CrlFromFa,
            AgeKind::Ga,
            "Robinson 1973 CRL curve in GA days; optional (1 mm + 3.7%) machine-calibration subtraction",
        )
        .unwrap()
        .with_corrective_metadata(CorrectiveFactor {
            subtract_mm: 1.0,
            fraction: 0.037,
            enabled: false,
        }),
    );

    // Robinson 1975 dating curve: GA = 8.052 sqrt(CRL) + 23.73.
    charts.push(
        GrowthChart::new(
            "robinson_fa",
            MeanModel::new(
                BasisSpec::new(Covariate::Crl, vec![BasisTerm::One, BasisTerm::SqrtX]).unwrap(),
                vec![23.73, 8.052],
            )
            .unwrap(),
            None,
            DEFAULT_KAPPA,
            DATING_DOMAIN,
            Predicts::FaFromCrl,
            AgeKind::Ga,
            "Robinson 1975 dating curve in GA days",
        )
        .unwrap(),
    );

    // Papaioannou et al. 2010: sqrt(CRL) quadratic in GA, squared at
    // evaluation; only reliable up to GA 75 days (FA 61 days).
    charts.push(
        GrowthChart::new(
            "papaioannou_crl",
            MeanModel::with_transform(
                BasisSpec::quadratic(Covariate::Fa),
                vec![-6.662367, 0.246741, -0.001046],
                ResponseTransform::Square,
            )
            .unwrap(),
            None,
            DEFAULT_KAPPA,
            (GROWTH_DOMAIN.0, 61.0),
            Predicts::CrlFromFa,
            AgeKind::Ga,
            "Papaioannou et al. 2010 sqrt-CRL curve in GA days, capped at GA 75 days",
        )
        .unwrap(),
    );

    charts.push(
        GrowthChart::new(
            "papaioannou_ga",
            MeanModel::new(
                BasisSpec::quadratic(Covariate::Crl),
                vec![39.811963, 1.155896, -0.006429],
            )
            .unwrap(),
            None,
            DEFAULT_KAPPA,
            DATING_DOMAIN,
            Predicts::FaFromCrl,
            AgeKind::Ga,
            "Papaioannou et al. 2010 dating curve in GA days",
        )
        .unwrap(),
    );

    charts.push(
        GrowthChart::new(
            "pexsters_crl",
            MeanModel::new(
                BasisSpec::quadratic(Covariate::Fa),
                vec![-9.09, -0.26, 0.012],
            )
            .unwrap(),
            None,
            DEFAULT_KAPPA,
            GROWTH_DOMAIN,
            Predicts::CrlFromFa,
            AgeKind::Ga,
            "Pexsters et al. 2010 CRL curve in GA days",
        )
        .unwrap(),
    );

    charts.push(
        GrowthChart::new(
            "verwoerd_crl",
            MeanModel::new(
                BasisSpec::quadratic(Covariate::Fa),
                vec![9.0963, -0.751165, 0.015508],
            )
            .unwrap(),
            Some(
                VarianceModel::with_default_floor(
                    BasisSpec::quadratic(Covariate::Fa),
                    vec![0.2814, -0.006087, 0.000043],
                )
                .unwrap(),
            ),
            DEFAULT_KAPPA,
            GROWTH_DOMAIN,
            Predicts::CrlFromFa,
            AgeKind::Ga,
            "Verwoerd-Dikkeboom et al. 2010 3D-calibrated CRL curve in GA days, with variance",
        )
        .unwrap(),
    );

    charts
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_has_the_twelve_standard_charts() {
        let reg = ReferenceRegistry::standard();
        let expected = [
            "eq1_ivf_crl",
            "eq2_spont_crl",
            "eq3_spont_fa",
            "eq4_ivf_fa",
            "eq7_ivf_fa_robust",
            "eq8_spont_fa_robust",
            "robinson_crl",
            "robinson_fa",
            "papaioannou_crl",
            "papaioannou_ga",
            "pexsters_crl",
            "verwoerd_crl",
        ];
        assert_eq!(reg.len(), expected.len());
        for name in expected {
            assert!(reg.lookup(name).is_ok(), "missing {name}");
        }
    }

    #[test]
    fn unknown_name_lists_available() {
        let reg = ReferenceRegistry::standard();
        let err = reg.lookup("nonexistent").unwrap_err();
        assert!(err.to_string().contains("eq1_ivf_crl"));
    }

    #[test]
    fn robinson_dating_curve_is_ga_published() {
        let reg = ReferenceRegistry::standard();
        let chart = reg.lookup("robinson_fa").unwrap();
        // Published form: GA = 8.052 sqrt(CRL) + 23.73; FA output drops 14 d.
        let crl: f64 = 25.0;
        let ga = 8.052 * crl.sqrt() + 23.73;
        approx::assert_relative_eq!(chart.mean_at(crl).unwrap(), ga - 14.0, epsilon = 1e-12);
    }

    #[test]
    fn pexsters_coefficients_are_verbatim() {
        let reg = ReferenceRegistry::standard();
        let chart = reg.lookup("pexsters_crl").unwrap();
        assert_eq!(chart.mean().coefficients(), &[-9.09, -0.26, 0.012]);
        assert_eq!(chart.age_form(), AgeKind::Ga);
    }

    #[test]
    fn variance_positive_over_domain_grid() {
        // Every chart with a variance model must have sigma^2 > 0 on a
        // 0.1-step sweep of its domain.
        let reg = ReferenceRegistry::standard();
        for (name, chart) in reg.iter() {
            if chart.variance().is_none() {
                continue;
            }
            let (lo, hi) = chart.domain();
            let mut x = lo;
            while x <= hi + 1e-9 {
                let sd = chart
                    .sd_at(x.min(hi))
                    .unwrap_or_else(|e| panic!("{name} at {x}: {e}"));
                assert!(sd > 0.0, "{name} at {x}");
                x += 0.1;
            }
        }
    }

    #[test]
    fn papaioannou_capped_at_fa_61() {
        let reg = ReferenceRegistry::standard();
        let chart = reg.lookup("papaioannou_crl").unwrap();
        assert!(chart.mean_at(61.0).is_ok());
        assert!(chart.mean_at(62.0).is_err());
    }
}
