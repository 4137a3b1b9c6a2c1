//! Seeded synthetic cohorts drawn from a chart, for recovery, calibration and
//! contamination experiments.
//!
//! Generation is fully deterministic given the seed. The stream is a ChaCha8
//! generator consumed in a fixed order: n covariate draws, then n noise draws,
//! then one Fisher-Yates shuffle to choose the contaminated subset.

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::chart::{GrowthChart, Predicts};
use crate::cohort::{Cohort, Measurement, Source};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub enum CovariateDist {
    Uniform { lo: f64, hi: f64 },
    Empirical(Vec<f64>),
}

#[derive(Debug, Clone, Copy)]
pub enum NoiseSpec {
    /// Gaussian noise with the chart's own σ(x).
    ChartVariance,
    /// Gaussian noise with a fixed standard deviation.
    ConstantSd(f64),
    /// Uniform noise on [−h, +h], for robustness experiments.
    UniformHalfWidth(f64),
}

#[derive(Debug, Clone, Copy)]
pub struct Contamination {
    /// Fraction of records shifted, in [0, 0.5).
    pub fraction: f64,
    /// Additive offset applied to the response of contaminated records.
    pub offset: f64,
}

#[derive(Debug, Clone)]
pub struct SimSpec {
    pub chart: GrowthChart,
    pub n: usize,
    pub covariate: CovariateDist,
    pub noise: NoiseSpec,
    pub contamination: Option<Contamination>,
    pub seed: u64,
    pub source: Source,
}

impl SimSpec {
    pub fn new(chart: GrowthChart, n: usize, seed: u64) -> Self {
        let (lo, hi) = chart.domain();
        SimSpec {
            chart,
            n,
            covariate: CovariateDist::Uniform { lo, hi },
            noise: NoiseSpec::ChartVariance,
            contamination: None,
            seed,
            source: Source::Spontaneous,
        }
    }

    pub fn with_covariate(mut self, dist: CovariateDist) -> Self {
        self.covariate = dist;
        self
    }

    pub fn with_noise(mut self, noise: NoiseSpec) -> Self {
        self.noise = noise;
        self
    }

    pub fn with_contamination(mut self, contamination: Contamination) -> Self {
        self.contamination = Some(contamination);
        self
    }

    pub fn with_source(mut self, source: Source) -> Self {
        self.source = source;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::invalid("simulation size must be positive"));
        }
        let (dlo, dhi) = self.chart.domain();
        match &self.covariate {
            CovariateDist::Uniform { lo, hi } => {
                if !(lo < hi) || *lo < dlo || *hi > dhi {
                    return Err(Error::invalid(format!(
                        "covariate bounds [{lo}, {hi}] must lie inside the chart domain [{dlo}, {dhi}]"
                    )));
                }
            }
            CovariateDist::Empirical(values) => {
                if values.is_empty() {
                    return Err(Error::invalid("empirical covariate list is empty"));
                }
                if values.iter().any(|v| !self.chart.contains(*v)) {
                    return Err(Error::invalid(
                        "empirical covariate values must lie inside the chart domain",
                    ));
                }
            }
        }
        if let Some(c) = &self.contamination {
            if !(0.0..0.5).contains(&c.fraction) {
                return Err(Error::invalid(format!(
                    "contamination fraction {} must lie in [0, 0.5)",
                    c.fraction
                )));
            }
        }
        if matches!(self.noise, NoiseSpec::ChartVariance) && self.chart.variance().is_none() {
            return Err(Error::MissingVariance {
                chart: self.chart.name().to_string(),
                operation: "simulate_cohort with chart_variance noise".into(),
            });
        }
        Ok(())
    }
}

fn round_half_away(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// Draw a synthetic cohort: covariates from the configured distribution,
/// responses = chart mean + noise, and the first ⌊frac·n⌉ indices of a seeded
/// shuffle shifted by the contamination offset.
pub fn simulate_cohort(spec: &SimSpec) -> Result<Cohort> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n;

    let xs: Vec<f64> = (0..n)
        .map(|_| match &spec.covariate {
            CovariateDist::Uniform { lo, hi } => lo + (hi - lo) * rng.gen::<f64>(),
            CovariateDist::Empirical(values) => values[rng.gen_range(0..values.len())],
        })
        .collect();

    let mut ys = Vec::with_capacity(n);
    for &x in &xs {
        let eval = spec.chart.evaluate(x)?;
        let noise = match spec.noise {
            NoiseSpec::ChartVariance => {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * eval.sd.expect("validated variance")
            }
            NoiseSpec::ConstantSd(sd) => {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * sd
            }
            NoiseSpec::UniformHalfWidth(h) => (2.0 * rng.gen::<f64>() - 1.0) * h,
        };
        ys.push(eval.mean + noise);
    }

    if let Some(c) = &spec.contamination {
        let m = round_half_away(c.fraction * n as f64);
        let mut indices: Vec<usize> = (0..n).collect();
        indices.shuffle(&mut rng);
        for &i in indices.iter().take(m) {
            ys[i] += c.offset;
        }
    }

    let date = NaiveDate::from_ymd_opt(2020, 1, 1).expect("valid date");
    let mut measurements = Vec::with_capacity(n);
    for (i, (&x, &y)) in xs.iter().zip(&ys).enumerate() {
        let (fa, crl) = match spec.chart.predicts() {
            Predicts::CrlFromFa => (x, y),
            Predicts::FaFromCrl => (y, x),
        };
        measurements.push(Measurement::raw(
            format!("sim-{i:06}"),
            date,
            fa,
            crl,
            1.0,
            spec.source,
        )?);
    }
    Ok(Cohort::new(
        measurements,
        format!("simulated from {} (seed {})", spec.chart.name(), spec.seed),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::ReferenceRegistry;
    use approx::assert_relative_eq;

    #[test]
    fn zero_noise_lies_on_the_curve() {
        let reg = ReferenceRegistry::standard();
        let chart = reg.lookup("eq2_spont_crl").unwrap().clone();
        let spec = SimSpec::new(chart.clone(), 50, 1).with_noise(NoiseSpec::ConstantSd(0.0));
        let cohort = simulate_cohort(&spec).unwrap();
        for m in cohort.iter() {
            let mean = chart.mean_at(m.fa_days()).unwrap();
            assert_relative_eq!(m.crl(), mean, epsilon = 1e-12);
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let reg = ReferenceRegistry::standard();
        let chart = reg.lookup("eq2_spont_crl").unwrap().clone();
        let spec = SimSpec::new(chart, 200, 99).with_contamination(Contamination {
            fraction: 0.1,
            offset: 30.0,
        });
        let a = simulate_cohort(&spec).unwrap();
        let b = simulate_cohort(&spec).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x.fa_days().to_bits(), y.fa_days().to_bits());
            assert_eq!(x.crl().to_bits(), y.crl().to_bits());
        }
    }

    #[test]
    fn contaminated_count_is_exact() {
        let reg = ReferenceRegistry::standard();
        let chart = reg.lookup("eq2_spont_crl").unwrap().clone();
        let clean = simulate_cohort(&SimSpec::new(chart.clone(), 513, 7)).unwrap();
        let contaminated = simulate_cohort(&SimSpec::new(chart, 513, 7).with_contamination(
            Contamination {
                fraction: 0.1,
                offset: 30.0,
            },
        ))
        .unwrap();
        let moved = clean
            .iter()
            .zip(contaminated.iter())
            .filter(|(a, b)| a.crl() != b.crl())
            .count();
        assert_eq!(moved, 51); // round(0.1 * 513)
    }

    #[test]
    fn residual_sd_matches_the_chart_at_fa_56() {
        let reg = ReferenceRegistry::standard();
        let chart = reg.lookup("eq2_spont_crl").unwrap().clone();
        let spec = SimSpec::new(chart.clone(), 100_000, 12345);
        let cohort = simulate_cohort(&spec).unwrap();
        let mut sq = Vec::new();
        for m in cohort.iter() {
            let fa = m.fa_days();
            if (55.0..=57.0).contains(&fa) {
                let mean = chart.mean_at(fa).unwrap();
                sq.push((m.crl() - mean).powi(2));
            }
        }
        let sd = (sq.iter().sum::<f64>() / sq.len() as f64).sqrt();
        assert!(
            (sd - 5.582).abs() <= 0.03 * 5.582,
            "sd {sd} vs 5.582 (n = {})",
            sq.len()
        );
    }

    #[test]
    fn chart_variance_requires_a_variance_model() {
        let reg = ReferenceRegistry::standard();
        let chart = reg.lookup("robinson_crl").unwrap().clone();
        assert!(matches!(
            simulate_cohort(&SimSpec::new(chart, 10, 1)),
            Err(Error::MissingVariance { .. })
        ));
    }

    #[test]
    fn covariate_bounds_must_fit_the_domain() {
        let reg = ReferenceRegistry::standard();
        let chart = reg.lookup("eq2_spont_crl").unwrap().clone();
        let spec = SimSpec::new(chart, 10, 1).with_covariate(CovariateDist::Uniform {
            lo: 10.0,
            hi: 90.0,
        });
        assert!(simulate_cohort(&spec).is_err());
    }
}
