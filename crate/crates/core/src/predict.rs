//! Chart consumption: κ-banded predictions, Z-scores, coverage calibration,
//! the optimal measurement window and dating-table generation.

use serde::Serialize;

use crate::age::fa_to_weeks_days;
use crate::basis::Covariate;
use crate::chart::{GrowthChart, Predicts};
use crate::cohort::Cohort;
use crate::error::{Error, Result};

/// A point prediction with its symmetric κ·σ band.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Prediction {
    pub x: f64,
    pub mean: f64,
    pub sd: f64,
    pub lower: f64,
    pub upper: f64,
    pub kappa_used: f64,
}

/// Mean ± κ·σ at `x`; κ comes from the override or the chart.
pub fn predict_with_ci(
    chart: &GrowthChart,
    x: f64,
    kappa_override: Option<f64>,
) -> Result<Prediction> {
    let kappa = match kappa_override {
        Some(k) if k >= 0.0 && k.is_finite() => k,
        Some(k) => return Err(Error::invalid(format!("kappa override {k} must be >= 0"))),
        None => chart.kappa(),
    };
    let eval = chart.evaluate(x)?;
    let sd = eval.sd.ok_or_else(|| Error::MissingVariance {
        chart: chart.name().to_string(),
        operation: "predict_with_ci".into(),
    })?;
    Ok(Prediction {
        x,
        mean: eval.mean,
        sd,
        lower: eval.mean - kappa * sd,
        upper: eval.mean + kappa * sd,
        kappa_used: kappa,
    })
}

/// Standardized deviation of an observation from the chart mean.
pub fn zscore(chart: &GrowthChart, x: f64, observed: f64) -> Result<f64> {
    let p = predict_with_ci(chart, x, None)?;
    Ok((observed - p.mean) / p.sd)
}

/// Smallest κ whose band covers at least `coverage` of the cohort: the
/// ⌈coverage·n⌉-th order statistic of the standardized absolute residuals.
pub fn calibrate_kappa(chart: &GrowthChart, cohort: &Cohort, coverage: f64) -> Result<f64> {
    if !(coverage > 0.0 && coverage < 1.0) {
        return Err(Error::invalid(format!(
            "coverage {coverage} must lie in (0, 1)"
        )));
    }
    if cohort.is_empty() {
        return Err(Error::InsufficientData {
            required: 1,
            actual: 0,
        });
    }
    let covariate = match chart.predicts() {
        Predicts::CrlFromFa => Covariate::Fa,
        Predicts::FaFromCrl => Covariate::Crl,
    };
    let mut standardized: Vec<f64> = Vec::with_capacity(cohort.len());
    for m in cohort.iter() {
        let x = m.value(covariate);
        let obs = m.value(covariate.response());
        let p = predict_with_ci(chart, x, None)?;
        standardized.push(((obs - p.mean) / p.sd).abs());
    }
    standardized.sort_by(|a, b| a.total_cmp(b));
    let n = standardized.len();
    let rank = ((coverage * n as f64).ceil() as usize).clamp(1, n);
    Ok(standardized[rank - 1])
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct OptimalWindow {
    pub crl: f64,
    pub fa: f64,
    pub sd: f64,
    /// Set when the SD curve is flat over the search range.
    pub constant_sd: bool,
}

const WINDOW_GRID_STEP: f64 = 0.01;

fn golden_section_min(
    f: &dyn Fn(f64) -> Result<f64>,
    mut a: f64,
    mut b: f64,
) -> Result<(f64, f64)> {
    let phi = (5.0_f64.sqrt() - 1.0) / 2.0;
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    while b - a > 1e-10 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = f(d)?;
        }
    }
    let mid = 0.5 * (a + b);
    Ok((mid, f(mid)?))
}

/// The covariate where the dating SD is smallest: a 0.01-step scan finds the
/// global grid minimum, then a golden-section pass refines within the
/// bracketing neighbours. Ties break toward smaller CRL.
pub fn optimal_window(
    chart: &GrowthChart,
    search_domain: Option<(f64, f64)>,
) -> Result<OptimalWindow> {
    if chart.predicts() != Predicts::FaFromCrl {
        return Err(Error::invalid(
            "optimal_window applies to FA-from-CRL charts",
        ));
    }
    if chart.variance().is_none() {
        return Err(Error::MissingVariance {
            chart: chart.name().to_string(),
            operation: "optimal_window".into(),
        });
    }
    let (dlo, dhi) = chart.domain();
    let (lo, hi) = match search_domain {
        Some((a, b)) => {
            if !(a < b) || a < dlo || b > dhi {
                return Err(Error::invalid(format!(
                    "search domain [{a}, {b}] must lie inside the chart domain [{dlo}, {dhi}]"
                )));
            }
            (a, b)
        }
        None => (dlo, dhi),
    };

    let sd_at = |x: f64| -> Result<f64> { Ok(chart.evaluate(x)?.sd.expect("variance checked")) };

    let steps = ((hi - lo) / WINDOW_GRID_STEP).ceil() as usize;
    let mut best_x = lo;
    let mut best_sd = sd_at(lo)?;
    let mut max_sd = best_sd;
    let mut best_idx = 0usize;
    for i in 1..=steps {
        let x = if i == steps {
            hi
        } else {
            lo + i as f64 * WINDOW_GRID_STEP
        };
        let sd = sd_at(x)?;
        max_sd = max_sd.max(sd);
        if sd < best_sd {
            best_sd = sd;
            best_x = x;
            best_idx = i;
        }
    }

    if max_sd - best_sd <= 1e-12 * max_sd.max(1.0) {
        let fa = chart.evaluate(lo)?.mean;
        return Ok(OptimalWindow {
            crl: lo,
            fa,
            sd: sd_at(lo)?,
            constant_sd: true,
        });
    }

    let a = if best_idx == 0 {
        lo
    } else {
        best_x - WINDOW_GRID_STEP
    };
    let b = if best_idx == steps {
        hi
    } else {
        (best_x + WINDOW_GRID_STEP).min(hi)
    };
    let (x_star, sd_star) = golden_section_min(&sd_at, a.max(lo), b)?;
    let (x_star, sd_star) = if sd_star <= best_sd {
        (x_star, sd_star)
    } else {
        (best_x, best_sd)
    };
    let fa = chart.evaluate(x_star)?.mean;
    Ok(OptimalWindow {
        crl: x_star,
        fa,
        sd: sd_star,
        constant_sd: false,
    })
}

/// One dating-table row.
#[derive(Debug, Clone, Serialize)]
pub struct TableRow {
    pub x: f64,
    /// Completed weeks and days, present on integral FA grids.
    pub weeks_days: Option<(i64, i64)>,
    pub mean: f64,
    pub sd: Option<f64>,
}

/// Chart values on the unit-step grid from `from` to `to` inclusive.
pub fn tabulate(chart: &GrowthChart, from: f64, to: f64) -> Result<Vec<TableRow>> {
    if !(from <= to) {
        return Err(Error::invalid(format!("empty table range [{from}, {to}]")));
    }
    if !chart.contains(from) || !chart.contains(to) {
        let (lo, hi) = chart.domain();
        return Err(Error::OutsideDomain {
            chart: chart.name().to_string(),
            value: if chart.contains(from) { to } else { from },
            lo,
            hi,
        });
    }
    let is_fa_grid = chart.predicts() == Predicts::CrlFromFa;
    let n_rows = (to - from).floor() as usize + 1;
    let mut rows = Vec::with_capacity(n_rows);
    for i in 0..n_rows {
        let x = from + i as f64;
        let eval = chart.evaluate(x)?;
        let weeks_days = if is_fa_grid && (x - x.round()).abs() < 1e-9 && x >= 0.0 {
            Some(fa_to_weeks_days(x.round() as i64)?)
        } else {
            None
        };
        rows.push(TableRow {
            x,
            weeks_days,
            mean: eval.mean,
            sd: eval.sd,
        });
    }
    Ok(rows)
}

/// Format a value to `digits` significant digits in plain decimal notation.
pub fn format_significant(value: f64, digits: usize) -> String {
    if value == 0.0 {
        return "0".to_string();
    }
    let magnitude = value.abs().log10().floor() as i32;
    let decimals = (digits as i32 - 1 - magnitude).max(0) as usize;
    format!("{value:.decimals$}")
}

/// Render rows as CSV: `x[,weeks_days],mean[,sd][,lower,upper]`.
pub fn render_table_csv(
    chart: &GrowthChart,
    rows: &[TableRow],
    sig_digits: usize,
    with_band: bool,
) -> String {
    let has_weeks = rows.iter().any(|r| r.weeks_days.is_some());
    let has_sd = rows.iter().any(|r| r.sd.is_some());
    let mut out = String::from("x");
    if has_weeks {
        out.push_str(",weeks_days");
    }
    out.push_str(",mean");
    if has_sd {
        out.push_str(",sd");
        if with_band {
            out.push_str(",lower,upper");
        }
    }
    out.push('\n');
    for r in rows {
        out.push_str(&format_significant(r.x, sig_digits));
        if has_weeks {
            match r.weeks_days {
                Some((w, d)) => out.push_str(&format!(",{w}+{d}")),
                None => out.push(','),
            }
        }
        out.push(',');
        out.push_str(&format_significant(r.mean, sig_digits));
        if has_sd {
            out.push(',');
            if let Some(sd) = r.sd {
                out.push_str(&format_significant(sd, sig_digits));
                if with_band {
                    let k = chart.kappa();
                    out.push(',');
                    out.push_str(&format_significant(r.mean - k * sd, sig_digits));
                    out.push(',');
                    out.push_str(&format_significant(r.mean + k * sd, sig_digits));
                }
            } else if with_band {
                out.push_str(",,");
            }
        }
        out.push('\n');
    }
    out
}

/// Render rows as an aligned plain-text table for visual diffing.
pub fn render_table_text(chart: &GrowthChart, rows: &[TableRow], sig_digits: usize) -> String {
    let has_weeks = rows.iter().any(|r| r.weeks_days.is_some());
    let has_sd = rows.iter().any(|r| r.sd.is_some());
    let mut out = String::new();
    let (xlab, mlab) = match chart.predicts() {
        Predicts::CrlFromFa => ("FA d", "CRL mm"),
        Predicts::FaFromCrl => ("CRL mm", "FA d"),
    };
    out.push_str(&format!("{xlab:>8}"));
    if has_weeks {
        out.push_str(&format!("{:>10}", "wk+d"));
    }
    out.push_str(&format!("{mlab:>12}"));
    if has_sd {
        out.push_str(&format!("{:>12}", "SD"));
    }
    out.push('\n');
    for r in rows {
        out.push_str(&format!("{:>8}", format_significant(r.x, sig_digits)));
        if has_weeks {
            match r.weeks_days {
                Some((w, d)) => out.push_str(&format!("{:>10}", format!("{w} + {d}"))),
                None => out.push_str(&format!("{:>10}", "")),
            }
        }
        out.push_str(&format!("{:>12}", format_significant(r.mean, sig_digits)));
        if has_sd {
            match r.sd {
                Some(sd) => out.push_str(&format!("{:>12}", format_significant(sd, sig_digits))),
                None => out.push_str(&format!("{:>12}", "")),
            }
        }
        out.push('\n');
    }
    out
}
