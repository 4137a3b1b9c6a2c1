//! Cohort ingestion and the data-preparation chain:
//! load → dedup → select → trim → reweight.
//!
//! Every stage takes a cohort by reference and returns a new one.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use chrono::NaiveDate;
use serde::Serialize;

use crate::basis::BasisSpec;
use crate::cohort::{Cohort, Measurement, Source};
use crate::error::{Error, Result};
use crate::regression::{fit_robust, DEFAULT_BISQUARE_TUNING};

/// Upper CRL bound (mm): measurements on larger embryos are less reliable.
pub const DEFAULT_MAX_CRL: f64 = 85.0;
/// Default trimming fractions (below, above) by robust-residual rank.
pub const DEFAULT_LOWER_TRIM: f64 = 0.045;
pub const DEFAULT_UPPER_TRIM: f64 = 0.039;
/// CRL threshold splitting the two measurement regimes for reweighting.
pub const DEFAULT_REWEIGHT_THRESHOLD: f64 = 45.0;
/// Group weights above this trigger an imbalance warning.
const IMBALANCE_WARNING_WEIGHT: f64 = 10.0;

const REQUIRED_COLUMNS: [&str; 5] = ["pregnancy_id", "exam_date", "fa_days", "crl_mm", "source"];
const OPTIONAL_COLUMNS: [&str; 3] = ["weight", "regular_cycles", "no_contraception"];

#[derive(Debug)]
pub struct LoadOutcome {
    pub cohort: Cohort,
    pub warnings: Vec<String>,
    /// Row numbers skipped in lenient mode (1-based data rows).
    pub skipped_rows: Vec<usize>,
}

/// Read a cohort from the standard CSV schema
/// `pregnancy_id,exam_date,fa_days,crl_mm,source[,weight][,regular_cycles][,no_contraception]`.
///
/// In strict mode (the default) any malformed row aborts the load with a
/// row-numbered error; in lenient mode bad rows are skipped and reported.
pub fn load_cohort(path: impl AsRef<Path>, strict: bool) -> Result<LoadOutcome> {
    let file = std::fs::File::open(path.as_ref())?;
    load_cohort_from_reader(file, strict, path.as_ref().to_string_lossy().as_ref())
}

pub fn load_cohort_from_reader(
    reader: impl Read,
    strict: bool,
    provenance: &str,
) -> Result<LoadOutcome> {
    let mut csv_reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let headers: Vec<String> = csv_reader
        .headers()
        .map_err(|e| Error::Load(format!("cannot read header: {e}")))?
        .iter()
        .map(|h| h.to_string())
        .collect();

    let mut index: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, h) in headers.iter().enumerate() {
        if index.insert(h.as_str(), i).is_some() {
            return Err(Error::Load(format!("duplicate header column `{h}`")));
        }
    }
    for required in REQUIRED_COLUMNS {
        if !index.contains_key(required) {
            return Err(Error::Load(format!("missing required column `{required}`")));
        }
    }
    for h in &headers {
        if !REQUIRED_COLUMNS.contains(&h.as_str()) && !OPTIONAL_COLUMNS.contains(&h.as_str()) {
            return Err(Error::Load(format!("unknown column `{h}`")));
        }
    }

    let col = |name: &str| index.get(name).copied();
    let mut measurements = Vec::new();
    let mut warnings = Vec::new();
    let mut skipped_rows = Vec::new();

    for (row_idx, record) in csv_reader.records().enumerate() {
        let row = row_idx + 1;
        let parse = |record: &csv::StringRecord| -> Result<Measurement> {
            let field = |name: &str| -> Result<&str> {
                record
                    .get(col(name).expect("validated column"))
                    .ok_or_else(|| Error::LoadRow {
                        row,
                        message: format!("missing value for `{name}`"),
                    })
            };
            let exam_date = NaiveDate::parse_from_str(field("exam_date")?, "%Y-%m-%d")
                .map_err(|e| Error::LoadRow {
                    row,
                    message: format!("exam_date: {e}"),
                })?;
            let fa_days: f64 = field("fa_days")?.parse().map_err(|e| Error::LoadRow {
                row,
                message: format!("fa_days: {e}"),
            })?;
            let crl_mm: f64 = field("crl_mm")?.parse().map_err(|e| Error::LoadRow {
                row,
                message: format!("crl_mm: {e}"),
            })?;
            let source: Source = field("source")?.parse().map_err(|e| Error::LoadRow {
                row,
                message: format!("source: {e}"),
            })?;
            let weight = match col("weight") {
                Some(i) => match record.get(i) {
                    Some("") | None => 1.0,
                    Some(v) => v.parse().map_err(|e| Error::LoadRow {
                        row,
                        message: format!("weight: {e}"),
                    })?,
                },
                None => 1.0,
            };
            let flag = |name: &str| -> Result<Option<bool>> {
                match col(name) {
                    Some(i) => match record.get(i) {
                        Some("") | None => Ok(None),
                        Some(v) => v.parse::<bool>().map(Some).map_err(|e| Error::LoadRow {
                            row,
                            message: format!("{name}: {e}"),
                        }),
                    },
                    None => Ok(None),
                }
            };
            let mut m = Measurement::new(
                field("pregnancy_id")?.to_string(),
                exam_date,
                fa_days,
                crl_mm,
                weight,
                source,
            )
            .map_err(|e| Error::LoadRow {
                row,
                message: e.to_string(),
            })?;
            m.regular_cycles = flag("regular_cycles")?;
            m.no_contraception = flag("no_contraception")?;
            Ok(m)
        };

        let record = record.map_err(|e| Error::LoadRow {
            row,
            message: e.to_string(),
        })?;
        match parse(&record) {
            Ok(m) => measurements.push(m),
            Err(e) if strict => return Err(e),
            Err(e) => {
                warnings.push(e.to_string());
                skipped_rows.push(row);
            }
        }
    }

    if measurements.is_empty() {
        warnings.push("loaded an empty cohort".to_string());
    }
    Ok(LoadOutcome {
        cohort: Cohort::new(measurements, provenance),
        warnings,
        skipped_rows,
    })
}

/// Keep one record per pregnancy: the earliest exam date, ties broken by
/// smallest CRL, then by input order.
pub fn dedup_first_exam(cohort: &Cohort) -> Cohort {
    let mut best: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, m) in cohort.iter().enumerate() {
        match best.get(m.pregnancy_id.as_str()) {
            None => {
                best.insert(&m.pregnancy_id, i);
            }
            Some(&j) => {
                let cur = cohort.get(j).expect("index in range");
                let replace = (m.exam_date, m.crl()) < (cur.exam_date, cur.crl());
                if replace {
                    best.insert(&m.pregnancy_id, i);
                }
            }
        }
    }
    let mut keep: Vec<usize> = best.values().copied().collect();
    keep.sort_unstable();
    let kept = keep
        .into_iter()
        .map(|i| cohort.get(i).expect("index in range").clone())
        .collect();
    cohort.derive(kept, "dedup_first_exam")
}

/// Keep records with CRL strictly below `max_crl`. Records carrying a negative
/// screening flag (`regular_cycles` or `no_contraception` set to false) are
/// dropped as well.
pub fn select_eligible(cohort: &Cohort, max_crl: f64) -> Cohort {
    let kept = cohort
        .iter()
        .filter(|m| m.crl() < max_crl)
        .filter(|m| m.regular_cycles != Some(false) && m.no_contraception != Some(false))
        .cloned()
        .collect();
    cohort.derive(kept, &format!("select_eligible(max_crl={max_crl})"))
}

#[derive(Debug, Clone, Serialize)]
pub struct TrimReport {
    pub n_in: usize,
    pub removed_low: usize,
    pub removed_high: usize,
    pub lower_fraction: f64,
    pub upper_fraction: f64,
    pub total_removed_fraction: f64,
    pub kept_ids: Vec<String>,
    #[serde(skip)]
    pub kept: Cohort,
}

fn round_half_away(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// Rank observations by their signed robust-fit residual and drop the lowest
/// `lower_frac·n` and highest `upper_frac·n` (rounded half away from zero).
pub fn trim_outliers(
    cohort: &Cohort,
    basis: &BasisSpec,
    lower_frac: f64,
    upper_frac: f64,
) -> Result<TrimReport> {
    if !(0.0..0.5).contains(&lower_frac)
        || !(0.0..0.5).contains(&upper_frac)
        || lower_frac + upper_frac >= 0.5
    {
        return Err(Error::invalid(
            "trim fractions must be non-negative and sum below 0.5",
        ));
    }
    let n = cohort.len();
    let n_low = round_half_away(lower_frac * n as f64);
    let n_high = round_half_away(upper_frac * n as f64);

    let kept: Vec<Measurement> = if n_low == 0 && n_high == 0 {
        cohort.iter().cloned().collect()
    } else {
        let fit = fit_robust(cohort, basis, DEFAULT_BISQUARE_TUNING)?;
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| fit.residuals[a].total_cmp(&fit.residuals[b]));
        let mut drop = vec![false; n];
        for &i in order.iter().take(n_low) {
            drop[i] = true;
        }
        for &i in order.iter().rev().take(n_high) {
            drop[i] = true;
        }
        cohort
            .iter()
            .enumerate()
            .filter(|(i, _)| !drop[*i])
            .map(|(_, m)| m.clone())
            .collect()
    };

    let kept_ids = kept.iter().map(|m| m.pregnancy_id.clone()).collect();
    let kept = cohort.derive(
        kept,
        &format!("trim_outliers({lower_frac}, {upper_frac})"),
    );
    Ok(TrimReport {
        n_in: n,
        removed_low: n_low,
        removed_high: n_high,
        lower_fraction: n_low as f64 / n.max(1) as f64,
        upper_fraction: n_high as f64 / n.max(1) as f64,
        total_removed_fraction: (n_low + n_high) as f64 / n.max(1) as f64,
        kept_ids,
        kept,
    })
}

#[derive(Debug)]
pub struct ReweightOutcome {
    pub cohort: Cohort,
    pub warnings: Vec<String>,
}

/// Give the CRL regimes below and at-or-above `threshold_crl` equal total
/// weight: each record in a group of size n_g gets weight N/(2·n_g), so every
/// group sums to N/2 and the total stays N.
pub fn reweight_split(cohort: &Cohort, threshold_crl: f64) -> Result<ReweightOutcome> {
    let n = cohort.len();
    let n_small = cohort.iter().filter(|m| m.crl() < threshold_crl).count();
    let n_large = n - n_small;
    if n_small == 0 || n_large == 0 {
        return Err(Error::EmptyReweightGroup {
            group: if n_small == 0 { "CRL < threshold" } else { "CRL >= threshold" }.into(),
            threshold: threshold_crl,
        });
    }
    let w_small = n as f64 / (2.0 * n_small as f64);
    let w_large = n as f64 / (2.0 * n_large as f64);
    let mut warnings = Vec::new();
    if w_small.max(w_large) > IMBALANCE_WARNING_WEIGHT {
        warnings.push(format!(
            "extreme imbalance at threshold {threshold_crl}: group weights {w_small:.4} / {w_large:.4}"
        ));
    }
    let reweighted = cohort
        .iter()
        .map(|m| m.with_weight(if m.crl() < threshold_crl { w_small } else { w_large }))
        .collect();
    Ok(ReweightOutcome {
        cohort: cohort.derive(reweighted, &format!("reweight_split({threshold_crl})")),
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::Covariate;
    use approx::assert_relative_eq;

    fn csv_cohort(body: &str) -> Cohort {
        let data = format!("pregnancy_id,exam_date,fa_days,crl_mm,source,weight\n{body}");
        load_cohort_from_reader(data.as_bytes(), true, "test")
            .unwrap()
            .cohort
    }

    #[test]
    fn loads_valid_rows() {
        let cohort = csv_cohort(
            "p1,2020-01-05,56,32.8,IVF,1\n\
             p2,2020-02-10,40,12.7,SPONTANEOUS,1\n\
             p3,2020-03-15,70,55.8,SPONTANEOUS,",
        );
        assert_eq!(cohort.len(), 3);
        assert_relative_eq!(cohort.get(2).unwrap().weight(), 1.0);
    }

    #[test]
    fn strict_mode_rejects_bad_numerics_with_row() {
        let data = "pregnancy_id,exam_date,fa_days,crl_mm,source\n\
                    p1,2020-01-05,56,abc,IVF\n";
        let err = load_cohort_from_reader(data.as_bytes(), true, "t").unwrap_err();
        assert!(err.to_string().contains("row 1"), "{err}");
    }

    #[test]
    fn lenient_mode_skips_and_reports() {
        let data = "pregnancy_id,exam_date,fa_days,crl_mm,source\n\
                    p1,2020-01-05,56,abc,IVF\n\
                    p2,2020-01-06,57,33.1,IVF\n";
        let out = load_cohort_from_reader(data.as_bytes(), false, "t").unwrap();
        assert_eq!(out.cohort.len(), 1);
        assert_eq!(out.skipped_rows, vec![1]);
    }

    #[test]
    fn empty_file_with_header_warns() {
        let data = "pregnancy_id,exam_date,fa_days,crl_mm,source\n";
        let out = load_cohort_from_reader(data.as_bytes(), true, "t").unwrap();
        assert!(out.cohort.is_empty());
        assert!(!out.warnings.is_empty());
    }

    #[test]
    fn missing_column_and_duplicate_header_fail() {
        let missing = "pregnancy_id,exam_date,fa_days,source\np1,2020-01-01,56,IVF\n";
        assert!(load_cohort_from_reader(missing.as_bytes(), true, "t").is_err());
        let dup = "pregnancy_id,exam_date,fa_days,crl_mm,crl_mm,source\n";
        assert!(load_cohort_from_reader(dup.as_bytes(), true, "t").is_err());
    }

    #[test]
    fn non_positive_crl_rejected() {
        let data = "pregnancy_id,exam_date,fa_days,crl_mm,source\np1,2020-01-01,56,-3,IVF\n";
        assert!(load_cohort_from_reader(data.as_bytes(), true, "t").is_err());
    }

    #[test]
    fn dedup_keeps_first_exam() {
        let cohort = csv_cohort(
            "p1,2020-02-01,60,40.0,IVF,1\n\
             p1,2020-01-01,45,20.0,IVF,1\n\
             p2,2020-01-01,50,25.0,IVF,1",
        );
        let out = dedup_first_exam(&cohort);
        assert_eq!(out.len(), 2);
        assert_relative_eq!(out.get(0).unwrap().crl(), 20.0);
    }

    #[test]
    fn dedup_tie_breaks_on_smaller_crl() {
        let cohort = csv_cohort(
            "p1,2020-01-01,45,12.0,IVF,1\n\
             p1,2020-01-01,45,10.0,IVF,1",
        );
        let out = dedup_first_exam(&cohort);
        assert_eq!(out.len(), 1);
        assert_relative_eq!(out.get(0).unwrap().crl(), 10.0);
    }

    #[test]
    fn dedup_is_identity_on_unique_ids_and_idempotent() {
        let cohort = csv_cohort(
            "p1,2020-01-01,45,12.0,IVF,1\n\
             p2,2020-01-02,46,13.0,IVF,1",
        );
        let once = dedup_first_exam(&cohort);
        assert_eq!(once.measurements(), cohort.measurements());
        let twice = dedup_first_exam(&once);
        assert_eq!(once.measurements(), twice.measurements());
    }

    #[test]
    fn select_is_strict_below() {
        let cohort = csv_cohort(
            "p1,2020-01-01,80,84.9,IVF,1\n\
             p2,2020-01-01,80,85.0,IVF,1",
        );
        let out = select_eligible(&cohort, DEFAULT_MAX_CRL);
        assert_eq!(out.len(), 1);
        assert_relative_eq!(out.get(0).unwrap().crl(), 84.9);
        assert_eq!(select_eligible(&cohort, f64::INFINITY).len(), 2);
        assert!(select_eligible(&Cohort::default(), 85.0).is_empty());
    }

    #[test]
    fn trim_counts_follow_rounding_rule() {
        assert_eq!(round_half_away(25.2), 25);
        assert_eq!(round_half_away(21.84), 22);
        assert_eq!(round_half_away(2.5), 3);
        assert_eq!(round_half_away(0.45), 0);
    }

    #[test]
    fn trim_zero_fractions_is_identity() {
        let cohort = csv_cohort(
            "p1,2020-01-01,30,5.0,IVF,1\n\
             p2,2020-01-01,40,12.0,IVF,1\n\
             p3,2020-01-01,50,24.0,IVF,1",
        );
        let report = trim_outliers(&cohort, &BasisSpec::linear(Covariate::Fa), 0.0, 0.0).unwrap();
        assert_eq!(report.kept.len(), 3);
        assert_eq!(report.removed_low + report.removed_high, 0);
    }

    #[test]
    fn trim_removes_extreme_residual_rows() {
        // Ten points on a line except rows 0 (far below) and 9 (far above).
        let mut rows = String::new();
        for i in 0..10 {
            let x = 30.0 + i as f64;
            let mut y = 2.0 * x;
            if i == 0 {
                y -= 50.0;
            }
            if i == 9 {
                y += 50.0;
            }
            rows.push_str(&format!("p{i},2020-01-01,{x},{y},IVF,1\n"));
        }
        let cohort = csv_cohort(&rows);
        let report =
            trim_outliers(&cohort, &BasisSpec::linear(Covariate::Fa), 0.1, 0.1).unwrap();
        assert_eq!(report.removed_low, 1);
        assert_eq!(report.removed_high, 1);
        let kept: Vec<&str> = report.kept_ids.iter().map(|s| s.as_str()).collect();
        assert!(!kept.contains(&"p0") && !kept.contains(&"p9"), "{kept:?}");
    }

    #[test]
    fn reweight_formula_and_totals() {
        let mut rows = String::new();
        for i in 0..100 {
            rows.push_str(&format!("a{i},2020-01-01,35,{},IVF,1\n", 10.0 + (i % 30) as f64));
        }
        for i in 0..300 {
            rows.push_str(&format!("b{i},2020-01-01,70,{},IVF,1\n", 50.0 + (i % 30) as f64));
        }
        let cohort = csv_cohort(&rows);
        let out = reweight_split(&cohort, 45.0).unwrap();
        let small: f64 = out
            .cohort
            .iter()
            .filter(|m| m.crl() < 45.0)
            .map(|m| m.weight())
            .sum();
        let large: f64 = out
            .cohort
            .iter()
            .filter(|m| m.crl() >= 45.0)
            .map(|m| m.weight())
            .sum();
        assert_relative_eq!(out.cohort.get(0).unwrap().weight(), 2.0);
        assert_relative_eq!(out.cohort.get(100).unwrap().weight(), 2.0 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(small, 200.0, epsilon = 1e-9);
        assert_relative_eq!(large, 200.0, epsilon = 1e-9);
    }

    #[test]
    fn reweight_equal_groups_is_unit_weight_and_idempotent() {
        let cohort = csv_cohort(
            "p1,2020-01-01,35,10.0,IVF,1\n\
             p2,2020-01-01,70,50.0,IVF,1",
        );
        let out = reweight_split(&cohort, 45.0).unwrap();
        assert!(out.cohort.iter().all(|m| m.weight() == 1.0));
        let again = reweight_split(&out.cohort, 45.0).unwrap();
        assert_eq!(out.cohort.measurements(), again.cohort.measurements());
    }

    #[test]
    fn reweight_extreme_imbalance_warns() {
        let mut rows = String::from("p0,2020-01-01,35,10.0,IVF,1\n");
        for i in 0..399 {
            rows.push_str(&format!("q{i},2020-01-01,70,50.0,IVF,1\n"));
        }
        let cohort = csv_cohort(&rows);
        let out = reweight_split(&cohort, 45.0).unwrap();
        assert_relative_eq!(out.cohort.get(0).unwrap().weight(), 200.0);
        assert_relative_eq!(out.cohort.get(1).unwrap().weight(), 400.0 / 798.0, epsilon = 1e-9);
        assert!(!out.warnings.is_empty());
    }

    #[test]
    fn reweight_one_sided_errors() {
        let cohort = csv_cohort("p1,2020-01-01,35,10.0,IVF,1\n");
        assert!(matches!(
            reweight_split(&cohort, 45.0),
            Err(Error::EmptyReweightGroup { .. })
        ));
    }

    #[test]
    fn screening_flags_filter_when_present() {
        let data = "pregnancy_id,exam_date,fa_days,crl_mm,source,regular_cycles\n\
                    p1,2020-01-01,40,12.0,SPONTANEOUS,true\n\
                    p2,2020-01-01,41,13.0,SPONTANEOUS,false\n\
                    p3,2020-01-01,42,14.0,SPONTANEOUS,\n";
        let out = load_cohort_from_reader(data.as_bytes(), true, "t").unwrap();
        let kept = select_eligible(&out.cohort, 85.0);
        let ids: Vec<&str> = kept.iter().map(|m| m.pregnancy_id.as_str()).collect();
        assert_eq!(ids, vec!["p1", "p3"]);
    }
}
