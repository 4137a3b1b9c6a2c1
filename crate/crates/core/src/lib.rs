//! First-trimester embryonic growth-chart engine.
//!
//! The crate models crown-rump length (CRL, mm) against foetal age (FA, days
//! since fertilization) and the inverse dating problem, the way first-trimester
//! reference charts are built in practice:
//!
//! * polynomial mean models with an explicitly modelled, covariate-dependent
//!   residual variance (two-stage generalized least squares),
//! * robust M-estimation fits that survive dating outliers,
//! * a registry of published reference equations with exact evaluation
//!   semantics,
//! * leave-one-out cross-validation that ranks models by best-prediction
//!   counts, plus the usual hypothesis tests (Chow, Wilcoxon rank-sum,
//!   Wald, paired over-estimation t),
//! * two-component mixture-of-regressions fitting for growth-regime
//!   breakpoint detection,
//! * κ-calibrated confidence bands, Z-scores, dating tables and the optimal
//!   measurement window,
//! * seeded synthetic cohort generation for recovery and contamination
//!   experiments.
//!
//! All types are immutable after construction and every operation is a pure
//! function, so everything here can be called concurrently without locks.

pub mod age;
pub mod basis;
pub mod chart;
pub mod cohort;
pub mod error;
pub mod intersect;
pub mod mixture;
pub mod pipeline;
pub mod predict;
pub mod regression;
pub mod registry;
pub mod schema;
pub mod simulate;
pub mod validation;

pub use age::{fa_to_weeks_days, Age, AgeKind};
pub use basis::{BasisSpec, BasisTerm, Covariate};
pub use chart::{
    CorrectiveFactor, Evaluation, GrowthChart, MeanModel, Predicts, ResponseTransform,
    VarianceModel, DEFAULT_KAPPA, DEFAULT_VARIANCE_FLOOR,
};
pub use cohort::{Cohort, Measurement, Source};
pub use error::{Error, Result};
pub use intersect::curve_intersection;
pub use mixture::{find_breakpoint, fit_mixture, MixtureComponent, MixtureFit, MixtureOptions};
pub use pipeline::{
    dedup_first_exam, load_cohort, load_cohort_from_reader, reweight_split, select_eligible,
    trim_outliers, LoadOutcome, ReweightOutcome, TrimReport,
};
pub use predict::{
    calibrate_kappa, optimal_window, predict_with_ci, tabulate, zscore, OptimalWindow, Prediction,
    TableRow,
};
pub use regression::{
    fit_heteroskedastic, fit_least_squares, fit_robust, fit_variance_model, highest_degree_test,
    FitReport, HeteroOptions, VarianceFit, DEFAULT_BISQUARE_TUNING,
};
pub use registry::ReferenceRegistry;
pub use schema::{chart_from_json, chart_to_json, load_chart, save_chart};
pub use simulate::{simulate_cohort, Contamination, CovariateDist, NoiseSpec, SimSpec};
pub use validation::{
    chow_test, error_summary, loocv_compare, overestimation_test, wald_coefficient_test,
    wilcoxon_rank_sum, ErrorSummary, FitMethod, ModelUnderTest, TestOutcome, ValidationReport,
    WaldOutcome,
};
