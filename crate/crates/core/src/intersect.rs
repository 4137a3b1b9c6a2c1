//! Intersection of two mean curves.

use crate::chart::{MeanModel, ResponseTransform};
use crate::error::{Error, Result};

const GRID_STEP: f64 = 0.01;
const BISECT_TOL: f64 = 1e-9;

/// Root of `a(x) − b(x)` inside `range`, found by a 0.01-step sign-change scan
/// followed by bisection. Returns `None` when the difference never changes
/// sign, and an ambiguity error listing the bracketing subintervals when it
/// changes sign more than once.
///
/// Both models must share the covariate and use the identity response
/// transform.
pub fn curve_intersection(
    a: &MeanModel,
    b: &MeanModel,
    range: (f64, f64),
) -> Result<Option<f64>> {
    if a.basis().covariate() != b.basis().covariate() {
        return Err(Error::invalid(
            "intersecting models must share a covariate",
        ));
    }
    if a.response_transform() != ResponseTransform::Identity
        || b.response_transform() != ResponseTransform::Identity
    {
        return Err(Error::invalid(
            "intersection is only defined for identity-transform models",
        ));
    }
    let (lo, hi) = range;
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::invalid(format!(
            "degenerate intersection range [{lo}, {hi}]"
        )));
    }

    let diff = |x: f64| a.linear_predictor(x) - b.linear_predictor(x);

    // Sign-change brackets on the scan grid. Exact zeros count as roots.
    let mut brackets: Vec<(f64, f64)> = Vec::new();
    let steps = ((hi - lo) / GRID_STEP).ceil() as usize;
    let mut prev_x = lo;
    let mut prev_f = diff(lo);
    if prev_f == 0.0 {
        brackets.push((lo, lo));
    }
    for i in 1..=steps {
        let x = if i == steps { hi } else { lo + i as f64 * GRID_STEP };
        let f = diff(x);
        if f == 0.0 {
            brackets.push((x, x));
        } else if prev_f != 0.0 && prev_f.signum() != f.signum() {
            brackets.push((prev_x, x));
        }
        prev_x = x;
        prev_f = f;
    }

    match brackets.len() {
        0 => Ok(None),
        1 => {
            let (mut lo, mut hi) = brackets[0];
            if lo == hi {
                return Ok(Some(lo));
            }
            let mut f_lo = diff(lo);
            while hi - lo > BISECT_TOL {
                let mid = 0.5 * (lo + hi);
                let f_mid = diff(mid);
                if f_mid == 0.0 {
                    return Ok(Some(mid));
                }
                if f_lo.signum() != f_mid.signum() {
                    hi = mid;
                } else {
                    lo = mid;
                    f_lo = f_mid;
                }
            }
            Ok(Some(0.5 * (lo + hi)))
        }
        _ => Err(Error::AmbiguousIntersection(brackets)),
    }
}
