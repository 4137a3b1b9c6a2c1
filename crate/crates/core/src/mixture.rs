//! Two-component mixture of regressions, fitted by EM, and breakpoint
//! extraction from the fitted component curves.

use rayon::prelude::*;

use crate::basis::BasisSpec;
use crate::chart::MeanModel;
use crate::cohort::Cohort;
use crate::error::{Error, Result};
use crate::intersect::curve_intersection;
use crate::regression::solver::{design_matrix, solve_wls, weighted_r_squared};

const LN_2PI: f64 = 1.8378770664093453;
const MIN_MIXING_WEIGHT: f64 = 1e-3;
const MIN_NOISE_SD: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct MixtureComponent {
    pub mean: MeanModel,
    pub noise_sd: f64,
    pub mixing_weight: f64,
    /// R² of the component over its hard-assigned points.
    pub r_squared: f64,
}

#[derive(Debug, Clone)]
pub struct MixtureFit {
    /// Components ordered by ascending mean covariate of their hard-assigned
    /// points.
    pub components: [MixtureComponent; 2],
    /// Per-observation responsibilities, rows summing to 1.
    pub responsibilities: Vec<[f64; 2]>,
    /// Hard labels by maximum responsibility, ties to component 0.
    pub assignments: Vec<usize>,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub seed: u64,
    /// Winning restart index.
    pub restart: usize,
    pub collapsed_restarts: usize,
    /// Set when both components converged to the same curve.
    pub identical_components: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct MixtureOptions {
    pub restarts: usize,
    pub max_iterations: usize,
    /// Stop when the log-likelihood gain falls below this.
    pub tolerance: f64,
}

impl Default for MixtureOptions {
    fn default() -> Self {
        MixtureOptions {
            restarts: 10,
            max_iterations: 500,
            tolerance: 1e-8,
        }
    }
}

struct RestartFit {
    betas: [Vec<f64>; 2],
    sigmas: [f64; 2],
    pis: [f64; 2],
    log_likelihood: f64,
    iterations: usize,
}

/// Gaussian mixture-of-regressions EM. Each restart initializes from a random
/// covariate-ordered split, the E-step computes Gaussian responsibilities, the
/// M-step refits each component by responsibility-weighted least squares and
/// updates its noise SD and mixing weight. Collapsing restarts (mixing weight
/// < 1e-3 or noise SD < 1e-6) are discarded; the best surviving restart by
/// log-likelihood wins, ties going to the earliest restart so parallel
/// execution cannot change the result. Pipeline weights are not used here.
pub fn fit_mixture(
    cohort: &Cohort,
    basis: &BasisSpec,
    seed: u64,
    options: MixtureOptions,
) -> Result<MixtureFit> {
    let n = cohort.len();
    let k = basis.len();
    if n < 4 * (k + 1) {
        return Err(Error::InsufficientData {
            required: 4 * (k + 1),
            actual: n,
        });
    }
    let xs = cohort.values(basis.covariate());
    let ys = cohort.values(basis.covariate().response());

    // Covariate order for split initialization; ties broken by response so the
    // ordering is a function of the data set, not the input order.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| (xs[a], ys[a]).partial_cmp(&(xs[b], ys[b])).expect("finite"));

    let restarts = options.restarts.max(1);
    let results: Vec<Option<RestartFit>> = (0..restarts)
        .into_par_iter()
        .map(|r| run_restart(basis, &xs, &ys, &order, seed, r, options))
        .collect();

    let collapsed = results.iter().filter(|r| r.is_none()).count();
    let mut best: Option<(usize, RestartFit)> = None;
    for (idx, res) in results.into_iter().enumerate() {
        if let Some(fit) = res {
            let better = match &best {
                None => true,
                Some((_, b)) => fit.log_likelihood > b.log_likelihood,
            };
            if better {
                best = Some((idx, fit));
            }
        }
    }
    let (restart_idx, fit) = best.ok_or(Error::MixtureCollapse { restarts })?;

    assemble(basis, &xs, &ys, fit, seed, restart_idx, collapsed)
}

fn restart_rng(seed: u64, restart: usize) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    // Fixed derivation so restart streams are independent and reproducible.
    let derived = seed ^ ((restart as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rand_chacha::ChaCha8Rng::seed_from_u64(derived)
}

fn run_restart(
    basis: &BasisSpec,
    xs: &[f64],
    ys: &[f64],
    order: &[usize],
    seed: u64,
    restart: usize,
    options: MixtureOptions,
) -> Option<RestartFit> {
    use rand::Rng;
    let n = xs.len();
    let k = basis.len();
    let k_min = 2 * (k + 1);
    let mut rng = restart_rng(seed, restart);
    let split = rng.gen_range(k_min..=(n - k_min));

    let mut betas: [Vec<f64>; 2] = [vec![0.0; k], vec![0.0; k]];
    let mut sigmas = [0.0f64; 2];
    let mut pis = [0.0f64; 2];
    for c in 0..2 {
        let idx: &[usize] = if c == 0 {
            &order[..split]
        } else {
            &order[split..]
        };
        let sub_x: Vec<f64> = idx.iter().map(|&i| xs[i]).collect();
        let sub_y: Vec<f64> = idx.iter().map(|&i| ys[i]).collect();
        let sol = solve_wls(basis, &sub_x, &sub_y, &vec![1.0; idx.len()]).ok()?;
        let rms = (sol.residuals.iter().map(|r| r * r).sum::<f64>() / idx.len() as f64).sqrt();
        betas[c] = sol.beta;
        sigmas[c] = rms.max(1e-3);
        pis[c] = idx.len() as f64 / n as f64;
    }

    let x = design_matrix(basis, xs);
    let predict = |beta: &[f64], i: usize| -> f64 { (0..k).map(|j| x[(i, j)] * beta[j]).sum() };

    let mut gamma = vec![[0.0f64; 2]; n];
    let mut last_ll = f64::NEG_INFINITY;
    let mut iterations = 0usize;

    for _ in 0..options.max_iterations {
        // E-step with log-sum-exp.
        let mut ll = 0.0;
        for i in 0..n {
            let mut logd = [0.0f64; 2];
            for c in 0..2 {
                let z = (ys[i] - predict(&betas[c], i)) / sigmas[c];
                logd[c] = pis[c].ln() - sigmas[c].ln() - 0.5 * (z * z + LN_2PI);
            }
            let m = logd[0].max(logd[1]);
            let e0 = (logd[0] - m).exp();
            let e1 = (logd[1] - m).exp();
            let tot = e0 + e1;
            gamma[i] = [e0 / tot, e1 / tot];
            ll += m + tot.ln();
        }
        // EM must not decrease the likelihood (up to round-off).
        assert!(
            ll >= last_ll - 1e-6 * (1.0 + last_ll.abs()),
            "log-likelihood decreased: {last_ll} -> {ll}"
        );
        let gain = ll - last_ll;
        last_ll = ll;
        iterations += 1;
        if gain.abs() < options.tolerance && iterations > 1 {
            break;
        }

        // M-step.
        for c in 0..2 {
            let weights: Vec<f64> = gamma.iter().map(|g| g[c]).collect();
            let wsum: f64 = weights.iter().sum();
            if wsum < MIN_MIXING_WEIGHT * n as f64 {
                return None;
            }
            let sol = solve_wls(basis, xs, ys, &weights).ok()?;
            let mut ss = 0.0;
            for i in 0..n {
                let r = ys[i] - sol.fitted[i];
                ss += weights[i] * r * r;
            }
            let sigma = (ss / wsum).sqrt();
            if sigma < MIN_NOISE_SD {
                return None;
            }
            betas[c] = sol.beta;
            sigmas[c] = sigma;
            pis[c] = wsum / n as f64;
        }
    }

    Some(RestartFit {
        betas,
        sigmas,
        pis,
        log_likelihood: last_ll,
        iterations,
    })
}

fn assemble(
    basis: &BasisSpec,
    xs: &[f64],
    ys: &[f64],
    fit: RestartFit,
    seed: u64,
    restart: usize,
    collapsed: usize,
) -> Result<MixtureFit> {
    let n = xs.len();
    let k = basis.len();
    let x = design_matrix(basis, xs);
    let predict = |beta: &[f64], i: usize| -> f64 { (0..k).map(|j| x[(i, j)] * beta[j]).sum() };

    // Final responsibilities under the fitted parameters.
    let mut gamma = vec![[0.0f64; 2]; n];
    for i in 0..n {
        let mut logd = [0.0f64; 2];
        for c in 0..2 {
            let z = (ys[i] - predict(&fit.betas[c], i)) / fit.sigmas[c];
            logd[c] = fit.pis[c].ln() - fit.sigmas[c].ln() - 0.5 * (z * z + LN_2PI);
        }
        let m = logd[0].max(logd[1]);
        let e0 = (logd[0] - m).exp();
        let e1 = (logd[1] - m).exp();
        gamma[i] = [e0 / (e0 + e1), e1 / (e0 + e1)];
    }
    let hard: Vec<usize> = gamma
        .iter()
        .map(|g| if g[1] > g[0] { 1 } else { 0 })
        .collect();

    // Order components by ascending mean covariate of hard-assigned points,
    // falling back to the responsibility-weighted mean for empty groups.
    let mean_cov = |c: usize| -> f64 {
        let assigned: Vec<f64> = xs
            .iter()
            .zip(&hard)
            .filter(|(_, h)| **h == c)
            .map(|(x, _)| *x)
            .collect();
        if assigned.is_empty() {
            let wsum: f64 = gamma.iter().map(|g| g[c]).sum();
            xs.iter().zip(&gamma).map(|(x, g)| x * g[c]).sum::<f64>() / wsum
        } else {
            assigned.iter().sum::<f64>() / assigned.len() as f64
        }
    };
    let swap = mean_cov(1) < mean_cov(0);
    let order = if swap { [1, 0] } else { [0, 1] };

    let mut components = Vec::with_capacity(2);
    for &c in &order {
        let assigned: Vec<usize> = (0..n).filter(|&i| hard[i] == c).collect();
        let r2 = if assigned.len() >= 2 {
            let sub_y: Vec<f64> = assigned.iter().map(|&i| ys[i]).collect();
            let sub_fit: Vec<f64> =
                assigned.iter().map(|&i| predict(&fit.betas[c], i)).collect();
            weighted_r_squared(&sub_y, &sub_fit, &vec![1.0; assigned.len()])
        } else {
            1.0
        };
        components.push(MixtureComponent {
            mean: MeanModel::new(basis.clone(), fit.betas[c].clone())?,
            noise_sd: fit.sigmas[c],
            mixing_weight: fit.pis[c],
            r_squared: r2,
        });
    }

    let responsibilities: Vec<[f64; 2]> =
        gamma.iter().map(|g| [g[order[0]], g[order[1]]]).collect();
    let assignments: Vec<usize> = hard
        .iter()
        .map(|&h| if h == order[0] { 0 } else { 1 })
        .collect();

    let identical = {
        let a = components[0].mean.coefficients();
        let b = components[1].mean.coefficients();
        a.iter()
            .zip(b)
            .all(|(x, y)| (x - y).abs() <= 1e-6 * (1.0 + x.abs().max(y.abs())))
    };

    let components: [MixtureComponent; 2] = components
        .try_into()
        .map_err(|_| Error::invalid("expected exactly two components"))?;
    Ok(MixtureFit {
        components,
        responsibilities,
        assignments,
        log_likelihood: fit.log_likelihood,
        iterations: fit.iterations,
        seed,
        restart,
        collapsed_restarts: collapsed,
        identical_components: identical,
    })
}

/// Breakpoint = intersection of the two component mean curves inside `range`.
/// Absent when the curves do not cross there.
pub fn find_breakpoint(fit: &MixtureFit, range: (f64, f64)) -> Result<Option<f64>> {
    if fit.identical_components {
        return Ok(None);
    }
    curve_intersection(&fit.components[0].mean, &fit.components[1].mean, range)
}
