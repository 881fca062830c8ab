//! Behavioral observability: do two priors produce different filter outputs
//! `pi_t(h)` on the same observation path?
//!
//! For the additive Gaussian observation model the relative entropy between
//! the laws of the observation path under `mu` and `nu` is
//! `E^mu int_0^T |pi^mu_t(h) - pi^nu_t(h)|^2 dt`, estimated here by Monte
//! Carlo on paths drawn under `mu`, alongside the sup of the filter gap.

use std::io::Write;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::filter::wonham;
use crate::linalg::DEFAULT_RANK_TOL;
use crate::model::{Model, ProbabilityMeasure};
use crate::observability::unobservable_directions;
use crate::simulate::{physical_path, TimeGrid};
use crate::stats::Estimate;

/// Default verdict thresholds, calibrated at `dt = 1e-4`.
pub const DEFAULT_ENTROPY_THRESHOLD: f64 = 1e-3;
pub const DEFAULT_SUP_THRESHOLD: f64 = 1e-2;

/// Smallest weight kept when moving a prior along a direction.
pub const PERTURBATION_FLOOR: f64 = 0.05;

/// Filter-gap statistics for one prior pair on shared observation paths.
#[derive(Debug, Clone, PartialEq)]
pub struct PairExperiment {
    /// Per channel: max over grid points and paths of `|pi^mu_k(h_c) - pi^nu_k(h_c)|`.
    pub sup_per_channel: Vec<f64>,
    /// Path average of `|pi^mu_k(h) - pi^nu_k(h)|` (Euclidean over channels) per grid point.
    pub trace: Vec<f64>,
    /// Relative-entropy estimate with its standard error.
    pub entropy: Estimate,
    pub n_paths: usize,
    pub grid: TimeGrid,
}

impl PairExperiment {
    pub fn sup_discrepancy(&self) -> f64 {
        self.sup_per_channel.iter().copied().fold(0.0, f64::max)
    }
}

struct PathStats {
    sup: Vec<f64>,
    gaps: Vec<f64>,
    integral: f64,
}

/// Runs both Wonham filters on each of `n_paths` observation paths drawn
/// under `mu`; the two filters of a path see the identical increments.
pub fn pair_experiment(
    model: &Model,
    mu: &ProbabilityMeasure,
    nu: &ProbabilityMeasure,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<PairExperiment> {
    mu.check_dim(model.d())?;
    nu.check_dim(model.d())?;
    if n_paths < 2 {
        return Err(Error::InvalidArgument("need at least two paths".into()));
    }
    let m = model.m();
    let h = model.observation();
    let per_path: Result<Vec<PathStats>> = (0..n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let path = physical_path(model, mu, grid, seed, i);
            let a = wonham(model, mu, grid, &path.observation)?;
            let b = wonham(model, nu, grid, &path.observation)?;
            let (pa, pb) = (a.pi.expect("probability mode"), b.pi.expect("probability mode"));
            let mut sup = vec![0.0f64; m];
            let mut gaps = Vec::with_capacity(grid.n_points());
            let mut integral = 0.0;
            for k in 0..grid.n_points() {
                let diff = h.tr_mul(&(&pa[k] - &pb[k]));
                for c in 0..m {
                    sup[c] = sup[c].max(diff[c].abs());
                }
                let sq = diff.norm_squared();
                gaps.push(sq.sqrt());
                if k < grid.n_steps() {
                    integral += sq * grid.dt();
                }
            }
            Ok(PathStats { sup, gaps, integral })
        })
        .collect();
    let per_path = per_path?;

    let mut sup_per_channel = vec![0.0f64; m];
    let mut trace = vec![0.0; grid.n_points()];
    for s in &per_path {
        for (acc, x) in sup_per_channel.iter_mut().zip(&s.sup) {
            *acc = acc.max(*x);
        }
        for (t, g) in trace.iter_mut().zip(&s.gaps) {
            *t += g;
        }
    }
    for t in &mut trace {
        *t /= n_paths as f64;
    }
    let integrals: Vec<f64> = per_path.iter().map(|s| s.integral).collect();
    Ok(PairExperiment {
        sup_per_channel,
        trace,
        entropy: Estimate::from_samples(&integrals),
        n_paths,
        grid: *grid,
    })
}

/// Filter-indistinguishability experiment: sup of the filter gap and its time trace.
pub fn o3_experiment(
    model: &Model,
    mu: &ProbabilityMeasure,
    nu: &ProbabilityMeasure,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<(f64, Vec<f64>)> {
    let run = pair_experiment(model, mu, nu, grid, n_paths, seed)?;
    Ok((run.sup_discrepancy(), run.trace))
}

/// Monte Carlo estimate of the relative entropy between the observation laws.
pub fn relative_entropy_estimate(
    model: &Model,
    mu: &ProbabilityMeasure,
    nu: &ProbabilityMeasure,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<Estimate> {
    Ok(pair_experiment(model, mu, nu, grid, n_paths, seed)?.entropy)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Indistinguishable,
    Distinguishable,
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Thresholds {
    pub entropy: f64,
    pub sup: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            entropy: DEFAULT_ENTROPY_THRESHOLD,
            sup: DEFAULT_SUP_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistinguishConfig {
    pub grid: TimeGrid,
    pub n_paths: usize,
    pub seed: u64,
    pub thresholds: Thresholds,
    pub tol: f64,
}

impl DistinguishConfig {
    pub fn new(grid: TimeGrid, n_paths: usize, seed: u64) -> Self {
        Self {
            grid,
            n_paths,
            seed,
            thresholds: Thresholds::default(),
            tol: DEFAULT_RANK_TOL,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Budgets {
    pub n_paths: usize,
    pub horizon: f64,
    pub dt: f64,
    pub seed: u64,
}

/// Where `nu - mu` sits relative to the unobservable subspace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AlgebraicCheck {
    /// Residual of the normalized difference after projection onto the
    /// unobservable span (0 for identical priors).
    pub residual: f64,
    pub in_unobservable_span: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistinguishabilityResult {
    pub sup_discrepancy: f64,
    pub sup_discrepancy_per_channel: Vec<f64>,
    pub entropy: Estimate,
    pub verdict: Verdict,
    pub thresholds: Thresholds,
    pub budgets: Budgets,
    pub algebraic: AlgebraicCheck,
    /// Set when the behavioral verdict contradicts the algebraic test.
    pub warning: Option<String>,
    #[serde(skip)]
    pub trace: Vec<f64>,
}

impl DistinguishabilityResult {
    pub fn consistent(&self) -> bool {
        self.warning.is_none()
    }
}

pub fn verdict(sup: f64, entropy: &Estimate, thresholds: &Thresholds) -> Verdict {
    if entropy.estimate < thresholds.entropy && sup < thresholds.sup {
        Verdict::Indistinguishable
    } else if entropy.estimate - 3.0 * entropy.std_err > thresholds.entropy {
        Verdict::Distinguishable
    } else {
        Verdict::Inconclusive
    }
}

pub fn algebraic_check(model: &Model, mu: &ProbabilityMeasure, nu: &ProbabilityMeasure, tol: f64) -> AlgebraicCheck {
    let diff = nu.weights() - mu.weights();
    let norm = diff.norm();
    if norm == 0.0 {
        return AlgebraicCheck {
            residual: 0.0,
            in_unobservable_span: true,
        };
    }
    let residual = unobservable_directions(model, tol).residual(&(diff / norm));
    AlgebraicCheck {
        residual,
        in_unobservable_span: residual < tol,
    }
}

/// Runs the filter-gap and relative-entropy experiments, issues a verdict,
/// and cross-checks it against the algebraic test.
pub fn distinguish(
    model: &Model,
    mu: &ProbabilityMeasure,
    nu: &ProbabilityMeasure,
    config: &DistinguishConfig,
) -> Result<DistinguishabilityResult> {
    let run = pair_experiment(model, mu, nu, &config.grid, config.n_paths, config.seed)?;
    let sup = run.sup_discrepancy();
    let verdict = verdict(sup, &run.entropy, &config.thresholds);
    let algebraic = algebraic_check(model, mu, nu, config.tol);
    let warning = (algebraic.in_unobservable_span && verdict != Verdict::Indistinguishable).then(|| {
        format!(
            "nu - mu lies in the unobservable span (residual {:e}) but the filters separate: \
             sup gap {sup:e}, entropy {:e} ± {:e}",
            algebraic.residual, run.entropy.estimate, run.entropy.std_err
        )
    });
    Ok(DistinguishabilityResult {
        sup_discrepancy: sup,
        sup_discrepancy_per_channel: run.sup_per_channel,
        entropy: run.entropy,
        verdict,
        thresholds: config.thresholds,
        budgets: Budgets {
            n_paths: config.n_paths,
            horizon: config.grid.horizon(),
            dt: config.grid.dt(),
            seed: config.seed,
        },
        algebraic,
        warning,
        trace: run.trace,
    })
}

/// `mu + eps v` for the largest `eps > 0` keeping every weight at least
/// `floor`; `None` if no positive step exists. `v` must sum to zero.
pub fn perturb_along(mu: &ProbabilityMeasure, v: &DVector<f64>, floor: f64) -> Option<ProbabilityMeasure> {
    let w = mu.weights();
    let mut eps = f64::INFINITY;
    for i in 0..w.len() {
        if v[i] < 0.0 {
            eps = eps.min((w[i] - floor) / -v[i]);
        }
    }
    if !(eps > 0.0 && eps.is_finite()) {
        return None;
    }
    let mut nu = w + v * eps;
    // Zero-sum directions leave the total at 1 up to rounding.
    let total = nu.sum();
    nu /= total;
    ProbabilityMeasure::new(nu).ok()
}

/// Discrepancy trace CSV: `t,discrepancy`.
pub fn write_trace_csv<W: Write>(out: W, grid: &TimeGrid, trace: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "discrepancy"])?;
    for (k, v) in trace.iter().enumerate() {
        w.write_record([grid.t(k).to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
