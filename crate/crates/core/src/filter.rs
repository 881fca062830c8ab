//! Zakai and Wonham filters for a finite-state model.
//!
//! The Zakai equation is a linear SDE on `R^d`; with the generator acting
//! on functions, the un-normalized conditional measure evolves by
//!
//! ```text
//! sigma_{k+1} = sigma_k + dt A^T sigma_k + sum_c diag(H_c) sigma_k dZ_k^c
//! ```
//!
//! (Euler–Maruyama). In probability mode the vector is renormalized after
//! every step and the removed log-mass is kept in a ledger; in signed mode
//! the raw linear recursion is used, which is what duality computations
//! and unobservable directions need.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{Model, ProbabilityMeasure, SignedMeasure};
use crate::simulate::{ObservationPath, PathBundle, TimeGrid};

/// Renormalization gives up below this mass.
pub const MIN_MASS: f64 = 1e-300;

/// Fundamental-matrix entries above this magnitude are reported as overflow.
pub const FUNDAMENTAL_LIMIT: f64 = 1e300;

/// Clamped steps allowed, as a fraction of all steps.
pub const MAX_CLAMP_FRACTION: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZakaiMode {
    /// Nonnegative measure: clamp, renormalize and track log-mass.
    Probability,
    /// Raw linear recursion, signed measures allowed.
    Signed,
}

/// One Euler–Maruyama step of the Zakai equation, allocation-free.
#[derive(Debug, Clone)]
pub struct ZakaiStepper {
    at_dt: DMatrix<f64>,
    h: DMatrix<f64>,
    scratch: DVector<f64>,
}

impl ZakaiStepper {
    pub fn new(model: &Model, dt: f64) -> Self {
        Self {
            at_dt: model.generator().transpose() * dt,
            h: model.observation().clone(),
            scratch: DVector::zeros(model.d()),
        }
    }

    /// `sigma <- sigma + dt A^T sigma + sum_c diag(H_c) sigma dz_c`.
    pub fn step(&mut self, sigma: &mut DVector<f64>, dz: &[f64]) {
        self.scratch.gemv(1.0, &self.at_dt, sigma, 0.0);
        for i in 0..sigma.len() {
            let gain: f64 = dz.iter().enumerate().map(|(c, z)| self.h[(i, c)] * z).sum();
            self.scratch[i] += sigma[i] * (1.0 + gain);
        }
        std::mem::swap(sigma, &mut self.scratch);
    }

    /// Applies [`ZakaiStepper::step`] to every column of `phi`.
    pub fn step_matrix(&mut self, phi: &mut DMatrix<f64>, dz: &[f64]) {
        let mut col = DVector::zeros(phi.nrows());
        for j in 0..phi.ncols() {
            col.copy_from(&phi.column(j));
            self.step(&mut col, dz);
            phi.set_column(j, &col);
        }
    }
}

/// Output of a Zakai/Wonham run; the true un-normalized measure at step `k`
/// is `exp(log_norm[k]) * sigma[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterTrajectory {
    pub grid: TimeGrid,
    pub mode: ZakaiMode,
    pub sigma: Vec<DVector<f64>>,
    /// Normalized filter; `None` in signed mode.
    pub pi: Option<Vec<DVector<f64>>>,
    pub log_norm: Vec<f64>,
    pub clamp_events: usize,
}

impl FilterTrajectory {
    /// `pi_k(h_c)` for every grid point, probability mode only.
    pub fn pi_h(&self, model: &Model, c: usize) -> Option<Vec<f64>> {
        let h = model.channel(c);
        self.pi.as_ref().map(|p| p.iter().map(|v| v.dot(&h)).collect())
    }

    /// Un-normalized `sigma_k(f)` including the log-mass ledger.
    pub fn sigma_of(&self, k: usize, f: &DVector<f64>) -> f64 {
        self.log_norm[k].exp() * self.sigma[k].dot(f)
    }
}

/// Zakai propagation from `init` along `obs`; nonnegative initial measures
/// run in probability mode, signed ones in signed mode.
pub fn propagate_zakai(
    model: &Model,
    init: &SignedMeasure,
    grid: &TimeGrid,
    obs: &ObservationPath,
) -> Result<FilterTrajectory> {
    let mode = if init.is_nonnegative() {
        ZakaiMode::Probability
    } else {
        ZakaiMode::Signed
    };
    propagate_zakai_mode(model, init, grid, obs, mode)
}

pub fn propagate_zakai_mode(
    model: &Model,
    init: &SignedMeasure,
    grid: &TimeGrid,
    obs: &ObservationPath,
    mode: ZakaiMode,
) -> Result<FilterTrajectory> {
    check_inputs(model, init.len(), grid, obs)?;
    let n = grid.n_steps();
    let mut stepper = ZakaiStepper::new(model, grid.dt());
    let mut sigma = init.weights().clone();
    let mut sigmas = Vec::with_capacity(n + 1);
    let mut log_norm = Vec::with_capacity(n + 1);
    let mut clamp_events = 0;
    let mut ledger = 0.0;

    if mode == ZakaiMode::Probability {
        if !init.is_nonnegative() {
            return Err(Error::InvalidMeasure(
                "probability mode needs a nonnegative initial measure".into(),
            ));
        }
        let mass = init.total_mass();
        if !(mass >= MIN_MASS) {
            return Err(Error::DegenerateMass { step: 0, mass });
        }
    }
    sigmas.push(sigma.clone());
    log_norm.push(0.0);

    for k in 0..n {
        stepper.step(&mut sigma, obs.dz(k));
        if mode == ZakaiMode::Probability {
            for x in sigma.iter_mut() {
                if *x < 0.0 {
                    *x = 0.0;
                    clamp_events += 1;
                }
            }
            let mass = sigma.sum();
            if !(mass >= MIN_MASS) {
                return Err(Error::DegenerateMass { step: k + 1, mass });
            }
            sigma /= mass;
            ledger += mass.ln();
        }
        sigmas.push(sigma.clone());
        log_norm.push(ledger);
    }
    if clamp_events as f64 > MAX_CLAMP_FRACTION * n as f64 {
        return Err(Error::ExcessiveClamping {
            events: clamp_events,
            steps: n,
        });
    }

    let pi = match mode {
        ZakaiMode::Probability => Some(normalize(&sigmas)?),
        ZakaiMode::Signed => None,
    };
    Ok(FilterTrajectory {
        grid: *grid,
        mode,
        sigma: sigmas,
        pi,
        log_norm,
        clamp_events,
    })
}

/// Wonham filter from a prior along an observation path.
pub fn wonham(
    model: &Model,
    prior: &ProbabilityMeasure,
    grid: &TimeGrid,
    obs: &ObservationPath,
) -> Result<FilterTrajectory> {
    propagate_zakai_mode(model, &prior.to_signed(), grid, obs, ZakaiMode::Probability)
}

fn check_inputs(model: &Model, len: usize, grid: &TimeGrid, obs: &ObservationPath) -> Result<()> {
    if len != model.d() {
        return Err(Error::DimensionMismatch(format!(
            "initial measure has {len} weights, model has {} states",
            model.d()
        )));
    }
    if obs.m() != model.m() {
        return Err(Error::DimensionMismatch(format!(
            "observation path has {} channels, model has {}",
            obs.m(),
            model.m()
        )));
    }
    if obs.n_steps() != grid.n_steps() {
        return Err(Error::DimensionMismatch(format!(
            "observation path has {} steps, grid has {}",
            obs.n_steps(),
            grid.n_steps()
        )));
    }
    Ok(())
}

/// `pi_k = sigma_k / sigma_k(1)`.
pub fn normalize(sigma: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
    sigma
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let mass = s.sum();
            if !(mass > 0.0 && mass.is_finite()) {
                return Err(Error::ZeroMass(k));
            }
            Ok(s / mass)
        })
        .collect()
}

/// `Phi_{0,t_k}` for every grid point: the Zakai flow of the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct FundamentalMatrixPath {
    pub grid: TimeGrid,
    pub phi: Vec<DMatrix<f64>>,
}

pub fn propagate_fundamental(model: &Model, grid: &TimeGrid, obs: &ObservationPath) -> Result<FundamentalMatrixPath> {
    check_inputs(model, model.d(), grid, obs)?;
    let d = model.d();
    let mut stepper = ZakaiStepper::new(model, grid.dt());
    let mut phi = DMatrix::identity(d, d);
    let mut out = Vec::with_capacity(grid.n_points());
    out.push(phi.clone());
    for k in 0..grid.n_steps() {
        stepper.step_matrix(&mut phi, obs.dz(k));
        check_fundamental(&phi, k + 1)?;
        out.push(phi.clone());
    }
    Ok(FundamentalMatrixPath { grid: *grid, phi: out })
}

pub(crate) fn check_fundamental(phi: &DMatrix<f64>, step: usize) -> Result<()> {
    if phi.iter().any(|x| !(x.abs() <= FUNDAMENTAL_LIMIT)) {
        return Err(Error::FundamentalOverflow { step });
    }
    Ok(())
}

/// Largest violation of `sigma_k(1) = 1 + sum_{j<k} sigma_j(h)^T dZ_j` over
/// grid points and paths, with `sigma` propagated in signed mode from `mu`.
pub fn mass_identity_check(model: &Model, mu: &ProbabilityMeasure, paths: &[PathBundle]) -> Result<f64> {
    use rayon::prelude::*;
    mu.check_dim(model.d())?;
    let h = model.observation();
    let per_path: Result<Vec<f64>> = paths
        .par_iter()
        .map(|p| {
            let grid = &p.grid;
            check_inputs(model, model.d(), grid, &p.observation)?;
            let mut stepper = ZakaiStepper::new(model, grid.dt());
            let mut sigma = mu.weights().clone();
            let mut integral = 0.0;
            let mut worst: f64 = 0.0;
            for k in 0..grid.n_steps() {
                let dz = p.observation.dz(k);
                let sh = h.tr_mul(&sigma);
                integral += sh.iter().zip(dz).map(|(a, b)| a * b).sum::<f64>();
                stepper.step(&mut sigma, dz);
                worst = worst.max((sigma.sum() - 1.0 - integral).abs());
            }
            Ok(worst)
        })
        .collect();
    Ok(per_path?.into_iter().fold(0.0, f64::max))
}

/// Long-format filter CSV: `path_id,t,sigma_1..sigma_d,pi_1..pi_d,log_norm`.
/// `pi` columns are empty for signed runs.
pub fn write_filter_csv<W: Write>(out: W, runs: &[FilterTrajectory]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let d = runs.first().map_or(0, |r| r.sigma[0].len());
    let mut header = vec!["path_id".to_string(), "t".into()];
    header.extend((1..=d).map(|i| format!("sigma_{i}")));
    header.extend((1..=d).map(|i| format!("pi_{i}")));
    header.push("log_norm".into());
    w.write_record(&header)?;
    for (id, run) in runs.iter().enumerate() {
        for k in 0..run.sigma.len() {
            let mut row = vec![id.to_string(), run.grid.t(k).to_string()];
            row.extend(run.sigma[k].iter().map(f64::to_string));
            match &run.pi {
                Some(pi) => row.extend(pi[k].iter().map(f64::to_string)),
                None => row.extend(std::iter::repeat_n(String::new(), d)),
            }
            row.push(run.log_norm[k].to_string());
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}
