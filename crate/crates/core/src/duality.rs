//! The dual control system of the filter.
//!
//! For a control `U` adapted to the observations and a terminal function,
//! the backward SDE
//!
//! ```text
//! -dY_t = (A Y_t + H U_t + diag†(H V_t^T)) dt - V_t dZ_t,   Y_T = terminal
//! ```
//!
//! maps `(U, c)` to `Y_0`. Its adjoint is the Zakai equation, which gives the
//! identity `pi0(Y_0) = E~[ sum_k U_k^T sigma_k(h) dt ] + c pi0(1)` under the
//! reference measure. This module solves the BSDE (exactly for
//! deterministic controls, by least-squares Monte Carlo otherwise),
//! evaluates the forward side of the identity with the Zakai fundamental
//! matrix, and builds the experiments on top of both.
//!
//! The backward scheme is the discrete adjoint of the Euler–Maruyama Zakai
//! step: with `M_k = I + dt A + sum_c diag(H_c) dZ_k^c`,
//! `Y_k = E[M_k Y_{k+1} | F_k] + dt H U_k`, which is the explicit scheme
//! with `V_k = E[Y_{k+1} dZ_k^T | F_k] / dt`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::{AdaptedControl, ControlSpec, FeatureBasis};
use crate::error::{Error, Result};
use crate::filter::{check_fundamental, ZakaiStepper};
use crate::linalg::{numerical_rank_with_floor, Subspace};
use crate::model::{Model, ProbabilityMeasure, SignedMeasure};
use crate::rng::{derive_seed, stream, Purpose};
use crate::simulate::{physical_path, reference_path, ObservationPath, TimeGrid};
use crate::stats::{vector_estimate, Estimate};

/// Regression Gram matrices with a larger condition number are rejected.
pub const MAX_GRAM_CONDITION: f64 = 1e12;

/// Relative ridge: `lambda = RIDGE_SCALE * trace(Gram) / n_features`.
pub const RIDGE_SCALE: f64 = 1e-6;

/// Paths per block in parallel reductions; fixed so that sums do not depend
/// on the worker count.
const BLOCK: usize = 512;

/// Solution of the dual BSDE on a grid.
///
/// `Y_k` and `V_k` are stored as functions of the current observation:
/// `Y_k(z) = y_coef[k] phi(z)` (`d x F`) and `vec V_k(z) = v_coef[k] phi(z)`
/// (`d*m x F`, channel-major). Deterministic controls give coefficients on
/// the constant feature only and `V = 0`.
#[derive(Debug, Clone)]
pub struct BsdeSolution {
    pub grid: TimeGrid,
    pub basis: FeatureBasis,
    pub y_coef: Vec<DMatrix<f64>>,
    pub v_coef: Vec<DMatrix<f64>>,
    /// Standard error of the constant coefficient of `V_k`, per component.
    pub v_std_err: Vec<DMatrix<f64>>,
    pub y0: DVector<f64>,
    pub y0_std_err: DVector<f64>,
    /// Per-path realizations `Y_T + sum_k driver_k dt` whose mean is `y0`.
    /// The martingale increments are left out: `V_k` is fitted on the same
    /// `dZ_k`, so subtracting them in-sample biases the mean.
    pub pathwise_y0: Vec<DVector<f64>>,
    /// Covariance of `y0` from the regression coefficients, added to the
    /// pathwise variance in `y0_std_err` and `pair`.
    pub regression_cov: DMatrix<f64>,
    pub terminal: DVector<f64>,
}

impl BsdeSolution {
    pub fn y(&self, k: usize, z: &[f64]) -> DVector<f64> {
        &self.y_coef[k] * DVector::from_vec(self.basis.features(z))
    }

    /// `V_k(z)` as a `d x m` matrix.
    pub fn v(&self, k: usize, z: &[f64]) -> DMatrix<f64> {
        let d = self.terminal.len();
        let flat = &self.v_coef[k] * DVector::from_vec(self.basis.features(z));
        DMatrix::from_column_slice(d, self.basis.channels(), flat.as_slice())
    }

    /// `pi0(Y_0)` with the standard error of the pathwise estimate.
    pub fn pair(&self, pi0: &SignedMeasure) -> Estimate {
        if self.pathwise_y0.is_empty() {
            return Estimate {
                estimate: pi0.pair(&self.y0),
                std_err: 0.0,
            };
        }
        let samples: Vec<f64> = self.pathwise_y0.iter().map(|y| pi0.pair(y)).collect();
        let mut est = Estimate::from_samples(&samples);
        let w = pi0.weights();
        let extra = (w.transpose() * &self.regression_cov * w)[(0, 0)];
        est.std_err = (est.std_err.powi(2) + extra.max(0.0)).sqrt();
        est
    }
}

fn check_terminal(model: &Model, terminal: &DVector<f64>) -> Result<()> {
    if terminal.len() != model.d() {
        return Err(Error::DimensionMismatch(format!(
            "terminal has {} entries, model has {} states",
            terminal.len(),
            model.d()
        )));
    }
    if terminal.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("terminal condition"));
    }
    Ok(())
}

fn check_control(model: &Model, control: &AdaptedControl) -> Result<()> {
    if control.channels() != model.m() {
        return Err(Error::InvalidControl(format!(
            "control has {} channels, model has {}",
            control.channels(),
            model.m()
        )));
    }
    Ok(())
}

/// `-dY = (A Y + H U) dt`, `Y_T = terminal`, by explicit backward Euler.
/// For deterministic controls this is the exact BSDE solution with `V = 0`.
pub fn solve_backward_ode(model: &Model, control: &AdaptedControl, terminal: &DVector<f64>) -> Result<BsdeSolution> {
    check_control(model, control)?;
    check_terminal(model, terminal)?;
    if !control.is_deterministic() {
        return Err(Error::InvalidControl(
            "the backward ODE needs a deterministic control".into(),
        ));
    }
    let grid = *control.grid();
    let basis = FeatureBasis::new(model.m());
    let (d, m, f) = (model.d(), model.m(), basis.len());
    let dt = grid.dt();
    let a = model.generator();
    let h = model.observation();

    let mut y_coef = vec![DMatrix::zeros(d, f); grid.n_points()];
    let mut y = terminal.clone();
    y_coef[grid.n_steps()].set_column(0, &y);
    for k in (0..grid.n_steps()).rev() {
        let u = DVector::from_vec(control.deterministic_value(k).expect("deterministic"));
        y = &y + (a * &y + h * u) * dt;
        y_coef[k].set_column(0, &y);
    }
    Ok(BsdeSolution {
        grid,
        basis,
        y_coef,
        v_coef: vec![DMatrix::zeros(d * m, f); grid.n_steps()],
        v_std_err: vec![DMatrix::zeros(d, m); grid.n_steps()],
        y0: y,
        y0_std_err: DVector::zeros(d),
        pathwise_y0: Vec::new(),
        regression_cov: DMatrix::zeros(d, d),
        terminal: terminal.clone(),
    })
}

/// Per-block partial sums of a regression: Gram `F x F` and cross moments
/// `F x targets`.
fn regression_moments(features: &[f64], targets: &[f64], f: usize, t: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = features.len() / f;
    let blocks: Vec<(DMatrix<f64>, DMatrix<f64>)> = (0..n.div_ceil(BLOCK))
        .into_par_iter()
        .map(|b| {
            let mut g = DMatrix::zeros(f, f);
            let mut r = DMatrix::zeros(f, t);
            for p in b * BLOCK..((b + 1) * BLOCK).min(n) {
                let phi = &features[p * f..(p + 1) * f];
                let tg = &targets[p * t..(p + 1) * t];
                for i in 0..f {
                    for j in 0..f {
                        g[(i, j)] += phi[i] * phi[j];
                    }
                    for j in 0..t {
                        r[(i, j)] += phi[i] * tg[j];
                    }
                }
            }
            (g, r)
        })
        .collect();
    let mut g = DMatrix::zeros(f, f);
    let mut r = DMatrix::zeros(f, t);
    for (bg, br) in blocks {
        g += bg;
        r += br;
    }
    (g, r)
}

/// Ridge least squares with an unpenalized intercept; returns the
/// `targets x F` coefficient matrix.
fn ridge_solve(
    gram: &DMatrix<f64>,
    cross: &DMatrix<f64>,
    ridge: Option<f64>,
    step: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let f = gram.nrows();
    let lambda = ridge.unwrap_or_else(|| RIDGE_SCALE * gram.trace() / f as f64);
    let mut reg = gram.clone();
    for i in 1..f {
        reg[(i, i)] += lambda;
    }
    let eig = reg.clone().symmetric_eigenvalues();
    let (lo, hi) = eig
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &x| (lo.min(x), hi.max(x.abs())));
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(condition <= MAX_GRAM_CONDITION) {
        return Err(Error::SingularRegression { step, condition });
    }
    let chol = reg.cholesky().ok_or(Error::SingularRegression { step, condition })?;
    let inverse = chol.inverse();
    Ok(((&inverse * cross).transpose(), inverse))
}

/// Least-squares Monte Carlo solution of the dual BSDE on reference
/// (Brownian) observation paths.
///
/// Conditional expectations given `F_k` are regressions on the feature
/// library evaluated at `Z_{t_k}`. `ridge = None` uses the default
/// `1e-6 * trace(Gram) / n_features`.
pub fn solve_bsde_lsmc(
    model: &Model,
    control: &AdaptedControl,
    terminal: &DVector<f64>,
    n_paths: usize,
    seed: u64,
    ridge: Option<f64>,
) -> Result<BsdeSolution> {
    check_control(model, control)?;
    check_terminal(model, terminal)?;
    if n_paths < 2 {
        return Err(Error::InvalidArgument("LSMC needs at least two paths".into()));
    }
    let grid = *control.grid();
    let basis = FeatureBasis::new(model.m());
    let (d, m, f) = (model.d(), model.m(), basis.len());
    let dm = d * m;
    let n = grid.n_steps();
    let dt = grid.dt();
    let a = model.generator();
    let h = model.observation();

    let paths: Vec<ObservationPath> = (0..n_paths as u64)
        .into_par_iter()
        .map(|i| reference_path(&grid, m, seed, i).observation)
        .collect();

    // Y_{k+1} per path (flat, stride d) and the pathwise Y_0 accumulator.
    let mut y_next: Vec<f64> = (0..n_paths).flat_map(|_| terminal.iter().copied()).collect();
    let mut acc = y_next.clone();

    let mut y_coef = vec![DMatrix::zeros(d, f); grid.n_points()];
    y_coef[n].set_column(0, terminal);
    let mut v_coef = vec![DMatrix::zeros(dm, f); n];
    let mut v_std_err = vec![DMatrix::zeros(d, m); n];

    let mut features = vec![0.0; n_paths * f];
    let mut v_targets = vec![0.0; n_paths * dm];
    let mut y_targets = vec![0.0; n_paths * d];
    let mut controls = vec![0.0; n_paths * m];

    for k in (0..n).rev() {
        features
            .par_chunks_mut(f)
            .zip(v_targets.par_chunks_mut(dm))
            .zip(controls.par_chunks_mut(m))
            .enumerate()
            .for_each(|(p, ((phi, vt), u))| {
                let path = &paths[p];
                basis.evaluate(path.z(k), phi);
                control.value(k, path.z(k), u);
                let dz = path.dz(k);
                let y = &y_next[p * d..(p + 1) * d];
                for c in 0..m {
                    for i in 0..d {
                        vt[c * d + i] = y[i] * dz[c] / dt;
                    }
                }
            });

        let (gram, cross) = regression_moments(&features, &v_targets, f, dm);
        let (beta_v, inverse) = ridge_solve(&gram, &cross, ridge, k)?;

        // Residual variance of the V regression for the intercept's standard error.
        let resid: Vec<f64> = (0..n_paths)
            .into_par_iter()
            .flat_map_iter(|p| {
                let phi = DVector::from_column_slice(&features[p * f..(p + 1) * f]);
                let fit = &beta_v * phi;
                let vt = &v_targets[p * dm..(p + 1) * dm];
                (0..dm).map(move |j| (vt[j] - fit[j]).powi(2)).collect::<Vec<_>>()
            })
            .collect();
        let dof = (n_paths.saturating_sub(f)).max(1) as f64;
        let inv00 = inverse[(0, 0)];
        for j in 0..dm {
            let var: f64 = (0..n_paths).map(|p| resid[p * dm + j]).sum::<f64>() / dof;
            v_std_err[k][(j % d, j / d)] = (var * inv00).sqrt();
        }

        y_targets
            .par_chunks_mut(d)
            .zip(acc.par_chunks_mut(d))
            .enumerate()
            .for_each(|(p, (yt, acc))| {
                let phi = DVector::from_column_slice(&features[p * f..(p + 1) * f]);
                let v = &beta_v * phi;
                let y = DVector::from_column_slice(&y_next[p * d..(p + 1) * d]);
                let u = DVector::from_column_slice(&controls[p * m..(p + 1) * m]);
                let mut drift = a * &y + h * u;
                for i in 0..d {
                    for c in 0..m {
                        drift[i] += h[(i, c)] * v[c * d + i];
                    }
                }
                for i in 0..d {
                    yt[i] = y[i] + dt * drift[i];
                    acc[i] += dt * drift[i];
                }
            });

        let (gram, cross) = regression_moments(&features, &y_targets, f, d);
        let (beta_y, _) = ridge_solve(&gram, &cross, ridge, k)?;

        y_next.par_chunks_mut(d).enumerate().for_each(|(p, y)| {
            let phi = DVector::from_column_slice(&features[p * f..(p + 1) * f]);
            y.copy_from_slice((&beta_y * phi).as_slice());
        });
        y_coef[k] = beta_y;
        v_coef[k] = beta_v;
    }

    let pathwise_y0: Vec<DVector<f64>> = acc.chunks(d).map(DVector::from_column_slice).collect();
    let (y0, mut y0_std_err) = vector_estimate(&pathwise_y0);
    // The fitted V_k are shared by all paths, so their sampling error is
    // invisible in the pathwise spread. First-order propagation of the
    // intercept errors through the driver H∘V and the backward recursion.
    let step = DMatrix::identity(d, d) + a * dt;
    let mut propagator = DMatrix::<f64>::identity(d, d);
    let mut regression_cov = DMatrix::<f64>::zeros(d, d);
    for se in &v_std_err {
        let mut s2 = DVector::zeros(d);
        for i in 0..d {
            for c in 0..m {
                s2[i] += (dt * h[(i, c)] * se[(i, c)]).powi(2);
            }
        }
        regression_cov += &propagator * DMatrix::from_diagonal(&s2) * propagator.transpose();
        propagator = &propagator * &step;
    }
    for i in 0..d {
        y0_std_err[i] = (y0_std_err[i].powi(2) + regression_cov[(i, i)]).sqrt();
    }
    Ok(BsdeSolution {
        grid,
        basis,
        y_coef,
        v_coef,
        v_std_err,
        y0,
        y0_std_err,
        pathwise_y0,
        regression_cov,
        terminal: terminal.clone(),
    })
}

/// Backward ODE for deterministic controls, least-squares Monte Carlo otherwise.
pub fn solve_dual(
    model: &Model,
    control: &AdaptedControl,
    terminal: &DVector<f64>,
    n_paths: usize,
    seed: u64,
    ridge: Option<f64>,
) -> Result<BsdeSolution> {
    if control.is_deterministic() {
        solve_backward_ode(model, control, terminal)
    } else {
        solve_bsde_lsmc(model, control, terminal, n_paths, seed, ridge)
    }
}

/// Monte Carlo estimate of a vector with per-component standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorEstimate {
    pub mean: DVector<f64>,
    pub std_err: DVector<f64>,
    pub samples: Vec<DVector<f64>>,
}

/// `Y_0` from the forward side of the duality:
/// `Y0_i = E~[ c (Phi_T^T 1)_i + sum_k dt (Phi_k^T H U_k)_i ]`, with `Phi`
/// the Zakai fundamental matrix on reference paths.
pub fn y0_forward_representation(
    model: &Model,
    control: &AdaptedControl,
    c: f64,
    n_paths: usize,
    seed: u64,
) -> Result<VectorEstimate> {
    check_control(model, control)?;
    if n_paths == 0 {
        return Err(Error::InvalidArgument("need at least one path".into()));
    }
    let grid = *control.grid();
    let (d, m) = (model.d(), model.m());
    let h = model.observation();
    let ones = model.ones();
    let samples: Result<Vec<DVector<f64>>> = (0..n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let obs = reference_path(&grid, m, seed, i).observation;
            let mut stepper = ZakaiStepper::new(model, grid.dt());
            let mut phi = DMatrix::identity(d, d);
            let mut total = DVector::zeros(d);
            let mut u = vec![0.0; m];
            for k in 0..grid.n_steps() {
                control.value(k, obs.z(k), &mut u);
                let hu = h * DVector::from_column_slice(&u);
                total += phi.tr_mul(&hu) * grid.dt();
                stepper.step_matrix(&mut phi, obs.dz(k));
                check_fundamental(&phi, k + 1)?;
            }
            if c != 0.0 {
                total += phi.tr_mul(&ones) * c;
            }
            Ok(total)
        })
        .collect();
    let samples = samples?;
    let (mean, std_err) = vector_estimate(&samples);
    Ok(VectorEstimate { mean, std_err, samples })
}

/// Both sides of `pi0(L(U; c)) = <pi(h), U> + c pi0(1)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdjointCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
    pub std_err: f64,
    pub n_paths: usize,
    pub dt: f64,
}

/// `lhs = pi0 · Y_0` from the BSDE; `rhs` from signed Zakai propagation of
/// `pi0` on independent reference paths.
pub fn verify_adjoint_identity(
    model: &Model,
    pi0: &SignedMeasure,
    control: &AdaptedControl,
    c: f64,
    n_paths: usize,
    seed: u64,
) -> Result<AdjointCheck> {
    check_control(model, control)?;
    if pi0.len() != model.d() {
        return Err(Error::DimensionMismatch(format!(
            "pi0 has {} weights, model has {} states",
            pi0.len(),
            model.d()
        )));
    }
    if n_paths < 2 {
        return Err(Error::InvalidArgument("need at least two paths".into()));
    }
    let grid = *control.grid();
    let terminal = model.ones() * c;
    let solution = solve_dual(model, control, &terminal, n_paths, derive_seed(seed, 1), None)?;
    let lhs = solution.pair(pi0);
    let rhs = adjoint_rhs(model, pi0, control, c, n_paths, derive_seed(seed, 2))?;
    Ok(AdjointCheck {
        lhs: lhs.estimate,
        rhs: rhs.estimate,
        residual: (lhs.estimate - rhs.estimate).abs(),
        std_err: lhs.std_err.hypot(rhs.std_err),
        n_paths,
        dt: grid.dt(),
    })
}

/// `E~[ sum_k dt U_k^T sigma_k(h) ] + c pi0(1)`, `sigma` the signed Zakai flow of `pi0`.
pub fn adjoint_rhs(
    model: &Model,
    pi0: &SignedMeasure,
    control: &AdaptedControl,
    c: f64,
    n_paths: usize,
    seed: u64,
) -> Result<Estimate> {
    let grid = *control.grid();
    let m = model.m();
    let h = model.observation();
    let samples: Vec<f64> = (0..n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let obs = reference_path(&grid, m, seed, i).observation;
            let mut stepper = ZakaiStepper::new(model, grid.dt());
            let mut sigma = pi0.weights().clone();
            let mut u = vec![0.0; m];
            let mut total = 0.0;
            for k in 0..grid.n_steps() {
                control.value(k, obs.z(k), &mut u);
                let sh = h.tr_mul(&sigma);
                total += grid.dt() * sh.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>();
                stepper.step(&mut sigma, obs.dz(k));
            }
            total
        })
        .collect();
    let e = Estimate::from_samples(&samples);
    Ok(Estimate {
        estimate: e.estimate + c * pi0.total_mass(),
        std_err: e.std_err,
    })
}

/// Which random controls [`empirical_reachable_span`] draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControlFamily {
    Feedback,
    Deterministic,
}

/// How [`empirical_reachable_span`] estimates each `Y_0`.
///
/// The forward representation weights paths by the Zakai fundamental matrix,
/// whose entries have variance growing like `exp(|h|^2 T)`; the dual BSDE
/// regresses under the reference measure and is far less noisy when `h` is large.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpanEstimator {
    Bsde,
    Forward,
}

/// Multiple of the Monte Carlo noise floor a singular value must exceed.
pub const SPAN_NOISE_MULTIPLE: f64 = 3.0;

#[derive(Debug, Clone, Serialize)]
pub struct ReachableSpan {
    pub rank: usize,
    pub basis: Subspace,
    pub singular_values: Vec<f64>,
    /// Estimated spectral norm of the Monte Carlo error matrix of the `Y_0`
    /// estimates: largest row norm plus largest column norm of the standard errors.
    pub noise_floor: f64,
    /// `noise_floor` divided by the smallest retained singular value: a bound
    /// on the angular error of `basis`.
    pub relative_noise_floor: f64,
    #[serde(skip)]
    pub y0: Vec<DVector<f64>>,
}

/// For a matrix with independent centered entries of scales `s_ij`, the
/// spectral norm is of order `max_i |s_i.| + max_j |s_.j|`.
fn spectral_noise_bound(se: &[DVector<f64>]) -> f64 {
    let row = se.iter().map(|r| r.norm()).fold(0.0, f64::max);
    let d = se.first().map_or(0, |r| r.len());
    let col = (0..d)
        .map(|j| se.iter().map(|r| r[j] * r[j]).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    row + col
}

/// Draws random controls and terminal constants, estimates `Y_0` for each,
/// and ranks the collection against the Monte Carlo noise floor.
#[allow(clippy::too_many_arguments)]
pub fn empirical_reachable_span(
    model: &Model,
    grid: &TimeGrid,
    n_controls: usize,
    n_paths: usize,
    seed: u64,
    tol: f64,
    family: ControlFamily,
    estimator: SpanEstimator,
) -> Result<ReachableSpan> {
    use rand::Rng;
    if n_controls < model.d() {
        return Err(Error::InvalidArgument(format!(
            "need at least d = {} controls, got {n_controls}",
            model.d()
        )));
    }
    let mut y0 = Vec::with_capacity(n_controls);
    let mut se = Vec::with_capacity(n_controls);
    for i in 0..n_controls {
        let mut rng = stream(seed, Purpose::Controls, i as u64);
        let control = match family {
            ControlFamily::Feedback => {
                AdaptedControl::random_feedback(grid, model.m(), crate::control::DEFAULT_CLIP, &mut rng)
            }
            ControlFamily::Deterministic => AdaptedControl::random_deterministic(grid, model.m(), &mut rng),
        };
        let c: f64 = rng.random_range(-1.0..1.0);
        // Y_0 is affine in c with slope 1 exactly, so the terminal part is
        // added without Monte Carlo noise.
        let sub_seed = derive_seed(seed, i as u64);
        let zero = DVector::zeros(model.d());
        let (mean, std_err) = match estimator {
            SpanEstimator::Bsde => {
                let sol = solve_dual(model, &control, &zero, n_paths, sub_seed, None)?;
                (sol.y0, sol.y0_std_err)
            }
            SpanEstimator::Forward => {
                let est = y0_forward_representation(model, &control, 0.0, n_paths, sub_seed)?;
                (est.mean, est.std_err)
            }
        };
        se.push(std_err);
        y0.push(mean + model.ones() * c);
    }
    let noise_floor = spectral_noise_bound(&se);
    let (rank, basis, singular_values) = numerical_rank_with_floor(&y0, tol, SPAN_NOISE_MULTIPLE * noise_floor);
    let relative_noise_floor = if rank > 0 {
        noise_floor / singular_values[rank - 1]
    } else {
        f64::INFINITY
    };
    Ok(ReachableSpan {
        rank,
        basis,
        singular_values,
        noise_floor,
        relative_noise_floor,
        y0,
    })
}

/// The estimator `S_T = mu(Y_0) - sum_k U_k^T dZ_k` of `f(X_T)` on physical paths.
#[derive(Debug, Clone)]
pub struct EstimatorResult {
    pub y0: DVector<f64>,
    pub samples: Vec<f64>,
    /// `E|S_T - f(X_T)|^2`.
    pub mse: Estimate,
}

pub fn estimator_terminal(
    model: &Model,
    mu: &ProbabilityMeasure,
    control: &AdaptedControl,
    terminal: &DVector<f64>,
    n_paths: usize,
    seed: u64,
) -> Result<EstimatorResult> {
    check_control(model, control)?;
    check_terminal(model, terminal)?;
    mu.check_dim(model.d())?;
    if n_paths < 2 {
        return Err(Error::InvalidArgument("need at least two paths".into()));
    }
    let grid = *control.grid();
    let solution = solve_dual(model, control, terminal, n_paths, derive_seed(seed, 1), None)?;
    let prior_mean = mu.pair(&solution.y0);
    let m = model.m();
    let sim_seed = derive_seed(seed, 2);
    let pairs: Vec<(f64, f64)> = (0..n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let path = physical_path(model, mu, &grid, sim_seed, i);
            let obs = &path.observation;
            let mut u = vec![0.0; m];
            let mut integral = 0.0;
            for k in 0..grid.n_steps() {
                control.value(k, obs.z(k), &mut u);
                integral += u.iter().zip(obs.dz(k)).map(|(a, b)| a * b).sum::<f64>();
            }
            let s = prior_mean - integral;
            let x_t = *path.states.as_ref().expect("physical path").last().expect("non-empty");
            (s, (s - terminal[x_t]).powi(2))
        })
        .collect();
    let samples: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let errors: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    Ok(EstimatorResult {
        y0: solution.y0,
        samples,
        mse: Estimate::from_samples(&errors),
    })
}

fn default_paths() -> usize {
    20_000
}

fn default_horizon() -> f64 {
    1.0
}

fn default_dt() -> f64 {
    1e-3
}

/// Duality experiment configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub control: ControlSpec,
    #[serde(default)]
    pub c: f64,
    #[serde(default)]
    pub pi0: Option<Vec<f64>>,
    #[serde(default = "default_paths")]
    pub n_paths: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
}
