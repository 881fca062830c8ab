//! Sample paths of the hidden chain and of the observation process
//! `dZ = h(X) dt + dW`, under either the physical measure or the reference
//! measure (where `Z` is a standard Wiener process).

use std::io::Write;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{Model, ProbabilityMeasure};
use crate::rng::{stream, Purpose};

/// Uniform grid `t_k = k dt`, `k = 0..=n_steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    dt: f64,
    n_steps: usize,
    requested_horizon: f64,
}

impl TimeGrid {
    /// The horizon is rounded to the nearest positive multiple of `dt`; the
    /// requested value is kept in [`TimeGrid::requested_horizon`].
    pub fn new(horizon: f64, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidGrid(format!("step must be positive, got {dt}")));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidGrid(format!("horizon must be positive, got {horizon}")));
        }
        let n_steps = (horizon / dt).round().max(1.0);
        if n_steps > 1e9 {
            return Err(Error::InvalidGrid(format!("{n_steps} steps is too many")));
        }
        let n_steps = n_steps as usize;
        Ok(Self {
            horizon: n_steps as f64 * dt,
            dt,
            n_steps,
            requested_horizon: horizon,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn requested_horizon(&self) -> f64 {
        self.requested_horizon
    }

    /// Whether the horizon had to be moved onto the grid.
    pub fn was_adjusted(&self) -> bool {
        (self.horizon - self.requested_horizon).abs() > 1e-12 * self.requested_horizon
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_points(&self) -> usize {
        self.n_steps + 1
    }

    pub fn t(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }
}

/// Observation path `Z` on a grid (`Z_0 = 0`) with its increments, stored
/// flat with stride `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationPath {
    m: usize,
    z: Vec<f64>,
    dz: Vec<f64>,
}

impl ObservationPath {
    /// Builds `Z` by cumulative summation of the increments.
    pub fn from_increments(m: usize, dz: Vec<f64>) -> Self {
        assert!(m > 0 && dz.len().is_multiple_of(m), "increments must have stride m");
        let n = dz.len() / m;
        let mut z = vec![0.0; (n + 1) * m];
        for k in 0..n {
            for c in 0..m {
                z[(k + 1) * m + c] = z[k * m + c] + dz[k * m + c];
            }
        }
        Self { m, z, dz }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n_steps(&self) -> usize {
        self.dz.len() / self.m
    }

    /// `Z_{t_k}`.
    pub fn z(&self, k: usize) -> &[f64] {
        &self.z[k * self.m..(k + 1) * self.m]
    }

    /// `Z_{t_{k+1}} - Z_{t_k}`.
    pub fn dz(&self, k: usize) -> &[f64] {
        &self.dz[k * self.m..(k + 1) * self.m]
    }

    pub fn terminal(&self) -> &[f64] {
        self.z(self.n_steps())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MeasureTag {
    /// Generated under the physical measure with the given prior.
    Physical(ProbabilityMeasure),
    /// Pure Brownian observation under the reference measure.
    Reference,
}

/// One Monte Carlo sample of `(X, Z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBundle {
    pub grid: TimeGrid,
    /// State index at each grid point; `None` for reference paths.
    pub states: Option<Vec<usize>>,
    pub observation: ObservationPath,
    pub measure: MeasureTag,
}

fn sample_index<R: Rng + ?Sized>(weights: &[f64], total: f64, rng: &mut R) -> usize {
    let u: f64 = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(weights.len() - 1)
}

/// Holding time and destination of the next jump out of `state`, or `None`
/// if the state is absorbing.
pub fn next_jump<R: Rng + ?Sized>(model: &Model, state: usize, rng: &mut R) -> Option<(f64, usize)> {
    let a = model.generator();
    let rate = -a[(state, state)];
    if rate <= 0.0 {
        return None;
    }
    let hold: f64 = rng.sample::<f64, _>(Exp1) / rate;
    let weights: Vec<f64> = (0..model.d())
        .map(|j| if j == state { 0.0 } else { a[(state, j)] })
        .collect();
    let dest = sample_index(&weights, rate, rng);
    Some((hold, dest))
}

/// Exact event-driven chain simulation, recorded at the grid points.
pub fn sample_ctmc<R: Rng + ?Sized>(
    model: &Model,
    mu: &ProbabilityMeasure,
    grid: &TimeGrid,
    rng: &mut R,
) -> Vec<usize> {
    let mut state = sample_index(mu.weights().as_slice(), 1.0, rng);
    let mut pending = next_jump(model, state, rng);
    let mut clock = 0.0;
    let mut path = Vec::with_capacity(grid.n_points());
    for k in 0..grid.n_points() {
        let tk = grid.t(k);
        while let Some((hold, dest)) = pending {
            if clock + hold > tk {
                break;
            }
            clock += hold;
            state = dest;
            pending = next_jump(model, state, rng);
        }
        path.push(state);
    }
    path
}

/// `dZ_k = H_{X_{t_k}} dt + sqrt(dt) xi_k` with i.i.d. standard normal `xi_k`.
pub fn synthesize_observation<R: Rng + ?Sized>(
    model: &Model,
    states: &[usize],
    grid: &TimeGrid,
    rng: &mut R,
) -> ObservationPath {
    let m = model.m();
    let h = model.observation();
    let dt = grid.dt();
    let sqdt = dt.sqrt();
    let mut dz = Vec::with_capacity(grid.n_steps() * m);
    for &x in states.iter().take(grid.n_steps()) {
        for c in 0..m {
            let xi: f64 = rng.sample(StandardNormal);
            dz.push(h[(x, c)] * dt + sqdt * xi);
        }
    }
    ObservationPath::from_increments(m, dz)
}

/// Brownian observation path: the law of `Z` under the reference measure.
pub fn sample_reference_brownian<R: Rng + ?Sized>(grid: &TimeGrid, m: usize, rng: &mut R) -> ObservationPath {
    let sqdt = grid.dt().sqrt();
    let dz = (0..grid.n_steps() * m)
        .map(|_| sqdt * rng.sample::<f64, _>(StandardNormal))
        .collect();
    ObservationPath::from_increments(m, dz)
}

/// Path `index` under the physical measure with prior `mu`.
pub fn physical_path(model: &Model, mu: &ProbabilityMeasure, grid: &TimeGrid, seed: u64, index: u64) -> PathBundle {
    let states = sample_ctmc(model, mu, grid, &mut stream(seed, Purpose::Ctmc, index));
    let observation = synthesize_observation(model, &states, grid, &mut stream(seed, Purpose::Observation, index));
    PathBundle {
        grid: *grid,
        states: Some(states),
        observation,
        measure: MeasureTag::Physical(mu.clone()),
    }
}

/// Path `index` under the reference measure.
pub fn reference_path(grid: &TimeGrid, m: usize, seed: u64, index: u64) -> PathBundle {
    PathBundle {
        grid: *grid,
        states: None,
        observation: sample_reference_brownian(grid, m, &mut stream(seed, Purpose::Reference, index)),
        measure: MeasureTag::Reference,
    }
}

/// `n` physical paths, in index order regardless of the worker count.
pub fn physical_paths(
    model: &Model,
    mu: &ProbabilityMeasure,
    grid: &TimeGrid,
    n: usize,
    seed: u64,
) -> Result<Vec<PathBundle>> {
    mu.check_dim(model.d())?;
    Ok((0..n as u64)
        .into_par_iter()
        .map(|i| physical_path(model, mu, grid, seed, i))
        .collect())
}

pub fn reference_paths(grid: &TimeGrid, m: usize, n: usize, seed: u64) -> Vec<PathBundle> {
    (0..n as u64)
        .into_par_iter()
        .map(|i| reference_path(grid, m, seed, i))
        .collect()
}

/// Law of `X_T`: the row vector `mu^T exp(A T)`.
pub fn marginal_law(model: &Model, mu: &ProbabilityMeasure, t: f64) -> Result<DVector<f64>> {
    let e = crate::linalg::matrix_exponential(model.generator(), t)?;
    Ok(e.transpose() * mu.weights())
}

/// Long-format trajectory CSV: `path_id,t,state,Z_1..Z_m`.
pub fn write_paths_csv<W: Write>(out: W, paths: &[PathBundle]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let m = paths.first().map_or(1, |p| p.observation.m());
    let mut header = vec!["path_id".to_string(), "t".into(), "state".into()];
    header.extend((1..=m).map(|c| format!("Z_{c}")));
    w.write_record(&header)?;
    for (id, p) in paths.iter().enumerate() {
        for k in 0..p.grid.n_points() {
            let mut row = vec![id.to_string(), p.grid.t(k).to_string()];
            row.push(p.states.as_ref().map_or(String::new(), |s| s[k].to_string()));
            row.extend(p.observation.z(k).iter().map(f64::to_string));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::model_from_rows;
    use crate::stats::Estimate;

    fn m1() -> Model {
        model_from_rows(&[vec![-1.0, 1.0], vec![1.0, -1.0]], &[vec![1.0], vec![-1.0]], None).unwrap()
    }

    fn m2() -> Model {
        model_from_rows(
            &[vec![-1.0, 0.0, 1.0], vec![0.0, -1.0, 1.0], vec![0.5, 0.5, -1.0]],
            &[vec![1.0], vec![1.0], vec![0.0]],
            None,
        )
        .unwrap()
    }

    #[test]
    fn grid_rounds_horizon() {
        let g = TimeGrid::new(1.0, 1e-3).unwrap();
        assert_eq!(g.n_steps(), 1000);
        assert!(!g.was_adjusted());
        let g = TimeGrid::new(1.0, 0.3).unwrap();
        assert_eq!(g.n_steps(), 3);
        assert!((g.horizon() - 0.9).abs() < 1e-15);
        assert!(g.was_adjusted());
        assert!(TimeGrid::new(1.0, 0.0).is_err());
        assert!(TimeGrid::new(-1.0, 0.1).is_err());
    }

    #[test]
    fn absorbing_chain_stays_put() {
        let m = model_from_rows(&[vec![0.0, 0.0], vec![0.0, 0.0]], &[vec![2.0], vec![0.0]], None).unwrap();
        let grid = TimeGrid::new(5.0, 0.01).unwrap();
        let path = sample_ctmc(
            &m,
            &ProbabilityMeasure::dirac(2, 0),
            &grid,
            &mut stream(1, Purpose::Ctmc, 0),
        );
        assert!(path.iter().all(|&s| s == 0));
    }

    #[test]
    fn symmetric_chain_equilibrates() {
        let grid = TimeGrid::new(50.0, 0.01).unwrap();
        let mu = ProbabilityMeasure::dirac(2, 0);
        let n = 10_000;
        let samples: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|i| {
                let p = sample_ctmc(&m1(), &mu, &grid, &mut stream(5, Purpose::Ctmc, i));
                f64::from(*p.last().unwrap() == 1)
            })
            .collect();
        let e = Estimate::from_samples(&samples);
        assert!((e.estimate - 0.5).abs() < 3.0 * e.std_err, "{e:?}");
    }

    #[test]
    fn jump_destinations_follow_rates() {
        let m = m2();
        let n = 10_000;
        let mut to_first = 0;
        for i in 0..n {
            let (hold, dest) = next_jump(&m, 2, &mut stream(9, Purpose::Ctmc, i)).unwrap();
            assert!(hold > 0.0);
            assert_ne!(dest, 2);
            to_first += usize::from(dest == 0);
        }
        let p = to_first as f64 / n as f64;
        let sigma = (0.25 / n as f64).sqrt();
        assert!((p - 0.5).abs() < 3.0 * sigma);
    }

    #[test]
    fn driftless_increments_have_variance_dt() {
        let m = model_from_rows(&[vec![0.0]], &[vec![0.0]], None).unwrap();
        let grid = TimeGrid::new(100.0, 1e-3).unwrap();
        let states = vec![0; grid.n_points()];
        let obs = synthesize_observation(&m, &states, &grid, &mut stream(3, Purpose::Observation, 0));
        let sq: Vec<f64> = (0..grid.n_steps()).map(|k| obs.dz(k)[0].powi(2)).collect();
        let e = Estimate::from_samples(&sq);
        assert!((e.estimate - 1e-3).abs() < 3.0 * e.std_err);
    }

    #[test]
    fn constant_drift_mean() {
        let m = model_from_rows(&[vec![0.0, 0.0], vec![0.0, 0.0]], &[vec![2.0], vec![0.0]], None).unwrap();
        let grid = TimeGrid::new(1.0, 1e-2).unwrap();
        let mu = ProbabilityMeasure::dirac(2, 0);
        let paths = physical_paths(&m, &mu, &grid, 10_000, 4).unwrap();
        let zt: Vec<f64> = paths.iter().map(|p| p.observation.terminal()[0]).collect();
        let e = Estimate::from_samples(&zt);
        assert!((e.estimate - 2.0).abs() < 3.0 * e.std_err);
    }

    #[test]
    fn increments_accumulate_exactly() {
        let grid = TimeGrid::new(1.0, 1e-3).unwrap();
        let p = physical_path(&m1(), &ProbabilityMeasure::dirac(2, 0), &grid, 1, 0);
        let mut z = 0.0;
        for k in 0..grid.n_steps() {
            assert_eq!(p.observation.z(k)[0], z);
            z += p.observation.dz(k)[0];
        }
        assert_eq!(p.observation.terminal()[0], z);
    }

    #[test]
    fn reference_paths_are_brownian() {
        let grid = TimeGrid::new(1.0, 1e-2).unwrap();
        let paths = reference_paths(&grid, 2, 10_000, 12);
        let z1: Vec<f64> = paths.iter().map(|p| p.observation.terminal()[0]).collect();
        let z2: Vec<f64> = paths.iter().map(|p| p.observation.terminal()[1]).collect();
        let mean = Estimate::from_samples(&z1);
        assert!(mean.estimate.abs() < 3.0 * mean.std_err);
        let var = Estimate::from_samples(&z1.iter().map(|x| x * x).collect::<Vec<_>>());
        assert!((var.estimate - 1.0).abs() < 3.0 * var.std_err);
        let cross = Estimate::from_samples(&z1.iter().zip(&z2).map(|(a, b)| a * b).collect::<Vec<_>>());
        assert!(cross.estimate.abs() < 3.0 * cross.std_err);
        assert!(paths
            .iter()
            .all(|p| p.states.is_none() && p.measure == MeasureTag::Reference));
    }

    #[test]
    fn paths_are_deterministic() {
        let grid = TimeGrid::new(1.0, 1e-2).unwrap();
        let mu = ProbabilityMeasure::uniform(3);
        let a = physical_paths(&m2(), &mu, &grid, 8, 99).unwrap();
        let b = physical_paths(&m2(), &mu, &grid, 8, 99).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[5], physical_path(&m2(), &mu, &grid, 99, 5));
    }

    #[test]
    fn csv_layout() {
        let grid = TimeGrid::new(0.02, 0.01).unwrap();
        let p = physical_path(&m1(), &ProbabilityMeasure::dirac(2, 0), &grid, 1, 0);
        let mut buf = Vec::new();
        write_paths_csv(&mut buf, &[p]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "path_id,t,state,Z_1");
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("0,0,"));
    }
}
