//! Adapted control signals for the dual BSDE.
//!
//! A control is either a deterministic table (one `m`-vector per step) or a
//! feedback rule `U_k = theta_k · phi(clip(Z_{t_k}))` on the regression
//! feature library `phi`. The rule at step `k` only ever sees `Z_{t_k}`,
//! which makes it adapted to the observation filtration by construction.

use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simulate::TimeGrid;

/// Default box for feedback features.
pub const DEFAULT_CLIP: f64 = 5.0;

/// Polynomial features of the current observation: `1`, each `z_c`, and
/// every product `z_a z_b` with `a <= b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureBasis {
    m: usize,
}

impl FeatureBasis {
    pub fn new(m: usize) -> Self {
        Self { m }
    }

    pub fn channels(&self) -> usize {
        self.m
    }

    pub fn len(&self) -> usize {
        1 + self.m + self.m * (self.m + 1) / 2
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn evaluate(&self, z: &[f64], out: &mut [f64]) {
        debug_assert_eq!(z.len(), self.m);
        debug_assert_eq!(out.len(), self.len());
        out[0] = 1.0;
        out[1..=self.m].copy_from_slice(z);
        let mut k = 1 + self.m;
        for a in 0..self.m {
            for b in a..self.m {
                out[k] = z[a] * z[b];
                k += 1;
            }
        }
    }

    pub fn features(&self, z: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.evaluate(z, &mut out);
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ControlKind {
    /// `n_steps x m` table, row `k` used on `[t_k, t_{k+1})`.
    Deterministic(DMatrix<f64>),
    /// `theta[k]` is `m x n_features`; a single entry applies to every step.
    Feedback { theta: Vec<DMatrix<f64>>, clip: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedControl {
    grid: TimeGrid,
    m: usize,
    kind: ControlKind,
    pub description: String,
}

impl AdaptedControl {
    pub fn zero(grid: &TimeGrid, m: usize) -> Self {
        Self {
            grid: *grid,
            m,
            kind: ControlKind::Deterministic(DMatrix::zeros(grid.n_steps(), m)),
            description: "zero".into(),
        }
    }

    pub fn constant(grid: &TimeGrid, value: &[f64]) -> Result<Self> {
        if value.is_empty() {
            return Err(Error::InvalidControl(
                "constant control needs at least one channel".into(),
            ));
        }
        let table = DMatrix::from_fn(grid.n_steps(), value.len(), |_, c| value[c]);
        let mut u = Self::deterministic(grid, table)?;
        u.description = format!("const:{}", join(value));
        Ok(u)
    }

    pub fn deterministic(grid: &TimeGrid, table: DMatrix<f64>) -> Result<Self> {
        if table.nrows() != grid.n_steps() {
            return Err(Error::InvalidControl(format!(
                "table has {} rows, grid has {} steps",
                table.nrows(),
                grid.n_steps()
            )));
        }
        if table.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidControl("table has non-finite values".into()));
        }
        Ok(Self {
            grid: *grid,
            m: table.ncols(),
            kind: ControlKind::Deterministic(table),
            description: "deterministic".into(),
        })
    }

    /// Time-constant feedback `U_k = theta · phi(clip(Z_k))`.
    pub fn feedback(grid: &TimeGrid, theta: DMatrix<f64>, clip: f64) -> Result<Self> {
        Self::feedback_schedule(grid, vec![theta], clip)
    }

    pub fn feedback_schedule(grid: &TimeGrid, theta: Vec<DMatrix<f64>>, clip: f64) -> Result<Self> {
        let first = theta
            .first()
            .ok_or_else(|| Error::InvalidControl("empty feedback schedule".into()))?;
        let m = first.nrows();
        let basis = FeatureBasis::new(m);
        if theta.len() != 1 && theta.len() != grid.n_steps() {
            return Err(Error::InvalidControl(format!(
                "feedback schedule has {} entries, expected 1 or {}",
                theta.len(),
                grid.n_steps()
            )));
        }
        if theta.iter().any(|t| t.nrows() != m || t.ncols() != basis.len()) {
            return Err(Error::InvalidControl(format!(
                "feedback coefficients must be {m} x {}",
                basis.len()
            )));
        }
        if theta.iter().flat_map(|t| t.iter()).any(|x| !x.is_finite()) {
            return Err(Error::InvalidControl("feedback coefficients must be finite".into()));
        }
        if !(clip > 0.0) {
            return Err(Error::InvalidControl(format!("clip must be positive, got {clip}")));
        }
        Ok(Self {
            grid: *grid,
            m,
            kind: ControlKind::Feedback { theta, clip },
            description: "feedback".into(),
        })
    }

    /// Random time-constant feedback with coefficients uniform in `[-1, 1]`.
    pub fn random_feedback<R: Rng + ?Sized>(grid: &TimeGrid, m: usize, clip: f64, rng: &mut R) -> Self {
        let basis = FeatureBasis::new(m);
        let theta = DMatrix::from_fn(m, basis.len(), |_, _| rng.random_range(-1.0..1.0));
        let mut u = Self::feedback(grid, theta, clip).expect("valid random control");
        u.description = "random feedback".into();
        u
    }

    /// Random deterministic control, piecewise constant on a few intervals.
    pub fn random_deterministic<R: Rng + ?Sized>(grid: &TimeGrid, m: usize, rng: &mut R) -> Self {
        let pieces = 4;
        let levels = DMatrix::from_fn(pieces, m, |_, _| rng.random_range(-1.0..1.0));
        let n = grid.n_steps();
        let table = DMatrix::from_fn(n, m, |k, c| levels[(k * pieces / n, c)]);
        let mut u = Self::deterministic(grid, table).expect("valid random control");
        u.description = "random deterministic".into();
        u
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn channels(&self) -> usize {
        self.m
    }

    pub fn kind(&self) -> &ControlKind {
        &self.kind
    }

    pub fn is_deterministic(&self) -> bool {
        matches!(self.kind, ControlKind::Deterministic(_))
    }

    /// Deterministic value at step `k`, if the control does not depend on `Z`.
    pub fn deterministic_value(&self, k: usize) -> Option<Vec<f64>> {
        match &self.kind {
            ControlKind::Deterministic(t) => Some(t.row(k).iter().copied().collect()),
            ControlKind::Feedback { .. } => None,
        }
    }

    /// Writes `U_k` given the current observation `Z_{t_k}`.
    pub fn value(&self, k: usize, z: &[f64], out: &mut [f64]) {
        match &self.kind {
            ControlKind::Deterministic(t) => {
                for (c, o) in out.iter_mut().enumerate() {
                    *o = t[(k, c)];
                }
            }
            ControlKind::Feedback { theta, clip } => {
                let theta = if theta.len() == 1 { &theta[0] } else { &theta[k] };
                let clipped: Vec<f64> = z.iter().map(|x| x.clamp(-clip, *clip)).collect();
                let phi = FeatureBasis::new(self.m).features(&clipped);
                for (c, o) in out.iter_mut().enumerate() {
                    *o = theta.row(c).iter().zip(&phi).map(|(a, b)| a * b).sum();
                }
            }
        }
    }

    pub fn value_vec(&self, k: usize, z: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.m];
        self.value(k, z, &mut out);
        out
    }
}

fn join(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

/// Serialized control description.
///
/// JSON: `{"kind":"const","value":[1.0]}` or
/// `{"kind":"feedback","theta":[[..]],"clip":5.0}` where `theta` has one row
/// per channel over the feature library.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ControlSpec {
    Const {
        value: Vec<f64>,
    },
    Feedback {
        theta: Vec<Vec<f64>>,
        #[serde(default = "default_clip")]
        clip: f64,
    },
}

fn default_clip() -> f64 {
    DEFAULT_CLIP
}

impl ControlSpec {
    /// Parses `const:v1,v2` or `feedback:<path to JSON spec>`.
    pub fn parse_compact(text: &str) -> Result<Self> {
        if let Some(values) = text.strip_prefix("const:") {
            return Ok(ControlSpec::Const {
                value: crate::model::parse_vector(values)?,
            });
        }
        if let Some(path) = text.strip_prefix("feedback:") {
            let spec = Self::from_json_file(path)?;
            if !matches!(spec, ControlSpec::Feedback { .. }) {
                return Err(Error::InvalidControl(format!(
                    "{path} does not hold a feedback control"
                )));
            }
            return Ok(spec);
        }
        Err(Error::InvalidControl(format!(
            "expected const:<values> or feedback:<file>, got {text:?}"
        )))
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn build(&self, grid: &TimeGrid, m: usize) -> Result<AdaptedControl> {
        let control = match self {
            ControlSpec::Const { value } => AdaptedControl::constant(grid, value)?,
            ControlSpec::Feedback { theta, clip } => {
                let rows = theta.len();
                let cols = theta.first().map_or(0, Vec::len);
                if theta.iter().any(|r| r.len() != cols) {
                    return Err(Error::InvalidControl("ragged theta".into()));
                }
                let t = DMatrix::from_fn(rows, cols, |i, j| theta[i][j]);
                AdaptedControl::feedback(grid, t, *clip)?
            }
        };
        if control.channels() != m {
            return Err(Error::InvalidControl(format!(
                "control has {} channels, model has {m}",
                control.channels()
            )));
        }
        Ok(control)
    }
}
