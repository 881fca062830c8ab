//! Finite-state hidden Markov model `(A, H)` and the measures that act on it.
//!
//! The generator `A` acts on functions: `(A f)_i = sum_j A_ij f_j`, so its
//! rows are rate rows (nonnegative off-diagonals, zero row sums) and
//! `exp(A t)` is row-stochastic. Row `i` of `H` is the observation vector
//! `h(i)` of state `i`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance on generator row sums.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// Tolerance on the total mass of a probability measure.
pub const PROBABILITY_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    a: DMatrix<f64>,
    h: DMatrix<f64>,
    labels: Option<Vec<String>>,
}

impl Model {
    /// Number of hidden states.
    pub fn d(&self) -> usize {
        self.a.nrows()
    }

    /// Number of observation channels.
    pub fn m(&self) -> usize {
        self.h.ncols()
    }

    pub fn generator(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn observation(&self) -> &DMatrix<f64> {
        &self.h
    }

    /// Observation function of channel `c` as a vector over states.
    pub fn channel(&self, c: usize) -> DVector<f64> {
        self.h.column(c).into_owned()
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    pub fn ones(&self) -> DVector<f64> {
        DVector::from_element(self.d(), 1.0)
    }

    /// Reads and validates a model file. Unknown keys are rejected.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        file.into_model()
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string(&ModelFile::from(self)).expect("model serializes")
    }

    /// Same model with states reordered so that new state `k` is old state `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let d = self.d();
        if perm.len() != d {
            return Err(Error::DimensionMismatch(format!(
                "permutation has length {}, model has {d} states",
                perm.len()
            )));
        }
        let a = DMatrix::from_fn(d, d, |i, j| self.a[(perm[i], perm[j])]);
        let h = DMatrix::from_fn(d, self.m(), |i, c| self.h[(perm[i], c)]);
        let labels = self
            .labels
            .as_ref()
            .map(|l| perm.iter().map(|&p| l[p].clone()).collect());
        validate_model(a, h, labels)
    }
}

/// Checks every model invariant and returns the validated model.
pub fn validate_model(a: DMatrix<f64>, h: DMatrix<f64>, labels: Option<Vec<String>>) -> Result<Model> {
    if a.nrows() != a.ncols() {
        return Err(Error::NonSquareGenerator {
            rows: a.nrows(),
            cols: a.ncols(),
        });
    }
    let d = a.nrows();
    if d == 0 {
        return Err(Error::DimensionMismatch("model needs at least one state".into()));
    }
    if h.nrows() != d {
        return Err(Error::DimensionMismatch(format!(
            "H has {} rows, generator has {d}",
            h.nrows()
        )));
    }
    if h.ncols() == 0 {
        return Err(Error::DimensionMismatch("H needs at least one column".into()));
    }
    if let Some(l) = &labels {
        if l.len() != d {
            return Err(Error::DimensionMismatch(format!("{} labels for {d} states", l.len())));
        }
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("generator"));
    }
    if h.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("observation matrix"));
    }
    for i in 0..d {
        for j in 0..d {
            if i != j && a[(i, j)] < 0.0 {
                return Err(Error::NegativeOffDiagonal {
                    row: i,
                    col: j,
                    value: a[(i, j)],
                });
            }
        }
    }
    let (worst_row, worst) = (0..d)
        .map(|i| (i, a.row(i).sum()))
        .max_by(|x, y| x.1.abs().total_cmp(&y.1.abs()))
        .expect("d >= 1");
    if worst.abs() > ROW_SUM_TOL {
        return Err(Error::RowSumViolation {
            row: worst_row,
            residual: worst,
        });
    }
    Ok(Model { a, h, labels })
}

/// Builds a model from nested row vectors.
pub fn model_from_rows(a: &[Vec<f64>], h: &[Vec<f64>], labels: Option<Vec<String>>) -> Result<Model> {
    let a = matrix_from_rows(a, "generator")?;
    let h = matrix_from_rows(h, "observation matrix")?;
    validate_model(a, h, labels)
}

fn matrix_from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != ncols) {
        return Err(Error::DimensionMismatch(format!(
            "{what} row {i} has {} entries, expected {ncols}",
            r.len()
        )));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

/// On-disk model layout: `{"d":2,"m":1,"A":[[..]],"H":[[..]],"labels":[..]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub d: usize,
    pub m: usize,
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "H")]
    pub h: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
}

impl ModelFile {
    pub fn into_model(self) -> Result<Model> {
        let model = model_from_rows(&self.a, &self.h, self.labels)?;
        if model.d() != self.d || model.m() != self.m {
            return Err(Error::DimensionMismatch(format!(
                "declared d={}, m={} but matrices give d={}, m={}",
                self.d,
                self.m,
                model.d(),
                model.m()
            )));
        }
        Ok(model)
    }
}

impl From<&Model> for ModelFile {
    fn from(model: &Model) -> Self {
        let rows = |m: &DMatrix<f64>| (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect();
        ModelFile {
            d: model.d(),
            m: model.m(),
            a: rows(&model.a),
            h: rows(&model.h),
            labels: model.labels.clone(),
        }
    }
}

/// Finite signed measure on the state space; pairs with functions as `mu(f) = sum_i mu_i f_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct SignedMeasure(DVector<f64>);

impl SignedMeasure {
    pub fn new(weights: DVector<f64>) -> Result<Self> {
        if weights.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("measure"));
        }
        Ok(Self(weights))
    }

    pub fn from_slice(weights: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(weights))
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn pair(&self, f: &DVector<f64>) -> f64 {
        self.0.dot(f)
    }

    pub fn total_mass(&self) -> f64 {
        self.0.sum()
    }

    pub fn is_nonnegative(&self) -> bool {
        self.0.iter().all(|&x| x >= 0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMeasure(DVector<f64>);

impl ProbabilityMeasure {
    pub fn new(weights: DVector<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidMeasure("empty weight vector".into()));
        }
        if weights.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("probability measure"));
        }
        if let Some(i) = weights.iter().position(|&x| x < 0.0) {
            return Err(Error::InvalidMeasure(format!(
                "weight {i} is negative ({})",
                weights[i]
            )));
        }
        let total = weights.sum();
        if (total - 1.0).abs() > PROBABILITY_SUM_TOL {
            return Err(Error::InvalidMeasure(format!("weights sum to {total}, expected 1")));
        }
        Ok(Self(weights))
    }

    pub fn from_slice(weights: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(weights))
    }

    /// Point mass at state `i` of a `d`-state space.
    pub fn dirac(d: usize, i: usize) -> Self {
        let mut w = DVector::zeros(d);
        w[i] = 1.0;
        Self(w)
    }

    pub fn uniform(d: usize) -> Self {
        Self(DVector::from_element(d, 1.0 / d as f64))
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn pair(&self, f: &DVector<f64>) -> f64 {
        self.0.dot(f)
    }

    pub fn to_signed(&self) -> SignedMeasure {
        SignedMeasure(self.0.clone())
    }

    pub fn check_dim(&self, d: usize) -> Result<()> {
        if self.len() != d {
            return Err(Error::DimensionMismatch(format!(
                "measure has {} weights, model has {d} states",
                self.len()
            )));
        }
        Ok(())
    }
}

impl From<ProbabilityMeasure> for SignedMeasure {
    fn from(p: ProbabilityMeasure) -> Self {
        SignedMeasure(p.0)
    }
}

/// Parses a comma-separated list of floats such as `"0.5,0.3,0.2"`.
pub fn parse_vector(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| Error::InvalidArgument(format!("cannot parse {s:?} as a number: {e}")))
        })
        .collect()
}
