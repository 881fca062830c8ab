//! Dense linear algebra shared across the crate: the matrix exponential,
//! SVD-based numerical rank, and orthonormal subspaces.

use nalgebra::{DMatrix, DVector};
use serde::ser::{Serialize, SerializeSeq, Serializer};

use crate::error::{Error, Result};

/// Default relative singular-value threshold.
pub const DEFAULT_RANK_TOL: f64 = 1e-9;

/// Largest accepted `||M t||_1` for [`matrix_exponential`].
pub const EXPM_NORM_LIMIT: f64 = 1e4;

// Padé degrees with their backward-error bounds (Higham 2005, table 2.3).
const PADE_THETA: [(usize, f64); 4] = [
    (3, 1.495_585_217_958_292e-2),
    (5, 2.539_398_330_063_23e-1),
    (7, 9.504_178_996_162_932e-1),
    (9, 2.097_847_961_257_068),
];
const THETA_13: f64 = 5.371_920_351_148_152;

const B3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const B5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const B7: [f64; 8] = [
    17_297_280.0,
    8_648_640.0,
    1_995_840.0,
    277_200.0,
    25_200.0,
    1_512.0,
    56.0,
    1.0,
];
const B9: [f64; 10] = [
    17_643_225_600.0,
    8_821_612_800.0,
    2_075_673_600.0,
    302_702_400.0,
    30_270_240.0,
    2_162_160.0,
    110_880.0,
    3_960.0,
    90.0,
    1.0,
];
const B13: [f64; 14] = [
    64_764_752_532_480_000.0,
    32_382_376_266_240_000.0,
    7_771_770_303_897_600.0,
    1_187_353_796_428_800.0,
    129_060_195_264_000.0,
    10_559_470_521_600.0,
    670_442_572_800.0,
    33_522_128_640.0,
    1_323_241_920.0,
    40_840_800.0,
    960_960.0,
    16_380.0,
    182.0,
    1.0,
];

fn norm1(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `exp(M t)` by scaling and squaring around a diagonal Padé approximant.
pub fn matrix_exponential(m: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::NonSquareGenerator {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    if !t.is_finite() || m.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("matrix exponential argument"));
    }
    let n = m.nrows();
    let a = m * t;
    let norm = norm1(&a);
    if norm > EXPM_NORM_LIMIT {
        return Err(Error::Overflow { norm });
    }
    let ident = DMatrix::<f64>::identity(n, n);
    if norm == 0.0 {
        return Ok(ident);
    }

    let a2 = &a * &a;
    for (degree, theta) in PADE_THETA {
        if norm <= theta {
            let coeffs: &[f64] = match degree {
                3 => &B3,
                5 => &B5,
                7 => &B7,
                _ => &B9,
            };
            let mut even = DMatrix::zeros(n, n);
            let mut odd = DMatrix::zeros(n, n);
            let mut power = ident.clone();
            for k in 0..=degree / 2 {
                even += &power * coeffs[2 * k];
                odd += &power * coeffs[2 * k + 1];
                power = &power * &a2;
            }
            let u = &a * odd;
            return pade_solve(&even, &u, 0);
        }
    }

    let s = if norm > THETA_13 {
        (norm / THETA_13).log2().ceil() as i32
    } else {
        0
    };
    let scale = 2f64.powi(-s);
    let a = a * scale;
    let a2 = a2 * (scale * scale);
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let b = &B13;
    let inner_u = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9]);
    let u = &a * (inner_u + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + &ident * b[1]);
    let inner_v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8]);
    let v = inner_v + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + &ident * b[0];
    pade_solve(&v, &u, s as u32)
}

fn pade_solve(v: &DMatrix<f64>, u: &DMatrix<f64>, squarings: u32) -> Result<DMatrix<f64>> {
    let p = v + u;
    let q = v - u;
    let mut r = q.lu().solve(&p).ok_or(Error::NonFinite("singular Padé denominator"))?;
    for _ in 0..squarings {
        r = &r * &r;
    }
    Ok(r)
}

/// Orthonormal basis of a subspace of `R^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Subspace {
    ambient: usize,
    basis: Vec<DVector<f64>>,
    tol: f64,
}

impl Subspace {
    pub fn empty(ambient: usize, tol: f64) -> Self {
        Self {
            ambient,
            basis: Vec::new(),
            tol,
        }
    }

    /// Wraps vectors already known to be orthonormal.
    pub(crate) fn from_orthonormal(ambient: usize, basis: Vec<DVector<f64>>, tol: f64) -> Self {
        debug_assert!(basis.iter().all(|v| v.len() == ambient));
        Self { ambient, basis, tol }
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient
    }

    pub fn basis(&self) -> &[DVector<f64>] {
        &self.basis
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    pub fn is_full(&self) -> bool {
        self.dim() == self.ambient
    }

    pub fn project(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut p = DVector::zeros(v.len());
        for q in &self.basis {
            p.axpy(q.dot(v), q, 1.0);
        }
        p
    }

    /// Euclidean norm of the component of `v` orthogonal to the subspace.
    pub fn residual(&self, v: &DVector<f64>) -> f64 {
        orthogonalize(&self.basis, v).norm()
    }

    /// Largest residual of `other`'s basis vectors; ~0 iff `other` is contained in `self`.
    pub fn containment_residual(&self, other: &Subspace) -> f64 {
        other.basis.iter().map(|v| self.residual(v)).fold(0.0, f64::max)
    }

    /// Mutual projection residual; ~0 iff both subspaces coincide.
    pub fn distance(&self, other: &Subspace) -> f64 {
        if self.dim() != other.dim() {
            return 1.0;
        }
        self.containment_residual(other).max(other.containment_residual(self))
    }

    /// Orthogonal complement in `R^d`.
    pub fn complement(&self) -> Subspace {
        let d = self.ambient;
        let target = d - self.dim();
        if target == 0 {
            return Subspace::empty(d, self.tol);
        }
        let residuals: Vec<DVector<f64>> = (0..d)
            .map(|i| orthogonalize(&self.basis, &DVector::from_fn(d, |k, _| f64::from(k == i))))
            .collect();
        let (u, _) = left_singular_vectors(&residuals, d);
        let basis = u.into_iter().take(target).collect();
        Subspace::from_orthonormal(d, basis, self.tol)
    }

    /// Basis vectors as the columns of a `d x dim` matrix.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        if self.basis.is_empty() {
            return DMatrix::zeros(self.ambient, 0);
        }
        DMatrix::from_columns(&self.basis)
    }

    /// Applies an orthogonal map (e.g. a state permutation) to every basis vector.
    pub fn map(&self, f: impl Fn(&DVector<f64>) -> DVector<f64>) -> Subspace {
        Subspace {
            ambient: self.ambient,
            basis: self.basis.iter().map(f).collect(),
            tol: self.tol,
        }
    }
}

impl Serialize for Subspace {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut seq = serializer.serialize_seq(Some(self.basis.len()))?;
        for v in &self.basis {
            seq.serialize_element(v.as_slice())?;
        }
        seq.end()
    }
}

const JACOBI_EPS: f64 = 1e-15;
const JACOBI_MAX_SWEEPS: usize = 60;

/// Component of `v` orthogonal to the orthonormal `basis` (modified
/// Gram–Schmidt, two passes).
pub(crate) fn orthogonalize(basis: &[DVector<f64>], v: &DVector<f64>) -> DVector<f64> {
    let mut r = v.clone();
    for _ in 0..2 {
        for q in basis {
            let c = q.dot(&r);
            r.axpy(-c, q, 1.0);
        }
    }
    r
}

/// Left singular vectors of the matrix whose columns are `vectors`, with
/// singular values, sorted descending.
///
/// One-sided Jacobi on the transpose: the `d` columns of `A^T` are rotated
/// until mutually orthogonal, and the accumulated rotation holds the left
/// singular vectors of `A`. nalgebra's bidiagonal SVD returned inconsistent
/// factors on projector matrices with denormal-scale entries.
fn left_singular_vectors(vectors: &[DVector<f64>], d: usize) -> (Vec<DVector<f64>>, Vec<f64>) {
    if vectors.is_empty() || d == 0 {
        return (Vec::new(), Vec::new());
    }
    let n = vectors.len();
    let mut cols: Vec<DVector<f64>> = (0..d).map(|j| DVector::from_fn(n, |p, _| vectors[p][j])).collect();
    let mut v = DMatrix::<f64>::identity(d, d);
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for j in 0..d {
            for k in j + 1..d {
                let alpha = cols[j].norm_squared();
                let beta = cols[k].norm_squared();
                let gamma = cols[j].dot(&cols[k]);
                if gamma == 0.0 || gamma.abs() <= JACOBI_EPS * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (cj, ck) = (cols[j].clone(), cols[k].clone());
                cols[j] = &cj * c - &ck * s;
                cols[k] = &cj * s + &ck * c;
                for i in 0..d {
                    let (a, b) = (v[(i, j)], v[(i, k)]);
                    v[(i, j)] = c * a - s * b;
                    v[(i, k)] = s * a + c * b;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let sigma: Vec<f64> = cols.iter().map(|c| c.norm()).collect();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| sigma[j].total_cmp(&sigma[i]));
    let k = d.min(n);
    let u = order.iter().take(k).map(|&j| v.column(j).into_owned()).collect();
    let values = order.iter().take(k).map(|&j| sigma[j]).collect();
    (u, values)
}

/// Singular values of the matrix whose columns are `vectors`, descending.
pub fn singular_values(vectors: &[DVector<f64>]) -> Vec<f64> {
    let d = vectors.first().map_or(0, DVector::len);
    left_singular_vectors(vectors, d).1
}

/// Rank of a family of `d`-vectors: the number of singular values at least
/// `tol * sigma_max`, with the matching left singular vectors as basis.
pub fn numerical_rank(vectors: &[DVector<f64>], tol: f64) -> (usize, Subspace) {
    let d = vectors.first().map_or(0, DVector::len);
    let (u, s) = left_singular_vectors(vectors, d);
    let smax = s.first().copied().unwrap_or(0.0);
    if smax == 0.0 {
        return (0, Subspace::empty(d, tol));
    }
    let rank = s.iter().take_while(|&&x| x >= tol * smax).count();
    let basis = u.into_iter().take(rank).collect();
    (rank, Subspace::from_orthonormal(d, basis, tol))
}

/// Rank with an explicit absolute floor: singular values must exceed both
/// `tol * sigma_max` and `floor`.
pub fn numerical_rank_with_floor(vectors: &[DVector<f64>], tol: f64, floor: f64) -> (usize, Subspace, Vec<f64>) {
    let d = vectors.first().map_or(0, DVector::len);
    let (u, s) = left_singular_vectors(vectors, d);
    let smax = s.first().copied().unwrap_or(0.0);
    if smax == 0.0 {
        return (0, Subspace::empty(d, tol), s);
    }
    let rank = s.iter().take_while(|&&x| x >= tol * smax && x > floor).count();
    let basis = u.into_iter().take(rank).collect();
    (rank, Subspace::from_orthonormal(d, basis, tol), s)
}
