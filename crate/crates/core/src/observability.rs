//! Algebraic observability tests for a finite-state model `(A, H)`.
//!
//! The controllable space of the dual BSDE is the smallest subspace of
//! `R^d` that contains the constant vector and is closed under `g -> A g`
//! and `g -> g ∘ H_c` (element-wise product with each observation column).
//! The model is observable exactly when that subspace is all of `R^d`; its
//! orthogonal complement holds the unobservable signed measures.

use std::collections::VecDeque;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{numerical_rank, orthogonalize, Subspace};
use crate::model::Model;

/// Per-coordinate tolerance when comparing rows of `H`.
pub const ROW_EQUALITY_TOL: f64 = 1e-12;

/// Maximum number of vectors the brute-force oracle may generate.
pub const BRUTE_FORCE_BUDGET: usize = 1_000_000;

/// Random draws attempted by [`collapse_vector`] after the canonical directions.
pub const COLLAPSE_MAX_DRAWS: usize = 1000;

/// Operator scales used to make admission thresholds scale-aware: the
/// infinity norm of `A` and the sup norm of each observation column.
fn operator_scales(model: &Model) -> (f64, Vec<f64>) {
    let a = model.generator();
    let a_scale = (0..model.d())
        .map(|i| a.row(i).iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let h_scales = (0..model.m()).map(|c| model.observation().column(c).amax()).collect();
    (a_scale, h_scales)
}

/// Smallest subspace containing `1` and closed under `A` and every `∘ H_c`,
/// computed by breadth-first expansion over an orthonormal basis.
pub fn nonlinear_closure(model: &Model, tol: f64) -> Subspace {
    nonlinear_closure_traced(model, tol).0
}

/// As [`nonlinear_closure`], also returning the basis dimension after each admission.
pub fn nonlinear_closure_traced(model: &Model, tol: f64) -> (Subspace, Vec<usize>) {
    let d = model.d();
    let a = model.generator();
    let (a_scale, h_scales) = operator_scales(model);

    let mut basis: Vec<DVector<f64>> = vec![model.ones() / (d as f64).sqrt()];
    let mut trace = vec![1];
    let mut queue: VecDeque<usize> = VecDeque::from([0]);

    while let Some(idx) = queue.pop_front() {
        if basis.len() == d {
            break;
        }
        let g = basis[idx].clone();
        let mut candidates = Vec::with_capacity(1 + model.m());
        candidates.push((a * &g, a_scale));
        for (c, &scale) in h_scales.iter().enumerate() {
            candidates.push((g.component_mul(&model.observation().column(c)), scale));
        }
        for (candidate, scale) in candidates {
            if basis.len() == d {
                break;
            }
            let r = orthogonalize(&basis, &candidate);
            let norm = r.norm();
            if norm > tol * candidate.norm().max(scale) {
                basis.push(r / norm);
                trace.push(basis.len());
                queue.push_back(basis.len() - 1);
            }
        }
    }
    (Subspace::from_orthonormal(d, basis, tol), trace)
}

/// Literal enumeration of every word of length `<= depth` over
/// `{A, ∘H_1, .., ∘H_m}` applied to `1`, ranked by SVD.
///
/// Each generator is divided by its operator scale first; rescaling a
/// generator does not change the span of the words.
pub fn brute_force_closure(model: &Model, depth: usize, tol: f64) -> Result<Subspace> {
    if depth == 0 {
        return Err(Error::InvalidArgument("brute-force depth must be >= 1".into()));
    }
    let branching = 1 + model.m();
    let mut total: usize = 1;
    let mut level_size: usize = 1;
    for _ in 0..depth {
        level_size = level_size.saturating_mul(branching);
        total = total.saturating_add(level_size);
        if total > BRUTE_FORCE_BUDGET {
            return Err(Error::BudgetExceeded { generated: total });
        }
    }

    let (a_scale, h_scales) = operator_scales(model);
    let a = if a_scale > 0.0 {
        model.generator() / a_scale
    } else {
        model.generator().clone()
    };
    let columns: Vec<DVector<f64>> = (0..model.m())
        .map(|c| {
            let col = model.channel(c);
            if h_scales[c] > 0.0 {
                col / h_scales[c]
            } else {
                col
            }
        })
        .collect();

    let mut all = vec![model.ones()];
    let mut frontier = vec![model.ones()];
    for _ in 0..depth {
        let mut next = Vec::with_capacity(frontier.len() * branching);
        for g in &frontier {
            next.push(&a * g);
            for col in &columns {
                next.push(g.component_mul(col));
            }
        }
        all.extend(next.iter().cloned());
        frontier = next;
    }
    Ok(numerical_rank(&all, tol).1)
}

/// Span of `H, AH, .., A^{d-1} H` (the Kalman observability subspace, with
/// `A` acting on functions).
pub fn linear_observability(model: &Model, tol: f64) -> Subspace {
    let d = model.d();
    let (a_scale, _) = operator_scales(model);
    let a = if a_scale > 0.0 {
        model.generator() / a_scale
    } else {
        model.generator().clone()
    };
    let mut vectors = Vec::with_capacity(d * model.m());
    for c in 0..model.m() {
        let mut v = model.channel(c);
        for _ in 0..d {
            let next = &a * &v;
            vectors.push(v);
            v = next;
        }
    }
    numerical_rank(&vectors, tol).1
}

fn rows_equal(model: &Model, i: usize, j: usize) -> bool {
    let h = model.observation();
    (0..model.m()).all(|c| (h[(i, c)] - h[(j, c)]).abs() <= ROW_EQUALITY_TOL)
}

/// Whether the states are separated by `h` (all rows of `H` distinct), and
/// every colliding pair `(i, j)`, `i < j`.
pub fn injectivity_check(model: &Model) -> (bool, Vec<(usize, usize)>) {
    let d = model.d();
    let pairs: Vec<(usize, usize)> = (0..d)
        .flat_map(|i| (i + 1..d).map(move |j| (i, j)))
        .filter(|&(i, j)| rows_equal(model, i, j))
        .collect();
    (pairs.is_empty(), pairs)
}

/// True if `H a` has pairwise-distinct entries with minimum gap above
/// `1e-9 * max |H a|`.
pub fn is_collapsing(model: &Model, a: &DVector<f64>) -> bool {
    let mut values: Vec<f64> = (model.observation() * a).iter().copied().collect();
    let scale = values.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    values.sort_by(f64::total_cmp);
    values.windows(2).all(|w| w[1] - w[0] > 1e-9 * scale)
}

/// A direction `a` such that the scalar observation `H a` separates every state.
pub fn collapse_vector(model: &Model, seed: u64) -> Result<DVector<f64>> {
    let (_, pairs) = injectivity_check(model);
    if let Some(&(i, j)) = pairs.first() {
        return Err(Error::NotInjective(i, j));
    }
    let m = model.m();
    for k in 0..m {
        let mut a = DVector::zeros(m);
        a[k] = 1.0;
        if is_collapsing(model, &a) {
            return Ok(a);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..COLLAPSE_MAX_DRAWS {
        let a = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = a.norm();
        if norm == 0.0 {
            continue;
        }
        let a = a / norm;
        if is_collapsing(model, &a) {
            return Ok(a);
        }
    }
    Err(Error::CollapseSearchFailed(COLLAPSE_MAX_DRAWS))
}

/// Orthogonal complement of the closure: the unobservable signed measures.
pub fn unobservable_directions(model: &Model, tol: f64) -> Subspace {
    nonlinear_closure(model, tol).complement()
}

#[derive(Debug, Clone, Serialize)]
pub struct ObservabilityReport {
    pub observable: bool,
    pub closure_dim: usize,
    pub linear_dim: usize,
    pub injective: bool,
    pub colliding_pairs: Vec<(usize, usize)>,
    pub closure_basis: Subspace,
    #[serde(skip)]
    pub linear_basis: Subspace,
    pub unobservable_basis: Subspace,
    pub tol: f64,
}

impl ObservabilityReport {
    /// Largest residual of a linear-basis vector against the closure.
    pub fn linear_inclusion_residual(&self) -> f64 {
        self.closure_basis.containment_residual(&self.linear_basis)
    }
}

pub fn analyze(model: &Model, tol: f64) -> ObservabilityReport {
    let closure = nonlinear_closure(model, tol);
    let linear = linear_observability(model, tol);
    let (injective, colliding_pairs) = injectivity_check(model);
    let unobservable = closure.complement();
    ObservabilityReport {
        observable: closure.is_full(),
        closure_dim: closure.dim(),
        linear_dim: linear.dim(),
        injective,
        colliding_pairs,
        closure_basis: closure,
        linear_basis: linear,
        unobservable_basis: unobservable,
        tol,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::DEFAULT_RANK_TOL as TOL;
    use crate::model::model_from_rows;

    fn dv(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

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

    fn m3() -> Model {
        model_from_rows(
            &[vec![0.0; 3], vec![0.0; 3], vec![0.0; 3]],
            &[vec![1.0], vec![1.0], vec![2.0]],
            None,
        )
        .unwrap()
    }

    fn m4() -> Model {
        model_from_rows(
            &[vec![0.0; 3], vec![0.0; 3], vec![0.0; 3]],
            &[vec![0.0], vec![1.0], vec![2.0]],
            None,
        )
        .unwrap()
    }

    #[test]
    fn closure_dimensions_of_reference_models() {
        assert_eq!(nonlinear_closure(&m1(), TOL).dim(), 2);
        assert_eq!(nonlinear_closure(&m2(), TOL).dim(), 2);
        assert_eq!(nonlinear_closure(&m3(), TOL).dim(), 2);
        assert_eq!(nonlinear_closure(&m4(), TOL).dim(), 3);
    }

    #[test]
    fn closure_trace_is_monotone() {
        let (s, trace) = nonlinear_closure_traced(&m4(), TOL);
        assert!(trace.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(*trace.last().unwrap(), s.dim());
        assert!(trace.len() <= 3);
    }

    #[test]
    fn brute_force_matches_on_reference_models() {
        assert_eq!(brute_force_closure(&m1(), 3, TOL).unwrap().dim(), 2);
        let bf = brute_force_closure(&m2(), 4, TOL).unwrap();
        assert!(bf.distance(&nonlinear_closure(&m2(), TOL)) < 1e-8);
        assert_eq!(brute_force_closure(&m4(), 2, TOL).unwrap().dim(), 3);
        assert!(matches!(
            brute_force_closure(&m1(), 0, TOL),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            brute_force_closure(&m1(), 40, TOL),
            Err(Error::BudgetExceeded { .. })
        ));
    }

    #[test]
    fn linear_subspace_examples() {
        assert_eq!(linear_observability(&m1(), TOL).dim(), 1);
        let zero_a = model_from_rows(&[vec![0.0, 0.0], vec![0.0, 0.0]], &[vec![1.0], vec![2.0]], None).unwrap();
        let lin = linear_observability(&zero_a, TOL);
        assert_eq!(lin.dim(), 1);
        assert!(lin.residual(&dv(&[1.0, 2.0])) < 1e-12);
        assert_eq!(linear_observability(&m4(), TOL).dim(), 1);
    }

    #[test]
    fn injectivity_examples() {
        assert_eq!(injectivity_check(&m1()), (true, vec![]));
        assert_eq!(injectivity_check(&m2()), (false, vec![(0, 1)]));
        let two_channel = model_from_rows(
            &[vec![0.0; 3], vec![0.0; 3], vec![0.0; 3]],
            &[vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0]],
            None,
        )
        .unwrap();
        assert!(injectivity_check(&two_channel).0);
    }

    #[test]
    fn collapse_vector_examples() {
        assert_eq!(collapse_vector(&m4(), 0).unwrap(), dv(&[1.0]));
        let two_channel = model_from_rows(
            &[vec![0.0; 3], vec![0.0; 3], vec![0.0; 3]],
            &[vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0]],
            None,
        )
        .unwrap();
        assert!(is_collapsing(&two_channel, &dv(&[1.0, 2.0])));
        assert!(!is_collapsing(&two_channel, &dv(&[1.0, 0.0])));
        let a = collapse_vector(&two_channel, 11).unwrap();
        assert!(is_collapsing(&two_channel, &a));
        assert_eq!(a, collapse_vector(&two_channel, 11).unwrap());
        assert!(matches!(collapse_vector(&m2(), 0), Err(Error::NotInjective(0, 1))));
    }

    #[test]
    fn unobservable_direction_examples() {
        let v = dv(&[1.0, -1.0, 0.0]) / 2f64.sqrt();
        let u2 = unobservable_directions(&m2(), TOL);
        assert_eq!(u2.dim(), 1);
        assert!(u2.residual(&v) < 1e-12);
        assert_eq!(unobservable_directions(&m1(), TOL).dim(), 0);
        let u3 = unobservable_directions(&m3(), TOL);
        assert_eq!(u3.dim(), 1);
        assert!(u3.residual(&v) < 1e-12);
        for b in u2.basis() {
            assert!(b.sum().abs() < 1e-12);
        }
    }

    #[test]
    fn analyze_examples() {
        let r1 = analyze(&m1(), TOL);
        assert!(r1.observable && r1.injective);
        assert_eq!((r1.closure_dim, r1.linear_dim), (2, 1));
        let r2 = analyze(&m2(), TOL);
        assert!(!r2.observable);
        assert_eq!(r2.unobservable_basis.dim(), 1);
        let r3 = analyze(&m3(), TOL);
        assert!(!r3.observable && !r3.injective);
        assert_eq!(r3.colliding_pairs, vec![(0, 1)]);
        for r in [&r1, &r2, &r3] {
            assert_eq!(
                r.closure_dim + r.unobservable_basis.dim(),
                r.closure_basis.ambient_dim()
            );
            assert!(r.linear_inclusion_residual() < TOL);
        }
    }

    #[test]
    fn report_json_keys() {
        let json = serde_json::to_value(analyze(&m2(), TOL)).unwrap();
        let mut keys: Vec<&str> = json.as_object().unwrap().keys().map(String::as_str).collect();
        keys.sort_unstable();
        assert_eq!(
            keys,
            [
                "closure_basis",
                "closure_dim",
                "colliding_pairs",
                "injective",
                "linear_dim",
                "observable",
                "tol",
                "unobservable_basis"
            ]
        );
        assert_eq!(json["colliding_pairs"], serde_json::json!([[0, 1]]));
        assert_eq!(json["unobservable_basis"].as_array().unwrap().len(), 1);
    }
}
