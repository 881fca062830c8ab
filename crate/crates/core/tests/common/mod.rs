#![allow(dead_code)]

use dualscope::model::model_from_rows;
use dualscope::validate_model;
use dualscope::Model;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn m1() -> Model {
    model_from_rows(&[vec![-1.0, 1.0], vec![1.0, -1.0]], &[vec![1.0], vec![-1.0]], None).unwrap()
}

pub fn m2() -> Model {
    model_from_rows(
        &[vec![-1.0, 0.0, 1.0], vec![0.0, -1.0, 1.0], vec![0.5, 0.5, -1.0]],
        &[vec![1.0], vec![1.0], vec![0.0]],
        None,
    )
    .unwrap()
}

pub fn m3() -> Model {
    validate_model(
        DMatrix::zeros(3, 3),
        DMatrix::from_column_slice(3, 1, &[1.0, 1.0, 2.0]),
        None,
    )
    .unwrap()
}

pub fn m4() -> Model {
    validate_model(
        DMatrix::zeros(3, 3),
        DMatrix::from_column_slice(3, 1, &[0.0, 1.0, 2.0]),
        None,
    )
    .unwrap()
}

pub fn reference_models() -> Vec<(&'static str, Model)> {
    vec![("M1", m1()), ("M2", m2()), ("M3", m3()), ("M4", m4())]
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Off-diagonal rates, zero with probability `sparsity`; diagonal fixes row sums.
pub fn random_generator<R: Rng>(rng: &mut R, d: usize, sparsity: f64) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            if i != j && !rng.random_bool(sparsity) {
                a[(i, j)] = rng.random_range(0.1..2.0);
            }
        }
        let s: f64 = a.row(i).sum();
        a[(i, i)] = -s;
    }
    a
}

/// A mix of structures: zero or sparse generators, integer observations with
/// collisions, and continuous observations.
pub fn random_model<R: Rng>(rng: &mut R, max_d: usize, max_m: usize) -> Model {
    let d = rng.random_range(1..=max_d);
    let m = rng.random_range(1..=max_m);
    let a = match rng.random_range(0..3) {
        0 => DMatrix::zeros(d, d),
        1 => random_generator(rng, d, 0.6),
        _ => random_generator(rng, d, 0.1),
    };
    let integer = rng.random_bool(0.6);
    let h = DMatrix::from_fn(d, m, |_, _| {
        if integer {
            rng.random_range(0..3) as f64
        } else {
            rng.random_range(-2.0..2.0)
        }
    });
    validate_model(a, h, None).unwrap()
}

/// Random model whose observation rows are pairwise distinct by a margin.
pub fn random_distinct_rows<R: Rng>(rng: &mut R, d: usize, m: usize) -> Model {
    let a = if rng.random_bool(0.5) {
        DMatrix::zeros(d, d)
    } else {
        random_generator(rng, d, 0.5)
    };
    let mut levels: Vec<f64> = (0..d).map(|i| i as f64 + rng.random_range(-0.3..0.3)).collect();
    // Shuffle so the distinct channel is not always increasing.
    for i in (1..d).rev() {
        levels.swap(i, rng.random_range(0..=i));
    }
    let h = DMatrix::from_fn(
        d,
        m,
        |i, c| if c == 0 { levels[i] } else { rng.random_range(-1.0..1.0) },
    );
    validate_model(a, h, None).unwrap()
}

/// Model invariant under swapping the last two states, so that
/// `e_{d-2} - e_{d-1}` is unobservable. Needs `d >= 2`.
pub fn swap_symmetric_model<R: Rng>(rng: &mut R, d: usize, m: usize) -> Model {
    assert!(d >= 2);
    let (p, q) = (d - 2, d - 1);
    let mut a = DMatrix::zeros(d, d);
    for i in 0..p {
        for j in 0..p {
            if i != j {
                a[(i, j)] = rng.random_range(0.0..1.5);
            }
        }
        let into_pair = rng.random_range(0.1..1.5);
        a[(i, p)] = into_pair;
        a[(i, q)] = into_pair;
    }
    for j in 0..p {
        let out = rng.random_range(0.1..1.5);
        a[(p, j)] = out;
        a[(q, j)] = out;
    }
    let swap = rng.random_range(0.0..1.0);
    a[(p, q)] = swap;
    a[(q, p)] = swap;
    for i in 0..d {
        let s: f64 = a.row(i).sum();
        a[(i, i)] = -s;
    }
    let mut h = DMatrix::from_fn(d, m, |_, _| rng.random_range(-1.5..1.5));
    for c in 0..m {
        h[(q, c)] = h[(p, c)];
    }
    validate_model(a, h, None).unwrap()
}
