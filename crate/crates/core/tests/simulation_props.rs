mod common;

use common::*;
use dualscope::filter::{mass_identity_check, propagate_zakai, propagate_zakai_mode, wonham, ZakaiMode};
use dualscope::rng::{stream, Purpose};
use dualscope::simulate::{marginal_law, physical_paths, reference_path, sample_ctmc, ObservationPath, TimeGrid};
use dualscope::{ProbabilityMeasure, SignedMeasure};
use nalgebra::DVector;
use proptest::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn chi_square_against_law(counts: &[usize], law: &DVector<f64>) -> (f64, usize) {
    let n: usize = counts.iter().sum();
    let mut stat = 0.0;
    let mut cells = 0usize;
    for (i, &c) in counts.iter().enumerate() {
        let expected = law[i] * n as f64;
        if expected > 5.0 {
            stat += (c as f64 - expected).powi(2) / expected;
            cells += 1;
        } else {
            assert!(c as f64 <= expected + 5.0 * expected.sqrt() + 5.0, "cell {i}");
        }
    }
    (stat, cells.saturating_sub(1))
}

#[test]
fn chain_marginals_match_the_exponential_law() {
    let mut r = rng(11);
    let grid = TimeGrid::new(1.0, 0.05).unwrap();
    let n = 20_000;
    for trial in 0..6u64 {
        let model = random_model(&mut r, 5, 1);
        let d = model.d();
        let mu = ProbabilityMeasure::uniform(d);
        let mut counts = vec![0usize; d];
        for i in 0..n {
            let path = sample_ctmc(&model, &mu, &grid, &mut stream(trial, Purpose::Ctmc, i));
            counts[*path.last().unwrap()] += 1;
        }
        let law = marginal_law(&model, &mu, 1.0).unwrap();
        let (stat, dof) = chi_square_against_law(&counts, &law);
        if dof == 0 {
            continue;
        }
        let critical = ChiSquared::new(dof as f64).unwrap().inverse_cdf(0.999);
        assert!(stat < critical, "trial {trial}: chi2 {stat} > {critical} (dof {dof})");
    }
}

#[test]
fn observation_increments_have_the_right_moments() {
    let model = m1();
    let grid = TimeGrid::new(1.0, 1e-2).unwrap();
    let mu = ProbabilityMeasure::from_slice(&[1.0, 0.0]).unwrap();
    let paths = physical_paths(&model, &mu, &grid, 4000, 5).unwrap();
    // E Z_T = int_0^T E h(X_t) dt = (1 - e^{-2T}) / 2 for M1 started in state 0.
    let z: Vec<f64> = paths.iter().map(|p| p.observation.terminal()[0]).collect();
    let mean = z.iter().sum::<f64>() / z.len() as f64;
    let var = z.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (z.len() - 1) as f64;
    let expected = (1.0 - (-2.0f64).exp()) / 2.0;
    assert!(
        (mean - expected).abs() < 4.0 * (var / z.len() as f64).sqrt(),
        "{mean} vs {expected}"
    );
}

/// With `A = 0` the Zakai equation decouples: `sigma_T(i) = sigma_0(i) exp(h_i Z_T - h_i^2 T / 2)`.
fn exact_without_dynamics(h: &[f64], sigma0: &[f64], z: f64, t: f64) -> Vec<f64> {
    h.iter()
        .zip(sigma0)
        .map(|(&hi, &s)| s * (hi * z - 0.5 * hi * hi * t).exp())
        .collect()
}

fn coarsen(obs: &ObservationPath, factor: usize) -> ObservationPath {
    let m = obs.m();
    let mut dz = Vec::with_capacity(obs.n_steps() / factor * m);
    for k in (0..obs.n_steps()).step_by(factor) {
        for c in 0..m {
            dz.push((k..k + factor).map(|j| obs.dz(j)[c]).sum());
        }
    }
    ObservationPath::from_increments(m, dz)
}

#[test]
fn euler_error_shrinks_under_refinement() {
    let model = m4();
    let h = [0.0, 1.0, 2.0];
    let sigma0 = [0.2, 0.3, 0.5];
    let init = SignedMeasure::from_slice(&sigma0).unwrap();
    let fine = TimeGrid::new(1.0, 1e-4).unwrap();
    let mut errors = [0.0f64; 3];
    let n = 200;
    for i in 0..n {
        let obs = reference_path(&fine, 1, 21, i).observation;
        let exact = exact_without_dynamics(&h, &sigma0, obs.terminal()[0], 1.0);
        for (e, factor) in errors.iter_mut().zip([100, 10, 1]) {
            let grid = TimeGrid::new(1.0, 1e-4 * factor as f64).unwrap();
            let run = propagate_zakai_mode(&model, &init, &grid, &coarsen(&obs, factor), ZakaiMode::Signed).unwrap();
            let last = run.sigma.last().unwrap();
            *e += (0..3).map(|j| (last[j] - exact[j]).abs()).sum::<f64>() / n as f64;
        }
    }
    assert!(errors[0] > errors[1] && errors[1] > errors[2], "{errors:?}");
    assert!(errors[2] < 0.05, "{errors:?}");
}

#[test]
fn normalization_identity_holds_on_m1() {
    let grid = TimeGrid::new(1.0, 1e-3).unwrap();
    let mu = ProbabilityMeasure::from_slice(&[0.3, 0.7]).unwrap();
    let paths = physical_paths(&m1(), &mu, &grid, 100, 9).unwrap();
    assert!(mass_identity_check(&m1(), &mu, &paths).unwrap() < 5e-3);
}

#[test]
fn results_do_not_depend_on_the_worker_count() {
    let model = m2();
    let grid = TimeGrid::new(0.5, 1e-3).unwrap();
    let mu = ProbabilityMeasure::from_slice(&[0.5, 0.3, 0.2]).unwrap();
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let paths = physical_paths(&model, &mu, &grid, 300, 4).unwrap();
            let z: Vec<f64> = paths.iter().map(|p| p.observation.terminal()[0]).collect();
            let mass = mass_identity_check(&model, &mu, &paths).unwrap();
            (z, mass)
        })
    };
    let (a, b) = (run(1), run(3));
    assert_eq!(
        a.0.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
        b.0.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
    );
    assert_eq!(a.1.to_bits(), b.1.to_bits());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn wonham_stays_on_the_simplex(seed in any::<u64>()) {
        let mut r = rng(seed);
        let model = random_model(&mut r, 5, 2);
        let grid = TimeGrid::new(0.5, 1e-3).unwrap();
        let mu = ProbabilityMeasure::uniform(model.d());
        let paths = physical_paths(&model, &mu, &grid, 2, seed).unwrap();
        for p in &paths {
            let run = wonham(&model, &mu, &grid, &p.observation).unwrap();
            for pi in run.pi.as_ref().unwrap() {
                prop_assert!((pi.sum() - 1.0).abs() < 1e-12);
                prop_assert!(pi.iter().all(|&x| x >= 0.0));
            }
        }
    }

    #[test]
    fn signed_zakai_is_linear(seed in any::<u64>(), alpha in -2.0f64..2.0) {
        let mut r = rng(seed);
        let model = random_model(&mut r, 5, 2);
        let d = model.d();
        let grid = TimeGrid::new(0.3, 1e-3).unwrap();
        let obs = reference_path(&grid, model.m(), seed, 0).observation;
        let x = DVector::from_fn(d, |i, _| (i as f64 + 1.0).sin());
        let y = DVector::from_fn(d, |i, _| (i as f64 * 2.0).cos());
        let sx = SignedMeasure::new(x.clone()).unwrap();
        let sy = SignedMeasure::new(y.clone()).unwrap();
        let sxy = SignedMeasure::new(&x * alpha + &y).unwrap();
        let mode = ZakaiMode::Signed;
        let (rx, ry, rxy) = (
            propagate_zakai_mode(&model, &sx, &grid, &obs, mode).unwrap(),
            propagate_zakai_mode(&model, &sy, &grid, &obs, mode).unwrap(),
            propagate_zakai_mode(&model, &sxy, &grid, &obs, mode).unwrap(),
        );
        let k = grid.n_steps();
        let combined = &rx.sigma[k] * alpha + &ry.sigma[k];
        prop_assert!((&rxy.sigma[k] - &combined).amax() < 1e-9 * combined.amax().max(1.0));
    }

    #[test]
    fn probability_mode_matches_signed_mode(seed in any::<u64>()) {
        let mut r = rng(seed);
        let model = random_model(&mut r, 4, 1);
        let grid = TimeGrid::new(0.5, 1e-3).unwrap();
        let obs = reference_path(&grid, 1, seed, 1).observation;
        let init = ProbabilityMeasure::uniform(model.d()).to_signed();
        let prob = propagate_zakai(&model, &init, &grid, &obs).unwrap();
        let signed = propagate_zakai_mode(&model, &init, &grid, &obs, ZakaiMode::Signed).unwrap();
        prop_assume!(prob.clamp_events == 0);
        let ones = model.ones();
        for k in [grid.n_steps() / 2, grid.n_steps()] {
            let a = prob.sigma_of(k, &ones);
            let b = signed.sigma[k].sum();
            prop_assert!((a - b).abs() < 1e-9 * b.abs().max(1.0), "{a} vs {b}");
        }
    }
}
