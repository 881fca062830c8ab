mod common;

use common::*;
use dualscope::diagnostics::{
    distinguish, o3_experiment, perturb_along, relative_entropy_estimate, DistinguishConfig, Verdict,
    PERTURBATION_FLOOR,
};
use dualscope::observability::unobservable_directions;
use dualscope::simulate::TimeGrid;
use dualscope::{analyze, ProbabilityMeasure, DEFAULT_RANK_TOL};
use nalgebra::DVector;
use rand::Rng;

fn random_prior<R: Rng>(r: &mut R, d: usize) -> ProbabilityMeasure {
    let w = DVector::from_fn(d, |_, _| r.random_range(0.05..1.0));
    let total = w.sum();
    ProbabilityMeasure::new(w / total).unwrap()
}

#[test]
fn verdicts_agree_with_the_algebraic_test_on_random_models() {
    let grid = TimeGrid::new(1.0, 1e-4).unwrap();
    let mut r = rng(2024);
    let mut checked = (0, 0);
    for trial in 0..50u64 {
        let d = r.random_range(2..=5);
        let m = r.random_range(1..=2);
        if trial % 2 == 0 {
            let model = swap_symmetric_model(&mut r, d, m);
            let mu = random_prior(&mut r, d);
            let null = unobservable_directions(&model, DEFAULT_RANK_TOL);
            let Some(nu) = perturb_along(&mu, &null.basis()[0], PERTURBATION_FLOOR) else {
                continue;
            };
            let res = distinguish(&model, &mu, &nu, &DistinguishConfig::new(grid, 100, trial)).unwrap();
            assert!(res.algebraic.in_unobservable_span);
            assert_eq!(res.verdict, Verdict::Indistinguishable, "trial {trial}: {res:?}");
            assert!(res.consistent());
            checked.0 += 1;
        } else {
            let model = random_distinct_rows(&mut r, d, m);
            assert!(analyze(&model, DEFAULT_RANK_TOL).observable);
            let mu = random_prior(&mut r, d);
            let nu = loop {
                let nu = random_prior(&mut r, d);
                if (nu.weights() - mu.weights()).lp_norm(1) > 0.1 {
                    break nu;
                }
            };
            let res = distinguish(&model, &mu, &nu, &DistinguishConfig::new(grid, 100, trial)).unwrap();
            assert_eq!(res.verdict, Verdict::Distinguishable, "trial {trial}: {res:?}");
            checked.1 += 1;
        }
    }
    assert!(checked.0 >= 20 && checked.1 >= 20, "{checked:?}");
}

#[test]
fn m2_pair_discrepancy_does_not_grow_under_refinement() {
    let model = m2();
    let mu = ProbabilityMeasure::from_slice(&[0.5, 0.3, 0.2]).unwrap();
    let nu = ProbabilityMeasure::from_slice(&[0.7, 0.1, 0.2]).unwrap();
    let coarse = o3_experiment(&model, &mu, &nu, &TimeGrid::new(1.0, 1e-3).unwrap(), 50, 1)
        .unwrap()
        .0;
    let fine = o3_experiment(&model, &mu, &nu, &TimeGrid::new(1.0, 1e-4).unwrap(), 50, 1)
        .unwrap()
        .0;
    assert!(fine < 1e-2 && coarse < 1e-2);
    assert!(fine <= coarse || fine < 1e-12, "{fine} vs {coarse}");
}

#[test]
fn entropy_grows_with_the_horizon() {
    let model = m1();
    let mu = ProbabilityMeasure::from_slice(&[0.9, 0.1]).unwrap();
    let nu = ProbabilityMeasure::from_slice(&[0.5, 0.5]).unwrap();
    let short = relative_entropy_estimate(&model, &mu, &nu, &TimeGrid::new(1.0, 1e-3).unwrap(), 400, 3).unwrap();
    let long = relative_entropy_estimate(&model, &mu, &nu, &TimeGrid::new(2.0, 1e-3).unwrap(), 400, 3).unwrap();
    assert!(long.estimate >= short.estimate - 3.0 * short.std_err.hypot(long.std_err));
}
