mod common;

use std::cell::RefCell;

use asybo_core::acqopt::{minimize, minimize_all, space_filling, MinimizeSpec};
use asybo_core::acquisition::{
    acq_eval, expected_improvement, kappa_fan, next_kappa, probability_of_improvement,
    select_infill, AcquisitionFamily, AcquisitionSpec, KappaSchedule, KAPPA_MAX, MIN_SEPARATION,
};
use asybo_core::gp::{GpState, Prediction};
use asybo_core::kernel::KernelSpec;
use asybo_core::space::Bounds;
use common::oracle::gaussian_integral;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn pred(mean: f64, sigma: f64) -> Prediction {
    Prediction {
        mean,
        variance: sigma * sigma,
        raw_variance: sigma * sigma,
    }
}

#[test]
fn closed_forms_match_quadrature() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let mu = rng.random_range(-5.0..5.0);
        let sigma = rng.random_range(0.01..3.0);
        let f_min = rng.random_range(-5.0..5.0);
        let pi = gaussian_integral(mu, sigma, f_min, |_| 1.0);
        let ei = gaussian_integral(mu, sigma, f_min, |t| f_min - t);
        assert!((probability_of_improvement(mu, sigma, f_min) - pi).abs() < 1e-6);
        assert!((expected_improvement(mu, sigma, f_min) - ei).abs() < 1e-6);
    }
}

#[test]
fn zero_sigma_gives_zero() {
    assert_eq!(probability_of_improvement(-1.0, 0.0, 0.0), 0.0);
    assert_eq!(expected_improvement(-1.0, 0.0, 0.0), 0.0);
    let lcb = AcquisitionSpec::new(AcquisitionFamily::Lcb, KappaSchedule::Constant(2.0));
    assert_eq!(acq_eval(&lcb, &pred(1.5, 0.0), 2.0).unwrap(), 1.5);
}

#[test]
fn families_are_minimization_scores() {
    let mut spec = AcquisitionSpec::new(AcquisitionFamily::Pi, KappaSchedule::Constant(1.0));
    spec.f_min = 0.0;
    let p = pred(0.3, 0.7);
    assert_eq!(acq_eval(&spec, &p, 1.0).unwrap(), -probability_of_improvement(0.3, 0.7, 0.0));
    spec.family = AcquisitionFamily::Ei;
    assert_eq!(acq_eval(&spec, &p, 1.0).unwrap(), -expected_improvement(0.3, 0.7, 0.0));
    spec.family = AcquisitionFamily::Lcb;
    assert!((acq_eval(&spec, &p, 2.0).unwrap() - (0.3 - 1.4)).abs() < 1e-15);
    spec.family = AcquisitionFamily::MaxVariance;
    assert!((acq_eval(&spec, &p, 2.0).unwrap() + 0.7).abs() < 1e-15);
}

#[test]
fn negative_kappa_is_rejected() {
    let spec = AcquisitionSpec::new(AcquisitionFamily::Lcb, KappaSchedule::Constant(1.0));
    assert!(acq_eval(&spec, &pred(0.0, 1.0), -0.1).is_err());
    let bad = AcquisitionSpec::new(AcquisitionFamily::Lcb, KappaSchedule::Constant(-1.0));
    assert!(bad.validate().is_err());
}

#[test]
fn kappa_schedules() {
    let spec = AcquisitionSpec::new(
        AcquisitionFamily::Lcb,
        KappaSchedule::Annealing { kappa0: 3.0, decay: 0.5 },
    );
    assert_eq!(next_kappa(&spec, 0), 3.0);
    assert_eq!(next_kappa(&spec, 2), 0.75);
    assert_eq!(kappa_fan(2.0, 1), vec![2.0]);
    assert_eq!(kappa_fan(2.0, 4), vec![1.0, 2.0, 4.0, 8.0]);
    assert_eq!(kappa_fan(3.0, 5).last().copied(), Some(KAPPA_MAX));
}

fn toy_gp() -> GpState {
    let x: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64 / 5.0, ((i * 7) % 6) as f64 / 5.0]).collect();
    let y: Vec<f64> = x.iter().map(|p| (p[0] - 0.3).powi(2) + (p[1] - 0.6).powi(2)).collect();
    GpState::fit(x, y, KernelSpec::squared_exponential(0.3).unwrap(), 1e-10).unwrap()
}

fn lcb(k: f64) -> AcquisitionSpec {
    AcquisitionSpec::new(AcquisitionFamily::Lcb, KappaSchedule::Constant(k))
}

#[test]
fn batch_points_are_distinct_and_inside() {
    let gp = toy_gp();
    let box2 = Bounds::unit(2);
    let opt = MinimizeSpec::new(box2.clone(), 3);
    let avoid = vec![vec![0.31, 0.59]];
    for k in [1, 3, 6] {
        let b = select_infill(&gp, &lcb(1.0), k, 0, &opt, &avoid).unwrap();
        assert_eq!(b.points.len(), k);
        assert_eq!(b.kappas, kappa_fan(1.0, k));
        let mut taken: Vec<Vec<f64>> = gp.inputs().to_vec();
        taken.extend(avoid.iter().cloned());
        for p in &b.points {
            assert!(box2.contains(p));
            for q in &taken {
                let d: f64 = p.iter().zip(q).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                assert!(d >= MIN_SEPARATION);
            }
            taken.push(p.clone());
        }
    }
}

#[test]
fn infill_is_deterministic_per_seed() {
    let gp = toy_gp();
    let opt = MinimizeSpec::new(Bounds::unit(2), 17);
    let a = select_infill(&gp, &lcb(2.0), 4, 3, &opt, &[]).unwrap();
    let b = select_infill(&gp, &lcb(2.0), 4, 3, &opt, &[]).unwrap();
    assert_eq!(a, b);
    assert!(select_infill(&gp, &lcb(2.0), 0, 3, &opt, &[]).is_err());
}

#[test]
fn exploitation_lands_near_surrogate_minimum() {
    let gp = toy_gp();
    let opt = MinimizeSpec::new(Bounds::unit(2), 0);
    let b = select_infill(&gp, &lcb(0.0), 1, 0, &opt, &[]).unwrap();
    let best = gp.predict(&b.points[0]).unwrap().mean;
    for p in space_filling(&Bounds::unit(2), 200, 1) {
        assert!(best <= gp.predict(&p).unwrap().mean + 1e-6);
    }
}

#[test]
fn minimizer_finds_shifted_quadratic() {
    let bounds = Bounds::uniform(3, -2.0, 2.0).unwrap();
    let spec = MinimizeSpec::new(bounds, 5);
    let c = [0.5, -1.2, 1.9];
    let m = minimize(
        |x: &[f64]| x.iter().zip(&c).map(|(a, b)| (a - b).powi(2)).sum(),
        &spec,
        &[],
    )
    .unwrap();
    for (a, b) in m.point.iter().zip(&c) {
        assert!((a - b).abs() < 1e-3);
    }
}

#[test]
fn minimizer_respects_budget_and_reaches_corner() {
    let bounds = Bounds::uniform(2, 0.0, 1.0).unwrap();
    let spec = MinimizeSpec {
        max_evals: 300,
        ..MinimizeSpec::new(bounds, 2)
    };
    let calls = RefCell::new(0usize);
    let m = minimize(
        |x: &[f64]| {
            *calls.borrow_mut() += 1;
            x[0] + x[1]
        },
        &spec,
        &[],
    )
    .unwrap();
    assert!(*calls.borrow() <= 300);
    assert!(m.value < 1e-3);
}

#[test]
fn incumbents_are_used_as_starts() {
    let bounds = Bounds::unit(1);
    let spec = MinimizeSpec {
        n_starts: 1,
        max_evals: 40,
        ..MinimizeSpec::new(bounds, 0)
    };
    // narrow well that random starts are unlikely to find
    let f = |x: &[f64]| if (x[0] - 0.777).abs() < 1e-3 { -1.0 } else { 0.0 };
    let m = minimize(f, &spec, &[vec![0.777]]).unwrap();
    assert_eq!(m.value, -1.0);
}

#[test]
fn invalid_minimize_specs() {
    let b = Bounds::unit(2);
    let s = MinimizeSpec { n_starts: 0, ..MinimizeSpec::new(b.clone(), 0) };
    assert!(minimize(|_: &[f64]| 0.0, &s, &[]).is_err());
    let s = MinimizeSpec { max_evals: 3, ..MinimizeSpec::new(b, 0) };
    assert!(minimize(|_: &[f64]| 0.0, &s, &[]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn minimizer_only_queries_the_box(
        lo in prop::collection::vec(-10.0f64..0.0, 2),
        w in prop::collection::vec(0.1f64..10.0, 2),
        seed in any::<u64>(),
    ) {
        let hi: Vec<f64> = lo.iter().zip(&w).map(|(a, b)| a + b).collect();
        let bounds = Bounds::new(lo, hi).unwrap();
        let spec = MinimizeSpec { max_evals: 400, ..MinimizeSpec::new(bounds.clone(), seed) };
        let outside = RefCell::new(false);
        let all = minimize_all(
            |x: &[f64]| {
                if !bounds.contains(x) {
                    *outside.borrow_mut() = true;
                }
                (x[0] * 3.0).sin() + x[1].cos()
            },
            &spec,
            &[],
        )
        .unwrap();
        prop_assert!(!*outside.borrow());
        prop_assert!(all.windows(2).all(|p| p[0].value <= p[1].value));
        prop_assert!(all.iter().all(|m| bounds.contains(&m.point)));
    }

    #[test]
    fn pi_and_ei_are_bounded(mu in -10.0f64..10.0, sigma in 0.0f64..5.0, f_min in -10.0f64..10.0) {
        let pi = probability_of_improvement(mu, sigma, f_min);
        let ei = expected_improvement(mu, sigma, f_min);
        prop_assert!((0.0..=1.0).contains(&pi));
        prop_assert!(ei >= 0.0);
        prop_assert!(ei >= (f_min - mu).max(0.0) - 1e-12 || sigma == 0.0);
    }
}
