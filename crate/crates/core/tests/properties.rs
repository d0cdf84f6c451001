use std::f64::consts::PI;

use inert_drift_core::generator::{BumpPolynomial, Generator};
use inert_drift_core::harness::random_cylinder_function;
use inert_drift_core::sde::simulate_with_path;
use inert_drift_core::stable_levy::sample_path;
use inert_drift_core::stationary::{ks_statistic, ks_two_sample};
use inert_drift_core::{
    Alpha, CircleFunction, CylinderFunction, LiftedState, PotentialSpec, QuadratureConfig,
    SeedRecord, SimParams, StablePathGrid, StateYS,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn generator(a: f64) -> Generator {
    Generator::new(Alpha::new(a).unwrap(), PotentialSpec::cosine(), QuadratureConfig::default())
        .unwrap()
}

fn arb_circle(max_degree: usize) -> impl Strategy<Value = CircleFunction> {
    (1..=max_degree).prop_flat_map(|d| {
        (
            prop::collection::vec(-1.0f64..1.0, d + 1),
            prop::collection::vec(-1.0f64..1.0, d + 1),
        )
            .prop_map(|(c, s)| CircleFunction::new(c, s))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn circle_operator_integrates_to_zero(f in arb_circle(8), a in 0.2f64..1.95) {
        prop_assert!(generator(a).integral_l_residual(&f) < 1e-6);
    }

    #[test]
    fn harmonics_are_eigenfunctions(k in 1usize..=8, a in 0.2f64..1.95, theta in -PI..=PI, sine in any::<bool>()) {
        let f = if sine { CircleFunction::sin_harmonic(k) } else { CircleFunction::cos_harmonic(k) };
        let expect = -(k as f64).powf(a) * f.value(theta);
        prop_assert!((generator(a).circle_l(&f, theta) - expect).abs() < 1e-4);
    }

    #[test]
    fn evenness_about_a_point_is_preserved(
        coeffs in prop::collection::vec(-1.0f64..1.0, 1..6),
        centre in -PI..PI,
        u in 0.0f64..PI,
        a in 0.3f64..1.9,
    ) {
        // Σ c_k cos(k(θ - centre)) is even about centre
        let mut cos = vec![0.0; coeffs.len() + 1];
        let mut sin = vec![0.0; coeffs.len() + 1];
        for (k, c) in coeffs.iter().enumerate() {
            let k1 = (k + 1) as f64;
            cos[k + 1] = c * (k1 * centre).cos();
            sin[k + 1] = c * (k1 * centre).sin();
        }
        let f = CircleFunction::new(cos, sin);
        let g = generator(a);
        let (l, r) = (g.circle_l(&f, centre - u), g.circle_l(&f, centre + u));
        prop_assert!((l - r).abs() < 1e-10, "{} vs {}", l, r);
    }

    #[test]
    fn independent_product_measure_is_stationary(seed in any::<u64>(), a in 0.3f64..1.9, terms in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = random_cylinder_function(&mut rng, terms);
        prop_assert!(generator(a).stationarity_residual(&f).unwrap() < 1e-6);
    }

    #[test]
    fn memory_moves_at_most_curvature_times_time(
        y0 in -4.0f64..4.0,
        s0 in -3.0f64..3.0,
        alpha in 0.3f64..1.95,
        seed in any::<u64>(),
    ) {
        let spec = PotentialSpec::new(vec![0.0, 0.6, 0.0, 0.2], vec![0.0, 0.0, 0.4]).unwrap();
        let dt = 1e-2;
        let params = SimParams { alpha: Alpha::new(alpha).unwrap(), dt, horizon: 2.0 };
        let traj = inert_drift_core::sde::simulate(StateYS::new(y0, s0), &params, &spec, &SeedRecord::new(seed, "s-bound")).unwrap();
        let sup = spec.sup_norm(2).unwrap();
        for (k, st) in traj.states.iter().enumerate() {
            // rounding of k additions
            prop_assert!((st.s - s0).abs() <= k as f64 * dt * sup * (1.0 + 1e-12) + 1e-15 * k as f64);
        }
    }

    #[test]
    fn ks_statistic_lies_in_unit_interval(xs in prop::collection::vec(-5.0f64..5.0, 1..200), ys in prop::collection::vec(-5.0f64..5.0, 1..200)) {
        let d = ks_statistic(&xs, |x| 0.5 + x.atan() / PI);
        prop_assert!((0.0..=1.0).contains(&d));
        let d2 = ks_two_sample(&xs, &ys);
        prop_assert!((0.0..=1.0).contains(&d2));
        prop_assert_eq!(ks_two_sample(&xs, &xs), 0.0);
    }
}

#[test]
fn separable_and_mixed_cylinder_functions_are_stationary() {
    let g = generator(1.0);
    let separable = CylinderFunction::separable(
        CircleFunction::new(vec![0.3, -0.5, 0.2], vec![0.0, 0.7]),
        BumpPolynomial::new(vec![0.2, 1.0, -0.4], 2.5),
    );
    let mixed = CylinderFunction::new(vec![
        (CircleFunction::cos_harmonic(2), BumpPolynomial::new(vec![1.0], 1.5)),
        (CircleFunction::sin_harmonic(1), BumpPolynomial::new(vec![0.0, 1.0], 2.0)),
        (CircleFunction::new(vec![0.0, 0.5], vec![0.0, 0.0, -0.3]), BumpPolynomial::new(vec![0.5, 0.0, 1.0], 3.0)),
    ]);
    for f in [separable, mixed] {
        let r = g.stationarity_residual(&f).unwrap();
        assert!(r < 1e-6, "{r}");
    }
}

/// `y(T)` on frozen noise as dt halves from 2⁻⁶ to 2⁻¹⁰.
#[test]
fn halving_the_step_changes_the_endpoint_at_first_order() {
    let alpha = Alpha::new(1.3).unwrap();
    let spec = PotentialSpec::cosine();
    let finest = 2f64.powi(-12);
    let n = (1.0 / finest) as usize;
    let start = LiftedState::from_ys(StateYS::new(0.3, 1.0));
    let fine = sample_path(alpha, n, finest, &SeedRecord::new(4, "slope")).unwrap();
    let endpoint = |level: i32| {
        let factor = 1usize << (12 - level);
        let path = StablePathGrid {
            alpha,
            dt: finest * factor as f64,
            increments: fine.increments.chunks(factor).map(|c| c.iter().sum()).collect(),
            seed: None,
        };
        simulate_with_path(start, &path, &spec, None).unwrap().last().to_ys()
    };
    let ends: Vec<StateYS> = (6..=11).map(endpoint).collect();
    let changes: Vec<f64> = ends
        .windows(2)
        .map(|w| (w[0].y - w[1].y).abs().max((w[0].s - w[1].s).abs()))
        .collect();
    // least-squares slope of log2(change) against log2(dt)
    let xs: Vec<f64> = (0..changes.len()).map(|j| -(6.0 + j as f64)).collect();
    let ys: Vec<f64> = changes.iter().map(|c| c.log2()).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / xs.len() as f64, ys.iter().sum::<f64>() / ys.len() as f64);
    let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / xs.iter().map(|x| (x - mx) * (x - mx)).sum::<f64>();
    assert!(slope >= 0.9, "slope {slope}, changes {changes:?}");
}
