use inert_drift_core::sde::{simulate, simulate_clamped, simulate_lifted, simulate_with_path};
use inert_drift_core::stable_levy::sample_path;
use inert_drift_core::{Alpha, LiftedState, PotentialSpec, SeedRecord, SimParams, StablePathGrid, StateYS};
use proptest::prelude::*;

fn params(alpha: f64, dt: f64, horizon: f64) -> SimParams {
    SimParams {
        alpha: Alpha::new(alpha).unwrap(),
        dt,
        horizon,
    }
}

fn potential() -> PotentialSpec {
    PotentialSpec::new(vec![0.0, 1.0, 0.3], vec![0.0, 0.0, 0.0, -0.5]).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn whole_turn_shift_is_bit_exact(
        y0 in -10.0f64..10.0,
        s0 in -3.0f64..3.0,
        k in -5i64..5,
        alpha in 0.3f64..1.95,
        seed in any::<u64>(),
    ) {
        let p = params(alpha, 1e-2, 1.0);
        let spec = potential();
        let rec = SeedRecord::new(seed, "shift");
        let start = LiftedState::from_ys(StateYS::new(y0, s0));
        let a = simulate_lifted(start, &p, &spec, &rec, None).unwrap();
        let b = simulate_lifted(start.shifted(k), &p, &spec, &rec, None).unwrap();
        for (x, y) in a.states.iter().zip(&b.states) {
            prop_assert_eq!(x.shifted(k), *y);
        }
    }

    #[test]
    fn clamp_above_the_memory_bound_is_inert(
        y0 in -3.0f64..3.0,
        s0 in -4.0f64..4.0,
        alpha in 0.3f64..1.95,
        seed in any::<u64>(),
    ) {
        let horizon = 2.0;
        let p = params(alpha, 1e-2, horizon);
        let spec = potential();
        // |S_t| <= |s0| + t·sup|W''|
        let bound = s0.abs() + horizon * spec.sup_norm(2).unwrap();
        let n = bound.ceil() as u32 + 1;
        let rec = SeedRecord::new(seed, "clamp");
        let free = simulate(StateYS::new(y0, s0), &p, &spec, &rec).unwrap();
        let clamped = simulate_clamped(n, StateYS::new(y0, s0), &p, &spec, &rec).unwrap();
        prop_assert_eq!(free.states, clamped.states);
    }

    #[test]
    fn memory_never_leaves_its_bound(
        y0 in -3.0f64..3.0,
        s0 in -4.0f64..4.0,
        seed in any::<u64>(),
    ) {
        let horizon = 1.5;
        let spec = potential();
        let traj = simulate(StateYS::new(y0, s0), &params(1.2, 1e-2, horizon), &spec, &SeedRecord::new(seed, "band")).unwrap();
        let bound = s0.abs() + horizon * spec.sup_norm(2).unwrap();
        prop_assert!(traj.max_s_excursion() <= bound + 1e-9);
        prop_assert!(traj.states.iter().all(|st| st.theta > -std::f64::consts::PI && st.theta <= std::f64::consts::PI));
    }
}

#[test]
fn tight_clamp_changes_the_path() {
    let p = params(1.0, 1e-2, 1.0);
    let rec = SeedRecord::new(3, "tight");
    let spec = PotentialSpec::cosine();
    let free = simulate(StateYS::new(0.5, 10.0), &p, &spec, &rec).unwrap();
    let clamped = simulate_clamped(1, StateYS::new(0.5, 10.0), &p, &spec, &rec).unwrap();
    assert_ne!(free.states[1], clamped.states[1]);
    assert_eq!(free.states[1].s, clamped.states[1].s);
}

/// Coarse path whose increments are sums of `factor` consecutive fine ones.
fn coarsen(path: &StablePathGrid, factor: usize) -> StablePathGrid {
    StablePathGrid {
        alpha: path.alpha,
        dt: path.dt * factor as f64,
        increments: path.increments.chunks(factor).map(|c| c.iter().sum()).collect(),
        seed: None,
    }
}

#[test]
fn euler_is_first_order_pathwise() {
    let alpha = Alpha::new(1.5).unwrap();
    let spec = PotentialSpec::cosine();
    let fine_dt: f64 = 1e-2 / 64.0;
    let horizon: f64 = 1.0;
    let n = (horizon / fine_dt).round() as usize;
    let start = LiftedState::from_ys(StateYS::new(0.4, 0.8));
    let mut ratios = Vec::new();
    for seed in 0..8 {
        let fine = sample_path(alpha, n, fine_dt, &SeedRecord::new(seed, "order")).unwrap();
        let reference = simulate_with_path(start, &fine, &spec, None).unwrap();
        let err = |factor: usize| {
            let traj = simulate_with_path(start, &coarsen(&fine, factor), &spec, None).unwrap();
            traj.states
                .iter()
                .enumerate()
                .map(|(k, st)| {
                    let r = reference.states[k * factor];
                    (st.y() - r.y()).abs().max((st.s - r.s).abs())
                })
                .fold(0.0, f64::max)
        };
        ratios.push(err(16) / err(8));
    }
    // mean error ratio when dt doubles; 2 for a first-order scheme
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    assert!((1.6..2.6).contains(&mean), "ratios {ratios:?}");
}
