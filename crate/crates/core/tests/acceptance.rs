//! Acceptance criteria, one line each. Runs as a plain binary so the lines
//! are printed even when every criterion passes; exits non-zero otherwise.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use inert_drift_core::flow::{self, SemigroupSetup};
use inert_drift_core::generator::Generator;
use inert_drift_core::harness::{self, semigroup_test_function, ExperimentConfig};
use inert_drift_core::sde::{simulate, simulate_clamped, simulate_lifted};
use inert_drift_core::stable_levy::StableSampler;
use inert_drift_core::stationary::{ks_critical_value, ks_statistic, ks_two_sample};
use inert_drift_core::{
    Alpha, CircleFunction, LiftedState, PotentialSpec, QuadratureConfig, SeedRecord,
    SimParams, StateYS,
};

mod common;
use common::oracle_multiplier;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn defaults() -> ExperimentConfig {
    ExperimentConfig::default()
}

/// Criteria 1 and 2 share one run of the stationary leg.
fn stationary() -> (Outcome, Outcome) {
    let (report, _) = harness::stationary_report(&defaults()).expect("stationary leg runs");
    let main = &report.legs[0].gof;
    let half = &report.refinement.as_ref().expect("dt/2 leg is on by default").gof;
    let line = |g: &inert_drift_core::GofReport| {
        format!(
            "n={} ks_theta={:.4} ks_s={:.4} (< {}) var_s={:.4} chi2={:.1} (< {:.1})",
            g.n_effective,
            g.ks_theta,
            g.ks_s,
            g.ks_threshold,
            g.var_s,
            g.chi2.as_ref().map_or(f64::NAN, |c| c.statistic),
            g.chi2_critical.unwrap_or(f64::NAN),
        )
    };
    let first = outcome(
        main.all_pass() && half.all_pass() && main.n_effective >= 10_000,
        format!(
            "burn-in {} thinning {:.2}; dt: {}; dt/2: {}",
            report.burn_in,
            report.thinning,
            line(main),
            line(half)
        ),
    );
    let cmp = &report.start_comparisons[0];
    let second = outcome(
        cmp.pass && report.legs.iter().all(|l| l.gof.n_effective >= 10_000),
        format!(
            "(0,0) vs (2,1.5): ks_theta={:.4} ks_s={:.4} critical(1%)={:.4}",
            cmp.ks_theta, cmp.ks_s, cmp.critical
        ),
    );
    (first, second)
}

fn generator_identities() -> Outcome {
    let report = harness::generator_report(&defaults()).expect("generator leg runs");
    let worst = |es: &[harness::GeneratorEntry]| es.iter().map(|e| e.residual).fold(0.0, f64::max);
    let pass = report.integral.len() == 20
        && report.stationarity.len() == 10
        && report.integral.iter().all(|e| e.pass && e.residual < 1e-6)
        && report.stationarity.iter().all(|e| e.pass && e.residual < 1e-6)
        && report.negative_control.residual > 1e-3;
    outcome(
        pass,
        format!(
            "max integral residual {:.2e} (20 polys), max stationarity residual {:.2e} (10 fns), negative control {:.3e}",
            worst(&report.integral),
            worst(&report.stationarity),
            report.negative_control.residual
        ),
    )
}

fn spectral() -> Outcome {
    let q = QuadratureConfig::default();
    let mut worst_identity: f64 = 0.0;
    let mut worst_oracle: f64 = 0.0;
    for a in [0.5, 1.0, 1.5] {
        let gen = Generator::new(Alpha::new(a).unwrap(), PotentialSpec::cosine(), q).unwrap();
        for k in 1..=8usize {
            let eigen = -(k as f64).powf(a);
            let oracle = oracle_multiplier(k, a);
            worst_oracle = worst_oracle.max((oracle - eigen).abs());
            for f in [CircleFunction::cos_harmonic(k), CircleFunction::sin_harmonic(k)] {
                for j in 0..16 {
                    let theta = -PI + 2.0 * PI * (j as f64 + 0.25) / 16.0;
                    let v = gen.circle_l(&f, theta);
                    worst_identity = worst_identity.max((v - eigen * f.value(theta)).abs());
                    worst_oracle = worst_oracle.max((v - oracle * f.value(theta)).abs());
                }
            }
        }
    }
    outcome(
        worst_identity < 1e-4 && worst_oracle < 1e-4,
        format!(
            "k<=8, alpha in {{0.5,1,1.5}}: max |L - eigen| {worst_identity:.2e}, max |L - oracle(1e6 nodes)| {worst_oracle:.2e}"
        ),
    )
}

fn flow_bounds() -> Outcome {
    let c = defaults();
    let start = Instant::now();
    let report = flow::run_flow_probes(
        &c.model.potential,
        &c.flow.probes,
        &SeedRecord::new(c.seed, "flow/probes"),
    )
    .expect("probes run");
    let secs = start.elapsed().as_secs_f64();
    let per_bound: Vec<String> = report
        .summary
        .iter()
        .map(|s| format!("{:?} {}/{} worst {:.2}", s.bound, s.probes - s.violations, s.probes, s.worst_ratio))
        .collect();
    let enough = report.summary.iter().all(|s| s.probes >= 100);
    outcome(
        report.pass && enough && secs < 600.0,
        format!(
            "t_star={:.4}; {}; {:.1}s",
            report.bounds.t_star,
            per_bound.join(", "),
            secs
        ),
    )
}

fn semigroup() -> Outcome {
    let c = defaults();
    let sg = &c.flow.semigroup;
    let setup = SemigroupSetup {
        alpha: Alpha::new(1.0).unwrap(),
        dt: sg.dt,
        t: 0.05,
        paths: 10_000,
        h: sg.h,
        bands: 3.0,
    };
    let report = flow::semigroup_derivative_check(
        &semigroup_test_function(sg.bump_radius),
        sg.x,
        &PotentialSpec::cosine(),
        &setup,
        &SeedRecord::new(c.seed, "flow/semigroup"),
    )
    .expect("semigroup check runs");
    let worst = report
        .comparisons
        .iter()
        .map(|r| r.difference / r.band)
        .fold(0.0, f64::max);
    outcome(
        report.pass,
        format!(
            "{} derivatives, m={}, t={}: max |lhs - rhs| / band = {:.2e} (< 3)",
            report.comparisons.len(),
            report.paths,
            report.t,
            worst
        ),
    )
}

fn read_outputs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for leg in fs::read_dir(dir).unwrap() {
        let leg = leg.unwrap().path();
        for f in fs::read_dir(&leg).unwrap() {
            let f = f.unwrap().path();
            if f.file_name().unwrap() != "manifest.json" {
                let rel = f.strip_prefix(dir).unwrap().display().to_string();
                out.push((rel, fs::read(&f).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn structural() -> Outcome {
    let spec = PotentialSpec::cosine();
    let mut notes = Vec::new();

    // 2π shift
    let mut shift_ok = true;
    for seed in 0..20u64 {
        let p = SimParams { alpha: Alpha::new(0.5 + 0.07 * seed as f64).unwrap(), dt: 1e-3, horizon: 2.0 };
        let rec = SeedRecord::new(seed, "acceptance/shift");
        let start = LiftedState::from_ys(StateYS::new(0.3 * seed as f64 - 2.0, 1.0 - 0.1 * seed as f64));
        let a = simulate_lifted(start, &p, &spec, &rec, None).unwrap();
        let b = simulate_lifted(start.shifted(1), &p, &spec, &rec, None).unwrap();
        shift_ok &= a.states.iter().zip(&b.states).all(|(x, y)| x.shifted(1) == *y);
    }
    notes.push(format!("shift {}", if shift_ok { "bit-exact" } else { "DIFFERS" }));

    // clamp above |s0| + T sup|W''|
    let mut clamp_ok = true;
    for seed in 0..20u64 {
        let p = SimParams { alpha: Alpha::new(1.2).unwrap(), dt: 1e-3, horizon: 2.0 };
        let rec = SeedRecord::new(seed, "acceptance/clamp");
        let s0 = 2.0 - 0.2 * seed as f64;
        let n = (s0.abs() + 2.0).ceil() as u32 + 1;
        let a = simulate(StateYS::new(0.1, s0), &p, &spec, &rec).unwrap();
        let b = simulate_clamped(n, StateYS::new(0.1, s0), &p, &spec, &rec).unwrap();
        clamp_ok &= a.states == b.states;
    }
    notes.push(format!("clamp {}", if clamp_ok { "bit-exact" } else { "DIFFERS" }));

    // sampler: characteristic function and self-similarity
    let draws = |dt: f64, n: usize, stream: &str| {
        let s = StableSampler::new(Alpha::new(1.0).unwrap(), dt).unwrap();
        let mut rng = SeedRecord::new(2024, stream).rng();
        (0..n).map(|_| s.sample(&mut rng)).collect::<Vec<f64>>()
    };
    let xs = draws(1.0, 100_000, "acceptance/cf");
    let cf_err = [0.5f64, 1.0, 2.0]
        .iter()
        .map(|&xi| (xs.iter().map(|x| (xi * x).cos()).sum::<f64>() / xs.len() as f64 - (-xi).exp()).abs())
        .fold(0.0, f64::max);
    let n = 10_000;
    let scaled: Vec<f64> = draws(4.0, n, "acceptance/ss4").iter().map(|x| x / 4.0).collect();
    let unit = draws(1.0, n, "acceptance/ss1");
    let ks_one = ks_statistic(&scaled, |x| 0.5 + x.atan() / PI);
    let ks_two = ks_two_sample(&scaled, &unit);
    let sampler_ok = cf_err < 0.01
        && ks_one < 1.36 / (n as f64).sqrt()
        && ks_two < ks_critical_value(0.01, n, Some(n));
    notes.push(format!(
        "cf err {cf_err:.4} (< 0.01), self-similarity ks {ks_one:.4} (< {:.4}) / two-sample {ks_two:.4} (< {:.4})",
        1.36 / (n as f64).sqrt(),
        ks_critical_value(0.01, n, Some(n))
    ));

    // full suite twice from the same master seed
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let mut ca = defaults();
    ca.out_dir = a.path().to_path_buf();
    let mut cb = defaults();
    cb.out_dir = b.path().to_path_buf();
    let legs_a = harness::run_all(&ca).expect("suite runs");
    let legs_b = harness::run_all(&cb).expect("suite runs");
    let outputs_a = read_outputs(a.path());
    let repro_ok = !outputs_a.is_empty()
        && outputs_a == read_outputs(b.path())
        && legs_a.iter().zip(&legs_b).all(|(x, y)| x.files == y.files);
    notes.push(format!(
        "suite reproducible: {} ({} files)",
        repro_ok,
        outputs_a.len()
    ));

    outcome(shift_ok && clamp_ok && sampler_ok && repro_ok, notes.join("; "))
}

fn main() -> ExitCode {
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let (c1, c2) = stationary();
    results.push((1, "stationary law", c1));
    results.push((2, "start independence", c2));
    results.push((3, "generator identities", generator_identities()));
    results.push((4, "spectral oracle", spectral()));
    results.push((5, "flow bounds", flow_bounds()));
    results.push((6, "semigroup derivatives", semigroup()));
    results.push((7, "structural invariants", structural()));
    let mut all = true;
    for (id, name, o) in &results {
        all &= o.pass;
        println!(
            "acceptance {id} {name:<22} {}  {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
