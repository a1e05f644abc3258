use std::path::PathBuf;

use proptest::prelude::*;
use proptest::test_runner::RngSeed;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ssa_core::dynamics::{initial_state, lifted_verdict, moment_operator, simulate, spectral_verdict, SimConfig};
use ssa_core::lift::{lift, Coupling};
use ssa_core::random::{self, ModelSpec};
use ssa_core::structure::{restricted_form, slow_subsystem, SlowSubsystem};
use ssa_core::{Error, Kind, Matrix, Model};

fn fixture(name: &str) -> Model {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name);
    Model::load(&path).unwrap()
}

fn slow(m: &Model) -> SlowSubsystem {
    slow_subsystem(&restricted_form(m).unwrap()).unwrap()
}

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        rng_seed: RngSeed::Fixed(0xd1a),
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

/// Least-squares slope of `ln y` against `t`, with the delta-method standard
/// error from per-point standard errors (errors treated as independent).
fn log_slope(t: &[f64], y: &[f64], se: &[f64]) -> (f64, f64) {
    let k = t.len() as f64;
    let tm = t.iter().sum::<f64>() / k;
    let sxx: f64 = t.iter().map(|ti| (ti - tm).powi(2)).sum();
    let w: Vec<f64> = t.iter().map(|ti| (ti - tm) / sxx).collect();
    let slope = w.iter().zip(y).map(|(wi, yi)| wi * yi.ln()).sum();
    let var: f64 = w.iter().zip(y.iter().zip(se)).map(|(wi, (yi, si))| (wi * si / yi).powi(2)).sum();
    (slope, var.sqrt())
}

#[test]
fn simulation_is_reproducible_across_thread_counts() {
    let m = fixture("example1.json");
    let cfg = SimConfig {
        paths: 400,
        horizon: 1.0,
        seed: 99,
        samples: 10,
        ..SimConfig::default()
    };
    let reference = simulate(&m, &cfg).unwrap().to_csv();
    for threads in [1, 3] {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let again = pool.install(|| simulate(&m, &cfg).unwrap().to_csv());
        assert_eq!(again, reference);
    }
    let other = simulate(&m, &SimConfig { seed: 100, ..cfg }).unwrap().to_csv();
    assert_ne!(other, reference);
}

#[test]
fn monte_carlo_agrees_with_exact_moments() {
    let m = fixture("example1.json");
    let ss = slow(&m);
    let op = moment_operator(&m, &ss).unwrap();
    let cfg = SimConfig {
        paths: 4000,
        horizon: 5.0,
        seed: 5,
        samples: 10,
        ..SimConfig::default()
    };
    let stats = simulate(&m, &cfg).unwrap();
    let (_, xi0) = initial_state(&m, &ss, Some(&stats.x0), stats.r0, false).unwrap();
    let psi0 = op.initial_moments(&xi0, stats.r0).unwrap();
    let mut exact = Vec::new();
    for (s, &t) in stats.times.iter().enumerate() {
        let e = op.mean_square(&op.propagate(&psi0, t));
        exact.push(e);
        if s > 0 {
            let gap = (stats.mean_sq[s] - e).abs();
            assert!(gap <= 3.0 * stats.stderr[s], "t = {t}: mc {} exact {e} se {}", stats.mean_sq[s], stats.stderr[s]);
        }
    }

    // Decay rate over [1, 5] from the samples against the same fit of the
    // exact curve (the operator has two modes, so neither equals the
    // abscissa exactly).
    let window: Vec<usize> = (0..stats.times.len()).filter(|&s| stats.times[s] >= 1.0 - 1e-9).collect();
    let t: Vec<f64> = window.iter().map(|&s| stats.times[s]).collect();
    let y: Vec<f64> = window.iter().map(|&s| stats.mean_sq[s]).collect();
    let se: Vec<f64> = window.iter().map(|&s| stats.stderr[s]).collect();
    let ex: Vec<f64> = window.iter().map(|&s| exact[s]).collect();
    let (rate_mc, rate_se) = log_slope(&t, &y, &se);
    let (rate_exact, _) = log_slope(&t, &ex, &vec![0.0; ex.len()]);
    assert!((rate_mc - rate_exact).abs() <= 3.0 * rate_se, "{rate_mc} vs {rate_exact} (se {rate_se})");
    let abscissa = spectral_verdict(&op).unwrap().value;
    assert!((rate_exact - abscissa).abs() < 0.1, "{rate_exact} vs {abscissa}");
}

#[test]
fn frozen_mode_decays_deterministically() {
    // Mode 2 of the first example alone: the reduced noise coefficient is 0,
    // so xi1 follows xi1' = -0.35 xi1 and the second moment decays as e^{-0.7 t}.
    let m = fixture("example1.json");
    let frozen = Model::new(Kind::Continuous, m.e.clone(), vec![m.a[1].clone()], vec![m.c[1].clone()], Matrix::zeros(1, 1)).unwrap();
    let ss = slow(&frozen);
    assert!(ss.c1[0][(0, 0)].abs() < 1e-12);
    let stats = simulate(&frozen, &SimConfig { paths: 200, samples: 5, ..SimConfig::default() }).unwrap();
    for (t, v) in stats.times.iter().zip(&stats.mean_sq) {
        let expected = stats.mean_sq[0] * (-0.7 * t).exp();
        assert!((v - expected).abs() <= 1e-3 * expected, "t = {t}");
    }
    assert!(stats.stderr.iter().all(|s| *s < 1e-12));
}

#[test]
fn second_example_blows_up() {
    let m = fixture("example2.json");
    let stats = simulate(&m, &SimConfig { paths: 1000, horizon: 5.0, seed: 3, ..SimConfig::default() }).unwrap();
    assert_eq!(stats.times.len(), 6);
    assert!(stats.ratio().unwrap() > 100.0);
}

#[test]
fn zero_initial_state_stays_at_zero() {
    let m = fixture("example1.json");
    let stats = simulate(&m, &SimConfig { paths: 50, horizon: 1.0, x0: Some(vec![0.0, 0.0]), ..SimConfig::default() }).unwrap();
    assert!(stats.mean_sq.iter().chain(&stats.stderr).all(|v| *v == 0.0));
    assert_eq!(stats.ratio(), None);
}

#[test]
fn inconsistent_initial_state_is_rejected_or_projected() {
    let m = fixture("example1.json");
    // Mode 1 requires 0.4 x1 + 0.5 x2 = 0.
    let bad = SimConfig { paths: 10, horizon: 0.1, x0: Some(vec![1.0, 1.0]), ..SimConfig::default() };
    assert!(matches!(simulate(&m, &bad), Err(Error::InconsistentInitialState(_))));
    let stats = simulate(&m, &SimConfig { project_x0: true, ..bad }).unwrap();
    assert!((stats.x0[0] - 1.0).abs() < 1e-12);
    assert!((stats.x0[1] + 0.8).abs() < 1e-12);
}

proptest! {
    #![proptest_config(config(60))]

    #[test]
    fn moment_and_lifted_oracles_agree(seed in any::<u64>(), n in 1usize..=3, r in 1usize..=3, modes in 1usize..=2, discrete in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = r.min(n);
        let kind = if discrete { Kind::Discrete } else { Kind::Continuous };
        let m = random::model(&mut rng, &ModelSpec::new(kind, n, r, modes)).unwrap().model;
        let v1 = spectral_verdict(&moment_operator(&m, &slow(&m)).unwrap()).unwrap();
        let v2 = lifted_verdict(&lift(&m, Coupling::Adjoint).unwrap()).unwrap();
        prop_assert_eq!(v1.stable, v2.stable);
        prop_assert!((v1.value - v2.value).abs() <= 1e-6 * v1.value.abs().max(1e-9), "{} vs {}", v1.value, v2.value);
    }
}
