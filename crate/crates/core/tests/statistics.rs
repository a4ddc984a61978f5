use std::f64::consts::PI;

use sburgers::decomposition::{
    convolution_moments, energy_ledger, energy_violations, fit_energy_constant, moment_scan,
    XiExponent,
};
use sburgers::dynamics::{simulate, ModelParams, State};
use sburgers::ergodicity::{
    bootstrap_noise_floor, ergodic_convergence, path_states_at, path_sup_norm, tail_scan,
    transition_expectation, tv_distance, BinEdges, Coupling, EmpiricalMeasure, ObservableSpec,
    TestFunction,
};
use sburgers::noise::RngSeed;
use sburgers::spectral::SpectralField;

fn small() -> ModelParams {
    let mut p = ModelParams::standard().with_modes(16);
    p.dt = 2e-3;
    p
}

fn bump(modes: usize) -> State {
    let mut c = vec![0.0; modes];
    c[0] = 1.0;
    State::new(2.0, SpectralField::from_coeffs(c).unwrap())
}

#[test]
fn convolution_second_moments_match_closed_form() {
    let p = small();
    let sigma2 = 0.01;
    let rows = convolution_moments(&p, &State::zero(16), &[0.0, 10.0], 3.0, 600, 808).unwrap();
    for row in &rows {
        let y_exact = sigma2 / (2.0 * (row.l + p.nu));
        assert!((row.y_second.mean - y_exact).abs() < 3.0 * row.y_second.stderr);
        let mut total = 0.0;
        let mut exact = 0.0;
        let mut var = 0.0;
        for (k, s) in row.z_second.iter().enumerate() {
            total += s.mean;
            var += s.stderr * s.stderr;
            exact += sigma2 / (2.0 * (row.l + p.nu * PI * PI * ((k + 1) * (k + 1)) as f64));
        }
        assert!(
            (total - exact).abs() < 3.0 * var.sqrt(),
            "L={}: {total} vs {exact}",
            row.l
        );
    }
}

#[test]
fn moment_scan_decreases_with_damping() {
    let p = small();
    let rows = moment_scan(
        &p,
        &State::zero(16),
        &[0.0, 1.0, 10.0, 100.0],
        2.0,
        3.0,
        200,
        17,
        10,
    )
    .unwrap();
    for w in rows.windows(2) {
        assert!(w[1].estimate < w[0].estimate, "{rows:?}");
    }
}

#[test]
fn fitted_energy_constant_holds_on_fresh_paths() {
    let p = small();
    let beta = p.nu / 2.0;
    let z = State::zero(16);
    for q in [XiExponent::EightThirds, XiExponent::Two] {
        let fit = fit_energy_constant(
            &energy_ledger(&p, &z, 0.0, 20.0, RngSeed::new(61, 0), q).unwrap(),
            beta,
        )
        .unwrap();
        assert!(fit.c.is_finite() && fit.c >= fit.c_sup);
        for s in 1..=4 {
            let ledger = energy_ledger(&p, &z, 0.0, 20.0, RngSeed::new(61, s), q).unwrap();
            assert_eq!(
                energy_violations(&ledger, beta, fit.c).unwrap(),
                0,
                "{q:?} seed {s}"
            );
        }
    }
}

#[test]
fn transition_stderr_scales_with_path_count() {
    let p = small();
    let f = TestFunction::Clamped {
        obs: ObservableSpec::U,
        lo: -5.0,
        hi: 5.0,
    };
    let a = transition_expectation(&p, &bump(16), &f, 0.5, 100, 3).unwrap();
    let b = transition_expectation(&p, &bump(16), &f, 0.5, 400, 4).unwrap();
    let ratio = a.stderr / b.stderr;
    assert!((ratio - 2.0).abs() < 0.6, "stderr ratio {ratio}");
    assert!((a.mean - b.mean).abs() < 3.0 * (a.stderr.powi(2) + b.stderr.powi(2)).sqrt());
    assert_eq!(a.excluded + b.excluded, 0);
}

#[test]
fn independent_ensembles_from_one_start_sit_within_the_noise_floor() {
    let p = small();
    let z = bump(16);
    let n = 300;
    let rows = ergodic_convergence(
        &p,
        &z,
        &z,
        &[2.0],
        &ObservableSpec::U,
        12,
        n,
        90,
        Coupling::Independent,
    )
    .unwrap();
    let row = &rows[0];
    assert_eq!(row.law1.count(), n);
    let pooled: Vec<f64> = (0..2 * n as u64)
        .map(|i| path_states_at(&p, &z, &[2.0], RngSeed::new(90, i)).unwrap()[0].u)
        .collect();
    let edges = BinEdges::from_samples(&pooled, 12).unwrap();
    let a = EmpiricalMeasure::from_samples(&edges, &pooled[..n]).unwrap();
    let b = EmpiricalMeasure::from_samples(&edges, &pooled[n..]).unwrap();
    assert_eq!(tv_distance(&a, &b).unwrap(), row.tv);
    let (_, q95) = bootstrap_noise_floor(&pooled, n, 12, 400, 5).unwrap();
    assert!(row.tv <= q95, "tv {} vs floor {q95}", row.tv);
}

#[test]
fn path_sup_is_stable_under_time_refinement() {
    let mut p = small().deterministic();
    p.force = 0.5;
    let z = bump(16);
    let sup = |dt: f64| {
        let mut q = p.clone();
        q.dt = dt;
        let obs = [ObservableSpec::U, ObservableSpec::L2NormV];
        path_sup_norm(
            &simulate(&q, &z, 2.0, RngSeed::new(0, 0), &obs).unwrap(),
            2.0,
        )
        .unwrap()
    };
    let (a, b) = (sup(1e-3), sup(5e-4));
    assert!(
        (a.0 - b.0).abs() < 1e-3 * b.0 && (a.1 - b.1).abs() < 1e-3 * b.1,
        "{a:?} {b:?}"
    );
}

#[test]
fn tail_fractions_are_nonincreasing() {
    let p = small();
    let traj = simulate(
        &p,
        &bump(16),
        20.0,
        RngSeed::new(12, 0),
        &[ObservableSpec::HNorm],
    )
    .unwrap();
    let scan = tail_scan(
        &traj,
        &ObservableSpec::HNorm,
        &[0.25, 0.5, 1.0, 1.5, 2.0, 5.0],
        2.0,
        0.05,
    )
    .unwrap();
    assert!(scan.is_nonincreasing(), "{:?}", scan.rows);
    assert_eq!(scan.rows.last().unwrap().1, 0.0);
    assert!(scan.m_star.is_some());
}
