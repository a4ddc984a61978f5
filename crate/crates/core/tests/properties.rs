use std::f64::consts::PI;

use proptest::prelude::*;

use sburgers::dynamics::{
    eval_g0, eval_g1, phi_n, DiffusionRole, DiffusionSpec, State, Trajectory,
};
use sburgers::ergodicity::{
    occupation_measure, tv_distance, BinEdges, EmpiricalMeasure, ObservableSpec,
};
use sburgers::io::{csv_text, parse_csv};
use sburgers::noise::{read_increments, write_increments, NoiseIncrement};
use sburgers::spectral::{
    apply_semigroup, h10_norm_sq, inner, norm_fractional, GridField, NuConvention,
    OperatorSpectrum, SineBasis, SpectralField,
};

fn coeffs(max_modes: usize) -> impl Strategy<Value = Vec<f64>> {
    (1..=max_modes).prop_flat_map(|k| prop::collection::vec(-2.0f64..2.0, k))
}

fn grid_for(modes: usize) -> usize {
    (2 * modes).next_power_of_two()
}

fn trapezoid(values: &[f64]) -> f64 {
    let n = values.len() - 1;
    (values[1..n].iter().sum::<f64>() + 0.5 * (values[0] + values[n])) / n as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn parseval(c in coeffs(48)) {
        let f = SpectralField::from_coeffs(c).unwrap();
        let basis = SineBasis::new(f.modes(), grid_for(f.modes())).unwrap();
        let g = basis.to_grid(&f).unwrap();
        let sq: Vec<f64> = g.values().iter().map(|v| v * v).collect();
        prop_assert!((trapezoid(&sq) - f.norm_sq()).abs() <= 1e-10 * f.norm_sq().max(1.0));
        let back = basis.from_grid(&g).unwrap();
        prop_assert!(back.sub(&f).unwrap().norm() <= 1e-12 * f.norm().max(1.0));
    }

    #[test]
    fn fft_matches_direct_transforms(c in coeffs(40)) {
        let f = SpectralField::from_coeffs(c).unwrap();
        let basis = SineBasis::new(f.modes(), grid_for(f.modes())).unwrap();
        let fast = basis.to_grid(&f).unwrap();
        let slow = basis.to_grid_reference(&f).unwrap();
        for (a, b) in fast.values().iter().zip(slow.values()) {
            prop_assert!((a - b).abs() <= 1e-12 * f.norm().max(1.0) * 8.0);
        }
        let cos_fast = basis.cosine_integrals(&fast).unwrap();
        let cos_slow = basis.cosine_integrals_reference(&fast).unwrap();
        for (a, b) in cos_fast.iter().zip(&cos_slow) {
            prop_assert!((a - b).abs() <= 1e-12 * f.norm().max(1.0) * 8.0);
        }
    }

    #[test]
    fn semigroup_law_and_contraction(c in coeffs(32), t in 0.0f64..0.2, s in 0.0f64..0.2, nu in 0.1f64..3.0) {
        let f = SpectralField::from_coeffs(c).unwrap();
        let spec = OperatorSpectrum::new(nu, f.modes(), NuConvention::Physical).unwrap();
        let two = apply_semigroup(&apply_semigroup(&f, t, &spec).unwrap(), s, &spec).unwrap();
        let one = apply_semigroup(&f, t + s, &spec).unwrap();
        prop_assert!(two.sub(&one).unwrap().norm() <= 1e-12 * f.norm().max(1.0));
        let st = apply_semigroup(&f, t, &spec).unwrap();
        prop_assert!(st.norm() <= (-nu * PI * PI * t).exp() * f.norm() * (1.0 + 1e-14) + 1e-300);
    }

    #[test]
    fn poincare(c in coeffs(32)) {
        let f = SpectralField::from_coeffs(c).unwrap();
        let h1 = norm_fractional(&f, 0.5).unwrap();
        prop_assert!(PI * PI * f.norm_sq() <= h1 * h1 * (1.0 + 1e-12));
        prop_assert!((h1 * h1 - h10_norm_sq(&f)).abs() <= 1e-9 * h1 * h1);
    }

    #[test]
    fn nonlinearity_is_skew(c in coeffs(48)) {
        let v = SpectralField::from_coeffs(c).unwrap();
        let basis = SineBasis::new(v.modes(), grid_for(v.modes())).unwrap();
        let b = basis.dx_square(&v).unwrap();
        let scale = (b.norm() * v.norm()).max(1e-300);
        prop_assert!(inner(&b, &v).unwrap().abs() <= 1e-8 * scale);
    }

    #[test]
    fn tv_is_a_metric(
        a in prop::collection::vec(-1.0f64..2.0, 1..60),
        b in prop::collection::vec(-1.0f64..2.0, 1..60),
        c in prop::collection::vec(-1.0f64..2.0, 1..60),
        bins in 1usize..20,
    ) {
        let e = BinEdges::uniform(0.0, 1.0, bins).unwrap();
        let m: Vec<EmpiricalMeasure> = [a, b, c].iter().map(|x| EmpiricalMeasure::from_samples(&e, x).unwrap()).collect();
        let d = |i: usize, j: usize| tv_distance(&m[i], &m[j]).unwrap();
        prop_assert_eq!(d(0, 0), 0.0);
        prop_assert_eq!(d(0, 1), d(1, 0));
        prop_assert!((0.0..=1.0).contains(&d(0, 1)));
        prop_assert!(d(0, 2) <= d(0, 1) + d(1, 2) + 1e-12);
        for mm in &m {
            prop_assert!((mm.masses().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(mm.masses().iter().all(|x| *x >= 0.0));
        }
    }

    #[test]
    fn occupation_is_idempotent_under_self_concatenation(xs in prop::collection::vec(-3.0f64..3.0, 2..80)) {
        let traj = Trajectory {
            times: (0..xs.len()).map(|i| i as f64 * 0.5).collect(),
            states: Vec::new(),
            observers: vec![ObservableSpec::U],
            records: vec![xs.clone()],
        };
        let twice = traj.concat(&traj);
        let e = BinEdges::uniform(-3.0, 3.0, 12).unwrap();
        let m1 = occupation_measure(&traj, &ObservableSpec::U, &e, 0.0).unwrap();
        let m2 = occupation_measure(&twice, &ObservableSpec::U, &e, 0.0).unwrap();
        for (a, b) in m1.masses().iter().zip(m2.masses()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn clamped_diffusion_respects_bounds(
        base in -1.0f64..1.0, su in -2.0f64..2.0, sv in -2.0f64..2.0,
        lo in 0.01f64..0.5, width in 0.0f64..0.5,
        u in -50.0f64..50.0, c in coeffs(8),
    ) {
        let spec = DiffusionSpec::ClampedAffine { base, slope_u: su, slope_v: sv, lower: lo, upper: lo + width };
        spec.validate(DiffusionRole::G1).unwrap();
        prop_assert!(spec.is_separated_from_zero());
        let s = State::new(u, SpectralField::from_coeffs(c).unwrap());
        let basis = SineBasis::new(s.v.modes(), grid_for(s.v.modes())).unwrap();
        let g0 = eval_g0(&spec, &s);
        prop_assert!(g0 >= lo && g0 <= lo + width);
        prop_assert!(eval_g1(&spec, &s, &basis).unwrap().values().iter().all(|g| *g >= lo && *g <= lo + width));
    }

    #[test]
    fn cutoff_is_monotone_and_lipschitz(a in 0.0f64..20.0, b in 0.0f64..20.0, n in 1.0f64..10.0) {
        let (pa, pb) = (phi_n(a, n), phi_n(b, n));
        prop_assert!((0.0..=1.0).contains(&pa));
        prop_assert!((pa - pb).abs() <= 1.5 * (a - b).abs() + 1e-15);
        if a <= b { prop_assert!(pa >= pb); }
    }

    #[test]
    fn csv_round_trip(xs in prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::ZERO | prop::num::f64::SUBNORMAL, 1..30)) {
        let text = csv_text(&["x", "y"], xs.iter().map(|x| vec![*x, -*x]));
        let (_, rows) = parse_csv(&text).unwrap();
        for (r, x) in rows.iter().zip(&xs) {
            prop_assert_eq!(r[0].to_bits(), x.to_bits());
        }
    }

    #[test]
    fn increments_round_trip(raw in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 5), 0..20), dt in 1e-5f64..1.0) {
        let incs: Vec<NoiseIncrement> = raw
            .iter()
            .map(|r| NoiseIncrement { dw0: r[0], dw: r[1..].to_vec(), dt })
            .collect();
        let mut bytes = Vec::new();
        write_increments(&mut bytes, &incs).unwrap();
        if incs.is_empty() {
            return Ok(());
        }
        prop_assert_eq!(read_increments(bytes.as_slice()).unwrap(), incs);
    }

    #[test]
    fn l1_norm_of_constant(c in -5.0f64..5.0) {
        let g = GridField::constant(64, c);
        prop_assert!((sburgers::spectral::norm_l1(&g) - c.abs()).abs() <= 1e-14);
    }
}
