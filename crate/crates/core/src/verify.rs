//! Named invariant checks with measured values, and the derivative-extension
//! bound report.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::RunConfig;
use crate::decomposition::{energy_identity_residual, AuxState};
use crate::dynamics::{simulate, ModelParams, State, Stepper};
use crate::ergodicity::{
    occupation_measure, tv_distance, BinEdges, EmpiricalMeasure, ObservableSpec,
};
use crate::error::Result;
use crate::noise::{ConvolutionKernel, NoiseStream, RngSeed};
use crate::spectral::{
    apply_semigroup, inner, smoothing_constant, smoothing_series_bound, norm_l1, GridField,
    OperatorSpectrum, SineBasis, SpectralField,
};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub measured: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl CheckResult {
    /// Passes when `measured <= tolerance`.
    fn at_most(name: &str, measured: f64, tolerance: f64, detail: impl Into<String>) -> Self {
        CheckResult {
            name: name.into(),
            passed: measured <= tolerance,
            measured,
            tolerance,
            detail: detail.into(),
        }
    }

    /// Passes when `measured >= threshold`.
    fn at_least(name: &str, measured: f64, threshold: f64, detail: impl Into<String>) -> Self {
        CheckResult {
            name: name.into(),
            passed: measured >= threshold,
            measured,
            tolerance: threshold,
            detail: detail.into(),
        }
    }
}

fn random_field(modes: usize, rng: &mut ChaCha8Rng) -> SpectralField {
    SpectralField::from_coeffs((0..modes).map(|_| rng.random_range(-1.0..1.0)).collect())
        .expect("finite")
}

/// Grid field with iid uniform values in `[-1, 1]` at every node.
pub fn random_grid_field(grid: usize, rng: &mut ChaCha8Rng) -> GridField {
    GridField::from_fn(grid, |_| rng.random_range(-1.0..1.0))
}

fn trapezoid_sq(g: &GridField) -> f64 {
    let v = g.values();
    let h = 1.0 / g.grid() as f64;
    let inner: f64 = v[1..v.len() - 1].iter().map(|x| x * x).sum();
    h * (inner + 0.5 * (v[0] * v[0] + v[v.len() - 1] * v[v.len() - 1]))
}

/// Orthonormality, Parseval, semigroup law and contraction of the spectral core.
pub fn spectral_checks(modes: usize, grid: usize, nu: f64, seed: u64) -> Result<Vec<CheckResult>> {
    let basis = SineBasis::new(modes, grid)?;
    let spec = OperatorSpectrum::new(nu, modes, Default::default())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut ortho: f64 = 0.0;
    for k in 1..=modes {
        let back = basis.from_grid(&basis.to_grid(&SpectralField::basis(modes, k))?)?;
        for j in 1..=modes {
            let delta = if j == k { 1.0 } else { 0.0 };
            ortho = ortho.max((back.mode(j) - delta).abs());
        }
    }

    let mut parseval: f64 = 0.0;
    let mut law: f64 = 0.0;
    let mut contraction: f64 = f64::NEG_INFINITY;
    for _ in 0..20 {
        let f = random_field(modes, &mut rng);
        let g = basis.to_grid(&f)?;
        parseval = parseval.max((trapezoid_sq(&g) - f.norm_sq()).abs() / f.norm_sq());
        let (t, s) = (rng.random_range(0.0..0.1), rng.random_range(0.0..0.1));
        let two = apply_semigroup(&apply_semigroup(&f, t, &spec)?, s, &spec)?;
        let one = apply_semigroup(&f, t + s, &spec)?;
        law = law.max(two.sub(&one)?.norm() / f.norm());
        let decay = (-spec.rate(1) * t).exp();
        contraction = contraction.max(apply_semigroup(&f, t, &spec)?.norm() - decay * f.norm());
    }
    Ok(vec![
        CheckResult::at_most(
            "spectral.orthonormality",
            ortho,
            1e-10,
            format!("K = {modes}, N = {grid}"),
        ),
        CheckResult::at_most(
            "spectral.parseval",
            parseval,
            1e-10,
            "relative, 20 random fields",
        ),
        CheckResult::at_most(
            "spectral.semigroup_law",
            law,
            1e-10,
            "‖S(t)S(s)f - S(t+s)f‖/‖f‖",
        ),
        CheckResult::at_most(
            "spectral.contraction",
            contraction.max(0.0),
            1e-10,
            "max(‖S(t)f‖ - e^{-rate_1 t}‖f‖)",
        ),
    ])
}

/// `|⟨∂ₓ(v²), v⟩|` relative to `‖∂ₓ(v²)‖‖v‖` over random fields.
pub fn skew_check(modes: usize, grid: usize, fields: usize, seed: u64) -> Result<CheckResult> {
    let basis = SineBasis::new(modes, grid)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..fields {
        let v = random_field(modes, &mut rng);
        let b = basis.dx_square(&v)?;
        worst = worst.max(inner(&b, &v)?.abs() / (b.norm() * v.norm()));
    }
    Ok(CheckResult::at_most(
        "spectral.skew",
        worst,
        1e-8,
        format!("{fields} random fields, K = {modes}"),
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SmoothingRow {
    pub t: f64,
    /// Series bound `B(t)`.
    pub series_bound: f64,
    /// `C t^{-1/2}` with `C = max_t √t B(t)` over the scanned times.
    pub constant_bound: f64,
    /// `max over fields of ‖S(t)ψ'‖ / ‖ψ‖_{L¹}`.
    pub max_ratio: f64,
    pub violations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SmoothingReport {
    pub c: f64,
    pub fields: usize,
    pub rows: Vec<SmoothingRow>,
}

impl SmoothingReport {
    pub fn violations(&self) -> usize {
        self.rows.iter().map(|r| r.violations).sum()
    }
}

/// Compares `‖S(t)ψ'‖` with `C t^{-1/2}‖ψ‖_{L¹}` over random grid fields.
pub fn smoothing_report(
    basis: &SineBasis,
    spec: &OperatorSpectrum,
    times: &[f64],
    fields: usize,
    seed: u64,
) -> Result<SmoothingReport> {
    let c = smoothing_constant(times, spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let psis: Vec<GridField> = (0..fields)
        .map(|_| random_grid_field(basis.grid(), &mut rng))
        .collect();
    let mut rows = Vec::with_capacity(times.len());
    for &t in times {
        let bound = c / t.sqrt();
        let mut max_ratio: f64 = 0.0;
        let mut violations = 0;
        for psi in &psis {
            let lhs = basis.semigroup_of_derivative(psi, t, spec)?.norm();
            let l1 = norm_l1(psi);
            max_ratio = max_ratio.max(lhs / l1);
            if lhs > bound * l1 {
                violations += 1;
            }
        }
        rows.push(SmoothingRow {
            t,
            series_bound: smoothing_series_bound(t, spec)?,
            constant_bound: bound,
            max_ratio,
            violations,
        });
    }
    Ok(SmoothingReport { c, fields, rows })
}

/// Runs every light-weight invariant check on the model of `cfg`.
pub fn run_all(cfg: &RunConfig) -> Result<Vec<CheckResult>> {
    let p = &cfg.model;
    let seed = cfg.seed;
    let mut out = spectral_checks(p.modes, p.grid, p.nu, seed)?;
    out.push(skew_check(p.modes, p.grid, 100, seed)?);

    let smoothing_basis = SineBasis::new(128, 512)?;
    let smoothing_spec = OperatorSpectrum::new(1.0, 128, p.nu_convention)?;
    let smoothing = smoothing_report(
        &smoothing_basis,
        &smoothing_spec,
        &cfg.smoothing_times,
        cfg.smoothing_fields,
        seed,
    )?;
    out.push(CheckResult::at_most(
        "spectral.derivative_extension_bound",
        smoothing.violations() as f64,
        0.0,
        format!(
            "violations over {} fields, C = {:.6}",
            smoothing.fields, smoothing.c
        ),
    ));

    out.push(linear_exactness(p)?);
    out.extend(dynamics_checks(cfg)?);
    out.push(decomposition_identity(cfg)?);
    out.push(energy_identity_order(p)?);
    out.extend(ergodicity_checks(cfg)?);
    Ok(out)
}

fn linear_exactness(p: &ModelParams) -> Result<CheckResult> {
    let mut q = p.clone().deterministic();
    q.force = 0.0;
    q.nonlinear = false;
    let v0 = SpectralField::from_coeffs((1..=q.modes).map(|k| 1.0 / k as f64).collect())?;
    let n = 50;
    let traj = simulate(
        &q,
        &State::new(0.0, v0.clone()),
        n as f64 * q.dt,
        RngSeed::new(0, 0),
        &[],
    )?;
    let exact = apply_semigroup(&v0, n as f64 * q.dt, &q.spectrum()?)?;
    let last = &traj.states.last().expect("non-empty").v;
    let err = last
        .coeffs()
        .iter()
        .zip(exact.coeffs())
        .map(|(a, b)| {
            if *b == 0.0 {
                a.abs()
            } else {
                ((a - b) / b).abs()
            }
        })
        .fold(0.0, f64::max);
    Ok(CheckResult::at_most(
        "dynamics.linear_exactness",
        err,
        1e-12,
        "max relative mode error after 50 steps",
    ))
}

fn dynamics_checks(cfg: &RunConfig) -> Result<Vec<CheckResult>> {
    let p = &cfg.model;
    let horizon = (200.0 * p.dt).min(cfg.horizon.max(p.dt));
    let init = cfg.init_state()?;
    let seed = RngSeed::new(cfg.seed, 0);
    let a = simulate(p, &init, horizon, seed, &[])?;
    let b = simulate(p, &init, horizon, seed, &[])?;
    let mut cut = p.clone();
    cut.cutoff = Some(1e3);
    let c = simulate(&cut, &init, horizon, seed, &[])?;
    let below = a.states.iter().all(|s| s.h_norm() < 1e3);
    Ok(vec![
        CheckResult::at_most(
            "dynamics.reproducibility",
            if a == b { 0.0 } else { 1.0 },
            0.0,
            "same seed twice, bitwise",
        ),
        CheckResult::at_most(
            "dynamics.cutoff_equivalence",
            if !below || a == c { 0.0 } else { 1.0 },
            0.0,
            "cutoff n = 1000 vs uncut, bitwise while below n",
        ),
    ])
}

fn decomposition_identity(cfg: &RunConfig) -> Result<CheckResult> {
    let p = &cfg.model;
    let mut stepper = Stepper::new(p)?;
    let kernels = cfg
        .l_values
        .iter()
        .map(|l| ConvolutionKernel::new(*l, stepper.spectrum(), p.dt, p.noise_scheme))
        .collect::<Result<Vec<_>>>()?;
    let mut state = cfg.init_state()?;
    let mut auxes: Vec<AuxState> = cfg
        .l_values
        .iter()
        .map(|l| AuxState::start(*l, &state))
        .collect();
    let mut stream = NoiseStream::new(RngSeed::new(cfg.seed, 0), p.modes);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let inc = stream.next_increment(p.dt)?;
        let f = stepper.forcing(&state, &inc)?;
        state = stepper.step_with_forcing(&state, &f)?;
        for (aux, k) in auxes.iter_mut().zip(&kernels) {
            aux.advance(k, &f, &state);
            worst = worst.max(aux.identity_error(&state));
        }
    }
    Ok(CheckResult::at_most(
        "decomposition.identity",
        worst,
        1e-12,
        format!(
            "v = V_L + Z_L, U = U_L + Y_L over 200 steps, L in {:?}",
            cfg.l_values
        ),
    ))
}

/// Ratio of max residuals of the discrete energy identity at `dt` and `dt/2`.
pub fn energy_identity_ratio(p: &ModelParams, dt: f64, horizon: f64) -> Result<(f64, f64)> {
    let mut q = p.clone().deterministic();
    q.force = 0.0;
    let mut c = vec![0.0; q.modes];
    c[0] = 1.0;
    if q.modes > 1 {
        c[1] = 0.5;
    }
    let init = State::new(1.0, SpectralField::from_coeffs(c)?);
    let spec = q.spectrum()?;
    let max_res = |dt: f64| -> Result<f64> {
        let mut r = q.clone();
        r.dt = dt;
        let traj = simulate(&r, &init, horizon, RngSeed::new(0, 0), &[])?;
        Ok(energy_identity_residual(&traj, &spec)?
            .iter()
            .fold(0.0, |m, x| m.max(x.abs())))
    };
    Ok((max_res(dt)?, max_res(dt / 2.0)?))
}

fn energy_identity_order(p: &ModelParams) -> Result<CheckResult> {
    let (a, b) = energy_identity_ratio(p, p.dt, 0.5)?;
    Ok(CheckResult::at_least(
        "decomposition.energy_identity_first_order",
        a / b,
        1.8,
        format!("max residual {a:.3e} at dt, {b:.3e} at dt/2"),
    ))
}

fn ergodicity_checks(cfg: &RunConfig) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let edges = BinEdges::uniform(0.0, 1.0, cfg.bins)?;
    let mut metric: f64 = 0.0;
    for _ in 0..100 {
        let ms: Vec<EmpiricalMeasure> = (0..3)
            .map(|_| {
                let n = rng.random_range(1..50);
                let skew: f64 = rng.random_range(0.2..3.0);
                let xs: Vec<f64> = (0..n)
                    .map(|_| rng.random::<f64>().powf(skew) * 1.2 - 0.1)
                    .collect();
                EmpiricalMeasure::from_samples(&edges, &xs)
            })
            .collect::<Result<_>>()?;
        let d = |a: usize, b: usize| tv_distance(&ms[a], &ms[b]);
        let (ab, ba, bc, ac) = (d(0, 1)?, d(1, 0)?, d(1, 2)?, d(0, 2)?);
        metric = metric
            .max((ab - ba).abs())
            .max(ac - ab - bc)
            .max(-ab)
            .max(ab - 1.0)
            .max(d(0, 0)?);
    }
    let p = &cfg.model;
    let horizon = 200.0 * p.dt;
    let traj = simulate(
        p,
        &cfg.init_state()?,
        horizon,
        RngSeed::new(cfg.seed, 0),
        &[ObservableSpec::U],
    )?;
    let edges = BinEdges::from_samples(&traj.records[0], cfg.bins)?;
    let m = occupation_measure(&traj, &ObservableSpec::U, &edges, 0.0)?;
    let mass: f64 = m.masses().iter().sum();
    Ok(vec![
        CheckResult::at_most(
            "ergodicity.tv_metric",
            metric.max(0.0),
            1e-12,
            "symmetry, triangle inequality, range on 100 random triples",
        ),
        CheckResult::at_most(
            "ergodicity.occupation_normalized",
            (mass - 1.0).abs(),
            1e-12,
            "|Σ masses - 1|",
        ),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spectral_core_checks_pass() {
        for c in spectral_checks(16, 64, 1.0, 1).unwrap() {
            assert!(c.passed, "{c:?}");
        }
        assert!(skew_check(16, 32, 20, 1).unwrap().passed);
    }

    #[test]
    fn smoothing_report_shape() {
        let basis = SineBasis::new(32, 64).unwrap();
        let spec = OperatorSpectrum::new(1.0, 32, Default::default()).unwrap();
        let r = smoothing_report(&basis, &spec, &[0.01, 0.1], 5, 2).unwrap();
        assert_eq!(r.rows.len(), 2);
        assert!(r
            .rows
            .iter()
            .all(|row| row.constant_bound >= row.series_bound * (1.0 - 1e-12)));
        assert_eq!(r.violations(), 0);
    }

    #[test]
    fn energy_ratio_is_near_two() {
        let (a, b) =
            energy_identity_ratio(&ModelParams::standard().with_modes(16), 1e-3, 0.2).unwrap();
        assert!(a / b > 1.8 && a / b < 2.2, "{}", a / b);
    }
}
