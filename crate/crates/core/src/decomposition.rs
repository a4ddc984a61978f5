//! Splitting a path into damped stochastic convolutions and a remainder.
//!
//! For a damping level `L ≥ 0`, `Z_L` and `Y_L` are driven by the same noise
//! forcing as the main path (`dZ = (A - L) Z dt + g₁ dW₁`,
//! `dY = -(ν + L) Y dt + g₀ dW⁰`, both started at zero) and the remainders
//! are `V_L = v - Z_L`, `U_L = U - Y_L`. The energy ledger tracks
//! `y = ‖V_L‖² + U_L²` together with the forcing terms that bound its growth.

use serde::{Deserialize, Serialize};

use crate::dynamics::{step_count, Forcing, ModelParams, State, Stepper, Trajectory};
use crate::error::{Error, Result};
use crate::noise::{ConvolutionKernel, ConvolutionState, NoiseIncrement, NoiseStream, RngSeed};
use crate::spectral::{h10_norm_sq, lambda, OperatorSpectrum, SineBasis, SpectralField, Workspace};
use crate::stats::{map_paths, Accumulator, Summary};

/// Convolutions at one `L` and the remainders `V_L`, `U_L`.
#[derive(Clone, Debug, PartialEq)]
pub struct AuxState {
    pub conv: ConvolutionState,
    /// `V_L = v - Z_L`.
    pub v: SpectralField,
    /// `U_L = U - Y_L`.
    pub ul: f64,
}

impl AuxState {
    /// Zero convolutions; the remainders equal the initial state.
    pub fn start(l: f64, s: &State) -> Self {
        AuxState {
            conv: ConvolutionState::zero(s.v.modes(), l),
            v: s.v.clone(),
            ul: s.u,
        }
    }

    pub fn l(&self) -> f64 {
        self.conv.l
    }

    /// Advances the convolutions with the forcing used for the main step and
    /// re-derives the remainders from the main path's new state `next`.
    pub fn advance(&mut self, kernel: &ConvolutionKernel, forcing: &Forcing, next: &State) {
        self.conv.advance(kernel, &forcing.g1_dw, forcing.g0_dw0);
        let coeffs = next
            .v
            .coeffs()
            .iter()
            .zip(self.conv.z.coeffs())
            .map(|(v, z)| v - z)
            .collect();
        self.v = SpectralField::from_coeffs_unchecked(coeffs);
        self.ul = next.u - self.conv.y;
    }

    /// Largest deviation in `v = V_L + Z_L`, `U = U_L + Y_L`.
    pub fn identity_error(&self, s: &State) -> f64 {
        let dv =
            s.v.coeffs()
                .iter()
                .zip(self.v.coeffs())
                .zip(self.conv.z.coeffs())
                .map(|((v, vl), z)| (v - vl - z).abs())
                .fold(0.0, f64::max);
        dv.max((s.u - self.ul - self.conv.y).abs())
    }
}

/// One aux step from `s` under increment `inc`; builds its own stepper.
///
/// `inc` must be the increment that advances the main path from `s` this
/// step; reusing a different one silently breaks the decomposition.
pub fn advance_aux(
    aux: &AuxState,
    s: &State,
    p: &ModelParams,
    inc: &NoiseIncrement,
) -> Result<AuxState> {
    let mut stepper = Stepper::new(p)?;
    let kernel = ConvolutionKernel::new(aux.l(), stepper.spectrum(), p.dt, p.noise_scheme)?;
    let forcing = stepper.forcing(s, inc)?;
    let next = stepper.step_with_forcing(s, &forcing)?;
    let mut out = aux.clone();
    out.advance(&kernel, &forcing, &next);
    Ok(out)
}

/// `y_L = ‖V_L‖² + U_L²`.
pub fn lyapunov(aux: &AuxState) -> f64 {
    aux.v.norm_sq() + aux.ul * aux.ul
}

/// Power of `‖Z_L‖_{L⁴}` in [`xi`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum XiExponent {
    #[default]
    #[serde(rename = "8/3")]
    EightThirds,
    #[serde(rename = "2")]
    Two,
}

impl XiExponent {
    pub fn value(self) -> f64 {
        match self {
            XiExponent::EightThirds => 8.0 / 3.0,
            XiExponent::Two => 2.0,
        }
    }
}

/// `ξ_L = |Y_L| + ‖Z_L‖² + ‖Z_L‖ + ‖Z_L‖_{L⁴}^q`.
pub fn xi(aux: &AuxState, q: XiExponent, basis: &SineBasis) -> Result<f64> {
    let l4 = basis.norm_l4(&aux.conv.z)?;
    Ok(xi_from(aux, q, l4))
}

fn xi_from(aux: &AuxState, q: XiExponent, l4: f64) -> f64 {
    let z2 = aux.conv.z.norm_sq();
    aux.conv.y.abs() + z2 + z2.sqrt() + l4.powf(q.value())
}

/// `η_L = (1 + L²)(Y_L⁴ + ‖Z_L‖⁴_{L⁴}) + 1`.
pub fn eta(aux: &AuxState, basis: &SineBasis) -> Result<f64> {
    let l4 = basis.norm_l4(&aux.conv.z)?;
    Ok(eta_from(aux, l4))
}

fn eta_from(aux: &AuxState, l4: f64) -> f64 {
    let l = aux.l();
    (1.0 + l * l) * (aux.conv.y.powi(4) + l4.powi(4)) + 1.0
}

/// Per-step energy quantities of one path at one `L`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EnergyLedger {
    pub l: f64,
    pub times: Vec<f64>,
    pub y: Vec<f64>,
    pub xi: Vec<f64>,
    pub eta: Vec<f64>,
    /// `‖V_L‖²_{H¹₀}`.
    pub h10: Vec<f64>,
}

impl EnergyLedger {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    fn push(&mut self, t: f64, aux: &AuxState, q: XiExponent, l4: f64) {
        self.times.push(t);
        self.y.push(lyapunov(aux));
        self.xi.push(xi_from(aux, q, l4));
        self.eta.push(eta_from(aux, l4));
        self.h10.push(h10_norm_sq(&aux.v));
    }
}

/// Runs one path from `init` and records the ledger at every step.
pub fn energy_ledger(
    p: &ModelParams,
    init: &State,
    l: f64,
    horizon: f64,
    seed: RngSeed,
    q: XiExponent,
) -> Result<EnergyLedger> {
    let n = step_count(horizon, p.dt)?;
    let mut stepper = Stepper::new(p)?;
    let kernel = ConvolutionKernel::new(l, stepper.spectrum(), p.dt, p.noise_scheme)?;
    let basis = stepper.basis().clone();
    let mut ws = basis.workspace();
    let mut stream = NoiseStream::new(seed, p.modes);
    let mut inc = NoiseIncrement::zero(p.modes, p.dt);
    let mut forcing = Forcing {
        g0_dw0: 0.0,
        g1_dw: vec![0.0; p.modes],
    };
    let mut state = init.clone();
    let mut aux = AuxState::start(l, init);
    let mut ledger = EnergyLedger {
        l,
        ..Default::default()
    };
    let l4 = |aux: &AuxState, ws: &mut Workspace| basis.norm_l4_with(aux.conv.z.coeffs(), ws);
    ledger.push(0.0, &aux, q, l4(&aux, &mut ws));
    for i in 1..=n {
        stream.fill(&mut inc, p.dt)?;
        stepper.forcing_into(&state, &inc, &mut forcing)?;
        state = stepper.step_with_forcing(&state, &forcing)?;
        aux.advance(&kernel, &forcing, &state);
        ledger.push(i as f64 * p.dt, &aux, q, l4(&aux, &mut ws));
    }
    Ok(ledger)
}

/// `r_n = (y_{n+1} - y_n)/dt + β(y_n + h10_n) - C y_n ξ_n - C η_n`.
pub fn energy_residual(ledger: &EnergyLedger, beta: f64, c: f64) -> Result<Vec<f64>> {
    Ok(energy_terms(ledger, beta)?
        .iter()
        .map(|t| t.lhs - c * t.rhs)
        .collect())
}

#[derive(Clone, Copy, Debug)]
struct EnergyTerms {
    lhs: f64,
    rhs: f64,
    scale: f64,
}

fn energy_terms(ledger: &EnergyLedger, beta: f64) -> Result<Vec<EnergyTerms>> {
    let n = ledger.len();
    if n < 2 {
        return Err(Error::SizeMismatch {
            expected: 2,
            got: n,
        });
    }
    let mut out = Vec::with_capacity(n - 1);
    for i in 0..n - 1 {
        let dt = ledger.times[i + 1] - ledger.times[i];
        let dy = (ledger.y[i + 1] - ledger.y[i]) / dt;
        let damp = beta * (ledger.y[i] + ledger.h10[i]);
        let rhs = ledger.y[i] * ledger.xi[i] + ledger.eta[i];
        out.push(EnergyTerms {
            lhs: dy + damp,
            rhs,
            scale: dy.abs().max(damp.abs()).max(rhs),
        });
    }
    Ok(out)
}

/// Residuals above `1e-6 ×` the largest term of their step count as violations.
pub const ENERGY_TOLERANCE: f64 = 1e-6;

/// Number of steps where `r_n` exceeds the tolerance.
pub fn energy_violations(ledger: &EnergyLedger, beta: f64, c: f64) -> Result<usize> {
    Ok(energy_terms(ledger, beta)?
        .iter()
        .filter(|t| t.lhs - c * t.rhs > ENERGY_TOLERANCE * t.scale.max(c * t.rhs))
        .count())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyFit {
    pub beta: f64,
    /// Smallest grid value `2^{j/8}` with zero violations.
    pub c: f64,
    /// `max_n (lhs_n / rhs_n)`, the exact smallest constant on this ledger.
    pub c_sup: f64,
}

/// Fits `C` for fixed `β` over the grid `2^{j/8}`, `j = -160..=160`.
pub fn fit_energy_constant(ledger: &EnergyLedger, beta: f64) -> Result<EnergyFit> {
    let terms = energy_terms(ledger, beta)?;
    let c_sup = terms
        .iter()
        .map(|t| t.lhs / t.rhs)
        .fold(f64::NEG_INFINITY, f64::max);
    for j in -160..=160 {
        let c = 2f64.powf(j as f64 / 8.0);
        let ok = terms
            .iter()
            .all(|t| t.lhs - c * t.rhs <= ENERGY_TOLERANCE * t.scale.max(c * t.rhs));
        if ok {
            return Ok(EnergyFit { beta, c, c_sup });
        }
    }
    Ok(EnergyFit {
        beta,
        c: f64::INFINITY,
        c_sup,
    })
}

/// Discrete residual of `½ d‖v‖²/dt + Σ r_k v_k² - U‖v‖² = 0` along a stored
/// deterministic trajectory (forward differences).
pub fn energy_identity_residual(
    traj: &Trajectory,
    spectrum: &OperatorSpectrum,
) -> Result<Vec<f64>> {
    let s = &traj.states;
    if s.len() < 2 || s.len() != traj.times.len() {
        return Err(Error::SizeMismatch {
            expected: traj.times.len().max(2),
            got: s.len(),
        });
    }
    let mut out = Vec::with_capacity(s.len() - 1);
    for i in 0..s.len() - 1 {
        let dt = traj.times[i + 1] - traj.times[i];
        let v2 = s[i].v.norm_sq();
        let dissipation: f64 = s[i]
            .v
            .coeffs()
            .iter()
            .zip(spectrum.rates())
            .map(|(c, r)| r * c * c)
            .sum();
        out.push(0.5 * (s[i + 1].v.norm_sq() - v2) / dt + dissipation - s[i].u * v2);
    }
    Ok(out)
}

/// Runs the convolutions for every `L` in `l_values` along one noise path and
/// calls `visit(step, convs)` after each step (and at step 0).
///
/// With constant diffusion coefficients the forcing does not depend on the
/// state, so the main path is not integrated.
pub fn drive_convolutions(
    p: &ModelParams,
    init: &State,
    l_values: &[f64],
    steps: usize,
    seed: RngSeed,
    mut visit: impl FnMut(usize, &[ConvolutionState]),
) -> Result<()> {
    let spectrum = p.spectrum()?;
    let kernels = l_values
        .iter()
        .map(|l| ConvolutionKernel::new(*l, &spectrum, p.dt, p.noise_scheme))
        .collect::<Result<Vec<_>>>()?;
    let mut convs: Vec<ConvolutionState> = l_values
        .iter()
        .map(|l| ConvolutionState::zero(p.modes, *l))
        .collect();
    let mut stream = NoiseStream::new(seed, p.modes);
    let mut inc = NoiseIncrement::zero(p.modes, p.dt);
    let mut forcing = Forcing {
        g0_dw0: 0.0,
        g1_dw: vec![0.0; p.modes],
    };
    visit(0, &convs);
    let constants = (p.g0.as_constant(), p.g1.as_constant());
    let mut main = match constants {
        (Some(_), Some(_)) => None,
        _ => Some((Stepper::new(p)?, init.clone())),
    };
    for i in 1..=steps {
        stream.fill(&mut inc, p.dt)?;
        match (&mut main, constants) {
            (None, (Some(g0), Some(g1))) => {
                forcing.g0_dw0 = g0 * inc.dw0;
                for (f, w) in forcing.g1_dw.iter_mut().zip(&inc.dw) {
                    *f = g1 * w;
                }
            }
            (Some((stepper, state)), _) => {
                stepper.forcing_into(state, &inc, &mut forcing)?;
                *state = stepper.step_with_forcing(state, &forcing)?;
            }
            _ => unreachable!(),
        }
        for (c, k) in convs.iter_mut().zip(&kernels) {
            c.advance(k, &forcing.g1_dw, forcing.g0_dw0);
        }
        visit(i, &convs);
    }
    Ok(())
}

/// Second moments `E Z_{L,k}(T)²` per mode and `E Y_L(T)²` over `n_paths`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvolutionMoments {
    pub l: f64,
    pub z_second: Vec<Summary>,
    pub y_second: Summary,
}

pub fn convolution_moments(
    p: &ModelParams,
    init: &State,
    l_values: &[f64],
    horizon: f64,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<ConvolutionMoments>> {
    if n_paths < 2 {
        return Err(Error::InsufficientPaths {
            needed: 2,
            got: n_paths,
        });
    }
    let steps = step_count(horizon, p.dt)?;
    let finals = map_paths(n_paths, |i| -> Result<Vec<ConvolutionState>> {
        let mut last = Vec::new();
        drive_convolutions(
            p,
            init,
            l_values,
            steps,
            RngSeed::new(seed, i as u64),
            |n, c| {
                if n == steps {
                    last = c.to_vec();
                }
            },
        )?;
        Ok(last)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::with_capacity(l_values.len());
    for (j, l) in l_values.iter().enumerate() {
        let z_second = (0..p.modes)
            .map(|k| {
                let xs: Vec<f64> = finals.iter().map(|f| f[j].z.coeffs()[k].powi(2)).collect();
                Summary::of(&xs)
            })
            .collect();
        let ys: Vec<f64> = finals.iter().map(|f| f[j].y * f[j].y).collect();
        out.push(ConvolutionMoments {
            l: *l,
            z_second,
            y_second: Summary::of(&ys),
        });
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MomentRow {
    pub l: f64,
    /// `max_t E(‖Z_L(t)‖^p_{H^{1/4}} + |Y_L(t)|^p)` over the recorded times.
    pub estimate: f64,
    /// Standard error at the maximizing time.
    pub stderr: f64,
    pub t_max: f64,
}

/// Monte Carlo scan of `E(‖Z_L‖^p_{H^{1/4}} + |Y_L|^p)`, maximized over times
/// `0, s·dt, 2s·dt, …` with `s = record_every`.
#[allow(clippy::too_many_arguments)]
pub fn moment_scan(
    p: &ModelParams,
    init: &State,
    l_values: &[f64],
    p_exp: f64,
    horizon: f64,
    n_paths: usize,
    seed: u64,
    record_every: usize,
) -> Result<Vec<MomentRow>> {
    if !(p_exp >= 2.0) {
        return Err(Error::Domain(format!(
            "moment order must be >= 2, got {p_exp}"
        )));
    }
    if n_paths < 2 {
        return Err(Error::InsufficientPaths {
            needed: 2,
            got: n_paths,
        });
    }
    let stride = record_every.max(1);
    let steps = step_count(horizon, p.dt)?;
    let n_times = steps / stride + 1;
    let weights: Vec<f64> = (1..=p.modes).map(|k| lambda(k).powf(0.25)).collect();
    let nl = l_values.len();

    const BLOCK: usize = 32;
    let blocks = n_paths.div_ceil(BLOCK);
    let partial = map_paths(blocks, |b| -> Result<Vec<Accumulator>> {
        let mut acc = vec![Accumulator::default(); nl * n_times];
        for i in b * BLOCK..((b + 1) * BLOCK).min(n_paths) {
            drive_convolutions(
                p,
                init,
                l_values,
                steps,
                RngSeed::new(seed, i as u64),
                |n, convs| {
                    if n % stride != 0 {
                        return;
                    }
                    let ti = n / stride;
                    for (j, c) in convs.iter().enumerate() {
                        let h14_sq: f64 =
                            c.z.coeffs()
                                .iter()
                                .zip(&weights)
                                .map(|(z, w)| w * z * z)
                                .sum();
                        acc[j * n_times + ti]
                            .push(h14_sq.powf(0.5 * p_exp) + c.y.abs().powf(p_exp));
                    }
                },
            )?;
        }
        Ok(acc)
    });
    let mut total = vec![Accumulator::default(); nl * n_times];
    for part in partial {
        for (t, a) in total.iter_mut().zip(part?) {
            t.merge(&a);
        }
    }
    let mut rows = Vec::with_capacity(nl);
    for (j, l) in l_values.iter().enumerate() {
        let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
        for ti in 0..n_times {
            let s = total[j * n_times + ti].summary();
            if s.mean > best.0 {
                best = (s.mean, s.stderr, (ti * stride) as f64 * p.dt);
            }
        }
        rows.push(MomentRow {
            l: *l,
            estimate: best.0,
            stderr: best.1,
            t_max: best.2,
        });
    }
    Ok(rows)
}

/// Stationary value of `E(‖Z_L‖²_{H^{1/4}} + Y_L²)` for constant `g₀ = σ₀`, `g₁ = σ₁`.
pub fn stationary_second_moment(
    l: f64,
    spectrum: &OperatorSpectrum,
    sigma0: f64,
    sigma1: f64,
) -> f64 {
    let z: f64 = spectrum
        .rates()
        .iter()
        .enumerate()
        .map(|(i, r)| lambda(i + 1).powf(0.25) * sigma1 * sigma1 / (2.0 * (l + r)))
        .sum();
    z + sigma0 * sigma0 / (2.0 * (l + spectrum.nu()))
}
