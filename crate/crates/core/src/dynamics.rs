//! Exponential-Euler time stepping of the coupled `(U, v)` system in mild form.
//!
//! One step of length `dt`, with the nonlinearity and the diffusion
//! coefficients frozen at the step start:
//!
//! ```text
//! U' = e^{-ν dt} U + (1 - e^{-ν dt})/ν · (P - ‖v‖²) + w(ν) g₀(U,v) ΔW⁰
//! v'_k = e^{-r_k dt} [v_k + dt (U v_k - ∂ₓ(v²)_k)] + w(r_k) (g₁(U,v) ΔW₁)_k
//! ```
//!
//! where `r_k` is the semigroup rate of mode `k` and `w` the noise weight of
//! the selected [`NoiseScheme`]. With a cutoff level `n`, `‖v‖²` becomes
//! `‖v‖² φ_n(‖v‖²)` and `∂ₓ(v²)` becomes `∂ₓ((v φ_n(‖v‖²))²)`.

use serde::{Deserialize, Serialize};

use crate::ergodicity::{ObservableSpec, Observers};
use crate::error::{Error, Result};
use crate::noise::{noise_weight, NoiseIncrement, NoiseScheme, NoiseStream, RngSeed};
use crate::spectral::{
    GridField, NuConvention, OperatorSpectrum, SineBasis, SpectralField, Workspace,
};

/// The pair `(U, v)`.
#[derive(Clone, Debug, PartialEq)]
pub struct State {
    pub u: f64,
    pub v: SpectralField,
}

impl State {
    pub fn new(u: f64, v: SpectralField) -> Self {
        State { u, v }
    }

    pub fn zero(modes: usize) -> Self {
        State {
            u: 0.0,
            v: SpectralField::zeros(modes),
        }
    }

    /// `(U² + ‖v‖²)^{1/2}`, the norm of `ℝ × L²`.
    pub fn h_norm(&self) -> f64 {
        (self.u * self.u + self.v.norm_sq()).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.u.is_finite() && self.v.is_finite()
    }
}

/// What a diffusion coefficient reads from the state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableArgument {
    U,
    VNorm,
    /// The local value `v(x)`; only meaningful for `g₁`.
    VLocal,
}

/// A bounded Lipschitz diffusion coefficient.
///
/// For `g₀` the affine argument is `base + slope_u·U + slope_v·‖v‖`; for
/// `g₁` it is evaluated pointwise as `base + slope_u·U + slope_v·v(x)`.
/// Tabulated coefficients interpolate linearly and hold the end values
/// outside the table range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DiffusionSpec {
    Constant {
        value: f64,
    },
    ClampedAffine {
        base: f64,
        #[serde(default)]
        slope_u: f64,
        #[serde(default)]
        slope_v: f64,
        lower: f64,
        upper: f64,
    },
    Tabulated {
        argument: TableArgument,
        x: Vec<f64>,
        y: Vec<f64>,
    },
}

/// Which coefficient a spec is used for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DiffusionRole {
    G0,
    G1,
}

impl DiffusionRole {
    fn key(self) -> &'static str {
        match self {
            DiffusionRole::G0 => "g0",
            DiffusionRole::G1 => "g1",
        }
    }
}

impl DiffusionSpec {
    pub fn constant(value: f64) -> Self {
        DiffusionSpec::Constant { value }
    }

    pub fn validate(&self, role: DiffusionRole) -> Result<()> {
        let key = role.key();
        match self {
            DiffusionSpec::Constant { value } => {
                if !value.is_finite() {
                    return Err(Error::config(key, "value must be finite"));
                }
            }
            DiffusionSpec::ClampedAffine {
                base,
                slope_u,
                slope_v,
                lower,
                upper,
            } => {
                if ![base, slope_u, slope_v, lower, upper]
                    .iter()
                    .all(|x| x.is_finite())
                {
                    return Err(Error::config(key, "parameters must be finite"));
                }
                if lower > upper {
                    return Err(Error::config(key, "lower must not exceed upper"));
                }
            }
            DiffusionSpec::Tabulated { argument, x, y } => {
                if x.len() < 2 || x.len() != y.len() {
                    return Err(Error::config(
                        key,
                        "table needs >= 2 points and equal x/y lengths",
                    ));
                }
                if !x.windows(2).all(|w| w[0] < w[1]) {
                    return Err(Error::config(key, "table x must be strictly increasing"));
                }
                if !x.iter().chain(y).all(|v| v.is_finite()) {
                    return Err(Error::config(key, "table entries must be finite"));
                }
                if role == DiffusionRole::G0 && *argument == TableArgument::VLocal {
                    return Err(Error::config(
                        key,
                        "g0 is scalar; v_local is only valid for g1",
                    ));
                }
            }
        }
        Ok(())
    }

    /// Lower and upper bounds on `|g|`.
    pub fn magnitude_bounds(&self) -> (f64, f64) {
        let (lo, hi) = match self {
            DiffusionSpec::Constant { value } => (*value, *value),
            DiffusionSpec::ClampedAffine { lower, upper, .. } => (*lower, *upper),
            DiffusionSpec::Tabulated { y, .. } => (
                y.iter().cloned().fold(f64::INFINITY, f64::min),
                y.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            ),
        };
        if lo >= 0.0 {
            (lo, hi)
        } else if hi <= 0.0 {
            (-hi, -lo)
        } else {
            (0.0, lo.abs().max(hi.abs()))
        }
    }

    pub fn is_separated_from_zero(&self) -> bool {
        self.magnitude_bounds().0 > 0.0
    }

    /// Lipschitz constant with respect to `(U, v)` in `ℝ × L²`.
    pub fn lipschitz_constant(&self) -> f64 {
        match self {
            DiffusionSpec::Constant { .. } => 0.0,
            DiffusionSpec::ClampedAffine {
                slope_u, slope_v, ..
            } => slope_u.abs() + slope_v.abs(),
            DiffusionSpec::Tabulated { x, y, .. } => x
                .windows(2)
                .zip(y.windows(2))
                .map(|(xw, yw)| ((yw[1] - yw[0]) / (xw[1] - xw[0])).abs())
                .fold(0.0, f64::max),
        }
    }

    pub fn as_constant(&self) -> Option<f64> {
        match self {
            DiffusionSpec::Constant { value } => Some(*value),
            _ => None,
        }
    }

    fn affine(&self, u: f64, arg: f64) -> f64 {
        match self {
            DiffusionSpec::Constant { value } => *value,
            DiffusionSpec::ClampedAffine {
                base,
                slope_u,
                slope_v,
                lower,
                upper,
            } => (base + slope_u * u + slope_v * arg).clamp(*lower, *upper),
            DiffusionSpec::Tabulated { argument, x, y } => {
                let a = match argument {
                    TableArgument::U => u,
                    TableArgument::VNorm | TableArgument::VLocal => arg,
                };
                interpolate_clamped(x, y, a)
            }
        }
    }
}

fn interpolate_clamped(x: &[f64], y: &[f64], a: f64) -> f64 {
    if a <= x[0] {
        return y[0];
    }
    let last = x.len() - 1;
    if a >= x[last] {
        return y[last];
    }
    let i = x.partition_point(|xi| *xi <= a) - 1;
    let s = (a - x[i]) / (x[i + 1] - x[i]);
    y[i] + s * (y[i + 1] - y[i])
}

/// `g₀(U, v)`.
pub fn eval_g0(spec: &DiffusionSpec, s: &State) -> f64 {
    match spec {
        DiffusionSpec::Constant { value } => *value,
        _ => spec.affine(s.u, s.v.norm()),
    }
}

/// `g₁(U, v)` as a pointwise multiplier on the grid of `basis`.
pub fn eval_g1(spec: &DiffusionSpec, s: &State, basis: &SineBasis) -> Result<GridField> {
    let mut out = vec![0.0; basis.grid() + 1];
    let v_grid = if needs_local_v(spec) {
        Some(basis.to_grid(&s.v)?)
    } else {
        None
    };
    fill_g1(spec, s, v_grid.as_ref().map(|g| g.values()), &mut out);
    GridField::from_values(out)
}

fn needs_local_v(spec: &DiffusionSpec) -> bool {
    match spec {
        DiffusionSpec::Constant { .. } => false,
        DiffusionSpec::ClampedAffine { slope_v, .. } => *slope_v != 0.0,
        DiffusionSpec::Tabulated { argument, .. } => *argument == TableArgument::VLocal,
    }
}

fn fill_g1(spec: &DiffusionSpec, s: &State, v_grid: Option<&[f64]>, out: &mut [f64]) {
    match (spec, v_grid) {
        (
            DiffusionSpec::Tabulated {
                argument: TableArgument::VNorm,
                ..
            },
            _,
        ) => {
            let g = spec.affine(s.u, s.v.norm());
            out.iter_mut().for_each(|o| *o = g);
        }
        (_, Some(vg)) => {
            for (o, v) in out.iter_mut().zip(vg) {
                *o = spec.affine(s.u, *v);
            }
        }
        (_, None) => {
            let g = spec.affine(s.u, 0.0);
            out.iter_mut().for_each(|o| *o = g);
        }
    }
}

/// C¹ monotone cutoff: 1 on `[0, n]`, 0 on `[n+1, ∞)`, a cubic smoothstep
/// in between (`|φ'| ≤ 3/2`).
pub fn phi_n(r: f64, n: f64) -> f64 {
    if r <= n {
        1.0
    } else if r >= n + 1.0 {
        0.0
    } else {
        let s = r - n;
        1.0 - s * s * (3.0 - 2.0 * s)
    }
}

/// Model parameters of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Exterior force `P`.
    pub force: f64,
    pub nu: f64,
    pub modes: usize,
    pub grid: usize,
    pub dt: f64,
    pub g0: DiffusionSpec,
    pub g1: DiffusionSpec,
    /// Localization level `n` of `‖v‖²` and `∂ₓ(v²)`.
    pub cutoff: Option<f64>,
    pub nu_convention: NuConvention,
    pub noise_scheme: NoiseScheme,
    /// When false the quadratic terms `-‖v‖²` and `-∂ₓ(v²)` are dropped.
    pub nonlinear: bool,
    /// Reject diffusion specs that can vanish.
    pub require_separated: bool,
}

impl ModelParams {
    /// `ν = 1`, `P = 1`, `g₀ = g₁ ≡ 0.1`, `K = 64`, `dt = 10⁻³`.
    pub fn standard() -> Self {
        ModelParams {
            force: 1.0,
            nu: 1.0,
            modes: 64,
            grid: 128,
            dt: 1e-3,
            g0: DiffusionSpec::constant(0.1),
            g1: DiffusionSpec::constant(0.1),
            cutoff: None,
            nu_convention: NuConvention::Physical,
            noise_scheme: NoiseScheme::ExactVariance,
            nonlinear: true,
            require_separated: false,
        }
    }

    /// Same model with `g₀ = g₁ = 0`.
    pub fn deterministic(mut self) -> Self {
        self.g0 = DiffusionSpec::constant(0.0);
        self.g1 = DiffusionSpec::constant(0.0);
        self
    }

    pub fn with_modes(mut self, modes: usize) -> Self {
        self.modes = modes;
        self.grid = crate::spectral::default_grid(modes);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.nu > 0.0) || !self.nu.is_finite() {
            return Err(Error::config("nu", format!("must be > 0, got {}", self.nu)));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::config("dt", format!("must be > 0, got {}", self.dt)));
        }
        if !self.force.is_finite() {
            return Err(Error::config("P", "must be finite"));
        }
        if self.modes == 0 {
            return Err(Error::config("K", "must be >= 1"));
        }
        if !self.grid.is_power_of_two() || self.grid < 2 * self.modes {
            return Err(Error::config(
                "grid",
                format!(
                    "must be a power of two >= 2K = {}, got {}",
                    2 * self.modes,
                    self.grid
                ),
            ));
        }
        if let Some(n) = self.cutoff {
            if !(n >= 1.0) || !n.is_finite() {
                return Err(Error::config("cutoff", format!("must be >= 1, got {n}")));
            }
        }
        self.g0.validate(DiffusionRole::G0)?;
        self.g1.validate(DiffusionRole::G1)?;
        if self.require_separated {
            for (key, g) in [("g0", &self.g0), ("g1", &self.g1)] {
                if !g.is_separated_from_zero() {
                    return Err(Error::config(key, "must be separated from zero"));
                }
            }
        }
        Ok(())
    }

    pub fn spectrum(&self) -> Result<OperatorSpectrum> {
        OperatorSpectrum::new(self.nu, self.modes, self.nu_convention)
    }

    pub fn basis(&self) -> Result<SineBasis> {
        SineBasis::new(self.modes, self.grid)
    }

    /// `‖v‖²`, localized when a cutoff is active.
    fn energy(&self, v_sq: f64) -> f64 {
        match self.cutoff {
            Some(n) => v_sq * phi_n(v_sq, n),
            None => v_sq,
        }
    }
}

/// `P - νU - ‖v‖²` (or `- N_n(v)` with a cutoff).
pub fn drift_u(s: &State, p: &ModelParams) -> f64 {
    let drain = if p.nonlinear {
        p.energy(s.v.norm_sq())
    } else {
        0.0
    };
    p.force - p.nu * s.u - drain
}

/// Noise forcing of one step: `g₀ΔW⁰` and the projected `(g₁ΔW₁)_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct Forcing {
    pub g0_dw0: f64,
    pub g1_dw: Vec<f64>,
}

/// Single-path stepper with precomputed factors and scratch buffers.
pub struct Stepper {
    params: ModelParams,
    basis: SineBasis,
    spectrum: OperatorSpectrum,
    damp_v: Vec<f64>,
    weight_v: Vec<f64>,
    damp_u: f64,
    phi1_u: f64,
    weight_u: f64,
    g1_constant: Option<f64>,
    g1_local_v: bool,
    ws: Workspace,
    g1_grid: Vec<f64>,
    v_grid: Vec<f64>,
    nonlin: Vec<f64>,
    scaled: Vec<f64>,
    steps: usize,
}

impl Stepper {
    pub fn new(params: &ModelParams) -> Result<Self> {
        params.validate()?;
        let basis = params.basis()?;
        let spectrum = params.spectrum()?;
        let dt = params.dt;
        let nu = params.nu;
        Ok(Stepper {
            damp_v: spectrum.rates().iter().map(|r| (-r * dt).exp()).collect(),
            weight_v: spectrum
                .rates()
                .iter()
                .map(|r| noise_weight(*r, dt, params.noise_scheme))
                .collect(),
            damp_u: (-nu * dt).exp(),
            phi1_u: -(-nu * dt).exp_m1() / nu,
            weight_u: noise_weight(nu, dt, params.noise_scheme),
            g1_constant: params.g1.as_constant(),
            g1_local_v: needs_local_v(&params.g1),
            ws: basis.workspace(),
            g1_grid: vec![0.0; params.grid + 1],
            v_grid: vec![0.0; params.grid + 1],
            nonlin: vec![0.0; params.modes],
            scaled: vec![0.0; params.modes],
            steps: 0,
            params: params.clone(),
            basis,
            spectrum,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn basis(&self) -> &SineBasis {
        &self.basis
    }

    pub fn spectrum(&self) -> &OperatorSpectrum {
        &self.spectrum
    }

    /// Steps taken so far.
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Evaluates the diffusion coefficients at `s` and contracts them with `inc`.
    pub fn forcing(&mut self, s: &State, inc: &NoiseIncrement) -> Result<Forcing> {
        let mut f = Forcing {
            g0_dw0: 0.0,
            g1_dw: vec![0.0; self.params.modes],
        };
        self.forcing_into(s, inc, &mut f)?;
        Ok(f)
    }

    pub fn forcing_into(&mut self, s: &State, inc: &NoiseIncrement, f: &mut Forcing) -> Result<()> {
        if inc.modes() != self.params.modes {
            return Err(Error::SizeMismatch {
                expected: self.params.modes,
                got: inc.modes(),
            });
        }
        f.g0_dw0 = eval_g0(&self.params.g0, s) * inc.dw0;
        match self.g1_constant {
            Some(c) => {
                for (o, w) in f.g1_dw.iter_mut().zip(&inc.dw) {
                    *o = c * w;
                }
            }
            None => {
                let v_grid = if self.g1_local_v {
                    let mut vg = std::mem::take(&mut self.v_grid);
                    let field = self.basis.to_grid(&s.v)?;
                    vg.copy_from_slice(field.values());
                    Some(vg)
                } else {
                    None
                };
                fill_g1(&self.params.g1, s, v_grid.as_deref(), &mut self.g1_grid);
                if let Some(vg) = v_grid {
                    self.v_grid = vg;
                }
                self.basis
                    .multiply_noise_into(&self.g1_grid, &inc.dw, &mut f.g1_dw, &mut self.ws);
            }
        }
        Ok(())
    }

    /// One mild-scheme step driven by precomputed forcing.
    pub fn step_with_forcing(&mut self, s: &State, forcing: &Forcing) -> Result<State> {
        self.steps += 1;
        let p = &self.params;
        let dt = p.dt;
        let v = s.v.coeffs();
        let v_sq = s.v.norm_sq();

        if p.nonlinear {
            let phi = p.cutoff.map_or(1.0, |n| phi_n(v_sq, n));
            if phi == 1.0 {
                self.basis.dx_square_into(v, &mut self.nonlin, &mut self.ws);
            } else {
                for (o, c) in self.scaled.iter_mut().zip(v) {
                    *o = c * phi;
                }
                self.basis
                    .dx_square_into(&self.scaled, &mut self.nonlin, &mut self.ws);
            }
        } else {
            self.nonlin.iter_mut().for_each(|x| *x = 0.0);
        }

        let drain = if p.nonlinear { p.energy(v_sq) } else { 0.0 };
        let u_next =
            self.damp_u * s.u + self.phi1_u * (p.force - drain) + self.weight_u * forcing.g0_dw0;

        let mut next = Vec::with_capacity(v.len());
        for k in 0..v.len() {
            let bracket = v[k] + dt * (s.u * v[k] - self.nonlin[k]);
            next.push(self.damp_v[k] * bracket + self.weight_v[k] * forcing.g1_dw[k]);
        }

        let out = State {
            u: u_next,
            v: SpectralField::from_coeffs_unchecked(next),
        };
        if !out.is_finite() {
            return Err(Error::BlowUp {
                step: self.steps,
                time: self.steps as f64 * dt,
            });
        }
        Ok(out)
    }

    pub fn step(&mut self, s: &State, inc: &NoiseIncrement) -> Result<State> {
        if (inc.dt - self.params.dt).abs() > 1e-12 * self.params.dt {
            return Err(Error::Domain(format!(
                "increment dt {} differs from model dt {}",
                inc.dt, self.params.dt
            )));
        }
        let f = self.forcing(s, inc)?;
        self.step_with_forcing(s, &f)
    }
}

/// One step from `s`; builds a fresh [`Stepper`]. Prefer a reused `Stepper` in loops.
pub fn step(s: &State, p: &ModelParams, inc: &NoiseIncrement) -> Result<State> {
    Stepper::new(p)?.step(s, inc)
}

/// Number of steps covering `horizon`.
pub fn step_count(horizon: f64, dt: f64) -> Result<usize> {
    if !(horizon >= 0.0) || !horizon.is_finite() {
        return Err(Error::Domain(format!(
            "horizon must be >= 0, got {horizon}"
        )));
    }
    Ok((horizon / dt).round() as usize)
}

/// Sampled path of the system.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// States at `times`; empty when the run did not keep states.
    pub states: Vec<State>,
    pub observers: Vec<ObservableSpec>,
    /// One column per observer, aligned with `times`.
    pub records: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn horizon(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }

    /// Values of `obs` at every stored time, from the recorded column or the states.
    pub fn observable_series(&self, obs: &ObservableSpec) -> Result<Vec<f64>> {
        if let Some(i) = self.observers.iter().position(|o| o == obs) {
            return Ok(self.records[i].clone());
        }
        if self.states.len() == self.times.len() && !self.states.is_empty() {
            let modes = self.states[0].v.modes();
            let eval = Observers::new(vec![*obs], modes)?;
            return Ok(self.states.iter().map(|s| eval.eval(s)[0]).collect());
        }
        Err(Error::Domain(format!(
            "observable {} was not recorded and states were not kept",
            obs.name()
        )))
    }

    /// This trajectory followed by `other`. The first sample of `other` is the
    /// join point and is dropped; the rest is shifted to start at this horizon.
    pub fn concat(&self, other: &Trajectory) -> Trajectory {
        let mut out = self.clone();
        if other.times.is_empty() {
            return out;
        }
        let shift = self.horizon() - other.times[0];
        out.times.extend(other.times[1..].iter().map(|t| t + shift));
        if !self.states.is_empty() && other.states.len() == other.times.len() {
            out.states.extend(other.states[1..].iter().cloned());
        } else {
            out.states.clear();
        }
        for (col, add) in out.records.iter_mut().zip(&other.records) {
            col.extend_from_slice(&add[1..]);
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SimulateOptions {
    /// Store every `record_every`-th step (the initial state is always stored).
    pub record_every: usize,
    pub keep_states: bool,
}

impl Default for SimulateOptions {
    fn default() -> Self {
        SimulateOptions {
            record_every: 1,
            keep_states: true,
        }
    }
}

/// Runs `p` from `init` up to `horizon`, keeping every state.
pub fn simulate(
    p: &ModelParams,
    init: &State,
    horizon: f64,
    seed: RngSeed,
    observers: &[ObservableSpec],
) -> Result<Trajectory> {
    simulate_with(
        p,
        init,
        horizon,
        seed,
        observers,
        SimulateOptions::default(),
    )
}

pub fn simulate_with(
    p: &ModelParams,
    init: &State,
    horizon: f64,
    seed: RngSeed,
    observers: &[ObservableSpec],
    opts: SimulateOptions,
) -> Result<Trajectory> {
    if init.v.modes() != p.modes {
        return Err(Error::SizeMismatch {
            expected: p.modes,
            got: init.v.modes(),
        });
    }
    let stride = opts.record_every.max(1);
    let n = step_count(horizon, p.dt)?;
    let mut stepper = Stepper::new(p)?;
    let mut stream = NoiseStream::new(seed, p.modes);
    let eval = Observers::new(observers.to_vec(), p.modes)?;

    let capacity = n / stride + 1;
    let mut traj = Trajectory {
        times: Vec::with_capacity(capacity),
        states: Vec::new(),
        observers: observers.to_vec(),
        records: vec![Vec::with_capacity(capacity); observers.len()],
    };
    let record = |traj: &mut Trajectory, t: f64, s: &State| {
        traj.times.push(t);
        for (col, x) in traj.records.iter_mut().zip(eval.eval(s)) {
            col.push(x);
        }
        if opts.keep_states {
            traj.states.push(s.clone());
        }
    };
    record(&mut traj, 0.0, init);

    let mut inc = NoiseIncrement::zero(p.modes, p.dt);
    let mut forcing = Forcing {
        g0_dw0: 0.0,
        g1_dw: vec![0.0; p.modes],
    };
    let mut state = init.clone();
    for i in 1..=n {
        stream.fill(&mut inc, p.dt)?;
        stepper.forcing_into(&state, &inc, &mut forcing)?;
        state = stepper.step_with_forcing(&state, &forcing)?;
        if i % stride == 0 {
            record(&mut traj, i as f64 * p.dt, &state);
        }
    }
    Ok(traj)
}
