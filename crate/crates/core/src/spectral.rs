//! Sine-basis fields on (0,1) with homogeneous Dirichlet conditions.
//!
//! Fields are stored as coefficients on the orthonormal basis
//! `e_k(x) = √2 sin(kπx)`, `k = 1..K`. Physical-space samples live on the
//! uniform nodes `x_j = j/N`, `j = 0..N`, boundary nodes included, with
//! `N` a power of two and `N ≥ 2K`.
//!
//! All quadratures are trapezoidal on those nodes. For trigonometric
//! polynomials of degree below `2N` the trapezoidal rule is exact, which is
//! what makes the transforms exact inverses on band-limited data and the
//! quadratic term `∂ₓ(v²)` alias-free at `N ≥ 2K`. For general (non
//! band-limited) integrands the L¹/L⁴ quadratures carry an `O(N⁻²)` error.
//!
//! Two transform paths exist: a direct `O(NK)` quadrature (`*_reference`)
//! and an FFT path of length `2N` used everywhere else. They agree to
//! rounding.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SQRT_2: f64 = std::f64::consts::SQRT_2;

/// Truncated sine-coefficient representation of an L²(0,1) function.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralField {
    coeffs: Vec<f64>,
}

impl SpectralField {
    pub fn zeros(modes: usize) -> Self {
        SpectralField {
            coeffs: vec![0.0; modes],
        }
    }

    /// Builds a field from coefficients; rejects NaN/Inf entries.
    pub fn from_coeffs(coeffs: Vec<f64>) -> Result<Self> {
        if let Some(i) = coeffs.iter().position(|c| !c.is_finite()) {
            return Err(Error::Domain(format!(
                "coefficient {} is not finite",
                i + 1
            )));
        }
        Ok(SpectralField { coeffs })
    }

    pub(crate) fn from_coeffs_unchecked(coeffs: Vec<f64>) -> Self {
        SpectralField { coeffs }
    }

    /// The basis vector `e_index` (1-based) in a `modes`-mode space.
    pub fn basis(modes: usize, index: usize) -> Self {
        assert!(index >= 1 && index <= modes, "basis index out of range");
        let mut coeffs = vec![0.0; modes];
        coeffs[index - 1] = 1.0;
        SpectralField { coeffs }
    }

    pub fn modes(&self) -> usize {
        self.coeffs.len()
    }

    /// Coefficients on `e_1, ..., e_K`.
    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub(crate) fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    /// Coefficient on `e_k` (1-based).
    pub fn mode(&self, k: usize) -> f64 {
        self.coeffs[k - 1]
    }

    pub fn norm_sq(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum()
    }

    /// L² norm (Parseval).
    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_finite())
    }

    pub fn scaled(&self, a: f64) -> Self {
        SpectralField {
            coeffs: self.coeffs.iter().map(|c| a * c).collect(),
        }
    }

    pub fn add(&self, other: &SpectralField) -> Result<Self> {
        check_len(self.modes(), other.modes())?;
        Ok(SpectralField {
            coeffs: self
                .coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(a, b)| a + b)
                .collect(),
        })
    }

    pub fn sub(&self, other: &SpectralField) -> Result<Self> {
        check_len(self.modes(), other.modes())?;
        Ok(SpectralField {
            coeffs: self
                .coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(a, b)| a - b)
                .collect(),
        })
    }
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::SizeMismatch { expected, got });
    }
    Ok(())
}

/// Samples of a function at the nodes `x_j = j/N`, `j = 0..N`.
#[derive(Clone, Debug, PartialEq)]
pub struct GridField {
    values: Vec<f64>,
}

impl GridField {
    /// `values` must hold `N + 1` samples, boundary nodes included.
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.len() < 3 {
            return Err(Error::Domain("a grid field needs at least 3 nodes".into()));
        }
        Ok(GridField { values })
    }

    pub fn from_fn(grid: usize, mut f: impl FnMut(f64) -> f64) -> Self {
        let values = (0..=grid).map(|j| f(j as f64 / grid as f64)).collect();
        GridField { values }
    }

    pub fn constant(grid: usize, c: f64) -> Self {
        GridField {
            values: vec![c; grid + 1],
        }
    }

    /// Number of intervals `N`.
    pub fn grid(&self) -> usize {
        self.values.len() - 1
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn node(&self, j: usize) -> f64 {
        j as f64 / self.grid() as f64
    }

    /// Trapezoidal ∫₀¹ g dx.
    pub fn integral(&self) -> f64 {
        trapezoid(&self.values)
    }
}

fn trapezoid(values: &[f64]) -> f64 {
    let n = values.len() - 1;
    let interior: f64 = values[1..n].iter().sum();
    (interior + 0.5 * (values[0] + values[n])) / n as f64
}

/// Which placement of the viscosity is used in the semigroup decay rates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NuConvention {
    /// Rates `ν π² k²`, matching `ν ∂²/∂x²` in the equation.
    #[default]
    Physical,
    /// Rates `π² k² / ν`.
    PaperLiteral,
}

/// Eigen-decomposition of the Dirichlet Laplacian together with the viscosity.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatorSpectrum {
    nu: f64,
    convention: NuConvention,
    rates: Vec<f64>,
}

impl OperatorSpectrum {
    pub fn new(nu: f64, modes: usize, convention: NuConvention) -> Result<Self> {
        if !(nu > 0.0) || !nu.is_finite() {
            return Err(Error::config("nu", format!("must be > 0, got {nu}")));
        }
        let rates = (1..=modes)
            .map(|k| match convention {
                NuConvention::Physical => nu * lambda(k),
                NuConvention::PaperLiteral => lambda(k) / nu,
            })
            .collect();
        Ok(OperatorSpectrum {
            nu,
            convention,
            rates,
        })
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn convention(&self) -> NuConvention {
        self.convention
    }

    pub fn modes(&self) -> usize {
        self.rates.len()
    }

    /// Semigroup decay rate of mode `k` (1-based).
    pub fn rate(&self, k: usize) -> f64 {
        self.rates[k - 1]
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    /// `e^{-rate_k t}`.
    pub fn semigroup_factor(&self, k: usize, t: f64) -> f64 {
        (-self.rate(k) * t).exp()
    }

    /// The viscosity as it appears in the smoothing-bound series prefactor `2π/√ν̃`.
    /// Under the physical convention the rate `νπ²k²` corresponds to `ν̃ = 1/ν`.
    fn series_nu(&self) -> f64 {
        match self.convention {
            NuConvention::Physical => 1.0 / self.nu,
            NuConvention::PaperLiteral => self.nu,
        }
    }
}

/// Dirichlet eigenvalue `λ_k = π² k²`.
pub fn lambda(k: usize) -> f64 {
    let kf = k as f64;
    PI * PI * kf * kf
}

/// Heat semigroup `S(t)` applied mode by mode.
pub fn apply_semigroup(
    f: &SpectralField,
    t: f64,
    spec: &OperatorSpectrum,
) -> Result<SpectralField> {
    if !(t >= 0.0) {
        return Err(Error::Domain(format!(
            "semigroup time must be >= 0, got {t}"
        )));
    }
    check_len(spec.modes(), f.modes())?;
    Ok(SpectralField {
        coeffs: f
            .coeffs
            .iter()
            .zip(&spec.rates)
            .map(|(c, r)| (-r * t).exp() * c)
            .collect(),
    })
}

/// `‖(-A)^α f‖ = (Σ λ_k^{2α} f_k²)^{1/2}` with `λ_k = π²k²`.
///
/// `alpha = 1/8` is the H^{1/4} norm, `alpha = 1/2` the H¹₀ norm.
pub fn norm_fractional(f: &SpectralField, alpha: f64) -> Result<f64> {
    if !(alpha >= 0.0) {
        return Err(Error::Domain(format!("alpha must be >= 0, got {alpha}")));
    }
    Ok(norm_fractional_sq_unchecked(f.coeffs(), alpha).sqrt())
}

pub(crate) fn norm_fractional_sq_unchecked(coeffs: &[f64], alpha: f64) -> f64 {
    if alpha == 0.0 {
        return coeffs.iter().map(|c| c * c).sum();
    }
    coeffs
        .iter()
        .enumerate()
        .map(|(i, c)| lambda(i + 1).powf(2.0 * alpha) * c * c)
        .sum()
}

/// `‖f‖²_{H¹₀} = Σ λ_k f_k²`.
pub fn h10_norm_sq(f: &SpectralField) -> f64 {
    f.coeffs
        .iter()
        .enumerate()
        .map(|(i, c)| lambda(i + 1) * c * c)
        .sum()
}

/// Trapezoidal ∫₀¹ |g| dx.
pub fn norm_l1(g: &GridField) -> f64 {
    let abs: Vec<f64> = g.values.iter().map(|v| v.abs()).collect();
    trapezoid(&abs)
}

/// `⟨f, h⟩` as the Euclidean dot product of coefficients.
pub fn inner(f: &SpectralField, h: &SpectralField) -> Result<f64> {
    check_len(f.modes(), h.modes())?;
    Ok(f.coeffs.iter().zip(&h.coeffs).map(|(a, b)| a * b).sum())
}

/// The series `(Σ_k (2π/√ν̃) k² e^{-2 rate_k t})^{1/2}` bounding `‖S(t)ψ'‖/‖ψ‖_{L¹}`.
///
/// Summed over all `k ≥ 1` until the tail is negligible.
pub fn smoothing_series_bound(t: f64, spec: &OperatorSpectrum) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::Domain(format!("t must be > 0, got {t}")));
    }
    let prefactor = 2.0 * PI / spec.series_nu().sqrt();
    let rate1 = match spec.convention() {
        NuConvention::Physical => spec.nu() * PI * PI,
        NuConvention::PaperLiteral => PI * PI / spec.nu(),
    };
    let mut sum = 0.0;
    let mut k = 1usize;
    loop {
        let kf = k as f64;
        let term = kf * kf * (-2.0 * rate1 * kf * kf * t).exp();
        sum += term;
        // Terms decrease once k² rate t > 1; stop when they no longer matter.
        if 2.0 * rate1 * kf * kf * t > 1.0 && term <= sum * 1e-18 {
            break;
        }
        k += 1;
    }
    Ok((prefactor * sum).sqrt())
}

/// `max_t √t · B(t)` over the given times, with `B` from [`smoothing_series_bound`].
pub fn smoothing_constant(times: &[f64], spec: &OperatorSpectrum) -> Result<f64> {
    let mut c: f64 = 0.0;
    for &t in times {
        c = c.max(t.sqrt() * smoothing_series_bound(t, spec)?);
    }
    Ok(c)
}

/// Reusable buffers for the FFT path.
pub struct Workspace {
    buf: Vec<Complex<f64>>,
    scratch: Vec<Complex<f64>>,
    grid: Vec<f64>,
    cos: Vec<f64>,
}

/// Sine basis truncated at `K` modes together with its `N`-interval grid.
#[derive(Clone)]
pub struct SineBasis {
    modes: usize,
    grid: usize,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for SineBasis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SineBasis")
            .field("modes", &self.modes)
            .field("grid", &self.grid)
            .finish()
    }
}

/// Smallest power of two `≥ 2K`.
pub fn default_grid(modes: usize) -> usize {
    (2 * modes).next_power_of_two().max(4)
}

impl SineBasis {
    pub fn new(modes: usize, grid: usize) -> Result<Self> {
        if modes == 0 {
            return Err(Error::config("K", "must be >= 1"));
        }
        if !grid.is_power_of_two() {
            return Err(Error::config(
                "grid",
                format!("must be a power of two, got {grid}"),
            ));
        }
        if grid < 2 * modes {
            return Err(Error::config(
                "grid",
                format!("dealiasing requires grid >= 2K = {}, got {grid}", 2 * modes),
            ));
        }
        let fft = FftPlanner::new().plan_fft_forward(2 * grid);
        Ok(SineBasis { modes, grid, fft })
    }

    pub fn with_default_grid(modes: usize) -> Result<Self> {
        SineBasis::new(modes, default_grid(modes))
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn grid(&self) -> usize {
        self.grid
    }

    pub fn workspace(&self) -> Workspace {
        Workspace {
            buf: vec![Complex::new(0.0, 0.0); 2 * self.grid],
            scratch: vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()],
            grid: vec![0.0; self.grid + 1],
            cos: vec![0.0; self.modes],
        }
    }

    fn check_field(&self, f: &SpectralField) -> Result<()> {
        check_len(self.modes, f.modes())
    }

    fn check_grid(&self, g: &GridField) -> Result<()> {
        check_len(self.grid + 1, g.values.len())
    }

    /// `values_j = Σ_k c_k √2 sin(kπ x_j)`.
    pub fn to_grid(&self, f: &SpectralField) -> Result<GridField> {
        self.check_field(f)?;
        let mut ws = self.workspace();
        let mut values = vec![0.0; self.grid + 1];
        self.synthesize(f.coeffs(), &mut values, &mut ws);
        Ok(GridField { values })
    }

    /// `c_k = √2 ∫₀¹ g sin(kπx) dx` by the trapezoidal rule, `k ≤ K`.
    pub fn from_grid(&self, g: &GridField) -> Result<SpectralField> {
        self.check_grid(g)?;
        let mut ws = self.workspace();
        let mut coeffs = vec![0.0; self.modes];
        self.analyze(g.values(), &mut coeffs, &mut ws);
        Ok(SpectralField { coeffs })
    }

    /// Direct `O(NK)` synthesis.
    pub fn to_grid_reference(&self, f: &SpectralField) -> Result<GridField> {
        self.check_field(f)?;
        let n = self.grid;
        let values = (0..=n)
            .map(|j| {
                if j == 0 || j == n {
                    return 0.0;
                }
                let x = j as f64 / n as f64;
                f.coeffs
                    .iter()
                    .enumerate()
                    .map(|(i, c)| c * SQRT_2 * ((i + 1) as f64 * PI * x).sin())
                    .sum()
            })
            .collect();
        Ok(GridField { values })
    }

    /// Direct `O(NK)` sine quadrature.
    pub fn from_grid_reference(&self, g: &GridField) -> Result<SpectralField> {
        self.check_grid(g)?;
        let n = self.grid;
        let coeffs = (1..=self.modes)
            .map(|k| {
                let s: f64 = (1..n)
                    .map(|j| g.values[j] * (k as f64 * PI * j as f64 / n as f64).sin())
                    .sum();
                SQRT_2 * s / n as f64
            })
            .collect();
        Ok(SpectralField { coeffs })
    }

    /// Trapezoidal `∫₀¹ g cos(kπx) dx` for `k = 1..K`.
    pub fn cosine_integrals(&self, g: &GridField) -> Result<Vec<f64>> {
        self.check_grid(g)?;
        let mut ws = self.workspace();
        let mut out = vec![0.0; self.modes];
        self.cosine_quadrature(g.values(), &mut out, &mut ws);
        Ok(out)
    }

    pub fn cosine_integrals_reference(&self, g: &GridField) -> Result<Vec<f64>> {
        self.check_grid(g)?;
        let n = self.grid;
        Ok((1..=self.modes)
            .map(|k| {
                let prod: Vec<f64> = (0..=n)
                    .map(|j| g.values[j] * (k as f64 * PI * j as f64 / n as f64).cos())
                    .collect();
                trapezoid(&prod)
            })
            .collect())
    }

    /// Sine coefficients of `∂ₓ(v²)`, alias-free for `N ≥ 2K`.
    pub fn dx_square(&self, v: &SpectralField) -> Result<SpectralField> {
        self.check_field(v)?;
        let mut ws = self.workspace();
        let mut out = vec![0.0; self.modes];
        self.dx_square_into(v.coeffs(), &mut out, &mut ws);
        Ok(SpectralField { coeffs: out })
    }

    /// `S(t) ψ'` for a grid function `ψ`, through `⟨ψ', e_k⟩ = -√2 kπ ∫ψ cos(kπx)`.
    pub fn semigroup_of_derivative(
        &self,
        psi: &GridField,
        t: f64,
        spec: &OperatorSpectrum,
    ) -> Result<SpectralField> {
        if !(t > 0.0) {
            return Err(Error::Domain(format!(
                "the derivative extension needs t > 0, got {t}"
            )));
        }
        check_len(self.modes, spec.modes())?;
        let cos = self.cosine_integrals(psi)?;
        let coeffs = cos
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let k = (i + 1) as f64;
                -SQRT_2 * k * PI * (-spec.rate(i + 1) * t).exp() * c
            })
            .collect();
        Ok(SpectralField { coeffs })
    }

    /// `(∫₀¹ |f|⁴ dx)^{1/4}` by grid quadrature.
    pub fn norm_l4(&self, f: &SpectralField) -> Result<f64> {
        self.check_field(f)?;
        let mut ws = self.workspace();
        Ok(self.norm_l4_with(f.coeffs(), &mut ws))
    }

    pub(crate) fn norm_l4_with(&self, coeffs: &[f64], ws: &mut Workspace) -> f64 {
        let mut grid = std::mem::take(&mut ws.grid);
        self.synthesize(coeffs, &mut grid, ws);
        let fourth: f64 = grid[1..self.grid].iter().map(|v| (v * v) * (v * v)).sum();
        ws.grid = grid;
        (fourth / self.grid as f64).powf(0.25)
    }

    /// Coefficients of the pointwise product `g · Σ_k dw_k e_k`, projected on `K` modes.
    pub fn multiply_noise(&self, g: &GridField, dw: &[f64]) -> Result<Vec<f64>> {
        self.check_grid(g)?;
        check_len(self.modes, dw.len())?;
        let mut ws = self.workspace();
        let mut out = vec![0.0; self.modes];
        self.multiply_noise_into(g.values(), dw, &mut out, &mut ws);
        Ok(out)
    }

    pub(crate) fn multiply_noise_into(
        &self,
        g: &[f64],
        dw: &[f64],
        out: &mut [f64],
        ws: &mut Workspace,
    ) {
        let mut grid = std::mem::take(&mut ws.grid);
        self.synthesize(dw, &mut grid, ws);
        for (w, gv) in grid.iter_mut().zip(g) {
            *w *= gv;
        }
        self.analyze(&grid, out, ws);
        ws.grid = grid;
    }

    pub(crate) fn dx_square_into(&self, v: &[f64], out: &mut [f64], ws: &mut Workspace) {
        let mut grid = std::mem::take(&mut ws.grid);
        self.synthesize(v, &mut grid, ws);
        for x in grid.iter_mut() {
            *x *= *x;
        }
        let mut cos = std::mem::take(&mut ws.cos);
        self.cosine_quadrature(&grid, &mut cos, ws);
        for (i, (o, c)) in out.iter_mut().zip(&cos).enumerate() {
            *o = -SQRT_2 * (i + 1) as f64 * PI * c;
        }
        ws.grid = grid;
        ws.cos = cos;
    }

    fn run_fft(&self, ws: &mut Workspace) {
        self.fft.process_with_scratch(&mut ws.buf, &mut ws.scratch);
    }

    /// Odd extension of `coeffs` then FFT: `Σ_k c_k sin(πjk/N) = -Im(H_j)/2`.
    fn synthesize(&self, coeffs: &[f64], values: &mut [f64], ws: &mut Workspace) {
        let n = self.grid;
        ws.buf.iter_mut().for_each(|z| *z = Complex::new(0.0, 0.0));
        for (i, &c) in coeffs.iter().enumerate() {
            let k = i + 1;
            ws.buf[k].re = c;
            ws.buf[2 * n - k].re = -c;
        }
        self.run_fft(ws);
        values[0] = 0.0;
        values[n] = 0.0;
        for j in 1..n {
            values[j] = -SQRT_2 * 0.5 * ws.buf[j].im;
        }
    }

    /// Odd extension of the interior samples: `Σ_j g_j sin(πjk/N) = -Im(H_k)/2`.
    fn analyze(&self, values: &[f64], coeffs: &mut [f64], ws: &mut Workspace) {
        let n = self.grid;
        ws.buf[0] = Complex::new(0.0, 0.0);
        ws.buf[n] = Complex::new(0.0, 0.0);
        for j in 1..n {
            ws.buf[j] = Complex::new(values[j], 0.0);
            ws.buf[2 * n - j] = Complex::new(-values[j], 0.0);
        }
        self.run_fft(ws);
        let scale = SQRT_2 / n as f64;
        for (i, c) in coeffs.iter_mut().enumerate() {
            *c = -0.5 * ws.buf[i + 1].im * scale;
        }
    }

    /// Even extension: trapezoidal `Σ''_j f_j cos(πjk/N) = Re(H_k)/2`.
    fn cosine_quadrature(&self, values: &[f64], out: &mut [f64], ws: &mut Workspace) {
        let n = self.grid;
        ws.buf[0] = Complex::new(values[0], 0.0);
        ws.buf[n] = Complex::new(values[n], 0.0);
        for j in 1..n {
            ws.buf[j] = Complex::new(values[j], 0.0);
            ws.buf[2 * n - j] = Complex::new(values[j], 0.0);
        }
        self.run_fft(ws);
        let scale = 0.5 / n as f64;
        for (i, c) in out.iter_mut().enumerate() {
            *c = ws.buf[i + 1].re * scale;
        }
    }
}
