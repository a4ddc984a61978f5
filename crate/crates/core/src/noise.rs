//! Wiener increments and the damped stochastic convolutions `Z_L`, `Y_L`.
//!
//! Each path draws from its own ChaCha8 stream: the 64-bit seed keys the
//! generator and `stream_id` selects the ChaCha stream, so `(seed, stream_id)`
//! fixes the increment sequence bit for bit. Gaussian variates come from
//! `rand_distr::StandardNormal` (ziggurat), scaled by `√dt`. Per step the
//! scalar increment `ΔW⁰` is drawn first, then `ΔW¹..ΔW^K` in mode order.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{GridField, OperatorSpectrum, SineBasis, SpectralField};

/// Identifies one reproducible increment stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngSeed {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngSeed {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        RngSeed { seed, stream_id }
    }
}

/// Generator state for one path.
#[derive(Clone, Debug)]
pub struct NoiseStream {
    rng: ChaCha8Rng,
    seed: RngSeed,
    modes: usize,
    draws: u64,
}

impl NoiseStream {
    pub fn new(seed: RngSeed, modes: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.seed);
        rng.set_stream(seed.stream_id);
        NoiseStream {
            rng,
            seed,
            modes,
            draws: 0,
        }
    }

    pub fn seed(&self) -> RngSeed {
        self.seed
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    /// Number of increments drawn so far.
    pub fn draws(&self) -> u64 {
        self.draws
    }

    fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Next increment of length `dt`; see [`sample_increment`].
    pub fn next_increment(&mut self, dt: f64) -> Result<NoiseIncrement> {
        let mut inc = NoiseIncrement::zero(self.modes, dt);
        self.fill(&mut inc, dt)?;
        Ok(inc)
    }

    /// Overwrites `inc` with a fresh increment, reusing its buffer.
    pub fn fill(&mut self, inc: &mut NoiseIncrement, dt: f64) -> Result<()> {
        if !(dt >= 0.0) {
            return Err(Error::Domain(format!("dt must be >= 0, got {dt}")));
        }
        if inc.dw.len() != self.modes {
            return Err(Error::SizeMismatch {
                expected: self.modes,
                got: inc.dw.len(),
            });
        }
        let s = dt.sqrt();
        inc.dt = dt;
        // Draws are consumed even when dt = 0 so the stream stays aligned.
        inc.dw0 = self.standard_normal() * s;
        for w in inc.dw.iter_mut() {
            *w = self.standard_normal() * s;
        }
        if dt == 0.0 {
            inc.dw0 = 0.0;
            inc.dw.iter_mut().for_each(|w| *w = 0.0);
        }
        self.draws += 1;
        Ok(())
    }
}

/// One step's Brownian increments: `ΔW⁰` and the mode increments `ΔW^k`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseIncrement {
    pub dw0: f64,
    pub dw: Vec<f64>,
    pub dt: f64,
}

impl NoiseIncrement {
    pub fn zero(modes: usize, dt: f64) -> Self {
        NoiseIncrement {
            dw0: 0.0,
            dw: vec![0.0; modes],
            dt,
        }
    }

    pub fn modes(&self) -> usize {
        self.dw.len()
    }

    /// Increment over the union of two consecutive intervals.
    pub fn merge(&self, next: &NoiseIncrement) -> NoiseIncrement {
        NoiseIncrement {
            dw0: self.dw0 + next.dw0,
            dw: self.dw.iter().zip(&next.dw).map(|(a, b)| a + b).collect(),
            dt: self.dt + next.dt,
        }
    }
}

/// `K + 1` independent `N(0, dt)` draws from `rng`.
pub fn sample_increment(rng: &mut NoiseStream, dt: f64, modes: usize) -> Result<NoiseIncrement> {
    if modes != rng.modes() {
        return Err(Error::SizeMismatch {
            expected: rng.modes(),
            got: modes,
        });
    }
    rng.next_increment(dt)
}

/// How the noise enters a linearly damped mode with rate `a` over one step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseScheme {
    /// `x ← e^{-a dt} x + √((1 - e^{-2a dt})/(2a dt)) · g ΔW`: the exact
    /// Ornstein–Uhlenbeck transition when `g` is constant.
    #[default]
    ExactVariance,
    /// `x ← e^{-a dt} (x + g ΔW)`: the semigroup applied to the whole bracket.
    Endpoint,
}

/// Factor multiplying `g ΔW` for a mode with damping rate `a`.
pub fn noise_weight(a: f64, dt: f64, scheme: NoiseScheme) -> f64 {
    match scheme {
        NoiseScheme::Endpoint => (-a * dt).exp(),
        NoiseScheme::ExactVariance => {
            let x = 2.0 * a * dt;
            if x == 0.0 {
                1.0
            } else {
                (-(-x).exp_m1() / x).sqrt()
            }
        }
    }
}

/// Stationary variance per unit `g²` of a mode with rate `a > 0` under `scheme`.
pub fn discrete_stationary_variance(a: f64, dt: f64, scheme: NoiseScheme) -> f64 {
    match scheme {
        NoiseScheme::ExactVariance => 1.0 / (2.0 * a),
        NoiseScheme::Endpoint => {
            let d2 = (-2.0 * a * dt).exp();
            dt * d2 / (1.0 - d2)
        }
    }
}

/// Precomputed per-step factors for the convolutions at damping `L`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvolutionKernel {
    l: f64,
    dt: f64,
    damping_z: Vec<f64>,
    weight_z: Vec<f64>,
    damping_y: f64,
    weight_y: f64,
}

impl ConvolutionKernel {
    pub fn new(l: f64, spec: &OperatorSpectrum, dt: f64, scheme: NoiseScheme) -> Result<Self> {
        if !(l >= 0.0) || !l.is_finite() {
            return Err(Error::Domain(format!("L must be >= 0, got {l}")));
        }
        if !(dt > 0.0) {
            return Err(Error::Domain(format!("dt must be > 0, got {dt}")));
        }
        let damping_z = spec.rates().iter().map(|r| (-(l + r) * dt).exp()).collect();
        let weight_z = spec
            .rates()
            .iter()
            .map(|r| noise_weight(l + r, dt, scheme))
            .collect();
        let ay = l + spec.nu();
        Ok(ConvolutionKernel {
            l,
            dt,
            damping_z,
            weight_z,
            damping_y: (-ay * dt).exp(),
            weight_y: noise_weight(ay, dt, scheme),
        })
    }

    pub fn l(&self) -> f64 {
        self.l
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }
}

/// The pair `(Z_L, Y_L)` at one time.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvolutionState {
    pub z: SpectralField,
    pub y: f64,
    pub l: f64,
}

impl ConvolutionState {
    pub fn zero(modes: usize, l: f64) -> Self {
        ConvolutionState {
            z: SpectralField::zeros(modes),
            y: 0.0,
            l,
        }
    }

    /// One step given the projected noise `(g₁ΔW₁)_k` and the scalar `g₀ΔW⁰`.
    pub fn advance(&mut self, kernel: &ConvolutionKernel, g1_dw: &[f64], g0_dw0: f64) {
        for (((z, d), w), n) in self
            .z
            .coeffs_mut()
            .iter_mut()
            .zip(&kernel.damping_z)
            .zip(&kernel.weight_z)
            .zip(g1_dw)
        {
            *z = d * *z + w * n;
        }
        self.y = kernel.damping_y * self.y + kernel.weight_y * g0_dw0;
    }
}

/// Advances `Z_L` with the multiplication operator `g₁` (a grid field).
pub fn convolution_step_z(
    cs: &ConvolutionState,
    g1_field: &GridField,
    inc: &NoiseIncrement,
    basis: &SineBasis,
    spec: &OperatorSpectrum,
    scheme: NoiseScheme,
) -> Result<ConvolutionState> {
    if cs.z.modes() != inc.modes() {
        return Err(Error::SizeMismatch {
            expected: cs.z.modes(),
            got: inc.modes(),
        });
    }
    let kernel = ConvolutionKernel::new(cs.l, spec, inc.dt, scheme)?;
    let g_dw = basis.multiply_noise(g1_field, &inc.dw)?;
    let mut next = cs.clone();
    let y = next.y;
    next.advance(&kernel, &g_dw, 0.0);
    next.y = y;
    Ok(next)
}

/// Advances `Y_L`: `Y ← e^{-(L+ν)dt} Y + w · g₀ ΔW⁰`.
pub fn convolution_step_y(
    cs: &ConvolutionState,
    g0_val: f64,
    inc: &NoiseIncrement,
    nu: f64,
    scheme: NoiseScheme,
) -> Result<ConvolutionState> {
    if !(inc.dt > 0.0) {
        return Err(Error::Domain(format!("dt must be > 0, got {}", inc.dt)));
    }
    let a = cs.l + nu;
    let mut next = cs.clone();
    next.y = (-a * inc.dt).exp() * cs.y + noise_weight(a, inc.dt, scheme) * g0_val * inc.dw0;
    Ok(next)
}

/// Exact stationary `E‖Z_L‖² = Σ_{k≤K} σ²/(2(L + rate_k))` for constant diffusion `σ`.
pub fn stationary_variance_z(l: f64, spec: &OperatorSpectrum, sigma: f64, modes: usize) -> f64 {
    spec.rates()[..modes]
        .iter()
        .map(|r| sigma * sigma / (2.0 * (l + r)))
        .sum()
}

/// Exact stationary `E Y_L² = σ²/(2(L + ν))`.
pub fn stationary_variance_y(l: f64, nu: f64, sigma: f64) -> f64 {
    sigma * sigma / (2.0 * (l + nu))
}

const DUMP_MAGIC: &[u8; 8] = b"SBWINC01";

/// Writes increments in the replay format: the magic `SBWINC01`, `K` (u32 LE),
/// `dt` (f64 LE), the record count (u64 LE), then per record `ΔW⁰, ΔW¹..ΔW^K`
/// as f64 LE.
pub fn write_increments<W: Write>(mut w: W, increments: &[NoiseIncrement]) -> Result<()> {
    let modes = increments.first().map_or(0, |i| i.modes());
    let dt = increments.first().map_or(0.0, |i| i.dt);
    w.write_all(DUMP_MAGIC)?;
    w.write_all(&(modes as u32).to_le_bytes())?;
    w.write_all(&dt.to_le_bytes())?;
    w.write_all(&(increments.len() as u64).to_le_bytes())?;
    for inc in increments {
        if inc.modes() != modes {
            return Err(Error::SizeMismatch {
                expected: modes,
                got: inc.modes(),
            });
        }
        w.write_all(&inc.dw0.to_le_bytes())?;
        for x in &inc.dw {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_increments<R: Read>(mut r: R) -> Result<Vec<NoiseIncrement>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != DUMP_MAGIC {
        return Err(Error::Io("not an increment dump".into()));
    }
    let mut b4 = [0u8; 4];
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b4)?;
    let modes = u32::from_le_bytes(b4) as usize;
    r.read_exact(&mut b8)?;
    let dt = f64::from_le_bytes(b8);
    r.read_exact(&mut b8)?;
    let count = u64::from_le_bytes(b8) as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        r.read_exact(&mut b8)?;
        let dw0 = f64::from_le_bytes(b8);
        let mut dw = Vec::with_capacity(modes);
        for _ in 0..modes {
            r.read_exact(&mut b8)?;
            dw.push(f64::from_le_bytes(b8));
        }
        out.push(NoiseIncrement { dw0, dw, dt });
    }
    Ok(out)
}
