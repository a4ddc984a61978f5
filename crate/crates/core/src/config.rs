//! Run configuration: one flat TOML document per run.
//!
//! ```toml
//! P = 1.0
//! nu = 1.0
//! K = 64
//! dt = 1e-3
//! T = 10.0
//! g0 = { kind = "constant", value = 0.1 }
//! g1 = { kind = "constant", value = 0.1 }
//! ```
//!
//! Every other key is optional; see [`RunConfig`] for the defaults. Unknown
//! keys are rejected.

use serde::{Deserialize, Serialize};

use crate::decomposition::XiExponent;
use crate::dynamics::{DiffusionSpec, ModelParams, State};
use crate::ergodicity::{Coupling, ObservableSpec};
use crate::error::{Error, Result};
use crate::noise::NoiseScheme;
use crate::spectral::{default_grid, NuConvention, SpectralField};

/// Seed used when the config and the command line give none.
pub const DEFAULT_SEED: u64 = 20_240_917;

/// Initial state: `U` and the leading sine coefficients of `v` (the rest are zero).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct InitSpec {
    #[serde(rename = "U", default)]
    pub u: f64,
    #[serde(default)]
    pub modes: Vec<f64>,
}

impl InitSpec {
    pub fn to_state(&self, modes: usize) -> Result<State> {
        if self.modes.len() > modes {
            return Err(Error::config(
                "init",
                format!("{} coefficients given but K = {modes}", self.modes.len()),
            ));
        }
        let mut c = self.modes.clone();
        c.resize(modes, 0.0);
        let v = SpectralField::from_coeffs(c)
            .map_err(|_| Error::config("init", "coefficients must be finite"))?;
        if !self.u.is_finite() {
            return Err(Error::config("init", "U must be finite"));
        }
        Ok(State::new(self.u, v))
    }
}

/// The document as written; `None` means "use the default".
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(rename = "P")]
    p: f64,
    nu: f64,
    #[serde(rename = "K")]
    k: usize,
    grid: Option<usize>,
    dt: f64,
    #[serde(rename = "T")]
    t: f64,
    cutoff: Option<f64>,
    nu_convention: Option<NuConvention>,
    noise_scheme: Option<NoiseScheme>,
    nonlinear: Option<bool>,
    require_separated: Option<bool>,
    xi_exponent: Option<XiExponent>,
    g0: DiffusionSpec,
    g1: DiffusionSpec,
    seed: Option<u64>,
    paths: Option<usize>,
    record_every: Option<usize>,
    csv_modes: Option<usize>,
    init: Option<InitSpec>,
    init_alt: Option<InitSpec>,
    observables: Option<Vec<ObservableSpec>>,
    bins: Option<usize>,
    burn_in: Option<f64>,
    tail_thresholds: Option<Vec<f64>>,
    tail_level: Option<f64>,
    #[serde(rename = "L_values")]
    l_values: Option<Vec<f64>>,
    moment_order: Option<f64>,
    t_grid: Option<Vec<f64>>,
    coupling: Option<Coupling>,
    smoothing_times: Option<Vec<f64>>,
    smoothing_fields: Option<usize>,
    dump_increments: Option<bool>,
    out_dir: Option<String>,
}

/// A validated configuration with all defaults filled in.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub model: ModelParams,
    /// Horizon `T`.
    pub horizon: f64,
    pub xi_exponent: XiExponent,
    /// Default [`DEFAULT_SEED`].
    pub seed: u64,
    /// Default 1 for `simulate` and `invariant`, 200 for ensembles (see [`RunConfig::ensemble_paths`]).
    pub paths: Option<usize>,
    /// Default 1.
    pub record_every: usize,
    /// Number of mode columns in trajectory CSVs; default `min(K, 4)`.
    pub csv_modes: usize,
    /// Default `U = 0`, `v = 0`.
    pub init: InitSpec,
    /// Second starting point for uniqueness probes; default `U = 2`, `v = 2e₁`.
    pub init_alt: InitSpec,
    /// Default `["U", "hnorm"]`.
    pub observables: Vec<ObservableSpec>,
    /// Default 32.
    pub bins: usize,
    /// Default `T/10`.
    pub burn_in: f64,
    /// Default `0.5, 1.0, …, 5.0`.
    pub tail_thresholds: Vec<f64>,
    /// Default 0.05.
    pub tail_level: f64,
    /// Default `[0, 1, 10, 100]`.
    pub l_values: Vec<f64>,
    /// Default 2.
    pub moment_order: f64,
    /// Default `[1, 5, 20]`.
    pub t_grid: Vec<f64>,
    /// Default common noise.
    pub coupling: Coupling,
    /// Default `[1e-3, 1e-2, 1e-1, 1]`.
    pub smoothing_times: Vec<f64>,
    /// Default 100.
    pub smoothing_fields: usize,
    /// Write the raw increments of `simulate` to `increments.bin`; default false.
    pub dump_increments: bool,
    pub out_dir: Option<String>,
}

impl RunConfig {
    pub fn init_state(&self) -> Result<State> {
        self.init.to_state(self.model.modes)
    }

    pub fn init_alt_state(&self) -> Result<State> {
        self.init_alt.to_state(self.model.modes)
    }

    pub fn ensemble_paths(&self) -> usize {
        self.paths.unwrap_or(200)
    }

    pub fn single_paths(&self) -> usize {
        self.paths.unwrap_or(1)
    }

    /// Re-runs every check; used after command-line overrides.
    pub fn validate(&self) -> Result<()> {
        match collect_errors(self).into_iter().next() {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }
}

fn unknown_key(message: &str) -> String {
    let tick = |s: &str| s.split('`').nth(1).map(str::to_string);
    if message.contains("unknown field") || message.contains("missing field") {
        if let Some(k) = tick(message) {
            return k;
        }
    }
    "document".into()
}

/// Parses and validates a TOML document. On failure the first error is
/// returned; its message lists every violation found.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| {
        let msg = e.message().to_string();
        Error::config(unknown_key(&msg), msg)
    })?;
    let cfg = resolve(raw)?;
    let errors = collect_errors(&cfg);
    if let Some(Error::Config { key, .. }) = errors.first() {
        let all: Vec<String> = errors.iter().map(|e| e.to_string()).collect();
        return Err(Error::config(key.clone(), all.join("; ")));
    }
    Ok(cfg)
}

pub fn load_config(path: &std::path::Path) -> Result<RunConfig> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_config(&text)
}

fn resolve(raw: RawConfig) -> Result<RunConfig> {
    let model = ModelParams {
        force: raw.p,
        nu: raw.nu,
        modes: raw.k,
        grid: raw.grid.unwrap_or_else(|| default_grid(raw.k.max(1))),
        dt: raw.dt,
        g0: raw.g0,
        g1: raw.g1,
        cutoff: raw.cutoff,
        nu_convention: raw.nu_convention.unwrap_or_default(),
        noise_scheme: raw.noise_scheme.unwrap_or_default(),
        nonlinear: raw.nonlinear.unwrap_or(true),
        require_separated: raw.require_separated.unwrap_or(false),
    };
    Ok(RunConfig {
        horizon: raw.t,
        xi_exponent: raw.xi_exponent.unwrap_or_default(),
        seed: raw.seed.unwrap_or(DEFAULT_SEED),
        paths: raw.paths,
        record_every: raw.record_every.unwrap_or(1),
        csv_modes: raw.csv_modes.unwrap_or(raw.k.min(4)),
        init: raw.init.unwrap_or_default(),
        init_alt: raw.init_alt.unwrap_or(InitSpec {
            u: 2.0,
            modes: vec![2.0],
        }),
        observables: raw
            .observables
            .unwrap_or_else(|| vec![ObservableSpec::U, ObservableSpec::HNorm]),
        bins: raw.bins.unwrap_or(32),
        burn_in: raw.burn_in.unwrap_or(raw.t / 10.0),
        tail_thresholds: raw
            .tail_thresholds
            .unwrap_or_else(|| (1..=10).map(|i| 0.5 * i as f64).collect()),
        tail_level: raw.tail_level.unwrap_or(0.05),
        l_values: raw.l_values.unwrap_or_else(|| vec![0.0, 1.0, 10.0, 100.0]),
        moment_order: raw.moment_order.unwrap_or(2.0),
        t_grid: raw.t_grid.unwrap_or_else(|| vec![1.0, 5.0, 20.0]),
        coupling: raw.coupling.unwrap_or_default(),
        smoothing_times: raw
            .smoothing_times
            .unwrap_or_else(|| vec![1e-3, 1e-2, 1e-1, 1.0]),
        smoothing_fields: raw.smoothing_fields.unwrap_or(100),
        dump_increments: raw.dump_increments.unwrap_or(false),
        out_dir: raw.out_dir,
        model,
    })
}

fn collect_errors(cfg: &RunConfig) -> Vec<Error> {
    let mut errs = Vec::new();
    let m = &cfg.model;
    if m.modes == 0 {
        errs.push(Error::config("K", "must be >= 1"));
    }
    if let Err(e) = m.validate() {
        if m.modes > 0 {
            errs.push(e);
        }
    }
    // ModelParams stops at its first problem; look at the common keys directly too.
    for (key, bad) in [
        ("nu", !(m.nu > 0.0 && m.nu.is_finite())),
        ("dt", !(m.dt > 0.0 && m.dt.is_finite())),
    ] {
        if bad
            && !errs
                .iter()
                .any(|e| matches!(e, Error::Config { key: k, .. } if k == key))
        {
            errs.push(Error::config(key, "must be a finite positive number"));
        }
    }
    let mut check = |ok: bool, key: &str, msg: &str| {
        if !ok {
            errs.push(Error::config(key, msg));
        }
    };
    check(
        cfg.horizon >= 0.0 && cfg.horizon.is_finite(),
        "T",
        "must be >= 0",
    );
    check(cfg.paths.is_none_or(|p| p >= 1), "paths", "must be >= 1");
    check(cfg.record_every >= 1, "record_every", "must be >= 1");
    check(cfg.csv_modes <= m.modes, "csv_modes", "must not exceed K");
    check(
        cfg.init.modes.len() <= m.modes,
        "init",
        "more coefficients than K",
    );
    check(
        cfg.init_alt.modes.len() <= m.modes,
        "init_alt",
        "more coefficients than K",
    );
    check(cfg.bins >= 1, "bins", "must be >= 1");
    check(
        cfg.burn_in >= 0.0 && cfg.burn_in.is_finite(),
        "burn_in",
        "must be >= 0",
    );
    check(
        cfg.tail_thresholds
            .iter()
            .all(|m| *m > 0.0 && m.is_finite()),
        "tail_thresholds",
        "thresholds must be > 0",
    );
    check(
        cfg.tail_level > 0.0 && cfg.tail_level < 1.0,
        "tail_level",
        "must lie in (0, 1)",
    );
    check(
        cfg.l_values.iter().all(|l| *l >= 0.0 && l.is_finite()),
        "L_values",
        "must be >= 0",
    );
    check(
        cfg.moment_order >= 2.0 && cfg.moment_order.is_finite(),
        "moment_order",
        "must be >= 2",
    );
    check(
        cfg.t_grid.iter().all(|t| *t >= 0.0 && t.is_finite()),
        "t_grid",
        "times must be >= 0",
    );
    check(
        cfg.smoothing_times.iter().all(|t| *t > 0.0 && t.is_finite()),
        "smoothing_times",
        "times must be > 0",
    );
    check(cfg.smoothing_fields >= 1, "smoothing_fields", "must be >= 1");
    for obs in &cfg.observables {
        if let ObservableSpec::Mode(k) = obs {
            check(*k <= m.modes, "observables", "mode index exceeds K");
        }
    }
    errs
}
