//! Occupation measures, tail fractions, total-variation distances and
//! Monte Carlo transition probabilities.
//!
//! Laws on the state space are only probed through real observables binned
//! on a fixed set of edges; distances between measures are distances between
//! those binned marginals.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{ModelParams, State, Stepper, Trajectory};
use crate::error::{Error, Result};
use crate::noise::{NoiseIncrement, NoiseStream, RngSeed};
use crate::spectral::lambda;
use crate::stats::{map_paths, Summary};

/// A real-valued function of the state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ObservableSpec {
    U,
    /// `‖v‖`.
    L2NormV,
    /// `‖v‖_{H^{1/4}} = (Σ λ_k^{1/4} v_k²)^{1/2}`.
    H14NormV,
    /// Coefficient `v_k`, `k ≥ 1`.
    Mode(usize),
    /// `|U| + ‖v‖`.
    HNorm,
    /// `|U| + ‖v‖_{H^{1/4}}`.
    H0Norm,
}

impl ObservableSpec {
    pub fn name(&self) -> String {
        match self {
            ObservableSpec::U => "U".into(),
            ObservableSpec::L2NormV => "l2norm_v".into(),
            ObservableSpec::H14NormV => "h14norm_v".into(),
            ObservableSpec::Mode(k) => format!("mode_{k}"),
            ObservableSpec::HNorm => "hnorm".into(),
            ObservableSpec::H0Norm => "h0norm".into(),
        }
    }
}

impl fmt::Display for ObservableSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for ObservableSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "U" | "u" => ObservableSpec::U,
            "l2norm_v" => ObservableSpec::L2NormV,
            "h14norm_v" => ObservableSpec::H14NormV,
            "hnorm" => ObservableSpec::HNorm,
            "h0norm" => ObservableSpec::H0Norm,
            _ => match s.strip_prefix("mode_").and_then(|k| k.parse::<usize>().ok()) {
                Some(k) if k >= 1 => ObservableSpec::Mode(k),
                _ => {
                    return Err(Error::config(
                        "observables",
                        format!("unknown observable `{s}` (U, l2norm_v, h14norm_v, mode_<k>, hnorm, h0norm)"),
                    ))
                }
            },
        })
    }
}

impl TryFrom<String> for ObservableSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ObservableSpec> for String {
    fn from(o: ObservableSpec) -> String {
        o.name()
    }
}

/// A list of observables with the weights they need, checked against `K`.
#[derive(Clone, Debug, PartialEq)]
pub struct Observers {
    specs: Vec<ObservableSpec>,
    h14_weights: Vec<f64>,
}

impl Observers {
    pub fn new(specs: Vec<ObservableSpec>, modes: usize) -> Result<Self> {
        for s in &specs {
            if let ObservableSpec::Mode(k) = s {
                if *k == 0 || *k > modes {
                    return Err(Error::config(
                        "observables",
                        format!("mode_{k} outside 1..={modes}"),
                    ));
                }
            }
        }
        let h14_weights = (1..=modes).map(|k| lambda(k).powf(0.25)).collect();
        Ok(Observers { specs, h14_weights })
    }

    pub fn specs(&self) -> &[ObservableSpec] {
        &self.specs
    }

    fn h14(&self, s: &State) -> f64 {
        s.v.coeffs()
            .iter()
            .zip(&self.h14_weights)
            .map(|(c, w)| w * c * c)
            .sum::<f64>()
            .sqrt()
    }

    pub fn eval_one(&self, obs: &ObservableSpec, s: &State) -> f64 {
        match obs {
            ObservableSpec::U => s.u,
            ObservableSpec::L2NormV => s.v.norm(),
            ObservableSpec::H14NormV => self.h14(s),
            ObservableSpec::Mode(k) => s.v.mode(*k),
            ObservableSpec::HNorm => s.u.abs() + s.v.norm(),
            ObservableSpec::H0Norm => s.u.abs() + self.h14(s),
        }
    }

    pub fn eval(&self, s: &State) -> Vec<f64> {
        self.specs.iter().map(|o| self.eval_one(o, s)).collect()
    }
}

/// Evaluates one observable on one state.
pub fn observe(obs: ObservableSpec, s: &State) -> Result<f64> {
    Ok(Observers::new(vec![obs], s.v.modes())?.eval_one(&obs, s))
}

/// Strictly increasing bin edges; values outside fall in an underflow or overflow bin.
#[derive(Clone, Debug, PartialEq)]
pub struct BinEdges {
    edges: Vec<f64>,
}

impl BinEdges {
    pub fn new(edges: Vec<f64>) -> Result<Self> {
        if edges.len() < 2 {
            return Err(Error::config("bins", "need at least two edges"));
        }
        if !edges.iter().all(|e| e.is_finite()) || !edges.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::config(
                "bins",
                "edges must be finite and strictly increasing",
            ));
        }
        Ok(BinEdges { edges })
    }

    pub fn uniform(lo: f64, hi: f64, bins: usize) -> Result<Self> {
        if bins == 0 || !(lo < hi) {
            return Err(Error::config(
                "bins",
                format!("need bins >= 1 and lo < hi, got {bins}, [{lo}, {hi}]"),
            ));
        }
        let w = (hi - lo) / bins as f64;
        let mut edges: Vec<f64> = (0..bins).map(|i| lo + i as f64 * w).collect();
        edges.push(hi);
        BinEdges::new(edges)
    }

    /// `bins` equal bins over the pooled range of `samples`, widened when degenerate.
    pub fn from_samples<'a>(
        samples: impl IntoIterator<Item = &'a f64>,
        bins: usize,
    ) -> Result<Self> {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for x in samples {
            if x.is_finite() {
                lo = lo.min(*x);
                hi = hi.max(*x);
            }
        }
        if !lo.is_finite() {
            return Err(Error::EmptyWindow("no finite samples to bin".into()));
        }
        if hi - lo <= 1e-12 * lo.abs().max(1.0) {
            let pad = 0.5 * lo.abs().max(1.0);
            lo -= pad;
            hi += pad;
        }
        BinEdges::uniform(lo, hi, bins)
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    /// Number of interior bins.
    pub fn bins(&self) -> usize {
        self.edges.len() - 1
    }

    /// Slot in `0..bins+2`: 0 is underflow, `bins+1` overflow. The top edge is closed.
    pub fn slot(&self, x: f64) -> usize {
        let e = &self.edges;
        let last = e.len() - 1;
        if x < e[0] {
            0
        } else if x > e[last] {
            last + 1
        } else if x == e[last] {
            last
        } else {
            e.partition_point(|edge| *edge <= x)
        }
    }
}

/// Binned probability measure on the real line.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalMeasure {
    edges: BinEdges,
    /// Underflow, the interior bins in order, overflow.
    masses: Vec<f64>,
    count: usize,
}

impl EmpiricalMeasure {
    pub fn from_samples(edges: &BinEdges, samples: &[f64]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyWindow("no samples".into()));
        }
        let mut counts = vec![0usize; edges.bins() + 2];
        for x in samples {
            if x.is_nan() {
                return Err(Error::Domain("NaN sample".into()));
            }
            counts[edges.slot(*x)] += 1;
        }
        let n = samples.len() as f64;
        Ok(EmpiricalMeasure {
            edges: edges.clone(),
            masses: counts.iter().map(|c| *c as f64 / n).collect(),
            count: samples.len(),
        })
    }

    pub fn edges(&self) -> &BinEdges {
        &self.edges
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// `(lo, hi, mass)` for every slot, with `±∞` bounds on the outer ones.
    pub fn rows(&self) -> Vec<(f64, f64, f64)> {
        let e = self.edges.edges();
        let mut out = Vec::with_capacity(self.masses.len());
        for (i, m) in self.masses.iter().enumerate() {
            let lo = if i == 0 { f64::NEG_INFINITY } else { e[i - 1] };
            let hi = if i == self.masses.len() - 1 {
                f64::INFINITY
            } else {
                e[i]
            };
            out.push((lo, hi, *m));
        }
        out
    }
}

/// `½ Σ |p_i - q_i|` over identical bins.
pub fn tv_distance(m1: &EmpiricalMeasure, m2: &EmpiricalMeasure) -> Result<f64> {
    if m1.edges != m2.edges {
        return Err(Error::EdgesMismatch);
    }
    let d: f64 = m1
        .masses
        .iter()
        .zip(&m2.masses)
        .map(|(p, q)| (p - q).abs())
        .sum();
    Ok((0.5 * d).min(1.0))
}

/// Samples of `obs` at stored times `t > burn_in`.
pub fn retained_samples(traj: &Trajectory, obs: &ObservableSpec, burn_in: f64) -> Result<Vec<f64>> {
    let series = traj.observable_series(obs)?;
    let out: Vec<f64> = traj
        .times
        .iter()
        .zip(series)
        .filter(|(t, _)| **t > burn_in)
        .map(|(_, x)| x)
        .collect();
    if out.is_empty() {
        return Err(Error::EmptyWindow(format!(
            "no samples after burn-in {burn_in} (horizon {})",
            traj.horizon()
        )));
    }
    Ok(out)
}

/// Time-averaged law of `obs` over `(burn_in, T]`, every stored sample weighted equally.
pub fn occupation_measure(
    traj: &Trajectory,
    obs: &ObservableSpec,
    edges: &BinEdges,
    burn_in: f64,
) -> Result<EmpiricalMeasure> {
    EmpiricalMeasure::from_samples(edges, &retained_samples(traj, obs, burn_in)?)
}

/// Fraction of retained samples with `obs ≥ m`.
pub fn tail_fraction(traj: &Trajectory, obs: &ObservableSpec, m: f64, burn_in: f64) -> Result<f64> {
    if !(m > 0.0) {
        return Err(Error::Domain(format!("threshold must be > 0, got {m}")));
    }
    let xs = retained_samples(traj, obs, burn_in)?;
    Ok(fraction_at_least(&xs, m))
}

fn fraction_at_least(xs: &[f64], m: f64) -> f64 {
    xs.iter().filter(|x| **x >= m).count() as f64 / xs.len() as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct TailScan {
    /// `(M, tail fraction)`.
    pub rows: Vec<(f64, f64)>,
    /// Smallest threshold whose tail fraction is below `level`.
    pub m_star: Option<f64>,
    pub level: f64,
}

impl TailScan {
    pub fn is_nonincreasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].1 <= w[0].1)
    }
}

pub fn tail_scan(
    traj: &Trajectory,
    obs: &ObservableSpec,
    thresholds: &[f64],
    burn_in: f64,
    level: f64,
) -> Result<TailScan> {
    if let Some(m) = thresholds.iter().find(|m| !(**m > 0.0)) {
        return Err(Error::Domain(format!("threshold must be > 0, got {m}")));
    }
    let xs = retained_samples(traj, obs, burn_in)?;
    let mut sorted = thresholds.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rows: Vec<(f64, f64)> = sorted
        .iter()
        .map(|m| (*m, fraction_at_least(&xs, *m)))
        .collect();
    let m_star = rows.iter().find(|(_, f)| *f < level).map(|(m, _)| *m);
    Ok(TailScan {
        rows,
        m_star,
        level,
    })
}

/// Bounded function `f(X)` built from an observable.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TestFunction {
    /// `1{lo ≤ obs < hi}`.
    Indicator {
        obs: ObservableSpec,
        lo: f64,
        hi: f64,
    },
    /// `obs` clamped into `[lo, hi]`.
    Clamped {
        obs: ObservableSpec,
        lo: f64,
        hi: f64,
    },
}

impl TestFunction {
    pub fn observable(&self) -> ObservableSpec {
        match self {
            TestFunction::Indicator { obs, .. } | TestFunction::Clamped { obs, .. } => *obs,
        }
    }

    pub fn apply(&self, x: f64) -> f64 {
        match self {
            TestFunction::Indicator { lo, hi, .. } => {
                if x >= *lo && x < *hi {
                    1.0
                } else {
                    0.0
                }
            }
            TestFunction::Clamped { lo, hi, .. } => x.clamp(*lo, *hi),
        }
    }

    pub fn eval(&self, s: &State) -> Result<f64> {
        Ok(self.apply(observe(self.observable(), s)?))
    }
}

/// States of one path at each time in `times` (sorted, ≥ 0).
pub fn path_states_at(
    p: &ModelParams,
    z: &State,
    times: &[f64],
    seed: RngSeed,
) -> Result<Vec<State>> {
    let mut steps = Vec::with_capacity(times.len());
    for t in times {
        steps.push(crate::dynamics::step_count(*t, p.dt)?);
    }
    if !steps.windows(2).all(|w| w[0] <= w[1]) {
        return Err(Error::Domain("times must be nondecreasing".into()));
    }
    let mut stepper = Stepper::new(p)?;
    let mut stream = NoiseStream::new(seed, p.modes);
    let mut inc = NoiseIncrement::zero(p.modes, p.dt);
    let mut state = z.clone();
    let mut done = 0usize;
    let mut out = Vec::with_capacity(times.len());
    for target in steps {
        while done < target {
            stream.fill(&mut inc, p.dt)?;
            state = stepper.step(&state, &inc)?;
            done += 1;
        }
        out.push(state.clone());
    }
    Ok(out)
}

fn check_paths(n_paths: usize) -> Result<()> {
    if n_paths < 2 {
        return Err(Error::InsufficientPaths {
            needed: 2,
            got: n_paths,
        });
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransitionEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub used: usize,
    /// Paths that blew up and were left out of the estimate.
    pub excluded: usize,
}

/// `E f(X^z(t))` over `n_paths` paths with streams `(seed, 0..n_paths)`.
pub fn transition_expectation(
    p: &ModelParams,
    z: &State,
    f: &TestFunction,
    t: f64,
    n_paths: usize,
    seed: u64,
) -> Result<TransitionEstimate> {
    check_paths(n_paths)?;
    let results = map_paths(n_paths, |i| {
        path_states_at(p, z, &[t], RngSeed::new(seed, i as u64))
    });
    let mut values = Vec::with_capacity(n_paths);
    let mut excluded = 0;
    for r in results {
        match r {
            Ok(states) => values.push(f.eval(&states[0])?),
            Err(Error::BlowUp { .. }) => excluded += 1,
            Err(e) => return Err(e),
        }
    }
    if values.len() < 2 {
        return Err(Error::InsufficientPaths {
            needed: 2,
            got: values.len(),
        });
    }
    let s = Summary::of(&values);
    Ok(TransitionEstimate {
        mean: s.mean,
        stderr: s.stderr,
        used: values.len(),
        excluded,
    })
}

/// How the two ensembles in [`ergodic_convergence`] draw their noise.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coupling {
    /// Path `i` of both ensembles uses stream `i`.
    #[default]
    Common,
    /// The second ensemble uses streams `n_paths..2 n_paths`.
    Independent,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceRow {
    pub t: f64,
    pub tv: f64,
    pub law1: EmpiricalMeasure,
    pub law2: EmpiricalMeasure,
    pub excluded1: usize,
    pub excluded2: usize,
}

/// Binned laws of `obs(X^{z1}(t))` and `obs(X^{z2}(t))` and their distance
/// for each `t`, with edges frozen from the pooled samples at that time.
#[allow(clippy::too_many_arguments)]
pub fn ergodic_convergence(
    p: &ModelParams,
    z1: &State,
    z2: &State,
    t_grid: &[f64],
    obs: &ObservableSpec,
    bins: usize,
    n_paths: usize,
    seed: u64,
    coupling: Coupling,
) -> Result<Vec<ConvergenceRow>> {
    check_paths(n_paths)?;
    let mut order: Vec<usize> = (0..t_grid.len()).collect();
    order.sort_by(|a, b| t_grid[*a].total_cmp(&t_grid[*b]));
    let sorted: Vec<f64> = order.iter().map(|i| t_grid[*i]).collect();
    let offset = match coupling {
        Coupling::Common => 0,
        Coupling::Independent => n_paths as u64,
    };
    let eval = Observers::new(vec![*obs], p.modes)?;
    let run = |z: &State, base: u64| -> Result<(Vec<Vec<f64>>, usize)> {
        let results = map_paths(n_paths, |i| {
            path_states_at(p, z, &sorted, RngSeed::new(seed, base + i as u64))
        });
        let mut per_t = vec![Vec::with_capacity(n_paths); sorted.len()];
        let mut excluded = 0;
        for r in results {
            match r {
                Ok(states) => {
                    for (col, s) in per_t.iter_mut().zip(&states) {
                        col.push(eval.eval_one(obs, s));
                    }
                }
                Err(Error::BlowUp { .. }) => excluded += 1,
                Err(e) => return Err(e),
            }
        }
        Ok((per_t, excluded))
    };
    let (a, ex1) = run(z1, 0)?;
    let (b, ex2) = run(z2, offset)?;
    let mut rows = Vec::with_capacity(sorted.len());
    for (j, t) in sorted.iter().enumerate() {
        let edges = BinEdges::from_samples(a[j].iter().chain(&b[j]), bins)?;
        let law1 = EmpiricalMeasure::from_samples(&edges, &a[j])?;
        let law2 = EmpiricalMeasure::from_samples(&edges, &b[j])?;
        rows.push(ConvergenceRow {
            t: *t,
            tv: tv_distance(&law1, &law2)?,
            law1,
            law2,
            excluded1: ex1,
            excluded2: ex2,
        });
    }
    Ok(rows)
}

/// Distribution of the TV distance between two size-`n` resamples of `pooled`
/// binned on `bins` bins: returns the mean and the 95% quantile.
pub fn bootstrap_noise_floor(
    pooled: &[f64],
    n: usize,
    bins: usize,
    resamples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if pooled.is_empty() || n == 0 || resamples == 0 {
        return Err(Error::EmptyWindow("bootstrap needs samples".into()));
    }
    let edges = BinEdges::from_samples(pooled, bins)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draws = Vec::with_capacity(resamples);
    let mut a = vec![0.0; n];
    let mut b = vec![0.0; n];
    for _ in 0..resamples {
        for x in a.iter_mut().chain(b.iter_mut()) {
            *x = pooled[rng.random_range(0..pooled.len())];
        }
        let m1 = EmpiricalMeasure::from_samples(&edges, &a)?;
        let m2 = EmpiricalMeasure::from_samples(&edges, &b)?;
        draws.push(tv_distance(&m1, &m2)?);
    }
    draws.sort_by(f64::total_cmp);
    let mean = draws.iter().sum::<f64>() / resamples as f64;
    let q = draws[((0.95 * resamples as f64).ceil() as usize).clamp(1, resamples) - 1];
    Ok((mean, q))
}

/// `(sup |U|, sup ‖v‖)` over the stored times.
pub fn path_sup_norm(traj: &Trajectory, p_exp: f64) -> Result<(f64, f64)> {
    if !(p_exp >= 1.0) {
        return Err(Error::Domain(format!("p must be >= 1, got {p_exp}")));
    }
    let u = traj.observable_series(&ObservableSpec::U)?;
    let v = traj.observable_series(&ObservableSpec::L2NormV)?;
    Ok((
        u.iter().fold(0.0, |m, x| m.max(x.abs())),
        v.iter().fold(0.0, |m, x| m.max(*x)),
    ))
}
