//! Subcommand orchestration: runs an experiment from a [`RunConfig`] and
//! writes its outputs, manifest, or error report into one directory.

use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use crate::config::RunConfig;
use crate::decomposition::moment_scan;
use crate::dynamics::{simulate_with, SimulateOptions};
use crate::ergodicity::{
    ergodic_convergence, occupation_measure, retained_samples, tail_scan, tv_distance, BinEdges,
    Coupling, ObservableSpec,
};
use crate::error::{Error, Result};
use crate::io::{
    exit_code, ErrorReport, OutputDir, OutputRecord, PathSeed, RunManifest, EXIT_INVARIANT_FAILURE,
};
use crate::noise::{write_increments, NoiseStream, RngSeed};
use crate::stats::map_paths;
use crate::verify::{smoothing_report, run_all};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Simulate,
    Invariant,
    Verify,
    LemmaScan,
    Converge,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Invariant => "invariant",
            Command::Verify => "verify",
            Command::LemmaScan => "lemma-scan",
            Command::Converge => "converge",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub exit_code: i32,
    pub outputs: Vec<OutputRecord>,
    /// One line per check or headline number, for the terminal.
    pub summary: Vec<String>,
}

struct Run {
    out: OutputDir,
    seeds: Vec<PathSeed>,
    summary: Vec<String>,
    failed: bool,
}

fn seeds(seed: u64, streams: std::ops::Range<u64>) -> Vec<PathSeed> {
    streams
        .map(|s| PathSeed {
            path: s as usize,
            seed,
            stream_id: s,
        })
        .collect()
}

/// Runs `cmd` and writes outputs plus `manifest.json` into `out_dir`.
pub fn run_subcommand(cmd: Command, cfg: &RunConfig, out_dir: &Path) -> Result<Outcome> {
    cfg.validate()?;
    let start = Instant::now();
    let mut run = Run {
        out: OutputDir::create(out_dir)?,
        seeds: Vec::new(),
        summary: Vec::new(),
        failed: false,
    };
    match cmd {
        Command::Simulate => simulate_cmd(cfg, &mut run)?,
        Command::Invariant => invariant_cmd(cfg, &mut run)?,
        Command::Verify => verify_cmd(cfg, &mut run)?,
        Command::LemmaScan => lemma_scan_cmd(cfg, &mut run)?,
        Command::Converge => converge_cmd(cfg, &mut run)?,
    }
    let manifest = RunManifest {
        command: cmd.name().into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config: cfg.clone(),
        seeds: run.seeds,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        outputs: run.out.outputs().to_vec(),
    };
    manifest.write(run.out.root())?;
    Ok(Outcome {
        exit_code: if run.failed {
            EXIT_INVARIANT_FAILURE
        } else {
            0
        },
        outputs: manifest.outputs,
        summary: run.summary,
    })
}

/// [`run_subcommand`], turning an error into `error.json` and an exit code.
pub fn run_and_report(cmd: Command, cfg: &RunConfig, out_dir: &Path) -> (i32, Vec<String>) {
    match run_subcommand(cmd, cfg, out_dir) {
        Ok(o) => (o.exit_code, o.summary),
        Err(e) => {
            let report = ErrorReport::from_error(&e);
            let note = match report.write(out_dir) {
                Ok(()) => format!(
                    "error: {e} (report in {})",
                    out_dir.join("error.json").display()
                ),
                Err(w) => format!("error: {e} (could not write report: {w})"),
            };
            (exit_code(&e), vec![note])
        }
    }
}

fn trajectory_observers(cfg: &RunConfig) -> Vec<ObservableSpec> {
    let mut obs = vec![
        ObservableSpec::U,
        ObservableSpec::L2NormV,
        ObservableSpec::H14NormV,
    ];
    obs.extend((1..=cfg.csv_modes).map(ObservableSpec::Mode));
    for o in &cfg.observables {
        if !obs.contains(o) {
            obs.push(*o);
        }
    }
    obs
}

fn simulate_cmd(cfg: &RunConfig, run: &mut Run) -> Result<()> {
    let p = &cfg.model;
    let n_paths = cfg.single_paths();
    let init = cfg.init_state()?;
    let observers = trajectory_observers(cfg);
    let opts = SimulateOptions {
        record_every: cfg.record_every,
        keep_states: false,
    };
    let trajs = map_paths(n_paths, |i| {
        simulate_with(
            p,
            &init,
            cfg.horizon,
            RngSeed::new(cfg.seed, i as u64),
            &observers,
            opts,
        )
    });
    let mut header = vec!["t".to_string()];
    header.extend(observers.iter().map(|o| o.name()));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    for (i, traj) in trajs.into_iter().enumerate() {
        let traj = traj?;
        let name = if n_paths == 1 {
            "trajectory.csv".to_string()
        } else {
            format!("trajectory_{i:04}.csv")
        };
        let rows = (0..traj.len()).map(|r| {
            let mut row = vec![traj.times[r]];
            row.extend(traj.records.iter().map(|c| c[r]));
            row
        });
        run.out.write_csv(&name, &header, rows)?;
        run.summary.push(format!(
            "{name}: {} rows, final U = {:.6}",
            traj.len(),
            traj.records[0][traj.len() - 1]
        ));
        if cfg.dump_increments {
            let steps = crate::dynamics::step_count(cfg.horizon, p.dt)?;
            let mut stream = NoiseStream::new(RngSeed::new(cfg.seed, i as u64), p.modes);
            let incs = (0..steps)
                .map(|_| stream.next_increment(p.dt))
                .collect::<Result<Vec<_>>>()?;
            let mut bytes = Vec::new();
            write_increments(&mut bytes, &incs)?;
            let bin = if n_paths == 1 {
                "increments.bin".to_string()
            } else {
                format!("increments_{i:04}.bin")
            };
            run.out.write(&bin, &bytes)?;
        }
    }
    run.seeds = seeds(cfg.seed, 0..n_paths as u64);
    Ok(())
}

#[derive(Serialize)]
struct InvariantSummary {
    burn_in: f64,
    samples: usize,
    tail_observable: String,
    tail_level: f64,
    m_star: Option<f64>,
    tail_nonincreasing: bool,
    /// TV distance between occupation measures started from `init` and `init_alt` (common noise).
    uniqueness_tv: Vec<(String, f64)>,
}

fn invariant_cmd(cfg: &RunConfig, run: &mut Run) -> Result<()> {
    let p = &cfg.model;
    if !(cfg.horizon > cfg.burn_in) {
        return Err(Error::config(
            "burn_in",
            format!("must be below T = {}", cfg.horizon),
        ));
    }
    let mut observers = cfg.observables.clone();
    for o in [ObservableSpec::U, ObservableSpec::HNorm] {
        if !observers.contains(&o) {
            observers.push(o);
        }
    }
    let opts = SimulateOptions {
        record_every: cfg.record_every,
        keep_states: false,
    };
    let seed = RngSeed::new(cfg.seed, 0);
    let starts = [cfg.init_state()?, cfg.init_alt_state()?];
    let mut trajs = map_paths(2, |i| {
        simulate_with(p, &starts[i], cfg.horizon, seed, &observers, opts)
    })
    .into_iter();
    let main = trajs.next().expect("two runs")?;
    let alt = trajs.next().expect("two runs")?;

    let mut uniqueness = Vec::new();
    for obs in &observers {
        let xs = retained_samples(&main, obs, cfg.burn_in)?;
        let ys = retained_samples(&alt, obs, cfg.burn_in)?;
        let edges = BinEdges::from_samples(xs.iter().chain(&ys), cfg.bins)?;
        let m = occupation_measure(&main, obs, &edges, cfg.burn_in)?;
        let m_alt = occupation_measure(&alt, obs, &edges, cfg.burn_in)?;
        uniqueness.push((obs.name(), tv_distance(&m, &m_alt)?));
        run.out.write_csv(
            &format!("hist_{}.csv", obs.name()),
            &["edge_lo", "edge_hi", "mass"],
            m.rows().into_iter().map(|(a, b, c)| vec![a, b, c]),
        )?;
    }
    let scan = tail_scan(
        &main,
        &ObservableSpec::HNorm,
        &cfg.tail_thresholds,
        cfg.burn_in,
        cfg.tail_level,
    )?;
    run.out.write_csv(
        "tail.csv",
        &["M", "tail_fraction"],
        scan.rows.iter().map(|(m, f)| vec![*m, *f]),
    )?;
    let summary = InvariantSummary {
        burn_in: cfg.burn_in,
        samples: retained_samples(&main, &ObservableSpec::U, cfg.burn_in)?.len(),
        tail_observable: ObservableSpec::HNorm.name(),
        tail_level: cfg.tail_level,
        m_star: scan.m_star,
        tail_nonincreasing: scan.is_nonincreasing(),
        uniqueness_tv: uniqueness.clone(),
    };
    run.out.write_json("invariant.json", &summary)?;
    run.summary.push(format!(
        "M* = {} (tail level {})",
        scan.m_star.map_or("none".into(), |m| m.to_string()),
        cfg.tail_level
    ));
    for (name, tv) in uniqueness {
        run.summary
            .push(format!("occupation TV({name}) between starts = {tv:.4}"));
    }
    run.seeds = seeds(cfg.seed, 0..1);
    Ok(())
}

fn verify_cmd(cfg: &RunConfig, run: &mut Run) -> Result<()> {
    let checks = run_all(cfg)?;
    for c in &checks {
        run.summary.push(format!(
            "{} {:<45} measured {:.3e} (tolerance {:.3e})",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.measured,
            c.tolerance
        ));
    }
    run.failed = checks.iter().any(|c| !c.passed);
    run.out.write_json("verify.json", &checks)?;
    run.seeds = seeds(cfg.seed, 0..1);
    Ok(())
}

fn lemma_scan_cmd(cfg: &RunConfig, run: &mut Run) -> Result<()> {
    let p = &cfg.model;
    let n = cfg.ensemble_paths();
    let rows = moment_scan(
        p,
        &cfg.init_state()?,
        &cfg.l_values,
        cfg.moment_order,
        cfg.horizon,
        n,
        cfg.seed,
        cfg.record_every.max(10),
    )?;
    run.out.write_csv(
        "moments.csv",
        &["L", "estimate", "stderr", "t_max"],
        rows.iter()
            .map(|r| vec![r.l, r.estimate, r.stderr, r.t_max]),
    )?;
    for r in &rows {
        run.summary.push(format!(
            "L = {:>6}: {:.6e} ± {:.1e}",
            r.l, r.estimate, r.stderr
        ));
    }
    let report = smoothing_report(
        &p.basis()?,
        &p.spectrum()?,
        &cfg.smoothing_times,
        cfg.smoothing_fields,
        cfg.seed,
    )?;
    run.out.write_csv(
        "smoothing.csv",
        &[
            "t",
            "series_bound",
            "constant_bound",
            "max_ratio",
            "violations",
        ],
        report.rows.iter().map(|r| {
            vec![
                r.t,
                r.series_bound,
                r.constant_bound,
                r.max_ratio,
                r.violations as f64,
            ]
        }),
    )?;
    run.out.write_json("smoothing.json", &report)?;
    run.summary.push(format!(
        "derivative bound: C = {:.6}, {} violations",
        report.c,
        report.violations()
    ));
    run.seeds = seeds(cfg.seed, 0..n as u64);
    Ok(())
}

fn converge_cmd(cfg: &RunConfig, run: &mut Run) -> Result<()> {
    let n = cfg.ensemble_paths();
    let obs = cfg
        .observables
        .first()
        .copied()
        .unwrap_or(ObservableSpec::U);
    let rows = ergodic_convergence(
        &cfg.model,
        &cfg.init_state()?,
        &cfg.init_alt_state()?,
        &cfg.t_grid,
        &obs,
        cfg.bins,
        n,
        cfg.seed,
        cfg.coupling,
    )?;
    run.out.write_csv(
        "tv.csv",
        &["t", "tv_distance", "excluded_1", "excluded_2"],
        rows.iter()
            .map(|r| vec![r.t, r.tv, r.excluded1 as f64, r.excluded2 as f64]),
    )?;
    for r in &rows {
        run.summary
            .push(format!("t = {:>8}: TV({}) = {:.4}", r.t, obs.name(), r.tv));
    }
    let streams = match cfg.coupling {
        Coupling::Common => 0..n as u64,
        Coupling::Independent => 0..2 * n as u64,
    };
    run.seeds = seeds(cfg.seed, streams);
    Ok(())
}
