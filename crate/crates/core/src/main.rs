use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use sburgers::cli::{run_and_report, Command};
use sburgers::config::load_config;
use sburgers::io::{exit_code, ErrorReport};

/// Stochastic Burgers simulator and verification lab.
#[derive(Parser, Debug)]
#[command(version, about)]
struct Args {
    #[arg(value_enum)]
    command: Command,
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the config's `out_dir`).
    #[arg(long, env = "SBURGERS_OUT_DIR")]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    paths: Option<usize>,
    /// Worker threads for ensembles (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    if let Some(n) = args.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("warning: could not size thread pool: {e}");
        }
    }
    let fallback_out = args.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    let mut cfg = match load_config(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            if let Err(w) = ErrorReport::from_error(&e).write(&fallback_out) {
                eprintln!("could not write error report: {w}");
            }
            return ExitCode::from(exit_code(&e) as u8);
        }
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(p) = args.paths {
        cfg.paths = Some(p);
    }
    let out = args
        .out
        .or_else(|| cfg.out_dir.as_ref().map(PathBuf::from))
        .unwrap_or(fallback_out);
    let (code, lines) = run_and_report(args.command, &cfg, &out);
    for l in lines {
        if code == 0 || code == sburgers::io::EXIT_INVARIANT_FAILURE {
            println!("{l}");
        } else {
            eprintln!("{l}");
        }
    }
    ExitCode::from(code as u8)
}
