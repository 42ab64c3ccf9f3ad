//! Command-line runner for the experiment catalog.
//!
//! Exit codes: 0 all checks pass, 1 a check failed, 2 usage or config
//! error, 3 I/O error.

use std::path::PathBuf;
use std::process::ExitCode;

use arratia::config::{parse_config, ExperimentConfig};
use arratia::error::Error;
use arratia::experiments::run_experiment;
use arratia::report::{emit_report, Report, ReportFormat};

const USAGE: &str = "\
arratia - coalescing Brownian flow experiments

USAGE:
  arratia --config PATH [--seed INT] [--out DIR] [--workers INT] [--format json|csv]

FLAGS:
  --config PATH    experiment config file (key = value lines, # comments)
  --seed INT       seed override; falls back to the config `seed` key,
                   then to the ARRATIA_SEED environment variable
  --out DIR        output directory for report and plot-data files
                   (overrides the config `out` key)
  --workers INT    worker thread cap (0 or absent: all cores); reports
                   do not depend on it
  --format FMT     report body format: json (default) or csv
  --help           show this help

EXPERIMENTS (config key `experiment`):
  zero-mean | isometry | refinement-monotone | meeting-time |
  small-u-slope | rate-fit | angle-exit | martingale-orthogonality |
  clark-verify | energy-identity | lemma31 | series-truncation

CONFIG KEYS:
  experiment, seed, n_paths (required); n_steps (default 10000),
  u_max (default 1.0), partition = p0,p1,... or dyadic_depth = D
  (default dyadic_depth = 6), integrand = one|cos|tanh|table:x:y,...
  (default one), bridge_correction = true|false (default true),
  out = DIR, dump_trajectory = FILE.csv, and per-experiment knobs:
  u_values, u_grid, r_grid, levels, u_split, family, truncations.
";

struct Args {
    config: PathBuf,
    seed: Option<u64>,
    out: Option<PathBuf>,
    workers: usize,
    format: ReportFormat,
}

fn parse_args() -> Result<Args, String> {
    let mut config = None;
    let mut seed = None;
    let mut out = None;
    let mut workers = 0usize;
    let mut format = ReportFormat::Json;
    let mut it = std::env::args().skip(1);
    while let Some(arg) = it.next() {
        match arg.as_str() {
            "--help" | "-h" => {
                println!("{USAGE}");
                std::process::exit(0);
            }
            "--config" => {
                let v = it.next().ok_or("missing value for --config")?;
                config = Some(PathBuf::from(v));
            }
            "--seed" => {
                let v = it.next().ok_or("missing value for --seed")?;
                seed = Some(v.parse::<u64>().map_err(|_| format!("invalid --seed `{v}`"))?);
            }
            "--out" => {
                let v = it.next().ok_or("missing value for --out")?;
                out = Some(PathBuf::from(v));
            }
            "--workers" => {
                let v = it.next().ok_or("missing value for --workers")?;
                workers = v
                    .parse::<usize>()
                    .map_err(|_| format!("invalid --workers `{v}`"))?;
            }
            "--format" => {
                let v = it.next().ok_or("missing value for --format")?;
                format = ReportFormat::parse(&v)
                    .ok_or_else(|| format!("invalid --format `{v}` (expected json|csv)"))?;
            }
            other => return Err(format!("unknown flag `{other}`")),
        }
    }
    Ok(Args {
        config: config.ok_or("missing required --config PATH")?,
        seed,
        out,
        workers,
        format,
    })
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Io(_) => 3,
        _ => 2,
    }
}

fn resolve_seed(config: &mut ExperimentConfig, cli_seed: Option<u64>) -> Result<(), String> {
    if let Some(seed) = cli_seed {
        config.seed = Some(seed);
        return Ok(());
    }
    if config.seed.is_some() {
        return Ok(());
    }
    match std::env::var("ARRATIA_SEED") {
        Ok(v) => {
            let seed = v
                .parse::<u64>()
                .map_err(|_| format!("invalid ARRATIA_SEED `{v}`"))?;
            config.seed = Some(seed);
            Ok(())
        }
        Err(_) => {
            Err("no seed: set `seed` in the config, pass --seed, or export ARRATIA_SEED".into())
        }
    }
}

fn print_summary(report: &Report) {
    for check in &report.checks {
        println!(
            "check {}: {} (value={}, threshold={})",
            check.name,
            if check.pass { "PASS" } else { "FAIL" },
            check.value,
            check.threshold
        );
    }
    for note in &report.notes {
        println!("note: {note}");
    }
    println!(
        "experiment {}: {} ({} ms)",
        report.experiment,
        if report.all_pass() { "PASS" } else { "FAIL" },
        report.wall_clock_ms
    );
}

fn main() -> ExitCode {
    let args = match parse_args() {
        Ok(a) => a,
        Err(msg) => {
            eprintln!("error: {msg}\n\n{USAGE}");
            return ExitCode::from(2);
        }
    };

    let text = match std::fs::read_to_string(&args.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", args.config.display());
            return ExitCode::from(3);
        }
    };

    let mut config = match parse_config(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if let Err(msg) = resolve_seed(&mut config, args.seed) {
        eprintln!("error: {msg}");
        return ExitCode::from(2);
    }
    if let Some(out) = args.out {
        config.out_dir = Some(out);
    }

    let report = match run_experiment(&config, args.workers) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(exit_code_for(&e));
        }
    };

    if let Some(dir) = &config.out_dir {
        if let Err(e) = emit_report(&report, dir, args.format) {
            eprintln!("error: cannot write report: {e}");
            return ExitCode::from(3);
        }
    }

    print_summary(&report);
    if report.all_pass() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}
