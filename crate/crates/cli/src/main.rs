//! Command-line runner for the frame-bundle identity check suites.
//!
//! Exit codes: 0 all non-control checks pass, 1 a check failed or a suite
//! broke at runtime, 2 configuration errors (bad flags, bad config file,
//! unknown manifold or suite).

use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pestov_lab::{ManifoldModel, SuiteKind, SuiteOptions, Verdict};

#[derive(Parser)]
#[command(name = "pestov-lab", version, about = "Numerical checks of frame-bundle identities")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run check suites and print one line per recorded check.
    Check(CheckArgs),
}

#[derive(Args)]
struct CheckArgs {
    /// Suites to run: pointwise, integrated, grassmannian, all.
    #[arg(value_name = "SUITE")]
    suites: Vec<String>,
    /// Suite selection as a flag; combines with positional selections.
    #[arg(long = "suite", value_name = "SUITE")]
    suite_flags: Vec<String>,
    /// Restrict batteries to one model, e.g. torus:3 or sphere:2.
    #[arg(long)]
    manifold: Option<String>,
    /// Restrict batteries to one tuple size.
    #[arg(long)]
    k: Option<usize>,
    /// Restrict integrated energy checks to one first slot index.
    #[arg(long)]
    i: Option<usize>,
    /// Restrict integrated energy checks to one second slot index.
    #[arg(long)]
    j: Option<usize>,
    /// Outer finite-difference step.
    #[arg(long = "fd-step")]
    fd_step: Option<f64>,
    /// Geodesic integrator step.
    #[arg(long = "ode-step")]
    ode_step: Option<f64>,
    /// Monte Carlo samples per integrated check.
    #[arg(long)]
    samples: Option<u64>,
    /// Seed for every random draw in the run.
    #[arg(long)]
    seed: Option<u64>,
    /// Relative tolerance for pointwise residuals.
    #[arg(long)]
    tolerance: Option<f64>,
    /// Write the JSON report to this path.
    #[arg(long, value_name = "PATH")]
    report: Option<PathBuf>,
    /// Flat key=value defaults (same names as the flags); flags win.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Check(args) => match run_check(args) {
            Ok(code) => code,
            Err(msg) => {
                eprintln!("error: {msg}");
                ExitCode::from(2)
            }
        },
    }
}

/// Config-file values for everything a flag can set; flags override fields
/// one by one.
#[derive(Default)]
struct FileConfig {
    suites: Vec<String>,
    manifold: Option<String>,
    k: Option<usize>,
    i: Option<usize>,
    j: Option<usize>,
    fd_step: Option<f64>,
    ode_step: Option<f64>,
    samples: Option<u64>,
    seed: Option<u64>,
    tolerance: Option<f64>,
    report: Option<PathBuf>,
}

fn parse_config(path: &PathBuf) -> Result<FileConfig, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
    let mut out = FileConfig::default();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("{}:{}: expected key=value", path.display(), lineno + 1))?;
        let (key, value) = (key.trim().replace('-', "_"), value.trim());
        let bad = |e: &dyn std::fmt::Display| {
            format!("{}:{}: bad value for {key}: {e}", path.display(), lineno + 1)
        };
        match key.as_str() {
            "suite" | "suites" => out
                .suites
                .extend(value.split(',').map(|s| s.trim().to_string())),
            "manifold" => out.manifold = Some(value.to_string()),
            "k" => out.k = Some(value.parse().map_err(|e| bad(&e))?),
            "i" => out.i = Some(value.parse().map_err(|e| bad(&e))?),
            "j" => out.j = Some(value.parse().map_err(|e| bad(&e))?),
            "fd_step" => out.fd_step = Some(value.parse().map_err(|e| bad(&e))?),
            "ode_step" => out.ode_step = Some(value.parse().map_err(|e| bad(&e))?),
            "samples" => out.samples = Some(value.parse().map_err(|e| bad(&e))?),
            "seed" => out.seed = Some(value.parse().map_err(|e| bad(&e))?),
            "tolerance" => out.tolerance = Some(value.parse().map_err(|e| bad(&e))?),
            "report" => out.report = Some(PathBuf::from(value)),
            other => {
                return Err(format!(
                    "{}:{}: unknown config key {other}",
                    path.display(),
                    lineno + 1
                ))
            }
        }
    }
    Ok(out)
}

fn parse_suites(names: &[String]) -> Result<Vec<SuiteKind>, String> {
    let mut out = Vec::new();
    let mut push = |kind: SuiteKind| {
        if !out.contains(&kind) {
            out.push(kind);
        }
    };
    for name in names {
        match name.as_str() {
            "pointwise" => push(SuiteKind::Pointwise),
            "integrated" => push(SuiteKind::Integrated),
            "grassmannian" => push(SuiteKind::Grassmannian),
            "all" => SuiteKind::ALL.iter().copied().for_each(&mut push),
            other => {
                return Err(format!(
                    "unknown suite {other}; expected pointwise, integrated, grassmannian, or all"
                ))
            }
        }
    }
    if out.is_empty() {
        return Err("no suites selected; pass at least one of pointwise, integrated, grassmannian, all".into());
    }
    Ok(out)
}

fn configure_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var("PESTOV_LAB_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .parse()
        .map_err(|e| format!("PESTOV_LAB_THREADS={raw}: {e}"))?;
    if n == 0 {
        return Err("PESTOV_LAB_THREADS must be at least 1".into());
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| format!("thread pool: {e}"))
}

fn run_check(args: CheckArgs) -> Result<ExitCode, String> {
    configure_threads()?;
    let file = match &args.config {
        Some(path) => parse_config(path)?,
        None => FileConfig::default(),
    };

    let mut suite_names: Vec<String> = args.suites.clone();
    suite_names.extend(args.suite_flags.clone());
    if suite_names.is_empty() {
        suite_names = file.suites.clone();
    }
    let suites = parse_suites(&suite_names)?;

    let mut opts = SuiteOptions::new(args.seed.or(file.seed).unwrap_or(0));
    if let Some(v) = args.fd_step.or(file.fd_step) {
        opts.fd_step = v;
    }
    if let Some(v) = args.ode_step.or(file.ode_step) {
        opts.params.ode_step = v;
    }
    if let Some(v) = args.samples.or(file.samples) {
        opts.samples = v;
    }
    if let Some(v) = args.tolerance.or(file.tolerance) {
        opts.tolerance = v;
    }
    opts.manifold = args.manifold.or(file.manifold);
    opts.k = args.k.or(file.k);
    opts.slot_i = args.i.or(file.i);
    opts.slot_j = args.j.or(file.j);
    if let Some(name) = &opts.manifold {
        ManifoldModel::from_name(name, opts.params.clone())
            .map_err(|e| format!("unknown manifold {name}: {e}"))?;
    }

    let report = match pestov_lab::run_suites(&opts, &suites) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("suite error: {e}");
            return Ok(ExitCode::from(1));
        }
    };

    for r in &report.records {
        let mut line = format!(
            "{:11} {:12} {:14} {:10} k={}",
            verdict_str(r.verdict),
            r.suite,
            r.identity_id,
            r.manifold,
            r.k
        );
        if !r.indices.is_empty() {
            let _ = write!(line, " idx={:?}", r.indices);
        }
        let _ = write!(line, " res={:+.3e}", r.residual);
        if let Some(s) = r.stderr {
            let _ = write!(line, " stderr={:.3e}", s);
        }
        if r.negative_control {
            let _ = write!(line, " [control]");
        }
        if let Some(note) = &r.note {
            let _ = write!(line, "  {note}");
        }
        println!("{line}");
    }
    let (pass, fail, skip, floor) = report.tally();
    println!("summary: {pass} passed, {fail} failed, {skip} skipped, {floor} at noise floor");

    if let Some(path) = args.report.as_ref().or(file.report.as_ref()) {
        std::fs::write(path, report.to_json())
            .map_err(|e| format!("cannot write report {}: {e}", path.display()))?;
        println!("report written to {}", path.display());
    }

    Ok(if report.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn verdict_str(v: Verdict) -> &'static str {
    match v {
        Verdict::Pass => "PASS",
        Verdict::Fail => "FAIL",
        Verdict::Skip => "SKIP",
        Verdict::NoiseFloor => "NOISE_FLOOR",
    }
}
