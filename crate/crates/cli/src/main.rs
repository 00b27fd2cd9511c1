//! `wfr-shapes`: command-line access to length measures, WFR and SRVT
//! distances, and ball maximization.
//!
//! Exit codes: 0 on success, 2 when the input is rejected (with an error
//! JSON), 1 when a solver fails internally.

mod commands;
mod input;
mod output;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

pub const THREADS_VAR: &str = "WFR_SHAPES_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Parser)]
#[command(name = "wfr-shapes", version, about = "Elastic distances of convex loops through unbalanced transport on the circle")]
struct Cli {
    /// Solver tolerance.
    #[arg(long, global = true, default_value_t = 1e-9)]
    tol: f64,
    /// Angular grid resolution.
    #[arg(long, global = true, default_value_t = 256)]
    grid: usize,
    /// Samples per curve built from a polygon.
    #[arg(long, global = true, default_value_t = 4096)]
    samples: usize,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output file; standard output when absent.
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Length measure of a polygon or sampled convex curve.
    LmExtract { input: PathBuf },
    /// Convex polygon with a given closed length measure.
    LmReconstruct { input: PathBuf },
    /// WFR distance between two measures or grid densities.
    WfrDist { a: PathBuf, b: PathBuf },
    /// SRVT distance between two convex polygons or curves.
    SrvtDist { a: PathBuf, b: PathBuf },
    /// Maximize a grid objective over the WFR ball around a measure.
    BallMaximize {
        mu1: PathBuf,
        /// Objective values at the angles 2πg/G, as a grid file.
        objective: PathBuf,
        #[arg(long)]
        lambda: f64,
        /// Require a vanishing first moment.
        #[arg(long)]
        moment: bool,
    },
    /// Homogenized energy of a measure relative to a reference.
    HomogEval { mu: PathBuf, nu: PathBuf },
    /// Compare optimal shift plans with the Kantorovich LP on random densities.
    VerifyShift {
        #[arg(long, default_value_t = 100)]
        pairs: usize,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::LmExtract { .. } => "lm-extract",
            Command::LmReconstruct { .. } => "lm-reconstruct",
            Command::WfrDist { .. } => "wfr-dist",
            Command::SrvtDist { .. } => "srvt-dist",
            Command::BallMaximize { .. } => "ball-maximize",
            Command::HomogEval { .. } => "homog-eval",
            Command::VerifyShift { .. } => "verify-shift",
        }
    }

    fn inputs(&self) -> Vec<&Path> {
        match self {
            Command::LmExtract { input } | Command::LmReconstruct { input } => vec![input],
            Command::WfrDist { a, b } | Command::SrvtDist { a, b } => vec![a, b],
            Command::BallMaximize { mu1, objective, .. } => vec![mu1, objective],
            Command::HomogEval { mu, nu } => vec![mu, nu],
            Command::VerifyShift { .. } => vec![],
        }
    }
}

/// Everything that determines the output, echoed into it.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub command: &'static str,
    pub inputs: Vec<String>,
    pub tol: f64,
    pub grid: usize,
    pub samples: usize,
    pub seed: u64,
    pub output: Option<String>,
    pub format: Format,
    pub threads: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub moment: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pairs: Option<usize>,
}

#[derive(Debug)]
pub struct CliError {
    code: u8,
    body: Value,
}

impl CliError {
    pub fn input(message: String) -> Self {
        CliError { code: 2, body: json!({ "kind": "input", "message": message }) }
    }

    pub fn parse(path: &Path, e: &serde_json::Error) -> Self {
        CliError {
            code: 2,
            body: json!({
                "kind": "malformed_json",
                "message": e.to_string(),
                "file": path.display().to_string(),
                "line": e.line(),
                "column": e.column(),
            }),
        }
    }

    fn usage(message: String) -> Self {
        CliError { code: 2, body: json!({ "kind": "usage", "message": message }) }
    }

    fn internal(message: String) -> Self {
        CliError { code: 1, body: json!({ "kind": "internal", "message": message }) }
    }
}

impl From<wfr_shapes::Error> for CliError {
    fn from(e: wfr_shapes::Error) -> Self {
        let code = if e.is_domain() { 2 } else { 1 };
        CliError { code, body: json!({ "kind": e.kind(), "message": e.to_string() }) }
    }
}

fn threads() -> Result<usize, CliError> {
    match std::env::var(THREADS_VAR) {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(CliError::usage(format!("{THREADS_VAR} must be a positive integer, got {v:?}"))),
        },
    }
}

fn config(cli: &Cli) -> Result<RunConfig, CliError> {
    if !(cli.tol > 0.0 && cli.tol.is_finite()) {
        return Err(CliError::usage(format!("--tol must be positive, got {}", cli.tol)));
    }
    let (lambda, moment, pairs) = match &cli.command {
        Command::BallMaximize { lambda, moment, .. } => (Some(*lambda), Some(*moment), None),
        Command::VerifyShift { pairs } => (None, None, Some(*pairs)),
        _ => (None, None, None),
    };
    Ok(RunConfig {
        command: cli.command.name(),
        inputs: cli.command.inputs().iter().map(|p| p.display().to_string()).collect(),
        tol: cli.tol,
        grid: cli.grid,
        samples: cli.samples,
        seed: cli.seed,
        output: cli.output.as_ref().map(|p| p.display().to_string()),
        format: cli.format,
        threads: threads()?,
        lambda,
        moment,
        pairs,
    })
}

fn run(cli: &Cli, cfg: &RunConfig) -> Result<output::Report, CliError> {
    match &cli.command {
        Command::LmExtract { input } => commands::lm_extract(input),
        Command::LmReconstruct { input } => commands::lm_reconstruct(input),
        Command::WfrDist { a, b } => commands::wfr_dist(a, b, cfg),
        Command::SrvtDist { a, b } => commands::srvt_dist(a, b, cfg),
        Command::BallMaximize { mu1, objective, lambda, moment } => commands::ball_maximize(mu1, objective, *lambda, *moment, cfg),
        Command::HomogEval { mu, nu } => commands::homog_eval(mu, nu),
        Command::VerifyShift { pairs } => commands::verify_shift(*pairs, cfg),
    }
}

fn emit(target: Option<&Path>, text: &str) -> Result<(), CliError> {
    match target {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::internal(format!("cannot write {}: {e}", p.display()))),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::internal(format!("cannot write to standard output: {e}"))),
    }
}

fn fail(cfg: Option<&RunConfig>, target: Option<&Path>, err: CliError) -> ExitCode {
    let text = output::render_error(cfg, &err.body);
    if emit(target, &text).is_err() {
        eprint!("{text}");
    }
    ExitCode::from(err.code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail(None, None, CliError::usage(e.to_string())),
    };
    let target = cli.output.clone();
    let cfg = match config(&cli) {
        Ok(c) => c,
        Err(e) => return fail(None, target.as_deref(), e),
    };
    std::panic::set_hook(Box::new(|_| {}));
    let outcome = std::panic::catch_unwind(|| run(&cli, &cfg)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<&str>()
            .map(|s| s.to_string())
            .or_else(|| p.downcast_ref::<String>().cloned())
            .unwrap_or_else(|| "panic".into());
        Err(CliError::internal(msg))
    });
    let report = match outcome {
        Ok(r) => r,
        Err(e) => return fail(Some(&cfg), target.as_deref(), e),
    };
    let text = match cfg.format {
        Format::Json => output::render_json(&cfg, &report),
        Format::Csv => output::render_csv(&cfg, &report),
    };
    match emit(target.as_deref(), &text) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(Some(&cfg), None, e),
    }
}
