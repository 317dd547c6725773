//! `mv-ergo` command-line runner: one experiment per invocation, configured
//! by a JSON file, writing CSV series, JSON summaries and a manifest.

mod config;
mod experiments;

use std::ffi::OsString;
use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::Error;
use crate::inequalities::{write_series_csv, SeriesPoint};

pub use config::*;

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
/// A checked inequality or convergence criterion failed.
pub const EXIT_FINDING: i32 = 2;
pub const EXIT_CONFIG: i32 = 64;
pub const EXIT_IO: i32 = 74;

pub const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (", env!("MV_ERGO_BUILD"), ")");

#[derive(Debug, Parser)]
#[command(name = "mv-ergo", version = VERSION, about = "McKean-Vlasov simulation and verification lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// JSON experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
    /// Overrides `output_dir` from the configuration.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample a structural condition for violations.
    Check(RunArgs),
    /// Simulate the particle system (or the frozen dynamics).
    Simulate(RunArgs),
    /// Long-run law of the dynamics frozen at a given measure.
    Phi(RunArgs),
    /// Picard iteration for the invariant measure.
    FixedPoint(RunArgs),
    /// W2 distance to a reference cloud along the flow, with a decay fit.
    W2Decay(RunArgs),
    /// Relative entropy along a linear Gaussian flow.
    EntropyDecay(RunArgs),
    /// Semigroup log-Sobolev gap on the test-function bank.
    LsiGap(RunArgs),
    /// Coupling behind the Harnack inequality.
    Harnack(RunArgs),
    /// Kinetic gradient model against its explicit invariant density.
    Kinetic(RunArgs),
    /// Yosida and mollifier regularization sweeps.
    Regularization(RunArgs),
    /// Print the builtin models.
    ListModels,
}

impl Command {
    fn tag(&self) -> &'static str {
        match self {
            Self::Check(_) => "check",
            Self::Simulate(_) => "simulate",
            Self::Phi(_) => "phi",
            Self::FixedPoint(_) => "fixed-point",
            Self::W2Decay(_) => "w2-decay",
            Self::EntropyDecay(_) => "entropy-decay",
            Self::LsiGap(_) => "lsi-gap",
            Self::Harnack(_) => "harnack",
            Self::Kinetic(_) => "kinetic",
            Self::Regularization(_) => "regularization",
            Self::ListModels => "list-models",
        }
    }
}

/// Failure with its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub(crate) fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

fn is_io(e: &Error) -> bool {
    match e {
        Error::Io { .. } => true,
        Error::Csv(c) => c.is_io_error(),
        Error::Json(j) => j.is_io(),
        _ => false,
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        Self {
            code: if is_io(&e) { EXIT_IO } else { EXIT_ERROR },
            message: e.to_string(),
        }
    }
}

/// Maps errors raised while preparing inputs to the configuration exit code.
pub(crate) fn config_err(e: Error) -> CliError {
    if is_io(&e) {
        CliError::from(e)
    } else {
        CliError::config(format!("config error: {e}"))
    }
}

/// Successful run, or a run whose checked criterion failed.
#[derive(Debug)]
pub(crate) enum Outcome {
    Passed,
    Finding(String),
}

/// Files written by one experiment, recorded for the manifest.
pub(crate) struct Outputs {
    pub(crate) dir: PathBuf,
    files: Vec<String>,
}

impl Outputs {
    fn new(dir: PathBuf) -> Result<Self, CliError> {
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Self {
            dir,
            files: Vec::new(),
        })
    }

    pub(crate) fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }

    pub(crate) fn json(&mut self, name: &str, value: &impl Serialize) -> Result<(), CliError> {
        let path = self.path(name);
        let mut text = serde_json::to_string_pretty(value).map_err(Error::from)?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(())
    }

    pub(crate) fn series(&mut self, name: &str, rows: &[SeriesPoint]) -> Result<(), CliError> {
        let path = self.path(name);
        write_series_csv(&path, rows)?;
        Ok(())
    }

    fn finish(
        mut self,
        experiment: &str,
        config: &serde_json::Value,
        outcome: &Outcome,
    ) -> Result<(), CliError> {
        let (status, finding) = match outcome {
            Outcome::Passed => ("ok", None),
            Outcome::Finding(m) => ("finding", Some(m.as_str())),
        };
        let manifest = serde_json::json!({
            "tool": "mv-ergo",
            "version": env!("CARGO_PKG_VERSION"),
            "build": env!("MV_ERGO_BUILD"),
            "experiment": experiment,
            "status": status,
            "finding": finding,
            "files": self.files.clone(),
            "config": config,
        });
        self.json("manifest.json", &manifest)
    }
}

/// Parsed configuration plus the JSON it came from.
pub(crate) struct Loaded<T> {
    pub(crate) cfg: T,
    pub(crate) raw: serde_json::Value,
    /// Directory of the config file, for relative paths.
    pub(crate) base: PathBuf,
}

fn load<T: DeserializeOwned>(path: &Path, tag: &str) -> Result<Loaded<T>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let raw: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CliError::config(format!("{}: invalid JSON: {e}", path.display())))?;
    if let Some(exp) = raw.get("experiment") {
        if exp.as_str() != Some(tag) {
            return Err(CliError::config(format!(
                "config error at experiment: expected \"{tag}\", found {exp}"
            )));
        }
    }
    let cfg = serde_path_to_error::deserialize(raw.clone()).map_err(|e| {
        let at = e.path().to_string();
        CliError::config(format!("config error at {at}: {}", e.inner()))
    })?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(Loaded { cfg, raw, base })
}

/// Optional `output_dir` key shared by all configurations.
fn configured_output(raw: &serde_json::Value, base: &Path) -> Option<PathBuf> {
    raw.get("output_dir")
        .and_then(|v| v.as_str())
        .map(|s| base.join(s))
}

fn execute(command: Command) -> Result<Outcome, CliError> {
    let tag = command.tag();
    let args = match command {
        Command::ListModels => {
            print!("{}", crate::coefficients::list_models());
            return Ok(Outcome::Passed);
        }
        Command::Check(a)
        | Command::Simulate(a)
        | Command::Phi(a)
        | Command::FixedPoint(a)
        | Command::W2Decay(a)
        | Command::EntropyDecay(a)
        | Command::LsiGap(a)
        | Command::Harnack(a)
        | Command::Kinetic(a)
        | Command::Regularization(a) => a,
    };
    let job = || -> Result<Outcome, CliError> {
        macro_rules! dispatch {
            ($run:path) => {{
                let loaded = load(&args.config, tag)?;
                let dir = args
                    .output_dir
                    .clone()
                    .or_else(|| configured_output(&loaded.raw, &loaded.base))
                    .unwrap_or_else(|| PathBuf::from("output").join(tag));
                let mut out = Outputs::new(dir)?;
                let outcome = $run(&loaded, &mut out)?;
                out.finish(tag, &loaded.raw, &outcome)?;
                Ok(outcome)
            }};
        }
        match tag {
            "check" => dispatch!(experiments::check),
            "simulate" => dispatch!(experiments::simulate),
            "phi" => dispatch!(experiments::phi),
            "fixed-point" => dispatch!(experiments::fixed_point),
            "w2-decay" => dispatch!(experiments::w2_decay),
            "entropy-decay" => dispatch!(experiments::entropy_decay),
            "lsi-gap" => dispatch!(experiments::lsi_gap),
            "harnack" => dispatch!(experiments::harnack),
            "kinetic" => dispatch!(experiments::kinetic),
            "regularization" => dispatch!(experiments::regularization),
            _ => unreachable!("unhandled subcommand {tag}"),
        }
    };
    with_threads(args.threads, job)
}

#[cfg(feature = "parallel")]
fn with_threads<T: Send>(
    threads: Option<usize>,
    job: impl FnOnce() -> Result<T, CliError> + Send,
) -> Result<T, CliError> {
    match threads {
        None => job(),
        Some(0) => Err(CliError::config("--threads must be >= 1")),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError {
                    code: EXIT_ERROR,
                    message: format!("thread pool: {e}"),
                })?;
            pool.install(job)
        }
    }
}

#[cfg(not(feature = "parallel"))]
fn with_threads<T>(
    threads: Option<usize>,
    job: impl FnOnce() -> Result<T, CliError>,
) -> Result<T, CliError> {
    if threads == Some(0) {
        return Err(CliError::config("--threads must be >= 1"));
    }
    job()
}

/// Parses `args` (including the program name), runs the experiment and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(Outcome::Passed) => EXIT_OK,
        Ok(Outcome::Finding(m)) => {
            eprintln!("finding: {m}");
            EXIT_FINDING
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}
