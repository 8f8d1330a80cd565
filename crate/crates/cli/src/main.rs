//! `ihi`: simulate, calibrate, build datasets, reconstruct and evaluate.

mod commands;
mod digest;
mod selftest;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ihi_core::Error;

use commands::*;

#[derive(Debug, Parser)]
#[command(name = "ihi", version, about = "Interferometric hyperspectral imaging toolkit")]
struct Cli {
    /// Print one JSON object on stdout instead of tables.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Degrade a hyperspectral cube into an interferogram.
    Simulate(SimulateArgs),
    /// Estimate degradation parameters from calibration captures.
    Calibrate(CalibrateArgs),
    /// Build a paired dataset from source cubes and a parameter directory.
    MakeDataset(MakeDatasetArgs),
    /// Recover a hyperspectral cube from an interferogram.
    Reconstruct(ReconstructArgs),
    /// Score a reconstruction method on a dataset's test split.
    Evaluate(EvaluateArgs),
    /// Closed-loop calibration and round-trip checks.
    Selftest(SelftestArgs),
    /// Write a synthetic parameter directory.
    SynthParams(SynthParamsArgs),
    /// Write synthetic calibration captures and their true parameters.
    SynthCalibration(SynthCalibrationArgs),
    /// Write a synthetic wavelength-domain scene.
    SynthScene(SynthSceneArgs),
}

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_IO: u8 = 3;
pub const EXIT_NUMERICAL: u8 = 4;
pub const EXIT_SELFTEST: u8 = 5;

/// Failure of a subcommand, carrying its exit code.
#[derive(Debug)]
pub enum Failure {
    Core(Error),
    Usage(String),
    Selftest(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Selftest(_) => EXIT_SELFTEST,
            Failure::Core(e) => match e {
                Error::Io { .. } | Error::Json { .. } | Error::Format { .. } => EXIT_IO,
                Error::Config(_) => EXIT_USAGE,
                _ => EXIT_NUMERICAL,
            },
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Core(e) => write!(f, "{e}"),
            Failure::Usage(m) | Failure::Selftest(m) => f.write_str(m),
        }
    }
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(v) = std::env::var("IHI_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::Usage(format!("IHI_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Usage(format!("thread pool: {e}")))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("IHI_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| {
        let out = match &cli.command {
            Command::Simulate(a) => simulate(a),
            Command::Calibrate(a) => calibrate(a),
            Command::MakeDataset(a) => make_dataset(a),
            Command::Reconstruct(a) => reconstruct(a),
            Command::Evaluate(a) => evaluate(a),
            Command::Selftest(a) => selftest::run(a),
            Command::SynthParams(a) => synth_params(a),
            Command::SynthCalibration(a) => synth_calibration(a),
            Command::SynthScene(a) => synth_scene(a),
        }?;
        out.print(cli.json);
        out.status
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        let io = Error::Io {
            path: "x".into(),
            source: std::io::Error::from(std::io::ErrorKind::NotFound),
        };
        assert_eq!(Failure::from(io).code(), EXIT_IO);
        assert_eq!(Failure::from(Error::Config("x".into())).code(), EXIT_USAGE);
        assert_eq!(Failure::from(Error::Degenerate("x".into())).code(), EXIT_NUMERICAL);
        assert_eq!(Failure::from(Error::NonFinite("x".into())).code(), EXIT_NUMERICAL);
        assert_eq!(Failure::Selftest("x".into()).code(), EXIT_SELFTEST);
        assert_eq!(Failure::Usage("x".into()).code(), EXIT_USAGE);
    }
}
