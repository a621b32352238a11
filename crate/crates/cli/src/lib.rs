//! The `bald` command-line tool.
//!
//! Every command reads and writes the container format of `bald-io` and
//! records its full flag set in the output sidecar, so a container can be
//! reproduced from its own metadata.

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use bald_core::phantom::NoiseModelId;
use bald_core::BaldError;
use bald_io::IoError;
use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

/// Bundled default phantom, the 3x3 APT/NOE grid.
pub const DEFAULT_PHANTOM: &str = include_str!("../assets/phantom.toml");

pub mod exit {
    pub const FAILURE: u8 = 1;
    /// Bad flags, invalid parameters or configuration.
    pub const VALIDATION: u8 = 2;
    /// Missing or unreadable files.
    pub const IO: u8 = 3;
    /// The noise curve could not be estimated.
    pub const ESTIMATION: u8 = 4;
    /// Malformed input files or data that violate a precondition.
    pub const DATA: u8 = 5;
}

#[derive(Debug, Parser)]
#[command(name = "bald", version, about = "Blind adaptive local denoising for CEST z-spectra")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a phantom sequence, optionally with noise.
    Simulate(SimulateArgs),
    /// Estimate the noise curve and denoise a sequence.
    Denoise(DenoiseArgs),
    /// Fit multi-pool Lorentzians pixel-wise and write amplitude maps.
    Fit(FitArgs),
    /// Compute the APT-weighted MTR asymmetry map at 3.5 ppm.
    Aptw(AptwArgs),
    /// Compare a test container against a reference.
    Eval(EvalArgs),
    /// Convert a single-file NIfTI-1 volume into a container.
    ImportNifti(ImportNiftiArgs),
}

/// Noise added by `simulate`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseArg {
    None,
    Rician,
    Model(NoiseModelId),
}

fn parse_noise(s: &str) -> Result<NoiseArg, String> {
    match s.to_ascii_lowercase().as_str() {
        "none" => Ok(NoiseArg::None),
        "rician" => Ok(NoiseArg::Rician),
        _ => s
            .to_ascii_uppercase()
            .parse()
            .map(NoiseArg::Model)
            .map_err(|_| format!("unknown noise '{s}' (expected none, rician, A, B, C or D)")),
    }
}

impl std::fmt::Display for NoiseArg {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NoiseArg::None => f.write_str("none"),
            NoiseArg::Rician => f.write_str("rician"),
            NoiseArg::Model(id) => write!(f, "{id}"),
        }
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Output container (sidecar `.json`).
    pub out: PathBuf,
    /// Phantom spec (TOML); the built-in 3x3 grid when omitted.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// none, rician, or one of the analytic models A-D.
    #[arg(long, default_value = "none", value_parser = parse_noise)]
    pub noise: NoiseArg,
    /// Rician noise standard deviation.
    #[arg(long, default_value_t = 0.05)]
    pub level: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write the noise-free sequence here.
    #[arg(long)]
    pub clean_out: Option<PathBuf>,
    /// Also write the compartment label map here.
    #[arg(long)]
    pub labels_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DenoiseArgs {
    pub input: PathBuf,
    pub out: PathBuf,
    /// Intensity bins per frame.
    #[arg(long, default_value_t = bald_core::noise::DEFAULT_T1)]
    pub t1: usize,
    /// Knots of the merged noise curve.
    #[arg(long, default_value_t = bald_core::noise::DEFAULT_T2)]
    pub t2: usize,
    /// Patch side length in pixels.
    #[arg(long, default_value_t = bald_core::svd::DEFAULT_PATCH_SIZE)]
    pub patch: usize,
    /// Patch stride; half the patch size when omitted.
    #[arg(long)]
    pub stride: Option<usize>,
    /// Where to write the estimated curve; `<out stem>.curve.csv` by default.
    #[arg(long)]
    pub curve_out: Option<PathBuf>,
    /// Use this noise curve instead of estimating one.
    #[arg(long)]
    pub curve_in: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    pub input: PathBuf,
    pub out: PathBuf,
    /// Comma-separated exchange pools (apt, noe, mt, amine).
    #[arg(long, value_delimiter = ',', default_value = "apt,noe,mt")]
    pub pools: Vec<String>,
    #[arg(long, default_value_t = 200)]
    pub max_iterations: usize,
    /// Label map for per-ROI amplitude statistics.
    #[arg(long, requires = "stats_out")]
    pub rois: Option<PathBuf>,
    /// ROI statistics CSV, one row per pool and ROI.
    #[arg(long, requires = "rois")]
    pub stats_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AptwArgs {
    pub input: PathBuf,
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Table,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    pub reference: PathBuf,
    pub test: PathBuf,
    /// Label map; adds per-ROI PSNR and, for maps, Welch p-values.
    #[arg(long)]
    pub rois: Option<PathBuf>,
    /// PSNR peak; the maximum of the whole reference when omitted, also for
    /// per-ROI rows.
    #[arg(long)]
    pub peak: Option<f64>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    /// Also write the metrics CSV here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// ROI statistics of the test maps (requires --rois).
    #[arg(long, requires = "rois")]
    pub stats_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ImportNiftiArgs {
    pub input: PathBuf,
    pub out: PathBuf,
    /// Comma-separated offsets in ppm, one per volume.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, conflicts_with = "grid")]
    pub offsets: Vec<f64>,
    /// Evenly spaced offsets as `start,stop,step`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub grid: Vec<f64>,
    /// Index of a volume to use as M0 instead of as a saturated frame.
    #[arg(long)]
    pub m0_frame: Option<usize>,
}

/// A flag combination rejected by the CLI itself.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn core_code(e: &BaldError) -> u8 {
    match e {
        BaldError::Config(_) => exit::VALIDATION,
        BaldError::Estimation(_) => exit::ESTIMATION,
        BaldError::Data(_) | BaldError::OutOfBounds { .. } | BaldError::DimensionMismatch { .. } => exit::DATA,
        BaldError::Contract(_) | BaldError::Internal(_) => exit::FAILURE,
    }
}

/// Maps an error to the process exit code.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return exit::VALIDATION;
        }
        if let Some(e) = cause.downcast_ref::<IoError>() {
            return match e {
                IoError::Io { .. } => exit::IO,
                IoError::Format { .. } => exit::DATA,
                IoError::Core(c) => core_code(c),
            };
        }
        if let Some(e) = cause.downcast_ref::<BaldError>() {
            return core_code(e);
        }
    }
    exit::FAILURE
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Simulate(a) => commands::simulate(&a),
        Command::Denoise(a) => commands::denoise(&a),
        Command::Fit(a) => commands::fit(&a),
        Command::Aptw(a) => commands::aptw(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::ImportNifti(a) => commands::import_nifti(&a),
    }
}

/// Parses `args`, runs the command and reports errors on stderr.
pub fn main_with<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::VALIDATION } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
