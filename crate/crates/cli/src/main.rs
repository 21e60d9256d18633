mod commands;
mod config;
mod input;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};

use logrange_gp::ErrorKind;

/// Weighted-log Gaussian process models for movement tracks.
#[derive(Debug, Parser)]
#[command(name = "logrange-gp", version, args_override_self = true)]
pub struct Cli {
    /// Worker threads (default: LOGRANGE_GP_THREADS, else all cores)
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// JSON file whose keys mirror the command-line flags
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// More log output; repeat for debug
    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample paths of a model on the grid T/n, 2T/n, ..., T
    #[command(args_override_self = true)]
    Simulate(SimulateArgs),
    /// Maximum-likelihood fit of one model family
    #[command(args_override_self = true)]
    Fit(FitArgs),
    /// Fit several families and rank them by AIC
    #[command(args_override_self = true)]
    Compare(CompareArgs),
    /// Fit on a prefix of the track and predict the rest
    #[command(args_override_self = true)]
    Predict(PredictArgs),
    /// Rolling statistics, autocorrelation and KPSS test
    #[command(args_override_self = true)]
    Diagnose(DiagnoseArgs),
}

impl Command {
    pub const NAMES: [&'static str; 5] = ["simulate", "fit", "compare", "predict", "diagnose"];
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Model family; defaults to weighted_log when --weight is given
    #[arg(long)]
    pub model: Option<String>,
    /// Weight expression f(u) for the weighted_log family
    #[arg(long)]
    pub weight: Option<String>,
    /// Exponent a of a u^a singularity of the weight at 0
    #[arg(long, allow_hyphen_values = true)]
    pub singularity: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub hurst: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub alpha: Option<f64>,
    /// Time horizon (minutes)
    #[arg(long = "T", value_name = "T")]
    pub horizon: f64,
    /// Number of grid points
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub paths: usize,
    #[arg(long, default_value = "-")]
    pub out: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AxisArg {
    Lat,
    Lon,
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Telemetry CSV (has a timestamp column) or a series CSV (time,value,...)
    #[arg(long)]
    pub input: PathBuf,
    /// Coordinate axis of telemetry input
    #[arg(long, value_enum, default_value_t = AxisArg::Lat)]
    pub axis: AxisArg,
    /// Value column of a series CSV (default: first column after time)
    #[arg(long)]
    pub column: Option<String>,
    /// Bin width in minutes for telemetry input
    #[arg(long, default_value_t = 0.5)]
    pub delta: f64,
    #[arg(long, default_value = "timestamp")]
    pub time_col: String,
    #[arg(long, default_value = "location-long")]
    pub lon_col: String,
    #[arg(long, default_value = "location-lat")]
    pub lat_col: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AnchorArg {
    /// Subtract the first observation and drop it
    First,
    /// Data already start from the process origin
    Origin,
}

#[derive(Debug, Args)]
pub struct FitControl {
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    #[arg(long, value_enum, default_value_t = AnchorArg::First)]
    pub anchor: AnchorArg,
    /// Override a parameter box, e.g. beta=1e-6:10 (repeatable)
    #[arg(long = "bound", value_name = "NAME=LO:HI")]
    pub bounds: Vec<String>,
    /// Skip profile confidence intervals
    #[arg(long)]
    pub no_ci: bool,
    #[arg(long, default_value_t = 1e-6)]
    pub rel_tol: f64,
    #[arg(long, default_value_t = 200)]
    pub max_iter: usize,
    /// Tolerance of the flat-profile rule for beta at its upper bound
    #[arg(long, default_value_t = 1e-2)]
    pub flat_epsilon: f64,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub control: FitControl,
    #[arg(long, default_value = "-")]
    pub out: String,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Comma-separated families
    #[arg(long, value_delimiter = ',', default_value = "weighted_log_exp,integrated_ou,fbm")]
    pub models: Vec<String>,
    /// Weight expression, enables the weighted_log family
    #[arg(long)]
    pub weight: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub singularity: Option<f64>,
    #[command(flatten)]
    pub control: FitControl,
    #[arg(long, default_value = "-")]
    pub out: String,
    /// Also write the ranking as CSV
    #[arg(long)]
    pub table: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    Pointwise,
    SdScaled,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Use the model stored in a fit JSON instead of refitting
    #[arg(long)]
    pub fit: Option<PathBuf>,
    #[arg(long, default_value_t = 0.9)]
    pub train_fraction: f64,
    #[arg(long, value_enum, default_value_t = MetricArg::Pointwise)]
    pub metric: MetricArg,
    /// Monte Carlo paths for the predicted mean; 0 uses exact conditioning
    #[arg(long, default_value_t = 0)]
    pub mc_paths: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[command(flatten)]
    pub control: FitControl,
    /// CSV of time, mean, sd, lower, upper, observed
    #[arg(long, default_value = "-")]
    pub out: String,
    /// JSON with the fitted model and the error metric
    #[arg(long)]
    pub report: Option<String>,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, default_value_t = 10)]
    pub window: usize,
    #[arg(long, default_value_t = 50)]
    pub max_lag: usize,
    /// 5% critical value of the KPSS level test
    #[arg(long, default_value_t = 0.463)]
    pub critical_value: f64,
    /// KPSS bandwidth (default: floor(4 (n/100)^(1/4)))
    #[arg(long)]
    pub bandwidth: Option<usize>,
    #[arg(long, default_value = "-")]
    pub out: String,
    /// Directory for rolling.csv and acf.csv
    #[arg(long)]
    pub csv_dir: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] logrange_gp::Error),
    #[error("JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(e) => match e.kind() {
                ErrorKind::Usage => 1,
                ErrorKind::Data => 2,
                ErrorKind::Numerical => 3,
            },
            CliError::Json(_) | CliError::Io(_) => 2,
        }
    }
}

fn parse_args() -> Result<Cli, clap::Error> {
    let argv: Vec<String> = std::env::args().collect();
    // the config may name the command, so it is read before clap sees argv
    match config::config_path(&argv) {
        Some(path) => config::reparse_with_config(&path, &argv).map_err(|e| {
            clap::Error::raw(clap::error::ErrorKind::InvalidValue, format!("config {}: {e}\n", path.display()))
        })?,
        None => Cli::try_parse_from(&argv),
    }
}

fn init_threads(requested: Option<usize>) -> Result<(), CliError> {
    let from_env = std::env::var("LOGRANGE_GP_THREADS").ok().map(|v| {
        v.trim()
            .parse::<usize>()
            .map_err(|_| CliError::Usage(format!("LOGRANGE_GP_THREADS must be a positive integer, got `{v}`")))
    });
    let threads = match (requested, from_env) {
        (Some(n), _) => Some(n),
        (None, Some(r)) => Some(r?),
        (None, None) => None,
    };
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::Usage("thread count must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match parse_args() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    let result = init_threads(cli.threads).and_then(|()| match cli.command {
        Some(cmd) => commands::run(cmd),
        None => Err(CliError::Usage(format!(
            "no command given (one of {})",
            Command::NAMES.join(", ")
        ))),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
