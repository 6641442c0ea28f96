//! `pcm-segment`: grid statistics, features, Potts mixture fits, posterior
//! summaries, and the simulation benchmark from the command line.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pcm_core::PcmError;

#[derive(Debug, Parser)]
#[command(name = "pcm-segment", version, about = "Segment marked point patterns with a hidden Potts mixture")]
pub struct Cli {
    /// Seed for every random stream of the run.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Grid the patterns and write per-region intensities and PCF curves.
    GridStats(GridStatsArgs),
    /// PCA scores and standardized features from grid statistics.
    Features(FeaturesArgs),
    /// Run the MCMC sampler.
    Fit(FitArgs),
    /// Increase M until a cluster falls below the occupancy floor.
    SelectM(SelectMArgs),
    /// Relabel chains and write label, cluster, and parameter summaries.
    Summarize(SummarizeArgs),
    /// Generate a synthetic dataset with known labels.
    Simulate(SimulateArgs),
    /// Label regions with a k-means baseline or the non-spatial mixture.
    Baseline(BaselineArgs),
    /// Adjusted Rand index between two label tables.
    Ari(AriArgs),
    /// Run the simulation study and write mean ARI per scenario and method.
    Study(StudyArgs),
}

#[derive(Debug, Args)]
pub struct GridStatsArgs {
    /// Points CSV: subject_id,x,y,type[,group].
    #[arg(long)]
    pub points: Option<PathBuf>,
    /// Windows CSV: subject_id,xmin,xmax,ymin,ymax.
    #[arg(long)]
    pub windows: Option<PathBuf>,
    /// Number of point types.
    #[arg(long)]
    pub h: Option<usize>,
    #[arg(long, requires = "cols", conflicts_with = "target_mean_count")]
    pub rows: Option<usize>,
    #[arg(long, requires = "rows", conflicts_with = "target_mean_count")]
    pub cols: Option<usize>,
    /// Choose the grid so retained regions hold this many points on average.
    #[arg(long)]
    pub target_mean_count: Option<f64>,
    /// Number of PCF distances.
    #[arg(long)]
    pub r_d: Option<usize>,
    /// Output CSV.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FeaturesArgs {
    #[arg(long)]
    pub grid_stats: PathBuf,
    /// Fraction of curve variance the principal components must explain.
    #[arg(long)]
    pub variance_threshold: Option<f64>,
    /// Output directory for features.csv and basis.txt.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Clone)]
pub struct McmcArgs {
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub burn_in: Option<usize>,
    #[arg(long)]
    pub thin: Option<usize>,
    #[arg(long)]
    pub chains: Option<usize>,
    /// auto, single, or two.
    #[arg(long)]
    pub group_mode: Option<String>,
    /// Hold ψ at this value instead of sampling it.
    #[arg(long)]
    pub fix_psi: Option<f64>,
    /// Use exact enumeration of the normalizing constant (tiny grids only).
    #[arg(long)]
    pub exact: bool,
    /// Directory for surrogate tables.
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub features: PathBuf,
    /// Basis file of the same feature run; recorded in the manifest.
    #[arg(long)]
    pub basis: Option<PathBuf>,
    #[arg(long)]
    pub m: Option<usize>,
    #[command(flatten)]
    pub mcmc: McmcArgs,
    /// Output directory for chain and diagnostics files.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SelectMArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub m_min: Option<usize>,
    #[arg(long)]
    pub m_max: Option<usize>,
    /// Smallest acceptable share of regions in any cluster.
    #[arg(long)]
    pub floor: Option<f64>,
    #[command(flatten)]
    pub mcmc: McmcArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SummarizeArgs {
    /// Chain file; repeat to pool several chains.
    #[arg(long, required = true)]
    pub chain: Vec<PathBuf>,
    #[arg(long)]
    pub basis: PathBuf,
    /// Credible level of the equal-tailed bands.
    #[arg(long)]
    pub level: Option<f64>,
    /// Distances at which to keep full posterior samples of each PCF.
    #[arg(long, value_delimiter = ',')]
    pub eval_distances: Option<Vec<f64>>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScenarioArgs {
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub psi: Option<f64>,
    #[arg(long)]
    pub subjects: Option<usize>,
    /// low or high.
    #[arg(long)]
    pub regime: Option<String>,
    #[arg(long)]
    pub rows: Option<usize>,
    #[arg(long)]
    pub cols: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Output directory for points.csv, windows.csv, and truth.csv.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    /// FPCA-G, FPCA-S, Curve-G, Curve-S, or nonspatial-PCM.
    #[arg(long)]
    pub method: String,
    #[arg(long)]
    pub m: Option<usize>,
    /// Features CSV (FPCA and nonspatial-PCM).
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Grid-stats CSV (Curve methods).
    #[arg(long)]
    pub grid_stats: Option<PathBuf>,
    #[arg(long)]
    pub restarts: Option<usize>,
    #[command(flatten)]
    pub mcmc: McmcArgs,
    /// Output label CSV.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AriArgs {
    pub a: PathBuf,
    pub b: PathBuf,
    /// Average the index over subjects instead of pooling regions.
    #[arg(long)]
    pub per_subject: bool,
    /// Also write the value to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StudyArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[arg(long)]
    pub replications: Option<usize>,
    /// Comma-separated method names.
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub burn_in: Option<usize>,
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    /// Output CSV.
    #[arg(long)]
    pub out: PathBuf,
}

/// A failure reported as one `error kind=... message=...` line.
#[derive(Debug)]
pub struct Failure {
    pub kind: &'static str,
    pub message: String,
}

impl Failure {
    pub fn new(kind: &'static str, message: impl Into<String>) -> Failure {
        Failure {
            kind,
            message: message.into(),
        }
    }

    pub fn usage(message: impl Into<String>) -> Failure {
        Failure::new("usage", message)
    }
}

impl From<PcmError> for Failure {
    fn from(e: PcmError) -> Failure {
        Failure::new(e.kind(), e.to_string())
    }
}

fn report(f: &Failure) {
    let message = f.message.split_whitespace().collect::<Vec<_>>().join(" ");
    eprintln!("error kind={} message={}", f.kind, message);
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let text = e.to_string();
            let head = text.split("Usage:").next().unwrap_or("").trim_start_matches("error: ");
            report(&Failure::usage(head));
            return ExitCode::from(2);
        }
    };
    match commands::dispatch(cli, &argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            report(&f);
            ExitCode::from(if f.kind == "usage" { 2 } else { 1 })
        }
    }
}
