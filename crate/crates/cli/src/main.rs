//! `aria`: reliability, homogeneity, alignment and residual analyses of
//! attribution score matrices.
//!
//! Exit codes: 0 on success, 1 for input errors, 2 for numeric failures.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use aria_core::bench::Regime;
use aria_core::io::MatrixFormat;
use aria_core::linalg::SvdMethod;
use aria_core::normalize::NormalizationMode;
use aria_core::Precision;
use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "aria", version, about = "Diagnostics and evidence-channel analysis of attribution score matrices")]
struct Cli {
    /// Worker threads; defaults to all cores.
    #[arg(long, env = "ARIA_THREADS", global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Reliability diagnostics κ, r₁…r₅ and p of a score matrix.
    Diagnose(DiagnoseArgs),
    /// Within-group homogeneity z-scores of top-K groups per channel.
    Homogeneity(HomogeneityArgs),
    /// Alignment of the leading left singular vector with each channel.
    Align(AlignArgs),
    /// Writes the rank-1 residual S − σ₁u₁v₁ᵀ.
    Residual(ResidualArgs),
    /// Homogeneity of a matrix and of its rank-1 residual, side by side.
    ResidualSweep(ResidualSweepArgs),
    /// Cosine similarity of fixed embeddings as a track × query matrix.
    ScoreEmbeddings(ScoreEmbeddingsArgs),
    /// Synthetic matrix, segment map, features and ground truth.
    Simulate(SimulateArgs),
    /// Runs a JSON config over several (method, stage) settings.
    Run(RunArgs),
}

#[derive(Debug, Args)]
struct MatrixArgs {
    /// Score matrix (ASM1 or CSV).
    #[arg(long)]
    matrix: PathBuf,
    /// Overrides format detection from the extension.
    #[arg(long)]
    format: Option<MatrixFormat>,
}

#[derive(Debug, Args)]
struct SvdArgs {
    /// Singular triplets to compute.
    #[arg(long, default_value_t = 8)]
    svd_k: usize,
    /// Forces the dense SVD.
    #[arg(long, conflicts_with = "svd_method")]
    exact_svd: bool,
    /// auto, exact, gram or randomized.
    #[arg(long, default_value_t = SvdMethod::Auto)]
    svd_method: SvdMethod,
    /// Seed for randomized stages.
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Debug, Args)]
struct DiagnoseArgs {
    #[command(flatten)]
    matrix: MatrixArgs,
    #[arg(long, default_value_t = aria_core::reliability::DEFAULT_KAPPA_MAX_QUERIES)]
    kappa_max_queries: usize,
    #[command(flatten)]
    svd: SvdArgs,
    /// Report path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GroupArgs {
    #[command(flatten)]
    matrix: MatrixArgs,
    /// Segment → track map; rows are tracks when absent.
    #[arg(long)]
    segmap: Option<PathBuf>,
    /// Feature manifest.
    #[arg(long)]
    features: PathBuf,
    /// Per-query normalization; defaults from `--method`.
    #[arg(long)]
    normalize: Option<NormalizationMode>,
    /// Scoring method name, used to pick the normalization.
    #[arg(long)]
    method: Option<String>,
    /// Channels to evaluate; all when absent.
    #[arg(long, value_delimiter = ',')]
    channels: Option<Vec<String>>,
    #[arg(long = "K", value_delimiter = ',', default_values_t = aria_core::homogeneity::DEFAULT_K_LIST)]
    k: Vec<usize>,
    /// Random reference groups per K.
    #[arg(long = "B", default_value_t = aria_core::homogeneity::DEFAULT_B)]
    b: usize,
    #[arg(long, default_value_t = aria_core::homogeneity::SIG_THRESHOLD)]
    threshold: f64,
    /// Query labels for stratified summaries.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[command(flatten)]
    svd: SvdArgs,
    /// Report path; stdout when absent. A per-K CSV is written beside it.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct HomogeneityArgs {
    #[command(flatten)]
    group: GroupArgs,
}

#[derive(Debug, Args)]
struct ResidualSweepArgs {
    #[command(flatten)]
    group: GroupArgs,
    /// Also writes the residual matrix here.
    #[arg(long)]
    residual_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AlignArgs {
    /// Track-level score matrix.
    #[command(flatten)]
    matrix: MatrixArgs,
    #[arg(long)]
    features: PathBuf,
    #[arg(long, value_delimiter = ',')]
    channels: Option<Vec<String>>,
    #[command(flatten)]
    svd: SvdArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ResidualArgs {
    #[command(flatten)]
    matrix: MatrixArgs,
    #[command(flatten)]
    svd: SvdArgs,
    /// Residual matrix path; the format follows the extension.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ScoreEmbeddingsArgs {
    /// Query embeddings, CSV `id,d0,…`.
    #[arg(long)]
    queries: PathBuf,
    /// Track embeddings, CSV `id,d0,…`.
    #[arg(long)]
    tracks: PathBuf,
    #[arg(long, default_value_t = Precision::F32)]
    precision: Precision,
    /// Matrix path; the format follows the extension.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// JSON planted spec; flags override its fields.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    regime: Option<Regime>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    t: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    collapse_strength: Option<f64>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    planted_size: Option<usize>,
    #[arg(long)]
    coherence: Option<f64>,
    #[arg(long)]
    precision: Option<Precision>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output prefix, e.g. `bench/` or `bench/run1_`.
    #[arg(long)]
    out_prefix: PathBuf,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// JSON run config.
    config: PathBuf,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.threads.filter(|&n| n > 0) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    match commands::dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numeric() { 2 } else { 1 })
        }
    }
}
