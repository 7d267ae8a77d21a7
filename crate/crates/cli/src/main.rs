//! `emosup`: corpora, prompt-learning pre-training, supervision demos,
//! metrics and modality-gap analyses as reproducible runs.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Exit status for usage and validation failures.
const EXIT_USAGE: u8 = 2;
/// Exit status for numerical failures such as divergence.
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "emosup", version, about = "Cross-modal emotional supervision toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic corpus (or index a precomputed one).
    GenCorpus(GenCorpusArgs),
    /// Contrastive prompt-learning pre-training.
    PretrainPepl(PretrainArgs),
    /// Pre-training with the difference-alignment objective instead.
    PretrainVtedcAblation(PretrainArgs),
    /// Modality-gap report and cross-modal similarity matrix.
    AnalyzeGap(AnalyzeGapArgs),
    /// Negative pools from a similarity matrix by top-k exclusion.
    DerivePools(DerivePoolsArgs),
    /// FAD, CSIM and LSE-D over precomputed feature sets.
    EvalMetrics(EvalMetricsArgs),
    /// Train a toy generator with and without the difference term.
    SuperviseDemo(DemoArgs),
    /// Train the toy generator once per lambda value.
    SweepLambda(SweepArgs),
    /// Export source-minus-target difference vectors.
    ExportDiffs(ExportDiffsArgs),
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug, Clone)]
pub struct CorpusInput {
    /// Corpus manifest.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Precomputed-feature index; required when the manifest has no synthetic world.
    #[arg(long)]
    pub features: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GenCorpusArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub identities: Option<usize>,
    #[arg(long)]
    pub per_emotion: Option<usize>,
    /// Norm of the image-text offset.
    #[arg(long)]
    pub gap: Option<f64>,
    /// Per-image noise standard deviation.
    #[arg(long)]
    pub noise: Option<f64>,
    /// Index a precomputed-feature set instead of generating a world.
    #[arg(long)]
    pub from_features: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PretrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub input: CorpusInput,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub steps_per_epoch: Option<usize>,
    #[arg(long)]
    pub momentum: Option<f64>,
    /// `multi` or `single_conditional`.
    #[arg(long)]
    pub projector_mode: Option<String>,
    /// `paper`, `all`, or a pools file from `derive-pools`.
    #[arg(long)]
    pub pools: Option<String>,
}

#[derive(Args, Debug)]
pub struct AnalyzeGapArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub input: CorpusInput,
}

#[derive(Args, Debug)]
pub struct DerivePoolsArgs {
    #[command(flatten)]
    pub common: Common,
    /// Number of most similar negatives to exclude per emotion.
    #[arg(long)]
    pub k: Option<usize>,
    /// `table_s2` for the stored matrix, or a matrix/report JSON from `analyze-gap`.
    #[arg(long)]
    pub matrix: String,
}

#[derive(Args, Debug)]
pub struct EvalMetricsArgs {
    #[command(flatten)]
    pub common: Common,
    /// Feature index of the real set.
    #[arg(long)]
    pub real: PathBuf,
    /// Feature index of the generated set.
    #[arg(long)]
    pub gen: PathBuf,
    /// Feature index of audio sync embeddings, one per window.
    #[arg(long, requires = "sync_visual")]
    pub sync_audio: Option<PathBuf>,
    /// Feature index of visual sync embeddings, aligned with the audio ones.
    #[arg(long, requires = "sync_audio")]
    pub sync_visual: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct DemoArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub input: CorpusInput,
    /// Frozen prompt-learning checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Baseline tag selecting the default lambda: ned, icface, sserd or toy.
    #[arg(long)]
    pub baseline: Option<String>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub steps_per_epoch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub demo: DemoArgs,
    /// Comma-separated lambda values.
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,
}

#[derive(Args, Debug)]
pub struct ExportDiffsArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub input: CorpusInput,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// `train`, `val` or `all`.
    #[arg(long, default_value = "all")]
    pub split: String,
    /// Also pair each image difference with text differences towards other emotions.
    #[arg(long)]
    pub non_corresponding: bool,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let numerical = err
        .chain()
        .filter_map(|e| e.downcast_ref::<emosup::Error>())
        .any(emosup::Error::is_numerical);
    if numerical {
        EXIT_NUMERICAL
    } else {
        EXIT_USAGE
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenCorpus(a) => commands::gen_corpus(a),
        Command::PretrainPepl(a) => commands::pretrain(a, commands::Objective::Contrastive),
        Command::PretrainVtedcAblation(a) => commands::pretrain(a, commands::Objective::Difference),
        Command::AnalyzeGap(a) => commands::analyze_gap(a),
        Command::DerivePools(a) => commands::derive_pools(a),
        Command::EvalMetrics(a) => commands::eval_metrics(a),
        Command::SuperviseDemo(a) => commands::supervise_demo(a),
        Command::SweepLambda(a) => commands::sweep_lambda(a),
        Command::ExportDiffs(a) => commands::export_diffs(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
