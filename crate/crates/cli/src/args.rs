use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "probe", version, about = "Layerwise probing of speech representations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a seeded synthetic corpus with spans, targets and judged pairs.
    Synth(SynthArgs),
    /// Check a model config (preset name or TOML file) and write it out resolved.
    Validate(ValidateArgs),
    /// Train a testbed model on a synthetic corpus.
    Train(TrainArgs),
    /// Compare analytic gradients against central differences.
    Gradcheck(GradcheckArgs),
    /// Write per-layer feature dumps for every utterance of a corpus.
    Extract(ExtractArgs),
    /// Mean-pool layer features over word, phone or utterance spans.
    Pool(PoolArgs),
    /// PWCCA curve of pooled layers against a reference.
    Cca(CcaArgs),
    /// Mutual information curve between clustered layers and span labels.
    Mi(MiArgs),
    /// Spoken STS curve: Spearman rho of cosine similarities against judgments.
    Sts(StsArgs),
    /// Layer-weight reports with group masses and dominance flags.
    Weights(WeightsArgs),
    /// Join per-model metric curves into one CSV per metric.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DumpType {
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Kind {
    Word,
    Phone,
    Utterance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Softmax,
    Normalized,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub utterances: usize,
    /// Number of judged utterance pairs.
    #[arg(long, default_value_t = 200)]
    pub pairs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// Preset name or path to a TOML config.
    #[arg(long)]
    pub config: String,
    /// Other models (presets or files) that must have the same total layer count.
    #[arg(long, value_delimiter = ',')]
    pub compare: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Preset name or path to a TOML config.
    #[arg(long)]
    pub model: String,
    /// Corpus directory written by `probe synth`.
    #[arg(long)]
    pub data: PathBuf,
    /// Run directory for config, parameters and loss history.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2000)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    #[arg(long, default_value_t = 4)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 250)]
    pub eval_every: usize,
    #[arg(long, default_value_t = 8)]
    pub eval_examples: usize,
    #[arg(long, value_enum, default_value_t = Precision::F64)]
    pub precision: Precision,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Preset name or path to a TOML config.
    #[arg(long)]
    pub model: String,
    #[arg(long)]
    pub out: PathBuf,
    /// Override the model width.
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long, default_value_t = 16)]
    pub frames: usize,
    #[arg(long, default_value_t = 200)]
    pub samples: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// Run directory written by `probe train`.
    #[arg(long, conflicts_with = "model", required_unless_present = "model")]
    pub run: Option<PathBuf>,
    /// Untrained model from a preset or config, initialized from its seed.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = DumpType::F64)]
    pub dtype: DumpType,
}

#[derive(Debug, Args)]
pub struct PoolArgs {
    /// Directory of per-utterance manifests (`<utt>/manifest.json`).
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long, value_enum)]
    pub kind: Kind,
    #[arg(long)]
    pub out: PathBuf,
    /// Frame period the annotation frame indices refer to.
    #[arg(long, default_value_t = 20)]
    pub base_period: u32,
}

#[derive(Debug, Args)]
pub struct CcaArgs {
    /// Pooled layer directory written by `probe pool`.
    #[arg(long)]
    pub x: PathBuf,
    /// Embedding file, a pooled directory, or `onehot` for label identity.
    #[arg(long)]
    pub y: String,
    /// Layer of a pooled reference directory (default: its first layer).
    #[arg(long)]
    pub y_layer: Option<String>,
    #[arg(long, default_value = "cca.csv")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.99)]
    pub variance: f64,
    /// Items drawn once and shared by every layer; clamped to what is available.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Scale columns to unit variance after centering.
    #[arg(long)]
    pub standardize: bool,
}

#[derive(Debug, Args)]
pub struct MiArgs {
    #[arg(long)]
    pub x: PathBuf,
    #[arg(long, default_value = "mi.csv")]
    pub out: PathBuf,
    /// Cluster count (default: 500 for words, 50 otherwise).
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Label shuffles for the chance-level MI baseline written to the log.
    #[arg(long, default_value_t = 0)]
    pub permutations: usize,
}

#[derive(Debug, Args)]
pub struct StsArgs {
    /// Pooled utterance-level layer directory.
    #[arg(long)]
    pub x: PathBuf,
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long, default_value = "sts.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct WeightsArgs {
    /// TSV of `task, layer_id, value` rows.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the file's `# mode:` line.
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    /// `[task:]name=L1,L2[@threshold]`; repeatable.
    #[arg(long)]
    pub group: Vec<String>,
    #[arg(long, default_value_t = 0.4)]
    pub threshold: f64,
    #[arg(long, default_value_t = 3)]
    pub top_k: usize,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    pub models: Vec<String>,
    /// Metric names; each is read from `<root>/<model>/<metric>.csv`.
    #[arg(long, value_delimiter = ',', required = true)]
    pub metric: Vec<String>,
    #[arg(long, default_value = "results")]
    pub root: PathBuf,
    #[arg(long, default_value = "reports")]
    pub out: PathBuf,
}
