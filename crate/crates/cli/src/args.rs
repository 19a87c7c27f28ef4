use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "histoner", version, about = "Historical-text NER toolkit: corpus preparation, subword vocabularies, pretraining data, tagging and evaluation")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args, Default)]
pub struct Global {
    /// Seed for commands that draw random numbers (mlm build, tagger train)
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for grid searches
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Directory that relative output paths are resolved against; harness
    /// commands write their ledger and models here
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
    /// Only log errors
    #[arg(long, short, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// OCR corpus preparation
    #[command(subcommand)]
    Corpus(CorpusCmd),
    /// Subword vocabulary training and statistics
    #[command(subcommand)]
    Vocab(VocabCmd),
    /// Masked-language-model pretraining data
    #[command(subcommand)]
    Mlm(MlmCmd),
    /// Parse NER datasets and report their size
    Parse(ParseArgs),
    /// Score predictions against gold annotations
    Score(ScoreArgs),
    /// Bucketed F1 by entity and sentence attributes
    AttrEval(AttrEvalArgs),
    /// Train or apply a sequence tagger
    #[command(subcommand)]
    Tagger(TaggerCmd),
    /// Hyperparameter grids, single vs. one-model comparison, two-stage fine-tuning
    #[command(subcommand)]
    Harness(HarnessCmd),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DocFormat {
    /// JSON Lines documents
    Jsonl,
    /// Directory of plain-text files, one document each
    Plaintext,
}

#[derive(Debug, Clone, Args)]
pub struct DocInput {
    /// Input documents (JSON Lines file or plain-text directory)
    #[arg(long, short)]
    pub input: PathBuf,
    /// Input format; inferred from the path when omitted
    #[arg(long, value_enum)]
    pub format: Option<DocFormat>,
    /// Accepted language codes; documents in other languages are rejected
    #[arg(long = "lang", value_delimiter = ',')]
    pub languages: Vec<String>,
    /// Language of plain-text documents
    #[arg(long, default_value = "und")]
    pub plaintext_language: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Unit {
    Document,
    Word,
}

#[derive(Debug, Subcommand)]
pub enum CorpusCmd {
    /// Drop low-confidence OCR text
    Filter {
        #[command(flatten)]
        input: DocInput,
        /// Confidence threshold in [0, 1]
        #[arg(long, value_parser = unit_interval)]
        threshold: f64,
        /// Keep or drop whole documents, or drop single words
        #[arg(long, value_enum, default_value = "document")]
        unit: Unit,
        /// Filtered documents (JSON Lines)
        #[arg(long, short)]
        output: PathBuf,
        /// Write the byte report as JSON here as well
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Characters per publication year
    Stats {
        #[command(flatten)]
        input: DocInput,
        /// Write the `year,chars` CSV here instead of stdout
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Repeat a corpus until it reaches a target size
    Upsample {
        #[command(flatten)]
        input: DocInput,
        /// Target size in bytes
        #[arg(long)]
        target_bytes: u64,
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Replace the long s with a plain s
    NormalizeLongS {
        /// JSON Lines documents, or any other text file
        #[arg(long, short)]
        input: PathBuf,
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Per-language byte shares across corpora
    Balance {
        /// One or more JSON Lines corpora
        #[arg(long, short, required = true, num_args = 1..)]
        input: Vec<PathBuf>,
        /// Flag languages deviating from the mean size by more than this ratio
        #[arg(long, default_value_t = 0.5)]
        max_deviation: f64,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum VocabCmd {
    /// Train a WordPiece vocabulary
    Train {
        /// Text sources: JSON Lines documents, plain-text files or directories
        #[arg(long, short, required = true, num_args = 1..)]
        input: Vec<PathBuf>,
        /// Vocabulary size including special tokens
        #[arg(long, default_value_t = 32_000)]
        size: usize,
        /// Minimum pair frequency for a merge
        #[arg(long, default_value_t = 2)]
        min_frequency: u64,
        #[arg(long)]
        normalize_long_s: bool,
        /// Vocabulary file, one token per line
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Subword fertility and unknown-token share per language
    Stats {
        #[arg(long)]
        vocab: PathBuf,
        /// NER datasets whose tokens are measured
        #[arg(long, short, required = true, num_args = 1..)]
        data: Vec<PathBuf>,
        #[command(flatten)]
        dataset: DatasetOpts,
        /// Words longer than this become a single unknown token; 0 disables the cap
        #[arg(long, default_value_t = 100)]
        max_word_chars: usize,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum MlmCmd {
    /// Build masked-language-model instances and write them as shards
    Build {
        /// JSON Lines documents; each line of a text is one sentence
        #[arg(long, short)]
        input: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long, default_value_t = 512)]
        seq_len: usize,
        #[arg(long, default_value_t = 75)]
        max_preds: usize,
        #[arg(long, default_value_t = 0.15, value_parser = unit_interval)]
        mlm_prob: f64,
        #[arg(long, default_value_t = 5)]
        dupe: usize,
        #[arg(long, default_value_t = 0.1, value_parser = unit_interval)]
        short_seq_prob: f64,
        /// Mask all pieces of a word together
        #[arg(long)]
        whole_word: bool,
        /// Keep instances in generation order
        #[arg(long)]
        no_shuffle: bool,
        #[arg(long)]
        normalize_long_s: bool,
        /// Maximum shard size in bytes
        #[arg(long, default_value_t = 64 << 20)]
        chunk_bytes: usize,
        /// Language code used in shard names
        #[arg(long = "lang", default_value = "mixed")]
        language: String,
        /// Shard directory
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Subtokens seen and epochs over the corpus for a pretraining run
    Budget {
        #[arg(long)]
        steps: u64,
        #[arg(long)]
        batch_size: u64,
        #[arg(long, default_value_t = 512)]
        seq_len: u64,
        /// Corpus size in subtokens
        #[arg(long)]
        corpus_subtokens: u64,
    },
}

#[derive(Debug, Clone, Args)]
pub struct DatasetOpts {
    /// Label column of HIPE files
    #[arg(long, default_value = histoner_core::ner::DEFAULT_LABEL_COLUMN)]
    pub column: String,
    /// Language of files that do not declare one
    #[arg(long = "default-lang", default_value = "und")]
    pub default_language: String,
    /// Replace the long s while reading tokens
    #[arg(long)]
    pub normalize_long_s: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DatasetOut {
    Jsonl,
    Tsv,
}

#[derive(Debug, Args)]
pub struct ParseArgs {
    /// HIPE TSV, CoNLL or JSON Lines datasets; several are merged
    #[arg(long, short, required = true, num_args = 1..)]
    pub input: Vec<PathBuf>,
    #[command(flatten)]
    pub dataset: DatasetOpts,
    /// Write the parsed sentences here
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "jsonl")]
    pub to: DatasetOut,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RegimeArg {
    Strict,
    Fuzzy,
    Both,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub gold: PathBuf,
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long, value_enum, default_value = "both")]
    pub regime: RegimeArg,
    #[command(flatten)]
    pub dataset: DatasetOpts,
    /// Write the CSV table here as well
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// Write the full report as JSON
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LevelArg {
    Bucket,
    Raw,
}

#[derive(Debug, Args)]
pub struct AttrEvalArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub gold: PathBuf,
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long, default_value_t = histoner_core::attr::DEFAULT_BUCKETS)]
    pub buckets: usize,
    /// Attribute codes (tCon, eCon, tFre, eFre, eLen, sLen, oDen, eDen); all when omitted
    #[arg(long, value_delimiter = ',')]
    pub attributes: Vec<String>,
    /// Correlate bucket means with bucket F1, or raw values with per-unit hits
    #[arg(long, value_enum, default_value = "bucket")]
    pub level: LevelArg,
    #[command(flatten)]
    pub dataset: DatasetOpts,
    /// Write the bucket CSV here as well
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// Write correlation summaries as JSON
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum TaggerCmd {
    /// Train a tagger, keeping the epoch with the best dev F1
    Train(TaggerTrainArgs),
    /// Tag a dataset with a trained model
    Predict {
        #[arg(long, short)]
        model: PathBuf,
        #[arg(long, short)]
        input: PathBuf,
        #[command(flatten)]
        dataset: DatasetOpts,
        /// Predicted dataset
        #[arg(long, short)]
        output: PathBuf,
        #[arg(long, value_enum, default_value = "tsv")]
        to: DatasetOut,
    },
}

#[derive(Debug, Args)]
pub struct TaggerTrainArgs {
    /// Experiment config (TOML or JSON) supplying defaults
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Training data; defaults to every train split in the config
    #[arg(long, num_args = 1..)]
    pub train: Vec<PathBuf>,
    /// Dev data; defaults to every dev split in the config
    #[arg(long, num_args = 1..)]
    pub dev: Vec<PathBuf>,
    /// Vocabulary; defaults to the config's
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Feature hash space is 2^bits slots
    #[arg(long)]
    pub hash_bits: Option<u32>,
    /// Initialize from this model
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[command(flatten)]
    pub dataset: DatasetOpts,
    /// Model file
    #[arg(long, short)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct HarnessArgs {
    /// Experiment config (TOML or JSON)
    #[arg(long, short)]
    pub config: PathBuf,
    /// Reuse completed runs recorded in the output directory
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Subcommand)]
pub enum HarnessCmd {
    /// Search the `grid` of the config on one language or on all languages merged
    Grid {
        #[command(flatten)]
        args: HarnessArgs,
        /// Language to search; all languages merged when omitted
        #[arg(long = "lang")]
        language: Option<String>,
    },
    /// Per-language models against one model over all languages
    Compare {
        #[command(flatten)]
        args: HarnessArgs,
    },
    /// Multilingual stage 1 followed by per-language stage 2
    Multistage {
        #[command(flatten)]
        args: HarnessArgs,
    },
}

fn unit_interval(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} is not in [0, 1]"))
    }
}
