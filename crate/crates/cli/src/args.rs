use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(name = "attn", version, about = "Target-conditioned sound attenuation")]
pub struct Cli {
    /// overlay file of key=value settings; flags take precedence
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// print the resolved configuration to standard error
    #[arg(long, short, global = true)]
    pub verbose: bool,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub cmd: Cmd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Records,
}

impl std::fmt::Display for Format {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Format::Text => "text",
            Format::Records => "records",
        })
    }
}

impl std::str::FromStr for Format {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        <Format as ValueEnum>::from_str(s, false)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MaskArg {
    None,
    Ones,
    Zeros,
}

impl std::fmt::Display for MaskArg {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MaskArg::None => "none",
            MaskArg::Ones => "ones",
            MaskArg::Zeros => "zeros",
        })
    }
}

impl std::str::FromStr for MaskArg {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        <MaskArg as ValueEnum>::from_str(s, false)
    }
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Attenuate target classes in a WAV file
    Process(ProcessArgs),
    /// Train a model on a class catalog or the synthetic toy corpus
    Train(TrainArgs),
    /// Score a model on annotated mixtures, grouped by target count
    Bench(BenchArgs),
    /// Write the synthetic toy corpus and its manifest
    SynthCorpus(SynthArgs),
    /// Build a class embedding from recordings and store it
    Embed(EmbedArgs),
    /// Run the control service with a live audio driver
    Serve(ServeArgs),
    /// Measure streaming cost and latency
    Profile(ProfileArgs),
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// checkpoint; an untrained toy network seeded by --seed when absent
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// embedding store
    #[arg(long)]
    pub store: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ProcessArgs {
    pub input: PathBuf,
    pub output: PathBuf,
    #[command(flatten)]
    pub m: ModelArgs,
    /// comma-separated class ids, at most three
    #[arg(long)]
    pub targets: Option<String>,
    /// attenuation strength in [0, 1]
    #[arg(long)]
    pub strength: Option<f64>,
    /// one pass over the whole file instead of the streaming pipeline
    #[arg(long)]
    pub offline: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// train on the synthetic toy corpus
    #[arg(long, conflicts_with = "catalog")]
    pub toy: bool,
    /// class manifest (tab-separated class id and WAV path per line)
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<u64>,
    /// output directory for checkpoints, embeddings and logs
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// starting checkpoint; a fresh toy network when absent
    #[arg(long)]
    pub model: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub m: ModelArgs,
    /// shard directory; a seeded toy evaluation set when absent
    #[arg(long)]
    pub shards: Option<PathBuf>,
    /// comma-separated target counts
    #[arg(long)]
    pub conditions: Option<String>,
    /// toy evaluation examples per condition
    #[arg(long)]
    pub examples: Option<usize>,
    /// score precomputed outputs `NNNN.est.wav` instead of running the model
    #[arg(long)]
    pub estimates: Option<PathBuf>,
    /// replace the predicted mask, for pipeline checks
    #[arg(long, value_enum)]
    pub mask_override: Option<MaskArg>,
    /// also write the line-delimited records here
    #[arg(long)]
    pub records_out: Option<PathBuf>,
    /// write the evaluation set as shards here before scoring
    #[arg(long)]
    pub write_shards: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// comma-separated toy classes; all when absent
    #[arg(long)]
    pub classes: Option<String>,
    /// clips per class
    #[arg(long)]
    pub files: Option<usize>,
    /// clip length in seconds
    #[arg(long)]
    pub secs: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[arg(long)]
    pub class_id: Option<String>,
    #[arg(required = true)]
    pub recordings: Vec<PathBuf>,
    #[command(flatten)]
    pub m: ModelArgs,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub m: ModelArgs,
    /// TCP control port on 127.0.0.1
    #[arg(long)]
    pub port: Option<u16>,
    /// WebSocket control port on 127.0.0.1; 0 disables it
    #[arg(long)]
    pub ws_port: Option<u16>,
    /// drafts and profiles; also read from ATTN_DATA_DIR
    #[arg(long)]
    pub data_dir: Option<String>,
    /// WAV played in a loop as the device input; silence when absent
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// stop after this many seconds; run until killed when absent
    #[arg(long)]
    pub duration: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ProfileArgs {
    #[command(flatten)]
    pub m: ModelArgs,
    /// seconds of audio to stream
    #[arg(long)]
    pub duration: Option<f64>,
    /// device sample rate
    #[arg(long)]
    pub rate: Option<u32>,
    #[arg(long)]
    pub targets: Option<String>,
}
