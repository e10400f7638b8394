use std::path::PathBuf;

use clap::{ArgAction, Args, Parser, Subcommand};
use hbtm_core::corpus::InputFormat;
use hbtm_core::topics::ForestMode;

#[derive(Debug, Parser)]
#[command(name = "hbtm", version, about = "Network Hawkes binomial topic model")]
pub struct Cli {
    /// JSON config: EM settings for `fit`, the full pipeline config for `pipeline`.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Worker threads for the parallel stages (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Repeat for more log output.
    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Corpus preparation.
    #[command(subcommand)]
    Corpus(CorpusCommand),
    /// Fit the model to marked events by EM.
    Fit(FitArgs),
    /// Simulate events from fitted or hand-written parameters.
    Simulate(SimulateArgs),
    /// Topic clusters and timeline from branching probabilities.
    Topics(TopicsArgs),
    /// Influence network, degree rankings and activity decomposition.
    Network(NetworkArgs),
    /// UCI coherence of cluster keywords.
    Coherence(CoherenceArgs),
    /// Run every stage from raw posts to exported artifacts.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Subcommand)]
pub enum CorpusCommand {
    /// Read raw posts and tokenize them.
    Ingest(IngestArgs),
    /// Grow a keyword list and keep the posts that match it.
    Expand(ExpandArgs),
    /// Build the dictionary, node roster and marked events.
    Marks(MarksArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Input format; guessed from the file extension when omitted.
    #[arg(long)]
    pub format: Option<InputFormat>,
    /// Day zero of the time axis (YYYY-MM-DD).
    #[arg(long)]
    pub epoch: String,
    /// Stop-word file, one word per line; a built-in English list otherwise.
    #[arg(long)]
    pub stopwords: Option<PathBuf>,
    /// Tokenized posts (JSONL).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExpandArgs {
    /// Tokenized posts (JSONL).
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    pub seeds: Vec<String>,
    #[arg(long, default_value_t = 10.0)]
    pub ratio: f64,
    #[arg(long, default_value_t = 5)]
    pub min_count: usize,
    #[arg(long, default_value_t = 5)]
    pub max_iter: usize,
    /// Matching posts (JSONL).
    #[arg(long)]
    pub out: PathBuf,
    /// Expanded keyword list, one per line.
    #[arg(long)]
    pub keywords: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MarksArgs {
    /// Tokenized posts (JSONL).
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 425)]
    pub dict_size: usize,
    /// Reuse this dictionary instead of building one.
    #[arg(long)]
    pub dict: Option<PathBuf>,
    /// Reuse this node roster instead of building one.
    #[arg(long)]
    pub nodes: Option<PathBuf>,
    /// Marked events (JSONL).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "dictionary.txt")]
    pub dict_out: PathBuf,
    #[arg(long, default_value = "nodes.jsonl")]
    pub nodes_out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub events: PathBuf,
    /// Dictionary file; the mark length is used when omitted.
    #[arg(long)]
    pub dict: Option<PathBuf>,
    /// Node roster; the largest node index is used when omitted.
    #[arg(long)]
    pub nodes: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub branching: Option<PathBuf>,
    /// Log-likelihood trace and convergence summary (JSON).
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub params: PathBuf,
    /// End of the simulation window; defaults to the end of the background window.
    #[arg(long)]
    pub t_end: Option<f64>,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Simulated marked events (JSONL).
    #[arg(long)]
    pub out: PathBuf,
    /// Ground-truth parentage as `{"child": i, "parent": j|null}` lines.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Also render the events as raw posts (JSONL) that `corpus ingest` accepts.
    #[arg(long, requires_all = ["dict", "nodes"])]
    pub posts: Option<PathBuf>,
    /// Words used to render marks.
    #[arg(long)]
    pub dict: Option<PathBuf>,
    /// Roster naming the nodes of rendered posts.
    #[arg(long)]
    pub nodes: Option<PathBuf>,
    #[arg(long, default_value = "2020-01-01")]
    pub epoch: String,
}

#[derive(Debug, Args)]
pub struct TopicsArgs {
    #[arg(long)]
    pub branching: PathBuf,
    #[arg(long)]
    pub events: PathBuf,
    #[arg(long)]
    pub dict: PathBuf,
    #[arg(long)]
    pub nodes: Option<PathBuf>,
    #[arg(long, default_value = "sample")]
    pub mode: ForestMode,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 11)]
    pub min_size: usize,
    #[arg(long, default_value_t = 8)]
    pub top_k: usize,
    /// Node attribute summarized per cluster.
    #[arg(long, default_value = "party")]
    pub attr: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub timeline: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct NetworkArgs {
    #[arg(long)]
    pub branching: PathBuf,
    #[arg(long)]
    pub events: PathBuf,
    #[arg(long)]
    pub nodes: Option<PathBuf>,
    /// Fitted parameters, for the θ-based influence column.
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(long, default_value_t = hbtm_core::influence::DEFAULT_EDGE_THRESHOLD)]
    pub threshold: f64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub dot: Option<PathBuf>,
    /// Pruned edge list (CSV).
    #[arg(long)]
    pub edges: Option<PathBuf>,
    #[arg(long)]
    pub rankings: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub top_k: usize,
    /// Spontaneous/triggering decomposition per node (CSV).
    #[arg(long)]
    pub activity: Option<PathBuf>,
    /// Node attribute used to color the DOT graph.
    #[arg(long, default_value = "party")]
    pub attr: String,
}

#[derive(Debug, Args)]
pub struct CoherenceArgs {
    #[arg(long)]
    pub clusters: PathBuf,
    /// Marked events; their word sets are the reference documents.
    #[arg(long)]
    pub events: PathBuf,
    #[arg(long)]
    pub dict: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub eps: f64,
    /// Report file (JSON); printed to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    /// Overrides `out_dir` from the config.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}
