//! `ontoprobe`: build ontologies, generate memorizing and reasoning probes,
//! score them against a backend and report metrics.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod files;

/// Exit code for invalid input, manifest mismatches and usage errors.
pub const EXIT_VALIDATION: u8 = 2;
/// Exit code for backend and transport failures.
pub const EXIT_BACKEND: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "ontoprobe", version, about = "Ontology probing for masked language models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Build a graph from class, instance and property dumps.
    Ingest(IngestArgs),
    /// Validate a graph file and write its canonical form.
    BuildGraph(BuildGraphArgs),
    /// Generate the five memorizing subtasks.
    GenMem(GenMemArgs),
    /// Generate reasoning probes over the premise grid.
    GenReason(GenReasonArgs),
    /// Sample pseudoword vectors near the [MASK] embedding.
    Pseudowords(PseudowordArgs),
    /// Score probes against a backend.
    Probe(ProbeArgs),
    /// Compute metrics from probe results.
    Eval(EvalArgs),
    /// Merge metric tables, with macro averages and best-config selection.
    Report(ReportArgs),
    /// Probe over every template variant, mask mode and pooling.
    Sweep(SweepArgs),
    /// Serve the mock oracle over the wire protocol.
    ServeMock(ServeMockArgs),
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    /// Class hierarchy in triple TSV.
    #[arg(long)]
    pub classes: PathBuf,
    /// Instance dump: `type`, `label` and fact lines.
    #[arg(long)]
    pub instances: PathBuf,
    /// Property dumps, one per source vocabulary.
    #[arg(long, required = true, num_args = 1..)]
    pub properties: Vec<PathBuf>,
    #[arg(long)]
    pub seed: u64,
    /// Instances sampled per class.
    #[arg(long, default_value_t = ontoprobe::ingest::DEFAULT_SAMPLE)]
    pub sample_size: usize,
    /// `property<TAB>domain|range<TAB>class` overrides applied after cleansing.
    #[arg(long)]
    pub patch: Option<PathBuf>,
    /// Drop properties left without a domain or range.
    #[arg(long)]
    pub strict: bool,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BuildGraphArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the entailment closure with provenance as TSV.
    #[arg(long)]
    pub provenance: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GenMemArgs {
    #[arg(long)]
    pub graph: PathBuf,
    #[arg(long)]
    pub seed: u64,
    /// Output directory; one `<SUBTASK>.jsonl` per subtask.
    #[arg(long)]
    pub out: PathBuf,
    /// TP golds hold only asserted types, not inherited ones.
    #[arg(long)]
    pub asserted_types_only: bool,
    /// Also write `<SUBTASK>.mc.jsonl` multiple-choice questions.
    #[arg(long)]
    pub mc_choices: Option<usize>,
}

#[derive(Args, Debug)]
pub struct GenReasonArgs {
    #[arg(long)]
    pub graph: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// `all` or cells like `EX-EX,IM-NO`.
    #[arg(long, default_value = "all")]
    pub grid: String,
    /// Comma-separated rules; all six by default.
    #[arg(long)]
    pub rules: Option<String>,
    /// Maximum premise pairs per rule.
    #[arg(long)]
    pub budget: Option<usize>,
    /// Template variant for hypotheses.
    #[arg(long, default_value = "manual3")]
    pub hypothesis_template: String,
    /// Verbalization of explicit premises: manual or soft.
    #[arg(long, default_value = "manual")]
    pub statement_kind: String,
    /// `full` or `sampled:N` (gold plus N random non-golds).
    #[arg(long, default_value = "full")]
    pub candidates: String,
    /// Extra templates (`relation<TAB>kind<TAB>body[<TAB>name]`).
    #[arg(long)]
    pub templates: Option<PathBuf>,
    /// Memorizing probes for every premise, used to classify premises.
    #[arg(long)]
    pub premises_out: Option<PathBuf>,
    /// Template variant for premise probes.
    #[arg(long, default_value = "manual1")]
    pub premise_template: String,
}

#[derive(Args, Debug)]
pub struct PseudowordArgs {
    /// Embedding table (binary); or use --backend to fetch it.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[command(flatten)]
    pub backend: BackendArgs,
    /// Write the fetched embedding table here.
    #[arg(long)]
    pub export_table: Option<PathBuf>,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = ontoprobe::pseudoword::DEFAULT_PAIRS)]
    pub pairs: usize,
    #[arg(long, default_value_t = ontoprobe::pseudoword::DEFAULT_ALPHA)]
    pub alpha: f64,
    /// Sample uniformly within distance d instead of exactly at d.
    #[arg(long)]
    pub max_distance: bool,
    /// Rejection attempts per vector.
    #[arg(long, default_value_t = ontoprobe::pseudoword::DEFAULT_BUDGET)]
    pub budget: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct BackendArgs {
    /// `mock-oracle`, `cmd:<command>` or `tcp:<host:port>`.
    #[arg(long)]
    pub backend: Option<String>,
    /// Requests in flight at once.
    #[arg(long, default_value_t = 4)]
    pub in_flight: usize,
    /// Oracle spec (JSON) for the mock backend; by default it favors golds.
    #[arg(long)]
    pub oracle_spec: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct ScoringArgs {
    #[arg(long, default_value = "multiple")]
    pub mask_mode: String,
    #[arg(long, default_value = "mean")]
    pub pooling: String,
}

#[derive(Args, Debug, Clone)]
pub struct RenderArgs {
    /// Template variant for memorizing probes.
    #[arg(long, default_value = "manual1")]
    pub template: String,
    #[arg(long)]
    pub templates: Option<PathBuf>,
    /// `cased` or `uncased`; defaults to the backend's casing.
    #[arg(long)]
    pub casing: Option<String>,
    /// `manual`, `soft` or `manual:<text>`.
    #[arg(long, default_value = "manual")]
    pub conjunction: String,
    /// `p1-first` or `p2-first`.
    #[arg(long, default_value = "p1-first")]
    pub premise_order: String,
    /// Pseudoword set (JSON); each probe runs once per pair.
    #[arg(long)]
    pub pseudowords: Option<PathBuf>,
    /// `test` or `all` (memorizing inputs).
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Reject inputs generated from a different graph.
    #[arg(long)]
    pub graph: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ProbeArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub backend: BackendArgs,
    #[command(flatten)]
    pub scoring: ScoringArgs,
    #[command(flatten)]
    pub render: RenderArgs,
    /// Progress journal; a rerun skips finished probes.
    #[arg(long)]
    pub journal: Option<PathBuf>,
    /// Retries for transport failures.
    #[arg(long, default_value_t = 2)]
    pub retries: usize,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Probe results or multiple-choice answers.
    #[arg(long)]
    pub results: Option<PathBuf>,
    /// Premise probe results, for reasoning cell assembly.
    #[arg(long)]
    pub premise_results: Option<PathBuf>,
    /// Reasoning instances or choice questions; defaults to the input
    /// recorded in the results header.
    #[arg(long)]
    pub instances: Option<PathBuf>,
    /// Frequency baseline over a memorizing subtask file.
    #[arg(long)]
    pub baseline: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated K values for R@K.
    #[arg(long, default_value = "1,5")]
    pub ks: String,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the report rows as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Metric TSVs written by `eval` or `sweep`.
    #[arg(long, required = true, num_args = 1..)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Keep, per task, only the config with the best MRR.
    #[arg(long)]
    pub best: bool,
    /// Append macro-average rows per config across tasks.
    #[arg(long)]
    pub macro_average: bool,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub backend: BackendArgs,
    #[command(flatten)]
    pub render: RenderArgs,
    /// Template variants to try (memorizing inputs).
    #[arg(long, default_value = "manual1,manual2,manual3")]
    pub templates_variants: String,
    #[arg(long, default_value = "multiple,single")]
    pub mask_modes: String,
    #[arg(long, default_value = "mean,max,first")]
    pub poolings: String,
    #[arg(long, default_value = "1,5")]
    pub ks: String,
}

#[derive(Args, Debug)]
pub struct ServeMockArgs {
    /// Listen on this TCP address instead of stdio.
    #[arg(long)]
    pub listen: Option<String>,
    #[arg(long)]
    pub oracle_spec: Option<PathBuf>,
    /// Favor the golds of this probe input (memorizing or reasoning file).
    #[arg(long)]
    pub favor_golds: Option<PathBuf>,
    #[command(flatten)]
    pub render: RenderArgs,
    /// Embedding table served for `embeddings` requests.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Serve one connection and exit.
    #[arg(long)]
    pub once: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = match config::apply_config(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(EXIT_VALIDATION);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_VALIDATION)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
