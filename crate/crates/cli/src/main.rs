use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use cotree::annotator::CacheMode;
use cotree::selector::Strategy;

mod commands;

#[derive(Parser)]
#[command(name = "cotree", version, about = "Reasoning-tree analysis of long chain-of-thought transcripts")]
struct Cli {
    /// Pipeline config (JSON); flags given on the command line take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split transcripts into thoughts.
    Segment {
        /// Built-in profile name or path to a profile JSON file.
        #[arg(long)]
        profile: Option<String>,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Annotate segmented (or raw) transcripts with sketch steps and thought functions.
    Annotate {
        #[arg(long)]
        cache: Option<PathBuf>,
        #[arg(long, value_parser = parse_mode)]
        mode: CacheMode,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Separator profile used for raw transcript records.
        #[arg(long)]
        profile: Option<String>,
    },
    /// Build one reasoning tree per annotated document.
    BuildTree {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Encode trees as graph samples.
    Featurize {
        #[arg(long)]
        trees: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the tree classifier on a stratified train/test split.
    Train {
        #[arg(long)]
        graphs: PathBuf,
        #[arg(long, default_value = "4:1")]
        split: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Repeat training with seeds seed, seed+1, ...; the first run is saved.
        #[arg(long, default_value_t = 1)]
        runs: usize,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Accuracy of a checkpoint on labeled graphs.
    Eval {
        #[arg(long)]
        graphs: PathBuf,
        #[arg(long)]
        model: PathBuf,
    },
    /// Score a tree document (or every document in a directory).
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        tree: PathBuf,
    },
    /// Edge importances for a tree, written into its edges.
    Explain {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        tree: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Class to explain; defaults to the predicted class.
        #[arg(long)]
        target: Option<u8>,
    },
    /// Run the error-pattern detectors over a directory of trees.
    DetectPatterns {
        #[arg(long)]
        trees: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Best-of-N selection over candidate responses.
    Bestofn {
        #[arg(long, value_parser = parse_strategy)]
        strategy: Strategy,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        candidates: PathBuf,
        /// Use this external score column instead of the classifier.
        #[arg(long)]
        score_key: Option<String>,
    },
    /// Render a tree as Graphviz DOT or standalone HTML (by output extension).
    Viz {
        #[arg(long)]
        tree: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write synthetic trees with planted error patterns.
    GeneratePlanted {
        #[arg(long, default_value_t = 100)]
        n_per_class: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_mode(s: &str) -> Result<CacheMode, String> {
    s.parse().map_err(|e: cotree::Error| e.to_string())
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    s.parse().map_err(|e: cotree::Error| e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut detail = serde_json::json!({
                "kind": e.kind(),
                "message": e.to_string(),
            });
            if let cotree::Error::Jsonl { line, .. } = e.root() {
                detail["line"] = (*line).into();
            }
            eprintln!("{}", serde_json::json!({ "error": detail }));
            ExitCode::FAILURE
        }
    }
}
