//! `triage`: batch entry points for every pipeline stage.
//!
//! Exit codes: 0 on success, 1 on a domain error (bad file contents,
//! training failure, ...), 2 on a usage error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

const EXIT_CODES: &str = "Exit codes: 0 success, 1 domain error, 2 usage error.";

#[derive(Parser)]
#[command(name = "triage", version, about = "Snippet triage pipeline", after_help = EXIT_CODES)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Expand an inquiry into search queries, one per line.
    #[command(after_help = EXIT_CODES)]
    Expand {
        /// Synonym and template lexicon.
        #[arg(long)]
        lexicon: Option<PathBuf>,
        /// Write queries here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        inquiry: String,
    },
    /// Collect snippets for a query list from fixture-backed engines.
    #[command(after_help = EXIT_CODES)]
    Collect(CollectArgs),
    /// Annotation campaign helpers.
    #[command(subcommand)]
    Annotate(AnnotateCommand),
    /// Stratified train / validation / test split of a paired dataset.
    #[command(after_help = EXIT_CODES)]
    Split(SplitArgs),
    /// Theme and label distribution of a paired dataset.
    #[command(after_help = EXIT_CODES)]
    Report {
        /// Directory with in.tsv and expected.tsv.
        dataset: PathBuf,
    },
    /// Train a classifier bundle.
    #[command(after_help = EXIT_CODES)]
    Train(TrainArgs),
    /// Label snippets with a trained bundle.
    #[command(after_help = EXIT_CODES)]
    Predict(PredictArgs),
    /// Score a submission: prints `F1: 0.dddddd`.
    #[command(after_help = EXIT_CODES)]
    Eval {
        #[arg(long)]
        expected: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the HTTP service.
    #[command(after_help = EXIT_CODES)]
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Write a challenge layout: train/, dev-0/ and test-A/.
    #[command(after_help = EXIT_CODES)]
    ExportBenchmark(ExportArgs),
}

#[derive(Args)]
struct CollectArgs {
    /// Engine as `name=fixture.tsv`; repeat for several engines.
    #[arg(long = "engine", required = true)]
    engines: Vec<String>,
    /// Result pages requested per query and engine.
    #[arg(long)]
    pages: Option<usize>,
    /// Requests per second per engine; 0 disables the limit.
    #[arg(long, default_value_t = 0.0)]
    rate_limit: f64,
    /// Query file, one query per line.
    queries: PathBuf,
    /// Output snippet file (in.tsv format).
    out: PathBuf,
}

#[derive(Subcommand)]
enum AnnotateCommand {
    /// Assign every snippet to two annotators; prints `id, annotator, annotator`.
    #[command(after_help = EXIT_CODES)]
    Assign {
        /// Comma-separated annotator ids.
        #[arg(long, value_delimiter = ',', required = true)]
        annotators: Vec<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        snippets: PathBuf,
    },
    /// Adjudicate an annotation journal with the OR rule.
    #[command(after_help = EXIT_CODES)]
    Adjudicate {
        journal: PathBuf,
        /// Align labels with this in.tsv and write expected.tsv beside it.
        #[arg(long)]
        snippets: Option<PathBuf>,
    },
    /// Observed agreement and Cohen's kappa of an annotation journal.
    #[command(after_help = EXIT_CODES)]
    Agreement { journal: PathBuf },
}

#[derive(Args)]
struct SplitArgs {
    /// Three fractions or integer weights, normalized by their sum.
    #[arg(long, default_value = "0.8,0.1,0.1")]
    ratios: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    input: PathBuf,
    expected: PathBuf,
    /// Receives train/, validation/ and test/.
    outdir: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Training settings (TOML); defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Paired training set directory.
    #[arg(long)]
    train: PathBuf,
    /// Paired validation set directory.
    #[arg(long)]
    validation: PathBuf,
    /// Output bundle directory.
    #[arg(long)]
    model: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// Label file: `1` where the probability reaches 0.5.
    #[arg(long)]
    out: PathBuf,
    /// Also write ranked `id, p, verdict, url` lines here.
    #[arg(long)]
    ranked: Option<PathBuf>,
    #[arg(long, default_value_t = 0.7)]
    red: f64,
    #[arg(long, default_value_t = 0.3)]
    yellow: f64,
    input: PathBuf,
}

#[derive(Args)]
struct ExportArgs {
    /// Train, dev and test fractions or integer weights.
    #[arg(long, default_value = "0.8,0.1,0.1")]
    ratios: String,
    /// Shuffle seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write test-A/expected.tsv.
    #[arg(long)]
    with_test_expected: bool,
    /// Snippet file (in.tsv format).
    input: PathBuf,
    /// Labels aligned with the snippet file.
    expected: PathBuf,
    /// Output directory.
    outdir: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
