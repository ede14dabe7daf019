use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use neurosym::pipeline::{self, Overrides};
use neurosym::synth;

/// Neurosymbolic text-classification pipeline for health-surveillance
/// corpora: weak labelling from lexicons, embeddings and topic models, a
/// Sylvester-equation embedding alignment, and per-category classifiers.
///
/// Stage parameters can be overridden with dotted flags, e.g.
/// `--filter.percentile 75`, `--sedo.delta 1.0`, `--clf.variant brf`.
/// Logging level comes from NEUROSYM_LOG={error,warn,info,debug}.
#[derive(Parser)]
#[command(name = "neurosym", version, about, verbatim_doc_comment)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Parser)]
struct StageArgs {
    /// Pipeline config file (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Master seed; overrides the config file.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the config file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Read, validate and preprocess the raw corpora.
    Ingest(StageArgs),
    /// Train skip-gram embeddings for the source and KB corpora.
    TrainEmbed(StageArgs),
    /// Train the unigram and n-gram topic models.
    TrainTopics(StageArgs),
    /// Detect emerging candidate terms against a baseline window.
    DetectNeologisms(StageArgs),
    /// Fold accepted candidates into the domain lexicon.
    EnrichLexicon(StageArgs),
    /// Drop documents below the relevance threshold.
    Filter(StageArgs),
    /// Extract locations and key phrases for the filtered documents.
    ExtractMeta(StageArgs),
    /// Compute index scores and weak labels per category.
    Score(StageArgs),
    /// Fit the embedding-space alignment from lexicon anchors.
    SedoFit(StageArgs),
    /// Fine-tune the alignment on the external corpus anchors.
    SedoFinetune(StageArgs),
    /// Train per-category classifiers on aligned features.
    TrainClf(StageArgs),
    /// Compare classifiers with and without the alignment.
    Evaluate(StageArgs),
    /// Run the cumulative feature-ablation ladder.
    Ablate(StageArgs),
    /// Evaluate the pretrained vs fine-tuned alignment on the external corpus.
    Triangulate(StageArgs),
    /// Run every stage in order.
    Pipeline(StageArgs),
    /// Generate the bundled synthetic corpora, lexicons and config.
    GenSynth {
        /// Directory to write the data files and config.json into.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 120)]
        docs_per_category: usize,
    },
}

/// Pulls dotted stage overrides like `--filter.percentile 75` out of argv
/// before clap parses the rest.
fn split_dotted_args() -> (Vec<String>, Vec<(String, String)>) {
    let mut plain = Vec::new();
    let mut dotted = Vec::new();
    let mut args = std::env::args().peekable();
    while let Some(arg) = args.next() {
        if let Some(key) = arg.strip_prefix("--") {
            if key.contains('.') {
                if let Some((k, v)) = key.split_once('=') {
                    dotted.push((k.to_string(), v.to_string()));
                } else if let Some(value) = args.next() {
                    dotted.push((key.to_string(), value));
                } else {
                    eprintln!("error: --{key} requires a value");
                    std::process::exit(2);
                }
                continue;
            }
        }
        plain.push(arg);
    }
    (plain, dotted)
}

fn run_stage(name: &str, args: &StageArgs, set: Vec<(String, String)>) -> neurosym::Result<()> {
    let overrides = Overrides { seed: args.seed, out: args.out.clone(), set };
    let cfg = pipeline::load_config(&args.config, &overrides)?;
    pipeline::run(name, cfg)
}

fn gen_synth(out: &PathBuf, seed: u64, docs_per_category: usize) -> neurosym::Result<()> {
    let config = synth::write_bundled_data(out, seed, docs_per_category)?;
    println!("wrote synthetic data to {}; config at {}", out.display(), config.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("NEUROSYM_LOG", "warn"))
        .init();
    let (plain, dotted) = split_dotted_args();
    let cli = Cli::parse_from(plain);
    let result = match &cli.command {
        Command::Ingest(a) => run_stage("ingest", a, dotted),
        Command::TrainEmbed(a) => run_stage("train-embed", a, dotted),
        Command::TrainTopics(a) => run_stage("train-topics", a, dotted),
        Command::DetectNeologisms(a) => run_stage("detect-neologisms", a, dotted),
        Command::EnrichLexicon(a) => run_stage("enrich-lexicon", a, dotted),
        Command::Filter(a) => run_stage("filter", a, dotted),
        Command::ExtractMeta(a) => run_stage("extract-meta", a, dotted),
        Command::Score(a) => run_stage("score", a, dotted),
        Command::SedoFit(a) => run_stage("sedo-fit", a, dotted),
        Command::SedoFinetune(a) => run_stage("sedo-finetune", a, dotted),
        Command::TrainClf(a) => run_stage("train-clf", a, dotted),
        Command::Evaluate(a) => run_stage("evaluate", a, dotted),
        Command::Ablate(a) => run_stage("ablate", a, dotted),
        Command::Triangulate(a) => run_stage("triangulate", a, dotted),
        Command::Pipeline(a) => run_stage("pipeline", a, dotted),
        Command::GenSynth { out, seed, docs_per_category } => {
            gen_synth(out, *seed, *docs_per_category)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
