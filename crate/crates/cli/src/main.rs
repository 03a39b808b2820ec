use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use dropforge::annotator::{ablation_configs, corpus_stats, CorpusStats};
use dropforge::decoder::HeadReranker;
use dropforge::harness::{gen_encoder_output, mock_head_weights, oracle_decode, MockConfig, DEFAULT_PRIORITY};
use dropforge::ingest::{parse_drop_dataset, tokenize_dataset};
use dropforge::metrics::evaluate_dataset;
use dropforge::store::TensorStore;
use dropforge::{
    annotate_example, decode_answer, Annotation, AnnotationKind, AnswerPrediction, DecodeConfig, EncoderOutput,
    HeadOutputs, HeadWeights, TokenizedExample, Tolerance,
};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(name = "dropforge", version, about = "Decode, annotate and score DROP-style answers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tokenize a DROP json file into one example per line.
    Ingest {
        input: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[arg(long, default_value_t = dropforge::ingest::DEFAULT_MAX_LEN)]
        max_len: usize,
    },
    /// Search span, arithmetic, count and negation annotations.
    Annotate {
        input: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Coverage table over an annotation file.
    Stats {
        input: PathBuf,
        /// Comma-separated kinds; without it every cumulative kind set is shown.
        #[arg(long, value_delimiter = ',')]
        kinds: Vec<AnnotationKind>,
    },
    /// Predict answers from weights, mock tensors or oracle distributions.
    Decode(DecodeArgs),
    /// Score predictions against a DROP json file.
    Eval { predictions: PathBuf, dataset: PathBuf },
    /// Run the bundled end-to-end check and the property suite.
    Selftest,
    /// Write deterministic mock head weights.
    GenWeights {
        output: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 32)]
        dim: usize,
    },
}

#[derive(Args)]
struct DecodeArgs {
    input: PathBuf,
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Head weight directory.
    #[arg(long, conflicts_with = "oracle")]
    weights: Option<PathBuf>,
    /// Directory holding one encoder tensor directory per example id.
    #[arg(long, requires = "weights")]
    reps: Option<PathBuf>,
    /// Seed of the mock encoder (and of mock weights when no weights are given).
    #[arg(long)]
    mock_seed: Option<u64>,
    /// Annotation file; decodes from oracle distributions.
    #[arg(long)]
    oracle: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    #[arg(long, default_value_t = 0.02)]
    noise: f64,
    /// Oracle preference among coexisting annotation kinds.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_PRIORITY)]
    priority: Vec<AnnotationKind>,
    #[arg(long, default_value_t = 3)]
    beam: usize,
    #[arg(long, default_value_t = 4)]
    max_signed: usize,
    #[arg(long, default_value_t = 8)]
    max_spans: usize,
    #[arg(long, default_value_t = 20)]
    top_k: usize,
    #[arg(long, default_value_t = 10)]
    max_span_len: usize,
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 1))?);
    }
    Ok(out)
}

fn write_jsonl<T: Serialize>(path: Option<&Path>, items: &[T]) -> Result<()> {
    let sink: Box<dyn Write> = match path {
        Some(p) => Box::new(File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => Box::new(io::stdout().lock()),
    };
    let mut w = BufWriter::new(sink);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn ingest(input: &Path, output: Option<&Path>, max_len: usize) -> Result<()> {
    let bytes = std::fs::read(input).with_context(|| format!("reading {}", input.display()))?;
    let dataset = parse_drop_dataset(&bytes)?;
    let examples = tokenize_dataset(&dataset, max_len)?;
    log::info!(
        "{} examples, {} questions without answers skipped",
        examples.len(),
        dataset.skipped
    );
    write_jsonl(output, &examples)
}

fn annotate(input: &Path, output: Option<&Path>) -> Result<()> {
    let examples: Vec<TokenizedExample> = read_jsonl(input)?;
    let tol = Tolerance::default();
    let anns: Vec<Annotation> = examples.par_iter().map(|ex| annotate_example(ex, tol)).collect();
    write_jsonl(output, &anns)
}

fn stats_row(label: &str, s: &CorpusStats) -> String {
    format!("{label:<28} {:>9} {:>9} {:>7.1}", s.skipped, s.kept, s.ratio)
}

fn stats(input: &Path, kinds: &[AnnotationKind]) -> Result<()> {
    let anns: Vec<Annotation> = read_jsonl(input)?;
    let configs = if kinds.is_empty() {
        ablation_configs()
    } else {
        vec![kinds.to_vec()]
    };
    let mut out = io::stdout().lock();
    writeln!(out, "{:<28} {:>9} {:>9} {:>7}", "kinds", "Skipped", "Kept", "Ratio")?;
    for config in configs {
        let label: Vec<String> = config.iter().map(ToString::to_string).collect();
        writeln!(out, "{}", stats_row(&label.join("+"), &corpus_stats(&anns, &config)))?;
    }
    Ok(())
}

enum Source {
    Oracle(HashMap<String, Annotation>),
    Model {
        weights: Box<HeadWeights>,
        reps: Option<PathBuf>,
        mock: MockConfig,
    },
}

fn encoder_for(ex: &TokenizedExample, reps: Option<&Path>, mock: &MockConfig) -> Result<EncoderOutput> {
    match reps {
        Some(dir) => {
            let store = TensorStore::load(dir.join(&ex.example_id))
                .with_context(|| format!("encoder tensors for {}", ex.example_id))?;
            Ok(EncoderOutput::from_store(&store)?)
        }
        None => Ok(gen_encoder_output(ex, mock)?),
    }
}

fn decode_one(
    ex: &TokenizedExample,
    source: &Source,
    args: &DecodeArgs,
    cfg: &DecodeConfig,
) -> Result<AnswerPrediction> {
    match source {
        Source::Oracle(anns) => {
            let empty = Annotation::default();
            let ann = anns.get(&ex.example_id).unwrap_or(&empty);
            let mock = MockConfig {
                noise_scale: args.noise,
                dim: args.dim,
                ..MockConfig::default()
            };
            Ok(oracle_decode(ex, ann, &mock, &args.priority, cfg))
        }
        Source::Model { weights, reps, mock } => {
            let enc = encoder_for(ex, reps.as_deref(), mock)?;
            let heads = HeadOutputs::compute(&enc, &ex.numbers, weights)
                .with_context(|| format!("heads for {}", ex.example_id))?;
            let reranker = HeadReranker {
                outputs: &heads,
                weights,
                max_signed: cfg.max_signed,
            };
            Ok(decode_answer(ex, &heads, &reranker, cfg))
        }
    }
}

fn decode(args: &DecodeArgs) -> Result<()> {
    let cfg = DecodeConfig {
        beam: args.beam,
        max_signed: args.max_signed,
        max_spans: args.max_spans,
        top_k: args.top_k,
        max_span_len: args.max_span_len,
    };
    cfg.validate()?;
    let examples: Vec<TokenizedExample> = read_jsonl(&args.input)?;
    let source = if let Some(path) = &args.oracle {
        let anns: Vec<Annotation> = read_jsonl(path)?;
        Source::Oracle(anns.into_iter().map(|a| (a.example_id.clone(), a)).collect())
    } else {
        let seed = args.mock_seed.unwrap_or(0);
        let weights = match &args.weights {
            Some(dir) => HeadWeights::load(dir).with_context(|| format!("loading weights from {}", dir.display()))?,
            None if args.mock_seed.is_some() => mock_head_weights(seed, args.dim)?,
            None => bail!("decode needs one of --weights, --mock-seed or --oracle"),
        };
        let mock = MockConfig {
            seed,
            dim: weights.dim(),
            ..MockConfig::default()
        };
        mock.validate()?;
        Source::Model {
            weights: Box::new(weights),
            reps: args.reps.clone(),
            mock,
        }
    };
    let preds = examples
        .par_iter()
        .map(|ex| decode_one(ex, &source, args, &cfg))
        .collect::<Result<Vec<_>>>()?;
    write_jsonl(args.output.as_deref(), &preds)
}

#[derive(Deserialize)]
struct PredictionLine {
    example_id: String,
    answer_texts: Vec<String>,
}

fn eval(predictions: &Path, dataset: &Path) -> Result<()> {
    let preds: Vec<PredictionLine> = read_jsonl(predictions)?;
    let bytes = std::fs::read(dataset).with_context(|| format!("reading {}", dataset.display()))?;
    let dataset = parse_drop_dataset(&bytes)?;
    let map: HashMap<String, Vec<String>> = preds.into_iter().map(|p| (p.example_id, p.answer_texts)).collect();
    let report = evaluate_dataset(&dataset, &map);
    writeln!(io::stdout(), "{}", serde_json::to_string_pretty(&report)?)?;
    Ok(())
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("DROPFORGE_THREADS") {
        let n: usize = v.parse().with_context(|| format!("DROPFORGE_THREADS={v}"))?;
        if n == 0 {
            bail!("DROPFORGE_THREADS must be positive");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    configure_threads()?;
    match cli.command {
        Command::Ingest { input, output, max_len } => ingest(&input, output.as_deref(), max_len)?,
        Command::Annotate { input, output } => annotate(&input, output.as_deref())?,
        Command::Stats { input, kinds } => stats(&input, &kinds)?,
        Command::Decode(args) => decode(&args)?,
        Command::Eval { predictions, dataset } => eval(&predictions, &dataset)?,
        Command::Selftest => {
            let report = dropforge::harness::selftest()?;
            write!(io::stdout(), "{}", report.render())?;
            return Ok(report.passed);
        }
        Command::GenWeights { output, seed, dim } => mock_head_weights(seed, dim)?.save(&output)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
