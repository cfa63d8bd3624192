//! `agcnn`: train, evaluate, cross-validate and sweep attention-gated text CNNs.

mod error;
mod overrides;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use agcnn_core::data::{encode_corpus, load_corpus, load_pretrained, CorpusFormat, LabeledCorpus};
use agcnn_core::model::{evaluate, fit_with, load_checkpoint, save_checkpoint, EmbeddingMode, HyperParams};
use agcnn_core::sweep::{
    ablation_ladder, emit_report, emit_timings, load_report, replicate, run_sweep, verify_report, Aggregate, Axis,
    Dataset, ReportFormat, SweepReport, SweepSpec,
};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::Value;

use error::{CliError, CliResult, Kind};

const DATA_DIR_VAR: &str = "AGCNN_DATA_DIR";

#[derive(Debug, Parser)]
#[command(name = "agcnn", version, about = "Attention-gated CNN sentence classifier and sensitivity-analysis harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train on a whole corpus and write a checkpoint plus a training log.
    Train(Common),
    /// Evaluate a checkpoint on a corpus.
    Eval(Common),
    /// k-fold cross-validation with replication.
    Cv(Common),
    /// Run a one-factor-at-a-time sweep spec.
    Sweep(Common),
    /// Run a window-combination grid spec.
    Grid(Common),
    /// Run the ablation ladder from a spec or a config.
    Ablate(Common),
    /// Re-render a JSON sweep report as CSV after re-verifying it.
    Report(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// HyperParams JSON file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset file (LABEL<TAB>TEXT). Relative paths resolve against $AGCNN_DATA_DIR.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// How corpus text is tokenized.
    #[arg(long, value_enum, default_value = "clean")]
    corpus_format: FormatArg,
    /// Pre-trained vector file for static embeddings.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for sweep, grid and ablate.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    workers: u64,
    /// Dotted `key=value` override applied after loading the config (or spec).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Sweep spec JSON file.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Checkpoint file: written by train, read by eval.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// JSON report to re-render.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Cross-validation folds.
    #[arg(long, default_value_t = 10)]
    folds: usize,
    /// Replications per configuration.
    #[arg(long, default_value_t = 1)]
    replications: usize,
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
enum FormatArg {
    Clean,
    CleanPreserveCase,
    Tokenized,
}

impl From<FormatArg> for CorpusFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Clean => CorpusFormat::Clean,
            FormatArg::CleanPreserveCase => CorpusFormat::CleanPreserveCase,
            FormatArg::Tokenized => CorpusFormat::Tokenized,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("invalid arguments");
            let first = first.trim_start_matches("error: ");
            eprintln!("{}", CliError::usage(first));
            return ExitCode::from(Kind::Usage.exit_code() as u8);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.kind.exit_code() as u8)
        }
    }
}

fn dispatch(command: Command) -> CliResult<()> {
    match command {
        Command::Train(c) => train(&c),
        Command::Eval(c) => eval(&c),
        Command::Cv(c) => cv(&c),
        Command::Sweep(c) => sweep(&c, None),
        Command::Grid(c) => sweep(&c, Some(&[Axis::ConvWindowCombo, Axis::AttnWindowCombo])),
        Command::Ablate(c) => ablate(&c),
        Command::Report(c) => report(&c),
    }
}

// ---------------------------------------------------------------------------
// Inputs

fn data_dir() -> Option<PathBuf> {
    std::env::var_os(DATA_DIR_VAR).map(PathBuf::from)
}

fn resolve(path: &Path) -> PathBuf {
    SweepSpec::resolve(&path.to_string_lossy(), data_dir().as_deref())
}

fn read_json(path: &Path) -> CliResult<Value> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

/// The config file (or defaults) with overrides and `--seed` applied, validated.
fn load_config(c: &Common) -> CliResult<HyperParams> {
    let mut doc = match &c.config {
        Some(p) => read_json(p)?,
        None => serde_json::to_value(HyperParams::default()).expect("defaults serialize"),
    };
    let template = serde_json::to_value(HyperParams::default()).expect("defaults serialize");
    // Fill keys the file leaves to defaults so they can be overridden too.
    if let (Value::Object(d), Value::Object(t)) = (&mut doc, template) {
        for (k, v) in t {
            d.entry(k).or_insert(v);
        }
    }
    overrides::apply_all(&mut doc, &c.overrides)?;
    let mut hp: HyperParams = serde_json::from_value(doc).map_err(|e| CliError::config(e.to_string()))?;
    if let Some(seed) = c.seed {
        hp.seed = seed;
    }
    hp.validate()?;
    Ok(hp)
}

fn require<'a>(value: &'a Option<PathBuf>, flag: &str) -> CliResult<&'a PathBuf> {
    value.as_ref().ok_or_else(|| CliError::usage(format!("--{flag} is required")))
}

/// Loads the corpus and, when `vectors` names a file and dimension, the
/// pre-trained embeddings for its vocabulary.
fn load_dataset(corpus: &Path, format: CorpusFormat, vectors: Option<(&Path, usize)>, seed: u64) -> CliResult<Dataset> {
    let corpus: LabeledCorpus = load_corpus(&resolve(corpus), format)?;
    let data = Dataset::new(corpus);
    match vectors {
        Some((path, dim)) => {
            let pre = load_pretrained(&resolve(path), &data.vocab, dim, seed)?;
            println!("embeddings: {:.1}% of the vocabulary covered", 100.0 * pre.coverage());
            Ok(data.with_pretrained(pre))
        }
        None => Ok(data),
    }
}

/// `--embeddings` paired with the embedding size, when the config needs them.
fn vectors_for<'a>(c: &'a Common, hp: &HyperParams) -> CliResult<Option<(&'a Path, usize)>> {
    match (&c.embeddings, hp.embedding_mode) {
        (Some(p), EmbeddingMode::Static) => Ok(Some((p.as_path(), hp.embedding_dim))),
        (None, EmbeddingMode::Static) => Err(CliError::usage("static embeddings need --embeddings")),
        _ => Ok(None),
    }
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// Writes `text` next to its final path and renames it into place.
fn write_atomic(path: &Path, text: &str) -> CliResult<()> {
    let mut tmp = path.as_os_str().to_os_string();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, text).map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    write_atomic(path, &text)
}

// ---------------------------------------------------------------------------
// Commands

#[derive(Serialize)]
struct TrainLog<'a> {
    corpus: String,
    examples: usize,
    hyperparams: &'a HyperParams,
    epochs: Vec<agcnn_core::model::EpochLog>,
    wall_seconds: f64,
}

fn train(c: &Common) -> CliResult<()> {
    let hp = load_config(c)?;
    let data = load_dataset(require(&c.corpus, "corpus")?, c.corpus_format.into(), vectors_for(c, &hp)?, hp.seed)?;
    let mut model = data.model(&hp, hp.seed)?;
    create_dir(&c.out)?;
    let start = Instant::now();
    let mut epoch = 0;
    let logs = fit_with(&mut model, &data.samples, hp.seed, hp.optimizer.epochs, |m| {
        epoch += 1;
        let acc = evaluate(m, &data.samples).unwrap_or(f64::NAN);
        println!("epoch {epoch}: train accuracy {acc:.4}");
        false
    })?;
    let checkpoint = c.checkpoint.clone().unwrap_or_else(|| c.out.join("model.agcn"));
    save_checkpoint(&model, Some(&data.vocab), &checkpoint)?;
    let log = TrainLog {
        corpus: data.corpus.name.clone(),
        examples: data.corpus.len(),
        hyperparams: &hp,
        epochs: logs,
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    let log_path = c.out.join("train_log.json");
    write_json(&log_path, &log)?;
    println!("checkpoint: {}", checkpoint.display());
    println!("log: {}", log_path.display());
    Ok(())
}

#[derive(Serialize)]
struct EvalMetrics {
    corpus: String,
    examples: usize,
    accuracy: f64,
    checkpoint: String,
    vocab_warning: Option<String>,
}

fn eval(c: &Common) -> CliResult<()> {
    let path = require(&c.checkpoint, "checkpoint")?;
    let ckpt = load_checkpoint(path)?;
    let corpus = load_corpus(&resolve(require(&c.corpus, "corpus")?), c.corpus_format.into())?;
    let current = agcnn_core::data::build_vocab(&corpus);
    let warning = ckpt.check_vocab(&current);
    if let Some(w) = &warning {
        println!("warning: {w}");
    }
    let vocab = ckpt.vocab.clone().unwrap_or(current);
    let samples = encode_corpus(&corpus, &vocab, ckpt.model.hp.min_len());
    let accuracy = evaluate(&ckpt.model, &samples)?;
    println!("accuracy: {accuracy:.6} ({} examples)", samples.len());
    create_dir(&c.out)?;
    let metrics = EvalMetrics {
        corpus: corpus.name.clone(),
        examples: samples.len(),
        accuracy,
        checkpoint: path.display().to_string(),
        vocab_warning: warning.map(|w| w.to_string()),
    };
    write_json(&c.out.join("metrics.json"), &metrics)
}

#[derive(Serialize)]
struct CvReport<'a> {
    corpus: String,
    folds: usize,
    aggregate: &'a Aggregate,
}

fn cv(c: &Common) -> CliResult<()> {
    let hp = load_config(c)?;
    if c.replications == 0 {
        return Err(CliError::usage("--replications must be >= 1"));
    }
    let data = load_dataset(require(&c.corpus, "corpus")?, c.corpus_format.into(), vectors_for(c, &hp)?, hp.seed)?;
    let agg = replicate(&hp, &data, c.folds, c.replications, hp.seed)?;
    create_dir(&c.out)?;
    let path = c.out.join("cv.json");
    write_json(
        &path,
        &CvReport {
            corpus: data.corpus.name.clone(),
            folds: c.folds,
            aggregate: &agg,
        },
    )?;
    println!(
        "cv: mean accuracy {:.6} std {:.6} over {} replication(s) of {} folds",
        agg.mean_accuracy, agg.std_accuracy, agg.n_replications, c.folds
    );
    println!("report: {}", path.display());
    if !agg.complete {
        return Err(divergence(&agg.trials.iter().filter_map(|t| t.failure.as_ref()).map(|f| f.message.clone()).collect::<Vec<_>>()));
    }
    Ok(())
}

fn divergence(messages: &[String]) -> CliError {
    let first = messages.first().cloned().unwrap_or_default();
    CliError::new(Kind::Divergence, format!("{} failed trial(s); first: {first}", messages.len()))
}

/// The spec file with overrides applied to the spec document, and with
/// `--corpus`, `--embeddings` and `--seed` taking precedence.
fn load_spec(c: &Common) -> CliResult<SweepSpec> {
    let path = require(&c.spec, "spec")?;
    let mut doc = read_json(path)?;
    overrides::apply_all(&mut doc, &c.overrides)?;
    let mut spec: SweepSpec = serde_json::from_value(doc).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    if let Some(corpus) = &c.corpus {
        spec.corpus = corpus.to_string_lossy().into_owned();
    }
    if let Some(emb) = &c.embeddings {
        spec.embeddings = Some(emb.to_string_lossy().into_owned());
    }
    if let Some(seed) = c.seed {
        spec.seed = seed;
    }
    spec.validate()?;
    Ok(spec)
}

fn sweep(c: &Common, axes: Option<&[Axis]>) -> CliResult<()> {
    let spec = load_spec(c)?;
    if let Some(allowed) = axes {
        if !allowed.contains(&spec.axis) {
            return Err(CliError::config(format!("axis {} is not a window-combination axis", spec.axis.name())));
        }
    }
    let data = spec_dataset(&spec)?;
    let report = run_sweep(&spec, &data, c.workers as usize)?;
    finish_report(&report, &c.out, &spec.output)
}

fn spec_dataset(spec: &SweepSpec) -> CliResult<Dataset> {
    let configs = spec.validate()?;
    let dim = configs.iter().find(|hp| hp.embedding_mode == EmbeddingMode::Static).map(|hp| hp.embedding_dim);
    let vectors = match (dim, &spec.embeddings) {
        (Some(dim), Some(path)) => Some((Path::new(path.as_str()), dim)),
        (Some(_), None) => return Err(CliError::config("spec uses static embeddings but names no embeddings file")),
        (None, _) => None,
    };
    load_dataset(Path::new(&spec.corpus), spec.corpus_format, vectors, spec.seed)
}

fn ablate(c: &Common) -> CliResult<()> {
    if c.spec.is_some() {
        return sweep(c, Some(&[Axis::AblationRung]));
    }
    let hp = load_config(c)?;
    if c.replications == 0 {
        return Err(CliError::usage("--replications must be >= 1"));
    }
    let data = load_dataset(require(&c.corpus, "corpus")?, c.corpus_format.into(), vectors_for(c, &hp)?, hp.seed)?;
    let report = ablation_ladder(&hp, &data, c.folds, c.replications, hp.seed, c.workers as usize)?;
    finish_report(&report, &c.out, "ablation")
}

/// Writes JSON, CSV and timings, then fails if any trial diverged.
fn finish_report(report: &SweepReport, out: &Path, stem: &str) -> CliResult<()> {
    let base = out.join(stem);
    if let Some(parent) = base.parent() {
        create_dir(parent)?;
    }
    let json = base.with_extension("json");
    let csv = base.with_extension("csv");
    emit_report(report, &json, ReportFormat::Json)?;
    emit_report(report, &csv, ReportFormat::Csv)?;
    emit_timings(report, &base.with_extension("timings.json"))?;
    for row in &report.rows {
        let pct = row.pct_change.map_or_else(|| "n/a".to_string(), |p| format!("{p:+.3}%"));
        println!(
            "{:<24} mean {:.6} std {:.6} change {pct}",
            row.label, row.aggregate.mean_accuracy, row.aggregate.std_accuracy
        );
    }
    println!("report: {}", json.display());
    println!("report: {}", csv.display());
    if !report.metadata.complete {
        let failures: Vec<String> = report
            .rows
            .iter()
            .flat_map(|r| r.aggregate.trials.iter())
            .chain(report.baseline.iter().flat_map(|b| b.trials.iter()))
            .filter_map(|t| t.failure.as_ref().map(|f| f.message.clone()))
            .collect();
        return Err(divergence(&failures));
    }
    Ok(())
}

fn report(c: &Common) -> CliResult<()> {
    let input = require(&c.input, "input")?;
    let report = load_report(input)?;
    verify_report(&report)?;
    create_dir(&c.out)?;
    let stem = input.file_stem().map(PathBuf::from).unwrap_or_else(|| PathBuf::from("report"));
    let csv = c.out.join(stem).with_extension("csv");
    emit_report(&report, &csv, ReportFormat::Csv)?;
    println!("report: {}", csv.display());
    Ok(())
}
