//! `hitskt` command line: ingest, segment, stats, train, eval and exports.

mod manifest;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use hitskt::config::{Ablation, Config};
use hitskt::ingest::{dataset_stats, ingest_file, Schema};
use hitskt::segmentation::{split_corpus, SequenceLengths, DEFAULT_GAP_HOURS};
use hitskt::store::{self, write_atomic, SegmentedData};
use hitskt::synthetic::{forgetting, overfit_fixture, ForgettingSpec, OverfitSpec};
use hitskt::training::export::{embedding_table, state_table, Table};
use hitskt::training::{
    evaluate, knowledge_state, split_samples, thread_pool, train, Checkpoint, Datasets, Split, Weights,
};

use manifest::RunManifest;

#[derive(Parser)]
#[command(name = "hitskt", version, about = "Session-aware hierarchical knowledge tracing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a delimited interaction log into a record container.
    Ingest(IngestArgs),
    /// Split records into sessions and fix the padded lengths.
    Segment(SegmentArgs),
    /// Print dataset statistics for a record or segmented container.
    Stats(StatsArgs),
    /// Train a model and keep the best validation checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split.
    Eval(EvalArgs),
    /// Per-session, per-skill mean predicted probability for one student.
    ExportState(ExportStateArgs),
    /// Dump one learned embedding table as delimited text.
    ExportEmbeddings(ExportEmbeddingsArgs),
    /// Generate a synthetic record container.
    Synth(SynthArgs),
}

#[derive(Args)]
struct IngestArgs {
    /// Delimited log with a header row.
    #[arg(long)]
    input: PathBuf,
    /// `key = value` schema file; the ASSISTments 2017 column names when omitted.
    #[arg(long)]
    schema: Option<PathBuf>,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct SegmentArgs {
    /// Record container written by `ingest` or `synth`.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = DEFAULT_GAP_HOURS)]
    gap_hours: f64,
    /// Sessions per row; the nearest power of two to the third quartile when omitted.
    #[arg(long)]
    l_ses: Option<usize>,
    /// Interactions per session; chosen like `--l-ses` when omitted.
    #[arg(long)]
    l_int: Option<usize>,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct StatsArgs {
    /// Record or segmented container.
    #[arg(long)]
    input: PathBuf,
    /// Session gap for record containers; segmented ones keep their own.
    #[arg(long, default_value_t = DEFAULT_GAP_HOURS)]
    gap_hours: f64,
    /// Write the report here instead of standard output.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// `key = value` config file; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Segmented container.
    #[arg(long)]
    data: PathBuf,
    /// Where the best checkpoint goes.
    #[arg(long)]
    output: PathBuf,
    /// One of none, no-decay, avg-pool, no-ksr, no-pos; overrides the config.
    #[arg(long)]
    ablation: Option<String>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config epoch budget.
    #[arg(long)]
    epochs: Option<usize>,
    /// Renormalize session attention after decay scaling.
    #[arg(long, default_value_t = false)]
    renormalize_decay: bool,
    /// Per-epoch metrics log; standard output when omitted.
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Leave wall_time out of the metrics log so reruns compare byte for byte.
    #[arg(long, default_value_t = false)]
    omit_wall_time: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Segmented container the checkpoint was trained on.
    #[arg(long)]
    data: PathBuf,
    /// train, val, test or all.
    #[arg(long, default_value = "test")]
    split: String,
    /// Refuse the checkpoint unless its model settings match this config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Per-interaction predictions as delimited text.
    #[arg(long)]
    predictions: Option<PathBuf>,
}

#[derive(Args)]
struct ExportStateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    student: String,
    /// uniform or count (occurrence-weighted).
    #[arg(long, default_value = "uniform")]
    weights: String,
    /// Standard output when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ExportEmbeddingsArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// difficulty, skill, occurrence or answer.
    #[arg(long, default_value = "difficulty")]
    table: String,
    /// Segmented container whose vocabulary labels rows with raw ids.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    /// overfit or forgetting.
    #[arg(long, default_value = "overfit")]
    kind: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Overrides the generator's student count.
    #[arg(long)]
    students: Option<usize>,
    #[arg(long)]
    output: PathBuf,
}

/// Failure split by exit code: 2 for bad invocations, 1 for everything else.
enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<hitskt::Error> for Failure {
    fn from(e: hitskt::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

fn must_exist(paths: &[&Path]) -> Result<(), Failure> {
    for p in paths {
        if !p.exists() {
            return Err(Failure::Usage(format!("input path {} does not exist", p.display())));
        }
    }
    Ok(())
}

fn parse_arg<T: std::str::FromStr<Err = hitskt::Error>>(flag: &str, v: &str) -> Result<T, Failure> {
    v.parse().map_err(|e: hitskt::Error| Failure::Usage(format!("--{flag}: {e}")))
}

fn write_out(path: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match path {
        Some(p) => write_atomic(p, text.as_bytes()).with_context(|| format!("writing {}", p.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn load_segmented(path: &Path) -> anyhow::Result<SegmentedData> {
    SegmentedData::load(path).with_context(|| format!("loading {}", path.display()))
}

fn load_checkpoint(path: &Path, data: &SegmentedData) -> anyhow::Result<Checkpoint> {
    let ck = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
    ck.check(&ck.config.model, &data.shape())?;
    Ok(ck)
}

fn ingest(a: IngestArgs) -> Result<(), Failure> {
    let mut inputs: Vec<&Path> = vec![&a.input];
    if let Some(s) = &a.schema {
        inputs.push(s);
    }
    must_exist(&inputs)?;
    let m = RunManifest::start("ingest", None, None, inputs.iter().map(|p| p.to_path_buf()).collect(), vec![a.output.clone()]);
    let schema = match &a.schema {
        Some(p) => Schema::from_file(p)?,
        None => Schema::assistments2017(),
    };
    let corpus = ingest_file(&a.input, &schema)?;
    store::save_corpus(&a.output, &corpus)?;
    let d = &corpus.drops;
    eprintln!(
        "kept {} of {} rows (malformed {}, null skill {}, too long {})",
        corpus.records.len(),
        d.parsed,
        d.malformed,
        d.null_skill,
        d.too_long
    );
    m.finish(&a.output)?;
    Ok(())
}

fn segment(a: SegmentArgs) -> Result<(), Failure> {
    must_exist(&[&a.input])?;
    let m = RunManifest::start("segment", None, None, vec![a.input.clone()], vec![a.output.clone()]);
    let corpus = store::load_corpus(&a.input)?;
    let mut data = SegmentedData::new(corpus, a.gap_hours, None)?;
    if a.l_ses.is_some() || a.l_int.is_some() {
        data.lengths = SequenceLengths::new(a.l_ses.unwrap_or(data.lengths.l_ses), a.l_int.unwrap_or(data.lengths.l_int))?;
    }
    data.save(&a.output)?;
    eprintln!(
        "{} students, l_ses {}, l_int {}",
        data.histories.len(),
        data.lengths.l_ses,
        data.lengths.l_int
    );
    m.finish(&a.output)?;
    Ok(())
}

fn stats(a: StatsArgs) -> Result<(), Failure> {
    must_exist(&[&a.input])?;
    let bytes = std::fs::read(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let (histories, drops) = if bytes.starts_with(store::SEGMENTED_MAGIC) {
        let d = SegmentedData::from_bytes(&bytes)?;
        (d.histories, d.corpus.drops)
    } else {
        let c = store::decode_corpus(&bytes)?;
        (split_corpus(&c.records, a.gap_hours)?, c.drops)
    };
    let report = dataset_stats(&histories).with_drops(drops);
    write_out(a.output.as_deref(), &report.to_text())?;
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<(), Failure> {
    let mut inputs: Vec<&Path> = vec![&a.data];
    if let Some(c) = &a.config {
        inputs.push(c);
    }
    must_exist(&inputs)?;
    let mut config = match &a.config {
        Some(p) => Config::from_file(p)?,
        None => Config::default(),
    };
    if let Some(ab) = &a.ablation {
        config.model.ablation = parse_arg::<Ablation>("ablation", ab)?;
    }
    if let Some(s) = a.seed {
        config.train.seed = s;
    }
    if let Some(e) = a.epochs {
        config.train.epochs = e;
    }
    config.model.renormalize_decay |= a.renormalize_decay;
    config.validate().map_err(|e| Failure::Usage(e.to_string()))?;

    let mut outputs = vec![a.output.clone()];
    outputs.extend(a.metrics.clone());
    let m = RunManifest::start(
        "train",
        a.config.clone(),
        Some(config.train.seed),
        inputs.iter().map(|p| p.to_path_buf()).collect(),
        outputs,
    );
    let data = load_segmented(&a.data)?;
    let shape = data.shape();
    let sets = Datasets::new(&data.histories, &shape);
    eprintln!(
        "{} train windows, {} val, {} test; {} students without validation sessions, {} without test sessions",
        sets.train.len(),
        sets.val.len(),
        sets.test.len(),
        sets.students_without_val,
        sets.students_without_test
    );
    let mut sink: Box<dyn Write> = match &a.metrics {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(std::io::stdout()),
    };
    let mut write_err = None;
    let run = train(&config, &data.histories, shape, &sets, &mut |em| {
        if write_err.is_none() {
            if let Err(e) = writeln!(sink, "{}", em.line(!a.omit_wall_time)).and_then(|_| sink.flush()) {
                write_err = Some(e);
            }
        }
    })?;
    if let Some(e) = write_err {
        return Err(anyhow::Error::from(e).context("writing metrics").into());
    }
    run.best.save(&a.output)?;
    let model = run.best.model()?;
    let test = thread_pool()?.install(|| evaluate(&model, &data.histories, &sets.test))?;
    eprintln!("stopped: {:?}; best epoch {}; test {}", run.stop, run.best_epoch, test.to_string().replace('\n', ", "));
    m.finish(&a.output)?;
    Ok(())
}

fn eval_cmd(a: EvalArgs) -> Result<(), Failure> {
    let mut inputs: Vec<&Path> = vec![&a.checkpoint, &a.data];
    if let Some(c) = &a.config {
        inputs.push(c);
    }
    must_exist(&inputs)?;
    let split: Split = parse_arg("split", &a.split)?;
    let data = load_segmented(&a.data)?;
    let ck = load_checkpoint(&a.checkpoint, &data)?;
    if let Some(p) = &a.config {
        ck.check(&Config::from_file(p)?.model, &data.shape())?;
    }
    let model = ck.model()?;
    let samples = split_samples(&data.histories, data.shape().lengths, split);
    let e = thread_pool()?.install(|| evaluate(&model, &data.histories, &samples))?;
    println!("split: {}\n{e}", split.name());
    if let Some(p) = &a.predictions {
        let mut s = String::from("student,session,index,skill,question,probability,correct\n");
        for q in &e.predictions {
            let h = &data.histories[q.student];
            let v = &data.corpus.vocab;
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                h.student_id,
                q.session,
                q.index,
                v.skills.raw(q.skill).unwrap_or("?"),
                v.questions.raw(q.question).unwrap_or("?"),
                q.probability,
                q.correct
            ));
        }
        write_out(Some(p), &s)?;
    }
    Ok(())
}

fn export_state(a: ExportStateArgs) -> Result<(), Failure> {
    must_exist(&[&a.checkpoint, &a.data])?;
    let weights: Weights = parse_arg("weights", &a.weights)?;
    let data = load_segmented(&a.data)?;
    let ck = load_checkpoint(&a.checkpoint, &data)?;
    let history = data.student(&a.student)?;
    let model = ck.model()?;
    let rows = thread_pool()?.install(|| knowledge_state(&model, history, weights))?;
    write_out(a.output.as_deref(), &state_table(&rows, Some(&data.corpus.vocab)))?;
    Ok(())
}

fn export_embeddings(a: ExportEmbeddingsArgs) -> Result<(), Failure> {
    let mut inputs: Vec<&Path> = vec![&a.checkpoint];
    if let Some(d) = &a.data {
        inputs.push(d);
    }
    must_exist(&inputs)?;
    let table: Table = parse_arg("table", &a.table)?;
    let ck = Checkpoint::load(&a.checkpoint)?;
    let data = match &a.data {
        Some(p) => {
            let d = load_segmented(p)?;
            ck.check(&ck.config.model, &d.shape())?;
            Some(d)
        }
        None => None,
    };
    let text = embedding_table(&ck.params, table, data.as_ref().map(|d| &d.corpus.vocab));
    write_out(Some(&a.output), &text)?;
    Ok(())
}

fn synth(a: SynthArgs) -> Result<(), Failure> {
    let corpus = match a.kind.as_str() {
        "overfit" => {
            let mut s = OverfitSpec { seed: a.seed, ..OverfitSpec::default() };
            s.students = a.students.unwrap_or(s.students);
            overfit_fixture(&s)?
        }
        "forgetting" => {
            let mut s = ForgettingSpec { seed: a.seed, ..ForgettingSpec::default() };
            s.students = a.students.unwrap_or(s.students);
            forgetting(&s)?
        }
        other => return Err(Failure::Usage(format!("--kind: unknown generator `{other}`"))),
    };
    store::save_corpus(&a.output, &corpus)?;
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Segment(a) => segment(a),
        Command::Stats(a) => stats(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::ExportState(a) => export_state(a),
        Command::ExportEmbeddings(a) => export_embeddings(a),
        Command::Synth(a) => synth(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
