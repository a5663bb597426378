//! The `efa` command line. Exit status: 0 on success, 2 for configuration
//! and usage errors, 1 for runtime failures.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, Parser, Subcommand};

use crate::annotate::{self, apply_review_decision, system_clock, AnnotationClients, Checker, Decision, ReviewQueue, ReviewStatus};
use crate::config::RunConfig;
use crate::data::{generate_synthetic_dataset, load_manifest, DatasetManifest, LexiconFile, MediaRef, SplitAssignment};
use crate::encoders::{load_frame_dir, Encoders, VisualInput};
use crate::error::{read_to_string, write_string, EfaError, Result};
use crate::evaluation::{corpus_statistics, KeywordLists};
use crate::features::FeatureMatrix;
use crate::pipeline::{self, sweep_table, SWEEP_LAMBDAS};
use crate::training::{encode_videos, prepare_samples, Checkpoint, EpochRecord, Trainer};

#[derive(Debug, Parser)]
#[command(name = "efa", version, about = "Explainable fitness assessment: dataset tools, training, evaluation and annotation")]
pub struct Cli {
    /// Run configuration file (TOML); built-in defaults when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Override one configuration value, e.g. `--set train.lr=3e-3`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Root seed for every random stream (same as `--set seed=N`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset (manifest, lexicon and feature fixtures).
    Synth {
        /// Directory for the manifest, lexicon and feature fixtures.
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a seeded 70/15/15 train/val/test split.
    Split {
        /// Dataset manifest (JSON).
        #[arg(long)]
        manifest: PathBuf,
        /// Directory for split.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write a checkpoint plus per-epoch history.
    Train(TrainArgs),
    /// Score a checkpoint on one split and write a metric report.
    Eval(EvalArgs),
    /// Assess a single video and print category, verdict and explanation.
    Assess(AssessArgs),
    /// Corpus statistics of explanation texts.
    Stats(StatsArgs),
    /// Explanation generation, consistency checking and review.
    #[command(subcommand)]
    Annotate(AnnotateCommand),
    /// Train and evaluate once per category-loss weight.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Dataset manifest (JSON).
    #[arg(long)]
    pub manifest: PathBuf,
    /// Split file from `efa split`; recomputed from the seed when omitted.
    #[arg(long)]
    pub split: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Records to train on: train, val, test or all.
    #[arg(long, default_value = "train")]
    pub part: String,
    /// Directory for the checkpoint, history, vocabulary and resolved config.
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from a checkpoint that holds optimizer state.
    #[arg(long, value_name = "CHECKPOINT")]
    pub resume: Option<PathBuf>,
    /// Stop after this optimizer step instead of finishing the schedule.
    #[arg(long)]
    pub stop_at: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Checkpoint written by `efa train`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Records to score; `eval.split` from the configuration when omitted.
    #[arg(long)]
    pub part: Option<String>,
    /// Directory for metrics.json, metrics.tsv and predictions.jsonl.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AssessArgs {
    /// Checkpoint written by `efa train`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Feature fixture of the video.
    #[arg(long, conflicts_with_all = ["frames", "sample"])]
    pub features: Option<PathBuf>,
    /// Directory of extracted frames.
    #[arg(long, conflicts_with = "sample")]
    pub frames: Option<PathBuf>,
    /// Sample id inside `--manifest`.
    #[arg(long, requires = "manifest")]
    pub sample: Option<String>,
    /// Dataset manifest holding `--sample`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Print JSON instead of text.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Use every record's explanation from this manifest.
    #[arg(long, conflicts_with = "texts")]
    pub manifest: Option<PathBuf>,
    /// Explanations as JSON Lines (strings or objects with `cot_text`, `explanation` or `text`) or plain text, one per line.
    #[arg(long)]
    pub texts: Option<PathBuf>,
    /// Directory holding causal.txt and corrective.txt.
    #[arg(long)]
    pub keywords: Option<PathBuf>,
    /// Directory for stats.json; printed only when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Comma-separated weights.
    #[arg(long, value_delimiter = ',', default_values_t = SWEEP_LAMBDAS.to_vec())]
    pub lambdas: Vec<f64>,
    /// Records to train on: train, val, test or all.
    #[arg(long, default_value = "train")]
    pub train_part: String,
    /// Records to score; `eval.split` from the configuration when omitted.
    #[arg(long)]
    pub eval_part: Option<String>,
    /// Directory for sweep.tsv and sweep.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum AnnotateCommand {
    /// Generate steps and explanations for every record, check them and queue failures.
    Run {
        /// Dataset manifest to annotate.
        #[arg(long)]
        manifest: PathBuf,
        /// Directory for the annotated manifest, call log and review queue.
        #[arg(long)]
        out: PathBuf,
    },
    /// List pending review items.
    List {
        /// Review log (review.jsonl).
        #[arg(long)]
        queue: PathBuf,
    },
    /// Record a reviewer decision; edits are written into the working manifest.
    Review {
        /// Review log (review.jsonl).
        #[arg(long)]
        queue: PathBuf,
        /// Working manifest; edits are saved back into it.
        #[arg(long)]
        manifest: PathBuf,
        /// Review item id, as printed by `annotate list`.
        #[arg(long)]
        item: String,
        /// Keep the explanation as generated.
        #[arg(long, conflicts_with_all = ["reject", "edit"], required_unless_present_any = ["reject", "edit"])]
        approve: bool,
        /// Drop the sample from the export.
        #[arg(long, conflicts_with = "edit")]
        reject: bool,
        /// Replace the explanation with this text.
        #[arg(long, value_name = "TEXT")]
        edit: Option<String>,
        /// Free-text reviewer note stored with the decision.
        #[arg(long)]
        note: Option<String>,
    },
    /// Write the records that passed checking or review; the rest are logged with a reason.
    Export {
        /// Review log (review.jsonl).
        #[arg(long)]
        queue: PathBuf,
        /// Working manifest.
        #[arg(long)]
        manifest: PathBuf,
        /// Directory for the exported manifest and exclusions.jsonl.
        #[arg(long)]
        out: PathBuf,
    },
}

struct Io<'a> {
    out: &'a mut dyn Write,
    err: &'a mut dyn Write,
}

macro_rules! say {
    ($io:expr, $($arg:tt)*) => {{
        let _ = writeln!($io.out, $($arg)*);
    }};
}

macro_rules! note {
    ($io:expr, $($arg:tt)*) => {{
        let _ = writeln!($io.err, $($arg)*);
    }};
}

/// Parse `args` (including the program name) and run. Returns the exit status.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            let _ = if code == 0 { out.write_all(text.as_bytes()) } else { err.write_all(text.as_bytes()) };
            return if code == 0 { 0 } else { 2 };
        }
    };
    let mut io = Io { out, err };
    match dispatch(&cli, &mut io) {
        Ok(()) => 0,
        Err(e) => {
            note!(io, "error: {e}");
            if e.is_config_error() {
                2
            } else {
                1
            }
        }
    }
}

/// Markdown reference of every subcommand and flag, rendered from the parser
/// definitions. `docs/cli.md` is this output.
pub fn reference() -> String {
    fn walk(cmd: &mut clap::Command, path: &str, out: &mut String) {
        let heading = if path.is_empty() { cmd.get_name().to_string() } else { format!("{path} {}", cmd.get_name()) };
        let level = "#".repeat(heading.split(' ').count().min(4) + 1);
        out.push_str(&format!("{level} `{heading}`\n\n```text\n{}\n```\n\n", cmd.render_long_help().to_string().trim_end()));
        for sub in cmd.get_subcommands_mut() {
            walk(sub, &heading, out);
        }
    }
    let mut cmd = Cli::command().disable_help_subcommand(true);
    cmd.build();
    let mut out =
        String::from("# efa command reference\n\nGenerated from the argument parser; regenerate with `efa-reference > docs/cli.md`.\n\n");
    walk(&mut cmd, "", &mut out);
    out
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut overrides = cli.overrides.clone();
    if let Some(seed) = cli.seed {
        overrides.push(format!("seed={seed}"));
    }
    if let Some(path) = &cli.config {
        existing("--config", path)?;
    }
    RunConfig::load(cli.config.as_deref(), &overrides)
}

fn existing<'p>(flag: &str, path: &'p Path) -> Result<&'p Path> {
    if path.exists() {
        Ok(path)
    } else {
        Err(EfaError::Config(format!("{flag}: {} does not exist", path.display())))
    }
}

fn required<'p>(flag: &str, path: &'p Option<PathBuf>) -> Result<&'p Path> {
    let p = path.as_deref().ok_or_else(|| EfaError::Config(format!("{flag} is required")))?;
    existing(flag, p)
}

fn dispatch(cli: &Cli, io: &mut Io<'_>) -> Result<()> {
    let config = load_config(cli)?;
    match &cli.command {
        Command::Synth { out } => synth(&config, out, io),
        Command::Split { manifest, out } => split(&config, manifest, out, io),
        Command::Train(args) => train(config, args, io),
        Command::Eval(args) => eval(config, args, io),
        Command::Assess(args) => assess(&config, args, io),
        Command::Stats(args) => stats(&config, args, io),
        Command::Annotate(cmd) => annotate_cmd(&config, cmd, io),
        Command::Sweep(args) => sweep(&config, args, io),
    }
}

fn open_manifest(path: &Path) -> Result<DatasetManifest> {
    load_manifest(existing("--manifest", path)?)
}

fn synth(config: &RunConfig, out: &Path, io: &mut Io<'_>) -> Result<()> {
    if config.synthetic.visual_dim != config.encoder.visual_dim {
        return Err(EfaError::Config(format!(
            "synthetic.visual_dim ({}) must equal encoder.visual_dim ({})",
            config.synthetic.visual_dim, config.encoder.visual_dim
        )));
    }
    let ds = generate_synthetic_dataset(&config.synthetic)?;
    ds.write_to(out)?;
    LexiconFile::new(ds.manifest.lexicon.values().cloned().collect()).save(&out.join("lexicon.json"))?;
    config.write_resolved(out)?;
    say!(io, "wrote {} records in {} categories to {}", ds.manifest.len(), ds.manifest.num_categories, out.display());
    Ok(())
}

fn split(config: &RunConfig, manifest: &Path, out: &Path, io: &mut Io<'_>) -> Result<()> {
    let m = open_manifest(manifest)?;
    let s = pipeline::split_for(config, &m)?;
    write_json(&out.join("split.json"), &s)?;
    config.write_resolved(out)?;
    let (a, b, c) = s.sizes();
    say!(io, "train {a}, val {b}, test {c} -> {}", out.join("split.json").display());
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    write_string(path, &(serde_json::to_string_pretty(value).expect("serializable") + "\n"))
}

fn write_jsonl<T: serde::Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let text: String = rows.iter().map(|r| serde_json::to_string(r).expect("serializable") + "\n").collect();
    write_string(path, &text)
}

fn load_split(path: &Path) -> Result<SplitAssignment> {
    let text = read_to_string(existing("--split", path)?)?;
    serde_json::from_str(&text).map_err(|e| EfaError::parse(path.display().to_string(), e))
}

/// Ids of `part`, taken from the split file or recomputed from the seed.
fn select_ids(config: &RunConfig, manifest: &DatasetManifest, data: &DataArgs, part: &str) -> Result<(Vec<String>, SplitAssignment)> {
    let split = match &data.split {
        Some(p) => load_split(p)?,
        None => pipeline::split_for(config, manifest)?,
    };
    let ids = if part == "all" {
        manifest.records.iter().map(|r| r.sample_id.clone()).collect()
    } else {
        split.part(part).map_err(|_| EfaError::Config(format!("--part must be train, val, test or all, not `{part}`")))?.to_vec()
    };
    if ids.is_empty() {
        return Err(EfaError::InvalidArgument(format!("the `{part}` part is empty")));
    }
    Ok((ids, split))
}

fn train(mut config: RunConfig, args: &TrainArgs, io: &mut Io<'_>) -> Result<()> {
    let manifest = open_manifest(&args.data.manifest)?;
    let (ids, split) = select_ids(&config, &manifest, &args.data, &args.part)?;
    let resume = args.resume.as_deref().map(|p| existing("--resume", p).and_then(Checkpoint::load)).transpose()?;

    let (mut model, encoders, train_cfg, state) = match resume {
        Some(ck) => {
            let state = ck.state.clone().ok_or_else(|| EfaError::Config("--resume: checkpoint has no training state".into()))?;
            config.model = ck.model.clone();
            config.encoder = ck.encoder.clone();
            config.train = ck.train.clone();
            (ck.restore_model()?, Encoders::toy(&ck.encoder_config())?, ck.train_config(), Some(state))
        }
        None => {
            let vocab = pipeline::build_vocabulary(&manifest, &ids)?;
            (pipeline::build_model(&config, &manifest, vocab)?, Encoders::toy(&config.encoder)?, config.train.clone(), None)
        }
    };
    let videos = encode_videos(&manifest, &encoders, &ids)?;
    let samples = prepare_samples(&model, &encoders, &manifest, &ids, &videos)?;
    let mut trainer = match state {
        Some(s) => Trainer::resume(&model, &train_cfg, samples, s)?,
        None => Trainer::new(&model, &train_cfg, samples)?,
    }
    .with_frame_jitter(&manifest, &encoders);
    let total = trainer.total_steps();
    let every = (train_cfg.epochs / 10).max(1);
    let stop = args.stop_at.unwrap_or(usize::MAX);
    let mut log = |r: &EpochRecord| {
        if r.epoch.is_multiple_of(every) || r.step == total {
            note!(
                io,
                "epoch {:>4} step {:>5}/{total}  L_c {:.4}  L_q {:.4}  L_t {:.4}  total {:.4}",
                r.epoch,
                r.step,
                r.l_c,
                r.l_q,
                r.l_t,
                r.total
            );
        }
    };
    trainer.run_until(&mut model, stop, &mut log)?;

    let ck = Checkpoint::capture(&model, &encoders.config, &train_cfg, Some(&trainer.state));
    ck.save(&args.out.join("checkpoint.json"))?;
    write_jsonl(&args.out.join("history.jsonl"), &trainer.state.history)?;
    model.vocab.save(&args.out.join("vocab.txt"))?;
    write_json(&args.out.join("split.json"), &split)?;
    config.write_resolved(&args.out)?;
    say!(io, "trained {} of {total} steps on {} samples -> {}", trainer.state.step, ids.len(), args.out.join("checkpoint.json").display());
    Ok(())
}

fn eval(mut config: RunConfig, args: &EvalArgs, io: &mut Io<'_>) -> Result<()> {
    let ck = Checkpoint::load(required("--checkpoint", &args.checkpoint)?)?;
    let manifest = open_manifest(&args.data.manifest)?;
    let part = args.part.clone().unwrap_or_else(|| config.eval.split.clone());
    let (ids, _) = select_ids(&config, &manifest, &args.data, &part)?;
    config.model = ck.model.clone();
    config.encoder = ck.encoder.clone();
    config.train = ck.train.clone();
    let model = ck.restore_model()?;
    let encoders = Encoders::toy(&ck.encoder_config())?;
    let (report, predictions) = pipeline::evaluate(&config, &model, &encoders, &manifest, &ids, &Default::default())?;
    write_string(&args.out.join("metrics.json"), &report.to_json())?;
    write_string(&args.out.join("metrics.tsv"), &report.to_table())?;
    write_jsonl(&args.out.join("predictions.jsonl"), &predictions)?;
    config.write_resolved(&args.out)?;
    let _ = write!(io.out, "{}", report.to_table());
    Ok(())
}

fn assess(config: &RunConfig, args: &AssessArgs, io: &mut Io<'_>) -> Result<()> {
    let ck = Checkpoint::load(required("--checkpoint", &args.checkpoint)?)?;
    let model = ck.restore_model()?;
    let encoders = Encoders::toy(&ck.encoder_config())?;
    let (input, key) = match (&args.features, &args.frames, &args.sample) {
        (Some(f), _, _) => (VisualInput::Fixture(FeatureMatrix::read_fixture(existing("--features", f)?)?), stem(f)),
        (_, Some(d), _) => (load_frame_dir(existing("--frames", d)?, encoders.config.frames_per_video)?, stem(d)),
        (_, _, Some(id)) => {
            let manifest = open_manifest(args.manifest.as_deref().expect("clap enforces --manifest"))?;
            let record = manifest.record(id).ok_or_else(|| EfaError::Config(format!("--sample: `{id}` is not in the manifest")))?;
            (crate::encoders::load_visual_input(&manifest, record, encoders.config.frames_per_video)?, id.clone())
        }
        _ => return Err(EfaError::Config("one of --features, --frames or --sample is required".into())),
    };
    let video = encoders.visual_encode(&input)?.into_matrix();
    let result = model.assess_with(&encoders, &video, &key, config.eval.decode)?;
    let name = model.lexicon.get(&result.category).map(|e| e.category_name.clone()).unwrap_or_default();
    let verdict = if result.is_standard() { "standard" } else { "non_standard" };
    if args.json {
        let v = serde_json::json!({
            "category": result.category,
            "category_name": name,
            "category_probabilities": result.category_probabilities(),
            "quality": verdict,
            "quality_prob": result.quality_prob,
            "explanation": result.explanation,
        });
        say!(io, "{}", serde_json::to_string_pretty(&v).expect("serializable"));
    } else {
        say!(io, "category: {} ({name})", result.category);
        say!(io, "quality: {verdict} (p_standard = {:.4})", result.quality_prob);
        say!(io, "explanation: {}", result.explanation);
    }
    Ok(())
}

fn stem(p: &Path) -> String {
    p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned())
}

/// Explanations from a JSON Lines file or a plain one-per-line text file.
pub fn read_texts(path: &Path) -> Result<Vec<String>> {
    let text = read_to_string(path)?;
    let jsonl = path.extension().is_some_and(|e| e == "jsonl" || e == "json");
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            if !jsonl {
                return Ok(line.trim().to_string());
            }
            let ctx = || format!("{}:{}", path.display(), i + 1);
            let v: serde_json::Value = serde_json::from_str(line).map_err(|e| EfaError::parse(ctx(), e))?;
            let s = match &v {
                serde_json::Value::String(s) => Some(s.as_str()),
                _ => ["cot_text", "explanation", "text"].iter().find_map(|k| v.get(k).and_then(|x| x.as_str())),
            };
            s.map(str::to_string).ok_or_else(|| EfaError::parse(ctx(), "no explanation text"))
        })
        .collect()
}

fn stats(config: &RunConfig, args: &StatsArgs, io: &mut Io<'_>) -> Result<()> {
    let texts = match (&args.manifest, &args.texts) {
        (Some(m), _) => open_manifest(m)?.records.into_iter().map(|r| r.cot_text).collect(),
        (_, Some(t)) => read_texts(existing("--texts", t)?)?,
        _ => return Err(EfaError::Config("one of --manifest or --texts is required".into())),
    };
    let keywords = match args.keywords.as_deref().or(config.eval.keywords_dir.as_deref()) {
        Some(dir) => KeywordLists::load(existing("--keywords", dir)?)?,
        None => KeywordLists::default(),
    };
    let s = corpus_statistics(&texts, &keywords)?;
    if let Some(out) = &args.out {
        write_json(&out.join("stats.json"), &s)?;
        config.write_resolved(out)?;
    }
    say!(io, "samples\t{}", s.samples);
    say!(io, "avg words\t{:.2}", s.avg_words);
    say!(io, "avg sentences\t{:.2}", s.avg_sentences);
    say!(io, "vocabulary\t{}", s.vocab_size);
    say!(io, "avg reasoning steps\t{:.2}", s.avg_reasoning_steps);
    say!(io, "avg suggestions\t{:.2}", s.avg_suggestions);
    Ok(())
}

/// Rewrite relative media paths as resolved ones so the manifest can be saved elsewhere.
fn with_resolved_media(manifest: &DatasetManifest) -> DatasetManifest {
    let mut m = manifest.clone();
    for r in &mut m.records {
        r.media_ref = match &r.media_ref {
            MediaRef::Features { path } => MediaRef::Features { path: manifest.resolve(path) },
            MediaRef::Frames { dir } => MediaRef::Frames { dir: manifest.resolve(dir) },
            other => other.clone(),
        };
    }
    m
}

fn annotate_cmd(config: &RunConfig, cmd: &AnnotateCommand, io: &mut Io<'_>) -> Result<()> {
    match cmd {
        AnnotateCommand::Run { manifest, out } => {
            let m = open_manifest(manifest)?;
            let cfg = &config.annotate;
            let templates = cfg.templates()?;
            let (llm, vlm, checker_client) = (cfg.llm.build()?, cfg.vlm.build()?, cfg.checker.build()?);
            let checker = if cfg.rule_based_checker { Checker::RuleBased } else { Checker::Client(checker_client.as_ref()) };
            let clients = AnnotationClients { llm: llm.as_ref(), vlm: vlm.as_ref(), checker };
            let mut queue = ReviewQueue::open(&out.join("review.jsonl"), system_clock())?;
            let run = annotate::annotate_manifest(&m, &clients, &templates, cfg, &mut queue)?;
            with_resolved_media(&run.manifest).save(&out.join("manifest.annotated.json"))?;
            write_jsonl(&out.join("calls.jsonl"), &run.calls)?;
            config.write_resolved(out)?;
            let failed = run.reports.iter().filter(|(_, r)| r.verdict == annotate::Verdict::Fail).count();
            say!(io, "annotated {} records; {failed} queued for review in {}", run.reports.len(), out.join("review.jsonl").display());
            Ok(())
        }
        AnnotateCommand::List { queue } => {
            let q = ReviewQueue::open(existing("--queue", queue)?, system_clock())?;
            for item in q.pending() {
                say!(io, "{}\t{}\t{}", item.id, item.sample_id, item.rationale);
            }
            Ok(())
        }
        AnnotateCommand::Review { queue, manifest, item, approve: _, reject, edit, note } => {
            let mut q = ReviewQueue::open(existing("--queue", queue)?, system_clock())?;
            let mut m = open_manifest(manifest)?;
            let decision = match (reject, edit) {
                (true, _) => Decision::Reject,
                (_, Some(text)) => Decision::Edit(text.clone()),
                _ => Decision::Approve,
            };
            let updated = apply_review_decision(&mut q, &mut m, item, decision, note.clone())?;
            if updated.status == ReviewStatus::Edited {
                m.save(manifest)?;
            }
            say!(io, "{} -> {}", updated.id, updated.status.as_str());
            Ok(())
        }
        AnnotateCommand::Export { queue, manifest, out } => {
            let q = ReviewQueue::open(existing("--queue", queue)?, system_clock())?;
            let m = open_manifest(manifest)?;
            let outcome = annotate::export(&m, &q)?;
            with_resolved_media(&outcome.manifest).save(&out.join("manifest.json"))?;
            write_jsonl(&out.join("exclusions.jsonl"), &outcome.exclusions)?;
            for e in &outcome.exclusions {
                note!(io, "excluded {}: {}", e.sample_id, e.reason);
            }
            say!(io, "exported {} records, excluded {}", outcome.manifest.len(), outcome.exclusions.len());
            Ok(())
        }
    }
}

fn sweep(config: &RunConfig, args: &SweepArgs, io: &mut Io<'_>) -> Result<()> {
    if args.lambdas.is_empty() {
        return Err(EfaError::Config("--lambdas is empty".into()));
    }
    let manifest = open_manifest(&args.data.manifest)?;
    let (train_ids, _) = select_ids(config, &manifest, &args.data, &args.train_part)?;
    let eval_part = args.eval_part.clone().unwrap_or_else(|| config.eval.split.clone());
    let (eval_ids, _) = select_ids(config, &manifest, &args.data, &eval_part)?;
    let rows = pipeline::lambda_sweep(config, &manifest, &train_ids, &eval_ids, &args.lambdas)?;
    let table = sweep_table(&rows);
    write_string(&args.out.join("sweep.tsv"), &table)?;
    write_json(&args.out.join("sweep.json"), &rows)?;
    config.write_resolved(&args.out)?;
    let _ = write!(io.out, "{table}");
    Ok(())
}
