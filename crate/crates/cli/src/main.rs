mod config;

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use sandhi_core::corpus::{self, filter_corrupt, load_dataset, toy, SynthOptions};
use sandhi_core::eval::{self, ScoreMode, ScoreOptions};
use sandhi_core::models::{train_model, TrainError, TrainOptions, CHECKPOINT_MAGIC};
use sandhi_core::{editrules, stemrules, Model, ModelConfig, Prediction, SentenceRecord, Task};

use config::{load_translit, merge, required, resolve_model, write_atomic, ConfigFile, Meta, ModelFlags};

#[derive(Parser)]
#[command(name = "sandhi", version, about = "Sanskrit segmentation and morphological analysis")]
struct Cli {
    /// TOML or JSON file with one table per command and a `[model]` table.
    /// Flags override file values.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus from the built-in toy lexicon.
    Synth(SynthArgs),
    /// Extract segmentation or stem rules from a dataset and report counts.
    ExtractRules(ExtractArgs),
    /// Train a model and write a checkpoint.
    Train {
        #[command(flatten)]
        args: TrainArgs,
        #[command(flatten)]
        model: ModelFlags,
    },
    /// Run a checkpoint over a dataset.
    Predict(PredictArgs),
    /// Score predictions against gold records.
    Evaluate(EvaluateArgs),
    /// Train one model per grid point and rank them by held-out F1.
    Sweep {
        #[command(flatten)]
        args: SweepArgs,
        #[command(flatten)]
        model: ModelFlags,
    },
    /// Print the configuration embedded in an artifact, in config-file form.
    ShowConfig {
        artifact: PathBuf,
    },
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Default, Clone, clap::Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SynthArgs {
    /// Number of sentences.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    n: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    min_words: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    max_words: Option<usize>,
    #[arg(long, short)]
    #[serde(skip_serializing_if = "Option::is_none")]
    out: Option<PathBuf>,
}

#[derive(Debug, Default, Clone, clap::Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ExtractArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    data: Option<PathBuf>,
    /// `seg` for edit rules, `stem` for stem rules.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    task: Option<Task>,
    #[arg(long, value_parser = config::on_off, value_name = "on|off")]
    #[serde(skip_serializing_if = "Option::is_none")]
    translit: Option<bool>,
    /// TSV transliteration table replacing the built-in one.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    translit_table: Option<PathBuf>,
    /// Minimum rule frequency.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    cutoff: Option<usize>,
    /// Stem rules carry the morphological tag.
    #[arg(long)]
    #[serde(skip_serializing_if = "is_false")]
    joint_tags: bool,
    /// How many of the most frequent rules to print.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    top: Option<usize>,
    #[arg(long, short)]
    #[serde(skip_serializing_if = "Option::is_none")]
    out: Option<PathBuf>,
}

#[derive(Debug, Default, Clone, clap::Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TrainArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    task: Option<Task>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    data: Option<PathBuf>,
    /// Held-out records scored after training.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    dev: Option<PathBuf>,
    #[arg(long, short)]
    #[serde(skip_serializing_if = "Option::is_none")]
    out: Option<PathBuf>,
    /// Checkpoint whose matching parameters initialise the new model.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    init_from: Option<PathBuf>,
    /// Results are reproducible for a fixed thread count.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    threads: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    translit_table: Option<PathBuf>,
}

#[derive(Debug, Default, Clone, clap::Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct PredictArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    data: Option<PathBuf>,
    /// Read plain text, one sentence per line, instead of JSON lines. For
    /// analysis models the line holds the space-separated words.
    #[arg(long)]
    #[serde(skip_serializing_if = "is_false")]
    text: bool,
    #[arg(long, short)]
    #[serde(skip_serializing_if = "Option::is_none")]
    out: Option<PathBuf>,
}

#[derive(Debug, Default, Clone, clap::Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct EvaluateArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pred: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    gold: Option<PathBuf>,
    /// Defaults to the task matching the shape of the predictions.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    task: Option<Task>,
    /// `strict` or `counter`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    mode: Option<ScoreMode>,
    /// Symmetric counter similarity.
    #[arg(long)]
    #[serde(skip_serializing_if = "is_false")]
    sym: bool,
    /// Exit with status 2 when F1 is below this value.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    min_f1: Option<f64>,
    /// List every wrong sentence in the report.
    #[arg(long)]
    #[serde(skip_serializing_if = "is_false")]
    errors: bool,
    #[arg(long, short)]
    #[serde(skip_serializing_if = "Option::is_none")]
    out: Option<PathBuf>,
}

#[derive(Debug, Default, Clone, clap::Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SweepArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    task: Option<Task>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    train: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    dev: Option<PathBuf>,
    /// TOML/JSON file with a `[grid]` table of value lists and an optional
    /// `[base]` table of fixed model settings.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    grid: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    threads: Option<usize>,
    #[arg(long, short)]
    #[serde(skip_serializing_if = "Option::is_none")]
    out: Option<PathBuf>,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(1);
        }
    }
}

fn run(cli: Cli) -> Result<i32> {
    let file = ConfigFile::load(cli.config.as_deref())?;
    match cli.command {
        Command::Synth(a) => synth(merge(file.section("synth")?, &a)?),
        Command::ExtractRules(a) => extract_rules(merge(file.section("extract-rules")?, &a)?),
        Command::Train { args, model } => {
            let args = merge(file.section("train")?, &args)?;
            let task = *required(&args.task, "--task")?;
            let cfg = resolve_model(task, &file, &Map::new(), &model)?;
            train_cmd(args, cfg)
        }
        Command::Predict(a) => predict(merge(file.section("predict")?, &a)?),
        Command::Evaluate(a) => evaluate(merge(file.section("evaluate")?, &a)?),
        Command::Sweep { args, model } => sweep(merge(file.section("sweep")?, &args)?, &file, &model),
        Command::ShowConfig { artifact } => {
            let meta = read_meta(&artifact)?;
            println!("{}", serde_json::to_string_pretty(&meta.config)?);
            Ok(0)
        }
    }
}

fn load_records(path: &Path) -> Result<Vec<SentenceRecord>> {
    let records = load_dataset(path).with_context(|| format!("reading {}", path.display()))?;
    let (records, stats) = filter_corrupt(records);
    if stats.removed_corrupt > 0 {
        log::warn!(
            "{}: dropped {} of {} records whose source is longer than the segmentation",
            path.display(),
            stats.removed_corrupt,
            stats.total
        );
    }
    Ok(records)
}

fn json_line(v: &impl Serialize) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec(v)?;
    out.push(b'\n');
    Ok(out)
}

fn synth(mut a: SynthArgs) -> Result<i32> {
    let defaults = SynthOptions::default();
    let n = *a.n.get_or_insert(1000);
    let seed = *a.seed.get_or_insert(0);
    let opts = SynthOptions {
        min_words: *a.min_words.get_or_insert(defaults.min_words),
        max_words: *a.max_words.get_or_insert(defaults.max_words),
    };
    let out = required(&a.out, "--out")?.clone();
    let records: Vec<SentenceRecord> =
        corpus::synth_corpus_traced(&toy::lexicon(), &toy::sandhi_table(), n, seed, &opts)?
            .into_iter()
            .map(|(r, _)| r)
            .collect();
    let meta = Meta::new("synth", &a, None)?;
    let mut bytes = b"# ".to_vec();
    bytes.extend(json_line(&meta)?);
    corpus::write_dataset(&mut bytes, &records)?;
    write_atomic(&out, &bytes)?;
    println!("wrote {} sentences to {}", records.len(), out.display());
    Ok(0)
}

#[derive(Serialize)]
struct RuleRow {
    rule: String,
    freq: usize,
}

fn extract_rules(mut a: ExtractArgs) -> Result<i32> {
    let data = required(&a.data, "--data")?.clone();
    let task = *a.task.get_or_insert(Task::T1);
    let translit = *a.translit.get_or_insert(true);
    let cutoff = *a.cutoff.get_or_insert(1);
    let top = *a.top.get_or_insert(20);
    let mut records = load_records(&data)?;
    if translit {
        let table = load_translit(a.translit_table.as_deref())?;
        records = records.iter().map(|r| r.map_text(|s| table.to_internal(s))).collect();
    }
    let (count, rows, vocab) = match task {
        Task::T1 | Task::T3 => {
            let v = editrules::collect_rules(&records, cutoff);
            let rows: Vec<RuleRow> = v
                .replace_rules()
                .map(|(r, freq)| RuleRow { rule: r.to_string(), freq })
                .collect();
            (v.replace_count(), rows, json!({ "edit_rules": v.to_entries() }))
        }
        Task::T2 => {
            let missing = records.iter().filter(|r| r.analyses.is_none()).count();
            if missing > 0 {
                log::warn!("{missing} records without analyses contribute no stem rules");
            }
            let v = stemrules::collect(&records, cutoff, a.joint_tags);
            let mut rows: Vec<RuleRow> = v
                .rules()
                .filter(|(r, _)| !r.is_identity())
                .map(|(r, freq)| RuleRow { rule: r.to_string(), freq })
                .collect();
            rows.sort_by(|x, y| y.freq.cmp(&x.freq));
            (
                v.non_identity_count(),
                rows,
                json!({ "stem_rules": v.entries(), "tags": v.tag_entries() }),
            )
        }
    };
    println!("{count} rules (cutoff {cutoff}, transliteration {})", if translit { "on" } else { "off" });
    for (i, r) in rows.iter().take(top).enumerate() {
        println!("{:>4}  {:>7}  {}", i + 1, r.freq, r.rule);
    }
    if let Some(out) = &a.out {
        let meta = Meta::new("extract-rules", &a, None)?;
        let doc = json!({ "meta": meta, "task": task, "rules": count, "vocab": vocab });
        write_atomic(out, &json_line(&doc)?)?;
    }
    Ok(0)
}

fn predictions(model: &Model, records: &[SentenceRecord]) -> Result<Vec<Prediction>> {
    records
        .iter()
        .enumerate()
        .map(|(i, r)| model.predict(r).with_context(|| format!("sentence {}", i + 1)))
        .collect()
}

fn train_cmd(mut a: TrainArgs, cfg: ModelConfig) -> Result<i32> {
    let task = *required(&a.task, "--task")?;
    let data = required(&a.data, "--data")?.clone();
    let out = required(&a.out, "--out")?.clone();
    let threads = *a.threads.get_or_insert(1);
    let records = load_records(&data)?;
    let table = load_translit(a.translit_table.as_deref())?;
    let mut model = Model::with_translit(task, cfg.clone(), table, &records)?;
    if let Some(init) = &a.init_from {
        let bytes = fs::read(init).with_context(|| format!("reading {}", init.display()))?;
        let (other, _) = Model::from_bytes(&bytes)?;
        let copied = model.init_from(&other)?;
        log::info!("initialised {copied} tensors from {}", init.display());
    }
    let start = Instant::now();
    let trained = match train_model(model, &records, &TrainOptions { threads }) {
        Ok(t) => t,
        Err(TrainError::NonFinite { epoch, step, detail, .. }) => {
            bail!("training diverged in epoch {} at step {step}: {detail}; try a lower --max-lr", epoch + 1)
        }
        Err(e) => return Err(e.into()),
    };
    let seconds = start.elapsed().as_secs_f64();
    let dev = match &a.dev {
        Some(path) => {
            let dev = load_records(path)?;
            let pred = predictions(&trained.model, &dev)?;
            let report = eval::score_strict(&pred, &dev, task)?;
            println!("dev F1 {:.4} over {} sentences", report.f1, dev.len());
            Some(report.f1)
        }
        None => None,
    };
    let meta = Meta::new("train", &a, Some(&cfg))?;
    let extra = json!({ "meta": meta, "log": trained.log, "dev_f1": dev });
    write_atomic(&out, &trained.model.to_bytes(extra)?)?;
    let last = trained.log.epoch_losses.last().copied().unwrap_or(trained.log.initial_loss);
    println!(
        "{task}: {} examples, {} steps, loss {:.4} → {last:.4}, {seconds:.1}s; wrote {}",
        trained.log.examples,
        trained.log.steps,
        trained.log.initial_loss,
        out.display()
    );
    Ok(0)
}

fn read_text(path: &Path, task: Task) -> Result<Vec<SentenceRecord>> {
    let file = fs::File::open(path).with_context(|| format!("reading {}", path.display()))?;
    let mut records = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let words = editrules::split_words(line);
        records.push(match task {
            Task::T2 => SentenceRecord::new(words.join(" "), words),
            Task::T1 | Task::T3 => SentenceRecord::new(line, Vec::new()),
        });
    }
    Ok(records)
}

fn predict(a: PredictArgs) -> Result<i32> {
    let ckpt = required(&a.checkpoint, "--checkpoint")?;
    let data = required(&a.data, "--data")?;
    let out = required(&a.out, "--out")?;
    let bytes = fs::read(ckpt).with_context(|| format!("reading {}", ckpt.display()))?;
    let (model, _) = Model::from_bytes(&bytes).with_context(|| format!("loading {}", ckpt.display()))?;
    let task = model.task();
    let records = if a.text {
        read_text(data, task)?
    } else {
        load_dataset(data).with_context(|| format!("reading {}", data.display()))?
    };
    let preds = predictions(&model, &records)?;
    let mut bytes = b"# ".to_vec();
    bytes.extend(json_line(&Meta::new("predict", &a, None)?)?);
    for (r, p) in records.iter().zip(&preds) {
        let Value::Object(mut line) = serde_json::to_value(r)? else {
            unreachable!("records serialize to objects")
        };
        line.insert("prediction".into(), serde_json::to_value(p)?);
        bytes.extend(json_line(&line)?);
    }
    write_atomic(out, &bytes)?;
    println!("wrote {} {task} predictions to {}", preds.len(), out.display());
    Ok(0)
}

/// The task whose output shape the predictions have, judged by the first
/// non-empty one.
fn infer_task(pred: &[Prediction]) -> Option<Task> {
    pred.iter().find_map(|p| match p {
        Prediction::Words(w) if !w.is_empty() => Some(Task::T1),
        Prediction::Pairs(v) if !v.is_empty() => Some(Task::T2),
        Prediction::Triples(v) if !v.is_empty() => Some(Task::T3),
        _ => None,
    })
}

/// Reads a file written by `predict` (JSON lines with a `prediction` key) or a
/// bare JSON array of predictions.
fn read_predictions(path: &Path) -> Result<Vec<Prediction>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if text.trim_start().starts_with('[') {
        return serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()));
    }
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut v: Value = serde_json::from_str(line).with_context(|| format!("{}:{}", path.display(), i + 1))?;
        let p = v
            .get_mut("prediction")
            .map(Value::take)
            .with_context(|| format!("{}:{}: no \"prediction\" key", path.display(), i + 1))?;
        out.push(serde_json::from_value(p).with_context(|| format!("{}:{}", path.display(), i + 1))?);
    }
    Ok(out)
}

fn evaluate(mut a: EvaluateArgs) -> Result<i32> {
    let pred_path = required(&a.pred, "--pred")?.clone();
    let gold_path = required(&a.gold, "--gold")?.clone();
    let pred = read_predictions(&pred_path)?;
    let task = match (a.task, infer_task(&pred)) {
        (Some(t), Some(f)) if t != f => bail!("--task {t} but {} holds {f} predictions", pred_path.display()),
        (Some(t), _) | (None, Some(t)) => t,
        (None, None) => bail!("missing --task (all predictions are empty)"),
    };
    a.task = Some(task);
    let mode = *a.mode.get_or_insert(ScoreMode::Strict);
    let gold = load_dataset(&gold_path).with_context(|| format!("reading {}", gold_path.display()))?;
    let opts = ScoreOptions { mode, symmetric: a.sym };
    let report = eval::score(&pred, &gold, task, opts)?;
    print!("{}", report.to_table());
    if let Some(out) = &a.out {
        let errors = if a.errors {
            Some(eval::error_report(&pred, &gold, task)?)
        } else {
            None
        };
        let doc = json!({ "meta": Meta::new("evaluate", &a, None)?, "report": report, "errors": errors });
        write_atomic(out, &json_line(&doc)?)?;
    }
    match a.min_f1 {
        Some(min) if report.f1 < min => {
            eprintln!("F1 {:.4} is below the required {min}", report.f1);
            Ok(2)
        }
        _ => Ok(0),
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Grid {
    #[serde(default)]
    base: Map<String, Value>,
    grid: BTreeMap<String, Vec<Value>>,
}

/// Cartesian product of the grid, keys in sorted order, last key fastest.
fn grid_points(grid: &BTreeMap<String, Vec<Value>>) -> Vec<Map<String, Value>> {
    let mut points = vec![Map::new()];
    for (key, values) in grid {
        points = points
            .into_iter()
            .flat_map(|p| {
                values.iter().map(move |v| {
                    let mut p = p.clone();
                    p.insert(key.clone(), v.clone());
                    p
                })
            })
            .collect();
    }
    points
}

#[derive(Debug, Serialize)]
struct SweepRow {
    overrides: Map<String, Value>,
    dev_f1: f64,
    seconds: f64,
    config: ModelConfig,
}

fn sweep(mut a: SweepArgs, file: &ConfigFile, flags: &ModelFlags) -> Result<i32> {
    let task = *required(&a.task, "--task")?;
    let train_path = required(&a.train, "--train")?.clone();
    let dev_path = required(&a.dev, "--dev")?.clone();
    let grid_path = required(&a.grid, "--grid")?.clone();
    let threads = *a.threads.get_or_insert(1);
    let grid: Grid = serde_json::from_value(Value::Object(
        ConfigFile::load(Some(&grid_path))?.table(),
    ))
    .with_context(|| format!("parsing {}", grid_path.display()))?;
    let train = load_records(&train_path)?;
    let dev = load_records(&dev_path)?;
    let mut rows = Vec::new();
    for point in grid_points(&grid.grid) {
        let mut overrides = grid.base.clone();
        overrides.extend(point.clone());
        let cfg = resolve_model(task, file, &overrides, flags)?;
        let start = Instant::now();
        let model = Model::new(task, cfg.clone(), &train)?;
        let dev_f1 = match train_model(model, &train, &TrainOptions { threads }) {
            Ok(t) => eval::score_strict(&predictions(&t.model, &dev)?, &dev, task)?.f1,
            Err(TrainError::NonFinite { .. }) => {
                log::warn!("{} diverged; scored as 0", Value::Object(point.clone()));
                0.0
            }
            Err(e) => return Err(e.into()),
        };
        let seconds = start.elapsed().as_secs_f64();
        log::info!("{}: dev F1 {dev_f1:.4}", Value::Object(point.clone()));
        rows.push(SweepRow {
            overrides: point,
            dev_f1,
            seconds,
            config: cfg,
        });
    }
    rows.sort_by(|x, y| y.dev_f1.total_cmp(&x.dev_f1));
    println!("{:>4}  {:>8}  {:>8}  settings", "rank", "dev F1", "seconds");
    for (i, r) in rows.iter().enumerate() {
        let settings: Vec<String> = r.overrides.iter().map(|(k, v)| format!("{k}={v}")).collect();
        println!("{:>4}  {:>8.4}  {:>8.1}  {}", i + 1, r.dev_f1, r.seconds, settings.join(" "));
    }
    if let Some(out) = &a.out {
        let doc = json!({ "meta": Meta::new("sweep", &a, None)?, "grid": grid.grid, "base": grid.base, "rows": rows });
        write_atomic(out, &json_line(&doc)?)?;
    }
    Ok(0)
}

/// Finds the run metadata in a checkpoint, a JSON artifact or a dataset file.
fn read_meta(path: &Path) -> Result<Meta> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let meta = if bytes.starts_with(CHECKPOINT_MAGIC) {
        let header = Model::read_header(&mut &bytes[..])?;
        header.extra.get("meta").cloned()
    } else if bytes.starts_with(b"#") {
        let line = bytes.split(|&b| b == b'\n').next().unwrap_or_default();
        serde_json::from_slice::<Value>(&line[1..]).ok()
    } else {
        serde_json::from_slice::<Value>(&bytes)
            .ok()
            .and_then(|v| v.get("meta").cloned())
    };
    let meta = meta.with_context(|| format!("{} carries no run metadata", path.display()))?;
    Ok(serde_json::from_value(meta)?)
}
