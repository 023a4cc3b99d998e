//! Command-line entry point.
//!
//! Exit codes: 0 on success, 1 on data errors (each failing record is named
//! on stderr), 2 on usage errors including bad config files.

use std::collections::{BTreeMap, HashSet};
use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::flatjson::{flatten, FlattenPolicy};
use crate::grpo::GrpoConfig;
use crate::metrics::{evaluate_corpus, EvalReport};
use crate::rewards::{reward, RewardConfig};
use crate::schema::{parse_schema, render_prompt, sample_keys, Schema, Strategy, DEFAULT_TEMPLATE, TOY_SCHEMA};
use crate::toyenv::{ema, train, TrainConfig, TrainLog, TrainRow};

pub const CONFIG_ENV: &str = "VIE_KIT_CONFIG";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub schema: Option<PathBuf>,
    pub template: Option<PathBuf>,
    pub data: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    pub markdown_title: String,
    /// EMA span used by `plot-data`.
    pub ema_span: f64,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig {
            markdown_title: "Evaluation".to_owned(),
            ema_span: 20.0,
        }
    }
}

/// Toy-trainer settings; reward and GRPO settings come from their own
/// sections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    pub strategy: Strategy,
    pub steps: usize,
    pub lr: f64,
    pub updates_per_step: usize,
    pub max_len: usize,
    pub n_buckets: usize,
    pub temperature: f64,
    pub off_query_penalty: f64,
    pub n_docs: usize,
    pub corrupt_format: f64,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        ToyConfig {
            strategy: t.strategy,
            steps: t.steps,
            lr: t.lr,
            updates_per_step: t.updates_per_step,
            max_len: t.max_len,
            n_buckets: t.n_buckets,
            temperature: t.temperature,
            off_query_penalty: t.off_query_penalty,
            n_docs: t.n_docs,
            corrupt_format: t.corrupt_format,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub reward: RewardConfig,
    pub grpo: GrpoConfig,
    pub paths: PathsConfig,
    pub report: ReportConfig,
    pub train: ToyConfig,
}

impl AppConfig {
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            grpo: self.grpo,
            reward: self.reward,
            strategy: t.strategy,
            steps: t.steps,
            lr: t.lr,
            updates_per_step: t.updates_per_step,
            max_len: t.max_len,
            n_buckets: t.n_buckets,
            temperature: t.temperature,
            off_query_penalty: t.off_query_penalty,
            n_docs: t.n_docs,
            corrupt_format: t.corrupt_format,
            ..TrainConfig::default()
        }
    }
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("line {line}: {message}")]
    MalformedLine { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct JsonlRecord {
    /// 1-based line number in the source.
    pub line: usize,
    pub value: Value,
}

/// Parses one JSON value per non-blank line.
pub fn read_jsonl<R: BufRead>(reader: R, source: &str) -> impl Iterator<Item = Result<JsonlRecord, LoadError>> {
    let source = source.to_owned();
    reader.lines().enumerate().filter_map(move |(i, line)| {
        let line_no = i + 1;
        match line {
            Err(e) => Some(Err(LoadError::Io {
                path: source.clone(),
                source: e,
            })),
            Ok(text) if text.trim().is_empty() => None,
            Ok(text) => Some(
                serde_json::from_str(&text)
                    .map(|value| JsonlRecord { line: line_no, value })
                    .map_err(|e| LoadError::MalformedLine {
                        line: line_no,
                        message: e.to_string(),
                    }),
            ),
        }
    })
}

pub fn load_jsonl(path: &Path) -> Result<impl Iterator<Item = Result<JsonlRecord, LoadError>>, LoadError> {
    let file = File::open(path).map_err(|e| LoadError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    Ok(read_jsonl(BufReader::new(file), &path.display().to_string()))
}

#[derive(Debug, Parser)]
#[command(name = "vie-kit", version, about = "Verifiable rewards, metrics and a toy GRPO trainer for JSON extraction")]
struct Cli {
    /// TOML config file (also read from $VIE_KIT_CONFIG)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Flatten each JSON value of a JSONL stream to {path: value}
    Flatten(FlattenArgs),
    /// Score {"response", "gold"} records
    Reward(RewardArgs),
    /// Field-level and TED metrics over {"id", "json"} files
    Eval(EvalArgs),
    /// Build training queries from gold records
    SampleQueries(SampleArgs),
    /// Train the toy policy and write the per-step log as CSV
    TrainToy(TrainArgs),
    /// Add EMA-smoothed columns to a training log
    PlotData(PlotArgs),
}

#[derive(Debug, Args)]
struct FlattenArgs {
    /// JSONL input, `-` or absent for stdin
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Keep leaves that normalize to ""
    #[arg(long)]
    keep_empty: bool,
}

#[derive(Debug, Args)]
struct RewardArgs {
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    alpha: Option<f64>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gold: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    markdown: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SampleArgs {
    /// Commented-JSON schema (defaults to the config path, then the toy schema)
    #[arg(long)]
    schema: Option<PathBuf>,
    #[arg(long)]
    gold: PathBuf,
    #[arg(long)]
    strategy: Option<Strategy>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Prompt template containing `{fields}`
    #[arg(long)]
    template: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    strategy: Option<Strategy>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    group_size: Option<usize>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    /// Probability of dropping the think block from a response
    #[arg(long)]
    corrupt_format: Option<f64>,
    #[arg(long)]
    schema: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PlotArgs {
    /// CSV written by train-toy
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    span: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Data(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Data(e)
    }
}

type CmdResult = Result<usize, Failure>;

/// Runs the CLI on `argv` (program name first) and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let outcome = load_config(cli.config.as_deref()).and_then(|cfg| dispatch(cli.command, &cfg));
    match outcome {
        Ok(0) => 0,
        Ok(n) => {
            eprintln!("vie-kit: {n} record(s) failed");
            1
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn load_config(flag: Option<&Path>) -> Result<AppConfig, Failure> {
    let path = match flag {
        Some(p) => Some(p.to_path_buf()),
        None => std::env::var_os(CONFIG_ENV).filter(|v| !v.is_empty()).map(PathBuf::from),
    };
    match path {
        Some(p) => AppConfig::load(&p).map_err(|e| Failure::Usage(format!("{e:#}"))),
        None => Ok(AppConfig::default()),
    }
}

fn dispatch(cmd: Command, cfg: &AppConfig) -> CmdResult {
    match cmd {
        Command::Flatten(a) => cmd_flatten(a, cfg),
        Command::Reward(a) => cmd_reward(a, cfg),
        Command::Eval(a) => cmd_eval(a, cfg),
        Command::SampleQueries(a) => cmd_sample(a, cfg),
        Command::TrainToy(a) => cmd_train(a, cfg),
        Command::PlotData(a) => cmd_plot(a, cfg),
    }
}

fn open_input(path: Option<&Path>) -> anyhow::Result<(Box<dyn BufRead>, String)> {
    match path {
        None => Ok((Box::new(BufReader::new(io::stdin())), "<stdin>".to_owned())),
        Some(p) if p == Path::new("-") => Ok((Box::new(BufReader::new(io::stdin())), "<stdin>".to_owned())),
        Some(p) => {
            let f = File::open(p).with_context(|| format!("opening {}", p.display()))?;
            Ok((Box::new(BufReader::new(f)), p.display().to_string()))
        }
    }
}

fn write_output(path: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match path {
        None => io::stdout().write_all(text.as_bytes()).context("writing stdout"),
        Some(p) if p == Path::new("-") => io::stdout().write_all(text.as_bytes()).context("writing stdout"),
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
    }
}

fn record_error(source: &str, err: impl std::fmt::Display) {
    eprintln!("error: {source}: {err}");
}

fn cmd_flatten(a: FlattenArgs, _cfg: &AppConfig) -> CmdResult {
    let policy = FlattenPolicy { drop_empty: !a.keep_empty };
    let (reader, source) = open_input(a.input.as_deref())?;
    let mut out = String::new();
    let mut failed = 0;
    for rec in read_jsonl(reader, &source) {
        match rec {
            Ok(r) => {
                out.push_str(&flatten(&r.value, policy).to_json().to_string());
                out.push('\n');
            }
            Err(e) => {
                failed += 1;
                record_error(&source, e);
            }
        }
    }
    write_output(a.out.as_deref(), &out)?;
    Ok(failed)
}

fn cmd_reward(a: RewardArgs, cfg: &AppConfig) -> CmdResult {
    let mut rcfg = cfg.reward;
    if let Some(alpha) = a.alpha {
        rcfg.alpha = alpha;
    }
    rcfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let (reader, source) = open_input(a.input.as_deref())?;
    let mut out = String::new();
    let mut failed = 0;
    for rec in read_jsonl(reader, &source) {
        let scored = rec.map_err(anyhow::Error::from).and_then(|r| {
            let line = r.line;
            let resp = r.value.get("response").and_then(Value::as_str);
            let gold = r.value.get("gold");
            match (resp, gold) {
                (Some(resp), Some(gold)) => {
                    reward(resp, gold, &rcfg).map_err(|e| anyhow!("line {line}: {e}"))
                }
                _ => Err(anyhow!("line {line}: expected {{\"response\": string, \"gold\": object}}")),
            }
        });
        match scored {
            Ok(b) => {
                out.push_str(&serde_json::to_string(&b).expect("breakdown serializes"));
                out.push('\n');
            }
            Err(e) => {
                failed += 1;
                record_error(&source, e);
            }
        }
    }
    write_output(a.out.as_deref(), &out)?;
    Ok(failed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct InputError {
    file: String,
    message: String,
}

#[derive(Debug, Serialize)]
struct EvalOutput<'a> {
    #[serde(flatten)]
    report: &'a EvalReport,
    input_errors: Vec<InputError>,
}

// Reads {"id", "json"} records keyed by id, in file order.
fn load_id_records(path: &Path, errors: &mut Vec<InputError>) -> anyhow::Result<Vec<(String, Value)>> {
    let file = path.display().to_string();
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for rec in load_jsonl(path)? {
        let parsed = rec.map_err(anyhow::Error::from).and_then(|r| {
            let id = r.value.get("id").and_then(Value::as_str);
            let json = r.value.get("json");
            match (id, json) {
                (Some(id), Some(json)) => Ok((id.to_owned(), json.clone())),
                _ => Err(anyhow!("line {}: expected {{\"id\": string, \"json\": value}}", r.line)),
            }
        });
        match parsed {
            Ok((id, _)) if !seen.insert(id.clone()) => {
                errors.push(InputError {
                    file: file.clone(),
                    message: format!("duplicate id `{id}`"),
                });
            }
            Ok(pair) => out.push(pair),
            Err(e) => errors.push(InputError {
                file: file.clone(),
                message: e.to_string(),
            }),
        }
    }
    Ok(out)
}

fn cmd_eval(a: EvalArgs, cfg: &AppConfig) -> CmdResult {
    let mut input_errors = Vec::new();
    let gold = load_id_records(&a.gold, &mut input_errors)?;
    let pred: BTreeMap<String, Value> = load_id_records(&a.pred, &mut input_errors)?.into_iter().collect();
    let gold_ids: HashSet<&str> = gold.iter().map(|(id, _)| id.as_str()).collect();
    for id in pred.keys().filter(|id| !gold_ids.contains(id.as_str())) {
        input_errors.push(InputError {
            file: a.pred.display().to_string(),
            message: format!("id `{id}` has no gold record"),
        });
    }

    // a missing prediction scores as an empty one
    let empty = Value::Object(Map::new());
    let triples = gold
        .iter()
        .map(|(id, g)| (id.as_str(), pred.get(id).unwrap_or(&empty), g));
    let report = evaluate_corpus(triples, cfg.reward.flatten_policy());

    let output = EvalOutput {
        report: &report,
        input_errors: input_errors.clone(),
    };
    let text = serde_json::to_string_pretty(&output).expect("report serializes") + "\n";
    write_output(Some(&a.out), &text)?;
    if let Some(md) = &a.markdown {
        write_output(Some(md), &report.to_markdown(&cfg.report.markdown_title))?;
    }

    for e in &input_errors {
        record_error(&e.file, &e.message);
    }
    for (id, msg) in report.errors() {
        eprintln!("error: record `{id}`: {msg}");
    }
    Ok(input_errors.len() + report.n_errors)
}

fn resolve_schema(flag: Option<&Path>, cfg: &AppConfig) -> Result<Schema, Failure> {
    let text = match flag.or(cfg.paths.schema.as_deref()) {
        Some(p) => fs::read_to_string(p).with_context(|| format!("reading schema {}", p.display()))?,
        None => TOY_SCHEMA.to_owned(),
    };
    parse_schema(&text).map_err(|e| Failure::Data(anyhow!(e)))
}

fn cmd_sample(a: SampleArgs, cfg: &AppConfig) -> CmdResult {
    let schema = resolve_schema(a.schema.as_deref(), cfg)?;
    let template = match a.template.as_deref().or(cfg.paths.template.as_deref()) {
        Some(p) => fs::read_to_string(p).with_context(|| format!("reading template {}", p.display()))?,
        None => DEFAULT_TEMPLATE.to_owned(),
    };
    let strategy = a.strategy.unwrap_or(cfg.train.strategy);
    let mut errors = Vec::new();
    let gold = load_id_records(&a.gold, &mut errors)?;
    let mut seeds = ChaCha8Rng::seed_from_u64(a.seed);
    let mut out = String::new();
    let mut failed = errors.len();
    for e in &errors {
        record_error(&e.file, &e.message);
    }
    for (id, doc) in &gold {
        let built = sample_keys(&schema, doc, seeds.next_u64(), strategy)
            .and_then(|q| Ok((render_prompt(&q, &template)?, q)));
        match built {
            Ok((prompt, q)) => {
                let row = json!({
                    "id": id,
                    "keys": q.key_names().collect::<Vec<_>>(),
                    "prompt": prompt,
                    "gold": q.gold_subset,
                });
                out.push_str(&row.to_string());
                out.push('\n');
            }
            Err(e) => {
                failed += 1;
                eprintln!("error: record `{id}`: {e}");
            }
        }
    }
    write_output(a.out.as_deref(), &out)?;
    Ok(failed)
}

fn cmd_train(a: TrainArgs, cfg: &AppConfig) -> CmdResult {
    let mut tc = cfg.train_config();
    if let Some(alpha) = a.alpha {
        tc.reward.alpha = alpha;
    }
    if let Some(s) = a.strategy {
        tc.strategy = s;
    }
    if let Some(n) = a.steps {
        tc.steps = n;
    }
    if let Some(g) = a.group_size {
        tc.grpo.group_size = g;
    }
    if let Some(b) = a.beta {
        tc.grpo.beta = b;
    }
    if let Some(lr) = a.lr {
        tc.lr = lr;
    }
    if let Some(p) = a.corrupt_format {
        tc.corrupt_format = p;
    }
    tc.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let seed = a.seed.unwrap_or(cfg.train.seed);
    let schema = resolve_schema(a.schema.as_deref(), cfg)?;
    let run = train(&schema, &tc, seed).map_err(|e| Failure::Data(anyhow!(e)))?;
    let csv = run.log.to_csv().context("encoding training log")?;
    write_output(a.out.as_deref(), &csv)?;
    Ok(0)
}

fn cmd_plot(a: PlotArgs, cfg: &AppConfig) -> CmdResult {
    let span = a.span.unwrap_or(cfg.report.ema_span);
    if !(span >= 1.0) {
        return Err(Failure::Usage(format!("span must be at least 1, got {span}")));
    }
    let mut text = String::new();
    File::open(&a.input)
        .and_then(|mut f| f.read_to_string(&mut text))
        .with_context(|| format!("reading {}", a.input.display()))?;
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let rows: Vec<TrainRow> = reader
        .deserialize()
        .collect::<Result<_, _>>()
        .with_context(|| format!("parsing {}", a.input.display()))?;
    let log = TrainLog { rows };

    let col = |f: fn(&TrainRow) -> f64| log.rows.iter().map(f).collect::<Vec<_>>();
    let series = [
        ("mean_reward", col(|r| r.mean_reward)),
        ("mean_len", col(|r| r.mean_len)),
        ("clip_frac", col(|r| r.clip_frac)),
        ("kl", col(|r| r.kl)),
    ];
    let smoothed: Vec<Vec<f64>> = series.iter().map(|(_, v)| ema(v, span)).collect();

    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["step".to_owned()];
    for (name, _) in &series {
        header.push((*name).to_owned());
        header.push(format!("{name}_ema"));
    }
    w.write_record(&header).context("writing csv")?;
    for (i, row) in log.rows.iter().enumerate() {
        let mut rec = vec![row.step.to_string()];
        for (k, (_, raw)) in series.iter().enumerate() {
            rec.push(raw[i].to_string());
            rec.push(smoothed[k][i].to_string());
        }
        w.write_record(&rec).context("writing csv")?;
    }
    let bytes = w.into_inner().map_err(|e| anyhow!(e.to_string()))?;
    write_output(a.out.as_deref(), &String::from_utf8(bytes).expect("csv is utf-8"))?;
    Ok(0)
}
