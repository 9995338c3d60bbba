//! `mtlsp` command-line front end.

use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser as ClapParser, Subcommand};
use log::{info, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use mtlsp::amr::{self, parse_penman, parse_penman_document, LinearAmr};
use mtlsp::corpus::{self, CorpusError, Formalism, Record};
use mtlsp::eval::{self, corpus_smatch, exact_match, SmatchResult};
use mtlsp::model::{ArchMode, ModelConfig, ModelError, Preset};
use mtlsp::sampler::{SamplerState, Strategy};
use mtlsp::seed::stream_seed;
use mtlsp::toy::{self, Grammar, ToyGrammarSpec};
use mtlsp::trainer::{self, TrainConfig, TrainError};
use mtlsp::ParserModel;

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::MissingTaskMarker => CliError::Usage(format!("{e}; pass --task")),
            ModelError::Config(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e.root() {
            TrainError::NumericFailure { .. } => CliError::Numeric(e.to_string()),
            TrainError::Config(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(ClapParser)]
#[command(name = "mtlsp", version, about = "Multi-task sequence-to-sequence semantic parsing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a parser on the tasks of a manifest.
    Train(TrainArgs),
    /// Score predictions against gold targets.
    Evaluate(EvaluateArgs),
    /// Parse input sentences with a trained model.
    Parse(ParseArgs),
    /// Print per-epoch task sampling probabilities as CSV.
    SamplePlan(SamplePlanArgs),
    /// Smatch between two PENMAN files.
    Smatch(SmatchArgs),
    /// Convert JSONL PENMAN targets to linearized form.
    Linearize(StreamArgs),
    /// Convert JSONL linearized targets back to PENMAN.
    Restore(StreamArgs),
    /// Write a synthetic toy dataset and manifest.
    GenerateToy(ToyArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// single, 1-to-n or 1-to-1; defaults to single for one task, 1-to-1 otherwise
    #[arg(long)]
    mode: Option<ArchMode>,
    #[arg(long)]
    strategy: Option<Strategy>,
    /// JSON file with optional `preset`, `model` and `train` sections
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Train a single seed instead of the configured list
    #[arg(long)]
    seed: Option<u64>,
    /// Dev losses per task, comma separated (loss strategy only)
    #[arg(long, value_delimiter = ',')]
    dev_losses: Option<Vec<f64>>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    gold: PathBuf,
    #[arg(long)]
    pred: PathBuf,
    #[arg(long, value_enum)]
    metric: Metric,
    #[arg(long, default_value_t = eval::DEFAULT_RESTARTS)]
    restarts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Metric {
    Exact,
    Smatch,
}

#[derive(Args)]
struct ParseArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    task: Option<String>,
    /// Read one sentence per line from this file
    #[arg(long)]
    file: Option<PathBuf>,
    /// Override the model's beam size
    #[arg(long)]
    beam: Option<usize>,
    /// Restore AMR output to PENMAN
    #[arg(long)]
    penman: bool,
    /// Sentence to parse; stdin is read when neither this nor --file is given
    text: Option<String>,
}

#[derive(Args)]
struct SamplePlanArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    strategy: Strategy,
    #[arg(long, default_value_t = 1)]
    epochs: usize,
    #[arg(long, value_delimiter = ',')]
    dev_losses: Option<Vec<f64>>,
}

#[derive(Args)]
struct SmatchArgs {
    #[arg(long)]
    gold: PathBuf,
    #[arg(long)]
    pred: PathBuf,
    #[arg(long, default_value_t = eval::DEFAULT_RESTARTS)]
    restarts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct StreamArgs {
    #[arg(long)]
    input: PathBuf,
    /// Defaults to stdout
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ToyArgs {
    /// copy, reverse or bracketed-query; repeat for several tasks
    #[arg(long, required = true)]
    grammar: Vec<Grammar>,
    #[arg(long, default_value_t = 300)]
    count: usize,
    #[arg(long, default_value_t = 26)]
    vocab_size: usize,
    #[arg(long, default_value_t = 6)]
    max_len: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    preset: Option<String>,
    model: Option<ModelConfig>,
    train: Option<TrainConfig>,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn records(path: &Path) -> Result<Vec<Record>> {
    read(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| CliError::Data(format!("{}:{}: {e}", path.display(), i + 1))))
        .collect()
}

fn write_out(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| CliError::Data(format!("{}: {e}", p.display()))),
        None => io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::Data(e.to_string())),
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable") + "\n"
}

fn train(args: TrainArgs) -> Result<()> {
    let tasks = corpus::load_dataset(&args.manifest)?;
    let cfg: RunConfig = match &args.config {
        Some(p) => serde_json::from_str(&read(p)?).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?,
        None => RunConfig::default(),
    };
    let preset = cfg
        .preset
        .as_deref()
        .map(str::parse::<Preset>)
        .transpose()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let mode = args.mode.unwrap_or(match (&cfg.model, preset, tasks.len()) {
        (Some(m), _, _) => m.mode,
        (None, Some(p), _) => p.mode(),
        (None, None, 1) => ArchMode::Single,
        _ => ArchMode::OneToOne,
    });
    let mut model = cfg.model.or(preset.map(|p| p.model_config())).unwrap_or_default();
    model.mode = mode;
    let mut train_cfg = cfg.train.unwrap_or_else(|| {
        let mut t = TrainConfig::default();
        if let Some(p) = preset {
            t.batch_size = p.batch_size();
            t.lr = p.learning_rate();
        }
        t
    });
    if let Some(s) = args.strategy {
        train_cfg.strategy = s;
    }
    if let Some(s) = args.seed {
        train_cfg.seeds = vec![s];
    }
    if train_cfg.strategy == Strategy::Loss && args.dev_losses.is_some() {
        warn!("--dev-losses is ignored by train; initial losses come from the untrained model");
    }
    info!(
        "training {} task(s) in {} mode with {} sampling",
        tasks.len(),
        model.mode,
        train_cfg.strategy
    );
    let (_, report) = trainer::train::<f64>(&tasks, &model, &train_cfg, Some(&args.out))?;
    print!("{}", to_json(&report.summary));
    Ok(())
}

fn evaluate(args: EvaluateArgs) -> Result<()> {
    let (gold, pred) = (records(&args.gold)?, records(&args.pred)?);
    let json = match args.metric {
        Metric::Exact => {
            let g: Vec<&str> = gold.iter().map(|r| r.target.as_str()).collect();
            let p: Vec<&str> = pred.iter().map(|r| r.target.as_str()).collect();
            let r = exact_match(&p, &g).map_err(|e| CliError::Data(e.to_string()))?;
            serde_json::json!({
                "metric": "exact",
                "accuracy": r.accuracy,
                "matched": r.matched(),
                "total": r.matches.len(),
            })
        }
        Metric::Smatch => {
            if gold.len() != pred.len() {
                return Err(CliError::Data(format!(
                    "{} predictions for {} gold items",
                    pred.len(),
                    gold.len()
                )));
            }
            let pairs = gold
                .iter()
                .zip(&pred)
                .map(|(g, p)| Ok((graph(&g.target)?, graph(&p.target)?)))
                .collect::<Result<Vec<_>>>()?;
            smatch_json(corpus_smatch(&pairs, args.restarts, args.seed))
        }
    };
    print!("{}", to_json(&json));
    Ok(())
}

/// PENMAN text, or a linearized graph restored leniently.
fn graph(text: &str) -> Result<amr::AmrGraph> {
    if text.trim_start().starts_with('(') {
        if let Ok(g) = parse_penman(text) {
            return Ok(g);
        }
    }
    let linear: LinearAmr = text.parse().expect("infallible");
    if linear.tokens.is_empty() {
        return Err(CliError::Data("empty AMR target".into()));
    }
    Ok(amr::restore_lenient(&linear))
}

fn smatch_json(r: SmatchResult) -> serde_json::Value {
    let mut v = serde_json::to_value(r).expect("serializable");
    v["metric"] = "smatch".into();
    v
}

fn parse(args: ParseArgs) -> Result<()> {
    let model = ParserModel::load(&args.model)?;
    let fixed = match &args.task {
        Some(name) => Some(
            model
                .task_index(name)
                .ok_or_else(|| CliError::Usage(format!("model has no task '{name}'")))?,
        ),
        None if model.tasks().len() == 1 => Some(0),
        None if model.config().mode == ArchMode::OneToN => {
            return Err(CliError::Usage("--task is required for one-to-n models".into()))
        }
        None => None,
    };
    let lines: Vec<String> = match (&args.text, &args.file) {
        (Some(t), None) => vec![t.clone()],
        (None, Some(f)) => read(f)?.lines().map(str::to_string).collect(),
        (None, None) => io::stdin()
            .lock()
            .lines()
            .collect::<io::Result<_>>()
            .map_err(|e| CliError::Data(e.to_string()))?,
        (Some(_), Some(_)) => return Err(CliError::Usage("give either TEXT or --file, not both".into())),
    };
    let beam = args.beam.unwrap_or(model.config().beam);
    let mut out = String::new();
    for line in lines.iter().filter(|l| !l.trim().is_empty()) {
        let mut tokens = corpus::tokenize(line);
        let task = match fixed {
            Some(t) => t,
            // one-to-one input may name its task with a leading marker
            None => {
                let named = tokens
                    .first()
                    .and_then(|m| model.tasks().iter().position(|t| corpus::task_marker(&t.name) == *m));
                match named {
                    Some(t) => {
                        tokens.remove(0);
                        t
                    }
                    None => return Err(ModelError::MissingTaskMarker.into()),
                }
            }
        };
        let hyps = model.beam_search(&tokens, task, beam)?;
        let target = model.render(&hyps[0].actions, &tokens, task);
        let text = if args.penman && model.tasks()[task].formalism == Formalism::Amr {
            amr::restore_lenient(&LinearAmr::from_tokens(&target)).to_penman()
        } else {
            target.join(" ")
        };
        out.push_str(&text);
        out.push('\n');
    }
    write_out(None, &out)
}

fn sample_plan(args: SamplePlanArgs) -> Result<()> {
    let tasks = corpus::load_dataset(&args.manifest)?;
    let sizes = tasks.iter().map(|t| t.size_train()).collect();
    let bad = |e: mtlsp::sampler::SamplerError| CliError::Usage(e.to_string());
    let mut state = SamplerState::new(args.strategy, sizes).map_err(bad)?;
    match (args.strategy, args.dev_losses) {
        (Strategy::Loss, Some(losses)) => state = state.with_dev_losses(losses).map_err(bad)?,
        (Strategy::Loss, None) => return Err(CliError::Usage("the loss strategy needs --dev-losses".into())),
        (_, Some(_)) => warn!("--dev-losses only affects the loss strategy"),
        _ => {}
    }
    let mut csv = String::from("epoch");
    for t in &tasks {
        csv.push(',');
        csv.push_str(&t.name);
    }
    csv.push('\n');
    for epoch in 1..=args.epochs {
        let p = state.probabilities().map_err(bad)?;
        csv.push_str(&epoch.to_string());
        for x in p {
            csv.push_str(&format!(",{x}"));
        }
        csv.push('\n');
        state.on_epoch_end(None).map_err(bad)?;
    }
    write_out(None, &csv)
}

fn smatch(args: SmatchArgs) -> Result<()> {
    let load = |p: &Path| parse_penman_document(&read(p)?).map_err(|e| CliError::Data(format!("{}: {e}", p.display())));
    let (gold, pred) = (load(&args.gold)?, load(&args.pred)?);
    if gold.len() != pred.len() {
        return Err(CliError::Data(format!(
            "{} predicted graphs for {} gold graphs",
            pred.len(),
            gold.len()
        )));
    }
    let pairs: Vec<_> = gold.into_iter().zip(pred).collect();
    print!(
        "{}",
        to_json(&smatch_json(corpus_smatch(&pairs, args.restarts, args.seed)))
    );
    Ok(())
}

fn convert(args: StreamArgs, f: impl Fn(&str, usize) -> Result<String>) -> Result<()> {
    let mut out = String::new();
    for (i, r) in records(&args.input)?.into_iter().enumerate() {
        let target = f(&r.target, i + 1)?;
        out.push_str(
            &serde_json::to_string(&Record {
                source: r.source,
                target,
            })
            .expect("serializable"),
        );
        out.push('\n');
    }
    write_out(args.output.as_deref(), &out)
}

fn linearize(args: StreamArgs) -> Result<()> {
    let path = args.input.clone();
    convert(args, |t, line| {
        parse_penman(t)
            .map(|g| amr::linearize(&g).to_string())
            .map_err(|e| CliError::Data(format!("{}:{line}: {e}", path.display())))
    })
}

fn restore(args: StreamArgs) -> Result<()> {
    convert(args, |t, line| {
        let linear: LinearAmr = t.parse().expect("infallible");
        Ok(match amr::restore(&linear) {
            Ok(g) => g.to_penman(),
            Err(e) => {
                warn!("line {line}: {e}; repairing");
                amr::restore_lenient(&linear).to_penman()
            }
        })
    })
}

fn generate_toy(args: ToyArgs) -> Result<()> {
    let mut entries = Vec::new();
    for (i, grammar) in args.grammar.iter().enumerate() {
        let name = grammar.to_string();
        if args.grammar[..i].contains(grammar) {
            return Err(CliError::Usage(format!("grammar '{name}' given twice")));
        }
        let spec = ToyGrammarSpec {
            grammar: *grammar,
            count: args.count,
            vocab_size: args.vocab_size,
            max_len: args.max_len,
            seed: stream_seed(args.seed, &format!("toy/{name}")),
        };
        let entry = toy::write_task(&spec, &name, &args.out).map_err(|e| CliError::Data(e.to_string()))?;
        entries.push(entry);
    }
    let manifest = args.out.join("manifest.json");
    toy::write_manifest(&manifest, entries).map_err(|e| CliError::Data(e.to_string()))?;
    println!("{}", manifest.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MTLSP_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(u8::from(e.use_stderr()));
        }
    };
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Parse(a) => parse(a),
        Command::SamplePlan(a) => sample_plan(a),
        Command::Smatch(a) => smatch(a),
        Command::Linearize(a) => linearize(a),
        Command::Restore(a) => restore(a),
        Command::GenerateToy(a) => generate_toy(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
