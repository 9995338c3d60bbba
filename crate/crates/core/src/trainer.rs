//! Multi-task training: sampled single-task batches, Adam, dev evaluation,
//! early stopping and multi-seed aggregation.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::amr::{self, LinearAmr};
use crate::corpus::{self, Example, Formalism, TaskSpec};
use crate::eval;
use crate::model::{ArchMode, ModelConfig, ModelError, ParamCount, Parser};
use crate::numkernel::{KernelError, ParamStore, Tape, Tensor};
use crate::sampler::{draw_from, AnnealSchedule, SamplerError, SamplerState, Strategy};
use crate::scalar::Scalar;
use crate::seed::{stream_rng, stream_seed};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error("non-finite loss at step {step} on task '{task}': {detail}")]
    NumericFailure { step: usize, task: String, detail: String },
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("seed {seed} failed: {source}")]
    Seed {
        seed: u64,
        #[source]
        source: Box<TrainError>,
    },
}

impl TrainError {
    /// The innermost error, with seed wrappers removed.
    pub fn root(&self) -> &TrainError {
        match self {
            TrainError::Seed { source, .. } => source.root(),
            other => other,
        }
    }
}

fn io_err(path: &Path, e: impl ToString) -> TrainError {
    TrainError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Dev evaluations without improvement before stopping.
    pub patience: usize,
    pub max_epochs: usize,
    pub seeds: Vec<u64>,
    /// Evaluate every this many steps; 0 evaluates once per epoch.
    pub eval_every: usize,
    /// Inverse-square-root warmup length; 0 keeps `lr` constant.
    pub warmup_steps: usize,
    /// Global gradient-norm bound; 0 disables clipping.
    pub clip_norm: f64,
    pub strategy: Strategy,
    pub anneal: AnnealSchedule,
    pub smatch_restarts: usize,
    /// Decode dev examples after each evaluation and log the task metric.
    pub dev_metrics: bool,
    /// Run seeds on separate threads.
    pub parallel_seeds: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 10,
            lr: 0.05,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            patience: 10,
            max_epochs: 100,
            seeds: vec![1, 2, 3],
            eval_every: 0,
            warmup_steps: 4000,
            clip_norm: 1.0,
            strategy: Strategy::Proportional,
            anneal: AnnealSchedule::default(),
            smatch_restarts: eval::DEFAULT_RESTARTS,
            dev_metrics: true,
            parallel_seeds: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.patience == 0 {
            return bad("patience must be at least 1");
        }
        if self.seeds.is_empty() {
            return bad("seeds must be nonempty");
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr must be a nonnegative number");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0 {
            return bad("adam needs betas in [0, 1) and eps > 0");
        }
        if self.clip_norm < 0.0 {
            return bad("clip_norm must be nonnegative");
        }
        Ok(())
    }
}

/// Step size at 1-based `step`: `lr * units^-0.5 * min(step^-0.5, step * warmup^-1.5)`
/// with warmup, plain `lr` without.
pub fn learning_rate(cfg: &TrainConfig, units: usize, step: usize) -> f64 {
    if cfg.warmup_steps == 0 {
        return cfg.lr;
    }
    let s = step.max(1) as f64;
    let w = cfg.warmup_steps as f64;
    cfg.lr * (units as f64).powf(-0.5) * s.powf(-0.5).min(s * w.powf(-1.5))
}

#[derive(Clone, Debug)]
pub struct AdamState<T> {
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        let zeros: Vec<Tensor<T>> = params.iter().map(|(_, _, p)| Tensor::zeros(p.shape())).collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }
}

/// One bias-corrected Adam update over every parameter.
pub fn adam_step<T: Scalar>(
    params: &mut ParamStore<T>,
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) -> Result<(), TrainError> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(TrainError::Config(format!(
            "{} gradients and {} moment slots for {} parameters",
            grads.len(),
            state.m.len(),
            params.len()
        )));
    }
    state.t += 1;
    let c1 = 1.0 - beta1.powi(state.t as i32);
    let c2 = 1.0 - beta2.powi(state.t as i32);
    let (b1, b2, lr, eps) = (T::of(beta1), T::of(beta2), T::of(lr), T::of(eps));
    let (c1, c2) = (T::of(c1), T::of(c2));
    let ids: Vec<_> = params.iter().map(|(id, _, _)| id).collect();
    for (k, id) in ids.into_iter().enumerate() {
        let p = params.get_mut(id);
        if grads[k].shape() != p.shape() || state.m[k].shape() != p.shape() {
            return Err(TrainError::Config(format!("shape mismatch for parameter {k}")));
        }
        let g = grads[k].data();
        let m = state.m[k].data_mut();
        for (mi, &gi) in m.iter_mut().zip(g) {
            *mi = b1 * *mi + (T::one() - b1) * gi;
        }
        let v = state.v[k].data_mut();
        for (vi, &gi) in v.iter_mut().zip(g) {
            *vi = b2 * *vi + (T::one() - b2) * gi * gi;
        }
        let (m, v) = (state.m[k].data(), state.v[k].data());
        for ((pi, &mi), &vi) in p.data_mut().iter_mut().zip(m).zip(v) {
            *pi -= lr * (mi / c1) / ((vi / c2).sqrt() + eps);
        }
    }
    Ok(())
}

/// Scales gradients so their global L2 norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_gradients<T: Scalar>(grads: &mut [Tensor<T>], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g.sq_norm().as_f64()).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = T::of(max_norm / norm);
        for g in grads.iter_mut() {
            for x in g.data_mut() {
                *x *= s;
            }
        }
    }
    norm
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Patience-based early stopping on a loss that should decrease.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_index: Option<usize>,
    seen: usize,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            best_index: None,
            seen: 0,
            stale: 0,
        }
    }

    pub fn observe(&mut self, loss: f64) -> StopDecision {
        self.seen += 1;
        if loss < self.best {
            self.best = loss;
            self.best_index = Some(self.seen);
            self.stale = 0;
            StopDecision::Improved
        } else {
            self.stale += 1;
            if self.stale >= self.patience {
                StopDecision::Stop
            } else {
                StopDecision::Continue
            }
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    /// 1-based index of the best evaluation.
    pub fn best_index(&self) -> Option<usize> {
        self.best_index
    }
}

/// Dev-set numbers for one task at one evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub seed: u64,
    pub epoch: usize,
    pub step: usize,
    pub task: String,
    pub dev_loss: f64,
    pub dev_metric: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub error: Option<String>,
    pub epochs_run: usize,
    pub steps: usize,
    pub best_epoch: usize,
    pub best_dev_loss: f64,
    /// Test exact match (tree-string) or Smatch F1 (AMR) per task.
    pub test_metrics: BTreeMap<String, f64>,
    pub train_losses: Vec<f64>,
    pub wall_clock_secs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub n: usize,
}

impl MetricSummary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(MetricSummary {
            mean,
            std: var.sqrt(),
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            n: values.len(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub mode: ArchMode,
    pub strategy: Strategy,
    pub tasks: Vec<String>,
    pub parameter_count: ParamCount,
    pub seeds: Vec<SeedResult>,
    pub summary: BTreeMap<String, MetricSummary>,
    pub failed_seeds: Vec<u64>,
    pub wall_clock_secs: f64,
}

impl RunReport {
    /// Copy with wall-clock fields zeroed, for reproducibility comparisons.
    pub fn without_timing(&self) -> RunReport {
        let mut r = self.clone();
        r.wall_clock_secs = 0.0;
        for s in &mut r.seeds {
            s.wall_clock_secs = 0.0;
        }
        r
    }
}

/// Builds the report from per-seed results; failed seeds are listed and
/// left out of the summary.
pub fn aggregate(
    mode: ArchMode,
    strategy: Strategy,
    tasks: Vec<String>,
    parameter_count: ParamCount,
    seeds: Vec<SeedResult>,
    wall_clock_secs: f64,
) -> RunReport {
    let failed_seeds: Vec<u64> = seeds.iter().filter(|s| s.error.is_some()).map(|s| s.seed).collect();
    if !failed_seeds.is_empty() {
        log::warn!("seeds {failed_seeds:?} failed; aggregating over the rest");
    }
    let mut summary = BTreeMap::new();
    for task in &tasks {
        let values: Vec<f64> = seeds
            .iter()
            .filter(|s| s.error.is_none())
            .filter_map(|s| s.test_metrics.get(task).copied())
            .collect();
        if let Some(m) = MetricSummary::of(&values) {
            summary.insert(task.clone(), m);
        }
    }
    RunReport {
        mode,
        strategy,
        tasks,
        parameter_count,
        seeds,
        summary,
        failed_seeds,
        wall_clock_secs,
    }
}

/// Corpus score of `examples`: exact match for tree-string tasks, Smatch F1
/// for AMR. Gold targets that need UNK count as failures.
pub fn score_split<T: Scalar>(
    model: &Parser<T>,
    examples: &[Example],
    task: usize,
    beam: usize,
    restarts: usize,
    seed: u64,
) -> Result<f64, TrainError> {
    let vocab = model.target_vocab(task);
    let mut preds = Vec::with_capacity(examples.len());
    for ex in examples {
        let hyp = if beam <= 1 {
            model.greedy(&ex.source_tokens, task)?
        } else {
            model.beam_search(&ex.source_tokens, task, beam)?.swap_remove(0)
        };
        preds.push(model.render(&hyp.actions, &ex.source_tokens, task));
    }
    match model.tasks()[task].formalism {
        Formalism::TreeString => {
            let hits = examples
                .iter()
                .zip(&preds)
                .filter(|(ex, p)| !corpus::needs_unk(ex, vocab) && **p == ex.target_tokens)
                .count();
            Ok(hits as f64 / examples.len() as f64)
        }
        Formalism::Amr => {
            let mut pairs = Vec::with_capacity(examples.len());
            for (ex, p) in examples.iter().zip(&preds) {
                let gold = match &ex.gold_penman {
                    Some(text) => amr::parse_penman(text).map_err(|e| TrainError::Data(e.to_string()))?,
                    None => amr::restore_lenient(&LinearAmr::from_tokens(&ex.target_tokens)),
                };
                pairs.push((gold, amr::restore_lenient(&LinearAmr::from_tokens(p))));
            }
            Ok(eval::corpus_smatch(&pairs, restarts, seed).f1)
        }
    }
}

/// One seed's trained model plus its bookkeeping.
pub struct SeedRun<T: Scalar> {
    pub model: Parser<T>,
    pub result: SeedResult,
    pub metrics: Vec<MetricsRow>,
}

fn check_lengths(tasks: &[TaskSpec], max_len: usize) -> Result<(), TrainError> {
    for t in tasks {
        for (split, exs) in [("train", &t.train), ("dev", &t.dev), ("test", &t.test)] {
            for (i, ex) in exs.iter().enumerate() {
                if ex.source_tokens.len() > max_len || ex.gold_actions.len() > max_len {
                    return Err(TrainError::Data(format!(
                        "task '{}' {split} example {} exceeds max_len {max_len}",
                        t.name,
                        i + 1
                    )));
                }
            }
        }
    }
    Ok(())
}

/// Per-task batch cursor over a reshuffled permutation.
struct BatchCursor {
    order: Vec<usize>,
    pos: usize,
}

impl BatchCursor {
    fn next(&mut self, size: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size.min(self.order.len()) {
            if self.pos == self.order.len() {
                self.order.shuffle(rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

struct DevScores {
    losses: Vec<f64>,
    metrics: Vec<Option<f64>>,
}

fn dev_scores<T: Scalar>(
    model: &Parser<T>,
    tasks: &[TaskSpec],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<DevScores, TrainError> {
    let mut losses = Vec::with_capacity(tasks.len());
    let mut metrics = Vec::with_capacity(tasks.len());
    for (i, t) in tasks.iter().enumerate() {
        let (mut nll, mut tokens) = (0.0, 0usize);
        for ex in &t.dev {
            let l = model.sequence_loss(ex, i).map_err(|e| numeric(e, 0, &t.name))?.as_f64();
            nll += l * ex.gold_actions.len() as f64;
            tokens += ex.gold_actions.len();
        }
        losses.push(nll / tokens as f64);
        metrics.push(if cfg.dev_metrics {
            Some(score_split(
                model,
                &t.dev,
                i,
                1,
                cfg.smatch_restarts,
                stream_seed(seed, "eval"),
            )?)
        } else {
            None
        });
    }
    Ok(DevScores { losses, metrics })
}

fn numeric(e: ModelError, step: usize, task: &str) -> TrainError {
    match e {
        ModelError::Kernel(KernelError::NonFinite { op }) => TrainError::NumericFailure {
            step,
            task: task.to_string(),
            detail: format!("non-finite value from {op}"),
        },
        other => TrainError::Model(other),
    }
}

/// Trains one seed. `tasks` must not have gold actions yet; they are aligned
/// against the model's vocabularies here.
pub fn train_seed<T: Scalar>(
    tasks: &[TaskSpec],
    model_config: &ModelConfig,
    cfg: &TrainConfig,
    seed: u64,
    out: Option<&Path>,
) -> Result<SeedRun<T>, TrainError> {
    cfg.validate()?;
    model_config.validate()?;
    let started = Instant::now();
    let mut model: Parser<T> = Parser::for_tasks(model_config.clone(), tasks, seed)?;
    let mut tasks = tasks.to_vec();
    corpus::align_tasks(&mut tasks, model.vocabs());
    check_lengths(&tasks, model_config.max_len)?;

    let sizes: Vec<usize> = tasks.iter().map(TaskSpec::size_train).collect();
    let mut sampler = SamplerState::with_schedule(cfg.strategy, sizes.clone(), cfg.anneal)?;
    let mut sample_rng = stream_rng(seed, "sampler");
    let mut batch_rng = stream_rng(seed, "train");
    let mut cursors: Vec<BatchCursor> = sizes
        .iter()
        .map(|&n| {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut batch_rng);
            BatchCursor { order, pos: 0 }
        })
        .collect();
    let steps_per_epoch = sizes.iter().sum::<usize>().div_ceil(cfg.batch_size);

    if cfg.strategy == Strategy::Loss {
        let initial = dev_scores(&model, &tasks, cfg, seed)?;
        sampler = sampler.with_dev_losses(initial.losses)?;
    }

    let seed_dir = out.map(|o| o.join(format!("seed-{seed}")));
    let mut adam = AdamState::new(model.params());
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best_params = model.params().clone();
    let (mut best_epoch, mut epochs_run, mut step) = (0, 0, 0);
    let mut train_losses = Vec::new();
    let mut metrics = Vec::new();
    let mut latest_dev: Option<Vec<f64>> = None;

    'epochs: for epoch in 1..=cfg.max_epochs {
        epochs_run = epoch;
        let probs = sampler.probabilities()?;
        for b in 0..steps_per_epoch {
            step += 1;
            let task = draw_from(&probs, &mut sample_rng);
            let idx = cursors[task].next(cfg.batch_size, &mut batch_rng);
            let batch: Vec<&Example> = idx.iter().map(|&i| &tasks[task].train[i]).collect();
            let name = &tasks[task].name;
            let (loss, mut grads) = {
                let mut tape = Tape::training(model.params(), stream_seed(seed, &format!("dropout/{step}")));
                let loss = model
                    .batch_loss(&mut tape, &batch, task)
                    .map_err(|e| numeric(e, step, name))?;
                let value = tape.value(loss).item().as_f64();
                let grads = tape
                    .backward(loss)
                    .map_err(|e| numeric(ModelError::Kernel(e), step, name))?;
                (value, grads.dense(model.params()))
            };
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(TrainError::NumericFailure {
                    step,
                    task: name.clone(),
                    detail: "non-finite gradient".into(),
                });
            }
            train_losses.push(loss);
            clip_gradients(&mut grads, cfg.clip_norm);
            let lr = learning_rate(cfg, model_config.units, step);
            adam_step(model.params_mut(), &grads, &mut adam, lr, cfg.beta1, cfg.beta2, cfg.eps)?;

            let due = if cfg.eval_every == 0 {
                b + 1 == steps_per_epoch
            } else {
                step % cfg.eval_every == 0
            };
            if !due {
                continue;
            }
            let scores = dev_scores(&model, &tasks, cfg, seed)?;
            let mean = scores.losses.iter().sum::<f64>() / scores.losses.len() as f64;
            log::info!("seed {seed} epoch {epoch} step {step}: dev loss {mean:.4}");
            for (i, t) in tasks.iter().enumerate() {
                metrics.push(MetricsRow {
                    seed,
                    epoch,
                    step,
                    task: t.name.clone(),
                    dev_loss: scores.losses[i],
                    dev_metric: scores.metrics[i],
                });
            }
            latest_dev = Some(scores.losses);
            let decision = stopper.observe(mean);
            if decision == StopDecision::Improved {
                best_params = model.params().clone();
                best_epoch = epoch;
                if let Some(dir) = &seed_dir {
                    model.save(&dir.join("best"))?;
                }
            }
            if let Some(dir) = &seed_dir {
                model.save(&dir.join("last"))?;
            }
            if decision == StopDecision::Stop {
                log::info!("seed {seed}: early stop at epoch {epoch}, best epoch {best_epoch}");
                break 'epochs;
            }
        }
        sampler.on_epoch_end(latest_dev.clone())?;
    }
    if stopper.best_index().is_some() {
        *model.params_mut() = best_params;
    }

    let eval_seed = stream_seed(seed, "eval");
    let mut test_metrics = BTreeMap::new();
    for (i, t) in tasks.iter().enumerate() {
        let score = score_split(&model, &t.test, i, model_config.beam, cfg.smatch_restarts, eval_seed)?;
        test_metrics.insert(t.name.clone(), score);
    }
    let result = SeedResult {
        seed,
        error: None,
        epochs_run,
        steps: step,
        best_epoch,
        best_dev_loss: stopper.best(),
        test_metrics,
        train_losses,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    };
    Ok(SeedRun { model, result, metrics })
}

fn failed(seed: u64, e: &TrainError) -> SeedResult {
    SeedResult {
        seed,
        error: Some(e.to_string()),
        epochs_run: 0,
        steps: 0,
        best_epoch: 0,
        best_dev_loss: f64::INFINITY,
        test_metrics: BTreeMap::new(),
        train_losses: Vec::new(),
        wall_clock_secs: 0.0,
    }
}

/// Writes per-evaluation dev metrics as CSV.
pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<(), TrainError> {
    let mut text = String::from("seed,epoch,step,task,dev_loss,dev_metric\n");
    for r in rows {
        let metric = r.dev_metric.map(|m| format!("{m:.6}")).unwrap_or_default();
        text.push_str(&format!(
            "{},{},{},{},{:.6},{}\n",
            r.seed, r.epoch, r.step, r.task, r.dev_loss, metric
        ));
    }
    fs::write(path, text).map_err(|e| io_err(path, e))
}

/// Runs every configured seed and aggregates. Returns the surviving model
/// with the lowest dev loss; fails only when every seed fails.
pub fn train<T: Scalar>(
    tasks: &[TaskSpec],
    model_config: &ModelConfig,
    cfg: &TrainConfig,
    out: Option<&Path>,
) -> Result<(Parser<T>, RunReport), TrainError> {
    cfg.validate()?;
    model_config.validate()?;
    if tasks.is_empty() {
        return Err(TrainError::Data("no tasks".into()));
    }
    if model_config.mode == ArchMode::Single && tasks.len() != 1 {
        return Err(TrainError::Config(format!(
            "single mode trains exactly one task, got {}",
            tasks.len()
        )));
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    let started = Instant::now();
    let runs: Vec<Result<SeedRun<T>, TrainError>> = if cfg.parallel_seeds && cfg.seeds.len() > 1 {
        std::thread::scope(|s| {
            let handles: Vec<_> = cfg
                .seeds
                .iter()
                .map(|&seed| s.spawn(move || train_seed::<T>(tasks, model_config, cfg, seed, out)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("training thread panicked"))
                .collect()
        })
    } else {
        cfg.seeds
            .iter()
            .map(|&seed| train_seed::<T>(tasks, model_config, cfg, seed, out))
            .collect()
    };

    let mut results = Vec::new();
    let mut rows = Vec::new();
    let mut best: Option<Parser<T>> = None;
    let mut best_loss = f64::INFINITY;
    let mut first_error = None;
    for (&seed, run) in cfg.seeds.iter().zip(runs) {
        match run {
            Ok(run) => {
                if best.is_none() || run.result.best_dev_loss < best_loss {
                    best_loss = run.result.best_dev_loss;
                    best = Some(run.model);
                }
                results.push(run.result);
                rows.extend(run.metrics);
            }
            Err(e) => {
                log::warn!("seed {seed} failed: {e}");
                results.push(failed(seed, &e));
                first_error.get_or_insert(TrainError::Seed {
                    seed,
                    source: Box::new(e),
                });
            }
        }
    }
    let Some(model) = best else {
        return Err(first_error.expect("at least one seed ran"));
    };
    let report = aggregate(
        model_config.mode,
        cfg.strategy,
        tasks.iter().map(|t| t.name.clone()).collect(),
        model.count_parameters(),
        results,
        started.elapsed().as_secs_f64(),
    );
    if let Some(dir) = out {
        let path = dir.join("report.json");
        let text = serde_json::to_string_pretty(&report).expect("report serializes");
        fs::write(&path, text).map_err(|e| io_err(&path, e))?;
        write_metrics_csv(&dir.join("metrics.csv"), &rows)?;
        model.save(&dir.join("model"))?;
    }
    Ok((model, report))
}
