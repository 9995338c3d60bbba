//! Transformer encoder-decoder parser with a pointer head.
//!
//! The decoder emits one [`Action`] per step. GEN logits come from the tied
//! target embedding; COPY logits are the last decoder layer's cross-attention
//! scores averaged over heads. Both blocks share one softmax.

mod config;
mod plan;

pub use config::{ArchMode, ModelConfig, Preset};
pub use plan::{linear_param_count, Component, Init, ParamCount, ParamPlan, ParamSpec};

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{self, task_marker, Action, Example, Formalism, TaskSpec, Vocab, Vocabs, BOS, EOS, PAD};
use crate::numkernel::{Checkpoint, KernelError, ParamId, ParamStore, Tape, Tensor, Var};
use crate::scalar::Scalar;
use crate::seed::stream_rng;
use plan::{Attention, FeedForward, Linear, Norm};

pub const MODEL_FORMAT: &str = "mtlsp-model-v1";

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("input of {len} tokens exceeds max_len {max}")]
    InputTooLong { len: usize, max: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("unknown task {0}")]
    UnknownTask(String),
    #[error("task marker required as the first token in one-to-one mode")]
    MissingTaskMarker,
    #[error("invalid action {action:?} for {n} source tokens and {vocab} target symbols")]
    InvalidAction { action: Action, n: usize, vocab: usize },
    #[error("prefix of {len} actions reaches max_len {max}")]
    PrefixTooLong { len: usize, max: usize },
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("model directory: {0}")]
    Format(String),
    #[error("hash mismatch for {0}")]
    HashMismatch(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskInfo {
    pub name: String,
    pub formalism: Formalism,
}

impl From<&TaskSpec> for TaskInfo {
    fn from(t: &TaskSpec) -> Self {
        TaskInfo {
            name: t.name.clone(),
            formalism: t.formalism,
        }
    }
}

/// A decoded action sequence and its summed log-probability.
#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    pub actions: Vec<Action>,
    pub score: f64,
    /// Whether the sequence ended with EOS rather than at `max_len`.
    pub finished: bool,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    format: String,
    config: ModelConfig,
    tasks: Vec<TaskInfo>,
    shared_target: bool,
    source_vocab_sha256: String,
    target_vocab_sha256: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct Parser<T: Scalar> {
    config: ModelConfig,
    tasks: Vec<TaskInfo>,
    vocabs: Vocabs,
    plan: ParamPlan,
    params: ParamStore<T>,
    ids: Vec<ParamId>,
}

/// Sinusoidal position table of shape `[len, d]`.
fn positions<T: Scalar>(len: usize, d: usize) -> Tensor<T> {
    Tensor::from_fn(&[len, d], |k| {
        let (pos, i) = ((k / d) as f64, k % d);
        let angle = pos / 10000f64.powf((i - i % 2) as f64 / d as f64);
        T::of(if i % 2 == 0 { angle.sin() } else { angle.cos() })
    })
}

fn plan_for(config: &ModelConfig, tasks: &[TaskInfo], vocabs: &Vocabs) -> ParamPlan {
    let (sizes, names): (Vec<usize>, Vec<String>) = if config.mode == ArchMode::OneToN {
        tasks
            .iter()
            .enumerate()
            .map(|(i, t)| (vocabs.target(i).len(), t.name.clone()))
            .unzip()
    } else {
        (vec![vocabs.target(0).len()], vec!["shared".to_string()])
    };
    ParamPlan::new(config, vocabs.source.len(), &sizes, &names)
}

impl<T: Scalar> Parser<T> {
    /// Fresh model with weights drawn from the `init` stream of `seed`.
    pub fn new(config: ModelConfig, tasks: Vec<TaskInfo>, vocabs: Vocabs, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        if tasks.is_empty() {
            return Err(ModelError::Config("no tasks".into()));
        }
        match config.mode {
            ArchMode::Single if tasks.len() != 1 => {
                return Err(ModelError::Config(format!(
                    "single mode takes exactly one task, got {}",
                    tasks.len()
                )))
            }
            ArchMode::OneToN if vocabs.shared_target || vocabs.targets.len() != tasks.len() => {
                return Err(ModelError::Config(
                    "one-to-n needs one target vocabulary per task".into(),
                ))
            }
            ArchMode::OneToOne => {
                if !vocabs.shared_target {
                    return Err(ModelError::Config("one-to-one needs a shared target vocabulary".into()));
                }
                if let Some(t) = tasks.iter().find(|t| vocabs.source.id(&task_marker(&t.name)).is_none()) {
                    return Err(ModelError::UnknownTask(format!(
                        "no marker for '{}' in source vocabulary",
                        t.name
                    )));
                }
            }
            _ => {}
        }
        let plan = plan_for(&config, &tasks, &vocabs);
        let mut rng = stream_rng(seed, "init");
        let mut params = ParamStore::new();
        let mut ids = Vec::with_capacity(plan.specs.len());
        for spec in &plan.specs {
            let t = match spec.init {
                Init::Zeros => Tensor::zeros(&spec.shape),
                Init::Ones => Tensor::ones(&spec.shape),
                Init::Uniform(b) => Tensor::from_fn(&spec.shape, |_| T::of(rng.gen_range(-b..=b))),
            };
            ids.push(params.add(spec.name.clone(), t)?);
        }
        Ok(Parser {
            config,
            tasks,
            vocabs,
            plan,
            params,
            ids,
        })
    }

    /// Builds vocabularies from `tasks` and initializes a model over them.
    pub fn for_tasks(config: ModelConfig, tasks: &[TaskSpec], seed: u64) -> Result<Self, ModelError> {
        let vocabs = corpus::build_vocabs(tasks, config.mode).map_err(|e| ModelError::Config(e.to_string()))?;
        Self::new(config, tasks.iter().map(TaskInfo::from).collect(), vocabs, seed)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn tasks(&self) -> &[TaskInfo] {
        &self.tasks
    }

    pub fn task_index(&self, name: &str) -> Option<usize> {
        self.tasks.iter().position(|t| t.name == name)
    }

    pub fn vocabs(&self) -> &Vocabs {
        &self.vocabs
    }

    pub fn target_vocab(&self, task: usize) -> &Vocab {
        self.vocabs.target(task)
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    /// Every parameter with its layout entry.
    pub fn param_specs(&self) -> impl Iterator<Item = (ParamId, &ParamSpec)> {
        self.ids.iter().copied().zip(&self.plan.specs)
    }

    pub fn count_parameters(&self) -> ParamCount {
        self.plan.count()
    }

    fn decoder_index(&self, task: usize) -> usize {
        if self.config.mode == ArchMode::OneToN {
            task
        } else {
            0
        }
    }

    /// Rows of encoder output before the first copyable source token.
    fn copy_offset(&self) -> usize {
        usize::from(self.config.mode == ArchMode::OneToOne)
    }

    fn check_task(&self, task: usize) -> Result<(), ModelError> {
        if task >= self.tasks.len() {
            return Err(ModelError::UnknownTask(format!("index {task}")));
        }
        Ok(())
    }

    /// Source-vocabulary ids fed to the encoder, task marker first in one-to-one mode.
    pub fn source_ids(&self, source: &[String], task: usize) -> Result<Vec<usize>, ModelError> {
        self.check_task(task)?;
        if source.is_empty() {
            return Err(ModelError::EmptyInput);
        }
        if source.len() > self.config.max_len {
            return Err(ModelError::InputTooLong {
                len: source.len(),
                max: self.config.max_len,
            });
        }
        let mut ids = Vec::with_capacity(source.len() + 1);
        if self.config.mode == ArchMode::OneToOne {
            let marker = task_marker(&self.tasks[task].name);
            ids.push(self.vocabs.source.id(&marker).ok_or(ModelError::UnknownTask(marker))?);
        }
        ids.extend(source.iter().map(|t| self.vocabs.source.id_or_unk(t)));
        Ok(ids)
    }

    fn p(&self, tape: &mut Tape<'_, T>, idx: usize) -> Var {
        tape.param(self.ids[idx])
    }

    fn linear(&self, tape: &mut Tape<'_, T>, x: Var, l: Linear) -> Result<Var, KernelError> {
        let (w, b) = (self.p(tape, l.w), self.p(tape, l.b));
        let y = tape.matmul(x, w)?;
        tape.add_row(y, b)
    }

    fn norm(&self, tape: &mut Tape<'_, T>, x: Var, n: Norm) -> Result<Var, KernelError> {
        let (g, b) = (self.p(tape, n.g), self.p(tape, n.b));
        tape.layer_norm(x, g, b)
    }

    fn ffn(&self, tape: &mut Tape<'_, T>, x: Var, f: FeedForward) -> Result<Var, KernelError> {
        let h = self.linear(tape, x, f.inner)?;
        let h = tape.relu(h)?;
        let h = tape.dropout(h, self.config.dropout)?;
        self.linear(tape, h, f.outer)
    }

    /// Multi-head attention of `xq` over `xkv`. Also returns the head-averaged
    /// pre-softmax scores.
    fn attention(
        &self,
        tape: &mut Tape<'_, T>,
        xq: Var,
        xkv: Var,
        a: Attention,
        causal: bool,
    ) -> Result<(Var, Var), KernelError> {
        let q = self.linear(tape, xq, a.q)?;
        let k = self.linear(tape, xkv, a.k)?;
        let v = self.linear(tape, xkv, a.v)?;
        let dk = self.config.head_dim();
        let inv = T::of(1.0 / (dk as f64).sqrt());
        let mut heads = Vec::with_capacity(self.config.heads);
        let mut score_sum: Option<Var> = None;
        for h in 0..self.config.heads {
            let qh = tape.slice_cols(q, h * dk, (h + 1) * dk)?;
            let kh = tape.slice_cols(k, h * dk, (h + 1) * dk)?;
            let vh = tape.slice_cols(v, h * dk, (h + 1) * dk)?;
            let s = tape.matmul_nt(qh, kh)?;
            let s = tape.scale(s, inv)?;
            score_sum = Some(match score_sum {
                None => s,
                Some(acc) => tape.add(acc, s)?,
            });
            let w = if causal {
                tape.causal_softmax(s)?
            } else {
                tape.softmax(s)?
            };
            heads.push(tape.matmul(w, vh)?);
        }
        let cat = if heads.len() == 1 {
            heads[0]
        } else {
            tape.concat_cols(&heads)?
        };
        let out = self.linear(tape, cat, a.o)?;
        let mean = tape.scale(score_sum.expect("heads >= 1"), T::of(1.0 / self.config.heads as f64))?;
        Ok((out, mean))
    }

    fn add_positions(&self, tape: &mut Tape<'_, T>, x: Var, len: usize) -> Result<Var, KernelError> {
        let d = self.config.units;
        let x = tape.scale(x, T::of((d as f64).sqrt()))?;
        let pe = tape.constant(positions(len, d))?;
        let x = tape.add(x, pe)?;
        tape.dropout(x, self.config.dropout)
    }

    fn encode_ids(&self, tape: &mut Tape<'_, T>, ids: &[usize]) -> Result<Var, KernelError> {
        let enc = &self.plan.layout.encoder;
        let table = self.p(tape, enc.embed);
        let x = tape.embedding(table, ids)?;
        let mut x = self.add_positions(tape, x, ids.len())?;
        for layer in &enc.layers {
            let h = self.norm(tape, x, layer.norm1)?;
            let (h, _) = self.attention(tape, h, h, layer.attn, false)?;
            let h = tape.dropout(h, self.config.dropout)?;
            x = tape.add(x, h)?;
            let h = self.norm(tape, x, layer.norm2)?;
            let h = self.ffn(tape, h, layer.ffn)?;
            let h = tape.dropout(h, self.config.dropout)?;
            x = tape.add(x, h)?;
        }
        self.norm(tape, x, enc.norm)
    }

    /// Contextual embeddings, one row per input token. In one-to-one mode the
    /// first token must be a task marker.
    pub fn encode(&self, tokens: &[String]) -> Result<Tensor<T>, ModelError> {
        let offset = self.copy_offset();
        if tokens.len() <= offset {
            return Err(ModelError::EmptyInput);
        }
        if tokens.len() - offset > self.config.max_len {
            return Err(ModelError::InputTooLong {
                len: tokens.len() - offset,
                max: self.config.max_len,
            });
        }
        if offset == 1 {
            match self.vocabs.source.id(&tokens[0]) {
                Some(id) if self.vocabs.source.is_marker(id) => {}
                _ => return Err(ModelError::MissingTaskMarker),
            }
        }
        let ids: Vec<usize> = tokens.iter().map(|t| self.vocabs.source.id_or_unk(t)).collect();
        let mut tape = Tape::new(&self.params);
        let out = self.encode_ids(&mut tape, &ids)?;
        Ok(tape.value(out).clone())
    }

    fn check_actions(&self, actions: &[Action], n: usize, tape: &Tape<'_, T>, table: Var) -> Result<(), ModelError> {
        let vocab = tape.value(table).dims2().0;
        for &a in actions {
            let ok = match a {
                Action::Gen(id) => id < vocab,
                Action::Copy(i) => (1..=n).contains(&i),
            };
            if !ok {
                return Err(ModelError::InvalidAction { action: a, n, vocab });
            }
        }
        Ok(())
    }

    /// Runs the decoder over `[BOS] ++ inputs` and returns the joint
    /// `[GEN ; COPY]` logits, one row per decoder position.
    fn decoder_logits(
        &self,
        tape: &mut Tape<'_, T>,
        task: usize,
        memory: Var,
        src_ids: &[usize],
        inputs: &[Action],
    ) -> Result<Var, ModelError> {
        let d = self.config.units;
        let offset = self.copy_offset();
        let n = src_ids.len() - offset;
        let dec = &self.plan.layout.decoders[self.decoder_index(task)];
        let tgt_table = self.p(tape, dec.embed);
        self.check_actions(inputs, n, tape, tgt_table)?;
        let m = inputs.len() + 1;

        let mut gen_ids = vec![BOS];
        let mut copy_ids = vec![PAD];
        for &a in inputs {
            match a {
                Action::Gen(id) => {
                    gen_ids.push(id);
                    copy_ids.push(PAD);
                }
                Action::Copy(i) => {
                    gen_ids.push(PAD);
                    copy_ids.push(src_ids[offset + i - 1]);
                }
            }
        }
        let mut x = tape.embedding(tgt_table, &gen_ids)?;
        if inputs.iter().any(|a| matches!(a, Action::Copy(_))) {
            let is_copy: Vec<bool> = std::iter::once(false)
                .chain(inputs.iter().map(|a| matches!(a, Action::Copy(_))))
                .collect();
            let mask =
                |want: bool| Tensor::from_fn(&[m, d], |k| if is_copy[k / d] == want { T::one() } else { T::zero() });
            let gen_mask = tape.constant(mask(false))?;
            let copy_mask = tape.constant(mask(true))?;
            let src_table = self.p(tape, self.plan.layout.encoder.embed);
            let from_src = tape.embedding(src_table, &copy_ids)?;
            let a = tape.mul(x, gen_mask)?;
            let b = tape.mul(from_src, copy_mask)?;
            x = tape.add(a, b)?;
        }
        let mut x = self.add_positions(tape, x, m)?;
        let mut copy_scores = None;
        for layer in &dec.layers {
            let h = self.norm(tape, x, layer.norm1)?;
            let (h, _) = self.attention(tape, h, h, layer.self_attn, true)?;
            let h = tape.dropout(h, self.config.dropout)?;
            x = tape.add(x, h)?;
            let h = self.norm(tape, x, layer.norm2)?;
            let (h, scores) = self.attention(tape, h, memory, layer.cross_attn, false)?;
            copy_scores = Some(scores);
            let h = tape.dropout(h, self.config.dropout)?;
            x = tape.add(x, h)?;
            let h = self.norm(tape, x, layer.norm3)?;
            let h = self.ffn(tape, h, layer.ffn)?;
            let h = tape.dropout(h, self.config.dropout)?;
            x = tape.add(x, h)?;
        }
        let h = self.norm(tape, x, dec.norm)?;
        let gen = tape.matmul_nt(h, tgt_table)?;
        let bias = self.p(tape, dec.gen_bias);
        let gen = tape.add_row(gen, bias)?;
        let scores = copy_scores.expect("layers >= 1");
        let copy = if offset == 0 {
            scores
        } else {
            tape.slice_cols(scores, offset, offset + n)?
        };
        Ok(tape.concat_cols(&[gen, copy])?)
    }

    /// Index of `action` in the joint output distribution.
    pub fn action_index(&self, task: usize, action: Action) -> usize {
        match action {
            Action::Gen(id) => id,
            Action::Copy(i) => self.target_vocab(task).len() + i - 1,
        }
    }

    pub fn index_action(&self, task: usize, index: usize) -> Action {
        let v = self.target_vocab(task).len();
        if index < v {
            Action::Gen(index)
        } else {
            Action::Copy(index - v + 1)
        }
    }

    /// Teacher-forced mean negative log-likelihood of `gold`, recorded on `tape`.
    pub fn loss_on(
        &self,
        tape: &mut Tape<'_, T>,
        source: &[String],
        task: usize,
        gold: &[Action],
    ) -> Result<Var, ModelError> {
        if gold.is_empty() {
            return Err(ModelError::Config("empty gold action sequence".into()));
        }
        if gold.len() > self.config.max_len {
            return Err(ModelError::PrefixTooLong {
                len: gold.len(),
                max: self.config.max_len,
            });
        }
        let ids = self.source_ids(source, task)?;
        let memory = self.encode_ids(tape, &ids)?;
        let logits = self.decoder_logits(tape, task, memory, &ids, &gold[..gold.len() - 1])?;
        let n = ids.len() - self.copy_offset();
        let v = self.target_vocab(task).len();
        let targets: Vec<usize> = gold
            .iter()
            .map(|&a| match a {
                Action::Copy(i) if (1..=n).contains(&i) => Ok(v + i - 1),
                Action::Gen(id) if id < v => Ok(id),
                _ => Err(ModelError::InvalidAction { action: a, n, vocab: v }),
            })
            .collect::<Result<_, _>>()?;
        Ok(tape.cross_entropy(logits, &targets)?)
    }

    /// Mean of per-example losses over a batch from one task.
    pub fn batch_loss(&self, tape: &mut Tape<'_, T>, batch: &[&Example], task: usize) -> Result<Var, ModelError> {
        let mut losses = Vec::with_capacity(batch.len());
        for ex in batch {
            losses.push(self.loss_on(tape, &ex.source_tokens, task, &ex.gold_actions)?);
        }
        let all = tape.concat_rows(&losses)?;
        Ok(tape.mean(all)?)
    }

    /// Evaluation-mode loss of the example's gold actions.
    pub fn sequence_loss(&self, example: &Example, task: usize) -> Result<T, ModelError> {
        let mut tape = Tape::new(&self.params);
        let loss = self.loss_on(&mut tape, &example.source_tokens, task, &example.gold_actions)?;
        Ok(tape.value(loss).item())
    }

    fn step_log_probs(
        &self,
        memory: &Tensor<T>,
        src_ids: &[usize],
        task: usize,
        prefix: &[Action],
    ) -> Result<Vec<f64>, ModelError> {
        let mut tape = Tape::new(&self.params);
        let mem = tape.constant(memory.clone())?;
        let logits = self.decoder_logits(&mut tape, task, mem, src_ids, prefix)?;
        let t = tape.value(logits);
        let row: Vec<f64> = t.row(t.dims2().0 - 1).iter().map(|v| v.as_f64()).collect();
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
        Ok(row.into_iter().map(|v| v - lse).collect())
    }

    fn memory(&self, ids: &[usize]) -> Result<Tensor<T>, ModelError> {
        let mut tape = Tape::new(&self.params);
        let out = self.encode_ids(&mut tape, ids)?;
        Ok(tape.value(out).clone())
    }

    /// Distribution over `[target vocab ; source positions]` after `prefix`.
    pub fn decode_step(&self, source: &[String], task: usize, prefix: &[Action]) -> Result<Vec<T>, ModelError> {
        if prefix.len() >= self.config.max_len {
            return Err(ModelError::PrefixTooLong {
                len: prefix.len(),
                max: self.config.max_len,
            });
        }
        let ids = self.source_ids(source, task)?;
        let memory = self.memory(&ids)?;
        let mut tape = Tape::new(&self.params);
        let mem = tape.constant(memory)?;
        let logits = self.decoder_logits(&mut tape, task, mem, &ids, prefix)?;
        let m = tape.value(logits).dims2().0;
        let last = tape.slice_rows(logits, m - 1, m)?;
        let probs = tape.softmax(last)?;
        Ok(tape.value(probs).data().to_vec())
    }

    /// Highest-probability action at every step; ties go to the lower index.
    pub fn greedy(&self, source: &[String], task: usize) -> Result<Hypothesis, ModelError> {
        let ids = self.source_ids(source, task)?;
        let memory = self.memory(&ids)?;
        let mut actions = Vec::new();
        let mut score = 0.0;
        while actions.len() < self.config.max_len {
            let lp = self.step_log_probs(&memory, &ids, task, &actions)?;
            let (best, &s) =
                lp.iter().enumerate().fold(
                    (0, &f64::NEG_INFINITY),
                    |acc, (i, v)| if *v > *acc.1 { (i, v) } else { acc },
                );
            score += s;
            let a = self.index_action(task, best);
            actions.push(a);
            if a == Action::Gen(EOS) {
                return Ok(Hypothesis {
                    actions,
                    score,
                    finished: true,
                });
            }
        }
        Ok(Hypothesis {
            actions,
            score,
            finished: false,
        })
    }

    /// Beam search; returns at most `beam` hypotheses, best first.
    pub fn beam_search(&self, source: &[String], task: usize, beam: usize) -> Result<Vec<Hypothesis>, ModelError> {
        if beam == 0 {
            return Err(ModelError::Config("beam must be at least 1".into()));
        }
        let ids = self.source_ids(source, task)?;
        let memory = self.memory(&ids)?;
        let mut live = vec![Hypothesis {
            actions: Vec::new(),
            score: 0.0,
            finished: false,
        }];
        let mut done = Vec::new();
        while !live.is_empty() {
            if live[0].actions.len() >= self.config.max_len {
                done.append(&mut live);
                break;
            }
            let mut cands: Vec<(f64, usize, usize)> = Vec::new();
            for (h, hyp) in live.iter().enumerate() {
                let lp = self.step_log_probs(&memory, &ids, task, &hyp.actions)?;
                cands.extend(lp.into_iter().enumerate().map(|(i, s)| (hyp.score + s, h, i)));
            }
            cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
            let mut next = Vec::new();
            for &(score, h, i) in cands.iter().take(beam) {
                let a = self.index_action(task, i);
                let mut actions = live[h].actions.clone();
                actions.push(a);
                let finished = a == Action::Gen(EOS);
                let hyp = Hypothesis {
                    actions,
                    score,
                    finished,
                };
                if finished {
                    done.push(hyp);
                } else {
                    next.push(hyp);
                }
            }
            live = next;
        }
        done.sort_by(|a, b| b.score.total_cmp(&a.score));
        done.truncate(beam);
        Ok(done)
    }

    /// Target tokens produced by `actions` on `source`.
    pub fn render(&self, actions: &[Action], source: &[String], task: usize) -> Vec<String> {
        corpus::apply_actions(actions, source, self.target_vocab(task))
    }

    /// Top beam hypothesis as target tokens.
    pub fn parse(&self, source: &[String], task: usize) -> Result<Vec<String>, ModelError> {
        let hyps = self.beam_search(source, task, self.config.beam)?;
        Ok(self.render(&hyps[0].actions, source, task))
    }

    /// Writes `model.json`, vocabulary files and `params.ckpt` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), ModelError> {
        let io = |path: &Path, e: std::io::Error| ModelError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        };
        fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        let write = |name: String, text: String| {
            let path = dir.join(name);
            fs::write(&path, text).map_err(|e| io(&path, e))
        };
        write("vocab.source.json".into(), self.vocabs.source.to_json())?;
        for (i, v) in self.vocabs.targets.iter().enumerate() {
            write(format!("vocab.target.{i}.json"), v.to_json())?;
        }
        let sidecar = Sidecar {
            format: MODEL_FORMAT.into(),
            config: self.config.clone(),
            tasks: self.tasks.clone(),
            shared_target: self.vocabs.shared_target,
            source_vocab_sha256: self.vocabs.source.hash(),
            target_vocab_sha256: self.vocabs.targets.iter().map(Vocab::hash).collect(),
        };
        write(
            "model.json".into(),
            serde_json::to_string_pretty(&sidecar).expect("sidecar serializes"),
        )?;
        Ok(self.params.save(&dir.join("params.ckpt"))?)
    }

    /// Loads a directory written by [`Parser::save`], refusing mismatched vocabularies.
    pub fn load(dir: &Path) -> Result<Self, ModelError> {
        let read = |name: &str| {
            let path = dir.join(name);
            fs::read_to_string(&path).map_err(|e| ModelError::Io {
                path,
                message: e.to_string(),
            })
        };
        let sidecar: Sidecar =
            serde_json::from_str(&read("model.json")?).map_err(|e| ModelError::Format(format!("model.json: {e}")))?;
        if sidecar.format != MODEL_FORMAT {
            return Err(ModelError::Format(format!(
                "expected format \"{MODEL_FORMAT}\", found \"{}\"",
                sidecar.format
            )));
        }
        let load_vocab = |name: String, hash: &str| -> Result<Vocab, ModelError> {
            let v = Vocab::from_json(&read(&name)?).map_err(|e| ModelError::Format(format!("{name}: {e}")))?;
            if v.hash() != hash {
                return Err(ModelError::HashMismatch(name));
            }
            Ok(v)
        };
        let source = load_vocab("vocab.source.json".into(), &sidecar.source_vocab_sha256)?;
        let targets = sidecar
            .target_vocab_sha256
            .iter()
            .enumerate()
            .map(|(i, h)| load_vocab(format!("vocab.target.{i}.json"), h))
            .collect::<Result<Vec<_>, _>>()?;
        let vocabs = Vocabs {
            source,
            targets,
            shared_target: sidecar.shared_target,
        };
        let mut model = Parser::new(sidecar.config, sidecar.tasks, vocabs, 0)?;
        let ckpt = Checkpoint::read(&dir.join("params.ckpt"))?;
        model.params.load_checkpoint(&ckpt)?;
        Ok(model)
    }
}
