//! Datasets, vocabularies and gold action sequences.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::amr::{self, AmrError};
use crate::model::ArchMode;

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const SPECIAL_TOKENS: [&str; 4] = ["<pad>", "<s>", "</s>", "<unk>"];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error("{path}:{line}: {message}")]
    MalformedLine {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("duplicate task name '{0}'")]
    DuplicateTask(String),
    #[error("task '{task}': split '{split}' empty")]
    EmptySplit { task: String, split: &'static str },
    #[error("unknown tokenizer '{0}'")]
    UnknownTokenizer(String),
    #[error("no tasks given")]
    NoTasks,
    #[error("vocabulary file: {0}")]
    Vocab(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Formalism {
    #[serde(rename = "tree-string")]
    TreeString,
    #[serde(rename = "amr")]
    Amr,
}

/// One decoder step: emit a target-vocabulary symbol, or point at a source
/// position (1-based).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Gen(usize),
    Copy(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub source_tokens: Vec<String>,
    pub target_tokens: Vec<String>,
    pub gold_actions: Vec<Action>,
    /// Original PENMAN string for AMR examples.
    pub gold_penman: Option<String>,
}

impl Example {
    pub fn new(source: &str, target: &str) -> Self {
        Example {
            source_tokens: tokenize(source),
            target_tokens: tokenize(target),
            gold_actions: Vec::new(),
            gold_penman: None,
        }
    }

    pub fn target_text(&self) -> String {
        self.target_tokens.join(" ")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskSpec {
    pub name: String,
    pub formalism: Formalism,
    pub train: Vec<Example>,
    pub dev: Vec<Example>,
    pub test: Vec<Example>,
}

impl TaskSpec {
    /// `D_t`, the number of training examples.
    pub fn size_train(&self) -> usize {
        self.train.len()
    }

    pub fn marker(&self) -> String {
        task_marker(&self.name)
    }
}

pub fn task_marker(name: &str) -> String {
    format!("<{name}>")
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_string).collect()
}

/// Token table with fixed ids for specials, then task markers, then sorted tokens.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    tokens: Vec<String>,
    /// Specials plus task markers.
    reserved: usize,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn build<'a>(tokens: impl IntoIterator<Item = &'a str>, markers: &[String]) -> Self {
        let mut all: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        all.extend(markers.iter().cloned());
        let reserved = all.len();
        let reserved_set: HashSet<String> = all.iter().cloned().collect();
        let sorted: BTreeSet<&str> = tokens.into_iter().filter(|t| !reserved_set.contains(*t)).collect();
        all.extend(sorted.into_iter().map(str::to_string));
        Self::from_tokens(all, reserved)
    }

    fn from_tokens(tokens: Vec<String>, reserved: usize) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocab {
            tokens,
            reserved,
            index,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> usize {
        self.id(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn reserved(&self) -> usize {
        self.reserved
    }

    /// Task-marker tokens, in registration order.
    pub fn markers(&self) -> &[String] {
        &self.tokens[SPECIAL_TOKENS.len()..self.reserved]
    }

    pub fn is_marker(&self, id: usize) -> bool {
        (SPECIAL_TOKENS.len()..self.reserved).contains(&id)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("vocab serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, CorpusError> {
        let v: Vocab = serde_json::from_str(text).map_err(|e| CorpusError::Vocab(e.to_string()))?;
        if v.reserved < SPECIAL_TOKENS.len() || v.reserved > v.tokens.len() {
            return Err(CorpusError::Vocab("reserved range out of bounds".into()));
        }
        for (i, s) in SPECIAL_TOKENS.iter().enumerate() {
            if v.tokens.get(i).map(String::as_str) != Some(*s) {
                return Err(CorpusError::Vocab(format!("reserved id {i} is not '{s}'")));
            }
        }
        let fresh = Self::from_tokens(v.tokens, v.reserved);
        if fresh.index.len() != fresh.tokens.len() {
            return Err(CorpusError::Vocab("duplicate tokens".into()));
        }
        Ok(fresh)
    }

    /// Hex SHA-256 of the serialized table.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }
}

/// Source vocabulary plus either one shared target vocabulary or one per task.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabs {
    pub source: Vocab,
    pub targets: Vec<Vocab>,
    pub shared_target: bool,
}

impl Vocabs {
    pub fn target(&self, task: usize) -> &Vocab {
        if self.shared_target {
            &self.targets[0]
        } else {
            &self.targets[task]
        }
    }
}

/// Builds the source vocabulary (shared) and target vocabularies (shared in
/// 1-to-1 mode, per task otherwise) from training splits.
pub fn build_vocabs(tasks: &[TaskSpec], mode: ArchMode) -> Result<Vocabs, CorpusError> {
    if tasks.is_empty() {
        return Err(CorpusError::NoTasks);
    }
    let markers: Vec<String> = if mode == ArchMode::OneToOne {
        tasks.iter().map(TaskSpec::marker).collect()
    } else {
        Vec::new()
    };
    let source = Vocab::build(
        tasks
            .iter()
            .flat_map(|t| t.train.iter().flat_map(|e| e.source_tokens.iter().map(String::as_str))),
        &markers,
    );
    fn target_tokens(t: &TaskSpec) -> Vec<&str> {
        t.train
            .iter()
            .flat_map(|e| e.target_tokens.iter().map(String::as_str))
            .collect()
    }
    let (targets, shared_target) = match mode {
        ArchMode::OneToOne => (vec![Vocab::build(tasks.iter().flat_map(target_tokens), &[])], true),
        _ => (
            tasks.iter().map(|t| Vocab::build(target_tokens(t), &[])).collect(),
            false,
        ),
    };
    Ok(Vocabs {
        source,
        targets,
        shared_target,
    })
}

/// Gold actions: copy the first matching source position when possible,
/// otherwise generate (UNK when out of vocabulary); always ends with EOS.
pub fn align_gold_actions(example: &Example, target_vocab: &Vocab) -> Vec<Action> {
    let mut actions: Vec<Action> = example
        .target_tokens
        .iter()
        .map(|tok| match example.source_tokens.iter().position(|s| s == tok) {
            Some(i) => Action::Copy(i + 1),
            None => Action::Gen(target_vocab.id_or_unk(tok)),
        })
        .collect();
    actions.push(Action::Gen(EOS));
    actions
}

/// Fills `gold_actions` for every split of every task.
pub fn align_tasks(tasks: &mut [TaskSpec], vocabs: &Vocabs) {
    for (i, task) in tasks.iter_mut().enumerate() {
        let vocab = vocabs.target(i);
        for ex in task.train.iter_mut().chain(&mut task.dev).chain(&mut task.test) {
            ex.gold_actions = align_gold_actions(ex, vocab);
        }
    }
}

/// Renders actions back to target tokens; stops at EOS.
pub fn apply_actions(actions: &[Action], source: &[String], vocab: &Vocab) -> Vec<String> {
    let mut out = Vec::new();
    for a in actions {
        match *a {
            Action::Gen(EOS) => break,
            Action::Gen(id) => out.push(vocab.token(id).to_string()),
            Action::Copy(i) => out.push(source.get(i - 1).cloned().unwrap_or_else(|| SPECIAL_TOKENS[UNK].into())),
        }
    }
    out
}

/// True when some target token can be neither copied nor generated.
pub fn needs_unk(example: &Example, vocab: &Vocab) -> bool {
    example
        .target_tokens
        .iter()
        .any(|t| vocab.id(t).is_none() && !example.source_tokens.contains(t))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub formalism: Formalism,
    pub train: PathBuf,
    pub dev: PathBuf,
    pub test: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokenizer: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub tasks: Vec<ManifestEntry>,
}

#[derive(Deserialize, Serialize)]
pub struct Record {
    pub source: String,
    pub target: String,
}

fn read_split(path: &Path, formalism: Formalism) -> Result<Vec<Example>, CorpusError> {
    let text = fs::read_to_string(path).map_err(|e| CorpusError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| CorpusError::MalformedLine {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let rec: Record = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        let mut ex = match formalism {
            Formalism::TreeString => Example::new(&rec.source, &rec.target),
            Formalism::Amr => {
                let graph = amr::parse_penman(&rec.target).map_err(|e: AmrError| bad(e.to_string()))?;
                Example {
                    source_tokens: tokenize(&rec.source),
                    target_tokens: amr::linearize(&graph).tokens,
                    gold_actions: Vec::new(),
                    gold_penman: Some(rec.target.clone()),
                }
            }
        };
        if ex.source_tokens.is_empty() {
            return Err(bad("empty source".into()));
        }
        if ex.target_tokens.is_empty() {
            return Err(bad("empty target".into()));
        }
        ex.gold_actions.clear();
        out.push(ex);
    }
    Ok(out)
}

/// Reads a manifest and every split it names. Relative paths resolve against
/// the manifest's directory.
pub fn load_dataset(manifest_path: &Path) -> Result<Vec<TaskSpec>, CorpusError> {
    let text = fs::read_to_string(manifest_path).map_err(|e| CorpusError::Io {
        path: manifest_path.to_path_buf(),
        message: e.to_string(),
    })?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| CorpusError::Manifest {
        path: manifest_path.to_path_buf(),
        message: e.to_string(),
    })?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut names = HashSet::new();
    let mut tasks = Vec::new();
    for entry in manifest.tasks {
        if !names.insert(entry.name.clone()) {
            return Err(CorpusError::DuplicateTask(entry.name));
        }
        if let Some(tok) = &entry.tokenizer {
            if tok != "whitespace" {
                return Err(CorpusError::UnknownTokenizer(tok.clone()));
            }
        }
        let mut splits = Vec::with_capacity(3);
        for (split, rel) in [("train", &entry.train), ("dev", &entry.dev), ("test", &entry.test)] {
            let examples = read_split(&base.join(rel), entry.formalism)?;
            if examples.is_empty() {
                return Err(CorpusError::EmptySplit {
                    task: entry.name.clone(),
                    split,
                });
            }
            splits.push(examples);
        }
        let test = splits.pop().unwrap();
        let dev = splits.pop().unwrap();
        let train = splits.pop().unwrap();
        tasks.push(TaskSpec {
            name: entry.name,
            formalism: entry.formalism,
            train,
            dev,
            test,
        });
    }
    if tasks.is_empty() {
        return Err(CorpusError::NoTasks);
    }
    Ok(tasks)
}

/// Writes `(source, target)` pairs as JSONL.
pub fn write_jsonl(path: &Path, pairs: &[(String, String)]) -> Result<(), CorpusError> {
    let mut text = String::new();
    for (source, target) in pairs {
        let rec = Record {
            source: source.clone(),
            target: target.clone(),
        };
        text.push_str(&serde_json::to_string(&rec).expect("record serializes"));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| CorpusError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn task(name: &str, pairs: &[(&str, &str)]) -> TaskSpec {
        let ex: Vec<Example> = pairs.iter().map(|(s, t)| Example::new(s, t)).collect();
        TaskSpec {
            name: name.into(),
            formalism: Formalism::TreeString,
            train: ex.clone(),
            dev: ex.clone(),
            test: ex,
        }
    }

    #[test]
    fn shared_target_vocab_is_union() {
        let tasks = [task("t1", &[("x", "a b")]), task("t2", &[("y", "b c")])];
        let v = build_vocabs(&tasks, ArchMode::OneToOne).unwrap();
        assert_eq!(v.targets.len(), 1);
        let t = v.target(1);
        assert_eq!(t.len(), 3 + SPECIAL_TOKENS.len());
        for tok in ["a", "b", "c"] {
            assert!(t.id(tok).is_some());
        }
        assert!(v.source.id("<t1>").is_some() && v.source.id("<t2>").is_some());
        assert_eq!(v.source.markers(), &["<t1>".to_string(), "<t2>".to_string()]);
    }

    #[test]
    fn per_task_target_vocabs() {
        let tasks = [task("t1", &[("x", "a b")]), task("t2", &[("y", "b c")])];
        let v = build_vocabs(&tasks, ArchMode::OneToN).unwrap();
        assert_eq!(v.targets.len(), 2);
        assert_eq!(v.target(0).len(), 2 + SPECIAL_TOKENS.len());
        assert_eq!(v.target(1).len(), 2 + SPECIAL_TOKENS.len());
        assert!(v.target(0).id("c").is_none());
        assert!(v.source.id("<t1>").is_none());
    }

    #[test]
    fn alignment_prefers_copy() {
        let tasks = [task("geo", &[("how many hotels", "count ( hotel )")])];
        let v = build_vocabs(&tasks, ArchMode::Single).unwrap();
        let ex = Example::new("number of hotels in Edinburgh", "answer ( count ( Edinburgh ) ) zzz");
        let acts = align_gold_actions(&ex, v.target(0));
        assert_eq!(acts[4], Action::Copy(5));
        assert_eq!(acts[2], Action::Gen(v.target(0).id("count").unwrap()));
        assert_eq!(acts[7], Action::Gen(UNK));
        assert_eq!(*acts.last().unwrap(), Action::Gen(EOS));
        assert!(needs_unk(&ex, v.target(0)));
    }

    #[test]
    fn first_occurrence_wins() {
        let v = Vocab::build(["a"], &[]);
        let ex = Example::new("a b a", "a");
        assert_eq!(align_gold_actions(&ex, &v)[0], Action::Copy(1));
    }

    #[test]
    fn vocab_round_trip_and_determinism() {
        let a = Vocab::build(["z", "b", "a", "b"], &["<t>".into()]);
        let b = Vocab::build(["a", "z", "b"], &["<t>".into()]);
        assert_eq!(a.to_json(), b.to_json());
        assert_eq!(a.hash(), b.hash());
        let back = Vocab::from_json(&a.to_json()).unwrap();
        assert_eq!(back, a);
        assert_eq!(back.id("<unk>"), Some(UNK));
        assert!(back.is_marker(back.id("<t>").unwrap()));
        assert_eq!(back.token(5), "a");
    }

    #[test]
    fn apply_actions_round_trip() {
        let v = Vocab::build(["answer", "(", ")"], &[]);
        let ex = Example::new("hotels in Rome", "answer ( Rome )");
        let acts = align_gold_actions(&ex, &v);
        assert_eq!(apply_actions(&acts, &ex.source_tokens, &v), ex.target_tokens);
    }
}
