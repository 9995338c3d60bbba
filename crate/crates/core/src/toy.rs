//! Synthetic tree-string grammars for tests and demos.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{self, CorpusError, Example, Formalism, Manifest, ManifestEntry, TaskSpec};
use crate::seed::stream_rng;

#[derive(Debug, Error)]
pub enum ToyError {
    #[error("unknown grammar '{0}'")]
    UnknownGrammar(String),
    #[error("count {0} too small: train, dev and test each need an example")]
    TooFew(usize),
    #[error("vocabulary too small: {grammar} with vocab {vocab} and max_len {max_len} has only {capacity} distinct sources, {count} requested")]
    VocabTooSmall {
        grammar: Grammar,
        vocab: usize,
        max_len: usize,
        capacity: u128,
        count: usize,
    },
    #[error("vocab_size and max_len must be positive")]
    Empty,
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Grammar {
    #[serde(rename = "copy")]
    Copy,
    #[serde(rename = "reverse")]
    Reverse,
    #[serde(rename = "bracketed-query")]
    BracketedQuery,
}

impl Grammar {
    pub fn name(self) -> &'static str {
        match self {
            Grammar::Copy => "copy",
            Grammar::Reverse => "reverse",
            Grammar::BracketedQuery => "bracketed-query",
        }
    }
}

impl fmt::Display for Grammar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Grammar {
    type Err = ToyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "copy" => Ok(Grammar::Copy),
            "reverse" => Ok(Grammar::Reverse),
            "bracketed-query" => Ok(Grammar::BracketedQuery),
            other => Err(ToyError::UnknownGrammar(other.to_string())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyGrammarSpec {
    pub grammar: Grammar,
    /// Total examples over all three splits.
    pub count: usize,
    /// Symbol pool size (copy, reverse) or entity pool size (bracketed-query).
    /// Copy and reverse sources never repeat a symbol.
    pub vocab_size: usize,
    /// Longest source sequence (copy, reverse).
    pub max_len: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyData {
    pub train: Vec<(String, String)>,
    pub dev: Vec<(String, String)>,
    pub test: Vec<(String, String)>,
}

const CITIES: [&str; 40] = [
    "Edinburgh",
    "Rome",
    "Paris",
    "Oslo",
    "Lisbon",
    "Vienna",
    "Prague",
    "Dublin",
    "Madrid",
    "Berlin",
    "Zurich",
    "Geneva",
    "Milan",
    "Naples",
    "Porto",
    "Seville",
    "Bergen",
    "Krakow",
    "Riga",
    "Tallinn",
    "Vilnius",
    "Sofia",
    "Athens",
    "Valletta",
    "Helsinki",
    "Stockholm",
    "Copenhagen",
    "Hamburg",
    "Munich",
    "Lyon",
    "Nice",
    "Bologna",
    "Florence",
    "Venice",
    "Turin",
    "Ghent",
    "Bruges",
    "Antwerp",
    "Utrecht",
    "Leiden",
];

const TYPES: [(&str, &str); 4] = [
    ("hotels", "hotel"),
    ("restaurants", "restaurant"),
    ("museums", "museum"),
    ("shops", "shop"),
];

const RELATIONS: [(&str, &str); 2] = [("in", "loc"), ("near", "near")];

/// Copy/reverse symbols: `a`..`z`, then `a2`..`z2`, and so on.
pub fn symbol_pool(size: usize) -> Vec<String> {
    (0..size)
        .map(|i| {
            let letter = (b'a' + (i % 26) as u8) as char;
            match i / 26 {
                0 => letter.to_string(),
                k => format!("{letter}{}", k + 1),
            }
        })
        .collect()
}

pub fn entity_pool(size: usize) -> Vec<String> {
    (0..size)
        .map(|i| match CITIES.get(i) {
            Some(c) => c.to_string(),
            None => format!("City{}", i + 1),
        })
        .collect()
}

/// The target the grammar assigns to `source`.
pub fn toy_target(grammar: Grammar, source: &str) -> String {
    let toks = corpus::tokenize(source);
    match grammar {
        Grammar::Copy => toks.join(" "),
        Grammar::Reverse => toks.into_iter().rev().collect::<Vec<_>>().join(" "),
        Grammar::BracketedQuery => {
            let (count, rest) = match toks.as_slice() {
                [a, b, rest @ ..] if a == "how" && b == "many" => (true, rest),
                [a, rest @ ..] if a == "show" => (false, rest),
                _ => return String::new(),
            };
            let [kind, rel, entity] = rest else {
                return String::new();
            };
            let kind = TYPES.iter().find(|t| t.0 == kind).map_or(kind.as_str(), |t| t.1);
            let rel = RELATIONS.iter().find(|r| r.0 == rel).map_or(rel.as_str(), |r| r.1);
            let inner = format!("{kind} ( {rel} ( {entity} ) )");
            if count {
                format!("answer ( count ( {inner} ) )")
            } else {
                format!("answer ( {inner} )")
            }
        }
    }
}

fn capacity(spec: &ToyGrammarSpec) -> u128 {
    match spec.grammar {
        Grammar::BracketedQuery => 2 * (TYPES.len() * RELATIONS.len()) as u128 * spec.vocab_size as u128,
        // sequences of distinct symbols: sum over lengths of V! / (V - L)!
        _ => {
            let v = spec.vocab_size as u128;
            let mut total: u128 = 0;
            let mut perms: u128 = 1;
            for l in 0..spec.max_len.min(spec.vocab_size) as u128 {
                perms = perms.saturating_mul(v - l);
                total = total.saturating_add(perms);
            }
            total
        }
    }
}

fn all_queries(entities: &[String]) -> Vec<String> {
    let mut out = Vec::new();
    for intent in ["show", "how many"] {
        for (kind, _) in TYPES {
            for (rel, _) in RELATIONS {
                for e in entities {
                    out.push(format!("{intent} {kind} {rel} {e}"));
                }
            }
        }
    }
    out
}

/// Generates `count` distinct sources, shuffled and split 80/10/10 (dev and
/// test get at least one example each).
pub fn generate(spec: &ToyGrammarSpec) -> Result<ToyData, ToyError> {
    if spec.vocab_size == 0 || spec.max_len == 0 {
        return Err(ToyError::Empty);
    }
    if spec.count < 3 {
        return Err(ToyError::TooFew(spec.count));
    }
    let cap = capacity(spec);
    if cap < spec.count as u128 {
        return Err(ToyError::VocabTooSmall {
            grammar: spec.grammar,
            vocab: spec.vocab_size,
            max_len: spec.max_len,
            capacity: cap,
            count: spec.count,
        });
    }
    let mut rng = stream_rng(spec.seed, "toy");
    let sources: Vec<String> = match spec.grammar {
        Grammar::BracketedQuery => {
            let mut all = all_queries(&entity_pool(spec.vocab_size));
            all.shuffle(&mut rng);
            all.truncate(spec.count);
            all
        }
        _ => {
            let pool = symbol_pool(spec.vocab_size);
            let mut seen = HashSet::new();
            let mut out = Vec::with_capacity(spec.count);
            // Symbols within a sequence are distinct, so every target token
            // has exactly one source position. Lengths are uniform over the
            // lengths that still have unused sequences.
            let max_len = spec.max_len.min(spec.vocab_size);
            let room: Vec<u128> = (1..=max_len)
                .map(|l| (0..l).fold(1u128, |acc, i| acc.saturating_mul((spec.vocab_size - i) as u128)))
                .collect();
            let mut used = vec![0u128; max_len];
            while out.len() < spec.count {
                let open: Vec<usize> = (0..max_len).filter(|&l| used[l] < room[l]).collect();
                let l = *open.choose(&mut rng).expect("capacity checked");
                let s = pool
                    .choose_multiple(&mut rng, l + 1)
                    .cloned()
                    .collect::<Vec<_>>()
                    .join(" ");
                if seen.insert(s.clone()) {
                    used[l] += 1;
                    out.push(s);
                }
            }
            out
        }
    };
    let n_dev = (spec.count / 10).max(1);
    let n_test = (spec.count / 10).max(1);
    let n_train = spec.count - n_dev - n_test;
    let pairs: Vec<(String, String)> = sources
        .into_iter()
        .map(|s| {
            let t = toy_target(spec.grammar, &s);
            (s, t)
        })
        .collect();
    Ok(ToyData {
        train: pairs[..n_train].to_vec(),
        dev: pairs[n_train..n_train + n_dev].to_vec(),
        test: pairs[n_train + n_dev..].to_vec(),
    })
}

/// In-memory task built from generated data.
pub fn toy_task(spec: &ToyGrammarSpec, name: &str) -> Result<TaskSpec, ToyError> {
    let data = generate(spec)?;
    let ex = |pairs: &[(String, String)]| pairs.iter().map(|(s, t)| Example::new(s, t)).collect();
    Ok(TaskSpec {
        name: name.to_string(),
        formalism: Formalism::TreeString,
        train: ex(&data.train),
        dev: ex(&data.dev),
        test: ex(&data.test),
    })
}

/// Writes `{name}.{train,dev,test}.jsonl` into `dir` and returns the manifest entry.
pub fn write_task(spec: &ToyGrammarSpec, name: &str, dir: &Path) -> Result<ManifestEntry, ToyError> {
    let data = generate(spec)?;
    fs::create_dir_all(dir).map_err(|e| CorpusError::Io {
        path: dir.to_path_buf(),
        message: e.to_string(),
    })?;
    let mut files = Vec::new();
    for (split, pairs) in [("train", &data.train), ("dev", &data.dev), ("test", &data.test)] {
        let file = PathBuf::from(format!("{name}.{split}.jsonl"));
        corpus::write_jsonl(&dir.join(&file), pairs)?;
        files.push(file);
    }
    Ok(ManifestEntry {
        name: name.to_string(),
        formalism: Formalism::TreeString,
        train: files[0].clone(),
        dev: files[1].clone(),
        test: files[2].clone(),
        tokenizer: None,
    })
}

pub fn write_manifest(path: &Path, entries: Vec<ManifestEntry>) -> Result<(), ToyError> {
    let text = serde_json::to_string_pretty(&Manifest { tasks: entries }).expect("manifest serializes");
    fs::write(path, text).map_err(|e| {
        ToyError::Corpus(CorpusError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    })
}
