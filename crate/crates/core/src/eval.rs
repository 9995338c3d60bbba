//! Parser metrics: exact match over token sequences and Smatch over AMR graphs.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::amr::{AmrGraph, Target};

/// Restarts used by [`smatch`] when the caller has no preference.
pub const DEFAULT_RESTARTS: usize = 4;
/// Largest smaller-side variable count [`smatch_exhaustive`] accepts.
pub const EXHAUSTIVE_VAR_CAP: usize = 8;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("{predictions} predictions for {golds} gold items")]
    LengthMismatch { predictions: usize, golds: usize },
    #[error("exhaustive alignment limited to {cap} variables on the smaller graph, got {got}")]
    TooLarge { cap: usize, got: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub matches: Vec<bool>,
    pub accuracy: f64,
}

impl MatchResult {
    pub fn matched(&self) -> usize {
        self.matches.iter().filter(|&&m| m).count()
    }
}

/// Compares whitespace-normalized token sequences.
pub fn exact_match<P: AsRef<str>, G: AsRef<str>>(predictions: &[P], golds: &[G]) -> Result<MatchResult, EvalError> {
    if predictions.len() != golds.len() {
        return Err(EvalError::LengthMismatch {
            predictions: predictions.len(),
            golds: golds.len(),
        });
    }
    let matches: Vec<bool> = predictions
        .iter()
        .zip(golds)
        .map(|(p, g)| p.as_ref().split_whitespace().eq(g.as_ref().split_whitespace()))
        .collect();
    let accuracy = if matches.is_empty() {
        0.0
    } else {
        matches.iter().filter(|&&m| m).count() as f64 / matches.len() as f64
    };
    Ok(MatchResult { matches, accuracy })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TripleKind {
    Instance,
    Relation,
    Attribute,
    Top,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub kind: TripleKind,
    pub head: String,
    pub relation: String,
    pub tail: String,
}

fn strip_quotes(s: &str) -> &str {
    s.strip_prefix('"').and_then(|t| t.strip_suffix('"')).unwrap_or(s)
}

/// Instance, relation, attribute and top triples of a graph, deduplicated.
pub fn to_triples(graph: &AmrGraph) -> Vec<Triple> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    let mut push = |t: Triple| {
        if seen.insert(t.clone()) {
            out.push(t);
        }
    };
    for n in &graph.nodes {
        push(Triple {
            kind: TripleKind::Instance,
            head: n.var.clone(),
            relation: "instance".into(),
            tail: n.concept.clone(),
        });
    }
    for e in &graph.edges {
        let (kind, tail) = match &e.target {
            Target::Var(v) => (TripleKind::Relation, v.clone()),
            Target::Const(c) => (TripleKind::Attribute, strip_quotes(c).to_string()),
        };
        push(Triple {
            kind,
            head: e.source.clone(),
            relation: e.role.clone(),
            tail,
        });
    }
    push(Triple {
        kind: TripleKind::Top,
        head: graph.top.clone(),
        relation: "TOP".into(),
        tail: graph.concept(&graph.top).unwrap_or_default().to_string(),
    });
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmatchResult {
    pub matched: usize,
    pub gold: usize,
    pub predicted: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl SmatchResult {
    pub fn from_counts(matched: usize, gold: usize, predicted: usize) -> Self {
        let precision = if predicted == 0 {
            0.0
        } else {
            matched as f64 / predicted as f64
        };
        let recall = if gold == 0 { 0.0 } else { matched as f64 / gold as f64 };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        SmatchResult {
            matched,
            gold,
            predicted,
            precision,
            recall,
            f1,
        }
    }
}

/// Graph with variables replaced by indices, ready for alignment.
struct Indexed {
    concepts: Vec<String>,
    top: usize,
    attrs: Vec<HashSet<(String, String)>>,
    rels: Vec<(usize, String, usize)>,
    triple_count: usize,
}

impl Indexed {
    fn new(g: &AmrGraph) -> Self {
        let triples = to_triples(g);
        let vars: Vec<&str> = g.nodes.iter().map(|n| n.var.as_str()).collect();
        let idx = |v: &str| vars.iter().position(|&x| x == v).expect("validated graph");
        let mut attrs = vec![HashSet::new(); vars.len()];
        let mut rels = Vec::new();
        for t in &triples {
            match t.kind {
                TripleKind::Attribute => {
                    attrs[idx(&t.head)].insert((t.relation.clone(), t.tail.clone()));
                }
                TripleKind::Relation => rels.push((idx(&t.head), t.relation.clone(), idx(&t.tail))),
                _ => {}
            }
        }
        Indexed {
            concepts: g.nodes.iter().map(|n| n.concept.clone()).collect(),
            top: idx(&g.top),
            attrs,
            rels,
            triple_count: triples.len(),
        }
    }

    fn len(&self) -> usize {
        self.concepts.len()
    }
}

/// Matched-triple counting under a variable mapping `a -> b`.
struct Aligner<'a> {
    a: &'a Indexed,
    b: &'a Indexed,
    /// unary[i][j]: instance + top + attribute matches when a_i maps to b_j
    unary: Vec<Vec<usize>>,
    b_rels: HashSet<(usize, &'a str, usize)>,
}

impl<'a> Aligner<'a> {
    fn new(a: &'a Indexed, b: &'a Indexed) -> Self {
        let unary = (0..a.len())
            .map(|i| {
                (0..b.len())
                    .map(|j| {
                        let inst = usize::from(a.concepts[i] == b.concepts[j]);
                        let top = usize::from(i == a.top && j == b.top && a.concepts[a.top] == b.concepts[b.top]);
                        inst + top + a.attrs[i].intersection(&b.attrs[j]).count()
                    })
                    .collect()
            })
            .collect();
        let b_rels = b.rels.iter().map(|(x, r, y)| (*x, r.as_str(), *y)).collect();
        Aligner { a, b, unary, b_rels }
    }

    fn score(&self, map: &[Option<usize>]) -> usize {
        let unary: usize = map
            .iter()
            .enumerate()
            .filter_map(|(i, m)| m.map(|j| self.unary[i][j]))
            .sum();
        let rels = self
            .a
            .rels
            .iter()
            .filter(|(x, r, y)| match (map[*x], map[*y]) {
                (Some(p), Some(q)) => self.b_rels.contains(&(p, r.as_str(), q)),
                _ => false,
            })
            .count();
        unary + rels
    }

    /// Steepest ascent. Moves reassign one variable (swapping with the
    /// current owner of the target), unmap one variable, or reassign both
    /// endpoints of a relation onto a same-role relation. When nothing
    /// improves, a bounded number of level relation moves to unvisited
    /// mappings let the search cross plateaus.
    fn climb(&self, mut map: Vec<Option<usize>>) -> (usize, Vec<Option<usize>>) {
        let mut current = self.score(&map);
        let (mut best, mut best_map) = (current, map.clone());
        let mut visited = HashSet::from([map.clone()]);
        let mut sideways = self.a.len() + self.b.len();
        loop {
            let mut improved: Option<(usize, Vec<Option<usize>>)> = None;
            let mut level: Option<Vec<Option<usize>>> = None;
            let mut consider = |cand: Vec<Option<usize>>, relation: bool| {
                let s = self.score(&cand);
                if s > improved.as_ref().map_or(current, |(s, _)| *s) {
                    improved = Some((s, cand));
                } else if relation && s == current && level.is_none() && !visited.contains(&cand) {
                    level = Some(cand);
                }
            };
            for i in 0..self.a.len() {
                for j in 0..self.b.len() {
                    if map[i] != Some(j) {
                        let mut cand = map.clone();
                        assign(&mut cand, i, j);
                        consider(cand, false);
                    }
                }
                if map[i].is_some() {
                    let mut cand = map.clone();
                    cand[i] = None;
                    consider(cand, false);
                }
            }
            for (x, r, y) in &self.a.rels {
                for (p, s, q) in &self.b.rels {
                    let already = map[*x] == Some(*p) && map[*y] == Some(*q);
                    if r != s || x == y || p == q || already {
                        continue;
                    }
                    let mut cand = map.clone();
                    assign(&mut cand, *x, *p);
                    assign(&mut cand, *y, *q);
                    consider(cand, true);
                }
            }
            match (improved, level) {
                (Some((s, m)), _) => {
                    current = s;
                    map = m;
                    if current > best {
                        best = current;
                        best_map = map.clone();
                    }
                }
                (None, Some(m)) if sideways > 0 => {
                    sideways -= 1;
                    map = m;
                }
                _ => return (best, best_map),
            }
            visited.insert(map.clone());
        }
    }

    /// Greedy start: repeatedly commit the move with the largest gain given
    /// what is already committed. A move maps one variable, or both endpoints
    /// of a relation onto a relation with the same role, which a single swap
    /// cannot reach when neither endpoint scores alone.
    fn greedy_start(&self) -> Vec<Option<usize>> {
        let mut map = vec![None; self.a.len()];
        let mut used = vec![false; self.b.len()];
        let mut current = 0;
        loop {
            let mut moves: Vec<Vec<(usize, usize)>> = Vec::new();
            for i in 0..self.a.len() {
                for j in 0..self.b.len() {
                    if map[i].is_none() && !used[j] {
                        moves.push(vec![(i, j)]);
                    }
                }
            }
            for (x, r, y) in &self.a.rels {
                for (p, s, q) in &self.b.rels {
                    let free = map[*x].is_none() && map[*y].is_none() && !used[*p] && !used[*q];
                    if r == s && free && (x == y) == (p == q) {
                        moves.push(if x == y {
                            vec![(*x, *p)]
                        } else {
                            vec![(*x, *p), (*y, *q)]
                        });
                    }
                }
            }
            let gains: Vec<(Vec<(usize, usize)>, usize)> = moves
                .into_iter()
                .filter_map(|m| {
                    let mut cand = map.clone();
                    for &(i, j) in &m {
                        cand[i] = Some(j);
                    }
                    let gain = self.score(&cand) - current;
                    (gain > 0).then_some((m, gain))
                })
                .collect();
            let pick = gains.into_iter().rev().max_by_key(|(_, g)| *g);
            match pick {
                Some((m, gain)) => {
                    for (i, j) in m {
                        map[i] = Some(j);
                        used[j] = true;
                    }
                    current += gain;
                }
                None => return map,
            }
        }
    }

    /// Random start biased toward concept matches: variables are visited in
    /// random order and each takes a random free partner, preferring ones that
    /// score on their own.
    fn random_start(&self, rng: &mut ChaCha8Rng) -> Vec<Option<usize>> {
        let mut order: Vec<usize> = (0..self.a.len()).collect();
        order.shuffle(rng);
        let mut used = vec![false; self.b.len()];
        let mut map = vec![None; self.a.len()];
        for i in order {
            let free: Vec<usize> = (0..self.b.len()).filter(|&j| !used[j]).collect();
            let scoring: Vec<usize> = free.iter().copied().filter(|&j| self.unary[i][j] > 0).collect();
            let pool = if scoring.is_empty() { &free } else { &scoring };
            if let Some(&j) = pool.choose(rng) {
                used[j] = true;
                map[i] = Some(j);
            }
        }
        map
    }

    /// Exact maximum by depth-first enumeration with an optimistic bound.
    fn exhaustive(&self) -> usize {
        let mut best_unary_rest = vec![0; self.a.len() + 1];
        for i in (0..self.a.len()).rev() {
            let best = self.unary[i].iter().copied().max().unwrap_or(0);
            best_unary_rest[i] = best_unary_rest[i + 1] + best;
        }
        let mut map = vec![None; self.a.len()];
        let mut used = vec![false; self.b.len()];
        let mut best = 0;
        self.search(0, &mut map, &mut used, &best_unary_rest, &mut best);
        best
    }

    fn search(&self, i: usize, map: &mut Vec<Option<usize>>, used: &mut Vec<bool>, rest: &[usize], best: &mut usize) {
        if i == self.a.len() {
            *best = (*best).max(self.score(map));
            return;
        }
        // every relation could still match, plus the best unary gain for the rest
        let partial_unary: usize = (0..i).filter_map(|k| map[k].map(|j| self.unary[k][j])).sum();
        if partial_unary + rest[i] + self.a.rels.len() <= *best {
            return;
        }
        for j in 0..self.b.len() {
            if used[j] {
                continue;
            }
            used[j] = true;
            map[i] = Some(j);
            self.search(i + 1, map, used, rest, best);
            map[i] = None;
            used[j] = false;
        }
        // leaving a variable unmapped only helps when b has run out of variables
        if self.a.len() - i > self.b.len() - used.iter().filter(|&&u| u).count() {
            self.search(i + 1, map, used, rest, best);
        }
    }
}

/// Maps `i` to `j`; whoever held `j` takes `i`'s old partner.
fn assign(map: &mut [Option<usize>], i: usize, j: usize) {
    if let Some(k) = map.iter().position(|m| *m == Some(j)) {
        map[k] = map[i];
    }
    map[i] = Some(j);
}

/// Smatch by hill climbing from one greedy start plus `restarts` seeded random starts.
pub fn smatch(gold: &AmrGraph, pred: &AmrGraph, restarts: usize, seed: u64) -> SmatchResult {
    let (g, p) = (Indexed::new(gold), Indexed::new(pred));
    let aligner = Aligner::new(&g, &p);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = aligner.climb(aligner.greedy_start()).0;
    for _ in 0..restarts {
        best = best.max(aligner.climb(aligner.random_start(&mut rng)).0);
    }
    SmatchResult::from_counts(best, g.triple_count, p.triple_count)
}

/// Exact Smatch over all injective variable mappings.
pub fn smatch_exhaustive(gold: &AmrGraph, pred: &AmrGraph) -> Result<SmatchResult, EvalError> {
    let (g, p) = (Indexed::new(gold), Indexed::new(pred));
    let smaller = g.len().min(p.len());
    if smaller > EXHAUSTIVE_VAR_CAP {
        return Err(EvalError::TooLarge {
            cap: EXHAUSTIVE_VAR_CAP,
            got: smaller,
        });
    }
    // matched counts are symmetric, so enumerate from the smaller side
    let best = if g.len() <= p.len() {
        Aligner::new(&g, &p).exhaustive()
    } else {
        Aligner::new(&p, &g).exhaustive()
    };
    Ok(SmatchResult::from_counts(best, g.triple_count, p.triple_count))
}

/// Micro-averaged Smatch over a corpus: counts are summed before computing F1.
pub fn corpus_smatch(pairs: &[(AmrGraph, AmrGraph)], restarts: usize, seed: u64) -> SmatchResult {
    let (mut m, mut g, mut p) = (0, 0, 0);
    for (gold, pred) in pairs {
        let r = smatch(gold, pred, restarts, seed);
        m += r.matched;
        g += r.gold;
        p += r.predicted;
    }
    SmatchResult::from_counts(m, g, p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::amr::parse_penman;

    fn g(s: &str) -> AmrGraph {
        parse_penman(s).unwrap()
    }

    #[test]
    fn exact_match_cases() {
        let r = exact_match(&["a b", "a  b", "a c"], &["a b", "a b", "a b"]).unwrap();
        assert_eq!(r.matches, vec![true, true, false]);
        assert!((r.accuracy - 2.0 / 3.0).abs() < 1e-12);
        assert!(exact_match(&["a"], &["a", "b"]).is_err());
    }

    #[test]
    fn triples_single_node() {
        let t = to_triples(&g("(a / boy)"));
        assert_eq!(t.len(), 2);
        assert!(t.iter().any(|t| t.kind == TripleKind::Instance && t.tail == "boy"));
        assert!(t
            .iter()
            .any(|t| t.kind == TripleKind::Top && t.relation == "TOP" && t.tail == "boy"));
    }

    #[test]
    fn triples_pollute() {
        let t = to_triples(&g(
            "(p / pollute-01 :polarity - :ARG0 (m / method :mod (t / this)) :ARG1 (e / environment))",
        ));
        let count = |k| t.iter().filter(|x| x.kind == k).count();
        assert_eq!(count(TripleKind::Instance), 4);
        assert_eq!(count(TripleKind::Relation), 3);
        assert_eq!(count(TripleKind::Attribute), 1);
        assert_eq!(count(TripleKind::Top), 1);
        assert_eq!(t.len(), 9);
    }

    #[test]
    fn triples_reentrant() {
        let t = to_triples(&g("(a / want-01 :ARG0 (b / boy) :ARG1 (g / go-02 :ARG0 b))"));
        let count = |k| t.iter().filter(|x| x.kind == k).count();
        assert_eq!(count(TripleKind::Instance), 3);
        assert_eq!(count(TripleKind::Relation), 3);
        assert_eq!(count(TripleKind::Top), 1);
    }

    #[test]
    fn identical_graphs_score_one() {
        let a = g("(a / want-01 :ARG0 (b / boy) :ARG1 (g / go-02 :ARG0 b :polarity -))");
        assert_eq!(smatch(&a, &a, DEFAULT_RESTARTS, 1).f1, 1.0);
        assert_eq!(smatch_exhaustive(&a, &a).unwrap().f1, 1.0);
    }

    #[test]
    fn environ_example() {
        let gold = g("(p / pollute-01 :ARG1 (e / environment))");
        let pred = g("(p / pollute-01 :ARG1 (e / environ))");
        for r in [smatch(&gold, &pred, 4, 0), smatch_exhaustive(&gold, &pred).unwrap()] {
            assert_eq!((r.matched, r.gold, r.predicted), (3, 4, 4));
            assert!((r.f1 - 0.75).abs() < 1e-12);
            assert!((r.precision - 0.75).abs() < 1e-12 && (r.recall - 0.75).abs() < 1e-12);
        }
    }

    #[test]
    fn disjoint_concepts_score_zero() {
        let r = smatch_exhaustive(&g("(a / boy)"), &g("(b / girl)")).unwrap();
        assert_eq!(r.matched, 0);
        assert_eq!(r.f1, 0.0);
    }

    #[test]
    fn variable_names_do_not_matter() {
        let a = g("(x / want-01 :ARG0 (y / boy))");
        let b = g("(q / want-01 :ARG0 (z / boy))");
        assert_eq!(smatch(&a, &b, 0, 0).f1, 1.0);
    }

    #[test]
    fn exhaustive_cap() {
        let big: String = {
            let mut s = String::from("(a0 / c");
            for i in 1..=9 {
                s.push_str(&format!(" :r (a{i} / c)"));
            }
            s.push(')');
            s
        };
        let big = g(&big);
        assert!(matches!(smatch_exhaustive(&big, &big), Err(EvalError::TooLarge { .. })));
        // the cap applies to the smaller graph
        assert!(smatch_exhaustive(&big, &g("(a / c)")).is_ok());
    }

    #[test]
    fn quotes_ignored_in_attributes() {
        let a = g("(n / name :op1 \"Paris\")");
        let b = g("(n / name :op1 Paris)");
        assert_eq!(smatch(&a, &b, 0, 0).f1, 1.0);
    }
}
