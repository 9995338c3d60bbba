//! AMR graphs: PENMAN reading and writing, variable-free linearization and
//! restoration of linearized sequences back into graphs.
//!
//! Linearization walks the graph depth-first from the top, drops variables and
//! writes every re-entrant reference as a bare copy of the referenced concept,
//! `( concept )`. Restoration assigns fresh variables and merges such
//! concept-only leaves into an earlier non-ancestor node with the same
//! concept, which recovers the re-entrancy.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Identifies the linearization variant produced by [`linearize`].
pub const LINEARIZATION_VERSION: &str = "concept-dup-v1";

/// Roles that end in `-of` without being inverted relations.
const NON_INVERTED_OF: [&str; 3] = ["consist-of", "prep-out-of", "prep-on-behalf-of"];

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Target {
    Var(String),
    Const(String),
}

/// A directed, labeled edge. `inverted` records that the edge was written as
/// `:role-of` on its target's node, which only affects layout.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Edge {
    pub source: String,
    pub role: String,
    pub target: Target,
    pub inverted: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AmrNode {
    pub var: String,
    pub concept: String,
}

/// Rooted, directed, labeled graph.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AmrGraph {
    pub nodes: Vec<AmrNode>,
    pub edges: Vec<Edge>,
    pub top: String,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AmrError {
    #[error("empty input")]
    Empty,
    #[error("unbalanced parentheses")]
    Unbalanced,
    #[error("duplicate variable '{0}'")]
    DuplicateVariable(String),
    #[error("undefined variable '{0}'")]
    UndefinedVariable(String),
    #[error("unexpected token '{token}' at position {pos}")]
    Unexpected { token: String, pos: usize },
    #[error("unexpected end of input")]
    UnexpectedEnd,
    #[error("invalid graph: {0}")]
    Invalid(String),
}

fn is_var_pattern(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_lowercase()) && chars.all(|c| c.is_ascii_digit())
}

fn split_inverse(role: &str) -> (String, bool) {
    if let Some(base) = role.strip_suffix("-of") {
        if !NON_INVERTED_OF.contains(&role) && !base.is_empty() {
            return (base.to_string(), true);
        }
    }
    (role.to_string(), false)
}

fn layout_role(edge: &Edge) -> String {
    if edge.inverted {
        format!(":{}-of", edge.role)
    } else {
        format!(":{}", edge.role)
    }
}

impl AmrGraph {
    pub fn node(&self, var: &str) -> Option<&AmrNode> {
        self.nodes.iter().find(|n| n.var == var)
    }

    pub fn concept(&self, var: &str) -> Option<&str> {
        self.node(var).map(|n| n.concept.as_str())
    }

    /// Checks the structural invariants: unique variables, known endpoints,
    /// top present and every node reachable from the top.
    pub fn validate(&self) -> Result<(), AmrError> {
        let mut seen = HashSet::new();
        for n in &self.nodes {
            if !seen.insert(n.var.as_str()) {
                return Err(AmrError::DuplicateVariable(n.var.clone()));
            }
        }
        if !seen.contains(self.top.as_str()) {
            return Err(AmrError::Invalid(format!("top '{}' is not a node", self.top)));
        }
        let mut adj: HashMap<&str, Vec<&str>> = HashMap::new();
        for e in &self.edges {
            if !seen.contains(e.source.as_str()) {
                return Err(AmrError::UndefinedVariable(e.source.clone()));
            }
            if let Target::Var(t) = &e.target {
                if !seen.contains(t.as_str()) {
                    return Err(AmrError::UndefinedVariable(t.clone()));
                }
                adj.entry(&e.source).or_default().push(t);
                adj.entry(t).or_default().push(&e.source);
            }
        }
        let mut reached = HashSet::from([self.top.as_str()]);
        let mut queue = VecDeque::from([self.top.as_str()]);
        while let Some(v) = queue.pop_front() {
            for &u in adj.get(v).map(Vec::as_slice).unwrap_or(&[]) {
                if reached.insert(u) {
                    queue.push_back(u);
                }
            }
        }
        if reached.len() != self.nodes.len() {
            return Err(AmrError::Invalid("graph is not connected from the top".into()));
        }
        Ok(())
    }

    /// Edges laid out under `var`, in input order.
    fn layout_edges<'a>(&'a self, var: &'a str) -> impl Iterator<Item = (usize, &'a Edge)> + 'a {
        self.edges.iter().enumerate().filter(move |(_, e)| {
            if e.inverted {
                matches!(&e.target, Target::Var(t) if t == var)
            } else {
                e.source == var
            }
        })
    }

    /// PENMAN serialization on a single line.
    pub fn to_penman(&self) -> String {
        let mut out = String::new();
        let mut visited = HashSet::new();
        let mut emitted = HashSet::new();
        self.write_penman(&self.top, &mut visited, &mut emitted, &mut out);
        out
    }

    fn write_penman(&self, var: &str, visited: &mut HashSet<String>, emitted: &mut HashSet<usize>, out: &mut String) {
        visited.insert(var.to_string());
        out.push('(');
        out.push_str(var);
        out.push_str(" / ");
        out.push_str(self.concept(var).unwrap_or("?"));
        for (i, e) in self.layout_edges(var) {
            if !emitted.insert(i) {
                continue;
            }
            out.push(' ');
            out.push_str(&layout_role(e));
            out.push(' ');
            let other = if e.inverted {
                Target::Var(e.source.clone())
            } else {
                e.target.clone()
            };
            match other {
                Target::Const(c) => out.push_str(&c),
                Target::Var(v) if visited.contains(&v) => out.push_str(&v),
                Target::Var(v) => self.write_penman(&v, visited, emitted, out),
            }
        }
        out.push(')');
    }
}

impl fmt::Display for AmrGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_penman())
    }
}

impl FromStr for AmrGraph {
    type Err = AmrError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_penman(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Open,
    Close,
    Slash,
    Role(String),
    Sym(String),
}

fn tokenize_penman(text: &str) -> Result<Vec<Tok>, AmrError> {
    let mut toks = Vec::new();
    let mut chars = text.chars().peekable();
    while let Some(&c) = chars.peek() {
        match c {
            '(' => {
                chars.next();
                toks.push(Tok::Open);
            }
            ')' => {
                chars.next();
                toks.push(Tok::Close);
            }
            '/' => {
                chars.next();
                toks.push(Tok::Slash);
            }
            '#' => {
                // metadata comment runs to end of line
                for c in chars.by_ref() {
                    if c == '\n' {
                        break;
                    }
                }
            }
            '"' => {
                let mut s = String::from('"');
                chars.next();
                let mut closed = false;
                while let Some(c) = chars.next() {
                    s.push(c);
                    if c == '\\' {
                        if let Some(n) = chars.next() {
                            s.push(n);
                        }
                    } else if c == '"' {
                        closed = true;
                        break;
                    }
                }
                if !closed {
                    return Err(AmrError::UnexpectedEnd);
                }
                toks.push(Tok::Sym(s));
            }
            c if c.is_whitespace() => {
                chars.next();
            }
            _ => {
                let mut s = String::new();
                while let Some(&c) = chars.peek() {
                    if c.is_whitespace() || matches!(c, '(' | ')' | '"' | '/') {
                        break;
                    }
                    s.push(c);
                    chars.next();
                }
                if let Some(role) = s.strip_prefix(':') {
                    toks.push(Tok::Role(role.to_string()));
                } else {
                    toks.push(Tok::Sym(s));
                }
            }
        }
    }
    Ok(toks)
}

struct PenmanParser {
    toks: Vec<Tok>,
    pos: usize,
    nodes: Vec<AmrNode>,
    edges: Vec<(String, String, bool, Target)>,
}

impl PenmanParser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn next(&mut self) -> Result<Tok, AmrError> {
        let t = self.toks.get(self.pos).cloned().ok_or(AmrError::Unbalanced)?;
        self.pos += 1;
        Ok(t)
    }

    fn unexpected(&self, t: &Tok) -> AmrError {
        let token = match t {
            Tok::Open => "(".to_string(),
            Tok::Close => ")".to_string(),
            Tok::Slash => "/".to_string(),
            Tok::Role(r) => format!(":{r}"),
            Tok::Sym(s) => s.clone(),
        };
        AmrError::Unexpected {
            token,
            pos: self.pos.saturating_sub(1),
        }
    }

    fn node(&mut self) -> Result<String, AmrError> {
        match self.next()? {
            Tok::Open => {}
            t => return Err(self.unexpected(&t)),
        }
        let var = match self.next()? {
            Tok::Sym(v) => v,
            t => return Err(self.unexpected(&t)),
        };
        if self.nodes.iter().any(|n| n.var == var) {
            return Err(AmrError::DuplicateVariable(var));
        }
        match self.next()? {
            Tok::Slash => {}
            t => return Err(self.unexpected(&t)),
        }
        let concept = match self.next()? {
            Tok::Sym(c) => c,
            t => return Err(self.unexpected(&t)),
        };
        self.nodes.push(AmrNode {
            var: var.clone(),
            concept,
        });
        loop {
            match self.next()? {
                Tok::Close => return Ok(var),
                Tok::Role(role) => {
                    let (base, inverted) = split_inverse(&role);
                    let target = match self.peek() {
                        Some(Tok::Open) => {
                            // reserve the slot so edges stay in document order
                            let slot = self.edges.len();
                            self.edges
                                .push((var.clone(), base, inverted, Target::Var(String::new())));
                            let child = self.node()?;
                            self.edges[slot].3 = Target::Var(child);
                            continue;
                        }
                        Some(Tok::Sym(_)) => match self.next()? {
                            Tok::Sym(s) => Target::Const(s),
                            _ => unreachable!(),
                        },
                        Some(t) => {
                            let t = t.clone();
                            self.pos += 1;
                            return Err(self.unexpected(&t));
                        }
                        None => return Err(AmrError::Unbalanced),
                    };
                    self.edges.push((var.clone(), base, inverted, target));
                }
                t => return Err(self.unexpected(&t)),
            }
        }
    }
}

/// Parses one PENMAN graph. Bare symbols naming a defined variable become
/// re-entrant edges; other bare symbols are constants.
pub fn parse_penman(text: &str) -> Result<AmrGraph, AmrError> {
    let toks = tokenize_penman(text)?;
    if toks.is_empty() {
        return Err(AmrError::Empty);
    }
    let opens = toks.iter().filter(|t| **t == Tok::Open).count();
    let closes = toks.iter().filter(|t| **t == Tok::Close).count();
    if opens != closes {
        return Err(AmrError::Unbalanced);
    }
    let mut p = PenmanParser {
        toks,
        pos: 0,
        nodes: Vec::new(),
        edges: Vec::new(),
    };
    let top = p.node()?;
    if let Some(t) = p.peek() {
        let t = t.clone();
        p.pos += 1;
        return Err(p.unexpected(&t));
    }
    let defined: HashSet<String> = p.nodes.iter().map(|n| n.var.clone()).collect();
    let mut edges = Vec::with_capacity(p.edges.len());
    for (holder, role, inverted, target) in p.edges {
        let target = match target {
            Target::Const(s) if defined.contains(&s) => Target::Var(s),
            Target::Const(s) if is_var_pattern(&s) => return Err(AmrError::UndefinedVariable(s)),
            t => t,
        };
        let edge = if inverted {
            match target {
                Target::Var(other) => Edge {
                    source: other,
                    role,
                    target: Target::Var(holder),
                    inverted: true,
                },
                // an inverted role on a constant cannot be flipped; keep it as written
                Target::Const(c) => Edge {
                    source: holder,
                    role: format!("{role}-of"),
                    target: Target::Const(c),
                    inverted: false,
                },
            }
        } else {
            Edge {
                source: holder,
                role,
                target,
                inverted: false,
            }
        };
        edges.push(edge);
    }
    let g = AmrGraph {
        nodes: p.nodes,
        edges,
        top,
    };
    g.validate()?;
    Ok(g)
}

/// Splits a document of blank-line separated PENMAN graphs (with optional
/// `#` metadata lines) and parses each.
pub fn parse_penman_document(text: &str) -> Result<Vec<AmrGraph>, AmrError> {
    let mut graphs = Vec::new();
    let mut block = String::new();
    for line in text.lines().chain(std::iter::once("")) {
        if line.trim().is_empty() {
            if block.trim_start().starts_with('(') || block.contains('(') {
                graphs.push(parse_penman(&block)?);
            }
            block.clear();
        } else if !line.trim_start().starts_with('#') {
            block.push_str(line);
            block.push('\n');
        }
    }
    Ok(graphs)
}

/// Variable-free token sequence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LinearAmr {
    pub tokens: Vec<String>,
}

impl LinearAmr {
    pub fn from_tokens<S: AsRef<str>>(tokens: &[S]) -> Self {
        LinearAmr {
            tokens: tokens.iter().map(|t| t.as_ref().to_string()).collect(),
        }
    }
}

impl fmt::Display for LinearAmr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.tokens.join(" "))
    }
}

impl FromStr for LinearAmr {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(LinearAmr {
            tokens: s.split_whitespace().map(str::to_string).collect(),
        })
    }
}

/// Depth-first, variable-free rendering of `graph`.
pub fn linearize(graph: &AmrGraph) -> LinearAmr {
    let mut tokens = Vec::new();
    let mut visited = HashSet::new();
    let mut emitted = HashSet::new();
    linearize_node(graph, &graph.top, &mut visited, &mut emitted, &mut tokens);
    LinearAmr { tokens }
}

fn linearize_node(
    g: &AmrGraph,
    var: &str,
    visited: &mut HashSet<String>,
    emitted: &mut HashSet<usize>,
    out: &mut Vec<String>,
) {
    visited.insert(var.to_string());
    out.push("(".into());
    out.push(g.concept(var).unwrap_or("?").to_string());
    for (i, e) in g.layout_edges(var) {
        if !emitted.insert(i) {
            continue;
        }
        out.push(layout_role(e));
        let other = if e.inverted {
            Target::Var(e.source.clone())
        } else {
            e.target.clone()
        };
        match other {
            Target::Const(c) => out.push(c),
            Target::Var(v) if visited.contains(&v) => {
                out.push("(".into());
                out.push(g.concept(&v).unwrap_or("?").to_string());
                out.push(")".into());
            }
            Target::Var(v) => linearize_node(g, &v, visited, emitted, out),
        }
    }
    out.push(")".into());
}

/// Restoration failure. `prefix` holds the graph built from the longest
/// well-formed prefix, when at least the top node was read.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("cannot restore linearized AMR at token {position}: {reason}")]
pub struct RestoreError {
    pub reason: String,
    pub position: usize,
    pub prefix: Option<AmrGraph>,
}

enum Child {
    Node(usize),
    Const(String),
}

struct RNode {
    concept: String,
    parent: Option<usize>,
    children: Vec<(String, Child)>,
}

struct Restorer<'a> {
    toks: &'a [String],
    pos: usize,
    arena: Vec<RNode>,
}

fn is_role(t: &str) -> bool {
    t.len() > 1 && t.starts_with(':')
}

impl Restorer<'_> {
    fn fail(&self, reason: impl Into<String>) -> (String, usize) {
        (reason.into(), self.pos)
    }

    /// Parses a node whose `(` is at `pos`. Returns `Ok(None)` for an empty `( )`.
    fn node(&mut self, parent: Option<usize>) -> Result<Option<usize>, (String, usize)> {
        self.pos += 1; // "("
        let concept = match self.toks.get(self.pos).map(String::as_str) {
            None => return Err(self.fail("node without concept at end of input")),
            Some(")") => {
                self.pos += 1;
                return Ok(None);
            }
            Some("(") => return Err(self.fail("node without concept")),
            Some(t) if is_role(t) => return Err(self.fail("node without concept")),
            Some(t) => t.to_string(),
        };
        self.pos += 1;
        let id = self.arena.len();
        self.arena.push(RNode {
            concept,
            parent,
            children: Vec::new(),
        });
        loop {
            match self.toks.get(self.pos).map(String::as_str) {
                // unclosed brackets are closed at the end
                None => return Ok(Some(id)),
                Some(")") => {
                    self.pos += 1;
                    return Ok(Some(id));
                }
                Some(role) if is_role(role) => {
                    let role = role.to_string();
                    self.pos += 1;
                    match self.toks.get(self.pos).map(String::as_str) {
                        // dangling relation labels are dropped
                        None | Some(")") => {}
                        Some(t) if is_role(t) => {}
                        Some("(") => {
                            let child = self.node(Some(id))?;
                            if let Some(c) = child {
                                self.arena[id].children.push((role, Child::Node(c)));
                            }
                        }
                        Some(value) => {
                            let value = value.to_string();
                            self.pos += 1;
                            self.arena[id].children.push((role, Child::Const(value)));
                        }
                    }
                }
                Some("(") => return Err(self.fail("node without relation label")),
                Some(t) => return Err(self.fail(format!("stray token '{t}'"))),
            }
        }
    }

    fn into_graph(self) -> Option<AmrGraph> {
        if self.arena.is_empty() {
            return None;
        }
        let n = self.arena.len();
        let is_ancestor = |a: usize, mut b: usize| {
            while let Some(p) = self.arena[b].parent {
                if p == a {
                    return true;
                }
                b = p;
            }
            false
        };
        // representative[i]: the node that i is merged into (itself if kept)
        let mut rep: Vec<usize> = (0..n).collect();
        for i in 1..n {
            if !self.arena[i].children.is_empty() {
                continue;
            }
            let concept = &self.arena[i].concept;
            let found = (0..i)
                .rev()
                .filter(|&j| rep[j] == j)
                .find(|&j| self.arena[j].concept == *concept && !is_ancestor(j, i));
            if let Some(j) = found {
                rep[i] = j;
            }
        }

        let mut vars: Vec<Option<String>> = vec![None; n];
        let mut used: HashMap<char, usize> = HashMap::new();
        let mut nodes = Vec::new();
        for i in (0..n).filter(|&i| rep[i] == i) {
            let c = self.arena[i]
                .concept
                .chars()
                .find(|c| c.is_ascii_alphabetic())
                .map(|c| c.to_ascii_lowercase())
                .unwrap_or('x');
            let k = used.entry(c).or_insert(0);
            *k += 1;
            let var = if *k == 1 { c.to_string() } else { format!("{c}{k}") };
            vars[i] = Some(var.clone());
            nodes.push(AmrNode {
                var,
                concept: self.arena[i].concept.clone(),
            });
        }
        let var_of = |i: usize| vars[rep[i]].clone().expect("representative has a variable");
        let mut edges = Vec::new();
        for (i, node) in self.arena.iter().enumerate() {
            if rep[i] != i {
                continue;
            }
            for (role, child) in &node.children {
                let (base, inverted) = split_inverse(role.trim_start_matches(':'));
                match child {
                    Child::Const(c) => edges.push(Edge {
                        source: var_of(i),
                        role: role.trim_start_matches(':').to_string(),
                        target: Target::Const(c.clone()),
                        inverted: false,
                    }),
                    Child::Node(c) if inverted => edges.push(Edge {
                        source: var_of(*c),
                        role: base,
                        target: Target::Var(var_of(i)),
                        inverted: true,
                    }),
                    Child::Node(c) => edges.push(Edge {
                        source: var_of(i),
                        role: base,
                        target: Target::Var(var_of(*c)),
                        inverted: false,
                    }),
                }
            }
        }
        // a merge can turn two edges into the same triple; keep the first
        let mut seen = HashSet::new();
        edges.retain(|e| seen.insert((e.source.clone(), e.role.clone(), e.target.clone())));
        Some(AmrGraph {
            nodes,
            edges,
            top: var_of(0),
        })
    }
}

/// Rebuilds a graph from a linearized sequence, repairing unclosed brackets
/// and dangling relation labels.
pub fn restore(linear: &LinearAmr) -> Result<AmrGraph, RestoreError> {
    let toks = &linear.tokens;
    match toks.first().map(String::as_str) {
        None => {
            return Err(RestoreError {
                reason: "empty sequence".into(),
                position: 0,
                prefix: None,
            })
        }
        Some("(") => {}
        Some(t) => {
            return Err(RestoreError {
                reason: format!("sequence starts with '{t}' instead of '('"),
                position: 0,
                prefix: None,
            })
        }
    }
    let mut r = Restorer {
        toks,
        pos: 0,
        arena: Vec::new(),
    };
    let outcome = r.node(None);
    let failure = match outcome {
        Ok(Some(_)) if r.pos < toks.len() => Some((format!("trailing token '{}'", toks[r.pos]), r.pos)),
        Ok(Some(_)) => None,
        Ok(None) => Some(("top node has no concept".to_string(), 1)),
        Err(e) => Some(e),
    };
    let graph = r.into_graph();
    match failure {
        None => Ok(graph.expect("a parsed top node yields a graph")),
        Some((reason, position)) => Err(RestoreError {
            reason,
            position,
            prefix: graph,
        }),
    }
}

/// Restores model output, falling back to the longest valid prefix and then
/// to an empty placeholder graph, so that any sequence can be scored.
pub fn restore_lenient(linear: &LinearAmr) -> AmrGraph {
    match restore(linear) {
        Ok(g) => g,
        Err(RestoreError { prefix: Some(g), .. }) => g,
        Err(_) => AmrGraph {
            nodes: vec![AmrNode {
                var: "x".into(),
                concept: "<empty>".into(),
            }],
            edges: Vec::new(),
            top: "x".into(),
        },
    }
}
