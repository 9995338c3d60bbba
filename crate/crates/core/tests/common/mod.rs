#![allow(dead_code)]

use mtlsp::amr::{AmrGraph, AmrNode, Edge, Target};
use mtlsp::numkernel::{KernelError, Tape, Tensor, Var};
use rand::seq::SliceRandom;
use rand::Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;

pub fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Largest relative error between analytic and central-difference gradients
/// of `f` with respect to every element of every input. `seed` fixes the
/// dropout stream so repeated evaluations see the same masks.
pub fn fd_check<F>(inputs: &[Tensor<f64>], seed: Option<u64>, f: F) -> f64
where
    F: Fn(&mut Tape<'_, f64>, &[Var]) -> Result<Var, KernelError>,
{
    let store = mtlsp::numkernel::ParamStore::<f64>::new();
    let tape_for = || match seed {
        Some(s) => Tape::training(&store, s),
        None => Tape::new(&store),
    };
    let eval = |xs: &[Tensor<f64>]| -> f64 {
        let mut tape = tape_for();
        let vars: Vec<Var> = xs.iter().map(|x| tape.constant(x.clone()).unwrap()).collect();
        let out = f(&mut tape, &vars).unwrap();
        tape.value(out).item()
    };
    let mut tape = tape_for();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.constant(x.clone()).unwrap()).collect();
    let out = f(&mut tape, &vars).unwrap();
    let grads = tape.backward(out).unwrap();
    let mut worst: f64 = 0.0;
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.wrt(*v);
        for i in 0..inputs[k].numel() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= FD_STEP;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * FD_STEP);
            worst = worst.max(rel_error(analytic.data()[i], numeric));
        }
    }
    worst
}

/// Entries bounded away from zero so ReLU kinks are not straddled.
pub fn random_tensor<R: Rng>(rng: &mut R, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let v: f64 = rng.gen_range(0.1..1.0);
        if rng.gen_bool(0.5) {
            v
        } else {
            -v
        }
    })
}

const CONCEPTS: [&str; 16] = [
    "want-01",
    "boy",
    "go-02",
    "girl",
    "see-01",
    "city",
    "name",
    "believe-01",
    "dog",
    "run-02",
    "big",
    "house",
    "eat-01",
    "apple",
    "tall",
    "know-01",
];
const ROLES: [&str; 6] = ["ARG0", "ARG1", "ARG2", "mod", "location", "time"];

fn var(i: usize) -> String {
    format!("v{i}")
}

fn is_ancestor(g: &AmrGraph, anc: &str, node: &str) -> bool {
    let mut stack = vec![anc.to_string()];
    let mut seen = std::collections::HashSet::new();
    while let Some(v) = stack.pop() {
        if v == node {
            return true;
        }
        if !seen.insert(v.clone()) {
            continue;
        }
        for e in g.edges.iter().filter(|e| e.source == v) {
            if let Target::Var(t) = &e.target {
                stack.push(t.clone());
            }
        }
    }
    false
}

/// Tree-shaped graph with distinct concepts and a few attributes.
pub fn random_tree<R: Rng>(rng: &mut R, max_nodes: usize) -> AmrGraph {
    let n = rng.gen_range(1..=max_nodes);
    let mut concepts = CONCEPTS.to_vec();
    concepts.shuffle(rng);
    let nodes: Vec<AmrNode> = (0..n)
        .map(|i| AmrNode {
            var: var(i),
            concept: concepts[i].to_string(),
        })
        .collect();
    let mut edges = Vec::new();
    for i in 1..n {
        edges.push(Edge {
            source: var(rng.gen_range(0..i)),
            role: ROLES.choose(rng).unwrap().to_string(),
            target: Target::Var(var(i)),
            inverted: false,
        });
    }
    for i in 0..n {
        if rng.gen_bool(0.2) {
            let (role, value) = if rng.gen_bool(0.5) {
                ("polarity", "-")
            } else {
                ("quant", "3")
            };
            edges.push(Edge {
                source: var(i),
                role: role.into(),
                target: Target::Const(value.into()),
                inverted: false,
            });
        }
    }
    AmrGraph {
        nodes,
        edges,
        top: var(0),
    }
}

/// Tree plus one extra edge into a node that is not an ancestor of its source.
pub fn random_reentrant<R: Rng>(rng: &mut R, max_nodes: usize) -> AmrGraph {
    loop {
        let mut g = random_tree(rng, max_nodes.max(3));
        let n = g.nodes.len();
        let mut options = Vec::new();
        for s in 0..n {
            for t in 1..n {
                let (vs, vt) = (var(s), var(t));
                let linked = g
                    .edges
                    .iter()
                    .any(|e| e.source == vs && e.target == Target::Var(vt.clone()));
                if s != t && !linked && !is_ancestor(&g, &vt, &vs) {
                    options.push((vs, vt));
                }
            }
        }
        if let Some((s, t)) = options.choose(rng).cloned() {
            g.edges.push(Edge {
                source: s,
                role: ROLES.choose(rng).unwrap().to_string(),
                target: Target::Var(t),
                inverted: false,
            });
            return g;
        }
    }
}

/// Small graph over a narrow concept pool, so alignments are ambiguous.
pub fn random_small<R: Rng>(rng: &mut R, max_vars: usize) -> AmrGraph {
    let n = rng.gen_range(1..=max_vars);
    let nodes: Vec<AmrNode> = (0..n)
        .map(|i| AmrNode {
            var: var(i),
            concept: CONCEPTS[rng.gen_range(0..4)].to_string(),
        })
        .collect();
    let mut edges = Vec::new();
    for i in 1..n {
        edges.push(Edge {
            source: var(rng.gen_range(0..i)),
            role: ROLES[rng.gen_range(0..3)].to_string(),
            target: Target::Var(var(i)),
            inverted: false,
        });
    }
    for _ in 0..rng.gen_range(0..=n) {
        let (s, t) = (rng.gen_range(0..n), rng.gen_range(0..n));
        edges.push(Edge {
            source: var(s),
            role: ROLES[rng.gen_range(0..3)].to_string(),
            target: Target::Var(var(t)),
            inverted: false,
        });
    }
    if rng.gen_bool(0.3) {
        edges.push(Edge {
            source: var(rng.gen_range(0..n)),
            role: "polarity".into(),
            target: Target::Const("-".into()),
            inverted: false,
        });
    }
    AmrGraph {
        nodes,
        edges,
        top: var(rng.gen_range(0..n)),
    }
}
