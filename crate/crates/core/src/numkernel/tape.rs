use std::collections::HashMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::numkernel::tensor::{gemm_acc, gemm_nt_acc, gemm_tn_acc};
use crate::numkernel::{KernelError, ParamId, ParamStore, Tensor};
use crate::scalar::Scalar;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

const LAYER_NORM_EPS: f64 = 1e-5;

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Relu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Softmax(Var),
    CausalSoftmax(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<T>,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    Dropout {
        x: Var,
        mask: Vec<T>,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    SliceRows {
        x: Var,
        start: usize,
    },
    Sum(Var),
    Mean(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Records differentiable operations so that [`Tape::backward`] can replay them
/// in reverse.
///
/// Parameters are pulled from a [`ParamStore`] on first use; a tape built with
/// [`Tape::training`] applies dropout, one built with [`Tape::new`] does not.
pub struct Tape<'p, T: Scalar> {
    params: Option<&'p ParamStore<T>>,
    nodes: Vec<Node<T>>,
    param_vars: HashMap<ParamId, Var>,
    dropout_rng: Option<ChaCha8Rng>,
    consumed: bool,
}

impl<'p, T: Scalar> Tape<'p, T> {
    /// Evaluation-mode tape: dropout is the identity.
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Tape {
            params: Some(params),
            nodes: Vec::new(),
            param_vars: HashMap::new(),
            dropout_rng: None,
            consumed: false,
        }
    }

    /// Training-mode tape; dropout masks are drawn from a stream seeded with `seed`.
    pub fn training(params: &'p ParamStore<T>, seed: u64) -> Self {
        let mut tape = Tape::new(params);
        tape.dropout_rng = Some(ChaCha8Rng::seed_from_u64(seed));
        tape
    }

    /// A tape with no parameter store, for computations over constants only.
    pub fn detached() -> Self {
        Tape {
            params: None,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
            dropout_rng: None,
            consumed: false,
        }
    }

    pub fn is_training(&self) -> bool {
        self.dropout_rng.is_some()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, name: &'static str) -> Result<Var, KernelError> {
        if !value.is_finite() {
            return Err(KernelError::NonFinite { op: name });
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Result<Var, KernelError> {
        self.push(t, Op::Leaf, "constant")
    }

    /// Leaf for a stored parameter; repeated calls return the same variable.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let store = self.params.expect("tape has no parameter store");
        self.nodes.push(Node {
            value: store.get(id).clone(),
            op: Op::Leaf,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        self.value(v).dims2()
    }

    fn mismatch(op: &'static str, detail: String) -> KernelError {
        KernelError::ShapeMismatch { op, detail }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, KernelError> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(Self::mismatch("matmul", format!("[{m},{k}] x [{k2},{n}]")));
        }
        let mut out = vec![T::zero(); m * n];
        gemm_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), "matmul")
    }

    /// `a * b^T`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, KernelError> {
        let (m, k) = self.dims(a);
        let (n, k2) = self.dims(b);
        if k != k2 {
            return Err(Self::mismatch("matmul_nt", format!("[{m},{k}] x [{n},{k2}]^T")));
        }
        let mut out = vec![T::zero(); m * n];
        gemm_nt_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        self.push(Tensor::from_parts(vec![m, n], out), Op::MatMulNT(a, b), "matmul_nt")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, KernelError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Self::mismatch("add", format!("{:?} + {:?}", ta.shape(), tb.shape())));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x + y).collect();
        let shape = ta.shape().to_vec();
        self.push(Tensor::from_parts(shape, data), Op::Add(a, b), "add")
    }

    /// Adds a length-`n` row vector to every row of an `[m, n]` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, KernelError> {
        let (m, n) = self.dims(a);
        if self.value(row).numel() != n {
            return Err(Self::mismatch(
                "add_row",
                format!("[{m},{n}] + row of {}", self.value(row).numel()),
            ));
        }
        let r = self.value(row).data();
        let data = self
            .value(a)
            .data()
            .chunks(n)
            .flat_map(|chunk| chunk.iter().zip(r).map(|(&x, &y)| x + y))
            .collect();
        let shape = self.value(a).shape().to_vec();
        self.push(Tensor::from_parts(shape, data), Op::AddRow(a, row), "add_row")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, KernelError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Self::mismatch("mul", format!("{:?} * {:?}", ta.shape(), tb.shape())));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x * y).collect();
        let shape = ta.shape().to_vec();
        self.push(Tensor::from_parts(shape, data), Op::Mul(a, b), "mul")
    }

    pub fn scale(&mut self, a: Var, c: T) -> Result<Var, KernelError> {
        let out = self.value(a).map(|x| x * c);
        self.push(out, Op::Scale(a, c), "scale")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, KernelError> {
        let out = self.value(a).map(|x| x.max(T::zero()));
        self.push(out, Op::Relu(a), "relu")
    }

    /// Normalizes each row to zero mean and unit variance, then applies `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var, KernelError> {
        let (m, n) = self.dims(x);
        if self.value(gain).numel() != n || self.value(bias).numel() != n {
            return Err(Self::mismatch("layer_norm", format!("rows of width {n}")));
        }
        let eps = T::of(LAYER_NORM_EPS);
        let nf = T::of(n as f64);
        let xs = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut xhat = Vec::with_capacity(m * n);
        let mut inv_std = Vec::with_capacity(m);
        let mut out = Vec::with_capacity(m * n);
        for row in xs.chunks(n) {
            let mean = row.iter().copied().sum::<T>() / nf;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nf;
            let is = T::one() / (var + eps).sqrt();
            inv_std.push(is);
            for (j, &v) in row.iter().enumerate() {
                let h = (v - mean) * is;
                xhat.push(h);
                out.push(h * g[j] + b[j]);
            }
        }
        let shape = self.value(x).shape().to_vec();
        self.push(
            Tensor::from_parts(shape, out),
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            "layer_norm",
        )
    }

    fn softmax_rows(data: &[T], m: usize, n: usize, visible: impl Fn(usize) -> usize) -> Vec<T> {
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let row = &data[i * n..(i + 1) * n];
            let upto = visible(i);
            let max = row[..upto].iter().copied().fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for j in 0..upto {
                let e = (row[j] - max).exp();
                out[i * n + j] = e;
                z += e;
            }
            for v in &mut out[i * n..i * n + upto] {
                *v /= z;
            }
        }
        out
    }

    /// Row-wise softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var, KernelError> {
        let (m, n) = self.dims(x);
        let out = Self::softmax_rows(self.value(x).data(), m, n, |_| n);
        let shape = self.value(x).shape().to_vec();
        self.push(Tensor::from_parts(shape, out), Op::Softmax(x), "softmax")
    }

    /// Row-wise softmax where row `i` only sees columns `0..=i + (cols - rows)`.
    pub fn causal_softmax(&mut self, x: Var) -> Result<Var, KernelError> {
        let (m, n) = self.dims(x);
        if n < m {
            return Err(Self::mismatch(
                "causal_softmax",
                format!("[{m},{n}] has fewer columns than rows"),
            ));
        }
        let offset = n - m;
        let out = Self::softmax_rows(self.value(x).data(), m, n, |i| i + offset + 1);
        self.push(
            Tensor::from_parts(vec![m, n], out),
            Op::CausalSoftmax(x),
            "causal_softmax",
        )
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of `logits`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var, KernelError> {
        let (m, n) = self.dims(logits);
        if targets.len() != m {
            return Err(Self::mismatch(
                "cross_entropy",
                format!("{m} rows but {} targets", targets.len()),
            ));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= n) {
            return Err(KernelError::InvalidArgument(format!(
                "cross_entropy target {bad} out of range for {n} classes"
            )));
        }
        let probs = Self::softmax_rows(self.value(logits).data(), m, n, |_| n);
        let mut loss = T::zero();
        for (i, &t) in targets.iter().enumerate() {
            // log-sum-exp form keeps tiny probabilities finite
            let row = &self.value(logits).data()[i * n..(i + 1) * n];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
            loss += lse - row[t];
        }
        loss /= T::of(m as f64);
        self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            "cross_entropy",
        )
    }

    /// Gathers rows of `table` by id.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var, KernelError> {
        let (rows, d) = self.dims(table);
        if ids.is_empty() {
            return Err(KernelError::InvalidArgument("embedding lookup with no ids".into()));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(KernelError::InvalidArgument(format!(
                "embedding id {bad} out of range for table of {rows} rows"
            )));
        }
        let t = self.value(table).data();
        let data = ids
            .iter()
            .flat_map(|&i| t[i * d..(i + 1) * d].iter().copied())
            .collect();
        self.push(
            Tensor::from_parts(vec![ids.len(), d], data),
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            "embedding",
        )
    }

    /// Inverted dropout: kept units are scaled by `1 / (1 - p)` during training.
    pub fn dropout(&mut self, x: Var, p: f64) -> Result<Var, KernelError> {
        if !(0.0..1.0).contains(&p) {
            return Err(KernelError::InvalidArgument(format!(
                "dropout ratio {p} outside [0, 1)"
            )));
        }
        let Some(rng) = self.dropout_rng.as_mut() else {
            return Ok(x);
        };
        if p == 0.0 {
            return Ok(x);
        }
        let keep = T::of(1.0 / (1.0 - p));
        let n = self.nodes[x.0].value.numel();
        let mask: Vec<T> = (0..n)
            .map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep })
            .collect();
        let xt = self.value(x);
        let data = xt.data().iter().zip(&mask).map(|(&v, &k)| v * k).collect();
        let shape = xt.shape().to_vec();
        self.push(Tensor::from_parts(shape, data), Op::Dropout { x, mask }, "dropout")
    }

    /// Concatenates 2-D values side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, KernelError> {
        let m = self.concat_check(parts, true)?;
        let widths: Vec<usize> = parts.iter().map(|&p| self.dims(p).1).collect();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * total);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        self.push(
            Tensor::from_parts(vec![m, total], data),
            Op::ConcatCols(parts.to_vec()),
            "concat_cols",
        )
    }

    /// Stacks 2-D values vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, KernelError> {
        let n = self.concat_check(parts, false)?;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            rows += self.dims(p).0;
            data.extend_from_slice(self.value(p).data());
        }
        self.push(
            Tensor::from_parts(vec![rows, n], data),
            Op::ConcatRows(parts.to_vec()),
            "concat_rows",
        )
    }

    fn concat_check(&self, parts: &[Var], by_cols: bool) -> Result<usize, KernelError> {
        let first = parts
            .first()
            .ok_or_else(|| KernelError::InvalidArgument("concat of zero parts".into()))?;
        let pick = |v: Var| {
            let (r, c) = self.dims(v);
            if by_cols {
                r
            } else {
                c
            }
        };
        let shared = pick(*first);
        if parts.iter().any(|&p| pick(p) != shared) {
            return Err(Self::mismatch(
                "concat",
                "parts disagree on the shared dimension".into(),
            ));
        }
        Ok(shared)
    }

    /// Columns `start..end` of a 2-D value.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var, KernelError> {
        let (m, n) = self.dims(x);
        if start >= end || end > n {
            return Err(Self::mismatch("slice_cols", format!("{start}..{end} of {n} columns")));
        }
        let w = end - start;
        let src = self.value(x).data();
        let data = (0..m)
            .flat_map(|i| src[i * n + start..i * n + end].iter().copied())
            .collect();
        self.push(
            Tensor::from_parts(vec![m, w], data),
            Op::SliceCols { x, start },
            "slice_cols",
        )
    }

    /// Rows `start..end` of a 2-D value.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var, KernelError> {
        let (m, n) = self.dims(x);
        if start >= end || end > m {
            return Err(Self::mismatch("slice_rows", format!("{start}..{end} of {m} rows")));
        }
        let data = self.value(x).data()[start * n..end * n].to_vec();
        self.push(
            Tensor::from_parts(vec![end - start, n], data),
            Op::SliceRows { x, start },
            "slice_rows",
        )
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, KernelError> {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::Sum(x), "sum")
    }

    pub fn mean(&mut self, x: Var) -> Result<Var, KernelError> {
        let t = self.value(x);
        let s = t.sum() / T::of(t.numel() as f64);
        self.push(Tensor::scalar(s), Op::Mean(x), "mean")
    }

    /// Reverse-mode pass from a scalar `loss`.
    ///
    /// A tape can be differentiated once; a second call reports
    /// [`KernelError::TapeConsumed`].
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>, KernelError> {
        if self.consumed {
            return Err(KernelError::TapeConsumed);
        }
        if self.nodes.is_empty() {
            return Err(KernelError::InvalidArgument("backward on an empty tape".into()));
        }
        if self.value(loss).numel() != 1 {
            return Err(KernelError::NotScalar(self.value(loss).shape().to_vec()));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients {
            nodes: grads,
            shapes,
            params: self.param_vars.iter().map(|(&p, &v)| (p, v)).collect(),
        })
    }

    fn backprop_node(&self, idx: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[idx];
        let numel = |v: Var| self.nodes[v.0].value.numel();
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [T])| {
            let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); numel(v)]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.dims(*a);
                let n = self.dims(*b).1;
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &mut |ga| gemm_nt_acc(g, bv, ga, m, n, k));
                acc(*b, &mut |gb| gemm_tn_acc(av, g, gb, m, k, n));
            }
            Op::MatMulNT(a, b) => {
                // c = a b^T: da = g b, db = g^T a
                let (m, k) = self.dims(*a);
                let n = self.dims(*b).0;
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &mut |ga| gemm_acc(g, bv, ga, m, n, k));
                acc(*b, &mut |gb| gemm_tn_acc(g, av, gb, m, n, k));
            }
            Op::Add(a, b) => {
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*b, &mut |gb| add_into(gb, g));
            }
            Op::AddRow(a, row) => {
                let n = self.value(*row).numel();
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*row, &mut |gr| {
                    for chunk in g.chunks(n) {
                        add_into(gr, chunk);
                    }
                });
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &mut |ga| {
                    for ((o, &gi), &y) in ga.iter_mut().zip(g).zip(bv) {
                        *o += gi * y;
                    }
                });
                acc(*b, &mut |gb| {
                    for ((o, &gi), &x) in gb.iter_mut().zip(g).zip(av) {
                        *o += gi * x;
                    }
                });
            }
            Op::Scale(a, c) => acc(*a, &mut |ga| {
                for (o, &gi) in ga.iter_mut().zip(g) {
                    *o += gi * *c;
                }
            }),
            Op::Relu(a) => {
                let av = self.value(*a).data();
                acc(*a, &mut |ga| {
                    for ((o, &gi), &x) in ga.iter_mut().zip(g).zip(av) {
                        if x > T::zero() {
                            *o += gi;
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let (_, n) = self.dims(*x);
                let gv = self.value(*gain).data();
                let nf = T::of(n as f64);
                acc(*gain, &mut |gg| {
                    for (gr, hr) in g.chunks(n).zip(xhat.chunks(n)) {
                        for j in 0..n {
                            gg[j] += gr[j] * hr[j];
                        }
                    }
                });
                acc(*bias, &mut |gb| {
                    for gr in g.chunks(n) {
                        add_into(gb, gr);
                    }
                });
                acc(*x, &mut |gx| {
                    for (i, (gr, hr)) in g.chunks(n).zip(xhat.chunks(n)).enumerate() {
                        let mut sum_d = T::zero();
                        let mut sum_dh = T::zero();
                        for j in 0..n {
                            let d = gr[j] * gv[j];
                            sum_d += d;
                            sum_dh += d * hr[j];
                        }
                        let scale = inv_std[i] / nf;
                        for j in 0..n {
                            let d = gr[j] * gv[j];
                            gx[i * n + j] += scale * (nf * d - sum_d - hr[j] * sum_dh);
                        }
                    }
                });
            }
            Op::Softmax(x) | Op::CausalSoftmax(x) => {
                let (_, n) = self.dims(*x);
                let y = node.value.data();
                acc(*x, &mut |gx| {
                    for (i, (gr, yr)) in g.chunks(n).zip(y.chunks(n)).enumerate() {
                        let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                        for j in 0..n {
                            gx[i * n + j] += yr[j] * (gr[j] - dot);
                        }
                    }
                });
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let (m, n) = self.dims(*logits);
                let scale = g[0] / T::of(m as f64);
                acc(*logits, &mut |gl| {
                    for (i, &t) in targets.iter().enumerate() {
                        for j in 0..n {
                            let onehot = if j == t { T::one() } else { T::zero() };
                            gl[i * n + j] += scale * (probs[i * n + j] - onehot);
                        }
                    }
                });
            }
            Op::Embedding { table, ids } => {
                let d = self.dims(*table).1;
                acc(*table, &mut |gt| {
                    for (r, &id) in ids.iter().enumerate() {
                        add_into(&mut gt[id * d..(id + 1) * d], &g[r * d..(r + 1) * d]);
                    }
                });
            }
            Op::Dropout { x, mask } => acc(*x, &mut |gx| {
                for ((o, &gi), &k) in gx.iter_mut().zip(g).zip(mask) {
                    *o += gi * k;
                }
            }),
            Op::ConcatCols(parts) => {
                let total = node.value.dims2().1;
                let mut offset = 0;
                for &p in parts {
                    let (m, w) = self.dims(p);
                    acc(p, &mut |gp| {
                        for i in 0..m {
                            add_into(
                                &mut gp[i * w..(i + 1) * w],
                                &g[i * total + offset..i * total + offset + w],
                            );
                        }
                    });
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = numel(p);
                    acc(p, &mut |gp| add_into(gp, &g[offset..offset + len]));
                    offset += len;
                }
            }
            Op::SliceCols { x, start } => {
                let (m, n) = self.dims(*x);
                let w = node.value.dims2().1;
                acc(*x, &mut |gx| {
                    for i in 0..m {
                        add_into(&mut gx[i * n + start..i * n + start + w], &g[i * w..(i + 1) * w]);
                    }
                });
            }
            Op::SliceRows { x, start } => {
                let n = self.dims(*x).1;
                acc(*x, &mut |gx| add_into(&mut gx[start * n..start * n + g.len()], g));
            }
            Op::Sum(x) => acc(*x, &mut |gx| {
                for o in gx.iter_mut() {
                    *o += g[0];
                }
            }),
            Op::Mean(x) => {
                let scale = g[0] / T::of(numel(*x) as f64);
                acc(*x, &mut |gx| {
                    for o in gx.iter_mut() {
                        *o += scale;
                    }
                });
            }
        }
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Result of a backward pass.
pub struct Gradients<T> {
    nodes: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
    params: Vec<(ParamId, Var)>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to any recorded value; zero if it did not influence the loss.
    pub fn wrt(&self, v: Var) -> Tensor<T> {
        let shape = &self.shapes[v.0];
        match &self.nodes[v.0] {
            Some(g) => Tensor::from_parts(shape.clone(), g.clone()),
            None => Tensor::zeros(shape),
        }
    }

    /// Gradient for a parameter, or `None` when the parameter never entered the tape.
    pub fn param(&self, id: ParamId) -> Option<Tensor<T>> {
        self.params.iter().find(|(p, _)| *p == id).map(|&(_, v)| self.wrt(v))
    }

    /// One gradient per parameter of `store`, in store order; parameters not on
    /// the tape get zeros.
    pub fn dense(&self, store: &ParamStore<T>) -> Vec<Tensor<T>> {
        let mut out: Vec<Tensor<T>> = store.iter().map(|(_, _, t)| Tensor::zeros(t.shape())).collect();
        for &(p, v) in &self.params {
            if let Some(g) = &self.nodes[v.0] {
                out[p.index()] = Tensor::from_parts(self.shapes[v.0].clone(), g.clone());
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut tape = Tape::<f64>::detached();
        let x = tape.constant(t(&[1, 3], &[0.0, 0.0, 0.0])).unwrap();
        let y = tape.softmax(x).unwrap();
        for &p in tape.value(y).data() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let mut tape = Tape::<f64>::detached();
        let x = tape.constant(t(&[2, 3], &[0.3, -1.2, 2.5, 4.0, 4.0, -7.0])).unwrap();
        let xs = tape
            .constant(t(&[2, 3], &[100.3, 98.8, 102.5, 104.0, 104.0, 93.0]))
            .unwrap();
        let a = tape.softmax(x).unwrap();
        let b = tape.softmax(xs).unwrap();
        assert!(tape.value(a).max_abs_diff(tape.value(b)) < 1e-9);
        for r in 0..2 {
            let s: f64 = tape.value(a).row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn identity_matmul() {
        let mut tape = Tape::<f64>::detached();
        let i = tape.constant(Tensor::identity(3)).unwrap();
        let a_val = t(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let a = tape.constant(a_val.clone()).unwrap();
        let c = tape.matmul(i, a).unwrap();
        assert_eq!(tape.value(c), &a_val);
    }

    #[test]
    fn cross_entropy_of_certain_prediction_is_zero() {
        let mut tape = Tape::<f64>::detached();
        let logits = tape.constant(t(&[1, 3], &[0.0, 800.0, 0.0])).unwrap();
        let l = tape.cross_entropy(logits, &[1]).unwrap();
        assert_eq!(tape.value(l).item(), 0.0);
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::<f64>::detached();
        let x = tape.constant(t(&[2, 2], &[1.0, -2.0, 3.0, 0.5])).unwrap();
        let s = tape.sum(x).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.wrt(x), Tensor::ones(&[2, 2]));
    }

    #[test]
    fn square_gradient() {
        let mut tape = Tape::<f64>::detached();
        let x = tape.constant(t(&[1], &[3.0])).unwrap();
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.wrt(x).data(), &[6.0]);
    }

    #[test]
    fn second_backward_fails() {
        let mut tape = Tape::<f64>::detached();
        let x = tape.constant(t(&[1], &[3.0])).unwrap();
        let s = tape.sum(x).unwrap();
        tape.backward(s).unwrap();
        assert!(matches!(tape.backward(s), Err(KernelError::TapeConsumed)));
    }

    #[test]
    fn backward_requires_scalar() {
        let mut tape = Tape::<f64>::detached();
        let x = tape.constant(t(&[2], &[3.0, 1.0])).unwrap();
        assert!(matches!(tape.backward(x), Err(KernelError::NotScalar(_))));
    }

    #[test]
    fn shape_errors_are_reported() {
        let mut tape = Tape::<f64>::detached();
        let a = tape.constant(t(&[2, 3], &[0.0; 6])).unwrap();
        let b = tape.constant(t(&[2, 3], &[0.0; 6])).unwrap();
        assert!(matches!(tape.matmul(a, b), Err(KernelError::ShapeMismatch { .. })));
        assert!(tape.slice_cols(a, 2, 4).is_err());
        assert!(tape.cross_entropy(a, &[0]).is_err());
        assert!(tape.cross_entropy(a, &[0, 3]).is_err());
        assert!(tape.dropout(a, 1.0).is_err());
    }

    #[test]
    fn overflow_is_an_error() {
        let mut tape = Tape::<f64>::detached();
        let a = tape.constant(t(&[1], &[1e300])).unwrap();
        assert!(matches!(tape.mul(a, a), Err(KernelError::NonFinite { op: "mul" })));
    }

    #[test]
    fn dropout_identity_cases() {
        let store = ParamStore::<f64>::new();
        let mut eval = Tape::new(&store);
        let x = eval.constant(t(&[1, 4], &[1.0, 2.0, 3.0, 4.0])).unwrap();
        assert_eq!(eval.dropout(x, 0.5).unwrap(), x);

        let mut train = Tape::training(&store, 7);
        let x = train.constant(t(&[1, 4], &[1.0, 2.0, 3.0, 4.0])).unwrap();
        assert_eq!(train.dropout(x, 0.0).unwrap(), x);
        let y = train.dropout(x, 0.5).unwrap();
        for (&o, &i) in train.value(y).data().iter().zip(train.value(x).data()) {
            assert!(o == 0.0 || (o - 2.0 * i).abs() < 1e-12);
        }
    }

    #[test]
    fn causal_softmax_masks_future() {
        let mut tape = Tape::<f64>::detached();
        let x = tape.constant(t(&[2, 2], &[5.0, 9.0, 1.0, 1.0])).unwrap();
        let y = tape.causal_softmax(x).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 0.0, 0.5, 0.5]);
    }

    #[test]
    fn unused_parameters_get_zero_gradient() {
        let mut store = ParamStore::<f64>::new();
        let used = store.add("used", t(&[2], &[1.0, 2.0])).unwrap();
        let unused = store.add("unused", t(&[3], &[1.0, 2.0, 3.0])).unwrap();
        let mut tape = Tape::new(&store);
        let u = tape.param(used);
        let s = tape.sum(u).unwrap();
        let g = tape.backward(s).unwrap();
        assert!(g.param(unused).is_none());
        let dense = g.dense(&store);
        assert_eq!(dense[used.index()].data(), &[1.0, 1.0]);
        assert_eq!(dense[unused.index()], Tensor::zeros(&[3]));
    }
}
