use std::collections::HashMap;
use std::sync::Arc;

use super::param::{ParamId, ParamStore};
use super::tensor::{gemm, Tensor};
use crate::error::{AidaError, Result};

/// Stand-in for negative infinity in masked logits. `exp` of a logit this far
/// below the row maximum underflows to exactly zero.
pub const MASK_SENTINEL: f64 = -1e9;

/// Probabilities below this are clamped before taking a logarithm.
pub const PROB_FLOOR: f64 = 1e-30;

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

type Derivative = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Transpose(Var),
    AddRowBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Map(Var, Derivative),
    Softmax(Var),
    MaskFilter(Var, Arc<Vec<bool>>),
    CrossEntropy {
        probs: Var,
        labels: Arc<Vec<usize>>,
        weights: Arc<Vec<f64>>,
        clamped: Arc<Vec<bool>>,
    },
    OuterRows(Var, Var),
    SelectCols(Var, Arc<Vec<usize>>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Arc<Vec<usize>>),
    MaxOverTime(Var, Vec<usize>),
    GradReverse(Var, f64),
    Sum(Var),
    Mean(Var),
}

#[derive(Clone)]
struct Node {
    op: Op,
    value: Tensor,
}

/// Counters for numerically suspicious events seen while recording.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Diagnostics {
    /// Cross-entropy terms whose target probability hit [`PROB_FLOOR`].
    pub clamped_probabilities: usize,
}

/// Single-threaded recording of a forward computation.
///
/// Nodes are appended in evaluation order, so every input index is smaller
/// than the index of the node that consumes it and reverse index order is a
/// valid topological order for the backward sweep.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    bound: HashMap<ParamId, Var>,
    diagnostics: Diagnostics,
}

/// Gradients of a scalar with respect to every node on the tape.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads[var.0].as_ref()
    }

    /// Gradient of `var`, or zeros shaped like `like` when nothing flowed to it.
    pub fn get_or_zeros(&self, var: Var, like: &Tensor) -> Tensor {
        self.get(var).cloned().unwrap_or_else(|| Tensor::zeros_like(like))
    }
}

fn shape_err(op: &'static str, a: (usize, usize), b: (usize, usize)) -> AidaError {
    AidaError::dim(op, format!("{}x{} vs {}x{}", a.0, a.1, b.0, b.1))
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn diagnostics(&self) -> &Diagnostics {
        &self.diagnostics
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn dims(&self, var: Var) -> (usize, usize) {
        self.nodes[var.0].value.dims()
    }

    fn push(&mut self, op: Op, value: Tensor, name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(AidaError::DegenerateInput {
                op: name,
                detail: "non-finite output".into(),
            });
        }
        self.nodes.push(Node { op, value });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records a constant (no gradient is propagated anywhere from it).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { op: Op::Leaf, value });
        Var(self.nodes.len() - 1)
    }

    /// Binds a parameter's current value. Repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        self.nodes.push(Node {
            op: Op::Param(id),
            value: store.get(id).value.clone(),
        });
        let v = Var(self.nodes.len() - 1);
        self.bound.insert(id, v);
        v
    }

    /// Parameters bound on this tape, in binding order.
    pub fn bound_params(&self) -> impl Iterator<Item = (ParamId, Var)> + '_ {
        self.nodes.iter().enumerate().filter_map(|(i, n)| match n.op {
            Op::Param(id) => Some((id, Var(i))),
            _ => None,
        })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (da, db) = (self.dims(a), self.dims(b));
        if da.1 != db.0 {
            return Err(shape_err("matmul", da, db));
        }
        let out = gemm(self.value(a), false, self.value(b), false);
        self.push(Op::MatMul(a, b), out, "matmul")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose();
        self.push(Op::Transpose(a), out, "transpose")
    }

    /// Adds a `1 x c` bias to every row of an `r x c` matrix.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (dx, db) = (self.dims(x), self.dims(bias));
        if db != (1, dx.1) {
            return Err(shape_err("add_row_bias", dx, db));
        }
        let mut out = self.value(x).clone();
        let b = self.value(bias).data().to_vec();
        for row in out.data_mut().chunks_mut(dx.1) {
            for (o, bb) in row.iter_mut().zip(&b) {
                *o += bb;
            }
        }
        self.push(Op::AddRowBias(x, bias), out, "add_row_bias")
    }

    fn zip_same(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (da, db) = (self.dims(a), self.dims(b));
        if da != db {
            return Err(shape_err(name, da, db));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok(Tensor::from_parts_unchecked(da.0, da.1, data))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same(a, b, "add", |x, y| x + y)?;
        self.push(Op::Add(a, b), out, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same(a, b, "sub", |x, y| x - y)?;
        self.push(Op::Sub(a, b), out, "sub")
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same(a, b, "mul", |x, y| x * y)?;
        self.push(Op::Mul(a, b), out, "mul")
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let out = self.value(a).map(|v| v * c);
        self.push(Op::Scale(a, c), out, "scale")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|v| v.max(0.0));
        self.push(Op::Relu(a), out, "relu")
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(f64::tanh);
        self.push(Op::Tanh(a), out, "tanh")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(sigmoid);
        self.push(Op::Sigmoid(a), out, "sigmoid")
    }

    /// Elementwise map with a caller-supplied derivative.
    pub fn map<F, D>(&mut self, a: Var, f: F, derivative: D) -> Result<Var>
    where
        F: Fn(f64) -> f64,
        D: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        let out = self.value(a).map(f);
        self.push(Op::Map(a, Arc::new(derivative)), out, "map")
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let out = softmax_rows(self.value(a))?;
        self.push(Op::Softmax(a), out, "softmax")
    }

    /// Replaces every column whose mask entry is `false` by [`MASK_SENTINEL`].
    pub fn mask_filter(&mut self, a: Var, keep: &[bool]) -> Result<Var> {
        let (r, c) = self.dims(a);
        if keep.len() != c {
            return Err(AidaError::dim("mask_filter", format!("mask length {} vs {c} logits", keep.len())));
        }
        if !keep.iter().any(|&k| k) {
            return Err(AidaError::pre("mask_filter", "mask has no shared class"));
        }
        let mut out = self.value(a).clone();
        for i in 0..r {
            for (j, &k) in keep.iter().enumerate() {
                if !k {
                    out.data_mut()[i * c + j] = MASK_SENTINEL;
                }
            }
        }
        self.push(Op::MaskFilter(a, Arc::new(keep.to_vec())), out, "mask_filter")
    }

    /// Weighted mean negative log-likelihood: `(1/B) * sum_i w_i * -ln p[i, y_i]`.
    pub fn cross_entropy(&mut self, probs: Var, labels: &[usize], weights: Option<&[f64]>) -> Result<Var> {
        let (r, c) = self.dims(probs);
        if labels.len() != r {
            return Err(AidaError::dim("cross_entropy", format!("{} labels for {r} rows", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
            return Err(AidaError::pre("cross_entropy", format!("label {bad} out of range for {c} classes")));
        }
        let weights: Vec<f64> = match weights {
            Some(w) if w.len() != r => {
                return Err(AidaError::dim("cross_entropy", format!("{} weights for {r} rows", w.len())))
            }
            Some(w) => w.to_vec(),
            None => vec![1.0; r],
        };
        let p = self.value(probs);
        let mut total = 0.0;
        let mut clamped = vec![false; r];
        for i in 0..r {
            let mut py = p.get(i, labels[i]);
            if py < PROB_FLOOR {
                py = PROB_FLOOR;
                clamped[i] = true;
            }
            total += weights[i] * -py.ln();
        }
        let n_clamped = clamped.iter().filter(|&&c| c).count();
        if n_clamped > 0 {
            self.diagnostics.clamped_probabilities += n_clamped;
            log::debug!("cross_entropy clamped {n_clamped} probabilities at {PROB_FLOOR:e}");
        }
        let op = Op::CrossEntropy {
            probs,
            labels: Arc::new(labels.to_vec()),
            weights: Arc::new(weights),
            clamped: Arc::new(clamped),
        };
        self.push(op, Tensor::scalar(total / r as f64), "cross_entropy")
    }

    /// Row-wise flattened outer product: `out[r, i * dg + j] = f[r, i] * g[r, j]`.
    pub fn outer_rows(&mut self, f: Var, g: Var) -> Result<Var> {
        let (df, dg) = (self.dims(f), self.dims(g));
        if df.0 != dg.0 {
            return Err(shape_err("outer_flatten", df, dg));
        }
        let (rows, nf, ng) = (df.0, df.1, dg.1);
        let mut out = vec![0.0; rows * nf * ng];
        let (fv, gv) = (self.value(f), self.value(g));
        for r in 0..rows {
            let (fr, gr) = (fv.row(r), gv.row(r));
            let o = &mut out[r * nf * ng..(r + 1) * nf * ng];
            for i in 0..nf {
                for j in 0..ng {
                    o[i * ng + j] = fr[i] * gr[j];
                }
            }
        }
        let out = Tensor::from_parts_unchecked(rows, nf * ng, out);
        self.push(Op::OuterRows(f, g), out, "outer_flatten")
    }

    pub fn select_cols(&mut self, a: Var, cols: &[usize]) -> Result<Var> {
        let (r, c) = self.dims(a);
        if cols.is_empty() || cols.iter().any(|&j| j >= c) {
            return Err(AidaError::dim("select_cols", format!("columns {cols:?} of {c}")));
        }
        let v = self.value(a);
        let mut out = Vec::with_capacity(r * cols.len());
        for i in 0..r {
            out.extend(cols.iter().map(|&j| v.get(i, j)));
        }
        let out = Tensor::from_parts_unchecked(r, cols.len(), out);
        self.push(Op::SelectCols(a, Arc::new(cols.to_vec())), out, "select_cols")
    }

    /// Rows `start..end`.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.dims(a);
        if start >= end || end > r {
            return Err(AidaError::dim("slice_rows", format!("{start}..{end} of {r}")));
        }
        let out = self.value(a).data()[start * c..end * c].to_vec();
        let out = Tensor::from_parts_unchecked(end - start, c, out);
        self.push(Op::SliceRows(a, start), out, "slice_rows")
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.dims(a);
        if start >= end || end > c {
            return Err(AidaError::dim("slice_cols", format!("{start}..{end} of {c}")));
        }
        let v = self.value(a);
        let mut out = Vec::with_capacity(r * (end - start));
        for i in 0..r {
            out.extend_from_slice(&v.row(i)[start..end]);
        }
        let out = Tensor::from_parts_unchecked(r, end - start, out);
        self.push(Op::SliceCols(a, start), out, "slice_cols")
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = match parts.first() {
            Some(&p) => self.dims(p).0,
            None => return Err(AidaError::pre("concat_cols", "no inputs")),
        };
        if parts.iter().any(|&p| self.dims(p).0 != rows) {
            return Err(AidaError::dim("concat_cols", "row counts differ"));
        }
        let total: usize = parts.iter().map(|&p| self.dims(p).1).sum();
        let mut out = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(i));
            }
        }
        let out = Tensor::from_parts_unchecked(rows, total, out);
        self.push(Op::ConcatCols(parts.to_vec()), out, "concat_cols")
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = match parts.first() {
            Some(&p) => self.dims(p).1,
            None => return Err(AidaError::pre("concat_rows", "no inputs")),
        };
        if parts.iter().any(|&p| self.dims(p).1 != cols) {
            return Err(AidaError::dim("concat_rows", "column counts differ"));
        }
        let mut out = Vec::new();
        for &p in parts {
            out.extend_from_slice(self.value(p).data());
        }
        let rows = out.len() / cols;
        let out = Tensor::from_parts_unchecked(rows, cols, out);
        self.push(Op::ConcatRows(parts.to_vec()), out, "concat_rows")
    }

    /// Row lookup, e.g. embedding tables. Backward scatter-adds.
    pub fn gather_rows(&mut self, table: Var, index: &[usize]) -> Result<Var> {
        let (r, c) = self.dims(table);
        if index.is_empty() {
            return Err(AidaError::pre("gather_rows", "empty index"));
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= r) {
            return Err(AidaError::dim("gather_rows", format!("row {bad} of {r}")));
        }
        let t = self.value(table);
        let mut out = Vec::with_capacity(index.len() * c);
        for &i in index {
            out.extend_from_slice(t.row(i));
        }
        let out = Tensor::from_parts_unchecked(index.len(), c, out);
        self.push(Op::GatherRows(table, Arc::new(index.to_vec())), out, "gather_rows")
    }

    /// Column-wise max over rows (time steps) of a `T x d` matrix, giving `1 x d`.
    /// The gradient goes to the first row attaining the maximum.
    pub fn max_over_time(&mut self, h: Var) -> Result<Var> {
        let (t, d) = self.dims(h);
        if t == 0 {
            return Err(AidaError::pre("max_over_time", "empty sequence"));
        }
        let v = self.value(h);
        let mut arg = vec![0usize; d];
        let mut out = v.row(0).to_vec();
        for step in 1..t {
            for (i, &x) in v.row(step).iter().enumerate() {
                if x > out[i] {
                    out[i] = x;
                    arg[i] = step;
                }
            }
        }
        let out = Tensor::from_parts_unchecked(1, d, out);
        self.push(Op::MaxOverTime(h, arg), out, "max_over_time")
    }

    /// Identity forward; backward multiplies the incoming gradient by `-coefficient`.
    pub fn grad_reverse(&mut self, x: Var, coefficient: f64) -> Result<Var> {
        if coefficient < 0.0 || !coefficient.is_finite() {
            return Err(AidaError::pre("grad_reverse", format!("coefficient {coefficient} must be >= 0")));
        }
        let out = self.value(x).clone();
        self.push(Op::GradReverse(x, coefficient), out, "grad_reverse")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(Op::Sum(a), out, "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let out = Tensor::scalar(v.sum() / v.len() as f64);
        self.push(Op::Mean(a), out, "mean")
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if self.value(output).len() != 1 {
            return Err(AidaError::pre("backward", "output must be a scalar"));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(Tensor::scalar(1.0));
        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            let is_leaf = matches!(node.op, Op::Leaf | Op::Param(_));
            if is_leaf {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let mut acc = |v: Var, t: Tensor| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&t),
            slot @ None => *slot = Some(t),
        };
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                acc(*a, gemm(g, false, val(*b), true));
                acc(*b, gemm(val(*a), true, g, false));
            }
            Op::Transpose(a) => acc(*a, g.transpose()),
            Op::AddRowBias(x, b) => {
                let (r, c) = g.dims();
                let mut gb = vec![0.0; c];
                for i in 0..r {
                    for (s, v) in gb.iter_mut().zip(g.row(i)) {
                        *s += v;
                    }
                }
                acc(*x, g.clone());
                acc(*b, Tensor::from_parts_unchecked(1, c, gb));
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                acc(*a, zip(g, bv, |x, y| x * y));
                acc(*b, zip(g, av, |x, y| x * y));
            }
            Op::Scale(a, c) => acc(*a, g.map(|v| v * c)),
            Op::Relu(a) => acc(*a, zip(g, val(*a), |gv, x| if x > 0.0 { gv } else { 0.0 })),
            Op::Tanh(a) => acc(*a, zip(g, &node.value, |gv, y| gv * (1.0 - y * y))),
            Op::Sigmoid(a) => acc(*a, zip(g, &node.value, |gv, y| gv * y * (1.0 - y))),
            Op::Map(a, d) => acc(*a, zip(g, val(*a), |gv, x| gv * d(x))),
            Op::Softmax(a) => {
                let y = &node.value;
                let (r, c) = y.dims();
                let mut out = vec![0.0; r * c];
                for i in 0..r {
                    let (yr, gr) = (y.row(i), g.row(i));
                    let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for j in 0..c {
                        out[i * c + j] = yr[j] * (gr[j] - dot);
                    }
                }
                acc(*a, Tensor::from_parts_unchecked(r, c, out));
            }
            Op::MaskFilter(a, keep) => {
                let c = keep.len();
                let mut out = g.clone();
                for (k, v) in out.data_mut().iter_mut().enumerate() {
                    if !keep[k % c] {
                        *v = 0.0;
                    }
                }
                acc(*a, out);
            }
            Op::CrossEntropy {
                probs,
                labels,
                weights,
                clamped,
            } => {
                let p = val(*probs);
                let (r, c) = p.dims();
                let scale = g.item() / r as f64;
                let mut out = vec![0.0; r * c];
                for i in 0..r {
                    if !clamped[i] {
                        out[i * c + labels[i]] = -scale * weights[i] / p.get(i, labels[i]);
                    }
                }
                acc(*probs, Tensor::from_parts_unchecked(r, c, out));
            }
            Op::OuterRows(f, gg) => {
                let (fv, gv) = (val(*f), val(*gg));
                let (rows, nf) = fv.dims();
                let ng = gv.cols();
                let mut df = vec![0.0; rows * nf];
                let mut dg = vec![0.0; rows * ng];
                for r in 0..rows {
                    let up = g.row(r);
                    let (fr, gr) = (fv.row(r), gv.row(r));
                    for i in 0..nf {
                        for j in 0..ng {
                            let u = up[i * ng + j];
                            df[r * nf + i] += u * gr[j];
                            dg[r * ng + j] += u * fr[i];
                        }
                    }
                }
                acc(*f, Tensor::from_parts_unchecked(rows, nf, df));
                acc(*gg, Tensor::from_parts_unchecked(rows, ng, dg));
            }
            Op::SelectCols(a, cols) => {
                let (r, c) = val(*a).dims();
                let mut out = vec![0.0; r * c];
                for i in 0..r {
                    for (k, &j) in cols.iter().enumerate() {
                        out[i * c + j] += g.get(i, k);
                    }
                }
                acc(*a, Tensor::from_parts_unchecked(r, c, out));
            }
            Op::SliceRows(a, start) => {
                let (r, c) = val(*a).dims();
                let mut out = vec![0.0; r * c];
                out[start * c..start * c + g.len()].copy_from_slice(g.data());
                acc(*a, Tensor::from_parts_unchecked(r, c, out));
            }
            Op::SliceCols(a, start) => {
                let (r, c) = val(*a).dims();
                let w = g.cols();
                let mut out = vec![0.0; r * c];
                for i in 0..r {
                    out[i * c + start..i * c + start + w].copy_from_slice(g.row(i));
                }
                acc(*a, Tensor::from_parts_unchecked(r, c, out));
            }
            Op::ConcatCols(parts) => {
                let rows = g.rows();
                let mut offset = 0;
                for &p in parts {
                    let w = val(p).cols();
                    let mut out = Vec::with_capacity(rows * w);
                    for i in 0..rows {
                        out.extend_from_slice(&g.row(i)[offset..offset + w]);
                    }
                    acc(p, Tensor::from_parts_unchecked(rows, w, out));
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let c = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let n = val(p).len();
                    let out = g.data()[offset..offset + n].to_vec();
                    acc(p, Tensor::from_parts_unchecked(n / c, c, out));
                    offset += n;
                }
            }
            Op::GatherRows(table, index) => {
                let (r, c) = val(*table).dims();
                let mut out = vec![0.0; r * c];
                for (k, &i) in index.iter().enumerate() {
                    for (o, v) in out[i * c..(i + 1) * c].iter_mut().zip(g.row(k)) {
                        *o += v;
                    }
                }
                acc(*table, Tensor::from_parts_unchecked(r, c, out));
            }
            Op::MaxOverTime(h, arg) => {
                let (t, d) = val(*h).dims();
                let mut out = vec![0.0; t * d];
                for (i, &step) in arg.iter().enumerate() {
                    out[step * d + i] = g.data()[i];
                }
                acc(*h, Tensor::from_parts_unchecked(t, d, out));
            }
            Op::GradReverse(x, c) => acc(*x, g.map(|v| -c * v)),
            Op::Sum(a) => {
                let (r, c) = val(*a).dims();
                acc(*a, Tensor::filled(r, c, g.item()));
            }
            Op::Mean(a) => {
                let (r, c) = val(*a).dims();
                acc(*a, Tensor::filled(r, c, g.item() / (r * c) as f64));
            }
        }
    }
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let (r, c) = a.dims();
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_parts_unchecked(r, c, data)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row-wise softmax outside of any tape.
pub fn softmax_rows(z: &Tensor) -> Result<Tensor> {
    let (r, c) = z.dims();
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        let row = z.row(i);
        if row.iter().all(|&v| v <= MASK_SENTINEL) {
            return Err(AidaError::DegenerateInput {
                op: "softmax",
                detail: format!("row {i} has every entry masked"),
            });
        }
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let o = &mut out[i * c..(i + 1) * c];
        let mut s = 0.0;
        for (oj, &v) in o.iter_mut().zip(row) {
            *oj = (v - m).exp();
            s += *oj;
        }
        o.iter_mut().for_each(|v| *v /= s);
    }
    Ok(Tensor::from_parts_unchecked(r, c, out))
}

/// Softmax of a single vector.
pub fn softmax(z: &[f64]) -> Result<Vec<f64>> {
    let t = Tensor::vector(z.to_vec())?;
    Ok(softmax_rows(&t)?.into_data())
}
