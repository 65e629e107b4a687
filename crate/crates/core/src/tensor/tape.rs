//! Wengert-list tape: ops are recorded in execution order and replayed in
//! exact reverse order by [`Tape::backward`].

use super::{kernels, Element, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    Gelu(Var),
    Sigmoid(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        rstd: Vec<f64>,
    },
    Softmax(Var),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    Row(Var, usize),
    Sum(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node<T> {
    shape: Vec<usize>,
    value: Vec<T>,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<T>>,
}

/// Records primitive operations for one forward pass.
#[derive(Debug, Default)]
pub struct Tape<T: Element = f32> {
    nodes: Vec<Node<T>>,
}

fn dims2(shape: &[usize]) -> (usize, usize) {
    match shape {
        [] => (1, 1),
        [n] => (1, *n),
        [m, n] => (*m, *n),
        [b, m, n] => (b * m, *n),
        _ => unreachable!("rank ≤ 3"),
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<T>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a leaf holding a copy of `t`.
    pub fn leaf(&mut self, t: &Tensor, requires_grad: bool) -> Var {
        let value = t.data().iter().map(|&v| T::from_f64(v as f64)).collect();
        self.push(t.shape().to_vec(), value, Op::Leaf, requires_grad)
    }

    /// Records a leaf from raw values.
    pub fn leaf_raw(&mut self, shape: &[usize], value: Vec<T>, requires_grad: bool) -> Result<Var> {
        if shape.len() > 3 || shape.iter().product::<usize>() != value.len() {
            return Err(Error::Dimension {
                op: "leaf",
                lhs: shape.to_vec(),
                rhs: vec![value.len()],
            });
        }
        Ok(self.push(shape.to_vec(), value, Op::Leaf, requires_grad))
    }

    pub fn constant(&mut self, t: &Tensor) -> Var {
        self.leaf(t, false)
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0].to_f64()
    }

    /// Copies a recorded value out as a 32-bit tensor.
    pub fn tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        let data = n.value.iter().map(|x| x.to_f64() as f32).collect();
        Tensor::new(&n.shape, data).expect("recorded shapes are valid")
    }

    /// Accumulated gradient of a leaf, if backward reached it.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn dim_err(&self, op: &'static str, a: Var, b: Var) -> Error {
        Error::Dimension {
            op,
            lhs: self.shape(a).to_vec(),
            rhs: self.shape(b).to_vec(),
        }
    }

    fn matrix(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        match self.shape(v) {
            [m, n] => Ok((*m, *n)),
            s => Err(Error::Dimension {
                op,
                lhs: s.to_vec(),
                rhs: vec![],
            }),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix(a, "matmul")?;
        let (k2, n) = self.matrix(b, "matmul")?;
        if k != k2 {
            return Err(self.dim_err("matmul", a, b));
        }
        let mut out = vec![T::default(); m * n];
        kernels::matmul(self.value(a), self.value(b), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(vec![m, n], out, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.matrix(a, "transpose")?;
        let src = self.value(a);
        let mut out = vec![T::default(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        let rg = self.rg(a);
        Ok(self.push(vec![n, m], out, Op::Transpose(a), rg))
    }

    fn zip_same(&mut self, a: Var, b: Var, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Vec<T>> {
        if self.shape(a) != self.shape(b) {
            return Err(self.dim_err(op, a, b));
        }
        Ok(self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| T::from_f64(f(x.to_f64(), y.to_f64())))
            .collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same(a, b, "add", |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(self.shape(a).to_vec(), out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same(a, b, "sub", |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(self.shape(a).to_vec(), out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same(a, b, "mul", |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(self.shape(a).to_vec(), out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self
            .value(a)
            .iter()
            .map(|x| T::from_f64(x.to_f64() * c))
            .collect();
        let rg = self.rg(a);
        self.push(self.shape(a).to_vec(), out, Op::Scale(a, c), rg)
    }

    /// Adds a length-`n` vector to every row of an `m×n` matrix.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (m, n) = self.matrix(x, "add_row")?;
        if self.value(row).len() != n {
            return Err(self.dim_err("add_row", x, row));
        }
        let r = self.value(row);
        let out = self
            .value(x)
            .iter()
            .enumerate()
            .map(|(i, v)| T::from_f64(v.to_f64() + r[i % n].to_f64()))
            .collect();
        let rg = self.rg(x) || self.rg(row);
        Ok(self.push(vec![m, n], out, Op::AddRow(x, row), rg))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self
            .value(a)
            .iter()
            .map(|x| T::from_f64(kernels::gelu(x.to_f64())))
            .collect();
        let rg = self.rg(a);
        self.push(self.shape(a).to_vec(), out, Op::Gelu(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self
            .value(a)
            .iter()
            .map(|x| T::from_f64(kernels::sigmoid(x.to_f64())))
            .collect();
        let rg = self.rg(a);
        self.push(self.shape(a).to_vec(), out, Op::Sigmoid(a), rg)
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.matrix(x, "layer_norm")?;
        if self.value(gain).len() != n {
            return Err(self.dim_err("layer_norm", x, gain));
        }
        if self.value(bias).len() != n {
            return Err(self.dim_err("layer_norm", x, bias));
        }
        let mut out = vec![T::default(); m * n];
        let mut rstd = vec![0f64; m];
        kernels::layer_norm(
            self.value(x),
            self.value(gain),
            self.value(bias),
            &mut out,
            &mut rstd,
            m,
            n,
        );
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        Ok(self.push(vec![m, n], out, Op::LayerNorm { x, gain, bias, rstd }, rg))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        self.softmax_impl(x, false)
    }

    /// Softmax where row `i` attends only to columns `0..=i`.
    pub fn causal_softmax(&mut self, x: Var) -> Result<Var> {
        self.softmax_impl(x, true)
    }

    fn softmax_impl(&mut self, x: Var, causal: bool) -> Result<Var> {
        let (m, n) = self.matrix(x, "softmax_rows")?;
        let mut out = vec![T::default(); m * n];
        kernels::softmax_rows(self.value(x), &mut out, m, n, causal);
        let rg = self.rg(x);
        Ok(self.push(vec![m, n], out, Op::Softmax(x), rg))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.matrix(x, "slice_cols")?;
        if start + len > n {
            return Err(Error::Dimension {
                op: "slice_cols",
                lhs: vec![m, n],
                rhs: vec![start, len],
            });
        }
        let src = self.value(x);
        let mut out = Vec::with_capacity(m * len);
        for i in 0..m {
            out.extend_from_slice(&src[i * n + start..i * n + start + len]);
        }
        let rg = self.rg(x);
        Ok(self.push(vec![m, len], out, Op::SliceCols(x, start), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Usage("concat of zero parts".into()))?;
        let (m, _) = self.matrix(first, "concat_cols")?;
        let mut total = 0;
        for &p in parts {
            let (pm, pn) = self.matrix(p, "concat_cols")?;
            if pm != m {
                return Err(self.dim_err("concat_cols", first, p));
            }
            total += pn;
        }
        let mut out = Vec::with_capacity(m * total);
        for i in 0..m {
            for &p in parts {
                let pn = self.shape(p)[1];
                out.extend_from_slice(&self.value(p)[i * pn..(i + 1) * pn]);
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(vec![m, total], out, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Selects rows of a table by index (embedding lookup).
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (rows, n) = self.matrix(table, "gather_rows")?;
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(Error::Input(format!("row index {bad} out of range for {rows} rows")));
        }
        let src = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * n);
        for &i in ids {
            out.extend_from_slice(&src[i * n..(i + 1) * n]);
        }
        let rg = self.rg(table);
        Ok(self.push(vec![ids.len(), n], out, Op::GatherRows(table, ids.to_vec()), rg))
    }

    /// Row `i` of a matrix as a `1×n` matrix.
    pub fn row(&mut self, x: Var, i: usize) -> Result<Var> {
        let (m, n) = self.matrix(x, "row")?;
        if i >= m {
            return Err(Error::Input(format!("row {i} out of range for {m} rows")));
        }
        let out = self.value(x)[i * n..(i + 1) * n].to_vec();
        let rg = self.rg(x);
        Ok(self.push(vec![1, n], out, Op::Row(x, i), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).iter().map(|v| v.to_f64()).sum();
        let rg = self.rg(x);
        self.push(vec![], vec![T::from_f64(s)], Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len().max(1);
        let s = self.sum(x);
        self.scale(s, 1.0 / n as f64)
    }

    /// Mean token cross-entropy of `logits[T×V]` over positions with a target.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var> {
        let (m, n) = self.matrix(logits, "cross_entropy")?;
        if targets.len() != m {
            return Err(Error::Dimension {
                op: "cross_entropy",
                lhs: vec![m, n],
                rhs: vec![targets.len()],
            });
        }
        let count = targets.iter().filter(|t| t.is_some()).count();
        if count == 0 {
            return Err(Error::Usage("cross_entropy with no targets".into()));
        }
        let x = self.value(logits);
        let mut probs = vec![0f64; m * n];
        let mut total = 0f64;
        for i in 0..m {
            let row = &x[i * n..(i + 1) * n];
            let max = row.iter().map(|v| v.to_f64()).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0f64;
            for j in 0..n {
                let e = (row[j].to_f64() - max).exp();
                probs[i * n + j] = e;
                z += e;
            }
            for p in &mut probs[i * n..(i + 1) * n] {
                *p /= z;
            }
            if let Some(t) = targets[i] {
                if t >= n {
                    return Err(Error::Input(format!("target {t} out of range for {n} classes")));
                }
                total += -(row[t].to_f64() - max - z.ln());
            }
        }
        let loss = total / count as f64;
        let rg = self.rg(logits);
        Ok(self.push(
            vec![],
            vec![T::from_f64(loss)],
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Squared difference between a scalar-valued var and a constant target.
    pub fn squared_error(&mut self, pred: Var, target: f64) -> Result<Var> {
        if self.value(pred).len() != 1 {
            return Err(Error::Usage("squared_error expects a single-element prediction".into()));
        }
        let shape = self.shape(pred).to_vec();
        let t = self.leaf_raw(&shape, vec![T::from_f64(target)], false)?;
        let d = self.sub(pred, t)?;
        self.mul(d, d)
    }

    /// Reverse pass from a scalar loss. Leaf gradients accumulate across calls
    /// until [`Tape::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::Usage(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        let mut adj: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            self.backprop_node(idx, &g, &mut adj);
            if let Op::Leaf = self.nodes[idx].op {
                let node = &mut self.nodes[idx];
                match &mut node.grad {
                    Some(buf) => {
                        for (b, d) in buf.iter_mut().zip(&g) {
                            *b = T::from_f64(b.to_f64() + d);
                        }
                    }
                    None => node.grad = Some(g.iter().map(|&d| T::from_f64(d)).collect()),
                }
            }
        }
        Ok(())
    }

    fn backprop_node(&self, idx: usize, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let nodes = &self.nodes;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = dims2(&nodes[a.0].shape);
                let n = dims2(&nodes[b.0].shape).1;
                if let Some(da) = slot(nodes, adj, *a) {
                    kernels::matmul_grad_a(g, &nodes[b.0].value, da, m, k, n);
                }
                if let Some(db) = slot(nodes, adj, *b) {
                    kernels::matmul_grad_b(&nodes[a.0].value, g, db, m, k, n);
                }
            }
            Op::Transpose(a) => {
                let (m, n) = dims2(&nodes[a.0].shape);
                if let Some(da) = slot(nodes, adj, *a) {
                    for i in 0..m {
                        for j in 0..n {
                            da[i * n + j] += g[j * m + i];
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                if let Some(da) = slot(nodes, adj, *a) {
                    da.iter_mut().zip(g).for_each(|(d, x)| *d += x);
                }
                if let Some(db) = slot(nodes, adj, *b) {
                    db.iter_mut().zip(g).for_each(|(d, x)| *d += x);
                }
            }
            Op::Sub(a, b) => {
                if let Some(da) = slot(nodes, adj, *a) {
                    da.iter_mut().zip(g).for_each(|(d, x)| *d += x);
                }
                if let Some(db) = slot(nodes, adj, *b) {
                    db.iter_mut().zip(g).for_each(|(d, x)| *d -= x);
                }
            }
            Op::Mul(a, b) => {
                // a and b may be the same var; both contributions land in one slot.
                let av: Vec<f64> = nodes[a.0].value.iter().map(|v| v.to_f64()).collect();
                let bv: Vec<f64> = nodes[b.0].value.iter().map(|v| v.to_f64()).collect();
                if let Some(da) = slot(nodes, adj, *a) {
                    for i in 0..g.len() {
                        da[i] += g[i] * bv[i];
                    }
                }
                if let Some(db) = slot(nodes, adj, *b) {
                    for i in 0..g.len() {
                        db[i] += g[i] * av[i];
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(da) = slot(nodes, adj, *a) {
                    da.iter_mut().zip(g).for_each(|(d, x)| *d += x * c);
                }
            }
            Op::AddRow(x, row) => {
                let n = nodes[row.0].value.len();
                if let Some(dx) = slot(nodes, adj, *x) {
                    dx.iter_mut().zip(g).for_each(|(d, v)| *d += v);
                }
                if let Some(dr) = slot(nodes, adj, *row) {
                    for (i, v) in g.iter().enumerate() {
                        dr[i % n] += v;
                    }
                }
            }
            Op::Gelu(a) => {
                let x = &nodes[a.0].value;
                if let Some(da) = slot(nodes, adj, *a) {
                    for i in 0..g.len() {
                        da[i] += g[i] * kernels::gelu_grad(x[i].to_f64());
                    }
                }
            }
            Op::Sigmoid(a) => {
                let x = &nodes[a.0].value;
                if let Some(da) = slot(nodes, adj, *a) {
                    for i in 0..g.len() {
                        let s = kernels::sigmoid(x[i].to_f64());
                        da[i] += g[i] * s * (1.0 - s);
                    }
                }
            }
            Op::LayerNorm { x, gain, bias, rstd } => {
                let (m, n) = dims2(&nodes[x.0].shape);
                let xv = &nodes[x.0].value;
                let gv = &nodes[gain.0].value;
                // Slots are borrowed one at a time through temporaries.
                let mut dx = slot(nodes, adj, *x).map(std::mem::take);
                let mut dg = slot(nodes, adj, *gain).map(std::mem::take);
                let mut db = slot(nodes, adj, *bias).map(std::mem::take);
                kernels::layer_norm_grad(
                    xv,
                    gv,
                    rstd,
                    g,
                    dx.as_deref_mut(),
                    dg.as_deref_mut(),
                    db.as_deref_mut(),
                    m,
                    n,
                );
                for (v, buf) in [(*x, dx), (*gain, dg), (*bias, db)] {
                    if let Some(buf) = buf {
                        restore(adj, v, buf);
                    }
                }
            }
            Op::Softmax(x) => {
                let (m, n) = dims2(&node.shape);
                if let Some(dx) = slot(nodes, adj, *x) {
                    kernels::softmax_rows_grad(&node.value, g, dx, m, n);
                }
            }
            Op::SliceCols(x, start) => {
                let (m, n) = dims2(&nodes[x.0].shape);
                let len = node.shape[1];
                if let Some(dx) = slot(nodes, adj, *x) {
                    for i in 0..m {
                        for j in 0..len {
                            dx[i * n + start + j] += g[i * len + j];
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let m = node.shape[0];
                let total = node.shape[1];
                let mut offset = 0;
                for &p in parts {
                    let pn = nodes[p.0].shape[1];
                    if let Some(dp) = slot(nodes, adj, p) {
                        for i in 0..m {
                            for j in 0..pn {
                                dp[i * pn + j] += g[i * total + offset + j];
                            }
                        }
                    }
                    offset += pn;
                }
            }
            Op::GatherRows(table, ids) => {
                let n = node.shape[1];
                if let Some(dt) = slot(nodes, adj, *table) {
                    for (r, &id) in ids.iter().enumerate() {
                        for j in 0..n {
                            dt[id * n + j] += g[r * n + j];
                        }
                    }
                }
            }
            Op::Row(x, i) => {
                let n = node.shape[1];
                if let Some(dx) = slot(nodes, adj, *x) {
                    for j in 0..n {
                        dx[i * n + j] += g[j];
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(dx) = slot(nodes, adj, *x) {
                    dx.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let n = dims2(&nodes[logits.0].shape).1;
                let count = targets.iter().filter(|t| t.is_some()).count() as f64;
                if let Some(dl) = slot(nodes, adj, *logits) {
                    for (i, t) in targets.iter().enumerate() {
                        if let Some(t) = t {
                            for j in 0..n {
                                let onehot = if j == *t { 1.0 } else { 0.0 };
                                dl[i * n + j] += g[0] * (probs[i * n + j] - onehot) / count;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn slot<'a, T>(nodes: &[Node<T>], adj: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut Vec<f64>> {
    if !nodes[v.0].requires_grad {
        return None;
    }
    let len = nodes[v.0].value.len();
    Some(adj[v.0].get_or_insert_with(|| vec![0.0; len]))
}

fn restore(adj: &mut [Option<Vec<f64>>], v: Var, buf: Vec<f64>) {
    adj[v.0] = Some(buf);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_grad_and_accumulation() {
        let mut tape: Tape = Tape::new();
        let w = tape.leaf(&Tensor::new(&[2], vec![1.0, 2.0]).unwrap(), true);
        let sq = tape.mul(w, w).unwrap();
        let loss = tape.sum(sq);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(w).unwrap(), &[2.0, 4.0]);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(w).unwrap(), &[4.0, 8.0]);
        tape.zero_grad();
        assert!(tape.grad(w).is_none());
    }

    #[test]
    fn independent_loss_gives_no_grad() {
        let mut tape: Tape = Tape::new();
        let w = tape.leaf(&Tensor::new(&[2], vec![1.0, 2.0]).unwrap(), true);
        let c = tape.constant(&Tensor::new(&[2], vec![3.0, 4.0]).unwrap());
        let loss = tape.sum(c);
        tape.backward(loss).unwrap();
        assert!(tape.grad(w).map_or(true, |g| g.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape: Tape = Tape::new();
        let w = tape.leaf(&Tensor::zeros(&[2]), true);
        assert!(matches!(tape.backward(w), Err(Error::Usage(_))));
    }

    #[test]
    fn causal_softmax_masks_future() {
        let mut tape: Tape = Tape::new();
        let x = tape.leaf(&Tensor::filled(&[3, 3], 1.0), false);
        let y = tape.causal_softmax(x).unwrap();
        let v = tape.value(y);
        assert_eq!(&v[..3], &[1.0, 0.0, 0.0]);
        assert_eq!(&v[3..6], &[0.5, 0.5, 0.0]);
    }

    #[test]
    fn cross_entropy_uniform() {
        let mut tape: Tape<f64> = Tape::new();
        let x = tape.leaf_raw(&[2, 4], vec![0.0; 8], true).unwrap();
        let l = tape.cross_entropy(x, &[Some(1), None]).unwrap();
        assert!((tape.scalar(l) - 4f64.ln()).abs() < 1e-12);
    }
}
