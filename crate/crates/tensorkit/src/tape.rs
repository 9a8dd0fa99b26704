//! Reverse-mode automatic differentiation over dense matrices.
//!
//! Operations are recorded on a [`Tape`] in creation order, which is already
//! a topological order of the computation graph. [`Tape::backward`] walks the
//! nodes once in reverse, so gradient accumulation order is fixed and results
//! are bit-reproducible.

use std::collections::{BTreeMap, HashMap};

use crate::error::{Result, TensorError};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Handle to a value recorded on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Boolean `rows x cols` matrix of allowed positions for masked softmax.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    rows: usize,
    cols: usize,
    allowed: Vec<bool>,
}

impl Mask {
    pub fn new(rows: usize, cols: usize, allowed: Vec<bool>) -> Result<Self> {
        if allowed.len() != rows * cols {
            return Err(TensorError::Invalid(format!(
                "mask has {} entries, expected {rows}x{cols}",
                allowed.len()
            )));
        }
        Ok(Mask {
            rows,
            cols,
            allowed,
        })
    }

    pub fn all(rows: usize, cols: usize) -> Self {
        Mask {
            rows,
            cols,
            allowed: vec![true; rows * cols],
        }
    }

    /// Lower-triangular mask: row `i` may see columns `0..=i`.
    pub fn causal(n: usize) -> Self {
        let allowed = (0..n * n).map(|k| k % n <= k / n).collect();
        Mask {
            rows: n,
            cols: n,
            allowed,
        }
    }

    /// Mask from neighbor lists: row `i` may see exactly the columns in `neighbors[i]`.
    pub fn from_neighbors(neighbors: &[Vec<usize>]) -> Result<Self> {
        let n = neighbors.len();
        let mut allowed = vec![false; n * n];
        for (i, ns) in neighbors.iter().enumerate() {
            for &j in ns {
                if j >= n {
                    return Err(TensorError::Invalid(format!(
                        "neighbor {j} of node {i} out of range for {n} nodes"
                    )));
                }
                allowed[i * n + j] = true;
            }
        }
        Ok(Mask {
            rows: n,
            cols: n,
            allowed,
        })
    }

    /// Same allowed set for every row.
    pub fn broadcast_row(rows: usize, row: &[bool]) -> Self {
        let mut allowed = Vec::with_capacity(rows * row.len());
        for _ in 0..rows {
            allowed.extend_from_slice(row);
        }
        Mask {
            rows,
            cols: row.len(),
            allowed,
        }
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    #[inline]
    pub fn is_allowed(&self, r: usize, c: usize) -> bool {
        self.allowed[r * self.cols + c]
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    LeakyRelu(Var, f64),
    Gelu(Var),
    Transpose(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Tensor,
        inv_std: Vec<f64>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
        probs: Tensor,
        count: usize,
    },
    Bce {
        probs: Var,
        targets: Vec<f64>,
        eps: f64,
    },
    Sum(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records a forward computation for later differentiation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_leaves: HashMap<ParamId, Var>,
}

/// Gradients produced by [`Tape::backward`].
#[derive(Default)]
pub struct Gradients {
    by_var: Vec<Option<Tensor>>,
    by_param: BTreeMap<ParamId, Tensor>,
}

impl Gradients {
    pub fn var(&self, v: Var) -> Option<&Tensor> {
        self.by_var.get(v.0).and_then(Option::as_ref)
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.by_param.get(&id)
    }

    /// Overrides the gradient of a parameter (clipping, external accumulation).
    pub fn set_param(&mut self, id: ParamId, grad: Tensor) {
        self.by_param.insert(id, grad);
    }

    /// Adds `scale * other` into the parameter gradients, for accumulating
    /// over a minibatch.
    pub fn accumulate(&mut self, other: &Gradients, scale: f64) {
        for (id, g) in &other.by_param {
            let scaled = g.map(|v| v * scale);
            match self.by_param.get_mut(id) {
                Some(acc) => {
                    for (a, b) in acc.data_mut().iter_mut().zip(scaled.data()) {
                        *a += b;
                    }
                }
                None => {
                    self.by_param.insert(*id, scaled);
                }
            }
        }
    }

    /// Euclidean norm over every parameter gradient.
    pub fn param_norm(&self) -> f64 {
        self.by_param
            .values()
            .flat_map(|g| g.data())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale_params(&mut self, k: f64) {
        for g in self.by_param.values_mut() {
            for v in g.data_mut() {
                *v *= k;
            }
        }
    }

    /// Gradient for a parameter, zeros when the loss does not depend on it.
    pub fn param_or_zeros(&self, store: &ParamStore, id: ParamId) -> Tensor {
        self.by_param.get(&id).cloned().unwrap_or_else(|| {
            let [r, c] = store.get(id).shape();
            Tensor::zeros(r, c)
        })
    }
}

fn check_same(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch {
            op,
            left: a.shape(),
            right: b.shape(),
        });
    }
    Ok(())
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_K * (x + GELU_C * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_K * (x + GELU_C * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_K * (1.0 + 3.0 * GELU_C * x * x)
}

/// Row-wise softmax restricted to allowed entries. Rows with no allowed
/// entry become all-zero.
pub fn masked_softmax_rows(x: &Tensor, mask: Option<&Mask>) -> Tensor {
    let mut out = Tensor::zeros(x.rows(), x.cols());
    for r in 0..x.rows() {
        let row = x.row(r);
        let allowed = |c: usize| mask.is_none_or(|m| m.is_allowed(r, c));
        let mut max = f64::NEG_INFINITY;
        for (c, &v) in row.iter().enumerate() {
            if allowed(c) && v > max {
                max = v;
            }
        }
        if max == f64::NEG_INFINITY {
            continue;
        }
        let mut total = 0.0;
        let out_row = out.row_mut(r);
        for (c, &v) in row.iter().enumerate() {
            if allowed(c) {
                let e = (v - max).exp();
                out_row[c] = e;
                total += e;
            }
        }
        for v in out_row.iter_mut() {
            *v /= total;
        }
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, op: Op, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: op_name });
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn grad_of(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Result<Var> {
        self.push("leaf", value, Op::Leaf, true)
    }

    /// A fixed input that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push("constant", value, Op::Leaf, false)
    }

    /// Leaf bound to a stored parameter. Repeated calls return the same node so
    /// gradients accumulate per parameter.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.param_leaves.get(&id) {
            return v;
        }
        self.nodes.push(Node {
            value: store.get(id).clone(),
            op: Op::Leaf,
            requires_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_leaves.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let g = self.grad_of(&[a, b]);
        self.push("matmul", value, Op::MatMul(a, b), g)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        check_same("add", x, y)?;
        let mut value = x.clone();
        value.add_assign(y);
        let g = self.grad_of(&[a, b]);
        self.push("add", value, Op::Add(a, b), g)
    }

    /// `a + b` where `b` is a single row broadcast over the rows of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if y.rows() != 1 || y.cols() != x.cols() {
            return Err(TensorError::ShapeMismatch {
                op: "add_row",
                left: x.shape(),
                right: y.shape(),
            });
        }
        let mut value = x.clone();
        for r in 0..value.rows() {
            for (v, b) in value.row_mut(r).iter_mut().zip(y.data()) {
                *v += b;
            }
        }
        let g = self.grad_of(&[a, b]);
        self.push("add_row", value, Op::AddRow(a, b), g)
    }

    /// `x W + b`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_row(xw, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        check_same("mul", x, y)?;
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let value = Tensor::from_vec(x.rows(), x.cols(), data)?;
        let g = self.grad_of(&[a, b]);
        self.push("mul", value, Op::Mul(a, b), g)
    }

    /// Scales row `i` of `a` by `s[i]`, where `s` is an `n x 1` column.
    pub fn mul_col(&mut self, a: Var, s: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(s));
        if y.cols() != 1 || y.rows() != x.rows() {
            return Err(TensorError::ShapeMismatch {
                op: "mul_col",
                left: x.shape(),
                right: y.shape(),
            });
        }
        let mut value = x.clone();
        for r in 0..value.rows() {
            let k = y.get(r, 0);
            for v in value.row_mut(r) {
                *v *= k;
            }
        }
        let g = self.grad_of(&[a, s]);
        self.push("mul_col", value, Op::MulCol(a, s), g)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var> {
        let value = self.value(a).map(|v| v * k);
        let g = self.grad_of(&[a]);
        self.push("scale", value, Op::Scale(a, k), g)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(f64::tanh);
        let g = self.grad_of(&[a]);
        self.push("tanh", value, Op::Tanh(a), g)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(|v| 1.0 / (1.0 + (-v).exp()));
        let g = self.grad_of(&[a]);
        self.push("sigmoid", value, Op::Sigmoid(a), g)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var> {
        let value = self.value(a).map(|v| if v > 0.0 { v } else { slope * v });
        let g = self.grad_of(&[a]);
        self.push("leaky_relu", value, Op::LeakyRelu(a, slope), g)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(gelu);
        let g = self.grad_of(&[a]);
        self.push("gelu", value, Op::Gelu(a), g)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).transpose();
        let g = self.grad_of(&[a]);
        self.push("transpose", value, Op::Transpose(a), g)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = match parts.first() {
            Some(&p) => self.value(p).rows(),
            None => return Err(TensorError::Invalid("concat of nothing".into())),
        };
        let mut cols = 0;
        for &p in parts {
            let t = self.value(p);
            if t.rows() != rows {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_cols",
                    left: self.value(parts[0]).shape(),
                    right: t.shape(),
                });
            }
            cols += t.cols();
        }
        let mut value = Tensor::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let t = self.value(p);
            for r in 0..rows {
                value.row_mut(r)[offset..offset + t.cols()].copy_from_slice(t.row(r));
            }
            offset += t.cols();
        }
        let g = self.grad_of(parts);
        self.push("concat_cols", value, Op::ConcatCols(parts.to_vec()), g)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = match parts.first() {
            Some(&p) => self.value(p).cols(),
            None => return Err(TensorError::Invalid("concat of nothing".into())),
        };
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != cols {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_rows",
                    left: self.value(parts[0]).shape(),
                    right: t.shape(),
                });
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let value = Tensor::from_vec(rows, cols, data)?;
        let g = self.grad_of(parts);
        self.push("concat_rows", value, Op::ConcatRows(parts.to_vec()), g)
    }

    /// Columns `start..end` of `a`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let x = self.value(a);
        if start > end || end > x.cols() {
            return Err(TensorError::Invalid(format!(
                "column slice {start}..{end} out of range for {:?}",
                x.shape()
            )));
        }
        let mut value = Tensor::zeros(x.rows(), end - start);
        for r in 0..x.rows() {
            value.row_mut(r).copy_from_slice(&x.row(r)[start..end]);
        }
        let g = self.grad_of(&[a]);
        self.push("slice_cols", value, Op::SliceCols(a, start), g)
    }

    /// Rows of `a` selected by `indices` (repeats allowed); embedding lookup.
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let x = self.value(a);
        let mut value = Tensor::zeros(indices.len(), x.cols());
        for (r, &i) in indices.iter().enumerate() {
            if i >= x.rows() {
                return Err(TensorError::Invalid(format!(
                    "row index {i} out of range for {:?}",
                    x.shape()
                )));
            }
            value.row_mut(r).copy_from_slice(x.row(i));
        }
        let g = self.grad_of(&[a]);
        self.push("gather_rows", value, Op::GatherRows(a, indices.to_vec()), g)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        self.masked_softmax_rows(a, None)
    }

    /// Softmax over each row with disallowed entries treated as -inf.
    /// A row with nothing allowed yields zeros.
    pub fn masked_softmax_rows(&mut self, a: Var, mask: Option<&Mask>) -> Result<Var> {
        let x = self.value(a);
        if let Some(m) = mask {
            if m.shape() != x.shape() {
                return Err(TensorError::ShapeMismatch {
                    op: "masked_softmax",
                    left: x.shape(),
                    right: m.shape(),
                });
            }
        }
        let value = masked_softmax_rows(x, mask);
        let g = self.grad_of(&[a]);
        self.push("softmax", value, Op::Softmax(a), g)
    }

    /// Per-row layer normalization followed by the affine `gain`, `bias` rows.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        let (gv, bv) = (self.value(gain), self.value(bias));
        let width = xv.cols();
        if gv.shape() != [1, width] || bv.shape() != [1, width] {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                left: xv.shape(),
                right: gv.shape(),
            });
        }
        let mut xhat = Tensor::zeros(xv.rows(), width);
        let mut inv_std = Vec::with_capacity(xv.rows());
        let mut value = Tensor::zeros(xv.rows(), width);
        for r in 0..xv.rows() {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / width as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / width as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std.push(is);
            for (c, &x) in row.iter().enumerate() {
                let h = (x - mean) * is;
                xhat.set(r, c, h);
                value.set(r, c, h * gv.get(0, c) + bv.get(0, c));
            }
        }
        let g = self.grad_of(&[x, gain, bias]);
        self.push(
            "layer_norm",
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            g,
        )
    }

    /// Mean token cross-entropy. `targets[r] = None` skips row `r`; `allowed`
    /// restricts the vocabulary (disallowed logits act as -inf).
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>], allowed: Option<&[bool]>) -> Result<Var> {
        let x = self.value(logits);
        if targets.len() != x.rows() {
            return Err(TensorError::Invalid(format!(
                "{} targets for {} logit rows",
                targets.len(),
                x.rows()
            )));
        }
        if let Some(a) = allowed {
            if a.len() != x.cols() {
                return Err(TensorError::Invalid("vocabulary mask width mismatch".into()));
            }
        }
        let mask = allowed.map(|a| Mask::broadcast_row(x.rows(), a));
        let probs = masked_softmax_rows(x, mask.as_ref());
        let mut total = 0.0;
        let mut count = 0;
        for (r, t) in targets.iter().enumerate() {
            if let Some(t) = *t {
                if t >= x.cols() {
                    return Err(TensorError::Invalid(format!("target {t} outside vocabulary")));
                }
                total -= probs.get(r, t).ln();
                count += 1;
            }
        }
        let loss = if count == 0 { 0.0 } else { total / count as f64 };
        let g = self.grad_of(&[logits]);
        self.push(
            "cross_entropy",
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
                count,
            },
            g,
        )
    }

    /// Mean binary cross-entropy of an `n x 1` probability column against 0/1
    /// targets, with probabilities clamped to `[eps, 1 - eps]`.
    pub fn binary_cross_entropy(&mut self, probs: Var, targets: &[f64], eps: f64) -> Result<Var> {
        let p = self.value(probs);
        if p.cols() != 1 || p.rows() != targets.len() {
            return Err(TensorError::Invalid(format!(
                "{} targets for probabilities of shape {:?}",
                targets.len(),
                p.shape()
            )));
        }
        let n = targets.len().max(1) as f64;
        let mut total = 0.0;
        for (r, &y) in targets.iter().enumerate() {
            let pc = p.get(r, 0).clamp(eps, 1.0 - eps);
            total -= y * pc.ln() + (1.0 - y) * (1.0 - pc).ln();
        }
        let g = self.grad_of(&[probs]);
        self.push(
            "binary_cross_entropy",
            Tensor::scalar(total / n),
            Op::Bce {
                probs,
                targets: targets.to_vec(),
                eps,
            },
            g,
        )
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(a).sum());
        let g = self.grad_of(&[a]);
        self.push("sum", value, Op::Sum(a), g)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n)
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.shape() != [1, 1] {
            return Err(TensorError::NonScalar(lv.shape()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(dout) = grads[idx].take() else {
                continue;
            };
            self.propagate(&node.op, &node.value, &dout, &mut grads);
            grads[idx] = Some(dout);
        }

        let mut by_param = BTreeMap::new();
        for (&id, &v) in &self.param_leaves {
            if let Some(g) = &grads[v.0] {
                by_param.insert(id, g.clone());
            }
        }
        Ok(Gradients {
            by_var: grads,
            by_param,
        })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, op: &Op, out: &Tensor, dout: &Tensor, grads: &mut [Option<Tensor>]) {
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.nodes[a.0].requires_grad {
                    let g = dout.matmul(&bv.transpose()).expect("shapes checked in forward");
                    self.accumulate(grads, *a, g);
                }
                if self.nodes[b.0].requires_grad {
                    let g = av.transpose().matmul(dout).expect("shapes checked in forward");
                    self.accumulate(grads, *b, g);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, dout.clone());
                self.accumulate(grads, *b, dout.clone());
            }
            Op::AddRow(a, b) => {
                self.accumulate(grads, *a, dout.clone());
                let mut gb = Tensor::zeros(1, dout.cols());
                for r in 0..dout.rows() {
                    for (g, d) in gb.data_mut().iter_mut().zip(dout.row(r)) {
                        *g += d;
                    }
                }
                self.accumulate(grads, *b, gb);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let ga = zip_map(dout, bv, |d, y| d * y);
                let gb = zip_map(dout, av, |d, x| d * x);
                self.accumulate(grads, *a, ga);
                self.accumulate(grads, *b, gb);
            }
            Op::MulCol(a, s) => {
                let (av, sv) = (self.value(*a), self.value(*s));
                let mut ga = dout.clone();
                let mut gs = Tensor::zeros(sv.rows(), 1);
                for r in 0..dout.rows() {
                    let k = sv.get(r, 0);
                    let mut acc = 0.0;
                    for (c, g) in ga.row_mut(r).iter_mut().enumerate() {
                        acc += *g * av.get(r, c);
                        *g *= k;
                    }
                    gs.set(r, 0, acc);
                }
                self.accumulate(grads, *a, ga);
                self.accumulate(grads, *s, gs);
            }
            Op::Scale(a, k) => self.accumulate(grads, *a, dout.map(|d| d * k)),
            Op::Tanh(a) => self.accumulate(grads, *a, zip_map(dout, out, |d, y| d * (1.0 - y * y))),
            Op::Sigmoid(a) => self.accumulate(grads, *a, zip_map(dout, out, |d, y| d * y * (1.0 - y))),
            Op::LeakyRelu(a, slope) => {
                let g = zip_map(dout, self.value(*a), |d, x| if x > 0.0 { d } else { d * slope });
                self.accumulate(grads, *a, g);
            }
            Op::Gelu(a) => {
                let g = zip_map(dout, self.value(*a), |d, x| d * gelu_grad(x));
                self.accumulate(grads, *a, g);
            }
            Op::Transpose(a) => self.accumulate(grads, *a, dout.transpose()),
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    let mut g = Tensor::zeros(dout.rows(), w);
                    for r in 0..dout.rows() {
                        g.row_mut(r).copy_from_slice(&dout.row(r)[offset..offset + w]);
                    }
                    offset += w;
                    self.accumulate(grads, p, g);
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let rows = self.value(p).rows();
                    let cols = dout.cols();
                    let data = dout.data()[offset * cols..(offset + rows) * cols].to_vec();
                    offset += rows;
                    self.accumulate(grads, p, Tensor::from_vec(rows, cols, data).expect("sized"));
                }
            }
            Op::SliceCols(a, start) => {
                let x = self.value(*a);
                let mut g = Tensor::zeros(x.rows(), x.cols());
                for r in 0..dout.rows() {
                    g.row_mut(r)[*start..*start + dout.cols()].copy_from_slice(dout.row(r));
                }
                self.accumulate(grads, *a, g);
            }
            Op::GatherRows(a, indices) => {
                let x = self.value(*a);
                let mut g = Tensor::zeros(x.rows(), x.cols());
                for (r, &i) in indices.iter().enumerate() {
                    for (gv, d) in g.row_mut(i).iter_mut().zip(dout.row(r)) {
                        *gv += d;
                    }
                }
                self.accumulate(grads, *a, g);
            }
            Op::Softmax(a) => {
                let mut g = Tensor::zeros(out.rows(), out.cols());
                for r in 0..out.rows() {
                    let y = out.row(r);
                    let dy = dout.row(r);
                    let dot: f64 = y.iter().zip(dy).map(|(a, b)| a * b).sum();
                    for (c, gv) in g.row_mut(r).iter_mut().enumerate() {
                        *gv = y[c] * (dy[c] - dot);
                    }
                }
                self.accumulate(grads, *a, g);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let gv = self.value(*gain);
                let width = xhat.cols();
                let n = width as f64;
                let mut dgain = Tensor::zeros(1, width);
                let mut dbias = Tensor::zeros(1, width);
                let mut dx = Tensor::zeros(xhat.rows(), width);
                for (r, &is) in inv_std.iter().enumerate() {
                    let dy = dout.row(r);
                    let xh = xhat.row(r);
                    let mut sum_dxhat = 0.0;
                    let mut sum_dxhat_xhat = 0.0;
                    for c in 0..width {
                        dgain.data_mut()[c] += dy[c] * xh[c];
                        dbias.data_mut()[c] += dy[c];
                        let dxh = dy[c] * gv.get(0, c);
                        sum_dxhat += dxh;
                        sum_dxhat_xhat += dxh * xh[c];
                    }
                    for c in 0..width {
                        let dxh = dy[c] * gv.get(0, c);
                        dx.set(r, c, is / n * (n * dxh - sum_dxhat - xh[c] * sum_dxhat_xhat));
                    }
                }
                self.accumulate(grads, *x, dx);
                self.accumulate(grads, *gain, dgain);
                self.accumulate(grads, *bias, dbias);
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
                count,
            } => {
                let d = dout.get(0, 0);
                let mut g = Tensor::zeros(probs.rows(), probs.cols());
                if *count > 0 {
                    let k = d / *count as f64;
                    for (r, t) in targets.iter().enumerate() {
                        if let Some(t) = *t {
                            for (c, gv) in g.row_mut(r).iter_mut().enumerate() {
                                let onehot = if c == t { 1.0 } else { 0.0 };
                                *gv = k * (probs.get(r, c) - onehot);
                            }
                        }
                    }
                }
                self.accumulate(grads, *logits, g);
            }
            Op::Bce { probs, targets, eps } => {
                let p = self.value(*probs);
                let d = dout.get(0, 0) / targets.len().max(1) as f64;
                let mut g = Tensor::zeros(p.rows(), 1);
                for (r, &y) in targets.iter().enumerate() {
                    let pv = p.get(r, 0);
                    if pv > *eps && pv < 1.0 - eps {
                        g.set(r, 0, d * (-y / pv + (1.0 - y) / (1.0 - pv)));
                    }
                }
                self.accumulate(grads, *probs, g);
            }
            Op::Sum(a) => {
                let x = self.value(*a);
                self.accumulate(grads, *a, Tensor::filled(x.rows(), x.cols(), dout.get(0, 0)));
            }
        }
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.rows(), a.cols(), data).expect("same shape")
}
