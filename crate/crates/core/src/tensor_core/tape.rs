//! Reverse-mode differentiation over a linear tape.
//!
//! Every op appends a node holding its forward value and whatever it needs
//! for the backward pass. Parameter nodes borrow their values from the
//! [`ParamStore`] instead of copying them.

use std::collections::HashMap;

use super::gemm::gemm;
use super::tensor::{Gradients, ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Value {
    Owned(Vec<f64>),
    Param(ParamId),
}

enum Op {
    Leaf,
    Param(ParamId),
    MatMul { a: usize, b: usize },
    Add { a: usize, b: usize },
    AddRow { a: usize, bias: usize },
    Scale { a: usize, factor: f64 },
    MulConst { a: usize, factors: Vec<f64> },
    ScaleRows { a: usize, factors: Vec<f64> },
    Gelu { a: usize },
    Tanh { a: usize },
    LayerNorm { x: usize, gamma: usize, beta: usize, xhat: Vec<f64>, inv_std: Vec<f64> },
    Gather { table: usize, ids: Vec<usize> },
    SplitHeads { a: usize, heads: usize },
    MergeHeads { a: usize },
    Attention { q: usize, k: usize, v: usize, probs: Vec<f64>, scale: f64 },
    SelectRow { a: usize, row: usize },
    SelectCol { a: usize, col: usize },
    MaskFill { a: usize, keep: Vec<bool> },
    SoftmaxCe { logits: usize, probs: Vec<f64>, targets: Vec<usize> },
    BceLogits { logits: usize, targets: Vec<f64> },
    Sum { a: usize },
    WeightedSum { terms: Vec<(usize, f64)> },
}

struct Node {
    shape: Vec<usize>,
    value: Value,
    op: Op,
    needs_grad: bool,
}

pub struct Tape<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node>,
    params: HashMap<ParamId, usize>,
}

impl<'p> Tape<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Tape {
            store,
            nodes: Vec::with_capacity(256),
            params: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[f64] {
        self.data(v.0)
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.data(v.0)[0]
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        Tensor::new(self.nodes[v.0].shape.clone(), self.data(v.0).to_vec())
            .expect("tape nodes always hold consistent shapes")
    }

    fn data(&self, i: usize) -> &[f64] {
        match &self.nodes[i].value {
            Value::Owned(v) => v,
            Value::Param(id) => self.store.get(*id).data(),
        }
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, needs_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.nodes.push(Node {
            shape,
            value: Value::Owned(data),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, i: usize) -> bool {
        self.nodes[i].needs_grad
    }

    /// Records a constant input; it receives no gradient.
    pub fn constant(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, false)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&i) = self.params.get(&id) {
            return Var(i);
        }
        let shape = self.store.get(id).shape().to_vec();
        self.nodes.push(Node {
            shape,
            value: Value::Param(id),
            op: Op::Param(id),
            needs_grad: true,
        });
        let i = self.nodes.len() - 1;
        self.params.insert(id, i);
        Var(i)
    }

    fn dims2(&self, v: Var, what: &str) -> Result<(usize, usize)> {
        match self.nodes[v.0].shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            other => Err(Error::Dimension(format!("{what}: expected a matrix, got shape {other:?}"))),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul lhs")?;
        let (k2, n) = self.dims2(b, "matmul rhs")?;
        if k != k2 {
            return Err(Error::Dimension(format!(
                "matmul: inner dimensions differ for shapes {:?} and {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, 1.0, self.data(a.0), false, self.data(b.0), false, 0.0, &mut out);
        let ng = self.needs(a.0) || self.needs(b.0);
        Ok(self.push(vec![m, n], out, Op::MatMul { a: a.0, b: b.0 }, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension(format!(
                "add: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            )));
        }
        let out: Vec<f64> = self.data(a.0).iter().zip(self.data(b.0)).map(|(x, y)| x + y).collect();
        let ng = self.needs(a.0) || self.needs(b.0);
        Ok(self.push(self.shape(a).to_vec(), out, Op::Add { a: a.0, b: b.0 }, ng))
    }

    /// `a[m×n] + bias[n]`, broadcasting the bias over rows.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.dims2(a, "add_row")?;
        if self.nodes[bias.0].shape.iter().product::<usize>() != n {
            return Err(Error::Dimension(format!(
                "add_row: bias of shape {:?} for rows of width {n}",
                self.shape(bias)
            )));
        }
        let b = self.data(bias.0);
        let mut out = self.data(a.0).to_vec();
        for row in out.chunks_mut(n) {
            row.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        let ng = self.needs(a.0) || self.needs(bias.0);
        Ok(self.push(vec![m, n], out, Op::AddRow { a: a.0, bias: bias.0 }, ng))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.data(a.0).iter().map(|x| x * factor).collect();
        let ng = self.needs(a.0);
        self.push(self.shape(a).to_vec(), out, Op::Scale { a: a.0, factor }, ng)
    }

    /// Elementwise product with a constant buffer (dropout masks).
    pub fn mul_const(&mut self, a: Var, factors: Vec<f64>) -> Result<Var> {
        if factors.len() != self.data(a.0).len() {
            return Err(Error::Dimension("mul_const: factor length mismatch".into()));
        }
        let out = self.data(a.0).iter().zip(&factors).map(|(x, f)| x * f).collect();
        let ng = self.needs(a.0);
        Ok(self.push(self.shape(a).to_vec(), out, Op::MulConst { a: a.0, factors }, ng))
    }

    /// Multiplies row `i` of a matrix by the constant `factors[i]`.
    pub fn scale_rows(&mut self, a: Var, factors: Vec<f64>) -> Result<Var> {
        let (m, n) = self.dims2(a, "scale_rows")?;
        if factors.len() != m {
            return Err(Error::Dimension(format!(
                "scale_rows: {} factors for {m} rows",
                factors.len()
            )));
        }
        let mut out = self.data(a.0).to_vec();
        for (row, f) in out.chunks_mut(n).zip(&factors) {
            row.iter_mut().for_each(|x| *x *= f);
        }
        let ng = self.needs(a.0);
        Ok(self.push(vec![m, n], out, Op::ScaleRows { a: a.0, factors }, ng))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.data(a.0).iter().map(|&x| gelu(x)).collect();
        let ng = self.needs(a.0);
        self.push(self.shape(a).to_vec(), out, Op::Gelu { a: a.0 }, ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.data(a.0).iter().map(|x| x.tanh()).collect();
        let ng = self.needs(a.0);
        self.push(self.shape(a).to_vec(), out, Op::Tanh { a: a.0 }, ng)
    }

    /// Row-wise layer normalization with affine `gamma`, `beta` of width `n`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (m, n) = self.dims2(x, "layer_norm")?;
        for p in [gamma, beta] {
            if self.nodes[p.0].shape.iter().product::<usize>() != n {
                return Err(Error::Dimension(format!(
                    "layer_norm: affine shape {:?} for width {n}",
                    self.shape(p)
                )));
            }
        }
        let (g, b) = (self.data(gamma.0), self.data(beta.0));
        let mut xhat = vec![0.0; m * n];
        let mut inv_std = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for (r, row) in self.data(x.0).chunks(n).enumerate() {
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..n {
                let h = (row[j] - mean) * is;
                xhat[r * n + j] = h;
                out[r * n + j] = h * g[j] + b[j];
            }
        }
        let ng = self.needs(x.0) || self.needs(gamma.0) || self.needs(beta.0);
        let op = Op::LayerNorm { x: x.0, gamma: gamma.0, beta: beta.0, xhat, inv_std };
        Ok(self.push(vec![m, n], out, op, ng))
    }

    /// Embedding lookup: rows `ids` of a `[V×d]` table.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (rows, d) = self.dims2(table, "gather")?;
        if let Some(bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(Error::Index(format!("gather: id {bad} out of range for {rows} rows")));
        }
        let src = self.data(table.0);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        let ng = self.needs(table.0);
        Ok(self.push(vec![ids.len(), d], out, Op::Gather { table: table.0, ids: ids.to_vec() }, ng))
    }

    /// `[L × h·d] -> [h × L × d]`.
    pub fn split_heads(&mut self, a: Var, heads: usize) -> Result<Var> {
        let (l, width) = self.dims2(a, "split_heads")?;
        if heads == 0 || width % heads != 0 {
            return Err(Error::Dimension(format!("split_heads: width {width} not divisible by {heads} heads")));
        }
        let d = width / heads;
        let src = self.data(a.0);
        let mut out = vec![0.0; l * width];
        for i in 0..l {
            for h in 0..heads {
                out[(h * l + i) * d..(h * l + i + 1) * d]
                    .copy_from_slice(&src[i * width + h * d..i * width + (h + 1) * d]);
            }
        }
        let ng = self.needs(a.0);
        Ok(self.push(vec![heads, l, d], out, Op::SplitHeads { a: a.0, heads }, ng))
    }

    /// `[h × L × d] -> [L × h·d]`.
    pub fn merge_heads(&mut self, a: Var) -> Result<Var> {
        let (heads, l, d) = match self.shape(a) {
            [h, l, d] => (*h, *l, *d),
            other => return Err(Error::Dimension(format!("merge_heads: shape {other:?}"))),
        };
        let width = heads * d;
        let src = self.data(a.0);
        let mut out = vec![0.0; l * width];
        for h in 0..heads {
            for i in 0..l {
                out[i * width + h * d..i * width + (h + 1) * d]
                    .copy_from_slice(&src[(h * l + i) * d..(h * l + i + 1) * d]);
            }
        }
        let ng = self.needs(a.0);
        Ok(self.push(vec![l, width], out, Op::MergeHeads { a: a.0 }, ng))
    }

    /// Scaled dot-product attention per head over `[h × L × d]` inputs.
    /// Keys where `mask` is false are excluded from the softmax.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, mask: &[bool]) -> Result<Var> {
        let shape = self.shape(q).to_vec();
        if self.shape(k) != shape.as_slice() || self.shape(v) != shape.as_slice() {
            return Err(Error::Dimension(format!(
                "attention: q {:?}, k {:?}, v {:?} must match",
                shape,
                self.shape(k),
                self.shape(v)
            )));
        }
        let (heads, l, d) = match shape.as_slice() {
            [h, l, d] => (*h, *l, *d),
            other => return Err(Error::Dimension(format!("attention: expected [h×L×d], got {other:?}"))),
        };
        if l == 0 || d == 0 {
            return Err(Error::Dimension("attention: empty sequence or head dimension".into()));
        }
        if mask.len() != l {
            return Err(Error::Dimension(format!("attention: mask of length {} for L={l}", mask.len())));
        }
        if !mask.iter().any(|&m| m) {
            return Err(Error::Dimension("attention: every key is masked".into()));
        }
        let scale = 1.0 / (d as f64).sqrt();
        let (qd, kd, vd) = (self.data(q.0), self.data(k.0), self.data(v.0));
        let mut probs = vec![0.0; heads * l * l];
        let mut out = vec![0.0; heads * l * d];
        for h in 0..heads {
            let hs = h * l * d..(h + 1) * l * d;
            let ps = &mut probs[h * l * l..(h + 1) * l * l];
            gemm(l, d, l, scale, &qd[hs.clone()], false, &kd[hs.clone()], true, 0.0, ps);
            for row in ps.chunks_mut(l) {
                masked_softmax_in_place(row, mask);
            }
            gemm(l, l, d, 1.0, ps, false, &vd[hs.clone()], false, 0.0, &mut out[hs]);
        }
        let ng = self.needs(q.0) || self.needs(k.0) || self.needs(v.0);
        let op = Op::Attention { q: q.0, k: k.0, v: v.0, probs, scale };
        Ok(self.push(shape, out, op, ng))
    }

    pub fn select_row(&mut self, a: Var, row: usize) -> Result<Var> {
        let (m, n) = self.dims2(a, "select_row")?;
        if row >= m {
            return Err(Error::Index(format!("select_row: row {row} of {m}")));
        }
        let out = self.data(a.0)[row * n..(row + 1) * n].to_vec();
        let ng = self.needs(a.0);
        Ok(self.push(vec![1, n], out, Op::SelectRow { a: a.0, row }, ng))
    }

    /// Column `col` of an `[m×n]` matrix as a `[1×m]` row.
    pub fn select_col(&mut self, a: Var, col: usize) -> Result<Var> {
        let (m, n) = self.dims2(a, "select_col")?;
        if col >= n {
            return Err(Error::Index(format!("select_col: column {col} of {n}")));
        }
        let src = self.data(a.0);
        let out = (0..m).map(|i| src[i * n + col]).collect();
        let ng = self.needs(a.0);
        Ok(self.push(vec![1, m], out, Op::SelectCol { a: a.0, col }, ng))
    }

    /// Replaces entries where `keep` is false with negative infinity.
    pub fn mask_fill(&mut self, a: Var, keep: &[bool]) -> Result<Var> {
        if keep.len() != self.data(a.0).len() {
            return Err(Error::Dimension("mask_fill: mask length mismatch".into()));
        }
        let out = self
            .data(a.0)
            .iter()
            .zip(keep)
            .map(|(&x, &k)| if k { x } else { f64::NEG_INFINITY })
            .collect();
        let ng = self.needs(a.0);
        let op = Op::MaskFill { a: a.0, keep: keep.to_vec() };
        Ok(self.push(self.shape(a).to_vec(), out, op, ng))
    }

    /// Mean over rows of `-log softmax(logits)[target]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (b, c) = self.dims2(logits, "softmax_cross_entropy")?;
        if targets.len() != b {
            return Err(Error::Dimension(format!(
                "softmax_cross_entropy: {} targets for batch of {b}",
                targets.len()
            )));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= c) {
            return Err(Error::Index(format!("softmax_cross_entropy: target {t} not in [0, {c})")));
        }
        let src = self.data(logits.0);
        let mut probs = vec![0.0; b * c];
        let mut loss = 0.0;
        for (r, (&t, row)) in targets.iter().zip(src.chunks(c)).enumerate() {
            if row[t] == f64::NEG_INFINITY {
                return Err(Error::Index(format!("softmax_cross_entropy: target {t} is masked")));
            }
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|x| (x - max).exp()).sum();
            let log_z = max + sum.ln();
            loss += log_z - row[t];
            for (p, x) in probs[r * c..(r + 1) * c].iter_mut().zip(row) {
                *p = (x - log_z).exp();
            }
        }
        let ng = self.needs(logits.0);
        let op = Op::SoftmaxCe { logits: logits.0, probs, targets: targets.to_vec() };
        Ok(self.push(vec![1], vec![loss / b as f64], op, ng))
    }

    /// Mean binary cross-entropy on raw logits against targets in `[0, 1]`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64]) -> Result<Var> {
        let z = self.data(logits.0);
        if z.len() != targets.len() {
            return Err(Error::Dimension(format!(
                "bce_with_logits: {} targets for {} logits",
                targets.len(),
                z.len()
            )));
        }
        if targets.iter().any(|y| !(0.0..=1.0).contains(y)) {
            return Err(Error::Index("bce_with_logits: targets must lie in [0, 1]".into()));
        }
        let loss: f64 = z
            .iter()
            .zip(targets)
            .map(|(&z, &y)| z.max(0.0) - z * y + (-z.abs()).exp().ln_1p())
            .sum::<f64>()
            / z.len() as f64;
        let ng = self.needs(logits.0);
        let op = Op::BceLogits { logits: logits.0, targets: targets.to_vec() };
        Ok(self.push(vec![1], vec![loss], op, ng))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.data(a.0).iter().sum();
        let ng = self.needs(a.0);
        self.push(vec![1], vec![s], Op::Sum { a: a.0 }, ng)
    }

    /// `Σ wᵢ·xᵢ` over scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let mut total = 0.0;
        for (v, w) in terms {
            if self.data(v.0).len() != 1 {
                return Err(Error::Dimension("weighted_sum: terms must be scalars".into()));
            }
            total += w * self.data(v.0)[0];
        }
        let ng = terms.iter().any(|(v, _)| self.needs(v.0));
        let terms = terms.iter().map(|(v, w)| (v.0, *w)).collect();
        Ok(self.push(vec![1], vec![total], Op::WeightedSum { terms }, ng))
    }

    /// Gradients of the scalar `loss` with respect to every parameter on the tape.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.data(loss.0).len() != 1 {
            return Err(Error::Dimension(format!(
                "backward: loss must be a scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        let mut out = Gradients::default();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            self.propagate(i, &g, &mut grads, &mut out);
        }
        Ok(out)
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>], out: &mut Gradients) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Param(id) => out.push(*id, g.to_vec()),
            Op::MatMul { a, b } => {
                let (m, k) = (self.nodes[*a].shape[0], self.nodes[*a].shape[1]);
                let n = self.nodes[*b].shape[1];
                if self.needs(*a) {
                    let bd = self.data(*b);
                    let ga = slot(grads, *a, m * k);
                    gemm(m, n, k, 1.0, g, false, bd, true, 1.0, ga);
                }
                if self.needs(*b) {
                    let ad = self.data(*a);
                    let gb = slot(grads, *b, k * n);
                    gemm(k, m, n, 1.0, ad, true, g, false, 1.0, gb);
                }
            }
            Op::Add { a, b } => {
                for p in [*a, *b] {
                    if self.needs(p) {
                        axpy(slot(grads, p, g.len()), g, 1.0);
                    }
                }
            }
            Op::AddRow { a, bias } => {
                if self.needs(*a) {
                    axpy(slot(grads, *a, g.len()), g, 1.0);
                }
                if self.needs(*bias) {
                    let n = node.shape[1];
                    let gb = slot(grads, *bias, n);
                    for row in g.chunks(n) {
                        axpy(gb, row, 1.0);
                    }
                }
            }
            Op::Scale { a, factor } => {
                if self.needs(*a) {
                    axpy(slot(grads, *a, g.len()), g, *factor);
                }
            }
            Op::MulConst { a, factors } => {
                if self.needs(*a) {
                    let ga = slot(grads, *a, g.len());
                    for ((x, gi), f) in ga.iter_mut().zip(g).zip(factors) {
                        *x += gi * f;
                    }
                }
            }
            Op::ScaleRows { a, factors } => {
                if self.needs(*a) {
                    let n = node.shape[1];
                    let ga = slot(grads, *a, g.len());
                    for ((grow, row), f) in ga.chunks_mut(n).zip(g.chunks(n)).zip(factors) {
                        axpy(grow, row, *f);
                    }
                }
            }
            Op::Gelu { a } => {
                if self.needs(*a) {
                    let x = self.data(*a);
                    let ga = slot(grads, *a, g.len());
                    for ((o, gi), &xi) in ga.iter_mut().zip(g).zip(x) {
                        *o += gi * gelu_grad(xi);
                    }
                }
            }
            Op::Tanh { a } => {
                if self.needs(*a) {
                    let y = self.data(i);
                    let ga = slot(grads, *a, g.len());
                    for ((o, gi), yi) in ga.iter_mut().zip(g).zip(y) {
                        *o += gi * (1.0 - yi * yi);
                    }
                }
            }
            Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                let n = node.shape[1];
                if self.needs(*gamma) {
                    let gg = slot(grads, *gamma, n);
                    for (grow, hrow) in g.chunks(n).zip(xhat.chunks(n)) {
                        for j in 0..n {
                            gg[j] += grow[j] * hrow[j];
                        }
                    }
                }
                if self.needs(*beta) {
                    let gb = slot(grads, *beta, n);
                    for grow in g.chunks(n) {
                        axpy(gb, grow, 1.0);
                    }
                }
                if self.needs(*x) {
                    let gamma_v = self.data(*gamma).to_vec();
                    let gx = slot(grads, *x, g.len());
                    let nf = n as f64;
                    for (r, (grow, hrow)) in g.chunks(n).zip(xhat.chunks(n)).enumerate() {
                        let mut sum_d = 0.0;
                        let mut sum_dh = 0.0;
                        for j in 0..n {
                            let d = grow[j] * gamma_v[j];
                            sum_d += d;
                            sum_dh += d * hrow[j];
                        }
                        let is = inv_std[r];
                        for j in 0..n {
                            let d = grow[j] * gamma_v[j];
                            gx[r * n + j] += is / nf * (nf * d - sum_d - hrow[j] * sum_dh);
                        }
                    }
                }
            }
            Op::Gather { table, ids } => {
                if self.needs(*table) {
                    let d = node.shape[1];
                    let len = self.data(*table).len();
                    let gt = slot(grads, *table, len);
                    for (row, &id) in g.chunks(d).zip(ids) {
                        axpy(&mut gt[id * d..(id + 1) * d], row, 1.0);
                    }
                }
            }
            Op::SplitHeads { a, heads } => {
                if self.needs(*a) {
                    let (l, d) = (node.shape[1], node.shape[2]);
                    let width = heads * d;
                    let ga = slot(grads, *a, g.len());
                    for h in 0..*heads {
                        for r in 0..l {
                            axpy(
                                &mut ga[r * width + h * d..r * width + (h + 1) * d],
                                &g[(h * l + r) * d..(h * l + r + 1) * d],
                                1.0,
                            );
                        }
                    }
                }
            }
            Op::MergeHeads { a } => {
                if self.needs(*a) {
                    let src = &self.nodes[*a].shape;
                    let (heads, l, d) = (src[0], src[1], src[2]);
                    let width = heads * d;
                    let ga = slot(grads, *a, g.len());
                    for h in 0..heads {
                        for r in 0..l {
                            axpy(
                                &mut ga[(h * l + r) * d..(h * l + r + 1) * d],
                                &g[r * width + h * d..r * width + (h + 1) * d],
                                1.0,
                            );
                        }
                    }
                }
            }
            Op::Attention { q, k, v, probs, scale } => {
                let (heads, l, d) = (node.shape[0], node.shape[1], node.shape[2]);
                let (qd, kd, vd) = (self.data(*q), self.data(*k), self.data(*v));
                let mut gq = vec![0.0; qd.len()];
                let mut gk = vec![0.0; kd.len()];
                let mut gv = vec![0.0; vd.len()];
                let mut dp = vec![0.0; l * l];
                for h in 0..heads {
                    let hs = h * l * d..(h + 1) * l * d;
                    let p = &probs[h * l * l..(h + 1) * l * l];
                    let go = &g[hs.clone()];
                    gemm(l, l, d, 1.0, p, true, go, false, 1.0, &mut gv[hs.clone()]);
                    gemm(l, d, l, 1.0, go, false, &vd[hs.clone()], true, 0.0, &mut dp);
                    for (drow, prow) in dp.chunks_mut(l).zip(p.chunks(l)) {
                        let dot: f64 = drow.iter().zip(prow).map(|(a, b)| a * b).sum();
                        for (x, pj) in drow.iter_mut().zip(prow) {
                            *x = pj * (*x - dot);
                        }
                    }
                    gemm(l, l, d, *scale, &dp, false, &kd[hs.clone()], false, 1.0, &mut gq[hs.clone()]);
                    gemm(l, l, d, *scale, &dp, true, &qd[hs.clone()], false, 1.0, &mut gk[hs]);
                }
                for (p, gp) in [(*q, gq), (*k, gk), (*v, gv)] {
                    if self.needs(p) {
                        axpy(slot(grads, p, gp.len()), &gp, 1.0);
                    }
                }
            }
            Op::SelectRow { a, row } => {
                if self.needs(*a) {
                    let n = node.shape[1];
                    let len = self.data(*a).len();
                    let ga = slot(grads, *a, len);
                    axpy(&mut ga[row * n..(row + 1) * n], g, 1.0);
                }
            }
            Op::SelectCol { a, col } => {
                if self.needs(*a) {
                    let n = self.nodes[*a].shape[1];
                    let len = self.data(*a).len();
                    let ga = slot(grads, *a, len);
                    for (r, gi) in g.iter().enumerate() {
                        ga[r * n + col] += gi;
                    }
                }
            }
            Op::MaskFill { a, keep } => {
                if self.needs(*a) {
                    let ga = slot(grads, *a, g.len());
                    for ((o, gi), &k) in ga.iter_mut().zip(g).zip(keep) {
                        if k {
                            *o += gi;
                        }
                    }
                }
            }
            Op::SoftmaxCe { logits, probs, targets } => {
                if self.needs(*logits) {
                    let b = targets.len();
                    let c = probs.len() / b;
                    let scale = g[0] / b as f64;
                    let gl = slot(grads, *logits, probs.len());
                    for (r, &t) in targets.iter().enumerate() {
                        for j in 0..c {
                            let onehot = if j == t { 1.0 } else { 0.0 };
                            gl[r * c + j] += scale * (probs[r * c + j] - onehot);
                        }
                    }
                }
            }
            Op::BceLogits { logits, targets } => {
                if self.needs(*logits) {
                    let z = self.data(*logits);
                    let scale = g[0] / z.len() as f64;
                    let gl = slot(grads, *logits, z.len());
                    for ((o, &zi), &y) in gl.iter_mut().zip(z).zip(targets) {
                        *o += scale * (sigmoid(zi) - y);
                    }
                }
            }
            Op::Sum { a } => {
                if self.needs(*a) {
                    let len = self.data(*a).len();
                    slot(grads, *a, len).iter_mut().for_each(|x| *x += g[0]);
                }
            }
            Op::WeightedSum { terms } => {
                for &(p, w) in terms {
                    if self.needs(p) {
                        slot(grads, p, 1)[0] += w * g[0];
                    }
                }
            }
        }
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], i: usize, len: usize) -> &mut [f64] {
    grads[i].get_or_insert_with(|| vec![0.0; len])
}

fn axpy(y: &mut [f64], x: &[f64], a: f64) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn masked_softmax_in_place(row: &mut [f64], mask: &[bool]) {
    let max = row
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(x, _)| *x)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (x, &m) in row.iter_mut().zip(mask) {
        *x = if m { (*x - max).exp() } else { 0.0 };
        sum += *x;
    }
    row.iter_mut().for_each(|x| *x /= sum);
}

/// Tanh approximation of GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_K * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(tensors: &[(&str, Tensor)]) -> (ParamStore, Vec<ParamId>) {
        let mut store = ParamStore::new();
        let ids = tensors
            .iter()
            .map(|(n, t)| store.insert(*n, t.clone()).unwrap())
            .collect();
        (store, ids)
    }

    #[test]
    fn matmul_identity_and_small_case() {
        let eye = Tensor::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
        let b = Tensor::from_rows(&[vec![1.0, -2.0], vec![0.5, 3.0], vec![7.0, 0.25]]).unwrap();
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let (e, bv) = (tape.constant(&eye), tape.constant(&b));
        let out = tape.matmul(e, bv).unwrap();
        assert_eq!(tape.value(out), b.data());

        let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let ones = Tensor::from_rows(&[vec![1.0], vec![1.0]]).unwrap();
        let (av, ov) = (tape.constant(&a), tape.constant(&ones));
        let out = tape.matmul(av, ov).unwrap();
        assert_eq!(tape.shape(out), &[2, 1]);
        assert_eq!(tape.value(out), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let a = tape.constant(&Tensor::zeros(vec![2, 3]).unwrap());
        let b = tape.constant(&Tensor::zeros(vec![2, 3]).unwrap());
        let err = tape.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]"), "{err}");
    }

    #[test]
    fn cross_entropy_reference_values() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let z = tape.constant(&Tensor::from_rows(&[vec![0.0, 0.0]]).unwrap());
        let l = tape.softmax_cross_entropy(z, &[0]).unwrap();
        assert!((tape.scalar(l) - std::f64::consts::LN_2).abs() < 1e-12);

        let z = tape.constant(&Tensor::from_rows(&[vec![1000.0, 0.0]]).unwrap());
        let l = tape.softmax_cross_entropy(z, &[0]).unwrap();
        assert!(tape.scalar(l).is_finite() && tape.scalar(l).abs() < 1e-12);

        let l = tape.softmax_cross_entropy(z, &[2]);
        assert!(matches!(l, Err(Error::Index(_))));
    }

    #[test]
    fn masked_logits_take_no_gradient() {
        let (store, ids) = store_with(&[("z", Tensor::from_rows(&[vec![0.3, -1.0, 2.0]]).unwrap())]);
        let mut tape = Tape::new(&store);
        let z = tape.param(ids[0]);
        let masked = tape.mask_fill(z, &[true, false, true]).unwrap();
        let loss = tape.softmax_cross_entropy(masked, &[0]).unwrap();
        let g = tape.backward(loss).unwrap();
        let gz = g.get(ids[0]).unwrap();
        assert_eq!(gz[1], 0.0);
        assert!((gz[0] + gz[2]).abs() < 1e-12);
    }

    #[test]
    fn attention_uniform_and_degenerate_mask() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        // identical keys: uniform weights over unmasked rows
        let q = tape.constant(&Tensor::new(vec![1, 3, 2], vec![0.1, 0.2, -0.3, 0.4, 0.5, 0.6]).unwrap());
        let k = tape.constant(&Tensor::new(vec![1, 3, 2], vec![1.0, 1.0, 1.0, 1.0, 1.0, 1.0]).unwrap());
        let v = tape.constant(&Tensor::new(vec![1, 3, 2], vec![1.0, 2.0, 3.0, 4.0, 50.0, 60.0]).unwrap());
        let o = tape.attention(q, k, v, &[true, true, false]).unwrap();
        for row in tape.value(o).chunks(2) {
            assert!((row[0] - 2.0).abs() < 1e-12 && (row[1] - 3.0).abs() < 1e-12);
        }
        let o = tape.attention(q, k, v, &[true, false, false]).unwrap();
        for row in tape.value(o).chunks(2) {
            assert_eq!(row, &[1.0, 2.0]);
        }
        assert!(tape.attention(q, k, v, &[false, false, false]).is_err());
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut row: Vec<f64> = (0..7).map(|i| (i as f64 * 1.7).sin() * 30.0).collect();
        masked_softmax_in_place(&mut row, &[true; 7]);
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn layer_norm_normalizes_rows() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let x = tape.constant(&Tensor::from_rows(&[vec![0.01, 0.02, -0.03, 0.005], vec![10.0, -4.0, 3.0, 8.0]]).unwrap());
        let g = tape.constant(&Tensor::new(vec![4], vec![1.0; 4]).unwrap());
        let b = tape.constant(&Tensor::zeros(vec![4]).unwrap());
        let y = tape.layer_norm(x, g, b, 1e-12).unwrap();
        for row in tape.value(y).chunks(4) {
            let mean = row.iter().sum::<f64>() / 4.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
            assert!(mean.abs() <= 1e-7);
            assert!((var - 1.0).abs() <= 1e-5);
        }
    }

    #[test]
    fn gelu_reference_points() {
        assert_eq!(gelu(0.0), 0.0);
        assert!((gelu(5.0) - 4.99999).abs() < 1e-5);
        assert!(gelu(-10.0).abs() < 1e-12);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let x = tape.constant(&Tensor::zeros(vec![2]).unwrap());
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn shared_param_gets_summed_gradient() {
        let (store, ids) = store_with(&[("w", Tensor::from_rows(&[vec![2.0]]).unwrap())]);
        let mut tape = Tape::new(&store);
        let w = tape.param(ids[0]);
        let w2 = tape.param(ids[0]);
        assert_eq!(w, w2);
        let y = tape.matmul(w, w2).unwrap();
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(ids[0]).unwrap(), &[4.0]);
    }
}
