use std::cell::RefCell;
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use super::{axis_split, Tensor};
use crate::error::{Error, Result};

/// Numeric precision of values produced on a tape.
///
/// Storage is always `f64`; in `F32` mode every recorded forward value is
/// rounded to the nearest `f32`, which reproduces single-precision forward
/// results while keeping one code path for both settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl Precision {
    #[inline]
    fn round(self, x: f64) -> f64 {
        match self {
            Precision::F32 => x as f32 as f64,
            Precision::F64 => x,
        }
    }
}

enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    MatMul(usize, usize),
    Transpose(usize),
    Relu(usize),
    Sqrt(usize),
    Softmax {
        x: usize,
        axis: usize,
    },
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    BatchNorm {
        x: usize,
        gain: usize,
        bias: usize,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Concat {
        inputs: Vec<usize>,
        axis: usize,
    },
    Gather {
        x: usize,
        index: Rc<Vec<usize>>,
    },
    Reshape(usize),
    Sum {
        x: usize,
        axis: usize,
    },
    SumAll(usize),
    Select {
        x: usize,
        axis: usize,
        arg: Vec<usize>,
    },
    PairwiseSqDist(usize, usize),
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Records operations for one backward pass. Confined to a single thread.
pub struct Tape {
    precision: Precision,
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

/// Gradients produced by [`Tape::backward`], indexed by leaf.
pub struct Grads {
    grads: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn get(&self, v: Var<'_>) -> Option<&Tensor> {
        self.grads.get(v.id).and_then(|g| g.as_ref())
    }

    /// Number of leaves that received a gradient.
    pub fn len(&self) -> usize {
        self.grads.iter().filter(|g| g.is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new(Precision::default())
    }
}

impl Tape {
    pub fn new(precision: Precision) -> Self {
        Self {
            precision,
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A leaf that receives a gradient on backward.
    pub fn leaf(&self, t: Tensor) -> Var<'_> {
        self.push_leaf(t, true)
    }

    /// A leaf treated as a constant.
    pub fn constant(&self, t: Tensor) -> Var<'_> {
        self.push_leaf(t, false)
    }

    fn push_leaf(&self, mut t: Tensor, requires_grad: bool) -> Var<'_> {
        let p = self.precision;
        t.data.iter_mut().for_each(|x| *x = p.round(*x));
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(t),
            op: Op::Leaf,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn push(&self, shape: Vec<usize>, mut data: Vec<f64>, op: Op, inputs: &[usize]) -> Var<'_> {
        let p = self.precision;
        if p == Precision::F32 {
            data.iter_mut().for_each(|x| *x = p.round(*x));
        }
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = inputs.iter().any(|&i| nodes[i].requires_grad);
        nodes.push(Node {
            value: Rc::new(Tensor { shape, data }),
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn value(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    /// Reverse-mode sweep from a scalar output.
    pub fn backward(&self, out: Var<'_>) -> Result<Grads> {
        let nodes = self.nodes.borrow();
        if nodes[out.id].value.numel() != 1 {
            return Err(Error::Argument(format!(
                "backward needs a scalar output, got shape {:?}",
                nodes[out.id].value.shape
            )));
        }
        let mut acc: Vec<Option<Vec<f64>>> = (0..nodes.len()).map(|_| None).collect();
        acc[out.id] = Some(vec![1.0]);

        for id in (0..=out.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = acc[id].take() else { continue };
            if let Op::Leaf = node.op {
                acc[id] = Some(g);
                continue;
            }
            backward_node(&nodes, node, &g, &mut acc);
        }

        let grads = nodes
            .iter()
            .zip(acc)
            .map(|(n, g)| match (&n.op, n.requires_grad) {
                (Op::Leaf, true) => Some(Tensor {
                    shape: n.value.shape.clone(),
                    data: g.unwrap_or_else(|| vec![0.0; n.value.numel()]),
                }),
                _ => None,
            })
            .collect();
        Ok(Grads { grads })
    }
}

fn accumulate(acc: &mut [Option<Vec<f64>>], nodes: &[Node], id: usize, g: impl FnOnce(&mut [f64])) {
    if !nodes[id].requires_grad {
        return;
    }
    let slot = acc[id].get_or_insert_with(|| vec![0.0; nodes[id].value.numel()]);
    g(slot);
}

/// Adds `g` (shaped like the broadcast output) into an operand whose shape is
/// a suffix of the output shape (or a scalar), summing over repeats.
fn reduce_broadcast(dst: &mut [f64], g: &[f64]) {
    let n = dst.len();
    if n == g.len() {
        dst.iter_mut().zip(g).for_each(|(d, x)| *d += x);
    } else {
        for (i, x) in g.iter().enumerate() {
            dst[i % n] += x;
        }
    }
}

fn backward_node(nodes: &[Node], node: &Node, g: &[f64], acc: &mut [Option<Vec<f64>>]) {
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            accumulate(acc, nodes, *a, |d| d.iter_mut().zip(g).for_each(|(d, x)| *d += x));
            accumulate(acc, nodes, *b, |d| reduce_broadcast(d, g));
        }
        Op::Sub(a, b) => {
            accumulate(acc, nodes, *a, |d| d.iter_mut().zip(g).for_each(|(d, x)| *d += x));
            let neg: Vec<f64> = g.iter().map(|x| -x).collect();
            accumulate(acc, nodes, *b, |d| reduce_broadcast(d, &neg));
        }
        Op::Mul(a, b) => {
            let av = &nodes[*a].value.data;
            let bv = &nodes[*b].value.data;
            let nb = bv.len();
            accumulate(acc, nodes, *a, |d| {
                for (i, d) in d.iter_mut().enumerate() {
                    *d += g[i] * bv[i % nb];
                }
            });
            let prod: Vec<f64> = g.iter().zip(av).map(|(g, a)| g * a).collect();
            accumulate(acc, nodes, *b, |d| reduce_broadcast(d, &prod));
        }
        Op::Scale(a, c) => {
            accumulate(acc, nodes, *a, |d| d.iter_mut().zip(g).for_each(|(d, x)| *d += c * x));
        }
        Op::MatMul(a, b) => {
            let av = &nodes[*a].value;
            let bv = &nodes[*b].value;
            let (m, k) = (av.shape[0], av.shape[1]);
            let n = bv.shape[1];
            // dA = dC · Bᵀ
            accumulate(acc, nodes, *a, |d| {
                for i in 0..m {
                    let gi = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let brow = &bv.data[p * n..(p + 1) * n];
                        d[i * k + p] += gi.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                    }
                }
            });
            // dB = Aᵀ · dC
            accumulate(acc, nodes, *b, |d| {
                for i in 0..m {
                    let gi = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let a_ip = av.data[i * k + p];
                        if a_ip == 0.0 {
                            continue;
                        }
                        let drow = &mut d[p * n..(p + 1) * n];
                        drow.iter_mut().zip(gi).for_each(|(d, x)| *d += a_ip * x);
                    }
                }
            });
        }
        Op::Transpose(a) => {
            let (r, c) = (nodes[*a].value.shape[0], nodes[*a].value.shape[1]);
            accumulate(acc, nodes, *a, |d| {
                for i in 0..r {
                    for j in 0..c {
                        d[i * c + j] += g[j * r + i];
                    }
                }
            });
        }
        Op::Relu(a) => {
            let av = &nodes[*a].value.data;
            accumulate(acc, nodes, *a, |d| {
                for i in 0..d.len() {
                    if av[i] > 0.0 {
                        d[i] += g[i];
                    }
                }
            });
        }
        Op::Sqrt(a) => {
            let y = &node.value.data;
            accumulate(acc, nodes, *a, |d| {
                for i in 0..d.len() {
                    // subgradient 0 at the kink
                    if y[i] > 0.0 {
                        d[i] += g[i] * 0.5 / y[i];
                    }
                }
            });
        }
        Op::Softmax { x, axis } => {
            let y = &node.value;
            let (outer, n, inner) = axis_split(&y.shape, *axis);
            accumulate(acc, nodes, *x, |d| {
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |j: usize| o * n * inner + j * inner + i;
                        let dot: f64 = (0..n).map(|j| g[at(j)] * y.data[at(j)]).sum();
                        for j in 0..n {
                            d[at(j)] += y.data[at(j)] * (g[at(j)] - dot);
                        }
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
            let c = nodes[*gain].value.numel();
            let rows = xhat.len() / c;
            let gv = &nodes[*gain].value.data;
            accumulate(acc, nodes, *x, |d| {
                for r in 0..rows {
                    let gr = &g[r * c..(r + 1) * c];
                    let xr = &xhat[r * c..(r + 1) * c];
                    let dxhat: Vec<f64> = gr.iter().zip(gv).map(|(a, b)| a * b).collect();
                    let s1: f64 = dxhat.iter().sum();
                    let s2: f64 = dxhat.iter().zip(xr).map(|(a, b)| a * b).sum();
                    let k = inv_std[r] / c as f64;
                    for j in 0..c {
                        d[r * c + j] += k * (c as f64 * dxhat[j] - s1 - xr[j] * s2);
                    }
                }
            });
            accumulate(acc, nodes, *gain, |d| {
                for (i, (gi, xi)) in g.iter().zip(xhat).enumerate() {
                    d[i % c] += gi * xi;
                }
            });
            accumulate(acc, nodes, *bias, |d| reduce_broadcast(d, g));
        }
        Op::BatchNorm {
            x,
            gain,
            bias,
            xhat,
            inv_std,
        } => {
            let c = nodes[*gain].value.numel();
            let rows = xhat.len() / c;
            let gv = &nodes[*gain].value.data;
            accumulate(acc, nodes, *x, |d| {
                for j in 0..c {
                    let mut s1 = 0.0;
                    let mut s2 = 0.0;
                    for r in 0..rows {
                        let dxh = g[r * c + j] * gv[j];
                        s1 += dxh;
                        s2 += dxh * xhat[r * c + j];
                    }
                    let k = inv_std[j] / rows as f64;
                    for r in 0..rows {
                        let dxh = g[r * c + j] * gv[j];
                        d[r * c + j] += k * (rows as f64 * dxh - s1 - xhat[r * c + j] * s2);
                    }
                }
            });
            accumulate(acc, nodes, *gain, |d| {
                for (i, (gi, xi)) in g.iter().zip(xhat).enumerate() {
                    d[i % c] += gi * xi;
                }
            });
            accumulate(acc, nodes, *bias, |d| reduce_broadcast(d, g));
        }
        Op::Concat { inputs, axis } => {
            let out_shape = &node.value.shape;
            let (outer, _, inner) = axis_split(out_shape, *axis);
            let total = out_shape[*axis];
            let mut offset = 0;
            for &inp in inputs {
                let len = nodes[inp].value.shape[*axis];
                accumulate(acc, nodes, inp, |d| {
                    for o in 0..outer {
                        let src = o * total * inner + offset * inner;
                        let dst = o * len * inner;
                        for t in 0..len * inner {
                            d[dst + t] += g[src + t];
                        }
                    }
                });
                offset += len;
            }
        }
        Op::Gather { x, index } => {
            accumulate(acc, nodes, *x, |d| {
                for (o, &i) in index.iter().enumerate() {
                    d[i] += g[o];
                }
            });
        }
        Op::Reshape(a) => {
            accumulate(acc, nodes, *a, |d| d.iter_mut().zip(g).for_each(|(d, x)| *d += x));
        }
        Op::Sum { x, axis } => {
            let (outer, n, inner) = axis_split(&nodes[*x].value.shape, *axis);
            accumulate(acc, nodes, *x, |d| {
                for o in 0..outer {
                    for j in 0..n {
                        for i in 0..inner {
                            d[o * n * inner + j * inner + i] += g[o * inner + i];
                        }
                    }
                }
            });
        }
        Op::SumAll(a) => {
            accumulate(acc, nodes, *a, |d| d.iter_mut().for_each(|d| *d += g[0]));
        }
        Op::Select { x, axis, arg } => {
            let (_, n, inner) = axis_split(&nodes[*x].value.shape, *axis);
            accumulate(acc, nodes, *x, |d| {
                for (k, &j) in arg.iter().enumerate() {
                    let (o, i) = (k / inner, k % inner);
                    d[o * n * inner + j * inner + i] += g[k];
                }
            });
        }
        Op::PairwiseSqDist(a, b) => {
            let av = &nodes[*a].value;
            let bv = &nodes[*b].value;
            let (n, dim) = (av.shape[0], av.shape[1]);
            let m = bv.shape[0];
            accumulate(acc, nodes, *a, |d| {
                for i in 0..n {
                    for j in 0..m {
                        let gij = g[i * m + j];
                        if gij == 0.0 {
                            continue;
                        }
                        for c in 0..dim {
                            d[i * dim + c] += 2.0 * gij * (av.data[i * dim + c] - bv.data[j * dim + c]);
                        }
                    }
                }
            });
            accumulate(acc, nodes, *b, |d| {
                for i in 0..n {
                    for j in 0..m {
                        let gij = g[i * m + j];
                        if gij == 0.0 {
                            continue;
                        }
                        for c in 0..dim {
                            d[j * dim + c] -= 2.0 * gij * (av.data[i * dim + c] - bv.data[j * dim + c]);
                        }
                    }
                }
            });
        }
    }
}

fn is_suffix(shape: &[usize], of: &[usize]) -> bool {
    shape.len() <= of.len() && of[of.len() - shape.len()..] == *shape
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape.clone()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        let s = self.shape();
        match s[..] {
            [r, c] => Ok((r, c)),
            _ => Err(Error::Dimension {
                op,
                lhs: s,
                rhs: vec![0, 0],
            }),
        }
    }

    fn check_axis(&self, axis: usize, op: &'static str) -> Result<Vec<usize>> {
        let s = self.shape();
        if axis >= s.len() {
            return Err(Error::Argument(format!(
                "{op}: axis {axis} invalid for shape {s:?}"
            )));
        }
        Ok(s)
    }

    fn broadcast(
        self,
        other: Var<'t>,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
        mk: impl FnOnce(usize, usize) -> Op,
    ) -> Result<Var<'t>> {
        let a = self.value();
        let b = other.value();
        if !(is_suffix(&b.shape, &a.shape) || b.numel() == 1) {
            return Err(Error::Dimension {
                op,
                lhs: a.shape.clone(),
                rhs: b.shape.clone(),
            });
        }
        let nb = b.numel();
        let data = a
            .data
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, b.data[i % nb]))
            .collect();
        Ok(self
            .tape
            .push(a.shape.clone(), data, mk(self.id, other.id), &[self.id, other.id]))
    }

    /// Elementwise sum; `other` may be a trailing-suffix shape or a scalar.
    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.broadcast(other, "add", |a, b| a + b, Op::Add)
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.broadcast(other, "sub", |a, b| a - b, Op::Sub)
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.broadcast(other, "mul", |a, b| a * b, Op::Mul)
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        let a = self.value();
        let data = a.data.iter().map(|x| x * c).collect();
        self.tape.push(a.shape.clone(), data, Op::Scale(self.id, c), &[self.id])
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        let a = self.value();
        let b = other.value();
        let (m, k, n) = match (&a.shape[..], &b.shape[..]) {
            ([m, k], [k2, n]) if k == k2 => (*m, *k, *n),
            _ => {
                return Err(Error::Dimension {
                    op: "matmul",
                    lhs: a.shape.clone(),
                    rhs: b.shape.clone(),
                })
            }
        };
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let a_ip = a.data[i * k + p];
                if a_ip == 0.0 {
                    continue;
                }
                let brow = &b.data[p * n..(p + 1) * n];
                orow.iter_mut().zip(brow).for_each(|(o, y)| *o += a_ip * y);
            }
        }
        Ok(self
            .tape
            .push(vec![m, n], out, Op::MatMul(self.id, other.id), &[self.id, other.id]))
    }

    pub fn transpose(self) -> Result<Var<'t>> {
        let (r, c) = self.dims2("transpose")?;
        let a = self.value();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = a.data[i * c + j];
            }
        }
        Ok(self.tape.push(vec![c, r], out, Op::Transpose(self.id), &[self.id]))
    }

    pub fn relu(self) -> Var<'t> {
        let a = self.value();
        let data = a.data.iter().map(|&x| x.max(0.0)).collect();
        self.tape.push(a.shape.clone(), data, Op::Relu(self.id), &[self.id])
    }

    pub fn sqrt(self) -> Result<Var<'t>> {
        let a = self.value();
        if let Some(x) = a.data.iter().find(|&&x| x < 0.0 || !x.is_finite()) {
            return Err(Error::Numeric(format!("sqrt of {x}")));
        }
        let data = a.data.iter().map(|x| x.sqrt()).collect();
        Ok(self.tape.push(a.shape.clone(), data, Op::Sqrt(self.id), &[self.id]))
    }

    /// Softmax along `axis`, computed with max subtraction.
    pub fn softmax(self, axis: usize) -> Result<Var<'t>> {
        let shape = self.check_axis(axis, "softmax")?;
        let a = self.value();
        if !a.is_finite() {
            return Err(Error::Numeric("softmax of non-finite input".into()));
        }
        let (outer, n, inner) = axis_split(&shape, axis);
        let mut out = vec![0.0; a.numel()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| o * n * inner + j * inner + i;
                let max = (0..n).map(|j| a.data[at(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for j in 0..n {
                    let e = (a.data[at(j)] - max).exp();
                    out[at(j)] = e;
                    sum += e;
                }
                for j in 0..n {
                    out[at(j)] /= sum;
                }
            }
        }
        Ok(self
            .tape
            .push(shape, out, Op::Softmax { x: self.id, axis }, &[self.id]))
    }

    /// Row-wise layer normalization of an `n×c` matrix with affine `gain`, `bias` of length `c`.
    pub fn layer_norm(self, gain: Var<'t>, bias: Var<'t>, eps: f64) -> Result<Var<'t>> {
        let (rows, c) = self.dims2("layer_norm")?;
        if gain.value().numel() != c || bias.value().numel() != c {
            return Err(Error::Dimension {
                op: "layer_norm",
                lhs: vec![rows, c],
                rhs: gain.shape(),
            });
        }
        if eps <= 0.0 {
            return Err(Error::Argument("layer_norm eps must be positive".into()));
        }
        let a = self.value();
        let gv = gain.value();
        let bv = bias.value();
        let mut xhat = vec![0.0; rows * c];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; rows * c];
        for r in 0..rows {
            let row = &a.data[r * c..(r + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..c {
                let h = (row[j] - mean) * is;
                xhat[r * c + j] = h;
                out[r * c + j] = h * gv.data[j] + bv.data[j];
            }
        }
        let op = Op::LayerNorm {
            x: self.id,
            gain: gain.id,
            bias: bias.id,
            xhat,
            inv_std,
        };
        Ok(self
            .tape
            .push(vec![rows, c], out, op, &[self.id, gain.id, bias.id]))
    }

    /// Training-mode batch normalization over the rows of an `n×c` matrix.
    /// Returns the normalized output together with the per-column batch
    /// mean and biased variance so callers can maintain running statistics.
    pub fn batch_norm_train(
        self,
        gain: Var<'t>,
        bias: Var<'t>,
        eps: f64,
    ) -> Result<(Var<'t>, Vec<f64>, Vec<f64>)> {
        let (rows, c) = self.dims2("batch_norm")?;
        if gain.value().numel() != c || bias.value().numel() != c {
            return Err(Error::Dimension {
                op: "batch_norm",
                lhs: vec![rows, c],
                rhs: gain.shape(),
            });
        }
        let a = self.value();
        let gv = gain.value();
        let bv = bias.value();
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for r in 0..rows {
            for j in 0..c {
                mean[j] += a.data[r * c + j];
            }
        }
        mean.iter_mut().for_each(|m| *m /= rows as f64);
        for r in 0..rows {
            for j in 0..c {
                var[j] += (a.data[r * c + j] - mean[j]).powi(2);
            }
        }
        var.iter_mut().for_each(|v| *v /= rows as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = vec![0.0; rows * c];
        let mut out = vec![0.0; rows * c];
        for r in 0..rows {
            for j in 0..c {
                let h = (a.data[r * c + j] - mean[j]) * inv_std[j];
                xhat[r * c + j] = h;
                out[r * c + j] = h * gv.data[j] + bv.data[j];
            }
        }
        let op = Op::BatchNorm {
            x: self.id,
            gain: gain.id,
            bias: bias.id,
            xhat,
            inv_std,
        };
        let y = self
            .tape
            .push(vec![rows, c], out, op, &[self.id, gain.id, bias.id]);
        Ok((y, mean, var))
    }

    /// Evaluation-mode batch normalization using fixed statistics.
    pub fn batch_norm_eval(
        self,
        gain: Var<'t>,
        bias: Var<'t>,
        running_mean: &[f64],
        running_var: &[f64],
        eps: f64,
    ) -> Result<Var<'t>> {
        let (_, c) = self.dims2("batch_norm")?;
        if running_mean.len() != c || running_var.len() != c {
            return Err(Error::Dimension {
                op: "batch_norm",
                lhs: self.shape(),
                rhs: vec![running_mean.len()],
            });
        }
        let scale: Vec<f64> = running_var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let shift: Vec<f64> = running_mean.iter().zip(&scale).map(|(m, s)| -m * s).collect();
        let t = self.tape;
        let x = self
            .mul(t.constant(Tensor::new([c], scale)?))?
            .add(t.constant(Tensor::new([c], shift)?))?;
        x.mul(gain)?.add(bias)
    }

    pub fn concat(parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Argument("concat of zero tensors".into()))?;
        let tape = first.tape;
        let base = first.check_axis(axis, "concat")?;
        let values: Vec<Rc<Tensor>> = parts.iter().map(|p| p.value()).collect();
        let mut total = 0;
        for v in &values {
            let ok = v.shape.len() == base.len()
                && v.shape.iter().zip(&base).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !ok {
                return Err(Error::Dimension {
                    op: "concat",
                    lhs: base.clone(),
                    rhs: v.shape.clone(),
                });
            }
            total += v.shape[axis];
        }
        let (outer, _, inner) = axis_split(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in &values {
                let len = v.shape[axis] * inner;
                out.extend_from_slice(&v.data[o * len..(o + 1) * len]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        Ok(tape.push(shape, out, Op::Concat { inputs: ids.clone(), axis }, &ids))
    }

    /// Flat gather: `out.data[i] = self.data[index[i]]`, reshaped to `shape`.
    /// Indices are constants; gradients scatter-add back.
    pub fn gather_flat(self, index: Rc<Vec<usize>>, shape: Vec<usize>) -> Result<Var<'t>> {
        let a = self.value();
        if shape.iter().product::<usize>() != index.len() {
            return Err(Error::Dimension {
                op: "gather",
                lhs: shape,
                rhs: vec![index.len()],
            });
        }
        let n = a.numel();
        let mut out = Vec::with_capacity(index.len());
        for &i in index.iter() {
            if i >= n {
                return Err(Error::Index { index: i, len: n });
            }
            out.push(a.data[i]);
        }
        Ok(self
            .tape
            .push(shape, out, Op::Gather { x: self.id, index }, &[self.id]))
    }

    /// Rows of a 2-D tensor by index (repeats allowed).
    pub fn gather_rows(self, rows: &[usize]) -> Result<Var<'t>> {
        let (r, c) = self.dims2("gather_rows")?;
        let mut index = Vec::with_capacity(rows.len() * c);
        for &i in rows {
            if i >= r {
                return Err(Error::Index { index: i, len: r });
            }
            index.extend(i * c..(i + 1) * c);
        }
        self.gather_flat(Rc::new(index), vec![rows.len(), c])
    }

    /// Columns `[start, end)` of a 2-D tensor.
    pub fn slice_cols(self, start: usize, end: usize) -> Result<Var<'t>> {
        let (r, c) = self.dims2("slice_cols")?;
        if start >= end || end > c {
            return Err(Error::Index { index: end, len: c });
        }
        let w = end - start;
        let mut index = Vec::with_capacity(r * w);
        for i in 0..r {
            index.extend(i * c + start..i * c + end);
        }
        self.gather_flat(Rc::new(index), vec![r, w])
    }

    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Var<'t>> {
        let shape = shape.into();
        let a = self.value();
        if shape.iter().product::<usize>() != a.numel() {
            return Err(Error::Dimension {
                op: "reshape",
                lhs: a.shape.clone(),
                rhs: shape,
            });
        }
        Ok(self
            .tape
            .push(shape, a.data.clone(), Op::Reshape(self.id), &[self.id]))
    }

    fn reduced_shape(shape: &[usize], axis: usize) -> Vec<usize> {
        let mut s: Vec<usize> = shape
            .iter()
            .enumerate()
            .filter(|&(d, _)| d != axis)
            .map(|(_, &x)| x)
            .collect();
        if s.is_empty() {
            s.push(1);
        }
        s
    }

    /// Sum along `axis`; the axis is removed from the shape.
    pub fn sum_axis(self, axis: usize) -> Result<Var<'t>> {
        let shape = self.check_axis(axis, "sum")?;
        let a = self.value();
        let (outer, n, inner) = axis_split(&shape, axis);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..n {
                for i in 0..inner {
                    out[o * inner + i] += a.data[o * n * inner + j * inner + i];
                }
            }
        }
        Ok(self.tape.push(
            Self::reduced_shape(&shape, axis),
            out,
            Op::Sum { x: self.id, axis },
            &[self.id],
        ))
    }

    pub fn mean_axis(self, axis: usize) -> Result<Var<'t>> {
        let n = self.check_axis(axis, "mean")?[axis];
        Ok(self.sum_axis(axis)?.scale(1.0 / n as f64))
    }

    pub fn sum_all(self) -> Var<'t> {
        let a = self.value();
        let s = a.data.iter().sum();
        self.tape.push(vec![1], vec![s], Op::SumAll(self.id), &[self.id])
    }

    pub fn mean_all(self) -> Var<'t> {
        let n = self.value().numel();
        self.sum_all().scale(1.0 / n as f64)
    }

    fn select(self, axis: usize, better: impl Fn(f64, f64) -> bool, op: &'static str) -> Result<(Var<'t>, Vec<usize>)> {
        let shape = self.check_axis(axis, op)?;
        let a = self.value();
        let (outer, n, inner) = axis_split(&shape, axis);
        let mut out = vec![0.0; outer * inner];
        let mut arg = vec![0usize; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let mut best = 0;
                let mut bv = a.data[o * n * inner + i];
                for j in 1..n {
                    let v = a.data[o * n * inner + j * inner + i];
                    // strict comparison keeps the lowest index on ties
                    if better(v, bv) {
                        best = j;
                        bv = v;
                    }
                }
                out[o * inner + i] = bv;
                arg[o * inner + i] = best;
            }
        }
        let y = self.tape.push(
            Self::reduced_shape(&shape, axis),
            out,
            Op::Select {
                x: self.id,
                axis,
                arg: arg.clone(),
            },
            &[self.id],
        );
        Ok((y, arg))
    }

    /// Max along `axis` with the selected indices; gradient flows to the selected element only.
    pub fn max_axis(self, axis: usize) -> Result<(Var<'t>, Vec<usize>)> {
        self.select(axis, |a, b| a > b, "max")
    }

    pub fn min_axis(self, axis: usize) -> Result<(Var<'t>, Vec<usize>)> {
        self.select(axis, |a, b| a < b, "min")
    }

    /// Squared Euclidean distances between the rows of `self` (n×d) and `other` (m×d).
    pub fn pairwise_sq_dist(self, other: Var<'t>) -> Result<Var<'t>> {
        let a = self.value();
        let b = other.value();
        let (n, d, m) = match (&a.shape[..], &b.shape[..]) {
            ([n, d], [m, d2]) if d == d2 => (*n, *d, *m),
            _ => {
                return Err(Error::Dimension {
                    op: "pairwise_sq_dist",
                    lhs: a.shape.clone(),
                    rhs: b.shape.clone(),
                })
            }
        };
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let ai = &a.data[i * d..(i + 1) * d];
            for j in 0..m {
                let bj = &b.data[j * d..(j + 1) * d];
                out[i * m + j] = ai.iter().zip(bj).map(|(x, y)| (x - y) * (x - y)).sum();
            }
        }
        Ok(self.tape.push(
            vec![n, m],
            out,
            Op::PairwiseSqDist(self.id, other.id),
            &[self.id, other.id],
        ))
    }
}
