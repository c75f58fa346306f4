use super::focal;
use super::Tensor;
use crate::error::{Error, Result};
use crate::spectral::{self, Complex64};

/// Position of a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// The operation kinds the tape can record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    MatMul,
    Transpose,
    Add,
    Sub,
    AddRow,
    Mul,
    MulRow,
    MulScalar,
    AddScalar,
    Scale,
    Sigmoid,
    Tanh,
    Exp,
    Abs,
    Softmax,
    LayerNorm,
    Mean,
    MeanAll,
    Sum,
    L2Normalize,
    Conv1d,
    ToComplex,
    RealPart,
    Dft,
    Idft,
    MulBins,
    FocalTerms,
    GiouLoss,
    SelectRows,
    StackRows,
    Reshape,
}

impl OpKind {
    pub const ALL: [OpKind; 32] = [
        OpKind::Leaf,
        OpKind::MatMul,
        OpKind::Transpose,
        OpKind::Add,
        OpKind::Sub,
        OpKind::AddRow,
        OpKind::Mul,
        OpKind::MulRow,
        OpKind::MulScalar,
        OpKind::AddScalar,
        OpKind::Scale,
        OpKind::Sigmoid,
        OpKind::Tanh,
        OpKind::Exp,
        OpKind::Abs,
        OpKind::Softmax,
        OpKind::LayerNorm,
        OpKind::Mean,
        OpKind::MeanAll,
        OpKind::Sum,
        OpKind::L2Normalize,
        OpKind::Conv1d,
        OpKind::ToComplex,
        OpKind::RealPart,
        OpKind::Dft,
        OpKind::Idft,
        OpKind::MulBins,
        OpKind::FocalTerms,
        OpKind::GiouLoss,
        OpKind::SelectRows,
        OpKind::StackRows,
        OpKind::Reshape,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::MatMul => "matmul",
            OpKind::Transpose => "transpose",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::AddRow => "add_row",
            OpKind::Mul => "mul",
            OpKind::MulRow => "mul_row",
            OpKind::MulScalar => "mul_scalar",
            OpKind::AddScalar => "add_scalar",
            OpKind::Scale => "scale",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Tanh => "tanh",
            OpKind::Exp => "exp",
            OpKind::Abs => "abs",
            OpKind::Softmax => "softmax",
            OpKind::LayerNorm => "layer_norm",
            OpKind::Mean => "mean",
            OpKind::MeanAll => "mean_all",
            OpKind::Sum => "sum",
            OpKind::L2Normalize => "l2_normalize",
            OpKind::Conv1d => "conv1d",
            OpKind::ToComplex => "to_complex",
            OpKind::RealPart => "real_part",
            OpKind::Dft => "dft",
            OpKind::Idft => "idft",
            OpKind::MulBins => "mul_bins",
            OpKind::FocalTerms => "focal_terms",
            OpKind::GiouLoss => "giou_loss",
            OpKind::SelectRows => "select_rows",
            OpKind::StackRows => "stack_rows",
            OpKind::Reshape => "reshape",
        }
    }

    /// Every kind with a backward rule (all but [`OpKind::Leaf`]).
    pub fn differentiable() -> impl Iterator<Item = OpKind> {
        Self::ALL.into_iter().filter(|k| *k != OpKind::Leaf)
    }

    pub fn from_name(name: &str) -> Option<OpKind> {
        Self::ALL.iter().copied().find(|k| k.name() == name)
    }
}

enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Mul(NodeId, NodeId),
    MulRow(NodeId, NodeId),
    MulScalar(NodeId, NodeId),
    AddScalar(NodeId, NodeId),
    Scale(NodeId, f64),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Exp(NodeId),
    Abs(NodeId),
    Softmax(NodeId, usize),
    LayerNorm {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Mean(NodeId, usize),
    MeanAll(NodeId),
    Sum(NodeId),
    L2Normalize {
        x: NodeId,
        norms: Vec<f64>,
    },
    Conv1d(NodeId, NodeId),
    ToComplex(NodeId),
    RealPart(NodeId),
    Dft(NodeId),
    Idft(NodeId),
    MulBins(NodeId, NodeId),
    FocalTerms {
        p: NodeId,
        labels: Vec<bool>,
        w_pos: f64,
        w_neg: f64,
        gamma: f64,
    },
    GiouLoss {
        pred: NodeId,
        target: Vec<[f64; 4]>,
    },
    SelectRows(NodeId, Vec<usize>),
    StackRows(Vec<NodeId>),
    Reshape(NodeId),
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Transpose(..) => OpKind::Transpose,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::AddRow(..) => OpKind::AddRow,
            Op::Mul(..) => OpKind::Mul,
            Op::MulRow(..) => OpKind::MulRow,
            Op::MulScalar(..) => OpKind::MulScalar,
            Op::AddScalar(..) => OpKind::AddScalar,
            Op::Scale(..) => OpKind::Scale,
            Op::Sigmoid(..) => OpKind::Sigmoid,
            Op::Tanh(..) => OpKind::Tanh,
            Op::Exp(..) => OpKind::Exp,
            Op::Abs(..) => OpKind::Abs,
            Op::Softmax(..) => OpKind::Softmax,
            Op::LayerNorm { .. } => OpKind::LayerNorm,
            Op::Mean(..) => OpKind::Mean,
            Op::MeanAll(..) => OpKind::MeanAll,
            Op::Sum(..) => OpKind::Sum,
            Op::L2Normalize { .. } => OpKind::L2Normalize,
            Op::Conv1d(..) => OpKind::Conv1d,
            Op::ToComplex(..) => OpKind::ToComplex,
            Op::RealPart(..) => OpKind::RealPart,
            Op::Dft(..) => OpKind::Dft,
            Op::Idft(..) => OpKind::Idft,
            Op::MulBins(..) => OpKind::MulBins,
            Op::FocalTerms { .. } => OpKind::FocalTerms,
            Op::GiouLoss { .. } => OpKind::GiouLoss,
            Op::SelectRows(..) => OpKind::SelectRows,
            Op::StackRows(..) => OpKind::StackRows,
            Op::Reshape(..) => OpKind::Reshape,
        }
    }
}

struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    needs_grad: bool,
    op: Op,
}

/// Linear record of operations, replayed in reverse by [`Tape::backward`].
///
/// Nodes are appended in evaluation order, so every input precedes its
/// consumers.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    fault: Option<OpKind>,
}

/// Gradients produced by one backward pass.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient for a tensor registered with `requires_grad`. Parameters
    /// that did not take part in the loss get zeros; tensors that do not
    /// require gradients get `None`.
    pub fn get(&self, t: &Tensor) -> Option<Tensor> {
        if !t.requires_grad() {
            return None;
        }
        let id = t.node()?;
        let data = self
            .grads
            .get(id.0)
            .and_then(|g| g.clone())
            .unwrap_or_else(|| vec![0.0; t.numel()]);
        Some(Tensor::new(t.shape().to_vec(), data).expect("gradient shape matches node"))
    }
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Corner form `(x1, y1, x2, y2)` of a center-size box.
fn corners(b: &[f64]) -> [f64; 4] {
    [
        b[0] - b[2] / 2.0,
        b[1] - b[3] / 2.0,
        b[0] + b[2] / 2.0,
        b[1] + b[3] / 2.0,
    ]
}

/// `1 - GIoU` for center-size boxes plus the gradient with respect to the
/// predicted `(cx, cy, w, h)`.
fn giou_loss_and_grad(pred: &[f64], target: &[f64; 4]) -> (f64, [f64; 4]) {
    let p = corners(pred);
    let t = corners(target);
    let iw_raw = p[2].min(t[2]) - p[0].max(t[0]);
    let ih_raw = p[3].min(t[3]) - p[1].max(t[1]);
    let iw = iw_raw.max(0.0);
    let ih = ih_raw.max(0.0);
    let inter = iw * ih;
    let area_p = pred[2] * pred[3];
    let area_t = target[2] * target[3];
    let union = area_p + area_t - inter;
    let cw = p[2].max(t[2]) - p[0].min(t[0]);
    let ch = p[3].max(t[3]) - p[1].min(t[1]);
    let hull = cw * ch;

    let iou = if union > 0.0 { inter / union } else { 0.0 };
    let giou = if hull > 0.0 {
        iou - (hull - union) / hull
    } else {
        iou
    };
    let loss = 1.0 - giou;

    // loss = 2 - I/U - U/H in the regular case
    let (d_inter, d_union) = if union > 0.0 {
        (-1.0 / union, inter / (union * union))
    } else {
        (0.0, 0.0)
    };
    let (d_union_h, d_hull) = if hull > 0.0 {
        (-1.0 / hull, union / (hull * hull))
    } else {
        (0.0, 0.0)
    };
    let d_u = d_union + d_union_h;
    let d_i = d_inter - d_u;
    let d_area = d_u;

    // gradients w.r.t. corners x1, y1, x2, y2
    let mut dc = [0.0; 4];
    if iw_raw > 0.0 && ih_raw > 0.0 {
        let d_iw = d_i * ih;
        let d_ih = d_i * iw;
        if p[2] <= t[2] {
            dc[2] += d_iw;
        }
        if p[0] >= t[0] {
            dc[0] -= d_iw;
        }
        if p[3] <= t[3] {
            dc[3] += d_ih;
        }
        if p[1] >= t[1] {
            dc[1] -= d_ih;
        }
    }
    if hull > 0.0 {
        let d_cw = d_hull * ch;
        let d_ch = d_hull * cw;
        if p[2] >= t[2] {
            dc[2] += d_cw;
        }
        if p[0] <= t[0] {
            dc[0] -= d_cw;
        }
        if p[3] >= t[3] {
            dc[3] += d_ch;
        }
        if p[1] <= t[1] {
            dc[1] -= d_ch;
        }
    }
    let grad = [
        dc[0] + dc[2],
        dc[1] + dc[3],
        (dc[2] - dc[0]) / 2.0 + d_area * pred[3],
        (dc[3] - dc[1]) / 2.0 + d_area * pred[2],
    ];
    (loss, grad)
}

/// Transforms every column of a `[T, C, 2]` complex tensor along axis 0.
fn transform_columns(shape: &[usize], data: &[f64], f: impl Fn(&[Complex64]) -> Vec<Complex64>) -> Vec<f64> {
    let (t, c) = (shape[0], shape[1]);
    let mut out = vec![0.0; data.len()];
    let mut col = vec![Complex64::new(0.0, 0.0); t];
    for ch in 0..c {
        for (k, v) in col.iter_mut().enumerate() {
            let base = (k * c + ch) * 2;
            *v = Complex64::new(data[base], data[base + 1]);
        }
        for (k, v) in f(&col).into_iter().enumerate() {
            let base = (k * c + ch) * 2;
            out[base] = v.re;
            out[base + 1] = v.im;
        }
    }
    out
}

fn forward_dft(col: &[Complex64]) -> Vec<Complex64> {
    spectral::dft(col).into_bins()
}

fn inverse_dft(col: &[Complex64]) -> Vec<Complex64> {
    let n = col.len() as f64;
    spectral::inverse_unnormalized(col)
        .into_iter()
        .map(|v| v / n)
        .collect()
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Op kind of every recorded node, in recording order.
    pub fn kinds(&self) -> Vec<OpKind> {
        self.nodes.iter().map(|n| n.op.kind()).collect()
    }

    /// Scales the backward contribution of every `kind` op by 1.5. Used by
    /// the gradient-check fault injection.
    pub fn inject_fault(&mut self, kind: OpKind) {
        self.fault = Some(kind);
    }

    pub fn set_fault(&mut self, kind: Option<OpKind>) {
        self.fault = kind;
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, needs_grad: bool, op: Op) -> Tensor {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            shape: shape.clone(),
            value: value.clone(),
            needs_grad,
            op,
        });
        Tensor::on_tape(shape, value, needs_grad, id)
    }

    /// Registers `t` as a leaf, keeping its `requires_grad` flag.
    pub fn leaf(&mut self, t: &Tensor) -> Tensor {
        self.push(t.shape().to_vec(), t.data().to_vec(), t.requires_grad(), Op::Leaf)
    }

    /// Registers `t` as a trainable leaf.
    pub fn param(&mut self, t: &Tensor) -> Tensor {
        self.push(t.shape().to_vec(), t.data().to_vec(), true, Op::Leaf)
    }

    pub fn constant(&mut self, t: &Tensor) -> Tensor {
        self.push(t.shape().to_vec(), t.data().to_vec(), false, Op::Leaf)
    }

    fn id(&mut self, t: &Tensor) -> NodeId {
        match t.node() {
            Some(id) if id.0 < self.nodes.len() && self.nodes[id.0].value.len() == t.numel() => id,
            _ => {
                let c = self.constant(t);
                c.node().expect("constant was just pushed")
            }
        }
    }

    fn needs(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].needs_grad)
    }

    fn unary(&mut self, x: &Tensor, op: impl FnOnce(NodeId) -> Op, f: impl Fn(f64) -> f64) -> Tensor {
        let xi = self.id(x);
        let value = x.data().iter().map(|&v| f(v)).collect();
        let needs = self.needs(&[xi]);
        self.push(x.shape().to_vec(), value, needs, op(xi))
    }

    pub fn matmul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
            return Err(Error::shape(
                "matmul",
                format!("{:?} x {:?}", a.shape(), b.shape()),
            ));
        }
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let (ad, bd) = (a.data(), b.data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let av = ad[i * k + p];
                for j in 0..n {
                    out[i * n + j] += av * bd[p * n + j];
                }
            }
        }
        let (ai, bi) = (self.id(a), self.id(b));
        let needs = self.needs(&[ai, bi]);
        Ok(self.push(vec![m, n], out, needs, Op::MatMul(ai, bi)))
    }

    pub fn transpose(&mut self, x: &Tensor) -> Result<Tensor> {
        if x.rank() != 2 {
            return Err(Error::shape("transpose", format!("rank {}", x.rank())));
        }
        let (m, n) = (x.shape()[0], x.shape()[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = x.data()[i * n + j];
            }
        }
        let xi = self.id(x);
        let needs = self.needs(&[xi]);
        Ok(self.push(vec![n, m], out, needs, Op::Transpose(xi)))
    }

    fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
        if a.shape() != b.shape() {
            return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
        }
        Ok(())
    }

    pub fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        Self::same_shape("add", a, b)?;
        let value = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
        let (ai, bi) = (self.id(a), self.id(b));
        let needs = self.needs(&[ai, bi]);
        Ok(self.push(a.shape().to_vec(), value, needs, Op::Add(ai, bi)))
    }

    pub fn sub(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        Self::same_shape("sub", a, b)?;
        let value = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
        let (ai, bi) = (self.id(a), self.id(b));
        let needs = self.needs(&[ai, bi]);
        Ok(self.push(a.shape().to_vec(), value, needs, Op::Sub(ai, bi)))
    }

    /// Hadamard product.
    pub fn mul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        Self::same_shape("mul", a, b)?;
        let value = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
        let (ai, bi) = (self.id(a), self.id(b));
        let needs = self.needs(&[ai, bi]);
        Ok(self.push(a.shape().to_vec(), value, needs, Op::Mul(ai, bi)))
    }

    fn check_row(op: &'static str, x: &Tensor, row: &Tensor) -> Result<usize> {
        let c = *x.shape().last().expect("rank >= 1");
        if row.rank() != 1 || row.numel() != c {
            return Err(Error::shape(
                op,
                format!("row {:?} does not broadcast over {:?}", row.shape(), x.shape()),
            ));
        }
        Ok(c)
    }

    /// `x[.., c] + row[c]`.
    pub fn add_row(&mut self, x: &Tensor, row: &Tensor) -> Result<Tensor> {
        let c = Self::check_row("add_row", x, row)?;
        let value = x
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v + row.data()[i % c])
            .collect();
        let (xi, ri) = (self.id(x), self.id(row));
        let needs = self.needs(&[xi, ri]);
        Ok(self.push(x.shape().to_vec(), value, needs, Op::AddRow(xi, ri)))
    }

    /// `x[.., c] * row[c]`.
    pub fn mul_row(&mut self, x: &Tensor, row: &Tensor) -> Result<Tensor> {
        let c = Self::check_row("mul_row", x, row)?;
        let value = x
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v * row.data()[i % c])
            .collect();
        let (xi, ri) = (self.id(x), self.id(row));
        let needs = self.needs(&[xi, ri]);
        Ok(self.push(x.shape().to_vec(), value, needs, Op::MulRow(xi, ri)))
    }

    /// Multiplies every element by a one-element tensor.
    pub fn mul_scalar(&mut self, x: &Tensor, s: &Tensor) -> Result<Tensor> {
        let sv = s.item().map_err(|_| Error::shape("mul_scalar", "scale is not a scalar"))?;
        let value = x.data().iter().map(|v| v * sv).collect();
        let (xi, si) = (self.id(x), self.id(s));
        let needs = self.needs(&[xi, si]);
        Ok(self.push(x.shape().to_vec(), value, needs, Op::MulScalar(xi, si)))
    }

    /// Adds a one-element tensor to every element.
    pub fn add_scalar(&mut self, x: &Tensor, s: &Tensor) -> Result<Tensor> {
        let sv = s.item().map_err(|_| Error::shape("add_scalar", "offset is not a scalar"))?;
        let value = x.data().iter().map(|v| v + sv).collect();
        let (xi, si) = (self.id(x), self.id(s));
        let needs = self.needs(&[xi, si]);
        Ok(self.push(x.shape().to_vec(), value, needs, Op::AddScalar(xi, si)))
    }

    /// Multiplies by a constant.
    pub fn scale(&mut self, x: &Tensor, factor: f64) -> Tensor {
        self.unary(x, |i| Op::Scale(i, factor), |v| v * factor)
    }

    pub fn sigmoid(&mut self, x: &Tensor) -> Tensor {
        self.unary(x, Op::Sigmoid, sigmoid)
    }

    pub fn tanh(&mut self, x: &Tensor) -> Tensor {
        self.unary(x, Op::Tanh, f64::tanh)
    }

    pub fn exp(&mut self, x: &Tensor) -> Tensor {
        self.unary(x, Op::Exp, f64::exp)
    }

    pub fn abs(&mut self, x: &Tensor) -> Tensor {
        self.unary(x, Op::Abs, f64::abs)
    }

    /// Softmax along `axis` with max subtraction.
    pub fn softmax(&mut self, x: &Tensor, axis: usize) -> Result<Tensor> {
        if axis >= x.rank() {
            return Err(Error::shape("softmax", format!("axis {axis} for {:?}", x.shape())));
        }
        let (outer, len, inner) = split_axis(x.shape(), axis);
        let d = x.data();
        let mut out = vec![0.0; d.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |l: usize| (o * len + l) * inner + i;
                let max = (0..len).map(|l| d[at(l)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for l in 0..len {
                    let e = (d[at(l)] - max).exp();
                    out[at(l)] = e;
                    total += e;
                }
                for l in 0..len {
                    out[at(l)] /= total;
                }
            }
        }
        let xi = self.id(x);
        let needs = self.needs(&[xi]);
        Ok(self.push(x.shape().to_vec(), out, needs, Op::Softmax(xi, axis)))
    }

    /// Layer normalization over the last axis followed by `gain ⊙ x̂ + bias`.
    pub fn layer_norm(&mut self, x: &Tensor, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
        if eps.is_nan() || eps <= 0.0 {
            return Err(Error::invalid(format!("layer_norm eps must be > 0, got {eps}")));
        }
        let c = Self::check_row("layer_norm", x, gain)?;
        Self::check_row("layer_norm", x, bias)?;
        let rows = x.numel() / c;
        let d = x.data();
        let mut xhat = vec![0.0; d.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; d.len()];
        for r in 0..rows {
            let row = &d[r * c..(r + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..c {
                let h = (row[j] - mean) * is;
                xhat[r * c + j] = h;
                out[r * c + j] = gain.data()[j] * h + bias.data()[j];
            }
        }
        let (xi, gi, bi) = (self.id(x), self.id(gain), self.id(bias));
        let needs = self.needs(&[xi, gi, bi]);
        Ok(self.push(
            x.shape().to_vec(),
            out,
            needs,
            Op::LayerNorm {
                x: xi,
                gain: gi,
                bias: bi,
                xhat,
                inv_std,
            },
        ))
    }

    /// Mean along `axis`; the axis is removed from the shape (a rank-1
    /// input yields a one-element vector).
    pub fn mean(&mut self, x: &Tensor, axis: usize) -> Result<Tensor> {
        if axis >= x.rank() {
            return Err(Error::shape("mean", format!("axis {axis} for {:?}", x.shape())));
        }
        let (outer, len, inner) = split_axis(x.shape(), axis);
        let d = x.data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                for i in 0..inner {
                    out[o * inner + i] += d[(o * len + l) * inner + i];
                }
            }
        }
        out.iter_mut().for_each(|v| *v /= len as f64);
        let mut shape: Vec<usize> = x.shape().to_vec();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        let xi = self.id(x);
        let needs = self.needs(&[xi]);
        Ok(self.push(shape, out, needs, Op::Mean(xi, axis)))
    }

    /// Mean of all elements, shape `[1]`.
    pub fn mean_all(&mut self, x: &Tensor) -> Tensor {
        let v = x.data().iter().sum::<f64>() / x.numel() as f64;
        let xi = self.id(x);
        let needs = self.needs(&[xi]);
        self.push(vec![1], vec![v], needs, Op::MeanAll(xi))
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&mut self, x: &Tensor) -> Tensor {
        let v = x.data().iter().sum::<f64>();
        let xi = self.id(x);
        let needs = self.needs(&[xi]);
        self.push(vec![1], vec![v], needs, Op::Sum(xi))
    }

    /// Divides each slice along the last axis by its L2 norm. Zero slices
    /// stay zero.
    pub fn l2_normalize(&mut self, x: &Tensor) -> Tensor {
        let c = *x.shape().last().expect("rank >= 1");
        let rows = x.numel() / c;
        let d = x.data();
        let mut norms = vec![0.0; rows];
        let mut out = vec![0.0; d.len()];
        for r in 0..rows {
            let row = &d[r * c..(r + 1) * c];
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            norms[r] = n;
            if n > 0.0 {
                for j in 0..c {
                    out[r * c + j] = row[j] / n;
                }
            }
        }
        let xi = self.id(x);
        let needs = self.needs(&[xi]);
        self.push(x.shape().to_vec(), out, needs, Op::L2Normalize { x: xi, norms })
    }

    /// Depthwise 1-D cross-correlation along axis 0 with zero padding.
    ///
    /// `x` is `[T, C]` or `[T, C, P]`; `w` is `[C, K]` with odd `K`. Channel
    /// `c` of every trailing slot `p` uses kernel row `c`, so a complex
    /// `[T, C, 2]` input has the same real weights applied to its real and
    /// imaginary parts. Output length equals input length.
    pub fn conv1d(&mut self, x: &Tensor, w: &Tensor) -> Result<Tensor> {
        if x.rank() < 2 || w.rank() != 2 || w.shape()[0] != x.shape()[1] || w.shape()[1].is_multiple_of(2) {
            return Err(Error::shape(
                "conv1d",
                format!("input {:?}, kernel {:?} (need [C, odd K])", x.shape(), w.shape()),
            ));
        }
        let t = x.shape()[0];
        let c = x.shape()[1];
        let p = if x.rank() == 3 { x.shape()[2] } else { 1 };
        let k = w.shape()[1];
        let pad = k / 2;
        let (xd, wd) = (x.data(), w.data());
        let mut out = vec![0.0; xd.len()];
        for ti in 0..t {
            for ch in 0..c {
                for j in 0..k {
                    let src = ti as isize + j as isize - pad as isize;
                    if src < 0 || src >= t as isize {
                        continue;
                    }
                    let wv = wd[ch * k + j];
                    for q in 0..p {
                        out[(ti * c + ch) * p + q] += wv * xd[(src as usize * c + ch) * p + q];
                    }
                }
            }
        }
        let (xi, wi) = (self.id(x), self.id(w));
        let needs = self.needs(&[xi, wi]);
        Ok(self.push(x.shape().to_vec(), out, needs, Op::Conv1d(xi, wi)))
    }

    /// `[T, C]` real → `[T, C, 2]` complex with zero imaginary part.
    pub fn to_complex(&mut self, x: &Tensor) -> Result<Tensor> {
        if x.rank() != 2 {
            return Err(Error::shape("to_complex", format!("{:?}", x.shape())));
        }
        let mut out = vec![0.0; x.numel() * 2];
        for (i, v) in x.data().iter().enumerate() {
            out[2 * i] = *v;
        }
        let xi = self.id(x);
        let needs = self.needs(&[xi]);
        Ok(self.push(vec![x.shape()[0], x.shape()[1], 2], out, needs, Op::ToComplex(xi)))
    }

    /// Real part of a `[T, C, 2]` tensor.
    pub fn real_part(&mut self, x: &Tensor) -> Result<Tensor> {
        Self::check_complex("real_part", x)?;
        let out = x.data().chunks(2).map(|z| z[0]).collect();
        let xi = self.id(x);
        let needs = self.needs(&[xi]);
        Ok(self.push(vec![x.shape()[0], x.shape()[1]], out, needs, Op::RealPart(xi)))
    }

    fn check_complex(op: &'static str, x: &Tensor) -> Result<()> {
        if x.rank() != 3 || x.shape()[2] != 2 {
            return Err(Error::shape(op, format!("expected [T, C, 2], got {:?}", x.shape())));
        }
        Ok(())
    }

    /// Forward DFT of each channel of a `[T, C, 2]` tensor along the token
    /// axis.
    pub fn dft(&mut self, x: &Tensor) -> Result<Tensor> {
        Self::check_complex("dft", x)?;
        let out = transform_columns(x.shape(), x.data(), forward_dft);
        let xi = self.id(x);
        let needs = self.needs(&[xi]);
        Ok(self.push(x.shape().to_vec(), out, needs, Op::Dft(xi)))
    }

    /// Inverse DFT (with `1/N`) of each channel along the token axis.
    pub fn idft(&mut self, x: &Tensor) -> Result<Tensor> {
        Self::check_complex("idft", x)?;
        let out = transform_columns(x.shape(), x.data(), inverse_dft);
        let xi = self.id(x);
        let needs = self.needs(&[xi]);
        Ok(self.push(x.shape().to_vec(), out, needs, Op::Idft(xi)))
    }

    /// Scales bin `k` of every channel of a `[T, C, 2]` spectrum by the
    /// real `kernel[k]`.
    pub fn mul_bins(&mut self, x: &Tensor, kernel: &Tensor) -> Result<Tensor> {
        Self::check_complex("mul_bins", x)?;
        if kernel.rank() != 1 || kernel.numel() != x.shape()[0] {
            return Err(Error::shape(
                "mul_bins",
                format!("kernel {:?} for spectrum {:?}", kernel.shape(), x.shape()),
            ));
        }
        let per_bin = x.shape()[1] * 2;
        let out = x
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v * kernel.data()[i / per_bin])
            .collect();
        let (xi, ki) = (self.id(x), self.id(kernel));
        let needs = self.needs(&[xi, ki]);
        Ok(self.push(x.shape().to_vec(), out, needs, Op::MulBins(xi, ki)))
    }

    /// Elementwise focal binary cross-entropy terms. `labels[i]` marks
    /// element `i` as positive. Every probability must lie in `(0, 1)`.
    pub fn focal_terms(&mut self, p: &Tensor, labels: &[bool], w_pos: f64, w_neg: f64, gamma: f64) -> Result<Tensor> {
        if labels.len() != p.numel() {
            return Err(Error::shape(
                "focal_terms",
                format!("{} labels for {} probabilities", labels.len(), p.numel()),
            ));
        }
        if let Some((i, v)) = p.data().iter().enumerate().find(|(_, v)| !(**v > 0.0 && **v < 1.0)) {
            return Err(Error::invalid(format!(
                "focal loss needs probabilities in (0, 1); element {i} is {v}"
            )));
        }
        let out = p
            .data()
            .iter()
            .zip(labels)
            .map(|(&v, &pos)| focal::term(v, pos, w_pos, w_neg, gamma))
            .collect();
        let pi = self.id(p);
        let needs = self.needs(&[pi]);
        Ok(self.push(
            p.shape().to_vec(),
            out,
            needs,
            Op::FocalTerms {
                p: pi,
                labels: labels.to_vec(),
                w_pos,
                w_neg,
                gamma,
            },
        ))
    }

    /// Per-row `1 - GIoU` between predicted `[n, 4]` center-size boxes and
    /// constant targets. Output shape `[n]`.
    pub fn giou_loss(&mut self, pred: &Tensor, target: &[[f64; 4]]) -> Result<Tensor> {
        if pred.rank() != 2 || pred.shape()[1] != 4 || pred.shape()[0] != target.len() {
            return Err(Error::shape(
                "giou_loss",
                format!("pred {:?} vs {} targets", pred.shape(), target.len()),
            ));
        }
        let out = pred
            .data()
            .chunks(4)
            .zip(target)
            .map(|(p, t)| giou_loss_and_grad(p, t).0)
            .collect();
        let pi = self.id(pred);
        let needs = self.needs(&[pi]);
        Ok(self.push(
            vec![target.len()],
            out,
            needs,
            Op::GiouLoss {
                pred: pi,
                target: target.to_vec(),
            },
        ))
    }

    /// Gathers rows of a rank-2 tensor; indices may repeat.
    pub fn select_rows(&mut self, x: &Tensor, rows: &[usize]) -> Result<Tensor> {
        if x.rank() != 2 || rows.iter().any(|&r| r >= x.shape()[0]) {
            return Err(Error::shape("select_rows", format!("rows {rows:?} of {:?}", x.shape())));
        }
        let c = x.shape()[1];
        let mut out = Vec::with_capacity(rows.len() * c);
        for &r in rows {
            out.extend_from_slice(x.row(r));
        }
        let xi = self.id(x);
        let needs = self.needs(&[xi]);
        Ok(self.push(vec![rows.len(), c], out, needs, Op::SelectRows(xi, rows.to_vec())))
    }

    /// Stacks rank-1 tensors of equal length into a matrix.
    pub fn stack_rows(&mut self, rows: &[Tensor]) -> Result<Tensor> {
        let c = rows.first().map(Tensor::numel).unwrap_or(0);
        if rows.is_empty() || rows.iter().any(|r| r.rank() != 1 || r.numel() != c) {
            return Err(Error::shape("stack_rows", "need one or more equal-length vectors"));
        }
        let out = rows.iter().flat_map(|r| r.data().iter().copied()).collect();
        let ids: Vec<NodeId> = rows.iter().map(|r| self.id(r)).collect();
        let needs = self.needs(&ids);
        Ok(self.push(vec![rows.len(), c], out, needs, Op::StackRows(ids)))
    }

    pub fn reshape(&mut self, x: &Tensor, shape: &[usize]) -> Result<Tensor> {
        if shape.iter().product::<usize>() != x.numel() || shape.is_empty() || shape.len() > 3 {
            return Err(Error::shape("reshape", format!("{:?} -> {:?}", x.shape(), shape)));
        }
        let xi = self.id(x);
        let needs = self.needs(&[xi]);
        Ok(self.push(shape.to_vec(), x.data().to_vec(), needs, Op::Reshape(xi)))
    }

    /// Reverse pass from a one-element `loss`. Contributions are summed at
    /// fan-in.
    pub fn backward(&self, loss: &Tensor) -> Result<Gradients> {
        if loss.numel() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss.shape()
            )));
        }
        let root = match loss.node() {
            Some(id) if id.0 < self.nodes.len() => id,
            _ => return Err(Error::invalid("loss was not recorded on this tape")),
        };
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![1.0]);
        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let g = match &grads[idx] {
                Some(g) => g.clone(),
                None => continue,
            };
            let faulty = self.fault == Some(node.op.kind());
            for (input, mut contribution) in self.local_grads(idx, &g) {
                if !self.nodes[input.0].needs_grad {
                    continue;
                }
                if faulty {
                    contribution.iter_mut().for_each(|v| *v *= 1.5);
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.iter_mut().zip(&contribution).for_each(|(a, c)| *a += c),
                    slot @ None => *slot = Some(contribution),
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].value
    }

    fn shape_of(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    fn local_grads(&self, idx: usize, g: &[f64]) -> Vec<(NodeId, Vec<f64>)> {
        let node = &self.nodes[idx];
        let y = &node.value;
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape_of(*a)[0], self.shape_of(*a)[1]);
                let n = self.shape_of(*b)[1];
                let (ad, bd) = (self.value(*a), self.value(*b));
                let mut da = vec![0.0; m * k];
                let mut db = vec![0.0; k * n];
                for i in 0..m {
                    for p in 0..k {
                        let mut acc = 0.0;
                        for j in 0..n {
                            acc += g[i * n + j] * bd[p * n + j];
                            db[p * n + j] += ad[i * k + p] * g[i * n + j];
                        }
                        da[i * k + p] = acc;
                    }
                }
                vec![(*a, da), (*b, db)]
            }
            Op::Transpose(x) => {
                let (m, n) = (self.shape_of(*x)[0], self.shape_of(*x)[1]);
                let mut dx = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        dx[i * n + j] = g[j * m + i];
                    }
                }
                vec![(*x, dx)]
            }
            Op::Add(a, b) => vec![(*a, g.to_vec()), (*b, g.to_vec())],
            Op::Sub(a, b) => vec![(*a, g.to_vec()), (*b, g.iter().map(|v| -v).collect())],
            Op::AddRow(x, r) => {
                let c = self.value(*r).len();
                let mut dr = vec![0.0; c];
                for (i, v) in g.iter().enumerate() {
                    dr[i % c] += v;
                }
                vec![(*x, g.to_vec()), (*r, dr)]
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                vec![
                    (*a, g.iter().zip(bv).map(|(g, b)| g * b).collect()),
                    (*b, g.iter().zip(av).map(|(g, a)| g * a).collect()),
                ]
            }
            Op::MulRow(x, r) => {
                let (xv, rv) = (self.value(*x), self.value(*r));
                let c = rv.len();
                let mut dr = vec![0.0; c];
                let mut dx = vec![0.0; xv.len()];
                for i in 0..xv.len() {
                    dx[i] = g[i] * rv[i % c];
                    dr[i % c] += g[i] * xv[i];
                }
                vec![(*x, dx), (*r, dr)]
            }
            Op::MulScalar(x, s) => {
                let (xv, sv) = (self.value(*x), self.value(*s)[0]);
                let ds = g.iter().zip(xv).map(|(g, x)| g * x).sum();
                vec![(*x, g.iter().map(|v| v * sv).collect()), (*s, vec![ds])]
            }
            Op::AddScalar(x, s) => vec![(*x, g.to_vec()), (*s, vec![g.iter().sum()])],
            Op::Scale(x, f) => vec![(*x, g.iter().map(|v| v * f).collect())],
            Op::Sigmoid(x) => vec![(*x, g.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect())],
            Op::Tanh(x) => vec![(*x, g.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect())],
            Op::Exp(x) => vec![(*x, g.iter().zip(y).map(|(g, y)| g * y).collect())],
            Op::Abs(x) => {
                let xv = self.value(*x);
                let sign = |v: f64| if v > 0.0 { 1.0 } else if v < 0.0 { -1.0 } else { 0.0 };
                vec![(*x, g.iter().zip(xv).map(|(g, &x)| g * sign(x)).collect())]
            }
            Op::Softmax(x, axis) => {
                let (outer, len, inner) = split_axis(&node.shape, *axis);
                let mut dx = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |l: usize| (o * len + l) * inner + i;
                        let dot: f64 = (0..len).map(|l| g[at(l)] * y[at(l)]).sum();
                        for l in 0..len {
                            dx[at(l)] = y[at(l)] * (g[at(l)] - dot);
                        }
                    }
                }
                vec![(*x, dx)]
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let gv = self.value(*gain);
                let c = gv.len();
                let rows = xhat.len() / c;
                let mut dx = vec![0.0; xhat.len()];
                let mut dgain = vec![0.0; c];
                let mut dbias = vec![0.0; c];
                for r in 0..rows {
                    let mut sum_d = 0.0;
                    let mut sum_dh = 0.0;
                    for j in 0..c {
                        let i = r * c + j;
                        let dh = g[i] * gv[j];
                        sum_d += dh;
                        sum_dh += dh * xhat[i];
                        dgain[j] += g[i] * xhat[i];
                        dbias[j] += g[i];
                    }
                    for j in 0..c {
                        let i = r * c + j;
                        let dh = g[i] * gv[j];
                        dx[i] = inv_std[r] * (dh - sum_d / c as f64 - xhat[i] * sum_dh / c as f64);
                    }
                }
                vec![(*x, dx), (*gain, dgain), (*bias, dbias)]
            }
            Op::Mean(x, axis) => {
                let (outer, len, inner) = split_axis(self.shape_of(*x), *axis);
                let mut dx = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    for l in 0..len {
                        for i in 0..inner {
                            dx[(o * len + l) * inner + i] = g[o * inner + i] / len as f64;
                        }
                    }
                }
                vec![(*x, dx)]
            }
            Op::MeanAll(x) => {
                let n = self.value(*x).len();
                vec![(*x, vec![g[0] / n as f64; n])]
            }
            Op::Sum(x) => vec![(*x, vec![g[0]; self.value(*x).len()])],
            Op::L2Normalize { x, norms } => {
                let c = *node.shape.last().expect("rank >= 1");
                let mut dx = vec![0.0; y.len()];
                for (r, &n) in norms.iter().enumerate() {
                    if n == 0.0 {
                        continue;
                    }
                    let span = r * c..(r + 1) * c;
                    let dot: f64 = g[span.clone()].iter().zip(&y[span.clone()]).map(|(a, b)| a * b).sum();
                    for i in span {
                        dx[i] = (g[i] - y[i] * dot) / n;
                    }
                }
                vec![(*x, dx)]
            }
            Op::Conv1d(x, w) => {
                let shape = self.shape_of(*x);
                let (t, c) = (shape[0], shape[1]);
                let p = if shape.len() == 3 { shape[2] } else { 1 };
                let k = self.shape_of(*w)[1];
                let pad = k / 2;
                let (xd, wd) = (self.value(*x), self.value(*w));
                let mut dx = vec![0.0; xd.len()];
                let mut dw = vec![0.0; wd.len()];
                for ti in 0..t {
                    for ch in 0..c {
                        for j in 0..k {
                            let src = ti as isize + j as isize - pad as isize;
                            if src < 0 || src >= t as isize {
                                continue;
                            }
                            let src = src as usize;
                            for q in 0..p {
                                let go = g[(ti * c + ch) * p + q];
                                dx[(src * c + ch) * p + q] += wd[ch * k + j] * go;
                                dw[ch * k + j] += xd[(src * c + ch) * p + q] * go;
                            }
                        }
                    }
                }
                vec![(*x, dx), (*w, dw)]
            }
            Op::ToComplex(x) => vec![(*x, g.chunks(2).map(|z| z[0]).collect())],
            Op::RealPart(x) => {
                let mut dx = vec![0.0; g.len() * 2];
                for (i, v) in g.iter().enumerate() {
                    dx[2 * i] = *v;
                }
                vec![(*x, dx)]
            }
            // the adjoint of the forward transform is the unnormalized inverse
            Op::Dft(x) => vec![(*x, transform_columns(&node.shape, g, spectral::inverse_unnormalized))],
            Op::Idft(x) => {
                let n = node.shape[0] as f64;
                let dx = transform_columns(&node.shape, g, forward_dft)
                    .into_iter()
                    .map(|v| v / n)
                    .collect();
                vec![(*x, dx)]
            }
            Op::MulBins(x, k) => {
                let (xv, kv) = (self.value(*x), self.value(*k));
                let per_bin = node.shape[1] * 2;
                let mut dx = vec![0.0; xv.len()];
                let mut dk = vec![0.0; kv.len()];
                for i in 0..xv.len() {
                    dx[i] = g[i] * kv[i / per_bin];
                    dk[i / per_bin] += g[i] * xv[i];
                }
                vec![(*x, dx), (*k, dk)]
            }
            Op::FocalTerms {
                p,
                labels,
                w_pos,
                w_neg,
                gamma,
            } => {
                let pv = self.value(*p);
                let dp = pv
                    .iter()
                    .zip(labels)
                    .zip(g)
                    .map(|((&v, &pos), g)| g * focal::derivative(v, pos, *w_pos, *w_neg, *gamma))
                    .collect();
                vec![(*p, dp)]
            }
            Op::GiouLoss { pred, target } => {
                let pv = self.value(*pred);
                let mut dp = vec![0.0; pv.len()];
                for (i, t) in target.iter().enumerate() {
                    let (_, grad) = giou_loss_and_grad(&pv[i * 4..i * 4 + 4], t);
                    for j in 0..4 {
                        dp[i * 4 + j] = g[i] * grad[j];
                    }
                }
                vec![(*pred, dp)]
            }
            Op::SelectRows(x, rows) => {
                let shape = self.shape_of(*x);
                let c = shape[1];
                let mut dx = vec![0.0; shape[0] * c];
                for (i, &r) in rows.iter().enumerate() {
                    for j in 0..c {
                        dx[r * c + j] += g[i * c + j];
                    }
                }
                vec![(*x, dx)]
            }
            Op::StackRows(ids) => {
                let c = node.shape[1];
                ids.iter()
                    .enumerate()
                    .map(|(i, id)| (*id, g[i * c..(i + 1) * c].to_vec()))
                    .collect()
            }
            Op::Reshape(x) => vec![(*x, g.to_vec())],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grad_of(tape: &Tape, loss: &Tensor, x: &Tensor) -> Vec<f64> {
        tape.backward(loss).unwrap().get(x).unwrap().into_data()
    }

    #[test]
    fn matmul_identity_and_hand_product() {
        let mut tape = Tape::new();
        let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let i2 = Tensor::identity(2);
        assert_eq!(tape.matmul(&a, &i2).unwrap().data(), a.data());
        let b = Tensor::from_rows(&[vec![5.0], vec![6.0]]).unwrap();
        let c = tape.matmul(&a, &b).unwrap();
        assert_eq!(c.shape(), &[2, 1]);
        assert_eq!(c.data(), &[17.0, 39.0]);
    }

    #[test]
    fn matmul_rejects_inner_mismatch() {
        let mut tape = Tape::new();
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 3]);
        assert!(matches!(tape.matmul(&a, &b), Err(Error::Shape { .. })));
    }

    #[test]
    fn softmax_examples() {
        let mut tape = Tape::new();
        let s = tape.softmax(&Tensor::vector(vec![0.0; 3]), 0).unwrap();
        for v in s.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let s = tape.softmax(&Tensor::vector(vec![0.0, 3f64.ln()]), 0).unwrap();
        assert!((s.data()[0] - 0.25).abs() < 1e-15);
        assert!((s.data()[1] - 0.75).abs() < 1e-15);
        let x = Tensor::vector(vec![0.3, -1.2, 2.0]);
        let shifted = Tensor::vector(x.data().iter().map(|v| v + 40.0).collect());
        let a = tape.softmax(&x, 0).unwrap();
        let b = tape.softmax(&shifted, 0).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-15);
        assert!(tape.softmax(&x, 1).is_err());
    }

    #[test]
    fn layer_norm_constant_row_is_zero() {
        let mut tape = Tape::new();
        let x = Tensor::filled(&[2, 4], 3.0);
        let y = tape
            .layer_norm(&x, &Tensor::filled(&[4], 1.0), &Tensor::zeros(&[4]), 1e-5)
            .unwrap();
        assert!(y.data().iter().all(|v| *v == 0.0));
        assert!(tape
            .layer_norm(&x, &Tensor::filled(&[4], 1.0), &Tensor::zeros(&[4]), 0.0)
            .is_err());
    }

    #[test]
    fn sum_and_product_rules() {
        let mut tape = Tape::new();
        let x = tape.param(&Tensor::vector(vec![1.0, -2.0, 0.5]));
        let y = tape.param(&Tensor::vector(vec![4.0, 5.0, 6.0]));
        let s = tape.sum(&x);
        assert_eq!(grad_of(&tape, &s, &x), vec![1.0; 3]);
        let p = tape.mul(&x, &y).unwrap();
        let l = tape.sum(&p);
        assert_eq!(grad_of(&tape, &l, &x), y.data().to_vec());
    }

    #[test]
    fn fan_out_accumulates() {
        let mut tape = Tape::new();
        let x = tape.param(&Tensor::scalar(1.7));
        let y = tape.add(&x, &x).unwrap();
        assert_eq!(grad_of(&tape, &y, &x), vec![2.0]);
    }

    #[test]
    fn non_participating_params_get_zero_and_constants_none() {
        let mut tape = Tape::new();
        let x = tape.param(&Tensor::vector(vec![1.0, 2.0]));
        let unused = tape.param(&Tensor::vector(vec![3.0]));
        let c = tape.constant(&Tensor::vector(vec![1.0, 1.0]));
        let p = tape.mul(&x, &c).unwrap();
        let l = tape.sum(&p);
        let grads = tape.backward(&l).unwrap();
        assert_eq!(grads.get(&unused).unwrap().data(), &[0.0]);
        assert!(grads.get(&c).is_none());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let x = tape.param(&Tensor::vector(vec![1.0, 2.0]));
        let y = tape.scale(&x, 2.0);
        assert!(matches!(tape.backward(&y), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn l2_normalize_zero_row_passes_through() {
        let mut tape = Tape::new();
        let x = tape.param(&Tensor::from_rows(&[vec![0.0, 0.0], vec![3.0, 4.0]]).unwrap());
        let y = tape.l2_normalize(&x);
        assert_eq!(y.data(), &[0.0, 0.0, 0.6, 0.8]);
        let l = tape.sum(&y);
        let g = grad_of(&tape, &l, &x);
        assert_eq!(&g[..2], &[0.0, 0.0]);
    }

    #[test]
    fn conv1d_identity_kernel_and_padding() {
        let mut tape = Tape::new();
        let x = Tensor::from_rows(&[vec![1.0, 10.0], vec![2.0, 20.0], vec![3.0, 30.0]]).unwrap();
        let ident = Tensor::from_rows(&[vec![0.0, 1.0, 0.0], vec![0.0, 1.0, 0.0]]).unwrap();
        assert_eq!(tape.conv1d(&x, &ident).unwrap().data(), x.data());
        let shift = Tensor::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
        // channel 0 reads t-1, channel 1 reads t+1, zero outside
        assert_eq!(
            tape.conv1d(&x, &shift).unwrap().data(),
            &[0.0, 20.0, 1.0, 30.0, 2.0, 0.0]
        );
        let even = Tensor::zeros(&[2, 2]);
        assert!(tape.conv1d(&x, &even).is_err());
    }

    #[test]
    fn dft_round_trip_on_tape() {
        let mut tape = Tape::new();
        let x = Tensor::from_rows(&[vec![1.0, 0.5], vec![-2.0, 0.0], vec![0.25, 3.0]]).unwrap();
        let z = tape.to_complex(&x).unwrap();
        let f = tape.dft(&z).unwrap();
        let b = tape.idft(&f).unwrap();
        let r = tape.real_part(&b).unwrap();
        assert!(r.max_abs_diff(&x) < 1e-12);
    }

    #[test]
    fn focal_terms_reject_out_of_range() {
        let mut tape = Tape::new();
        let p = Tensor::vector(vec![0.5, 1.0]);
        assert!(matches!(
            tape.focal_terms(&p, &[true, false], 1.0, 1.0, 2.0),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn giou_loss_identical_boxes_is_zero() {
        let mut tape = Tape::new();
        let b = [0.5, 0.5, 0.2, 0.4];
        let p = Tensor::from_rows(&[b.to_vec()]).unwrap();
        let l = tape.giou_loss(&p, &[b]).unwrap();
        assert!(l.data()[0].abs() < 1e-15);
    }

    #[test]
    fn fault_injection_changes_gradient() {
        let build = |fault: Option<OpKind>| {
            let mut tape = Tape::new();
            tape.set_fault(fault);
            let x = tape.param(&Tensor::vector(vec![0.3, -0.7]));
            let y = tape.sigmoid(&x);
            let l = tape.sum(&y);
            tape.backward(&l).unwrap().get(&x).unwrap().into_data()
        };
        let clean = build(None);
        let broken = build(Some(OpKind::Sigmoid));
        assert!((broken[0] / clean[0] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn op_names_round_trip() {
        for k in OpKind::ALL {
            assert_eq!(OpKind::from_name(k.name()), Some(k));
        }
    }
}
