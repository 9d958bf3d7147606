use std::collections::BTreeMap;

use super::broadcast::{broadcast_offsets, split_axis, strides};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Primitive kinds, used for introspection of recorded graphs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum OpKind {
    Leaf,
    Constant,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Scale,
    AddScalar,
    Exp,
    Ln,
    Tanh,
    Sigmoid,
    LogCosh,
    Prelu,
    Matmul,
    Permute,
    Reshape,
    Slice,
    Concat,
    Sum,
    SumAxis,
    Softmax,
    ConvTime,
    Conv2d,
    BilinearSample,
    NormalizedLaplacian,
    EighValues,
    EighVectors,
}

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf,
    Constant,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    AddScalar(Var),
    Exp(Var),
    Ln(Var),
    Tanh(Var),
    Sigmoid(Var),
    LogCosh(Var),
    Prelu { x: Var, slope: Var, inner: usize },
    Matmul(Var, Var),
    Permute { x: Var, perm: Vec<usize> },
    Reshape(Var),
    Slice { x: Var, axis: usize, start: usize },
    Concat { xs: Vec<Var>, axis: usize },
    Sum(Var),
    SumAxis { x: Var, axis: usize },
    Softmax { x: Var, axis: usize },
    ConvTime { x: Var, k: Var },
    Conv2d { x: Var, w: Var },
    BilinearSample { x: Var, points: Vec<(f64, f64)> },
    NormalizedLaplacian { e: Var, inv_sqrt_deg: Vec<f64> },
    EighValues { a: Var, u: Tensor },
    EighVectors { a: Var, u: Tensor, lambdas: Vec<f64>, eps: f64 },
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Constant => OpKind::Constant,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::Div(..) => OpKind::Div,
            Op::Neg(_) => OpKind::Neg,
            Op::Scale(..) => OpKind::Scale,
            Op::AddScalar(_) => OpKind::AddScalar,
            Op::Exp(_) => OpKind::Exp,
            Op::Ln(_) => OpKind::Ln,
            Op::Tanh(_) => OpKind::Tanh,
            Op::Sigmoid(_) => OpKind::Sigmoid,
            Op::LogCosh(_) => OpKind::LogCosh,
            Op::Prelu { .. } => OpKind::Prelu,
            Op::Matmul(..) => OpKind::Matmul,
            Op::Permute { .. } => OpKind::Permute,
            Op::Reshape(_) => OpKind::Reshape,
            Op::Slice { .. } => OpKind::Slice,
            Op::Concat { .. } => OpKind::Concat,
            Op::Sum(_) => OpKind::Sum,
            Op::SumAxis { .. } => OpKind::SumAxis,
            Op::Softmax { .. } => OpKind::Softmax,
            Op::ConvTime { .. } => OpKind::ConvTime,
            Op::Conv2d { .. } => OpKind::Conv2d,
            Op::BilinearSample { .. } => OpKind::BilinearSample,
            Op::NormalizedLaplacian { .. } => OpKind::NormalizedLaplacian,
            Op::EighValues { .. } => OpKind::EighValues,
            Op::EighVectors { .. } => OpKind::EighVectors,
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf | Op::Constant => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) | Op::Matmul(a, b) => {
                vec![*a, *b]
            }
            Op::Neg(a)
            | Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Exp(a)
            | Op::Ln(a)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::LogCosh(a)
            | Op::Reshape(a)
            | Op::Sum(a) => vec![*a],
            Op::Prelu { x, slope, .. } => vec![*x, *slope],
            Op::Permute { x, .. }
            | Op::Slice { x, .. }
            | Op::SumAxis { x, .. }
            | Op::Softmax { x, .. }
            | Op::BilinearSample { x, .. } => vec![*x],
            Op::Concat { xs, .. } => xs.clone(),
            Op::ConvTime { x, k } => vec![*x, *k],
            Op::Conv2d { x, w } => vec![*x, *w],
            Op::NormalizedLaplacian { e, .. } => vec![*e],
            Op::EighValues { a, .. } | Op::EighVectors { a, .. } => vec![*a],
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Node {
    pub(crate) value: Tensor,
    pub(crate) op: Op,
    pub(crate) requires_grad: bool,
}

/// Ordered record of primitive applications.
///
/// Nodes are appended as operations run, so every node's inputs precede it.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    pub(crate) nodes: Vec<Node>,
}

/// Gradients of one backward pass, indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
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

    /// Records a differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, true)
    }

    /// Records a value that never receives gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Constant, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Number of recorded nodes per primitive kind.
    pub fn op_counts(&self) -> BTreeMap<OpKind, usize> {
        let mut m = BTreeMap::new();
        for n in &self.nodes {
            *m.entry(n.op.kind()).or_insert(0) += 1;
        }
        m
    }

    pub fn count(&self, kind: OpKind) -> usize {
        self.nodes.iter().filter(|n| n.op.kind() == kind).count()
    }

    /// Outputs of every node of `kind`, in tape order.
    pub fn vars_of(&self, kind: OpKind) -> Vec<Var> {
        (0..self.nodes.len()).filter(|&i| self.nodes[i].op.kind() == kind).map(Var).collect()
    }

    /// Which side of the kink every PReLU input entry is on, in tape order.
    /// Two evaluations with the same pattern lie on one smooth piece.
    pub fn activation_pattern(&self) -> Vec<bool> {
        let mut bits = Vec::new();
        for n in &self.nodes {
            if let Op::Prelu { x, .. } = n.op {
                bits.extend(self.nodes[x.0].value.data().iter().map(|&v| v > 0.0));
            }
        }
        bits
    }

    fn push_raw(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn push(&mut self, value: Tensor, op: Op) -> Var {
        let rg = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.push_raw(value, op, rg)
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = &self.nodes[loss.0].value;
        if lv.len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.backward_node(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backward_node(&self, id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[id];
        let out = &node.value;
        let val = |v: &Var| &self.nodes[v.0].value;
        let rg = |v: &Var| self.nodes[v.0].requires_grad;
        let mut acc = |v: &Var, t: Tensor| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => {
                    for (e, x) in existing.data_mut().iter_mut().zip(t.data()) {
                        *e += x;
                    }
                }
                slot @ None => *slot = Some(t),
            }
        };
        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if rg(a) {
                    acc(a, reduce_to(g, val(a).shape(), |_, x| x));
                }
                if rg(b) {
                    acc(b, reduce_to(g, val(b).shape(), |_, x| sign * x));
                }
            }
            Op::Mul(a, b) | Op::Div(a, b) => {
                let (av, bv) = (val(a), val(b));
                let oa = broadcast_offsets(av.shape(), out.shape());
                let ob = broadcast_offsets(bv.shape(), out.shape());
                let is_div = matches!(node.op, Op::Div(..));
                if rg(a) {
                    let mut ga = Tensor::zeros(av.shape());
                    let gd = ga.data_mut();
                    for i in 0..g.len() {
                        let bb = bv.data()[ob[i]];
                        gd[oa[i]] += if is_div { g.data()[i] / bb } else { g.data()[i] * bb };
                    }
                    acc(a, ga);
                }
                if rg(b) {
                    let mut gb = Tensor::zeros(bv.shape());
                    let gd = gb.data_mut();
                    for i in 0..g.len() {
                        let aa = av.data()[oa[i]];
                        gd[ob[i]] += if is_div {
                            let bb = bv.data()[ob[i]];
                            -g.data()[i] * aa / (bb * bb)
                        } else {
                            g.data()[i] * aa
                        };
                    }
                    acc(b, gb);
                }
            }
            Op::Neg(a) => acc(a, g.map(|x| -x)),
            Op::Scale(a, s) => acc(a, g.map(|x| x * s)),
            Op::AddScalar(a) => acc(a, g.clone()),
            Op::Exp(a) => acc(a, zip_map(g, out, |gi, y| gi * y)),
            Op::Ln(a) => acc(a, zip_map(g, val(a), |gi, x| gi / x)),
            Op::Tanh(a) => acc(a, zip_map(g, out, |gi, y| gi * (1.0 - y * y))),
            Op::Sigmoid(a) => acc(a, zip_map(g, out, |gi, y| gi * y * (1.0 - y))),
            Op::LogCosh(a) => acc(a, zip_map(g, val(a), |gi, x| gi * x.tanh())),
            Op::Prelu { x, slope, inner } => {
                let xv = val(x);
                let sv = val(slope);
                let c = sv.len();
                let ch = |i: usize| (i / inner) % c;
                if rg(x) {
                    let mut gx = Tensor::zeros(xv.shape());
                    for (i, gxi) in gx.data_mut().iter_mut().enumerate() {
                        let xi = xv.data()[i];
                        *gxi = if xi > 0.0 { g.data()[i] } else { sv.data()[ch(i)] * g.data()[i] };
                    }
                    acc(x, gx);
                }
                if rg(slope) {
                    let mut gs = Tensor::zeros(sv.shape());
                    for i in 0..xv.len() {
                        let xi = xv.data()[i];
                        if xi <= 0.0 {
                            gs.data_mut()[ch(i)] += xi * g.data()[i];
                        }
                    }
                    acc(slope, gs);
                }
            }
            Op::Matmul(a, b) => {
                let (ga, gb) = matmul_backward(val(a), val(b), g, rg(a), rg(b));
                if let Some(ga) = ga {
                    acc(a, ga);
                }
                if let Some(gb) = gb {
                    acc(b, gb);
                }
            }
            Op::Permute { x, perm } => {
                let mut inv = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inv[p] = i;
                }
                acc(x, permute_tensor(g, &inv));
            }
            Op::Reshape(x) => {
                let gx = Tensor::new(val(x).shape().to_vec(), g.data().to_vec())
                    .expect("reshape backward");
                acc(x, gx);
            }
            Op::Slice { x, axis, start } => {
                let xs = val(x).shape();
                let (outer, len_in, inner) = split_axis(xs, *axis);
                let len_out = out.shape()[*axis];
                let mut gx = Tensor::zeros(xs);
                let gd = gx.data_mut();
                for o in 0..outer {
                    let src = o * len_out * inner;
                    let dst = (o * len_in + start) * inner;
                    gd[dst..dst + len_out * inner].copy_from_slice(&g.data()[src..src + len_out * inner]);
                }
                acc(x, gx);
            }
            Op::Concat { xs, axis } => {
                let (outer, len_out, inner) = split_axis(out.shape(), *axis);
                let mut off = 0;
                for x in xs {
                    let len = val(x).shape()[*axis];
                    if rg(x) {
                        let mut gx = Tensor::zeros(val(x).shape());
                        let gd = gx.data_mut();
                        for o in 0..outer {
                            let src = (o * len_out + off) * inner;
                            let dst = o * len * inner;
                            gd[dst..dst + len * inner].copy_from_slice(&g.data()[src..src + len * inner]);
                        }
                        acc(x, gx);
                    }
                    off += len;
                }
            }
            Op::Sum(x) => acc(x, Tensor::full(val(x).shape(), g.item())),
            Op::SumAxis { x, axis } => {
                let xs = val(x).shape();
                let (outer, len, inner) = split_axis(xs, *axis);
                let mut gx = Tensor::zeros(xs);
                let gd = gx.data_mut();
                for o in 0..outer {
                    for l in 0..len {
                        for i in 0..inner {
                            gd[(o * len + l) * inner + i] = g.data()[o * inner + i];
                        }
                    }
                }
                acc(x, gx);
            }
            Op::Softmax { x, axis } => {
                let (outer, len, inner) = split_axis(out.shape(), *axis);
                let mut gx = Tensor::zeros(out.shape());
                let gd = gx.data_mut();
                let y = out.data();
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |l: usize| (o * len + l) * inner + i;
                        let dot: f64 = (0..len).map(|l| g.data()[idx(l)] * y[idx(l)]).sum();
                        for l in 0..len {
                            gd[idx(l)] = y[idx(l)] * (g.data()[idx(l)] - dot);
                        }
                    }
                }
                acc(x, gx);
            }
            Op::ConvTime { x, k } => {
                let (gx, gk) = super::ops::conv_time_backward(val(x), val(k), g, rg(x), rg(k));
                if let Some(gx) = gx {
                    acc(x, gx);
                }
                if let Some(gk) = gk {
                    acc(k, gk);
                }
            }
            Op::Conv2d { x, w } => {
                let (gx, gw) = super::ops::conv2d_backward(val(x), val(w), g, rg(x), rg(w));
                if let Some(gx) = gx {
                    acc(x, gx);
                }
                if let Some(gw) = gw {
                    acc(w, gw);
                }
            }
            Op::BilinearSample { x, points } => {
                acc(x, super::ops::bilinear_backward(val(x).shape(), points, g));
            }
            Op::NormalizedLaplacian { e, inv_sqrt_deg } => {
                acc(e, laplacian_backward(val(e), inv_sqrt_deg, g));
            }
            Op::EighValues { a, u } => {
                acc(a, crate::spectral::eigen::eigenvalues_backward(u, g));
            }
            Op::EighVectors { a, u, lambdas, eps } => {
                acc(a, crate::spectral::eigen::eigenvectors_backward(u, lambdas, g, *eps));
            }
        }
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("zip_map shapes")
}

/// Sums a broadcast gradient back onto `shape`.
fn reduce_to(g: &Tensor, shape: &[usize], f: impl Fn(usize, f64) -> f64) -> Tensor {
    if g.shape() == shape {
        return Tensor::new(shape.to_vec(), g.data().iter().enumerate().map(|(i, &x)| f(i, x)).collect())
            .expect("reduce_to");
    }
    let offs = broadcast_offsets(shape, g.shape());
    let mut out = Tensor::zeros(shape);
    let od = out.data_mut();
    for (i, &x) in g.data().iter().enumerate() {
        od[offs[i]] += f(i, x);
    }
    out
}

pub(crate) fn permute_tensor(x: &Tensor, perm: &[usize]) -> Tensor {
    let xs = x.shape();
    let out_shape: Vec<usize> = perm.iter().map(|&p| xs[p]).collect();
    let in_strides = strides(xs);
    let pst: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let n = x.len();
    let nd = out_shape.len();
    let mut data = Vec::with_capacity(n);
    let mut idx = vec![0usize; nd];
    let mut cur = 0usize;
    for _ in 0..n {
        data.push(x.data()[cur]);
        for ax in (0..nd).rev() {
            idx[ax] += 1;
            cur += pst[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            cur -= pst[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    Tensor::new(out_shape, data).expect("permute")
}

pub(crate) struct MatmulDims {
    pub batch_shape: Vec<usize>,
    pub a_batch: Vec<usize>,
    pub b_batch: Vec<usize>,
    pub m: usize,
    pub k: usize,
    pub n: usize,
}

pub(crate) fn matmul_dims(a: &[usize], b: &[usize]) -> Result<MatmulDims> {
    let err = || Error::Dimension {
        op: "matmul",
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    };
    if a.len() < 2 || b.len() < 2 {
        return Err(err());
    }
    let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
    let (k2, n) = (b[b.len() - 2], b[b.len() - 1]);
    if k != k2 {
        return Err(err());
    }
    let ab = &a[..a.len() - 2];
    let bb = &b[..b.len() - 2];
    let batch_shape = super::broadcast::broadcast_shape("matmul", ab, bb).map_err(|_| err())?;
    let a_batch = broadcast_offsets(ab, &batch_shape);
    let b_batch = broadcast_offsets(bb, &batch_shape);
    Ok(MatmulDims {
        batch_shape,
        a_batch,
        b_batch,
        m,
        k,
        n,
    })
}

fn matmul_backward(
    a: &Tensor,
    b: &Tensor,
    g: &Tensor,
    need_a: bool,
    need_b: bool,
) -> (Option<Tensor>, Option<Tensor>) {
    let d = matmul_dims(a.shape(), b.shape()).expect("matmul dims validated in forward");
    let (m, k, n) = (d.m, d.k, d.n);
    let mut ga = need_a.then(|| Tensor::zeros(a.shape()));
    let mut gb = need_b.then(|| Tensor::zeros(b.shape()));
    for (bi, (&ao, &bo)) in d.a_batch.iter().zip(&d.b_batch).enumerate() {
        let a0 = ao * m * k;
        let b0 = bo * k * n;
        let g0 = bi * m * n;
        let gd = &g.data()[g0..g0 + m * n];
        if let Some(ga) = ga.as_mut() {
            // dA = G B^T
            let bd = &b.data()[b0..b0 + k * n];
            let gad = &mut ga.data_mut()[a0..a0 + m * k];
            for i in 0..m {
                for p in 0..k {
                    let mut s = 0.0;
                    for j in 0..n {
                        s += gd[i * n + j] * bd[p * n + j];
                    }
                    gad[i * k + p] += s;
                }
            }
        }
        if let Some(gb) = gb.as_mut() {
            // dB = A^T G
            let ad = &a.data()[a0..a0 + m * k];
            let gbd = &mut gb.data_mut()[b0..b0 + k * n];
            for i in 0..m {
                for p in 0..k {
                    let av = ad[i * k + p];
                    if av == 0.0 {
                        continue;
                    }
                    for j in 0..n {
                        gbd[p * n + j] += av * gd[i * n + j];
                    }
                }
            }
        }
    }
    (ga, gb)
}

fn laplacian_backward(e: &Tensor, s: &[f64], g: &Tensor) -> Tensor {
    // L_ij = delta_ij - s_i E_ij s_j, s_i = d_i^{-1/2}, d_i = sum_j E_ij
    let n = s.len();
    let ed = e.data();
    let gd = g.data();
    let mut ge = Tensor::zeros(&[n, n]);
    let mut s_bar = vec![0.0; n];
    {
        let ged = ge.data_mut();
        for i in 0..n {
            for j in 0..n {
                let gij = gd[i * n + j];
                ged[i * n + j] = -gij * s[i] * s[j];
                s_bar[i] -= gij * ed[i * n + j] * s[j];
                s_bar[j] -= gij * s[i] * ed[i * n + j];
            }
        }
    }
    let ged = ge.data_mut();
    for i in 0..n {
        if s[i] == 0.0 {
            continue;
        }
        // ds/dd = -1/2 d^{-3/2} = -1/2 s^3
        let d_bar = s_bar[i] * (-0.5 * s[i] * s[i] * s[i]);
        for j in 0..n {
            ged[i * n + j] += d_bar;
        }
    }
    ge
}
