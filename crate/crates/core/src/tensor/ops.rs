use super::broadcast::{broadcast_offsets, broadcast_shape, split_axis};
use super::tape::{matmul_dims, permute_tensor, Op, Tape, Var};
use super::Tensor;
use crate::error::{Error, Result};

/// Kernel shape `[L, c_in, c_out]` from either `[L, c_in, c_out]` or `[1, L, c_in, c_out]`.
fn time_kernel_dims(k: &[usize]) -> Option<(usize, usize, usize)> {
    match k {
        [l, ci, co] => Some((*l, *ci, *co)),
        [1, l, ci, co] => Some((*l, *ci, *co)),
        _ => None,
    }
}

impl Tape {
    fn binary(&self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() == bv.shape() {
            let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
            return Tensor::new(av.shape().to_vec(), data);
        }
        let shape = broadcast_shape(op, av.shape(), bv.shape())?;
        let oa = broadcast_offsets(av.shape(), &shape);
        let ob = broadcast_offsets(bv.shape(), &shape);
        let data = oa
            .iter()
            .zip(&ob)
            .map(|(&i, &j)| f(av.data()[i], bv.data()[j]))
            .collect();
        Tensor::new(shape, data)
    }

    /// Elementwise sum with broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary("add", a, b, |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary("sub", a, b, |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary("mul", a, b, |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b)))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary("div", a, b, |x, y| x / y)?;
        Ok(self.push(t, Op::Div(a, b)))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|x| -x);
        self.push(t, Op::Neg(a))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let t = self.value(a).map(|x| x * s);
        self.push(t, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let t = self.value(a).map(|x| x + s);
        self.push(t, Op::AddScalar(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let t = self.value(a).map(f64::exp);
        self.push(t, Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let t = self.value(a).map(f64::ln);
        self.push(t, Op::Ln(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.value(a).map(f64::tanh);
        self.push(t, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.value(a).map(sigmoid);
        self.push(t, Op::Sigmoid(a))
    }

    /// `ln(cosh(x))`, evaluated without overflow for large `|x|`.
    pub fn log_cosh(&mut self, a: Var) -> Var {
        let t = self.value(a).map(log_cosh);
        self.push(t, Op::LogCosh(a))
    }

    /// Parametric ReLU with one slope per channel of the last axis.
    pub fn prelu(&mut self, x: Var, slope: Var) -> Result<Var> {
        let nd = self.value(x).ndim();
        self.prelu_axis(x, slope, nd.saturating_sub(1))
    }

    /// Parametric ReLU with one slope per entry of `axis`.
    pub fn prelu_axis(&mut self, x: Var, slope: Var, axis: usize) -> Result<Var> {
        let (xv, sv) = (self.value(x), self.value(slope));
        if axis >= xv.ndim().max(1) || sv.ndim() != 1 || sv.len() != *xv.shape().get(axis).unwrap_or(&1) {
            return Err(Error::Dimension {
                op: "prelu",
                lhs: xv.shape().to_vec(),
                rhs: sv.shape().to_vec(),
            });
        }
        let c = sv.len();
        let inner: usize = xv.shape().get(axis + 1..).map_or(1, |s| s.iter().product());
        let s = sv.data();
        let data = xv
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| if v > 0.0 { v } else { s[(i / inner) % c] * v })
            .collect();
        let t = Tensor::new(xv.shape().to_vec(), data)?;
        Ok(self.push(t, Op::Prelu { x, slope, inner }))
    }

    /// Batched matrix product over the last two axes; batch axes broadcast.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let d = matmul_dims(av.shape(), bv.shape())?;
        let (m, k, n) = (d.m, d.k, d.n);
        let nb = d.a_batch.len();
        let mut out = vec![0.0; nb * m * n];
        for (bi, (&ao, &bo)) in d.a_batch.iter().zip(&d.b_batch).enumerate() {
            let ad = &av.data()[ao * m * k..(ao + 1) * m * k];
            let bd = &bv.data()[bo * k * n..(bo + 1) * k * n];
            let od = &mut out[bi * m * n..(bi + 1) * m * n];
            for i in 0..m {
                for p in 0..k {
                    let x = ad[i * k + p];
                    if x == 0.0 {
                        continue;
                    }
                    let row = &bd[p * n..(p + 1) * n];
                    for (o, &y) in od[i * n..(i + 1) * n].iter_mut().zip(row) {
                        *o += x * y;
                    }
                }
            }
        }
        let mut shape = d.batch_shape;
        shape.push(m);
        shape.push(n);
        let t = Tensor::new(shape, out)?;
        Ok(self.push(t, Op::Matmul(a, b)))
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let nd = self.value(x).ndim();
        let mut seen = vec![false; nd];
        if perm.len() != nd || perm.iter().any(|&p| p >= nd || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::contract(format!("invalid permutation {perm:?} for rank {nd}")));
        }
        let t = permute_tensor(self.value(x), perm);
        Ok(self.push(t, Op::Permute { x, perm: perm.to_vec() }))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let nd = self.value(x).ndim();
        if nd < 2 {
            return Err(Error::contract("transpose needs rank >= 2"));
        }
        let mut perm: Vec<usize> = (0..nd).collect();
        perm.swap(nd - 2, nd - 1);
        self.permute(x, &perm)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        Ok(self.push(t, Op::Reshape(x)))
    }

    /// `len` entries of `axis` starting at `start`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        if axis >= xv.ndim() || start + len > xv.shape()[axis] {
            return Err(Error::contract(format!(
                "slice [{start}, {}) on axis {axis} out of range for shape {:?}",
                start + len,
                xv.shape()
            )));
        }
        let (outer, l_in, inner) = split_axis(xv.shape(), axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let s = (o * l_in + start) * inner;
            data.extend_from_slice(&xv.data()[s..s + len * inner]);
        }
        let mut shape = xv.shape().to_vec();
        shape[axis] = len;
        let t = Tensor::new(shape, data)?;
        Ok(self.push(t, Op::Slice { x, axis, start }))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = xs
            .first()
            .ok_or_else(|| Error::contract("concat of zero tensors"))?;
        let base = self.value(*first).shape().to_vec();
        if axis >= base.len() {
            return Err(Error::contract(format!("concat axis {axis} out of range")));
        }
        let mut total = 0;
        for &x in xs {
            let s = self.value(x).shape();
            let ok = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(Error::Dimension {
                    op: "concat",
                    lhs: base.clone(),
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = split_axis(&shape, axis);
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &x in xs {
                let xv = self.value(x);
                let len = xv.shape()[axis];
                let s = o * len * inner;
                data.extend_from_slice(&xv.data()[s..s + len * inner]);
            }
        }
        let t = Tensor::new(shape, data)?;
        Ok(self.push(t, Op::Concat { xs: xs.to_vec(), axis }))
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let t = Tensor::scalar(self.value(x).sum());
        self.push(t, Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// Sum over one axis, removing it.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let xv = self.value(x);
        if axis >= xv.ndim() {
            return Err(Error::contract(format!("sum axis {axis} out of range")));
        }
        let (outer, len, inner) = split_axis(xv.shape(), axis);
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                for i in 0..inner {
                    data[o * inner + i] += xv.data()[(o * len + l) * inner + i];
                }
            }
        }
        let mut shape = xv.shape().to_vec();
        shape.remove(axis);
        let t = Tensor::new(shape, data)?;
        Ok(self.push(t, Op::SumAxis { x, axis }))
    }

    /// Max-shifted softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let xv = self.value(x);
        if axis >= xv.ndim() {
            return Err(Error::contract(format!("softmax axis {axis} out of range")));
        }
        let t = softmax_values(xv, axis);
        Ok(self.push(t, Op::Softmax { x, axis }))
    }

    /// Same-padded 1-D convolution along axis 0 of `x: [T, N, c_in]`, applied
    /// independently per node, with kernel `[1, L, c_in, c_out]` (or `[L, c_in, c_out]`).
    pub fn conv_time(&mut self, x: Var, k: Var) -> Result<Var> {
        let (xv, kv) = (self.value(x), self.value(k));
        let dim_err = || Error::Dimension {
            op: "conv_time",
            lhs: xv.shape().to_vec(),
            rhs: kv.shape().to_vec(),
        };
        let (l, ci, co) = time_kernel_dims(kv.shape()).ok_or_else(dim_err)?;
        if l % 2 == 0 {
            return Err(Error::config(format!("temporal kernel length must be odd, got {l}")));
        }
        let [t, n, c] = xv.shape() else { return Err(dim_err()) };
        if *c != ci {
            return Err(dim_err());
        }
        let (t, n) = (*t, *n);
        let pad = l / 2;
        let mut out = vec![0.0; t * n * co];
        let xd = xv.data();
        let kd = kv.data();
        for to in 0..t {
            for tap in 0..l {
                let ti = to as isize + tap as isize - pad as isize;
                if ti < 0 || ti >= t as isize {
                    continue;
                }
                let ti = ti as usize;
                for node in 0..n {
                    let xrow = &xd[(ti * n + node) * ci..(ti * n + node + 1) * ci];
                    let orow = &mut out[(to * n + node) * co..(to * n + node + 1) * co];
                    for (cin, &xval) in xrow.iter().enumerate() {
                        let krow = &kd[(tap * ci + cin) * co..(tap * ci + cin + 1) * co];
                        for (o, &kval) in orow.iter_mut().zip(krow) {
                            *o += xval * kval;
                        }
                    }
                }
            }
        }
        let t = Tensor::new(vec![t, n, co], out)?;
        Ok(self.push(t, Op::ConvTime { x, k }))
    }

    /// Same-padded 2-D convolution of `x: [C_in, H, W]` with `w: [C_out, C_in, kh, kw]`.
    pub fn conv2d(&mut self, x: Var, w: Var) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        let dim_err = || Error::Dimension {
            op: "conv2d",
            lhs: xv.shape().to_vec(),
            rhs: wv.shape().to_vec(),
        };
        let [cin, h, wd] = *xv.shape() else { return Err(dim_err()) };
        let [cout, cin2, kh, kw] = *wv.shape() else { return Err(dim_err()) };
        if cin != cin2 {
            return Err(dim_err());
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::config(format!("spatial kernel must be odd, got {kh}x{kw}")));
        }
        let mut out = vec![0.0; cout * h * wd];
        let xd = xv.data();
        let wdat = wv.data();
        let (ph, pw) = (kh / 2, kw / 2);
        for co in 0..cout {
            for ci in 0..cin {
                for ky in 0..kh {
                    let dy = ky as isize - ph as isize;
                    let (y0, y1) = valid_range(h, dy);
                    for kx in 0..kw {
                        let dx = kx as isize - pw as isize;
                        let (x0, x1) = valid_range(wd, dx);
                        let wval = wdat[((co * cin + ci) * kh + ky) * kw + kx];
                        if wval == 0.0 {
                            continue;
                        }
                        let (i0, i1) = ((x0 as isize + dx) as usize, (x1 as isize + dx) as usize);
                        for y in y0..y1 {
                            let yi = (y as isize + dy) as usize;
                            let orow = &mut out[(co * h + y) * wd + x0..(co * h + y) * wd + x1];
                            let irow = &xd[(ci * h + yi) * wd + i0..(ci * h + yi) * wd + i1];
                            for (o, i) in orow.iter_mut().zip(irow) {
                                *o += wval * i;
                            }
                        }
                    }
                }
            }
        }
        let t = Tensor::new(vec![cout, h, wd], out)?;
        Ok(self.push(t, Op::Conv2d { x, w }))
    }

    /// Bilinear read of a `[C, H, W]` feature map at pixel coordinates
    /// `(col, row)`; returns `[P, C]`.
    pub fn bilinear_sample(&mut self, x: Var, points: &[(f64, f64)]) -> Result<Var> {
        let xv = self.value(x);
        let [c, h, w] = *xv.shape() else {
            return Err(Error::contract(format!(
                "bilinear_sample needs a [C, H, W] map, got {:?}",
                xv.shape()
            )));
        };
        let mut out = Vec::with_capacity(points.len() * c);
        for &(u, v) in points {
            let taps = bilinear_taps(u, v, h, w)?;
            for ch in 0..c {
                let base = ch * h * w;
                out.push(taps.iter().map(|&(off, wt)| wt * xv.data()[base + off]).sum());
            }
        }
        let t = Tensor::new(vec![points.len(), c], out)?;
        Ok(self.push(t, Op::BilinearSample { x, points: points.to_vec() }))
    }

    /// `I - D^{-1/2} E D^{-1/2}` with `D^{-1/2}_ii := 0` for isolated nodes.
    pub fn normalized_laplacian(&mut self, e: Var) -> Result<Var> {
        let (l, s) = normalized_laplacian_values(self.value(e))?;
        Ok(self.push(l, Op::NormalizedLaplacian { e, inv_sqrt_deg: s }))
    }

    /// Symmetric eigendecomposition recorded on the tape. Returns
    /// `(eigenvectors [N, N] as columns, eigenvalues [N])`, eigenvalues
    /// descending. The eigenvector backward uses gap denominators broadened
    /// by `eps`.
    pub fn eigh(&mut self, a: Var, eps: f64) -> Result<(Var, Var)> {
        let basis = crate::spectral::eigen::eigh_sym(self.value(a))?;
        let n = basis.order();
        let u = basis.vectors().clone();
        let lam = Tensor::new(vec![n], basis.lambdas().to_vec())?;
        let vecs = self.push(
            u.clone(),
            Op::EighVectors {
                a,
                u: u.clone(),
                lambdas: basis.lambdas().to_vec(),
                eps,
            },
        );
        let vals = self.push(lam, Op::EighValues { a, u });
        Ok((vecs, vals))
    }

    /// Copy of `x` cut off from gradient flow.
    pub fn detach(&mut self, x: Var) -> Var {
        let t = self.value(x).clone();
        self.constant(t)
    }
}

fn valid_range(len: usize, d: isize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (len as isize - d).min(len as isize).max(0) as usize;
    (lo.min(hi), hi)
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn log_cosh(x: f64) -> f64 {
    let a = x.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

pub(crate) fn softmax_values(xv: &Tensor, axis: usize) -> Tensor {
    let (outer, len, inner) = split_axis(xv.shape(), axis);
    let mut out = vec![0.0; xv.len()];
    let xd = xv.data();
    for o in 0..outer {
        for i in 0..inner {
            let idx = |l: usize| (o * len + l) * inner + i;
            let m = (0..len).map(|l| xd[idx(l)]).fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for l in 0..len {
                let e = (xd[idx(l)] - m).exp();
                out[idx(l)] = e;
                s += e;
            }
            for l in 0..len {
                out[idx(l)] /= s;
            }
        }
    }
    Tensor::new(xv.shape().to_vec(), out).expect("softmax shape")
}

/// Flat offsets (within one channel) and weights of the four bilinear taps.
pub(crate) fn bilinear_taps(u: f64, v: f64, h: usize, w: usize) -> Result<[(usize, f64); 4]> {
    let inside = u.is_finite()
        && v.is_finite()
        && u >= 0.0
        && v >= 0.0
        && u <= (w - 1) as f64
        && v <= (h - 1) as f64;
    if !inside {
        return Err(Error::data(format!(
            "sample point (col {u}, row {v}) outside a {h}x{w} image"
        )));
    }
    let u0 = (u.floor() as usize).min(w.saturating_sub(2));
    let v0 = (v.floor() as usize).min(h.saturating_sub(2));
    let u1 = (u0 + 1).min(w - 1);
    let v1 = (v0 + 1).min(h - 1);
    let fu = u - u0 as f64;
    let fv = v - v0 as f64;
    Ok([
        (v0 * w + u0, (1.0 - fu) * (1.0 - fv)),
        (v0 * w + u1, fu * (1.0 - fv)),
        (v1 * w + u0, (1.0 - fu) * fv),
        (v1 * w + u1, fu * fv),
    ])
}

pub(crate) fn bilinear_backward(shape: &[usize], points: &[(f64, f64)], g: &Tensor) -> Tensor {
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let mut gx = Tensor::zeros(shape);
    let gd = gx.data_mut();
    for (p, &(u, v)) in points.iter().enumerate() {
        let taps = bilinear_taps(u, v, h, w).expect("validated in forward");
        for ch in 0..c {
            let gv = g.data()[p * c + ch];
            for &(off, wt) in &taps {
                gd[ch * h * w + off] += wt * gv;
            }
        }
    }
    gx
}

pub(crate) fn normalized_laplacian_values(e: &Tensor) -> Result<(Tensor, Vec<f64>)> {
    let [n, n2] = *e.shape() else {
        return Err(Error::contract(format!("weight matrix must be square, got {:?}", e.shape())));
    };
    if n != n2 {
        return Err(Error::contract(format!("weight matrix must be square, got {:?}", e.shape())));
    }
    let ed = e.data();
    for i in 0..n {
        for j in 0..i {
            let (a, b) = (ed[i * n + j], ed[j * n + i]);
            if (a - b).abs() > 1e-12 * a.abs().max(b.abs()).max(1.0) {
                return Err(Error::contract(format!(
                    "weight matrix not symmetric at ({i}, {j}): {a} vs {b}"
                )));
            }
        }
    }
    let s: Vec<f64> = (0..n)
        .map(|i| {
            let d: f64 = ed[i * n..(i + 1) * n].iter().sum();
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    let mut l = Tensor::zeros(&[n, n]);
    let ld = l.data_mut();
    for i in 0..n {
        for j in 0..n {
            let delta = if i == j { 1.0 } else { 0.0 };
            ld[i * n + j] = delta - s[i] * ed[i * n + j] * s[j];
        }
    }
    Ok((l, s))
}

pub(crate) fn conv_time_backward(
    x: &Tensor,
    k: &Tensor,
    g: &Tensor,
    need_x: bool,
    need_k: bool,
) -> (Option<Tensor>, Option<Tensor>) {
    let (l, ci, co) = time_kernel_dims(k.shape()).expect("validated");
    let (t, n) = (x.shape()[0], x.shape()[1]);
    let pad = l / 2;
    let mut gx = need_x.then(|| Tensor::zeros(x.shape()));
    let mut gk = need_k.then(|| Tensor::zeros(k.shape()));
    let (xd, kd, gd) = (x.data(), k.data(), g.data());
    for to in 0..t {
        for tap in 0..l {
            let ti = to as isize + tap as isize - pad as isize;
            if ti < 0 || ti >= t as isize {
                continue;
            }
            let ti = ti as usize;
            for node in 0..n {
                let grow = &gd[(to * n + node) * co..(to * n + node + 1) * co];
                for cin in 0..ci {
                    let xi = (ti * n + node) * ci + cin;
                    let kb = (tap * ci + cin) * co;
                    if let Some(gx) = gx.as_mut() {
                        let mut s = 0.0;
                        for o in 0..co {
                            s += kd[kb + o] * grow[o];
                        }
                        gx.data_mut()[xi] += s;
                    }
                    if let Some(gk) = gk.as_mut() {
                        let xval = xd[xi];
                        let gkd = gk.data_mut();
                        for o in 0..co {
                            gkd[kb + o] += xval * grow[o];
                        }
                    }
                }
            }
        }
    }
    (gx, gk)
}

pub(crate) fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    g: &Tensor,
    need_x: bool,
    need_w: bool,
) -> (Option<Tensor>, Option<Tensor>) {
    let (cin, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (cout, kh, kw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
    let (ph, pw) = (kh / 2, kw / 2);
    let mut gx = need_x.then(|| Tensor::zeros(x.shape()));
    let mut gw = need_w.then(|| Tensor::zeros(w.shape()));
    let (xd, wdat, gd) = (x.data(), w.data(), g.data());
    for co in 0..cout {
        for ci in 0..cin {
            for ky in 0..kh {
                let dy = ky as isize - ph as isize;
                let (y0, y1) = valid_range(h, dy);
                for kx in 0..kw {
                    let dx = kx as isize - pw as isize;
                    let (x0, x1) = valid_range(wd, dx);
                    let widx = ((co * cin + ci) * kh + ky) * kw + kx;
                    let wval = wdat[widx];
                    let (i0, i1) = ((x0 as isize + dx) as usize, (x1 as isize + dx) as usize);
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        let yi = (y as isize + dy) as usize;
                        let grow = &gd[(co * h + y) * wd + x0..(co * h + y) * wd + x1];
                        let ibase = (ci * h + yi) * wd;
                        if let Some(gx) = gx.as_mut() {
                            let gxd = &mut gx.data_mut()[ibase + i0..ibase + i1];
                            for (gxv, g) in gxd.iter_mut().zip(grow) {
                                *gxv += wval * g;
                            }
                        }
                        if need_w {
                            let irow = &xd[ibase + i0..ibase + i1];
                            for (g, i) in grow.iter().zip(irow) {
                                acc += g * i;
                            }
                        }
                    }
                    if let Some(gw) = gw.as_mut() {
                        gw.data_mut()[widx] += acc;
                    }
                }
            }
        }
    }
    (gx, gw)
}
