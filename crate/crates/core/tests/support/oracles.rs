//! Scalar-loop reimplementations used as test oracles. They index flat
//! buffers directly and share no code with the library's tensor kernels.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spectgnn::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// `Y[t,i,k] = sum_j theta[t,i,j,k] * lambda[t,i] * v_hat[t,i,j]`, with
/// `theta: [T, n_max, ci, co]` and `lambda: [T, N]`.
pub fn sgconv(v_hat: &Tensor, theta: &Tensor, lambda: &Tensor) -> Vec<f64> {
    let (t, n, ci) = (v_hat.shape()[0], v_hat.shape()[1], v_hat.shape()[2]);
    let (n_max, co) = (theta.shape()[1], theta.shape()[3]);
    let (v, th, l) = (v_hat.data(), theta.data(), lambda.data());
    let mut y = vec![0.0; t * n * co];
    for tt in 0..t {
        for i in 0..n {
            for k in 0..co {
                let mut s = 0.0;
                for j in 0..ci {
                    s += th[((tt * n_max + i) * ci + j) * co + k] * l[tt * n + i] * v[(tt * n + i) * ci + j];
                }
                y[(tt * n + i) * co + k] = s;
            }
        }
    }
    y
}

/// Same-padded convolution along axis 0 of `x: [T, N, ci]` with kernel
/// `k: [L, ci, co]` (a leading unit axis is ignored).
pub fn conv_time(x: &[f64], t: usize, n: usize, ci: usize, k: &[f64], l: usize, co: usize) -> Vec<f64> {
    let pad = l as isize / 2;
    let mut y = vec![0.0; t * n * co];
    for to in 0..t {
        for node in 0..n {
            for o in 0..co {
                let mut s = 0.0;
                for tap in 0..l {
                    let ti = to as isize + tap as isize - pad;
                    if ti < 0 || ti >= t as isize {
                        continue;
                    }
                    for c in 0..ci {
                        s += x[(ti as usize * n + node) * ci + c] * k[(tap * ci + c) * co + o];
                    }
                }
                y[(to * n + node) * co + o] = s;
            }
        }
    }
    y
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `(conv(x, ks) + bs) * sigmoid(conv(x, kg) + bg)`.
pub fn tgconv(x: &Tensor, ks: &Tensor, bs: &Tensor, kg: &Tensor, bg: &Tensor) -> Vec<f64> {
    let (t, n, ci) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (l, co) = (ks.shape()[ks.ndim() - 3], ks.shape()[ks.ndim() - 1]);
    let a = conv_time(x.data(), t, n, ci, ks.data(), l, co);
    let g = conv_time(x.data(), t, n, ci, kg.data(), l, co);
    (0..t * n * co)
        .map(|idx| (a[idx] + bs.data()[idx % co]) * sigmoid(g[idx] + bg.data()[idx % co]))
        .collect()
}

/// Head weights as plain tensors.
pub struct Head {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
}

/// Row-major matrix product of `[r, m]` and `[m, c]` buffers.
fn mm(a: &[f64], b: &[f64], r: usize, m: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            let mut s = 0.0;
            for k in 0..m {
                s += a[i * m + k] * b[k * c + j];
            }
            out[i * c + j] = s;
        }
    }
    out
}

/// Attention weights `softmax(Q K^T / sqrt(d_k))` for one sequence `x: [S, c]`.
pub fn attention_weights(x: &[f64], s: usize, c: usize, h: &Head) -> Vec<f64> {
    let dk = h.wq.shape()[1];
    let q = mm(x, h.wq.data(), s, c, dk);
    let k = mm(x, h.wk.data(), s, c, dk);
    let mut a = vec![0.0; s * s];
    for i in 0..s {
        let mut row: Vec<f64> = (0..s)
            .map(|j| (0..dk).map(|d| q[i * dk + d] * k[j * dk + d]).sum::<f64>() / (dk as f64).sqrt())
            .collect();
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
        row.iter_mut().for_each(|v| *v = (*v - m).exp() / z);
        a[i * s..(i + 1) * s].copy_from_slice(&row);
    }
    a
}

/// Multi-head attention over one sequence `x: [S, c]`, heads concatenated
/// and mixed by `wh`. Returns `[S, width]`.
pub fn multi_head(x: &[f64], s: usize, c: usize, heads: &[Head], wh: &Tensor) -> Vec<f64> {
    let dv = heads[0].wv.shape()[1];
    let width = heads.len() * dv;
    let mut cat = vec![0.0; s * width];
    for (hi, h) in heads.iter().enumerate() {
        let a = attention_weights(x, s, c, h);
        let v = mm(x, h.wv.data(), s, c, dv);
        let o = mm(&a, &v, s, s, dv);
        for i in 0..s {
            for d in 0..dv {
                cat[i * width + hi * dv + d] = o[i * dv + d];
            }
        }
    }
    mm(&cat, wh.data(), s, width, wh.shape()[1])
}

/// Temporal attention: per agent over time, `y: [T, N, c]` -> `[T, N, width]`.
pub fn temporal(y: &[f64], t: usize, n: usize, c: usize, heads: &[Head], wh: &Tensor) -> Vec<f64> {
    let w = wh.shape()[1];
    let mut out = vec![0.0; t * n * w];
    for i in 0..n {
        let seq: Vec<f64> = (0..t).flat_map(|tt| (0..c).map(move |k| (tt, k))).map(|(tt, k)| y[(tt * n + i) * c + k]).collect();
        let o = multi_head(&seq, t, c, heads, wh);
        for tt in 0..t {
            for k in 0..w {
                out[(tt * n + i) * w + k] = o[tt * w + k];
            }
        }
    }
    out
}

/// Spatial attention: per timestep over agents.
pub fn spatial(y: &[f64], t: usize, n: usize, c: usize, heads: &[Head], wh: &Tensor) -> Vec<f64> {
    let w = wh.shape()[1];
    let mut out = vec![0.0; t * n * w];
    for tt in 0..t {
        let o = multi_head(&y[tt * n * c..(tt + 1) * n * c], n, c, heads, wh);
        out[tt * n * w..(tt + 1) * n * w].copy_from_slice(&o);
    }
    out
}

/// Sequential (temporal then spatial) or parallel (sum) attention followed
/// by the output projection.
#[allow(clippy::too_many_arguments)]
pub fn statt(
    y: &[f64],
    t: usize,
    n: usize,
    c: usize,
    temporal_heads: &[Head],
    temporal_wh: &Tensor,
    spatial_heads: &[Head],
    spatial_wh: &Tensor,
    out: &Tensor,
    sequential: bool,
) -> Vec<f64> {
    let w = temporal_wh.shape()[1];
    let h = if sequential {
        let a = temporal(y, t, n, c, temporal_heads, temporal_wh);
        spatial(&a, t, n, w, spatial_heads, spatial_wh)
    } else {
        let a = temporal(y, t, n, c, temporal_heads, temporal_wh);
        let b = spatial(y, t, n, c, spatial_heads, spatial_wh);
        a.iter().zip(&b).map(|(x, y)| x + y).collect()
    };
    mm(&h, out.data(), t * n, w, out.shape()[1])
}

/// Residual layer weights.
pub struct Residual {
    pub w: Tensor,
    pub b: Tensor,
    pub slope: Tensor,
}

/// Decoder: `out[tf, n, f] = b[tf] + sum_tap sum_tin x[tin, n, f + tap - pad] W[tap, tin, tf]`,
/// then `h += prelu(conv_time(h) + b)` per residual layer.
pub fn tcnn_decode(x: &Tensor, w: &Tensor, b: &Tensor, residual: &[Residual]) -> Vec<f64> {
    let (t_in, n, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (l, t_f) = (w.shape()[0], w.shape()[2]);
    let pad = l as isize / 2;
    let xd = x.data();
    let mut h = vec![0.0; t_f * n * c];
    for tf in 0..t_f {
        for node in 0..n {
            for f in 0..c {
                let mut s = b.data()[tf];
                for tap in 0..l {
                    let fi = f as isize + tap as isize - pad;
                    if fi < 0 || fi >= c as isize {
                        continue;
                    }
                    for tin in 0..t_in {
                        s += xd[(tin * n + node) * c + fi as usize] * w.data()[(tap * t_in + tin) * t_f + tf];
                    }
                }
                h[(tf * n + node) * c + f] = s;
            }
        }
    }
    for r in residual {
        let lr = r.w.shape()[0];
        let z = conv_time(&h, t_f, n, c, r.w.data(), lr, c);
        for (idx, hv) in h.iter_mut().enumerate() {
            let k = idx % c;
            let pre = z[idx] + r.b.data()[k];
            *hv += if pre > 0.0 { pre } else { r.slope.data()[k] * pre };
        }
    }
    h
}

/// Bivariate Gaussian negative log-density with `sigma = exp(raw)` and
/// `rho = tanh(raw)`.
pub fn nll_raw(raw: &[f64], x: f64, y: f64) -> f64 {
    let (mx, my) = (raw[0], raw[1]);
    let (sx, sy) = (raw[2].exp(), raw[3].exp());
    let rho = raw[4].tanh();
    let dx = (x - mx) / sx;
    let dy = (y - my) / sy;
    let om = 1.0 - rho * rho;
    (2.0 * std::f64::consts::PI).ln() + sx.ln() + sy.ln() + 0.5 * om.ln()
        + (dx * dx + dy * dy - 2.0 * rho * dx * dy) / (2.0 * om)
}

/// `(L_prob, L_dist)` from raw outputs `[T_f, N, 5]` and targets `[T_f, N, 2]`.
pub fn losses(raw: &Tensor, target: &Tensor) -> (f64, f64) {
    let (t_f, n) = (raw.shape()[0], raw.shape()[1]);
    let (r, g) = (raw.data(), target.data());
    let mut prob = 0.0;
    let mut dist = 0.0;
    for t in 0..t_f {
        for i in 0..n {
            let o = (t * n + i) * 5;
            let (x, y) = (g[(t * n + i) * 2], g[(t * n + i) * 2 + 1]);
            prob += nll_raw(&r[o..o + 5], x, y);
            dist += (x - r[o]).powi(2) + (y - r[o + 1]).powi(2);
        }
    }
    (prob / n as f64, dist / (t_f * n) as f64)
}

/// Number of eigenvalues of the symmetric `a` strictly below `x`, from the
/// signs of the pivots of an `LDL^T` elimination of `a - x I` (Sylvester's
/// law of inertia).
pub fn count_below(a: &[f64], n: usize, x: f64) -> usize {
    let mut m: Vec<f64> = a.to_vec();
    for i in 0..n {
        m[i * n + i] -= x;
    }
    let mut count = 0;
    for k in 0..n {
        let mut p = m[k * n + k];
        if p == 0.0 {
            p = -1e-300;
        }
        if p < 0.0 {
            count += 1;
        }
        for i in k + 1..n {
            let f = m[i * n + k] / p;
            for j in k + 1..n {
                m[i * n + j] -= f * m[k * n + j];
            }
        }
    }
    count
}

/// Eigenvalues in descending order by bisection on [`count_below`].
pub fn bisect_eigenvalues(a: &[f64], n: usize) -> Vec<f64> {
    let bound = (0..n).map(|i| (0..n).map(|j| a[i * n + j].abs()).sum::<f64>()).fold(0.0, f64::max) + 1.0;
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        // the (k+1)-th largest eigenvalue: count_below(x) >= n - k for x above it
        let (mut lo, mut hi) = (-bound, bound);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid == lo || mid == hi {
                break;
            }
            if count_below(a, n, mid) >= n - k {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        out.push(0.5 * (lo + hi));
    }
    out
}

/// Zero-padded same-size cross-correlation, `x: [ci, h, w]`, `k: [co, ci, kh, kw]`.
pub fn conv2d(x: &Tensor, k: &Tensor) -> Tensor {
    let [ci, h, w] = x.shape().try_into().unwrap();
    let [co, _, kh, kw] = k.shape().try_into().unwrap();
    Tensor::from_fn(&[co, h, w], |ix| {
        let mut s = 0.0;
        for c in 0..ci {
            for ky in 0..kh {
                for kx in 0..kw {
                    let y = ix[1] as isize + ky as isize - (kh / 2) as isize;
                    let xx = ix[2] as isize + kx as isize - (kw / 2) as isize;
                    if y >= 0 && xx >= 0 && (y as usize) < h && (xx as usize) < w {
                        s += k.get(&[ix[0], c, ky, kx]) * x.get(&[c, y as usize, xx as usize]);
                    }
                }
            }
        }
        s
    })
}

/// Bilinear interpolation of channel `c` of `x: [C, H, W]` at `(col, row)`.
pub fn bilinear(x: &Tensor, c: usize, col: f64, row: f64) -> f64 {
    let [_, h, w] = x.shape().try_into().unwrap();
    let c0 = (col.floor() as usize).min(w - 1);
    let r0 = (row.floor() as usize).min(h - 1);
    let c1 = (c0 + 1).min(w - 1);
    let r1 = (r0 + 1).min(h - 1);
    let (fc, fr) = (col - c0 as f64, row - r0 as f64);
    let at = |r: usize, cc: usize| x.get(&[c, r, cc]);
    (1.0 - fr) * ((1.0 - fc) * at(r0, c0) + fc * at(r0, c1)) + fr * ((1.0 - fc) * at(r1, c0) + fc * at(r1, c1))
}

/// Environment edge weights from the named encoder parameters.
pub fn environment(pixels: &Tensor, points: &[(f64, f64)], param: impl Fn(&str) -> Tensor, layers: usize) -> Tensor {
    let [h, w] = pixels.shape().try_into().unwrap();
    let mut x = Tensor::from_fn(&[1, h, w], |ix| pixels.get(&[ix[1], ix[2]]));
    for i in 0..layers {
        let y = conv2d(&x, &param(&format!("encoder.conv{i}.weight")));
        let b = param(&format!("encoder.conv{i}.bias"));
        let a = param(&format!("encoder.conv{i}.prelu"));
        x = Tensor::from_fn(y.shape(), |ix| {
            let v = y.get(ix) + b.data()[ix[0]];
            if v > 0.0 {
                v
            } else {
                a.data()[ix[0]] * v
            }
        });
    }
    let c = x.shape()[0];
    let pw = param("encoder.proj.weight");
    let pb = param("encoder.proj.bias");
    let d_e = pb.len();
    let z: Vec<Vec<f64>> = points
        .iter()
        .map(|&(u, v)| {
            let f: Vec<f64> = (0..c).map(|ch| bilinear(&x, ch, u, v)).collect();
            (0..d_e).map(|d| pb.data()[d] + (0..c).map(|ch| f[ch] * pw.get(&[ch, d])).sum::<f64>()).collect()
        })
        .collect();
    let n = points.len();
    Tensor::from_fn(&[n, n], |ix| {
        if ix[0] == ix[1] {
            return 0.0;
        }
        let dot: f64 = (0..d_e).map(|d| z[ix[0]][d] * z[ix[1]][d]).sum();
        1.0 / (1.0 + (-dot / (d_e as f64).sqrt()).exp())
    })
}
