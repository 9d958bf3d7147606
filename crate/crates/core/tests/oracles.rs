//! Library kernels against the scalar-loop reimplementations in
//! `support/oracles.rs`, on every shape up to T = 4, N = 4, c = 3.

#[path = "support/oracles.rs"]
mod oracles;

use oracles::{max_abs_diff, random, rng, Head, Residual};
use spectgnn::attention::{statt, HeadVars, MultiHeadVars, StattMode, StattVars};
use spectgnn::decoder::{gaussian_head, tcnn_decode, DecoderVars, ResidualVars};
use spectgnn::spectral::{sgconv, tgconv, TemporalGateVars};
use spectgnn::training::{loss_on_tape, loss_prob, loss_dist, LossConfig};
use spectgnn::{Tape, Tensor};

const TOL: f64 = 1e-10;

#[test]
fn sgconv_matches_loop() {
    let mut r = rng(1);
    let mut cases = 0;
    for t in 1..=4 {
        for n in 1..=4 {
            for ci in 1..=3 {
                for co in 1..=3 {
                    for n_max in [n, 4] {
                        let v = random(&mut r, &[t, n, ci]);
                        let theta = random(&mut r, &[t, n_max, ci, co]);
                        let lam = random(&mut r, &[t, n]);
                        let mut tape = Tape::new();
                        let (vv, tv, lv) = (tape.leaf(v.clone()), tape.leaf(theta.clone()), tape.constant(lam.clone()));
                        let y = sgconv(&mut tape, vv, tv, lv).unwrap();
                        assert_eq!(tape.shape(y), &[t, n, co]);
                        let err = max_abs_diff(tape.value(y).data(), &oracles::sgconv(&v, &theta, &lam));
                        assert!(err < 1e-12, "T={t} N={n} ci={ci} co={co}: {err:e}");
                        cases += 1;
                    }
                }
            }
        }
    }
    assert_eq!(cases, 4 * 4 * 3 * 3 * 2);
}

#[test]
fn sgconv_shared_lambdas_broadcast_over_time() {
    let mut r = rng(2);
    let v = random(&mut r, &[3, 4, 2]);
    let theta = random(&mut r, &[3, 4, 2, 3]);
    let lam = random(&mut r, &[4]);
    let lam_t = Tensor::from_fn(&[3, 4], |ix| lam.data()[ix[1]]);
    let mut tape = Tape::new();
    let (vv, tv, lv) = (tape.leaf(v.clone()), tape.leaf(theta.clone()), tape.constant(lam));
    let y = sgconv(&mut tape, vv, tv, lv).unwrap();
    assert!(max_abs_diff(tape.value(y).data(), &oracles::sgconv(&v, &theta, &lam_t)) < 1e-12);
}

#[test]
fn sgconv_rejects_scene_larger_than_capacity() {
    let mut r = rng(3);
    let mut tape = Tape::new();
    let v = tape.leaf(random(&mut r, &[2, 5, 2]));
    let th = tape.leaf(random(&mut r, &[2, 4, 2, 5]));
    let l = tape.constant(random(&mut r, &[2, 5]));
    let err = sgconv(&mut tape, v, th, l).unwrap_err();
    assert!(matches!(err, spectgnn::Error::Capacity { n: 5, n_max: 4 }), "{err}");
}

#[test]
fn tgconv_matches_loop() {
    let mut r = rng(4);
    for t in 1..=4 {
        for n in 1..=4 {
            for ci in 1..=3 {
                for co in 1..=3 {
                    for l in [1, 3] {
                        let x = random(&mut r, &[t, n, ci]);
                        let ks = random(&mut r, &[1, l, ci, co]);
                        let kg = random(&mut r, &[1, l, ci, co]);
                        let bs = random(&mut r, &[co]);
                        let bg = random(&mut r, &[co]);
                        let mut tape = Tape::new();
                        let xv = tape.leaf(x.clone());
                        let p = TemporalGateVars {
                            signal_weight: tape.leaf(ks.clone()),
                            signal_bias: tape.leaf(bs.clone()),
                            gate_weight: tape.leaf(kg.clone()),
                            gate_bias: tape.leaf(bg.clone()),
                        };
                        let y = tgconv(&mut tape, xv, &p).unwrap();
                        let err = max_abs_diff(tape.value(y).data(), &oracles::tgconv(&x, &ks, &bs, &kg, &bg));
                        assert!(err < TOL, "T={t} N={n} ci={ci} co={co} L={l}: {err:e}");
                    }
                }
            }
        }
    }
}

fn heads(r: &mut rand_chacha::ChaCha8Rng, count: usize, c: usize, dk: usize, dv: usize) -> Vec<Head> {
    (0..count)
        .map(|_| Head {
            wq: random(r, &[c, dk]),
            wk: random(r, &[c, dk]),
            wv: random(r, &[c, dv]),
        })
        .collect()
}

fn bind_heads(tape: &mut Tape, hs: &[Head], wh: &Tensor) -> MultiHeadVars {
    MultiHeadVars {
        heads: hs
            .iter()
            .map(|h| HeadVars {
                wq: tape.leaf(h.wq.clone()),
                wk: tape.leaf(h.wk.clone()),
                wv: tape.leaf(h.wv.clone()),
            })
            .collect(),
        wh: tape.leaf(wh.clone()),
    }
}

#[test]
fn statt_matches_loop() {
    let mut r = rng(5);
    let mut cases = 0;
    for t in 1..=4 {
        for n in 1..=4 {
            for c in 1..=3 {
                for n_heads in 1..=2 {
                    for dk in 1..=3 {
                        for sequential in [true, false] {
                            let dv = 1 + (t + n + dk) % 3;
                            let width = n_heads * dv;
                            let y = random(&mut r, &[t, n, c]);
                            let th = heads(&mut r, n_heads, c, dk, dv);
                            let twh = random(&mut r, &[width, width]);
                            let s_in = if sequential { width } else { c };
                            let sh = heads(&mut r, n_heads, s_in, dk, dv);
                            let swh = random(&mut r, &[width, width]);
                            let out = random(&mut r, &[width, c]);
                            let mut tape = Tape::new();
                            let yv = tape.leaf(y.clone());
                            let p = StattVars {
                                temporal: bind_heads(&mut tape, &th, &twh),
                                spatial: bind_heads(&mut tape, &sh, &swh),
                                out: tape.leaf(out.clone()),
                                mode: if sequential { StattMode::Sequential } else { StattMode::Parallel },
                            };
                            let o = statt(&mut tape, yv, &p).unwrap();
                            assert_eq!(tape.shape(o), &[t, n, c]);
                            let want = oracles::statt(y.data(), t, n, c, &th, &twh, &sh, &swh, &out, sequential);
                            let err = max_abs_diff(tape.value(o).data(), &want);
                            assert!(err < TOL, "T={t} N={n} c={c} heads={n_heads} dk={dk} seq={sequential}: {err:e}");
                            cases += 1;
                        }
                    }
                }
            }
        }
    }
    assert_eq!(cases, 4 * 4 * 3 * 2 * 3 * 2);
}

#[test]
fn tcnn_decode_matches_loop() {
    let mut r = rng(6);
    for t_in in 1..=4 {
        for t_f in 1..=4 {
            for n in 1..=4 {
                for c in 1..=3 {
                    for (l, layers) in [(1, 0), (3, 2), (3, 5)] {
                        let x = random(&mut r, &[t_in, n, c]);
                        let w = random(&mut r, &[l, t_in, t_f]);
                        let b = random(&mut r, &[t_f]);
                        let res: Vec<Residual> = (0..layers)
                            .map(|_| Residual {
                                w: random(&mut r, &[l, c, c]),
                                b: random(&mut r, &[c]),
                                slope: random(&mut r, &[c]),
                            })
                            .collect();
                        let mut tape = Tape::new();
                        let xv = tape.leaf(x.clone());
                        let p = DecoderVars {
                            expand_weight: tape.leaf(w.clone()),
                            expand_bias: tape.leaf(b.clone()),
                            residual: res
                                .iter()
                                .map(|q| ResidualVars {
                                    weight: tape.leaf(q.w.clone()),
                                    bias: tape.leaf(q.b.clone()),
                                    slope: tape.leaf(q.slope.clone()),
                                })
                                .collect(),
                        };
                        let o = tcnn_decode(&mut tape, xv, &p).unwrap();
                        assert_eq!(tape.shape(o), &[t_f, n, c]);
                        let err = max_abs_diff(tape.value(o).data(), &oracles::tcnn_decode(&x, &w, &b, &res));
                        assert!(err < TOL, "T_in={t_in} T_f={t_f} N={n} c={c} L={l}: {err:e}");
                    }
                }
            }
        }
    }
}

#[test]
fn losses_match_loop() {
    let mut r = rng(7);
    for t_f in 1..=4 {
        for n in 1..=4 {
            for lambda in [0.0, 1.0, 2.5] {
                let raw = random(&mut r, &[t_f, n, 5]);
                let target = random(&mut r, &[t_f, n, 2]);
                let (want_prob, want_dist) = oracles::losses(&raw, &target);
                let cfg = LossConfig { lambda };
                let mut tape = Tape::new();
                let rv = tape.leaf(raw.clone());
                let lv = loss_on_tape(&mut tape, rv, &target, &cfg).unwrap();
                let prob = tape.value(lv.prob).item();
                let dist = tape.value(lv.dist).item();
                let total = tape.value(lv.total).item();
                assert!((prob - want_prob).abs() < TOL, "T_f={t_f} N={n}: {prob} vs {want_prob}");
                assert!((dist - want_dist).abs() < TOL);
                assert!((total - (want_prob + lambda * want_dist)).abs() < TOL);
                let track = gaussian_head(&raw).unwrap();
                assert!((loss_prob(&track, &target).unwrap() - want_prob).abs() < TOL);
                assert!((loss_dist(&track, &target).unwrap() - want_dist).abs() < TOL);
            }
        }
    }
}

#[test]
fn standard_normal_density_at_mean() {
    // unit variances, no correlation, target on the mean: ln(2 pi)
    let raw = Tensor::new(vec![1, 1, 5], vec![0.5, -0.25, 0.0, 0.0, 0.0]).unwrap();
    let target = Tensor::new(vec![1, 1, 2], vec![0.5, -0.25]).unwrap();
    let track = gaussian_head(&raw).unwrap();
    let v = loss_prob(&track, &target).unwrap();
    assert!((v - 1.8378770664093453).abs() < 1e-15, "{v}");
}
