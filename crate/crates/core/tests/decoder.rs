#[path = "support/oracles.rs"]
mod oracles;

use proptest::prelude::*;
use spectgnn::decoder::{fuse, gaussian_head, tcnn_decode, DecoderVars, FusionMode, ResidualVars};
use spectgnn::tensor::grad_check;
use spectgnn::training::{loss_on_tape, LossConfig};
use spectgnn::{Tape, Tensor, Var};

/// `expand_weight, expand_bias`, then `weight, bias, slope` per residual layer.
fn decoder_inputs(seed: u64, t_in: usize, t_f: usize, c: usize, l: usize, layers: usize) -> Vec<Tensor> {
    let mut r = oracles::rng(seed);
    let mut v = vec![oracles::random(&mut r, &[l, t_in, t_f]), oracles::random(&mut r, &[t_f])];
    for _ in 0..layers {
        v.push(oracles::random(&mut r, &[l, c, c]).map(|x| 0.5 * x));
        v.push(oracles::random(&mut r, &[c]));
        v.push(oracles::random(&mut r, &[c]).map(|x| 0.25 + 0.2 * x));
    }
    v
}

fn bind(v: &[Var]) -> DecoderVars {
    DecoderVars {
        expand_weight: v[0],
        expand_bias: v[1],
        residual: v[2..]
            .chunks(3)
            .map(|c| ResidualVars {
                weight: c[0],
                bias: c[1],
                slope: c[2],
            })
            .collect(),
    }
}

#[test]
fn decode_and_head_gradcheck() {
    let (t_in, t_f, n, c) = (8, 12, 3, 5);
    let mut r = oracles::rng(42);
    let x = oracles::random(&mut r, &[t_in, n, c]);
    let target = oracles::random(&mut r, &[t_f, n, 2]);
    let mut inputs = vec![x];
    inputs.extend(decoder_inputs(43, t_in, t_f, c, 3, 5));
    let report = grad_check(
        move |t, v| {
            let p = bind(&v[1..]);
            let o = tcnn_decode(t, v[0], &p)?;
            let o = t.scale(o, 0.3);
            Ok(loss_on_tape(t, o, &target, &LossConfig { lambda: 1.0 })?.total)
        },
        &inputs,
        1e-5,
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn decoder_output_shape(
        seed in 0u64..10_000,
        t_in in 1usize..10,
        t_f in 1usize..14,
        n in 1usize..8,
        layers in 0usize..4,
    ) {
        let mut r = oracles::rng(seed);
        let mut tape = Tape::new();
        let x = tape.leaf(oracles::random(&mut r, &[t_in, n, 5]));
        let vars: Vec<Var> = decoder_inputs(seed, t_in, t_f, 5, 3, layers).into_iter().map(|v| tape.leaf(v)).collect();
        let o = tcnn_decode(&mut tape, x, &bind(&vars)).unwrap();
        prop_assert_eq!(tape.shape(o), &[t_f, n, 5]);
        let track = gaussian_head(tape.value(o)).unwrap();
        prop_assert_eq!(track.params().shape(), &[t_f, n, 5]);
    }

    #[test]
    fn head_covariance_is_positive_definite(raw in proptest::collection::vec(-1e3f64..1e3, 5)) {
        let track = gaussian_head(&Tensor::new(vec![1, 1, 5], raw).unwrap()).unwrap();
        let [_, _, sx, sy, rho] = track.at(0, 0);
        prop_assert!(sx > 0.0 && sy > 0.0 && rho.abs() < 1.0);
        // det = sx^2 sy^2 (1 - rho^2); the product underflows for sigma near
        // exp(-700), so take its logarithm
        let log_det = 2.0 * sx.ln() + 2.0 * sy.ln() + (1.0 - rho * rho).ln();
        prop_assert!(log_det.is_finite());
    }
}

#[test]
fn head_rejects_non_finite() {
    let raw = Tensor::new(vec![1, 1, 5], vec![0.0, f64::NAN, 0.0, 0.0, 0.0]).unwrap();
    assert!(gaussian_head(&raw).is_err());
    assert!(gaussian_head(&Tensor::zeros(&[2, 4])).is_err());
}

#[test]
fn fusion_modes() {
    let mut r = oracles::rng(5);
    let mut tape = Tape::new();
    let y = tape.leaf(oracles::random(&mut r, &[4, 3, 5]));
    let s = tape.leaf(oracles::random(&mut r, &[4, 3, 5]));
    let add = fuse(&mut tape, y, Some(s), FusionMode::Add).unwrap();
    assert_eq!(tape.shape(add), &[4, 3, 5]);
    let cat = fuse(&mut tape, y, Some(s), FusionMode::Concat).unwrap();
    assert_eq!(tape.shape(cat), &[8, 3, 5]);
    let alone = fuse(&mut tape, y, None, FusionMode::Add).unwrap();
    assert_eq!(tape.value(alone), tape.value(y));
}
