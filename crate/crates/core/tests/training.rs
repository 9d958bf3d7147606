#[path = "support/oracles.rs"]
mod oracles;

use proptest::prelude::*;
use rand::Rng;
use spectgnn::data::{synth_dataset, DatasetSpec, ScenarioSpec};
use spectgnn::decoder::GaussianTrack;
use spectgnn::params::ParamStore;
use spectgnn::tensor::OpKind;
use spectgnn::training::*;
use spectgnn::{Ablation, Execution, Model, ModelConfig, PreparedScene, Tape, Tensor};

fn track(g: [f64; 5], t_f: usize, n: usize) -> GaussianTrack {
    GaussianTrack::new(Tensor::from_fn(&[t_f, n, 5], |ix| g[ix[2]])).unwrap()
}

#[test]
fn loss_examples() {
    let ln2pi = (2.0 * std::f64::consts::PI).ln();
    let tr = track([0.0, 0.0, 1.0, 1.0, 0.0], 1, 1);
    let at_mean = Tensor::zeros(&[1, 1, 2]);
    assert!((loss_prob(&tr, &at_mean).unwrap() - ln2pi).abs() < 1e-15);
    let off = Tensor::new(vec![1, 1, 2], vec![1.0, 0.0]).unwrap();
    assert!((loss_prob(&tr, &off).unwrap() - (ln2pi + 0.5)).abs() < 1e-15);

    let tr = track([2.0, -1.0, 0.5, 2.0, 0.3], 4, 3);
    let perfect = Tensor::from_fn(&[4, 3, 2], |ix| [2.0, -1.0][ix[2]]);
    assert_eq!(loss_dist(&tr, &perfect).unwrap(), 0.0);
    let shifted = Tensor::from_fn(&[4, 3, 2], |ix| [3.0, -1.0][ix[2]]);
    assert!((loss_dist(&tr, &shifted).unwrap() - 1.0).abs() < 1e-15);

    let mut r = oracles::rng(8);
    let raw = oracles::random(&mut r, &[5, 2, 5]);
    let target = oracles::random(&mut r, &[5, 2, 2]);
    let tr = spectgnn::decoder::gaussian_head(&raw).unwrap();
    let (p, d) = (loss_prob(&tr, &target).unwrap(), loss_dist(&tr, &target).unwrap());
    for lambda in [0.0, 1.0, 2.0] {
        let v = loss_total(&tr, &target, &LossConfig { lambda }).unwrap();
        assert_eq!(v.total, p + lambda * d);
    }
    assert_eq!(loss_total(&tr, &target, &LossConfig { lambda: 0.0 }).unwrap().total, p);
}

#[test]
fn loss_rejects_bad_targets() {
    let tr = track([0.0, 0.0, 1.0, 1.0, 0.0], 2, 1);
    let nan = Tensor::new(vec![2, 1, 2], vec![0.0, f64::NAN, 0.0, 0.0]).unwrap();
    assert!(matches!(loss_prob(&tr, &nan), Err(spectgnn::Error::Data(_))));
    assert!(loss_dist(&tr, &Tensor::zeros(&[3, 1, 2])).is_err());
    assert!(LossConfig { lambda: -1.0 }.validate().is_err());
}

#[test]
fn nll_matches_scalar_density() {
    let mut r = oracles::rng(9);
    for _ in 0..200 {
        let raw = oracles::random(&mut r, &[1, 1, 5]).map(|v| 2.0 * v);
        let target = oracles::random(&mut r, &[1, 1, 2]).map(|v| 3.0 * v);
        let g = spectgnn::decoder::gaussian_head(&raw).unwrap().at(0, 0);
        let got = gaussian_nll(g, target.data()[0], target.data()[1]);
        let want = oracles::nll_raw(raw.data(), target.data()[0], target.data()[1]);
        assert!((got - want).abs() < 1e-12 * want.abs().max(1.0), "{got} vs {want}");
    }
}

fn scalar_store(v: f64) -> ParamStore {
    let mut s = ParamStore::new();
    s.insert("p", Tensor::scalar(v)).unwrap();
    s
}

#[test]
fn sgd_examples() {
    let mut s = scalar_store(1.0);
    s.accumulate(&[Tensor::scalar(2.0)], 1.0).unwrap();
    let before = s.clone();
    sgd_step(&mut s, 0.0).unwrap();
    assert_eq!(s, before);
    sgd_step(&mut s, 0.1).unwrap();
    assert!((s.get("p").unwrap().value.item() - 0.8).abs() < 1e-15);

    let mut empty = scalar_store(1.0);
    assert!(matches!(sgd_step(&mut empty, 0.1), Err(spectgnn::Error::Contract(_))));
}

#[test]
fn sgd_converges_on_quadratic() {
    // f(p) = 2 (p - 3)^2; with lr 0.1 the error contracts by 0.6 per step
    let mut s = scalar_store(-5.0);
    for _ in 0..200 {
        let mut t = Tape::new();
        let vars = s.bind(&mut t);
        let p = vars.get("p").unwrap();
        let d = t.add_scalar(p, -3.0);
        let sq = t.mul(d, d).unwrap();
        let f = t.scale(sq, 2.0);
        let g = t.backward(f).unwrap();
        s.zero_grads();
        s.accumulate(&s.collect_grads(&vars, &g), 1.0).unwrap();
        sgd_step(&mut s, 0.1).unwrap();
    }
    assert!((s.get("p").unwrap().value.item() - 3.0).abs() < 1e-6);
}

#[test]
fn sampling_statistics() {
    let n_draws = 100_000;
    let tr = track([1.0, -2.0, 1.5, 0.5, 0.0], 1, 1);
    let s = sample_hypotheses(&tr, n_draws, 3).unwrap();
    let xs: Vec<f64> = s.data().chunks(2).map(|p| p[0]).collect();
    let ys: Vec<f64> = s.data().chunks(2).map(|p| p[1]).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (mx, my) = (mean(&xs), mean(&ys));
    let cov = |a: &[f64], ma: f64, b: &[f64], mb: f64| {
        a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / a.len() as f64
    };
    let (vx, vy, cxy) = (cov(&xs, mx, &xs, mx), cov(&ys, my, &ys, my), cov(&xs, mx, &ys, my));
    assert!((mx - 1.0).abs() < 0.02 && (my + 2.0).abs() < 0.01);
    assert!((vx.sqrt() - 1.5).abs() < 0.02 && (vy.sqrt() - 0.5).abs() < 0.01);
    assert!((cxy / (vx * vy).sqrt()).abs() < 0.02);

    let tr = track([0.0, 0.0, 1.0, 2.0, 0.6], 1, 1);
    let s = sample_hypotheses(&tr, n_draws, 4).unwrap();
    let xs: Vec<f64> = s.data().chunks(2).map(|p| p[0]).collect();
    let ys: Vec<f64> = s.data().chunks(2).map(|p| p[1]).collect();
    let (mx, my) = (mean(&xs), mean(&ys));
    let corr = cov(&xs, mx, &ys, my) / (cov(&xs, mx, &xs, mx) * cov(&ys, my, &ys, my)).sqrt();
    assert!((corr - 0.6).abs() < 0.02, "{corr}");
}

#[test]
fn sampling_limits_and_determinism() {
    let tr = track([4.0, 5.0, 1e-12, 1e-12, 0.3], 3, 2);
    let s = sample_hypotheses(&tr, 20, 1).unwrap();
    assert_eq!(s.shape(), &[20, 3, 2, 2]);
    for p in s.data().chunks(2) {
        assert!((p[0] - 4.0).abs() < 1e-9 && (p[1] - 5.0).abs() < 1e-9);
    }
    let tr = track([0.0, 0.0, 1.0, 1.0, -0.4], 3, 2);
    assert_eq!(sample_hypotheses(&tr, 7, 9).unwrap(), sample_hypotheses(&tr, 7, 9).unwrap());
    assert_ne!(sample_hypotheses(&tr, 7, 9).unwrap(), sample_hypotheses(&tr, 7, 10).unwrap());
    let big = sample_hypotheses(&tr, 20, 9).unwrap();
    let small = sample_hypotheses(&tr, 5, 9).unwrap();
    assert_eq!(&big.data()[..small.len()], small.data());
    assert!(sample_hypotheses(&tr, 0, 9).is_err());
}

#[test]
fn metric_examples() {
    let target = Tensor::from_fn(&[4, 1, 2], |ix| ix[0] as f64 + ix[2] as f64);
    let mut samples = Tensor::from_fn(&[3, 4, 1, 2], |ix| 10.0 * ix[0] as f64 + ix[3] as f64);
    for t in 0..4 {
        for c in 0..2 {
            samples.set(&[1, t, 0, c], target.get(&[t, 0, c]));
        }
    }
    assert_eq!(min_ade(&samples, &target, 3).unwrap(), 0.0);
    assert_eq!(min_fde(&samples, &target, 3).unwrap(), 0.0);

    let off = Tensor::from_fn(&[1, 4, 1, 2], |ix| target.get(&ix[1..]) + if ix[3] == 0 { 3.0 } else { 0.0 });
    assert!((min_ade(&off, &target, 1).unwrap() - 3.0).abs() < 1e-15);
    assert!((min_fde(&off, &target, 1).unwrap() - 3.0).abs() < 1e-15);
    assert!(matches!(min_ade(&off, &target, 0), Err(spectgnn::Error::Contract(_))));
    assert!(min_ade(&off, &target, 2).is_err());
}

/// Exhaustive best-of-K by scalar loops.
fn brute_min(samples: &Tensor, target: &Tensor, k: usize) -> (f64, f64) {
    let [_, t_f, n, _] = samples.shape().try_into().unwrap();
    let (mut ade, mut fde) = (0.0, 0.0);
    for i in 0..n {
        let mut best = (f64::INFINITY, f64::INFINITY);
        for h in 0..k {
            let err = |t: usize| {
                let dx = samples.get(&[h, t, i, 0]) - target.get(&[t, i, 0]);
                let dy = samples.get(&[h, t, i, 1]) - target.get(&[t, i, 1]);
                (dx * dx + dy * dy).sqrt()
            };
            let a = (0..t_f).map(err).sum::<f64>() / t_f as f64;
            best = (best.0.min(a), best.1.min(err(t_f - 1)));
        }
        ade += best.0;
        fde += best.1;
    }
    (ade / n as f64, fde / n as f64)
}

#[test]
fn metrics_match_exhaustive_loop() {
    let mut r = oracles::rng(10);
    for _ in 0..100 {
        let (t_f, n) = (r.random_range(1..6), r.random_range(1..5));
        let samples = oracles::random(&mut r, &[5, t_f, n, 2]);
        let target = oracles::random(&mut r, &[t_f, n, 2]);
        let (a, f) = brute_min(&samples, &target, 5);
        assert!((min_ade(&samples, &target, 5).unwrap() - a).abs() < 1e-15);
        assert!((min_fde(&samples, &target, 5).unwrap() - f).abs() < 1e-15);
    }
}

proptest! {
    #[test]
    fn metrics_non_increasing_in_nested_k(seed in 0u64..100_000, t_f in 1usize..8, n in 1usize..5) {
        let mut r = oracles::rng(seed);
        let raw = oracles::random(&mut r, &[t_f, n, 5]);
        let tr = spectgnn::decoder::gaussian_head(&raw).unwrap();
        let target = oracles::random(&mut r, &[t_f, n, 2]).map(|v| 2.0 * v);
        let samples = sample_hypotheses(&tr, 20, seed).unwrap();
        let ks: Vec<usize> = (1..=20).collect();
        let m = scene_metrics("s", &samples, &target, &ks).unwrap();
        for w in m.by_k.windows(2) {
            prop_assert!(w[1].min_ade <= w[0].min_ade && w[1].min_fde <= w[0].min_fde);
        }
    }

    #[test]
    fn metric_bounds(seed in 0u64..100_000, t_f in 1usize..8, k in 1usize..6) {
        let mut r = oracles::rng(seed);
        let samples = oracles::random(&mut r, &[k, t_f, 1, 2]);
        let target = oracles::random(&mut r, &[t_f, 1, 2]);
        let (ade, fde) = per_agent_min_errors(&samples, &target, k).unwrap()[0];
        prop_assert!(fde >= 0.0 && ade >= 0.0);
        // the hypothesis achieving minADE
        let step = |h: usize, t: usize| {
            let dx = samples.get(&[h, t, 0, 0]) - target.get(&[t, 0, 0]);
            let dy = samples.get(&[h, t, 0, 1]) - target.get(&[t, 0, 1]);
            dx.hypot(dy)
        };
        let best = (0..k)
            .min_by(|&a, &b| {
                let sa: f64 = (0..t_f).map(|t| step(a, t)).sum();
                let sb: f64 = (0..t_f).map(|t| step(b, t)).sum();
                sa.total_cmp(&sb)
            })
            .unwrap();
        let worst_step = (0..t_f).map(|t| step(best, t)).fold(0.0, f64::max);
        prop_assert!(ade <= worst_step + 1e-15);
    }
}

#[test]
fn aggregate_weights_agents() {
    let mk = |id: &str, n: usize, v: f64| SceneMetrics {
        scene_id: id.into(),
        num_agents: n,
        by_k: vec![KMetrics { k: 1, min_ade: v, min_fde: 2.0 * v }],
    };
    let r = MetricsReport::from_scenes(&[1], vec![mk("a", 1, 1.0), mk("b", 3, 3.0)]);
    let a = r.aggregate_for(1).unwrap();
    assert_eq!((a.min_ade, a.min_fde), (2.5, 5.0));
}

fn small_config(ablation: Ablation) -> ModelConfig {
    ModelConfig {
        t_h: 4,
        t_f: 3,
        n_max: 4,
        num_units: 2,
        enc_channels: vec![2, 3],
        d_e: 4,
        dec_layers: 2,
        ablation,
        ..ModelConfig::default()
    }
}

fn small_scenes(cfg: &ModelConfig, count: usize) -> Vec<PreparedScene> {
    let spec = DatasetSpec {
        count,
        seed: 5,
        min_agents: 1,
        max_agents: 4,
        base: ScenarioSpec {
            t_h: cfg.t_h,
            t_f: cfg.t_f,
            noise: 0.05,
            image_size: Some(10),
            ..ScenarioSpec::default()
        },
    };
    let m = Model::new(cfg.clone(), 0).unwrap();
    synth_dataset(&spec).unwrap().iter().map(|s| m.prepare(s).unwrap()).collect()
}

fn train(cfg: &ModelConfig, scenes: &[PreparedScene], epochs: usize, exec: Execution) -> (Model, Vec<EpochLog>) {
    let mut m = Model::new(cfg.clone(), 3).unwrap();
    let tc = TrainConfig {
        epochs,
        batch_size: 3,
        seed: 11,
        exec,
        ..TrainConfig::default()
    };
    let log = fit(&mut m, scenes, &tc, |_| {}).unwrap();
    (m, log)
}

#[test]
fn zero_epochs_keep_initialization() {
    let cfg = small_config(Ablation::FULL);
    let scenes = small_scenes(&cfg, 4);
    let (m, log) = train(&cfg, &scenes, 0, Execution::Sequential);
    assert!(log.is_empty());
    assert_eq!(m.params, Model::new(cfg, 3).unwrap().params);
}

#[test]
fn training_is_bit_reproducible_and_schedule_independent() {
    let cfg = small_config(Ablation::FULL);
    let scenes = small_scenes(&cfg, 7);
    let (a, la) = train(&cfg, &scenes, 4, Execution::Sequential);
    let (b, lb) = train(&cfg, &scenes, 4, Execution::Sequential);
    let (c, lc) = train(&cfg, &scenes, 4, Execution::Parallel);
    assert_eq!(a.params, b.params);
    assert_eq!(a.params, c.params);
    assert_eq!(la, lb);
    assert_eq!(la, lc);
    let ea = evaluate(&a, &scenes, &[1, 5], 2, Execution::Sequential).unwrap();
    let ec = evaluate(&c, &scenes, &[1, 5], 2, Execution::Parallel).unwrap();
    assert_eq!(ea, ec);
}

#[test]
fn training_reduces_loss() {
    let cfg = small_config(Ablation::FULL);
    let scenes = small_scenes(&cfg, 6);
    let (_, log) = train(&cfg, &scenes, 30, Execution::Parallel);
    assert!(log.last().unwrap().total < log[0].total, "{:?} -> {:?}", log[0], log.last());
}

#[test]
fn divergence_is_reported_with_epoch_and_batch() {
    let cfg = small_config(Ablation::BASE);
    let scenes = small_scenes(&cfg, 4);
    let mut m = Model::new(cfg, 3).unwrap();
    let tc = TrainConfig {
        lr: 1e6,
        epochs: 50,
        grad_clip: None,
        ..TrainConfig::default()
    };
    let err = fit(&mut m, &scenes, &tc, |_| {}).unwrap_err();
    let msg = err.to_string();
    assert!(matches!(err, spectgnn::Error::Numeric(_)) && msg.contains("epoch") && msg.contains("batch"), "{msg}");
}

fn op_counts(cfg: &ModelConfig, scene: &PreparedScene) -> std::collections::BTreeMap<OpKind, usize> {
    let m = Model::new(cfg.clone(), 0).unwrap();
    let mut t = Tape::new();
    let v = m.params.bind(&mut t);
    m.forward(&mut t, &v, scene).unwrap();
    t.op_counts()
}

#[test]
fn ablation_switches_remove_components() {
    let full = small_config(Ablation::FULL);
    let scene = &small_scenes(&full, 3)[2];
    let count = |cfg: &ModelConfig, k: OpKind| op_counts(cfg, scene).get(&k).copied().unwrap_or(0);

    let base = small_config(Ablation::BASE);
    for k in [OpKind::Softmax, OpKind::Conv2d, OpKind::BilinearSample, OpKind::EighVectors, OpKind::Sigmoid] {
        assert_eq!(count(&base, k), 0, "{k:?} in base");
    }
    // agent-graph bases are precomputed, so base records no convolution along time
    assert_eq!(count(&base, OpKind::ConvTime), base.dec_layers + 1);
    assert!(count(&full, OpKind::Softmax) > 0);
    assert_eq!(count(&full, OpKind::Conv2d), full.enc_channels.len());
    assert_eq!(count(&full, OpKind::EighVectors), 1);

    let tg: Ablation = "+tgconv".parse().unwrap();
    let img: Ablation = "+image".parse().unwrap();
    let st: Ablation = "+statt".parse().unwrap();
    assert!(count(&small_config(tg), OpKind::ConvTime) > count(&base, OpKind::ConvTime));
    assert_eq!(count(&small_config(tg), OpKind::Conv2d), 0);
    assert_eq!(count(&small_config(img), OpKind::Conv2d), full.enc_channels.len());
    assert_eq!(count(&small_config(img), OpKind::Softmax), 0);
    assert_eq!(count(&small_config(st), OpKind::Softmax), 2 * full.num_heads);
    assert_eq!(count(&small_config(st), OpKind::Conv2d), 0);
}
