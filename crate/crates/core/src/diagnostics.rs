//! Finite-difference verification of every tape primitive and of the full
//! model loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{synth_generate, ScenarioKind, ScenarioSpec};
use crate::error::Result;
use crate::model::{Model, ModelConfig, PreparedScene};
use crate::params::ParamVars;
use crate::scene::SceneWindow;
use crate::tensor::gradcheck::grad_check_with;
use crate::tensor::{GradCheckReport, Tape, Tensor, Var};
use crate::training::{fit, loss_on_tape, LossConfig, TrainConfig};
use crate::Execution;

/// Central-difference step used throughout.
pub const STEP: f64 = 1e-5;

/// Warm-up epochs before the full-model check; see [`model_gradcheck`].
pub const WARMUP_EPOCHS: usize = 50;

/// One named check.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub report: GradCheckReport,
    /// Free-form context, e.g. the conditioning of the check point.
    pub note: String,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Values in `+-[lo, hi]`, away from zero.
fn signed_away(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(lo..hi);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// `sum(out * w)` for a fixed random `w`, so every output entry matters.
fn project(tape: &mut Tape, out: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let w = uniform(&mut rng, tape.shape(out), -1.0, 1.0);
    let w = tape.constant(w);
    let p = tape.mul(out, w)?;
    Ok(tape.sum(p))
}

type Case = (&'static str, Vec<Tensor>, Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var> + Sync>);

fn primitive_cases(seed: u64) -> Vec<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut rng;
    let mut cases: Vec<Case> = Vec::new();
    macro_rules! case {
        ($name:expr, [$($x:expr),*], $f:expr) => {
            cases.push(($name, vec![$($x),*], Box::new($f)));
        };
    }
    case!("add", [uniform(r, &[2, 3], -1.0, 1.0), uniform(r, &[3], -1.0, 1.0)], move |t, v| {
        let o = t.add(v[0], v[1])?;
        project(t, o, 1)
    });
    case!("sub", [uniform(r, &[2, 3], -1.0, 1.0), uniform(r, &[2, 1], -1.0, 1.0)], move |t, v| {
        let o = t.sub(v[0], v[1])?;
        project(t, o, 2)
    });
    case!("mul", [uniform(r, &[2, 1, 3], -1.0, 1.0), uniform(r, &[4, 3], -1.0, 1.0)], move |t, v| {
        let o = t.mul(v[0], v[1])?;
        project(t, o, 3)
    });
    case!("div", [uniform(r, &[2, 3], -1.0, 1.0), signed_away(r, &[3], 0.5, 1.5)], move |t, v| {
        let o = t.div(v[0], v[1])?;
        project(t, o, 4)
    });
    case!("neg", [uniform(r, &[3, 2], -1.0, 1.0)], move |t, v| {
        let o = t.neg(v[0]);
        project(t, o, 5)
    });
    case!("scale", [uniform(r, &[3, 2], -1.0, 1.0)], move |t, v| {
        let o = t.scale(v[0], -1.7);
        project(t, o, 6)
    });
    case!("add_scalar", [uniform(r, &[3, 2], -1.0, 1.0)], move |t, v| {
        let o = t.add_scalar(v[0], 0.3);
        let o = t.mul(o, o)?;
        project(t, o, 7)
    });
    case!("exp", [uniform(r, &[2, 3], -2.0, 2.0)], move |t, v| {
        let o = t.exp(v[0]);
        project(t, o, 8)
    });
    case!("ln", [uniform(r, &[2, 3], 0.2, 3.0)], move |t, v| {
        let o = t.ln(v[0]);
        project(t, o, 9)
    });
    case!("tanh", [uniform(r, &[2, 3], -2.0, 2.0)], move |t, v| {
        let o = t.tanh(v[0]);
        project(t, o, 10)
    });
    case!("sigmoid", [uniform(r, &[2, 3], -3.0, 3.0)], move |t, v| {
        let o = t.sigmoid(v[0]);
        project(t, o, 11)
    });
    case!("log_cosh", [uniform(r, &[2, 3], -3.0, 3.0)], move |t, v| {
        let o = t.log_cosh(v[0]);
        project(t, o, 12)
    });
    case!("prelu", [signed_away(r, &[3, 4], 0.1, 1.0), uniform(r, &[4], 0.05, 0.5)], move |t, v| {
        let o = t.prelu(v[0], v[1])?;
        project(t, o, 13)
    });
    case!("prelu_axis", [signed_away(r, &[3, 2, 2], 0.1, 1.0), uniform(r, &[3], 0.05, 0.5)], move |t, v| {
        let o = t.prelu_axis(v[0], v[1], 0)?;
        project(t, o, 14)
    });
    case!("matmul", [uniform(r, &[2, 3, 4], -1.0, 1.0), uniform(r, &[4, 2], -1.0, 1.0)], move |t, v| {
        let o = t.matmul(v[0], v[1])?;
        project(t, o, 15)
    });
    case!("permute", [uniform(r, &[2, 3, 4], -1.0, 1.0)], move |t, v| {
        let o = t.permute(v[0], &[2, 0, 1])?;
        project(t, o, 16)
    });
    case!("transpose", [uniform(r, &[2, 3, 4], -1.0, 1.0)], move |t, v| {
        let o = t.transpose(v[0])?;
        project(t, o, 17)
    });
    case!("reshape", [uniform(r, &[2, 6], -1.0, 1.0)], move |t, v| {
        let o = t.reshape(v[0], &[3, 4])?;
        project(t, o, 18)
    });
    case!("slice", [uniform(r, &[3, 5, 2], -1.0, 1.0)], move |t, v| {
        let o = t.slice(v[0], 1, 1, 3)?;
        project(t, o, 19)
    });
    case!("concat", [uniform(r, &[2, 3], -1.0, 1.0), uniform(r, &[2, 2], -1.0, 1.0)], move |t, v| {
        let o = t.concat(&[v[0], v[1]], 1)?;
        project(t, o, 20)
    });
    case!("sum", [uniform(r, &[2, 3], -1.0, 1.0)], move |t, v| {
        let sq = t.mul(v[0], v[0])?;
        Ok(t.sum(sq))
    });
    case!("mean", [uniform(r, &[2, 3], -1.0, 1.0)], move |t, v| {
        let sq = t.mul(v[0], v[0])?;
        Ok(t.mean(sq))
    });
    case!("sum_axis", [uniform(r, &[2, 3, 4], -1.0, 1.0)], move |t, v| {
        let o = t.sum_axis(v[0], 1)?;
        project(t, o, 21)
    });
    case!("softmax", [uniform(r, &[2, 3, 4], -2.0, 2.0)], move |t, v| {
        let o = t.softmax(v[0], 2)?;
        project(t, o, 22)
    });
    case!("conv_time", [uniform(r, &[4, 3, 2], -1.0, 1.0), uniform(r, &[1, 3, 2, 3], -1.0, 1.0)], move |t, v| {
        let o = t.conv_time(v[0], v[1])?;
        project(t, o, 23)
    });
    case!("conv2d", [uniform(r, &[2, 5, 4], -1.0, 1.0), uniform(r, &[3, 2, 3, 3], -1.0, 1.0)], move |t, v| {
        let o = t.conv2d(v[0], v[1])?;
        project(t, o, 24)
    });
    case!("bilinear_sample", [uniform(r, &[2, 4, 5], -1.0, 1.0)], move |t, v| {
        let o = t.bilinear_sample(v[0], &[(0.3, 0.7), (3.6, 2.2), (2.0, 1.5)])?;
        project(t, o, 25)
    });
    case!("normalized_laplacian", [uniform(r, &[4, 4], 0.2, 1.0)], move |t, v| {
        // symmetric, zero-diagonal weights built from a free matrix
        let n = 4;
        let xt = t.transpose(v[0])?;
        let s = t.add(v[0], xt)?;
        let mask = t.constant(Tensor::from_fn(&[n, n], |ix| if ix[0] == ix[1] { 0.0 } else { 1.0 }));
        let e = t.mul(s, mask)?;
        let l = t.normalized_laplacian(e)?;
        project(t, l, 26)
    });
    let gapped = |r: &mut ChaCha8Rng| {
        let mut x = uniform(r, &[5, 5], -0.5, 0.5);
        for i in 0..5 {
            x.set(&[i, i], 1.5 * i as f64);
        }
        x
    };
    case!("eigh_values", [gapped(r)], move |t, v| {
        let xt = t.transpose(v[0])?;
        let a = t.add(v[0], xt)?;
        let (_, lam) = t.eigh(a, 0.0)?;
        project(t, lam, 27)
    });
    case!("eigh_vectors", [gapped(r)], move |t, v| {
        let xt = t.transpose(v[0])?;
        let a = t.add(v[0], xt)?;
        let (u, _) = t.eigh(a, 0.0)?;
        project(t, u, 28)
    });
    cases
}

/// Gradient checks of every tape primitive on seeded random inputs.
pub fn primitive_checks(seed: u64, exec: Execution) -> Result<Vec<CheckResult>> {
    primitive_cases(seed)
        .into_iter()
        .map(|(name, inputs, f)| {
            let report = grad_check_with(|t: &mut Tape, v: &[Var]| f(t, v), &inputs, STEP, exec)?;
            Ok(CheckResult {
                name: name.to_string(),
                report,
                note: String::new(),
            })
        })
        .collect()
}

/// The scene used by the full-model check: three agents on crossing paths,
/// `T_h = 8`, `T_f = 12`, with a small context image.
pub fn check_scene(seed: u64) -> Result<SceneWindow> {
    synth_generate(&ScenarioSpec {
        kind: ScenarioKind::Crossing,
        num_agents: 3,
        seed,
        noise: 0.05,
        t_h: 8,
        t_f: 12,
        image_size: Some(12),
        ..Default::default()
    })
}

/// Projection gain used for the full-model check.
///
/// With the default gain every initial edge weight of the environment graph
/// is close to `sigmoid(0)`, the graph is nearly complete with equal weights
/// and its two upper eigenvalues nearly coincide (gaps of a few `1e-3` for
/// three agents). Eigenvector derivatives then scale with `1 / gap` and so
/// does the rounding noise of every finite difference through them, which
/// at `h = 1e-5` exceeds the tolerance on a handful of encoder weights. A
/// larger gain puts the check at a point with a well-separated spectrum;
/// the code paths and the gradient being checked are the same.
pub const CHECK_PROJ_GAIN: f64 = 6.0;

/// `config` as used by the full-model check.
pub fn check_config(config: &ModelConfig) -> ModelConfig {
    ModelConfig {
        enc_proj_gain: CHECK_PROJ_GAIN,
        ..config.clone()
    }
}

/// Smallest gap between distinct-index eigenvalues of the environment
/// Laplacian, or `None` without an environment branch.
pub fn environment_gap(model: &Model, scene: &PreparedScene) -> Result<Option<f64>> {
    let Some(e) = model.environment_weights(scene)? else { return Ok(None) };
    let lap = crate::graphs::normalized_laplacian(&crate::graphs::WeightMatrix::new(
        e,
        crate::graphs::GraphRole::Environment,
    )?)?;
    let basis = crate::spectral::eigh_sym(&lap.laplacian)?;
    let gap = basis.lambdas().windows(2).map(|w| w[0] - w[1]).fold(f64::INFINITY, f64::min);
    Ok(Some(gap))
}

/// Checks `d L_total / d params` of `model` on `scene`.
///
/// The exact derivative is compared, so eigenvector gap broadening is turned
/// off for the check (it is a deliberate bias of size `eps / gap^2`).
pub fn model_gradcheck(model: &Model, scene: &PreparedScene, loss: &LossConfig, exec: Execution) -> Result<GradCheckReport> {
    let mut exact = model.clone();
    exact.config.eig_eps = 0.0;
    let names = exact.params.names();
    let target = scene
        .target
        .clone()
        .ok_or_else(|| crate::Error::Data(format!("scene {} has no future to check against", scene.scene.scene_id)))?;
    let f = |tape: &mut Tape, vars: &[Var]| -> Result<Var> {
        let pv = ParamVars::from_parts(&names, vars)?;
        let raw = exact.forward(tape, &pv, scene)?;
        Ok(loss_on_tape(tape, raw, &target, loss)?.total)
    };
    grad_check_with(f, &exact.params.values(), STEP, exec)
}

/// Builds the seeded check scene and model (with [`check_config`]), trains
/// for [`WARMUP_EPOCHS`] so the loss is in a well-conditioned range, then
/// checks the full loss.
///
/// At initialization the loss is of order `1e10` and central differences are
/// swamped by curvature, which says nothing about the gradient code.
pub fn full_model_check(config: &ModelConfig, seed: u64, exec: Execution) -> Result<CheckResult> {
    let config = check_config(config);
    let mut model = Model::new(config.clone(), seed)?;
    let scene = model.prepare(&check_scene(seed)?)?;
    let cfg = TrainConfig {
        epochs: WARMUP_EPOCHS,
        batch_size: 1,
        seed,
        exec,
        ..Default::default()
    };
    fit(&mut model, std::slice::from_ref(&scene), &cfg, |_| {})?;
    let report = model_gradcheck(&model, &scene, &cfg.loss, exec)?;
    let loss = crate::training::scene_gradients(&model, &scene, &cfg.loss)?.0.total;
    let mut note = format!("{} params, loss {loss:.4}", model.params.num_scalars());
    if let Some(gap) = environment_gap(&model, &scene)? {
        note.push_str(&format!(", environment eigengap {gap:.3e}"));
    }
    Ok(CheckResult {
        name: format!("model.loss_total[{}]", config.ablation.name()),
        report,
        note,
    })
}

/// Every primitive check followed by the full-model check.
pub fn gradcheck_suite(config: &ModelConfig, seed: u64, exec: Execution) -> Result<Vec<CheckResult>> {
    let mut out = primitive_checks(seed, exec)?;
    out.push(full_model_check(config, seed, exec)?);
    Ok(out)
}
