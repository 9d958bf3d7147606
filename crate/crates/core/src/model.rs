//! The full predictor: stacked spectral units, spatio-temporal attention and
//! the residual temporal decoder, wired according to a [`ModelConfig`].
//!
//! The network sees per-step displacements and predicts future positions
//! relative to each agent's last observed position; predicted means are
//! shifted back afterwards. Neither depends on where the scene sits.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{statt, HeadVars, MultiHeadVars, StattMode, StattVars};
use crate::decoder::{fuse, gaussian_head, tcnn_decode, DecoderVars, FusionMode, GaussianTrack, ResidualVars};
use crate::error::{Error, Result};
use crate::graphs::{build_agent_graph, encode_environment, normalized_laplacian, ConvLayerVars, EncoderVars};
use crate::params::{ParamStore, ParamVars};
use crate::scene::SceneWindow;
use crate::spectral::{eigh_sym, spectgnn_unit, BasisVars, BlockVars, SpectralBasis, TemporalGateVars};
use crate::tensor::{Tape, Tensor, Var};

/// Which optional components are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    pub tgconv: bool,
    pub image: bool,
    pub statt: bool,
}

impl Ablation {
    pub const FULL: Self = Self {
        tgconv: true,
        image: true,
        statt: true,
    };
    pub const BASE: Self = Self {
        tgconv: false,
        image: false,
        statt: false,
    };

    pub fn name(&self) -> &'static str {
        match (self.tgconv, self.image, self.statt) {
            (false, false, false) => "base",
            (true, false, false) => "+tgconv",
            (false, true, false) => "+image",
            (false, false, true) => "+statt",
            (true, true, true) => "full",
            _ => "custom",
        }
    }
}

impl std::str::FromStr for Ablation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let base = Self::BASE;
        match s {
            "base" => Ok(base),
            "+tgconv" => Ok(Self { tgconv: true, ..base }),
            "+image" => Ok(Self { image: true, ..base }),
            "+statt" => Ok(Self { statt: true, ..base }),
            "full" => Ok(Self::FULL),
            _ => Err(Error::config(format!(
                "ablation must be one of base|+tgconv|+image|+statt|full, got {s:?}"
            ))),
        }
    }
}

/// Whether the environment encoder receives gradient through the eigensolver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvGrad {
    #[default]
    Broadened,
    Blocked,
}

impl std::str::FromStr for EnvGrad {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "broadened" => Ok(Self::Broadened),
            "blocked" => Ok(Self::Blocked),
            _ => Err(Error::config(format!("env_grad must be broadened|blocked, got {s:?}"))),
        }
    }
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub t_h: usize,
    pub t_f: usize,
    /// Largest scene the spectral filters are allocated for.
    pub n_max: usize,
    pub num_units: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub tg_kernel: usize,
    pub num_heads: usize,
    pub d_k: usize,
    pub d_out: usize,
    #[serde(with = "statt_mode_serde")]
    pub statt_mode: StattMode,
    #[serde(with = "fusion_mode_serde")]
    pub fusion_mode: FusionMode,
    pub dec_kernel: usize,
    pub dec_layers: usize,
    pub enc_channels: Vec<usize>,
    pub enc_kernel: usize,
    pub d_e: usize,
    /// Multiplier on the fan-based init bound of the environment embedding
    /// projection. Larger values spread the initial edge weights away from
    /// `sigmoid(0)`.
    pub enc_proj_gain: f64,
    pub distance_floor: f64,
    pub eig_eps: f64,
    pub env_grad: EnvGrad,
    pub prelu_init: f64,
    pub ablation: Ablation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            t_h: 8,
            t_f: 12,
            n_max: 16,
            num_units: 2,
            c_in: 2,
            c_out: 5,
            tg_kernel: 3,
            num_heads: 2,
            d_k: 5,
            d_out: 5,
            statt_mode: StattMode::Sequential,
            fusion_mode: FusionMode::Add,
            dec_kernel: 3,
            dec_layers: 5,
            enc_channels: vec![8, 16, 16],
            enc_kernel: 3,
            d_e: 16,
            enc_proj_gain: 1.0,
            distance_floor: crate::graphs::DEFAULT_DISTANCE_FLOOR,
            eig_eps: 1e-8,
            env_grad: EnvGrad::Broadened,
            prelu_init: 0.25,
            ablation: Ablation::FULL,
        }
    }
}

mod statt_mode_serde {
    use super::StattMode;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &StattMode, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(match m {
            StattMode::Sequential => "sequential",
            StattMode::Parallel => "parallel",
        })
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<StattMode, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

mod fusion_mode_serde {
    use super::FusionMode;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &FusionMode, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(match m {
            FusionMode::Add => "add",
            FusionMode::Concat => "concat",
        })
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<FusionMode, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("t_h", self.t_h),
            ("t_f", self.t_f),
            ("n_max", self.n_max),
            ("num_units", self.num_units),
            ("c_in", self.c_in),
            ("num_heads", self.num_heads),
            ("d_k", self.d_k),
            ("d_out", self.d_out),
            ("d_e", self.d_e),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        if self.c_out != 5 {
            return Err(Error::config(format!(
                "c_out must be 5 (mu_x, mu_y, sigma_x, sigma_y, rho), got {}",
                self.c_out
            )));
        }
        for (name, k) in [
            ("tg_kernel", self.tg_kernel),
            ("dec_kernel", self.dec_kernel),
            ("enc_kernel", self.enc_kernel),
        ] {
            if k % 2 == 0 {
                return Err(Error::config(format!("{name} must be odd, got {k}")));
            }
        }
        if self.enc_channels.is_empty() || self.enc_channels.contains(&0) {
            return Err(Error::config("enc_channels must be a non-empty list of positive counts"));
        }
        if !(self.distance_floor > 0.0) || !(self.eig_eps >= 0.0) {
            return Err(Error::config("distance_floor must be > 0 and eig_eps >= 0"));
        }
        if !(self.enc_proj_gain > 0.0 && self.enc_proj_gain.is_finite()) {
            return Err(Error::config(format!("enc_proj_gain must be positive, got {}", self.enc_proj_gain)));
        }
        Ok(())
    }

    /// Time steps entering the decoder.
    fn decoder_steps(&self) -> usize {
        match (self.ablation.statt, self.fusion_mode) {
            (true, FusionMode::Concat) => 2 * self.t_h,
            _ => self.t_h,
        }
    }

    fn unit_c_in(&self, u: usize) -> usize {
        if u == 0 {
            self.c_in
        } else {
            self.c_out
        }
    }
}

/// Fan-based uniform bound `sqrt(6 / (fan_in + fan_out))`.
fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

#[derive(Clone, Copy)]
enum Init {
    Uniform { fan_in: usize, fan_out: usize },
    ScaledUniform { fan_in: usize, fan_out: usize, gain: f64 },
    Zeros,
    Const(f64),
}

/// Model configuration plus parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
}

impl Model {
    /// Builds every parameter the configuration needs, drawing weights from
    /// a seeded stream in declaration order.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let mut add = |name: String, shape: &[usize], init: Init| -> Result<()> {
            let t = match init {
                Init::Uniform { fan_in, fan_out } | Init::ScaledUniform { fan_in, fan_out, .. } => {
                    let gain = if let Init::ScaledUniform { gain, .. } = init { gain } else { 1.0 };
                    let a = gain * xavier_bound(fan_in, fan_out);
                    let n: usize = shape.iter().product();
                    let data = (0..n).map(|_| rng.random_range(-a..a)).collect();
                    Tensor::new(shape.to_vec(), data)?
                }
                Init::Zeros => Tensor::zeros(shape),
                Init::Const(v) => Tensor::full(shape, v),
            };
            params.insert(name, t)
        };
        let c = &config;
        let co = c.c_out;
        let blocks: &[&str] = if c.ablation.image { &["agent", "env"] } else { &["agent"] };
        for u in 0..c.num_units {
            let ci = c.unit_c_in(u);
            for b in blocks {
                add(
                    format!("unit{u}.{b}.theta"),
                    &[c.t_h, c.n_max, ci, co],
                    Init::Uniform { fan_in: ci, fan_out: co },
                )?;
                if c.ablation.tgconv {
                    for part in ["tg_signal", "tg_gate"] {
                        let l = c.tg_kernel;
                        add(
                            format!("unit{u}.{b}.{part}.weight"),
                            &[1, l, ci, co],
                            Init::Uniform {
                                fan_in: ci * l,
                                fan_out: co * l,
                            },
                        )?;
                        add(format!("unit{u}.{b}.{part}.bias"), &[co], Init::Zeros)?;
                    }
                }
            }
            if u + 1 < c.num_units {
                add(format!("unit{u}.prelu"), &[co], Init::Const(c.prelu_init))?;
            }
        }
        if c.ablation.image {
            let k = c.enc_kernel;
            let mut cin = 1;
            for (i, &cout) in c.enc_channels.iter().enumerate() {
                add(
                    format!("encoder.conv{i}.weight"),
                    &[cout, cin, k, k],
                    Init::Uniform {
                        fan_in: cin * k * k,
                        fan_out: cout * k * k,
                    },
                )?;
                add(format!("encoder.conv{i}.bias"), &[cout], Init::Zeros)?;
                add(format!("encoder.conv{i}.prelu"), &[cout], Init::Const(c.prelu_init))?;
                cin = cout;
            }
            add(
                "encoder.proj.weight".into(),
                &[cin, c.d_e],
                Init::ScaledUniform {
                    fan_in: cin,
                    fan_out: c.d_e,
                    gain: c.enc_proj_gain,
                },
            )?;
            add("encoder.proj.bias".into(), &[c.d_e], Init::Zeros)?;
        }
        if c.ablation.statt {
            let width = c.num_heads * c.d_out;
            let spatial_in = match c.statt_mode {
                StattMode::Sequential => width,
                StattMode::Parallel => co,
            };
            for (layer, cin) in [("temporal", co), ("spatial", spatial_in)] {
                for h in 0..c.num_heads {
                    for (w, d) in [("wq", c.d_k), ("wk", c.d_k), ("wv", c.d_out)] {
                        add(
                            format!("statt.{layer}.head{h}.{w}"),
                            &[cin, d],
                            Init::Uniform { fan_in: cin, fan_out: d },
                        )?;
                    }
                }
                add(
                    format!("statt.{layer}.wh"),
                    &[width, width],
                    Init::Uniform {
                        fan_in: width,
                        fan_out: width,
                    },
                )?;
            }
            add(
                "statt.out".into(),
                &[width, co],
                Init::Uniform {
                    fan_in: width,
                    fan_out: co,
                },
            )?;
        }
        let (l, t_in) = (c.dec_kernel, c.decoder_steps());
        add(
            "decoder.expand.weight".into(),
            &[l, t_in, c.t_f],
            Init::Uniform {
                fan_in: t_in * l,
                fan_out: c.t_f * l,
            },
        )?;
        add("decoder.expand.bias".into(), &[c.t_f], Init::Zeros)?;
        for r in 0..c.dec_layers {
            add(
                format!("decoder.res{r}.weight"),
                &[l, co, co],
                Init::Uniform {
                    fan_in: co * l,
                    fan_out: co * l,
                },
            )?;
            add(format!("decoder.res{r}.bias"), &[co], Init::Zeros)?;
            add(format!("decoder.res{r}.prelu"), &[co], Init::Const(c.prelu_init))?;
        }
        Ok(Self { config, params })
    }

    /// Reassembles a model from a configuration and stored parameters,
    /// checking that names and shapes match what the configuration builds.
    pub fn from_parts(config: ModelConfig, params: ParamStore) -> Result<Self> {
        let reference = Self::new(config.clone(), 0)?;
        if reference.params.len() != params.len() {
            return Err(Error::data(format!(
                "checkpoint has {} parameters, configuration needs {}",
                params.len(),
                reference.params.len()
            )));
        }
        for p in reference.params.iter() {
            let stored = params
                .get(&p.name)
                .ok_or_else(|| Error::data(format!("checkpoint lacks parameter {}", p.name)))?;
            if stored.value.shape() != p.value.shape() {
                return Err(Error::data(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    p.name,
                    stored.value.shape(),
                    p.value.shape()
                )));
            }
        }
        Ok(Self { config, params })
    }

    /// Checks that `scene` can be fed to this model and precomputes the
    /// parameter-free parts of the forward pass.
    pub fn prepare(&self, scene: &SceneWindow) -> Result<PreparedScene> {
        PreparedScene::new(scene, &self.config)
    }

    /// Records the forward pass and returns the raw output `[T_f, N, 5]`,
    /// in coordinates relative to each agent's last observed position.
    pub fn forward(&self, tape: &mut Tape, vars: &ParamVars, scene: &PreparedScene) -> Result<Var> {
        let c = &self.config;
        let mv = ModelVars::from_params(c, vars)?;
        let mut x = tape.constant(scene.input.clone());
        let agent_basis = BasisVars::per_timestep(tape, &scene.agent_bases)?;
        let env_basis = match &mv.encoder {
            Some(enc) => Some(self.environment_basis(tape, enc, scene)?),
            None => None,
        };
        for (u, unit) in mv.units.iter().enumerate() {
            let env = match (&env_basis, &unit.env) {
                (Some(b), Some(p)) => Some((b, p)),
                _ => None,
            };
            x = spectgnn_unit(tape, x, (&agent_basis, &unit.agent), env)?;
            if let Some(slope) = unit.prelu {
                debug_assert!(u + 1 < mv.units.len());
                x = tape.prelu(x, slope)?;
            }
        }
        let y_st = match &mv.statt {
            Some(p) => Some(statt(tape, x, p)?),
            None => None,
        };
        let fused = fuse(tape, x, y_st, c.fusion_mode)?;
        let out = tcnn_decode(tape, fused, &mv.decoder)?;
        integrate_means(tape, out)
    }

    /// Environment edge weights `E^e` for `scene`, or `None` when the
    /// configuration has no environment branch.
    pub fn environment_weights(&self, scene: &PreparedScene) -> Result<Option<Tensor>> {
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape);
        let mv = ModelVars::from_params(&self.config, &vars)?;
        let Some(enc) = &mv.encoder else { return Ok(None) };
        let image = scene.scene.image.as_ref().ok_or_else(|| {
            Error::config(format!("scene {} has no context image", scene.scene.scene_id))
        })?;
        let e = encode_environment(&mut tape, image, &scene.scene, enc)?;
        Ok(Some(tape.value(e).clone()))
    }

    fn environment_basis(&self, tape: &mut Tape, enc: &EncoderVars, scene: &PreparedScene) -> Result<BasisVars> {
        let image = scene.scene.image.as_ref().ok_or_else(|| {
            Error::config(format!(
                "scene {} has no context image but the environment branch is enabled",
                scene.scene.scene_id
            ))
        })?;
        let mut e = encode_environment(tape, image, &scene.scene, enc)?;
        if self.config.env_grad == EnvGrad::Blocked {
            e = tape.detach(e);
        }
        let l = tape.normalized_laplacian(e)?;
        let (vectors, lambdas) = tape.eigh(l, self.config.eig_eps)?;
        Ok(BasisVars { vectors, lambdas })
    }

    /// Forward pass on a fresh tape, then the Gaussian head, in absolute
    /// coordinates.
    pub fn predict(&self, scene: &PreparedScene) -> Result<GaussianTrack> {
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape);
        let raw = self.forward(&mut tape, &vars, scene)?;
        let track = gaussian_head(tape.value(raw))?;
        Ok(track.shifted(&scene.anchors))
    }
}

/// Reads the mean channels of the decoder output as per-step displacements
/// and replaces them by their running sum over the horizon, so `mu_t` is the
/// offset from the last observed position.
fn integrate_means(tape: &mut Tape, out: Var) -> Result<Var> {
    let [t_f, n, c] = *tape.shape(out) else {
        return Err(Error::contract("decoder output must be [T_f, N, c]"));
    };
    let steps = tape.slice(out, 2, 0, 2)?;
    let rest = tape.slice(out, 2, 2, c - 2)?;
    let steps = tape.reshape(steps, &[t_f, n * 2])?;
    let lower = tape.constant(Tensor::from_fn(&[t_f, t_f], |ix| if ix[1] <= ix[0] { 1.0 } else { 0.0 }));
    let mu = tape.matmul(lower, steps)?;
    let mu = tape.reshape(mu, &[t_f, n, 2])?;
    tape.concat(&[mu, rest], 2)
}

/// Structured tape handles for one unit.
struct UnitVars {
    agent: BlockVars,
    env: Option<BlockVars>,
    prelu: Option<Var>,
}

struct ModelVars {
    units: Vec<UnitVars>,
    encoder: Option<EncoderVars>,
    statt: Option<StattVars>,
    decoder: DecoderVars,
}

impl ModelVars {
    fn from_params(c: &ModelConfig, p: &ParamVars) -> Result<Self> {
        let block = |u: usize, b: &str| -> Result<BlockVars> {
            let temporal = if c.ablation.tgconv {
                Some(TemporalGateVars {
                    signal_weight: p.get(&format!("unit{u}.{b}.tg_signal.weight"))?,
                    signal_bias: p.get(&format!("unit{u}.{b}.tg_signal.bias"))?,
                    gate_weight: p.get(&format!("unit{u}.{b}.tg_gate.weight"))?,
                    gate_bias: p.get(&format!("unit{u}.{b}.tg_gate.bias"))?,
                })
            } else {
                None
            };
            Ok(BlockVars {
                theta: p.get(&format!("unit{u}.{b}.theta"))?,
                temporal,
            })
        };
        let units = (0..c.num_units)
            .map(|u| {
                Ok(UnitVars {
                    agent: block(u, "agent")?,
                    env: if c.ablation.image { Some(block(u, "env")?) } else { None },
                    prelu: if u + 1 < c.num_units {
                        Some(p.get(&format!("unit{u}.prelu"))?)
                    } else {
                        None
                    },
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let encoder = if c.ablation.image {
            let convs = (0..c.enc_channels.len())
                .map(|i| {
                    Ok(ConvLayerVars {
                        weight: p.get(&format!("encoder.conv{i}.weight"))?,
                        bias: p.get(&format!("encoder.conv{i}.bias"))?,
                        slope: p.get(&format!("encoder.conv{i}.prelu"))?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Some(EncoderVars {
                convs,
                proj_weight: p.get("encoder.proj.weight")?,
                proj_bias: p.get("encoder.proj.bias")?,
            })
        } else {
            None
        };
        let statt = if c.ablation.statt {
            let layer = |name: &str| -> Result<MultiHeadVars> {
                let heads = (0..c.num_heads)
                    .map(|h| {
                        Ok(HeadVars {
                            wq: p.get(&format!("statt.{name}.head{h}.wq"))?,
                            wk: p.get(&format!("statt.{name}.head{h}.wk"))?,
                            wv: p.get(&format!("statt.{name}.head{h}.wv"))?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(MultiHeadVars {
                    heads,
                    wh: p.get(&format!("statt.{name}.wh"))?,
                })
            };
            Some(StattVars {
                temporal: layer("temporal")?,
                spatial: layer("spatial")?,
                out: p.get("statt.out")?,
                mode: c.statt_mode,
            })
        } else {
            None
        };
        let residual = (0..c.dec_layers)
            .map(|r| {
                Ok(ResidualVars {
                    weight: p.get(&format!("decoder.res{r}.weight"))?,
                    bias: p.get(&format!("decoder.res{r}.bias"))?,
                    slope: p.get(&format!("decoder.res{r}.prelu"))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            units,
            encoder,
            statt,
            decoder: DecoderVars {
                expand_weight: p.get("decoder.expand.weight")?,
                expand_bias: p.get("decoder.expand.bias")?,
                residual,
            },
        })
    }
}

/// A scene with everything that does not depend on parameters computed once:
/// relative inputs and targets, anchors and the per-timestep agent bases.
#[derive(Debug, Clone)]
pub struct PreparedScene {
    pub scene: SceneWindow,
    /// `[T_h, N, 2]` per-step displacements, zero at the first step.
    pub input: Tensor,
    /// `[T_f, N, 2]` in the same relative frame, when the future is known.
    pub target: Option<Tensor>,
    pub anchors: Vec<[f64; 2]>,
    pub agent_bases: Vec<SpectralBasis>,
}

impl PreparedScene {
    pub fn new(scene: &SceneWindow, config: &ModelConfig) -> Result<Self> {
        let n = scene.num_agents();
        if scene.t_h() != config.t_h || scene.t_f() != config.t_f {
            return Err(Error::data(format!(
                "scene {} has T_h = {}, T_f = {}; model expects {} and {}",
                scene.scene_id,
                scene.t_h(),
                scene.t_f(),
                config.t_h,
                config.t_f
            )));
        }
        if n > config.n_max {
            return Err(Error::Capacity { n, n_max: config.n_max });
        }
        if config.ablation.image && scene.image.is_none() {
            return Err(Error::config(format!(
                "scene {} has no context image but the environment branch is enabled",
                scene.scene_id
            )));
        }
        let anchors: Vec<[f64; 2]> = (0..n).map(|i| scene.last_observed(i)).collect();
        let relative = |t: &Tensor| {
            let steps = t.shape()[0];
            Tensor::from_fn(&[steps, n, 2], |ix| t.get(ix) - anchors[ix[1]][ix[2]])
        };
        let h = scene.history();
        let input = Tensor::from_fn(&[config.t_h, n, 2], |ix| {
            if ix[0] == 0 {
                0.0
            } else {
                h.get(ix) - h.get(&[ix[0] - 1, ix[1], ix[2]])
            }
        });
        let agent_bases = build_agent_graph(scene, config.distance_floor)?
            .iter()
            .map(|w| eigh_sym(&normalized_laplacian(w)?.laplacian))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            scene: scene.clone(),
            input,
            target: scene.future().map(relative),
            anchors,
            agent_bases,
        })
    }

    pub fn num_agents(&self) -> usize {
        self.anchors.len()
    }
}
