//! Flat `key=value` run configuration shared by every command.

use std::path::{Path, PathBuf};

use spectgnn::data::{DatasetSpec, ScenarioSpec};
use spectgnn::training::{LossConfig, TrainConfig};
use spectgnn::{Execution, ModelConfig};

/// Which part of a dataset split a command works on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitPart {
    Train,
    Val,
    Test,
    All,
}

impl SplitPart {
    fn name(self) -> &'static str {
        match self {
            SplitPart::Train => "train",
            SplitPart::Val => "val",
            SplitPart::Test => "test",
            SplitPart::All => "all",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub seed: u64,
    pub num_scenes: usize,
    pub min_agents: usize,
    pub max_agents: usize,
    pub noise: f64,
    pub extent: f64,
    pub speed: f64,
    pub frame_period: f64,
    pub repulsion_radius: f64,
    pub image_size: Option<usize>,
    pub split: [f64; 3],
    pub model: ModelConfig,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lambda: f64,
    pub grad_clip: Option<f64>,
    pub k_list: Vec<usize>,
    pub k_max: usize,
    pub eval_split: SplitPart,
    pub exec: Execution,
    pub dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let data = DatasetSpec::default();
        Self {
            seed: 0,
            num_scenes: data.count,
            min_agents: data.min_agents,
            max_agents: data.max_agents,
            noise: data.base.noise,
            extent: data.base.extent,
            speed: data.base.speed,
            frame_period: data.base.frame_period,
            repulsion_radius: data.base.repulsion_radius,
            image_size: data.base.image_size,
            split: [0.6, 0.2, 0.2],
            model: ModelConfig::default(),
            lr: 0.01,
            epochs: 250,
            batch_size: 8,
            lambda: 1.0,
            grad_clip: Some(5.0),
            k_list: vec![1, 5, 10, 20],
            k_max: 20,
            eval_split: SplitPart::Test,
            exec: Execution::Parallel,
            dataset: None,
            checkpoint: None,
            out: None,
        }
    }
}

/// Every recognised key, in the order the resolved configuration is printed.
pub const KEYS: &[&str] = &[
    "seed",
    "num_scenes",
    "min_agents",
    "max_agents",
    "noise",
    "extent",
    "speed",
    "frame_period",
    "repulsion_radius",
    "image_size",
    "split",
    "t_h",
    "t_f",
    "n_max",
    "num_units",
    "c_out",
    "tg_kernel",
    "num_heads",
    "d_k",
    "d_out",
    "statt_mode",
    "fusion_mode",
    "dec_kernel",
    "dec_layers",
    "enc_channels",
    "enc_kernel",
    "d_e",
    "enc_proj_gain",
    "distance_floor",
    "eig_eps",
    "env_grad",
    "prelu_init",
    "ablation",
    "lr",
    "epochs",
    "batch_size",
    "lambda",
    "grad_clip",
    "k_list",
    "k_max",
    "eval_split",
    "exec",
    "dataset",
    "checkpoint",
    "out",
];

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, String> {
    v.parse().map_err(|_| format!("invalid value {v:?} for {key}"))
}

fn list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>, String> {
    v.split(',').map(|x| num(key, x.trim())).collect()
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn path_str(p: &Option<PathBuf>) -> String {
    p.as_ref().map_or_else(|| "none".to_string(), |p| p.display().to_string())
}

fn opt_path(v: &str) -> Option<PathBuf> {
    (v != "none" && !v.is_empty()).then(|| PathBuf::from(v))
}

impl RunConfig {
    pub fn set(&mut self, key: &str, v: &str) -> Result<(), String> {
        let v = v.trim();
        let m = &mut self.model;
        match key {
            "seed" => self.seed = num(key, v)?,
            "num_scenes" => self.num_scenes = num(key, v)?,
            "min_agents" => self.min_agents = num(key, v)?,
            "max_agents" => self.max_agents = num(key, v)?,
            "noise" => self.noise = num(key, v)?,
            "extent" => self.extent = num(key, v)?,
            "speed" => self.speed = num(key, v)?,
            "frame_period" => self.frame_period = num(key, v)?,
            "repulsion_radius" => self.repulsion_radius = num(key, v)?,
            "image_size" => self.image_size = if v == "none" { None } else { Some(num(key, v)?) },
            "split" => {
                let r: Vec<f64> = list(key, v)?;
                self.split = r.try_into().map_err(|_| "split needs three ratios".to_string())?;
            }
            "t_h" => m.t_h = num(key, v)?,
            "t_f" => m.t_f = num(key, v)?,
            "n_max" => m.n_max = num(key, v)?,
            "num_units" => m.num_units = num(key, v)?,
            "c_out" => m.c_out = num(key, v)?,
            "tg_kernel" => m.tg_kernel = num(key, v)?,
            "num_heads" => m.num_heads = num(key, v)?,
            "d_k" => m.d_k = num(key, v)?,
            "d_out" => m.d_out = num(key, v)?,
            "statt_mode" => m.statt_mode = v.parse().map_err(|e| format!("{e}"))?,
            "fusion_mode" => m.fusion_mode = v.parse().map_err(|e| format!("{e}"))?,
            "dec_kernel" => m.dec_kernel = num(key, v)?,
            "dec_layers" => m.dec_layers = num(key, v)?,
            "enc_channels" => m.enc_channels = list(key, v)?,
            "enc_kernel" => m.enc_kernel = num(key, v)?,
            "d_e" => m.d_e = num(key, v)?,
            "enc_proj_gain" => m.enc_proj_gain = num(key, v)?,
            "distance_floor" => m.distance_floor = num(key, v)?,
            "eig_eps" => m.eig_eps = num(key, v)?,
            "env_grad" => m.env_grad = v.parse().map_err(|e| format!("{e}"))?,
            "prelu_init" => m.prelu_init = num(key, v)?,
            "ablation" => m.ablation = v.parse().map_err(|e| format!("{e}"))?,
            "lr" => self.lr = num(key, v)?,
            "epochs" => self.epochs = num(key, v)?,
            "batch_size" => self.batch_size = num(key, v)?,
            "lambda" => self.lambda = num(key, v)?,
            "grad_clip" => self.grad_clip = if v == "none" { None } else { Some(num(key, v)?) },
            "k_list" => self.k_list = list(key, v)?,
            "k_max" => self.k_max = num(key, v)?,
            "eval_split" => {
                self.eval_split = match v {
                    "train" => SplitPart::Train,
                    "val" => SplitPart::Val,
                    "test" => SplitPart::Test,
                    "all" => SplitPart::All,
                    _ => return Err(format!("eval_split must be train|val|test|all, got {v:?}")),
                }
            }
            "exec" => {
                self.exec = match v {
                    "parallel" => Execution::Parallel,
                    "sequential" => Execution::Sequential,
                    _ => return Err(format!("exec must be parallel|sequential, got {v:?}")),
                }
            }
            "dataset" => self.dataset = opt_path(v),
            "checkpoint" => self.checkpoint = opt_path(v),
            "out" => self.out = opt_path(v),
            _ => return Err(format!("unknown configuration key {key:?}")),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> String {
        let m = &self.model;
        match key {
            "seed" => self.seed.to_string(),
            "num_scenes" => self.num_scenes.to_string(),
            "min_agents" => self.min_agents.to_string(),
            "max_agents" => self.max_agents.to_string(),
            "noise" => format!("{:?}", self.noise),
            "extent" => format!("{:?}", self.extent),
            "speed" => format!("{:?}", self.speed),
            "frame_period" => format!("{:?}", self.frame_period),
            "repulsion_radius" => format!("{:?}", self.repulsion_radius),
            "image_size" => self.image_size.map_or_else(|| "none".into(), |s| s.to_string()),
            "split" => self.split.map(|r| format!("{r:?}")).join(","),
            "t_h" => m.t_h.to_string(),
            "t_f" => m.t_f.to_string(),
            "n_max" => m.n_max.to_string(),
            "num_units" => m.num_units.to_string(),
            "c_out" => m.c_out.to_string(),
            "tg_kernel" => m.tg_kernel.to_string(),
            "num_heads" => m.num_heads.to_string(),
            "d_k" => m.d_k.to_string(),
            "d_out" => m.d_out.to_string(),
            "statt_mode" => match m.statt_mode {
                spectgnn::attention::StattMode::Sequential => "sequential".into(),
                spectgnn::attention::StattMode::Parallel => "parallel".into(),
            },
            "fusion_mode" => match m.fusion_mode {
                spectgnn::decoder::FusionMode::Add => "add".into(),
                spectgnn::decoder::FusionMode::Concat => "concat".into(),
            },
            "dec_kernel" => m.dec_kernel.to_string(),
            "dec_layers" => m.dec_layers.to_string(),
            "enc_channels" => join(&m.enc_channels),
            "enc_kernel" => m.enc_kernel.to_string(),
            "d_e" => m.d_e.to_string(),
            "enc_proj_gain" => format!("{:?}", m.enc_proj_gain),
            "distance_floor" => format!("{:?}", m.distance_floor),
            "eig_eps" => format!("{:?}", m.eig_eps),
            "env_grad" => match m.env_grad {
                spectgnn::EnvGrad::Broadened => "broadened".into(),
                spectgnn::EnvGrad::Blocked => "blocked".into(),
            },
            "prelu_init" => format!("{:?}", m.prelu_init),
            "ablation" => m.ablation.name().into(),
            "lr" => format!("{:?}", self.lr),
            "epochs" => self.epochs.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "lambda" => format!("{:?}", self.lambda),
            "grad_clip" => self.grad_clip.map_or_else(|| "none".into(), |c| format!("{c:?}")),
            "k_list" => join(&self.k_list),
            "k_max" => self.k_max.to_string(),
            "eval_split" => self.eval_split.name().into(),
            "exec" => match self.exec {
                Execution::Parallel => "parallel".into(),
                Execution::Sequential => "sequential".into(),
            },
            "dataset" => path_str(&self.dataset),
            "checkpoint" => path_str(&self.checkpoint),
            "out" => path_str(&self.out),
            _ => unreachable!("unknown key {key}"),
        }
    }

    /// Applies a `key=value` file; `#` starts a comment line.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), String> {
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("{origin}:{}: expected key=value, got {line:?}", no + 1))?;
            self.set(k.trim(), v).map_err(|e| format!("{origin}:{}: {e}", no + 1))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        self.apply_text(&text, &path.display().to_string())
    }

    /// Applies `key=value` overrides given on the command line.
    pub fn apply_override(&mut self, kv: &str) -> Result<(), String> {
        let (k, v) = kv.split_once('=').ok_or_else(|| format!("override must be key=value, got {kv:?}"))?;
        self.set(k.trim(), v)
    }

    /// The fully resolved configuration, one `key=value` per line, in a
    /// form [`apply_text`](Self::apply_text) reads back.
    pub fn render(&self) -> String {
        KEYS.iter().map(|k| format!("{k}={}\n", self.get(k))).collect()
    }

    /// Cross-field checks that do not need any data.
    pub fn validate(&self) -> Result<(), String> {
        self.model.validate().map_err(|e| e.to_string())?;
        self.train_config().validate().map_err(|e| e.to_string())?;
        self.dataset_spec().base.validate().map_err(|e| e.to_string())?;
        if self.min_agents == 0 || self.min_agents > self.max_agents {
            return Err("need 1 <= min_agents <= max_agents".into());
        }
        if self.k_list.is_empty() || self.k_list.contains(&0) || self.k_max == 0 {
            return Err("k_list must be non-empty and K values at least 1".into());
        }
        let sum: f64 = self.split.iter().sum();
        if self.split.iter().any(|r| r.is_nan() || *r < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(format!("split ratios must be non-negative and sum to 1, got {:?}", self.split));
        }
        Ok(())
    }

    pub fn dataset_spec(&self) -> DatasetSpec {
        DatasetSpec {
            count: self.num_scenes,
            seed: self.seed,
            min_agents: self.min_agents,
            max_agents: self.max_agents,
            base: ScenarioSpec {
                noise: self.noise,
                extent: self.extent,
                t_h: self.model.t_h,
                t_f: self.model.t_f,
                frame_period: self.frame_period,
                speed: self.speed,
                repulsion_radius: self.repulsion_radius,
                image_size: self.image_size,
                ..ScenarioSpec::default()
            },
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            loss: LossConfig { lambda: self.lambda },
            grad_clip: self.grad_clip,
            exec: self.exec,
        }
    }
}
