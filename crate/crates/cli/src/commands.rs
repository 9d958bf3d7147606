use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde_json::json;
use spectgnn::data::{load_dataset, split_dataset, synth_dataset, write_dataset};
use spectgnn::diagnostics::gradcheck_suite;
use spectgnn::params::{load_checkpoint, save_checkpoint};
use spectgnn::training::fit::scene_seed;
use spectgnn::training::{evaluate, fit, sample_hypotheses, MetricsReport};
use spectgnn::{Model, ModelConfig, PreparedScene, SceneWindow};

use crate::config::{RunConfig, SplitPart};

/// Relative error at or above which a gradient check fails.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const LOSS_FILE: &str = "loss.csv";
pub const CONFIG_FILE: &str = "config.txt";

fn required<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    p.as_deref().with_context(|| format!("--{what} is required for this command"))
}

/// Writes to `out` when given, otherwise to stdout.
fn emit(out: &Option<PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            fs::write(p, text).with_context(|| format!("writing {}", p.display()))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn synth(cfg: &RunConfig) -> Result<()> {
    let dir = cfg.out.as_deref().or(cfg.dataset.as_deref()).context("--out is required for synth")?;
    let scenes = synth_dataset(&cfg.dataset_spec())?;
    write_dataset(dir, &scenes)?;
    fs::write(dir.join(CONFIG_FILE), cfg.render())?;
    log::info!("wrote {} scenes to {}", scenes.len(), dir.display());
    Ok(())
}

fn load_split(cfg: &RunConfig, part: SplitPart) -> Result<Vec<SceneWindow>> {
    let dir = required(&cfg.dataset, "dataset")?;
    let mut all = load_dataset(dir)?;
    if part == SplitPart::All {
        return Ok(all);
    }
    let split = split_dataset(all.len(), cfg.split, cfg.seed)?;
    let idx = match part {
        SplitPart::Train => split.train,
        SplitPart::Val => split.val,
        SplitPart::Test => split.test,
        SplitPart::All => unreachable!(),
    };
    let mut slots: Vec<Option<SceneWindow>> = all.drain(..).map(Some).collect();
    Ok(idx.into_iter().map(|i| slots[i].take().expect("split indices are distinct")).collect())
}

fn prepare_all(model: &Model, scenes: &[SceneWindow]) -> Result<Vec<PreparedScene>> {
    scenes
        .iter()
        .map(|s| model.prepare(s).with_context(|| format!("preparing scene {}", s.scene_id)))
        .collect()
}

/// The model from `--checkpoint`, a file or a directory holding one.
fn load_model(cfg: &RunConfig) -> Result<Model> {
    let mut path = required(&cfg.checkpoint, "checkpoint")?.to_path_buf();
    if path.is_dir() {
        path = path.join(CHECKPOINT_FILE);
    }
    let (config, store): (ModelConfig, _) = load_checkpoint(&path)?;
    if config.ablation != cfg.model.ablation || config.env_grad != cfg.model.env_grad {
        log::warn!(
            "checkpoint was trained with ablation={} env_grad={:?}; using the checkpoint's settings",
            config.ablation.name(),
            config.env_grad
        );
    }
    Ok(Model::from_parts(config, store)?)
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    let out = required(&cfg.out, "out")?;
    let scenes = load_split(cfg, SplitPart::Train)?;
    let mut model = Model::new(cfg.model.clone(), cfg.seed)?;
    let prepared = prepare_all(&model, &scenes)?;
    log::info!(
        "training {} on {} scenes, {} parameters",
        cfg.model.ablation.name(),
        prepared.len(),
        model.params.num_scalars()
    );
    let log = fit(&mut model, &prepared, &cfg.train_config(), |e| {
        log::debug!("epoch {} L_prob {:.6} L_dist {:.6} L_total {:.6}", e.epoch, e.prob, e.dist, e.total);
        if (e.epoch + 1) % 10 == 0 || e.epoch + 1 == cfg.epochs {
            log::info!("epoch {} L_total {:.6}", e.epoch + 1, e.total);
        }
    })?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    save_checkpoint(&out.join(CHECKPOINT_FILE), &model.config, &model.params)?;
    let mut csv = String::from("epoch,L_prob,L_dist,L_total\n");
    for e in &log {
        writeln!(csv, "{},{:?},{:?},{:?}", e.epoch, e.prob, e.dist, e.total)?;
    }
    fs::write(out.join(LOSS_FILE), csv)?;
    fs::write(out.join(CONFIG_FILE), cfg.render())?;
    Ok(())
}

fn evaluate_split(cfg: &RunConfig, k_list: &[usize]) -> Result<(Vec<SceneWindow>, MetricsReport)> {
    let model = load_model(cfg)?;
    let scenes = load_split(cfg, cfg.eval_split)?;
    if scenes.is_empty() {
        bail!("the {:?} split is empty", cfg.eval_split);
    }
    let prepared = prepare_all(&model, &scenes)?;
    let report = evaluate(&model, &prepared, k_list, cfg.seed, cfg.exec)?;
    Ok((scenes, report))
}

pub fn eval(cfg: &RunConfig) -> Result<()> {
    let (scenes, report) = evaluate_split(cfg, &cfg.k_list)?;
    for m in &report.aggregate {
        log::info!("K={} minADE {:.4} minFDE {:.4}", m.k, m.min_ade, m.min_fde);
    }
    let doc = json!({
        "split": cfg.get("eval_split"),
        "num_scenes": scenes.len(),
        "num_agents": scenes.iter().map(SceneWindow::num_agents).sum::<usize>(),
        "seed": cfg.seed,
        "report": report,
    });
    emit(&cfg.out, &(serde_json::to_string_pretty(&doc)? + "\n"))
}

pub fn ksweep(cfg: &RunConfig) -> Result<()> {
    let ks: Vec<usize> = (1..=cfg.k_max).collect();
    let (_, report) = evaluate_split(cfg, &ks)?;
    let mut csv = String::from("k,min_ade,min_fde\n");
    for m in &report.aggregate {
        writeln!(csv, "{},{:?},{:?}", m.k, m.min_ade, m.min_fde)?;
    }
    emit(&cfg.out, &csv)
}

pub fn predict(cfg: &RunConfig) -> Result<()> {
    let model = load_model(cfg)?;
    let scenes = load_split(cfg, cfg.eval_split)?;
    let k = *cfg.k_list.iter().max().context("k_list is empty")?;
    let mut lines = String::new();
    for (i, s) in scenes.iter().enumerate() {
        let prepared = model.prepare(s).with_context(|| format!("preparing scene {}", s.scene_id))?;
        let track = model.predict(&prepared)?;
        let samples = sample_hypotheses(&track, k, scene_seed(cfg.seed, i))?;
        let (t_f, n) = (track.t_f(), track.num_agents());
        let gaussians: Vec<Vec<[f64; 5]>> = (0..t_f).map(|t| (0..n).map(|a| track.at(t, a)).collect()).collect();
        let hyps: Vec<Vec<Vec<[f64; 2]>>> = (0..k)
            .map(|h| {
                (0..t_f)
                    .map(|t| (0..n).map(|a| [samples.get(&[h, t, a, 0]), samples.get(&[h, t, a, 1])]).collect())
                    .collect()
            })
            .collect();
        let rec = json!({
            "scene_id": s.scene_id,
            "agent_ids": s.agent_ids,
            "first_future_frame": s.first_frame + s.t_h() as i64,
            "gaussians": gaussians,
            "samples": hyps,
        });
        lines.push_str(&serde_json::to_string(&rec)?);
        lines.push('\n');
    }
    emit(&cfg.out, &lines)
}

/// Runs the gradient check suite; `Ok(false)` when any check fails.
pub fn gradcheck(cfg: &RunConfig) -> Result<bool> {
    let results = gradcheck_suite(&cfg.model, cfg.seed, cfg.exec)?;
    let mut text = String::new();
    let mut ok = true;
    for r in &results {
        let pass = r.report.max_rel_error < GRADCHECK_TOLERANCE;
        ok &= pass;
        writeln!(
            text,
            "{:<4} {:<28} max_rel_error {:.3e}  elements {:>6}  refined {:>3}  {}",
            if pass { "ok" } else { "FAIL" },
            r.name,
            r.report.max_rel_error,
            r.report.elements,
            r.report.refined,
            r.note
        )?;
    }
    writeln!(
        text,
        "{} of {} checks below {GRADCHECK_TOLERANCE:e}",
        results.iter().filter(|r| r.report.max_rel_error < GRADCHECK_TOLERANCE).count(),
        results.len()
    )?;
    emit(&cfg.out, &text)?;
    if cfg.out.is_some() {
        print!("{text}");
    }
    Ok(ok)
}
