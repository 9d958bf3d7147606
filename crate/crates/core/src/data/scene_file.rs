//! Line-oriented scene format: `key=value` header lines, then a CSV table
//! `agent_id,frame,x,y`. Blank lines and lines starting with `#` are ignored.
//!
//! ```text
//! scene_id=s0001
//! t_h=8
//! t_f=12
//! frame_period=0.4
//! image=s0001.pgm
//! affine=2,0,10,0,2,10
//! agent_id,frame,x,y
//! a,0,1.5,-2
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::image_io::{read_image, write_image};
use crate::error::{Error, Result};
use crate::scene::{Affine, ContextImage, SceneWindow};
use crate::tensor::Tensor;

const TABLE_HEADER: &str = "agent_id,frame,x,y";

fn perr(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

fn parse_num<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| perr(line, format!("invalid value {v:?} for {key}")))
}

/// Parses scene text. Image paths resolve against `base_dir`.
pub fn parse_scene_str(text: &str, base_dir: Option<&Path>) -> Result<SceneWindow> {
    let mut header: BTreeMap<&str, (usize, &str)> = BTreeMap::new();
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let mut saw_table = false;
    for (no, line) in lines.by_ref() {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if line == TABLE_HEADER {
            saw_table = true;
            break;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| perr(no, format!("expected key=value or {TABLE_HEADER:?}, got {line:?}")))?;
        let k = k.trim();
        if !matches!(k, "scene_id" | "t_h" | "t_f" | "frame_period" | "image" | "affine") {
            return Err(perr(no, format!("unknown header key {k:?}")));
        }
        if header.insert(k, (no, v.trim())).is_some() {
            return Err(perr(no, format!("duplicate header key {k:?}")));
        }
    }
    if !saw_table {
        return Err(perr(text.lines().count() + 1, format!("missing table header {TABLE_HEADER:?}")));
    }
    let need = |k: &str| header.get(k).copied().ok_or_else(|| perr(1, format!("missing header key {k}")));
    let scene_id = need("scene_id")?.1.to_string();
    let (l, v) = need("t_h")?;
    let t_h: usize = parse_num(l, "t_h", v)?;
    let (l, v) = need("t_f")?;
    let t_f: usize = parse_num(l, "t_f", v)?;
    let frame_period = match header.get("frame_period") {
        Some(&(l, v)) => parse_num(l, "frame_period", v)?,
        None => 1.0,
    };

    // agent -> frame -> position, agents in order of first appearance.
    let mut order: Vec<String> = Vec::new();
    let mut rows: BTreeMap<String, BTreeMap<i64, [f64; 2]>> = BTreeMap::new();
    for (no, line) in lines {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 4 {
            return Err(perr(no, format!("expected 4 fields, got {}", f.len())));
        }
        if f[0].is_empty() {
            return Err(perr(no, "empty agent id"));
        }
        let frame: i64 = parse_num(no, "frame", f[1])?;
        let x: f64 = parse_num(no, "x", f[2])?;
        let y: f64 = parse_num(no, "y", f[3])?;
        if !rows.contains_key(f[0]) {
            order.push(f[0].to_string());
        }
        let per = rows.entry(f[0].to_string()).or_default();
        if per.insert(frame, [x, y]).is_some() {
            return Err(perr(no, format!("duplicate frame {frame} for agent {}", f[0])));
        }
    }
    if order.is_empty() {
        return Err(Error::data(format!("scene {scene_id} has no rows")));
    }
    let first = rows.values().filter_map(|m| m.keys().next()).min().copied().unwrap_or(0);
    let len = rows[&order[0]].len();
    for id in &order {
        let frames = &rows[id];
        for k in 0..len.max(frames.len()) {
            let f = first + k as i64;
            if !frames.contains_key(&f) {
                return Err(Error::data(format!("agent {id} is missing frame {f}")));
            }
        }
        if frames.len() != len {
            return Err(Error::data(format!(
                "agent {id} has {} frames, agent {} has {len}",
                frames.len(),
                order[0]
            )));
        }
    }
    let has_future = if len == t_h + t_f {
        true
    } else if len == t_h {
        false
    } else {
        return Err(Error::data(format!(
            "scene {scene_id} has {len} frames per agent; expected {t_h} or {}",
            t_h + t_f
        )));
    };
    let n = order.len();
    let series: Vec<Vec<[f64; 2]>> = order.iter().map(|id| rows[id].values().copied().collect()).collect();
    let history = Tensor::from_fn(&[t_h, n, 2], |ix| series[ix[1]][ix[0]][ix[2]]);
    let future = has_future.then(|| Tensor::from_fn(&[t_f, n, 2], |ix| series[ix[1]][t_h + ix[0]][ix[2]]));
    let mut scene = SceneWindow::new(scene_id, order, history, future, t_f)?;
    scene.frame_period = frame_period;
    scene.first_frame = first;

    match (header.get("image"), header.get("affine")) {
        (Some(&(_, rel)), Some(&(al, av))) => {
            let coeffs: Vec<f64> = av
                .split(',')
                .map(|c| parse_num(al, "affine", c))
                .collect::<Result<_>>()?;
            let affine: [f64; 6] = coeffs
                .try_into()
                .map_err(|_| perr(al, "affine needs six comma-separated numbers"))?;
            let rel = PathBuf::from(rel);
            let full = match base_dir {
                Some(d) if rel.is_relative() => d.join(&rel),
                _ => rel.clone(),
            };
            let mut img = ContextImage::new(read_image(&full)?, Affine(affine))?;
            img.path = Some(rel);
            scene = scene.with_image(img);
        }
        (Some(&(l, _)), None) => return Err(perr(l, "image given without affine")),
        (None, Some(&(l, _))) => return Err(perr(l, "affine given without image")),
        (None, None) => {}
    }
    Ok(scene)
}

/// Reads and validates one scene file.
pub fn parse_scene(path: &Path) -> Result<SceneWindow> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scene_str(&text, path.parent())
}

/// Scene text; floats use the shortest representation that reads back to
/// the same bits.
pub fn write_scene_string(scene: &SceneWindow) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "scene_id={}", scene.scene_id);
    let _ = writeln!(s, "t_h={}", scene.t_h());
    let _ = writeln!(s, "t_f={}", scene.t_f());
    let _ = writeln!(s, "frame_period={:?}", scene.frame_period);
    if let Some(img) = &scene.image {
        if let Some(p) = &img.path {
            let _ = writeln!(s, "image={}", p.display());
            let a = img.affine.0.map(|v| format!("{v:?}")).join(",");
            let _ = writeln!(s, "affine={a}");
        }
    }
    let _ = writeln!(s, "{TABLE_HEADER}");
    let n = scene.num_agents();
    for (i, id) in scene.agent_ids.iter().enumerate() {
        let mut frame = scene.first_frame;
        let mut emit = |t: &Tensor, step: usize| {
            let (x, y) = (t.get(&[step, i, 0]), t.get(&[step, i, 1]));
            let _ = writeln!(s, "{id},{frame},{x:?},{y:?}");
            frame += 1;
        };
        for step in 0..scene.t_h() {
            emit(scene.history(), step);
        }
        if let Some(f) = scene.future() {
            for step in 0..scene.t_f() {
                emit(f, step);
            }
        }
    }
    debug_assert!(n > 0);
    s
}

/// Writes the scene file and, when the scene has an image with a path, the
/// raster next to it.
pub fn write_scene(path: &Path, scene: &SceneWindow) -> Result<()> {
    if let Some(img) = &scene.image {
        if let Some(rel) = &img.path {
            let full = match path.parent() {
                Some(d) if rel.is_relative() => d.join(rel),
                _ => rel.clone(),
            };
            write_image(&full, &img.pixels)?;
        }
    }
    std::fs::write(path, write_scene_string(scene)).map_err(|e| Error::io(path, e))
}

/// Writes every scene as `<scene_id>.scene` in `dir`.
pub fn write_dataset(dir: &Path, scenes: &[SceneWindow]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for s in scenes {
        write_scene(&dir.join(format!("{}.scene", s.scene_id)), s)?;
    }
    Ok(())
}

/// Every `*.scene` file in `dir`, sorted by file name.
pub fn load_dataset(dir: &Path) -> Result<Vec<SceneWindow>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "scene"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::data(format!("no .scene files in {}", dir.display())));
    }
    paths.iter().map(|p| parse_scene(p)).collect()
}
