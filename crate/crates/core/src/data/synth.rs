//! Seeded kinematic scenarios with optional occupancy rasters.

use std::f64::consts::PI;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{Affine, ContextImage, SceneWindow};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    Linear,
    Turning,
    Stopping,
    Crossing,
    Roundabout,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 5] = [
        ScenarioKind::Linear,
        ScenarioKind::Turning,
        ScenarioKind::Stopping,
        ScenarioKind::Crossing,
        ScenarioKind::Roundabout,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::Linear => "linear",
            ScenarioKind::Turning => "turning",
            ScenarioKind::Stopping => "stopping",
            ScenarioKind::Crossing => "crossing",
            ScenarioKind::Roundabout => "roundabout",
        }
    }
}

impl std::str::FromStr for ScenarioKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::config(format!("unknown scenario kind {s:?}")))
    }
}

/// Parameters of one generated scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    pub num_agents: usize,
    /// Standard deviation of additive position noise.
    pub noise: f64,
    pub seed: u64,
    /// Side length of the square region agents start in.
    pub extent: f64,
    pub t_h: usize,
    pub t_f: usize,
    pub frame_period: f64,
    /// Nominal walking speed in scene units per second.
    pub speed: f64,
    /// Minimum separation enforced in crossing scenes.
    pub repulsion_radius: f64,
    /// Side of the square occupancy raster; `None` for no image.
    pub image_size: Option<usize>,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            kind: ScenarioKind::Linear,
            num_agents: 3,
            noise: 0.0,
            seed: 0,
            extent: 10.0,
            t_h: 8,
            t_f: 12,
            frame_period: 1.0,
            speed: 1.0,
            repulsion_radius: 1.0,
            image_size: Some(32),
        }
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_agents == 0 || self.t_h == 0 || self.t_f == 0 {
            return Err(Error::config("num_agents, t_h and t_f must be positive"));
        }
        if !(self.noise >= 0.0) || !(self.extent > 0.0) || !(self.frame_period > 0.0) || !(self.speed > 0.0) {
            return Err(Error::config("noise must be >= 0; extent, frame_period and speed must be > 0"));
        }
        if !(self.repulsion_radius >= 0.0) {
            return Err(Error::config("repulsion_radius must be >= 0"));
        }
        if matches!(self.image_size, Some(s) if s < 4) {
            return Err(Error::config("image_size must be at least 4"));
        }
        Ok(())
    }
}

/// Constant-velocity positions `start + v * frame * period` for `frames` frames.
pub fn linear_track(start: [f64; 2], velocity: [f64; 2], frames: usize, period: f64) -> Vec<[f64; 2]> {
    (0..frames)
        .map(|f| {
            let t = f as f64 * period;
            [start[0] + velocity[0] * t, start[1] + velocity[1] * t]
        })
        .collect()
}

fn unit(angle: f64) -> [f64; 2] {
    [angle.cos(), angle.sin()]
}

/// Generates one scene. The same spec always gives the same scene.
pub fn synth_generate(spec: &ScenarioSpec) -> Result<SceneWindow> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.num_agents;
    let frames = spec.t_h + spec.t_f;
    let dt = spec.frame_period;
    let half = spec.extent / 2.0;
    let mut tracks: Vec<Vec<[f64; 2]>> = match spec.kind {
        ScenarioKind::Linear => (0..n)
            .map(|_| {
                let start = [rng.random_range(-half..half), rng.random_range(-half..half)];
                let v = spec.speed * rng.random_range(0.6..1.4);
                let d = unit(rng.random_range(0.0..2.0 * PI));
                linear_track(start, [v * d[0], v * d[1]], frames, dt)
            })
            .collect(),
        ScenarioKind::Turning => (0..n)
            .map(|_| {
                let start = [rng.random_range(-half..half), rng.random_range(-half..half)];
                let v = spec.speed * rng.random_range(0.6..1.4);
                let h0 = rng.random_range(0.0..2.0 * PI);
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                let w = sign * rng.random_range(0.08..0.25);
                (0..frames)
                    .map(|f| {
                        let t = f as f64 * dt;
                        let h = h0 + w * t;
                        [
                            start[0] + v / w * (h.sin() - h0.sin()),
                            start[1] - v / w * (h.cos() - h0.cos()),
                        ]
                    })
                    .collect()
            })
            .collect(),
        ScenarioKind::Stopping => (0..n)
            .map(|_| {
                let start = [rng.random_range(-half..half), rng.random_range(-half..half)];
                let v = spec.speed * rng.random_range(0.6..1.4);
                let d = unit(rng.random_range(0.0..2.0 * PI));
                let total = frames as f64 * dt;
                let t_stop = total * rng.random_range(0.4..0.9);
                (0..frames)
                    .map(|f| {
                        let t = (f as f64 * dt).min(t_stop);
                        let s = v * (t - t * t / (2.0 * t_stop));
                        [start[0] + s * d[0], start[1] + s * d[1]]
                    })
                    .collect()
            })
            .collect(),
        ScenarioKind::Crossing => crossing(spec, &mut rng),
        ScenarioKind::Roundabout => {
            let r0 = half.max(1.0) * rng.random_range(0.5..0.8);
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let phase0 = rng.random_range(0.0..2.0 * PI);
            (0..n)
                .map(|i| {
                    let lane = (i % 2) as f64;
                    let r = r0 + lane * spec.repulsion_radius.max(0.5);
                    let w = sign * spec.speed * rng.random_range(0.8..1.2) / r;
                    let p0 = phase0 + 2.0 * PI * i as f64 / n as f64;
                    (0..frames)
                        .map(|f| {
                            let a = p0 + w * f as f64 * dt;
                            [r * a.cos(), r * a.sin()]
                        })
                        .collect()
                })
                .collect()
        }
    };
    if spec.noise > 0.0 {
        let normal = Normal::new(0.0, spec.noise).map_err(|e| Error::config(e.to_string()))?;
        for tr in &mut tracks {
            for p in tr.iter_mut() {
                p[0] += normal.sample(&mut rng);
                p[1] += normal.sample(&mut rng);
            }
        }
    }
    let history = Tensor::from_fn(&[spec.t_h, n, 2], |ix| tracks[ix[1]][ix[0]][ix[2]]);
    let future = Tensor::from_fn(&[spec.t_f, n, 2], |ix| tracks[ix[1]][spec.t_h + ix[0]][ix[2]]);
    let scene_id = format!("{}-{}", spec.kind.name(), spec.seed);
    let ids = (0..n).map(|i| format!("a{i}")).collect();
    let mut scene = SceneWindow::new(scene_id.clone(), ids, history, Some(future), spec.t_f)?;
    scene.frame_period = dt;
    if let Some(size) = spec.image_size {
        let mut img = occupancy_image(&tracks, size, spec.repulsion_radius.max(0.5))?;
        img.path = Some(PathBuf::from(format!("{scene_id}.pgm")));
        scene = scene.with_image(img);
    }
    Ok(scene)
}

/// Two groups walking towards a common point from perpendicular directions,
/// meeting mid-window. Agents are pushed apart by an inverse-distance force,
/// then a projection pass restores the minimum separation exactly.
fn crossing(spec: &ScenarioSpec, rng: &mut ChaCha8Rng) -> Vec<Vec<[f64; 2]>> {
    let n = spec.num_agents;
    let frames = spec.t_h + spec.t_f;
    let dt = spec.frame_period;
    let r = spec.repulsion_radius;
    let meet = frames as f64 * dt / 2.0;
    let theta = rng.random_range(0.0..2.0 * PI);
    let dirs = [unit(theta), unit(theta + PI / 2.0)];
    let mut pos = Vec::with_capacity(n);
    let mut vel = Vec::with_capacity(n);
    for i in 0..n {
        let g = i % 2;
        let rank = (i / 2) as f64;
        let v = spec.speed * rng.random_range(0.8..1.2);
        let d = dirs[g];
        // Lateral offset keeps members of a group apart.
        let lateral = [-d[1], d[0]];
        let off = (rank - ((n / 2) as f64) / 2.0) * 2.0 * r.max(0.5);
        pos.push([
            -d[0] * v * meet + lateral[0] * off,
            -d[1] * v * meet + lateral[1] * off,
        ]);
        vel.push([d[0] * v, d[1] * v]);
    }
    separate(&mut pos, r);
    let mut tracks = vec![Vec::with_capacity(frames); n];
    for tr in tracks.iter_mut().zip(&pos) {
        tr.0.push(*tr.1);
    }
    for _ in 1..frames {
        let mut next = pos.clone();
        for i in 0..n {
            let mut f = [0.0, 0.0];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let dx = pos[i][0] - pos[j][0];
                let dy = pos[i][1] - pos[j][1];
                let d = dx.hypot(dy).max(1e-9);
                if d < 3.0 * r {
                    let k = r / (d * d);
                    f[0] += k * dx / d;
                    f[1] += k * dy / d;
                }
            }
            next[i][0] += (vel[i][0] + f[0]) * dt;
            next[i][1] += (vel[i][1] + f[1]) * dt;
        }
        separate(&mut next, r);
        pos = next;
        for (tr, p) in tracks.iter_mut().zip(&pos) {
            tr.push(*p);
        }
    }
    tracks
}

/// Moves pairs closer than `r` apart symmetrically until every pair is at
/// least `r` apart (with a small margin).
fn separate(pos: &mut [[f64; 2]], r: f64) {
    if r <= 0.0 {
        return;
    }
    let target = r * (1.0 + 1e-6);
    for _ in 0..1000 {
        let mut moved = false;
        for i in 0..pos.len() {
            for j in i + 1..pos.len() {
                let dx = pos[j][0] - pos[i][0];
                let dy = pos[j][1] - pos[i][1];
                let d = dx.hypot(dy);
                if d < r {
                    let (ux, uy) = if d > 1e-12 { (dx / d, dy / d) } else { (1.0, 0.0) };
                    let push = (target * (1.0 + 1e-3) - d) / 2.0;
                    pos[i][0] -= ux * push;
                    pos[i][1] -= uy * push;
                    pos[j][0] += ux * push;
                    pos[j][1] += uy * push;
                    moved = true;
                }
            }
        }
        if !moved {
            return;
        }
    }
}

/// Raster of the region near any trajectory segment, registered to the
/// bounding box of all positions plus a margin. Values are 8-bit levels so
/// the raster survives a round trip through an image file unchanged.
fn occupancy_image(tracks: &[Vec<[f64; 2]>], size: usize, width: f64) -> Result<ContextImage> {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in tracks.iter().flatten() {
        for a in 0..2 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let margin = 2.0 * width;
    let side = (hi[0] - lo[0]).max(hi[1] - lo[1]) + 2.0 * margin;
    let cx = (lo[0] + hi[0]) / 2.0;
    let cy = (lo[1] + hi[1]) / 2.0;
    let (x0, y0) = (cx - side / 2.0, cy - side / 2.0);
    // Pixel (col, row) covers scene point (x0 + col * s, y0 + row * s).
    let s = side / (size - 1) as f64;
    let affine = Affine([1.0 / s, 0.0, -x0 / s, 0.0, 1.0 / s, -y0 / s]);
    let segments: Vec<([f64; 2], [f64; 2])> = tracks
        .iter()
        .flat_map(|tr| tr.windows(2).map(|w| (w[0], w[1])))
        .collect();
    let pixels = Tensor::from_fn(&[size, size], |ix| {
        let p = [x0 + ix[1] as f64 * s, y0 + ix[0] as f64 * s];
        let d = segments
            .iter()
            .map(|&(a, b)| point_segment_distance(p, a, b))
            .fold(f64::INFINITY, f64::min);
        let d = if segments.is_empty() {
            tracks
                .iter()
                .flatten()
                .map(|q| (p[0] - q[0]).hypot(p[1] - q[1]))
                .fold(f64::INFINITY, f64::min)
        } else {
            d
        };
        let v = (-(d * d) / (2.0 * width * width)).exp();
        (v * 255.0).round() / 255.0
    });
    ContextImage::new(pixels, affine)
}

fn point_segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let ap = [p[0] - a[0], p[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len2 > 0.0 {
        ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (ap[0] - t * ab[0]).hypot(ap[1] - t * ab[1])
}

/// A mixed dataset: scene `i` has kind `ALL[i % 5]`, an agent count drawn
/// from `min_agents..=max_agents`, and its own seed derived from `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub count: usize,
    pub seed: u64,
    pub min_agents: usize,
    pub max_agents: usize,
    pub base: ScenarioSpec,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            count: 200,
            seed: 0,
            min_agents: 2,
            max_agents: 5,
            base: ScenarioSpec {
                noise: 0.05,
                ..ScenarioSpec::default()
            },
        }
    }
}

pub fn synth_dataset(spec: &DatasetSpec) -> Result<Vec<SceneWindow>> {
    if spec.min_agents == 0 || spec.min_agents > spec.max_agents {
        return Err(Error::config("need 1 <= min_agents <= max_agents"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    (0..spec.count)
        .map(|i| {
            let s = ScenarioSpec {
                kind: ScenarioKind::ALL[i % ScenarioKind::ALL.len()],
                num_agents: rng.random_range(spec.min_agents..=spec.max_agents),
                seed: rng.random(),
                ..spec.base.clone()
            };
            let mut scene = synth_generate(&s)?;
            let id = format!("scene{i:04}");
            if let Some(img) = &mut scene.image {
                img.path = Some(PathBuf::from(format!("{id}.pgm")));
            }
            scene.scene_id = id;
            Ok(scene)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_track_is_exact() {
        let tr = linear_track([0.0, 0.0], [1.0, 0.0], 6, 1.0);
        for (t, p) in tr.iter().enumerate() {
            assert_eq!(*p, [t as f64, 0.0]);
        }
    }

    #[test]
    fn same_seed_same_scene() {
        for kind in ScenarioKind::ALL {
            let spec = ScenarioSpec {
                kind,
                noise: 0.1,
                seed: 42,
                ..ScenarioSpec::default()
            };
            assert_eq!(synth_generate(&spec).unwrap(), synth_generate(&spec).unwrap());
        }
    }

    #[test]
    fn agents_inside_their_image() {
        for kind in ScenarioKind::ALL {
            let spec = ScenarioSpec {
                kind,
                num_agents: 4,
                seed: 3,
                ..ScenarioSpec::default()
            };
            let s = synth_generate(&spec).unwrap();
            let img = s.image.as_ref().unwrap();
            assert!(crate::graphs::environment_sample_points(&s, img).is_ok());
        }
    }
}
