//! Observation/prediction episodes.

use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Scene-to-pixel map: `col = a x + b y + c`, `row = d x + e y + f`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine(pub [f64; 6]);

impl Affine {
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let [a, b, c, d, e, f] = self.0;
        (a * x + b * y + c, d * x + e * y + f)
    }

    /// Same pixel mapping after every scene point is shifted by `(dx, dy)`.
    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        let [a, b, c, d, e, f] = self.0;
        Affine([a, b, c - a * dx - b * dy, d, e, f - d * dx - e * dy])
    }
}

/// Grayscale context raster with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextImage {
    /// `[H, W]`.
    pub pixels: Tensor,
    pub affine: Affine,
    /// Where the raster was read from or should be written to, relative to
    /// the scene file.
    pub path: Option<PathBuf>,
}

impl ContextImage {
    pub fn new(pixels: Tensor, affine: Affine) -> Result<Self> {
        if pixels.ndim() != 2 || pixels.is_empty() {
            return Err(Error::data(format!("context image must be [H, W], got {:?}", pixels.shape())));
        }
        Ok(Self {
            pixels,
            affine,
            path: None,
        })
    }

    pub fn height(&self) -> usize {
        self.pixels.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.pixels.shape()[1]
    }
}

/// One episode: `N` agents, `T_h` observed positions, `T_f` target positions.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneWindow {
    pub scene_id: String,
    pub agent_ids: Vec<String>,
    /// `[T_h, N, 2]`.
    history: Tensor,
    /// `[T_f, N, 2]` when known.
    future: Option<Tensor>,
    t_f: usize,
    pub frame_period: f64,
    pub first_frame: i64,
    pub image: Option<ContextImage>,
}

fn check_positions(t: &Tensor, what: &str, offset: usize, ids: &[String]) -> Result<()> {
    let n = ids.len();
    for (k, v) in t.data().iter().enumerate() {
        if !v.is_finite() {
            let step = k / (2 * n);
            let agent = (k / 2) % n;
            return Err(Error::data(format!(
                "non-finite {what} position for agent {} at timestep {}",
                ids[agent],
                offset + step
            )));
        }
    }
    Ok(())
}

impl SceneWindow {
    pub fn new(
        scene_id: impl Into<String>,
        agent_ids: Vec<String>,
        history: Tensor,
        future: Option<Tensor>,
        t_f: usize,
    ) -> Result<Self> {
        let n = agent_ids.len();
        if n == 0 {
            return Err(Error::data("scene needs at least one agent"));
        }
        let [t_h, hn, 2] = *history.shape() else {
            return Err(Error::data(format!("history must be [T_h, N, 2], got {:?}", history.shape())));
        };
        if t_h == 0 || t_f == 0 {
            return Err(Error::data("T_h and T_f must be at least 1"));
        }
        if hn != n {
            return Err(Error::data(format!("history has {hn} agents, ids list {n}")));
        }
        check_positions(&history, "history", 0, &agent_ids)?;
        if let Some(f) = &future {
            if f.shape() != [t_f, n, 2] {
                return Err(Error::data(format!(
                    "future must be [{t_f}, {n}, 2], got {:?}",
                    f.shape()
                )));
            }
            check_positions(f, "future", t_h, &agent_ids)?;
        }
        Ok(Self {
            scene_id: scene_id.into(),
            agent_ids,
            history,
            future,
            t_f,
            frame_period: 1.0,
            first_frame: 0,
            image: None,
        })
    }

    pub fn with_image(mut self, image: ContextImage) -> Self {
        self.image = Some(image);
        self
    }

    pub fn num_agents(&self) -> usize {
        self.agent_ids.len()
    }

    pub fn t_h(&self) -> usize {
        self.history.shape()[0]
    }

    pub fn t_f(&self) -> usize {
        self.t_f
    }

    pub fn history(&self) -> &Tensor {
        &self.history
    }

    pub fn future(&self) -> Option<&Tensor> {
        self.future.as_ref()
    }

    pub fn position(&self, t: usize, agent: usize) -> [f64; 2] {
        [self.history.get(&[t, agent, 0]), self.history.get(&[t, agent, 1])]
    }

    pub fn last_observed(&self, agent: usize) -> [f64; 2] {
        self.position(self.t_h() - 1, agent)
    }

    /// Drops the ground-truth future.
    pub fn without_future(mut self) -> Self {
        self.future = None;
        self
    }

    /// Shifts every position (and the image registration) by `(dx, dy)`.
    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        let shift = |t: &Tensor| {
            let mut t = t.clone();
            for pair in t.data_mut().chunks_mut(2) {
                pair[0] += dx;
                pair[1] += dy;
            }
            t
        };
        let mut out = self.clone();
        out.history = shift(&self.history);
        out.future = self.future.as_ref().map(shift);
        if let Some(img) = &mut out.image {
            img.affine = img.affine.translated(dx, dy);
        }
        out
    }

    /// Relabels agents so that new agent `k` is old agent `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.num_agents();
        let mut seen = vec![false; n];
        if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::contract(format!("{perm:?} is not a permutation of {n} agents")));
        }
        let take = |t: &Tensor| {
            let steps = t.shape()[0];
            Tensor::from_fn(&[steps, n, 2], |ix| t.get(&[ix[0], perm[ix[1]], ix[2]]))
        };
        let mut out = self.clone();
        out.agent_ids = perm.iter().map(|&p| self.agent_ids[p].clone()).collect();
        out.history = take(&self.history);
        out.future = self.future.as_ref().map(take);
        Ok(out)
    }

    /// Diagonal of the bounding box over all known positions.
    pub fn extent_diagonal(&self) -> f64 {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        let all = self.history.data().chunks(2).chain(
            self.future
                .as_ref()
                .map(|f| f.data().chunks(2))
                .into_iter()
                .flatten(),
        );
        for p in all {
            for a in 0..2 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        ((hi[0] - lo[0]).powi(2) + (hi[1] - lo[1]).powi(2)).sqrt()
    }
}
