use super::{GraphRole, WeightMatrix};
use crate::error::{Error, Result};
use crate::scene::SceneWindow;
use crate::tensor::Tensor;

/// Floor on inter-agent distance so coincident agents get a finite weight.
pub const DEFAULT_DISTANCE_FLOOR: f64 = 1e-6;

/// Inverse-distance agent graph for every observed timestep:
/// `w_ij = 1 / max(|p_i - p_j|, eps)` off the diagonal.
pub fn build_agent_graph(scene: &SceneWindow, eps: f64) -> Result<Vec<WeightMatrix>> {
    if !(eps > 0.0) {
        return Err(Error::config(format!("distance floor must be positive, got {eps}")));
    }
    let n = scene.num_agents();
    (0..scene.t_h())
        .map(|t| {
            let pos: Vec<[f64; 2]> = (0..n).map(|i| scene.position(t, i)).collect();
            for (i, p) in pos.iter().enumerate() {
                if !p[0].is_finite() || !p[1].is_finite() {
                    return Err(Error::data(format!(
                        "non-finite position for agent {} at timestep {t}",
                        scene.agent_ids[i]
                    )));
                }
            }
            let mut w = Tensor::zeros(&[n, n]);
            let wd = w.data_mut();
            for i in 0..n {
                for j in i + 1..n {
                    let dx = pos[i][0] - pos[j][0];
                    let dy = pos[i][1] - pos[j][1];
                    let v = 1.0 / dx.hypot(dy).max(eps);
                    wd[i * n + j] = v;
                    wd[j * n + i] = v;
                }
            }
            WeightMatrix::new(w, GraphRole::Agent)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene(points: &[[f64; 2]]) -> SceneWindow {
        let n = points.len();
        let h = Tensor::from_fn(&[1, n, 2], |ix| points[ix[1]][ix[2]]);
        SceneWindow::new("t", (0..n).map(|i| i.to_string()).collect(), h, None, 1).unwrap()
    }

    #[test]
    fn three_four_five() {
        let g = build_agent_graph(&scene(&[[0.0, 0.0], [3.0, 4.0]]), DEFAULT_DISTANCE_FLOOR).unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(g[0].get(0, 1), 0.2);
        assert_eq!(g[0].get(1, 0), 0.2);
        assert_eq!(g[0].get(0, 0), 0.0);
    }

    #[test]
    fn coincident_agents_hit_the_floor() {
        let g = build_agent_graph(&scene(&[[1.0, 1.0], [1.0, 1.0]]), DEFAULT_DISTANCE_FLOOR).unwrap();
        assert_eq!(g[0].get(0, 1), 1.0 / 1e-6);
    }

    #[test]
    fn single_agent_is_zero() {
        let g = build_agent_graph(&scene(&[[5.0, -2.0]]), DEFAULT_DISTANCE_FLOOR).unwrap();
        assert_eq!(g[0].values(), &Tensor::zeros(&[1, 1]));
    }

    #[test]
    fn floor_must_be_positive() {
        assert!(build_agent_graph(&scene(&[[0.0, 0.0]]), 0.0).is_err());
    }
}
