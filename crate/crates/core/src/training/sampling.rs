//! Drawing trajectory hypotheses from a Gaussian track.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::decoder::GaussianTrack;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `K` draws per step and agent, shape `[K, T_f, N, 2]`.
///
/// Each draw uses the Cholesky factor of the 2x2 covariance:
/// `x = mu_x + s_x z1`, `y = mu_y + s_y (rho z1 + sqrt(1 - rho^2) z2)`.
/// Draws are generated hypothesis by hypothesis from one stream, so the
/// first `K` hypotheses for a seed are the same whatever the total count.
pub fn sample_hypotheses(track: &GaussianTrack, k: usize, seed: u64) -> Result<Tensor> {
    if k == 0 {
        return Err(Error::contract("need at least one hypothesis"));
    }
    // Re-validate: a track built by deserialization may have skipped it.
    let track = GaussianTrack::new(track.params().clone())?;
    let (t_f, n) = (track.t_f(), track.num_agents());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(k * t_f * n * 2);
    for _ in 0..k {
        for t in 0..t_f {
            for i in 0..n {
                let [mx, my, sx, sy, rho] = track.at(t, i);
                let z1: f64 = StandardNormal.sample(&mut rng);
                let z2: f64 = StandardNormal.sample(&mut rng);
                out.push(mx + sx * z1);
                out.push(my + sy * (rho * z1 + (1.0 - rho * rho).sqrt() * z2));
            }
        }
    }
    Tensor::new(vec![k, t_f, n, 2], out)
}

/// The track means as a single hypothesis, `[1, T_f, N, 2]`.
pub fn mean_hypothesis(track: &GaussianTrack) -> Tensor {
    let (t_f, n) = (track.t_f(), track.num_agents());
    Tensor::from_fn(&[1, t_f, n, 2], |ix| track.mean(ix[1], ix[2])[ix[3]])
}
