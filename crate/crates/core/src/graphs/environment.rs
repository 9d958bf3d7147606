//! Environment graph from a context image.
//!
//! A small convolutional stack (3x3 kernels, PReLU) turns the raster into a
//! feature map. Each agent reads its feature vector by bilinear sampling at
//! its last observed position, a linear layer maps that to an embedding
//! `z_i`, and the edge weight is `sigmoid(z_i . z_j / sqrt(d_e))` off the
//! diagonal. Sampling per agent keeps the construction valid for any `N` and
//! makes it equivariant under agent relabeling.

use crate::error::{Error, Result};
use crate::scene::{ContextImage, SceneWindow};
use crate::tensor::{Tape, Tensor, Var};

/// One convolution layer of the encoder.
#[derive(Debug, Clone, Copy)]
pub struct ConvLayerVars {
    /// `[C_out, C_in, 3, 3]`.
    pub weight: Var,
    /// `[C_out]`.
    pub bias: Var,
    /// `[C_out]` PReLU slopes.
    pub slope: Var,
}

/// Encoder parameters bound on a tape.
#[derive(Debug, Clone)]
pub struct EncoderVars {
    pub convs: Vec<ConvLayerVars>,
    /// `[C_last, d_e]`.
    pub proj_weight: Var,
    /// `[d_e]`.
    pub proj_bias: Var,
}

/// Pixel coordinates `(col, row)` of every agent's last observed position.
pub fn environment_sample_points(scene: &SceneWindow, image: &ContextImage) -> Result<Vec<(f64, f64)>> {
    let (h, w) = (image.height(), image.width());
    (0..scene.num_agents())
        .map(|i| {
            let [x, y] = scene.last_observed(i);
            let (u, v) = image.affine.apply(x, y);
            let inside = u >= 0.0 && v >= 0.0 && u <= (w - 1) as f64 && v <= (h - 1) as f64;
            if !inside {
                return Err(Error::data(format!(
                    "agent {} at ({x}, {y}) maps to pixel ({u:.3}, {v:.3}), outside the {h}x{w} context image",
                    scene.agent_ids[i]
                )));
            }
            Ok((u, v))
        })
        .collect()
}

/// Records the environment weight matrix `[N, N]` on `tape`.
pub fn encode_environment(
    tape: &mut Tape,
    image: &ContextImage,
    scene: &SceneWindow,
    vars: &EncoderVars,
) -> Result<Var> {
    let n = scene.num_agents();
    let points = environment_sample_points(scene, image)?;
    let (h, w) = (image.height(), image.width());
    let mut x = tape.constant(image.pixels.clone().reshape(&[1, h, w])?);
    for layer in &vars.convs {
        x = tape.conv2d(x, layer.weight)?;
        let c = tape.shape(layer.bias)[0];
        let b = tape.reshape(layer.bias, &[c, 1, 1])?;
        x = tape.add(x, b)?;
        x = tape.prelu_axis(x, layer.slope, 0)?;
    }
    let feats = tape.bilinear_sample(x, &points)?;
    let z = tape.matmul(feats, vars.proj_weight)?;
    let z = tape.add(z, vars.proj_bias)?;
    let d_e = tape.shape(z)[1];
    let zt = tape.transpose(z)?;
    let gram = tape.matmul(z, zt)?;
    let logits = tape.scale(gram, 1.0 / (d_e as f64).sqrt());
    let sim = tape.sigmoid(logits);
    let mask = Tensor::from_fn(&[n, n], |ix| if ix[0] == ix[1] { 0.0 } else { 1.0 });
    let mask = tape.constant(mask);
    tape.mul(sim, mask)
}
