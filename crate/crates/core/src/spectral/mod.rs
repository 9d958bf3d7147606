//! Graph Fourier machinery: eigenbases, GFT/IGFT, spectral and temporal
//! gated convolution, and the two-block unit built from them.

pub mod block;
pub mod eigen;
pub mod gft;

pub use block::{sgconv, spectgnn_unit, spectral_block, tgconv, BlockVars, TemporalGateVars};
pub use eigen::{eigh_sym, SpectralBasis};
pub use gft::{gft, igft, BasisVars};
