//! Bidirectional diagonal state-space (S4-style) sequence encoder.
//!
//! Each layer convolves every model channel with a kernel of the form
//! K[l] = 2·Re(Σₙ Cₙ·B̄ₙ·Āₙˡ), the impulse response of a diagonal
//! continuous-time system discretized by zero-order hold. Kernels are
//! evaluated causally via FFT convolution, and every gradient — including
//! those of the state-space coefficients — is derived in closed form.

mod block;
mod encoder;
mod fftconv;
mod kernel;

pub use block::{
    affine_backward, affine_forward, dropout_backward, dropout_forward, gelu_backward,
    gelu_forward, layer_norm_backward, layer_norm_forward, LayerNormCache, LN_EPS,
};
pub use encoder::{
    Encoder, EncoderConfig, EncoderKernels, EncoderTape, KernelGradAccumulator, Mode,
};
pub use fftconv::{causal_conv, correlate, ConvPlan};
pub use kernel::{
    compute_kernel, discretize, init_ssm_channel, kernel_backward, kernel_from_coeffs, omegas,
    ChannelKernel, ChannelKernelGrads, DEGENERATE_EPS,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SsmError {
    #[error("shape mismatch: {detail}")]
    ShapeMismatch { detail: String },
    #[error("non-finite activation in {location}")]
    NonFiniteActivation { location: String },
    #[error("|lambda| = {lambda_norm:.3e} is numerically degenerate")]
    DegenerateLambda { lambda_norm: f64 },
}
