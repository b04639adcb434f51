//! Minimal dense numerical core: convolution (via im2col + GEMM), linear
//! layers, ReLU and FTA activations, Xavier initialization, Adam, and MSE,
//! each with hand-derived reverse-mode gradients. Everything is generic over
//! [`crate::num::Scalar`] so the gradient checks can rerun the exact same
//! code at f64.

mod activation;
mod conv;
pub mod gradcheck;
mod init;
mod linear;
mod loss;
mod mlp;
mod optim;

pub use activation::{fta_backward, fta_forward, relu_backward, relu_forward, FtaConfig};
pub use conv::{conv_out_size, Conv2d, ConvTranspose2d};
pub use init::xavier_uniform;
pub use linear::Linear;
pub use loss::{mse_grad, mse_loss};
pub use mlp::{visit_prefixed, Mlp};
pub use optim::Adam;
