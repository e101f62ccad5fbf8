//! Minimal differentiable kernels for volumetric data.
//!
//! Tensors are dense and row-major. Volumetric tensors use the layout
//! `(batch, channels, d0, d1, d2)`; which spatial axis maps to which world
//! axis is up to the caller. Every kernel is generic over [`Scalar`] so the
//! same code trains in `f32` and is gradient-checked in `f64`.

mod activation;
mod adam;
mod conv;
mod dense;
mod error;
pub mod gradcheck;
mod init;
mod loss;
mod pool;
mod resize;
mod scalar;
mod tensor;
pub mod weights;

pub use activation::{relu_backward_inplace, relu_inplace};
pub use adam::{adam_step, AdamConfig, LayerState, Param};
pub use conv::{conv3d_backward, conv3d_backward_accumulate, conv3d_forward, Conv3dGrads};
pub use dense::{dense_backward, dense_backward_accumulate, dense_forward, DenseGrads};
pub use error::TensorError;
pub use gradcheck::grad_check;
pub use init::glorot_uniform;
pub use loss::{softmax_ce_loss, softmax_ce_loss_scaled, softmax_channels};
pub use pool::{maxpool3d, maxpool3d_backward, pooled_dim};
pub use resize::{center_crop, center_crop_backward, upsample_nearest, upsample_nearest_backward};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type LayerState32 = LayerState<f32>;
pub type LayerState64 = LayerState<f64>;
