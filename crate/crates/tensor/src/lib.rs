//! Dense tensors and the differentiable kernels behind the LGFN light-field
//! super-resolution network: grouped/dilated convolution, pooling, pixel
//! shuffle, bilinear/bicubic resampling, pointwise activations and a 2D DFT,
//! plus a reverse-mode [`GradTape`] and a central-difference [`gradcheck`].

pub mod activation;
pub mod conv;
pub mod counter;
pub mod error;
pub mod fft;
pub mod pool;
pub mod resize;
pub mod scalar;
pub mod shuffle;
pub mod tape;
pub mod tensor;

pub use activation::{Activation, LEAKY_SLOPE};
pub use conv::{conv2d, conv2d_backward, conv3d_1xkxk, conv_param_count, ConvSpec};
pub use counter::OpCount;
pub use error::{Result, TensorError};
pub use fft::{dft2d, fft2d};
pub use pool::{adaptive_pool2d, pool2d, PoolKind};
pub use resize::{resize, ResizeMode, Scale};
pub use scalar::Real;
pub use shuffle::{pixel_shuffle, pixel_unshuffle};
pub use tape::{gradcheck, gradcheck_with_floor, GradTape, GradcheckReport, Gradients, Var};
pub use tensor::{ComplexTensor, Tensor};

#[cfg(any(test, feature = "oracle"))]
pub mod oracle;
