//! Dense tensor kernels and elementary layers.
//!
//! Everything here is a pure function of its inputs. The same kernels run at
//! two precisions: `Tensor<f32>` on inference and benchmark paths,
//! `Tensor<f64>` on verification and gradient-check paths.

mod grad;
mod ops;
mod rng;
mod tensor;

pub use grad::finite_diff_grad;
pub use ops::{
    batch_norm_infer, gelu, layer_norm, relu, softmax_lastdim, trunc_normal_init, DEFAULT_INIT_STD,
};
pub use rng::Rng;
pub use tensor::{Scalar, Tensor};
