//! Minimal differentiable operations: convolution, fully connected layers,
//! bilinear sampling, activations and losses. Each forward has an explicit
//! backward; composites chain them by hand.

pub mod bilinear;
pub mod checkpoint;
pub mod conv;
pub mod layers;
pub mod ops;
pub mod params;
pub mod tensor;

pub use bilinear::{bilinear_sample, bilinear_sample_backward, BilinearGrads, BilinearTap};
pub use conv::{conv2d, conv2d_backward, upsample2x, upsample2x_backward, ConvGrads, ConvParams, ConvSpec};
pub use ops::{
    bce_loss, bce_with_logits, fc, fc_backward, relu, relu_backward, sigmoid, sigmoid_backward,
    smooth_l1, softmax, softmax_cross_entropy, FcGrads,
};
pub use layers::{ConvLayer, Init, LinearLayer};
pub use params::{he_normal, normal, ParamId, ParamStore, Sgd, SgdConfig};
pub use tensor::{Scalar, Tensor};
