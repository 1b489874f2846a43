//! Hand-rolled numeric layer: tensors, spline graph convolution with
//! lookup-table deployment, GRU, attention, classification head, analytic
//! gradients for every parameter, and Adam/AdamW.

pub mod adam;
pub mod attention;
pub mod gru;
pub mod init;
pub mod io;
pub mod linear;
pub mod spline;
pub mod tensor;

pub use adam::{adam_step, adamw_step, AdamConfig, AdamState};
pub use attention::{attention, attention_backward, AttentionCache, AttentionGrads, AttentionParams};
pub use gru::{gru_backward, gru_step, GruCache, GruGrads, GruParams};
pub use linear::{
    linear_backward, linear_forward, relu, relu_backward, softmax, weighted_cross_entropy,
    weighted_cross_entropy_backward, LinearCache, LinearGrads, LinearParams,
};
pub use spline::{
    basis_clamp_count, build_lut, kernel_lipschitz, lut_forward, reset_basis_clamp_count,
    spline_basis, spline_conv_backward, spline_conv_forward, BasisWeight, ConvEdge,
    SplineConvCache, SplineKernel, SplineKernelGrads, SplineLut,
};
pub use tensor::Tensor;
