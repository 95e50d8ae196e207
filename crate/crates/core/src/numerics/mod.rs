//! Dense matrix arithmetic, layer passes with exact gradients, Adam, and a
//! finite-difference checker.

mod grad_check;
mod layers;
mod matrix;
mod param;

pub use grad_check::{finite_diff_check, numeric_gradient, relative_error, GradCheckReport, RELATIVE_ERROR_FLOOR};
pub use layers::{
    activation_apply, activation_backward, activation_forward, batchnorm_backward, batchnorm_forward, grad_reverse,
    linear_backward, linear_forward, log_softmax, sigmoid, softmax, Activation, ActivationCache, BatchNorm,
    BatchNormCache, BatchNormGrads, BatchNormOutput, Linear, LinearCache, LinearGrads, Mode, BN_EPS, BN_MOMENTUM,
    LEAKY_RELU_SLOPE,
};
pub use matrix::Matrix;
pub use param::{AdamConfig, ParamBlock};
