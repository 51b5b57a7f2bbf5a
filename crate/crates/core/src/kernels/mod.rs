//! Double-precision reference kernels for the model-side building blocks:
//! RMSNorm, the SwiGLU feed-forward unit, the four-patch fusion MLP, 2D
//! rotary embeddings, LoRA updates and plain gradient descent.
//!
//! Every kernel with trainable inputs has a hand-written backward pass that
//! the test suite checks against central finite differences.

mod ffn;
mod fusion;
mod lora;
mod matrix;
mod norm;
mod optim;
mod rope;
pub mod selftest;

pub use ffn::{sigmoid, swiglu_ffn, swish, SwiGluFfn, SwiGluGrads};
pub use fusion::{fusion_mlp, group_patches, Activation, FusionGrads, FusionMlp};
pub use lora::{
    apply_adapters, lora_apply, lora_delta, lora_param_count, AttentionProjections, LoraAdapter, LoraGrads, LoraTarget,
};
pub use matrix::Matrix;
pub use norm::{rmsnorm, rmsnorm_backward, RmsNormGrads, RmsNormParams, DEFAULT_RMS_EPSILON};
pub use optim::{finite_diff_grad, max_relative_error, sgd_step, DEFAULT_FD_STEP};
pub use rope::{rope_2d, DEFAULT_ROPE_BASE};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum KernelError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("io error: {0}")]
    Io(String),
}

pub(crate) fn check_finite(name: &str, xs: &[f64]) -> Result<(), KernelError> {
    if xs.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(KernelError::NonFinite(name.to_string()))
    }
}
