use super::{check_finite, KernelError};

pub const DEFAULT_RMS_EPSILON: f64 = 1e-6;

/// Learnable per-element scale and the stabilizing epsilon.
///
/// A one-element `gamma` is broadcast across the input.
#[derive(Debug, Clone, PartialEq)]
pub struct RmsNormParams {
    pub gamma: Vec<f64>,
    pub epsilon: f64,
}

impl RmsNormParams {
    pub fn new(gamma: Vec<f64>, epsilon: f64) -> Self {
        RmsNormParams { gamma, epsilon }
    }

    /// Unit scale of width `n`.
    pub fn unit(n: usize, epsilon: f64) -> Self {
        RmsNormParams {
            gamma: vec![1.0; n],
            epsilon,
        }
    }

    fn gamma_at(&self, i: usize) -> f64 {
        if self.gamma.len() == 1 {
            self.gamma[0]
        } else {
            self.gamma[i]
        }
    }

    fn check(&self, n: usize) -> Result<(), KernelError> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(KernelError::Invalid(format!(
                "epsilon must be >= 0, got {}",
                self.epsilon
            )));
        }
        if self.gamma.len() != n && self.gamma.len() != 1 {
            return Err(KernelError::Shape(format!(
                "gamma has {} entries for input of {n}",
                self.gamma.len()
            )));
        }
        check_finite("gamma", &self.gamma)
    }
}

fn rms(x: &[f64], epsilon: f64) -> Result<f64, KernelError> {
    let ms = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    let r = (ms + epsilon).sqrt();
    if r == 0.0 {
        return Err(KernelError::Invalid("zero input with epsilon 0 has no RMS norm".into()));
    }
    Ok(r)
}

/// `x / sqrt(mean(x²) + ε) · γ`.
pub fn rmsnorm(x: &[f64], params: &RmsNormParams) -> Result<Vec<f64>, KernelError> {
    if x.is_empty() {
        return Err(KernelError::Shape("rmsnorm input is empty".into()));
    }
    check_finite("rmsnorm input", x)?;
    params.check(x.len())?;
    let r = rms(x, params.epsilon)?;
    Ok(x.iter().enumerate().map(|(i, v)| v / r * params.gamma_at(i)).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RmsNormGrads {
    pub x: Vec<f64>,
    /// Same length as `params.gamma`.
    pub gamma: Vec<f64>,
}

/// Vector-Jacobian product of [`rmsnorm`] with upstream gradient `grad_out`.
pub fn rmsnorm_backward(x: &[f64], params: &RmsNormParams, grad_out: &[f64]) -> Result<RmsNormGrads, KernelError> {
    if x.is_empty() || grad_out.len() != x.len() {
        return Err(KernelError::Shape(format!(
            "rmsnorm backward: input {} vs upstream {}",
            x.len(),
            grad_out.len()
        )));
    }
    params.check(x.len())?;
    let n = x.len() as f64;
    let r = rms(x, params.epsilon)?;
    let weighted: f64 = (0..x.len()).map(|i| grad_out[i] * params.gamma_at(i) * x[i]).sum();
    let coeff = weighted / (n * r * r * r);
    let gx = (0..x.len())
        .map(|j| grad_out[j] * params.gamma_at(j) / r - x[j] * coeff)
        .collect();
    let per_elem: Vec<f64> = (0..x.len()).map(|i| grad_out[i] * x[i] / r).collect();
    let gamma = if params.gamma.len() == 1 {
        vec![per_elem.iter().sum()]
    } else {
        per_elem
    };
    Ok(RmsNormGrads { x: gx, gamma })
}
