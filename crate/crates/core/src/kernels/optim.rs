use super::{check_finite, KernelError};

pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// `θ − η·∇`.
pub fn sgd_step(theta: &[f64], grad: &[f64], eta: f64) -> Result<Vec<f64>, KernelError> {
    if theta.len() != grad.len() {
        return Err(KernelError::Shape(format!(
            "parameter length {} vs gradient length {}",
            theta.len(),
            grad.len()
        )));
    }
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(KernelError::Invalid(format!(
            "learning rate must be positive, got {eta}"
        )));
    }
    Ok(theta.iter().zip(grad).map(|(t, g)| t - eta * g).collect())
}

/// Central-difference gradient of `f` at `x`.
pub fn finite_diff_grad(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Result<Vec<f64>, KernelError> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(KernelError::Invalid(format!("step must be positive, got {h}")));
    }
    check_finite("finite-difference point", x)?;
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(KernelError::NonFinite(format!("objective near coordinate {i}")));
        }
        grad.push((up - down) / (2.0 * h));
    }
    Ok(grad)
}

/// Largest coordinate-wise `|a − b| / max(|a|, |b|, floor)`.
pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}
