use super::{check_finite, KernelError};

pub const DEFAULT_ROPE_BASE: f64 = 10000.0;

/// Two-axis rotary embedding.
///
/// The first half of `x` is rotated by `pos_h`, the second half by `pos_w`.
/// Within a half of width `m`, pair `(x₂ᵢ, x₂ᵢ₊₁)` turns by
/// `pos · base^(−2i/m)`.
pub fn rope_2d(x: &[f64], pos_h: i64, pos_w: i64, base: f64) -> Result<Vec<f64>, KernelError> {
    if x.is_empty() || !x.len().is_multiple_of(4) {
        return Err(KernelError::Shape(format!(
            "rope_2d needs a length divisible by 4, got {}",
            x.len()
        )));
    }
    if !(base > 0.0 && base.is_finite()) {
        return Err(KernelError::Invalid(format!("rope base must be positive, got {base}")));
    }
    check_finite("rope input", x)?;
    let half = x.len() / 2;
    let mut out = x.to_vec();
    for (offset, pos) in [(0, pos_h), (half, pos_w)] {
        for i in 0..half / 2 {
            let theta = pos as f64 * base.powf(-2.0 * i as f64 / half as f64);
            let (sin, cos) = theta.sin_cos();
            let (a, b) = (x[offset + 2 * i], x[offset + 2 * i + 1]);
            out[offset + 2 * i] = a * cos - b * sin;
            out[offset + 2 * i + 1] = a * sin + b * cos;
        }
    }
    Ok(out)
}
