use super::{KernelError, Matrix};

/// Patches merged into one fused token.
pub const GROUP: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// Exact (erf-based) GELU.
    #[default]
    Gelu,
    Relu,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Gelu => 0.5 * z * (1.0 + libm::erf(z / std::f64::consts::SQRT_2)),
            Activation::Relu => z.max(0.0),
        }
    }

    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Gelu => {
                let cdf = 0.5 * (1.0 + libm::erf(z / std::f64::consts::SQRT_2));
                let pdf = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
                cdf + z * pdf
            }
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Concatenates each run of four consecutive rows into one row:
/// `n × d` becomes `n/4 × 4d`.
pub fn group_patches(features: &Matrix) -> Result<Matrix, KernelError> {
    let (n, d) = features.shape();
    if n % GROUP != 0 {
        return Err(KernelError::Shape(format!("{n} patches cannot be grouped by {GROUP}")));
    }
    // row-major storage makes this a pure reshape
    features.reshape(n / GROUP, GROUP * d)
}

/// Two-layer projection `σ(F′W₁ + b₁)W₂ + b₂` over grouped patches.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionMlp {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionGrads {
    pub features: Matrix,
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

impl FusionMlp {
    pub fn new(
        w1: Matrix,
        b1: Vec<f64>,
        w2: Matrix,
        b2: Vec<f64>,
        activation: Activation,
    ) -> Result<Self, KernelError> {
        if !w1.rows().is_multiple_of(GROUP) {
            return Err(KernelError::Shape(format!("W1 must have 4·d rows, got {}", w1.rows())));
        }
        if w1.cols() != w2.rows() {
            return Err(KernelError::Shape(format!(
                "W1 is {:?}, W2 is {:?}: hidden widths differ",
                w1.shape(),
                w2.shape()
            )));
        }
        if b1.len() != w1.cols() || b2.len() != w2.cols() {
            return Err(KernelError::Shape("bias lengths do not match layer widths".into()));
        }
        super::check_finite("b1", &b1)?;
        super::check_finite("b2", &b2)?;
        Ok(FusionMlp {
            w1,
            b1,
            w2,
            b2,
            activation,
        })
    }

    pub fn patch_dim(&self) -> usize {
        self.w1.rows() / GROUP
    }

    fn grouped(&self, features: &Matrix) -> Result<Matrix, KernelError> {
        if features.cols() != self.patch_dim() {
            return Err(KernelError::Shape(format!(
                "patch width {} but W1 expects {}",
                features.cols(),
                self.patch_dim()
            )));
        }
        group_patches(features)
    }

    pub fn forward(&self, features: &Matrix) -> Result<Matrix, KernelError> {
        let g = self.grouped(features)?;
        let pre = g.matmul(&self.w1)?.add_row_bias(&self.b1)?;
        let act = self.activation;
        pre.map(|z| act.apply(z)).matmul(&self.w2)?.add_row_bias(&self.b2)
    }

    /// Gradients of `⟨grad_out, forward(features)⟩`.
    pub fn backward(&self, features: &Matrix, grad_out: &Matrix) -> Result<FusionGrads, KernelError> {
        let g = self.grouped(features)?;
        let pre = g.matmul(&self.w1)?.add_row_bias(&self.b1)?;
        let act = self.activation;
        let hidden = pre.map(|z| act.apply(z));
        if grad_out.shape() != (g.rows(), self.w2.cols()) {
            return Err(KernelError::Shape(format!(
                "upstream gradient {:?}, output is {:?}",
                grad_out.shape(),
                (g.rows(), self.w2.cols())
            )));
        }
        let d_hidden = grad_out.matmul(&self.w2.transpose())?;
        let d_pre = d_hidden.zip_map(&pre, |dh, z| dh * act.derivative(z));
        let d_grouped = d_pre.matmul(&self.w1.transpose())?;
        Ok(FusionGrads {
            features: d_grouped.reshape(features.rows(), features.cols())?,
            w1: g.transpose().matmul(&d_pre)?,
            b1: d_pre.column_sums(),
            w2: hidden.transpose().matmul(grad_out)?,
            b2: grad_out.column_sums(),
        })
    }
}

/// One-shot form of [`FusionMlp::forward`].
pub fn fusion_mlp(
    features: &Matrix,
    w1: &Matrix,
    b1: &[f64],
    w2: &Matrix,
    b2: &[f64],
    activation: Activation,
) -> Result<Matrix, KernelError> {
    FusionMlp::new(w1.clone(), b1.to_vec(), w2.clone(), b2.to_vec(), activation)?.forward(features)
}
