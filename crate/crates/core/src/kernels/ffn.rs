use super::{check_finite, KernelError, Matrix};

/// Numerically stable logistic function.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `z · sigmoid(βz)`. β = 1 is SiLU.
pub fn swish(z: f64, beta: f64) -> f64 {
    z * sigmoid(beta * z)
}

fn swish_grad(z: f64, beta: f64) -> f64 {
    let s = sigmoid(beta * z);
    s + beta * z * s * (1.0 - s)
}

/// Gated feed-forward unit `Swish(xW₁ + b₁) ⊙ (xW₂ + b₂)`.
///
/// `w1` and `w2` are `d × h`; the biases have length `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct SwiGluFfn {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwiGluGrads {
    pub x: Vec<f64>,
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

impl SwiGluFfn {
    pub fn new(w1: Matrix, b1: Vec<f64>, w2: Matrix, b2: Vec<f64>, beta: f64) -> Result<Self, KernelError> {
        if w1.shape() != w2.shape() {
            return Err(KernelError::Shape(format!(
                "W1 is {:?} but W2 is {:?}",
                w1.shape(),
                w2.shape()
            )));
        }
        let h = w1.cols();
        if b1.len() != h || b2.len() != h {
            return Err(KernelError::Shape(format!(
                "biases must have length {h}, got {} and {}",
                b1.len(),
                b2.len()
            )));
        }
        check_finite("b1", &b1)?;
        check_finite("b2", &b2)?;
        if !beta.is_finite() {
            return Err(KernelError::NonFinite("beta".into()));
        }
        Ok(SwiGluFfn { w1, b1, w2, b2, beta })
    }

    pub fn input_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.cols()
    }

    fn pre_activations(&self, x: &[f64]) -> Result<(Matrix, Matrix), KernelError> {
        if x.len() != self.input_dim() {
            return Err(KernelError::Shape(format!(
                "input of length {} for W1 with {} rows",
                x.len(),
                self.input_dim()
            )));
        }
        let row = Matrix::row_vector(x)?;
        let gate = row.matmul(&self.w1)?.add_row_bias(&self.b1)?;
        let lin = row.matmul(&self.w2)?.add_row_bias(&self.b2)?;
        Ok((gate, lin))
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, KernelError> {
        let (gate, lin) = self.pre_activations(x)?;
        Ok(gate
            .data()
            .iter()
            .zip(lin.data())
            .map(|(&a, &c)| swish(a, self.beta) * c)
            .collect())
    }

    /// Gradients of `⟨grad_out, forward(x)⟩` with respect to the input and
    /// every parameter.
    pub fn backward(&self, x: &[f64], grad_out: &[f64]) -> Result<SwiGluGrads, KernelError> {
        let (gate, lin) = self.pre_activations(x)?;
        if grad_out.len() != self.hidden_dim() {
            return Err(KernelError::Shape(format!(
                "upstream gradient of length {} for hidden width {}",
                grad_out.len(),
                self.hidden_dim()
            )));
        }
        let d_gate: Vec<f64> = (0..grad_out.len())
            .map(|j| grad_out[j] * lin.data()[j] * swish_grad(gate.data()[j], self.beta))
            .collect();
        let d_lin: Vec<f64> = (0..grad_out.len())
            .map(|j| grad_out[j] * swish(gate.data()[j], self.beta))
            .collect();
        let x_col = Matrix::new(x.len(), 1, x.to_vec())?;
        let dg = Matrix::row_vector(&d_gate)?;
        let dl = Matrix::row_vector(&d_lin)?;
        let dx = dg
            .matmul(&self.w1.transpose())?
            .add(&dl.matmul(&self.w2.transpose())?)?;
        Ok(SwiGluGrads {
            x: dx.data().to_vec(),
            w1: x_col.matmul(&dg)?,
            b1: d_gate,
            w2: x_col.matmul(&dl)?,
            b2: d_lin,
        })
    }
}

/// One-shot form of [`SwiGluFfn::forward`].
pub fn swiglu_ffn(
    x: &[f64],
    w1: &Matrix,
    b1: &[f64],
    w2: &Matrix,
    b2: &[f64],
    beta: f64,
) -> Result<Vec<f64>, KernelError> {
    SwiGluFfn::new(w1.clone(), b1.to_vec(), w2.clone(), b2.to_vec(), beta)?.forward(x)
}
