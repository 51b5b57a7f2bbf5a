//! Low-rank weight updates for attention projections.
//!
//! The adapter stores a `d × r` factor `A` and an `r × d` factor `B` and
//! produces the `d × d` update `ΔW = A·B`, optionally scaled. Only the
//! factors are trainable; the frozen base weight is never modified.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::sgd_step;
use super::{KernelError, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LoraTarget {
    Q,
    K,
    V,
    O,
}

impl fmt::Display for LoraTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoraAdapter {
    a: Matrix,
    b: Matrix,
    target: LoraTarget,
    scale: f64,
}

/// Gradients for the two factors.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraGrads {
    pub a: Matrix,
    pub b: Matrix,
}

impl LoraAdapter {
    pub fn new(a: Matrix, b: Matrix, target: LoraTarget) -> Result<Self, KernelError> {
        let (d, r) = a.shape();
        if b.shape() != (r, d) {
            return Err(KernelError::Shape(format!(
                "A is {d}x{r}, so B must be {r}x{d}, got {:?}",
                b.shape()
            )));
        }
        if r >= d {
            return Err(KernelError::Invalid(format!("rank {r} must be below dimension {d}")));
        }
        Ok(LoraAdapter {
            a,
            b,
            target,
            scale: 1.0,
        })
    }

    /// Random `A`, zero `B`, so the initial update is zero.
    pub fn init(d: usize, r: usize, target: LoraTarget, seed: u64) -> Result<Self, KernelError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (d as f64).sqrt();
        let a = Matrix::new(
            d.max(1),
            r.max(1),
            (0..d * r).map(|_| rng.gen_range(-bound..bound)).collect(),
        )?;
        Self::new(a, Matrix::zeros(r.max(1), d.max(1)), target)
    }

    pub fn with_scale(mut self, scale: f64) -> Self {
        self.scale = scale;
        self
    }

    pub fn d(&self) -> usize {
        self.a.rows()
    }

    pub fn r(&self) -> usize {
        self.a.cols()
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    pub fn target(&self) -> LoraTarget {
        self.target
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn param_count(&self) -> usize {
        2 * self.d() * self.r()
    }

    /// Factor gradients given the gradient of the loss with respect to the
    /// adapted `d × d` weight.
    pub fn grads(&self, grad_weight: &Matrix) -> Result<LoraGrads, KernelError> {
        if grad_weight.shape() != (self.d(), self.d()) {
            return Err(KernelError::Shape(format!(
                "weight gradient {:?} for a {}x{} projection",
                grad_weight.shape(),
                self.d(),
                self.d()
            )));
        }
        Ok(LoraGrads {
            a: grad_weight.matmul(&self.b.transpose())?.scale(self.scale),
            b: self.a.transpose().matmul(grad_weight)?.scale(self.scale),
        })
    }

    /// One gradient-descent update of both factors.
    pub fn step(&self, grads: &LoraGrads, eta: f64) -> Result<LoraAdapter, KernelError> {
        let a = sgd_step(self.a.data(), grads.a.data(), eta)?;
        let b = sgd_step(self.b.data(), grads.b.data(), eta)?;
        Ok(LoraAdapter {
            a: Matrix::new(self.d(), self.r(), a)?,
            b: Matrix::new(self.r(), self.d(), b)?,
            target: self.target,
            scale: self.scale,
        })
    }
}

/// `scale · A·B`, a `d × d` matrix of rank at most `r`.
pub fn lora_delta(adapter: &LoraAdapter) -> Matrix {
    let delta = adapter
        .a
        .matmul(&adapter.b)
        .expect("factor shapes checked at construction");
    if adapter.scale == 1.0 {
        delta
    } else {
        delta.scale(adapter.scale)
    }
}

/// Returns a fresh `W₀ + ΔW`.
pub fn lora_apply(w0: &Matrix, adapter: &LoraAdapter) -> Result<Matrix, KernelError> {
    if w0.shape() != (adapter.d(), adapter.d()) {
        return Err(KernelError::Shape(format!(
            "base weight {:?} for a rank-{} adapter of dimension {}",
            w0.shape(),
            adapter.r(),
            adapter.d()
        )));
    }
    w0.add(&lora_delta(adapter))
}

/// `(2·d·r, d²)`: trainable parameters with and without the adapter.
pub fn lora_param_count(d: usize, r: usize) -> Result<(usize, usize), KernelError> {
    if d == 0 || r == 0 {
        return Err(KernelError::Invalid("d and r must be positive".into()));
    }
    if r >= d {
        return Err(KernelError::Invalid(format!("rank {r} must be below dimension {d}")));
    }
    Ok((2 * d * r, d * d))
}

/// Frozen query/key/value/output projections of one attention layer.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionProjections {
    pub q: Matrix,
    pub k: Matrix,
    pub v: Matrix,
    pub o: Matrix,
}

impl AttentionProjections {
    pub fn get(&self, target: LoraTarget) -> &Matrix {
        match target {
            LoraTarget::Q => &self.q,
            LoraTarget::K => &self.k,
            LoraTarget::V => &self.v,
            LoraTarget::O => &self.o,
        }
    }

    fn get_mut(&mut self, target: LoraTarget) -> &mut Matrix {
        match target {
            LoraTarget::Q => &mut self.q,
            LoraTarget::K => &mut self.k,
            LoraTarget::V => &mut self.v,
            LoraTarget::O => &mut self.o,
        }
    }
}

/// Applies at most one adapter per projection and returns the adapted copy.
pub fn apply_adapters(
    base: &AttentionProjections,
    adapters: &[LoraAdapter],
) -> Result<AttentionProjections, KernelError> {
    let mut out = base.clone();
    let mut used = Vec::new();
    for adapter in adapters {
        if used.contains(&adapter.target) {
            return Err(KernelError::Invalid(format!("two adapters target {}", adapter.target)));
        }
        used.push(adapter.target);
        let adapted = lora_apply(base.get(adapter.target), adapter)?;
        *out.get_mut(adapter.target) = adapted;
    }
    Ok(out)
}
