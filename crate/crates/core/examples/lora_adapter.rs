//! Fit a rank-2 adapter to a target update with plain gradient descent while
//! the base weight stays frozen.
//!
//! `cargo run --example lora_adapter`

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use traffic_rag::kernels::selftest::singular_values;
use traffic_rag::kernels::{lora_apply, lora_delta, LoraAdapter, LoraTarget, Matrix};

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::new(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn frobenius(m: &Matrix) -> f64 {
    m.data().iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (d, r) = (12, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let w0 = random(&mut rng, d, d);
    let target = random(&mut rng, d, r).matmul(&random(&mut rng, r, d))?.scale(0.5);

    let mut adapter = LoraAdapter::init(d, r, LoraTarget::V, 11)?;
    println!("trainable {} vs full {}", adapter.param_count(), d * d);
    println!("initial ΔW norm {:.3e}", frobenius(&lora_delta(&adapter)));

    // Loss ½‖ΔW − target‖², so dL/dΔW is the residual.
    for step in 0..=1000 {
        let residual = lora_delta(&adapter).add(&target.scale(-1.0))?;
        if step % 200 == 0 {
            println!("step {step:>4}  loss {:.6e}", 0.5 * frobenius(&residual).powi(2));
        }
        let grads = adapter.grads(&residual)?;
        adapter = adapter.step(&grads, 0.02)?;
    }

    let sv = singular_values(&lora_delta(&adapter));
    println!(
        "singular values of ΔW: {:?}",
        sv.iter().map(|s| format!("{s:.2e}")).collect::<Vec<_>>()
    );
    let snapshot = w0.clone();
    let adapted = lora_apply(&w0, &adapter)?;
    assert_eq!(w0, snapshot);
    let drift = frobenius(&adapted.add(&w0.scale(-1.0))?.add(&target.scale(-1.0))?);
    println!("‖(W0 + ΔW) − W0 − target‖ = {drift:.3e}; W0 itself is untouched");
    Ok(())
}
