//! Evaluate each reference kernel on a small input, then print the self-test.
//!
//! `cargo run --example kernels_tour`

use traffic_rag::kernels::selftest::run_selftest;
use traffic_rag::kernels::{
    fusion_mlp, lora_param_count, rmsnorm, rope_2d, swiglu_ffn, Activation, Matrix, RmsNormParams, DEFAULT_ROPE_BASE,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    println!(
        "rmsnorm([3, 4])          = {:?}",
        rmsnorm(&[3.0, 4.0], &RmsNormParams::unit(2, 0.0))?
    );

    let one = Matrix::identity(1);
    println!(
        "swiglu(1), unit weights  = {:?}",
        swiglu_ffn(&[1.0], &one, &[0.0], &one, &[0.0], 1.0)?
    );

    let patches = Matrix::from_rows(vec![vec![1.0, 0.5], vec![2.0, -0.5], vec![3.0, 0.0], vec![4.0, 1.0]])?;
    let (w1, w2) = (Matrix::identity(8), Matrix::identity(8));
    let fused = fusion_mlp(&patches, &w1, &[0.0; 8], &w2, &[0.0; 8], Activation::Relu)?;
    println!("fusion of 4 patches      = {:?}", fused.to_rows());

    println!(
        "rope((1,0,1,0), h=1)     = {:?}",
        rope_2d(&[1.0, 0.0, 1.0, 0.0], 1, 0, DEFAULT_ROPE_BASE)?
    );

    for (d, r) in [(64, 4), (4096, 8)] {
        let (lora, full) = lora_param_count(d, r)?;
        println!("lora params d={d:<4} r={r}   = {lora} vs {full} for a full update");
    }

    println!("\n{}", run_selftest(0));
    Ok(())
}
