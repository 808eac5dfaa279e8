//! Integer GEMM on packed-style codes against the dequantized float product.

use mpqad::layout::{build_plan, Scheme};
use mpqad::mpgemm::mp_matmul;
use mpqad::quantizer::{quantize_activations, quantize_matrix, GroupQuantConfig};
use mpqad::rng::SeededRng;
use mpqad::Matrix;

fn main() -> mpqad::Result<()> {
    let mut rng = SeededRng::new(2);
    let cfg = GroupQuantConfig::with_group_size(64)?;
    let w = Matrix::<f64>::from_fn(48, 256, |_, _| rng.normal());
    let x = Matrix::<f64>::from_fn(256, 16, |_, _| rng.normal());
    let wq = quantize_matrix(&w, &build_plan(48, 0.25, Scheme::SuperGroup)?, &cfg)?;
    let xq = quantize_activations(&x, &cfg)?;
    let y = mp_matmul(&wq, &xq)?.y;
    let reference = wq.dequantize::<f64>().matmul(&xq.dequantize::<f64>())?;
    let exact = w.matmul(&x)?;
    let diff = |a: f64, b: f64| (a - b).abs();
    let kernel = y
        .data()
        .iter()
        .zip(reference.data())
        .map(|(&a, &b)| diff(a as f64, b))
        .fold(0.0, f64::max);
    let quant = reference
        .data()
        .iter()
        .zip(exact.data())
        .map(|(&a, &b)| diff(a, b))
        .fold(0.0, f64::max);
    println!("max |integer - dequantized| = {kernel:.2e}");
    println!("max |dequantized - full precision| = {quant:.3}");
    Ok(())
}
