//! Quantizes one group in each bit mode and prints codes, scale and error.

use mpqad::quantizer::{dequantize_group, quantize_group, BitMode, GroupQuantConfig};

fn main() -> mpqad::Result<()> {
    let values: [f64; 8] = [1.2, -2.0, 0.1, 0.7, 0.05, -0.6, 1.9, -0.3];
    let cfg = GroupQuantConfig::with_group_size(values.len())?;
    for mode in [BitMode::Ternary, BitMode::Int4, BitMode::Int8] {
        let g = quantize_group(&values, mode, &cfg)?;
        let back = dequantize_group(&g.codes, g.scale);
        let err = values
            .iter()
            .zip(&back)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        println!(
            "{mode:?}: scale {:.4} codes {:?} max error {err:.4}",
            g.scale, g.codes
        );
    }
    Ok(())
}
