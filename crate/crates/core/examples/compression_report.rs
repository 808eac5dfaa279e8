//! Storage accounting for the bundled Qwen3-0.6B-shaped manifest at each
//! decoder bit-width.

use mpqad::compression::{compression_report, CompressionPolicy};
use mpqad::fixtures::TransformerShape;

fn main() -> mpqad::Result<()> {
    let manifest = TransformerShape::qwen3_0p6b().manifest();
    for bits in [4.0, 2.79, 1.88, 1.58] {
        let r = compression_report(
            &manifest,
            &CompressionPolicy {
                decoder_bitwidth: bits,
                embedding_bitwidth: 4.0,
                group_size: 256,
            },
        )?;
        println!(
            "{bits:.2} bits: ratio {:.2} nominal, {:.2} physical, {:.2}% of {} params quantized",
            r.compression_ratio_nominal,
            r.compression_ratio_physical,
            r.quantization_proportion,
            r.total_params
        );
    }
    Ok(())
}
