//! Quantizes a random matrix under a super-group plan, packs it, and checks
//! that the bytes decode back to the same codes.

use mpqad::layout::{build_plan, Scheme};
use mpqad::packing::{decode_blob, encode_blob, pack, unpack};
use mpqad::quantizer::{quantize_matrix, GroupQuantConfig};
use mpqad::rng::SeededRng;
use mpqad::Matrix;

fn main() -> mpqad::Result<()> {
    let mut rng = SeededRng::new(1);
    let w = Matrix::<f64>::from_fn(64, 300, |_, _| rng.normal());
    let plan = build_plan(64, 0.125, Scheme::SuperGroup)?;
    let q = quantize_matrix(&w, &plan, &GroupQuantConfig::with_group_size(128)?)?;
    let blob = pack(&q)?;
    let bytes = encode_blob(&blob);
    assert_eq!(unpack(&decode_blob(&bytes)?)?, q);
    println!(
        "{} weights -> {} payload bytes, {} scales, {} bytes on disk, {:.3} bits/weight",
        64 * 300,
        blob.payload.len(),
        blob.scales.len(),
        bytes.len(),
        blob.physical_bits_per_weight()
    );
    Ok(())
}
