//! Storage accounting over a model manifest.
//!
//! Nominal bits per weight follow the bit-width tables: the effective code
//! width (1.58 for ternary, 4, or a mixture such as 1.88) plus `16 / G` for
//! the per-group 16-bit scale. Physical bits per weight use the real packed
//! sizes: 1.6 bits per ternary code (5 trits per byte), nibble- and
//! byte-aligned rows, and one 16-bit scale per started group.
//!
//! Layers that stay in 16-bit (norms, anything with `quantize: false`) count
//! 16 bits per weight in both columns.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::layout::{INT4_BITS, TERNARY_BITS};
use crate::manifest::{LayerRole, ModelManifest};
use crate::packing::PackFormat;

const UNQUANTIZED_BITS: f64 = 16.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CompressionPolicy {
    pub decoder_bitwidth: f64,
    pub embedding_bitwidth: f64,
    pub group_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerReport {
    pub name: String,
    pub params: u64,
    pub quantized: bool,
    pub nominal_bits_per_weight: f64,
    pub physical_bits_per_weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompressionReport {
    pub layers: Vec<LayerReport>,
    pub total_params: u64,
    pub quantized_params: u64,
    pub nominal_bits_per_weight: f64,
    pub physical_bits_per_weight: f64,
    /// Percentage of parameters that are quantized, in `[0, 100]`.
    pub quantization_proportion: f64,
    pub compression_ratio_nominal: f64,
    pub compression_ratio_physical: f64,
}

/// Code bits per weight of a row of `cols` values at effective width `bits`.
///
/// Widths in `[1.58, 4]` are read as a ternary/4-bit row mixture with the
/// 4-bit fraction `(bits - 1.58) / (4 - 1.58)`.
fn physical_code_bits(bits: f64, cols: usize) -> Result<f64> {
    let per = |f: PackFormat| 8.0 * f.row_bytes(cols) as f64 / cols as f64;
    if bits == 8.0 {
        Ok(per(PackFormat::BytePack))
    } else if (TERNARY_BITS..=INT4_BITS).contains(&bits) {
        let frac = (bits - TERNARY_BITS) / (INT4_BITS - TERNARY_BITS);
        Ok(frac * per(PackFormat::NibblePack) + (1.0 - frac) * per(PackFormat::TernaryPack))
    } else {
        Err(Error::param(format!(
            "bit-width {bits} is neither 8, 16 nor within [1.58, 4]"
        )))
    }
}

fn check_bits(bits: f64) -> Result<()> {
    if bits == UNQUANTIZED_BITS || bits == 8.0 || (TERNARY_BITS..=INT4_BITS).contains(&bits) {
        Ok(())
    } else {
        Err(Error::param(format!(
            "bit-width {bits} is neither 8, 16 nor within [1.58, 4]"
        )))
    }
}

pub fn compression_report(
    manifest: &ModelManifest,
    policy: &CompressionPolicy,
) -> Result<CompressionReport> {
    manifest.validate()?;
    if policy.group_size == 0 {
        return Err(Error::param("group size must be at least 1"));
    }
    check_bits(policy.decoder_bitwidth)?;
    check_bits(policy.embedding_bitwidth)?;
    let g = policy.group_size;

    let mut layers = Vec::new();
    for l in manifest.counted_layers() {
        let bits = match l.role {
            LayerRole::Norm => UNQUANTIZED_BITS,
            _ if !l.quantize => UNQUANTIZED_BITS,
            LayerRole::Embedding | LayerRole::LmHead => policy.embedding_bitwidth,
            LayerRole::Decoder | LayerRole::Other => policy.decoder_bitwidth,
        };
        let (quantized, nominal, physical) = if bits == UNQUANTIZED_BITS {
            (false, UNQUANTIZED_BITS, UNQUANTIZED_BITS)
        } else {
            let cols = l.d_in as usize;
            let scale_bits = 16.0 * cols.div_ceil(g) as f64 / cols as f64;
            (
                true,
                bits + 16.0 / g as f64,
                physical_code_bits(bits, cols)? + scale_bits,
            )
        };
        layers.push(LayerReport {
            name: l.name.clone(),
            params: l.params(),
            quantized,
            nominal_bits_per_weight: nominal,
            physical_bits_per_weight: physical,
        });
    }

    let total: u64 = layers.iter().map(|l| l.params).sum();
    if total == 0 {
        return Err(Error::param("manifest has no parameters"));
    }
    let quantized: u64 = layers
        .iter()
        .filter(|l| l.quantized)
        .map(|l| l.params)
        .sum();
    let avg = |f: fn(&LayerReport) -> f64| {
        layers.iter().map(|l| l.params as f64 * f(l)).sum::<f64>() / total as f64
    };
    let nominal = avg(|l| l.nominal_bits_per_weight);
    let physical = avg(|l| l.physical_bits_per_weight);
    Ok(CompressionReport {
        total_params: total,
        quantized_params: quantized,
        nominal_bits_per_weight: nominal,
        physical_bits_per_weight: physical,
        quantization_proportion: 100.0 * quantized as f64 / total as f64,
        compression_ratio_nominal: UNQUANTIZED_BITS / nominal,
        compression_ratio_physical: UNQUANTIZED_BITS / physical,
        layers,
    })
}
