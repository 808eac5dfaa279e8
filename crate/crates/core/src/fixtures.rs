//! Checked-in manifests and golden cases.
//!
//! Fixture files live in `crates/core/fixtures/`:
//!
//! * `qwen3_0p6b.json`, `mobilellm_350m.json`: model-shape manifests built
//!   by [`TransformerShape::manifest`].
//! * `goldens.json`: a list of [`GoldenCase`]s.
//!
//! A case's `origin` is either `constant` (a fixed reference value that
//! regeneration never touches) or `recorded` (a regression baseline captured
//! from this implementation). `cargo run --example regenerate_goldens`
//! rewrites all three files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::alloc_analysis::plan_discrepancy;
use crate::compression::{compression_report, CompressionPolicy};
use crate::container::write_atomic;
use crate::error::{Error, Result};
use crate::layout::{build_plan, effective_bitwidth, Scheme};
use crate::manifest::{load_manifest, LayerRole, LayerSpec, ModelManifest};
use crate::packing::encode_trits;
use crate::quantizer::{quantize_group, BitMode, GroupQuantConfig};
use crate::trainer::{run_qad, ModelShape, ToyModel, TrainerConfig};

pub const QWEN3_0P6B: &str = "qwen3_0p6b.json";
pub const MOBILELLM_350M: &str = "mobilellm_350m.json";
pub const GOLDENS: &str = "goldens.json";

/// Directory of the checked-in fixtures.
pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

/// Decoder-only transformer dimensions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransformerShape {
    pub hidden: u64,
    pub layers: u64,
    pub q_dim: u64,
    pub kv_dim: u64,
    pub intermediate: u64,
    pub vocab: u64,
    pub tied_embedding: bool,
    /// Per-head RMS norm width on queries and keys, if the model has one.
    pub qk_norm: Option<u64>,
}

impl TransformerShape {
    pub fn qwen3_0p6b() -> Self {
        Self {
            hidden: 1024,
            layers: 28,
            q_dim: 16 * 128,
            kv_dim: 8 * 128,
            intermediate: 3072,
            vocab: 151_936,
            tied_embedding: true,
            qk_norm: Some(128),
        }
    }

    pub fn mobilellm_350m() -> Self {
        Self {
            hidden: 960,
            layers: 32,
            q_dim: 15 * 64,
            kv_dim: 5 * 64,
            intermediate: 2560,
            vocab: 32_000,
            tied_embedding: true,
            qk_norm: None,
        }
    }

    pub fn manifest(&self) -> ModelManifest {
        let h = self.hidden;
        let layer = |name: String, d_out: u64, d_in: u64, role: LayerRole| LayerSpec {
            name,
            d_out,
            d_in,
            role,
            quantize: role != LayerRole::Norm,
        };
        let mut layers = vec![layer(
            "embed_tokens".into(),
            self.vocab,
            h,
            LayerRole::Embedding,
        )];
        for i in 0..self.layers {
            let p = format!("layers.{i}");
            layers.push(layer(format!("{p}.input_layernorm"), 1, h, LayerRole::Norm));
            for (n, o, d_in) in [
                ("q_proj", self.q_dim, h),
                ("k_proj", self.kv_dim, h),
                ("v_proj", self.kv_dim, h),
                ("o_proj", h, self.q_dim),
            ] {
                layers.push(layer(
                    format!("{p}.self_attn.{n}"),
                    o,
                    d_in,
                    LayerRole::Decoder,
                ));
            }
            if let Some(w) = self.qk_norm {
                layers.push(layer(
                    format!("{p}.self_attn.q_norm"),
                    1,
                    w,
                    LayerRole::Norm,
                ));
                layers.push(layer(
                    format!("{p}.self_attn.k_norm"),
                    1,
                    w,
                    LayerRole::Norm,
                ));
            }
            layers.push(layer(
                format!("{p}.post_attention_layernorm"),
                1,
                h,
                LayerRole::Norm,
            ));
            for (n, o, d_in) in [
                ("gate_proj", self.intermediate, h),
                ("up_proj", self.intermediate, h),
                ("down_proj", h, self.intermediate),
            ] {
                layers.push(layer(format!("{p}.mlp.{n}"), o, d_in, LayerRole::Decoder));
            }
        }
        layers.push(layer("norm".into(), 1, h, LayerRole::Norm));
        layers.push(layer("lm_head".into(), self.vocab, h, LayerRole::LmHead));
        ModelManifest {
            tied_embedding: self.tied_embedding,
            layers,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Constant,
    Recorded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Check {
    /// Effective bit-width rounded to two decimals.
    EffectiveBitwidth {
        d_out: usize,
        rho: f64,
    },
    CompressionRatio {
        manifest: String,
        decoder_bits: f64,
        emb_bits: f64,
        group: usize,
    },
    QuantizeGroup {
        mode: BitMode,
        values: Vec<f64>,
        beta: f64,
        epsilon: f64,
    },
    TernaryByte {
        codes: Vec<i8>,
    },
    NibbleByte {
        low: i8,
        high: i8,
    },
    Discrepancy {
        d_out: usize,
        rho: f64,
        scheme: String,
        seed: Option<u64>,
    },
    /// Per-step total loss of a short distillation run.
    TrainerBaseline {
        config: TrainerConfig,
        teacher_seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoldenCase {
    pub name: String,
    pub origin: Origin,
    pub check: Check,
    pub expected: Value,
    pub tolerance: f64,
}

impl Check {
    pub fn evaluate(&self, dir: &Path) -> Result<Value> {
        Ok(match self {
            Check::EffectiveBitwidth { d_out, rho } => {
                let b = effective_bitwidth(&build_plan(*d_out, *rho, Scheme::SuperGroup)?);
                json!((b * 100.0).round() / 100.0)
            }
            Check::CompressionRatio {
                manifest,
                decoder_bits,
                emb_bits,
                group,
            } => {
                let m = load_manifest(dir.join(manifest))?;
                let r = compression_report(
                    &m,
                    &CompressionPolicy {
                        decoder_bitwidth: *decoder_bits,
                        embedding_bitwidth: *emb_bits,
                        group_size: *group,
                    },
                )?;
                json!(r.compression_ratio_nominal)
            }
            Check::QuantizeGroup {
                mode,
                values,
                beta,
                epsilon,
            } => {
                let cfg = GroupQuantConfig::new(values.len(), *beta, *epsilon)?;
                let g = quantize_group(values, *mode, &cfg)?;
                json!({"codes": g.codes, "scale": g.scale})
            }
            Check::TernaryByte { codes } => json!(encode_trits(codes)),
            Check::NibbleByte { low, high } => {
                json!((((*high + 8) as u8) << 4) | ((*low + 8) as u8))
            }
            Check::Discrepancy {
                d_out,
                rho,
                scheme,
                seed,
            } => json!(plan_discrepancy(&build_plan(
                *d_out,
                *rho,
                Scheme::parse(scheme, *seed)?
            )?)?),
            Check::TrainerBaseline {
                config,
                teacher_seed,
            } => {
                let teacher = ToyModel::init(config.model, *teacher_seed)?;
                let run = run_qad(&teacher, &teacher, config)?;
                json!(run.history.iter().map(|m| m.total).collect::<Vec<_>>())
            }
        })
    }
}

/// Numbers within `tol`, everything else equal.
pub fn matches(expected: &Value, actual: &Value, tol: f64) -> bool {
    match (expected, actual) {
        (Value::Number(a), Value::Number(b)) => match (a.as_f64(), b.as_f64()) {
            (Some(a), Some(b)) => (a - b).abs() <= tol,
            _ => false,
        },
        (Value::Array(a), Value::Array(b)) => {
            a.len() == b.len() && a.iter().zip(b).all(|(x, y)| matches(x, y, tol))
        }
        (Value::Object(a), Value::Object(b)) => {
            a.len() == b.len()
                && a.iter()
                    .all(|(k, x)| b.get(k).is_some_and(|y| matches(x, y, tol)))
        }
        (a, b) => a == b,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseResult {
    pub name: String,
    pub passed: bool,
    pub expected: Value,
    pub actual: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GoldenReport {
    pub cases: Vec<CaseResult>,
}

impl GoldenReport {
    pub fn all_passed(&self) -> bool {
        self.cases.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&CaseResult> {
        self.cases.iter().filter(|c| !c.passed).collect()
    }
}

pub fn load_goldens(dir: &Path) -> Result<Vec<GoldenCase>> {
    let text = std::fs::read_to_string(dir.join(GOLDENS))?;
    serde_json::from_str(&text).map_err(|e| Error::format(format!("goldens: {e}")))
}

pub fn verify_goldens(dir: &Path) -> Result<GoldenReport> {
    let cases = load_goldens(dir)?
        .into_iter()
        .map(|c| {
            let actual = c.check.evaluate(dir)?;
            Ok(CaseResult {
                passed: matches(&c.expected, &actual, c.tolerance),
                name: c.name,
                expected: c.expected,
                actual,
            })
        })
        .collect::<Result<_>>()?;
    Ok(GoldenReport { cases })
}

fn constant(name: &str, check: Check, expected: Value, tolerance: f64) -> GoldenCase {
    GoldenCase {
        name: name.into(),
        origin: Origin::Constant,
        check,
        expected,
        tolerance,
    }
}

fn recorded(name: &str, check: Check, tolerance: f64) -> GoldenCase {
    GoldenCase {
        name: name.into(),
        origin: Origin::Recorded,
        check,
        expected: Value::Null,
        tolerance,
    }
}

fn baseline_config() -> TrainerConfig {
    TrainerConfig {
        model: ModelShape {
            vocab: 16,
            d: 8,
            d_h: 16,
            layers: 4,
            seq_len: 8,
        },
        k: 2,
        group_size: 8,
        steps: 20,
        batch_size: 4,
        ..TrainerConfig::default()
    }
}

/// The canonical case list; recorded cases carry no expectation yet.
pub fn canonical_cases() -> Vec<GoldenCase> {
    let mut cases = Vec::new();
    for (rho, want) in [(1.0, 4.00), (0.5, 2.79), (0.125, 1.88), (0.0, 1.58)] {
        cases.push(constant(
            &format!("bitwidth_rho_{rho}"),
            Check::EffectiveBitwidth { d_out: 256, rho },
            json!(want),
            0.005,
        ));
    }
    for (bits, want) in [(4.0, 3.94), (2.79, 5.05), (1.88, 6.41), (1.58, 7.04)] {
        cases.push(constant(
            &format!("qwen3_0p6b_ratio_{bits}"),
            Check::CompressionRatio {
                manifest: QWEN3_0P6B.into(),
                decoder_bits: bits,
                emb_bits: 4.0,
                group: 256,
            },
            json!(want),
            0.01,
        ));
    }
    cases.push(constant(
        "mobilellm_350m_ratio_4bit_g64",
        Check::CompressionRatio {
            manifest: MOBILELLM_350M.into(),
            decoder_bits: 4.0,
            emb_bits: 4.0,
            group: 64,
        },
        json!(3.76),
        0.01,
    ));
    let q = |mode, values: &[f64]| Check::QuantizeGroup {
        mode,
        values: values.to_vec(),
        beta: 2.0,
        epsilon: 1e-5,
    };
    cases.push(constant(
        "ternary_group",
        q(BitMode::Ternary, &[1.2, -2.0, 0.1, 0.7]),
        json!({"codes": [1, -1, 0, 0], "scale": 2.0}),
        1e-12,
    ));
    cases.push(constant(
        "int4_group",
        q(BitMode::Int4, &[7.0, -3.5, 0.0, 1.75]),
        json!({"codes": [7, -4, 0, 2], "scale": 1.0}),
        1e-12,
    ));
    cases.push(constant(
        "int8_activation_group",
        q(BitMode::Int8, &[0.5, -1.0, 0.25, 1.0]),
        json!({"codes": [64, -127, 32, 127], "scale": 1.0 / 127.0}),
        1e-12,
    ));
    cases.push(constant(
        "ternary_byte",
        Check::TernaryByte {
            codes: vec![1, -1, 0, 0, 1],
        },
        json!(200),
        0.0,
    ));
    cases.push(constant(
        "ternary_zero_byte",
        Check::TernaryByte { codes: vec![0; 5] },
        json!(121),
        0.0,
    ));
    cases.push(constant(
        "nibble_byte",
        Check::NibbleByte { low: 7, high: -4 },
        json!(0x4F),
        0.0,
    ));
    let disc = |scheme: &str, seed| Check::Discrepancy {
        d_out: 16,
        rho: 0.25,
        scheme: scheme.into(),
        seed,
    };
    cases.push(constant(
        "discrepancy_stacked_16",
        disc("stacked", None),
        json!(0.78125),
        1e-12,
    ));
    cases.push(constant(
        "discrepancy_super_16",
        disc("super_group", None),
        json!(0.21875),
        1e-12,
    ));
    cases.push(recorded(
        "discrepancy_random_64_seed42",
        Check::Discrepancy {
            d_out: 64,
            rho: 0.125,
            scheme: "random".into(),
            seed: Some(42),
        },
        1e-12,
    ));
    cases.push(recorded(
        "trainer_baseline_20_steps",
        Check::TrainerBaseline {
            config: baseline_config(),
            teacher_seed: 1,
        },
        1e-6,
    ));
    cases
}

/// Rewrites manifests and goldens in `dir`. Constant expectations are kept
/// as written; recorded ones are recomputed.
pub fn regenerate(dir: &Path) -> Result<Vec<GoldenCase>> {
    std::fs::create_dir_all(dir)?;
    write_atomic(
        dir.join(QWEN3_0P6B),
        TransformerShape::qwen3_0p6b()
            .manifest()
            .to_json()
            .as_bytes(),
    )?;
    write_atomic(
        dir.join(MOBILELLM_350M),
        TransformerShape::mobilellm_350m()
            .manifest()
            .to_json()
            .as_bytes(),
    )?;
    let cases = canonical_cases()
        .into_iter()
        .map(|mut c| {
            if c.origin == Origin::Recorded {
                c.expected = c.check.evaluate(dir)?;
            }
            Ok(c)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut text = serde_json::to_string_pretty(&cases)?;
    text.push('\n');
    write_atomic(dir.join(GOLDENS), text.as_bytes())?;
    Ok(cases)
}
