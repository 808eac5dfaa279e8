//! Command-line front end.
//!
//! Every subcommand prints one JSON object on stdout. Exit codes: 0 on
//! success, 1 for bad input (arguments, files, parameters), 2 when an
//! internal consistency check fails. Output files are written atomically.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use crate::alloc_analysis::{
    analyze, discrepancy_sweep, measure_precision_errors, write_sweep_csv, SalienceProfile,
};
use crate::compression::{compression_report, CompressionPolicy};
use crate::container::{decode_tensor, read_tensor, write_atomic, Tensor, TENSOR_MAGIC};
use crate::eakld::{mismatch_rate, summarize, KldConfig, LogitBatch};
use crate::error::{Error, Result};
use crate::lafd::{layer_frequency_analysis, FeatureStack};
use crate::layout::{build_plan, effective_bitwidth, AllocationPlan, Scheme};
use crate::manifest::load_manifest;
use crate::matrix::Matrix;
use crate::packing::{decode_blob, encode_blob, pack, unpack, PackedBlob, BLOB_MAGIC};
use crate::quantizer::{quantize_matrix, quantize_rows, BitMode, GroupQuantConfig};
use crate::rng::SeededRng;
use crate::trainer::{
    copy_task_batch, evaluate, pretrain_teacher, run_qad, write_history_csv, Precision,
    TrainerConfig,
};

/// Thresholds of the mismatch table.
pub const MISMATCH_THRESHOLDS: [f64; 5] = [0.6, 0.7, 0.8, 0.9, 0.95];

#[derive(Debug, Parser)]
#[command(
    name = "mpqad",
    version,
    about = "Mixed-precision quantization and distillation toolkit"
)]
pub struct Cli {
    /// Worker threads for row-parallel kernels.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Quantize a weight tensor under a precision plan and write a packed blob.
    Quantize(QuantizeArgs),
    /// Pack a weight tensor with one bit mode for every row.
    Pack(PackArgs),
    /// Decode a packed blob back to dequantized weights.
    Unpack(UnpackArgs),
    /// Storage accounting for a model manifest.
    ReportCompression(ReportArgs),
    /// Discrepancy analysis of allocation layouts.
    AnalyzeAlloc(AllocArgs),
    /// Layer selection histogram over teacher feature stacks.
    AnalyzeLayers(LayersArgs),
    /// KL divergences, mixing coefficients and mismatch rates.
    AnalyzeKld(KldArgs),
    /// Pretrain a toy teacher and distill it into a quantized student.
    DistillDemo(DistillArgs),
    /// Describe a tensor, blob or manifest file.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
pub struct QuantArgs {
    /// Weights per scale group.
    #[arg(long, default_value_t = 256)]
    pub group: usize,
    /// Ternary scale coefficient.
    #[arg(long, default_value_t = 2.0)]
    pub beta: f64,
    /// Lower bound on every scale.
    #[arg(long, default_value_t = 1e-5)]
    pub epsilon: f64,
}

impl QuantArgs {
    fn config(&self) -> Result<GroupQuantConfig> {
        GroupQuantConfig::new(self.group, self.beta, self.epsilon)
    }
}

#[derive(Debug, Args)]
pub struct QuantizeArgs {
    /// Input weight tensor (rank 2).
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Output blob; defaults to the input path with extension `rzrq`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Fraction of 4-bit output channels.
    #[arg(long, default_value_t = 0.125)]
    pub rho: f64,
    /// super_group, stacked or random.
    #[arg(long, default_value = "super_group")]
    pub scheme: String,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Also write the plan as JSON.
    #[arg(long)]
    pub plan_out: Option<PathBuf>,
    #[command(flatten)]
    pub quant: QuantArgs,
}

#[derive(Debug, Args)]
pub struct PackArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// ternary, int4 or int8.
    #[arg(long)]
    pub mode: String,
    #[command(flatten)]
    pub quant: QuantArgs,
}

#[derive(Debug, Args)]
pub struct UnpackArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Dequantized weights as a tensor file.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Include integer codes and scales in the summary.
    #[arg(long)]
    pub codes: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 1.58)]
    pub decoder_bits: f64,
    #[arg(long, default_value_t = 4.0)]
    pub emb_bits: f64,
    #[arg(long, default_value_t = 256)]
    pub group: usize,
    /// Include the per-layer breakdown.
    #[arg(long)]
    pub layers: bool,
}

#[derive(Debug, Args)]
pub struct AllocArgs {
    #[arg(long, default_value_t = 64)]
    pub d_out: usize,
    #[arg(long, default_value_t = 0.125)]
    pub rho: f64,
    /// super_group, stacked, random or all.
    #[arg(long, default_value = "all")]
    pub scheme: String,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Weight tensor; row mean squares become the salience profile and
    /// e_L/e_H default to measured round-trip errors.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long)]
    pub e_l: Option<f64>,
    #[arg(long)]
    pub e_h: Option<f64>,
    #[arg(long, default_value_t = 256)]
    pub group: usize,
    /// Write a discrepancy sweep over d_out {64,256,1024} x rho {1/2,1/4,1/8}.
    #[arg(long)]
    pub sweep_csv: Option<PathBuf>,
    /// Random-scheme seeds in the sweep (seed, seed+1, ...).
    #[arg(long, default_value_t = 100)]
    pub sweep_seeds: u64,
}

#[derive(Debug, Args)]
pub struct LayersArgs {
    /// Rank-3 tensors `(L + 1) x T x d`, one per batch.
    #[arg(long, required = true, num_args = 1.., value_delimiter = ',')]
    pub stacks: Vec<PathBuf>,
    /// Rank-1 validity mask of length T (nonzero = valid); default all valid.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct KldArgs {
    /// Teacher logits, positions x vocab.
    #[arg(long)]
    pub teacher: PathBuf,
    #[arg(long)]
    pub student: PathBuf,
    /// Rank-1 label ids.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Positions per sample; default one sample.
    #[arg(long)]
    pub seq_len: Option<usize>,
    #[arg(long = "K", default_value_t = 16)]
    pub kld_k: usize,
    /// Mismatch table as CSV (needs labels).
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DistillArgs {
    /// Trainer config JSON; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 300)]
    pub pretrain_steps: usize,
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
}

/// Parses `argv` (program name first), runs the command and returns the
/// exit code.
pub fn run<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = write!(stderr, "{}", e.render());
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{}", e.render());
                    0
                }
                _ => 1,
            };
        }
    };
    let result = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.max(1))
        .build()
        .map_err(|e| Error::param(format!("thread pool: {e}")))
        .and_then(|pool| pool.install(|| execute(&cli.command)));
    match result {
        Ok(v) => {
            let _ = writeln!(stdout, "{}", serde_json::to_string(&v).expect("json value"));
            0
        }
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            if e.is_input_error() {
                1
            } else {
                2
            }
        }
    }
}

pub fn execute(cmd: &Command) -> Result<Value> {
    match cmd {
        Command::Quantize(a) => quantize_cmd(a),
        Command::Pack(a) => pack_cmd(a),
        Command::Unpack(a) => unpack_cmd(a),
        Command::ReportCompression(a) => report_cmd(a),
        Command::AnalyzeAlloc(a) => alloc_cmd(a),
        Command::AnalyzeLayers(a) => layers_cmd(a),
        Command::AnalyzeKld(a) => kld_cmd(a),
        Command::DistillDemo(a) => distill_cmd(a),
        Command::Inspect(a) => inspect_cmd(a),
    }
}

fn load_matrix(path: &Path) -> Result<Matrix<f64>> {
    Ok(read_tensor(path)?.into_matrix()?.cast())
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

/// Packs, re-reads and checks the blob before writing it.
fn write_checked_blob(
    path: &Path,
    q: &crate::quantizer::QuantizedGroupMatrix,
) -> Result<PackedBlob> {
    let blob = pack(q)?;
    let bytes = encode_blob(&blob);
    if unpack(&decode_blob(&bytes)?)? != *q {
        return Err(Error::invariant(
            "packed blob does not decode to its source",
        ));
    }
    write_atomic(path, &bytes)?;
    Ok(blob)
}

fn blob_summary(blob: &PackedBlob) -> Value {
    let h = &blob.header;
    let count = |m: BitMode| h.row_modes.iter().filter(|&&x| x == m).count();
    json!({
        "rows": h.rows,
        "cols": h.cols,
        "group_size": h.config.group_size,
        "beta": h.config.beta,
        "epsilon": h.config.epsilon,
        "ternary_rows": count(BitMode::Ternary),
        "int4_rows": count(BitMode::Int4),
        "int8_rows": count(BitMode::Int8),
        "modes_digest": format!("{:016x}", h.modes_digest),
        "payload_bytes": blob.payload.len(),
        "scale_count": blob.scales.len(),
        "physical_bits_per_weight": blob.physical_bits_per_weight(),
    })
}

fn quantize_cmd(a: &QuantizeArgs) -> Result<Value> {
    let cfg = a.quant.config()?;
    let w = load_matrix(&a.input)?;
    let plan = build_plan(w.rows(), a.rho, Scheme::parse(&a.scheme, Some(a.seed))?)?;
    let q = quantize_matrix(&w, &plan, &cfg)?;
    let out = a
        .out
        .clone()
        .unwrap_or_else(|| a.input.with_extension("rzrq"));
    let blob = write_checked_blob(&out, &q)?;
    if let Some(p) = &a.plan_out {
        write_atomic(p, serde_json::to_string_pretty(&plan.to_json())?.as_bytes())?;
    }
    Ok(json!({
        "command": "quantize",
        "output": path_str(&out),
        "scheme": plan.scheme().name(),
        "rho": a.rho,
        "realized_rho": plan.realized_rho(),
        "effective_bitwidth": effective_bitwidth(&plan),
        "blob": blob_summary(&blob),
    }))
}

fn parse_mode(s: &str) -> Result<BitMode> {
    match s {
        "ternary" => Ok(BitMode::Ternary),
        "int4" => Ok(BitMode::Int4),
        "int8" => Ok(BitMode::Int8),
        other => Err(Error::param(format!("unknown mode {other:?}"))),
    }
}

fn pack_cmd(a: &PackArgs) -> Result<Value> {
    let cfg = a.quant.config()?;
    let mode = parse_mode(&a.mode)?;
    let w = load_matrix(&a.input)?;
    let q = quantize_rows(&w, &vec![mode; w.rows()], &cfg)?;
    let blob = write_checked_blob(&a.out, &q)?;
    Ok(json!({
        "command": "pack",
        "output": path_str(&a.out),
        "mode": a.mode,
        "blob": blob_summary(&blob),
    }))
}

fn unpack_cmd(a: &UnpackArgs) -> Result<Value> {
    let blob = decode_blob(&std::fs::read(&a.input)?)?;
    let q = unpack(&blob)?;
    let w = q.dequantize::<f32>();
    if let Some(out) = &a.out {
        crate::container::save_tensor_file(out, &w)?;
    }
    let mut v = json!({
        "command": "unpack",
        "input": path_str(&a.input),
        "blob": blob_summary(&blob),
    });
    if a.codes {
        v["codes"] = json!((0..q.rows())
            .map(|i| q.row_codes(i).to_vec())
            .collect::<Vec<_>>());
        v["scales"] = json!(q.scales().iter().map(|s| s.to_f32()).collect::<Vec<_>>());
        v["row_modes"] = json!(q.row_modes());
    }
    Ok(v)
}

fn report_cmd(a: &ReportArgs) -> Result<Value> {
    let m = load_manifest(&a.manifest)?;
    let r = compression_report(
        &m,
        &CompressionPolicy {
            decoder_bitwidth: a.decoder_bits,
            embedding_bitwidth: a.emb_bits,
            group_size: a.group,
        },
    )?;
    let mut v = json!({
        "command": "report-compression",
        "manifest": path_str(&a.manifest),
        "total_params": r.total_params,
        "quantized_params": r.quantized_params,
        "quantization_proportion": r.quantization_proportion,
        "nominal_bits_per_weight": r.nominal_bits_per_weight,
        "physical_bits_per_weight": r.physical_bits_per_weight,
        "compression_ratio_nominal": round_to(r.compression_ratio_nominal, 2),
        "compression_ratio_nominal_exact": r.compression_ratio_nominal,
        "compression_ratio_physical": r.compression_ratio_physical,
    });
    if a.layers {
        v["layers"] = serde_json::to_value(&r.layers)?;
    }
    Ok(v)
}

fn round_to(x: f64, digits: i32) -> f64 {
    let p = 10f64.powi(digits);
    (x * p).round() / p
}

fn alloc_cmd(a: &AllocArgs) -> Result<Value> {
    let schemes: Vec<Scheme> = match a.scheme.as_str() {
        "all" => vec![
            Scheme::SuperGroup,
            Scheme::Random { seed: a.seed },
            Scheme::Stacked,
        ],
        s => vec![Scheme::parse(s, Some(a.seed))?],
    };
    let (salience, measured) = match &a.weights {
        Some(p) => {
            let w = load_matrix(p)?;
            if w.rows() != a.d_out {
                return Err(Error::shape(format!(
                    "weights have {} rows, --d-out is {}",
                    w.rows(),
                    a.d_out
                )));
            }
            let cfg = GroupQuantConfig::with_group_size(a.group)?;
            (
                SalienceProfile::from_weights(&w)?,
                Some(measure_precision_errors(&w, &cfg)?),
            )
        }
        None => (SalienceProfile::constant(a.d_out, 1.0)?, None),
    };
    let e_l = a.e_l.or(measured.map(|m| m.0)).unwrap_or(1.0);
    let e_h = a.e_h.or(measured.map(|m| m.1)).unwrap_or(0.0);
    let reports = schemes
        .iter()
        .map(|&s| {
            let plan = build_plan(a.d_out, a.rho, s)?;
            Ok(serde_json::to_value(analyze(&plan, &salience, e_l, e_h)?)?)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut v = json!({
        "command": "analyze-alloc",
        "d_out": a.d_out,
        "rho": a.rho,
        "seed": a.seed,
        "e_l": e_l,
        "e_h": e_h,
        "reports": reports,
    });
    if let Some(p) = &a.sweep_csv {
        let seeds: Vec<u64> = (0..a.sweep_seeds).map(|i| a.seed.wrapping_add(i)).collect();
        let rows = discrepancy_sweep(&[64, 256, 1024], &[0.5, 0.25, 0.125], &seeds)?;
        let mut buf = Vec::new();
        write_sweep_csv(&rows, &mut buf)?;
        write_atomic(p, &buf)?;
        v["sweep_csv"] = json!(path_str(p));
        v["sweep_rows"] = json!(rows.len());
    }
    Ok(v)
}

fn load_mask(path: Option<&PathBuf>, len: usize) -> Result<Vec<bool>> {
    match path {
        None => Ok(vec![true; len]),
        Some(p) => {
            let t = read_tensor(p)?;
            if t.rank() != 1 || t.data.len() != len {
                return Err(Error::shape(format!(
                    "mask must be rank 1 with {len} entries, got dims {:?}",
                    t.dims
                )));
            }
            Ok(t.data.iter().map(|&v| v != 0.0).collect())
        }
    }
}

fn load_stack(path: &Path, mask: Option<&PathBuf>) -> Result<FeatureStack> {
    let t = read_tensor(path)?;
    let [layers, tokens, d] = t.dims[..] else {
        return Err(Error::shape(format!(
            "{}: feature stack must be rank 3, got dims {:?}",
            path.display(),
            t.dims
        )));
    };
    let per = tokens * d;
    let mats = (0..layers)
        .map(|l| {
            Matrix::new(
                tokens,
                d,
                t.data[l * per..(l + 1) * per]
                    .iter()
                    .map(|&v| v as f64)
                    .collect(),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    FeatureStack::new(mats, load_mask(mask, tokens)?)
}

fn layers_cmd(a: &LayersArgs) -> Result<Value> {
    let stacks = a
        .stacks
        .iter()
        .map(|p| load_stack(p, a.mask.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    let counts = layer_frequency_analysis(&stacks, a.k)?;
    if let Some(p) = &a.csv {
        let mut buf = b"layer,count\n".to_vec();
        for (i, c) in counts.iter().enumerate() {
            writeln!(buf, "{},{}", i + 1, c)?;
        }
        write_atomic(p, &buf)?;
    }
    Ok(json!({
        "command": "analyze-layers",
        "stacks": stacks.len(),
        "k": a.k,
        "counts": counts,
    }))
}

fn kld_cmd(a: &KldArgs) -> Result<Value> {
    let t = load_matrix(&a.teacher)?;
    let s = load_matrix(&a.student)?;
    let n = t.rows();
    let labels = match &a.labels {
        Some(p) => {
            let l = read_tensor(p)?;
            if l.rank() != 1 {
                return Err(Error::shape("labels must be a rank-1 tensor"));
            }
            Some(
                l.data
                    .iter()
                    .map(|&v| {
                        if v >= 0.0 && v.fract() == 0.0 {
                            Ok(v as usize)
                        } else {
                            Err(Error::param(format!("label {v} is not a token id")))
                        }
                    })
                    .collect::<Result<Vec<_>>>()?,
            )
        }
        None => None,
    };
    let mask = load_mask(a.mask.as_ref(), n)?;
    let batch = LogitBatch::new(t, s, labels, mask, a.seq_len.unwrap_or(n.max(1)))?;
    let summary = summarize(&batch, &KldConfig::new(a.kld_k)?)?;
    let mut v = json!({
        "command": "analyze-kld",
        "positions": n,
        "K": a.kld_k,
        "summary": serde_json::to_value(&summary)?,
    });
    if batch.labels().is_some() {
        let rows = MISMATCH_THRESHOLDS
            .iter()
            .map(|&th| Ok((th, mismatch_rate(&batch, th)?)))
            .collect::<Result<Vec<_>>>()?;
        v["mismatch"] = json!(rows
            .iter()
            .map(|(th, (h, m))| json!({"threshold": th, "high_conf_fraction": h, "mismatch_fraction": m}))
            .collect::<Vec<_>>());
        if let Some(p) = &a.csv {
            let mut buf = b"threshold,high_conf_fraction,mismatch_fraction\n".to_vec();
            for (th, (h, m)) in &rows {
                writeln!(buf, "{th},{h},{m}")?;
            }
            write_atomic(p, &buf)?;
        }
    } else if a.csv.is_some() {
        return Err(Error::param("--csv needs --labels"));
    }
    Ok(v)
}

fn distill_cmd(a: &DistillArgs) -> Result<Value> {
    let mut cfg = match &a.config {
        Some(p) => TrainerConfig::from_json(&std::fs::read_to_string(p)?)?,
        None => TrainerConfig::default(),
    };
    cfg.seed = a.seed;
    if let Some(s) = a.steps {
        cfg.steps = s;
    }
    if let Some(r) = a.rho {
        cfg.rho = r;
    }
    cfg.validate()?;
    let teacher = pretrain_teacher(cfg.model, a.pretrain_steps, 1e-2, 16, cfg.seed)?;
    let eval = copy_task_batch(
        &mut SeededRng::new(cfg.seed.wrapping_add(1)),
        cfg.model.vocab,
        cfg.model.seq_len,
        64,
    )?;
    let prec = cfg.student_precision()?;
    let teacher_eval = evaluate(&teacher, &eval, &Precision::Full)?;
    let before = evaluate(&teacher, &eval, &prec)?;
    let run = run_qad(&teacher, &teacher, &cfg)?;
    let after = evaluate(&run.student, &eval, &prec)?;
    if let Some(p) = &a.history {
        let mut buf = Vec::new();
        write_history_csv(&mut buf, &run.history)?;
        write_atomic(p, &buf)?;
    }
    let first = run.history.first();
    let last = run.history.last();
    Ok(json!({
        "command": "distill-demo",
        "config": serde_json::to_value(&cfg)?,
        "teacher": teacher_eval,
        "student_before": before,
        "student_after": after,
        "first_step_task_loss": first.map(|m| m.task),
        "last_step_task_loss": last.map(|m| m.task),
        "last_lambda": last.map(|m| m.lambda),
        "steps": run.history.len(),
    }))
}

fn inspect_cmd(a: &InspectArgs) -> Result<Value> {
    let bytes = std::fs::read(&a.input)?;
    if bytes.starts_with(TENSOR_MAGIC) {
        let t = decode_tensor(&bytes)?;
        Ok(json!({
            "command": "inspect",
            "kind": "tensor",
            "dims": t.dims,
            "stats": tensor_stats(&t),
        }))
    } else if bytes.starts_with(BLOB_MAGIC) {
        let blob = decode_blob(&bytes)?;
        Ok(json!({
            "command": "inspect",
            "kind": "packed_blob",
            "blob": blob_summary(&blob),
        }))
    } else {
        let text = std::str::from_utf8(&bytes)
            .map_err(|_| Error::format("unrecognized file: no known magic"))?;
        if let Ok(plan) = serde_json::from_str::<Value>(text)
            .map_err(Error::from)
            .and_then(|v| AllocationPlan::from_json(&v))
        {
            return Ok(json!({
                "command": "inspect",
                "kind": "plan",
                "rows": plan.rows(),
                "scheme": plan.scheme().name(),
                "high_precision_rows": plan.high_precision_count(),
                "effective_bitwidth": effective_bitwidth(&plan),
            }));
        }
        let m = crate::manifest::ModelManifest::from_json(text)?;
        Ok(json!({
            "command": "inspect",
            "kind": "manifest",
            "layers": m.layers.len(),
            "tied_embedding": m.tied_embedding,
            "total_params": m.total_params(),
            "quantized_params": m.quantized_params(),
        }))
    }
}

fn tensor_stats(t: &Tensor) -> Value {
    if t.data.is_empty() {
        return json!(null);
    }
    let min = t.data.iter().copied().fold(f32::INFINITY, f32::min);
    let max = t.data.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mean = t.data.iter().map(|&v| v as f64).sum::<f64>() / t.data.len() as f64;
    json!({"min": min, "max": max, "mean": mean})
}
