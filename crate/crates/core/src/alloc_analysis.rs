//! Discrepancy analysis of precision layouts.
//!
//! Each 4-bit row `i` of a plan with `d_out` rows maps to the cell midpoint
//! `(i + 0.5) / d_out`. The star discrepancy of those points bounds, through
//! the one-dimensional Koksma–Hlawka inequality, how far the mean salience of
//! the 4-bit rows can drift from the mean salience of all rows:
//!
//! ```text
//! | mean_k S(p_k) - mean_i S_i |  <=  V(S) * D*_N(P)
//! ```
//!
//! The salience profile is treated as a step function on the row cells, so
//! its integral is the plain row mean and `V(S)` is the discrete total
//! variation `sum |S_{i+1} - S_i|`.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::layout::{build_plan, AllocationPlan, Scheme};
use crate::matrix::{Matrix, Real};
use crate::quantizer::{fake_quantize_rows, BitMode, GroupQuantConfig};

/// Nonnegative per-row importance.
#[derive(Debug, Clone, PartialEq)]
pub struct SalienceProfile {
    values: Vec<f64>,
}

impl SalienceProfile {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::param("salience profile is empty"));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::param(format!(
                "salience value {v} is negative or not finite"
            )));
        }
        Ok(Self { values })
    }

    pub fn constant(len: usize, c: f64) -> Result<Self> {
        Self::new(vec![c; len])
    }

    /// Mean squared weight of each row.
    pub fn from_weights<T: Real>(w: &Matrix<T>) -> Result<Self> {
        Self::new(
            (0..w.rows())
                .map(|i| {
                    let r = w.row(i);
                    r.iter().map(|v| v.as_f64().powi(2)).sum::<f64>() / r.len().max(1) as f64
                })
                .collect(),
        )
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Normalized midpoints of the 4-bit rows.
pub fn allocation_points(plan: &AllocationPlan) -> Result<Vec<f64>> {
    let d = plan.rows() as f64;
    let pts: Vec<f64> = plan
        .high_precision_rows()
        .into_iter()
        .map(|i| (i as f64 + 0.5) / d)
        .collect();
    if pts.is_empty() {
        return Err(Error::param("plan has no 4-bit rows"));
    }
    Ok(pts)
}

/// Exact star discrepancy of a point set in `[0, 1]`.
pub fn star_discrepancy(points: &[f64]) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::param("empty point set"));
    }
    if let Some(p) = points.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::param(format!("point {p} outside [0, 1]")));
    }
    let mut sorted = points.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    Ok(sorted
        .iter()
        .enumerate()
        .map(|(k, &p)| {
            let i = (k + 1) as f64;
            (i / n - p).max(p - (i - 1.0) / n)
        })
        .fold(0.0, f64::max))
}

pub fn plan_discrepancy(plan: &AllocationPlan) -> Result<f64> {
    star_discrepancy(&allocation_points(plan)?)
}

fn check_len(plan: &AllocationPlan, s: &SalienceProfile) -> Result<()> {
    if plan.rows() != s.len() {
        return Err(Error::shape(format!(
            "plan has {} rows, salience {}",
            plan.rows(),
            s.len()
        )));
    }
    Ok(())
}

/// `A = sum_i a_i S_i`.
pub fn alignment(plan: &AllocationPlan, salience: &SalienceProfile) -> Result<f64> {
    check_len(plan, salience)?;
    Ok(plan
        .assignment()
        .iter()
        .zip(salience.values())
        .filter(|(&a, _)| a)
        .map(|(_, &s)| s)
        .sum())
}

pub fn total_variation(salience: &SalienceProfile) -> f64 {
    salience
        .values()
        .windows(2)
        .map(|w| (w[1] - w[0]).abs())
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KhBound {
    pub variation: f64,
    pub discrepancy: f64,
    /// `V(S) * D*`.
    pub bound: f64,
    /// `|mean of S over 4-bit rows - mean of S over all rows|`.
    pub empirical_gap: f64,
}

pub fn kh_bound(plan: &AllocationPlan, salience: &SalienceProfile) -> Result<KhBound> {
    check_len(plan, salience)?;
    let discrepancy = plan_discrepancy(plan)?;
    let variation = total_variation(salience);
    let n = plan.high_precision_count() as f64;
    let sample_mean = alignment(plan, salience)? / n;
    let mean = salience.values().iter().sum::<f64>() / salience.len() as f64;
    Ok(KhBound {
        variation,
        discrepancy,
        bound: variation * discrepancy,
        empirical_gap: (sample_mean - mean).abs(),
    })
}

/// Row-separable error surrogate `sum_i (e_l - a_i (e_l - e_h)) S_i`.
pub fn surrogate_loss(
    plan: &AllocationPlan,
    salience: &SalienceProfile,
    e_l: f64,
    e_h: f64,
) -> Result<f64> {
    check_len(plan, salience)?;
    if e_h > e_l {
        return Err(Error::param(format!(
            "4-bit error {e_h} exceeds ternary error {e_l}"
        )));
    }
    Ok(plan
        .assignment()
        .iter()
        .zip(salience.values())
        .map(|(&a, &s)| (e_l - if a { e_l - e_h } else { 0.0 }) * s)
        .sum())
}

/// Mean squared round-trip error of ternary and of 4-bit quantization over
/// every row of `w`, returned as `(e_l, e_h)`.
pub fn measure_precision_errors<T: Real>(
    w: &Matrix<T>,
    config: &GroupQuantConfig,
) -> Result<(f64, f64)> {
    let mse = |mode: BitMode| -> Result<f64> {
        let fq = fake_quantize_rows(w, &vec![mode; w.rows()], config)?;
        let n = w.data().len().max(1) as f64;
        Ok(w.data()
            .iter()
            .zip(fq.data())
            .map(|(a, b)| (a.as_f64() - b.as_f64()).powi(2))
            .sum::<f64>()
            / n)
    };
    Ok((mse(BitMode::Ternary)?, mse(BitMode::Int4)?))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisReport {
    pub scheme: String,
    pub rows: usize,
    pub high_precision_rows: usize,
    pub discrepancy: f64,
    pub alignment: f64,
    pub kh_bound: f64,
    pub empirical_gap: f64,
    pub surrogate: f64,
}

pub fn analyze(
    plan: &AllocationPlan,
    salience: &SalienceProfile,
    e_l: f64,
    e_h: f64,
) -> Result<AnalysisReport> {
    let kh = kh_bound(plan, salience)?;
    Ok(AnalysisReport {
        scheme: plan.scheme().name().to_string(),
        rows: plan.rows(),
        high_precision_rows: plan.high_precision_count(),
        discrepancy: kh.discrepancy,
        alignment: alignment(plan, salience)?,
        kh_bound: kh.bound,
        empirical_gap: kh.empirical_gap,
        surrogate: surrogate_loss(plan, salience, e_l, e_h)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub d_out: usize,
    pub rho: f64,
    pub scheme: String,
    pub seed: Option<u64>,
    pub n: usize,
    pub discrepancy: f64,
}

/// Star discrepancy of each scheme over a `(d_out, rho)` grid. The random
/// scheme is evaluated once per seed.
pub fn discrepancy_sweep(d_outs: &[usize], rhos: &[f64], seeds: &[u64]) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for &d_out in d_outs {
        for &rho in rhos {
            let mut schemes = vec![(Scheme::SuperGroup, None), (Scheme::Stacked, None)];
            schemes.extend(seeds.iter().map(|&s| (Scheme::Random { seed: s }, Some(s))));
            for (scheme, seed) in schemes {
                let plan = build_plan(d_out, rho, scheme)?;
                rows.push(SweepRow {
                    d_out,
                    rho,
                    scheme: scheme.name().to_string(),
                    seed,
                    n: plan.high_precision_count(),
                    discrepancy: plan_discrepancy(&plan)?,
                });
            }
        }
    }
    Ok(rows)
}

pub fn write_sweep_csv(rows: &[SweepRow], mut out: impl Write) -> Result<()> {
    writeln!(out, "d_out,rho,scheme,seed,n,discrepancy")?;
    for r in rows {
        let seed = r.seed.map(|s| s.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.d_out, r.rho, r.scheme, seed, r.n, r.discrepancy
        )?;
    }
    Ok(())
}
