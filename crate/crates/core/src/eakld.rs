//! Entropy-aware KL divergence and its baselines.
//!
//! All logarithms are natural. Per-token quantities are reduced as a mean
//! over the valid tokens of each sample, then a mean over samples; samples
//! without any valid token are skipped. Probabilities inside logarithms are
//! clamped to at least [`PROB_FLOOR`].
//!
//! The mixing coefficient `lambda` is the reduced, capped, normalized teacher
//! entropy `min(H, ln K) / ln K`. It depends on the teacher alone and is a
//! constant for differentiation.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const PROB_FLOOR: f64 = 1e-12;

/// Teacher and student logits for `samples * seq_len` positions.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitBatch {
    teacher: Matrix<f64>,
    student: Matrix<f64>,
    labels: Option<Vec<usize>>,
    mask: Vec<bool>,
    seq_len: usize,
}

impl LogitBatch {
    pub fn new(
        teacher_logits: Matrix<f64>,
        student_logits: Matrix<f64>,
        labels: Option<Vec<usize>>,
        mask: Vec<bool>,
        seq_len: usize,
    ) -> Result<Self> {
        let (n, v) = teacher_logits.shape();
        if student_logits.shape() != (n, v) {
            return Err(Error::shape(format!(
                "teacher logits {:?}, student {:?}",
                teacher_logits.shape(),
                student_logits.shape()
            )));
        }
        if v == 0 {
            return Err(Error::shape("vocabulary is empty"));
        }
        if mask.len() != n {
            return Err(Error::shape(format!(
                "mask has {} entries for {n} positions",
                mask.len()
            )));
        }
        if seq_len == 0 || n % seq_len != 0 {
            return Err(Error::shape(format!(
                "{n} positions do not split into sequences of {seq_len}"
            )));
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::shape(format!(
                    "{} labels for {n} positions",
                    l.len()
                )));
            }
            if let Some(bad) = l.iter().find(|&&y| y >= v) {
                return Err(Error::param(format!(
                    "label {bad} outside vocabulary of {v}"
                )));
            }
        }
        Ok(Self {
            teacher: teacher_logits,
            student: student_logits,
            labels,
            mask,
            seq_len,
        })
    }

    /// A batch holding a single sequence.
    pub fn single(
        teacher_logits: Matrix<f64>,
        student_logits: Matrix<f64>,
        labels: Option<Vec<usize>>,
        mask: Vec<bool>,
    ) -> Result<Self> {
        let n = teacher_logits.rows();
        Self::new(teacher_logits, student_logits, labels, mask, n.max(1))
    }

    pub fn teacher_logits(&self) -> &Matrix<f64> {
        &self.teacher
    }

    pub fn student_logits(&self) -> &Matrix<f64> {
        &self.student
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn positions(&self) -> usize {
        self.teacher.rows()
    }

    pub fn vocab(&self) -> usize {
        self.teacher.cols()
    }

    /// Same batch with the roles of teacher and student exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            teacher: self.student.clone(),
            student: self.teacher.clone(),
            ..self.clone()
        }
    }

    pub fn with_student_logits(&self, student: Matrix<f64>) -> Result<Self> {
        Self::new(
            self.teacher.clone(),
            student,
            self.labels.clone(),
            self.mask.clone(),
            self.seq_len,
        )
    }

    fn labels_required(&self) -> Result<&[usize]> {
        self.labels()
            .ok_or_else(|| Error::param("this measure needs label tokens"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KldConfig {
    /// Entropy cap: `lambda` saturates at the entropy of a `K`-way uniform.
    pub k: usize,
}

impl Default for KldConfig {
    fn default() -> Self {
        Self { k: 16 }
    }
}

impl KldConfig {
    pub fn new(k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::param(format!("K must be at least 2, got {k}")));
        }
        Ok(Self { k })
    }

    fn ln_k(&self) -> Result<f64> {
        Self::new(self.k).map(|c| (c.k as f64).ln())
    }
}

/// Numerically stable softmax of one row.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|&v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn softmax_rows(z: &Matrix<f64>) -> Matrix<f64> {
    let mut out = Matrix::zeros(z.rows(), z.cols());
    for i in 0..z.rows() {
        out.row_mut(i).copy_from_slice(&softmax(z.row(i)));
    }
    out
}

pub fn token_entropy(p: &[f64]) -> Result<f64> {
    if p.iter().any(|&v| !(v.is_finite() && v >= 0.0)) {
        return Err(Error::param("probabilities must be finite and nonnegative"));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-6 {
        return Err(Error::param(format!("probabilities sum to {s}")));
    }
    Ok(entropy_unchecked(p))
}

fn entropy_unchecked(p: &[f64]) -> f64 {
    0.0 - p
        .iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| v * v.ln())
        .sum::<f64>()
}

fn ln_floor(p: f64) -> f64 {
    p.max(PROB_FLOOR).ln()
}

/// Weight of each position in the two-level mean; zero for masked positions.
pub fn token_weights(mask: &[bool], seq_len: usize) -> Result<Vec<f64>> {
    let counts: Vec<usize> = mask
        .chunks(seq_len)
        .map(|c| c.iter().filter(|&&m| m).count())
        .collect();
    let samples = counts.iter().filter(|&&c| c > 0).count();
    if samples == 0 {
        return Err(Error::param("mask has no valid tokens"));
    }
    Ok(mask
        .iter()
        .enumerate()
        .map(|(t, &m)| {
            if m {
                1.0 / (counts[t / seq_len] * samples) as f64
            } else {
                0.0
            }
        })
        .collect())
}

fn reduce(batch: &LogitBatch, per_token: impl Fn(usize) -> f64) -> Result<f64> {
    let w = token_weights(&batch.mask, batch.seq_len)?;
    Ok(w.iter()
        .enumerate()
        .filter(|(_, &w)| w > 0.0)
        .map(|(t, &w)| w * per_token(t))
        .sum())
}

pub fn mixing_lambda(batch: &LogitBatch, cfg: &KldConfig) -> Result<f64> {
    let ln_k = cfg.ln_k()?;
    let pt = softmax_rows(&batch.teacher);
    let lam = reduce(batch, |t| entropy_unchecked(pt.row(t)).min(ln_k) / ln_k)?;
    Ok(lam.clamp(0.0, 1.0))
}

fn kl_rows(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&a, _)| a > 0.0)
        .map(|(&a, &b)| a * (ln_floor(a) - ln_floor(b)))
        .sum()
}

/// `KL(P_T || P_S)`.
pub fn forward_kld(batch: &LogitBatch) -> Result<f64> {
    let (pt, ps) = (softmax_rows(&batch.teacher), softmax_rows(&batch.student));
    reduce(batch, |t| kl_rows(pt.row(t), ps.row(t)))
}

/// `KL(P_S || P_T)`.
pub fn reverse_kld(batch: &LogitBatch) -> Result<f64> {
    let (pt, ps) = (softmax_rows(&batch.teacher), softmax_rows(&batch.student));
    reduce(batch, |t| kl_rows(ps.row(t), pt.row(t)))
}

/// `coef * forward + (1 - coef) * reverse`.
pub fn mixed_kld(batch: &LogitBatch, coef: f64) -> Result<f64> {
    Ok(coef * forward_kld(batch)? + (1.0 - coef) * reverse_kld(batch)?)
}

pub fn eakld_loss(batch: &LogitBatch, cfg: &KldConfig) -> Result<f64> {
    mixed_kld(batch, mixing_lambda(batch, cfg)?)
}

/// Mean teacher probability of the label token over valid positions.
pub fn confidence_coefficient(batch: &LogitBatch) -> Result<f64> {
    let labels = batch.labels_required()?;
    let pt = softmax_rows(&batch.teacher);
    let valid: Vec<usize> = (0..batch.positions()).filter(|&t| batch.mask[t]).collect();
    if valid.is_empty() {
        return Err(Error::param("mask has no valid tokens"));
    }
    Ok(valid.iter().map(|&t| pt.get(t, labels[t])).sum::<f64>() / valid.len() as f64)
}

pub fn cakld_loss(batch: &LogitBatch) -> Result<f64> {
    mixed_kld(batch, confidence_coefficient(batch)?)
}

/// Returns `(high_conf_fraction, mismatch_fraction)`. The mismatch fraction
/// is 0 when no token clears the threshold.
pub fn mismatch_rate(batch: &LogitBatch, threshold: f64) -> Result<(f64, f64)> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::param(format!(
            "threshold {threshold} outside (0, 1)"
        )));
    }
    let labels = batch.labels_required()?;
    let pt = softmax_rows(&batch.teacher);
    let (mut valid, mut high, mut wrong) = (0usize, 0usize, 0usize);
    for t in (0..batch.positions()).filter(|&t| batch.mask[t]) {
        valid += 1;
        let row = pt.row(t);
        let (arg, top) = argmax(row);
        if top > threshold {
            high += 1;
            if arg != labels[t] {
                wrong += 1;
            }
        }
    }
    if valid == 0 {
        return Err(Error::param("mask has no valid tokens"));
    }
    let mismatch = if high == 0 {
        0.0
    } else {
        wrong as f64 / high as f64
    };
    Ok((high as f64 / valid as f64, mismatch))
}

/// First index of the maximum.
pub fn argmax(row: &[f64]) -> (usize, f64) {
    row.iter().copied().enumerate().fold(
        (0, f64::NEG_INFINITY),
        |b, (i, v)| if v > b.1 { (i, v) } else { b },
    )
}

/// Gradient of [`mixed_kld`] with respect to the student logits.
pub fn mixed_kld_grad(batch: &LogitBatch, coef: f64) -> Result<Matrix<f64>> {
    let w = token_weights(&batch.mask, batch.seq_len)?;
    let (pt, ps) = (softmax_rows(&batch.teacher), softmax_rows(&batch.student));
    let v = batch.vocab();
    let mut g = Matrix::zeros(batch.positions(), v);
    let mut psi = vec![0.0; v];
    for (t, &wt) in w.iter().enumerate() {
        if wt == 0.0 {
            continue;
        }
        let (p_t, p_s) = (pt.row(t), ps.row(t));
        // psi = dL/dp_S; the floor has zero slope where it is active
        for ((o, &a), &b) in psi.iter_mut().zip(p_t).zip(p_s) {
            let live = b > PROB_FLOOR;
            let fwd = if live { -a / b } else { 0.0 };
            let rev = ln_floor(b) - ln_floor(a) + if live { 1.0 } else { 0.0 };
            *o = coef * fwd + (1.0 - coef) * rev;
        }
        let mean: f64 = p_s.iter().zip(&psi).map(|(p, s)| p * s).sum();
        for ((o, &p), &s) in g.row_mut(t).iter_mut().zip(p_s).zip(&psi) {
            *o = wt * p * (s - mean);
        }
    }
    Ok(g)
}

pub fn eakld_grad(batch: &LogitBatch, cfg: &KldConfig) -> Result<Matrix<f64>> {
    mixed_kld_grad(batch, mixing_lambda(batch, cfg)?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KldSummary {
    pub lambda: f64,
    pub forward_kld: f64,
    pub reverse_kld: f64,
    pub eakld: f64,
    pub cakld: Option<f64>,
    pub confidence_coefficient: Option<f64>,
}

pub fn summarize(batch: &LogitBatch, cfg: &KldConfig) -> Result<KldSummary> {
    let lambda = mixing_lambda(batch, cfg)?;
    let (f, r) = (forward_kld(batch)?, reverse_kld(batch)?);
    let coef = match batch.labels {
        Some(_) => Some(confidence_coefficient(batch)?),
        None => None,
    };
    Ok(KldSummary {
        lambda,
        forward_kld: f,
        reverse_kld: r,
        eakld: lambda * f + (1.0 - lambda) * r,
        cakld: coef.map(|c| c * f + (1.0 - c) * r),
        confidence_coefficient: coef,
    })
}
