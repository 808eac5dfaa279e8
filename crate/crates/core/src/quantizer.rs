//! Per-group symmetric quantization.
//!
//! Each run of `group_size` consecutive input-dimension values shares one
//! scale. Ternary groups use `s = max(beta * mean|w|, eps)` and codes clipped
//! to {-1, 0, 1}; 4- and 8-bit groups use `s = max(max|w| / qmax, eps)`.
//! Rounding is half away from zero in every mode.
//!
//! Codes are computed against the full-precision scale. The stored scale is
//! that value rounded to IEEE binary16, nudged up one step if rounding would
//! take it below `eps`. Dequantization always uses the stored scale.

use half::f16;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layout::AllocationPlan;
use crate::matrix::{Matrix, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BitMode {
    Ternary,
    Int4,
    Int8,
}

impl BitMode {
    /// Largest code magnitude.
    pub fn qmax(self) -> i8 {
        match self {
            BitMode::Ternary => 1,
            BitMode::Int4 => 7,
            BitMode::Int8 => 127,
        }
    }

    pub fn nominal_bits(self) -> f64 {
        match self {
            BitMode::Ternary => crate::layout::TERNARY_BITS,
            BitMode::Int4 => 4.0,
            BitMode::Int8 => 8.0,
        }
    }

    pub fn contains(self, code: i8) -> bool {
        let q = self.qmax();
        (-q..=q).contains(&code)
    }

    pub(crate) fn tag(self) -> u8 {
        match self {
            BitMode::Ternary => 0,
            BitMode::Int4 => 1,
            BitMode::Int8 => 2,
        }
    }

    pub(crate) fn from_tag(t: u8) -> Result<Self> {
        match t {
            0 => Ok(BitMode::Ternary),
            1 => Ok(BitMode::Int4),
            2 => Ok(BitMode::Int8),
            t => Err(Error::format(format!("unknown bit mode tag {t}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupQuantConfig {
    pub group_size: usize,
    pub beta: f64,
    pub epsilon: f64,
}

impl Default for GroupQuantConfig {
    fn default() -> Self {
        Self {
            group_size: 256,
            beta: 2.0,
            epsilon: 1e-5,
        }
    }
}

impl GroupQuantConfig {
    pub fn new(group_size: usize, beta: f64, epsilon: f64) -> Result<Self> {
        let c = Self {
            group_size,
            beta,
            epsilon,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn with_group_size(group_size: usize) -> Result<Self> {
        Self::new(group_size, 2.0, 1e-5)
    }

    pub fn validate(&self) -> Result<()> {
        if self.group_size == 0 {
            return Err(Error::param("group size must be at least 1"));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::param("beta must be positive"));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::param("epsilon must be positive"));
        }
        Ok(())
    }

    /// Number of groups along an input dimension of length `cols`.
    pub fn groups(&self, cols: usize) -> usize {
        cols.div_ceil(self.group_size)
    }

    /// Column range of group `j` (the last group may be short).
    pub fn group_range(&self, cols: usize, j: usize) -> std::ops::Range<usize> {
        let start = j * self.group_size;
        start..(start + self.group_size).min(cols)
    }
}

/// Codes of one group plus its full-precision scale.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupCodes<T> {
    pub codes: Vec<i8>,
    pub scale: T,
}

pub fn quantize_group<T: Real>(
    values: &[T],
    mode: BitMode,
    config: &GroupQuantConfig,
) -> Result<GroupCodes<T>> {
    if values.is_empty() || values.len() > config.group_size {
        return Err(Error::shape(format!(
            "group of {} values for group size {}",
            values.len(),
            config.group_size
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::non_finite("group contains a non-finite value"));
    }
    let eps = T::of(config.epsilon);
    let scale = match mode {
        BitMode::Ternary => {
            let sum: T = values.iter().map(|v| v.abs()).sum();
            // multiply before dividing so exact inputs stay exact
            (T::of(config.beta) * sum / T::of(values.len() as f64)).max(eps)
        }
        BitMode::Int4 | BitMode::Int8 => {
            let amax = values.iter().fold(T::zero(), |m, v| m.max(v.abs()));
            (amax / T::of(mode.qmax() as f64)).max(eps)
        }
    };
    let q = T::of(mode.qmax() as f64);
    let codes = values
        .iter()
        .map(|&v| {
            // f32/f64 `round` is half away from zero
            let c = (v / scale).round().max(-q).min(q);
            c.as_f64() as i8
        })
        .collect();
    Ok(GroupCodes { codes, scale })
}

pub fn dequantize_group<T: Real>(codes: &[i8], scale: T) -> Vec<T> {
    codes.iter().map(|&c| scale * T::of(c as f64)).collect()
}

/// Rounds a scale to binary16 storage, never dropping below `epsilon`.
pub fn storage_scale(scale: f64, epsilon: f64) -> Result<f16> {
    let mut h = f16::from_f64(scale);
    if !h.is_finite() {
        return Err(Error::non_finite(format!(
            "scale {scale} exceeds the 16-bit range"
        )));
    }
    if h.to_f64() < epsilon {
        h = f16::from_bits(h.to_bits() + 1);
    }
    Ok(h)
}

/// Integer codes and 16-bit scales for a matrix quantized group-wise along
/// its columns. Rows may use different bit modes.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedGroupMatrix {
    rows: usize,
    cols: usize,
    config: GroupQuantConfig,
    row_modes: Vec<BitMode>,
    codes: Vec<i8>,
    scales: Vec<f16>,
}

impl QuantizedGroupMatrix {
    /// Assembles a matrix from raw parts, checking every invariant.
    pub fn from_parts(
        rows: usize,
        cols: usize,
        config: GroupQuantConfig,
        row_modes: Vec<BitMode>,
        codes: Vec<i8>,
        scales: Vec<f16>,
    ) -> Result<Self> {
        config.validate()?;
        let q = Self {
            rows,
            cols,
            config,
            row_modes,
            codes,
            scales,
        };
        q.validate()?;
        Ok(q)
    }

    pub fn validate(&self) -> Result<()> {
        if self.row_modes.len() != self.rows {
            return Err(Error::shape("row mode count differs from rows"));
        }
        if self.codes.len() != self.rows * self.cols {
            return Err(Error::shape("code count differs from rows x cols"));
        }
        if self.scales.len() != self.rows * self.groups() {
            return Err(Error::shape("scale count differs from rows x groups"));
        }
        for i in 0..self.rows {
            let mode = self.row_modes[i];
            if let Some(c) = self.row_codes(i).iter().find(|&&c| !mode.contains(c)) {
                return Err(Error::param(format!(
                    "row {i}: code {c} outside {mode:?} range"
                )));
            }
        }
        if let Some(s) = self
            .scales
            .iter()
            .find(|s| !(s.is_finite() && s.to_f64() >= self.config.epsilon))
        {
            return Err(Error::param(format!(
                "scale {s} below epsilon or not finite"
            )));
        }
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn config(&self) -> &GroupQuantConfig {
        &self.config
    }

    pub fn groups(&self) -> usize {
        self.config.groups(self.cols)
    }

    pub fn row_modes(&self) -> &[BitMode] {
        &self.row_modes
    }

    pub fn codes(&self) -> &[i8] {
        &self.codes
    }

    pub fn scales(&self) -> &[f16] {
        &self.scales
    }

    pub fn row_codes(&self, i: usize) -> &[i8] {
        &self.codes[i * self.cols..(i + 1) * self.cols]
    }

    pub fn group_codes(&self, i: usize, j: usize) -> &[i8] {
        let r = self.config.group_range(self.cols, j);
        &self.row_codes(i)[r]
    }

    pub fn scale(&self, i: usize, j: usize) -> f16 {
        self.scales[i * self.groups() + j]
    }

    pub fn dequantize<T: Real>(&self) -> Matrix<T> {
        let g = self.groups();
        let mut out = Matrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            for j in 0..g {
                let s = T::of(self.scale(i, j).to_f64());
                let r = self.config.group_range(self.cols, j);
                for (o, &c) in out.row_mut(i)[r.clone()]
                    .iter_mut()
                    .zip(&self.row_codes(i)[r])
                {
                    *o = s * T::of(c as f64);
                }
            }
        }
        out
    }

    /// Concatenates row blocks quantized under the same configuration.
    pub fn vstack(parts: &[Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("nothing to stack"))?;
        if parts
            .iter()
            .any(|p| p.cols != first.cols || p.config != first.config)
        {
            return Err(Error::shape("stacked parts differ in cols or config"));
        }
        Ok(Self {
            rows: parts.iter().map(|p| p.rows).sum(),
            cols: first.cols,
            config: first.config,
            row_modes: parts.iter().flat_map(|p| p.row_modes.clone()).collect(),
            codes: parts.iter().flat_map(|p| p.codes.clone()).collect(),
            scales: parts.iter().flat_map(|p| p.scales.clone()).collect(),
        })
    }
}

/// Bit mode per row implied by a plan: 4-bit where assigned, else ternary.
pub fn plan_modes(plan: &AllocationPlan) -> Vec<BitMode> {
    plan.assignment()
        .iter()
        .map(|&a| if a { BitMode::Int4 } else { BitMode::Ternary })
        .collect()
}

pub fn quantize_matrix<T: Real>(
    w: &Matrix<T>,
    plan: &AllocationPlan,
    config: &GroupQuantConfig,
) -> Result<QuantizedGroupMatrix> {
    if plan.rows() != w.rows() {
        return Err(Error::shape(format!(
            "plan has {} rows, matrix has {}",
            plan.rows(),
            w.rows()
        )));
    }
    quantize_rows(w, &plan_modes(plan), config)
}

/// Quantizes each row of `w` with its own mode.
pub fn quantize_rows<T: Real>(
    w: &Matrix<T>,
    modes: &[BitMode],
    config: &GroupQuantConfig,
) -> Result<QuantizedGroupMatrix> {
    config.validate()?;
    if modes.len() != w.rows() {
        return Err(Error::shape("one mode per row required"));
    }
    let cols = w.cols();
    let groups = config.groups(cols);
    let per_row: Vec<(Vec<i8>, Vec<f16>)> = (0..w.rows())
        .into_par_iter()
        .map(|i| {
            let row = w.row(i);
            let mut codes = Vec::with_capacity(cols);
            let mut scales = Vec::with_capacity(groups);
            for j in 0..groups {
                let g = quantize_group(&row[config.group_range(cols, j)], modes[i], config)?;
                codes.extend_from_slice(&g.codes);
                scales.push(storage_scale(g.scale.as_f64(), config.epsilon)?);
            }
            Ok((codes, scales))
        })
        .collect::<Result<_>>()?;
    let mut codes = Vec::with_capacity(w.rows() * cols);
    let mut scales = Vec::with_capacity(w.rows() * groups);
    for (c, s) in per_row {
        codes.extend(c);
        scales.extend(s);
    }
    Ok(QuantizedGroupMatrix {
        rows: w.rows(),
        cols,
        config: *config,
        row_modes: modes.to_vec(),
        codes,
        scales,
    })
}

/// Quantize-then-dequantize, the forward path seen during training.
pub fn fake_quantize<T: Real>(
    w: &Matrix<T>,
    plan: &AllocationPlan,
    config: &GroupQuantConfig,
) -> Result<Matrix<T>> {
    Ok(quantize_matrix(w, plan, config)?.dequantize())
}

pub fn fake_quantize_rows<T: Real>(
    w: &Matrix<T>,
    modes: &[BitMode],
    config: &GroupQuantConfig,
) -> Result<Matrix<T>> {
    Ok(quantize_rows(w, modes, config)?.dequantize())
}

/// 8-bit activations, grouped along the input dimension of each token.
///
/// Stored token-major: row `l` holds the `d_in` codes of token `l`, so the
/// group layout matches a weight matrix with `d_in` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedActivations(QuantizedGroupMatrix);

impl QuantizedActivations {
    pub fn d_in(&self) -> usize {
        self.0.cols
    }

    pub fn tokens(&self) -> usize {
        self.0.rows
    }

    /// Token-major view.
    pub fn inner(&self) -> &QuantizedGroupMatrix {
        &self.0
    }

    pub fn from_token_major(q: QuantizedGroupMatrix) -> Result<Self> {
        if q.row_modes.iter().any(|&m| m != BitMode::Int8) {
            return Err(Error::param("activations must be 8-bit"));
        }
        Ok(Self(q))
    }

    /// Scale `s^X_{j,l}` of group `j` for token `l`.
    pub fn scale(&self, j: usize, l: usize) -> f16 {
        self.0.scale(l, j)
    }

    /// Dequantized activations in the original `d_in x L` orientation.
    pub fn dequantize<T: Real>(&self) -> Matrix<T> {
        self.0.dequantize::<T>().transpose()
    }
}

/// Quantizes `x` (`d_in x L`, one token per column) to 8-bit per group.
pub fn quantize_activations<T: Real>(
    x: &Matrix<T>,
    config: &GroupQuantConfig,
) -> Result<QuantizedActivations> {
    let xt = x.transpose();
    let modes = vec![BitMode::Int8; xt.rows()];
    Ok(QuantizedActivations(quantize_rows(&xt, &modes, config)?))
}

pub fn fake_quantize_activations<T: Real>(
    x: &Matrix<T>,
    config: &GroupQuantConfig,
) -> Result<Matrix<T>> {
    Ok(quantize_activations(x, config)?.dequantize())
}
