//! Mixed-precision matrix multiply on quantized operands.
//!
//! `Y[i, l] = sum_j (sW[i, j] * sX[j, l]) * <qW[i, group j], qX[group j, l]>`
//!
//! The integer dot of each group is accumulated exactly in `i32`; the scale
//! product and the running sum over groups are `f32`, reduced group-major in
//! ascending `j`. Rows are computed independently, so the result does not
//! depend on the number of threads.
//!
//! The float paths below (`fake_quant_forward`, `ste_backward`) are the
//! training-time counterparts: quantize-dequantize in the forward pass and a
//! pure pass-through straight-through estimator in the backward pass. Scales
//! are treated as constants when differentiating.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::layout::AllocationPlan;
use crate::matrix::{DenseMatrix, Matrix, Real};
use crate::quantizer::{
    fake_quantize, fake_quantize_activations, GroupQuantConfig, QuantizedActivations,
    QuantizedGroupMatrix,
};

#[derive(Debug, Clone, PartialEq)]
pub struct MatmulOutput<T = f32> {
    pub y: Matrix<T>,
}

/// Activation precision in the float forward path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActivationBits {
    /// Weight-only quantization: activations stay in full precision.
    Sixteen,
    /// Weight-activation quantization: 8-bit per-group activations.
    Eight,
}

impl ActivationBits {
    pub fn from_bits(bits: u32) -> Result<Self> {
        match bits {
            16 => Ok(ActivationBits::Sixteen),
            8 => Ok(ActivationBits::Eight),
            b => Err(Error::param(format!(
                "activation bits must be 8 or 16, got {b}"
            ))),
        }
    }
}

pub fn mp_matmul(wq: &QuantizedGroupMatrix, xq: &QuantizedActivations) -> Result<MatmulOutput> {
    if wq.cols() != xq.d_in() {
        return Err(Error::shape(format!(
            "weights have {} input columns, activations {}",
            wq.cols(),
            xq.d_in()
        )));
    }
    if wq.config().group_size != xq.inner().config().group_size {
        return Err(Error::shape(format!(
            "group size {} vs {}",
            wq.config().group_size,
            xq.inner().config().group_size
        )));
    }
    let (d_out, tokens, groups) = (wq.rows(), xq.tokens(), wq.groups());
    let x = xq.inner();
    let data: Vec<f32> = (0..d_out)
        .into_par_iter()
        .flat_map_iter(|i| {
            (0..tokens).map(move |l| {
                let mut acc = 0.0f32;
                for j in 0..groups {
                    let dot: i32 = wq
                        .group_codes(i, j)
                        .iter()
                        .zip(x.group_codes(l, j))
                        .map(|(&a, &b)| a as i32 * b as i32)
                        .sum();
                    let s = wq.scale(i, j).to_f32() * x.scale(l, j).to_f32();
                    acc += s * dot as f32;
                }
                acc
            })
        })
        .collect();
    Ok(MatmulOutput {
        y: DenseMatrix::new(d_out, tokens, data)?,
    })
}

/// Activations as seen by the matmul: unchanged or 8-bit fake-quantized.
pub fn forward_activations<T: Real>(
    x: &Matrix<T>,
    config: &GroupQuantConfig,
    bits: ActivationBits,
) -> Result<Matrix<T>> {
    match bits {
        ActivationBits::Sixteen => Ok(x.clone()),
        ActivationBits::Eight => fake_quantize_activations(x, config),
    }
}

pub fn fake_quant_forward<T: Real>(
    w: &Matrix<T>,
    x: &Matrix<T>,
    plan: &AllocationPlan,
    config: &GroupQuantConfig,
    activation_bits: ActivationBits,
) -> Result<MatmulOutput<T>> {
    if w.cols() != x.rows() {
        return Err(Error::shape(format!(
            "W is {}x{}, X is {}x{}",
            w.rows(),
            w.cols(),
            x.rows(),
            x.cols()
        )));
    }
    let wq = fake_quantize(w, plan, config)?;
    let xa = forward_activations(x, config, activation_bits)?;
    Ok(MatmulOutput { y: wq.matmul(&xa)? })
}

/// Gradients of a loss through `Y = fq(W) · fa(X)` with both quantizers
/// replaced by the identity in the backward pass.
///
/// `dW = dY · fa(X)^T`, `dX = fq(W)^T · dY`.
pub fn ste_backward<T: Real>(
    dy: &Matrix<T>,
    w: &Matrix<T>,
    x: &Matrix<T>,
    plan: &AllocationPlan,
    config: &GroupQuantConfig,
    activation_bits: ActivationBits,
) -> Result<(Matrix<T>, Matrix<T>)> {
    if w.cols() != x.rows() || dy.shape() != (w.rows(), x.cols()) {
        return Err(Error::shape(format!(
            "dY {:?} does not match W {:?} · X {:?}",
            dy.shape(),
            w.shape(),
            x.shape()
        )));
    }
    let wq = fake_quantize(w, plan, config)?;
    let xa = forward_activations(x, config, activation_bits)?;
    let dw = dy.matmul(&xa.transpose())?;
    let dx = wq.transpose().matmul(dy)?;
    Ok((dw, dx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantizer::{quantize_activations, BitMode};
    use half::f16;

    #[test]
    fn hand_case() {
        let cfg = GroupQuantConfig::with_group_size(4).unwrap();
        let wq = QuantizedGroupMatrix::from_parts(
            1,
            4,
            cfg,
            vec![BitMode::Ternary],
            vec![1, -1, 0, 0],
            vec![f16::from_f32(2.0)],
        )
        .unwrap();
        let xq = QuantizedActivations::from_token_major(
            QuantizedGroupMatrix::from_parts(
                1,
                4,
                cfg,
                vec![BitMode::Int8],
                vec![10, 20, 0, 5],
                vec![f16::from_f32(0.1)],
            )
            .unwrap(),
        )
        .unwrap();
        let y = mp_matmul(&wq, &xq).unwrap().y;
        // 0.1 is not exact in binary16; the product is -10 * 2 * f16(0.1)
        let want = -10.0 * 2.0 * f16::from_f32(0.1).to_f32();
        assert_eq!(y.data(), &[want]);
        assert!((y.get(0, 0) + 2.0).abs() < 1e-3);
    }

    #[test]
    fn zero_weight_codes_give_zero() {
        let cfg = GroupQuantConfig::with_group_size(2).unwrap();
        let w = Matrix::<f32>::zeros(3, 4);
        let wq =
            crate::quantizer::quantize_matrix(&w, &AllocationPlan::all_ternary(3), &cfg).unwrap();
        let x = Matrix::<f32>::from_fn(4, 5, |i, j| (i as f32) - (j as f32) * 0.5);
        let y = mp_matmul(&wq, &quantize_activations(&x, &cfg).unwrap())
            .unwrap()
            .y;
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_and_group_mismatch() {
        let c2 = GroupQuantConfig::with_group_size(2).unwrap();
        let c4 = GroupQuantConfig::with_group_size(4).unwrap();
        let w = Matrix::<f32>::from_fn(2, 4, |i, j| (i + j) as f32);
        let wq = crate::quantizer::quantize_matrix(&w, &AllocationPlan::all_int4(2), &c2).unwrap();
        let x4 = quantize_activations(&Matrix::<f32>::zeros(4, 1), &c4).unwrap();
        assert!(mp_matmul(&wq, &x4).is_err());
        let x3 = quantize_activations(&Matrix::<f32>::zeros(3, 1), &c2).unwrap();
        assert!(mp_matmul(&wq, &x3).is_err());
    }

    #[test]
    fn zero_x_zero_y_and_zero_grad() {
        let cfg = GroupQuantConfig::with_group_size(4).unwrap();
        let w = Matrix::<f64>::from_fn(3, 8, |i, j| ((i * 3 + j) % 5) as f64 - 2.0);
        let plan = AllocationPlan::all_int4(3);
        let x = Matrix::<f64>::zeros(8, 2);
        let y = fake_quant_forward(&w, &x, &plan, &cfg, ActivationBits::Sixteen)
            .unwrap()
            .y;
        assert!(y.data().iter().all(|&v| v == 0.0));
        let dy = Matrix::<f64>::zeros(3, 2);
        let (dw, dx) = ste_backward(&dy, &w, &x, &plan, &cfg, ActivationBits::Eight).unwrap();
        assert!(dw.data().iter().chain(dx.data()).all(|&v| v == 0.0));
    }
}
