//! Residual MLP sequence model with hand-written reverse pass.
//!
//! Hidden states are kept column-per-token (`d x N`) so every linear layer is
//! `Y = W X` with `W` stored `out x in`, the same orientation the quantizer
//! groups along.
//!
//! ```text
//! h0[:, t] = E[x_t] + P[x_{t-1}]           (P term absent at sequence start)
//! h_l      = h_{l-1} + W2_l tanh(g_l W1_l h_{l-1})
//! logits   = H h_L
//! ```
//!
//! `P` is a previous-token embedding; without it no position could see its
//! predecessor.

use serde::{Deserialize, Serialize};

use super::data::TokenBatch;
use super::optim::Param;
use crate::error::{Error, Result};
use crate::lafd::FeatureStack;
use crate::layout::{build_plan, AllocationPlan, Scheme};
use crate::matrix::Matrix;
use crate::mpgemm::{forward_activations, ActivationBits};
use crate::quantizer::{fake_quantize, GroupQuantConfig};
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelShape {
    pub vocab: usize,
    pub d: usize,
    pub d_h: usize,
    pub layers: usize,
    pub seq_len: usize,
}

impl Default for ModelShape {
    fn default() -> Self {
        Self {
            vocab: 64,
            d: 32,
            d_h: 64,
            layers: 6,
            seq_len: 16,
        }
    }
}

impl ModelShape {
    pub fn validate(&self) -> Result<()> {
        if self.vocab == 0 || self.d == 0 || self.d_h == 0 || self.layers == 0 || self.seq_len < 2 {
            return Err(Error::param(format!("invalid model shape {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    /// `d_h x d`.
    pub w1: Matrix<f64>,
    /// `d x d_h`.
    pub w2: Matrix<f64>,
    /// Gain of the nonlinearity; never quantized.
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    pub shape: ModelShape,
    /// `vocab x d`.
    pub embedding: Matrix<f64>,
    /// `vocab x d`.
    pub prev_embedding: Matrix<f64>,
    pub blocks: Vec<Block>,
    /// `vocab x d`.
    pub head: Matrix<f64>,
}

/// Student-side quantization of the forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct StudentQuant {
    pub config: GroupQuantConfig,
    /// `(plan for w1, plan for w2)` per block.
    pub block_plans: Vec<(AllocationPlan, AllocationPlan)>,
    pub activation_bits: ActivationBits,
}

impl StudentQuant {
    /// Block linears follow `rho`/`scheme`; a random scheme uses
    /// `seed + matrix index` per matrix.
    pub fn new(
        shape: &ModelShape,
        rho: f64,
        scheme: Scheme,
        config: GroupQuantConfig,
        activation_bits: ActivationBits,
    ) -> Result<Self> {
        config.validate()?;
        let scheme_for = |k: usize| match scheme {
            Scheme::Random { seed } => Scheme::Random {
                seed: seed.wrapping_add(k as u64),
            },
            s => s,
        };
        let block_plans = (0..shape.layers)
            .map(|l| {
                Ok((
                    build_plan(shape.d_h, rho, scheme_for(2 * l))?,
                    build_plan(shape.d, rho, scheme_for(2 * l + 1))?,
                ))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            config,
            block_plans,
            activation_bits,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Precision {
    /// Full precision; the teacher, and the pass-through mode of gradient checks.
    Full,
    Quantized(StudentQuant),
}

impl Precision {
    fn activations(&self, x: &Matrix<f64>) -> Result<Matrix<f64>> {
        match self {
            Precision::Full => Ok(x.clone()),
            Precision::Quantized(q) => forward_activations(x, &q.config, q.activation_bits),
        }
    }
}

/// Weights as seen by one forward pass.
#[derive(Debug, Clone)]
struct EffectiveWeights {
    embedding: Matrix<f64>,
    prev_embedding: Matrix<f64>,
    w1: Vec<Matrix<f64>>,
    w2: Vec<Matrix<f64>>,
    head: Matrix<f64>,
}

/// Everything the reverse pass needs.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    weights: EffectiveWeights,
    tokens: Vec<usize>,
    seq_len: usize,
    /// `L + 1` states, `d x N`.
    hidden: Vec<Matrix<f64>>,
    block_in: Vec<Matrix<f64>>,
    pre: Vec<Matrix<f64>>,
    tanh: Vec<Matrix<f64>>,
    block_mid: Vec<Matrix<f64>>,
    head_in: Matrix<f64>,
    /// `vocab x N`.
    logits: Matrix<f64>,
}

impl ForwardPass {
    /// Hidden states as a token-major feature stack.
    pub fn features(&self, mask: &[bool]) -> Result<FeatureStack> {
        FeatureStack::new(
            self.hidden.iter().map(|h| h.transpose()).collect(),
            mask.to_vec(),
        )
    }

    /// `N x vocab`.
    pub fn logits(&self) -> Matrix<f64> {
        self.logits.transpose()
    }
}

fn normal_matrix(rng: &mut SeededRng, rows: usize, cols: usize, std: f64) -> Matrix<f64> {
    Matrix::from_fn(rows, cols, |_, _| std * rng.normal())
}

impl ToyModel {
    pub fn init(shape: ModelShape, seed: u64) -> Result<Self> {
        shape.validate()?;
        let mut rng = SeededRng::new(seed);
        let (v, d, dh) = (shape.vocab, shape.d, shape.d_h);
        let embedding = normal_matrix(&mut rng, v, d, 1.0);
        let prev_embedding = normal_matrix(&mut rng, v, d, 1.0);
        let blocks = (0..shape.layers)
            .map(|_| Block {
                w1: normal_matrix(&mut rng, dh, d, 1.0 / (d as f64).sqrt()),
                w2: normal_matrix(&mut rng, d, dh, 0.5 / (dh as f64).sqrt()),
                gain: 1.0,
            })
            .collect();
        let head = normal_matrix(&mut rng, v, d, 1.0 / (d as f64).sqrt());
        Ok(Self {
            shape,
            embedding,
            prev_embedding,
            blocks,
            head,
        })
    }

    /// All-zero parameters of the same shape (gradient accumulator).
    pub fn zeros_like(&self) -> Self {
        let z = |m: &Matrix<f64>| Matrix::zeros(m.rows(), m.cols());
        Self {
            shape: self.shape,
            embedding: z(&self.embedding),
            prev_embedding: z(&self.prev_embedding),
            blocks: self
                .blocks
                .iter()
                .map(|b| Block {
                    w1: z(&b.w1),
                    w2: z(&b.w2),
                    gain: 0.0,
                })
                .collect(),
            head: z(&self.head),
        }
    }

    /// Parameters in a fixed order; gains are excluded from weight decay.
    pub fn params_mut(&mut self) -> Vec<Param<'_>> {
        let mut out = vec![
            Param {
                data: self.embedding.data_mut(),
                decay: true,
            },
            Param {
                data: self.prev_embedding.data_mut(),
                decay: true,
            },
        ];
        for b in &mut self.blocks {
            out.push(Param {
                data: b.w1.data_mut(),
                decay: true,
            });
            out.push(Param {
                data: b.w2.data_mut(),
                decay: true,
            });
            out.push(Param {
                data: std::slice::from_mut(&mut b.gain),
                decay: false,
            });
        }
        out.push(Param {
            data: self.head.data_mut(),
            decay: true,
        });
        out
    }

    /// Same order as [`ToyModel::params_mut`].
    pub fn params(&self) -> Vec<&[f64]> {
        let mut out = vec![self.embedding.data(), self.prev_embedding.data()];
        for b in &self.blocks {
            out.push(b.w1.data());
            out.push(b.w2.data());
            out.push(std::slice::from_ref(&b.gain));
        }
        out.push(self.head.data());
        out
    }

    pub fn is_finite(&self) -> bool {
        self.params()
            .iter()
            .all(|p| p.iter().all(|v| v.is_finite()))
    }

    fn effective(&self, precision: &Precision) -> Result<EffectiveWeights> {
        match precision {
            Precision::Full => Ok(EffectiveWeights {
                embedding: self.embedding.clone(),
                prev_embedding: self.prev_embedding.clone(),
                w1: self.blocks.iter().map(|b| b.w1.clone()).collect(),
                w2: self.blocks.iter().map(|b| b.w2.clone()).collect(),
                head: self.head.clone(),
            }),
            Precision::Quantized(q) => {
                if q.block_plans.len() != self.blocks.len() {
                    return Err(Error::shape("one plan pair per block required"));
                }
                let int4 = |m: &Matrix<f64>| {
                    fake_quantize(m, &AllocationPlan::all_int4(m.rows()), &q.config)
                };
                let mut w1 = Vec::with_capacity(self.blocks.len());
                let mut w2 = Vec::with_capacity(self.blocks.len());
                for (b, (p1, p2)) in self.blocks.iter().zip(&q.block_plans) {
                    w1.push(fake_quantize(&b.w1, p1, &q.config)?);
                    w2.push(fake_quantize(&b.w2, p2, &q.config)?);
                }
                Ok(EffectiveWeights {
                    embedding: int4(&self.embedding)?,
                    prev_embedding: int4(&self.prev_embedding)?,
                    w1,
                    w2,
                    head: int4(&self.head)?,
                })
            }
        }
    }

    pub fn forward(&self, batch: &TokenBatch, precision: &Precision) -> Result<ForwardPass> {
        let v = self.shape.vocab;
        if let Some(x) = batch.tokens.iter().find(|&&x| x >= v) {
            return Err(Error::param(format!(
                "token id {x} outside vocabulary of {v}"
            )));
        }
        let weights = self.effective(precision)?;
        let (d, n) = (self.shape.d, batch.len());

        let mut h = Matrix::zeros(d, n);
        for t in 0..n {
            let e = weights.embedding.row(batch.tokens[t]);
            for (i, &v) in e.iter().enumerate() {
                h.set(i, t, v);
            }
            if !batch.starts_sequence(t) {
                let p = weights.prev_embedding.row(batch.tokens[t - 1]);
                for (i, &v) in p.iter().enumerate() {
                    h.set(i, t, h.get(i, t) + v);
                }
            }
        }

        let layers = self.blocks.len();
        let mut hidden = Vec::with_capacity(layers + 1);
        let (mut block_in, mut pre, mut tanh, mut block_mid) =
            (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        hidden.push(h);
        for (l, b) in self.blocks.iter().enumerate() {
            let x = precision.activations(&hidden[l])?;
            let a = weights.w1[l].matmul(&x)?;
            let z = a.map(|u| (b.gain * u).tanh());
            let zq = precision.activations(&z)?;
            let r = weights.w2[l].matmul(&zq)?;
            let mut next = hidden[l].clone();
            for (o, ri) in next.data_mut().iter_mut().zip(r.data()) {
                *o += ri;
            }
            block_in.push(x);
            pre.push(a);
            tanh.push(z);
            block_mid.push(zq);
            hidden.push(next);
        }
        let head_in = precision.activations(&hidden[layers])?;
        let logits = weights.head.matmul(&head_in)?;
        Ok(ForwardPass {
            weights,
            tokens: batch.tokens.clone(),
            seq_len: batch.seq_len,
            hidden,
            block_in,
            pre,
            tanh,
            block_mid,
            head_in,
            logits,
        })
    }

    /// Reverse pass with straight-through quantizers.
    ///
    /// `d_logits` is `N x vocab`; `d_features`, when given, holds one
    /// `N x d` gradient per hidden state (index 0 is the embedding output).
    pub fn backward(
        &self,
        fwd: &ForwardPass,
        d_logits: &Matrix<f64>,
        d_features: Option<&[Matrix<f64>]>,
    ) -> Result<ToyModel> {
        let (v, d) = (self.shape.vocab, self.shape.d);
        let n = fwd.tokens.len();
        if d_logits.shape() != (n, v) {
            return Err(Error::shape(format!(
                "logit gradient {:?}, expected {:?}",
                d_logits.shape(),
                (n, v)
            )));
        }
        if let Some(f) = d_features {
            if f.len() != fwd.hidden.len() || f.iter().any(|m| m.shape() != (n, d)) {
                return Err(Error::shape(
                    "feature gradients do not match the hidden states",
                ));
            }
        }
        let feature = |l: usize| d_features.map(|f| f[l].transpose());

        let mut g = self.zeros_like();
        let dz = d_logits.transpose();
        g.head = dz.matmul(&fwd.head_in.transpose())?;
        let mut dh = fwd.weights.head.transpose().matmul(&dz)?;

        for l in (0..self.blocks.len()).rev() {
            if let Some(f) = feature(l + 1) {
                add_assign(&mut dh, &f);
            }
            let gain = self.blocks[l].gain;
            g.blocks[l].w2 = dh.matmul(&fwd.block_mid[l].transpose())?;
            let dt = fwd.weights.w2[l].transpose().matmul(&dh)?;
            let mut da = Matrix::zeros(dt.rows(), dt.cols());
            let mut dgain = 0.0;
            for (((o, &gt), &z), &a) in da
                .data_mut()
                .iter_mut()
                .zip(dt.data())
                .zip(fwd.tanh[l].data())
                .zip(fwd.pre[l].data())
            {
                let du = gt * (1.0 - z * z);
                dgain += du * a;
                *o = gain * du;
            }
            g.blocks[l].gain = dgain;
            g.blocks[l].w1 = da.matmul(&fwd.block_in[l].transpose())?;
            let back = fwd.weights.w1[l].transpose().matmul(&da)?;
            add_assign(&mut dh, &back);
        }
        if let Some(f) = feature(0) {
            add_assign(&mut dh, &f);
        }

        for t in 0..n {
            let x = fwd.tokens[t];
            for i in 0..d {
                let gi = dh.get(i, t);
                g.embedding.set(x, i, g.embedding.get(x, i) + gi);
                if t % fwd.seq_len != 0 {
                    let p = fwd.tokens[t - 1];
                    g.prev_embedding.set(p, i, g.prev_embedding.get(p, i) + gi);
                }
            }
        }
        Ok(g)
    }
}

fn add_assign(a: &mut Matrix<f64>, b: &Matrix<f64>) {
    for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
        *x += y;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::data::copy_task_batch;

    fn small() -> ModelShape {
        ModelShape {
            vocab: 7,
            d: 4,
            d_h: 6,
            layers: 2,
            seq_len: 3,
        }
    }

    #[test]
    fn forward_shapes_and_determinism() {
        let m = ToyModel::init(small(), 3).unwrap();
        let b = copy_task_batch(&mut SeededRng::new(1), 7, 3, 2).unwrap();
        let f = m.forward(&b, &Precision::Full).unwrap();
        assert_eq!(f.logits().shape(), (6, 7));
        let s = f.features(&b.mask).unwrap();
        assert_eq!(s.num_layers(), 2);
        assert_eq!(s.layer(0).shape(), (6, 4));
        let f2 = m.forward(&b, &Precision::Full).unwrap();
        assert_eq!(f.logits(), f2.logits());
    }

    #[test]
    fn zero_weights_give_uniform_logits() {
        let mut m = ToyModel::init(small(), 3).unwrap();
        for p in m.params_mut() {
            p.data.iter_mut().for_each(|v| *v = 0.0);
        }
        let b = copy_task_batch(&mut SeededRng::new(1), 7, 3, 1).unwrap();
        let q = StudentQuant::new(
            &m.shape,
            0.5,
            Scheme::SuperGroup,
            GroupQuantConfig::with_group_size(2).unwrap(),
            ActivationBits::Eight,
        )
        .unwrap();
        let f = m.forward(&b, &Precision::Quantized(q)).unwrap();
        assert!(f.logits().data().iter().all(|&z| z == 0.0));
    }

    #[test]
    fn rejects_bad_token() {
        let m = ToyModel::init(small(), 3).unwrap();
        let b = TokenBatch::new(vec![0, 1, 9], vec![0; 3], vec![true; 3], 3).unwrap();
        assert!(m.forward(&b, &Precision::Full).is_err());
    }

    #[test]
    fn param_views_agree() {
        let mut m = ToyModel::init(small(), 3).unwrap();
        let lens: Vec<usize> = m.params().iter().map(|p| p.len()).collect();
        let lens_mut: Vec<usize> = m.params_mut().iter().map(|p| p.data.len()).collect();
        assert_eq!(lens, lens_mut);
        assert_eq!(lens.len(), 2 + 3 * 2 + 1);
    }
}
