//! AdamW with decoupled weight decay.

use crate::error::{Error, Result};

/// One trainable tensor, flattened.
pub struct Param<'a> {
    pub data: &'a mut [f64],
    pub decay: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub weight_decay: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(lr: f64, betas: (f64, f64), eps: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            betas,
            eps,
            weight_decay,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: Vec<Param<'_>>, grads: &[&[f64]]) -> Result<()> {
        if params.len() != grads.len()
            || params
                .iter()
                .zip(grads)
                .any(|(p, g)| p.data.len() != g.len())
        {
            return Err(Error::shape("parameter and gradient layouts differ"));
        }
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let (b1, b2) = self.betas;
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        for (k, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let wd = if p.decay { self.weight_decay } else { 0.0 };
            for (((w, &gi), m), v) in p
                .data
                .iter_mut()
                .zip(g.iter())
                .zip(self.m[k].iter_mut())
                .zip(self.v[k].iter_mut())
            {
                *m = b1 * *m + (1.0 - b1) * gi;
                *v = b2 * *v + (1.0 - b2) * gi * gi;
                let update = (*m / c1) / ((*v / c2).sqrt() + self.eps) + wd * *w;
                *w -= self.lr * update;
            }
        }
        Ok(())
    }
}
