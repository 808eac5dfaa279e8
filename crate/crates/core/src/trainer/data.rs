//! Synthetic copy task: at every position after the first, predict the
//! previous token.

use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// `samples * seq_len` positions, flattened sample-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenBatch {
    pub tokens: Vec<usize>,
    pub labels: Vec<usize>,
    pub mask: Vec<bool>,
    pub seq_len: usize,
}

impl TokenBatch {
    pub fn new(
        tokens: Vec<usize>,
        labels: Vec<usize>,
        mask: Vec<bool>,
        seq_len: usize,
    ) -> Result<Self> {
        let n = tokens.len();
        if seq_len == 0 || n == 0 || !n.is_multiple_of(seq_len) {
            return Err(Error::shape(format!(
                "{n} tokens do not split into sequences of {seq_len}"
            )));
        }
        if labels.len() != n || mask.len() != n {
            return Err(Error::shape("tokens, labels and mask differ in length"));
        }
        Ok(Self {
            tokens,
            labels,
            mask,
            seq_len,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn samples(&self) -> usize {
        self.tokens.len() / self.seq_len
    }

    /// True at the first position of each sequence.
    pub fn starts_sequence(&self, t: usize) -> bool {
        t.is_multiple_of(self.seq_len)
    }
}

pub fn copy_task_batch(
    rng: &mut SeededRng,
    vocab: usize,
    seq_len: usize,
    samples: usize,
) -> Result<TokenBatch> {
    if vocab == 0 || seq_len < 2 || samples == 0 {
        return Err(Error::param(
            "copy task needs vocab >= 1, seq_len >= 2, samples >= 1",
        ));
    }
    let n = seq_len * samples;
    let tokens: Vec<usize> = (0..n).map(|_| rng.below(vocab)).collect();
    let labels = (0..n)
        .map(|t| if t % seq_len == 0 { 0 } else { tokens[t - 1] })
        .collect();
    let mask = (0..n).map(|t| t % seq_len != 0).collect();
    TokenBatch::new(tokens, labels, mask, seq_len)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_are_previous_tokens() {
        let b = copy_task_batch(&mut SeededRng::new(1), 10, 4, 3).unwrap();
        assert_eq!(b.len(), 12);
        for t in 0..12 {
            assert_eq!(b.mask[t], t % 4 != 0);
            if b.mask[t] {
                assert_eq!(b.labels[t], b.tokens[t - 1]);
            }
        }
    }
}
