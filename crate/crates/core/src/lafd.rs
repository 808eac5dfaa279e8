//! Layer-adaptive feature distillation.
//!
//! Layer scores are the mean cosine similarity between the outputs of
//! adjacent teacher layers over valid token positions. The `k` layers with
//! the lowest scores transform their input the most and receive feature
//! supervision through a masked mean-squared error.
//!
//! Layer indices in this module are 1-based: layer `l` is the output of block
//! `l`, and index 0 of a [`FeatureStack`] is the embedding output.

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// `L + 1` feature matrices of shape `T x d` plus a token validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStack {
    layers: Vec<Matrix<f64>>,
    mask: Vec<bool>,
}

impl FeatureStack {
    pub fn new(layers: Vec<Matrix<f64>>, mask: Vec<bool>) -> Result<Self> {
        if layers.len() < 2 {
            return Err(Error::shape(
                "a feature stack needs the embedding and at least one layer",
            ));
        }
        let shape = layers[0].shape();
        if let Some(m) = layers.iter().find(|m| m.shape() != shape) {
            return Err(Error::shape(format!(
                "layer shape {:?} differs from {shape:?}",
                m.shape()
            )));
        }
        if mask.len() != shape.0 {
            return Err(Error::shape(format!(
                "mask has {} positions, features {}",
                mask.len(),
                shape.0
            )));
        }
        if !mask.iter().any(|&m| m) {
            return Err(Error::param("mask has no valid positions"));
        }
        Ok(Self { layers, mask })
    }

    /// Number of scored layers `L` (excludes the embedding output).
    pub fn num_layers(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn positions(&self) -> usize {
        self.layers[0].rows()
    }

    pub fn dim(&self) -> usize {
        self.layers[0].cols()
    }

    pub fn layer(&self, l: usize) -> &Matrix<f64> {
        &self.layers[l]
    }

    pub fn layers(&self) -> &[Matrix<f64>] {
        &self.layers
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn valid_positions(&self) -> impl Iterator<Item = usize> + '_ {
        self.mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(t, _)| t)
    }

    fn valid_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Cosine similarity; 0 when either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
}

/// `c_1 .. c_L`, returned at vector indices `0 .. L-1`.
pub fn layer_cosine_scores(teacher: &FeatureStack) -> Vec<f64> {
    let n = teacher.valid_count() as f64;
    (1..=teacher.num_layers())
        .map(|l| {
            let (cur, prev) = (teacher.layer(l), teacher.layer(l - 1));
            teacher
                .valid_positions()
                .map(|t| cosine(cur.row(t), prev.row(t)))
                .sum::<f64>()
                / n
        })
        .collect()
}

/// 1-based indices of the `k` lowest scores, ascending. Ties go to the
/// smaller index, so exactly `k` layers are returned.
pub fn select_layers(scores: &[f64], k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > scores.len() {
        return Err(Error::param(format!(
            "k = {k} outside 1..={}",
            scores.len()
        )));
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::non_finite(format!("layer score {s}")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let mut picked: Vec<usize> = order[..k].iter().map(|i| i + 1).collect();
    picked.sort_unstable();
    Ok(picked)
}

pub fn adaptive_feature_loss(
    teacher: &FeatureStack,
    student: &FeatureStack,
    selected: &[usize],
) -> Result<f64> {
    check_pair(teacher, student)?;
    check_selection(teacher, selected)?;
    let norm = (teacher.valid_count() * teacher.dim()) as f64;
    let total: f64 = selected
        .iter()
        .map(|&l| {
            let (a, b) = (teacher.layer(l), student.layer(l));
            teacher
                .valid_positions()
                .map(|t| {
                    a.row(t)
                        .iter()
                        .zip(b.row(t))
                        .map(|(x, y)| (x - y).powi(2))
                        .sum::<f64>()
                })
                .sum::<f64>()
                / norm
        })
        .sum();
    Ok(total / selected.len() as f64)
}

/// Gradient of [`adaptive_feature_loss`] with respect to each student layer.
/// Unselected layers and masked positions get zero.
pub fn adaptive_feature_grad(
    teacher: &FeatureStack,
    student: &FeatureStack,
    selected: &[usize],
) -> Result<Vec<Matrix<f64>>> {
    check_pair(teacher, student)?;
    check_selection(teacher, selected)?;
    let (t_len, d) = (teacher.positions(), teacher.dim());
    let c = 2.0 / (selected.len() * teacher.valid_count() * d) as f64;
    let mut grads = vec![Matrix::<f64>::zeros(t_len, d); teacher.layers.len()];
    for &l in selected {
        let (a, b) = (teacher.layer(l), student.layer(l));
        for t in teacher.valid_positions() {
            let g = grads[l].row_mut(t);
            for ((g, x), y) in g.iter_mut().zip(a.row(t)).zip(b.row(t)) {
                *g = c * (y - x);
            }
        }
    }
    Ok(grads)
}

fn check_pair(teacher: &FeatureStack, student: &FeatureStack) -> Result<()> {
    if teacher.layers.len() != student.layers.len()
        || teacher.layers[0].shape() != student.layers[0].shape()
    {
        return Err(Error::shape("teacher and student stacks differ in shape"));
    }
    if teacher.mask != student.mask {
        return Err(Error::shape("teacher and student masks differ"));
    }
    Ok(())
}

fn check_selection(stack: &FeatureStack, selected: &[usize]) -> Result<()> {
    if selected.is_empty() {
        return Err(Error::param("empty layer selection"));
    }
    if let Some(l) = selected.iter().find(|&&l| l == 0 || l > stack.num_layers()) {
        return Err(Error::param(format!(
            "layer {l} outside 1..={}",
            stack.num_layers()
        )));
    }
    Ok(())
}

/// How often each layer (1-based, at vector index `l - 1`) lands in the
/// selected set across `stacks`.
pub fn layer_frequency_analysis(stacks: &[FeatureStack], k: usize) -> Result<Vec<usize>> {
    let first = stacks
        .first()
        .ok_or_else(|| Error::param("no feature stacks"))?;
    let l_count = first.num_layers();
    let mut counts = vec![0usize; l_count];
    for s in stacks {
        if s.num_layers() != l_count {
            return Err(Error::shape(format!(
                "stack has {} layers, expected {l_count}",
                s.num_layers()
            )));
        }
        for l in select_layers(&layer_cosine_scores(s), k)? {
            counts[l - 1] += 1;
        }
    }
    Ok(counts)
}
