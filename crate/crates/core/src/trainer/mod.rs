//! Desk-scale quantization-aware distillation.
//!
//! A frozen full-precision [`ToyModel`] teacher supervises a fake-quantized
//! student through the composite objective
//!
//! ```text
//! alpha_task * CE(student, labels)
//!   + alpha_feature * feature MSE on the k teacher-selected layers
//!   + alpha_logit * entropy-aware KL
//! ```
//!
//! Layer selection and the KL mixing coefficient are recomputed from the
//! teacher on every batch.

pub mod data;
pub mod model;
pub mod optim;

use std::io::Write;

use serde::{Deserialize, Serialize};

pub use data::{copy_task_batch, TokenBatch};
pub use model::{Block, ForwardPass, ModelShape, Precision, StudentQuant, ToyModel};
pub use optim::AdamW;

use crate::eakld::{
    argmax, mixed_kld, mixed_kld_grad, mixing_lambda, softmax, token_weights, KldConfig, LogitBatch,
};
use crate::error::{Error, Result};
use crate::lafd::{
    adaptive_feature_grad, adaptive_feature_loss, layer_cosine_scores, select_layers,
};
use crate::layout::Scheme;
use crate::matrix::Matrix;
use crate::mpgemm::ActivationBits;
use crate::quantizer::GroupQuantConfig;
use crate::rng::SeededRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerConfig {
    pub alpha_task: f64,
    pub alpha_feature: f64,
    pub alpha_logit: f64,
    /// Layers receiving feature supervision.
    pub k: usize,
    /// Entropy cap of the KL mixing coefficient.
    #[serde(rename = "K")]
    pub kld_k: usize,
    pub rho: f64,
    pub scheme: String,
    pub scheme_seed: Option<u64>,
    pub group_size: usize,
    pub beta: f64,
    pub epsilon: f64,
    pub activation_bits: u32,
    pub lr: f64,
    pub weight_decay: f64,
    pub betas: [f64; 2],
    pub adam_eps: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub model: ModelShape,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            alpha_task: 0.10,
            alpha_feature: 0.10,
            alpha_logit: 2.0,
            k: 3,
            kld_k: 16,
            rho: 0.125,
            scheme: "super_group".into(),
            scheme_seed: None,
            group_size: 32,
            beta: 2.0,
            epsilon: 1e-5,
            activation_bits: 16,
            lr: 2e-3,
            weight_decay: 0.0,
            betas: [0.9, 0.999],
            adam_eps: 1e-8,
            steps: 500,
            batch_size: 8,
            seed: 42,
            model: ModelShape::default(),
        }
    }
}

impl TrainerConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text)
            .map_err(|e| Error::format(format!("trainer config: {e}")))?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        for (name, a) in [
            ("alpha_task", self.alpha_task),
            ("alpha_feature", self.alpha_feature),
            ("alpha_logit", self.alpha_logit),
        ] {
            if !(a.is_finite() && a >= 0.0) {
                return Err(Error::param(format!(
                    "{name} must be finite and nonnegative"
                )));
            }
        }
        if self.k == 0 || self.k > self.model.layers {
            return Err(Error::param(format!(
                "k = {} outside 1..={}",
                self.k, self.model.layers
            )));
        }
        KldConfig::new(self.kld_k)?;
        self.quant_config()?;
        self.scheme()?;
        ActivationBits::from_bits(self.activation_bits)?;
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::param(format!("rho = {} outside [0, 1]", self.rho)));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0)
            || self.weight_decay.is_nan()
            || self.weight_decay < 0.0
        {
            return Err(Error::param("lr and weight_decay must be nonnegative"));
        }
        if self.batch_size == 0 {
            return Err(Error::param("batch_size must be at least 1"));
        }
        Ok(())
    }

    pub fn quant_config(&self) -> Result<GroupQuantConfig> {
        GroupQuantConfig::new(self.group_size, self.beta, self.epsilon)
    }

    pub fn scheme(&self) -> Result<Scheme> {
        Scheme::parse(&self.scheme, self.scheme_seed.or(Some(self.seed)))
    }

    pub fn kld(&self) -> KldConfig {
        KldConfig { k: self.kld_k }
    }

    pub fn student_precision(&self) -> Result<Precision> {
        Ok(Precision::Quantized(StudentQuant::new(
            &self.model,
            self.rho,
            self.scheme()?,
            self.quant_config()?,
            ActivationBits::from_bits(self.activation_bits)?,
        )?))
    }

    pub fn optimizer(&self) -> AdamW {
        AdamW::new(
            self.lr,
            (self.betas[0], self.betas[1]),
            self.adam_eps,
            self.weight_decay,
        )
    }
}

pub fn total_loss(task: f64, feature: f64, logit: f64, cfg: &TrainerConfig) -> f64 {
    cfg.alpha_task * task + cfg.alpha_feature * feature + cfg.alpha_logit * logit
}

/// Cross-entropy over valid positions and its gradient wrt the logits.
pub fn task_loss(logits: &Matrix<f64>, batch: &TokenBatch) -> Result<(f64, Matrix<f64>)> {
    if logits.rows() != batch.len() {
        return Err(Error::shape("one logit row per position required"));
    }
    let w = token_weights(&batch.mask, batch.seq_len)?;
    let mut loss = 0.0;
    let mut grad = Matrix::zeros(logits.rows(), logits.cols());
    for (t, &wt) in w.iter().enumerate() {
        if wt == 0.0 {
            continue;
        }
        let p = softmax(logits.row(t));
        let y = batch.labels[t];
        loss += wt * -(p[y].max(crate::eakld::PROB_FLOOR)).ln();
        for (o, &pi) in grad.row_mut(t).iter_mut().zip(&p) {
            *o = wt * pi;
        }
        grad.set(t, y, grad.get(t, y) - wt);
    }
    Ok((loss, grad))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepMetrics {
    pub step: usize,
    pub task: f64,
    pub feature: f64,
    pub logit: f64,
    pub total: f64,
    pub lambda: f64,
    pub selected_layers: Vec<usize>,
}

/// Loss components and the gradient of the total wrt student parameters.
pub fn distillation_objective(
    student: &ToyModel,
    teacher: &ToyModel,
    batch: &TokenBatch,
    cfg: &TrainerConfig,
    precision: &Precision,
) -> Result<(StepMetrics, ToyModel)> {
    let tf = teacher.forward(batch, &Precision::Full)?;
    let sf = student.forward(batch, precision)?;

    let t_stack = tf.features(&batch.mask)?;
    let s_stack = sf.features(&batch.mask)?;
    let selected = select_layers(&layer_cosine_scores(&t_stack), cfg.k)?;
    let feature = adaptive_feature_loss(&t_stack, &s_stack, &selected)?;
    let mut d_feat = adaptive_feature_grad(&t_stack, &s_stack, &selected)?;

    let logits = LogitBatch::new(
        tf.logits(),
        sf.logits(),
        Some(batch.labels.clone()),
        batch.mask.clone(),
        batch.seq_len,
    )?;
    let lambda = mixing_lambda(&logits, &cfg.kld())?;
    let logit = mixed_kld(&logits, lambda)?;
    let mut d_logits = mixed_kld_grad(&logits, lambda)?;

    let (task, d_task) = task_loss(logits.student_logits(), batch)?;

    for (g, &t) in d_logits.data_mut().iter_mut().zip(d_task.data()) {
        *g = cfg.alpha_logit * *g + cfg.alpha_task * t;
    }
    for m in &mut d_feat {
        m.data_mut()
            .iter_mut()
            .for_each(|v| *v *= cfg.alpha_feature);
    }
    let grads = student.backward(&sf, &d_logits, Some(&d_feat))?;
    let metrics = StepMetrics {
        step: 0,
        task,
        feature,
        logit,
        total: total_loss(task, feature, logit, cfg),
        lambda,
        selected_layers: selected,
    };
    Ok((metrics, grads))
}

/// One optimizer step. A non-finite loss or gradient aborts the step and
/// leaves the student untouched.
pub fn train_step(
    student: &mut ToyModel,
    optimizer: &mut AdamW,
    teacher: &ToyModel,
    batch: &TokenBatch,
    cfg: &TrainerConfig,
    precision: &Precision,
) -> Result<StepMetrics> {
    let (metrics, grads) = distillation_objective(student, teacher, batch, cfg, precision)?;
    if !metrics.total.is_finite() || !grads.is_finite() {
        return Err(Error::non_finite(format!(
            "loss {} at this step",
            metrics.total
        )));
    }
    optimizer.step(student.params_mut(), &grads.params())?;
    Ok(metrics)
}

#[derive(Debug, Clone)]
pub struct QadRun {
    pub student: ToyModel,
    pub history: Vec<StepMetrics>,
}

/// Runs `cfg.steps` distillation steps on fresh copy-task batches drawn from
/// `SeededRng::new(cfg.seed)`.
pub fn run_qad(teacher: &ToyModel, student_init: &ToyModel, cfg: &TrainerConfig) -> Result<QadRun> {
    cfg.validate()?;
    if teacher.shape != cfg.model || student_init.shape != cfg.model {
        return Err(Error::shape("model shapes differ from the trainer config"));
    }
    let precision = cfg.student_precision()?;
    let mut student = student_init.clone();
    let mut opt = cfg.optimizer();
    let mut rng = SeededRng::new(cfg.seed);
    let mut history = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let batch = copy_task_batch(&mut rng, cfg.model.vocab, cfg.model.seq_len, cfg.batch_size)?;
        let mut m = train_step(&mut student, &mut opt, teacher, &batch, cfg, &precision)?;
        m.step = step;
        history.push(m);
    }
    Ok(QadRun { student, history })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Evaluation {
    pub task_loss: f64,
    pub accuracy: f64,
}

pub fn evaluate(model: &ToyModel, batch: &TokenBatch, precision: &Precision) -> Result<Evaluation> {
    let logits = model.forward(batch, precision)?.logits();
    let (task_loss, _) = task_loss(&logits, batch)?;
    let (mut hit, mut n) = (0usize, 0usize);
    for t in (0..batch.len()).filter(|&t| batch.mask[t]) {
        n += 1;
        if argmax(logits.row(t)).0 == batch.labels[t] {
            hit += 1;
        }
    }
    Ok(Evaluation {
        task_loss,
        accuracy: hit as f64 / n.max(1) as f64,
    })
}

/// Trains a full-precision model on the copy task with cross-entropy only.
pub fn pretrain_teacher(
    shape: ModelShape,
    steps: usize,
    lr: f64,
    batch_size: usize,
    seed: u64,
) -> Result<ToyModel> {
    let mut model = ToyModel::init(shape, seed)?;
    let mut opt = AdamW::new(lr, (0.9, 0.999), 1e-8, 0.0);
    let mut rng = SeededRng::new(seed ^ 0x0074_6561_6368_6572);
    for _ in 0..steps {
        let batch = copy_task_batch(&mut rng, shape.vocab, shape.seq_len, batch_size)?;
        let fwd = model.forward(&batch, &Precision::Full)?;
        let (loss, d_logits) = task_loss(&fwd.logits(), &batch)?;
        if !loss.is_finite() {
            return Err(Error::non_finite("teacher loss diverged"));
        }
        let g = model.backward(&fwd, &d_logits, None)?;
        opt.step(model.params_mut(), &g.params())?;
    }
    Ok(model)
}

pub fn write_history_csv<W: Write>(mut out: W, history: &[StepMetrics]) -> Result<()> {
    writeln!(out, "step,task,feature,logit,total,lambda,selected_layers")?;
    for m in history {
        let sel: Vec<String> = m.selected_layers.iter().map(|l| l.to_string()).collect();
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            m.step,
            m.task,
            m.feature,
            m.logit,
            m.total,
            m.lambda,
            sel.join(";")
        )?;
    }
    Ok(())
}
