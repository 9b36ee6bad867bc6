//! Analytic reference model.
//!
//! The model has two trainable surfaces, a projection `P` (d_h × d_v) that
//! maps instance features into the hidden space and an output head `O`
//! (V × d_h), plus a frozen token embedding table `E` (V × d_h):
//!
//! ```text
//! h        = tanh(P·x + mean(E[instruction_tokens]))
//! logits_t = O·h                 (shared by every target position)
//! loss     = mean_t −ln softmax(logits_t)[y_t]
//! ```
//!
//! Per-sample gradients are closed-form, so no autodiff is involved.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pool::{content_id, Instance};
use crate::rng::{stream_rng, streams};

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    /// `self · v`
    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.cols);
        (0..self.rows)
            .map(|r| self.row(r).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `selfᵀ · v`
    pub fn matvec_t(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (r, &vr) in v.iter().enumerate() {
            for (o, a) in out.iter_mut().zip(self.row(r)) {
                *o += a * vr;
            }
        }
        out
    }

    fn gaussian(rows: usize, cols: usize, scale: f64, rng: &mut impl Rng) -> Self {
        let data = (0..rows * cols)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Self { rows, cols, data }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceModel {
    d_v: usize,
    d_h: usize,
    vocab: usize,
    seed: u64,
    projection: Matrix,
    output: Matrix,
    embedding: Matrix,
}

/// Forward pass of one instance.
#[derive(Clone, Debug)]
pub struct LossBreakdown {
    pub hidden: Vec<f64>,
    /// Softmax output per target position.
    pub probabilities: Vec<Vec<f64>>,
    /// `p_t − onehot(y_t)` per target position.
    pub errors: Vec<Vec<f64>>,
    pub loss: f64,
}

impl LossBreakdown {
    /// Mean L2 norm of the per-position error vectors (EL2N score).
    pub fn mean_error_norm(&self) -> f64 {
        let total: f64 = self.errors.iter().map(|e| crate::numeric::l2_norm(e)).sum();
        total / self.errors.len() as f64
    }
}

/// Per-sample gradient of the mean token loss with respect to `P` and `O`.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientRecord {
    pub instance_id: String,
    pub task_id: String,
    /// Length `d_h·d_v + V·d_h`: `grad_P` (row-major) followed by `grad_O`.
    g: Vec<f64>,
    split: usize,
}

impl GradientRecord {
    pub fn new(
        instance_id: impl Into<String>,
        task_id: impl Into<String>,
        grad_projection: Vec<f64>,
        grad_output: Vec<f64>,
    ) -> Self {
        let split = grad_projection.len();
        let mut g = grad_projection;
        g.extend(grad_output);
        Self {
            instance_id: instance_id.into(),
            task_id: task_id.into(),
            g,
            split,
        }
    }

    pub fn grad_projection(&self) -> &[f64] {
        &self.g[..self.split]
    }

    pub fn grad_output(&self) -> &[f64] {
        &self.g[self.split..]
    }

    /// Concatenated gradient vector.
    pub fn g(&self) -> &[f64] {
        &self.g
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            g: self.g.iter().map(|x| c * x).collect(),
            ..self.clone()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
}

impl Default for TrainConfig {
    /// Toy-model default: SGD at 5e-2, batch 16, two epochs.
    fn default() -> Self {
        Self {
            learning_rate: 5e-2,
            batch_size: 16,
            epochs: 2,
            seed: 0,
            optimizer: Optimizer::Sgd,
        }
    }
}

impl TrainConfig {
    /// Fine-tuning settings used for large multimodal models (lr 2e-5,
    /// batch 16, two epochs). Far too small a step for the toy model.
    pub fn mllm_preset() -> Self {
        Self {
            learning_rate: 2e-5,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mean_loss: f64,
    pub token_accuracy: f64,
    pub instances: usize,
    pub positions: usize,
}

const CHECKPOINT_FORMAT: &str = "tive-reference-model/1";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Checkpoint {
    format: String,
    d_v: usize,
    d_h: usize,
    vocab: usize,
    seed: u64,
    projection: Vec<f64>,
    output: Vec<f64>,
    embedding: Vec<f64>,
}

impl ReferenceModel {
    /// Gaussian initialisation scaled by `1/√fan_in` (`d_v` for `P`, `d_h`
    /// for `O` and `E`).
    pub fn init(d_v: usize, d_h: usize, vocab: usize, seed: u64) -> Result<Self> {
        if d_v == 0 || d_h == 0 || vocab == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        let mut rng = stream_rng(seed, streams::INIT);
        let projection = Matrix::gaussian(d_h, d_v, 1.0 / (d_v as f64).sqrt(), &mut rng);
        let output = Matrix::gaussian(vocab, d_h, 1.0 / (d_h as f64).sqrt(), &mut rng);
        let embedding = Matrix::gaussian(vocab, d_h, 1.0 / (d_h as f64).sqrt(), &mut rng);
        Ok(Self {
            d_v,
            d_h,
            vocab,
            seed,
            projection,
            output,
            embedding,
        })
    }

    pub fn from_parts(projection: Matrix, output: Matrix, embedding: Matrix, seed: u64) -> Result<Self> {
        let (d_h, d_v) = (projection.rows, projection.cols);
        let vocab = output.rows;
        if output.cols != d_h || embedding.rows != vocab || embedding.cols != d_h {
            return Err(Error::Dimension(format!(
                "P is {d_h}x{d_v}, O is {}x{}, E is {}x{}",
                output.rows, output.cols, embedding.rows, embedding.cols
            )));
        }
        let all = projection.data.iter().chain(&output.data).chain(&embedding.data);
        if all.into_iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("model parameters".into()));
        }
        Ok(Self {
            d_v,
            d_h,
            vocab,
            seed,
            projection,
            output,
            embedding,
        })
    }

    pub fn d_v(&self) -> usize {
        self.d_v
    }

    pub fn d_h(&self) -> usize {
        self.d_h
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn projection(&self) -> &Matrix {
        &self.projection
    }

    pub fn output(&self) -> &Matrix {
        &self.output
    }

    pub fn embedding(&self) -> &Matrix {
        &self.embedding
    }

    pub fn projection_mut(&mut self) -> &mut Matrix {
        &mut self.projection
    }

    pub fn output_mut(&mut self) -> &mut Matrix {
        &mut self.output
    }

    /// Length of a concatenated gradient vector.
    pub fn num_trainable(&self) -> usize {
        self.d_h * self.d_v + self.vocab * self.d_h
    }

    fn check(&self, inst: &Instance) -> Result<()> {
        if inst.features.len() != self.d_v {
            return Err(Error::Dimension(format!(
                "instance `{}` has {} features, model expects {}",
                inst.instance_id,
                inst.features.len(),
                self.d_v
            )));
        }
        if inst.target_tokens.is_empty() {
            return Err(Error::Empty(format!("targets of `{}`", inst.instance_id)));
        }
        if let Some(&token) = inst
            .instruction_tokens
            .iter()
            .chain(&inst.target_tokens)
            .find(|&&t| t as usize >= self.vocab)
        {
            return Err(Error::TokenOutOfRange {
                token,
                vocab: self.vocab,
            });
        }
        Ok(())
    }

    /// Hidden state and shared logits.
    fn hidden_and_logits(&self, inst: &Instance) -> (Vec<f64>, Vec<f64>) {
        let mut pre = self.projection.matvec(&inst.features);
        if !inst.instruction_tokens.is_empty() {
            let n = inst.instruction_tokens.len() as f64;
            for &t in &inst.instruction_tokens {
                for (p, e) in pre.iter_mut().zip(self.embedding.row(t as usize)) {
                    *p += e / n;
                }
            }
        }
        let hidden: Vec<f64> = pre.iter().map(|z| z.tanh()).collect();
        let logits = self.output.matvec(&hidden);
        (hidden, logits)
    }

    pub fn forward_loss(&self, inst: &Instance) -> Result<LossBreakdown> {
        self.check(inst)?;
        let (hidden, logits) = self.hidden_and_logits(inst);
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        let log_z = max + z.ln();
        let probs: Vec<f64> = exps.iter().map(|e| e / z).collect();

        let positions = inst.target_tokens.len();
        let mut errors = Vec::with_capacity(positions);
        let mut loss = 0.0;
        for &y in &inst.target_tokens {
            let mut e = probs.clone();
            e[y as usize] -= 1.0;
            errors.push(e);
            loss += log_z - logits[y as usize];
        }
        Ok(LossBreakdown {
            hidden,
            probabilities: vec![probs; positions],
            errors,
            loss: loss / positions as f64,
        })
    }

    pub fn per_sample_gradient(&self, inst: &Instance) -> Result<GradientRecord> {
        let breakdown = self.forward_loss(inst)?;
        Ok(self.gradient_from_breakdown(inst, &breakdown))
    }

    /// Backward pass from an already computed (or injected) breakdown:
    /// `dL/dO = ē·hᵀ`, `dL/dP = ((Oᵀ·ē) ⊙ (1 − h²))·xᵀ` with `ē` the mean
    /// error vector over target positions.
    pub fn gradient_from_breakdown(&self, inst: &Instance, breakdown: &LossBreakdown) -> GradientRecord {
        let positions = breakdown.errors.len() as f64;
        let mut mean_error = vec![0.0; self.vocab];
        for e in &breakdown.errors {
            for (m, v) in mean_error.iter_mut().zip(e) {
                *m += v;
            }
        }
        mean_error.iter_mut().for_each(|m| *m /= positions);

        let h = &breakdown.hidden;
        let mut grad_output = Vec::with_capacity(self.vocab * self.d_h);
        for &e in &mean_error {
            grad_output.extend(h.iter().map(|hj| e * hj));
        }

        let back = self.output.matvec_t(&mean_error);
        let mut grad_projection = Vec::with_capacity(self.d_h * self.d_v);
        for (b, hj) in back.iter().zip(h) {
            let delta = b * (1.0 - hj * hj);
            grad_projection.extend(inst.features.iter().map(|x| delta * x));
        }
        GradientRecord::new(
            inst.instance_id.clone(),
            inst.task_id.clone(),
            grad_projection,
            grad_output,
        )
    }

    /// Mean cross-entropy loss of one instance.
    pub fn loss(&self, inst: &Instance) -> Result<f64> {
        Ok(self.forward_loss(inst)?.loss)
    }

    pub fn perplexity(&self, inst: &Instance) -> Result<f64> {
        Ok(self.loss(inst)?.exp())
    }

    /// Most likely token (shared across positions).
    pub fn predict(&self, inst: &Instance) -> Result<u32> {
        self.check(inst)?;
        let (_, logits) = self.hidden_and_logits(inst);
        Ok(argmax(&logits) as u32)
    }

    pub fn evaluate(&self, instances: &[&Instance]) -> Result<EvalReport> {
        if instances.is_empty() {
            return Err(Error::Empty("evaluation set".into()));
        }
        let per: Vec<(f64, usize, usize)> = instances
            .par_iter()
            .map(|inst| {
                let b = self.forward_loss(inst)?;
                let best = argmax(&b.probabilities[0]) as u32;
                let hits = inst.target_tokens.iter().filter(|&&y| y == best).count();
                Ok((b.loss, hits, inst.target_tokens.len()))
            })
            .collect::<Result<_>>()?;
        let loss_sum: f64 = per.iter().map(|p| p.0).sum();
        let hits: usize = per.iter().map(|p| p.1).sum();
        let positions: usize = per.iter().map(|p| p.2).sum();
        Ok(EvalReport {
            mean_loss: loss_sum / instances.len() as f64,
            token_accuracy: hits as f64 / positions as f64,
            instances: instances.len(),
            positions,
        })
    }

    /// Mini-batch training over a seeded per-epoch shuffle. The batch
    /// gradient is the mean of per-sample gradients, reduced in batch order,
    /// so results are bit-identical for a given seed regardless of thread
    /// count.
    pub fn train(&self, instances: &[&Instance], config: &TrainConfig) -> Result<ReferenceModel> {
        config.validate()?;
        if instances.is_empty() {
            return Err(Error::Empty("training set".into()));
        }
        for inst in instances {
            self.check(inst)?;
        }
        let mut model = self.clone();
        let mut opt = OptimizerState::new(config, model.num_trainable());
        let mut rng = stream_rng(config.seed, streams::SHUFFLE);
        let mut order: Vec<usize> = (0..instances.len()).collect();
        let split = model.d_h * model.d_v;

        for _ in 0..config.epochs {
            order.shuffle(&mut rng);
            for batch in order.chunks(config.batch_size) {
                let grads: Vec<GradientRecord> = batch
                    .par_iter()
                    .map(|&i| model.per_sample_gradient(instances[i]))
                    .collect::<Result<_>>()?;
                let mut mean = vec![0.0; model.num_trainable()];
                for g in &grads {
                    for (m, v) in mean.iter_mut().zip(g.g()) {
                        *m += v;
                    }
                }
                let n = grads.len() as f64;
                mean.iter_mut().for_each(|m| *m /= n);
                let step = opt.step(&mean);
                let (dp, d_o) = step.split_at(split);
                for (w, d) in model.projection.data.iter_mut().zip(dp) {
                    *w -= d;
                }
                for (w, d) in model.output.data.iter_mut().zip(d_o) {
                    *w -= d;
                }
            }
        }
        Ok(model)
    }

    pub fn to_checkpoint_json(&self) -> Vec<u8> {
        let ck = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            d_v: self.d_v,
            d_h: self.d_h,
            vocab: self.vocab,
            seed: self.seed,
            projection: self.projection.data.clone(),
            output: self.output.data.clone(),
            embedding: self.embedding.data.clone(),
        };
        let mut bytes = serde_json::to_vec(&ck).expect("checkpoint serializes");
        bytes.push(b'\n');
        bytes
    }

    pub fn from_checkpoint_json(bytes: &[u8]) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_slice(bytes)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Config(format!("unsupported checkpoint format `{}`", ck.format)));
        }
        Self::from_parts(
            Matrix::from_row_major(ck.d_h, ck.d_v, ck.projection)?,
            Matrix::from_row_major(ck.vocab, ck.d_h, ck.output)?,
            Matrix::from_row_major(ck.vocab, ck.d_h, ck.embedding)?,
            ck.seed,
        )
    }

    /// Content hash of the checkpoint bytes.
    pub fn checkpoint_id(&self) -> String {
        content_id(&self.to_checkpoint_json())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_checkpoint_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint_json(&bytes)
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

enum OptimizerState {
    Sgd {
        lr: f64,
    },
    Adam {
        lr: f64,
        t: i32,
        m: Vec<f64>,
        v: Vec<f64>,
    },
}

impl OptimizerState {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(config: &TrainConfig, n: usize) -> Self {
        match config.optimizer {
            Optimizer::Sgd => Self::Sgd {
                lr: config.learning_rate,
            },
            Optimizer::Adam => Self::Adam {
                lr: config.learning_rate,
                t: 0,
                m: vec![0.0; n],
                v: vec![0.0; n],
            },
        }
    }

    /// Parameter decrement for one batch gradient.
    fn step(&mut self, grad: &[f64]) -> Vec<f64> {
        match self {
            Self::Sgd { lr } => grad.iter().map(|g| *lr * g).collect(),
            Self::Adam { lr, t, m, v } => {
                *t += 1;
                let c1 = 1.0 - Self::BETA1.powi(*t);
                let c2 = 1.0 - Self::BETA2.powi(*t);
                grad.iter()
                    .zip(m.iter_mut().zip(v.iter_mut()))
                    .map(|(g, (mi, vi))| {
                        *mi = Self::BETA1 * *mi + (1.0 - Self::BETA1) * g;
                        *vi = Self::BETA2 * *vi + (1.0 - Self::BETA2) * g * g;
                        *lr * (*mi / c1) / ((*vi / c2).sqrt() + Self::EPS)
                    })
                    .collect()
            }
        }
    }
}
