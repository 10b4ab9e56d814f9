//! Optimisation harness: warmup-then-linear-decay schedule, AdamW,
//! token-budget batching, metrics logging and resumable state.

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{ParamSet, Scalar};
use crate::sar::{SarBatch, SarExample, SarModel};
use crate::snar::{sample_layer, SnarBatch, SnarExample, SnarModel};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub peak_lr: f64,
    pub init_lr: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Acoustic tokens per batch; at least one utterance is always taken.
    pub batch_tokens: usize,
    pub grad_clip: f64,
    pub seed: u64,
    /// Steps between validation passes; 0 disables them.
    pub valid_every: u64,
    /// Steps between checkpoints; 0 disables them.
    pub checkpoint_every: u64,
    /// Consecutive rejected steps before training aborts.
    pub max_bad_steps: u32,
    /// Write elapsed milliseconds to the metrics; when off, `wall_ms` is 0.
    pub record_wall_time: bool,
}

impl Default for TrainConfig {
    /// Full-scale schedule: 32k warmup updates to the peak, 200k in total.
    fn default() -> Self {
        Self {
            peak_lr: 5e-4,
            init_lr: 1e-7,
            warmup_steps: 32_000,
            total_steps: 200_000,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            batch_tokens: 6000,
            grad_clip: 1.0,
            seed: 0,
            valid_every: 1000,
            checkpoint_every: 5000,
            max_bad_steps: 10,
            record_wall_time: true,
        }
    }
}

impl TrainConfig {
    /// Desk-scale profile: 5k updates with the warmup scaled by the same factor.
    /// The small model and short run take a higher peak rate.
    pub fn demo() -> Self {
        Self {
            peak_lr: 2e-3,
            warmup_steps: 800,
            total_steps: 5000,
            batch_tokens: 600,
            valid_every: 500,
            checkpoint_every: 1000,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.init_lr.is_nan() || self.init_lr >= self.peak_lr || self.peak_lr.is_nan() {
            return Err(Error::InvalidConfig(format!(
                "init_lr {} must be below peak_lr {}",
                self.init_lr, self.peak_lr
            )));
        }
        if self.warmup_steps >= self.total_steps {
            return Err(Error::InvalidConfig(format!(
                "warmup_steps {} must be below total_steps {}",
                self.warmup_steps, self.total_steps
            )));
        }
        if self.batch_tokens == 0 {
            return Err(Error::InvalidConfig("batch_tokens must be positive".into()));
        }
        Ok(())
    }
}

/// Learning rate before update `step` (0-based).
pub fn lr_schedule(step: u64, cfg: &TrainConfig) -> f64 {
    if step <= cfg.warmup_steps {
        if cfg.warmup_steps == 0 {
            return cfg.peak_lr;
        }
        let f = step as f64 / cfg.warmup_steps as f64;
        cfg.init_lr * (1.0 - f) + cfg.peak_lr * f
    } else if step >= cfg.total_steps {
        0.0
    } else {
        cfg.peak_lr * (cfg.total_steps - step) as f64 / (cfg.total_steps - cfg.warmup_steps) as f64
    }
}

/// First and second moments with the number of applied updates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<S> {
    pub updates: u64,
    pub m: ParamSet<S>,
    pub v: ParamSet<S>,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(params: &ParamSet<S>) -> Self {
        Self { updates: 0, m: params.zeros_like(), v: params.zeros_like() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl From<&TrainConfig> for AdamW {
    fn from(c: &TrainConfig) -> Self {
        Self { beta1: c.beta1, beta2: c.beta2, eps: c.eps, weight_decay: c.weight_decay }
    }
}

fn same_layout<S: Scalar>(a: &ParamSet<S>, b: &ParamSet<S>) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!("{} tensors vs {}", a.len(), b.len())));
    }
    for (i, (x, y)) in a.tensors().iter().zip(b.tensors()).enumerate() {
        if x.shape != y.shape {
            return Err(Error::ShapeMismatch(format!("tensor {i}: {:?} vs {:?}", x.shape, y.shape)));
        }
    }
    Ok(())
}

/// One AdamW update with bias-corrected moments and decoupled weight decay.
/// Non-finite gradients leave parameters and state untouched.
pub fn adamw_step<S: Scalar>(
    params: &mut ParamSet<S>,
    grads: &ParamSet<S>,
    state: &mut AdamState<S>,
    lr: f64,
    opt: &AdamW,
) -> Result<()> {
    same_layout(params, grads)?;
    same_layout(params, &state.m)?;
    if !grads.all_finite() {
        return Err(Error::NonFiniteGradient);
    }
    state.updates += 1;
    let t = state.updates as i32;
    let c1 = 1.0 - opt.beta1.powi(t);
    let c2 = 1.0 - opt.beta2.powi(t);
    let decay = 1.0 - lr * opt.weight_decay;
    let AdamState { m, v, .. } = state;
    for (((p, g), m), v) in params
        .tensors_mut()
        .iter_mut()
        .zip(grads.tensors())
        .zip(m.tensors_mut().iter_mut())
        .zip(v.tensors_mut().iter_mut())
    {
        for i in 0..p.data.len() {
            let gi = g.data[i].to_f64();
            let mi = opt.beta1 * m.data[i].to_f64() + (1.0 - opt.beta1) * gi;
            let vi = opt.beta2 * v.data[i].to_f64() + (1.0 - opt.beta2) * gi * gi;
            m.data[i] = S::from_f64(mi);
            v.data[i] = S::from_f64(vi);
            let step = (mi / c1) / ((vi / c2).sqrt() + opt.eps);
            p.data[i] = S::from_f64(p.data[i].to_f64() * decay - lr * step);
        }
    }
    Ok(())
}

/// A model the harness can optimise.
pub trait TrainModel {
    type Example;

    /// Tokens an example contributes to the batch budget.
    fn tokens(example: &Self::Example) -> usize;
    fn params(&self) -> &ParamSet<f32>;
    fn params_mut(&mut self) -> &mut ParamSet<f32>;
    /// Mean loss of the batch; gradients are accumulated into `grads`.
    fn loss_and_grad(&self, batch: &[&Self::Example], grads: &mut ParamSet<f32>, rng: &mut ChaCha8Rng) -> Result<f64>;
    /// Mean loss without dropout.
    fn eval_loss(&self, examples: &[&Self::Example]) -> Result<f64>;
}

impl TrainModel for SarModel<f32> {
    type Example = SarExample;

    fn tokens(e: &SarExample) -> usize {
        e.codes.len() + 1
    }

    fn params(&self) -> &ParamSet<f32> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet<f32> {
        &mut self.params
    }

    fn loss_and_grad(&self, batch: &[&SarExample], grads: &mut ParamSet<f32>, rng: &mut ChaCha8Rng) -> Result<f64> {
        let batch = SarBatch { examples: batch.iter().map(|e| (*e).clone()).collect() };
        SarModel::loss_and_grad(self, &batch, grads, Some(rng))
    }

    fn eval_loss(&self, examples: &[&SarExample]) -> Result<f64> {
        self.loss(&SarBatch { examples: examples.iter().map(|e| (*e).clone()).collect() })
    }
}

impl TrainModel for SnarModel<f32> {
    type Example = SnarExample;

    fn tokens(e: &SnarExample) -> usize {
        e.codes.frames()
    }

    fn params(&self) -> &ParamSet<f32> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet<f32> {
        &mut self.params
    }

    /// One target layer, drawn uniformly from `2..=n`, for the whole batch.
    fn loss_and_grad(&self, batch: &[&SnarExample], grads: &mut ParamSet<f32>, rng: &mut ChaCha8Rng) -> Result<f64> {
        let layer = sample_layer(self.codec_layers, rng)?;
        let batches = batch.iter().map(|e| SnarBatch::from_example(e, layer)).collect::<Result<Vec<_>>>()?;
        SnarModel::loss_and_grad(self, &batches, grads, Some(rng))
    }

    /// Averaged over every target layer.
    fn eval_loss(&self, examples: &[&SnarExample]) -> Result<f64> {
        let mut total = 0.0;
        for layer in 2..=self.codec_layers {
            let batches = examples.iter().map(|e| SnarBatch::from_example(e, layer)).collect::<Result<Vec<_>>>()?;
            total += self.loss(&batches)?;
        }
        Ok(total / (self.codec_layers - 1) as f64)
    }
}

/// Groups example indices into batches of at most `budget` tokens. Examples
/// are shuffled, sorted by length inside windows of 50 batches' worth, cut
/// into batches, and the batch order is shuffled again.
pub fn plan_batches(lengths: &[usize], budget: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.shuffle(rng);
    let mean = (lengths.iter().sum::<usize>() / lengths.len().max(1)).max(1);
    let window = ((budget / mean).max(1) * 50).max(1);
    let mut batches = Vec::new();
    for chunk in order.chunks_mut(window) {
        chunk.sort_by_key(|&i| lengths[i]);
        let mut current: Vec<usize> = Vec::new();
        let mut tokens = 0;
        for &i in chunk.iter() {
            if !current.is_empty() && tokens + lengths[i] > budget {
                batches.push(std::mem::take(&mut current));
                tokens = 0;
            }
            current.push(i);
            tokens += lengths[i];
        }
        if !current.is_empty() {
            batches.push(current);
        }
    }
    batches.shuffle(rng);
    batches
}

fn mix(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Everything needed to continue a run exactly where it stopped.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub step: u64,
    pub epoch: u64,
    pub batch_in_epoch: usize,
    pub rejected_steps: u64,
    pub best_valid: Option<f64>,
    pub adam: AdamState<f32>,
}

impl TrainState {
    pub fn new(params: &ParamSet<f32>) -> Self {
        Self { step: 0, epoch: 0, batch_in_epoch: 0, rejected_steps: 0, best_valid: None, adam: AdamState::new(params) }
    }
}

/// One metrics line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub valid_loss: Option<f64>,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
    pub grad_norm: f64,
}

/// What happened at a checkpoint boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckpointEvent {
    Periodic,
    BestValid,
    Final,
}

pub struct Trainer<'a, M: TrainModel> {
    pub model: M,
    pub cfg: TrainConfig,
    pub state: TrainState,
    train: &'a [M::Example],
    plan: Vec<Vec<usize>>,
    grads: ParamSet<f32>,
    started: Instant,
    bad_in_a_row: u32,
}

impl<'a, M: TrainModel> Trainer<'a, M> {
    pub fn new(model: M, cfg: TrainConfig, train: &'a [M::Example]) -> Result<Self> {
        let state = TrainState::new(model.params());
        Self::resume(model, cfg, train, state)
    }

    pub fn resume(model: M, cfg: TrainConfig, train: &'a [M::Example], state: TrainState) -> Result<Self> {
        cfg.validate()?;
        if train.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let grads = model.params().zeros_like();
        let mut t =
            Self { model, cfg, state, train, plan: Vec::new(), grads, started: Instant::now(), bad_in_a_row: 0 };
        t.plan = t.epoch_plan(t.state.epoch);
        Ok(t)
    }

    fn epoch_plan(&self, epoch: u64) -> Vec<Vec<usize>> {
        let lengths: Vec<usize> = self.train.iter().map(M::tokens).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(mix(self.cfg.seed, epoch));
        plan_batches(&lengths, self.cfg.batch_tokens, &mut rng)
    }

    fn next_batch(&mut self) -> Vec<usize> {
        if self.state.batch_in_epoch >= self.plan.len() {
            self.state.epoch += 1;
            self.state.batch_in_epoch = 0;
            self.plan = self.epoch_plan(self.state.epoch);
        }
        let b = self.plan[self.state.batch_in_epoch].clone();
        self.state.batch_in_epoch += 1;
        b
    }

    fn wall_ms(&self) -> u64 {
        if self.cfg.record_wall_time {
            self.started.elapsed().as_millis() as u64
        } else {
            0
        }
    }

    /// Takes the next batch and applies one update. Returns `Ok(None)` when
    /// the step was rejected for a non-finite loss or gradient.
    pub fn step(&mut self) -> Result<Option<StepReport>> {
        let batch = self.next_batch();
        let examples: Vec<&M::Example> = batch.iter().map(|&i| &self.train[i]).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(mix(self.cfg.seed ^ 0x5eed, self.state.step + 1));
        self.grads.fill_zero();
        let loss = self.model.loss_and_grad(&examples, &mut self.grads, &mut rng)?;
        let lr = lr_schedule(self.state.step, &self.cfg);
        let grad_norm = self.grads.global_norm();
        if !loss.is_finite() || !grad_norm.is_finite() {
            return self.reject();
        }
        if self.cfg.grad_clip > 0.0 && grad_norm > self.cfg.grad_clip {
            self.grads.scale((self.cfg.grad_clip / grad_norm) as f32);
        }
        let opt = AdamW::from(&self.cfg);
        match adamw_step(self.model.params_mut(), &self.grads, &mut self.state.adam, lr, &opt) {
            Ok(()) => {}
            Err(Error::NonFiniteGradient) => return self.reject(),
            Err(e) => return Err(e),
        }
        self.bad_in_a_row = 0;
        self.state.step += 1;
        Ok(Some(StepReport { step: self.state.step, loss, lr, grad_norm }))
    }

    fn reject(&mut self) -> Result<Option<StepReport>> {
        self.state.rejected_steps += 1;
        self.bad_in_a_row += 1;
        tracing::warn!(step = self.state.step, "rejected update with non-finite loss or gradient");
        if self.bad_in_a_row >= self.cfg.max_bad_steps {
            return Err(Error::Diverged(self.state.step as usize));
        }
        Ok(None)
    }

    pub fn valid_loss(&self, valid: &[M::Example]) -> Result<f64> {
        self.model.eval_loss(&valid.iter().collect::<Vec<_>>())
    }

    /// Trains until `total_steps`, logging to `metrics` and calling
    /// `on_checkpoint` at checkpoint boundaries, after a new best validation
    /// loss, and once at the end.
    pub fn run(
        &mut self,
        valid: &[M::Example],
        metrics: &mut dyn Write,
        on_checkpoint: &mut dyn FnMut(&Self, CheckpointEvent) -> Result<()>,
    ) -> Result<()> {
        while self.state.step < self.cfg.total_steps {
            let Some(report) = self.step()? else { continue };
            let record = MetricsRecord {
                step: report.step,
                loss: Some(report.loss),
                lr: Some(report.lr),
                valid_loss: None,
                wall_ms: self.wall_ms(),
            };
            writeln!(metrics, "{}", serde_json::to_string(&record)?)?;
            if report.step % 100 == 0 {
                tracing::info!(step = report.step, loss = report.loss, lr = report.lr, "training");
            }
            let step = self.state.step;
            if self.cfg.valid_every > 0 && step.is_multiple_of(self.cfg.valid_every) && !valid.is_empty() {
                let vl = self.valid_loss(valid)?;
                let record =
                    MetricsRecord { step, loss: None, lr: None, valid_loss: Some(vl), wall_ms: self.wall_ms() };
                writeln!(metrics, "{}", serde_json::to_string(&record)?)?;
                tracing::info!(step, valid_loss = vl, "validation");
                if self.state.best_valid.is_none_or(|b| vl < b) {
                    self.state.best_valid = Some(vl);
                    on_checkpoint(self, CheckpointEvent::BestValid)?;
                }
            }
            if self.cfg.checkpoint_every > 0 && step.is_multiple_of(self.cfg.checkpoint_every) {
                on_checkpoint(self, CheckpointEvent::Periodic)?;
            }
        }
        metrics.flush()?;
        on_checkpoint(self, CheckpointEvent::Final)
    }
}
