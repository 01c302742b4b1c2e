//! Cross-entropy training with AdamW, shuffled mini-batches and early
//! stopping on validation loss.

mod history;

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Gradients, GraphError, ParamSet, Tape, Tensor};
use crate::model::{Model, ModelError, NLL_EPS};

pub use history::{EpochLog, TrainLog};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("class {class} is out of range for {classes} classes")]
    InvalidClass { class: usize, classes: usize },
    #[error("non-finite gradient in {0}")]
    NonFiniteGradient(String),
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("loss diverged at epoch {epoch}")]
    DivergedLoss { epoch: usize },
    #[error("invalid train config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 16,
            max_epochs: 50,
            early_stop_patience: 10,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.01,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {}", self.learning_rate));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.early_stop_patience == 0 {
            return bad("batch_size, max_epochs and early_stop_patience must be positive".into());
        }
        if self.early_stop_patience > self.max_epochs {
            return bad(format!(
                "patience {} exceeds max_epochs {}",
                self.early_stop_patience, self.max_epochs
            ));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad(format!("betas {} {}", self.beta1, self.beta2));
        }
        if !(self.epsilon > 0.0) || !(self.weight_decay >= 0.0) {
            return bad(format!("epsilon {} weight_decay {}", self.epsilon, self.weight_decay));
        }
        Ok(())
    }
}

/// One labelled example: a `T × F` matrix per modality plus identifiers.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub participant_id: String,
    pub video_id: String,
    pub inputs: Vec<Arc<Tensor>>,
    pub label: usize,
}

impl Sample {
    pub fn input_refs(&self) -> Vec<&Tensor> {
        self.inputs.iter().map(|t| t.as_ref()).collect()
    }
}

/// `-ln(ŷ[y] + 1e-12)`.
pub fn cross_entropy(probs: &[f64], class: usize) -> Result<f64, TrainError> {
    let p = probs.get(class).ok_or(TrainError::InvalidClass {
        class,
        classes: probs.len(),
    })?;
    Ok(-(p + NLL_EPS).ln())
}

/// Decoupled-weight-decay Adam.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(config: &TrainConfig, params: &ParamSet) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.values.len()]).collect();
        Self {
            learning_rate: config.learning_rate,
            beta1: config.beta1,
            beta2: config.beta2,
            epsilon: config.epsilon,
            weight_decay: config.weight_decay,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    /// Applies one update; frozen parameters are left untouched.
    pub fn step(&mut self, params: &mut ParamSet, grads: &Gradients) -> Result<(), TrainError> {
        for (p, g) in params.iter().zip(grads.iter()) {
            if !p.frozen && !g.is_finite() {
                return Err(TrainError::NonFiniteGradient(p.name.clone()));
            }
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        for (k, (p, g)) in params.iter_mut().zip(grads.iter()).enumerate() {
            if p.frozen {
                continue;
            }
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (((w, gi), mi), vi) in p.values.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *w -= self.learning_rate * self.weight_decay * *w;
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let (mh, vh) = (*mi / bc1, *vi / bc2);
                *w -= self.learning_rate * mh / (vh.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Tracks the best validation loss. Training stops once the number of
/// consecutive non-improving epochs exceeds `patience`.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    pub patience: usize,
    best_loss: f64,
    best_epoch: usize,
    bad_epochs: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best_loss: f64::INFINITY,
            best_epoch: 0,
            bad_epochs: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> StopDecision {
        if val_loss < self.best_loss {
            self.best_loss = val_loss;
            self.best_epoch = epoch;
            self.bad_epochs = 0;
            StopDecision::Improved
        } else {
            self.bad_epochs += 1;
            if self.bad_epochs > self.patience {
                StopDecision::Stop
            } else {
                StopDecision::Continue
            }
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best_loss
    }
}

/// Summed loss and gradients over `batch`, accumulated in batch order.
pub fn batch_gradients(model: &Model, batch: &[&Sample]) -> Result<(f64, Gradients), TrainError> {
    let per_sample: Vec<Result<(f64, Gradients), TrainError>> = batch
        .par_iter()
        .map(|s| {
            let mut tape = Tape::new(&model.params);
            let (loss, _) = model.loss(&mut tape, &s.input_refs(), s.label)?;
            let value = tape.value(loss).data()[0];
            Ok((value, tape.backward(loss, 1.0)?))
        })
        .collect();
    let mut total = Gradients::zeros_like(&model.params);
    let mut loss = 0.0;
    for r in per_sample {
        let (l, g) = r?;
        loss += l;
        total.add_assign(&g);
    }
    Ok((loss, total))
}

/// Mean loss, accuracy and class probabilities over `samples`.
pub fn evaluate_set(model: &Model, samples: &[&Sample]) -> Result<(f64, f64, Vec<Vec<f64>>), TrainError> {
    if samples.is_empty() {
        return Err(TrainError::EmptySplit("evaluation"));
    }
    let probs = samples
        .par_iter()
        .map(|s| model.predict(&s.input_refs()))
        .collect::<Result<Vec<_>, _>>()?;
    let mut loss = 0.0;
    let mut correct = 0usize;
    for (p, s) in probs.iter().zip(samples) {
        loss += cross_entropy(p, s.label)?;
        if argmax(p) == s.label {
            correct += 1;
        }
    }
    let n = samples.len() as f64;
    Ok((loss / n, correct as f64 / n, probs))
}

/// Index of the largest entry; ties go to the lower index.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in p.iter().enumerate() {
        if *v > p[best] {
            best = i;
        }
    }
    best
}

fn scale_gradients(g: &mut Gradients, k: f64) {
    for t in g.iter_mut() {
        t.data_mut().iter_mut().for_each(|v| *v *= k);
    }
}

/// Trains `model` and returns it with the parameters of its best
/// validation epoch, plus the per-epoch log.
pub fn fit(
    mut model: Model,
    train: &[&Sample],
    val: &[&Sample],
    config: &TrainConfig,
) -> Result<(Model, TrainLog), TrainError> {
    config.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptySplit("training"));
    }
    if val.is_empty() {
        return Err(TrainError::EmptySplit("validation"));
    }
    for s in train.iter().chain(val) {
        if s.label >= model.config.classes {
            return Err(TrainError::InvalidClass {
                class: s.label,
                classes: model.config.classes,
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut opt = AdamW::new(config, &model.params);
    let mut stopper = EarlyStopping::new(config.early_stop_patience);
    let mut best_params = model.params.clone();
    let mut log = TrainLog::default();
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| train[i]).collect();
            let (loss, mut grads) = batch_gradients(&model, &batch)?;
            if !loss.is_finite() {
                return Err(TrainError::DivergedLoss { epoch });
            }
            epoch_loss += loss;
            scale_gradients(&mut grads, 1.0 / batch.len() as f64);
            opt.step(&mut model.params, &grads)?;
        }
        let train_loss = epoch_loss / train.len() as f64;
        let (val_loss, val_accuracy, _) = evaluate_set(&model, val)?;
        if !val_loss.is_finite() {
            return Err(TrainError::DivergedLoss { epoch });
        }
        log.epochs.push(EpochLog {
            epoch,
            train_loss,
            val_loss,
            val_accuracy,
        });
        log::debug!("epoch {epoch}: train {train_loss:.4} val {val_loss:.4} acc {val_accuracy:.3}");
        log.stopped_epoch = epoch;
        match stopper.observe(epoch, val_loss) {
            StopDecision::Improved => best_params = model.params.clone(),
            StopDecision::Continue => {}
            StopDecision::Stop => break,
        }
    }
    log.best_epoch = stopper.best_epoch();
    model.params = best_params;
    Ok((model, log))
}
