//! Optimization loop: token-budget batches, Adam with a warmup schedule,
//! gradient clipping, per-epoch dev scoring and best-k checkpoint averaging.

mod adam;
mod batching;
mod checkpoint;
mod schedule;

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

pub use adam::{adam_step, clip_global_norm, AdamConfig, AdamState};
pub use batching::token_batches;
pub use checkpoint::{checkpoint_average, select_best_k, BestK, Checkpoint, DevMetric};
pub use schedule::lr_at;

use crate::error::{config_err, Error, Result};
use crate::model::{Model, OwnedInput};
use crate::numerics::{Graph, ParamStore, Real, Tensor};
use crate::rng::substream;
use crate::tasks::{Utterance, Vocab};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub peak_lr: f64,
    pub warmup_steps: u64,
    pub adam: AdamConfig,
    pub epochs: usize,
    /// Stop after this many updates even mid-epoch.
    pub max_steps: Option<u64>,
    /// Target tokens per batch.
    pub batch_bins: usize,
    pub keep_best_k: usize,
    pub clip_norm: f64,
    pub dev_metric: DevMetric,
    pub seed: u64,
}

impl TrainConfig {
    /// 0.002 peak rate, 15000 warmup steps, decay 1e-6, ten best checkpoints.
    pub fn full() -> Self {
        TrainConfig {
            peak_lr: 0.002,
            warmup_steps: 15000,
            adam: AdamConfig::default(),
            epochs: 100,
            max_steps: None,
            batch_bins: 1000,
            keep_best_k: 10,
            clip_norm: 5.0,
            dev_metric: DevMetric::Loss,
            seed: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.peak_lr > 0.0) {
            return Err(config_err!("peak_lr must be positive"));
        }
        if self.warmup_steps == 0 {
            return Err(config_err!("warmup_steps must be at least 1"));
        }
        if self.batch_bins == 0 || self.keep_best_k == 0 || self.epochs == 0 {
            return Err(config_err!("batch_bins, keep_best_k and epochs must be positive"));
        }
        if !(self.clip_norm > 0.0) {
            return Err(config_err!("clip_norm must be positive"));
        }
        Ok(())
    }
}

/// Runs independent jobs, returning results in input order.
pub trait Executor: Sync {
    fn map<I, O, F>(&self, items: &[I], f: F) -> Vec<O>
    where
        I: Sync,
        O: Send,
        F: Fn(&I) -> O + Sync + Send;
}

/// Runs jobs one after another on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Serial;

impl Executor for Serial {
    fn map<I, O, F>(&self, items: &[I], f: F) -> Vec<O>
    where
        I: Sync,
        O: Send,
        F: Fn(&I) -> O + Sync + Send,
    {
        items.iter().map(f).collect()
    }
}

/// One utterance ready for the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Example<T> {
    pub id: String,
    pub input: OwnedInput<T>,
    pub target: Vec<usize>,
}

impl<T: Real> Example<T> {
    /// Feature utterances use their frames; token utterances get the
    /// encoder token sequence derived from the target.
    pub fn from_utterance(u: &Utterance, vocab: Vocab) -> Self {
        let input = match &u.features {
            Some(f) => OwnedInput::Features(f.cast()),
            None => OwnedInput::Tokens(vocab.encoder_tokens(&u.tokens)),
        };
        Example {
            id: u.id.clone(),
            input,
            target: u.tokens.clone(),
        }
    }
}

pub fn examples<T: Real>(corpus: &[Utterance], vocab: Vocab) -> Vec<Example<T>> {
    corpus.iter().map(|u| Example::from_utterance(u, vocab)).collect()
}

/// Loss terms of one example, and its parameter gradients when requested.
#[derive(Debug, Clone)]
pub struct ItemResult<T> {
    pub total: f64,
    pub attention: f64,
    pub ctc: Option<f64>,
    /// Teacher-forced argmax hits and scored positions.
    pub correct: usize,
    pub positions: usize,
    pub grads: Option<Vec<Option<Tensor<T>>>>,
}

fn item_result<T: Real>(
    model: &Model,
    store: &ParamStore<T>,
    ex: &Example<T>,
    with_grads: bool,
) -> Result<ItemResult<T>> {
    let mut g = Graph::new(store);
    let (h, o) = model.forward(&mut g, ex.input.as_input())?;
    let loss = model.loss_from(&mut g, h, o, &ex.target)?;
    let logits = g.value(loss.logits);
    let shifted = model.decoder().shifted_targets(&ex.target);
    let mut correct = 0;
    for (i, &t) in shifted.iter().enumerate() {
        let row = logits.row(i);
        let mut best = 0;
        for (j, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = j;
            }
        }
        correct += usize::from(best == t);
    }
    let grads = if with_grads {
        let gr = g.backward(loss.total)?;
        Some(g.param_grads(&gr))
    } else {
        None
    };
    Ok(ItemResult {
        total: g.value(loss.total).item().as_f64(),
        attention: g.value(loss.attention).item().as_f64(),
        ctc: loss.ctc.map(|c| g.value(c).item().as_f64()),
        correct,
        positions: shifted.len(),
        grads,
    })
}

/// Items that cannot be scored (too short, no CTC alignment) are skipped.
fn skippable(e: &Error) -> bool {
    matches!(e, Error::SequenceTooShort { .. } | Error::InfeasibleAlignment { .. })
}

/// Mean loss and teacher-forced accuracy over a set of examples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DevScores {
    pub loss: f64,
    pub accuracy: f64,
    pub skipped: usize,
}

impl DevScores {
    pub fn get(&self, metric: DevMetric) -> f64 {
        match metric {
            DevMetric::Loss => self.loss,
            DevMetric::Accuracy => self.accuracy,
        }
    }
}

pub fn evaluate<T: Real, E: Executor>(
    model: &Model,
    store: &ParamStore<T>,
    items: &[Example<T>],
    exec: &E,
) -> Result<DevScores> {
    let results = exec.map(items, |ex| item_result(model, store, ex, false));
    let (mut loss, mut n, mut correct, mut positions, mut skipped) = (0.0, 0usize, 0, 0, 0);
    for r in results {
        match r {
            Ok(r) => {
                loss += r.total;
                n += 1;
                correct += r.correct;
                positions += r.positions;
            }
            Err(e) if skippable(&e) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    if n == 0 {
        return Err(Error::Data(String::from("no dev example could be scored")));
    }
    Ok(DevScores {
        loss: loss / n as f64,
        accuracy: correct as f64 / positions.max(1) as f64,
        skipped,
    })
}

/// One optimizer update.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub grad_norm: f64,
    pub batch_size: usize,
    pub skipped: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub step: u64,
    pub train_loss: f64,
    pub dev: DevScores,
}

/// Progress callbacks; every method has a no-op default.
pub trait TrainObserver<T> {
    fn on_step(&mut self, _record: &StepRecord) {}
    fn on_epoch(&mut self, _record: &EpochRecord) {}
    /// Called with the parameters in effect when training diverged.
    fn on_divergence(&mut self, _store: &ParamStore<T>, _step: u64, _error: &Error) {}
}

impl<T> TrainObserver<T> for () {}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    /// Average of the best checkpoints; also left loaded in the store.
    pub final_checkpoint: Checkpoint<T>,
    pub best: Vec<Checkpoint<T>>,
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
}

/// Train `model` in place. With [`Serial`] the result depends only on the
/// inputs and `cfg.seed`.
pub fn train<T: Real, E: Executor>(
    model: &Model,
    store: &mut ParamStore<T>,
    train_set: &[Example<T>],
    dev_set: &[Example<T>],
    cfg: &TrainConfig,
    exec: &E,
    observer: &mut dyn TrainObserver<T>,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if train_set.is_empty() || dev_set.is_empty() {
        return Err(Error::Data(String::from("training and dev sets must be nonempty")));
    }
    let fingerprint = model.fingerprint(store);
    let mut adam = AdamState::new(store);
    let mut best = BestK::new(cfg.keep_best_k, cfg.dev_metric);
    let mut steps = Vec::new();
    let mut epochs = Vec::new();
    let mut step: u64 = 0;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    'epochs: for epoch in 1..=cfg.epochs {
        let mut rng = substream(cfg.seed, &format!("epoch-{epoch}"));
        order.shuffle(&mut rng);
        let lengths: Vec<usize> = order.iter().map(|&i| train_set[i].target.len()).collect();
        let batches = token_batches(&lengths, cfg.batch_bins)?;
        let (mut epoch_loss, mut epoch_items) = (0.0, 0usize);
        for range in batches {
            if cfg.max_steps.is_some_and(|m| step >= m) {
                break;
            }
            let batch: Vec<&Example<T>> = order[range].iter().map(|&i| &train_set[i]).collect();
            let results = exec.map(&batch, |ex| item_result(model, store, ex, true));
            let mut grads: Vec<Tensor<T>> =
                store.tensors().iter().map(|p| Tensor::zeros(p.shape())).collect();
            let (mut loss, mut used) = (0.0, 0usize);
            let mut skipped = Vec::new();
            for (ex, r) in batch.iter().zip(results) {
                let r = match r {
                    Ok(r) => r,
                    Err(e) if skippable(&e) => {
                        skipped.push(ex.id.clone());
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                loss += r.total;
                used += 1;
                for (acc, g) in grads.iter_mut().zip(r.grads.unwrap_or_default()) {
                    if let Some(g) = g {
                        for (a, &x) in acc.data_mut().iter_mut().zip(g.data()) {
                            *a += x;
                        }
                    }
                }
            }
            step += 1;
            let lr = lr_at(step, cfg.peak_lr, cfg.warmup_steps)?;
            if used > 0 {
                let inv = T::lit(1.0 / used as f64);
                for g in grads.iter_mut() {
                    for x in g.data_mut() {
                        *x *= inv;
                    }
                }
                loss /= used as f64;
            }
            let grad_norm = clip_global_norm(&mut grads, cfg.clip_norm);
            if !loss.is_finite() || !grad_norm.is_finite() {
                let e = Error::Numerical(format!(
                    "loss {loss}, gradient norm {grad_norm} at step {step}"
                ));
                observer.on_divergence(store, step, &e);
                return Err(e);
            }
            if used > 0 {
                if let Err(e) = adam_step(store, &grads, &mut adam, lr, &cfg.adam) {
                    observer.on_divergence(store, step, &e);
                    return Err(e);
                }
            }
            epoch_loss += loss * used as f64;
            epoch_items += used;
            let record = StepRecord {
                step,
                epoch,
                lr,
                train_loss: loss,
                grad_norm,
                batch_size: batch.len(),
                skipped,
            };
            observer.on_step(&record);
            steps.push(record);
        }
        let dev = evaluate(model, store, dev_set, exec)?;
        let record = EpochRecord {
            epoch,
            step,
            train_loss: epoch_loss / epoch_items.max(1) as f64,
            dev,
        };
        observer.on_epoch(&record);
        epochs.push(record);
        best.offer(Checkpoint::from_store(store, step, dev.get(cfg.dev_metric), fingerprint));
        if cfg.max_steps.is_some_and(|m| step >= m) {
            break 'epochs;
        }
    }
    let kept = best.kept().to_vec();
    let final_checkpoint = checkpoint_average(&kept)?;
    final_checkpoint.load_into(store, fingerprint)?;
    Ok(TrainOutcome {
        final_checkpoint,
        best: kept,
        steps,
        epochs,
    })
}
