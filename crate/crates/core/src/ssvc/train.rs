//! Training loop shared by the variational model and the baseline.

use std::fmt::Write as _;

use super::{BatchKind, TrainingBatch, MAX_CHUNK_FRAMES};
use crate::error::{Error, Result};
use crate::graph::{sgd_step, AdamState, NoiseSource, ParamSet, RngState, DEFAULT_LEARNING_RATE};
use crate::linalg::Matrix;
use crate::scalar::Scalar;
use crate::stats::{corpus_mcd, McdAlignment, SpeakerStats};

/// Consecutive non-finite losses tolerated before training aborts.
pub const DIVERGENCE_STEPS: usize = 10;

/// A model the trainer can drive.
pub trait Trainable<T: Scalar> {
    fn params(&self) -> &ParamSet<T>;
    fn params_mut(&mut self) -> &mut ParamSet<T>;
    fn accepts(&self, kind: BatchKind) -> bool;
    /// Forward and backward for one batch; gradients are added to the
    /// parameter accumulators.
    fn accumulate(&mut self, batch: &TrainingBatch<T>, noise: &mut dyn NoiseSource<T>) -> Result<T>;
    fn record_step(&mut self, kind: BatchKind);
    fn predict_normalized(&self, x: &Matrix<T>) -> Result<Matrix<T>>;
    fn target_stats(&self) -> &SpeakerStats<T>;
}

/// Which terms of the dataset bound are optimized.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Objective {
    /// Paired and unpaired terms.
    SemiSupervised,
    /// Paired terms only; unpaired batches are ignored.
    SupervisedVae,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_steps: usize,
    /// An epoch is one pass over the batches, extended by further shuffled
    /// passes until it holds at least this many steps.
    pub min_epoch_steps: usize,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: DEFAULT_LEARNING_RATE,
            max_steps: 2000,
            min_epoch_steps: 50,
            patience: 5,
            seed: 0,
        }
    }
}

/// Held-out pair: normalized source cepstra and the raw target cepstra on
/// the source timeline.
#[derive(Clone, Debug, PartialEq)]
pub struct ValidationPair<T> {
    pub x_norm: Matrix<T>,
    pub y_ref: Matrix<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub term_kind: BatchKind,
    pub loss: f64,
    pub val_mcd: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingLog {
    pub rows: Vec<LogRow>,
    pub best_val_mcd: Option<f64>,
    pub best_step: usize,
    pub stopped_early: bool,
    pub skipped_updates: u64,
}

impl TrainingLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,term_kind,loss,val_mcd\n");
        for r in &self.rows {
            let val = r.val_mcd.map(|v| format!("{v:.6}")).unwrap_or_default();
            let _ = writeln!(s, "{},{},{:.6},{}", r.step, r.term_kind.as_str(), r.loss, val);
        }
        s
    }

    pub fn losses(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.loss).collect()
    }
}

/// Validation MCD of a model's predictions, frame-weighted over the set.
pub fn validation_mcd<T: Scalar, M: Trainable<T>>(model: &M, validation: &[ValidationPair<T>]) -> Result<f64> {
    let mut pairs = Vec::with_capacity(validation.len());
    for v in validation {
        let pred = super::map_chunked(&v.x_norm, |m| model.predict_normalized(m))?;
        pairs.push((model.target_stats().denormalize_mcep(&pred), v.y_ref.clone()));
    }
    Ok(corpus_mcd(&pairs, McdAlignment::Raw)?.as_f64())
}

/// Interleaves two shuffled lists so the first is spread evenly through the
/// second.
fn interleave(paired: &[usize], unpaired: &[usize]) -> Vec<usize> {
    let (np, nu) = (paired.len(), unpaired.len());
    let mut out = Vec::with_capacity(np + nu);
    let (mut i, mut j) = (0, 0);
    while i < np || j < nu {
        // compare (i + ½)/np with (j + ½)/nu without division
        let take_paired = j >= nu || (i < np && (2 * i + 1) * nu <= (2 * j + 1) * np);
        if take_paired {
            out.push(paired[i]);
            i += 1;
        } else {
            out.push(unpaired[j]);
            j += 1;
        }
    }
    out
}

/// Stochastic training over single-utterance batches. Batches are reshuffled
/// every pass with paired and unpaired batches interleaved; noise is drawn
/// fresh every step. With a validation set the best-scoring parameters are
/// restored at the end and training stops after `patience` epochs without
/// improvement.
pub fn train<T: Scalar, M: Trainable<T>>(
    model: &mut M,
    batches: &[TrainingBatch<T>],
    validation: &[ValidationPair<T>],
    objective: Objective,
    cfg: &TrainConfig,
) -> Result<TrainingLog> {
    if !(cfg.learning_rate > 0.0) {
        return Err(Error::Config("learning rate must be positive".into()));
    }
    let usable: Vec<TrainingBatch<T>> = batches
        .iter()
        .filter(|b| model.accepts(b.kind))
        .filter(|b| objective == Objective::SemiSupervised || b.kind == BatchKind::Paired)
        .flat_map(|b| b.chunks(MAX_CHUNK_FRAMES))
        .collect();
    if usable.is_empty() {
        return Err(Error::Config("no training batches usable by this model and objective".into()));
    }
    let paired: Vec<usize> = (0..usable.len()).filter(|&i| usable[i].kind == BatchKind::Paired).collect();
    let unpaired: Vec<usize> = (0..usable.len()).filter(|&i| usable[i].kind != BatchKind::Paired).collect();

    let mut order_rng = RngState::stream(cfg.seed, 1);
    let mut noise = RngState::stream(cfg.seed, 2);
    let mut opt = AdamState::<T>::default();
    let mut log = TrainingLog::default();
    let mut best: Option<(f64, ParamSet<T>)> = None;
    let mut since_best = 0usize;
    let mut bad_run = 0usize;
    let mut queue: Vec<usize> = Vec::new();
    let epoch_len = usable.len().max(cfg.min_epoch_steps).max(1);
    model.params_mut().zero_grad();

    let mut step = 0usize;
    'epochs: while step < cfg.max_steps {
        for _ in 0..epoch_len {
            if step >= cfg.max_steps {
                break;
            }
            if queue.is_empty() {
                let (mut p, mut u) = (paired.clone(), unpaired.clone());
                order_rng.shuffle(&mut p);
                order_rng.shuffle(&mut u);
                queue = interleave(&p, &u);
                queue.reverse();
            }
            let batch = &usable[queue.pop().expect("refilled")];
            let loss = model.accumulate(batch, &mut noise)?.as_f64();
            step += 1;
            if loss.is_finite() {
                bad_run = 0;
                sgd_step(model.params_mut(), &mut opt, cfg.learning_rate);
                model.record_step(batch.kind);
            } else {
                bad_run += 1;
                model.params_mut().zero_grad();
                log.skipped_updates += 1;
                if bad_run >= DIVERGENCE_STEPS {
                    return Err(Error::Divergence(format!(
                        "loss was non-finite for {DIVERGENCE_STEPS} consecutive steps (last at step {step})"
                    )));
                }
            }
            log.rows.push(LogRow {
                step,
                term_kind: batch.kind,
                loss,
                val_mcd: None,
            });
        }
        if validation.is_empty() {
            continue;
        }
        let v = validation_mcd(model, validation)?;
        if let Some(row) = log.rows.last_mut() {
            row.val_mcd = Some(v);
        }
        if best.as_ref().is_none_or(|(b, _)| v < *b) {
            best = Some((v, model.params().clone()));
            log.best_step = step;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                log.stopped_early = true;
                break 'epochs;
            }
        }
    }
    log.skipped_updates += opt.skipped;
    if let Some((v, params)) = best {
        *model.params_mut() = params;
        log.best_val_mcd = Some(v);
    } else {
        log.best_step = step;
    }
    model.params_mut().zero_grad();
    Ok(log)
}
