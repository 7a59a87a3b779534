//! Training loop, evaluation and persistence.

pub mod checkpoint;
mod loss;
mod optim;

pub use loss::{bce_value, soft_dice_value, LossKind};
pub use optim::{adam_step, sgd_step, AdamParams, AdamState, Optimizer, OptimizerKind};

use std::io::Write;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::augment::{augment_batch, AugmentConfig};
use crate::data::CineSample;
use crate::layers::Mode;
use crate::metrics::{self, aggregate, ApdMode, MetricsReport};
use crate::model::{ModelState, UNetSpec};
use crate::tensor::{Shape, Tape, Tensor};
use crate::{Error, Exec, Grid, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub loss: LossKind,
    pub seed: u64,
    pub augment: bool,
    pub augment_config: AugmentConfig,
    pub model: UNetSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            batch_size: 16,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            loss: LossKind::SoftDice,
            seed: 0,
            augment: true,
            augment_config: AugmentConfig::default(),
            model: UNetSpec::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        self.model.validate()?;
        self.augment_config.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_dice: f64,
}

pub struct TrainOutcome {
    /// Parameters of the epoch with the best validation Dice.
    pub model: ModelState,
    pub history: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
}

/// Stack images and masks of same-sized samples into `(B, 1, H, W)` tensors.
pub fn batch_tensors(samples: &[&CineSample]) -> Result<(Tensor, Tensor)> {
    let first = samples.first().ok_or(Error::Empty("batch"))?;
    let (h, w) = first.image.dims();
    let shape = Shape::new(samples.len(), 1, h, w);
    let mut x = Vec::with_capacity(shape.numel());
    let mut t = Vec::with_capacity(shape.numel());
    for s in samples {
        if s.image.dims() != (h, w) {
            return Err(Error::InvalidSize(format!("batch mixes {:?} and {:?} images", (h, w), s.image.dims())));
        }
        x.extend_from_slice(s.image.as_slice());
        t.extend(s.mask.as_slice().iter().map(|&m| m as f64));
    }
    Ok((Tensor::new(shape, x)?, Tensor::new(shape, t)?))
}

/// Masks `σ(logit) > 0.5`, i.e. `logit > 0`, one per sample.
pub fn predict_masks(model: &ModelState, samples: &[&CineSample], exec: Exec) -> Result<Vec<Grid<u8>>> {
    const CHUNK: usize = 16;
    let mut masks = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(CHUNK) {
        let (x, _) = batch_tensors(chunk)?;
        let logits = model.forward_with(exec, &x, Mode::Infer, 0)?;
        let s = logits.shape();
        for n in 0..s.n {
            let plane = &logits.data()[n * s.plane()..(n + 1) * s.plane()];
            masks.push(Grid::from_vec(s.h, s.w, plane.iter().map(|&z| (z > 0.0) as u8).collect()).expect("plane size"));
        }
    }
    Ok(masks)
}

fn mean_dice(model: &ModelState, samples: &[&CineSample], exec: Exec) -> Result<f64> {
    let masks = predict_masks(model, samples, exec)?;
    let mut total = 0.0;
    for (m, s) in masks.iter().zip(samples) {
        total += metrics::dice(m, &s.mask)?;
    }
    Ok(total / samples.len() as f64)
}

/// Train `model` on `train`, selecting the epoch with the best mean Dice on
/// `validation` (or on `train` when `validation` is empty).
pub fn train(
    mut model: ModelState,
    train: &[CineSample],
    validation: &[CineSample],
    cfg: &TrainConfig,
    exec: Exec,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("training split"));
    }
    let select: Vec<&CineSample> = if validation.is_empty() {
        log::warn!("no validation samples; selecting the best epoch on the training set");
        train.iter().collect()
    } else {
        validation.iter().collect()
    };
    let aug_cfg = AugmentConfig { seed: crate::rng::derive_seed(cfg.seed, &[0xA06]), ..cfg.augment_config.clone() };
    let mut optimizer = Optimizer::new(cfg.optimizer, cfg.learning_rate);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ModelState)> = None;
    let mut step = 0u64;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut crate::rng::stream(cfg.seed, &[0x5E1, epoch as u64]));
        let mut loss_sum = 0.0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let originals: Vec<&CineSample> = idx.iter().map(|&i| &train[i]).collect();
            let augmented;
            let batch: Vec<&CineSample> = if cfg.augment {
                let keys: Vec<u64> = idx.iter().map(|&i| (epoch * train.len() + i) as u64).collect();
                augmented = augment_batch(exec, &originals, &aug_cfg, &keys)?;
                augmented.iter().collect()
            } else {
                originals
            };
            let (x, truth) = batch_tensors(&batch)?;

            let mut tape = Tape::with_exec(exec);
            let xv = tape.constant(x);
            let out = model.forward_on_tape(&mut tape, xv, Mode::Train, step, true)?;
            let loss = tape.loss(cfg.loss, out.logits, &truth)?;
            let value = tape.value(loss).item()?;
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            tape.backward(loss)?;
            let grads: Vec<Vec<f64>> = out.params.iter().map(|&p| tape.grad(p).expect("parameter leaf").to_vec()).collect();
            drop(tape);
            let grad_refs: Vec<&[f64]> = grads.iter().map(Vec::as_slice).collect();
            optimizer.step(&mut model.param_slices_mut(), &grad_refs)?;
            model.update_running(&out.batch_stats)?;
            loss_sum += value * idx.len() as f64;
            step += 1;
        }
        let train_loss = loss_sum / train.len() as f64;
        let val_dice = mean_dice(&model, &select, exec)?;
        log::info!("epoch {} loss {train_loss:.5} val dice {val_dice:.4}", epoch + 1);
        history.push(EpochRecord { epoch: epoch + 1, train_loss, val_dice });
        if best.as_ref().is_none_or(|(d, _, _)| val_dice > *d) {
            best = Some((val_dice, epoch + 1, model.clone()));
        }
    }
    Ok(match best {
        Some((_, e, m)) => TrainOutcome { model: m, history, best_epoch: Some(e) },
        None => TrainOutcome { model, history, best_epoch: None },
    })
}

/// Infer-mode metrics over `samples`.
pub fn evaluate(model: &ModelState, samples: &[&CineSample], mode: ApdMode, exec: Exec) -> Result<MetricsReport> {
    if samples.is_empty() {
        return Err(Error::Empty("evaluation split"));
    }
    let masks = predict_masks(model, samples, exec)?;
    let records = exec.try_map(samples.len(), |i| {
        let s = samples[i];
        metrics::evaluate_slice(&s.case_id, &s.slice_id, &masks[i], &s.mask, s.contour.as_ref(), s.spacing_mm, mode)
    })?;
    aggregate(records)
}

pub fn write_history_csv<W: Write>(history: &[EpochRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["epoch", "train_loss", "val_dice"])?;
    for r in history {
        w.write_record([r.epoch.to_string(), r.train_loss.to_string(), r.val_dice.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
