//! Mini-batch SGD with momentum over planned windows.

use log::info;
use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::model::{backward, calibrate, class_weights, forward_plan, loss_bce, loss_bce_weighted, WindowPlan};
use super::params::{LcscHyperParams, ModelParams, NetworkShape};
use crate::error::{Error, Result};
use crate::eval::snr_from_counts;
use crate::event::Label;
use crate::sim::keyed_rng;

/// Evenly spaced training windows used to scale a fresh initialization.
const CALIBRATION_WINDOWS: usize = 8;

/// A planned window with its ground truth.
#[derive(Debug, Clone)]
pub struct LabeledWindow {
    pub plan: WindowPlan,
    pub truth: Vec<Label>,
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub shape: NetworkShape,
    pub hyper: LcscHyperParams,
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    /// Windows per update step.
    pub batch_windows: usize,
    /// Largest gradient norm applied per step; 0 disables clipping.
    pub clip_norm: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(shape: NetworkShape) -> Self {
        TrainConfig {
            shape,
            hyper: LcscHyperParams::default(),
            epochs: 10,
            lr: 0.05,
            momentum: 0.9,
            batch_windows: 8,
            clip_norm: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_snr_db: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams<f32>,
    pub history: Vec<EpochRecord>,
}

/// Unweighted loss and survivor SNR of `params` over `windows`.
pub fn evaluate(params: &ModelParams<f32>, windows: &[LabeledWindow]) -> Result<(f64, f64)> {
    let per: Vec<(f64, usize, u64, u64)> = windows
        .par_iter()
        .map(|w| {
            let cache = forward_plan(&w.plan, params)?;
            let labeled = w.truth.iter().filter(|&&l| l != Label::Unknown).count();
            let loss = loss_bce(&cache.logits, &w.truth) * labeled as f64;
            let (mut m, mut n) = (0, 0);
            for (&z, &l) in cache.logits.iter().zip(&w.truth) {
                if z > 0.0 {
                    match l {
                        Label::Real => m += 1,
                        Label::Noise => n += 1,
                        Label::Unknown => {}
                    }
                }
            }
            Ok((loss, labeled, m, n))
        })
        .collect::<Result<_>>()?;
    let (mut loss, mut count, mut m, mut n) = (0.0, 0usize, 0u64, 0u64);
    for (l, c, mm, nn) in per {
        loss += l;
        count += c;
        m += mm;
        n += nn;
    }
    let snr = snr_from_counts(m, n, 20.0);
    Ok((loss / count.max(1) as f64, snr))
}

/// Summed weighted loss and gradient over one batch.
fn batch_gradient(params: &ModelParams<f32>, batch: &[&LabeledWindow]) -> Result<(f64, ModelParams<f32>)> {
    let truth: Vec<Label> = batch.iter().flat_map(|w| w.truth.iter().copied()).collect();
    let weights = class_weights(&truth);
    let count = truth.iter().filter(|&&l| l != Label::Unknown).count();
    let parts: Vec<(f64, ModelParams<f32>)> = batch
        .par_iter()
        .map(|w| {
            let cache = forward_plan(&w.plan, params)?;
            let (loss, dl) = loss_bce_weighted(&cache.logits, &w.truth, weights, count);
            Ok((loss, backward(&w.plan, params, &cache, &dl)))
        })
        .collect::<Result<_>>()?;
    // fixed-order reduction keeps the result independent of thread count
    let mut grad = params.zeros_like();
    let mut loss = 0.0;
    for (l, g) in &parts {
        loss += l;
        grad.add_scaled(g, 1.0);
    }
    Ok((loss, grad))
}

/// Seeded initialization rescaled on evenly spaced training windows.
pub fn initial_params(train_set: &[LabeledWindow], config: &TrainConfig) -> Result<ModelParams<f32>> {
    let mut init = ModelParams::<f32>::init(config.shape.clone(), config.hyper, config.seed)?;
    let step = (train_set.len() / CALIBRATION_WINDOWS).max(1);
    let sample: Vec<&WindowPlan> = train_set
        .iter()
        .step_by(step)
        .take(CALIBRATION_WINDOWS)
        .map(|w| &w.plan)
        .collect();
    calibrate(&mut init, &sample)?;
    Ok(init)
}

/// Trains from [`initial_params`]. The history holds one record per epoch;
/// epoch 0 is the untrained model.
pub fn train(train_set: &[LabeledWindow], val_set: &[LabeledWindow], config: &TrainConfig) -> Result<TrainOutcome> {
    let init = initial_params(train_set, config)?;
    train_from(init, train_set, val_set, config)
}

pub fn train_from(
    mut params: ModelParams<f32>,
    train_set: &[LabeledWindow],
    val_set: &[LabeledWindow],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    if train_set.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    // a separate stream from the one used for initialization
    let mut rng = keyed_rng(config.seed, 1);
    let mut velocity = params.zeros_like();
    let lr = config.lr as f32;
    let mu = config.momentum as f32;
    let batch = config.batch_windows.max(1);
    let mut history = Vec::with_capacity(config.epochs + 1);

    let record = |epoch: usize, train_loss: f64, params: &ModelParams<f32>| -> Result<EpochRecord> {
        let (val_loss, val_snr_db) = if val_set.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            evaluate(params, val_set)?
        };
        Ok(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_snr_db,
        })
    };
    let (initial, _) = evaluate(&params, train_set)?;
    history.push(record(0, initial, &params)?);

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut steps = 0usize;
        for chunk in order.chunks(batch) {
            let windows: Vec<&LabeledWindow> = chunk.iter().map(|&i| &train_set[i]).collect();
            let (loss, mut grad) = batch_gradient(&params, &windows)?;
            if !loss.is_finite() || !grad.all_finite() {
                return Err(Error::DivergenceDetected { epoch });
            }
            let norm = grad.norm();
            if config.clip_norm > 0.0 && norm > config.clip_norm {
                grad.scale((config.clip_norm / norm) as f32);
            }
            velocity.scale(mu);
            velocity.add_scaled(&grad, 1.0);
            params.add_scaled(&velocity, -lr);
            params.clamp_thresholds();
            if !params.all_finite() {
                return Err(Error::DivergenceDetected { epoch });
            }
            epoch_loss += loss;
            steps += 1;
        }
        let rec = record(epoch, epoch_loss / steps as f64, &params)?;
        if !rec.train_loss.is_finite() || !params.all_finite() {
            return Err(Error::DivergenceDetected { epoch });
        }
        info!(
            "epoch {epoch}: train loss {:.5}, val loss {:.5}, val SNR {:.2} dB",
            rec.train_loss, rec.val_loss, rec.val_snr_db
        );
        history.push(rec);
    }
    Ok(TrainOutcome { params, history })
}
