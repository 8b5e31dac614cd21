//! Mini-batch Adam training.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ModelParams, NetError, Result};
use crate::frameio::{Label, RespirationTrace};

pub const DEFAULT_LR: f64 = 1e-3;
pub const DEFAULT_BATCH: usize = 32;
pub const DEFAULT_EPOCHS: usize = 50;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Seeds the per-epoch shuffle.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: DEFAULT_LR,
            epochs: DEFAULT_EPOCHS,
            batch_size: DEFAULT_BATCH,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(NetError::Config(format!(
                "learning rate {} is invalid",
                self.lr
            )));
        }
        if self.batch_size == 0 {
            return Err(NetError::Config("batch size must be positive".into()));
        }
        Ok(())
    }
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// `"train"` or `"val"`
    pub split: &'static str,
    pub loss: f64,
    pub accuracy: f64,
}

/// Adam moment estimates, shaped like the model.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    step: i32,
    m: ModelParams,
    v: ModelParams,
}

impl Adam {
    pub fn new(model: &ModelParams, lr: f64) -> Self {
        Self {
            lr,
            step: 0,
            m: model.zeros_like(),
            v: model.zeros_like(),
        }
    }

    pub fn update(&mut self, model: &mut ModelParams, grad: &ModelParams) {
        self.step += 1;
        let c1 = 1.0 - BETA1.powi(self.step);
        let c2 = 1.0 - BETA2.powi(self.step);
        let blocks = model
            .blocks_mut()
            .into_iter()
            .zip(grad.blocks())
            .zip(self.m.blocks_mut())
            .zip(self.v.blocks_mut());
        for (((p, g), m), v) in blocks {
            for i in 0..p.values.len() {
                let gi = g.values[i];
                m.values[i] = BETA1 * m.values[i] + (1.0 - BETA1) * gi;
                v.values[i] = BETA2 * v.values[i] + (1.0 - BETA2) * gi * gi;
                let m_hat = m.values[i] / c1;
                let v_hat = v.values[i] / c2;
                p.values[i] -= self.lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
    }
}

fn labels(data: &[RespirationTrace]) -> Result<Vec<Label>> {
    data.iter()
        .enumerate()
        .map(|(i, t)| t.label.ok_or(NetError::MissingLabel(i)))
        .collect()
}

/// Mean loss and accuracy of `model` on labelled traces.
pub fn evaluate(model: &ModelParams, data: &[RespirationTrace]) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(NetError::EmptyDataset);
    }
    let labels = labels(data)?;
    let mut total = 0.0;
    let mut correct = 0usize;
    for (trace, &label) in data.iter().zip(&labels) {
        let probs = model.forward_unchecked(trace.values())?.probabilities;
        total += super::loss(&probs, label);
        let pred = if probs[1] > probs[0] {
            Label::Abnormal
        } else {
            Label::Normal
        };
        correct += usize::from(pred == label);
    }
    let n = data.len() as f64;
    Ok((total / n, correct as f64 / n))
}

/// Trains `model` on `data`, optionally scoring `validation` after each
/// epoch. Training rows report the running mean over the epoch's batches.
/// Runs are bit-reproducible for a fixed seed.
pub fn train(
    mut model: ModelParams,
    data: &[RespirationTrace],
    validation: Option<&[RespirationTrace]>,
    config: &TrainConfig,
) -> Result<(ModelParams, Vec<EpochLog>)> {
    config.validate()?;
    if data.is_empty() {
        return Err(NetError::EmptyDataset);
    }
    let labels = labels(data)?;
    for t in data {
        model.check_inputs(t.values())?;
    }
    if let Some(v) = validation {
        self::labels(v)?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(&model, config.lr);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = Vec::new();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut correct = 0usize;
        for (batch_index, batch) in order.chunks(config.batch_size).enumerate() {
            let mut grad = model.zeros_like();
            let mut batch_loss = 0.0;
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let bp = model.backward_unchecked(data[i].values(), labels[i]);
                batch_loss += bp.loss;
                let pred = if bp.probabilities[1] > bp.probabilities[0] {
                    Label::Abnormal
                } else {
                    Label::Normal
                };
                correct += usize::from(pred == labels[i]);
                grad.add_scaled(&bp.grads, scale);
            }
            if !batch_loss.is_finite() || !grad.is_finite() {
                return Err(NetError::Divergence {
                    epoch,
                    batch: batch_index,
                });
            }
            epoch_loss += batch_loss;
            adam.update(&mut model, &grad);
            if !model.is_finite() {
                return Err(NetError::Divergence {
                    epoch,
                    batch: batch_index,
                });
            }
        }
        let n = data.len() as f64;
        log.push(EpochLog {
            epoch,
            split: "train",
            loss: epoch_loss / n,
            accuracy: correct as f64 / n,
        });
        if let Some(v) = validation.filter(|v| !v.is_empty()) {
            let (loss, accuracy) = evaluate(&model, v)?;
            log.push(EpochLog {
                epoch,
                split: "val",
                loss,
                accuracy,
            });
        }
    }
    Ok((model, log))
}

pub fn log_to_csv(log: &[EpochLog]) -> String {
    let mut out = String::from("epoch,split,loss,accuracy\n");
    for row in log {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            row.epoch, row.split, row.loss, row.accuracy
        );
    }
    out
}

pub fn write_log(path: &Path, log: &[EpochLog]) -> Result<()> {
    fs::write(path, log_to_csv(log))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::super::{Architecture, Variant};
    use super::*;

    fn toy(n: usize) -> Vec<RespirationTrace> {
        (0..n)
            .map(|i| {
                let label = if i % 2 == 0 {
                    Label::Normal
                } else {
                    Label::Abnormal
                };
                let f = if label == Label::Normal { 0.1 } else { 0.35 };
                let v: Vec<f64> = (0..24)
                    .map(|t| (std::f64::consts::TAU * f * t as f64 + i as f64).sin() * 1.4)
                    .collect();
                RespirationTrace::new(v, 1.0).unwrap().with_label(label)
            })
            .collect()
    }

    #[test]
    fn zero_learning_rate_keeps_weights() {
        let m = ModelParams::init(Architecture::new(Variant::BiGruAt, 4, 3), 5);
        let cfg = TrainConfig {
            lr: 0.0,
            epochs: 2,
            batch_size: 3,
            seed: 1,
        };
        let (trained, log) = train(m.clone(), &toy(7), None, &cfg).unwrap();
        assert_eq!(trained, m);
        assert_eq!(log.len(), 2);
    }

    #[test]
    fn training_is_reproducible() {
        let m = ModelParams::init(Architecture::new(Variant::GruAt, 4, 3), 5);
        let cfg = TrainConfig {
            lr: 0.01,
            epochs: 3,
            batch_size: 4,
            seed: 9,
        };
        let data = toy(10);
        let a = train(m.clone(), &data, Some(&data), &cfg).unwrap();
        let b = train(m, &data, Some(&data), &cfg).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        assert_eq!(a.1.len(), 6);
    }

    #[test]
    fn unlabeled_data_is_rejected() {
        let m = ModelParams::init(Architecture::new(Variant::Lstm, 4, 3), 5);
        let mut data = toy(3);
        data[1].label = None;
        let r = train(m, &data, None, &TrainConfig::default());
        assert!(matches!(r, Err(NetError::MissingLabel(1))));
    }

    #[test]
    fn huge_learning_rate_reports_divergence() {
        let m = ModelParams::init(Architecture::new(Variant::GruAt, 4, 3), 5);
        let cfg = TrainConfig {
            lr: f64::MAX,
            epochs: 5,
            batch_size: 2,
            seed: 0,
        };
        let r = train(m, &toy(6), None, &cfg);
        assert!(matches!(r, Err(NetError::Divergence { .. })), "{r:?}");
    }

    #[test]
    fn csv_header() {
        let csv = log_to_csv(&[EpochLog {
            epoch: 1,
            split: "train",
            loss: 0.5,
            accuracy: 0.75,
        }]);
        assert_eq!(csv, "epoch,split,loss,accuracy\n1,train,0.5,0.75\n");
    }
}
