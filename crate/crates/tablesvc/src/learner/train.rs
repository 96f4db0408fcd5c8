//! SGD training loop, prediction, and class-weight defaults.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    encode_dataset, forward, grad_with_stats, init_for_signature, EncodedFrame, HeadParams,
    LearnerError, ModelSignature, Target,
};
use crate::dataset::{Dataset, LabelMode};

/// One learning-rate segment of the schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSegment {
    pub learning_rate: f64,
    pub epochs: usize,
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub schedule: Vec<ScheduleSegment>,
    pub batch_size: usize,
    pub label_mode: LabelMode,
    pub seed: u64,
    pub frozen_projection: bool,
    /// Positive-class weights for multi-label loss; `None` means derive
    /// them from label frequencies (inverse frequency capped at 20).
    pub class_weights: Option<Vec<f64>>,
}

impl TrainConfig {
    /// The service-head schedule: 1e-2 for 40 epochs, 1e-3 for 40, 1e-5
    /// for 20 (100 epochs total).
    pub fn service_default(label_mode: LabelMode, seed: u64) -> Self {
        TrainConfig {
            schedule: vec![
                ScheduleSegment { learning_rate: 1e-2, epochs: 40 },
                ScheduleSegment { learning_rate: 1e-3, epochs: 40 },
                ScheduleSegment { learning_rate: 1e-5, epochs: 20 },
            ],
            batch_size: 32,
            label_mode,
            seed,
            frozen_projection: true,
            class_weights: None,
        }
    }

    /// The base-head schedule: 2e-4 for 40 epochs then 2e-5 for 10.
    pub fn base_head(label_mode: LabelMode, seed: u64) -> Self {
        TrainConfig {
            schedule: vec![
                ScheduleSegment { learning_rate: 2e-4, epochs: 40 },
                ScheduleSegment { learning_rate: 2e-5, epochs: 10 },
            ],
            batch_size: 32,
            label_mode,
            seed,
            frozen_projection: true,
            class_weights: None,
        }
    }

    pub fn total_epochs(&self) -> usize {
        self.schedule.iter().map(|s| s.epochs).sum()
    }

    fn validate(&self) -> Result<(), LearnerError> {
        if self.schedule.is_empty() {
            return Err(LearnerError::InvalidConfig {
                detail: "schedule must be non-empty".into(),
            });
        }
        for seg in &self.schedule {
            if !(seg.learning_rate > 0.0) || !seg.learning_rate.is_finite() {
                return Err(LearnerError::InvalidConfig {
                    detail: format!("learning rate must be > 0, got {}", seg.learning_rate),
                });
            }
            if seg.epochs == 0 {
                return Err(LearnerError::InvalidConfig {
                    detail: "every schedule segment needs ≥ 1 epoch".into(),
                });
            }
        }
        if self.batch_size == 0 {
            return Err(LearnerError::InvalidConfig {
                detail: "batch_size must be ≥ 1".into(),
            });
        }
        if let Some(w) = &self.class_weights {
            if w.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
                return Err(LearnerError::InvalidConfig {
                    detail: "class weights must be positive".into(),
                });
            }
        }
        Ok(())
    }
}

/// Loss and simple accuracy of one epoch, measured on the training batches
/// at the parameters used for each step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub learning_rate: f64,
    pub mean_loss: f64,
    pub train_accuracy: f64,
}

/// Inverse-label-frequency positive-class weights, capped at 20. Classes
/// with no positives get the cap.
pub fn auto_class_weights(frames: &[EncodedFrame], out_classes: usize) -> Vec<f64> {
    let mut positives = vec![0usize; out_classes];
    let mut total = 0usize;
    for frame in frames {
        if let Target::Multi(flags) = &frame.target {
            total += 1;
            for (c, &y) in flags.iter().enumerate() {
                if y {
                    positives[c] += 1;
                }
            }
        }
    }
    positives
        .iter()
        .map(|&n_pos| {
            if n_pos == 0 || total == 0 {
                20.0
            } else {
                (total as f64 / n_pos as f64).min(20.0)
            }
        })
        .collect()
}

/// Encode the dataset, initialize every parameter the signature calls
/// for, and run SGD. Deterministic per (dataset, signature, config).
pub fn train(
    dataset: &Dataset,
    signature: &ModelSignature,
    config: &TrainConfig,
) -> Result<(HeadParams, Vec<EpochStats>), LearnerError> {
    if dataset.is_empty() {
        return Err(LearnerError::EmptyDataset);
    }
    if config.label_mode != signature.label_mode {
        return Err(LearnerError::InvalidConfig {
            detail: "config label_mode disagrees with signature".into(),
        });
    }
    let encoded = encode_dataset(dataset, signature)?;
    let params = init_for_signature(
        signature,
        &dataset.manifest.dims,
        config.seed,
        config.frozen_projection,
    )?;
    let mut config = config.clone();
    if config.class_weights.is_none() && signature.label_mode == LabelMode::MultiLabel {
        config.class_weights = Some(auto_class_weights(&encoded, signature.out_classes));
    }
    train_encoded(&encoded, signature, params, &config)
}

/// SGD over already-encoded examples, starting from the given params.
/// The schedule's segments run in declared order with a seeded shuffle
/// each epoch; a non-finite loss aborts with `DivergedLoss`.
pub fn train_encoded(
    frames: &[EncodedFrame],
    signature: &ModelSignature,
    mut params: HeadParams,
    config: &TrainConfig,
) -> Result<(HeadParams, Vec<EpochStats>), LearnerError> {
    config.validate()?;
    if frames.is_empty() {
        return Err(LearnerError::EmptyDataset);
    }
    let class_weights = config.class_weights.as_deref();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut history = Vec::with_capacity(config.total_epochs());
    let mut indices: Vec<usize> = (0..frames.len()).collect();
    let mut epoch = 0usize;
    for segment in &config.schedule {
        for _ in 0..segment.epochs {
            indices.shuffle(&mut rng);
            let mut loss_sum = 0.0f64;
            let mut correct = 0usize;
            let mut total = 0usize;
            for chunk in indices.chunks(config.batch_size) {
                let batch: Vec<EncodedFrame> =
                    chunk.iter().map(|&i| frames[i].clone()).collect();
                let (grads, stats) = grad_with_stats(&params, signature, &batch, class_weights)?;
                if !stats.loss.is_finite() {
                    return Err(LearnerError::DivergedLoss { epoch });
                }
                loss_sum += stats.loss * batch.len() as f64;
                correct += stats.correct;
                total += stats.total;
                apply_sgd(&mut params, &grads, segment.learning_rate);
            }
            let mean_loss = loss_sum / frames.len() as f64;
            if !mean_loss.is_finite() {
                return Err(LearnerError::DivergedLoss { epoch });
            }
            history.push(EpochStats {
                epoch,
                learning_rate: segment.learning_rate,
                mean_loss,
                train_accuracy: if total == 0 {
                    0.0
                } else {
                    correct as f64 / total as f64
                },
            });
            epoch += 1;
        }
    }
    Ok((params, history))
}

fn apply_sgd(params: &mut HeadParams, grads: &super::Grads, lr: f64) {
    for (p, g) in params.weights.iter_mut().zip(grads.weights.iter()) {
        *p -= lr * g;
    }
    for (p, g) in params.bias.iter_mut().zip(grads.bias.iter()) {
        *p -= lr * g;
    }
    for (key, g_att) in &grads.attention {
        let att = params
            .attention
            .get_mut(key)
            .expect("grads mirror params");
        for (p, g) in att.a.iter_mut().zip(g_att.a.iter()) {
            *p -= lr * g;
        }
        att.b -= lr * g_att.b;
    }
    if let Some(proj) = params.projection.as_mut() {
        if !proj.frozen {
            for (p, g) in proj.matrix.iter_mut().zip(grads.projection.iter()) {
                *p -= lr * g;
            }
        }
    }
}

/// One frame's predicted probabilities and hard labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictedFrame {
    pub probs: Vec<f64>,
    pub hard: Vec<bool>,
}

/// Predict every frame. Multi-label hard labels compare each probability
/// to its per-class threshold (default 0.5, flag set when p ≥ threshold);
/// exclusive mode takes the argmax with ties broken toward the lowest
/// class index.
pub fn predict(
    params: &HeadParams,
    signature: &ModelSignature,
    frames: &[EncodedFrame],
    thresholds: Option<&[f64]>,
) -> Result<Vec<PredictedFrame>, LearnerError> {
    if let Some(t) = thresholds {
        if t.len() != signature.out_classes {
            return Err(LearnerError::DimMismatch {
                detail: format!(
                    "{} thresholds for {} classes",
                    t.len(),
                    signature.out_classes
                ),
            });
        }
    }
    let mut out = Vec::with_capacity(frames.len());
    for frame in frames {
        let fwd = forward(params, signature, frame)?;
        let hard = match signature.label_mode {
            LabelMode::MultiLabel => fwd
                .probs
                .iter()
                .enumerate()
                .map(|(c, &p)| p >= thresholds.map(|t| t[c]).unwrap_or(0.5))
                .collect(),
            LabelMode::Exclusive => {
                let mut best = 0usize;
                for (c, &p) in fwd.probs.iter().enumerate() {
                    if p > fwd.probs[best] {
                        best = c;
                    }
                }
                (0..signature.out_classes).map(|c| c == best).collect()
            }
        };
        out.push(PredictedFrame {
            probs: fwd.probs,
            hard,
        });
    }
    Ok(out)
}
