//! Class-weighted training with adaptive moments, deterministic under a
//! fixed seed, keeping the best-validation-accuracy parameters.

use super::layers::{softmax_2d, weighted_cross_entropy};
use super::{backward, forward_eval, forward_train, Architecture, ModelParams};
use crate::config::TrainingConfig;
use crate::error::{PcgError, Result};
use crate::rng::stream;
use ndarray::{Array2, Array3};
use rand::seq::SliceRandom;

/// Inverse-frequency class weights: W_i = N / (K * n_i).
pub fn class_weights(class_counts: &[usize]) -> Result<Vec<f64>> {
    let total: usize = class_counts.iter().sum();
    let k = class_counts.len();
    class_counts
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            if n == 0 {
                Err(PcgError::EmptyClass(i))
            } else {
                Ok(total as f64 / (k as f64 * n as f64))
            }
        })
        .collect()
}

pub fn count_classes(labels: &[usize], n_classes: usize) -> Vec<usize> {
    let mut counts = vec![0usize; n_classes];
    for &y in labels {
        counts[y] += 1;
    }
    counts
}

/// One labeled feature matrix (39 x T).
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub features: Array2<f64>,
    pub class: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

pub struct TrainOutcome {
    pub params: ModelParams,
    pub log: Vec<EpochLog>,
    pub class_weights: Vec<f64>,
    pub best_epoch: usize,
}

struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    fn apply(&mut self, params: &mut ModelParams, grads: &ModelParams) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let grad_tensors = grads.tensors();
        let mut param_tensors = params.tensors_mut();
        debug_assert_eq!(grad_tensors.len(), param_tensors.len());
        let mut slot = 0usize;
        for (p, g) in param_tensors.iter_mut().zip(grad_tensors.iter()) {
            if !p.trainable {
                continue;
            }
            debug_assert_eq!(p.name, g.name);
            let gv: Vec<f64> = g.view.iter().copied().collect();
            if self.m.len() <= slot {
                self.m.push(vec![0.0; gv.len()]);
                self.v.push(vec![0.0; gv.len()]);
            }
            let m = &mut self.m[slot];
            let v = &mut self.v[slot];
            for (i, pv) in p.view.iter_mut().enumerate() {
                let gi = gv[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                *pv -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
            slot += 1;
        }
    }
}

fn stack_batch(samples: &[&TrainSample]) -> Result<(Array3<f64>, Vec<usize>)> {
    let (channels, time) = samples[0].features.dim();
    let mut x = Array3::zeros((samples.len(), channels, time));
    let mut labels = Vec::with_capacity(samples.len());
    for (b, s) in samples.iter().enumerate() {
        if s.features.dim() != (channels, time) {
            return Err(PcgError::ShapeMismatch(format!(
                "sample {b} has shape {:?}, batch expects {:?}",
                s.features.dim(),
                (channels, time)
            )));
        }
        for c in 0..channels {
            for t in 0..time {
                x[[b, c, t]] = s.features[[c, t]];
            }
        }
        labels.push(s.class);
    }
    Ok((x, labels))
}

/// Deterministic batch boundaries; a trailing single sample is folded into
/// the previous batch so training-mode batch norm always sees >= 2.
fn batch_bounds(n: usize, batch_size: usize) -> Vec<(usize, usize)> {
    let mut bounds = Vec::new();
    let mut start = 0;
    while start < n {
        let end = (start + batch_size).min(n);
        bounds.push((start, end));
        start = end;
    }
    if bounds.len() >= 2 {
        let last = bounds[bounds.len() - 1];
        if last.1 - last.0 == 1 {
            let n_bounds = bounds.len();
            bounds[n_bounds - 2].1 = last.1;
            bounds.pop();
        }
    }
    bounds
}

/// Weighted loss and accuracy of a set in eval mode.
pub fn evaluate_set(
    params: &ModelParams,
    samples: &[TrainSample],
    weights: &[f64],
    batch_size: usize,
) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(PcgError::EmptyEvaluation);
    }
    let refs: Vec<&TrainSample> = samples.iter().collect();
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    for (start, end) in batch_bounds(refs.len(), batch_size) {
        let (x, labels) = stack_batch(&refs[start..end])?;
        let probs = forward_eval(params, &x)?;
        let (loss, _) = weighted_cross_entropy(&probs, &labels, weights)?;
        loss_sum += loss * labels.len() as f64;
        for (n, &y) in labels.iter().enumerate() {
            let pred = if probs[[n, 1]] > probs[[n, 0]] { 1 } else { 0 };
            if pred == y {
                correct += 1;
            }
        }
    }
    Ok((loss_sum / refs.len() as f64, correct as f64 / refs.len() as f64))
}

/// Train from a fresh initialization. Patient-disjoint train/val sets are the
/// caller's responsibility. Returns the parameters from the epoch with the
/// best validation accuracy.
pub fn train(
    arch: &Architecture,
    train_set: &[TrainSample],
    val_set: &[TrainSample],
    cfg: &TrainingConfig,
) -> Result<TrainOutcome> {
    if train_set.len() < 2 {
        return Err(PcgError::DegenerateBatch(train_set.len()));
    }
    if val_set.is_empty() {
        return Err(PcgError::EmptyEvaluation);
    }
    let labels: Vec<usize> = train_set.iter().map(|s| s.class).collect();
    let weights = class_weights(&count_classes(&labels, arch.classes))?;

    let mut params = ModelParams::init(arch, cfg.seed)?;
    let mut adam = Adam::new(cfg.learning_rate);
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(ModelParams, f64, usize)> = None;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut stream(cfg.seed, "epoch-shuffle", epoch as u64));

        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (batch_idx, &(start, end)) in batch_bounds(order.len(), cfg.batch_size).iter().enumerate() {
            let refs: Vec<&TrainSample> = order[start..end].iter().map(|&i| &train_set[i]).collect();
            let (x, batch_labels) = stack_batch(&refs)?;
            let mut dropout_rng = stream(
                cfg.seed,
                "dropout",
                (epoch as u64) << 20 | batch_idx as u64,
            );
            let (probs, cache) = forward_train(&mut params, &x, &mut dropout_rng)?;
            let (loss, grad_logits) = weighted_cross_entropy(&probs, &batch_labels, &weights)?;
            let grads = backward(&params, &cache, &grad_logits)?;
            adam.apply(&mut params, &grads);

            loss_sum += loss * batch_labels.len() as f64;
            for (n, &y) in batch_labels.iter().enumerate() {
                let pred = if probs[[n, 1]] > probs[[n, 0]] { 1 } else { 0 };
                if pred == y {
                    correct += 1;
                }
            }
        }
        let train_loss = loss_sum / train_set.len() as f64;
        let train_acc = correct as f64 / train_set.len() as f64;
        let (val_loss, val_acc) = evaluate_set(&params, val_set, &weights, cfg.batch_size)?;
        log.push(EpochLog {
            epoch,
            train_loss,
            train_acc,
            val_loss,
            val_acc,
        });

        let improved = best.as_ref().map_or(true, |(_, acc, _)| val_acc > *acc);
        if improved {
            best = Some((params.clone(), val_acc, epoch));
        } else if let Some((_, _, best_epoch)) = &best {
            if epoch - best_epoch >= cfg.patience {
                break;
            }
        }
    }

    let (best_params, _, best_epoch) = best.unwrap();
    Ok(TrainOutcome {
        params: best_params,
        log,
        class_weights: weights,
        best_epoch,
    })
}

/// Argmax class and CHD probability for a single feature matrix.
pub fn predict_one(params: &ModelParams, features: &Array2<f64>) -> Result<(usize, f64)> {
    let (channels, time) = features.dim();
    let mut x = Array3::zeros((1, channels, time));
    for c in 0..channels {
        for t in 0..time {
            x[[0, c, t]] = features[[c, t]];
        }
    }
    let probs = forward_eval(params, &x)?;
    let class = if probs[[0, 1]] > probs[[0, 0]] { 1 } else { 0 };
    Ok((class, probs[[0, 1]]))
}

/// FNV-1a over the little-endian f64 bytes of every tensor, in walk order.
pub fn params_checksum(params: &ModelParams) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for t in params.tensors() {
        for &v in t.view.iter() {
            for b in v.to_le_bytes() {
                hash ^= b as u64;
                hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
    }
    hash
}

/// Softmax re-export for callers scoring logits themselves.
pub fn probabilities(logits: &Array2<f64>) -> Array2<f64> {
    softmax_2d(logits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{INPUT_CHANNELS, NUM_CLASSES, PE_OMEGA};
    use crate::rng::next_gaussian;

    #[test]
    fn balanced_classes_weigh_one() {
        let w = class_weights(&[50, 50]).unwrap();
        assert!((w[0] - 1.0).abs() < 1e-12);
        assert!((w[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn imbalanced_63_37_matches_hand_values() {
        // class 1 = CHD with 63 samples, class 0 = non-CHD with 37
        let w = class_weights(&[37, 63]).unwrap();
        assert!((w[1] - 0.79365).abs() < 1e-5, "chd weight {}", w[1]);
        assert!((w[0] - 1.35135).abs() < 1e-5, "non-chd weight {}", w[0]);
    }

    #[test]
    fn empty_class_is_rejected() {
        assert!(matches!(
            class_weights(&[100, 0]),
            Err(PcgError::EmptyClass(1))
        ));
    }

    #[test]
    fn batch_bounds_fold_trailing_singleton() {
        assert_eq!(batch_bounds(7, 3), vec![(0, 3), (3, 7)]);
        assert_eq!(batch_bounds(7, 2), vec![(0, 2), (2, 4), (4, 7)]);
        assert_eq!(batch_bounds(4, 4), vec![(0, 4)]);
        assert_eq!(batch_bounds(5, 4), vec![(0, 5)]);
    }

    fn toy_arch() -> Architecture {
        Architecture {
            input_channels: INPUT_CHANNELS,
            channels: 32,
            heads: 2,
            ffn_width: 32,
            dropout: 0.2,
            block1_count: 1,
            block2_count: 1,
            classes: NUM_CLASSES,
            pe_omega: PE_OMEGA,
        }
    }

    /// Two Gaussian blobs separated along a fixed random direction in
    /// feature space: linearly separable by construction.
    fn separable_set(n: usize, time: usize, seed: u64) -> Vec<TrainSample> {
        let mut dir_rng = crate::rng::stream(999, "direction", 0);
        let direction =
            Array2::from_shape_fn((INPUT_CHANNELS, time), |_| next_gaussian(&mut dir_rng));
        let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut rng = crate::rng::stream(seed, "separable", 0);
        (0..n)
            .map(|i| {
                let class = i % 2;
                let sign = if class == 1 { 1.0 } else { -1.0 };
                let noise =
                    Array2::from_shape_fn((INPUT_CHANNELS, time), |_| next_gaussian(&mut rng));
                TrainSample {
                    features: &noise * 0.3 + &direction * (3.0 * sign / norm * (time as f64).sqrt()),
                    class,
                }
            })
            .collect()
    }

    #[test]
    fn separable_toy_set_trains_to_high_accuracy() {
        let arch = toy_arch();
        let samples = separable_set(200, 16, 1);
        let (train_set, val_set) = samples.split_at(160);
        let cfg = TrainingConfig {
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 50,
            patience: 50,
            seed: 7,
        };
        let outcome = train(&arch, train_set, val_set, &cfg).unwrap();
        let weights = outcome.class_weights.clone();
        let (_, train_acc) = evaluate_set(&outcome.params, train_set, &weights, 32).unwrap();
        assert!(train_acc >= 0.99, "train accuracy {train_acc}");

        // loss is finite and non-increasing in 5-epoch moving average
        let losses: Vec<f64> = outcome.log.iter().map(|l| l.train_loss).collect();
        assert!(losses.iter().all(|l| l.is_finite()));
        // dropout keeps the converged plateau wiggling by a few 1e-5, so the
        // monotonicity check carries a small absolute allowance
        let ma: Vec<f64> = losses
            .windows(5)
            .map(|w| w.iter().sum::<f64>() / 5.0)
            .collect();
        for pair in ma.windows(2) {
            assert!(
                pair[1] <= pair[0] + 1e-4,
                "moving average rose: {} -> {}",
                pair[0],
                pair[1]
            );
        }
    }

    #[test]
    fn same_seed_trains_to_identical_checksums() {
        let arch = toy_arch();
        let samples = separable_set(24, 16, 2);
        let (train_set, val_set) = samples.split_at(20);
        let cfg = TrainingConfig {
            learning_rate: 1e-3,
            batch_size: 8,
            epochs: 3,
            patience: 10,
            seed: 11,
        };
        let a = train(&arch, train_set, val_set, &cfg).unwrap();
        let b = train(&arch, train_set, val_set, &cfg).unwrap();
        assert_eq!(params_checksum(&a.params), params_checksum(&b.params));
        for (la, lb) in a.log.iter().zip(&b.log) {
            assert_eq!(la.train_loss.to_bits(), lb.train_loss.to_bits());
            assert_eq!(la.val_acc.to_bits(), lb.val_acc.to_bits());
        }
    }

    #[test]
    fn mixed_shapes_are_rejected() {
        let arch = toy_arch();
        let mut samples = separable_set(8, 16, 3);
        samples[3].features = Array2::zeros((INPUT_CHANNELS, 20));
        let (train_set, val_set) = samples.split_at(6);
        let cfg = TrainingConfig {
            epochs: 1,
            ..Default::default()
        };
        assert!(train(&arch, train_set, val_set, &cfg).is_err());
    }
}
