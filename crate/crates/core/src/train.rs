//! Training recipe: He initialisation, focal loss, step-decayed learning
//! rate and heavy-ball momentum SGD.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::image::{preprocess_batch, GrayImage, Label, LabeledSample};
use crate::layers::{Parameterized, TensorKind};
use crate::metrics::{error_rates, ScoredSet, DEFAULT_THRESHOLD};
use crate::model::Model;
use crate::ops;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Probabilities are clamped below by this before taking the logarithm.
pub const MIN_PROB: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr0: f64,
    pub decay: f64,
    /// Epochs between learning-rate decays.
    pub decay_period: usize,
    pub momentum: f64,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 0.001,
            decay: 0.1,
            decay_period: 60,
            momentum: 0.9,
            focal_alpha: 1.0,
            focal_gamma: 3.0,
            epochs: 20,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [("lr0", self.lr0), ("decay", self.decay), ("focal_alpha", self.focal_alpha)];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if self.focal_gamma.is_nan() || self.focal_gamma < 0.0 {
            return Err(Error::invalid(format!("focal_gamma must be non-negative, got {}", self.focal_gamma)));
        }
        if self.decay_period == 0 || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("decay_period, epochs and batch_size must be positive"));
        }
        Ok(())
    }
}

/// `lr0 · decay^floor(epoch / period)`, epochs counted from 0.
pub fn lr_at_epoch(config: &TrainConfig, epoch: usize) -> f64 {
    config.lr0 * libm::pow(config.decay, (epoch / config.decay_period) as f64)
}

/// Mean focal loss `−α(1 − p_t)^γ · ln p_t` over the batch, where `p_t` is the
/// two-way softmax probability of the true class. Returns the loss and its
/// gradient with respect to the logits.
pub fn focal_loss<T: Scalar>(logits: &Tensor<T>, labels: &[u8], alpha: f64, gamma: f64) -> Result<(f64, Tensor<T>)> {
    let s = logits.shape();
    if s.sample_len() != 2 {
        return Err(Error::invalid(format!("focal_loss: expected 2 logits per row, got {}", s.sample_len())));
    }
    if labels.len() != s.n {
        return Err(Error::invalid(format!("focal_loss: {} labels for {} rows", labels.len(), s.n)));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::invalid(format!("focal_loss: label {bad} is not binary")));
    }
    let inv_n = 1.0 / s.n.max(1) as f64;
    let mut total = 0.0;
    let mut grad = Tensor::zeros(s);
    for (i, &label) in labels.iter().enumerate() {
        let z = [logits.data()[2 * i].as_f64(), logits.data()[2 * i + 1].as_f64()];
        let (t, o) = (label as usize, 1 - label as usize);
        let p = ops::activation::sigmoid_scalar(z[t] - z[o]);
        let q = 1.0 - p;
        let clamped = p < MIN_PROB;
        let lp = libm::log(p.max(MIN_PROB));
        let qg = libm::pow(q, gamma);
        total += -alpha * qg * lp;
        // dL/dz_t = α[γ(1−p)^γ·p·ln p − (1−p)^(γ+1)]; the clamp freezes ln p.
        let dlog = if clamped { 0.0 } else { qg * q };
        let g = alpha * (gamma * qg * p * lp - dlog) * inv_n;
        grad.data_mut()[2 * i + t] = T::from_f64(g);
        grad.data_mut()[2 * i + o] = T::from_f64(-g);
    }
    Ok((total * inv_n, grad))
}

/// Draws every convolution and linear weight from `N(0, 2 / fan_in)` and resets
/// biases, batch-norm affine parameters and running statistics. The draw order
/// follows [`Parameterized::visit_mut`], so a seed fixes the model exactly.
pub fn he_initialize<T: Scalar, P: Parameterized<T>>(model: &mut P, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    model.visit_mut("", &mut |_, kind, t| {
        let s = t.shape();
        let fan_in = match kind {
            TensorKind::ConvWeight => s.c * s.h * s.w,
            TensorKind::LinearWeight => s.n,
            _ => 0,
        };
        match kind {
            TensorKind::ConvWeight | TensorKind::LinearWeight => {
                let normal = Normal::new(0.0, libm::sqrt(2.0 / fan_in.max(1) as f64)).expect("finite std");
                t.data_mut().iter_mut().for_each(|v| *v = T::from_f64(normal.sample(&mut rng)));
            }
            TensorKind::Bias | TensorKind::BnShift | TensorKind::RunningMean => t.data_mut().iter_mut().for_each(|v| *v = T::zero()),
            TensorKind::BnScale | TensorKind::RunningVar => t.data_mut().iter_mut().for_each(|v| *v = T::one()),
        }
        t.zero_grad();
    });
}

/// Heavy-ball momentum: `v ← momentum·v + g; w ← w − lr·v`. A non-finite
/// gradient aborts the step before anything is modified.
pub fn sgd_momentum_step<T: Scalar>(weights: &mut [T], grads: &[T], velocity: &mut [T], lr: T, momentum: T) -> Result<()> {
    if weights.len() != grads.len() || weights.len() != velocity.len() {
        return Err(Error::invalid(format!(
            "sgd: length mismatch (weights {}, grads {}, velocity {})",
            weights.len(),
            grads.len(),
            velocity.len()
        )));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::invalid(format!("sgd: non-finite gradient at element {i}")));
    }
    for ((w, &g), v) in weights.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        *v = momentum * *v + g;
        *w -= lr * *v;
    }
    Ok(())
}

/// Momentum SGD over every learned tensor of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd<T> {
    pub momentum: T,
    velocity: Vec<Vec<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(momentum: f64) -> Self {
        Sgd {
            momentum: T::from_f64(momentum),
            velocity: Vec::new(),
        }
    }

    /// Applies one update and clears the gradients. If any gradient is
    /// non-finite, nothing is updated.
    pub fn step<P: Parameterized<T>>(&mut self, model: &mut P, lr: f64) -> Result<()> {
        let mut bad = None;
        model.visit("", &mut |name, kind, t| {
            if bad.is_none() && kind.is_learned() && t.grad().is_some_and(|g| g.iter().any(|v| !v.is_finite())) {
                bad = Some(alloc::string::String::from(name));
            }
        });
        if let Some(name) = bad {
            return Err(Error::invalid(format!("sgd: non-finite gradient in {name}")));
        }
        let lr = T::from_f64(lr);
        let momentum = self.momentum;
        let velocity = &mut self.velocity;
        let mut idx = 0;
        let mut result = Ok(());
        model.visit_mut("", &mut |_, kind, t| {
            if !kind.is_learned() || result.is_err() {
                return;
            }
            if velocity.len() <= idx {
                velocity.push(vec![T::zero(); t.len()]);
            }
            let (w, g) = t.value_and_grad_mut();
            result = sgd_momentum_step(w, g, &mut velocity[idx], lr, momentum);
            g.iter_mut().for_each(|v| *v = T::zero());
            idx += 1;
        });
        result
    }
}

/// Deterministic sample order for `epoch`.
pub fn epoch_order(len: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    order.shuffle(&mut rng);
    order
}

/// One optimisation step on a batch; returns the loss before the update.
pub fn train_step<T: Scalar>(model: &mut Model<T>, opt: &mut Sgd<T>, batch: &Tensor<T>, labels: &[u8], lr: f64, config: &TrainConfig) -> Result<f64> {
    model.zero_grad();
    let (logits, cache) = model.forward_train(batch)?;
    let (loss, grad) = focal_loss(&logits, labels, config.focal_alpha, config.focal_gamma)?;
    if !loss.is_finite() {
        return Err(Error::invalid("training loss is not finite"));
    }
    model.backward(&cache, &grad)?;
    opt.step(model, lr)?;
    Ok(loss)
}

/// Probability of the "real" class for each sample, using running statistics.
pub fn predict_scores<T: Scalar>(model: &Model<T>, batch: &Tensor<T>) -> Result<Vec<f64>> {
    let probs = ops::softmax2(&model.forward(batch)?)?;
    Ok(probs.data().chunks(2).map(|r| r[1].as_f64()).collect())
}

/// Per-epoch training record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// Zero-based.
    pub epoch: usize,
    pub lr: f64,
    /// Mean of the batch losses.
    pub train_loss: f64,
    /// ACER on the validation set at threshold 0.5.
    pub val_acer: f64,
}

#[derive(Debug, Clone)]
pub struct FitOutcome<T> {
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
    /// Weights after `best_epoch`.
    pub best: Model<T>,
    /// Weights after the final epoch.
    pub last: Model<T>,
}

/// Samples per forward pass when scoring.
pub const EVAL_BATCH: usize = 16;

fn check_classes(set: &[LabeledSample], what: &str) -> Result<()> {
    if set.is_empty() {
        return Err(Error::invalid(format!("{what}: empty manifest")));
    }
    let reals = set.iter().filter(|s| s.label == Label::Real).count();
    if reals == 0 || reals == set.len() {
        return Err(Error::invalid(format!(
            "{what}: both classes required ({reals} real, {} fake)",
            set.len() - reals
        )));
    }
    Ok(())
}

/// Scores every sample with running statistics.
pub fn score_samples<T: Scalar>(model: &Model<T>, samples: &[LabeledSample]) -> Result<Vec<f64>> {
    let mut scores = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(EVAL_BATCH) {
        let images: Vec<&GrayImage> = chunk.iter().map(|s| &s.image).collect();
        scores.extend(predict_scores(model, &preprocess_batch(&images)?)?);
    }
    Ok(scores)
}

/// Validation ACER at the default threshold.
pub fn validation_acer<T: Scalar>(model: &Model<T>, val: &[LabeledSample]) -> Result<f64> {
    let scores = score_samples(model, val)?;
    let set = ScoredSet::new(scores, val.iter().map(|s| s.label).collect())?;
    Ok(error_rates(&set, DEFAULT_THRESHOLD).acer)
}

/// Trains for `config.epochs` epochs, scoring the validation set after each
/// one. The best checkpoint has the lowest validation ACER; ties go to the
/// earlier epoch.
pub fn fit<T: Scalar>(
    mut model: Model<T>,
    train: &[LabeledSample],
    val: &[LabeledSample],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<FitOutcome<T>> {
    config.validate()?;
    check_classes(train, "training set")?;
    check_classes(val, "validation set")?;
    let mut opt = Sgd::new(config.momentum);
    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, Model<T>)> = None;
    for epoch in 0..config.epochs {
        let lr = lr_at_epoch(config, epoch);
        let order = epoch_order(train.len(), config.seed, epoch);
        let mut total = 0.0;
        let mut batches = 0usize;
        for idx in order.chunks(config.batch_size) {
            let images: Vec<&GrayImage> = idx.iter().map(|&i| &train[i].image).collect();
            let labels: Vec<u8> = idx.iter().map(|&i| train[i].label.as_u8()).collect();
            let batch = preprocess_batch(&images)?;
            total += train_step(&mut model, &mut opt, &batch, &labels, lr, config)?;
            batches += 1;
        }
        let record = EpochRecord {
            epoch,
            lr,
            train_loss: total / batches as f64,
            val_acer: validation_acer(&model, val)?,
        };
        on_epoch(&record);
        log.push(record);
        if best.as_ref().is_none_or(|(acer, _, _)| record.val_acer < *acer) {
            best = Some((record.val_acer, epoch, model.clone()));
        }
    }
    let (_, best_epoch, best) = best.ok_or_else(|| Error::invalid("epochs must be positive"))?;
    Ok(FitOutcome {
        log,
        best_epoch,
        best,
        last: model,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn schedule_boundaries() {
        let c = TrainConfig::default();
        assert_eq!(lr_at_epoch(&c, 0), 0.001);
        assert_eq!(lr_at_epoch(&c, 59), 0.001);
        assert!((lr_at_epoch(&c, 60) - 0.0001).abs() < 1e-18);
        assert!((lr_at_epoch(&c, 125) - 0.00001).abs() < 1e-18);
    }

    #[test]
    fn focal_half_probability() {
        let logits = Tensor::<f64>::new(Shape::matrix(1, 2), vec![0.3, 0.3]).unwrap();
        let (l, _) = focal_loss(&logits, &[1], 1.0, 3.0).unwrap();
        assert!((l - 0.125 * core::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn focal_confident_correct_is_zero() {
        let logits = Tensor::<f64>::new(Shape::matrix(1, 2), vec![-40.0, 40.0]).unwrap();
        let (l, _) = focal_loss(&logits, &[1], 1.0, 3.0).unwrap();
        assert!(l < 1e-30);
    }

    #[test]
    fn focal_rejects_bad_labels() {
        let logits = Tensor::<f64>::zeros(Shape::matrix(1, 2));
        assert!(focal_loss(&logits, &[2], 1.0, 3.0).is_err());
        assert!(focal_loss(&logits, &[0, 1], 1.0, 3.0).is_err());
    }

    #[test]
    fn focal_clamps_hopeless_predictions() {
        let logits = Tensor::<f64>::new(Shape::matrix(1, 2), vec![100.0, -100.0]).unwrap();
        let (l, g) = focal_loss(&logits, &[1], 1.0, 3.0).unwrap();
        assert!((l - -libm::log(MIN_PROB)).abs() < 1e-9);
        assert!(g.all_finite());
    }

    #[test]
    fn sgd_cases() {
        let mut w = [2.0f64, -3.0];
        let g = w;
        let mut v = [0.0; 2];
        sgd_momentum_step(&mut w, &g, &mut v, 1.0, 0.0).unwrap();
        assert_eq!(w, [0.0, 0.0]);

        // two steps with constant gradient: Δw = lr·g·(1 + 1.9)
        let mut w = [1.0f64];
        let mut v = [0.0];
        for _ in 0..2 {
            sgd_momentum_step(&mut w, &[0.5], &mut v, 0.1, 0.9).unwrap();
        }
        assert!((1.0 - w[0] - 0.1 * 0.5 * 2.9).abs() < 1e-15);

        let mut w = [1.0f64];
        let mut v = [1.0];
        sgd_momentum_step(&mut w, &[0.0], &mut v, 0.1, 0.9).unwrap();
        assert!((v[0] - 0.9).abs() < 1e-15);

        let mut w = [1.0f64];
        let mut v = [0.0];
        assert!(sgd_momentum_step(&mut w, &[f64::NAN], &mut v, 0.1, 0.9).is_err());
        assert_eq!(w, [1.0]);
    }

    #[test]
    fn epoch_orders_are_permutations() {
        let a = epoch_order(50, 7, 0);
        let b = epoch_order(50, 7, 1);
        assert_ne!(a, b);
        assert_eq!(a, epoch_order(50, 7, 0));
        let mut s = a.clone();
        s.sort_unstable();
        assert_eq!(s, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let c = TrainConfig { focal_gamma: -1.0, ..TrainConfig::default() };
        assert!(c.validate().is_err());
        let c = TrainConfig { batch_size: 0, ..TrainConfig::default() };
        assert!(c.validate().is_err());
    }
}
