use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{argmax, loss_total, ActConfig, ActError, ActModel};
use crate::autodiff::{cosine_lr, Adam, Graph, Tensor};

/// Feature rows with one class index per frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sequence {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Frames between consecutive training window ends.
    pub stride: usize,
    /// Frames between evaluated positions during validation.
    pub val_stride: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            lr: 1e-3,
            batch_size: 32,
            stride: 1,
            val_stride: 1,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Mean training loss per epoch.
    pub loss: Vec<f64>,
    /// Validation final-step accuracy per epoch (empty without a validation set).
    pub val_acc: Vec<f64>,
    pub best_epoch: usize,
    pub best_val_acc: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: ActModel,
    pub history: TrainHistory,
}

/// Window ending at frame `end`, left-padded with frame 0.
fn window_indices(end: usize, n: usize) -> impl Iterator<Item = usize> {
    (0..n).map(move |k| (end + k + 1).saturating_sub(n))
}

fn check_sequences(cfg: &ActConfig, seqs: &[Sequence]) -> Result<(), ActError> {
    for (index, s) in seqs.iter().enumerate() {
        if s.x.len() != s.y.len() {
            return Err(ActError::BadSequence {
                index,
                reason: "feature and label counts differ",
            });
        }
        if s.x.is_empty() {
            return Err(ActError::BadSequence { index, reason: "empty" });
        }
        if s.x.iter().any(|r| r.len() != cfg.input_dim) {
            return Err(ActError::BadSequence {
                index,
                reason: "feature width differs from input_dim",
            });
        }
        if s.x.iter().flatten().any(|v| !v.is_finite()) {
            return Err(ActError::NonFinite);
        }
        if let Some(&label) = s.y.iter().find(|&&y| y >= cfg.classes) {
            return Err(ActError::LabelRange {
                label,
                classes: cfg.classes,
            });
        }
    }
    Ok(())
}

/// Final-step predictions at every `stride`-th frame of `seq` (window ending at
/// that frame, left-padded at the start). Returns `(frame, class, probs)`.
pub fn evaluate_stream(model: &ActModel, seq: &[Vec<f64>], stride: usize) -> Result<Vec<(usize, usize, Vec<f64>)>, ActError> {
    let n = model.config().window;
    let c = model.config().classes;
    let ends: Vec<usize> = (0..seq.len()).step_by(stride.max(1)).collect();
    let mut out = Vec::with_capacity(ends.len());
    for chunk in ends.chunks(64) {
        let windows: Vec<Vec<Vec<f64>>> = chunk
            .iter()
            .map(|&e| window_indices(e, n).map(|i| seq[i].clone()).collect())
            .collect();
        let refs: Vec<&[Vec<f64>]> = windows.iter().map(|w| w.as_slice()).collect();
        let probs = model.classify_batch(&refs)?;
        let per = probs.len() / chunk.len();
        for (k, &e) in chunk.iter().enumerate() {
            let last = &probs.data()[k * per + per - c..(k + 1) * per];
            out.push((e, argmax(last), last.to_vec()));
        }
    }
    Ok(out)
}

fn accuracy_on(model: &ActModel, seqs: &[Sequence], stride: usize) -> Result<f64, ActError> {
    let mut hit = 0usize;
    let mut total = 0usize;
    for s in seqs {
        for (e, pred, _) in evaluate_stream(model, &s.x, stride)? {
            hit += usize::from(pred == s.y[e]);
            total += 1;
        }
    }
    Ok(if total == 0 { 0.0 } else { hit as f64 / total as f64 })
}

/// Adam with cosine decay over sliding windows; returns the parameters with the
/// best validation accuracy (last epoch when `val` is empty).
pub fn train(cfg: ActConfig, tc: &TrainConfig, train: &[Sequence], val: &[Sequence]) -> Result<TrainOutcome, ActError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(ActError::EmptyCorpus);
    }
    if tc.batch_size == 0 || tc.stride == 0 || !(tc.lr > 0.0) {
        return Err(ActError::Config("batch_size, stride and lr must be positive"));
    }
    check_sequences(&cfg, train)?;
    check_sequences(&cfg, val)?;

    let n = cfg.window;
    let per_step = cfg.variant.per_step();
    let lambda = if cfg.variant.smoothed() { cfg.lambda } else { 0.0 };
    let windows: Vec<(usize, usize)> = train
        .iter()
        .enumerate()
        .flat_map(|(s, seq)| (0..seq.x.len()).step_by(tc.stride).map(move |e| (s, e)))
        .collect();

    let mut model = ActModel::init(cfg.clone(), tc.seed)?;
    let mut adam = Adam::new(model.params());
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed.wrapping_add(0x9e37_79b9));
    let steps_per_epoch = windows.len().div_ceil(tc.batch_size);
    let total_steps = tc.epochs * steps_per_epoch;
    let mut step = 0;
    let mut history = TrainHistory::default();
    let mut best = model.clone();
    let mut best_acc = f64::NEG_INFINITY;

    let mut order: Vec<usize> = (0..windows.len()).collect();
    for epoch in 1..=tc.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(tc.batch_size) {
            let b = batch.len();
            let mut x = Vec::with_capacity(b * n * cfg.input_dim);
            let mut labels = Vec::with_capacity(b * n);
            for &w in batch {
                let (s, e) = windows[w];
                let seq = &train[s];
                for i in window_indices(e, n) {
                    x.extend_from_slice(&seq.x[i]);
                    if per_step {
                        labels.push(seq.y[i]);
                    }
                }
                if !per_step {
                    labels.push(seq.y[e]);
                }
            }
            let mut g = Graph::new();
            let vars = model.bind(&mut g);
            let xv = g.constant(Tensor::new(&[b, n, cfg.input_dim], x)?);
            let probs = model.forward(&mut g, &vars, xv)?;
            let loss = loss_total(&mut g, probs, &labels, lambda, cfg.tau)?;
            loss_sum += g.value(loss).item() * b as f64;
            let grads = g.backward(loss)?.param_grads(&g, model.params().len());
            adam.step(model.params_mut(), &grads, cosine_lr(step, total_steps, tc.lr));
            step += 1;
        }
        history.loss.push(loss_sum / windows.len() as f64);
        if !val.is_empty() {
            let acc = accuracy_on(&model, val, tc.val_stride)?;
            history.val_acc.push(acc);
            if acc > best_acc {
                best_acc = acc;
                best = model.clone();
                history.best_epoch = epoch;
            }
        }
    }
    if val.is_empty() {
        best = model;
        history.best_epoch = tc.epochs;
        best_acc = f64::NAN;
    }
    history.best_val_acc = best_acc;
    Ok(TrainOutcome { model: best, history })
}
