//! Loss, optimizer, schedule, data and the training/evaluation loops.

pub mod adam;
pub mod dataset;
pub mod schedule;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{EncoderConfig, TrainConfig};
use crate::encoder::SynthEncoder;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::ops::softmax_vec;
use crate::tensor::{lit, Real, Tensor};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use dataset::{gen_synth_dataset, PairExample, Splits, StackPair, SynthSpec};
pub use schedule::{Action, Schedule};

/// `-ln p[label]` with `p = softmax(logits)` clamped at `1e-12`, and the
/// logit gradient `p − onehot(label)`.
pub fn cross_entropy<T: Real>(logits: &[T], label: usize) -> Result<(T, Vec<T>)> {
    if label >= logits.len() {
        return Err(Error::argument(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    let mut probs = softmax_vec(logits);
    let loss = -probs[label].max(lit(1e-12)).ln();
    probs[label] = probs[label] - T::one();
    Ok((loss, probs))
}

/// A prepared pair: selected blocks for both sentences plus the label.
#[derive(Clone, Debug, PartialEq)]
pub struct Example<T> {
    pub x: Tensor<T>,
    pub y: Tensor<T>,
    pub label: usize,
}

pub fn synth_encoder(cfg: &EncoderConfig) -> Result<SynthEncoder> {
    SynthEncoder::new(cfg.vocab, cfg.h, cfg.d, cfg.synonym_group, cfg.seed)
}

/// Applies the model's block selection to every stack pair.
pub fn prepare<T: Real>(model: &Model<T>, pairs: &[StackPair]) -> Result<Vec<Example<T>>> {
    let labels = model.config().head.labels.len();
    pairs
        .iter()
        .map(|p| {
            if p.label >= labels {
                return Err(Error::Input(format!(
                    "label {} out of range for {labels} classes",
                    p.label
                )));
            }
            Ok(Example {
                x: model.prepare(&p.x)?,
                y: model.prepare(&p.y)?,
                label: p.label,
            })
        })
        .collect()
}

/// Encodes token pairs with the synthetic encoder and prepares them.
pub fn encode_and_prepare(
    model: &Model<f32>,
    enc: &SynthEncoder,
    pairs: &[PairExample],
) -> Result<Vec<Example<f32>>> {
    let stacks = dataset::encode_pairs(enc, pairs, model.config().encoder.l)?;
    prepare(model, &stacks)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub loss: f64,
    pub pairs: usize,
}

/// One metric-log line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_acc: f64,
    pub elapsed_s: f64,
}

impl EpochLog {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("log serializes")
    }

    /// The fields that depend only on seed, configuration and build.
    pub fn reproducible(&self) -> (usize, u64, u64, u64) {
        (
            self.epoch,
            self.lr.to_bits(),
            self.train_loss.to_bits(),
            self.val_acc.to_bits(),
        )
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation accuracy.
    pub model: Model<f32>,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_acc: f64,
}

/// Argmax accuracy and mean cross-entropy. Pairs are scored in parallel and
/// reduced in order.
pub fn evaluate<T: Real>(model: &Model<T>, data: &[Example<T>]) -> Result<Metrics> {
    if data.is_empty() {
        return Err(Error::argument("cannot evaluate an empty split"));
    }
    let scored: Vec<(f64, bool)> = data
        .par_iter()
        .map(|e| {
            let (loss, probs) = model.loss(&e.x, &e.y, e.label)?;
            Ok((loss.to_f64_lossy(), argmax(&probs) == e.label))
        })
        .collect::<Result<_>>()?;
    let loss = scored.iter().map(|s| s.0).sum::<f64>() / data.len() as f64;
    let correct = scored.iter().filter(|s| s.1).count();
    Ok(Metrics {
        accuracy: correct as f64 / data.len() as f64,
        loss,
        pairs: data.len(),
    })
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax<T: Real>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn global_norm(grads: &[Tensor<f32>]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.data())
        .map(|&v| (v as f64) * (v as f64))
        .sum::<f64>()
        .sqrt()
}

fn diverged(model: &Model<f32>, what: &str) -> Error {
    let name = model
        .params()
        .iter()
        .find(|p| !p.grad.all_finite())
        .map(|p| format!("gradient of `{}`", p.name))
        .or_else(|| model.params().first_non_finite().map(|n| format!("`{n}`")))
        .unwrap_or_else(|| "none (loss only)".into());
    Error::Numeric(format!(
        "training diverged: {what}; first non-finite parameter: {name}"
    ))
}

/// Mini-batch training with Adam, validation after every epoch, and the
/// decay/early-stop schedule. `on_epoch` sees each log line as it is made.
pub fn train(
    mut model: Model<f32>,
    train_set: &[Example<f32>],
    val_set: &[Example<f32>],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::argument(
            "training and validation splits must be non-empty",
        ));
    }
    let adam = AdamConfig {
        beta1: cfg.beta1,
        beta2: cfg.beta2,
        eps: cfg.eps,
    };
    let mut state = AdamState::new(model.params());
    let mut schedule = Schedule::new(cfg.lr, cfg.patience, cfg.decay);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = Vec::new();
    let mut best = (model.clone(), 0, f64::NEG_INFINITY);
    let start = Instant::now();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let lr = schedule.lr();
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let results: Vec<(f32, Vec<Tensor<f32>>)> = batch
                .par_iter()
                .map(|&i| {
                    let e = &train_set[i];
                    model.loss_and_grads(&e.x, &e.y, e.label)
                })
                .collect::<Result<_>>()?;
            model.params_mut().zero_grads();
            let mut batch_loss = 0.0;
            for (loss, grads) in &results {
                batch_loss += *loss as f64;
                model.params_mut().accumulate(grads)?;
            }
            let inv = 1.0 / batch.len() as f32;
            for p in model.params_mut().iter_mut() {
                p.grad.scale_in_place(inv);
            }
            if !batch_loss.is_finite() {
                return Err(diverged(&model, "non-finite loss"));
            }
            if let Some(clip) = cfg.clip {
                let grads: Vec<Tensor<f32>> =
                    model.params().iter().map(|p| p.grad.clone()).collect();
                let norm = global_norm(&grads);
                if norm > clip {
                    let f = (clip / norm) as f32;
                    for p in model.params_mut().iter_mut() {
                        p.grad.scale_in_place(f);
                    }
                }
            }
            adam_step(model.params_mut(), &mut state, lr, adam)?;
            if model.params().first_non_finite().is_some() {
                return Err(diverged(&model, "non-finite parameter after update"));
            }
            loss_sum += batch_loss;
        }
        let val = evaluate(&model, val_set)?;
        let (improved, action) = schedule.observe(val.accuracy);
        if improved {
            best = (model.clone(), epoch, val.accuracy);
        }
        let entry = EpochLog {
            epoch,
            lr,
            train_loss: loss_sum / train_set.len() as f64,
            val_acc: val.accuracy,
            elapsed_s: start.elapsed().as_secs_f64(),
        };
        on_epoch(&entry);
        log.push(entry);
        if action == Action::Stop {
            break;
        }
    }
    let (model, best_epoch, best_val_acc) = best;
    Ok(TrainOutcome {
        model,
        log,
        best_epoch,
        best_val_acc,
    })
}

/// Median over `repetitions` of forward wall time per pair, in milliseconds.
/// One untimed pass warms caches first. Runs on the calling thread.
pub fn bench_latency<T: Real>(
    model: &Model<T>,
    data: &[Example<T>],
    repetitions: usize,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::argument("cannot benchmark an empty split"));
    }
    if repetitions == 0 {
        return Err(Error::argument("need at least one repetition"));
    }
    for e in data {
        std::hint::black_box(model.predict(&e.x, &e.y)?);
    }
    let mut times = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let t = Instant::now();
        for e in data {
            std::hint::black_box(model.predict(&e.x, &e.y)?);
        }
        times.push(t.elapsed().as_secs_f64() * 1e3 / data.len() as f64);
    }
    times.sort_by(f64::total_cmp);
    let mid = times.len() / 2;
    Ok(if times.len() % 2 == 1 {
        times[mid]
    } else {
        0.5 * (times[mid - 1] + times[mid])
    })
}
