use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{HybridModel, CHUNK};
use crate::autodiff::kernels::nll_rows;
use crate::autodiff::{AdamConfig, Mode, Tape, Tensor};
use crate::data::{PatchSet, SplitPlan};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub dropout_rate: f64,
    pub seed: u64,
    /// Reshuffle the training indices every epoch.
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            epochs: 50,
            batch_size: 256,
            learning_rate: adam.learning_rate,
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.epsilon,
            dropout_rate: super::DEFAULT_DROPOUT,
            seed: 0,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Parameter("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Parameter("batch size must be at least 1".into()));
        }
        // lr = 0 is allowed as a frozen-weights run.
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Parameter(format!("learning rate must be finite and >= 0, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
            || self.epsilon.is_nan()
            || self.epsilon <= 0.0
        {
            return Err(Error::Parameter(format!(
                "Adam needs beta1, beta2 in [0, 1) and epsilon > 0, got {}, {}, {}",
                self.beta1, self.beta2, self.epsilon
            )));
        }
        crate::autodiff::layers::check_rate(self.dropout_rate)
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { learning_rate: self.learning_rate, beta1: self.beta1, beta2: self.beta2, epsilon: self.epsilon }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub records: Vec<EpochRecord>,
}

impl TrainTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,train_acc,val_loss,val_acc\n");
        for r in &self.records {
            writeln!(out, "{},{},{},{},{}", r.epoch, r.train_loss, r.train_acc, r.val_loss, r.val_acc)
                .expect("writing to a String");
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some("epoch,train_loss,train_acc,val_loss,val_acc") {
            return Err(Error::Format("trace CSV header mismatch".into()));
        }
        let records = lines
            .filter(|l| !l.is_empty())
            .map(|line| {
                let f: Vec<&str> = line.split(',').collect();
                let bad = || Error::Format(format!("bad trace row {line:?}"));
                if f.len() != 5 {
                    return Err(bad());
                }
                let num = |i: usize| f[i].parse::<f64>().map_err(|_| bad());
                Ok(EpochRecord {
                    epoch: f[0].parse().map_err(|_| bad())?,
                    train_loss: num(1)?,
                    train_acc: num(2)?,
                    val_loss: num(3)?,
                    val_acc: num(4)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { records })
    }

    /// First epoch (1-based) whose validation accuracy exceeds `threshold`.
    pub fn first_epoch_above(&self, threshold: f64) -> Option<usize> {
        self.records.iter().find(|r| r.val_acc > threshold).map(|r| r.epoch)
    }
}

/// SplitMix64 fold of `parts`, for deriving independent stream seeds.
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut state = 0x243F_6A88_85A3_08D3u64;
    for &p in parts {
        state ^= p;
        state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        state = z ^ (z >> 31);
    }
    state
}

const SHUFFLE_STREAM: u64 = 1;
const DROPOUT_STREAM: u64 = 2;

fn check_compatible(model: &HybridModel, patches: &PatchSet, plan: &SplitPlan) -> Result<()> {
    if patches.window() != model.window() || patches.bands() != model.bands() {
        return Err(Error::Dimension(format!(
            "patches are {w}×{w}×{b}, model expects {mw}×{mw}×{mb}",
            w = patches.window(),
            b = patches.bands(),
            mw = model.window(),
            mb = model.bands()
        )));
    }
    if let Some(&l) = patches.labels().iter().find(|&&l| l as usize > model.class_count() || l == 0) {
        return Err(Error::Index(format!("patch label {l} outside 1..={}", model.class_count())));
    }
    let all = plan.train.iter().chain(&plan.validation).chain(&plan.test);
    if let Some(&i) = all.into_iter().find(|&&i| i >= patches.len()) {
        return Err(Error::Index(format!("split index {i} outside {} patches", patches.len())));
    }
    Ok(())
}

/// Mean loss and accuracy over `indices` in eval mode.
pub(crate) fn evaluate(model: &HybridModel, patches: &PatchSet, indices: &[usize]) -> Result<(f64, f64)> {
    if indices.is_empty() {
        return Ok((0.0, 0.0));
    }
    let classes = model.class_count();
    let parts: Vec<(f64, usize)> = indices
        .par_chunks(CHUNK * 4)
        .map(|chunk| {
            let logits = model.logits(&patches.gather(chunk), chunk.len())?;
            let labels: Vec<usize> = chunk.iter().map(|&i| patches.labels()[i] as usize - 1).collect();
            let loss: f64 = nll_rows(&logits, classes, &labels).iter().sum();
            let correct = logits
                .chunks_exact(classes)
                .zip(&labels)
                .filter(|(row, &y)| super::predict_class(row) as usize == y + 1)
                .count();
            Ok((loss, correct))
        })
        .collect::<Result<_>>()?;
    let n = indices.len() as f64;
    let loss: f64 = parts.iter().map(|p| p.0).sum();
    let correct: usize = parts.iter().map(|p| p.1).sum();
    Ok((loss / n, correct as f64 / n))
}

/// Gradient of the mean batch loss, accumulated chunk by chunk in a fixed
/// order so the result does not depend on the thread count.
fn batch_gradient(model: &HybridModel, patches: &PatchSet, batch: &[usize], seeds: &[u64]) -> Result<Vec<Vec<f64>>> {
    let total = batch.len() as f64;
    let per_chunk: Vec<Vec<Vec<f64>>> = batch
        .par_chunks(CHUNK)
        .zip(seeds.par_iter())
        .map(|(chunk, &seed)| {
            let mut shape = vec![chunk.len()];
            shape.extend(model.input_shape());
            let input = Tensor::new(&shape, patches.gather(chunk))?;
            let labels: Vec<usize> = chunk.iter().map(|&i| patches.labels()[i] as usize - 1).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut tape = Tape::new();
            let (loss, params) = model.record(&mut tape, input, &labels, Mode::Train, &mut rng)?;
            let scaled = tape.scale(loss, chunk.len() as f64 / total);
            tape.backward(scaled)?;
            Ok(params
                .iter()
                .zip(model.params())
                .map(|(&v, p)| tape.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; p.len()]))
                .collect())
        })
        .collect::<Result<_>>()?;
    let mut chunks = per_chunk.into_iter();
    let mut sum = chunks.next().expect("non-empty batch");
    for grads in chunks {
        for (acc, g) in sum.iter_mut().zip(grads) {
            acc.iter_mut().zip(g).for_each(|(a, b)| *a += b);
        }
    }
    Ok(sum)
}

pub fn train(
    model: &mut HybridModel,
    patches: &PatchSet,
    plan: &SplitPlan,
    config: &TrainConfig,
) -> Result<TrainTrace> {
    train_with(model, patches, plan, config, |_| {})
}

/// [`train`] with a callback after every epoch.
///
/// Each epoch shuffles the training indices with a stream derived from
/// `(seed, epoch)`, takes one Adam step per minibatch (the last partial batch
/// included), then records eval-mode loss and accuracy on the train and
/// validation partitions.
pub fn train_with(
    model: &mut HybridModel,
    patches: &PatchSet,
    plan: &SplitPlan,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainTrace> {
    config.validate()?;
    check_compatible(model, patches, plan)?;
    if plan.train.is_empty() {
        return Err(Error::Contract("training partition is empty".into()));
    }
    model.set_dropout_rate(config.dropout_rate)?;
    let adam = config.adam();
    let mut trace = TrainTrace::default();
    for epoch in 1..=config.epochs {
        let mut order = plan.train.clone();
        if config.shuffle {
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(&[SHUFFLE_STREAM, config.seed, epoch as u64])));
        }
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let seeds: Vec<u64> = (0..batch.len().div_ceil(CHUNK))
                .map(|c| mix_seed(&[DROPOUT_STREAM, config.seed, epoch as u64, b as u64, c as u64]))
                .collect();
            let grads = batch_gradient(model, patches, batch, &seeds)?;
            model.set_gradients(grads)?;
            model.adam_step(&adam)?;
        }
        model.zero_grad();
        let (train_loss, train_acc) = evaluate(model, patches, &plan.train)?;
        let (val_loss, val_acc) = evaluate(model, patches, &plan.validation)?;
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(Error::Convergence(format!(
                "loss became non-finite at epoch {epoch} (train {train_loss}, validation {val_loss})"
            )));
        }
        let record = EpochRecord { epoch, train_loss, train_acc, val_loss, val_acc };
        on_epoch(&record);
        trace.records.push(record);
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{extract_patches, split_labels, synth_cube, Border, SynthSpec};
    use crate::model::build_model;

    fn tiny_patches() -> PatchSet {
        let spec = SynthSpec { classes: 3, height: 20, width: 20, bands: 16, noise: 0.0, seed: 2, sites_per_class: 2 };
        let (cube, _) = synth_cube(&spec).unwrap();
        extract_patches(&crate::data::normalize(&cube), 9, Border::Interior).unwrap()
    }

    #[test]
    fn mix_seed_separates_streams() {
        assert_ne!(mix_seed(&[1, 2]), mix_seed(&[2, 1]));
        assert_ne!(mix_seed(&[0]), mix_seed(&[0, 0]));
        assert_eq!(mix_seed(&[5, 6, 7]), mix_seed(&[5, 6, 7]));
    }

    #[test]
    fn csv_round_trip() {
        let trace = TrainTrace {
            records: vec![EpochRecord {
                epoch: 1,
                train_loss: 1.0 / 3.0,
                train_acc: 0.5,
                val_loss: 2.25,
                val_acc: 0.125,
            }],
        };
        assert_eq!(TrainTrace::from_csv(&trace.to_csv()).unwrap(), trace);
    }

    #[test]
    fn frozen_weights_keep_losses_constant() {
        let patches = tiny_patches();
        let plan = split_labels(patches.labels(), 3, 0, None).unwrap();
        let mut model = build_model(9, 16, 3, 1).unwrap();
        let before = model.clone();
        let cfg = TrainConfig { epochs: 3, batch_size: 10_000, learning_rate: 0.0, ..TrainConfig::default() };
        let trace = train(&mut model, &patches, &plan, &cfg).unwrap();
        assert_eq!(model, before);
        let first = trace.records[0];
        for r in &trace.records {
            assert_eq!((r.train_loss, r.val_loss), (first.train_loss, first.val_loss));
        }
    }

    #[test]
    fn short_run_learns_and_is_deterministic() {
        let patches = tiny_patches();
        let plan = split_labels(patches.labels(), 3, 0, None).unwrap();
        let cfg = TrainConfig { epochs: 8, batch_size: 16, ..TrainConfig::default() };
        let run = || {
            let mut model = build_model(9, 16, 3, 1).unwrap();
            let trace = train(&mut model, &patches, &plan, &cfg).unwrap();
            (model, trace)
        };
        let (m1, t1) = run();
        let (m2, t2) = run();
        assert_eq!(t1, t2);
        assert_eq!(m1, m2);
        assert!(t1.records.last().unwrap().train_loss < t1.records[0].train_loss);
    }

    #[test]
    fn empty_training_partition_rejected() {
        let patches = tiny_patches();
        let mut plan = split_labels(patches.labels(), 3, 0, None).unwrap();
        plan.train.clear();
        let mut model = build_model(9, 16, 3, 1).unwrap();
        assert!(matches!(train(&mut model, &patches, &plan, &TrainConfig::default()), Err(Error::Contract(_))));
    }
}
