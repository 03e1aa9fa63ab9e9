use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{bce_loss, squared_loss, AdamState, NegativeSampler};
use crate::dataset::{InteractionDataset, RelevanceDataset};
use crate::error::{Error, Result};
use crate::models::Model;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub negatives_per_positive: usize,
    pub vq_beta: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 256,
            learning_rate: 0.001,
            negatives_per_positive: 4,
            vq_beta: 0.25,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("bad learning rate {}", self.learning_rate)));
        }
        if !(self.vq_beta >= 0.0 && self.vq_beta.is_finite()) {
            return Err(Error::Config(format!("bad vq beta {}", self.vq_beta)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    /// Mean task loss per example.
    pub task_loss: f64,
    /// Mean quantization loss per batch, weighted by batch size.
    pub vq_loss: f64,
    pub wall_ms: u128,
}

/// Runs one optimization step on a batch and returns `(task, vq)` losses.
fn step<M: Model>(
    model: &mut M,
    left: &[usize],
    right: &[usize],
    loss: impl Fn(&[f64]) -> super::LossGrad,
    adam: &mut AdamState,
    vq_beta: f64,
) -> Result<(f64, f64)> {
    let (out, ctx) = model.forward(left, right)?;
    let task = loss(&out);
    let mut grads = model.backward(&ctx, &task.grad)?;
    let vq = model.add_vq_loss(&ctx, &mut grads, vq_beta)?;
    adam.begin_step();
    model.apply_grads(&grads, adam)?;
    Ok((task.loss, vq))
}

/// One epoch over shuffled implicit-feedback examples: every training
/// positive plus `negatives_per_positive` fresh negatives, trained with
/// binary cross-entropy.
pub fn train_epoch<M: Model>(
    model: &mut M,
    dataset: &InteractionDataset,
    sampler: &NegativeSampler,
    config: &TrainConfig,
    adam: &mut AdamState,
    rng: &mut ChaCha8Rng,
) -> Result<EpochStats> {
    let start = Instant::now();
    let mut examples: Vec<(usize, usize, f64)> =
        Vec::with_capacity(dataset.train.len() * (1 + config.negatives_per_positive));
    for it in &dataset.train {
        examples.push((it.user, it.item, 1.0));
        for _ in 0..config.negatives_per_positive {
            if let Some(neg) = sampler.sample(it.user, rng) {
                examples.push((it.user, neg, 0.0));
            }
        }
    }
    examples.shuffle(rng);

    let (mut task_sum, mut vq_sum) = (0.0, 0.0);
    let mut left = Vec::with_capacity(config.batch_size);
    let mut right = Vec::with_capacity(config.batch_size);
    let mut labels = Vec::with_capacity(config.batch_size);
    for chunk in examples.chunks(config.batch_size) {
        left.clear();
        right.clear();
        labels.clear();
        for &(u, i, y) in chunk {
            left.push(u);
            right.push(i);
            labels.push(y);
        }
        let (task, vq) = step(model, &left, &right, |out| bce_loss(out, &labels), adam, config.vq_beta)?;
        task_sum += task * chunk.len() as f64;
        vq_sum += vq * chunk.len() as f64;
    }
    let n = examples.len().max(1) as f64;
    Ok(EpochStats {
        epoch: 0,
        task_loss: task_sum / n,
        vq_loss: vq_sum / n,
        wall_ms: start.elapsed().as_millis(),
    })
}

/// One epoch of squared-loss regression over the shuffled training pairs.
pub fn train_epoch_pairs<M: Model>(
    model: &mut M,
    dataset: &RelevanceDataset,
    config: &TrainConfig,
    adam: &mut AdamState,
    rng: &mut ChaCha8Rng,
) -> Result<EpochStats> {
    let start = Instant::now();
    let mut pairs: Vec<_> = dataset.train_pairs().copied().collect();
    pairs.shuffle(rng);
    let (mut task_sum, mut vq_sum) = (0.0, 0.0);
    for chunk in pairs.chunks(config.batch_size) {
        let left: Vec<usize> = chunk.iter().map(|p| p.a).collect();
        let right: Vec<usize> = chunk.iter().map(|p| p.b).collect();
        let targets: Vec<f64> = chunk.iter().map(|p| p.score).collect();
        let (task, vq) = step(model, &left, &right, |out| squared_loss(out, &targets), adam, config.vq_beta)?;
        task_sum += task * chunk.len() as f64;
        vq_sum += vq * chunk.len() as f64;
    }
    let n = pairs.len().max(1) as f64;
    Ok(EpochStats {
        epoch: 0,
        task_loss: task_sum / n,
        vq_loss: vq_sum / n,
        wall_ms: start.elapsed().as_millis(),
    })
}

/// Optimizer and random state carried across epochs.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: TrainConfig,
    adam: AdamState,
    rng: ChaCha8Rng,
    epochs_done: usize,
}

impl Trainer {
    /// The trainer's stream is derived from the seed, separate from the one
    /// used to initialize the model.
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        Ok(Trainer {
            adam: AdamState::new(config.learning_rate),
            rng: ChaCha8Rng::seed_from_u64(config.seed ^ 0x7261_696e),
            config,
            epochs_done: 0,
        })
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }

    pub fn epoch<M: Model>(
        &mut self,
        model: &mut M,
        dataset: &InteractionDataset,
        sampler: &NegativeSampler,
    ) -> Result<EpochStats> {
        let mut stats = train_epoch(model, dataset, sampler, &self.config, &mut self.adam, &mut self.rng)?;
        self.epochs_done += 1;
        stats.epoch = self.epochs_done;
        Ok(stats)
    }

    pub fn epoch_pairs<M: Model>(&mut self, model: &mut M, dataset: &RelevanceDataset) -> Result<EpochStats> {
        let mut stats = train_epoch_pairs(model, dataset, &self.config, &mut self.adam, &mut self.rng)?;
        self.epochs_done += 1;
        stats.epoch = self.epochs_done;
        Ok(stats)
    }
}

/// Streams `epoch,task_loss,vq_loss,wall_ms` rows.
pub struct EpochLog<W: Write> {
    writer: csv::Writer<W>,
}

impl<W: Write> EpochLog<W> {
    pub fn new(out: W) -> Result<Self> {
        let mut writer = csv::Writer::from_writer(out);
        writer.write_record(["epoch", "task_loss", "vq_loss", "wall_ms"])?;
        writer.flush().map_err(csv::Error::from)?;
        Ok(EpochLog { writer })
    }

    pub fn record(&mut self, stats: &EpochStats) -> Result<()> {
        self.writer.write_record([
            stats.epoch.to_string(),
            format!("{:.8}", stats.task_loss),
            format!("{:.8}", stats.vq_loss),
            stats.wall_ms.to_string(),
        ])?;
        self.writer.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}
