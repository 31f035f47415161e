//! Supervised training with dev-based epoch selection, prediction, and
//! majority-vote ensembling.

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, TimedExample};
use crate::encoder::{mlm_pretrain, EncoderConfig, EncoderParams, MlmOptions, MlmReport};
use crate::error::{check_len, Error, Result};
use crate::metrics::task_f1;
use crate::model::{Gradients, LossParts, Model, Sample};
use crate::optim::{AdamW, AdamWConfig};
use crate::rng::Rng;
use crate::splits::ExperimentSplit;
use crate::temporal::{HeadConfig, TemporalHead};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub epochs: usize,
    pub seeds: Vec<u64>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Masked-token pretraining epochs before supervised training.
    pub mlm_epochs: usize,
    pub mask_prob: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            batch_size: 64,
            weight_decay: 1e-3,
            epochs: 3,
            seeds: vec![1, 2, 3, 4, 5],
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            mlm_epochs: 0,
            mask_prob: 0.15,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("train: {m}")));
        if !(self.learning_rate >= 0.0) || !(self.weight_decay >= 0.0) || !(self.eps > 0.0) {
            return bad("learning_rate and weight_decay must be >= 0, eps > 0");
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch_size and epochs must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.mask_prob) {
            return bad("mask_prob must lie in [0, 1]");
        }
        let mut s = self.seeds.clone();
        s.sort_unstable();
        s.dedup();
        if s.len() != self.seeds.len() || s.is_empty() {
            return bad("seeds must be non-empty and distinct");
        }
        Ok(())
    }

    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub model: Model,
    /// 1-based epoch whose snapshot was kept.
    pub selected_epoch: usize,
    pub dev_scores: Vec<f64>,
    pub train_losses: Vec<LossParts>,
    pub mlm: Option<MlmReport>,
}

/// Builds a freshly initialized model for the given training timestamps.
pub fn init_model(
    encoder_cfg: &EncoderConfig,
    head_cfg: &HeadConfig,
    train_timestamps: &[i64],
    rng: &mut Rng,
) -> Result<Model> {
    let head = TemporalHead::build(head_cfg, train_timestamps, encoder_cfg.embed_dim, rng)?;
    let encoder = EncoderParams::init(encoder_cfg, encoder_cfg.embed_dim + head.extra_input_dim(), rng)?;
    Ok(Model::new(encoder, head))
}

/// Trains on `split.train_ids`, scoring `split.dev_ids` after every epoch
/// and returning the best-scoring snapshot (earliest on ties).
///
/// Stream use: the seed's generator forks an init stream (head, then
/// encoder), a shuffle stream and a masking stream, in that order.
pub fn train_model(
    corpus: &Corpus,
    split: &ExperimentSplit,
    encoder_cfg: &EncoderConfig,
    head_cfg: &HeadConfig,
    train_cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainedModel> {
    train_cfg.validate()?;
    if encoder_cfg.n_classes != corpus.n_classes() {
        return Err(Error::Config(format!(
            "encoder has {} classes, corpus has {}",
            encoder_cfg.n_classes,
            corpus.n_classes()
        )));
    }
    let train = corpus.select(&split.train_ids)?;
    let dev = corpus.select(&split.dev_ids)?;
    if train.is_empty() || dev.is_empty() {
        return Err(Error::Split("train and dev sets must be non-empty".into()));
    }
    let mut rng = Rng::new(seed);
    let mut init_rng = rng.fork();
    let mut shuffle_rng = rng.fork();
    let mut mask_rng = rng.fork();

    let stamps: Vec<i64> = train.iter().map(|e| e.timestamp).collect();
    let mut model = init_model(encoder_cfg, head_cfg, &stamps, &mut init_rng)?;

    let mlm = if train_cfg.mlm_epochs > 0 {
        let texts: Vec<Vec<String>> = train
            .iter()
            .map(|e| model.head.rewrite_for_pretraining(&crate::encoder::tokenize(&e.text), e.timestamp))
            .collect();
        let opts = MlmOptions {
            epochs: train_cfg.mlm_epochs,
            mask_prob: train_cfg.mask_prob,
            batch_size: train_cfg.batch_size,
            optimizer: train_cfg.optimizer(),
        };
        let (encoder, report) = mlm_pretrain(&model.encoder, &texts, &opts, &mut mask_rng)?;
        model.encoder = encoder;
        Some(report)
    } else {
        None
    };

    let train_samples: Vec<Sample> = train.iter().map(|e| model.featurize(e)).collect();
    let dev_samples: Vec<Sample> = dev.iter().map(|e| model.featurize(e)).collect();
    let dev_gold: Vec<usize> = dev_samples.iter().map(|s| s.label).collect();

    let mut opt = AdamW::new(train_cfg.optimizer());
    let mut grads = Gradients::zeros_like(&model);
    let mut order: Vec<usize> = (0..train_samples.len()).collect();
    let mut best: Option<(f64, usize, Model)> = None;
    let mut dev_scores = Vec::with_capacity(train_cfg.epochs);
    let mut train_losses = Vec::with_capacity(train_cfg.epochs);
    for epoch in 1..=train_cfg.epochs {
        shuffle_rng.shuffle(&mut order);
        let mut epoch_loss = LossParts::default();
        let mut n_batches = 0.0;
        for chunk in order.chunks(train_cfg.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &train_samples[i]).collect();
            grads.zero();
            let parts = model.loss_and_grad(&batch, &mut grads)?;
            opt.step(&mut model, &grads);
            epoch_loss.task += parts.task;
            epoch_loss.temporal += parts.temporal;
            epoch_loss.time += parts.time;
            n_batches += 1.0;
        }
        epoch_loss.task /= n_batches;
        epoch_loss.temporal /= n_batches;
        epoch_loss.time /= n_batches;
        train_losses.push(epoch_loss);

        let preds = predict_samples(&model, &dev_samples)?;
        let score = task_f1(&preds, &dev_gold, corpus.n_classes())?;
        log::debug!("seed {seed} epoch {epoch}: loss {:.4} dev f1 {score:.4}", epoch_loss.task);
        dev_scores.push(score);
        if best.as_ref().is_none_or(|(s, _, _)| score > *s) {
            best = Some((score, epoch, model.clone()));
        }
    }
    let (_, selected_epoch, model) = best.expect("at least one epoch");
    Ok(TrainedModel { model, selected_epoch, dev_scores, train_losses, mlm })
}

pub fn predict_samples(model: &Model, samples: &[Sample]) -> Result<Vec<usize>> {
    samples.iter().map(|s| model.predict(s)).collect()
}

/// Argmax class per example through the head's inference path.
pub fn predict(model: &Model, examples: &[&TimedExample]) -> Result<Vec<usize>> {
    examples.iter().map(|e| model.predict(&model.featurize(e))).collect()
}

/// Per-position mode across runs; ties go to the lowest class id.
pub fn ensemble_majority(predictions: &[Vec<usize>]) -> Result<Vec<usize>> {
    let first = predictions.first().ok_or_else(|| Error::Model("no prediction vectors to ensemble".into()))?;
    for p in predictions {
        check_len(first.len(), p.len())?;
    }
    let n_classes = predictions.iter().flatten().max().map_or(0, |m| m + 1);
    Ok((0..first.len())
        .map(|i| {
            let mut votes = vec![0usize; n_classes];
            for p in predictions {
                votes[p[i]] += 1;
            }
            let mut best = 0;
            for (c, &v) in votes.iter().enumerate() {
                if v > votes[best] {
                    best = c;
                }
            }
            best
        })
        .collect())
}
