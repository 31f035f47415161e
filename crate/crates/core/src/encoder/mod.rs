//! The trainable text encoder: hashed n-gram features, a mean-pooled
//! embedding bag, and a one-hidden-layer classifier. All math is `f64`.

mod checkpoint;
mod gradcheck;
mod mlm;
mod tokenize;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

pub use checkpoint::{checkpoint_bytes, checkpoint_from_bytes, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};
pub use gradcheck::{grad_check, rel_error, GradCheckReport, REL_ERROR_FLOOR};
pub use mlm::{mlm_pretrain, MlmOptions, MlmReport};
pub use tokenize::{
    fnv1a64, hash_tokens, token_bucket, tokenize, MASK_BUCKET, MASK_TOKEN, N_SPECIAL, SEP_BUCKET, SEP_TOKEN,
};

pub const INIT_SCALE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub hash_buckets: u32,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub n_classes: usize,
    pub use_bigrams: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig { hash_buckets: 32768, embed_dim: 32, hidden_dim: 64, n_classes: 2, use_bigrams: true }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hash_buckets <= N_SPECIAL {
            return Err(Error::Config(format!("hash_buckets must exceed the {N_SPECIAL} reserved buckets")));
        }
        if self.embed_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::Config("embed_dim and hidden_dim must be >= 1".into()));
        }
        if self.n_classes < 2 {
            return Err(Error::Config("n_classes must be >= 2".into()));
        }
        Ok(())
    }
}

pub fn hash_features(tokens: &[String], cfg: &EncoderConfig) -> Vec<u32> {
    hash_tokens(tokens, cfg.hash_buckets, cfg.use_bigrams)
}

/// Encoder weights. Matrices are row-major: `embedding` is
/// `buckets x dim`, `w1` is `hidden x input_dim`, `w2` is
/// `n_classes x hidden`. The masked-token head is the embedding matrix
/// itself (tied weights), exposed through [`EncoderParams::mlm_head_row`].
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    /// Classifier input width: `embed_dim` plus any head-specific extra.
    pub input_dim: usize,
    pub embedding: Vec<f64>,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

/// Intermediate values of one classifier pass, kept for backprop.
#[derive(Debug, Clone)]
pub struct ClassifierTrace {
    pub pre_activation: Vec<f64>,
    pub hidden: Vec<f64>,
    pub log_probs: Vec<f64>,
}

impl EncoderParams {
    /// Uniform(-0.05, 0.05) for embedding, `w1`, `w2` (drawn in that
    /// order); zero biases.
    pub fn init(config: &EncoderConfig, input_dim: usize, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        if input_dim < config.embed_dim {
            return Err(Error::Config("classifier input narrower than the embedding".into()));
        }
        let mut draw = |n: usize| (0..n).map(|_| rng.uniform_range(-INIT_SCALE, INIT_SCALE)).collect::<Vec<_>>();
        let v = config.hash_buckets as usize;
        let embedding = draw(v * config.embed_dim);
        let w1 = draw(config.hidden_dim * input_dim);
        let w2 = draw(config.n_classes * config.hidden_dim);
        Ok(EncoderParams {
            config: config.clone(),
            input_dim,
            embedding,
            w1,
            b1: vec![0.0; config.hidden_dim],
            w2,
            b2: vec![0.0; config.n_classes],
        })
    }

    pub fn dim(&self) -> usize {
        self.config.embed_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.config.hidden_dim
    }

    pub fn n_classes(&self) -> usize {
        self.config.n_classes
    }

    pub fn embedding_row(&self, bucket: u32) -> &[f64] {
        let d = self.dim();
        &self.embedding[bucket as usize * d..(bucket as usize + 1) * d]
    }

    /// Output-layer weights of the masked-token head for one bucket; the
    /// same storage as the embedding row.
    pub fn mlm_head_row(&self, bucket: u32) -> &[f64] {
        self.embedding_row(bucket)
    }

    pub fn embedding_row_mut(&mut self, bucket: u32) -> &mut [f64] {
        let d = self.dim();
        &mut self.embedding[bucket as usize * d..(bucket as usize + 1) * d]
    }

    /// Mean of the embedding rows of `buckets`.
    pub fn encode(&self, buckets: &[u32]) -> Result<Vec<f64>> {
        if buckets.is_empty() {
            return Err(Error::Model("cannot encode an empty bucket list".into()));
        }
        let mut h = vec![0.0; self.dim()];
        for &b in buckets {
            for (acc, x) in h.iter_mut().zip(self.embedding_row(b)) {
                *acc += x;
            }
        }
        let n = buckets.len() as f64;
        h.iter_mut().for_each(|x| *x /= n);
        Ok(h)
    }

    /// `log_softmax(w2 . relu(w1 . x + b1) + b2)`.
    pub fn classify(&self, x: &[f64]) -> Vec<f64> {
        self.classify_traced(x).log_probs
    }

    pub fn classify_traced(&self, x: &[f64]) -> ClassifierTrace {
        assert_eq!(x.len(), self.input_dim, "classifier input width");
        let pre_activation: Vec<f64> = self
            .w1
            .chunks_exact(self.input_dim)
            .zip(&self.b1)
            .map(|(row, b)| dot(row, x) + b)
            .collect();
        let hidden: Vec<f64> = pre_activation.iter().map(|&z| z.max(0.0)).collect();
        let logits: Vec<f64> =
            self.w2.chunks_exact(self.hidden_dim()).zip(&self.b2).map(|(row, b)| dot(row, &hidden) + b).collect();
        ClassifierTrace { pre_activation, hidden, log_probs: log_softmax(&logits) }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}
