//! Masked-token pretraining of the embedding table.
//!
//! Each unigram is masked with probability `mask_prob`; the context is the
//! mean embedding of what survives (unmasked unigrams and bigrams with no
//! masked end) and every masked unigram's bucket is predicted through the
//! tied output layer `softmax(E . context)`. Only the embedding table is
//! updated; the classifier layers are untouched.

use crate::encoder::{dot, log_softmax, token_bucket, EncoderParams, MASK_TOKEN, SEP_TOKEN};
use crate::error::Result;
use crate::optim::{AdamW, AdamWConfig};
use crate::rng::Rng;
use crate::temporal::DECAYED;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MlmOptions {
    pub epochs: usize,
    pub mask_prob: f64,
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MlmReport {
    /// Mean masked-token cross-entropy per epoch (NaN when nothing was
    /// masked in that epoch).
    pub epoch_losses: Vec<f64>,
    pub masked_tokens: usize,
}

struct Prepared {
    /// Bucket per position; `None` for special tokens, which are never masked.
    unigrams: Vec<Option<u32>>,
    special: Vec<u32>,
    /// (left position, bucket)
    bigrams: Vec<(usize, u32)>,
}

fn prepare(tokens: &[String], params: &EncoderParams) -> Prepared {
    let v = params.config.hash_buckets;
    let is_special = |t: &String| t == SEP_TOKEN || t == MASK_TOKEN;
    let unigrams = tokens.iter().map(|t| (!is_special(t)).then(|| token_bucket(t, v))).collect();
    let special = tokens.iter().filter(|t| is_special(t)).map(|t| token_bucket(t, v)).collect();
    let mut bigrams = Vec::new();
    if params.config.use_bigrams {
        for (i, pair) in tokens.windows(2).enumerate() {
            if !is_special(&pair[0]) && !is_special(&pair[1]) {
                let b = crate::encoder::hash_tokens(pair, v, true)[2];
                bigrams.push((i, b));
            }
        }
    }
    Prepared { unigrams, special, bigrams }
}

struct MaskedText {
    context: Vec<u32>,
    targets: Vec<u32>,
}

fn mask_text(p: &Prepared, mask_prob: f64, rng: &mut Rng) -> Option<MaskedText> {
    let mut masked = vec![false; p.unigrams.len()];
    let mut targets = Vec::new();
    for (i, u) in p.unigrams.iter().enumerate() {
        if let Some(b) = u {
            if rng.bernoulli(mask_prob) {
                masked[i] = true;
                targets.push(*b);
            }
        }
    }
    if targets.is_empty() {
        return None;
    }
    let mut context: Vec<u32> =
        p.unigrams.iter().zip(&masked).filter(|(_, &m)| !m).filter_map(|(u, _)| *u).collect();
    context.extend(&p.special);
    context.extend(p.bigrams.iter().filter(|(i, _)| !masked[*i] && !masked[*i + 1]).map(|(_, b)| *b));
    (!context.is_empty()).then_some(MaskedText { context, targets })
}

pub fn mlm_pretrain(
    params: &EncoderParams,
    texts: &[Vec<String>],
    opts: &MlmOptions,
    rng: &mut Rng,
) -> Result<(EncoderParams, MlmReport)> {
    let mut params = params.clone();
    let mut report = MlmReport::default();
    if texts.is_empty() || opts.epochs == 0 {
        return Ok((params, report));
    }
    let prepared: Vec<Prepared> = texts.iter().map(|t| prepare(t, &params)).collect();
    let d = params.dim();
    let v = params.config.hash_buckets as usize;
    let mut opt = AdamW::new(opts.optimizer);
    let mut grad = vec![0.0; params.embedding.len()];
    let mut order: Vec<usize> = (0..texts.len()).collect();
    for _ in 0..opts.epochs {
        rng.shuffle(&mut order);
        let (mut epoch_loss, mut epoch_count) = (0.0, 0usize);
        for batch in order.chunks(opts.batch_size.max(1)) {
            let masked: Vec<MaskedText> =
                batch.iter().filter_map(|&i| mask_text(&prepared[i], opts.mask_prob, rng)).collect();
            let total: usize = masked.iter().map(|m| m.targets.len()).sum();
            if total == 0 {
                continue;
            }
            grad.fill(0.0);
            let inv = 1.0 / total as f64;
            for m in &masked {
                let ctx = params.encode(&m.context)?;
                let logits: Vec<f64> = (0..v).map(|b| dot(params.mlm_head_row(b as u32), &ctx)).collect();
                let lp = log_softmax(&logits);
                let mut dl: Vec<f64> = lp.iter().map(|x| x.exp() * m.targets.len() as f64 * inv).collect();
                for &t in &m.targets {
                    epoch_loss -= lp[t as usize];
                    dl[t as usize] -= inv;
                }
                let mut dctx = vec![0.0; d];
                for (b, &g) in dl.iter().enumerate() {
                    let row = &params.embedding[b * d..(b + 1) * d];
                    let grow = &mut grad[b * d..(b + 1) * d];
                    for i in 0..d {
                        grow[i] += g * ctx[i];
                        dctx[i] += g * row[i];
                    }
                }
                let scale = 1.0 / m.context.len() as f64;
                for &b in &m.context {
                    let grow = &mut grad[b as usize * d..(b as usize + 1) * d];
                    grow.iter_mut().zip(&dctx).for_each(|(a, x)| *a += x * scale);
                }
            }
            epoch_count += total;
            opt.step_tensors(vec![(DECAYED, &mut params.embedding)], std::slice::from_ref(&grad));
        }
        report.masked_tokens += epoch_count;
        report.epoch_losses.push(if epoch_count == 0 { f64::NAN } else { epoch_loss / epoch_count as f64 });
    }
    Ok((params, report))
}
