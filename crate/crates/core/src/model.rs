//! Encoder + temporal head as one trainable model, with exact
//! reverse-mode gradients.

use crate::corpus::TimedExample;
use crate::encoder::{argmax, hash_features, tokenize, EncoderParams};
use crate::error::Result;
use crate::temporal::{taph_backward, taph_project, HeadParams, SlotKind, TemporalHead, DECAYED, UNDECAYED};

/// A featurized example: hashed buckets after the head's token rewrite.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub buckets: Vec<u32>,
    pub timestamp: i64,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub encoder: EncoderParams,
    pub head: TemporalHead,
}

/// Loss components of one batch, each already averaged over the batch.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    /// Cross-entropy of the task classifier.
    pub task: f64,
    /// DCWE prior and smoothness penalty.
    pub temporal: f64,
    /// Cross-entropy of the TDA time classifier.
    pub time: f64,
}

impl LossParts {
    pub fn total(&self) -> f64 {
        self.task + self.temporal + self.time
    }
}

/// Gradient buffers aligned with [`Model::slots`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Vec<f64>>,
}

const EMB: usize = 0;
const W1: usize = 1;
const B1: usize = 2;
const W2: usize = 3;
const B2: usize = 4;
const HEAD: usize = 5;
/// Number of encoder tensors at the front of the slot list.
pub const ENCODER_SLOTS: usize = HEAD;

impl Gradients {
    pub fn zeros_like(model: &Model) -> Self {
        Gradients { tensors: model.slots().iter().map(|(_, _, t)| vec![0.0; t.len()]).collect() }
    }

    pub fn zero(&mut self) {
        self.tensors.iter_mut().for_each(|t| t.fill(0.0));
    }
}

/// Forward values of one example needed for the backward pass.
struct Trace {
    pooled: Vec<f64>,
    bin: Option<usize>,
    input: Vec<f64>,
}

impl Model {
    pub fn new(encoder: EncoderParams, head: TemporalHead) -> Self {
        Model { encoder, head }
    }

    /// Every tensor in a fixed order: the five encoder tensors, then the
    /// head's own.
    pub fn slots(&self) -> Vec<(&'static str, SlotKind, &Vec<f64>)> {
        let e = &self.encoder;
        let mut out = vec![
            ("encoder.embedding", DECAYED, &e.embedding),
            ("encoder.w1", DECAYED, &e.w1),
            ("encoder.b1", UNDECAYED, &e.b1),
            ("encoder.w2", DECAYED, &e.w2),
            ("encoder.b2", UNDECAYED, &e.b2),
        ];
        out.extend(self.head.tensors());
        out
    }

    pub fn slots_mut(&mut self) -> Vec<(&'static str, SlotKind, &mut Vec<f64>)> {
        let e = &mut self.encoder;
        let mut out = vec![
            ("encoder.embedding", DECAYED, &mut e.embedding),
            ("encoder.w1", DECAYED, &mut e.w1),
            ("encoder.b1", UNDECAYED, &mut e.b1),
            ("encoder.w2", DECAYED, &mut e.w2),
            ("encoder.b2", UNDECAYED, &mut e.b2),
        ];
        out.extend(self.head.tensors_mut());
        out
    }

    pub fn tokens_for(&self, text: &str, timestamp: i64) -> Vec<String> {
        self.head.rewrite_tokens(&tokenize(text), timestamp)
    }

    pub fn featurize(&self, ex: &TimedExample) -> Sample {
        let tokens = self.tokens_for(&ex.text, ex.timestamp);
        Sample { buckets: hash_features(&tokens, &self.encoder.config), timestamp: ex.timestamp, label: ex.label }
    }

    fn trace(&self, sample: &Sample) -> Result<Trace> {
        let mut pooled = self.encoder.encode(&sample.buckets)?;
        let bin = self.head.bin_of(sample.timestamp);
        if let HeadParams::Dcwe { .. } = self.head.params {
            let off = self.head.dcwe_offset(sample.timestamp)?;
            pooled.iter_mut().zip(off).for_each(|(h, d)| *h += d);
        }
        let input = match &self.head.params {
            HeadParams::Lmsoc { .. } => {
                let mut x = pooled.clone();
                x.extend_from_slice(self.head.lmsoc_row(bin.expect("LMSOC has bins")));
                x
            }
            HeadParams::Taph { w } => taph_project(w, &pooled)?,
            _ => pooled.clone(),
        };
        Ok(Trace { pooled, bin, input })
    }

    /// The representation the classifier sees: pooled `H` for
    /// NONE/TM/SEP/TDA, `H + d_b` for DCWE, `[H; time row]` for LMSOC and
    /// the projected `H_t` for TAPH.
    pub fn time_aware_embedding(&self, sample: &Sample) -> Result<Vec<f64>> {
        Ok(self.trace(sample)?.input)
    }

    pub fn log_probs(&self, sample: &Sample) -> Result<Vec<f64>> {
        Ok(self.encoder.classify(&self.trace(sample)?.input))
    }

    pub fn predict(&self, sample: &Sample) -> Result<usize> {
        Ok(argmax(&self.log_probs(sample)?))
    }

    /// Batch losses without gradients.
    pub fn loss_parts(&self, batch: &[&Sample]) -> Result<LossParts> {
        let n = batch.len() as f64;
        let mut parts = LossParts { temporal: self.head.temporal_regularizer(), ..Default::default() };
        for s in batch {
            let tr = self.trace(s)?;
            parts.task -= self.encoder.classify(&tr.input)[s.label] / n;
            if let Some(lp) = self.head.time_log_probs(&tr.pooled) {
                parts.time -= lp[tr.bin.expect("TDA has bins")] / n;
            }
        }
        Ok(parts)
    }

    /// Batch losses and gradients accumulated into `grads` (which is not
    /// cleared). The TDA time loss reaches the encoder through gradient
    /// reversal: its gradient into the pooled embedding is scaled by
    /// `-lambda_grl`, while the time head itself gets the plain gradient.
    pub fn loss_and_grad(&self, batch: &[&Sample], grads: &mut Gradients) -> Result<LossParts> {
        let enc = &self.encoder;
        let (d, hid, in_dim) = (enc.dim(), enc.hidden_dim(), enc.input_dim);
        let n = batch.len() as f64;
        let mut parts = LossParts::default();
        let g = &mut grads.tensors;
        for s in batch {
            let tr = self.trace(s)?;
            let ct = enc.classify_traced(&tr.input);
            parts.task -= ct.log_probs[s.label] / n;

            let dlogits: Vec<f64> = ct
                .log_probs
                .iter()
                .enumerate()
                .map(|(c, lp)| (lp.exp() - f64::from(c == s.label)) / n)
                .collect();
            let mut dhidden = vec![0.0; hid];
            for (c, &dl) in dlogits.iter().enumerate() {
                g[B2][c] += dl;
                let row = &enc.w2[c * hid..(c + 1) * hid];
                for j in 0..hid {
                    g[W2][c * hid + j] += dl * ct.hidden[j];
                    dhidden[j] += dl * row[j];
                }
            }
            let mut dinput = vec![0.0; in_dim];
            for j in 0..hid {
                if ct.pre_activation[j] <= 0.0 {
                    continue;
                }
                let dz = dhidden[j];
                g[B1][j] += dz;
                let row = &enc.w1[j * in_dim..(j + 1) * in_dim];
                for i in 0..in_dim {
                    g[W1][j * in_dim + i] += dz * tr.input[i];
                    dinput[i] += dz * row[i];
                }
            }

            let mut dpooled = match &self.head.params {
                HeadParams::Taph { w } => {
                    let (dh, dw) = taph_backward(w, &tr.pooled, &dinput);
                    g[HEAD].iter_mut().zip(dw).for_each(|(a, b)| *a += b);
                    dh
                }
                _ => dinput[..d].to_vec(),
            };
            match &self.head.params {
                HeadParams::Dcwe { .. } => {
                    let b = tr.bin.expect("DCWE has bins");
                    g[HEAD][b * d..(b + 1) * d].iter_mut().zip(&dpooled).for_each(|(a, x)| *a += x);
                }
                HeadParams::Tda { weight, .. } => {
                    let lp = self.head.time_log_probs(&tr.pooled).expect("TDA head");
                    let b = tr.bin.expect("TDA has bins");
                    parts.time -= lp[b] / n;
                    let lambda = self.head.config().lambda_grl;
                    for (k, lpk) in lp.iter().enumerate() {
                        let dl = (lpk.exp() - f64::from(k == b)) / n;
                        g[HEAD + 1][k] += dl;
                        let row = &weight[k * d..(k + 1) * d];
                        for i in 0..d {
                            g[HEAD][k * d + i] += dl * tr.pooled[i];
                            // reversed on the way into the encoder
                            dpooled[i] -= lambda * dl * row[i];
                        }
                    }
                }
                _ => {}
            }

            let scale = 1.0 / s.buckets.len() as f64;
            for &bucket in &s.buckets {
                let row = &mut g[EMB][bucket as usize * d..(bucket as usize + 1) * d];
                row.iter_mut().zip(&dpooled).for_each(|(a, x)| *a += x * scale);
            }
        }
        if let HeadParams::Dcwe { offsets } = &self.head.params {
            let cfg = self.head.config();
            parts.temporal = crate::temporal::dcwe_regularizer(offsets, d, cfg.lambda_prior, cfg.k);
            crate::temporal::dcwe_regularizer_grad(offsets, d, cfg.lambda_prior, cfg.k, &mut g[HEAD]);
        }
        Ok(parts)
    }

    /// Time-bin log-probabilities of the TDA head, if any.
    pub fn time_log_probs(&self, sample: &Sample) -> Result<Option<Vec<f64>>> {
        let pooled = self.trace(sample)?.pooled;
        Ok(self.head.time_log_probs(&pooled))
    }
}
