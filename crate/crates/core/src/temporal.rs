//! Time conditioning for the encoder.
//!
//! * `TM` and `SEP` rewrite the token stream with the UTC date.
//! * `DCWE` adds a learned per-bin offset to every token embedding and
//!   regularizes offsets toward zero and toward their predecessor.
//! * `LMSOC` concatenates a frozen spectral embedding of the bin (path
//!   graph over bins) to the pooled representation.
//! * `TAPH` projects the pooled representation onto a learned hyperplane.
//! * `TDA` trains a bin classifier on the pooled representation through a
//!   gradient reversal layer.

use std::fmt;
use std::str::FromStr;

use chrono::DateTime;
use serde::{Deserialize, Serialize};

use crate::encoder::{dot, log_softmax, SEP_TOKEN};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::splits::TimeBinning;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Variant {
    None,
    Tm,
    Sep,
    Dcwe,
    Lmsoc,
    Taph,
    Tda,
}

impl Variant {
    pub const ALL: [Variant; 7] =
        [Variant::None, Variant::Tm, Variant::Sep, Variant::Dcwe, Variant::Lmsoc, Variant::Taph, Variant::Tda];

    pub fn uses_binning(self) -> bool {
        matches!(self, Variant::Dcwe | Variant::Lmsoc | Variant::Tda)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::None => "NONE",
            Variant::Tm => "TM",
            Variant::Sep => "SEP",
            Variant::Dcwe => "DCWE",
            Variant::Lmsoc => "LMSOC",
            Variant::Taph => "TAPH",
            Variant::Tda => "TDA",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.contains(['+', ',', '|']) {
            return Err(Error::Config(format!("only one temporal variant may be active, got {s:?}")));
        }
        Variant::ALL
            .into_iter()
            .find(|v| v.to_string().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown temporal variant {s:?}")))
    }
}

impl TryFrom<String> for Variant {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// The `temporal` section of a run config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadConfig {
    #[serde(deserialize_with = "variant_from_str")]
    pub variant: Variant,
    /// Precision of the Gaussian prior on DCWE offsets.
    pub lambda_prior: f64,
    /// Weight of the DCWE smoothness term.
    #[serde(rename = "K")]
    pub k: f64,
    /// Width of the LMSOC time embedding.
    pub k_g: usize,
    /// Scale of the reversed gradient in TDA.
    pub lambda_grl: f64,
    pub n_bins: usize,
}

fn variant_from_str<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Variant, D::Error> {
    let s = String::deserialize(d)?;
    s.parse().map_err(serde::de::Error::custom)
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig { variant: Variant::None, lambda_prior: 0.01, k: 1e3, k_g: 4, lambda_grl: 1.0, n_bins: 10 }
    }
}

impl HeadConfig {
    pub fn with_variant(variant: Variant) -> Self {
        HeadConfig { variant, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_prior > 0.0) || !(self.k >= 0.0) || !(self.lambda_grl >= 0.0) {
            return Err(Error::Config("temporal: lambda_prior > 0, K >= 0, lambda_grl >= 0 required".into()));
        }
        if self.k_g == 0 || self.n_bins < 2 {
            return Err(Error::Config("temporal: k_g >= 1 and n_bins >= 2 required".into()));
        }
        Ok(())
    }
}

/// `["YYYY", "MM", "DD"]` of the UTC date.
pub fn date_tokens(timestamp: i64) -> Vec<String> {
    let dt = DateTime::from_timestamp(timestamp, 0).expect("timestamp within chrono range");
    dt.format("%Y %m %d").to_string().split(' ').map(str::to_owned).collect()
}

/// `TM`: date tokens in front of the text.
pub fn prepend_time_tokens(tokens: &[String], timestamp: i64) -> Vec<String> {
    let mut out = date_tokens(timestamp);
    out.extend_from_slice(tokens);
    out
}

/// `SEP`: text, separator, date tokens.
pub fn append_time_segment(tokens: &[String], timestamp: i64) -> Vec<String> {
    let mut out = tokens.to_vec();
    out.push(SEP_TOKEN.to_owned());
    out.extend(date_tokens(timestamp));
    out
}

/// `(lambda / T) * sum_b (|d_b|^2 + K |d_b - d_{b-1}|^2)` over `T` bins
/// with `d_{-1} = 0`. `offsets` is row-major `T x dim`.
pub fn dcwe_regularizer(offsets: &[f64], dim: usize, lambda: f64, k: f64) -> f64 {
    let t = offsets.len() / dim;
    let mut total = 0.0;
    for b in 0..t {
        let cur = &offsets[b * dim..(b + 1) * dim];
        let norm: f64 = cur.iter().map(|x| x * x).sum();
        let diff: f64 = if b == 0 {
            norm
        } else {
            cur.iter().zip(&offsets[(b - 1) * dim..b * dim]).map(|(x, y)| (x - y) * (x - y)).sum()
        };
        total += norm + k * diff;
    }
    lambda / t as f64 * total
}

/// Accumulates the regularizer gradient into `grad`.
pub fn dcwe_regularizer_grad(offsets: &[f64], dim: usize, lambda: f64, k: f64, grad: &mut [f64]) {
    let t = offsets.len() / dim;
    let c = lambda / t as f64;
    let at = |b: usize, i: usize| offsets[b * dim + i];
    for b in 0..t {
        for i in 0..dim {
            let prev = if b == 0 { 0.0 } else { at(b - 1, i) };
            let mut g = 2.0 * at(b, i) + 2.0 * k * (at(b, i) - prev);
            if b + 1 < t {
                g -= 2.0 * k * (at(b + 1, i) - at(b, i));
            }
            grad[b * dim + i] += c * g;
        }
    }
}

/// Frozen `T x k_g` time table: column `k` (1-based) is
/// `cos(pi k (t + 0.5) / T)` normalized to unit length, i.e. the `k`-th
/// nontrivial Laplacian eigenvector of the path graph on `T` nodes.
pub fn lmsoc_time_embedding(n_bins: usize, k_g: usize) -> Result<Vec<f64>> {
    if k_g == 0 || k_g >= n_bins {
        return Err(Error::Config(format!("LMSOC needs 1 <= k_g < T, got k_g={k_g}, T={n_bins}")));
    }
    let t = n_bins as f64;
    let mut table = vec![0.0; n_bins * k_g];
    for k in 1..=k_g {
        let col: Vec<f64> =
            (0..n_bins).map(|i| (std::f64::consts::PI * k as f64 * (i as f64 + 0.5) / t).cos()).collect();
        let norm = col.iter().map(|x| x * x).sum::<f64>().sqrt();
        for (i, x) in col.into_iter().enumerate() {
            table[i * k_g + (k - 1)] = x / norm;
        }
    }
    Ok(table)
}

const MIN_NORMAL_NORM: f64 = 1e-12;

/// `H - (u . H) u` with `u = w / |w|`.
pub fn taph_project(w: &[f64], h: &[f64]) -> Result<Vec<f64>> {
    let norm = dot(w, w).sqrt();
    if norm < MIN_NORMAL_NORM {
        return Err(Error::Model("TAPH hyperplane normal has (near) zero norm".into()));
    }
    let s = dot(w, h) / (norm * norm);
    Ok(h.iter().zip(w).map(|(x, wi)| x - s * wi).collect())
}

/// Given `g = dL/dH_t`, returns `(dL/dH, dL/dw)`.
pub fn taph_backward(w: &[f64], h: &[f64], g: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let norm = dot(w, w).sqrt();
    let u: Vec<f64> = w.iter().map(|x| x / norm).collect();
    let s = dot(&u, h);
    let ug = dot(&u, g);
    let dh: Vec<f64> = g.iter().zip(&u).map(|(gi, ui)| gi - ug * ui).collect();
    let du: Vec<f64> = g.iter().zip(h).map(|(gi, hi)| -(s * gi + ug * hi)).collect();
    let udu = dot(&u, &du);
    let dw = du.iter().zip(&u).map(|(d, ui)| (d - udu * ui) / norm).collect();
    (dh, dw)
}

/// Gradient reversal: identity forward.
pub fn grl_forward(x: f64) -> f64 {
    x
}

/// Gradient reversal: upstream gradient is `-lambda * g`.
pub fn grl_backward(g: f64, lambda: f64) -> f64 {
    -lambda * g
}

#[derive(Debug, Clone, PartialEq)]
pub enum HeadParams {
    Empty,
    Dcwe { offsets: Vec<f64> },
    Lmsoc { time_embed: Vec<f64> },
    Taph { w: Vec<f64> },
    Tda { weight: Vec<f64>, bias: Vec<f64> },
}

/// How the optimizer treats a tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlotKind {
    pub trainable: bool,
    pub decay: bool,
}

pub const DECAYED: SlotKind = SlotKind { trainable: true, decay: true };
pub const UNDECAYED: SlotKind = SlotKind { trainable: true, decay: false };
pub const FROZEN: SlotKind = SlotKind { trainable: false, decay: false };

/// Active time conditioning: the effective config, the bins learned from
/// the training timestamps (for DCWE, LMSOC, TDA) and the variant's own
/// tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalHead {
    config: HeadConfig,
    binning: Option<TimeBinning>,
    dim: usize,
    pub params: HeadParams,
}

impl TemporalHead {
    pub fn none(dim: usize) -> Self {
        TemporalHead { config: HeadConfig::default(), binning: None, dim, params: HeadParams::Empty }
    }

    /// Builds the head for embeddings of width `dim`, binning the training
    /// timestamps when the variant needs bins. LMSOC's `k_g` is capped at
    /// `T - 1` when the training data yields fewer bins than requested.
    pub fn build(config: &HeadConfig, train_timestamps: &[i64], dim: usize, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let mut config = config.clone();
        let binning = if config.variant.uses_binning() {
            Some(TimeBinning::for_training(train_timestamps, config.n_bins)?)
        } else {
            None
        };
        let n_bins = binning.as_ref().map_or(0, TimeBinning::n_bins);
        let params = match config.variant {
            Variant::None | Variant::Tm | Variant::Sep => HeadParams::Empty,
            Variant::Dcwe => HeadParams::Dcwe { offsets: vec![0.0; n_bins * dim] },
            Variant::Lmsoc => {
                if config.k_g >= n_bins {
                    log::warn!("LMSOC k_g={} capped to {} for {} bins", config.k_g, n_bins - 1, n_bins);
                    config.k_g = n_bins - 1;
                }
                HeadParams::Lmsoc { time_embed: lmsoc_time_embedding(n_bins, config.k_g)? }
            }
            Variant::Taph => {
                HeadParams::Taph { w: (0..dim).map(|_| rng.uniform_range(-0.05, 0.05)).collect() }
            }
            Variant::Tda => HeadParams::Tda {
                weight: (0..n_bins * dim).map(|_| rng.uniform_range(-0.05, 0.05)).collect(),
                bias: vec![0.0; n_bins],
            },
        };
        Ok(TemporalHead { config, binning, dim, params })
    }

    /// Reassembles a head from persisted parts, checking tensor shapes.
    pub fn from_parts(
        config: HeadConfig,
        binning: Option<TimeBinning>,
        dim: usize,
        mut tensors: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let n_bins = binning.as_ref().map_or(0, TimeBinning::n_bins);
        let shapes = head_shapes(config.variant, n_bins, dim, config.k_g);
        if tensors.len() != shapes.len() || tensors.iter().zip(&shapes).any(|(t, (_, n))| t.len() != *n) {
            return Err(Error::Checkpoint(format!("tensor shapes do not match a {} head", config.variant)));
        }
        if config.variant.uses_binning() != binning.is_some() {
            return Err(Error::Checkpoint("binning presence does not match the variant".into()));
        }
        let mut next = || tensors.remove(0);
        let params = match config.variant {
            Variant::None | Variant::Tm | Variant::Sep => HeadParams::Empty,
            Variant::Dcwe => HeadParams::Dcwe { offsets: next() },
            Variant::Lmsoc => HeadParams::Lmsoc { time_embed: next() },
            Variant::Taph => HeadParams::Taph { w: next() },
            Variant::Tda => {
                let weight = next();
                HeadParams::Tda { weight, bias: next() }
            }
        };
        Ok(TemporalHead { config, binning, dim, params })
    }

    pub fn config(&self) -> &HeadConfig {
        &self.config
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn binning(&self) -> Option<&TimeBinning> {
        self.binning.as_ref()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Bin used by the head for this timestamp, clamped for unseen times.
    pub fn bin_of(&self, timestamp: i64) -> Option<usize> {
        self.binning.as_ref().map(|b| b.bin_of(timestamp))
    }

    /// Extra classifier input width (LMSOC time row).
    pub fn extra_input_dim(&self) -> usize {
        match &self.params {
            HeadParams::Lmsoc { .. } => self.config.k_g,
            _ => 0,
        }
    }

    /// Token rewrite applied before hashing for supervised training and
    /// inference.
    pub fn rewrite_tokens(&self, tokens: &[String], timestamp: i64) -> Vec<String> {
        match self.config.variant {
            Variant::Tm => prepend_time_tokens(tokens, timestamp),
            Variant::Sep => append_time_segment(tokens, timestamp),
            _ => tokens.to_vec(),
        }
    }

    /// Token rewrite for masked-token pretraining: only `TM` adds time there.
    pub fn rewrite_for_pretraining(&self, tokens: &[String], timestamp: i64) -> Vec<String> {
        match self.config.variant {
            Variant::Tm => prepend_time_tokens(tokens, timestamp),
            _ => tokens.to_vec(),
        }
    }

    /// `h_i + d_b` for every token embedding.
    pub fn dcwe_apply(&self, token_embeddings: &[Vec<f64>], timestamp: i64) -> Result<Vec<Vec<f64>>> {
        let off = self.dcwe_offset(timestamp)?;
        Ok(token_embeddings.iter().map(|h| h.iter().zip(off).map(|(a, b)| a + b).collect()).collect())
    }

    pub(crate) fn dcwe_offset(&self, timestamp: i64) -> Result<&[f64]> {
        match &self.params {
            HeadParams::Dcwe { offsets } => {
                let b = self.bin_of(timestamp).expect("DCWE has bins");
                Ok(&offsets[b * self.dim..(b + 1) * self.dim])
            }
            _ => Err(Error::Model(format!("dcwe_apply on a {} head", self.variant()))),
        }
    }

    /// DCWE prior + smoothness loss; zero for other variants.
    pub fn temporal_regularizer(&self) -> f64 {
        match &self.params {
            HeadParams::Dcwe { offsets } => {
                dcwe_regularizer(offsets, self.dim, self.config.lambda_prior, self.config.k)
            }
            _ => 0.0,
        }
    }

    pub(crate) fn lmsoc_row(&self, bin: usize) -> &[f64] {
        match &self.params {
            HeadParams::Lmsoc { time_embed } => &time_embed[bin * self.config.k_g..(bin + 1) * self.config.k_g],
            _ => &[],
        }
    }

    /// Time-bin log-probabilities of the TDA head for a pooled embedding.
    pub fn time_log_probs(&self, h: &[f64]) -> Option<Vec<f64>> {
        match &self.params {
            HeadParams::Tda { weight, bias } => {
                let logits: Vec<f64> =
                    weight.chunks_exact(self.dim).zip(bias).map(|(row, b)| dot(row, h) + b).collect();
                Some(log_softmax(&logits))
            }
            _ => None,
        }
    }

    /// Cross-entropy of the time head against the example's bin.
    pub fn tda_loss(&self, h: &[f64], timestamp: i64) -> Result<f64> {
        let lp = self
            .time_log_probs(h)
            .ok_or_else(|| Error::Model(format!("tda_loss on a {} head", self.variant())))?;
        let b = self.bin_of(timestamp).expect("TDA has bins");
        Ok(-lp[b])
    }

    pub fn tensors(&self) -> Vec<(&'static str, SlotKind, &Vec<f64>)> {
        match &self.params {
            HeadParams::Empty => vec![],
            HeadParams::Dcwe { offsets } => vec![("dcwe.offsets", UNDECAYED, offsets)],
            HeadParams::Lmsoc { time_embed } => vec![("lmsoc.time_embed", FROZEN, time_embed)],
            HeadParams::Taph { w } => vec![("taph.w", UNDECAYED, w)],
            HeadParams::Tda { weight, bias } => vec![("tda.weight", DECAYED, weight), ("tda.bias", UNDECAYED, bias)],
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, SlotKind, &mut Vec<f64>)> {
        match &mut self.params {
            HeadParams::Empty => vec![],
            HeadParams::Dcwe { offsets } => vec![("dcwe.offsets", UNDECAYED, offsets)],
            HeadParams::Lmsoc { time_embed } => vec![("lmsoc.time_embed", FROZEN, time_embed)],
            HeadParams::Taph { w } => vec![("taph.w", UNDECAYED, w)],
            HeadParams::Tda { weight, bias } => {
                vec![("tda.weight", DECAYED, weight), ("tda.bias", UNDECAYED, bias)]
            }
        }
    }
}

fn head_shapes(variant: Variant, n_bins: usize, dim: usize, k_g: usize) -> Vec<(&'static str, usize)> {
    match variant {
        Variant::None | Variant::Tm | Variant::Sep => vec![],
        Variant::Dcwe => vec![("dcwe.offsets", n_bins * dim)],
        Variant::Lmsoc => vec![("lmsoc.time_embed", n_bins * k_g)],
        Variant::Taph => vec![("taph.w", dim)],
        Variant::Tda => vec![("tda.weight", n_bins * dim), ("tda.bias", n_bins)],
    }
}
