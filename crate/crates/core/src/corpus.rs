//! Timestamped examples, the line-delimited corpus format, and a synthetic
//! corpus generator with controllable semantic shift and neologisms.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::tokenize;
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Pre,
    Acute,
    Post,
}

impl Phase {
    pub fn index(self) -> usize {
        match self {
            Phase::Pre => 0,
            Phase::Acute => 1,
            Phase::Post => 2,
        }
    }

    /// Inclusive acute window: `start <= ts <= end` is acute.
    pub fn of(timestamp: i64, acute_start: i64, acute_end: i64) -> Phase {
        if timestamp < acute_start {
            Phase::Pre
        } else if timestamp <= acute_end {
            Phase::Acute
        } else {
            Phase::Post
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Pre => "pre",
            Phase::Acute => "acute",
            Phase::Post => "post",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimedExample {
    pub id: String,
    pub text: String,
    /// Epoch seconds, UTC.
    pub timestamp: i64,
    pub label: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase: Option<Phase>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Binary,
    Multiclass,
}

/// Examples ordered by `(timestamp, id)` with unique ids and labels below
/// `n_classes`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    examples: Vec<TimedExample>,
    n_classes: usize,
}

impl Corpus {
    pub fn new(mut examples: Vec<TimedExample>, n_classes: usize) -> Result<Self> {
        if n_classes < 2 {
            return Err(Error::Config(format!("n_classes must be >= 2, got {n_classes}")));
        }
        let mut seen = HashSet::with_capacity(examples.len());
        for ex in &examples {
            if !seen.insert(ex.id.as_str()) {
                return Err(Error::DuplicateId(ex.id.clone()));
            }
            if ex.label >= n_classes {
                return Err(Error::Config(format!(
                    "example {:?} has label {} but n_classes is {}",
                    ex.id, ex.label, n_classes
                )));
            }
        }
        examples.sort_by(|a, b| (a.timestamp, &a.id).cmp(&(b.timestamp, &b.id)));
        Ok(Corpus { examples, n_classes })
    }

    pub fn examples(&self) -> &[TimedExample] {
        &self.examples
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn task(&self) -> Task {
        if self.n_classes == 2 {
            Task::Binary
        } else {
            Task::Multiclass
        }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&TimedExample> {
        self.examples.iter().find(|e| e.id == id)
    }

    /// Examples for the given ids, in the order of `ids`.
    pub fn select<'a>(&'a self, ids: &[String]) -> Result<Vec<&'a TimedExample>> {
        let index: std::collections::HashMap<&str, &TimedExample> =
            self.examples.iter().map(|e| (e.id.as_str(), e)).collect();
        ids.iter()
            .map(|id| {
                index
                    .get(id.as_str())
                    .copied()
                    .ok_or_else(|| Error::Split(format!("id {id:?} not in corpus")))
            })
            .collect()
    }

    pub fn has_phases(&self) -> bool {
        !self.examples.is_empty() && self.examples.iter().all(|e| e.phase.is_some())
    }
}

#[derive(Deserialize)]
struct RawRecord {
    id: String,
    text: String,
    timestamp: i64,
    label: i64,
    #[serde(default)]
    phase: Option<Phase>,
}

/// Reads a line-delimited corpus. Blank lines are skipped; records whose
/// text has no tokens are dropped with a warning since they cannot be
/// encoded.
pub fn load_corpus(path: &Path, n_classes: usize) -> Result<Corpus> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut examples = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in raw.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse { path: path.to_path_buf(), line: line_no, msg };
        let rec: RawRecord = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
        if rec.label < 0 || rec.label as usize >= n_classes {
            return Err(parse_err(format!(
                "label {} out of range for {} classes",
                rec.label, n_classes
            )));
        }
        if !seen.insert(rec.id.clone()) {
            return Err(Error::DuplicateId(rec.id));
        }
        if tokenize(&rec.text).is_empty() {
            log::warn!("{}:{}: dropping {:?}, text has no tokens", path.display(), line_no, rec.id);
            continue;
        }
        examples.push(TimedExample {
            id: rec.id,
            text: rec.text,
            timestamp: rec.timestamp,
            label: rec.label as usize,
            phase: rec.phase,
        });
    }
    Corpus::new(examples, n_classes)
}

pub fn corpus_to_string(corpus: &Corpus) -> String {
    let mut out = String::new();
    for ex in corpus.examples() {
        out.push_str(&serde_json::to_string(ex).expect("example serializes"));
        out.push('\n');
    }
    out
}

pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<()> {
    crate::experiment::write_atomic(path, corpus_to_string(corpus).as_bytes())
}

/// Returns a copy of the corpus with each example's crisis phase set from
/// its timestamp relative to the inclusive acute window.
pub fn assign_phases(corpus: &Corpus, acute_start: i64, acute_end: i64) -> Corpus {
    let examples = corpus
        .examples
        .iter()
        .map(|e| TimedExample { phase: Some(Phase::of(e.timestamp, acute_start, acute_end)), ..e.clone() })
        .collect();
    Corpus { examples, n_classes: corpus.n_classes }
}

/// Parameters of the synthetic drift corpus.
///
/// Four vocabularies feed the texts:
/// * stable tokens `s<j>` always vote for class `j mod n_classes`;
/// * drifting tokens `d<j>` vote for class `j mod n_classes` before
///   `drift_time` and for the next class (cyclically) from then on;
/// * neologisms `n<j>` only occur at or after `neologism_time` and vote for
///   class `j mod n_classes`;
/// * noise tokens `w<j>` carry no class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftGenConfig {
    pub n_examples: usize,
    pub t_start: i64,
    pub t_end: i64,
    pub n_classes: usize,
    pub stable_vocab: usize,
    pub drifting_vocab: usize,
    pub neologism_vocab: usize,
    pub noise_vocab: usize,
    pub tokens_per_text: usize,
    pub drift_time: i64,
    pub neologism_time: i64,
    pub acute_window: (i64, i64),
    pub label_noise: f64,
    pub seed: u64,
}

impl DriftGenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("generator: {m}")));
        if self.n_examples == 0 || self.tokens_per_text == 0 || self.stable_vocab == 0 {
            return bad("n_examples, tokens_per_text and stable_vocab must be positive");
        }
        if self.n_classes < 2 {
            return bad("n_classes must be >= 2");
        }
        if !(self.t_start < self.drift_time && self.drift_time < self.t_end) {
            return bad("need t_start < drift_time < t_end");
        }
        let (a, b) = self.acute_window;
        if !(self.t_start <= a && a <= b && b <= self.t_end) {
            return bad("acute_window must lie within [t_start, t_end]");
        }
        if !(0.0..=1.0).contains(&self.label_noise) {
            return bad("label_noise must be in [0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
enum VocabKind {
    Stable,
    Drifting,
    Neologism,
    Noise,
}

/// Class vote of a generated token at a given time; `None` for noise.
fn token_class(kind: VocabKind, j: usize, timestamp: i64, cfg: &DriftGenConfig) -> Option<usize> {
    let n = cfg.n_classes;
    match kind {
        VocabKind::Stable | VocabKind::Neologism => Some(j % n),
        VocabKind::Drifting if timestamp < cfg.drift_time => Some(j % n),
        VocabKind::Drifting => Some((j % n + 1) % n),
        VocabKind::Noise => None,
    }
}

/// Generates the synthetic drift corpus.
///
/// Draw order: first every timestamp, `t_start + below(t_end - t_start + 1)`
/// for examples `i = 0..n` (ids `ex<i:06>`), so the time layout depends only
/// on the seed, size and range. Then per example one `below(pool)` per token
/// slot, where the pool is the concatenation stable, drifting, neologism
/// (only when `timestamp >= neologism_time`), noise; then one `uniform()`
/// for the noise flip, followed by `below(n_classes - 1)` only when the
/// label flips (skipping the true class).
pub fn generate_drift_corpus(cfg: &DriftGenConfig) -> Result<Corpus> {
    cfg.validate()?;
    let mut rng = Rng::new(cfg.seed);
    let span = (cfg.t_end - cfg.t_start + 1) as u64;
    let stamps: Vec<i64> = (0..cfg.n_examples).map(|_| cfg.t_start + rng.below(span) as i64).collect();
    let mut examples = Vec::with_capacity(cfg.n_examples);
    for (i, timestamp) in stamps.into_iter().enumerate() {
        let with_neo = timestamp >= cfg.neologism_time;
        let pool = cfg.stable_vocab
            + cfg.drifting_vocab
            + if with_neo { cfg.neologism_vocab } else { 0 }
            + cfg.noise_vocab;
        let mut votes = vec![0usize; cfg.n_classes];
        let mut words = Vec::with_capacity(cfg.tokens_per_text);
        for _ in 0..cfg.tokens_per_text {
            let mut k = rng.index(pool);
            let (kind, prefix) = if k < cfg.stable_vocab {
                (VocabKind::Stable, 's')
            } else {
                k -= cfg.stable_vocab;
                if k < cfg.drifting_vocab {
                    (VocabKind::Drifting, 'd')
                } else {
                    k -= cfg.drifting_vocab;
                    if with_neo && k < cfg.neologism_vocab {
                        (VocabKind::Neologism, 'n')
                    } else {
                        if with_neo {
                            k -= cfg.neologism_vocab;
                        }
                        (VocabKind::Noise, 'w')
                    }
                }
            };
            if let Some(c) = token_class(kind, k, timestamp, cfg) {
                votes[c] += 1;
            }
            words.push(format!("{prefix}{k}"));
        }
        // max_by_key keeps the last maximum; scan manually for the lowest id.
        let mut label = 0;
        for (c, &v) in votes.iter().enumerate() {
            if v > votes[label] {
                label = c;
            }
        }
        if rng.uniform() < cfg.label_noise {
            let other = rng.index(cfg.n_classes - 1);
            label = if other >= label { other + 1 } else { other };
        }
        let (a, b) = cfg.acute_window;
        examples.push(TimedExample {
            id: format!("ex{i:06}"),
            text: words.join(" "),
            timestamp,
            label,
            phase: Some(Phase::of(timestamp, a, b)),
        });
    }
    Corpus::new(examples, cfg.n_classes)
}
