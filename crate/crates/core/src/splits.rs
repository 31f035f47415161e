//! Time binning and the `CONT` / `TEMP` / `PROG` split protocols.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, TimedExample};
use crate::error::{Error, Result};
use crate::rng::Rng;

pub const DAY: i64 = 86_400;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinMode {
    EqualCount,
    EqualSpan,
}

/// Half-open bins `[boundaries[k], boundaries[k + 1])`. Timestamps outside
/// the covered range clamp to the first or last bin.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeBinning {
    boundaries: Vec<i64>,
    mode: BinMode,
}

impl TimeBinning {
    pub fn from_boundaries(boundaries: Vec<i64>, mode: BinMode) -> Result<Self> {
        if boundaries.len() < 3 {
            return Err(Error::Split(format!(
                "a binning needs at least 2 bins, got {} boundaries",
                boundaries.len()
            )));
        }
        if boundaries.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Split("bin boundaries must be strictly increasing".into()));
        }
        Ok(TimeBinning { boundaries, mode })
    }

    /// Equal-count bins over the given timestamps, boundaries rounded down
    /// to multiples of `granularity` seconds. Remainder examples go to the
    /// earliest bins. Rounding can merge bins, so the result may have fewer
    /// than `n_bins` bins; it fails when fewer than two remain.
    pub fn equal_count(timestamps: &[i64], n_bins: usize, granularity: i64) -> Result<Self> {
        if n_bins < 2 {
            return Err(Error::Split("n_bins must be >= 2".into()));
        }
        if timestamps.is_empty() {
            return Err(Error::Split("cannot bin an empty timestamp list".into()));
        }
        let mut ts = timestamps.to_vec();
        ts.sort_unstable();
        let sizes = equal_count_sizes(ts.len(), n_bins.min(ts.len()));
        let mut boundaries: Vec<i64> = Vec::with_capacity(sizes.len() + 1);
        let mut start = 0;
        for size in sizes {
            let b = ts[start].div_euclid(granularity) * granularity;
            if boundaries.last().is_none_or(|&last| b > last) {
                boundaries.push(b);
            }
            start += size;
        }
        let end = ts[ts.len() - 1] + 1;
        if end > *boundaries.last().expect("non-empty") {
            boundaries.push(end);
        }
        TimeBinning::from_boundaries(boundaries, BinMode::EqualCount)
    }

    pub fn equal_span(t_min: i64, t_max: i64, n_bins: usize) -> Result<Self> {
        if n_bins < 2 || t_max < t_min {
            return Err(Error::Split("equal_span needs n_bins >= 2 and t_min <= t_max".into()));
        }
        let width = (t_max + 1 - t_min) as i128;
        let boundaries = (0..=n_bins)
            .map(|k| t_min + (width * k as i128 / n_bins as i128) as i64)
            .collect();
        TimeBinning::from_boundaries(boundaries, BinMode::EqualSpan)
    }

    /// Default binning for time-conditioned heads: equal-count at day
    /// granularity, falling back to one-second granularity when the
    /// training data spans too few days.
    pub fn for_training(timestamps: &[i64], n_bins: usize) -> Result<Self> {
        TimeBinning::equal_count(timestamps, n_bins, DAY)
            .or_else(|_| TimeBinning::equal_count(timestamps, n_bins, 1))
    }

    pub fn n_bins(&self) -> usize {
        self.boundaries.len() - 1
    }

    pub fn boundaries(&self) -> &[i64] {
        &self.boundaries
    }

    pub fn mode(&self) -> BinMode {
        self.mode
    }

    pub fn bin_of(&self, timestamp: i64) -> usize {
        // Number of boundaries <= ts, minus one, clamped into [0, T).
        let above = self.boundaries.partition_point(|&b| b <= timestamp);
        above.saturating_sub(1).min(self.n_bins() - 1)
    }
}

/// Bin sizes for `n` items in `k` bins, larger bins first.
pub fn equal_count_sizes(n: usize, k: usize) -> Vec<usize> {
    let (base, rem) = (n / k, n % k);
    (0..k).map(|i| base + usize::from(i < rem)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Setting {
    Cont,
    Temp,
    Prog,
    /// Single-bin training used by the score matrix.
    Bin,
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Setting::Cont => "CONT",
            Setting::Temp => "TEMP",
            Setting::Prog => "PROG",
            Setting::Bin => "BIN",
        })
    }
}

/// One materialized split. Id lists keep corpus order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExperimentSplit {
    pub setting: Setting,
    pub seed: u64,
    pub prog_step: Option<usize>,
    pub train_ids: Vec<String>,
    pub dev_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

impl ExperimentSplit {
    pub fn validate(&self, corpus: &Corpus) -> Result<()> {
        let known: HashSet<&str> = corpus.examples().iter().map(|e| e.id.as_str()).collect();
        let mut seen = HashSet::new();
        for id in self.train_ids.iter().chain(&self.dev_ids).chain(&self.test_ids) {
            if !known.contains(id.as_str()) {
                return Err(Error::Split(format!("id {id:?} not in corpus")));
            }
            if !seen.insert(id.as_str()) {
                return Err(Error::Split(format!("id {id:?} appears in more than one part")));
            }
        }
        Ok(())
    }

    /// Training pool size (train + dev).
    pub fn pool_len(&self) -> usize {
        self.train_ids.len() + self.dev_ids.len()
    }
}

fn ids_of(examples: &[&TimedExample]) -> Vec<String> {
    examples.iter().map(|e| e.id.clone()).collect()
}

/// Splits the corpus at the midpoint of its time range. Halves cover equal
/// time spans, not equal counts.
pub fn temporal_halves(corpus: &Corpus) -> Result<(Vec<String>, Vec<String>)> {
    let (first, second) = halves(corpus)?;
    Ok((ids_of(&first), ids_of(&second)))
}

fn halves(corpus: &Corpus) -> Result<(Vec<&TimedExample>, Vec<&TimedExample>)> {
    let exs = corpus.examples();
    let (Some(lo), Some(hi)) = (exs.first(), exs.last()) else {
        return Err(Error::Split("empty corpus".into()));
    };
    if lo.timestamp == hi.timestamp {
        return Err(Error::Split("all timestamps identical, no temporal halves".into()));
    }
    // ts < (lo + hi) / 2, kept exact in integers.
    let twice_mid = lo.timestamp as i128 + hi.timestamp as i128;
    Ok(exs.iter().partition(|e| (e.timestamp as i128) * 2 < twice_mid))
}

/// Dev size carved from a training pool: 10%, rounded down, at least one
/// example when the pool has two or more.
pub fn dev_size(pool: usize) -> usize {
    if pool < 2 {
        0
    } else {
        (pool / 10).max(1)
    }
}

/// Moves a seeded 10% of `pool` into dev. Both outputs keep corpus order.
fn carve_dev(pool: Vec<&TimedExample>, rng: &mut Rng) -> (Vec<String>, Vec<String>) {
    let picked: HashSet<usize> = rng.sample_indices(pool.len(), dev_size(pool.len())).into_iter().collect();
    let (mut train, mut dev) = (Vec::new(), Vec::new());
    for (i, e) in pool.into_iter().enumerate() {
        if picked.contains(&i) {
            dev.push(e.id.clone());
        } else {
            train.push(e.id.clone());
        }
    }
    (train, dev)
}

/// Picks `k` of `items` uniformly, returning (picked, rest) in corpus order.
fn sample_part<'a>(
    items: &[&'a TimedExample],
    k: usize,
    rng: &mut Rng,
) -> (Vec<&'a TimedExample>, Vec<&'a TimedExample>) {
    let picked: HashSet<usize> = rng.sample_indices(items.len(), k).into_iter().collect();
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for (i, &e) in items.iter().enumerate() {
        if picked.contains(&i) {
            a.push(e);
        } else {
            b.push(e);
        }
    }
    (a, b)
}

/// `TEMP`: train on the whole first half, test on a seeded half of the
/// second half (rounded down).
pub fn make_temp_split(corpus: &Corpus, seed: u64) -> Result<ExperimentSplit> {
    let (first, second) = halves(corpus)?;
    if first.is_empty() || second.is_empty() {
        return Err(Error::Split("a temporal half is empty".into()));
    }
    let mut rng = Rng::new(seed);
    let (test, _) = sample_part(&second, second.len() / 2, &mut rng);
    let (train_ids, dev_ids) = carve_dev(first, &mut rng);
    Ok(ExperimentSplit {
        setting: Setting::Temp,
        seed,
        prog_step: None,
        train_ids,
        dev_ids,
        test_ids: ids_of(&test),
    })
}

/// `CONT`: same test set as `TEMP`, with a training pool of the same size
/// drawn half from the first half and half from the non-test remainder of
/// the second half.
pub fn make_cont_split(corpus: &Corpus, seed: u64) -> Result<ExperimentSplit> {
    let (first, second) = halves(corpus)?;
    if first.is_empty() || second.is_empty() {
        return Err(Error::Split("a temporal half is empty".into()));
    }
    let mut rng = Rng::new(seed);
    // Identical draws to make_temp_split up to here.
    let (test, second_rest) = sample_part(&second, second.len() / 2, &mut rng);
    let n = first.len();
    let from_first = n.div_ceil(2);
    let from_second = n - from_first;
    if second_rest.len() < from_second {
        return Err(Error::Split(format!(
            "CONT needs {from_second} non-test examples from the second half, only {} available",
            second_rest.len()
        )));
    }
    let (a, _) = sample_part(&first, from_first, &mut rng);
    let (b, _) = sample_part(&second_rest, from_second, &mut rng);
    let mut pool: Vec<&TimedExample> = a.into_iter().chain(b).collect();
    pool.sort_by(|x, y| (x.timestamp, &x.id).cmp(&(y.timestamp, &y.id)));
    let (train_ids, dev_ids) = carve_dev(pool, &mut rng);
    Ok(ExperimentSplit {
        setting: Setting::Cont,
        seed,
        prog_step: None,
        train_ids,
        dev_ids,
        test_ids: ids_of(&test),
    })
}

/// Equal-count bins over the corpus order, as example-index ranges.
pub fn prog_bins(corpus: &Corpus, n_bins: usize) -> Result<Vec<std::ops::Range<usize>>> {
    if n_bins < 3 {
        return Err(Error::Split("PROG needs n_bins >= 3".into()));
    }
    if corpus.len() < n_bins {
        return Err(Error::Split(format!(
            "PROG with {n_bins} bins needs at least {n_bins} examples, corpus has {}",
            corpus.len()
        )));
    }
    let mut start = 0;
    Ok(equal_count_sizes(corpus.len(), n_bins)
        .into_iter()
        .map(|s| {
            let r = start..start + s;
            start += s;
            r
        })
        .collect())
}

/// `PROG`: for each test bin `t` in `2..n_bins`, train on bins `0..=t-2`
/// and select on bin `t-1`.
pub fn make_prog_splits(corpus: &Corpus, n_bins: usize) -> Result<Vec<ExperimentSplit>> {
    let bins = prog_bins(corpus, n_bins)?;
    let exs = corpus.examples();
    let ids = |r: std::ops::Range<usize>| exs[r].iter().map(|e| e.id.clone()).collect::<Vec<_>>();
    Ok((2..n_bins)
        .map(|t| ExperimentSplit {
            setting: Setting::Prog,
            seed: 0,
            prog_step: Some(t),
            train_ids: ids(0..bins[t - 2].end),
            dev_ids: ids(bins[t - 1].clone()),
            test_ids: ids(bins[t].clone()),
        })
        .collect())
}
