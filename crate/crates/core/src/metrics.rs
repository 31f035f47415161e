//! Classification scores, temporal rigidity, clustering agreement and
//! paired significance.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, TimedExample};
use crate::error::{check_len, Error, Result};
use crate::rng::Rng;
use crate::splits::{dev_size, ExperimentSplit, Setting, TimeBinning};

fn f1_from_counts(tp: usize, fp: usize, fn_: usize) -> f64 {
    if tp == 0 {
        // P or R is zero (or undefined): F1 is 0 by convention.
        return 0.0;
    }
    let p = tp as f64 / (tp + fp) as f64;
    let r = tp as f64 / (tp + fn_) as f64;
    2.0 * p * r / (p + r)
}

fn class_f1(preds: &[usize], golds: &[usize], class: usize) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (&p, &g) in preds.iter().zip(golds) {
        match (p == class, g == class) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    f1_from_counts(tp, fp, fn_)
}

/// F1 of the positive class 1.
pub fn f1_binary(preds: &[usize], golds: &[usize]) -> Result<f64> {
    check_len(preds.len(), golds.len())?;
    Ok(class_f1(preds, golds, 1))
}

/// Unweighted mean of the per-class F1 over all `n_classes`, including
/// classes absent from both vectors (which score 0).
pub fn f1_macro(preds: &[usize], golds: &[usize], n_classes: usize) -> Result<f64> {
    check_len(preds.len(), golds.len())?;
    if n_classes == 0 {
        return Err(Error::Config("f1_macro needs n_classes >= 1".into()));
    }
    Ok((0..n_classes).map(|c| class_f1(preds, golds, c)).sum::<f64>() / n_classes as f64)
}

/// Binary F1 for two classes, macro F1 otherwise.
pub fn task_f1(preds: &[usize], golds: &[usize], n_classes: usize) -> Result<f64> {
    if n_classes == 2 {
        f1_binary(preds, golds)
    } else {
        f1_macro(preds, golds, n_classes)
    }
}

/// `f[i][j]`: score of the model trained on bin `i`, evaluated on bin `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMatrix {
    pub f: Vec<Vec<f64>>,
}

impl ScoreMatrix {
    pub fn new(f: Vec<Vec<f64>>) -> Result<Self> {
        let t = f.len();
        if f.iter().any(|row| row.len() != t) {
            return Err(Error::Config("score matrix must be square".into()));
        }
        if f.iter().flatten().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(Error::Config("score matrix entries must lie in [0, 1]".into()));
        }
        Ok(ScoreMatrix { f })
    }

    pub fn n_bins(&self) -> usize {
        self.f.len()
    }
}

/// Temporal rigidity: mean over ordered pairs `i != j` of
/// `|f[i][j] - f[i][i]| / |i - j|`.
pub fn tr_score(m: &ScoreMatrix) -> Result<f64> {
    let t = m.n_bins();
    if t < 2 {
        return Err(Error::Config("temporal rigidity needs at least 2 bins".into()));
    }
    let mut sum = 0.0;
    for i in 0..t {
        for j in 0..t {
            if i != j {
                sum += (m.f[i][j] - m.f[i][i]).abs() / i.abs_diff(j) as f64;
            }
        }
    }
    Ok(sum / (t * (t - 1)) as f64)
}

/// Trained model handed back by a score-matrix factory.
pub type Predictor = Box<dyn Fn(&[&TimedExample]) -> Result<Vec<usize>> + Send + Sync>;

/// Trains one model per bin and scores it on every bin.
///
/// Bin `i` is split into a seeded 10% held-out part and the rest; the
/// model trains on the rest, selects on the held-out part, and the
/// diagonal `f[i][i]` is measured on that held-out part. Off-diagonal
/// entries use the whole of bin `j`. Bins train in parallel.
pub fn build_score_matrix<F>(
    corpus: &Corpus,
    binning: &TimeBinning,
    seed: u64,
    model_factory: F,
) -> Result<ScoreMatrix>
where
    F: Fn(&ExperimentSplit) -> Result<Predictor> + Sync,
{
    let t = binning.n_bins();
    let mut bins: Vec<Vec<&TimedExample>> = vec![Vec::new(); t];
    for e in corpus.examples() {
        bins[binning.bin_of(e.timestamp)].push(e);
    }
    if let Some(i) = bins.iter().position(|b| b.len() < 2) {
        return Err(Error::Split(format!("bin {i} has fewer than 2 examples")));
    }
    let mut rng = Rng::new(seed);
    let splits: Vec<(ExperimentSplit, Vec<&TimedExample>)> = bins
        .iter()
        .enumerate()
        .map(|(i, bin)| {
            let mut r = rng.fork();
            let held: std::collections::HashSet<usize> =
                r.sample_indices(bin.len(), dev_size(bin.len())).into_iter().collect();
            let (mut train, mut dev) = (Vec::new(), Vec::new());
            for (k, e) in bin.iter().enumerate() {
                if held.contains(&k) {
                    dev.push(*e);
                } else {
                    train.push(e.id.clone());
                }
            }
            let split = ExperimentSplit {
                setting: Setting::Bin,
                seed,
                prog_step: Some(i),
                train_ids: train,
                dev_ids: dev.iter().map(|e| e.id.clone()).collect(),
                test_ids: Vec::new(),
            };
            (split, dev)
        })
        .collect();

    let n_classes = corpus.n_classes();
    let rows: Vec<Vec<f64>> = splits
        .par_iter()
        .enumerate()
        .map(|(i, (split, held_out))| {
            let predictor = model_factory(split)?;
            (0..t)
                .map(|j| {
                    let eval: &[&TimedExample] = if i == j { held_out } else { &bins[j] };
                    let preds = predictor(eval)?;
                    let golds: Vec<usize> = eval.iter().map(|e| e.label).collect();
                    task_f1(&preds, &golds, n_classes)
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    ScoreMatrix::new(rows)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, cen) in centroids.iter().enumerate() {
        let d = sq_dist(p, cen);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

pub const KMEANS_TOL: f64 = 1e-6;
pub const KMEANS_MAX_ITER: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Sum of squared distances to the assigned centroid after each
    /// assignment step.
    pub objective_trace: Vec<f64>,
}

/// k-means with D²-weighted seeding and Lloyd iterations until no
/// centroid moves more than 1e-6 (Euclidean) or 100 iterations. A cluster
/// left empty is reseeded with the point farthest from its own centroid.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<Vec<usize>> {
    Ok(kmeans_detailed(points, k, seed)?.assignments)
}

pub fn kmeans_detailed(points: &[Vec<f64>], k: usize, seed: u64) -> Result<KMeansResult> {
    if k == 0 || points.len() < k {
        return Err(Error::Config(format!("kmeans needs at least k={k} points, got {}", points.len())));
    }
    let mut rng = Rng::new(seed);
    let mut centroids = vec![points[rng.index(points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.uniform() * total;
            let mut acc = 0.0;
            let mut pick = d2.iter().rposition(|&x| x > 0.0).expect("positive mass");
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if acc > target && w > 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            rng.index(points.len())
        };
        centroids.push(points[next].clone());
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &centroids[centroids.len() - 1]));
        }
    }

    let dim = points[0].len();
    let mut assignments = vec![0; points.len()];
    let mut objective_trace = Vec::new();
    for _ in 0..KMEANS_MAX_ITER {
        let mut obj = 0.0;
        let mut dists = vec![0.0; points.len()];
        for (i, p) in points.iter().enumerate() {
            let (c, d) = nearest(p, &centroids);
            assignments[i] = c;
            dists[i] = d;
            obj += d;
        }
        objective_trace.push(obj);
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&assignments) {
            counts[c] += 1;
            sums[c].iter_mut().zip(p).for_each(|(s, x)| *s += x);
        }
        let mut moved: f64 = 0.0;
        for c in 0..k {
            let new = if counts[c] == 0 {
                let far = (0..points.len())
                    .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)))
                    .expect("non-empty");
                dists[far] = 0.0;
                points[far].clone()
            } else {
                sums[c].iter().map(|s| s / counts[c] as f64).collect()
            };
            moved = moved.max(sq_dist(&new, &centroids[c]).sqrt());
            centroids[c] = new;
        }
        if moved <= KMEANS_TOL {
            break;
        }
    }
    for (i, p) in points.iter().enumerate() {
        assignments[i] = nearest(p, &centroids).0;
    }
    Ok(KMeansResult { assignments, centroids, objective_trace })
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts.filter(|&c| c > 0).map(|c| c as f64 / n).map(|p| -p * p.ln()).sum()
}

/// Normalized mutual information `I(U;V) / ((H(U) + H(V)) / 2)` with
/// natural logs; 1 when both partitions are a single cluster.
pub fn nmi(u: &[usize], v: &[usize]) -> Result<f64> {
    check_len(u.len(), v.len())?;
    if u.is_empty() {
        return Err(Error::Config("nmi needs at least one point".into()));
    }
    let n = u.len() as f64;
    let ku = u.iter().max().expect("non-empty") + 1;
    let kv = v.iter().max().expect("non-empty") + 1;
    let mut joint = vec![vec![0usize; kv]; ku];
    let (mut cu, mut cv) = (vec![0usize; ku], vec![0usize; kv]);
    for (&a, &b) in u.iter().zip(v) {
        joint[a][b] += 1;
        cu[a] += 1;
        cv[b] += 1;
    }
    let hu = entropy(cu.iter().copied(), n);
    let hv = entropy(cv.iter().copied(), n);
    if hu == 0.0 && hv == 0.0 {
        return Ok(1.0);
    }
    let mut mi = 0.0;
    for a in 0..ku {
        for b in 0..kv {
            let c = joint[a][b];
            if c > 0 {
                let pab = c as f64 / n;
                mi += pab * (pab / (cu[a] as f64 / n * cv[b] as f64 / n)).ln();
            }
        }
    }
    Ok((mi / ((hu + hv) / 2.0)).clamp(0.0, 1.0))
}

/// Discordant counts `(b, c)`: `b` = A right and B wrong, `c` = A wrong
/// and B right.
pub fn discordant_counts(preds_a: &[usize], preds_b: &[usize], golds: &[usize]) -> Result<(u64, u64)> {
    check_len(preds_a.len(), golds.len())?;
    check_len(preds_b.len(), golds.len())?;
    let (mut b, mut c) = (0, 0);
    for ((&a, &bb), &g) in preds_a.iter().zip(preds_b).zip(golds) {
        match (a == g, bb == g) {
            (true, false) => b += 1,
            (false, true) => c += 1,
            _ => {}
        }
    }
    Ok((b, c))
}

/// Exact two-sided McNemar p-value from discordant counts:
/// `min(1, 2 * P[X <= min(b, c)])` with `X ~ Binomial(b + c, 1/2)`.
pub fn mcnemar_exact(b: u64, c: u64) -> f64 {
    let n = b + c;
    if n == 0 {
        return 1.0;
    }
    let m = b.min(c);
    let ln2n = n as f64 * std::f64::consts::LN_2;
    let mut ln_choose = 0.0;
    let mut tail = 0.0;
    for k in 0..=m {
        if k > 0 {
            ln_choose += ((n - k + 1) as f64).ln() - (k as f64).ln();
        }
        tail += (ln_choose - ln2n).exp();
    }
    (2.0 * tail).min(1.0)
}

pub fn mcnemar(preds_a: &[usize], preds_b: &[usize], golds: &[usize]) -> Result<f64> {
    let (b, c) = discordant_counts(preds_a, preds_b, golds)?;
    Ok(mcnemar_exact(b, c))
}
