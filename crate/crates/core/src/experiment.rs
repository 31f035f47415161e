//! End-to-end experiment pipeline behind the command-line tool: config
//! files, corpus generation, multi-seed runs, score matrices and reports.
//!
//! Run directory layout (`<out>/<setting>-<variant>-<digest>/`):
//!
//! ```text
//! config.json                  normalized config snapshot
//! split.json                   materialized split (CONT / TEMP)
//! seed-<s>/checkpoint.bin      selected snapshot of seed s
//! seed-<s>/predictions.json    dev and test predictions of seed s
//! ensemble_predictions.json    majority vote over seeds on the test set
//! metrics.json                 flat metrics record
//! ```
//!
//! PROG runs nest the split, seed and ensemble files under `step-<t>/`.
//! `<digest>` is the first 16 hex digits of the SHA-256 of the normalized
//! config (output directory excluded).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{generate_drift_corpus, load_corpus, save_corpus, Corpus, DriftGenConfig};
use crate::encoder::{save_checkpoint, EncoderConfig};
use crate::error::{Error, Result};
use crate::metrics::{build_score_matrix, kmeans, mcnemar, nmi, task_f1, tr_score, Predictor, ScoreMatrix};
use crate::splits::{make_cont_split, make_prog_splits, make_temp_split, ExperimentSplit, Setting, TimeBinning};
use crate::temporal::{HeadConfig, Variant};
use crate::train::{ensemble_majority, predict, train_model, TrainConfig, TrainedModel};

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp-{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_slice(&raw)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSource {
    pub path: PathBuf,
    pub n_classes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub setting: Setting,
    pub seed: u64,
    /// PROG bins, and the bin count of score matrices.
    pub n_bins: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig { setting: Setting::Temp, seed: 0, n_bins: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Cluster time-aware embeddings against crisis phases when the corpus
    /// has them.
    pub nmi: bool,
    pub kmeans_k: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { nmi: true, kmeans_k: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus: Option<CorpusSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<DriftGenConfig>,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub encoder: EncoderConfig,
    #[serde(default)]
    pub temporal: HeadConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Parses a config file; a relative corpus path is resolved against the
    /// file's directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = RunConfig::from_toml(&text)?;
        if let Some(src) = &mut cfg.corpus {
            if src.path.is_relative() {
                if let Some(dir) = path.parent() {
                    src.path = dir.join(&src.path);
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.corpus, &self.generator) {
            (Some(_), Some(_)) => {
                return Err(Error::Config("give either a [corpus] or a [generator] section, not both".into()))
            }
            (None, None) => return Err(Error::Config("missing [corpus] or [generator] section".into())),
            _ => {}
        }
        if let Some(g) = &self.generator {
            g.validate()?;
        }
        self.encoder.validate()?;
        self.temporal.validate()?;
        self.train.validate()?;
        Ok(())
    }

    pub fn n_classes(&self) -> usize {
        match (&self.corpus, &self.generator) {
            (Some(c), _) => c.n_classes,
            (_, Some(g)) => g.n_classes,
            _ => self.encoder.n_classes,
        }
    }

    /// The encoder config with `n_classes` taken from the corpus.
    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig { n_classes: self.n_classes(), ..self.encoder.clone() }
    }

    /// Normalized form used for snapshots and digests.
    pub fn normalized(&self) -> RunConfig {
        RunConfig { out: None, encoder: self.encoder_config(), ..self.clone() }
    }

    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(&self.normalized()).expect("config serializes");
        hex::encode(&Sha256::digest(&bytes)[..8])
    }

    pub fn load_corpus(&self) -> Result<Corpus> {
        self.validate()?;
        match (&self.corpus, &self.generator) {
            (Some(src), _) => load_corpus(&src.path, src.n_classes),
            (_, Some(g)) => generate_drift_corpus(g),
            _ => unreachable!("validated"),
        }
    }

    pub fn with_seed_count(mut self, n: usize) -> Self {
        self.train.seeds = (1..=n as u64).collect();
        self
    }

    pub fn run_dir(&self, out: &Path) -> PathBuf {
        out.join(format!("{}-{}-{}", self.split.setting, self.temporal.variant, self.digest()))
    }
}

/// Writes the generator's corpus to `<out>/corpus.jsonl` and its config to
/// `<out>/corpus.gen.json`. Returns the corpus path.
pub fn cmd_generate(cfg: &RunConfig, out: &Path) -> Result<PathBuf> {
    let gen = cfg
        .generator
        .as_ref()
        .ok_or_else(|| Error::Config("missing [generator] section".into()))?;
    let corpus = generate_drift_corpus(gen)?;
    let path = out.join("corpus.jsonl");
    save_corpus(&corpus, &path)?;
    write_json(&out.join("corpus.gen.json"), gen)?;
    log::info!("wrote {} examples to {}", corpus.len(), path.display());
    Ok(path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledPredictions {
    pub ids: Vec<String>,
    pub golds: Vec<usize>,
    pub preds: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedPredictions {
    pub seed: u64,
    pub selected_epoch: usize,
    pub dev_scores: Vec<f64>,
    pub dev: LabeledPredictions,
    pub test: LabeledPredictions,
}

/// Flat metrics record of one run directory. Scores are in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub variant: Variant,
    pub setting: Setting,
    pub seed_count: usize,
    /// Score of the majority-vote ensemble (mean over steps for PROG).
    pub f1: f64,
    /// Mean of the per-seed scores.
    pub f1_seed_mean: f64,
    pub f1_per_seed: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prog_steps: Option<Vec<ProgStep>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nmi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nmi_per_seed: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mcnemar_p: Option<f64>,
    /// SHA-256 prefix of the newline-joined test ids (last step for PROG).
    pub test_ids_digest: String,
    pub config_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgStep {
    pub step: usize,
    pub f1: f64,
    pub f1_seed_mean: f64,
}

fn ids_digest(ids: &[String]) -> String {
    hex::encode(&Sha256::digest(ids.join("\n").as_bytes())[..8])
}

struct SplitOutcome {
    per_seed: Vec<(TrainedModel, SeedPredictions)>,
    ensemble: LabeledPredictions,
    f1: f64,
    f1_per_seed: Vec<f64>,
}

fn run_split(cfg: &RunConfig, corpus: &Corpus, split: &ExperimentSplit, dir: &Path) -> Result<SplitOutcome> {
    split.validate(corpus)?;
    write_json(&dir.join("split.json"), split)?;
    let enc_cfg = cfg.encoder_config();
    let dev = corpus.select(&split.dev_ids)?;
    let test = corpus.select(&split.test_ids)?;
    let golds: Vec<usize> = test.iter().map(|e| e.label).collect();
    let dev_golds: Vec<usize> = dev.iter().map(|e| e.label).collect();
    let labeled = |ids: &[String], golds: &[usize], preds| LabeledPredictions {
        ids: ids.to_vec(),
        golds: golds.to_vec(),
        preds,
    };
    let per_seed: Vec<(TrainedModel, SeedPredictions)> = cfg
        .train
        .seeds
        .par_iter()
        .map(|&seed| {
            let trained = train_model(corpus, split, &enc_cfg, &cfg.temporal, &cfg.train, seed)?;
            let preds = SeedPredictions {
                seed,
                selected_epoch: trained.selected_epoch,
                dev_scores: trained.dev_scores.clone(),
                dev: labeled(&split.dev_ids, &dev_golds, predict(&trained.model, &dev)?),
                test: labeled(&split.test_ids, &golds, predict(&trained.model, &test)?),
            };
            let seed_dir = dir.join(format!("seed-{seed}"));
            save_checkpoint(&trained.model, &seed_dir.join("checkpoint.bin"))?;
            write_json(&seed_dir.join("predictions.json"), &preds)?;
            Ok((trained, preds))
        })
        .collect::<Result<_>>()?;
    let votes: Vec<Vec<usize>> = per_seed.iter().map(|(_, p)| p.test.preds.clone()).collect();
    let ensemble = labeled(&split.test_ids, &golds, ensemble_majority(&votes)?);
    write_json(&dir.join("ensemble_predictions.json"), &ensemble)?;
    let f1 = task_f1(&ensemble.preds, &golds, corpus.n_classes())?;
    let f1_per_seed = votes.iter().map(|p| task_f1(p, &golds, corpus.n_classes())).collect::<Result<Vec<_>>>()?;
    Ok(SplitOutcome { per_seed, ensemble, f1, f1_per_seed })
}

/// Mean NMI between k-means clusters of each seed's time-aware embeddings
/// (whole corpus) and the crisis phases.
fn phase_nmi(cfg: &RunConfig, corpus: &Corpus, models: &[&TrainedModel]) -> Result<Vec<f64>> {
    let phases: Vec<usize> =
        corpus.examples().iter().map(|e| e.phase.expect("phases checked").index()).collect();
    models
        .par_iter()
        .zip(&cfg.train.seeds)
        .map(|(tm, &seed)| {
            let points = corpus
                .examples()
                .iter()
                .map(|e| tm.model.time_aware_embedding(&tm.model.featurize(e)))
                .collect::<Result<Vec<_>>>()?;
            let clusters = kmeans(&points, cfg.eval.kmeans_k, seed)?;
            nmi(&clusters, &phases)
        })
        .collect()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Trains every seed on the configured split, writes the run directory and
/// returns its path together with the metrics.
pub fn cmd_run(cfg: &RunConfig, out: &Path) -> Result<(PathBuf, RunMetrics)> {
    let corpus = cfg.load_corpus()?;
    let dir = cfg.run_dir(out);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write_json(&dir.join("config.json"), &cfg.normalized())?;
    let with_nmi = cfg.eval.nmi && corpus.has_phases();

    let metrics = match cfg.split.setting {
        Setting::Cont | Setting::Temp => {
            let split = if cfg.split.setting == Setting::Cont {
                make_cont_split(&corpus, cfg.split.seed)?
            } else {
                make_temp_split(&corpus, cfg.split.seed)?
            };
            let outcome = run_split(cfg, &corpus, &split, &dir)?;
            let nmi_per_seed = if with_nmi {
                let models: Vec<&TrainedModel> = outcome.per_seed.iter().map(|(m, _)| m).collect();
                Some(phase_nmi(cfg, &corpus, &models)?)
            } else {
                None
            };
            RunMetrics {
                variant: cfg.temporal.variant,
                setting: cfg.split.setting,
                seed_count: cfg.train.seeds.len(),
                f1: outcome.f1,
                f1_seed_mean: mean(&outcome.f1_per_seed),
                f1_per_seed: outcome.f1_per_seed,
                prog_steps: None,
                tr: None,
                nmi: nmi_per_seed.as_deref().map(mean),
                nmi_per_seed,
                mcnemar_p: None,
                test_ids_digest: ids_digest(&outcome.ensemble.ids),
                config_digest: cfg.digest(),
            }
        }
        Setting::Prog => {
            let splits = make_prog_splits(&corpus, cfg.split.n_bins)?;
            let mut steps = Vec::with_capacity(splits.len());
            let mut seed_sums = vec![0.0; cfg.train.seeds.len()];
            let mut last_ids = Vec::new();
            for split in &splits {
                let step = split.prog_step.expect("PROG step");
                let outcome = run_split(cfg, &corpus, split, &dir.join(format!("step-{step:02}")))?;
                log::info!("PROG step {step}: ensemble f1 {:.4}", outcome.f1);
                seed_sums.iter_mut().zip(&outcome.f1_per_seed).for_each(|(a, b)| *a += b);
                steps.push(ProgStep { step, f1: outcome.f1, f1_seed_mean: mean(&outcome.f1_per_seed) });
                last_ids = outcome.ensemble.ids;
            }
            let n = steps.len() as f64;
            RunMetrics {
                variant: cfg.temporal.variant,
                setting: Setting::Prog,
                seed_count: cfg.train.seeds.len(),
                f1: steps.iter().map(|s| s.f1).sum::<f64>() / n,
                f1_seed_mean: steps.iter().map(|s| s.f1_seed_mean).sum::<f64>() / n,
                f1_per_seed: seed_sums.iter().map(|s| s / n).collect(),
                prog_steps: Some(steps),
                tr: None,
                nmi: None,
                nmi_per_seed: None,
                mcnemar_p: None,
                test_ids_digest: ids_digest(&last_ids),
                config_digest: cfg.digest(),
            }
        }
        Setting::Bin => return Err(Error::Config("BIN splits are internal to score matrices".into())),
    };
    write_json(&dir.join("metrics.json"), &metrics)?;
    Ok((dir, metrics))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrReport {
    pub variant: Variant,
    pub n_bins: usize,
    pub boundaries: Vec<i64>,
    /// Mean TR over seeds.
    pub tr: f64,
    pub tr_per_seed: Vec<f64>,
    /// Entry-wise mean of the per-seed matrices.
    pub mean_matrix: ScoreMatrix,
    pub matrices: Vec<ScoreMatrix>,
    pub config_digest: String,
}

/// Score matrix over equal-count time bins of the whole corpus, one per
/// seed, and the resulting temporal rigidity.
pub fn temporal_rigidity(cfg: &RunConfig) -> Result<TrReport> {
    let corpus = cfg.load_corpus()?;
    let stamps: Vec<i64> = corpus.examples().iter().map(|e| e.timestamp).collect();
    let binning = TimeBinning::equal_count(&stamps, cfg.split.n_bins, 1)?;
    let enc_cfg = cfg.encoder_config();
    let mut matrices = Vec::new();
    for &seed in &cfg.train.seeds {
        let factory = |split: &ExperimentSplit| -> Result<Predictor> {
            let trained = train_model(&corpus, split, &enc_cfg, &cfg.temporal, &cfg.train, seed)?;
            let model = trained.model;
            Ok(Box::new(move |exs| predict(&model, exs)))
        };
        matrices.push(build_score_matrix(&corpus, &binning, seed, factory)?);
    }
    let tr_per_seed = matrices.iter().map(tr_score).collect::<Result<Vec<_>>>()?;
    let t = binning.n_bins();
    let mean_f = (0..t)
        .map(|i| (0..t).map(|j| matrices.iter().map(|m| m.f[i][j]).sum::<f64>() / matrices.len() as f64).collect())
        .collect();
    Ok(TrReport {
        variant: cfg.temporal.variant,
        n_bins: t,
        boundaries: binning.boundaries().to_vec(),
        tr: mean(&tr_per_seed),
        tr_per_seed,
        mean_matrix: ScoreMatrix::new(mean_f)?,
        matrices,
        config_digest: cfg.digest(),
    })
}

/// Runs [`temporal_rigidity`] and writes `<out>/TR-<variant>-<digest>/tr.json`.
pub fn cmd_tr(cfg: &RunConfig, out: &Path) -> Result<(PathBuf, TrReport)> {
    let report = temporal_rigidity(cfg)?;
    let dir = out.join(format!("TR-{}-{}", cfg.temporal.variant, cfg.digest()));
    write_json(&dir.join("tr.json"), &report)?;
    Ok((dir, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Unit,
    Percent,
}

impl Scale {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Scale::Unit => x,
            Scale::Percent => 100.0 * x,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub variant: Variant,
    pub cont: Option<f64>,
    pub temp: Option<f64>,
    /// CONT - TEMP when both runs exist.
    pub diff: Option<f64>,
    pub prog: Option<f64>,
    pub tr: Option<f64>,
    pub nmi: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairTest {
    pub a: String,
    pub b: String,
    pub mcnemar_p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    pub pairs: Vec<PairTest>,
}

fn load_run(dir: &Path) -> Result<(RunMetrics, Option<LabeledPredictions>)> {
    let metrics: RunMetrics = read_json(&dir.join("metrics.json"))?;
    let ens = dir.join("ensemble_predictions.json");
    let preds = if ens.exists() { Some(read_json(&ens)?) } else { None };
    Ok((metrics, preds))
}

/// Builds the comparison table from persisted run directories. Rows are
/// keyed by variant; `pairs` name run-directory indices to compare with
/// McNemar's test and must share a test set. Score values are in `[0,1]`.
pub fn cmd_report(dirs: &[PathBuf], pairs: &[(usize, usize)]) -> Result<Report> {
    let runs = dirs.iter().map(|d| load_run(d)).collect::<Result<Vec<_>>>()?;
    let mut rows: BTreeMap<String, ReportRow> = BTreeMap::new();
    for (m, _) in &runs {
        let row = rows.entry(m.variant.to_string()).or_insert(ReportRow {
            variant: m.variant,
            cont: None,
            temp: None,
            diff: None,
            prog: None,
            tr: None,
            nmi: None,
        });
        match m.setting {
            Setting::Cont => row.cont = Some(m.f1),
            Setting::Temp => row.temp = Some(m.f1),
            Setting::Prog => row.prog = Some(m.f1),
            Setting::Bin => {}
        }
        row.tr = m.tr.or(row.tr);
        row.nmi = m.nmi.or(row.nmi);
    }
    for row in rows.values_mut() {
        if let (Some(c), Some(t)) = (row.cont, row.temp) {
            row.diff = Some(c - t);
        }
    }
    let mut tests = Vec::new();
    for &(i, j) in pairs {
        let name = |k: usize| dirs.get(k).map(|d| d.display().to_string());
        let (Some(a), Some(b)) = (name(i), name(j)) else {
            return Err(Error::Config(format!("pair ({i}, {j}) refers to a missing run")));
        };
        let (ma, pa) = &runs[i];
        let (mb, pb) = &runs[j];
        let (Some(pa), Some(pb)) = (pa, pb) else {
            return Err(Error::Config("McNemar needs ensemble predictions in both runs".into()));
        };
        if ma.test_ids_digest != mb.test_ids_digest || pa.ids != pb.ids {
            return Err(Error::Config(format!("{a} and {b} were evaluated on different test sets")));
        }
        tests.push(PairTest { a, b, mcnemar_p: mcnemar(&pa.preds, &pb.preds, &pa.golds)? });
    }
    Ok(Report { rows: rows.into_values().collect(), pairs: tests })
}

/// Plain-text rendering of a report; columns without any value are left
/// out.
pub fn render_report(report: &Report, scale: Scale) -> String {
    let fmt = |x: Option<f64>| x.map_or_else(|| "-".to_string(), |v| format!("{:.4}", scale.apply(v)));
    let raw = |x: Option<f64>| x.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
    let any = |f: fn(&ReportRow) -> Option<f64>| report.rows.iter().any(|r| f(r).is_some());
    let cols: Vec<(&str, fn(&ReportRow) -> Option<f64>, bool)> = vec![
        ("CONT", |r| r.cont, true),
        ("TEMP", |r| r.temp, true),
        ("DIFF", |r| r.diff, true),
        ("PROG", |r| r.prog, true),
        ("TR", |r| r.tr, false),
        ("NMI", |r| r.nmi, false),
    ];
    let cols: Vec<_> = cols.into_iter().filter(|(_, f, _)| any(*f)).collect();
    let mut out = format!("{:<8}", "method");
    for (name, _, _) in &cols {
        out.push_str(&format!(" {name:>9}"));
    }
    out.push('\n');
    for r in &report.rows {
        out.push_str(&format!("{:<8}", r.variant.to_string()));
        for (_, f, scaled) in &cols {
            let cell = if *scaled { fmt(f(r)) } else { raw(f(r)) };
            out.push_str(&format!(" {cell:>9}"));
        }
        out.push('\n');
    }
    for p in &report.pairs {
        out.push_str(&format!("mcnemar {} vs {}: p = {:.6}\n", p.a, p.b, p.mcnemar_p));
    }
    out
}

pub fn write_report(report: &Report, path: &Path) -> Result<()> {
    write_json(path, report)
}
