mod common;

use std::fs;
use std::path::{Path, PathBuf};

use common::small_gen;
use tempdrift::experiment::{
    cmd_generate, cmd_report, cmd_run, cmd_tr, render_report, RunConfig, RunMetrics, Scale,
};
use tempdrift::metrics::tr_score;
use tempdrift::splits::Setting;
use tempdrift::temporal::Variant;

fn config(setting: Setting, variant: Variant) -> RunConfig {
    let mut cfg = RunConfig::from_toml(
        r#"
        [split]
        seed = 3
        [encoder]
        hash_buckets = 2048
        embed_dim = 8
        hidden_dim = 8
        [train]
        learning_rate = 0.01
        epochs = 2
        batch_size = 32
        "#,
    )
    .unwrap();
    cfg.generator = Some(small_gen(12, 400));
    cfg.split.setting = setting;
    cfg.temporal.variant = variant;
    cfg
}

fn count_files(dir: &Path, name: &str) -> usize {
    let mut n = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            n += count_files(&path, name);
        } else if path.file_name().unwrap() == name {
            n += 1;
        }
    }
    n
}

#[test]
fn generate_writes_corpus_and_sidecar_deterministically() {
    let out = tempfile::tempdir().unwrap();
    let cfg = config(Setting::Temp, Variant::None);
    let path = cmd_generate(&cfg, out.path()).unwrap();
    let first = fs::read(&path).unwrap();
    assert_eq!(first.iter().filter(|&&b| b == b'\n').count(), 400);
    assert!(out.path().join("corpus.gen.json").exists());
    cmd_generate(&cfg, out.path()).unwrap();
    assert_eq!(fs::read(&path).unwrap(), first);

    let mut missing = cfg.clone();
    missing.generator = None;
    let err = cmd_generate(&missing, out.path()).unwrap_err();
    assert!(err.to_string().contains("[generator]"), "{err}");
}

#[test]
fn config_requires_exactly_one_corpus_source() {
    let mut cfg = config(Setting::Temp, Variant::None);
    cfg.corpus = Some(tempdrift::experiment::CorpusSource { path: "x.jsonl".into(), n_classes: 2 });
    assert!(cfg.validate().is_err());
    cfg.corpus = None;
    cfg.generator = None;
    assert!(cfg.validate().is_err());
    assert!(RunConfig::from_toml("[temporal]\nvariant = \"TM+SEP\"").is_err());
    assert!(RunConfig::from_toml("[split]\nsetting = \"TEMP\"\nbogus = 1").is_err());
}

#[test]
fn temp_run_writes_artifacts_and_is_reproducible() {
    let out = tempfile::tempdir().unwrap();
    let cfg = config(Setting::Temp, Variant::Tda);
    let (dir, metrics) = cmd_run(&cfg, out.path()).unwrap();
    assert_eq!(count_files(&dir, "checkpoint.bin"), 5);
    assert_eq!(count_files(&dir, "ensemble_predictions.json"), 1);
    assert_eq!(metrics.seed_count, 5);
    assert_eq!(metrics.setting, Setting::Temp);
    assert!(metrics.nmi.is_some());
    let bytes = fs::read(dir.join("metrics.json")).unwrap();

    let again = tempfile::tempdir().unwrap();
    let (dir2, _) = cmd_run(&cfg, again.path()).unwrap();
    assert_eq!(dir.file_name(), dir2.file_name());
    assert_eq!(fs::read(dir2.join("metrics.json")).unwrap(), bytes);
    let ens = |d: &Path| fs::read(d.join("ensemble_predictions.json")).unwrap();
    assert_eq!(ens(&dir), ens(&dir2));
}

#[test]
fn prog_run_has_eight_steps() {
    let out = tempfile::tempdir().unwrap();
    let mut cfg = config(Setting::Prog, Variant::None).with_seed_count(2);
    cfg.eval.nmi = false;
    let (dir, metrics) = cmd_run(&cfg, out.path()).unwrap();
    let steps = metrics.prog_steps.as_ref().unwrap();
    assert_eq!(steps.iter().map(|s| s.step).collect::<Vec<_>>(), (2..10).collect::<Vec<_>>());
    let mean = steps.iter().map(|s| s.f1).sum::<f64>() / 8.0;
    assert!((metrics.f1 - mean).abs() < 1e-12);
    assert_eq!(count_files(&dir, "split.json"), 8);
    assert_eq!(count_files(&dir, "checkpoint.bin"), 16);
}

fn fake_run(root: &Path, name: &str, setting: Setting, variant: Variant, f1: f64, digest: &str) -> PathBuf {
    let dir = root.join(name);
    fs::create_dir_all(&dir).unwrap();
    let m = RunMetrics {
        variant,
        setting,
        seed_count: 5,
        f1,
        f1_seed_mean: f1,
        f1_per_seed: vec![f1; 5],
        prog_steps: None,
        tr: None,
        nmi: None,
        nmi_per_seed: None,
        mcnemar_p: None,
        test_ids_digest: digest.into(),
        config_digest: name.into(),
    };
    fs::write(dir.join("metrics.json"), serde_json::to_vec(&m).unwrap()).unwrap();
    dir
}

#[test]
fn report_rows_and_difference() {
    let root = tempfile::tempdir().unwrap();
    let cont = fake_run(root.path(), "c", Setting::Cont, Variant::None, 0.877, "t");
    let temp = fake_run(root.path(), "t", Setting::Temp, Variant::None, 0.8118, "t");
    let report = cmd_report(&[cont.clone(), temp], &[]).unwrap();
    assert_eq!(report.rows.len(), 1);
    assert!((report.rows[0].diff.unwrap() - 0.0652).abs() < 1e-12);
    let text = render_report(&report, Scale::Percent);
    assert!(text.contains("87.7000") && text.contains("6.5200"), "{text}");

    let single = cmd_report(&[cont], &[]).unwrap();
    assert_eq!(single.rows.len(), 1);
    assert_eq!(single.rows[0].diff, None);
    assert!(!render_report(&single, Scale::Unit).contains("DIFF"));
}

#[test]
fn report_compares_runs_with_mcnemar_and_guards_test_sets() {
    let out = tempfile::tempdir().unwrap();
    let (none, _) = cmd_run(&config(Setting::Temp, Variant::None).with_seed_count(1), out.path()).unwrap();
    let (dcwe, _) = cmd_run(&config(Setting::Temp, Variant::Dcwe).with_seed_count(1), out.path()).unwrap();
    let report = cmd_report(&[none.clone(), dcwe.clone()], &[(0, 1)]).unwrap();
    assert_eq!(report.rows.len(), 2);
    let p = report.pairs[0].mcnemar_p;
    assert!((0.0..=1.0).contains(&p));

    // Reports read only metrics and predictions; checkpoints are not needed.
    for d in [&none, &dcwe] {
        fs::remove_file(d.join("seed-1/checkpoint.bin")).unwrap();
    }
    assert_eq!(cmd_report(&[none.clone(), dcwe.clone()], &[(0, 1)]).unwrap(), report);

    let mut other = config(Setting::Temp, Variant::None).with_seed_count(1);
    other.split.seed = 99;
    let (moved, _) = cmd_run(&other, out.path()).unwrap();
    let err = cmd_report(&[none, moved], &[(0, 1)]).unwrap_err();
    assert!(err.to_string().contains("different test sets"), "{err}");
}

#[test]
fn tr_on_constant_corpus_is_zero_and_self_consistent() {
    let out = tempfile::tempdir().unwrap();
    let mut cfg = config(Setting::Temp, Variant::None).with_seed_count(2);
    let mut gen = small_gen(5, 300);
    gen.label_noise = 0.0;
    gen.drifting_vocab = 0;
    gen.neologism_vocab = 0;
    gen.noise_vocab = 0;
    gen.stable_vocab = 1;
    cfg.generator = Some(gen);
    cfg.split.n_bins = 4;
    let (dir, report) = cmd_tr(&cfg, out.path()).unwrap();
    assert!(report.tr.abs() < 1e-12, "{}", report.tr);
    assert_eq!(report.matrices.len(), 2);
    for (m, tr) in report.matrices.iter().zip(&report.tr_per_seed) {
        assert_eq!(tr_score(m).unwrap(), *tr);
    }
    assert!(dir.join("tr.json").exists());
}
