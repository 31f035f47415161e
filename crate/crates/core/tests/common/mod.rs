#![allow(dead_code)]

use std::path::PathBuf;

use tempdrift::corpus::{generate_drift_corpus, Corpus, DriftGenConfig};
use tempdrift::encoder::EncoderConfig;
use tempdrift::experiment::RunConfig;
use tempdrift::model::{Model, Sample};
use tempdrift::rng::Rng;
use tempdrift::temporal::{HeadConfig, Variant};
use tempdrift::train::init_model;

pub const DAY: i64 = 86_400;
pub const T0: i64 = 1_350_000_000;

pub fn fixture_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/drift.toml")
}

pub fn fixture_config() -> RunConfig {
    RunConfig::from_file(&fixture_path()).expect("fixture config parses")
}

pub fn tiny_encoder() -> EncoderConfig {
    EncoderConfig { hash_buckets: 48, embed_dim: 4, hidden_dim: 5, n_classes: 3, use_bigrams: true }
}

pub fn small_gen(seed: u64, n_examples: usize) -> DriftGenConfig {
    DriftGenConfig {
        n_examples,
        t_start: T0,
        t_end: T0 + 20 * DAY,
        n_classes: 2,
        stable_vocab: 20,
        drifting_vocab: 8,
        neologism_vocab: 8,
        noise_vocab: 20,
        tokens_per_text: 8,
        drift_time: T0 + 10 * DAY,
        neologism_time: T0 + 10 * DAY,
        acute_window: (T0 + 7 * DAY, T0 + 13 * DAY),
        label_noise: 0.05,
        seed,
    }
}

pub fn small_corpus(seed: u64, n_examples: usize) -> Corpus {
    generate_drift_corpus(&small_gen(seed, n_examples)).expect("valid generator config")
}

/// Two hand-written samples spread over four days, with tiny weights so
/// every tensor entry is exercised by a finite-difference probe.
pub fn tiny_model(variant: Variant, lambda_grl: f64, seed: u64) -> (Model, Vec<Sample>) {
    let enc = tiny_encoder();
    let head_cfg = HeadConfig { variant, n_bins: 4, k_g: 2, lambda_grl, lambda_prior: 0.5, k: 3.0 };
    let stamps = [T0, T0 + DAY, T0 + 2 * DAY, T0 + 3 * DAY];
    let mut rng = Rng::new(seed);
    let mut model = init_model(&enc, &head_cfg, &stamps, &mut rng).expect("tiny model");
    // Larger weights than the default init keep relu units away from zero
    // and make every gradient entry comfortably non-negligible.
    for (_, kind, t) in model.slots_mut() {
        if kind.trainable {
            t.iter_mut().for_each(|x| *x = rng.uniform_range(-0.8, 0.8));
        }
    }
    let texts = [("storm hits the #coast tonight", T0 + 3600, 1), ("power back in the city", T0 + 3 * DAY, 2)];
    let samples = texts
        .iter()
        .map(|&(text, ts, label)| {
            let tokens = model.tokens_for(text, ts);
            Sample {
                buckets: tempdrift::encoder::hash_features(&tokens, &model.encoder.config),
                timestamp: ts,
                label,
            }
        })
        .collect();
    (model, samples)
}
