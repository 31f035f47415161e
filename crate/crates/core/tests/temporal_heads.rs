mod common;

use common::{small_corpus, tiny_encoder, DAY, T0};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use tempdrift::splits::make_temp_split;
use tempdrift::temporal::{
    append_time_segment, lmsoc_time_embedding, prepend_time_tokens, taph_project, HeadConfig, HeadParams, Variant,
};
use tempdrift::train::{train_model, TrainConfig};

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn vec_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1usize..9).prop_flat_map(|d| {
        (
            prop::collection::vec(-10.0f64..10.0, d).prop_filter("non-degenerate normal", |w| dot(w, w) > 1e-4),
            prop::collection::vec(-10.0f64..10.0, d),
        )
    })
}

proptest! {
    #[test]
    fn taph_projection_properties((w, h) in vec_pair(), scale in 0.01f64..100.0) {
        let p = taph_project(&w, &h).unwrap();
        let pp = taph_project(&w, &p).unwrap();
        for (a, b) in p.iter().zip(&pp) {
            prop_assert!((a - b).abs() < 1e-9);
        }
        let norm_w = dot(&w, &w).sqrt();
        prop_assert!((dot(&w, &p) / norm_w).abs() < 1e-9);
        prop_assert!(dot(&p, &p).sqrt() <= dot(&h, &h).sqrt() + 1e-9);
        let scaled: Vec<f64> = w.iter().map(|x| x * scale).collect();
        let ps = taph_project(&scaled, &h).unwrap();
        for (a, b) in p.iter().zip(&ps) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn taph_matches_projection_matrix((w, h) in vec_pair()) {
        let d = w.len();
        let u = DVector::from_column_slice(&w).normalize();
        let want = (DMatrix::identity(d, d) - &u * u.transpose()) * DVector::from_column_slice(&h);
        let got = taph_project(&w, &h).unwrap();
        for (a, b) in got.iter().zip(want.iter()) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}

#[test]
fn taph_worked_example() {
    let p = taph_project(&[3.0, 4.0], &[1.0, 1.0]).unwrap();
    assert!((p[0] - 0.16).abs() < 1e-12 && (p[1] + 0.12).abs() < 1e-12, "{p:?}");
}

#[test]
fn time_token_rewrites() {
    let ts = 1_351_512_000; // 2012-10-29T12:00:00Z
    let storm = vec!["storm".to_string()];
    assert_eq!(prepend_time_tokens(&storm, ts), ["2012", "10", "29", "storm"]);
    assert_eq!(prepend_time_tokens(&[], ts), ["2012", "10", "29"]);
    assert_eq!(prepend_time_tokens(&[], ts - 43_200), prepend_time_tokens(&[], ts + 43_199));
    let flood = vec!["flood".to_string()];
    assert_eq!(append_time_segment(&flood, 1_358_424_000), ["flood", "[SEP]", "2013", "01", "17"]);
}

/// Eigenvectors of the path-graph Laplacian from a general symmetric
/// eigensolver, sorted by eigenvalue, skipping the constant one.
fn path_laplacian_eigvecs(t: usize, k: usize) -> Vec<Vec<f64>> {
    let mut lap = DMatrix::<f64>::zeros(t, t);
    for i in 0..t - 1 {
        lap[(i, i)] += 1.0;
        lap[(i + 1, i + 1)] += 1.0;
        lap[(i, i + 1)] -= 1.0;
        lap[(i + 1, i)] -= 1.0;
    }
    let eig = lap.symmetric_eigen();
    let mut order: Vec<usize> = (0..t).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    order[1..=k].iter().map(|&c| eig.eigenvectors.column(c).iter().copied().collect()).collect()
}

#[test]
fn lmsoc_table_spans_laplacian_eigenvectors() {
    for t in 2..=16 {
        for k in 1..t.min(6) {
            let table = lmsoc_time_embedding(t, k).unwrap();
            let reference = path_laplacian_eigvecs(t, k);
            for (c, want) in reference.iter().enumerate() {
                let col: Vec<f64> = (0..t).map(|i| table[i * k + c]).collect();
                assert!((dot(&col, &col) - 1.0).abs() < 1e-9);
                assert!((dot(&col, want).abs() - 1.0).abs() < 1e-9, "T={t} column {c}");
                for c2 in 0..c {
                    let other: Vec<f64> = (0..t).map(|i| table[i * k + c2]).collect();
                    assert!(dot(&col, &other).abs() < 1e-9);
                }
            }
        }
    }
    assert!(lmsoc_time_embedding(4, 4).is_err());
}

#[test]
fn lmsoc_table_is_untouched_by_training() {
    let corpus = small_corpus(4, 300);
    let split = make_temp_split(&corpus, 1).unwrap();
    let enc = tiny_encoder();
    let enc = tempdrift::encoder::EncoderConfig { n_classes: 2, ..enc };
    let head = HeadConfig { variant: Variant::Lmsoc, ..Default::default() };
    let train = TrainConfig { epochs: 2, learning_rate: 0.05, seeds: vec![1], ..Default::default() };
    let trained = train_model(&corpus, &split, &enc, &head, &train, 1).unwrap();
    let HeadParams::Lmsoc { time_embed } = &trained.model.head.params else {
        panic!("LMSOC head expected");
    };
    let t = trained.model.head.binning().unwrap().n_bins();
    let k = trained.model.head.config().k_g;
    assert_eq!(time_embed, &lmsoc_time_embedding(t, k).unwrap());
}

#[test]
fn dcwe_offsets_start_at_zero_and_move_with_training() {
    let corpus = small_corpus(5, 300);
    let split = make_temp_split(&corpus, 2).unwrap();
    let enc = tempdrift::encoder::EncoderConfig { n_classes: 2, ..tiny_encoder() };
    let head = HeadConfig { variant: Variant::Dcwe, ..Default::default() };
    let train = TrainConfig { epochs: 1, learning_rate: 0.05, seeds: vec![1], ..Default::default() };
    let trained = train_model(&corpus, &split, &enc, &head, &train, 3).unwrap();
    let HeadParams::Dcwe { offsets } = &trained.model.head.params else {
        panic!("DCWE head expected");
    };
    assert!(offsets.iter().any(|&x| x != 0.0));
    // Bins come from the training half at day granularity.
    let bins = trained.model.head.binning().unwrap();
    assert!(bins.n_bins() >= 2 && bins.boundaries()[0] >= T0 && bins.boundaries()[0] < T0 + DAY);
}
