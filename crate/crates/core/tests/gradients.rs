mod common;

use common::{tiny_model, T0};
use nalgebra::{DMatrix, DVector};
use tempdrift::encoder::{grad_check, rel_error};
use tempdrift::model::{Gradients, Model, Sample, ENCODER_SLOTS};
use tempdrift::rng::Rng;
use tempdrift::temporal::{dcwe_regularizer, dcwe_regularizer_grad, grl_backward, grl_forward, HeadParams, Variant};

const TOL: f64 = 1e-5;
const EPS: f64 = 1e-4;

#[test]
fn every_head_passes_grad_check() {
    for variant in Variant::ALL {
        let (model, batch) = tiny_model(variant, 1.0, 11);
        let report = grad_check(&model, &batch, EPS);
        assert!(report.entries_checked > 0);
        assert!(
            report.max_rel_error < TOL,
            "{variant}: max rel error {:.3e} ({:?})",
            report.max_rel_error,
            report.per_tensor
        );
    }
}

#[test]
fn dcwe_regularizer_hand_values() {
    assert!((dcwe_regularizer(&[1.0, 0.0, 1.0, 0.0], 2, 1.0, 1000.0) - 501.0).abs() < 1e-9);
    assert!((dcwe_regularizer(&[3.0, 4.0], 2, 2.0, 1000.0) - 50050.0).abs() < 1e-9);
    assert_eq!(dcwe_regularizer(&[0.0; 6], 3, 0.7, 1000.0), 0.0);
}

#[test]
fn dcwe_regularizer_gradient_matches_central_differences() {
    let mut rng = Rng::new(5);
    for (t, d) in [(1, 3), (2, 2), (5, 4)] {
        let offsets: Vec<f64> = (0..t * d).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
        let mut grad = vec![0.0; t * d];
        dcwe_regularizer_grad(&offsets, d, 0.3, 1000.0, &mut grad);
        for i in 0..t * d {
            let mut up = offsets.clone();
            let mut down = offsets.clone();
            up[i] += EPS;
            down[i] -= EPS;
            let numeric = (dcwe_regularizer(&up, d, 0.3, 1000.0) - dcwe_regularizer(&down, d, 0.3, 1000.0)) / (2.0 * EPS);
            assert!(rel_error(grad[i], numeric) < TOL, "T={t} entry {i}: {} vs {numeric}", grad[i]);
        }
    }
}

fn fd(model: &Model, slot: usize, i: usize, f: impl Fn(&Model) -> f64) -> f64 {
    let mut probe = model.clone();
    let orig = probe.slots()[slot].2[i];
    probe.slots_mut()[slot].2[i] = orig + EPS;
    let up = f(&probe);
    probe.slots_mut()[slot].2[i] = orig - EPS;
    let down = f(&probe);
    (up - down) / (2.0 * EPS)
}

#[test]
fn reversed_gradient_composes_task_and_time_terms() {
    for lambda in [0.0, 0.5, 1.0] {
        let (model, samples) = tiny_model(Variant::Tda, lambda, 3);
        let batch: Vec<&Sample> = samples.iter().collect();
        let mut grads = Gradients::zeros_like(&model);
        model.loss_and_grad(&batch, &mut grads).unwrap();
        let mut worst: f64 = 0.0;
        for slot in 0..ENCODER_SLOTS {
            for i in 0..model.slots()[slot].2.len() {
                let task = fd(&model, slot, i, |m| m.loss_parts(&batch).unwrap().task);
                let time = fd(&model, slot, i, |m| m.loss_parts(&batch).unwrap().time);
                worst = worst.max(rel_error(grads.tensors[slot][i], task - lambda * time));
            }
        }
        assert!(worst < TOL, "lambda {lambda}: {worst:.3e}");
    }
}

#[test]
fn zero_lambda_matches_plain_classifier_gradients() {
    let (tda, samples) = tiny_model(Variant::Tda, 0.0, 8);
    let mut plain = tda.clone();
    plain.head = tempdrift::temporal::TemporalHead::none(tda.encoder.dim());
    let batch: Vec<&Sample> = samples.iter().collect();
    let mut g_tda = Gradients::zeros_like(&tda);
    let mut g_plain = Gradients::zeros_like(&plain);
    tda.loss_and_grad(&batch, &mut g_tda).unwrap();
    plain.loss_and_grad(&batch, &mut g_plain).unwrap();
    assert_eq!(&g_tda.tensors[..ENCODER_SLOTS], &g_plain.tensors[..]);
    assert!(g_tda.tensors[ENCODER_SLOTS].iter().any(|&g| g != 0.0), "time head still trains");
}

#[test]
fn grl_is_identity_forward_and_reversed_backward() {
    for x in [-2.5, 0.0, 3.25] {
        assert_eq!(grl_forward(x), x);
    }
    assert_eq!(grl_backward(2.0, 0.5), -1.0);
    assert_eq!(grl_backward(2.0, 0.0), -0.0);
}

/// Independent matrix-algebra forward pass: mean-pooling as `E^T c / n`
/// with a bucket count vector, head transforms as explicit matrices.
fn reference_log_probs(model: &Model, sample: &Sample) -> Vec<f64> {
    let enc = &model.encoder;
    let (v, d) = (enc.config.hash_buckets as usize, enc.dim());
    let e = DMatrix::from_row_slice(v, d, &enc.embedding);
    let mut counts = DVector::zeros(v);
    for &b in &sample.buckets {
        counts[b as usize] += 1.0;
    }
    let mut h = e.transpose() * counts / sample.buckets.len() as f64;
    let bin = model.head.bin_of(sample.timestamp);
    let x = match &model.head.params {
        HeadParams::Empty | HeadParams::Tda { .. } => h,
        HeadParams::Dcwe { offsets } => {
            let b = bin.unwrap();
            h += DVector::from_column_slice(&offsets[b * d..(b + 1) * d]);
            h
        }
        HeadParams::Lmsoc { time_embed } => {
            let k = model.head.config().k_g;
            let row = &time_embed[bin.unwrap() * k..(bin.unwrap() + 1) * k];
            DVector::from_iterator(d + k, h.iter().copied().chain(row.iter().copied()))
        }
        HeadParams::Taph { w } => {
            let u = DVector::from_column_slice(w).normalize();
            (DMatrix::identity(d, d) - &u * u.transpose()) * h
        }
    };
    let w1 = DMatrix::from_row_slice(enc.hidden_dim(), enc.input_dim, &enc.w1);
    let w2 = DMatrix::from_row_slice(enc.n_classes(), enc.hidden_dim(), &enc.w2);
    let hidden = (w1 * x + DVector::from_column_slice(&enc.b1)).map(|z| z.max(0.0));
    let logits = w2 * hidden + DVector::from_column_slice(&enc.b2);
    let lse = logits.map(f64::exp).sum().ln();
    logits.iter().map(|z| z - lse).collect()
}

#[test]
fn forward_matches_matrix_reference() {
    for variant in Variant::ALL {
        let (model, samples) = tiny_model(variant, 1.0, 21);
        for s in &samples {
            let got = model.log_probs(s).unwrap();
            let want = reference_log_probs(&model, s);
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12, "{variant}: {got:?} vs {want:?}");
            }
        }
    }
}

#[test]
fn dcwe_clamps_future_timestamps_to_last_bin() {
    let (model, samples) = tiny_model(Variant::Dcwe, 1.0, 2);
    let mut late = samples[0].clone();
    late.timestamp = T0 + 400 * common::DAY;
    let mut last = samples[0].clone();
    last.timestamp = T0 + 3 * common::DAY + 10;
    assert_eq!(model.head.bin_of(late.timestamp), Some(3));
    assert_eq!(model.log_probs(&late).unwrap(), model.log_probs(&last).unwrap());
}
