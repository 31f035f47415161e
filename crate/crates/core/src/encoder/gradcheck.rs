//! Central finite-difference check of [`Model::loss_and_grad`].

use crate::model::{Gradients, LossParts, Model, Sample, ENCODER_SLOTS};
use crate::temporal::HeadParams;

/// Denominator floor of the relative error, so that entries whose true
/// gradient is zero compare on an absolute scale.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Worst relative error per tensor.
    pub per_tensor: Vec<(&'static str, f64)>,
    pub entries_checked: usize,
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// The scalar whose gradient a tensor's analytic gradient should equal.
/// Encoder tensors see the time loss through gradient reversal, so their
/// target is `task + temporal - lambda * time`; head tensors see the plain
/// sum.
fn objective(model: &Model, parts: LossParts, slot: usize) -> f64 {
    if slot < ENCODER_SLOTS {
        let lambda = match model.head.params {
            HeadParams::Tda { .. } => model.head.config().lambda_grl,
            _ => 0.0,
        };
        parts.task + parts.temporal - lambda * parts.time
    } else {
        parts.total()
    }
}

/// Compares every trainable gradient entry against central differences
/// with step `eps`. Frozen tensors are skipped.
pub fn grad_check(model: &Model, batch: &[Sample], eps: f64) -> GradCheckReport {
    let refs: Vec<&Sample> = batch.iter().collect();
    let mut grads = Gradients::zeros_like(model);
    model.loss_and_grad(&refs, &mut grads).expect("forward pass");

    let mut probe = model.clone();
    let mut report = GradCheckReport { max_rel_error: 0.0, per_tensor: Vec::new(), entries_checked: 0 };
    let slots: Vec<_> = model.slots().into_iter().map(|(name, kind, t)| (name, kind, t.len())).collect();
    for (k, (name, kind, len)) in slots.into_iter().enumerate() {
        if !kind.trainable {
            continue;
        }
        let mut worst: f64 = 0.0;
        for i in 0..len {
            let orig = probe.slots()[k].2[i];
            let eval = |probe: &mut Model, x: f64| {
                probe.slots_mut()[k].2[i] = x;
                let parts = probe.loss_parts(&refs).expect("forward pass");
                objective(probe, parts, k)
            };
            let up = eval(&mut probe, orig + eps);
            let down = eval(&mut probe, orig - eps);
            probe.slots_mut()[k].2[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            worst = worst.max(rel_error(grads.tensors[k][i], numeric));
            report.entries_checked += 1;
        }
        report.per_tensor.push((name, worst));
        report.max_rel_error = report.max_rel_error.max(worst);
    }
    report
}
