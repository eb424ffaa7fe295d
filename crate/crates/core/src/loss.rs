//! Training objective: cross-entropy plus temperature-scaled distillation.
//!
//! The local objective is `ce + beta * kd` where `kd` compares the student's
//! softened distribution against a teacher's. Gradients are taken with
//! respect to the raw student logits so the network code stays loss-agnostic.

use crate::error::{Error, Result};

/// One sample's view of the objective: student logits, the hard label, and
/// optionally the teacher logits to distill against.
pub struct Probe<'a> {
    pub logits: &'a [f64],
    pub target_label: usize,
    pub teacher_logits: Option<&'a [f64]>,
}

fn check_finite(context: &str, values: &[f64]) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: context.into(),
        });
    }
    Ok(())
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "temperature must be positive and finite, got {tau}"
        )));
    }
    Ok(())
}

/// Numerically stable `softmax(logits / tau)`.
pub fn softmax(logits: &[f64], tau: f64) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::InvalidArgument("softmax of empty logits".into()));
    }
    check_finite("softmax input", logits)?;
    check_tau(tau)?;
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| ((z - max) / tau).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// `log(sum(exp(z_i)))` with the usual max shift.
fn logsumexp(logits: &[f64]) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln()
}

/// Cross-entropy of the hard label under `softmax(logits)`.
pub fn ce_loss(logits: &[f64], label: usize) -> Result<f64> {
    check_finite("cross-entropy logits", logits)?;
    if label >= logits.len() {
        return Err(Error::LabelOutOfRange {
            label,
            classes: logits.len(),
        });
    }
    Ok(logsumexp(logits) - logits[label])
}

/// d(ce_loss)/d(logits) = softmax(logits) - onehot(label).
pub fn ce_grad(logits: &[f64], label: usize) -> Result<Vec<f64>> {
    if label >= logits.len() {
        return Err(Error::LabelOutOfRange {
            label,
            classes: logits.len(),
        });
    }
    let mut grad = softmax(logits, 1.0)?;
    grad[label] -= 1.0;
    Ok(grad)
}

/// Distillation loss `tau^2 * KL(p || q)` with `p = softmax(teacher/tau)`
/// and `q = softmax(student/tau)`.
pub fn kd_loss(student_logits: &[f64], teacher_logits: &[f64], tau: f64) -> Result<f64> {
    if student_logits.len() != teacher_logits.len() {
        return Err(Error::DimensionMismatch {
            context: "distillation logits",
            expected: student_logits.len(),
            actual: teacher_logits.len(),
        });
    }
    let q = softmax(student_logits, tau)?;
    let p = softmax(teacher_logits, tau)?;
    let mut kl = 0.0;
    for (&pi, &qi) in p.iter().zip(&q) {
        // p log(p/q) with the 0 log 0 = 0 convention.
        if pi > 0.0 {
            kl += pi * (pi.ln() - qi.ln());
        }
    }
    Ok(tau * tau * kl)
}

/// d(kd_loss)/d(student_logits) = tau * (q - p).
///
/// One factor of tau^2 from the loss scale cancels against the 1/tau from
/// differentiating `student/tau`, leaving a single factor.
pub fn kd_grad(student_logits: &[f64], teacher_logits: &[f64], tau: f64) -> Result<Vec<f64>> {
    if student_logits.len() != teacher_logits.len() {
        return Err(Error::DimensionMismatch {
            context: "distillation logits",
            expected: student_logits.len(),
            actual: teacher_logits.len(),
        });
    }
    let q = softmax(student_logits, tau)?;
    let p = softmax(teacher_logits, tau)?;
    Ok(q.iter().zip(&p).map(|(&qi, &pi)| tau * (qi - pi)).collect())
}

/// Full per-sample objective: `ce + beta * kd`, with its logit gradient.
///
/// Without teacher logits this is plain cross-entropy, which also covers
/// warm-up rounds before any knowledge exists.
pub fn combined_objective(probe: &Probe<'_>, beta: f64, tau: f64) -> Result<(f64, Vec<f64>)> {
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "distillation weight must be non-negative and finite, got {beta}"
        )));
    }
    let mut loss = ce_loss(probe.logits, probe.target_label)?;
    let mut grad = ce_grad(probe.logits, probe.target_label)?;
    if let Some(teacher) = probe.teacher_logits {
        check_finite("teacher logits", teacher)?;
        loss += beta * kd_loss(probe.logits, teacher, tau)?;
        let kg = kd_grad(probe.logits, teacher, tau)?;
        for (g, k) in grad.iter_mut().zip(&kg) {
            *g += beta * k;
        }
    }
    Ok((loss, grad))
}
