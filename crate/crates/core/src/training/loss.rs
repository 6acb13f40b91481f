//! Loss functions with analytic gradients.
//!
//! Regression losses take residuals `x_i = y_i - y_hat_i` and return the
//! gradient with respect to each residual; classification loss takes
//! row-major `n x k` logits and returns the gradient with respect to them.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("loss needs at least one sample")]
    Empty,
    #[error("label {label} at index {index} is outside [0, {classes})")]
    LabelOutOfRange { index: usize, label: usize, classes: usize },
    #[error("{logits} logits do not form {labels} rows of {classes} classes")]
    Shape { logits: usize, labels: usize, classes: usize },
    #[error("smooth-loss threshold c must be positive, got {0}")]
    Threshold(f64),
}

/// Piecewise `s(x) = a x^2` for `|x| < c`, `|x| - b` otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SmoothLossParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Default for SmoothLossParams {
    fn default() -> Self {
        SmoothLossParams { a: 0.6, b: 0.0, c: 1.0 }
    }
}

impl SmoothLossParams {
    pub fn validate(&self) -> Result<(), LossError> {
        if !(self.c > 0.0) {
            return Err(LossError::Threshold(self.c));
        }
        Ok(())
    }

    pub fn s(&self, x: f64) -> f64 {
        if x.abs() < self.c {
            self.a * x * x
        } else {
            x.abs() - self.b
        }
    }

    pub fn ds(&self, x: f64) -> f64 {
        if x.abs() < self.c {
            2.0 * self.a * x
        } else {
            x.signum()
        }
    }
}

/// `sqrt(mean(s(x_i)))`.
pub fn smooth_loss(residuals: &[f64], params: &SmoothLossParams) -> Result<f64, LossError> {
    params.validate()?;
    if residuals.is_empty() {
        return Err(LossError::Empty);
    }
    let mean = residuals.iter().map(|&x| params.s(x)).sum::<f64>() / residuals.len() as f64;
    Ok(mean.sqrt())
}

/// Loss value and gradient with respect to each residual. At zero loss the
/// square root is not differentiable and the gradient is taken as zero.
pub fn smooth_loss_grad(residuals: &[f64], params: &SmoothLossParams) -> Result<(f64, Vec<f64>), LossError> {
    let loss = smooth_loss(residuals, params)?;
    let n = residuals.len() as f64;
    let grad = if loss > 0.0 {
        residuals.iter().map(|&x| params.ds(x) / (2.0 * n * loss)).collect()
    } else {
        vec![0.0; residuals.len()]
    };
    Ok((loss, grad))
}

pub fn mse_loss(residuals: &[f64]) -> Result<f64, LossError> {
    if residuals.is_empty() {
        return Err(LossError::Empty);
    }
    Ok(residuals.iter().map(|x| x * x).sum::<f64>() / residuals.len() as f64)
}

pub fn mse_loss_grad(residuals: &[f64]) -> Result<(f64, Vec<f64>), LossError> {
    let loss = mse_loss(residuals)?;
    let n = residuals.len() as f64;
    Ok((loss, residuals.iter().map(|x| 2.0 * x / n).collect()))
}

fn check_logits(logits: &[f64], labels: &[usize], classes: usize) -> Result<(), LossError> {
    if labels.is_empty() {
        return Err(LossError::Empty);
    }
    if classes == 0 || logits.len() != labels.len() * classes {
        return Err(LossError::Shape {
            logits: logits.len(),
            labels: labels.len(),
            classes,
        });
    }
    if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
        return Err(LossError::LabelOutOfRange { index, label, classes });
    }
    Ok(())
}

/// Numerically stable softmax of one row.
pub fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

/// Mean negative log-softmax probability of the labelled class.
pub fn cross_entropy_loss(logits: &[f64], labels: &[usize], classes: usize) -> Result<f64, LossError> {
    Ok(cross_entropy_loss_grad(logits, labels, classes)?.0)
}

pub fn cross_entropy_loss_grad(logits: &[f64], labels: &[usize], classes: usize) -> Result<(f64, Vec<f64>), LossError> {
    check_logits(logits, labels, classes)?;
    let n = labels.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (row, &label) in logits.chunks_exact(classes).zip(labels) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_sum = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
        loss += log_sum - row[label];
        for (k, v) in row.iter().enumerate() {
            let p = (v - log_sum).exp();
            grad.push((p - if k == label { 1.0 } else { 0.0 }) / n);
        }
    }
    Ok((loss / n, grad))
}
