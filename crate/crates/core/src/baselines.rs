//! Differentiable comparison losses.
//!
//! - Sigmoid-smoothed AP: the step in every primary term is replaced by
//!   `S(τx) = 1 / (1 + e^{-τx})`, giving a genuine function with an exact
//!   gradient (the approximate-gradient route).
//! - AUC-loss: uniform penalty `1/|N|` per misordered pair, driven by the
//!   same error-driven scheme as AP.
//! - Consistency checks: with a softmax or a loss-augmented step activation
//!   the error-driven update coincides with the cross-entropy gradient and
//!   the hinge subgradient.

use alloc::vec::Vec;

use crate::apgrad::{score_gradients, GradientVector};
use crate::ranking::{auc_primary_terms, pairwise_difference, Label, RankingBatch, StepKind};
use crate::{Error, Result};

/// Smoothed-AP settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothApConfig {
    /// Slope `τ` inside the sigmoid.
    pub temperature: f64,
    /// Offset `ε` of the log-space objective.
    pub epsilon: f64,
    /// Minimize `-ln(AP_smooth + ε)` instead of the smoothed loss itself.
    pub log_space: bool,
}

impl Default for SmoothApConfig {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            epsilon: 0.01,
            log_space: false,
        }
    }
}

impl SmoothApConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidConfig("temperature must be positive".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::InvalidConfig("epsilon must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Logistic sigmoid, stable for large `|x|`.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// `F = (1/|P|) Σ_i Σ_j S(x_ij) / (1 + Σ_{k≠i} S(x_ik))`.
pub fn smooth_ap_loss(batch: &RankingBatch, temperature: f64) -> Result<f64> {
    let config = SmoothApConfig {
        temperature,
        log_space: false,
        ..SmoothApConfig::default()
    };
    Ok(smooth_ap_value_grad(batch, &config)?.0)
}

/// Value and exact score gradient of the smoothed AP objective.
///
/// Without `log_space` the value is `F`; with it the value is
/// `-ln(1 - F + ε)`. Ignored samples get zero gradient.
pub fn smooth_ap_value_grad(
    batch: &RankingBatch,
    config: &SmoothApConfig,
) -> Result<(f64, GradientVector)> {
    config.validate()?;
    let positives = batch.positives();
    if positives.is_empty() {
        return Err(Error::EmptyPositives);
    }
    let valid = batch.valid();
    let scores = batch.scores();
    let labels = batch.labels();
    let tau = config.temperature;
    let p = positives.len() as f64;

    let mut grad = GradientVector::zeros(batch.len(), true);
    let mut loss = 0.0;
    // Per positive i: F_i = A_i / D_i with A_i = Σ_{j∈N} S(x_ij), D_i = 1 + Σ_{k≠i} S(x_ik).
    // ∂F_i/∂x_ik = τ S(1-S)(x_ik) · ([k ∈ N] - F_i) / D_i, and x_ik = s_k - s_i.
    let mut activations = Vec::with_capacity(valid.len());
    for &i in &positives {
        activations.clear();
        let mut a = 0.0;
        let mut d = 1.0;
        for &k in &valid {
            if k == i {
                continue;
            }
            let s = sigmoid(tau * pairwise_difference(scores, i, k));
            d += s;
            if labels[k] == Label::Negative {
                a += s;
            }
            activations.push((k, s));
        }
        let f_i = a / d;
        loss += f_i;
        for &(k, s) in &activations {
            let target = if labels[k] == Label::Negative {
                1.0
            } else {
                0.0
            };
            let dx = tau * s * (1.0 - s) * (target - f_i) / d / p;
            grad.values[k] += dx;
            grad.values[i] -= dx;
        }
    }
    let f = loss / p;
    if config.log_space {
        let inner = 1.0 - f + config.epsilon;
        for v in grad.values.iter_mut() {
            *v /= inner;
        }
        Ok((-libm::log(inner), grad))
    } else {
        Ok((f, grad))
    }
}

/// Closed-form smoothed AP-loss of the two-parameter linear model on the fixed
/// three-sample instance: negative `(0, 0)`, positives `(1, 0)` and `(-3, 1)`.
pub fn a2_objective(theta: [f64; 2]) -> f64 {
    let [t1, t2] = theta;
    let first = sigmoid(-t1) / (1.0 + sigmoid(-t1) + sigmoid(t2 - 4.0 * t1));
    let second = sigmoid(3.0 * t1 - t2) / (1.0 + sigmoid(4.0 * t1 - t2) + sigmoid(3.0 * t1 - t2));
    0.5 * (first + second)
}

/// Error-driven AUC gradient, normalized by `|P|`.
pub fn auc_grad(batch: &RankingBatch, kind: StepKind) -> Result<GradientVector> {
    let rows = auc_primary_terms(batch, kind)?;
    score_gradients(&rows, batch, true)
}

fn check_class(class: usize, classes: usize) -> Result<()> {
    if classes < 2 || class >= classes {
        return Err(Error::InvalidClass { class, classes });
    }
    Ok(())
}

/// Error-driven update with a softmax activation: `g_i = L_i - 1[i = class]`.
/// `class` is zero-based.
pub fn softmax_consistency_grad(logits: &[f64], class: usize) -> Result<Vec<f64>> {
    check_class(class, logits.len())?;
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&x| libm::exp(x - max)).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps
        .iter()
        .enumerate()
        .map(|(i, &e)| e / total - if i == class { 1.0 } else { 0.0 })
        .collect())
}

/// `-ln softmax(x)_class`, via log-sum-exp.
pub fn cross_entropy_loss(logits: &[f64], class: usize) -> Result<f64> {
    check_class(class, logits.len())?;
    Ok(log_sum_exp(logits) - logits[class])
}

/// Analytic gradient of [`cross_entropy_loss`]: `∂/∂x_i (lse(x) - x_y) = e^{x_i - lse(x)} - 1[i = y]`.
pub fn cross_entropy_grad(logits: &[f64], class: usize) -> Result<Vec<f64>> {
    check_class(class, logits.len())?;
    let lse = log_sum_exp(logits);
    Ok(logits
        .iter()
        .enumerate()
        .map(|(i, &x)| libm::exp(x - lse) - if i == class { 1.0 } else { 0.0 })
        .collect())
}

fn log_sum_exp(x: &[f64]) -> f64 {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + libm::log(x.iter().map(|&v| libm::exp(v - max)).sum::<f64>())
}

/// Error-driven update with the loss-augmented step `L_i = H(x_i - 1)` on
/// `(x_1, x_2) = (-x, x)`: `g_i = 1[i = class] (L_i - 1)`. `class` is 0 or 1.
pub fn hinge_consistency_grad(x: f64, class: usize) -> Result<[f64; 2]> {
    check_class(class, 2)?;
    let outputs = [-x, x];
    let mut g = [0.0; 2];
    let l = crate::ranking::step(outputs[class] - 1.0, StepKind::Heaviside);
    g[class] = l - 1.0;
    Ok(g)
}

/// A subgradient of `max(1 - x_class, 0)` with respect to `(x_1, x_2) = (-x, x)`,
/// taking 0 at the kink.
pub fn hinge_subgradient(x: f64, class: usize) -> Result<[f64; 2]> {
    check_class(class, 2)?;
    let margin = if class == 0 { -x } else { x };
    let mut g = [0.0; 2];
    if 1.0 - margin > 0.0 {
        g[class] = -1.0;
    }
    Ok(g)
}
