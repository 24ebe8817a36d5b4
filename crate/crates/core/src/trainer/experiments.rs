//! Reference experiments built on [`train`](super::train).
//!
//! Each `*_setup` function returns the default configuration of an
//! experiment so callers can echo, override and rerun it.

use alloc::vec::Vec;

use super::{
    evaluate, evaluate_per_image, train, Batching, LossKind, Metrics, StepRecord, TrainConfig,
    TrainHistory,
};
use crate::apgrad::{
    a3_bound_rhs, margin_primary_terms, pairwise_jacobian_norm, reference_z, score_gradients,
    surrogate_loss, tightest_bound, BoundInputs, BoundMode,
};
use crate::baselines::{a2_objective, smooth_ap_loss};
use crate::dataset::Dataset;
use crate::linalg::{norm, sq_dist};
use crate::models::{LinearScorer, ScorerModel};
use crate::ranking::{ap_loss, exact_ap_oracle, interpolated_ap_oracle, StepKind, TieBreak};
use crate::synth::{a2_counterexample, generate, SynthKind, SynthSpec};
use crate::{Error, Result};

/// Perceptron-style training on separable data.
pub fn convergence_setup(seed: u64, max_steps: usize) -> (TrainConfig, SynthSpec) {
    let config = TrainConfig {
        loss_kind: LossKind::PerceptronA1,
        learning_rate: 1.0,
        momentum: 0.0,
        weight_decay: 0.0,
        max_steps: Some(max_steps),
        stop_at_convergence: true,
        seed,
        ..TrainConfig::default()
    };
    let spec = SynthSpec {
        kind: SynthKind::Separable,
        n_pos: 20,
        n_neg: 20,
        dim: 5,
        margin: 0.1,
        seed,
        ..SynthSpec::default()
    };
    (config, spec)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub history: TrainHistory,
    pub final_metrics: Metrics,
}

impl ConvergenceReport {
    /// Perfect ranking reached and no parameter change from then on.
    pub fn succeeded(&self) -> bool {
        self.history.stopped_updating() && self.final_metrics.exact_ap == 1.0
    }
}

pub fn convergence_experiment(config: &TrainConfig, spec: &SynthSpec) -> Result<ConvergenceReport> {
    let data = generate(spec)?.data;
    let history = train(config, &data)?;
    let final_metrics = evaluate(&history.model, &data)?;
    Ok(ConvergenceReport {
        history,
        final_metrics,
    })
}

/// Smoothed-AP descent and error-driven training on the three-sample instance, both from `θ = (10, 5)`.
pub fn counterexample_setup(steps: usize) -> (TrainConfig, TrainConfig) {
    let smooth = TrainConfig {
        loss_kind: LossKind::SmoothAp,
        learning_rate: 0.1,
        momentum: 0.0,
        weight_decay: 0.0,
        max_steps: Some(steps),
        init_params: Some(alloc::vec![10.0, 5.0]),
        ..TrainConfig::default()
    };
    let driven = TrainConfig {
        loss_kind: LossKind::ApErrorDriven,
        ..smooth.clone()
    };
    (smooth, driven)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CounterexampleReport {
    pub smooth: TrainHistory,
    pub error_driven: TrainHistory,
    /// Smoothed AP-loss at the final smooth-descent weights.
    pub smooth_objective: f64,
    pub smooth_exact_ap: f64,
    pub error_driven_exact_ap: f64,
    /// Central-difference slope of the smoothed objective at the smooth run's initial weights.
    pub initial_slope: [f64; 2],
}

/// Central differences of the closed-form smoothed objective.
pub fn a2_slope(theta: [f64; 2], h: f64) -> [f64; 2] {
    let d = |axis: usize| {
        let (mut up, mut down) = (theta, theta);
        up[axis] += h;
        down[axis] -= h;
        (a2_objective(up) - a2_objective(down)) / (2.0 * h)
    };
    [d(0), d(1)]
}

pub fn counterexample_experiment(
    smooth: &TrainConfig,
    driven: &TrainConfig,
) -> Result<CounterexampleReport> {
    let data = a2_counterexample();
    let smooth_history = train(smooth, &data)?;
    let driven_history = train(driven, &data)?;
    let batch = data.ranking(smooth_history.model.forward(&data.features)?)?;
    let smooth_objective = smooth_ap_loss(&batch, smooth.smooth.temperature)?;
    let start = match smooth.init_params.as_deref() {
        Some([a, b]) => [*a, *b],
        _ => [0.0, 0.0],
    };
    Ok(CounterexampleReport {
        smooth_objective,
        smooth_exact_ap: evaluate(&smooth_history.model, &data)?.exact_ap,
        error_driven_exact_ap: evaluate(&driven_history.model, &data)?.exact_ap,
        initial_slope: a2_slope(start, 1e-2),
        smooth: smooth_history,
        error_driven: driven_history,
    })
}

/// Error-driven training on two images whose offsets differ by 10.
pub fn score_shift_setup(seed: u64) -> (TrainConfig, SynthSpec) {
    let config = TrainConfig {
        learning_rate: 0.1,
        batch_size: 2,
        epochs: 500,
        seed,
        ..TrainConfig::default()
    };
    let spec = SynthSpec {
        kind: SynthKind::MultiImage,
        n_pos: 2,
        n_neg: 2,
        dim: 2,
        n_images: 2,
        seed,
        ..SynthSpec::default()
    };
    (config, spec)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShiftArm {
    pub history: TrainHistory,
    /// All images pooled into one ranking.
    pub combined: Metrics,
    pub per_image: Vec<(u32, Metrics)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreShiftReport {
    pub pooled: ShiftArm,
    pub per_image: ShiftArm,
}

pub fn score_shift_experiment(seed: u64) -> Result<ScoreShiftReport> {
    let (config, spec) = score_shift_setup(seed);
    score_shift_with(&config, &spec)
}

/// Trains the same configuration once per batching mode; `config.batching` is ignored.
pub fn score_shift_with(config: &TrainConfig, spec: &SynthSpec) -> Result<ScoreShiftReport> {
    let data = generate(spec)?.data;
    let arm = |batching: Batching| -> Result<ShiftArm> {
        let history = train(
            &TrainConfig {
                batching,
                ..config.clone()
            },
            &data,
        )?;
        Ok(ShiftArm {
            combined: evaluate(&history.model, &data)?,
            per_image: evaluate_per_image(&history.model, &data)?,
            history,
        })
    };
    Ok(ScoreShiftReport {
        pooled: arm(Batching::Pooled)?,
        per_image: arm(Batching::PerImage)?,
    })
}

/// Offline full-batch descent on the margin surrogate with step size `δ / R²`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundConfig {
    pub delta: f64,
    /// Checkpoints `T`; the run lasts `max(horizons)` steps.
    pub horizons: Vec<usize>,
    /// `θ⁽¹⁾`, zeros when absent.
    pub init_theta: Option<Vec<f64>>,
}

impl Default for BoundConfig {
    fn default() -> Self {
        Self {
            delta: 1.0,
            horizons: alloc::vec![100, 1000, 10_000],
            init_theta: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundCheckpoint {
    pub horizon: usize,
    /// `(1/T) Σ_t L_AP(θ⁽ᵗ⁾)`.
    pub average_ap_loss: f64,
    pub recall_weighted: f64,
    pub saturating: f64,
    /// `(1/T) [(8/δ) Σ_t l⁽ᵗ⁾(u) + 4R²‖u - θ⁽¹⁾‖²/δ²]`.
    pub accumulated: f64,
}

impl BoundCheckpoint {
    pub fn tightest(&self) -> f64 {
        self.recall_weighted.min(self.saturating)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub operator_norm: f64,
    pub step_size: f64,
    pub z_u: f64,
    pub init_distance_sq: f64,
    pub checkpoints: Vec<BoundCheckpoint>,
    /// Per step: Heaviside AP-loss, oracle APs, surrogate value `l⁽ᵗ⁾(θ⁽ᵗ⁾)` and gradient norm.
    pub records: Vec<StepRecord>,
    pub final_theta: Vec<f64>,
}

/// Runs the margin update offline and checks the average AP-loss against
/// both closed-form bounds at every horizon.
///
/// Fails with [`Error::BoundViolated`] if the average exceeds the smaller
/// bound or the accumulated-loss bound it is derived from.
pub fn a3_bound_experiment(
    config: &BoundConfig,
    data: &Dataset,
    reference_u: &[f64],
) -> Result<BoundReport> {
    let delta = config.delta;
    StepKind::piecewise(delta)?;
    let dim = data.dim();
    if reference_u.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: reference_u.len(),
        });
    }
    if data.num_positives() == 0 {
        return Err(Error::NoPositives);
    }
    let horizon_max = config.horizons.iter().copied().max().unwrap_or(0);
    if config.horizons.contains(&0) {
        return Err(Error::InvalidConfig("horizons must be positive".into()));
    }

    let r = pairwise_jacobian_norm(&data.features, &data.labels)?;
    if r == 0.0 {
        return Err(Error::InvalidConfig(
            "all positive-negative feature differences vanish".into(),
        ));
    }
    let eta = delta / (r * r);
    let theta1 = config
        .init_theta
        .clone()
        .unwrap_or_else(|| alloc::vec![0.0; dim]);
    let mut model = ScorerModel::Linear(LinearScorer {
        theta: theta1.clone(),
    });
    model.set_params(&theta1)?;
    let reference = ScorerModel::Linear(LinearScorer {
        theta: reference_u.to_vec(),
    });
    let u_scores = reference.forward(&data.features)?;
    let u_batch = data.ranking(u_scores.clone())?;
    let z_u = reference_z(&u_batch, delta)?;
    let init_distance_sq = sq_dist(reference_u, &theta1);

    let mut records = Vec::with_capacity(horizon_max);
    let mut checkpoints = Vec::new();
    let mut sum_ap = 0.0;
    let mut sum_lu = 0.0;
    for t in 0..horizon_max {
        let scores = model.forward(&data.features)?;
        let batch = data.ranking(scores.clone())?;
        let loss = ap_loss(&batch, StepKind::Heaviside, false)?;
        let rows = margin_primary_terms(&batch, delta)?;
        let g = score_gradients(&rows, &batch, true)?;
        let grad = model.backward(&data.features, &g.values)?;
        let objective = surrogate_loss(&batch, &scores, delta)?;
        sum_ap += loss;
        sum_lu += surrogate_loss(&u_batch, &scores, delta)?;
        records.push(StepRecord {
            step: t,
            ap_loss: Some(loss),
            exact_ap: Some(exact_ap_oracle(&batch, TieBreak::Pessimistic)?),
            interp_ap: Some(interpolated_ap_oracle(&batch, TieBreak::Pessimistic)?),
            objective,
            grad_norm: norm(&grad),
            update_norm: eta * norm(&grad),
        });
        let mut theta = model.params();
        for (p, gv) in theta.iter_mut().zip(&grad) {
            *p -= eta * gv;
        }
        if theta.iter().any(|p| !p.is_finite()) {
            return Err(Error::DivergenceDetected { step: t });
        }
        model.set_params(&theta)?;

        let horizon = t + 1;
        if config.horizons.contains(&horizon) {
            let inputs = BoundInputs {
                z_u,
                num_positives: data.num_positives(),
                operator_norm: r,
                delta,
                init_distance_sq,
                horizon,
            };
            let average = sum_ap / horizon as f64;
            let checkpoint = BoundCheckpoint {
                horizon,
                average_ap_loss: average,
                recall_weighted: a3_bound_rhs(&inputs, BoundMode::RecallWeighted),
                saturating: a3_bound_rhs(&inputs, BoundMode::Saturating),
                accumulated: (8.0 / delta * sum_lu) / horizon as f64 + inputs.initialization_term(),
            };
            let bound = tightest_bound(&inputs);
            if average > bound || average > checkpoint.accumulated {
                return Err(Error::BoundViolated {
                    horizon,
                    average,
                    bound: bound.min(checkpoint.accumulated),
                });
            }
            checkpoints.push(checkpoint);
        }
    }

    Ok(BoundReport {
        operator_norm: r,
        step_size: eta,
        z_u,
        init_distance_sq,
        checkpoints,
        records,
        final_theta: model.params(),
    })
}

/// Separable data with margin `δ` and `u = θ* δ / ε`, so that `Z(u) = 0`.
pub fn bound_separable_setup(seed: u64, delta: f64) -> Result<(Dataset, Vec<f64>)> {
    let generated = generate(&SynthSpec {
        kind: SynthKind::Separable,
        n_pos: 10,
        n_neg: 10,
        dim: 3,
        margin: delta,
        seed,
        ..SynthSpec::default()
    })?;
    let cert = generated
        .certificate
        .expect("separable data carries a certificate");
    let u = cert
        .theta
        .iter()
        .map(|v| v * delta / cert.epsilon)
        .collect();
    Ok((generated.data, u))
}

/// Jittered data with a duplicated positive; `u` is the planted direction scaled by `δ / margin`.
pub fn bound_inseparable_setup(seed: u64, delta: f64) -> Result<(Dataset, Vec<f64>)> {
    let margin = 1.0;
    let generated = generate(&SynthSpec {
        kind: SynthKind::Inseparable,
        n_pos: 10,
        n_neg: 10,
        dim: 3,
        margin,
        noise: 0.5,
        seed,
        ..SynthSpec::default()
    })?;
    let u = generated
        .direction
        .iter()
        .map(|v| v * delta / margin)
        .collect();
    Ok((generated.data, u))
}
