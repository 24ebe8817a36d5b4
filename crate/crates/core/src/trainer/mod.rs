//! Seeded minibatch SGD over any loss kind and scorer.
//!
//! Every step draws a group of images, scores their samples, turns the
//! chosen ranking loss into score gradients, backpropagates through the
//! scorer and applies momentum SGD with weight decay:
//!
//! ```text
//! v ← μ v - η (∇θ + λ θ)
//! θ ← θ + v
//! ```
//!
//! Metrics are taken on the minibatch before the update. Exact and
//! interpolated AP come from the sort-based oracles with tied scores
//! resolved pessimistically, so `ap_loss = 1 - exact_ap` holds at every
//! step even while all scores are still tied.

pub mod experiments;

use alloc::string::ToString;
use alloc::vec::Vec;
use core::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::apgrad::{ap_grad_minibatch, margin_primary_terms, score_gradients};
use crate::baselines::{smooth_ap_value_grad, SmoothApConfig};
use crate::dataset::Dataset;
use crate::linalg::{norm, sq_dist};
use crate::models::{LinearScorer, MlpScorer, ScorerModel};
use crate::ranking::{
    ap_loss, auc_oracle, auc_primary_terms, exact_ap_oracle, interpolated_ap_oracle, primary_terms,
    RankingBatch, StepKind, TieBreak,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// Error-driven AP update, optionally interpolated.
    ApErrorDriven,
    /// Piecewise step in the numerator only; gradient descent on the convex surrogate.
    ApMargin,
    Auc,
    /// Sigmoid-smoothed AP with its exact gradient.
    SmoothAp,
    /// Unnormalized Heaviside update; with `lr = 1`, no momentum and no decay this is the plain perceptron-style rule.
    PerceptronA1,
}

impl LossKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::ApErrorDriven => "ap_error_driven",
            LossKind::ApMargin => "ap_margin",
            LossKind::Auc => "auc",
            LossKind::SmoothAp => "smooth_ap",
            LossKind::PerceptronA1 => "perceptron_a1",
        }
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ap_error_driven" | "ap" => Ok(LossKind::ApErrorDriven),
            "ap_margin" | "ap-margin" => Ok(LossKind::ApMargin),
            "auc" => Ok(LossKind::Auc),
            "smooth_ap" | "smooth-ap" => Ok(LossKind::SmoothAp),
            "perceptron_a1" | "perceptron" => Ok(LossKind::PerceptronA1),
            other => Err(Error::InvalidConfig(alloc::format!(
                "unknown loss kind `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Batching {
    /// All samples of the drawn images form one ranking.
    #[default]
    Pooled,
    /// One ranking per image; normalized gradients averaged with equal image weights.
    PerImage,
}

impl Batching {
    pub fn as_str(self) -> &'static str {
        match self {
            Batching::Pooled => "pooled",
            Batching::PerImage => "per_image",
        }
    }
}

impl FromStr for Batching {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pooled" => Ok(Batching::Pooled),
            "per_image" | "per-image" => Ok(Batching::PerImage),
            other => Err(Error::InvalidConfig(alloc::format!(
                "unknown batching `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Linear,
    Mlp { hidden: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub loss_kind: LossKind,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Images per step.
    pub batch_size: usize,
    pub epochs: usize,
    /// When set, overrides `epochs` and runs exactly this many steps.
    pub max_steps: Option<usize>,
    /// Half-width of the piecewise step.
    pub delta: f64,
    /// Use the piecewise step for the error-driven and AUC updates; otherwise Heaviside.
    pub piecewise: bool,
    pub interpolated: bool,
    pub batching: Batching,
    pub seed: u64,
    pub model: ModelKind,
    /// Initial parameters; zeros for a linear scorer and seeded uniform draws for the MLP when absent.
    pub init_params: Option<Vec<f64>>,
    pub smooth: SmoothApConfig,
    /// Stop once the convergence criterion is met.
    pub stop_at_convergence: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss_kind: LossKind::ApErrorDriven,
            learning_rate: 0.01,
            momentum: 0.9,
            weight_decay: 1e-4,
            batch_size: 1,
            epochs: 10,
            max_steps: None,
            delta: 1.0,
            piecewise: true,
            interpolated: true,
            batching: Batching::Pooled,
            seed: 0,
            model: ModelKind::Linear,
            init_params: None,
            smooth: SmoothApConfig::default(),
            stop_at_convergence: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be non-negative");
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch_size and epochs must be at least 1");
        }
        if let ModelKind::Mlp { hidden: 0 } = self.model {
            return bad("hidden must be at least 1");
        }
        StepKind::piecewise(self.delta)?;
        self.smooth.validate()
    }

    /// Step used by the error-driven and AUC updates.
    pub fn step_kind(&self) -> StepKind {
        if self.piecewise {
            StepKind::Piecewise { delta: self.delta }
        } else {
            StepKind::Heaviside
        }
    }

    fn build_model(&self, dim: usize) -> Result<ScorerModel> {
        let mut model = match self.model {
            ModelKind::Linear => ScorerModel::Linear(LinearScorer::zeros(dim)),
            ModelKind::Mlp { hidden } => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                rng.set_stream(1);
                ScorerModel::Mlp(MlpScorer::random(dim, hidden, &mut rng)?)
            }
        };
        if let Some(p) = &self.init_params {
            model.set_params(p)?;
        }
        Ok(model)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    /// Heaviside AP-loss of the minibatch; `None` when it has no positives.
    pub ap_loss: Option<f64>,
    pub exact_ap: Option<f64>,
    pub interp_ap: Option<f64>,
    /// Value of the loss being optimized.
    pub objective: f64,
    /// Norm of the loss gradient with respect to the parameters, before weight decay.
    pub grad_norm: f64,
    /// Norm of the parameter change made by this step.
    pub update_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<StepRecord>,
    /// First step of the clean epoch that established convergence.
    pub converged_at: Option<usize>,
    pub steps_per_epoch: usize,
    pub model: ScorerModel,
}

impl TrainHistory {
    pub fn converged(&self) -> bool {
        self.converged_at.is_some()
    }

    /// True when no step from convergence onwards moved the parameters.
    pub fn stopped_updating(&self) -> bool {
        match self.converged_at {
            Some(at) => self.records[at..].iter().all(|r| r.update_norm == 0.0),
            None => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub exact_ap: f64,
    pub interp_ap: f64,
    pub auc: f64,
}

/// Score gradient and objective of one ranking. Rankings without positives contribute nothing.
fn ranking_gradient(config: &TrainConfig, batch: &RankingBatch) -> Result<Option<(Vec<f64>, f64)>> {
    if batch.num_positives() == 0 {
        return Ok(None);
    }
    let out = match config.loss_kind {
        LossKind::ApErrorDriven => {
            let (g, loss) = ap_grad_minibatch(batch, config.step_kind(), config.interpolated)?;
            (g.values, loss)
        }
        LossKind::ApMargin => {
            let rows = margin_primary_terms(batch, config.delta)?;
            (score_gradients(&rows, batch, true)?.values, rows.loss())
        }
        LossKind::Auc => {
            let rows = auc_primary_terms(batch, config.step_kind())?;
            (score_gradients(&rows, batch, true)?.values, rows.loss())
        }
        LossKind::SmoothAp => {
            let (value, g) = smooth_ap_value_grad(batch, &config.smooth)?;
            (g.values, value)
        }
        LossKind::PerceptronA1 => {
            let rows = primary_terms(batch, StepKind::Heaviside)?;
            (score_gradients(&rows, batch, false)?.values, rows.loss())
        }
    };
    Ok(Some(out))
}

fn is_perfect(batch: &RankingBatch) -> Result<bool> {
    if batch.num_positives() == 0 {
        return Ok(true);
    }
    Ok(exact_ap_oracle(batch, TieBreak::Pessimistic)? == 1.0)
}

/// Runs SGD on `data` and records one entry per step.
///
/// Convergence means a full epoch of minibatches whose ranking is perfect:
/// the pooled minibatch in pooled mode, every image in per-image mode.
pub fn train(config: &TrainConfig, data: &Dataset) -> Result<TrainHistory> {
    config.validate()?;
    if data.num_positives() == 0 {
        return Err(Error::NoPositives);
    }
    let mut model = config.build_model(data.dim())?;
    let mut params = model.params();
    let mut velocity = alloc::vec![0.0; params.len()];

    let mut images = data.images();
    let steps_per_epoch = images.len().div_ceil(config.batch_size);
    let total = config.max_steps.unwrap_or(config.epochs * steps_per_epoch);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut records = Vec::with_capacity(total);
    let mut converged_at = None;
    let mut clean_since: Option<usize> = None;
    let mut step = 0;

    'outer: while step < total {
        images.shuffle(&mut rng);
        for chunk in images.chunks(config.batch_size) {
            if step == total {
                break 'outer;
            }
            let indices = data.indices_in(chunk);
            let sub = data.subset(&indices);
            let scores = model.forward(&sub.features)?;
            let batch = sub.ranking(scores)?;

            let (ap, exact, interp) = if batch.num_positives() > 0 {
                (
                    Some(ap_loss(&batch, StepKind::Heaviside, false)?),
                    Some(exact_ap_oracle(&batch, TieBreak::Pessimistic)?),
                    Some(interpolated_ap_oracle(&batch, TieBreak::Pessimistic)?),
                )
            } else {
                (None, None, None)
            };

            let mut score_grad = alloc::vec![0.0; batch.len()];
            let mut objective = 0.0;
            let clean = match config.batching {
                Batching::Pooled => {
                    if let Some((g, value)) = ranking_gradient(config, &batch)? {
                        score_grad = g;
                        objective = value;
                    }
                    is_perfect(&batch)?
                }
                Batching::PerImage => {
                    let mut counted = 0usize;
                    let mut clean = true;
                    for &image in chunk {
                        let local: Vec<usize> = (0..batch.len())
                            .filter(|&k| batch.image_ids()[k] == image)
                            .collect();
                        let part = batch.image(image);
                        clean &= is_perfect(&part)?;
                        if let Some((g, value)) = ranking_gradient(config, &part)? {
                            for (&k, gv) in local.iter().zip(g) {
                                score_grad[k] += gv;
                            }
                            objective += value;
                            counted += 1;
                        }
                    }
                    if counted > 0 {
                        let c = counted as f64;
                        score_grad.iter_mut().for_each(|v| *v /= c);
                        objective /= c;
                    }
                    clean
                }
            };
            if !objective.is_finite() {
                return Err(Error::DivergenceDetected { step });
            }

            let grad = model.backward(&sub.features, &score_grad)?;
            let previous = params.clone();
            for ((p, v), g) in params.iter_mut().zip(velocity.iter_mut()).zip(&grad) {
                *v = config.momentum * *v - config.learning_rate * (g + config.weight_decay * *p);
                *p += *v;
            }
            if params.iter().any(|p| !p.is_finite()) {
                return Err(Error::DivergenceDetected { step });
            }
            model.set_params(&params)?;

            records.push(StepRecord {
                step,
                ap_loss: ap,
                exact_ap: exact,
                interp_ap: interp,
                objective,
                grad_norm: norm(&grad),
                update_norm: libm::sqrt(sq_dist(&params, &previous)),
            });

            if clean {
                let start = *clean_since.get_or_insert(step);
                if converged_at.is_none() && step + 1 - start >= steps_per_epoch {
                    converged_at = Some(start);
                }
            } else {
                clean_since = None;
            }
            step += 1;
            if converged_at.is_some() && config.stop_at_convergence {
                break 'outer;
            }
        }
    }

    Ok(TrainHistory {
        records,
        converged_at,
        steps_per_epoch,
        model,
    })
}

/// Oracle metrics of `model` on all samples pooled, ties resolved pessimistically.
pub fn evaluate(model: &ScorerModel, data: &Dataset) -> Result<Metrics> {
    if data.num_positives() == 0 {
        return Err(Error::NoPositives);
    }
    let batch = data.ranking(model.forward(&data.features)?)?;
    metrics(&batch)
}

/// [`evaluate`] restricted to each image that has a positive, in ascending image order.
pub fn evaluate_per_image(model: &ScorerModel, data: &Dataset) -> Result<Vec<(u32, Metrics)>> {
    let batch = data.ranking(model.forward(&data.features)?)?;
    let mut out = Vec::new();
    for image in data.images() {
        let part = batch.image(image);
        if part.num_positives() > 0 {
            out.push((image, metrics(&part)?));
        }
    }
    Ok(out)
}

fn metrics(batch: &RankingBatch) -> Result<Metrics> {
    let exact_ap = exact_ap_oracle(batch, TieBreak::Pessimistic)?;
    let interp_ap = interpolated_ap_oracle(batch, TieBreak::Pessimistic)?;
    let auc = if batch.num_negatives() == 0 {
        1.0
    } else {
        auc_oracle(batch, TieBreak::Pessimistic)?
    };
    Ok(Metrics {
        exact_ap,
        interp_ap,
        auc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{perceptron_step, FeatureSet};
    use crate::ranking::Label;
    use crate::synth::{generate, SynthKind, SynthSpec};

    fn separable(seed: u64) -> Dataset {
        generate(&SynthSpec {
            seed,
            ..SynthSpec::default()
        })
        .unwrap()
        .data
    }

    #[test]
    fn rejects_bad_configs() {
        let data = separable(0);
        for config in [
            TrainConfig {
                learning_rate: 0.0,
                ..TrainConfig::default()
            },
            TrainConfig {
                momentum: 1.0,
                ..TrainConfig::default()
            },
            TrainConfig {
                batch_size: 0,
                ..TrainConfig::default()
            },
            TrainConfig {
                delta: -1.0,
                ..TrainConfig::default()
            },
        ] {
            assert!(train(&config, &data).is_err());
        }
    }

    #[test]
    fn no_positives_is_an_error() {
        let mut data = separable(0);
        data.labels.iter_mut().for_each(|l| *l = Label::Negative);
        assert_eq!(
            train(&TrainConfig::default(), &data),
            Err(Error::NoPositives)
        );
        let model = ScorerModel::Linear(LinearScorer::zeros(data.dim()));
        assert_eq!(evaluate(&model, &data), Err(Error::NoPositives));
    }

    #[test]
    fn history_is_deterministic() {
        let data = separable(4);
        let config = TrainConfig {
            epochs: 30,
            seed: 8,
            ..TrainConfig::default()
        };
        let a = train(&config, &data).unwrap();
        let b = train(&config, &data).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.records.len(), 30);
        assert!(a.records.windows(2).all(|w| w[1].step == w[0].step + 1));
    }

    #[test]
    fn ap_loss_matches_exact_ap_in_history() {
        let data = separable(2);
        let h = train(
            &TrainConfig {
                epochs: 40,
                ..TrainConfig::default()
            },
            &data,
        )
        .unwrap();
        for r in &h.records {
            assert!((r.ap_loss.unwrap() - (1.0 - r.exact_ap.unwrap())).abs() < 1e-12);
        }
    }

    #[test]
    fn unit_perceptron_config_reproduces_perceptron_steps() {
        let data = separable(6);
        let config = TrainConfig {
            loss_kind: LossKind::PerceptronA1,
            learning_rate: 1.0,
            momentum: 0.0,
            weight_decay: 0.0,
            max_steps: Some(1),
            ..TrainConfig::default()
        };
        let batch = data.ranking(alloc::vec![0.0; data.len()]).unwrap();
        let mut expected = ScorerModel::Linear(LinearScorer::zeros(data.dim()));
        for steps in 1..=15 {
            let h = train(
                &TrainConfig {
                    max_steps: Some(steps),
                    ..config.clone()
                },
                &data,
            )
            .unwrap();
            expected =
                perceptron_step(&expected, &batch, &data.features, StepKind::Heaviside).unwrap();
            let (got, want) = (h.model.params(), expected.params());
            for (g, w) in got.iter().zip(&want) {
                assert!(
                    (g - w).abs() <= 1e-12 * (1.0 + w.abs()),
                    "step {steps}: {g} vs {w}"
                );
            }
        }
    }

    #[test]
    fn perceptron_converges_and_stops() {
        let h = train(
            &TrainConfig {
                loss_kind: LossKind::PerceptronA1,
                learning_rate: 1.0,
                momentum: 0.0,
                weight_decay: 0.0,
                epochs: 10_000,
                stop_at_convergence: true,
                ..TrainConfig::default()
            },
            &separable(1),
        )
        .unwrap();
        let at = h.converged_at.expect("converged");
        assert!(h.stopped_updating());
        assert_eq!(h.records[at].exact_ap, Some(1.0));
        assert_eq!(h.records.last().unwrap().step, at);
    }

    #[test]
    fn single_image_batching_modes_agree() {
        let data = separable(3);
        let pooled = TrainConfig {
            epochs: 25,
            ..TrainConfig::default()
        };
        let per_image = TrainConfig {
            batching: Batching::PerImage,
            ..pooled.clone()
        };
        assert_eq!(
            train(&pooled, &data).unwrap(),
            train(&per_image, &data).unwrap()
        );
    }

    #[test]
    fn mlp_and_all_losses_run() {
        let data = generate(&SynthSpec {
            kind: SynthKind::Inseparable,
            noise: 0.3,
            n_images: 3,
            n_pos: 3,
            n_neg: 6,
            ..SynthSpec::default()
        })
        .unwrap()
        .data;
        for loss_kind in [
            LossKind::ApErrorDriven,
            LossKind::ApMargin,
            LossKind::Auc,
            LossKind::SmoothAp,
            LossKind::PerceptronA1,
        ] {
            for model in [ModelKind::Linear, ModelKind::Mlp { hidden: 4 }] {
                let h = train(
                    &TrainConfig {
                        loss_kind,
                        model,
                        batch_size: 2,
                        epochs: 5,
                        ..TrainConfig::default()
                    },
                    &data,
                )
                .unwrap();
                assert_eq!(h.steps_per_epoch, 2);
                assert_eq!(h.records.len(), 10);
            }
        }
    }

    #[test]
    fn evaluate_dip_instance() {
        let features = FeatureSet::from_rows(&[
            alloc::vec![10.0],
            alloc::vec![9.0],
            alloc::vec![8.0],
            alloc::vec![7.0],
            alloc::vec![6.0],
        ])
        .unwrap();
        let labels = [0, 1, 1, 0, 1]
            .map(|t| Label::from_ternary(t).unwrap())
            .to_vec();
        let data = Dataset::new(features, labels, alloc::vec![0; 5]).unwrap();
        let model = ScorerModel::Linear(LinearScorer {
            theta: alloc::vec![1.0],
        });
        let m = evaluate(&model, &data).unwrap();
        assert!((m.exact_ap - 53.0 / 90.0).abs() < 1e-15);
        assert!((m.interp_ap - 29.0 / 45.0).abs() < 1e-15);
        assert!((m.auc - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn parse_names() {
        assert_eq!("smooth-ap".parse::<LossKind>().unwrap(), LossKind::SmoothAp);
        assert_eq!("per-image".parse::<Batching>().unwrap(), Batching::PerImage);
        assert!("sgd".parse::<LossKind>().is_err());
    }
}
