//! One function per subcommand: defaults, then the run itself.

use std::fs::File;
use std::thread;

use anyhow::{bail, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use aploss_core::baselines::{
    cross_entropy_grad, hinge_consistency_grad, hinge_subgradient, softmax_consistency_grad,
};
use aploss_core::dataset::Dataset;
use aploss_core::synth::{generate, SynthKind, SynthSpec};
use aploss_core::trainer::experiments::{
    a3_bound_experiment, bound_inseparable_setup, bound_separable_setup, convergence_experiment,
    convergence_setup, counterexample_experiment, counterexample_setup, score_shift_setup,
    score_shift_with, BoundConfig, ConvergenceReport,
};
use aploss_core::trainer::{evaluate, train, LossKind, TrainConfig};
use aploss_core::Error;

use crate::config::{join, put_synth, put_train, synth_spec, train_config, Settings};
use crate::output::{read_dataset, Report};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Convergence,
    Counterexample,
    Bound,
    Consistency,
    Scoreshift,
    Losscmp,
    Curves,
    GenData,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Convergence => "convergence",
            Experiment::Counterexample => "counterexample",
            Experiment::Bound => "bound",
            Experiment::Consistency => "consistency",
            Experiment::Scoreshift => "scoreshift",
            Experiment::Losscmp => "losscmp",
            Experiment::Curves => "curves",
            Experiment::GenData => "gen-data",
        }
    }

    pub fn defaults(self) -> Settings {
        let mut s = Settings::default();
        match self {
            Experiment::Convergence => {
                let (config, spec) = convergence_setup(0, 100_000);
                put_train(&mut s, &config);
                put_synth(&mut s, &spec);
                s.set("seeds", 50);
            }
            Experiment::Counterexample => {
                let (smooth, driven) = counterexample_setup(20_000);
                put_train(&mut s, &smooth);
                s.set("compare_loss", driven.loss_kind.as_str());
            }
            Experiment::Bound => {
                let b = BoundConfig::default();
                s.set("seed", 0);
                s.set("delta", b.delta);
                s.set("horizons", join(&b.horizons));
                s.set("instance", "both");
            }
            Experiment::Consistency => {
                s.set("seed", 0);
                s.set("samples", 1000);
            }
            Experiment::Scoreshift => {
                let (config, spec) = score_shift_setup(0);
                put_train(&mut s, &config);
                put_synth(&mut s, &spec);
            }
            Experiment::Losscmp => {
                put_train(
                    &mut s,
                    &TrainConfig {
                        learning_rate: 0.05,
                        batch_size: 2,
                        epochs: 40,
                        ..TrainConfig::default()
                    },
                );
                put_synth(
                    &mut s,
                    &SynthSpec {
                        kind: SynthKind::Inseparable,
                        n_pos: 5,
                        n_neg: 20,
                        dim: 5,
                        margin: 0.2,
                        noise: 1.5,
                        n_images: 10,
                        seed: 0,
                    },
                );
                s.set("losses", "ap_error_driven,ap_margin,auc,smooth_ap");
                s.set("train_images", 8);
            }
            Experiment::Curves => {
                put_train(
                    &mut s,
                    &TrainConfig {
                        epochs: 100,
                        ..TrainConfig::default()
                    },
                );
                put_synth(
                    &mut s,
                    &SynthSpec {
                        n_images: 4,
                        n_pos: 5,
                        n_neg: 20,
                        ..SynthSpec::default()
                    },
                );
                s.set("data", "none");
            }
            Experiment::GenData => put_synth(&mut s, &SynthSpec::default()),
        }
        s
    }

    pub fn run(self, s: &Settings) -> Result<Report> {
        let mut report = Report::new(self.name());
        report.config = s.as_map().clone();
        match self {
            Experiment::Convergence => convergence(s, &mut report)?,
            Experiment::Counterexample => counterexample(s, &mut report)?,
            Experiment::Bound => bound(s, &mut report)?,
            Experiment::Consistency => consistency(s, &mut report)?,
            Experiment::Scoreshift => scoreshift(s, &mut report)?,
            Experiment::Losscmp => losscmp(s, &mut report)?,
            Experiment::Curves => curves(s, &mut report)?,
            Experiment::GenData => gen_data(s, &mut report)?,
        }
        Ok(report)
    }
}

fn convergence(s: &Settings, report: &mut Report) -> Result<()> {
    let base = train_config(s)?;
    let spec = synth_spec(s)?;
    let seeds: u64 = s.get("seeds")?;
    if seeds == 0 {
        bail!("seeds must be at least 1");
    }
    let run_seed = |k: u64| -> Result<ConvergenceReport> {
        let seed = base.seed.wrapping_add(k);
        let config = TrainConfig {
            seed,
            ..base.clone()
        };
        let spec = SynthSpec {
            seed,
            ..spec.clone()
        };
        Ok(convergence_experiment(&config, &spec)?)
    };
    // Seeds are independent; run them on all cores and merge in seed order.
    let workers = thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(seeds as usize);
    let results: Vec<Result<ConvergenceReport>> = thread::scope(|scope| {
        let handles: Vec<_> = (0..workers as u64)
            .map(|w| {
                let run_seed = &run_seed;
                scope.spawn(move || {
                    (w..seeds)
                        .step_by(workers)
                        .map(|k| (k, run_seed(k)))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        let mut all: Vec<(u64, Result<ConvergenceReport>)> = handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect();
        all.sort_by_key(|(k, _)| *k);
        all.into_iter().map(|(_, r)| r).collect()
    });

    let mut steps = Vec::new();
    let mut failed = Vec::new();
    for (k, result) in results.into_iter().enumerate() {
        let seed = base.seed.wrapping_add(k as u64);
        let r = result?;
        if k == 0 {
            report.history("seed0", r.history.records.clone());
        }
        if r.succeeded() {
            steps.push(json!({"seed": seed, "converged_at_step": r.history.converged_at}));
        } else {
            steps.push(json!({"seed": seed, "converged_at_step": null}));
            failed.push(seed);
        }
    }
    let converged = seeds as usize - failed.len();
    report.note("seeds", seeds);
    report.note("converged", converged);
    report.note("runs", steps);
    report.check(
        "all_seeds_converge",
        "unit-step perceptron-style updates on separable data reach exact AP 1 and stop changing the weights within the step budget",
        failed.is_empty(),
        format!("{converged}/{seeds} converged; failing seeds {failed:?}"),
    );
    Ok(())
}

fn counterexample(s: &Settings, report: &mut Report) -> Result<()> {
    let smooth = train_config(s)?;
    let driven = TrainConfig {
        loss_kind: s.get::<LossKind>("compare_loss")?,
        ..smooth.clone()
    };
    let r = counterexample_experiment(&smooth, &driven)?;
    let target = 1.0 / 6.0;
    let [d1, d2] = r.initial_slope;
    report.note("smooth_final_objective", r.smooth_objective);
    report.note("smooth_final_exact_ap", r.smooth_exact_ap);
    report.note("compare_final_exact_ap", r.error_driven_exact_ap);
    report.note(
        "compare_converged_at_step",
        json!(r.error_driven.converged_at),
    );
    report.note("slope_theta1", d1);
    report.note("slope_theta2", d2);
    report.check(
        "smooth_objective_plateaus",
        "gradient descent on the sigmoid-smoothed AP-loss stays within 0.02 of 1/6 on the three-sample instance",
        (r.smooth_objective - target).abs() <= 0.02,
        format!("final objective {}", r.smooth_objective),
    );
    report.check(
        "error_driven_reaches_perfect_ap",
        "error-driven training on the same samples reaches exact AP 1",
        r.error_driven_exact_ap == 1.0,
        format!("final exact AP {}", r.error_driven_exact_ap),
    );
    report.check(
        "slope_ordering",
        "at the start point the smoothed objective decreases faster along theta1 than along theta2, and along both",
        d1 < d2 && d2 < 0.0,
        format!("dF/dtheta1 = {d1:e}, dF/dtheta2 = {d2:e}"),
    );
    report.history("smooth", r.smooth.records);
    report.history("compare", r.error_driven.records);
    Ok(())
}

fn bound(s: &Settings, report: &mut Report) -> Result<()> {
    let seed: u64 = s.get("seed")?;
    let config = BoundConfig {
        delta: s.get("delta")?,
        horizons: s.list("horizons")?.unwrap_or_default(),
        init_theta: None,
    };
    let instances: &[&str] = match s.str("instance")? {
        "both" => &["separable", "inseparable"],
        "separable" => &["separable"],
        "inseparable" => &["inseparable"],
        other => bail!("key `instance`: expected separable, inseparable or both, got `{other}`"),
    };
    for &name in instances {
        let (data, u) = if name == "separable" {
            bound_separable_setup(seed, config.delta)?
        } else {
            bound_inseparable_setup(seed, config.delta)?
        };
        match a3_bound_experiment(&config, &data, &u) {
            Ok(r) => {
                let rows: Vec<_> = r
                    .checkpoints
                    .iter()
                    .map(|c| {
                        json!({
                            "horizon": c.horizon,
                            "average_ap_loss": c.average_ap_loss,
                            "recall_weighted": c.recall_weighted,
                            "saturating": c.saturating,
                            "accumulated": c.accumulated,
                        })
                    })
                    .collect();
                report.note(
                    name,
                    json!({
                        "operator_norm": r.operator_norm,
                        "step_size": r.step_size,
                        "z_u": r.z_u,
                        "reference_u": u,
                        "init_distance_sq": r.init_distance_sq,
                        "checkpoints": rows,
                    }),
                );
                for c in &r.checkpoints {
                    report.check(
                        &format!("{name}_T{}", c.horizon),
                        "average AP-loss of the margin update with step size delta/R^2 stays below the smaller offline bound",
                        c.average_ap_loss <= c.tightest(),
                        format!("average {} vs bound {}", c.average_ap_loss, c.tightest()),
                    );
                }
                report.history(name, r.records);
            }
            Err(Error::BoundViolated {
                horizon,
                average,
                bound,
            }) => report.check(
                &format!("{name}_T{horizon}"),
                "average AP-loss of the margin update with step size delta/R^2 stays below the smaller offline bound",
                false,
                format!("average {average} exceeds bound {bound}"),
            ),
            Err(e) => return Err(e.into()),
        }
    }
    Ok(())
}

fn consistency(s: &Settings, report: &mut Report) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(s.get("seed")?);
    let samples: usize = s.get("samples")?;
    let mut softmax_dev: f64 = 0.0;
    let mut hinge_dev: f64 = 0.0;
    for _ in 0..samples {
        let classes = rng.random_range(2..=12);
        let logits: Vec<f64> = (0..classes)
            .map(|_| rng.random_range(-20.0..20.0))
            .collect();
        let class = rng.random_range(0..classes);
        let update = softmax_consistency_grad(&logits, class)?;
        let grad = cross_entropy_grad(&logits, class)?;
        for (u, g) in update.iter().zip(&grad) {
            softmax_dev = softmax_dev.max((u - g).abs());
        }
        let x: f64 = rng.random_range(-5.0..5.0);
        let c = rng.random_range(0..2);
        let (u, g) = (hinge_consistency_grad(x, c)?, hinge_subgradient(x, c)?);
        hinge_dev = hinge_dev.max((u[0] - g[0]).abs()).max((u[1] - g[1]).abs());
    }
    report.note("samples", samples);
    report.note("max_softmax_deviation", softmax_dev);
    report.note("max_hinge_deviation", hinge_dev);
    report.check(
        "softmax_matches_cross_entropy",
        "the error-driven update with a softmax activation equals the cross-entropy gradient",
        softmax_dev <= 1e-12,
        format!("max deviation {softmax_dev:e} over {samples} inputs"),
    );
    report.check(
        "step_matches_hinge",
        "the error-driven update with a loss-augmented step equals a hinge-loss subgradient",
        hinge_dev <= 1e-12,
        format!("max deviation {hinge_dev:e} over {samples} inputs"),
    );
    Ok(())
}

fn scoreshift(s: &Settings, report: &mut Report) -> Result<()> {
    let config = train_config(s)?;
    let spec = synth_spec(s)?;
    let r = score_shift_with(&config, &spec)?;
    let per_image_aps: Vec<f64> = r
        .per_image
        .per_image
        .iter()
        .map(|(_, m)| m.exact_ap)
        .collect();
    report.note("pooled_combined_ap", r.pooled.combined.exact_ap);
    report.note("per_image_combined_ap", r.per_image.combined.exact_ap);
    report.note("per_image_image_aps", per_image_aps.clone());
    report.note(
        "per_image_converged_at_step",
        json!(r.per_image.history.converged_at),
    );
    report.note(
        "pooled_converged_at_step",
        json!(r.pooled.history.converged_at),
    );
    report.check(
        "pooled_ranking_is_perfect",
        "pooled minibatches reach combined exact AP 1 on the shifted two-image data",
        r.pooled.combined.exact_ap == 1.0,
        format!("combined AP {}", r.pooled.combined.exact_ap),
    );
    report.check(
        "per_image_rankings_are_perfect",
        "per-image training ranks every image perfectly",
        !per_image_aps.is_empty() && per_image_aps.iter().all(|&a| a == 1.0),
        format!("per-image APs {per_image_aps:?}"),
    );
    report.check(
        "per_image_combined_is_not",
        "per-image training leaves the combined ranking imperfect",
        r.per_image.combined.exact_ap < 1.0,
        format!("combined AP {}", r.per_image.combined.exact_ap),
    );
    report.history("pooled", r.pooled.history.records);
    report.history("per_image", r.per_image.history.records);
    Ok(())
}

fn losscmp(s: &Settings, report: &mut Report) -> Result<()> {
    let base = train_config(s)?;
    let data = generate(&synth_spec(s)?)?.data;
    let train_images: u32 = s.get("train_images")?;
    let images = data.images();
    let (fit, held): (Vec<u32>, Vec<u32>) = images.iter().partition(|&&m| m < train_images);
    if fit.is_empty() || held.is_empty() {
        bail!("train_images must leave at least one image on each side");
    }
    let fit = data.subset(&data.indices_in(&fit));
    let held = data.subset(&data.indices_in(&held));
    let losses: Vec<LossKind> = s.list("losses")?.unwrap_or_default();
    let mut rows = Vec::new();
    for loss_kind in losses {
        let config = TrainConfig {
            loss_kind,
            ..base.clone()
        };
        let history = train(&config, &fit)?;
        let on_fit = evaluate(&history.model, &fit)?;
        let on_held = evaluate(&history.model, &held)?;
        rows.push(json!({
            "loss_kind": loss_kind.as_str(),
            "train_exact_ap": on_fit.exact_ap,
            "train_auc": on_fit.auc,
            "held_exact_ap": on_held.exact_ap,
            "held_interp_ap": on_held.interp_ap,
            "held_auc": on_held.auc,
        }));
        let finite = [on_fit.exact_ap, on_held.exact_ap, on_held.auc]
            .iter()
            .all(|v| v.is_finite());
        report.check(
            &format!("{}_trains", loss_kind.as_str()),
            "training finishes with finite metrics",
            finite,
            format!("held-out exact AP {}", on_held.exact_ap),
        );
        report.history(loss_kind.as_str(), history.records);
    }
    report.note("results", rows);
    Ok(())
}

fn curves(s: &Settings, report: &mut Report) -> Result<()> {
    let config = train_config(s)?;
    let data: Dataset = match s.str("data")? {
        "none" => generate(&synth_spec(s)?)?.data,
        path => read_dataset(File::open(path).with_context(|| format!("opening {path}"))?)?,
    };
    let history = train(&config, &data)?;
    let m = evaluate(&history.model, &data)?;
    report.note("final_exact_ap", m.exact_ap);
    report.note("final_interp_ap", m.interp_ap);
    report.note("final_auc", m.auc);
    report.note("converged_at_step", json!(history.converged_at));
    report.note("final_params", history.model.params());
    report.check(
        "finite_training",
        "training finishes with finite metrics",
        m.exact_ap.is_finite(),
        format!("final exact AP {}", m.exact_ap),
    );
    report.history("curve", history.records);
    Ok(())
}

fn gen_data(s: &Settings, report: &mut Report) -> Result<()> {
    let generated = generate(&synth_spec(s)?)?;
    report.note("samples", generated.data.len());
    report.note("positives", generated.data.num_positives());
    report.note("direction", generated.direction.clone());
    if let Some(cert) = &generated.certificate {
        report.note(
            "certificate",
            json!({"theta": cert.theta, "epsilon": cert.epsilon}),
        );
        report.check(
            "certificate_holds",
            "every positive beats every negative of its image by at least epsilon along theta",
            cert.holds(&generated.data),
            format!(
                "min gap {} vs epsilon {}",
                cert.min_gap(&generated.data),
                cert.epsilon
            ),
        );
    }
    report.dataset = Some(generated.data);
    Ok(())
}
