use aploss_core::dataset::Dataset;
use aploss_core::models::{LinearScorer, ScorerModel};
use aploss_core::ranking::{exact_ap_oracle, Label, TieBreak};
use aploss_core::synth::{generate, Certificate, SynthKind, SynthSpec};
use aploss_core::trainer::experiments::{
    a3_bound_experiment, bound_inseparable_setup, bound_separable_setup, counterexample_experiment,
    counterexample_setup, BoundConfig,
};
use aploss_core::trainer::{evaluate, train, Batching, LossKind, ModelKind, TrainConfig};
use proptest::prelude::*;

fn kinds() -> impl Strategy<Value = SynthKind> {
    prop_oneof![
        Just(SynthKind::Separable),
        Just(SynthKind::Inseparable),
        Just(SynthKind::A2Counterexample),
        Just(SynthKind::MultiImage),
    ]
}

fn specs() -> impl Strategy<Value = SynthSpec> {
    (
        kinds(),
        1usize..8,
        1usize..8,
        2usize..6,
        0.01..2.0f64,
        0.0..1.0f64,
        2usize..4,
        any::<u64>(),
    )
        .prop_map(
            |(kind, n_pos, n_neg, dim, margin, noise, n_images, seed)| SynthSpec {
                kind,
                n_pos,
                n_neg,
                dim,
                margin,
                noise,
                n_images,
                seed,
            },
        )
}

fn best_ap_over_angles(data: &Dataset, angles: usize) -> f64 {
    (0..angles)
        .map(|k| {
            let phi = std::f64::consts::TAU * k as f64 / angles as f64;
            let model = ScorerModel::Linear(LinearScorer {
                theta: vec![phi.cos(), phi.sin()],
            });
            let batch = data
                .ranking(model.forward(&data.features).unwrap())
                .unwrap();
            exact_ap_oracle(&batch, TieBreak::Pessimistic).unwrap()
        })
        .fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn generation_is_a_pure_function_of_the_spec(spec in specs()) {
        prop_assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
    }

    #[test]
    fn certificates_hold_when_present(spec in specs()) {
        let g = generate(&spec).unwrap();
        match g.certificate {
            Some(cert) => prop_assert!(cert.holds(&g.data)),
            None => prop_assert_eq!(spec.kind, SynthKind::Inseparable),
        }
        prop_assert!(g.data.num_positives() >= 1);
    }

    #[test]
    fn planted_duplicate_defeats_every_direction(seed in any::<u64>(), noise in 0.0..1.0f64) {
        let g = generate(&SynthSpec {
            kind: SynthKind::Inseparable,
            n_pos: 4,
            n_neg: 4,
            dim: 2,
            noise,
            seed,
            ..SynthSpec::default()
        })
        .unwrap();
        prop_assert!(best_ap_over_angles(&g.data, 720) < 1.0);
    }

    #[test]
    fn training_is_deterministic(seed in any::<u64>(), loss in 0usize..5, mlp in any::<bool>(), per_image in any::<bool>()) {
        let data = generate(&SynthSpec {
            kind: SynthKind::Inseparable,
            n_pos: 3,
            n_neg: 5,
            dim: 3,
            noise: 0.4,
            n_images: 3,
            seed,
        ..SynthSpec::default()
        })
        .unwrap()
        .data;
        let loss_kind = [
            LossKind::ApErrorDriven,
            LossKind::ApMargin,
            LossKind::Auc,
            LossKind::SmoothAp,
            LossKind::PerceptronA1,
        ][loss];
        let config = TrainConfig {
            loss_kind,
            model: if mlp { ModelKind::Mlp { hidden: 3 } } else { ModelKind::Linear },
            batching: if per_image { Batching::PerImage } else { Batching::Pooled },
            batch_size: 2,
            epochs: 6,
            seed,
            ..TrainConfig::default()
        };
        prop_assert_eq!(train(&config, &data).unwrap(), train(&config, &data).unwrap());
    }
}

#[test]
fn separable_data_passes_the_certificate_check_exactly() {
    for seed in 0..50 {
        let spec = SynthSpec {
            seed,
            ..SynthSpec::default()
        };
        let g = generate(&spec).unwrap();
        let cert = g.certificate.unwrap();
        assert!(cert.epsilon > 0.0);
        assert_eq!(cert.min_gap(&g.data), cert.epsilon);
    }
}

#[test]
fn multi_image_is_separable_per_image_and_pooled() {
    let g = generate(&SynthSpec {
        kind: SynthKind::MultiImage,
        n_images: 3,
        dim: 2,
        ..SynthSpec::default()
    })
    .unwrap();
    let per_image = Certificate {
        theta: vec![1.0, 1.0],
        epsilon: 2.0,
    };
    assert!(per_image.holds(&g.data));
    let pooled = ScorerModel::Linear(LinearScorer {
        theta: vec![1.0, 0.0],
    });
    assert_eq!(evaluate(&pooled, &g.data).unwrap().exact_ap, 1.0);
    let shifted = ScorerModel::Linear(LinearScorer {
        theta: vec![1.0, 1.0],
    });
    assert!(evaluate(&shifted, &g.data).unwrap().exact_ap < 1.0);
}

#[test]
fn random_scores_give_chance_auc() {
    let g = generate(&SynthSpec {
        kind: SynthKind::Inseparable,
        n_pos: 1000,
        n_neg: 1000,
        dim: 4,
        noise: 0.0,
        seed: 3,
        ..SynthSpec::default()
    })
    .unwrap();
    // Relabel with a pattern unrelated to the features.
    let mut data = g.data;
    for (k, l) in data.labels.iter_mut().enumerate() {
        *l = if (k * 7919) % 13 < 6 {
            Label::Positive
        } else {
            Label::Negative
        };
    }
    let model = ScorerModel::Linear(LinearScorer {
        theta: vec![0.3, -0.2, 0.9, 0.1],
    });
    let auc = evaluate(&model, &data).unwrap().auc;
    assert!((auc - 0.5).abs() < 0.05, "auc {auc}");
}

#[test]
fn smooth_descent_stalls_while_error_driven_training_succeeds() {
    let (smooth, driven) = counterexample_setup(20_000);
    let report = counterexample_experiment(&smooth, &driven).unwrap();
    assert!(
        (report.smooth_objective - 1.0 / 6.0).abs() <= 0.02,
        "{}",
        report.smooth_objective
    );
    assert!(report.smooth_exact_ap < 1.0);
    assert_eq!(report.error_driven_exact_ap, 1.0);
}

#[test]
fn bound_holds_on_both_instances() {
    for seed in 0..3 {
        for setup in [bound_separable_setup, bound_inseparable_setup] {
            let (data, u) = setup(seed, 1.0).unwrap();
            let report = a3_bound_experiment(&BoundConfig::default(), &data, &u).unwrap();
            for c in &report.checkpoints {
                assert!(c.average_ap_loss <= c.tightest());
            }
        }
    }
}
