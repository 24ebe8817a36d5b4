mod common;

use aploss_core::baselines::{
    a2_objective, cross_entropy_grad, cross_entropy_loss, hinge_consistency_grad,
    hinge_subgradient, smooth_ap_loss, smooth_ap_value_grad, SmoothApConfig,
};
use aploss_core::models::{FeatureSet, LinearScorer, ScorerModel};
use aploss_core::ranking::{ap_loss, Label, RankingBatch, StepKind};
use aploss_core::trainer::experiments::a2_slope;
use common::{close, real_batch, tie_free_batch};
use proptest::prelude::*;

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// `‖a - b‖∞ / ‖a‖∞`, with a floor on the denominator for vanishing gradients.
fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, b)| a - b).collect();
    max_abs(&diff) / max_abs(analytic).max(1e-8)
}

fn configs() -> impl Strategy<Value = SmoothApConfig> {
    (0.3..3.0f64, any::<bool>()).prop_map(|(temperature, log_space)| SmoothApConfig {
        temperature,
        log_space,
        ..SmoothApConfig::default()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn smooth_score_gradient_matches_central_differences(batch in real_batch(8, 8, 2), config in configs()) {
        let (_, g) = smooth_ap_value_grad(&batch, &config).unwrap();
        let h = 1e-5;
        let numeric: Vec<f64> = (0..batch.len())
            .map(|k| {
                let eval = |d: f64| {
                    let mut s = batch.scores().to_vec();
                    s[k] += d;
                    smooth_ap_value_grad(&batch.with_scores(s).unwrap(), &config).unwrap().0
                };
                (eval(h) - eval(-h)) / (2.0 * h)
            })
            .collect();
        let err = relative_error(&g.values, &numeric);
        prop_assert!(err <= 1e-5, "relative error {err}");
    }

    #[test]
    fn smooth_weight_gradient_matches_central_differences(
        rows in prop::collection::vec(prop::collection::vec(-1.5..1.5f64, 4), 6..14),
        theta in prop::collection::vec(-1.0..1.0f64, 4),
        config in configs(),
    ) {
        let n = rows.len();
        let labels: Vec<Label> = (0..n)
            .map(|i| match i % 3 {
                0 => Label::Positive,
                _ => Label::Negative,
            })
            .collect();
        let features = FeatureSet::from_rows(&rows).unwrap();
        let objective = |t: &[f64]| {
            let model = ScorerModel::Linear(LinearScorer { theta: t.to_vec() });
            let batch = RankingBatch::new(model.forward(&features).unwrap(), labels.clone()).unwrap();
            smooth_ap_value_grad(&batch, &config).unwrap()
        };
        let model = ScorerModel::Linear(LinearScorer { theta: theta.clone() });
        let (_, g) = objective(&theta);
        let analytic = model.backward(&features, &g.values).unwrap();
        let h = 1e-5;
        let numeric: Vec<f64> = (0..theta.len())
            .map(|d| {
                let (mut up, mut down) = (theta.clone(), theta.clone());
                up[d] += h;
                down[d] -= h;
                (objective(&up).0 - objective(&down).0) / (2.0 * h)
            })
            .collect();
        let err = relative_error(&analytic, &numeric);
        prop_assert!(err <= 1e-5, "relative error {err}");
    }

    #[test]
    fn sharp_sigmoid_recovers_the_step_loss(batch in tie_free_batch(10, 10, 2)) {
        // Scores in the tie-free strategy are at least ~0.1 apart.
        let exact = ap_loss(&batch, StepKind::Heaviside, false).unwrap();
        let sharp = smooth_ap_loss(&batch, 1e3).unwrap();
        prop_assert!(close(exact, sharp, 1e-6), "{exact} vs {sharp}");
    }

    #[test]
    fn smooth_loss_lies_in_the_unit_interval(batch in real_batch(10, 10, 2), tau in 0.1..10.0f64) {
        let f = smooth_ap_loss(&batch, tau).unwrap();
        prop_assert!((0.0..1.0).contains(&f));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1024))]

    #[test]
    fn softmax_update_is_the_cross_entropy_gradient(
        logits in prop::collection::vec(-20.0..20.0f64, 2..12),
        pick in any::<prop::sample::Index>(),
    ) {
        let class = pick.index(logits.len());
        let update = aploss_core::baselines::softmax_consistency_grad(&logits, class).unwrap();
        let grad = cross_entropy_grad(&logits, class).unwrap();
        for (u, g) in update.iter().zip(&grad) {
            prop_assert!(close(*u, *g, 1e-12), "{u} vs {g}");
        }
    }

    #[test]
    fn loss_augmented_update_is_the_hinge_subgradient(x in -5.0..5.0f64, class in 0usize..2) {
        let update = hinge_consistency_grad(x, class).unwrap();
        let sub = hinge_subgradient(x, class).unwrap();
        prop_assert!(close(update[0], sub[0], 1e-12) && close(update[1], sub[1], 1e-12));
    }
}

#[test]
fn cross_entropy_gradient_matches_finite_differences() {
    let logits = [0.3, -1.2, 2.0, 0.7];
    let g = cross_entropy_grad(&logits, 2).unwrap();
    let h = 1e-6;
    for k in 0..logits.len() {
        let (mut up, mut down) = (logits, logits);
        up[k] += h;
        down[k] -= h;
        let numeric = (cross_entropy_loss(&up, 2).unwrap() - cross_entropy_loss(&down, 2).unwrap())
            / (2.0 * h);
        assert!(close(numeric, g[k], 1e-8));
    }
}

#[test]
fn hinge_kink_values() {
    assert_eq!(
        hinge_consistency_grad(1.0, 1).unwrap(),
        hinge_subgradient(1.0, 1).unwrap()
    );
    assert_eq!(hinge_consistency_grad(0.5, 1).unwrap(), [0.0, -1.0]);
    assert_eq!(hinge_consistency_grad(-3.0, 0).unwrap(), [0.0, 0.0]);
}

#[test]
fn counterexample_objective_and_slopes() {
    assert!(close(a2_objective([0.0, 0.0]), 0.25, 1e-15));
    assert!(close(a2_objective([60.0, 30.0]), 1.0 / 6.0, 1e-12));
    let [d1, d2] = a2_slope([10.0, 5.0], 1e-2);
    assert!(d1 < d2 && d2 < 0.0, "slopes {d1} {d2}");
}
