#![allow(dead_code)]

use aploss_core::ranking::{Label, RankingBatch};
use proptest::prelude::*;

/// Labels with the given counts, shuffled.
pub fn labels(
    max_pos: usize,
    max_neg: usize,
    max_ignored: usize,
) -> impl Strategy<Value = Vec<Label>> {
    (1..=max_pos, 1..=max_neg, 0..=max_ignored).prop_flat_map(|(p, n, z)| {
        let mut v = vec![Label::Positive; p];
        v.extend(vec![Label::Negative; n]);
        v.extend(vec![Label::Ignored; z]);
        Just(v).prop_shuffle()
    })
}

/// A batch whose scores are pairwise distinct.
pub fn tie_free_batch(
    max_pos: usize,
    max_neg: usize,
    max_ignored: usize,
) -> impl Strategy<Value = RankingBatch> {
    labels(max_pos, max_neg, max_ignored).prop_flat_map(|labels| {
        let n = labels.len();
        (
            Just(labels),
            Just((0..n).collect::<Vec<_>>()).prop_shuffle(),
            prop::collection::vec(0.0..0.9f64, n),
        )
            .prop_map(|(labels, ranks, jitter)| {
                let scores = ranks
                    .iter()
                    .zip(&jitter)
                    .map(|(&r, &j)| r as f64 + j)
                    .collect();
                RankingBatch::new(scores, labels).unwrap()
            })
    })
}

/// A batch whose scores come from a small integer grid, so ties are common.
pub fn tied_batch(
    max_pos: usize,
    max_neg: usize,
    max_ignored: usize,
) -> impl Strategy<Value = RankingBatch> {
    labels(max_pos, max_neg, max_ignored).prop_flat_map(|labels| {
        let n = labels.len();
        (Just(labels), prop::collection::vec(-3i32..=3, n)).prop_map(|(labels, grid)| {
            let scores = grid.iter().map(|&g| g as f64 * 0.5).collect();
            RankingBatch::new(scores, labels).unwrap()
        })
    })
}

/// A batch with continuous scores.
pub fn real_batch(
    max_pos: usize,
    max_neg: usize,
    max_ignored: usize,
) -> impl Strategy<Value = RankingBatch> {
    labels(max_pos, max_neg, max_ignored).prop_flat_map(|labels| {
        let n = labels.len();
        (Just(labels), prop::collection::vec(-3.0..3.0f64, n))
            .prop_map(|(labels, scores)| RankingBatch::new(scores, labels).unwrap())
    })
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}
