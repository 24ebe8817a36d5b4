//! Step activations, AP/AUC primary terms, and sort-based ranking oracles.
//!
//! A [`RankingBatch`] pools scores with ternary labels. Samples labelled
//! [`Label::Ignored`] take no part in any sum. For a positive `i` and a
//! negative `j` the primary term is
//!
//! ```text
//! x_ij = s_j - s_i
//! L_ij = step(x_ij) / (1 + Σ_{k valid, k≠i} step(x_ik))
//! ```
//!
//! so that `1 - Σ_j L_ij` is the precision at positive `i` and the AP-loss is
//! the mean row sum over positives. The oracles in this module compute AP by
//! explicitly sorting the valid samples and never touch `L_ij`.

use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::{Error, Result};

/// Ternary sample label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    /// Not counted in the ranking (`-1`).
    Ignored,
    /// Background (`0`).
    Negative,
    /// Foreground (`1`).
    Positive,
}

impl Label {
    pub fn from_ternary(value: i64) -> Result<Self> {
        match value {
            -1 => Ok(Label::Ignored),
            0 => Ok(Label::Negative),
            1 => Ok(Label::Positive),
            other => Err(Error::InvalidLabel(other)),
        }
    }

    pub fn as_ternary(self) -> i8 {
        match self {
            Label::Ignored => -1,
            Label::Negative => 0,
            Label::Positive => 1,
        }
    }

    pub fn is_valid(self) -> bool {
        self != Label::Ignored
    }
}

/// Scores, labels and image-of-origin tags for one ranking.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingBatch {
    scores: Vec<f64>,
    labels: Vec<Label>,
    image_ids: Vec<u32>,
}

impl RankingBatch {
    /// Builds a batch whose samples all come from image 0.
    pub fn new(scores: Vec<f64>, labels: Vec<Label>) -> Result<Self> {
        let n = scores.len();
        Self::with_images(scores, labels, alloc::vec![0; n])
    }

    pub fn with_images(scores: Vec<f64>, labels: Vec<Label>, image_ids: Vec<u32>) -> Result<Self> {
        if labels.len() != scores.len() {
            return Err(Error::LengthMismatch {
                expected: scores.len(),
                got: labels.len(),
            });
        }
        if image_ids.len() != scores.len() {
            return Err(Error::LengthMismatch {
                expected: scores.len(),
                got: image_ids.len(),
            });
        }
        if let Some(index) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFiniteScore { index });
        }
        Ok(Self {
            scores,
            labels,
            image_ids,
        })
    }

    /// Convenience constructor from `-1/0/1` labels.
    pub fn from_ternary(scores: &[f64], labels: &[i8]) -> Result<Self> {
        let labels = labels
            .iter()
            .map(|&t| Label::from_ternary(t as i64))
            .collect::<Result<Vec<_>>>()?;
        Self::new(scores.to_vec(), labels)
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn image_ids(&self) -> &[u32] {
        &self.image_ids
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Indices of positive samples in index order.
    pub fn positives(&self) -> Vec<usize> {
        self.indices_with(Label::Positive)
    }

    /// Indices of negative samples in index order.
    pub fn negatives(&self) -> Vec<usize> {
        self.indices_with(Label::Negative)
    }

    /// Indices of samples that take part in the ranking.
    pub fn valid(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.labels[i].is_valid())
            .collect()
    }

    pub fn num_positives(&self) -> usize {
        self.labels
            .iter()
            .filter(|&&l| l == Label::Positive)
            .count()
    }

    pub fn num_negatives(&self) -> usize {
        self.labels
            .iter()
            .filter(|&&l| l == Label::Negative)
            .count()
    }

    /// Same samples with new scores.
    pub fn with_scores(&self, scores: Vec<f64>) -> Result<Self> {
        Self::with_images(scores, self.labels.clone(), self.image_ids.clone())
    }

    /// Sub-batch of the samples tagged with `image`.
    pub fn image(&self, image: u32) -> Self {
        let keep: Vec<usize> = (0..self.len())
            .filter(|&i| self.image_ids[i] == image)
            .collect();
        Self {
            scores: keep.iter().map(|&i| self.scores[i]).collect(),
            labels: keep.iter().map(|&i| self.labels[i]).collect(),
            image_ids: keep.iter().map(|&i| self.image_ids[i]).collect(),
        }
    }

    /// Distinct image tags in ascending order.
    pub fn distinct_images(&self) -> Vec<u32> {
        let mut ids = self.image_ids.clone();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    fn indices_with(&self, label: Label) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.labels[i] == label)
            .collect()
    }
}

/// Step activation used inside the primary terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepKind {
    /// `H(x) = 1` for `x >= 0`, else 0.
    Heaviside,
    /// Linear ramp of half-width `delta` around zero.
    Piecewise { delta: f64 },
}

impl StepKind {
    pub fn piecewise(delta: f64) -> Result<Self> {
        let kind = StepKind::Piecewise { delta };
        kind.validate()?;
        Ok(kind)
    }

    pub fn validate(self) -> Result<()> {
        match self {
            StepKind::Heaviside => Ok(()),
            StepKind::Piecewise { delta } if delta > 0.0 && delta.is_finite() => Ok(()),
            StepKind::Piecewise { delta } => Err(Error::InvalidDelta(delta)),
        }
    }
}

/// Evaluates the step activation. Note `H(0) = 1`: a tie counts against the positive.
pub fn step(x: f64, kind: StepKind) -> f64 {
    match kind {
        StepKind::Heaviside => {
            if x >= 0.0 {
                1.0
            } else {
                0.0
            }
        }
        StepKind::Piecewise { delta } => {
            if x < -delta {
                0.0
            } else if x > delta {
                1.0
            } else {
                x / (2.0 * delta) + 0.5
            }
        }
    }
}

/// `x_ij = -(s_i - s_j)`.
pub fn pairwise_difference(scores: &[f64], i: usize, j: usize) -> f64 {
    -(scores[i] - scores[j])
}

/// Antiderivative of the piecewise step, `Q(x) = ∫_{-∞}^x f(v) dv`.
pub fn q_integral(x: f64, delta: f64) -> f64 {
    if x < -delta {
        0.0
    } else if x > delta {
        x
    } else {
        (x + delta) * (x + delta) / (4.0 * delta)
    }
}

/// Per-positive rows of primary terms over the negatives.
///
/// `rows[k][m]` is the term for positive `positives[k]` against negative
/// `negatives[m]`; `denominators[k]` is the shared denominator of row `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimaryTermRows {
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
    pub rows: Vec<Vec<f64>>,
    pub denominators: Vec<f64>,
}

impl PrimaryTermRows {
    /// `Σ_j L_ij` for row `k`, summed in negative-index order.
    pub fn row_sum(&self, k: usize) -> f64 {
        self.rows[k].iter().sum()
    }

    /// `1 - Σ_j L_ij` for row `k`.
    pub fn precision(&self, k: usize) -> f64 {
        1.0 - self.row_sum(k)
    }

    pub fn precisions(&self) -> Vec<f64> {
        (0..self.rows.len()).map(|k| self.precision(k)).collect()
    }

    /// `(1/|P|) Σ_i Σ_j L_ij`.
    pub fn loss(&self) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        let total: f64 = (0..self.rows.len()).map(|k| self.row_sum(k)).sum();
        total / self.rows.len() as f64
    }
}

/// Rows with independent step kinds in the numerator and denominator.
pub(crate) fn pairwise_rows(
    batch: &RankingBatch,
    numerator: StepKind,
    denominator: StepKind,
) -> Result<PrimaryTermRows> {
    numerator.validate()?;
    denominator.validate()?;
    let positives = batch.positives();
    if positives.is_empty() {
        return Err(Error::EmptyPositives);
    }
    let negatives = batch.negatives();
    let valid = batch.valid();
    let scores = batch.scores();

    let mut rows = Vec::with_capacity(positives.len());
    let mut denominators = Vec::with_capacity(positives.len());
    for &i in &positives {
        let mut d = 1.0;
        for &k in &valid {
            if k != i {
                d += step(pairwise_difference(scores, i, k), denominator);
            }
        }
        let row = negatives
            .iter()
            .map(|&j| step(pairwise_difference(scores, i, j), numerator) / d)
            .collect();
        rows.push(row);
        denominators.push(d);
    }
    Ok(PrimaryTermRows {
        positives,
        negatives,
        rows,
        denominators,
    })
}

/// AP-loss primary terms; the same step kind is used in numerator and denominator.
pub fn primary_terms(batch: &RankingBatch, kind: StepKind) -> Result<PrimaryTermRows> {
    pairwise_rows(batch, kind, kind)
}

/// AUC-loss primary terms `L'_ij = step(x_ij) / |N|`.
pub fn auc_primary_terms(batch: &RankingBatch, kind: StepKind) -> Result<PrimaryTermRows> {
    kind.validate()?;
    let positives = batch.positives();
    if positives.is_empty() {
        return Err(Error::EmptyPositives);
    }
    let negatives = batch.negatives();
    if negatives.is_empty() {
        return Err(Error::EmptyNegatives);
    }
    let n = negatives.len() as f64;
    let scores = batch.scores();
    let rows = positives
        .iter()
        .map(|&i| {
            negatives
                .iter()
                .map(|&j| step(pairwise_difference(scores, i, j), kind) / n)
                .collect()
        })
        .collect();
    Ok(PrimaryTermRows {
        denominators: alloc::vec![n; positives.len()],
        positives,
        negatives,
        rows,
    })
}

/// Positions into `rows.positives` ordered by ascending score, ties by sample index.
pub(crate) fn ascending_positive_order(rows: &PrimaryTermRows, scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..rows.positives.len()).collect();
    order.sort_by(|&a, &b| {
        let (ia, ib) = (rows.positives[a], rows.positives[b]);
        scores[ia]
            .partial_cmp(&scores[ib])
            .unwrap_or(Ordering::Equal)
            .then(ia.cmp(&ib))
    });
    order
}

/// Rescales rows so precision is non-decreasing from the lowest-scored
/// positive upwards (interpolated AP).
pub fn interpolate_rows(rows: &mut PrimaryTermRows, scores: &[f64]) {
    let mut best = 0.0_f64;
    for k in ascending_positive_order(rows, scores) {
        let precision = rows.precision(k);
        if precision >= best {
            best = precision;
        } else {
            let factor = (1.0 - best) / (1.0 - precision);
            for v in rows.rows[k].iter_mut() {
                *v *= factor;
            }
        }
    }
}

/// AP-loss `(1/|P|) Σ_i Σ_j L_ij`, optionally after interpolation.
pub fn ap_loss(batch: &RankingBatch, kind: StepKind, interpolated: bool) -> Result<f64> {
    let mut rows = primary_terms(batch, kind)?;
    if interpolated {
        interpolate_rows(&mut rows, batch.scores());
    }
    Ok(rows.loss())
}

/// How the oracles place equal-scored samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TieBreak {
    /// Proper ranking: ties broken by ascending sample index.
    #[default]
    AscendingIndex,
    /// Every sample tied with a positive counts as ranked above it, matching `H(0) = 1`.
    Pessimistic,
}

/// Valid sample indices sorted by descending score, ties by ascending index.
fn sorted_valid(batch: &RankingBatch) -> Vec<usize> {
    let scores = batch.scores();
    let mut order = batch.valid();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

/// `(sample index, rank⁺/rank)` for every positive, in ranked order (best first).
pub fn ranked_precisions(batch: &RankingBatch, tie_break: TieBreak) -> Result<Vec<(usize, f64)>> {
    if batch.num_positives() == 0 {
        return Err(Error::EmptyPositives);
    }
    let order = sorted_valid(batch);
    let scores = batch.scores();
    let labels = batch.labels();
    let mut out = Vec::with_capacity(batch.num_positives());
    match tie_break {
        TieBreak::AscendingIndex => {
            let mut seen_pos = 0usize;
            for (pos, &i) in order.iter().enumerate() {
                if labels[i] == Label::Positive {
                    seen_pos += 1;
                    out.push((i, seen_pos as f64 / (pos + 1) as f64));
                }
            }
        }
        TieBreak::Pessimistic => {
            let mut start = 0usize;
            let mut seen_pos = 0usize;
            while start < order.len() {
                let mut end = start;
                while end < order.len() && scores[order[end]] == scores[order[start]] {
                    end += 1;
                }
                let group = &order[start..end];
                seen_pos += group
                    .iter()
                    .filter(|&&i| labels[i] == Label::Positive)
                    .count();
                for &i in group {
                    if labels[i] == Label::Positive {
                        out.push((i, seen_pos as f64 / end as f64));
                    }
                }
                start = end;
            }
        }
    }
    Ok(out)
}

/// `AP = (1/|P|) Σ_i rank⁺(i)/rank(i)` from an explicit sort.
pub fn exact_ap_oracle(batch: &RankingBatch, tie_break: TieBreak) -> Result<f64> {
    let precisions = ranked_precisions(batch, tie_break)?;
    let total: f64 = precisions.iter().map(|&(_, p)| p).sum();
    Ok(total / precisions.len() as f64)
}

/// Interpolated AP: each precision replaced by the best precision at equal or higher recall.
pub fn interpolated_ap_oracle(batch: &RankingBatch, tie_break: TieBreak) -> Result<f64> {
    let precisions = ranked_precisions(batch, tie_break)?;
    let mut best = 0.0_f64;
    let mut total = 0.0;
    for &(_, p) in precisions.iter().rev() {
        best = best.max(p);
        total += best;
    }
    Ok(total / precisions.len() as f64)
}

/// Fraction of (positive, negative) pairs ordered correctly, from an explicit sort.
pub fn auc_oracle(batch: &RankingBatch, tie_break: TieBreak) -> Result<f64> {
    let n_pos = batch.num_positives();
    let n_neg = batch.num_negatives();
    if n_pos == 0 {
        return Err(Error::EmptyPositives);
    }
    if n_neg == 0 {
        return Err(Error::EmptyNegatives);
    }
    let order = sorted_valid(batch);
    let scores = batch.scores();
    let labels = batch.labels();
    // Walk up from the bottom; a group is one sample, or one tie group when pessimistic.
    let mut below = 0usize;
    let mut correct = 0usize;
    let mut end = order.len();
    while end > 0 {
        let mut start = end - 1;
        if tie_break == TieBreak::Pessimistic {
            while start > 0 && scores[order[start - 1]] == scores[order[end - 1]] {
                start -= 1;
            }
        }
        let group = &order[start..end];
        let mut group_negs = 0usize;
        for &i in group {
            match labels[i] {
                Label::Positive => correct += below,
                Label::Negative => group_negs += 1,
                Label::Ignored => {}
            }
        }
        below += group_negs;
        end = start;
    }
    Ok(correct as f64 / (n_pos * n_neg) as f64)
}
