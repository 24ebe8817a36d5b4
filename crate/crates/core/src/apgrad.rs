//! Error-driven score gradients for the AP-loss.
//!
//! The update asked of every pairwise input is `Δx_ij = -L_ij y_ij`: drive
//! each active primary term to its desired value 0. Backpropagating
//! `-Δx` through `x_ij = s_j - s_i` gives the score gradient
//!
//! ```text
//! g_i = Σ_j L_ji y_ji - Σ_j L_ij y_ij
//! ```
//!
//! which is `-Σ_j L_ij` on a positive and `Σ_i L_ij` on a negative. The
//! dense `Δx` is never materialized; gradients are accumulated row by row.
//!
//! The resulting field is not the gradient of any function, see
//! [`field_circulation`].

use alloc::string::ToString;
use alloc::vec::Vec;
use core::str::FromStr;

use crate::models::FeatureSet;
use crate::ranking::{
    pairwise_difference, pairwise_rows, q_integral, step, Label, PrimaryTermRows, RankingBatch,
    StepKind,
};
use crate::{Error, Result};

/// Per-sample score gradients; zero on ignored samples.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector {
    pub values: Vec<f64>,
    /// Whether the values were divided by `|P|`.
    pub normalized: bool,
}

impl GradientVector {
    pub fn zeros(len: usize, normalized: bool) -> Self {
        Self {
            values: alloc::vec![0.0; len],
            normalized,
        }
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn norm(&self) -> f64 {
        crate::linalg::norm(&self.values)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// `Δx_ij = -L_ij · y_ij` along one row.
pub fn error_driven_delta(l_row: &[f64], y_row: &[bool]) -> Vec<f64> {
    l_row
        .iter()
        .zip(y_row)
        .map(|(&l, &y)| if y { -l } else { 0.0 })
        .collect()
}

/// Score gradients from precomputed rows: positives get `-Σ_j L_ij`,
/// negatives `Σ_i L_ij`, optionally divided by `|P|`.
pub fn score_gradients(
    rows: &PrimaryTermRows,
    batch: &RankingBatch,
    normalize: bool,
) -> Result<GradientVector> {
    if rows.positives.is_empty() {
        return Err(Error::EmptyPositives);
    }
    let mut g = GradientVector::zeros(batch.len(), normalize);
    for (k, &i) in rows.positives.iter().enumerate() {
        g.values[i] = -rows.row_sum(k);
        for (m, &j) in rows.negatives.iter().enumerate() {
            g.values[j] += rows.rows[k][m];
        }
    }
    if normalize {
        let p = rows.positives.len() as f64;
        for v in g.values.iter_mut() {
            *v /= p;
        }
    }
    Ok(g)
}

/// Minibatch gradient for (interpolated) AP.
///
/// Positives are visited in ascending score order while tracking the best
/// precision seen so far. With `interpolated`, a row whose precision falls
/// below that running maximum is rescaled by `(1 - best) / (1 - prec)`.
/// Gradients are normalized by `|P|`. Returns the gradient and the loss
/// `(1/|P|) Σ_i Σ_j L_ij` over the (possibly rescaled) rows.
pub fn ap_grad_minibatch(
    batch: &RankingBatch,
    kind: StepKind,
    interpolated: bool,
) -> Result<(GradientVector, f64)> {
    kind.validate()?;
    let positives = batch.positives();
    if positives.is_empty() {
        return Err(Error::EmptyPositives);
    }
    let negatives = batch.negatives();
    let valid = batch.valid();
    let scores = batch.scores();

    let mut order = positives.clone();
    order.sort_by(|&a, &b| {
        scores[a]
            .partial_cmp(&scores[b])
            .unwrap_or(core::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });

    // Rows are filled in ascending score order and scattered in index order,
    // so the uninterpolated result matches `score_gradients` bit for bit.
    let slot: Vec<usize> = {
        let mut slot = alloc::vec![0; batch.len()];
        for (k, &i) in positives.iter().enumerate() {
            slot[i] = k;
        }
        slot
    };
    let mut rows = alloc::vec![Vec::new(); positives.len()];
    let mut max_prec = 0.0_f64;
    for &i in &order {
        let mut d = 1.0;
        for &k in &valid {
            if k != i {
                d += step(pairwise_difference(scores, i, k), kind);
            }
        }
        let mut row: Vec<f64> = negatives
            .iter()
            .map(|&j| step(pairwise_difference(scores, i, j), kind) / d)
            .collect();
        let prec = 1.0 - row.iter().sum::<f64>();
        if prec >= max_prec {
            max_prec = prec;
        } else if interpolated {
            if prec >= 1.0 {
                return Err(Error::DegeneratePrecision);
            }
            let factor = (1.0 - max_prec) / (1.0 - prec);
            for l in row.iter_mut() {
                *l *= factor;
            }
        }
        rows[slot[i]] = row;
    }

    let mut g = GradientVector::zeros(batch.len(), true);
    let mut total = 0.0;
    for (k, &i) in positives.iter().enumerate() {
        let row_sum: f64 = rows[k].iter().sum();
        g.values[i] = -row_sum;
        for (&l, &j) in rows[k].iter().zip(&negatives) {
            g.values[j] += l;
        }
        total += row_sum;
    }
    let p = positives.len() as f64;
    for v in g.values.iter_mut() {
        *v /= p;
    }
    Ok((g, total / p))
}

/// Margin variant: piecewise step in the numerator, exact Heaviside in the denominator.
pub fn margin_primary_terms(batch: &RankingBatch, delta: f64) -> Result<PrimaryTermRows> {
    pairwise_rows(batch, StepKind::piecewise(delta)?, StepKind::Heaviside)
}

/// `l(x, x̂) = (1/|P|) Σ_i Σ_j Q(x_ij) / (1 + Σ_{k≠i} H(x̂_ik))`, with `x` from
/// the batch scores and `x̂` from `anchor_scores`.
///
/// Its gradient in `x` is exactly the normalized margin-variant update, which
/// makes the margin update plain gradient descent on a convex function when
/// the scorer is linear.
pub fn surrogate_loss(batch: &RankingBatch, anchor_scores: &[f64], delta: f64) -> Result<f64> {
    StepKind::piecewise(delta)?;
    if anchor_scores.len() != batch.len() {
        return Err(Error::LengthMismatch {
            expected: batch.len(),
            got: anchor_scores.len(),
        });
    }
    let positives = batch.positives();
    if positives.is_empty() {
        return Err(Error::EmptyPositives);
    }
    let negatives = batch.negatives();
    let valid = batch.valid();
    let scores = batch.scores();
    let mut total = 0.0;
    for &i in &positives {
        let mut d = 1.0;
        for &k in &valid {
            if k != i {
                d += step(
                    pairwise_difference(anchor_scores, i, k),
                    StepKind::Heaviside,
                );
            }
        }
        let num: f64 = negatives
            .iter()
            .map(|&j| q_integral(pairwise_difference(scores, i, j), delta))
            .sum();
        total += num / d;
    }
    Ok(total / positives.len() as f64)
}

/// `Z(u) = max_i Σ_j Q(x_ij(u))` where the batch carries the scores of the reference weights `u`.
pub fn reference_z(batch: &RankingBatch, delta: f64) -> Result<f64> {
    StepKind::piecewise(delta)?;
    let positives = batch.positives();
    if positives.is_empty() {
        return Err(Error::EmptyPositives);
    }
    let negatives = batch.negatives();
    let scores = batch.scores();
    Ok(positives
        .iter()
        .map(|&i| {
            negatives
                .iter()
                .map(|&j| q_integral(pairwise_difference(scores, i, j), delta))
                .sum::<f64>()
        })
        .fold(0.0, f64::max))
}

/// Operator norm of `θ ↦ (x_ij(θ))_{i∈P, j∈N}` for a linear scorer, i.e. the
/// largest singular value of the matrix with rows `f_j - f_i`.
pub fn pairwise_jacobian_norm(features: &FeatureSet, labels: &[Label]) -> Result<f64> {
    if labels.len() != features.rows() {
        return Err(Error::LengthMismatch {
            expected: features.rows(),
            got: labels.len(),
        });
    }
    let dim = features.dim();
    let mut gram = alloc::vec![0.0; dim * dim];
    let pos: Vec<usize> = (0..labels.len())
        .filter(|&i| labels[i] == Label::Positive)
        .collect();
    let neg: Vec<usize> = (0..labels.len())
        .filter(|&i| labels[i] == Label::Negative)
        .collect();
    let mut diff = alloc::vec![0.0; dim];
    for &i in &pos {
        for &j in &neg {
            for ((d, &a), &b) in diff.iter_mut().zip(features.row(j)).zip(features.row(i)) {
                *d = a - b;
            }
            for r in 0..dim {
                for c in 0..dim {
                    gram[r * dim + c] += diff[r] * diff[c];
                }
            }
        }
    }
    if dim == 0 {
        return Ok(0.0);
    }
    Ok(libm::sqrt(
        crate::linalg::max_symmetric_eigenvalue(&gram, dim).max(0.0),
    ))
}

/// Which closed-form regret bound to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundMode {
    /// `(ln|P| + 1)/|P| · (8/δ) Z(u)`, tight when `Z(u)` is small.
    RecallWeighted,
    /// `(8/δ) Z(u) / (1 + (8/δ) Z(u))`, never above 1.
    Saturating,
}

impl FromStr for BoundMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "recall_weighted" | "recall-weighted" => Ok(BoundMode::RecallWeighted),
            "saturating" => Ok(BoundMode::Saturating),
            other => Err(Error::InvalidMode(other.to_string())),
        }
    }
}

/// Quantities entering the offline bound on the average AP-loss of the margin update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundInputs {
    /// `Z(u)`, see [`reference_z`].
    pub z_u: f64,
    pub num_positives: usize,
    /// Upper bound on the operator norm of the score map, see [`pairwise_jacobian_norm`].
    pub operator_norm: f64,
    pub delta: f64,
    /// `‖u - θ⁽¹⁾‖²`.
    pub init_distance_sq: f64,
    /// Number of steps `T` averaged over.
    pub horizon: usize,
}

impl BoundInputs {
    /// `(1/T) · 4R²‖u - θ⁽¹⁾‖² / δ²`.
    pub fn initialization_term(&self) -> f64 {
        let r = self.operator_norm;
        4.0 * r * r * self.init_distance_sq / (self.delta * self.delta) / self.horizon as f64
    }
}

/// Right-hand side of the selected bound, including the initialization term.
pub fn a3_bound_rhs(inputs: &BoundInputs, mode: BoundMode) -> f64 {
    let scaled = 8.0 / inputs.delta * inputs.z_u;
    let data_term = match mode {
        BoundMode::RecallWeighted => {
            let p = inputs.num_positives.max(1) as f64;
            (libm::log(p) + 1.0) / p * scaled
        }
        BoundMode::Saturating => scaled / (1.0 + scaled),
    };
    data_term + inputs.initialization_term()
}

/// The smaller of the two bounds.
pub fn tightest_bound(inputs: &BoundInputs) -> f64 {
    a3_bound_rhs(inputs, BoundMode::RecallWeighted).min(a3_bound_rhs(inputs, BoundMode::Saturating))
}

/// Line integral of a score-space vector field around a circle.
///
/// The path is `c + r (cos φ · a + sin φ · b)` for `φ ∈ [0, 2π)`, sampled at
/// `steps` points with the field evaluated at segment midpoints. A gradient
/// field gives zero up to discretization error.
pub fn field_circulation<F>(
    mut field: F,
    center: &[f64],
    axis_a: &[f64],
    axis_b: &[f64],
    radius: f64,
    steps: usize,
) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let n = center.len();
    if axis_a.len() != n || axis_b.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: axis_a.len().min(axis_b.len()),
        });
    }
    let point = |phi: f64| -> Vec<f64> {
        let (s, c) = (libm::sin(phi), libm::cos(phi));
        (0..n)
            .map(|k| center[k] + radius * (c * axis_a[k] + s * axis_b[k]))
            .collect()
    };
    let tau = 2.0 * core::f64::consts::PI;
    let mut total = 0.0;
    for k in 0..steps {
        let (p0, p1) = (
            tau * k as f64 / steps as f64,
            tau * (k + 1) as f64 / steps as f64,
        );
        let mid = point(0.5 * (p0 + p1));
        let v = field(&mid)?;
        let (a, b) = (point(p0), point(p1));
        total += (0..n).map(|d| v[d] * (b[d] - a[d])).sum::<f64>();
    }
    Ok(total)
}

/// Circulation of the normalized error-driven AP field for fixed labels.
pub fn ap_field_circulation(
    labels: &[Label],
    kind: StepKind,
    center: &[f64],
    axis_a: &[f64],
    axis_b: &[f64],
    radius: f64,
    steps: usize,
) -> Result<f64> {
    field_circulation(
        |s| {
            let batch = RankingBatch::new(s.to_vec(), labels.to_vec())?;
            Ok(ap_grad_minibatch(&batch, kind, false)?.0.values)
        },
        center,
        axis_a,
        axis_b,
        radius,
        steps,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ranking::{ap_loss, primary_terms};

    fn batch(scores: &[f64], labels: &[i8]) -> RankingBatch {
        RankingBatch::from_ternary(scores, labels).unwrap()
    }

    #[test]
    fn delta_rows() {
        assert_eq!(error_driven_delta(&[0.5], &[true]), alloc::vec![-0.5]);
        assert_eq!(error_driven_delta(&[0.3], &[false]), alloc::vec![0.0]);
        assert_eq!(error_driven_delta(&[0.0], &[true]), alloc::vec![-0.0]);
    }

    #[test]
    fn single_pair_gradient() {
        let b = batch(&[1.0, 2.0], &[1, 0]);
        let rows = primary_terms(&b, StepKind::Heaviside).unwrap();
        let g = score_gradients(&rows, &b, true).unwrap();
        assert_eq!(g.values, alloc::vec![-0.5, 0.5]);
        assert_eq!(score_gradients(&rows, &b, false).unwrap().values, g.values);
    }

    #[test]
    fn perfect_ranking_gradient_is_zero() {
        let b = batch(&[3.0, 1.0, 2.0], &[1, 0, 0]);
        let rows = primary_terms(&b, StepKind::Heaviside).unwrap();
        assert!(score_gradients(&rows, &b, true)
            .unwrap()
            .values
            .iter()
            .all(|&v| v == 0.0));
        let (g, loss) = ap_grad_minibatch(&b, StepKind::Heaviside, true).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dip_instance_gradients() {
        let b = batch(&[10.0, 9.0, 8.0, 7.0, 6.0], &[0, 1, 1, 0, 1]);
        let rows = primary_terms(&b, StepKind::Heaviside).unwrap();
        let g = score_gradients(&rows, &b, true).unwrap();
        let expected = [
            (1.0 / 2.0 + 1.0 / 3.0 + 1.0 / 5.0) / 3.0,
            -(1.0 / 2.0) / 3.0,
            -(1.0 / 3.0) / 3.0,
            (1.0 / 5.0) / 3.0,
            -(2.0 / 5.0) / 3.0,
        ];
        for (a, e) in g.values.iter().zip(expected) {
            assert!((a - e).abs() < 1e-15);
        }

        let (gi, loss) = ap_grad_minibatch(&b, StepKind::Heaviside, true).unwrap();
        assert!((loss - 16.0 / 45.0).abs() < 1e-15);
        assert!((gi.values[1] + (1.0 / 3.0) / 3.0).abs() < 1e-15);
        assert!((gi.values[2] + (1.0 / 3.0) / 3.0).abs() < 1e-15);
    }

    #[test]
    fn pooling_ignores_image_tags() {
        let scores = alloc::vec![0.3, 1.2, -0.4, 0.9, 0.1];
        let labels = alloc::vec![
            Label::Positive,
            Label::Negative,
            Label::Positive,
            Label::Negative,
            Label::Negative
        ];
        let one = RankingBatch::new(scores.clone(), labels.clone()).unwrap();
        let two = RankingBatch::with_images(scores, labels, alloc::vec![0, 0, 1, 1, 1]).unwrap();
        assert_eq!(
            ap_grad_minibatch(&one, StepKind::Heaviside, true).unwrap(),
            ap_grad_minibatch(&two, StepKind::Heaviside, true).unwrap()
        );
    }

    #[test]
    fn margin_terms() {
        let rows = margin_primary_terms(&batch(&[1.0, 2.0], &[1, 0]), 1.0).unwrap();
        assert_eq!(rows.rows[0], alloc::vec![0.5]);
        let tied = margin_primary_terms(&batch(&[0.0, 0.0], &[1, 0]), 1.0).unwrap();
        assert_eq!(tied.rows[0], alloc::vec![0.25]);
        let apart = margin_primary_terms(&batch(&[2.0, 0.0], &[1, 0]), 1.0).unwrap();
        assert_eq!(apart.rows[0], alloc::vec![0.0]);
    }

    #[test]
    fn surrogate_values() {
        let perfect = batch(&[5.0, 0.0, 1.0], &[1, 0, 0]);
        assert_eq!(
            surrogate_loss(&perfect, perfect.scores(), 1.0).unwrap(),
            0.0
        );
        // x_ij = δ = 1.
        let pair = batch(&[0.0, 1.0], &[1, 0]);
        assert_eq!(surrogate_loss(&pair, pair.scores(), 1.0).unwrap(), 0.5);
    }

    #[test]
    fn surrogate_gradient_is_margin_update() {
        let b = batch(&[0.2, 0.5, -0.3, 0.1, 0.45, 0.9], &[1, 0, 1, 0, 1, -1]);
        let delta = 0.7;
        let rows = margin_primary_terms(&b, delta).unwrap();
        let g = score_gradients(&rows, &b, true).unwrap();
        let h = 1e-6;
        for i in 0..b.len() {
            let shifted = |e: f64| {
                let mut s = b.scores().to_vec();
                s[i] += e;
                surrogate_loss(&b.with_scores(s).unwrap(), b.scores(), delta).unwrap()
            };
            let numeric = (shifted(h) - shifted(-h)) / (2.0 * h);
            assert!((numeric - g.values[i]).abs() < 1e-8, "sample {i}");
        }
    }

    #[test]
    fn bound_modes() {
        assert_eq!(
            "saturating".parse::<BoundMode>().unwrap(),
            BoundMode::Saturating
        );
        assert_eq!(
            "recall_weighted".parse::<BoundMode>().unwrap(),
            BoundMode::RecallWeighted
        );
        assert!(matches!(
            "median".parse::<BoundMode>(),
            Err(Error::InvalidMode(_))
        ));

        let base = BoundInputs {
            z_u: 0.0,
            num_positives: 10,
            operator_norm: 2.0,
            delta: 1.0,
            init_distance_sq: 3.0,
            horizon: 100,
        };
        // Z(u) = 0: only the initialization term remains.
        assert!((a3_bound_rhs(&base, BoundMode::RecallWeighted) - 0.48).abs() < 1e-15);
        assert!((a3_bound_rhs(&base, BoundMode::Saturating) - 0.48).abs() < 1e-15);
        let later = BoundInputs {
            horizon: 10_000,
            ..base
        };
        assert!(tightest_bound(&later) < tightest_bound(&base));

        let big = BoundInputs {
            z_u: 2.0,
            horizon: usize::MAX,
            ..base
        };
        assert!((a3_bound_rhs(&big, BoundMode::Saturating) - 16.0 / 17.0).abs() < 1e-12);
        assert!(tightest_bound(&big) <= a3_bound_rhs(&big, BoundMode::RecallWeighted));
    }

    #[test]
    fn jacobian_norm_single_pair() {
        let f = FeatureSet::from_rows(&[alloc::vec![3.0, 4.0], alloc::vec![0.0, 0.0]]).unwrap();
        let r = pairwise_jacobian_norm(&f, &[Label::Positive, Label::Negative]).unwrap();
        assert!((r - 5.0).abs() < 1e-12);
    }

    #[test]
    fn interpolated_loss_agrees_with_ranking_layer() {
        let b = batch(&[0.1, 0.7, 0.4, 0.9, 0.3, 0.2], &[1, 0, 1, 0, 1, 0]);
        for interp in [false, true] {
            let (_, loss) = ap_grad_minibatch(&b, StepKind::Heaviside, interp).unwrap();
            let direct = ap_loss(&b, StepKind::Heaviside, interp).unwrap();
            assert!((loss - direct).abs() < 1e-15);
        }
    }
}
