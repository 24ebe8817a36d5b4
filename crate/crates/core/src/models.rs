//! Toy scorers with an explicit backward pass.
//!
//! The ranking losses only ever produce gradients with respect to scores.
//! A scorer turns those into parameter gradients: `dθ = Σ_i g_i ∂s_i/∂θ`.

use alloc::vec::Vec;

use rand::Rng;

use crate::linalg::dot;
use crate::ranking::{primary_terms, RankingBatch, StepKind};
use crate::{Error, Result};

/// Row-major `rows × dim` feature matrix, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    rows: usize,
    dim: usize,
    data: Vec<f64>,
}

impl FeatureSet {
    pub fn new(rows: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * dim {
            return Err(Error::DimensionMismatch {
                expected: rows * dim,
                got: data.len(),
            });
        }
        Ok(Self { rows, dim, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            rows: rows.len(),
            dim,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: indices.len(),
            dim: self.dim,
            data,
        }
    }
}

/// `s = ⟨f, θ⟩`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearScorer {
    pub theta: Vec<f64>,
}

impl LinearScorer {
    pub fn zeros(dim: usize) -> Self {
        Self {
            theta: alloc::vec![0.0; dim],
        }
    }
}

/// One hidden tanh layer: `s = Σ_h w_h tanh(Σ_d f_d W_dh + b_h) + b_o`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpScorer {
    pub dim: usize,
    pub hidden: usize,
    /// `dim × hidden`, row-major.
    pub hidden_weights: Vec<f64>,
    pub hidden_bias: Vec<f64>,
    pub output_weights: Vec<f64>,
    pub output_bias: f64,
}

impl MlpScorer {
    /// Every parameter drawn uniformly from `[-0.5, 0.5]`.
    pub fn random<R: Rng + ?Sized>(dim: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        if hidden == 0 {
            return Err(Error::InvalidConfig(
                "hidden layer must have at least one unit".into(),
            ));
        }
        let mut draw =
            |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-0.5..=0.5)).collect() };
        let hidden_weights = draw(dim * hidden);
        let hidden_bias = draw(hidden);
        let output_weights = draw(hidden);
        let output_bias = draw(1)[0];
        Ok(Self {
            dim,
            hidden,
            hidden_weights,
            hidden_bias,
            output_weights,
            output_bias,
        })
    }

    fn hidden_activations(&self, f: &[f64]) -> Vec<f64> {
        (0..self.hidden)
            .map(|h| {
                let pre: f64 = self.hidden_bias[h]
                    + (0..self.dim)
                        .map(|d| f[d] * self.hidden_weights[d * self.hidden + h])
                        .sum::<f64>();
                libm::tanh(pre)
            })
            .collect()
    }
}

/// A scorer with a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub enum ScorerModel {
    Linear(LinearScorer),
    Mlp(MlpScorer),
}

impl ScorerModel {
    pub fn input_dim(&self) -> usize {
        match self {
            ScorerModel::Linear(m) => m.theta.len(),
            ScorerModel::Mlp(m) => m.dim,
        }
    }

    pub fn num_params(&self) -> usize {
        match self {
            ScorerModel::Linear(m) => m.theta.len(),
            ScorerModel::Mlp(m) => m.dim * m.hidden + 2 * m.hidden + 1,
        }
    }

    /// Parameters flattened as `θ`, or `[W, b, w, b_o]` for the MLP.
    pub fn params(&self) -> Vec<f64> {
        match self {
            ScorerModel::Linear(m) => m.theta.clone(),
            ScorerModel::Mlp(m) => {
                let mut p = Vec::with_capacity(self.num_params());
                p.extend_from_slice(&m.hidden_weights);
                p.extend_from_slice(&m.hidden_bias);
                p.extend_from_slice(&m.output_weights);
                p.push(m.output_bias);
                p
            }
        }
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::DimensionMismatch {
                expected: self.num_params(),
                got: params.len(),
            });
        }
        match self {
            ScorerModel::Linear(m) => m.theta.copy_from_slice(params),
            ScorerModel::Mlp(m) => {
                let (w, rest) = params.split_at(m.dim * m.hidden);
                let (b, rest) = rest.split_at(m.hidden);
                let (v, rest) = rest.split_at(m.hidden);
                m.hidden_weights.copy_from_slice(w);
                m.hidden_bias.copy_from_slice(b);
                m.output_weights.copy_from_slice(v);
                m.output_bias = rest[0];
            }
        }
        Ok(())
    }

    fn check_dim(&self, features: &FeatureSet) -> Result<()> {
        if features.dim() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: features.dim(),
            });
        }
        Ok(())
    }

    /// Scores for every feature row.
    pub fn forward(&self, features: &FeatureSet) -> Result<Vec<f64>> {
        self.check_dim(features)?;
        Ok(match self {
            ScorerModel::Linear(m) => (0..features.rows())
                .map(|i| dot(features.row(i), &m.theta))
                .collect(),
            ScorerModel::Mlp(m) => (0..features.rows())
                .map(|i| {
                    let z = m.hidden_activations(features.row(i));
                    dot(&z, &m.output_weights) + m.output_bias
                })
                .collect(),
        })
    }

    /// `Σ_i g_i ∂s_i/∂θ` in the layout of [`ScorerModel::params`].
    pub fn backward(&self, features: &FeatureSet, score_grad: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(features)?;
        if score_grad.len() != features.rows() {
            return Err(Error::LengthMismatch {
                expected: features.rows(),
                got: score_grad.len(),
            });
        }
        let mut out = alloc::vec![0.0; self.num_params()];
        match self {
            ScorerModel::Linear(_) => {
                for (i, &g) in score_grad.iter().enumerate() {
                    if g != 0.0 {
                        for (o, &f) in out.iter_mut().zip(features.row(i)) {
                            *o += g * f;
                        }
                    }
                }
            }
            ScorerModel::Mlp(m) => {
                let (dw, rest) = out.split_at_mut(m.dim * m.hidden);
                let (db, rest) = rest.split_at_mut(m.hidden);
                let (dv, dbo) = rest.split_at_mut(m.hidden);
                for (i, &g) in score_grad.iter().enumerate() {
                    if g == 0.0 {
                        continue;
                    }
                    let f = features.row(i);
                    let z = m.hidden_activations(f);
                    dbo[0] += g;
                    for h in 0..m.hidden {
                        dv[h] += g * z[h];
                        let back = g * m.output_weights[h] * (1.0 - z[h] * z[h]);
                        db[h] += back;
                        for d in 0..m.dim {
                            dw[d * m.hidden + h] += back * f[d];
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

/// One unnormalized, unit-step error-driven update of a linear scorer:
/// `θ' = θ + Σ_{i∈P} Σ_{j∈N} L_ij (f_i - f_j)`.
///
/// Scores are recomputed from the model; only the labels of `batch` are read.
pub fn perceptron_step(
    model: &ScorerModel,
    batch: &RankingBatch,
    features: &FeatureSet,
    kind: StepKind,
) -> Result<ScorerModel> {
    let ScorerModel::Linear(linear) = model else {
        return Err(Error::NotLinear);
    };
    if features.rows() != batch.len() {
        return Err(Error::LengthMismatch {
            expected: batch.len(),
            got: features.rows(),
        });
    }
    let scores = model.forward(features)?;
    let scored = batch.with_scores(scores)?;
    let rows = primary_terms(&scored, kind)?;
    let mut theta = linear.theta.clone();
    for (k, &i) in rows.positives.iter().enumerate() {
        for (m, &j) in rows.negatives.iter().enumerate() {
            let l = rows.rows[k][m];
            if l == 0.0 {
                continue;
            }
            for ((t, fi), fj) in theta.iter_mut().zip(features.row(i)).zip(features.row(j)) {
                *t += l * (fi - fj);
            }
        }
    }
    Ok(ScorerModel::Linear(LinearScorer { theta }))
}
