use alloc::vec::Vec;

use crate::models::FeatureSet;
use crate::ranking::{Label, RankingBatch};
use crate::{Error, Result};

/// Feature rows with ternary labels and image tags.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: FeatureSet,
    pub labels: Vec<Label>,
    pub image_ids: Vec<u32>,
}

impl Dataset {
    pub fn new(features: FeatureSet, labels: Vec<Label>, image_ids: Vec<u32>) -> Result<Self> {
        for len in [labels.len(), image_ids.len()] {
            if len != features.rows() {
                return Err(Error::LengthMismatch {
                    expected: features.rows(),
                    got: len,
                });
            }
        }
        Ok(Self {
            features,
            labels,
            image_ids,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.dim()
    }

    pub fn num_positives(&self) -> usize {
        self.labels
            .iter()
            .filter(|&&l| l == Label::Positive)
            .count()
    }

    /// Distinct image tags, ascending.
    pub fn images(&self) -> Vec<u32> {
        let mut ids = self.image_ids.clone();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// Sample indices belonging to any of `images`, in index order.
    pub fn indices_in(&self, images: &[u32]) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| images.contains(&self.image_ids[i]))
            .collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            features: self.features.select(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            image_ids: indices.iter().map(|&i| self.image_ids[i]).collect(),
        }
    }

    /// Ranking of these samples under the given scores.
    pub fn ranking(&self, scores: Vec<f64>) -> Result<RankingBatch> {
        RankingBatch::with_images(scores, self.labels.clone(), self.image_ids.clone())
    }
}
