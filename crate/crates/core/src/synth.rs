//! Seeded dataset generators.
//!
//! | Kind | Shape |
//! |------|-------|
//! | `Separable` | Gaussian features, positives shifted along a random unit direction; ships a certificate |
//! | `Inseparable` | separable base, jittered negatives, plus one negative duplicating a positive |
//! | `A2Counterexample` | the fixed three samples `(0,0)-, (1,0)+, (-3,1)+` |
//! | `MultiImage` | per-image offsets that defeat per-image ranking but not pooled ranking |
//!
//! Counts are per image. The multi-image layout puts image `m` at feature
//! offset `10 m` along the second axis; positives sit at `(1, 10m + 1)` and
//! negatives at `(0, 10m)`. Within an image the only useful direction is
//! `(1, 1)`, which ranks each image perfectly yet puts every sample of a
//! higher image above every sample of a lower one. The pooled ranking is
//! separated by `(1, 0)` with gap 1.

use alloc::string::ToString;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dataset::Dataset;
use crate::linalg::{dot, norm};
use crate::models::FeatureSet;
use crate::ranking::Label;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthKind {
    Separable,
    Inseparable,
    A2Counterexample,
    MultiImage,
}

impl core::str::FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "separable" => Ok(SynthKind::Separable),
            "inseparable" => Ok(SynthKind::Inseparable),
            "a2_counterexample" | "counterexample" => Ok(SynthKind::A2Counterexample),
            "multi_image" | "multi-image" => Ok(SynthKind::MultiImage),
            other => Err(Error::InvalidSpec(alloc::format!("unknown kind `{other}`"))),
        }
    }
}

impl SynthKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SynthKind::Separable => "separable",
            SynthKind::Inseparable => "inseparable",
            SynthKind::A2Counterexample => "a2_counterexample",
            SynthKind::MultiImage => "multi_image",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub kind: SynthKind,
    /// Positives per image.
    pub n_pos: usize,
    /// Negatives per image.
    pub n_neg: usize,
    pub dim: usize,
    /// Minimum projected gap between positives and negatives (separable and inseparable kinds).
    pub margin: f64,
    /// Standard deviation of the jitter added to negatives (inseparable kind only).
    pub noise: f64,
    pub n_images: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            kind: SynthKind::Separable,
            n_pos: 20,
            n_neg: 20,
            dim: 5,
            margin: 0.1,
            noise: 0.0,
            n_images: 1,
            seed: 0,
        }
    }
}

/// A direction `θ*` and gap `ε` with `⟨f_i - f_j, θ*⟩ ≥ ε` for every positive `i` and negative `j` of the same image.
#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub theta: Vec<f64>,
    pub epsilon: f64,
}

impl Certificate {
    /// Smallest `⟨f_i - f_j, θ*⟩` over same-image (positive, negative) pairs.
    pub fn min_gap(&self, data: &Dataset) -> f64 {
        let proj: Vec<f64> = (0..data.len())
            .map(|i| dot(data.features.row(i), &self.theta))
            .collect();
        let mut gap = f64::INFINITY;
        for i in 0..data.len() {
            if data.labels[i] != Label::Positive {
                continue;
            }
            for j in 0..data.len() {
                if data.labels[j] == Label::Negative && data.image_ids[i] == data.image_ids[j] {
                    gap = gap.min(proj[i] - proj[j]);
                }
            }
        }
        gap
    }

    pub fn holds(&self, data: &Dataset) -> bool {
        self.epsilon > 0.0 && self.min_gap(data) >= self.epsilon
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub data: Dataset,
    /// Present for every kind except `Inseparable`.
    pub certificate: Option<Certificate>,
    /// Unit direction along which the classes were planted.
    pub direction: Vec<f64>,
}

pub fn generate(spec: &SynthSpec) -> Result<Generated> {
    match spec.kind {
        SynthKind::Separable => separable(spec),
        SynthKind::Inseparable => inseparable(spec),
        SynthKind::A2Counterexample => {
            // Any 0 < θ1 < θ2 / 3 ranks both positives first.
            let s = libm::sqrt(17.0);
            Ok(Generated {
                data: a2_counterexample(),
                certificate: Some(Certificate {
                    theta: alloc::vec![1.0, 4.0],
                    epsilon: 1.0,
                }),
                direction: alloc::vec![1.0 / s, 4.0 / s],
            })
        }
        SynthKind::MultiImage => multi_image(spec),
    }
}

/// The three-sample instance on which gradient descent over the smoothed AP-loss stalls.
pub fn a2_counterexample() -> Dataset {
    let features = FeatureSet::from_rows(&[
        alloc::vec![0.0, 0.0],
        alloc::vec![1.0, 0.0],
        alloc::vec![-3.0, 1.0],
    ])
    .expect("fixed rows");
    Dataset::new(
        features,
        alloc::vec![Label::Negative, Label::Positive, Label::Positive],
        alloc::vec![0, 0, 0],
    )
    .expect("fixed dataset")
}

fn check_counts(spec: &SynthSpec) -> Result<()> {
    if spec.n_pos == 0 || spec.n_neg == 0 {
        return Err(Error::InvalidSpec(
            "n_pos and n_neg must be at least 1".to_string(),
        ));
    }
    if spec.dim == 0 {
        return Err(Error::InvalidSpec("dim must be at least 1".to_string()));
    }
    if spec.n_images == 0 {
        return Err(Error::InvalidSpec(
            "n_images must be at least 1".to_string(),
        ));
    }
    Ok(())
}

fn gaussian_rows(rng: &mut ChaCha8Rng, rows: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| (0..dim).map(|_| StandardNormal.sample(rng)).collect())
        .collect()
}

/// Samples grouped per image, shuffled within each image.
/// Rows grouped by image, each with its label.
type PerImageRows = Vec<Vec<(Vec<f64>, Label)>>;

fn assemble(rng: &mut ChaCha8Rng, per_image: PerImageRows) -> Result<Dataset> {
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut images = Vec::new();
    for (m, mut samples) in per_image.into_iter().enumerate() {
        samples.shuffle(rng);
        for (f, l) in samples {
            rows.push(f);
            labels.push(l);
            images.push(m as u32);
        }
    }
    Dataset::new(FeatureSet::from_rows(&rows)?, labels, images)
}

fn separable_rows(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Result<(PerImageRows, Vec<f64>)> {
    check_counts(spec)?;
    if !(spec.margin > 0.0 && spec.margin.is_finite()) {
        return Err(Error::InvalidSpec("margin must be positive".to_string()));
    }
    let mut direction: Vec<f64> = (0..spec.dim)
        .map(|_| StandardNormal.sample(&mut *rng))
        .collect();
    let len = norm(&direction);
    if len == 0.0 {
        direction[0] = 1.0;
    } else {
        direction.iter_mut().for_each(|v| *v /= len);
    }

    let mut pos = gaussian_rows(rng, spec.n_pos * spec.n_images, spec.dim);
    let neg = gaussian_rows(rng, spec.n_neg * spec.n_images, spec.dim);
    let max_neg = neg
        .iter()
        .map(|f| dot(f, &direction))
        .fold(f64::NEG_INFINITY, f64::max);
    let min_pos = pos
        .iter()
        .map(|f| dot(f, &direction))
        .fold(f64::INFINITY, f64::min);
    let shift = (max_neg - min_pos).max(0.0) + spec.margin;
    for f in pos.iter_mut() {
        for (v, d) in f.iter_mut().zip(&direction) {
            *v += shift * d;
        }
    }

    let mut per_image: PerImageRows = (0..spec.n_images).map(|_| Vec::new()).collect();
    for (k, f) in pos.into_iter().enumerate() {
        per_image[k / spec.n_pos].push((f, Label::Positive));
    }
    for (k, f) in neg.into_iter().enumerate() {
        per_image[k / spec.n_neg].push((f, Label::Negative));
    }
    Ok((per_image, direction))
}

fn separable(spec: &SynthSpec) -> Result<Generated> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (per_image, direction) = separable_rows(spec, &mut rng)?;
    let data = assemble(&mut rng, per_image)?;
    let mut certificate = Certificate {
        theta: direction.clone(),
        epsilon: 0.0,
    };
    certificate.epsilon = certificate.min_gap(&data);
    debug_assert!(certificate.epsilon > 0.0);
    Ok(Generated {
        data,
        certificate: Some(certificate),
        direction,
    })
}

fn inseparable(spec: &SynthSpec) -> Result<Generated> {
    if !(spec.noise >= 0.0 && spec.noise.is_finite()) {
        return Err(Error::InvalidSpec("noise must be non-negative".to_string()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (mut per_image, direction) = separable_rows(spec, &mut rng)?;
    if spec.noise > 0.0 {
        for samples in per_image.iter_mut() {
            for (f, l) in samples.iter_mut() {
                if *l == Label::Negative {
                    for v in f.iter_mut() {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        *v += spec.noise * z;
                    }
                }
            }
        }
    }
    // A negative sharing a positive's features ties with it under every linear scorer.
    let twin = per_image[0]
        .iter()
        .find(|(_, l)| *l == Label::Positive)
        .map(|(f, _)| f.clone())
        .expect("every image has a positive");
    per_image[0].push((twin, Label::Negative));
    Ok(Generated {
        data: assemble(&mut rng, per_image)?,
        certificate: None,
        direction,
    })
}

fn multi_image(spec: &SynthSpec) -> Result<Generated> {
    check_counts(spec)?;
    if spec.n_images < 2 || spec.dim < 2 {
        return Err(Error::InvalidSpec(
            "multi_image needs at least 2 images and dim >= 2".to_string(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let per_image = (0..spec.n_images)
        .map(|m| {
            let offset = 10.0 * m as f64;
            let mut samples = Vec::with_capacity(spec.n_pos + spec.n_neg);
            for _ in 0..spec.n_pos {
                let mut f = alloc::vec![0.0; spec.dim];
                f[0] = 1.0;
                f[1] = offset + 1.0;
                samples.push((f, Label::Positive));
            }
            for _ in 0..spec.n_neg {
                let mut f = alloc::vec![0.0; spec.dim];
                f[1] = offset;
                samples.push((f, Label::Negative));
            }
            samples
        })
        .collect();
    let data = assemble(&mut rng, per_image)?;
    let mut theta = alloc::vec![0.0; spec.dim];
    theta[0] = 1.0;
    Ok(Generated {
        data,
        certificate: Some(Certificate {
            theta: theta.clone(),
            epsilon: 1.0,
        }),
        direction: theta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn a2_instance_is_fixed() {
        let g = generate(&SynthSpec {
            kind: SynthKind::A2Counterexample,
            n_pos: 99,
            ..SynthSpec::default()
        })
        .unwrap();
        assert_eq!(g.data.features.as_slice(), &[0.0, 0.0, 1.0, 0.0, -3.0, 1.0]);
        assert_eq!(
            g.data.labels,
            alloc::vec![Label::Negative, Label::Positive, Label::Positive]
        );
        assert!(g.certificate.unwrap().holds(&g.data));
    }

    #[test]
    fn separable_certificate_holds() {
        for seed in 0..20 {
            let spec = SynthSpec {
                seed,
                n_images: 3,
                n_pos: 4,
                n_neg: 7,
                ..SynthSpec::default()
            };
            let g = generate(&spec).unwrap();
            let cert = g.certificate.unwrap();
            assert!(cert.holds(&g.data));
            assert!(cert.epsilon >= spec.margin * (1.0 - 1e-9));
            assert_eq!(g.data.len(), 3 * 11);
            assert_eq!(g.data.images(), alloc::vec![0, 1, 2]);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = SynthSpec {
            kind: SynthKind::Inseparable,
            noise: 0.5,
            seed: 9,
            ..SynthSpec::default()
        };
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        let other = SynthSpec { seed: 10, ..spec };
        assert_ne!(generate(&spec).unwrap(), generate(&other).unwrap());
    }

    #[test]
    fn inseparable_has_a_duplicated_pair() {
        let g = generate(&SynthSpec {
            kind: SynthKind::Inseparable,
            ..SynthSpec::default()
        })
        .unwrap();
        let d = &g.data;
        let twin = (0..d.len()).any(|i| {
            (0..d.len()).any(|j| {
                d.labels[i] == Label::Positive
                    && d.labels[j] == Label::Negative
                    && d.features.row(i) == d.features.row(j)
            })
        });
        assert!(twin);
        assert_eq!(d.len(), 41);
    }

    #[test]
    fn invalid_specs() {
        let zero = SynthSpec {
            n_pos: 0,
            ..SynthSpec::default()
        };
        assert!(matches!(generate(&zero), Err(Error::InvalidSpec(_))));
        let flat = SynthSpec {
            margin: 0.0,
            ..SynthSpec::default()
        };
        assert!(generate(&flat).is_err());
        let lonely = SynthSpec {
            kind: SynthKind::MultiImage,
            n_images: 1,
            ..SynthSpec::default()
        };
        assert!(generate(&lonely).is_err());
        assert!("spiral".parse::<SynthKind>().is_err());
    }

    #[test]
    fn multi_image_layout() {
        let g = generate(&SynthSpec {
            kind: SynthKind::MultiImage,
            n_images: 2,
            n_pos: 2,
            n_neg: 3,
            dim: 2,
            ..SynthSpec::default()
        })
        .unwrap();
        assert_eq!(g.data.len(), 10);
        assert!(g.certificate.unwrap().holds(&g.data));
        for i in 0..g.data.len() {
            let f = g.data.features.row(i);
            let offset = 10.0 * g.data.image_ids[i] as f64;
            match g.data.labels[i] {
                Label::Positive => assert_eq!(f, &[1.0, offset + 1.0]),
                _ => assert_eq!(f, &[0.0, offset]),
            }
        }
    }
}
