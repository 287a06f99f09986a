//! Gaussian-blob benchmark data.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{EmbeddingMatrix, LabeledDataset, Split};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub classes: usize,
    pub per_class: usize,
    pub dim: usize,
    pub spread: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            classes: 20,
            per_class: 100,
            dim: 32,
            spread: 0.1,
            seed: 0,
        }
    }
}

/// Per-class split sizes: 70% train, 20% gallery, the rest query.
fn split_sizes(per_class: usize) -> (usize, usize) {
    let train = (per_class as f64 * 0.7).round() as usize;
    let gallery = ((per_class as f64 * 0.2).round() as usize).min(per_class - train);
    (train, gallery)
}

/// Class centres uniform on the unit sphere, points `centre + spread * N(0, I)`.
/// Rows are grouped by class; each class is split 70/20/10 into
/// train/gallery/query in row order.
pub fn make_synthetic(cfg: &SynthConfig) -> Result<LabeledDataset> {
    if cfg.classes == 0 || cfg.per_class == 0 || cfg.dim == 0 {
        return Err(Error::InvalidArgument(format!(
            "synthetic data needs positive classes, per_class and dim, got {cfg:?}"
        )));
    }
    if !(cfg.spread.is_finite() && cfg.spread >= 0.0) {
        return Err(Error::InvalidArgument(format!("spread must be non-negative, got {}", cfg.spread)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let d = cfg.dim;
    let mut centres = Vec::with_capacity(cfg.classes * d);
    for _ in 0..cfg.classes {
        loop {
            let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                centres.extend(v.iter().map(|x| x / norm));
                break;
            }
        }
    }
    let (n_train, n_gallery) = split_sizes(cfg.per_class);
    let n = cfg.classes * cfg.per_class;
    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    let mut splits = Vec::with_capacity(n);
    for c in 0..cfg.classes {
        for i in 0..cfg.per_class {
            for j in 0..d {
                let noise: f64 = StandardNormal.sample(&mut rng);
                data.push((centres[c * d + j] + cfg.spread * noise) as f32);
            }
            labels.push(c as u32);
            splits.push(if i < n_train {
                Split::Train
            } else if i < n_train + n_gallery {
                Split::Gallery
            } else {
                Split::Query
            });
        }
    }
    LabeledDataset::new(EmbeddingMatrix::new(n, d, data)?, labels, splits, Some(cfg.classes))
}
