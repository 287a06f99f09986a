//! Baseline identifier schemes: uniformly random codes and hierarchical k-means.
//!
//! Both emit fixed-length, in-range identifiers, so they plug into the trie
//! and the sequence model exactly like the semantic tokenizer's codes.

use std::collections::HashSet;

use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::kmeans;
use crate::trie::Identifier;

/// Which identifier assignment the engine uses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IdScheme {
    /// Residual-quantization codes of the trained tokenizer.
    #[default]
    Semantic,
    Random,
    Hkm,
}

impl IdScheme {
    pub fn as_str(self) -> &'static str {
        match self {
            IdScheme::Semantic => "semantic",
            IdScheme::Random => "random",
            IdScheme::Hkm => "hkm",
        }
    }
}

impl std::fmt::Display for IdScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdentifiersConfig {
    pub scheme: IdScheme,
    /// Seed of the random scheme; its length and range follow the tokenizer.
    pub random_seed: u64,
    pub hkm: HkmConfig,
}

/// `n` identifiers drawn uniformly from `[0, L)^M`.
pub fn random_identifiers(n: usize, levels: usize, codebook_size: usize, seed: u64) -> Vec<Identifier> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<Identifier> = (0..n)
        .map(|_| {
            Identifier::new(
                (0..levels)
                    .map(|_| rng.random_range(0..codebook_size as u32))
                    .collect(),
            )
        })
        .collect();
    let distinct = ids.iter().collect::<HashSet<_>>().len();
    if distinct < n {
        info!("random identifiers: {} collisions among {n}", n - distinct);
    }
    ids
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HkmConfig {
    /// Clusters per node `k`; tokens lie in `[0, k)`.
    pub branching: usize,
    /// Identifier length `T`.
    pub depth: usize,
    pub kmeans_iters: usize,
    pub seed: u64,
}

impl Default for HkmConfig {
    fn default() -> Self {
        Self {
            branching: 100,
            depth: 4,
            kmeans_iters: 5,
            seed: 0,
        }
    }
}

/// Recursive k-means partition of the rows. The token at level `t` is the
/// cluster index taken at depth `t`. Nodes with fewer than `k` rows stop
/// splitting and pad the remaining levels with token 0.
pub fn hkm_identifiers(embeddings: &EmbeddingMatrix, cfg: &HkmConfig) -> Result<Vec<Identifier>> {
    if cfg.branching < 2 {
        return Err(Error::InvalidArgument(format!(
            "hierarchical k-means needs branching >= 2, got {}",
            cfg.branching
        )));
    }
    if cfg.depth == 0 {
        return Err(Error::InvalidArgument("hierarchical k-means needs depth >= 1".into()));
    }
    if embeddings.n() < cfg.branching {
        return Err(Error::InvalidArgument(format!(
            "{} rows cannot be split into {} clusters",
            embeddings.n(),
            cfg.branching
        )));
    }
    let data = embeddings.to_f64();
    let first = embeddings.row(0);
    if embeddings.rows().all(|r| r == first) {
        warn!("hierarchical k-means: all rows identical, every identifier will be the same");
    }
    let mut tokens = vec![vec![0u32; cfg.depth]; embeddings.n()];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut padded = 0usize;
    let rows: Vec<usize> = (0..embeddings.n()).collect();
    split(&data, embeddings.d(), &rows, 0, cfg, &mut rng, &mut tokens, &mut padded);
    if padded > 0 {
        info!("hierarchical k-means: {padded} under-full nodes padded with token 0");
    }
    Ok(tokens.into_iter().map(Identifier::new).collect())
}

#[allow(clippy::too_many_arguments)]
fn split<R: Rng>(
    data: &[f64],
    d: usize,
    rows: &[usize],
    level: usize,
    cfg: &HkmConfig,
    rng: &mut R,
    tokens: &mut [Vec<u32>],
    padded: &mut usize,
) {
    if level == cfg.depth {
        return;
    }
    if rows.len() < cfg.branching {
        // tokens are already zero-initialised
        *padded += 1;
        return;
    }
    let sub: Vec<f64> = rows
        .iter()
        .flat_map(|&r| data[r * d..(r + 1) * d].iter().copied())
        .collect();
    let km = kmeans::kmeans(&sub, d, cfg.branching, cfg.kmeans_iters, rng);
    let mut members = vec![Vec::new(); cfg.branching];
    for (&r, &a) in rows.iter().zip(&km.assignments) {
        tokens[r][level] = a;
        members[a as usize].push(r);
    }
    for group in members.iter().filter(|g| !g.is_empty()) {
        split(data, d, group, level + 1, cfg, rng, tokens, padded);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_random_identifier_in_range() {
        let ids = random_identifiers(1, 4, 7, 1);
        assert_eq!(ids.len(), 1);
        assert!(ids[0].tokens().iter().all(|&t| t < 7));
        assert_eq!(ids[0].len(), 4);
    }

    #[test]
    fn random_identifiers_are_seeded() {
        assert_eq!(random_identifiers(50, 3, 5, 9), random_identifiers(50, 3, 5, 9));
        assert_ne!(random_identifiers(50, 3, 5, 9), random_identifiers(50, 3, 5, 10));
    }

    #[test]
    fn random_token_frequencies_are_uniform() {
        let (n, m, l) = (10_000usize, 4usize, 256usize);
        let ids = random_identifiers(n, m, l, 17);
        let expected = n as f64 / l as f64;
        let sd = (n as f64 * (1.0 / l as f64) * (1.0 - 1.0 / l as f64)).sqrt();
        for pos in 0..m {
            let mut counts = vec![0usize; l];
            for id in &ids {
                counts[id.tokens()[pos] as usize] += 1;
            }
            for &c in &counts {
                assert!((c as f64 - expected).abs() <= 4.0 * sd, "position {pos}: {c}");
            }
            let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
            // 255 degrees of freedom: mean 255, sd ~22.6
            assert!(chi2 < 255.0 + 4.0 * (2.0f64 * 255.0).sqrt(), "chi2 {chi2}");
        }
    }

    fn blobs() -> EmbeddingMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rows: Vec<Vec<f32>> = (0..40)
            .map(|i| {
                let c = if i < 20 { -5.0 } else { 5.0 };
                vec![c + rng.random_range(-0.5f32..0.5), rng.random_range(-0.5f32..0.5)]
            })
            .collect();
        EmbeddingMatrix::from_rows(&rows).unwrap()
    }

    #[test]
    fn hkm_separates_blobs() {
        let ids = hkm_identifiers(
            &blobs(),
            &HkmConfig {
                branching: 2,
                depth: 1,
                kmeans_iters: 10,
                seed: 1,
            },
        )
        .unwrap();
        let a = ids[0].tokens()[0];
        assert!(ids[..20].iter().all(|i| i.tokens()[0] == a));
        assert!(ids[20..].iter().all(|i| i.tokens()[0] != a));
    }

    #[test]
    fn hkm_tokens_bounded_by_branching() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let rows: Vec<Vec<f32>> = (0..300)
            .map(|_| (0..3).map(|_| rng.random::<f32>()).collect())
            .collect();
        let emb = EmbeddingMatrix::from_rows(&rows).unwrap();
        let cfg = HkmConfig {
            branching: 5,
            depth: 4,
            kmeans_iters: 4,
            seed: 2,
        };
        let ids = hkm_identifiers(&emb, &cfg).unwrap();
        assert!(ids.iter().all(|i| i.len() == 4 && i.tokens().iter().all(|&t| t < 5)));
    }

    #[test]
    fn hkm_level_one_is_nearest_centroid() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let rows: Vec<Vec<f32>> = (0..200)
            .map(|_| (0..4).map(|_| rng.random_range(-1.0f32..1.0)).collect())
            .collect();
        let emb = EmbeddingMatrix::from_rows(&rows).unwrap();
        let cfg = HkmConfig {
            branching: 6,
            depth: 2,
            kmeans_iters: 3,
            seed: 5,
        };
        let ids = hkm_identifiers(&emb, &cfg).unwrap();
        // rerun the root clustering with the same seed to recover its centroids
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let km = kmeans::kmeans(&emb.to_f64(), 4, 6, cfg.kmeans_iters, &mut rng);
        for (i, row) in rows.iter().enumerate() {
            let mut best = (0, f64::MAX);
            for j in 0..6 {
                let c = &km.centroids[j * 4..(j + 1) * 4];
                let dist: f64 = row.iter().zip(c).map(|(&a, &b)| (a as f64 - b as f64).powi(2)).sum();
                if dist < best.1 {
                    best = (j, dist);
                }
            }
            assert_eq!(ids[i].tokens()[0], best.0 as u32);
        }
    }

    #[test]
    fn identical_rows_give_identical_ids() {
        let emb = EmbeddingMatrix::from_rows(&vec![vec![1.0f32, 2.0]; 10]).unwrap();
        let ids = hkm_identifiers(
            &emb,
            &HkmConfig {
                branching: 3,
                depth: 2,
                kmeans_iters: 2,
                seed: 0,
            },
        )
        .unwrap();
        assert!(ids.iter().all(|i| i == &ids[0]));
    }

    #[test]
    fn table_shaped_configuration() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let rows: Vec<Vec<f32>> = (0..1000)
            .map(|_| (0..8).map(|_| rng.random::<f32>()).collect())
            .collect();
        let emb = EmbeddingMatrix::from_rows(&rows).unwrap();
        let cfg = HkmConfig {
            branching: 100,
            depth: 4,
            kmeans_iters: 2,
            seed: 0,
        };
        let ids = hkm_identifiers(&emb, &cfg).unwrap();
        assert!(ids.iter().all(|i| i.len() == 4 && i.tokens().iter().all(|&t| t < 100)));
    }

    #[test]
    fn invalid_configuration() {
        let emb = blobs();
        let mut cfg = HkmConfig {
            branching: 1,
            depth: 2,
            kmeans_iters: 2,
            seed: 0,
        };
        assert!(hkm_identifiers(&emb, &cfg).is_err());
        cfg.branching = 41;
        assert!(hkm_identifiers(&emb, &cfg).is_err());
    }
}
