use log::warn;
use serde::{Deserialize, Serialize};

use super::{top_k, Hit, RetrievalResult};
use crate::dataset::EmbeddingMatrix;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Euclidean,
    /// `1 - cos`; a zero-norm vector is at distance 1 from everything.
    Cosine,
}

impl Metric {
    pub(crate) fn distance(self, q: &[f32], x: &[f32]) -> f64 {
        match self {
            Metric::Euclidean => q
                .iter()
                .zip(x)
                .map(|(&a, &b)| {
                    let d = a as f64 - b as f64;
                    d * d
                })
                .sum::<f64>()
                .sqrt(),
            Metric::Cosine => {
                let (mut dot, mut nq, mut nx) = (0f64, 0f64, 0f64);
                for (&a, &b) in q.iter().zip(x) {
                    dot += a as f64 * b as f64;
                    nq += a as f64 * a as f64;
                    nx += b as f64 * b as f64;
                }
                if nq == 0.0 || nx == 0.0 {
                    1.0
                } else {
                    1.0 - dot / (nq.sqrt() * nx.sqrt())
                }
            }
        }
    }
}

/// Exact top-`k` by distance, ties by ascending row.
pub fn linear_scan(query: &[f32], gallery: &EmbeddingMatrix, metric: Metric, k: usize) -> Result<RetrievalResult> {
    if query.len() != gallery.d() {
        return Err(Error::Shape(format!(
            "query of dimension {} against a gallery of dimension {}",
            query.len(),
            gallery.d()
        )));
    }
    if metric == Metric::Cosine && query.iter().all(|&v| v == 0.0) {
        warn!("cosine scan with a zero-norm query: every distance is 1");
    }
    let hits = gallery
        .rows()
        .enumerate()
        .map(|(row, x)| Hit {
            row,
            score: -metric.distance(query, x),
        })
        .collect();
    Ok(top_k(hits, k))
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn self_match_ranks_first() {
        let g = EmbeddingMatrix::from_rows(&[vec![1.0f32, 1.0], vec![0.0, 0.5], vec![3.0, 0.0]]).unwrap();
        let r = linear_scan(&[0.0, 0.5], &g, Metric::Euclidean, 1).unwrap();
        assert_eq!(r.hits[0].row, 1);
        assert_eq!(r.hits[0].score, 0.0);
    }

    #[test]
    fn near_before_far() {
        let g = EmbeddingMatrix::from_rows(&[vec![2.0f32, 0.0], vec![1.0, 0.0]]).unwrap();
        let r = linear_scan(&[0.0, 0.0], &g, Metric::Euclidean, 2).unwrap();
        assert_eq!(r.rows(), vec![1, 0]);
        assert_eq!(r.hits[0].score, -1.0);
    }

    #[test]
    fn cosine_zero_norm_is_distance_one() {
        let g = EmbeddingMatrix::from_rows(&[vec![0.0f32, 0.0], vec![1.0, 0.0], vec![-1.0, 0.0]]).unwrap();
        let r = linear_scan(&[1.0, 0.0], &g, Metric::Cosine, 3).unwrap();
        assert_eq!(r.rows(), vec![1, 0, 2]);
        assert_eq!(r.hits[1].score, -1.0);
        let r = linear_scan(&[0.0, 0.0], &g, Metric::Cosine, 3).unwrap();
        assert!(r.hits.iter().all(|h| h.score == -1.0));
        assert_eq!(r.rows(), vec![0, 1, 2]);
    }

    #[test]
    fn matches_quadratic_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<Vec<f32>> = (0..500)
            .map(|_| (0..16).map(|_| rng.random_range(-1.0f32..1.0)).collect())
            .collect();
        let g = EmbeddingMatrix::from_rows(&rows).unwrap();
        for _ in 0..20 {
            let q: Vec<f32> = (0..16).map(|_| rng.random_range(-1.0f32..1.0)).collect();
            let r = linear_scan(&q, &g, Metric::Euclidean, 10).unwrap();
            // selection sort over a plain distance table
            let mut dist: Vec<(f64, usize)> = Vec::new();
            for (i, row) in rows.iter().enumerate() {
                let mut s = 0f64;
                for j in 0..16 {
                    s += (q[j] as f64 - row[j] as f64).powi(2);
                }
                dist.push((s.sqrt(), i));
            }
            let mut expect = Vec::new();
            for _ in 0..10 {
                let mut best = 0;
                for j in 1..dist.len() {
                    if dist[j].0 < dist[best].0 || (dist[j].0 == dist[best].0 && dist[j].1 < dist[best].1) {
                        best = j;
                    }
                }
                expect.push((dist[best].1, -dist[best].0));
                dist.remove(best);
            }
            let got: Vec<(usize, f64)> = r.hits.iter().map(|h| (h.row, h.score)).collect();
            assert_eq!(got, expect);
        }
    }

    #[test]
    fn dimension_mismatch() {
        let g = EmbeddingMatrix::from_rows(&[vec![1.0f32, 2.0]]).unwrap();
        assert!(linear_scan(&[1.0], &g, Metric::Euclidean, 1).is_err());
    }
}
