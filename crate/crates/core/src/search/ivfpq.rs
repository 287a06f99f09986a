use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{top_k, Hit, RetrievalResult};
use crate::dataset::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::kmeans::{kmeans, sq_dist};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IvfPqConfig {
    /// Coarse cells `k_c`.
    pub coarse_clusters: usize,
    /// PQ sub-spaces `S`; must divide the dimension.
    pub subspaces: usize,
    /// Centroids per sub-space codebook, at most 256.
    pub pq_centroids: usize,
    pub kmeans_iters: usize,
    /// Cells scanned per query; `None` means `max(1, k_c / 10)`.
    pub n_probe: Option<usize>,
    pub seed: u64,
}

impl Default for IvfPqConfig {
    fn default() -> Self {
        Self {
            coarse_clusters: 100,
            subspaces: 4,
            pq_centroids: 256,
            kmeans_iters: 10,
            n_probe: None,
            seed: 0,
        }
    }
}

impl IvfPqConfig {
    pub fn n_probe(&self) -> usize {
        self.n_probe.unwrap_or((self.coarse_clusters / 10).max(1))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IvfPqIndex {
    pub dim: usize,
    pub subspaces: usize,
    pub pq_centroids: usize,
    /// `k_c x dim`.
    pub coarse: Vec<f32>,
    /// Gallery rows per coarse cell, ascending.
    pub lists: Vec<Vec<usize>>,
    /// `S x pq_centroids x (dim / S)`.
    pub books: Vec<f32>,
    /// `n x S` sub-space codes.
    pub codes: Vec<u8>,
}

impl IvfPqIndex {
    pub fn coarse_clusters(&self) -> usize {
        self.lists.len()
    }

    pub fn len(&self) -> usize {
        self.codes.len() / self.subspaces
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    fn sub(&self) -> usize {
        self.dim / self.subspaces
    }

    fn book(&self, s: usize) -> &[f32] {
        let n = self.pq_centroids * self.sub();
        &self.books[s * n..(s + 1) * n]
    }
}

/// Coarse k-means, then per-sub-space k-means over the residuals to the
/// assigned coarse centroid.
pub fn build_ivfpq(gallery: &EmbeddingMatrix, cfg: &IvfPqConfig) -> Result<IvfPqIndex> {
    let (n, d) = (gallery.n(), gallery.d());
    let s = cfg.subspaces;
    if s == 0 || d % s != 0 {
        return Err(Error::InvalidArgument(format!(
            "dimension {d} is not divisible into {s} sub-spaces"
        )));
    }
    if cfg.coarse_clusters == 0 || n < cfg.coarse_clusters {
        return Err(Error::InvalidArgument(format!(
            "{n} gallery rows cannot fill {} coarse cells",
            cfg.coarse_clusters
        )));
    }
    if !(1..=256).contains(&cfg.pq_centroids) {
        return Err(Error::InvalidArgument(format!(
            "pq_centroids must be in 1..=256, got {}",
            cfg.pq_centroids
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let data = gallery.to_f64();
    let coarse = kmeans(&data, d, cfg.coarse_clusters, cfg.kmeans_iters, &mut rng);
    if coarse.degenerate {
        warn!("ivf-pq: fewer distinct rows than coarse cells");
    }
    let mut lists = vec![Vec::new(); cfg.coarse_clusters];
    for (row, &a) in coarse.assignments.iter().enumerate() {
        lists[a as usize].push(row);
    }

    let sub = d / s;
    let mut residual = vec![0f64; n * d];
    for row in 0..n {
        let c = coarse.assignments[row] as usize;
        for j in 0..d {
            residual[row * d + j] = data[row * d + j] - coarse.centroids[c * d + j] as f64;
        }
    }
    let mut books = Vec::with_capacity(s * cfg.pq_centroids * sub);
    let mut codes = vec![0u8; n * s];
    for si in 0..s {
        let part: Vec<f64> = (0..n)
            .flat_map(|row| residual[row * d + si * sub..row * d + (si + 1) * sub].iter().copied())
            .collect();
        let km = kmeans(&part, sub, cfg.pq_centroids, cfg.kmeans_iters, &mut rng);
        for (row, &a) in km.assignments.iter().enumerate() {
            codes[row * s + si] = a as u8;
        }
        books.extend_from_slice(&km.centroids);
    }
    info!(
        "ivf-pq: {} rows in {} cells, {s} sub-spaces of {} centroids",
        n, cfg.coarse_clusters, cfg.pq_centroids
    );
    Ok(IvfPqIndex {
        dim: d,
        subspaces: s,
        pq_centroids: cfg.pq_centroids,
        coarse: coarse.centroids,
        lists,
        books,
        codes,
    })
}

/// Scans the `n_probe` nearest cells, ranking candidates by asymmetric
/// distance through per-cell lookup tables.
pub fn search_ivfpq(index: &IvfPqIndex, query: &[f32], n_probe: usize, k: usize) -> Result<RetrievalResult> {
    let d = index.dim;
    if query.len() != d {
        return Err(Error::Shape(format!(
            "query of dimension {} against an index of dimension {d}",
            query.len()
        )));
    }
    let kc = index.coarse_clusters();
    if n_probe == 0 || n_probe > kc {
        return Err(Error::InvalidArgument(format!("n_probe must be in 1..={kc}, got {n_probe}")));
    }
    let q: Vec<f64> = query.iter().map(|&v| v as f64).collect();
    let mut cells: Vec<(f64, usize)> = (0..kc)
        .map(|c| (sq_dist(&q, &index.coarse[c * d..(c + 1) * d]), c))
        .collect();
    cells.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let (s, sub, ksub) = (index.subspaces, index.sub(), index.pq_centroids);
    let mut table = vec![0f64; s * ksub];
    let mut hits = Vec::new();
    for &(_, c) in cells.iter().take(n_probe) {
        let centroid = &index.coarse[c * d..(c + 1) * d];
        let r: Vec<f64> = q.iter().zip(centroid).map(|(&a, &b)| a - b as f64).collect();
        for si in 0..s {
            let rs = &r[si * sub..(si + 1) * sub];
            let book = index.book(si);
            for j in 0..ksub {
                table[si * ksub + j] = sq_dist(rs, &book[j * sub..(j + 1) * sub]);
            }
        }
        for &row in &index.lists[c] {
            let codes = &index.codes[row * s..(row + 1) * s];
            let dist: f64 = codes
                .iter()
                .enumerate()
                .map(|(si, &code)| table[si * ksub + code as usize])
                .sum();
            hits.push(Hit {
                row,
                score: -dist.sqrt(),
            });
        }
    }
    Ok(top_k(hits, k))
}

/// Exact nearest coarse cell, exposed for tests.
#[cfg(test)]
fn cell_of(index: &IvfPqIndex, x: &[f32]) -> usize {
    let q: Vec<f64> = x.iter().map(|&v| v as f64).collect();
    crate::kmeans::nearest(&index.coarse, index.dim, &q).0
}
