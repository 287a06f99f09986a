//! Retrieval engines: trie-constrained beam search over the scorer, exact
//! linear scan and an IVF-PQ index.

mod beam;
mod ivfpq;
mod scan;

use std::cmp::Ordering;
use std::io::Write;

use serde::{Deserialize, Serialize};

pub use beam::{beam_search, beam_search_ids};
pub use ivfpq::{build_ivfpq, search_ivfpq, IvfPqConfig, IvfPqIndex};
pub use scan::{linear_scan, Metric};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub beam_width: usize,
    /// Rows returned per query.
    pub k: usize,
    /// Distance of the exact-scan and IVF-PQ baselines.
    pub metric: Metric,
    pub ivfpq: IvfPqConfig,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            beam_width: 30,
            k: 30,
            metric: Metric::Euclidean,
            ivfpq: IvfPqConfig::default(),
        }
    }
}

/// One retrieved gallery row.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub row: usize,
    /// Sequence log-probability (generative) or negative distance (baselines).
    pub score: f64,
}

/// Ranked hits, best first. Equal scores are ordered by ascending row,
/// except that beam search keeps lexicographic identifier order between
/// distinct identifiers of equal probability.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub hits: Vec<Hit>,
    /// Fewer than the requested number of rows were reachable.
    pub truncated: bool,
}

impl RetrievalResult {
    pub fn rows(&self) -> Vec<usize> {
        self.hits.iter().map(|h| h.row).collect()
    }

    pub fn len(&self) -> usize {
        self.hits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hits.is_empty()
    }
}

/// Descending score, then ascending row.
pub(crate) fn by_score(a: &Hit, b: &Hit) -> Ordering {
    b.score.total_cmp(&a.score).then(a.row.cmp(&b.row))
}

/// Best `k` of `hits` under [`by_score`].
pub(crate) fn top_k(mut hits: Vec<Hit>, k: usize) -> RetrievalResult {
    let truncated = hits.len() < k;
    if hits.len() > k && k > 0 {
        hits.select_nth_unstable_by(k - 1, by_score);
        hits.truncate(k);
    }
    hits.truncate(k);
    hits.sort_by(by_score);
    RetrievalResult { hits, truncated }
}

/// Worker threads for batched search: `IRGEN_THREADS` if set to a positive
/// integer, otherwise rayon's default.
pub fn search_threads() -> usize {
    std::env::var("IRGEN_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(rayon::current_num_threads)
}

/// Runs `f` on every query index in parallel, capped at [`search_threads`]
/// workers. Output order follows the input.
pub fn par_queries<T, F>(n: usize, threads: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .expect("thread pool");
    pool.install(|| (0..n).into_par_iter().map(&f).collect())
}

/// Writes `query_id, rank, row, score` rows; ranks start at 1.
pub fn write_results_tsv<W: Write>(mut w: W, results: &[(String, RetrievalResult)]) -> std::io::Result<()> {
    writeln!(w, "query_id\trank\trow\tscore")?;
    for (q, r) in results {
        for (i, h) in r.hits.iter().enumerate() {
            writeln!(w, "{q}\t{}\t{}\t{}", i + 1, h.row, h.score)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn top_k_orders_and_flags() {
        let hits = vec![
            Hit { row: 3, score: -1.0 },
            Hit { row: 1, score: -1.0 },
            Hit { row: 0, score: -5.0 },
            Hit { row: 2, score: 0.5 },
        ];
        let r = top_k(hits.clone(), 3);
        assert_eq!(r.rows(), vec![2, 1, 3]);
        assert!(!r.truncated);
        let r = top_k(hits, 6);
        assert_eq!(r.rows(), vec![2, 1, 3, 0]);
        assert!(r.truncated);
    }

    #[test]
    fn tsv_layout() {
        let r = RetrievalResult {
            hits: vec![Hit { row: 7, score: -0.5 }],
            truncated: false,
        };
        let mut buf = Vec::new();
        write_results_tsv(&mut buf, &[("q0".into(), r)]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "query_id\trank\trow\tscore\nq0\t1\t7\t-0.5\n");
    }

    #[test]
    fn parallel_map_keeps_order() {
        let out = par_queries(50, 3, |i| i * 2);
        assert_eq!(out, (0..50).map(|i| i * 2).collect::<Vec<_>>());
    }
}
