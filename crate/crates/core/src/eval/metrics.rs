//! Label-match retrieval metrics.
//!
//! A result is a ranked list of row indices into `labels`; a row is relevant
//! when its label equals the query label. Lists shorter than `k` are scored
//! over the rows available.

use serde::{Deserialize, Serialize};

fn hits_in(rows: &[usize], query_label: u32, labels: &[u32], k: usize) -> usize {
    rows.iter().take(k).filter(|&&r| labels[r] == query_label).count()
}

/// Fraction of the top `k` (or all, if fewer) rows sharing the query label.
pub fn precision_at_k(rows: &[usize], query_label: u32, labels: &[u32], k: usize) -> f64 {
    let n = rows.len().min(k);
    if n == 0 {
        return 0.0;
    }
    hits_in(rows, query_label, labels, k) as f64 / n as f64
}

/// 1 if any of the top `k` rows shares the query label.
pub fn recall_at_k(rows: &[usize], query_label: u32, labels: &[u32], k: usize) -> f64 {
    if hits_in(rows, query_label, labels, k) > 0 {
        1.0
    } else {
        0.0
    }
}

/// Reciprocal rank of the first relevant row within the top `k`, else 0.
pub fn mrr_at_k(rows: &[usize], query_label: u32, labels: &[u32], k: usize) -> f64 {
    rows.iter()
        .take(k)
        .position(|&r| labels[r] == query_label)
        .map_or(0.0, |p| 1.0 / (p + 1) as f64)
}

/// Average precision over the top `cutoff` rows with denominator
/// `min(cutoff, relevant)`. `None` when the gallery has no relevant row.
pub fn average_precision(rows: &[usize], query_label: u32, labels: &[u32], relevant: usize, cutoff: usize) -> Option<f64> {
    if relevant == 0 {
        return None;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, &r) in rows.iter().take(cutoff).enumerate() {
        if labels[r] == query_label {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Some(sum / relevant.min(cutoff) as f64)
}

/// Relevant gallery rows per label.
pub fn relevant_counts(labels: &[u32]) -> std::collections::HashMap<u32, usize> {
    let mut m = std::collections::HashMap::new();
    for &l in labels {
        *m.entry(l).or_insert(0) += 1;
    }
    m
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapSummary {
    pub map: f64,
    /// Queries that entered the mean.
    pub evaluated: usize,
    /// Queries with no relevant gallery row.
    pub excluded: usize,
}

/// Mean average precision at 100 over queries with at least one relevant row.
pub fn map_at_100(results: &[Vec<usize>], query_labels: &[u32], labels: &[u32]) -> MapSummary {
    let counts = relevant_counts(labels);
    let (mut sum, mut evaluated, mut excluded) = (0.0, 0usize, 0usize);
    for (rows, &q) in results.iter().zip(query_labels) {
        match average_precision(rows, q, labels, counts.get(&q).copied().unwrap_or(0), 100) {
            Some(ap) => {
                sum += ap;
                evaluated += 1;
            }
            None => excluded += 1,
        }
    }
    MapSummary {
        map: if evaluated > 0 { sum / evaluated as f64 } else { 0.0 },
        evaluated,
        excluded,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub cutoff: usize,
    /// True positive rate.
    pub recall: f64,
    pub precision: f64,
}

/// Pooled precision/recall at every rank cutoff `1..=max result length`.
/// True positives, false positives and false negatives are summed over
/// queries that have at least one relevant row.
pub fn pr_curve(results: &[Vec<usize>], query_labels: &[u32], labels: &[u32]) -> Vec<PrPoint> {
    let counts = relevant_counts(labels);
    let used: Vec<(&Vec<usize>, u32, usize)> = results
        .iter()
        .zip(query_labels)
        .filter_map(|(r, &q)| counts.get(&q).map(|&c| (r, q, c)))
        .collect();
    let max_len = used.iter().map(|(r, _, _)| r.len()).max().unwrap_or(0);
    let total_relevant: usize = used.iter().map(|(_, _, c)| c).sum();
    let mut tp = 0usize;
    let mut retrieved = 0usize;
    let mut out = Vec::with_capacity(max_len);
    for c in 0..max_len {
        for (rows, q, _) in &used {
            if let Some(&r) = rows.get(c) {
                retrieved += 1;
                tp += (labels[r] == *q) as usize;
            }
        }
        out.push(PrPoint {
            cutoff: c + 1,
            recall: tp as f64 / total_relevant as f64,
            precision: if retrieved > 0 { tp as f64 / retrieved as f64 } else { 0.0 },
        });
    }
    out
}

/// Dataset-level metrics of one engine on one query set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub queries: usize,
    /// Queries whose result list was shorter than the largest `k`.
    pub short_results: usize,
    pub precision: Vec<(usize, f64)>,
    pub recall: Vec<(usize, f64)>,
    pub mrr: Vec<(usize, f64)>,
    pub map100: MapSummary,
}

impl MetricReport {
    pub fn precision_at(&self, k: usize) -> Option<f64> {
        self.precision.iter().find(|p| p.0 == k).map(|p| p.1)
    }

    pub fn recall_at(&self, k: usize) -> Option<f64> {
        self.recall.iter().find(|p| p.0 == k).map(|p| p.1)
    }

    pub fn mrr_at(&self, k: usize) -> Option<f64> {
        self.mrr.iter().find(|p| p.0 == k).map(|p| p.1)
    }

    /// `(name, value)` pairs in a fixed column order.
    pub fn columns(&self) -> Vec<(String, f64)> {
        let mut out = Vec::new();
        out.extend(self.precision.iter().map(|(k, v)| (format!("P@{k}"), *v)));
        out.extend(self.recall.iter().map(|(k, v)| (format!("R@{k}"), *v)));
        out.extend(self.mrr.iter().map(|(k, v)| (format!("MRR@{k}"), *v)));
        out.push(("MAP@100".into(), self.map100.map));
        out
    }
}

/// Means of every metric over queries, accumulated in query order.
pub fn evaluate(results: &[Vec<usize>], query_labels: &[u32], labels: &[u32], ks: &[usize], mrr_ks: &[usize]) -> MetricReport {
    assert_eq!(results.len(), query_labels.len(), "one result list per query");
    let n = results.len();
    let mean = |f: &dyn Fn(&[usize], u32) -> f64| {
        if n == 0 {
            return 0.0;
        }
        results.iter().zip(query_labels).map(|(r, &q)| f(r, q)).sum::<f64>() / n as f64
    };
    let max_k = ks.iter().chain(mrr_ks).copied().max().unwrap_or(0);
    MetricReport {
        queries: n,
        short_results: results.iter().filter(|r| r.len() < max_k).count(),
        precision: ks.iter().map(|&k| (k, mean(&|r, q| precision_at_k(r, q, labels, k)))).collect(),
        recall: ks.iter().map(|&k| (k, mean(&|r, q| recall_at_k(r, q, labels, k)))).collect(),
        mrr: mrr_ks.iter().map(|&k| (k, mean(&|r, q| mrr_at_k(r, q, labels, k)))).collect(),
        map100: map_at_100(results, query_labels, labels),
    }
}
