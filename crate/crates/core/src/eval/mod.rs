//! Metrics and experiment protocols: identifier and length ablations, the
//! fresh-data protocol and the beam-width throughput sweep.

mod engine;
pub mod metrics;

use std::collections::HashMap;
use std::io::Write;
use std::time::Instant;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use engine::{assign_identifiers, scan_rows, scheme_vocab, Engine, EngineConfig};
pub use metrics::{
    average_precision, evaluate, map_at_100, mrr_at_k, pr_curve, precision_at_k, recall_at_k, MapSummary, MetricReport,
    PrPoint,
};

use crate::dataset::{LabeledDataset, Split};
use crate::error::{Error, Result};
use crate::identifiers::IdScheme;
use crate::search::{search_threads, RetrievalResult, SearchConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Cutoffs of precision and recall.
    pub ks: Vec<usize>,
    pub mrr_ks: Vec<usize>,
    /// Identifier schemes compared at the tokenizer's length.
    pub schemes: Vec<IdScheme>,
    /// Identifier lengths compared with semantic identifiers.
    pub lengths: Vec<usize>,
    /// Fraction of each class's gallery withheld from training.
    pub holdout_fraction: f64,
    pub bench_beams: Vec<usize>,
    pub bench_queries: usize,
    pub bench_repeats: usize,
    /// Seed of the held-out selection.
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            ks: vec![1, 10, 20, 30],
            mrr_ks: vec![1, 2, 4, 8],
            schemes: vec![IdScheme::Semantic, IdScheme::Random, IdScheme::Hkm],
            lengths: vec![2, 4, 6, 8],
            holdout_fraction: 0.5,
            bench_beams: vec![1, 10, 20, 30],
            bench_queries: 100,
            bench_repeats: 3,
            seed: 0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ks.contains(&0) {
            return Err(Error::config("eval.ks", "cutoffs must be at least 1"));
        }
        if self.mrr_ks.contains(&0) {
            return Err(Error::config("eval.mrr_ks", "cutoffs must be at least 1"));
        }
        if self.lengths.contains(&0) {
            return Err(Error::config("eval.lengths", "lengths must be at least 1"));
        }
        if self.bench_beams.contains(&0) {
            return Err(Error::config("eval.bench_beams", "beam widths must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(Error::config("eval.holdout_fraction", "must lie in [0, 1)"));
        }
        if self.bench_repeats == 0 {
            return Err(Error::config("eval.bench_repeats", "must be at least 1"));
        }
        Ok(())
    }
}

/// Scores results whose hits are dataset rows against the full gallery of `ds`.
pub fn score_results(ds: &LabeledDataset, queries: &[usize], results: &[RetrievalResult], cfg: &EvalConfig) -> MetricReport {
    let gallery = ds.indices(Split::Gallery);
    let (lists, query_labels, gallery_labels) = gallery_view(ds, &gallery, queries, results);
    evaluate(&lists, &query_labels, &gallery_labels, &cfg.ks, &cfg.mrr_ks)
}

/// Pooled precision/recall curve of `results` against the gallery of `ds`.
pub fn results_pr_curve(ds: &LabeledDataset, queries: &[usize], results: &[RetrievalResult]) -> Vec<PrPoint> {
    let gallery = ds.indices(Split::Gallery);
    let (lists, query_labels, gallery_labels) = gallery_view(ds, &gallery, queries, results);
    pr_curve(&lists, &query_labels, &gallery_labels)
}

fn gallery_view(
    ds: &LabeledDataset,
    gallery: &[usize],
    queries: &[usize],
    results: &[RetrievalResult],
) -> (Vec<Vec<usize>>, Vec<u32>, Vec<u32>) {
    let pos: HashMap<usize, usize> = gallery.iter().enumerate().map(|(i, &r)| (r, i)).collect();
    let lists = results
        .iter()
        .map(|r| r.hits.iter().map(|h| pos[&h.row]).collect())
        .collect();
    let labels = ds.labels();
    (
        lists,
        queries.iter().map(|&q| labels[q]).collect(),
        gallery.iter().map(|&g| labels[g]).collect(),
    )
}

/// Trains `scheme` on `ds` and scores it on the query split.
pub fn train_and_score(
    ds: &LabeledDataset,
    cfg: &EngineConfig,
    scheme: IdScheme,
    search: &SearchConfig,
    eval: &EvalConfig,
) -> Result<(Engine, MetricReport)> {
    let engine = Engine::train(ds, cfg, scheme)?;
    let queries = ds.indices(Split::Query);
    let results = engine.search_rows(&queries, search.beam_width, search.k, search_threads())?;
    let report = score_results(ds, &queries, &results, eval);
    Ok((engine, report))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub scheme: IdScheme,
    pub length: usize,
    pub metrics: MetricReport,
    pub train_seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn get(&self, scheme: IdScheme, length: usize) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.scheme == scheme && r.length == length)
    }

    /// One line per engine, one column per metric.
    pub fn write_tsv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let Some(first) = self.rows.first() else {
            return writeln!(w, "scheme\tlength");
        };
        let names: Vec<String> = first.metrics.columns().into_iter().map(|c| c.0).collect();
        writeln!(w, "scheme\tlength\t{}", names.join("\t"))?;
        for r in &self.rows {
            let vals: Vec<String> = r.metrics.columns().into_iter().map(|c| format!("{:.6}", c.1)).collect();
            writeln!(w, "{}\t{}\t{}", r.scheme, r.length, vals.join("\t"))?;
        }
        Ok(())
    }
}

/// The engine grid: every scheme in `eval.schemes` at the tokenizer's
/// length, then semantic identifiers at every other length in
/// `eval.lengths`. Lengths change `tokenizer.levels` (and the HKM depth).
pub fn run_ablation(
    ds: &LabeledDataset,
    cfg: &EngineConfig,
    search: &SearchConfig,
    eval: &EvalConfig,
) -> Result<AblationReport> {
    eval.validate()?;
    let base = cfg.tokenizer.levels;
    let mut plan: Vec<(IdScheme, usize)> = eval.schemes.iter().map(|&s| (s, base)).collect();
    for &m in &eval.lengths {
        if !plan.contains(&(IdScheme::Semantic, m)) {
            plan.push((IdScheme::Semantic, m));
        }
    }
    let mut report = AblationReport::default();
    for (scheme, length) in plan {
        let mut c = cfg.clone();
        if length != base {
            c.tokenizer.levels = length;
            c.identifiers.hkm.depth = length;
        }
        let (engine, metrics) = train_and_score(ds, &c, scheme, search, eval)?;
        info!("ablation {scheme} M={length}: P@1 {:?}", metrics.precision_at(1));
        report.rows.push(AblationRow {
            scheme,
            length,
            metrics,
            train_seconds: engine.train_seconds,
        });
    }
    Ok(report)
}

/// Per class, `round(fraction * gallery size)` gallery rows chosen at random.
pub fn holdout_rows(ds: &LabeledDataset, fraction: f64, seed: u64) -> Vec<usize> {
    let mut by_class: std::collections::BTreeMap<u32, Vec<usize>> = Default::default();
    for r in ds.indices(Split::Gallery) {
        by_class.entry(ds.labels()[r]).or_default().push(r);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for rows in by_class.values_mut() {
        rows.shuffle(&mut rng);
        let n = (fraction * rows.len() as f64).round() as usize;
        out.extend_from_slice(&rows[..n]);
    }
    out.sort_unstable();
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FreshDataReport {
    pub holdout_fraction: f64,
    pub heldout_rows: usize,
    /// Distinct identifiers before and after inserting the held-out rows.
    pub trie_ids_before: usize,
    pub trie_ids_after: usize,
    /// Held-out identifiers not already present in the trie.
    pub new_ids: usize,
    /// Engine trained with the whole gallery.
    pub full: MetricReport,
    /// Engine trained without the held-out rows, which are inserted afterwards.
    pub fresh: MetricReport,
    /// Exact scan over the whole gallery.
    pub scan: MetricReport,
}

impl FreshDataReport {
    pub fn write_tsv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "engine\tmetric\tvalue")?;
        for (name, m) in [("full", &self.full), ("fresh", &self.fresh), ("scan", &self.scan)] {
            for (col, v) in m.columns() {
                writeln!(w, "{name}\t{col}\t{v:.6}")?;
            }
        }
        Ok(())
    }
}

/// Fresh-data protocol with the fully trained semantic engine supplied (or
/// trained here when `None`).
pub fn fresh_data_protocol(
    ds: &LabeledDataset,
    cfg: &EngineConfig,
    search: &SearchConfig,
    eval: &EvalConfig,
    full: Option<&Engine>,
) -> Result<FreshDataReport> {
    eval.validate()?;
    let queries = ds.indices(Split::Query);
    let trained;
    let full = match full {
        Some(e) => e,
        None => {
            trained = Engine::train(ds, cfg, IdScheme::Semantic)?;
            &trained
        }
    };
    let run = |e: &Engine| -> Result<MetricReport> {
        let res = e.search_rows(&queries, search.beam_width, search.k, search_threads())?;
        Ok(score_results(ds, &queries, &res, eval))
    };
    let full_report = run(full)?;

    let held = holdout_rows(ds, eval.holdout_fraction, eval.seed);
    let mut splits = ds.splits().to_vec();
    for &r in &held {
        splits[r] = Split::Query;
    }
    let reduced = ds.with_splits(splits)?;
    let mut fresh = Engine::train(&reduced, cfg, IdScheme::Semantic)?;
    let before = fresh.distinct_ids();
    let known: std::collections::HashSet<_> = fresh.ids.iter().cloned().collect();
    fresh.insert(&held)?;
    let new_ids = fresh.ids[fresh.ids.len() - held.len()..]
        .iter()
        .filter(|id| !known.contains(*id))
        .collect::<std::collections::HashSet<_>>()
        .len();
    let after = fresh.distinct_ids();
    let fresh_report = run(&fresh)?;

    let scan = scan_rows(ds.embeddings(), &ds.indices(Split::Gallery), &queries, search.metric, search.k)?;
    Ok(FreshDataReport {
        holdout_fraction: eval.holdout_fraction,
        heldout_rows: held.len(),
        trie_ids_before: before,
        trie_ids_after: after,
        new_ids,
        full: full_report,
        fresh: fresh_report,
        scan: score_results(ds, &queries, &scan, eval),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub beam_width: usize,
    pub queries: usize,
    pub workers: usize,
    /// Best mean latency over the repeats.
    pub seconds_per_query: f64,
}

impl BenchRow {
    pub fn queries_per_second(&self) -> f64 {
        1.0 / self.seconds_per_query
    }
}

pub fn write_bench_tsv<W: Write>(mut w: W, rows: &[BenchRow]) -> std::io::Result<()> {
    writeln!(w, "beam_width\tqueries\tworkers\tms_per_query\tqueries_per_second")?;
    for r in rows {
        writeln!(
            w,
            "{}\t{}\t{}\t{:.4}\t{:.2}",
            r.beam_width,
            r.queries,
            r.workers,
            r.seconds_per_query * 1e3,
            r.queries_per_second()
        )?;
    }
    Ok(())
}

/// Single-worker beam-search latency per width over the first
/// `eval.bench_queries` query rows; the minimum over repeats is kept.
pub fn throughput_bench(engine: &Engine, queries: &[usize], beams: &[usize], k: usize, repeats: usize) -> Result<Vec<BenchRow>> {
    if queries.is_empty() {
        return Err(Error::InvalidArgument("no benchmark queries".into()));
    }
    let mut out = Vec::with_capacity(beams.len());
    for &w in beams {
        let mut best = f64::INFINITY;
        for _ in 0..repeats.max(1) {
            let t0 = Instant::now();
            for &q in queries {
                std::hint::black_box(engine.search_row(q, w, k)?);
            }
            best = best.min(t0.elapsed().as_secs_f64() / queries.len() as f64);
        }
        out.push(BenchRow {
            beam_width: w,
            queries: queries.len(),
            workers: 1,
            seconds_per_query: best,
        });
    }
    Ok(out)
}

/// `(x, y)` CSV of a curve.
pub fn write_curve_csv<W: Write>(mut w: W, x: &str, y: &str, points: &[(f64, f64)]) -> std::io::Result<()> {
    writeln!(w, "{x},{y}")?;
    for (a, b) in points {
        writeln!(w, "{a},{b}")?;
    }
    Ok(())
}
