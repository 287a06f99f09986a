//! The full generative pipeline: tokenizer, identifiers, trie, scorer.

use std::collections::HashSet;
use std::time::Instant;

use log::info;

use crate::dataset::{EmbeddingMatrix, LabeledDataset, Split};
use crate::error::{Error, Result};
use crate::identifiers::{hkm_identifiers, random_identifiers, IdScheme, IdentifiersConfig};
use crate::search::{beam_search, linear_scan, par_queries, search_threads, Metric, RetrievalResult};
use crate::seqmodel::{train_ar, ArConfig, ArScorer, PairData};
use crate::tokenizer::{train_tokenizer, Tokenizer, TokenizerConfig};
use crate::trie::{IdTrie, Identifier, TokenVocabulary};

/// Everything needed to train one engine.
#[derive(Clone, Debug, PartialEq)]
pub struct EngineConfig {
    pub tokenizer: TokenizerConfig,
    pub identifiers: IdentifiersConfig,
    pub ar: ArConfig,
}

/// Identifier vocabulary of a scheme.
pub fn scheme_vocab(scheme: IdScheme, cfg: &EngineConfig) -> Result<TokenVocabulary> {
    match scheme {
        IdScheme::Semantic | IdScheme::Random => TokenVocabulary::new(cfg.tokenizer.levels, cfg.tokenizer.codebook_size),
        IdScheme::Hkm => TokenVocabulary::new(cfg.identifiers.hkm.depth, cfg.identifiers.hkm.branching),
    }
}

/// Identifiers of `rows` under `scheme`. `features` are encoder outputs.
pub fn assign_identifiers(
    scheme: IdScheme,
    cfg: &EngineConfig,
    tokenizer: &Tokenizer,
    features: &EmbeddingMatrix,
    rows: &[usize],
) -> Result<Vec<Identifier>> {
    match scheme {
        IdScheme::Semantic => rows
            .iter()
            .map(|&r| tokenizer.stack.encode(features.row(r)).map(|e| e.id))
            .collect(),
        IdScheme::Random => Ok(random_identifiers(
            rows.len(),
            cfg.tokenizer.levels,
            cfg.tokenizer.codebook_size,
            cfg.identifiers.random_seed,
        )),
        IdScheme::Hkm => hkm_identifiers(&features.select(rows)?, &cfg.identifiers.hkm),
    }
}

/// A trained engine over the gallery rows of a dataset.
#[derive(Clone, Debug)]
pub struct Engine {
    pub scheme: IdScheme,
    pub tokenizer: Tokenizer,
    /// Encoder output of every dataset row.
    pub features: EmbeddingMatrix,
    /// Dataset rows of the gallery, in trie-owner order.
    pub gallery: Vec<usize>,
    /// `ids[i]` names `gallery[i]`.
    pub ids: Vec<Identifier>,
    pub trie: IdTrie,
    pub scorer: ArScorer,
    pub ar_loss: Vec<f64>,
    pub train_seconds: f64,
}

impl Engine {
    /// Trains tokenizer and scorer on `ds`; the gallery split is indexed.
    pub fn train(ds: &LabeledDataset, cfg: &EngineConfig, scheme: IdScheme) -> Result<Self> {
        let t0 = Instant::now();
        let tok = train_tokenizer(ds, &cfg.tokenizer)?;
        let tokenizer = tok.tokenizer;
        let features = tokenizer.embed(ds.embeddings())?;
        let gallery = ds.indices(Split::Gallery);
        if gallery.is_empty() {
            return Err(Error::InvalidArgument("gallery split is empty".into()));
        }
        let ids = assign_identifiers(scheme, cfg, &tokenizer, &features, &gallery)?;
        let vocab = scheme_vocab(scheme, cfg)?;
        let owners: Vec<usize> = (0..gallery.len()).collect();
        let trie = IdTrie::build(vocab, &ids, &owners)?;

        let mut queries = ds.indices(Split::Train);
        queries.extend(&gallery);
        queries.sort_unstable();
        let pairs = PairData {
            features: &features,
            labels: ds.labels(),
            queries: &queries,
            targets: &gallery,
            ids: &ids,
            vocab,
        };
        let trained = train_ar(&pairs, &cfg.ar)?;
        let train_seconds = t0.elapsed().as_secs_f64();
        info!(
            "{scheme} engine: {} gallery rows, {} distinct ids, trained in {train_seconds:.1}s",
            gallery.len(),
            trie.num_leaves()
        );
        Ok(Self {
            scheme,
            tokenizer,
            features,
            gallery,
            ids,
            trie,
            scorer: trained.scorer,
            ar_loss: trained.loss_history,
            train_seconds,
        })
    }

    /// Reassembles an engine from saved artifacts. `features` must be the
    /// tokenizer's encoding of every dataset row.
    pub fn from_parts(
        scheme: IdScheme,
        tokenizer: Tokenizer,
        features: EmbeddingMatrix,
        gallery: Vec<usize>,
        ids: Vec<Identifier>,
        scorer: ArScorer,
    ) -> Result<Self> {
        if gallery.len() != ids.len() {
            return Err(Error::Shape(format!("{} gallery rows but {} identifiers", gallery.len(), ids.len())));
        }
        if let Some(&r) = gallery.iter().find(|&&r| r >= features.n()) {
            return Err(Error::InvalidRow {
                row: r,
                reason: format!("gallery row outside the {} dataset rows", features.n()),
            });
        }
        let owners: Vec<usize> = (0..gallery.len()).collect();
        let trie = IdTrie::build(scorer.vocab(), &ids, &owners)?;
        Ok(Self {
            scheme,
            tokenizer,
            features,
            gallery,
            ids,
            trie,
            scorer,
            ar_loss: Vec::new(),
            train_seconds: 0.0,
        })
    }

    /// Encodes `rows` with the frozen tokenizer and adds them to the gallery
    /// and the trie. The scorer is left untouched. Only the semantic scheme
    /// can index unseen rows.
    pub fn insert(&mut self, rows: &[usize]) -> Result<()> {
        if self.scheme != IdScheme::Semantic {
            return Err(Error::InvalidArgument(format!(
                "the {} scheme cannot encode new rows",
                self.scheme
            )));
        }
        for &r in rows {
            self.ids.push(self.tokenizer.stack.encode(self.features.row(r))?.id);
            self.gallery.push(r);
        }
        let owners: Vec<usize> = (0..self.gallery.len()).collect();
        self.trie = IdTrie::build(self.trie.vocab(), &self.ids, &owners)?;
        Ok(())
    }

    /// Distinct identifiers in the trie.
    pub fn distinct_ids(&self) -> usize {
        self.ids.iter().collect::<HashSet<_>>().len()
    }

    /// Beam search for one dataset row; hits are gallery positions.
    pub fn search_row(&self, row: usize, beam_width: usize, k: usize) -> Result<RetrievalResult> {
        let ctx = self.scorer.condition(self.features.row(row))?;
        beam_search(&self.scorer, &ctx, &self.trie, beam_width, k)
    }

    /// Searches every row of `queries`; hits are mapped to dataset rows.
    pub fn search_rows(&self, queries: &[usize], beam_width: usize, k: usize, threads: usize) -> Result<Vec<RetrievalResult>> {
        par_queries(queries.len(), threads, |i| self.search_row(queries[i], beam_width, k))
            .into_iter()
            .map(|r| r.map(|res| self.to_dataset_rows(res)))
            .collect()
    }

    fn to_dataset_rows(&self, mut r: RetrievalResult) -> RetrievalResult {
        for h in &mut r.hits {
            h.row = self.gallery[h.row];
        }
        r
    }
}

/// Exact scan over the gallery rows of `emb`; hits are dataset rows.
pub fn scan_rows(
    emb: &EmbeddingMatrix,
    gallery: &[usize],
    queries: &[usize],
    metric: Metric,
    k: usize,
) -> Result<Vec<RetrievalResult>> {
    let g = emb.select(gallery)?;
    par_queries(queries.len(), search_threads(), |i| linear_scan(emb.row(queries[i]), &g, metric, k))
        .into_iter()
        .map(|r| {
            r.map(|mut res| {
                for h in &mut res.hits {
                    h.row = gallery[h.row];
                }
                res
            })
        })
        .collect()
}
