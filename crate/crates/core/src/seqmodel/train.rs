use std::collections::{BTreeMap, HashMap};

use log::{debug, info, warn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ArScorer, ArShape, Context};
use crate::dataset::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::optim::{cosine_lr, AdamW, AdamWConfig};
use crate::trie::{Identifier, TokenVocabulary};

/// How the target `x_2` of a training query `x_1` is chosen.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairRule {
    /// Uniformly among target rows sharing the query's label, resampled
    /// every epoch.
    #[default]
    Class,
    /// The query row itself.
    Identity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArConfig {
    pub hidden: usize,
    pub blocks: usize,
    pub heads: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub pair_rule: PairRule,
    pub seed: u64,
}

impl Default for ArConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            blocks: 2,
            heads: 4,
            epochs: 30,
            learning_rate: 2e-3,
            batch_size: 32,
            weight_decay: 0.05,
            pair_rule: PairRule::Class,
            seed: 0,
        }
    }
}

impl ArConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("hidden", self.hidden),
            ("heads", self.heads),
            ("batch_size", self.batch_size),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(Error::config(format!("ar.{key}"), "must be at least 1"));
            }
        }
        if self.hidden % self.heads != 0 {
            return Err(Error::config("ar.heads", format!("must divide hidden width {}", self.hidden)));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config("ar.learning_rate", "must be positive"));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::config("ar.weight_decay", "must be non-negative"));
        }
        Ok(())
    }

    pub fn shape(&self, vocab: TokenVocabulary, input_dim: usize) -> ArShape {
        ArShape {
            levels: vocab.levels,
            codebook_size: vocab.codebook_size,
            input_dim,
            hidden: self.hidden,
            blocks: self.blocks,
            heads: self.heads,
        }
    }
}

/// Rows and identifiers the training pairs are drawn from.
#[derive(Clone, Copy, Debug)]
pub struct PairData<'a> {
    /// Conditioning vector of every row.
    pub features: &'a EmbeddingMatrix,
    pub labels: &'a [u32],
    /// Rows used as queries `x_1`.
    pub queries: &'a [usize],
    /// Rows that own an identifier and may serve as `x_2`.
    pub targets: &'a [usize],
    /// `ids[i]` is the identifier of row `targets[i]`.
    pub ids: &'a [Identifier],
    pub vocab: TokenVocabulary,
}

#[derive(Clone, Debug)]
pub struct TrainedScorer {
    pub scorer: ArScorer,
    /// Mean training NLL per epoch.
    pub loss_history: Vec<f64>,
}

/// Candidate target indices (into `targets`) for every usable query.
fn candidates(data: &PairData, rule: PairRule) -> Vec<(usize, Vec<usize>)> {
    let by_row: HashMap<usize, usize> = data.targets.iter().enumerate().map(|(i, &r)| (r, i)).collect();
    let mut by_class: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, &r) in data.targets.iter().enumerate() {
        by_class.entry(data.labels[r]).or_default().push(i);
    }
    let (mut fallback, mut skipped) = (0usize, 0usize);
    let mut out = Vec::with_capacity(data.queries.len());
    for &q in data.queries {
        let own = by_row.get(&q).map(|&i| vec![i]);
        let pool = match rule {
            PairRule::Class => by_class.get(&data.labels[q]).cloned().or_else(|| {
                fallback += own.is_some() as usize;
                own
            }),
            PairRule::Identity => own,
        };
        match pool {
            Some(p) => out.push((q, p)),
            None => skipped += 1,
        }
    }
    if fallback > 0 {
        info!("{fallback} queries without a same-class target train on their own identifier");
    }
    if skipped > 0 {
        warn!("{skipped} queries have no usable target and are skipped");
    }
    out
}

/// Teacher-forced training of a fresh scorer on sampled pairs.
pub fn train_ar(data: &PairData, cfg: &ArConfig) -> Result<TrainedScorer> {
    cfg.validate()?;
    if data.queries.is_empty() {
        return Err(Error::InvalidArgument("no training queries".into()));
    }
    if data.targets.len() != data.ids.len() {
        return Err(Error::Shape(format!(
            "{} target rows but {} identifiers",
            data.targets.len(),
            data.ids.len()
        )));
    }
    let n = data.features.n();
    if data.labels.len() != n || data.queries.iter().chain(data.targets).any(|&r| r >= n) {
        return Err(Error::Shape("pair rows or labels do not match the feature matrix".into()));
    }
    for (i, id) in data.ids.iter().enumerate() {
        data.vocab
            .check(id)
            .map_err(|reason| Error::InvalidRow { row: data.targets[i], reason })?;
    }
    let pool = candidates(data, cfg.pair_rule);
    if pool.is_empty() {
        return Err(Error::InvalidArgument("no query has a usable training target".into()));
    }

    let shape = cfg.shape(data.vocab, data.features.d());
    let mut scorer = ArScorer::new(shape, cfg.seed)?;
    let decay: Vec<bool> = scorer
        .tensors()
        .iter()
        .flat_map(|t| std::iter::repeat_n(t.decays(), t.len()))
        .collect();
    let mut opt = AdamW::new(
        AdamWConfig {
            weight_decay: cfg.weight_decay,
            ..Default::default()
        },
        decay,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_a7);
    let batches = pool.len().div_ceil(cfg.batch_size);
    let total = (cfg.epochs * batches) as u64;
    let mut order: Vec<usize> = (0..pool.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let pairs: Vec<(usize, usize)> = order
            .iter()
            .map(|&i| {
                let (q, ref c) = pool[i];
                (q, c[rng.random_range(0..c.len())])
            })
            .collect();
        let mut sum = 0.0;
        for batch in pairs.chunks(cfg.batch_size) {
            let ctxs: Vec<Context> = batch
                .iter()
                .map(|&(q, _)| scorer.condition(data.features.row(q)))
                .collect::<Result<_>>()?;
            let items: Vec<(&Context, &Identifier)> =
                ctxs.iter().zip(batch.iter().map(|&(_, t)| &data.ids[t])).collect();
            let (loss, grad) = scorer.batch_nll_and_grad(&items)?;
            sum += loss * batch.len() as f64;
            let grad: Vec<f64> = grad.into_iter().map(f64::from).collect();
            let lr = cosine_lr(cfg.learning_rate, opt.steps(), total);
            opt.step(scorer.params_mut(), &grad, lr);
        }
        let mean = sum / pairs.len() as f64;
        if !mean.is_finite() {
            return Err(Error::InvalidArgument(format!("training diverged at epoch {epoch}")));
        }
        debug!("ar epoch {epoch}: nll {mean:.4}");
        history.push(mean);
    }
    if let (Some(first), Some(last)) = (history.first(), history.last()) {
        info!("ar training: nll {first:.4} -> {last:.4} over {} epochs", history.len());
    }
    Ok(TrainedScorer {
        scorer,
        loss_history: history,
    })
}
