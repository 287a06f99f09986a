use log::{debug, info, warn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{LabeledDataset, Split};
use crate::error::{Error, Result};
use crate::kmeans;
use crate::optim::{cosine_lr, AdamW, AdamWConfig};

use super::loss::{loss_and_grad, Params};
use super::{CodebookStack, Encoder, SemanticHead, Tokenizer};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TokenizerConfig {
    /// Identifier length `M`.
    pub levels: usize,
    /// Entries per codebook `L`.
    pub codebook_size: usize,
    /// Weight of the prefix-reconstruction classification terms.
    pub lambda1: f64,
    /// Weight of the commitment terms.
    pub lambda2: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Learning rate of the stand-in encoder relative to the head.
    pub encoder_lr_scale: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Lloyd iterations per codebook refresh.
    pub kmeans_iters: usize,
    /// Train an affine encoder (identity-initialised) in front of the quantizer.
    pub linear_encoder: bool,
    /// Keep the initial codebooks; only the head and encoder are trained.
    pub freeze_codebooks: bool,
    pub seed: u64,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        Self {
            levels: 4,
            codebook_size: 256,
            lambda1: 1.0,
            lambda2: 0.25,
            epochs: 20,
            learning_rate: 5e-3,
            encoder_lr_scale: 0.1,
            weight_decay: 0.05,
            batch_size: 64,
            kmeans_iters: 5,
            linear_encoder: true,
            freeze_codebooks: false,
            seed: 0,
        }
    }
}

impl TokenizerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, reason: &str| Err(Error::config(format!("tokenizer.{key}"), reason));
        if self.levels == 0 {
            return bad("levels", "must be >= 1");
        }
        if self.codebook_size < 2 {
            return bad("codebook_size", "must be >= 2");
        }
        if !(self.lambda1 >= 0.0) {
            return bad("lambda1", "must be >= 0");
        }
        if !(self.lambda2 >= 0.0) {
            return bad("lambda2", "must be >= 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be >= 1");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate", "must be > 0");
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrainedTokenizer {
    pub tokenizer: Tokenizer,
    /// Mean objective over the training rows, per epoch.
    pub loss_log: Vec<f64>,
    /// Empty clusters re-seeded across all codebook refreshes.
    pub reseeded: usize,
}

/// Trains codebooks, head and (optionally) the linear encoder on the train split.
pub fn train_tokenizer(dataset: &LabeledDataset, cfg: &TokenizerConfig) -> Result<TrainedTokenizer> {
    cfg.validate()?;
    let rows = dataset.indices(Split::Train);
    if rows.is_empty() {
        return Err(Error::InvalidArgument("train split is empty".into()));
    }
    let classes = dataset.num_classes();
    if classes < 2 {
        return Err(Error::InvalidArgument(format!(
            "semantic supervision needs at least 2 classes, got {classes}"
        )));
    }
    let emb = dataset.embeddings();
    let d = emb.d();
    let labels = dataset.labels();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut encoder = if cfg.linear_encoder {
        Encoder::linear_identity(d)
    } else {
        Encoder::Identity { dim: d }
    };
    let mut head = SemanticHead::zeros(classes, d);
    for w in &mut head.weight {
        *w = rng.random_range(-0.01f32..0.01);
    }

    let encode_all = |enc: &Encoder| -> Vec<f64> {
        rows.iter().flat_map(|&r| enc.forward_f64(emb.row(r))).collect()
    };
    let mut stack = CodebookStack::zeros(cfg.levels, cfg.codebook_size, d);
    let mut reseeded = init_codebooks(&mut stack, &encode_all(&encoder), cfg.kmeans_iters, &mut rng);

    let adam = AdamWConfig {
        weight_decay: cfg.weight_decay,
        ..Default::default()
    };
    let head_decay: Vec<bool> = (0..classes * d).map(|_| true).chain((0..classes).map(|_| false)).collect();
    let mut head_opt = AdamW::new(adam, head_decay);
    let mut enc_opt = AdamW::new(adam, (0..d * d).map(|_| true).chain((0..d).map(|_| false)).collect());
    let steps_per_epoch = rows.len().div_ceil(cfg.batch_size) as u64;
    let total_steps = steps_per_epoch * cfg.epochs as u64;

    let mut order = rows.clone();
    let mut loss_log = Vec::with_capacity(cfg.epochs);
    let mut step = 0u64;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let books: Vec<f64> = stack.as_slice().iter().map(|&v| v as f64).collect();
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let hw: Vec<f64> = head.weight.iter().map(|&v| v as f64).collect();
            let hb: Vec<f64> = head.bias.iter().map(|&v| v as f64).collect();
            let params = Params {
                books: &books,
                levels: cfg.levels,
                size: cfg.codebook_size,
                dim: d,
                head_w: &hw,
                head_b: &hb,
                classes,
            };
            let mut g_head = vec![0f64; classes * d + classes];
            let mut g_enc = vec![0f64; d * d + d];
            for &r in batch {
                let x = emb.row(r);
                let f = encoder.forward_f64(x);
                let tokens = stack.tokens_f64(&f);
                let (loss, g) = loss_and_grad(&params, &f, &tokens, labels[r] as usize, cfg.lambda1, cfg.lambda2);
                epoch_loss += loss.total;
                for (a, b) in g_head.iter_mut().zip(g.head_weight.iter().chain(&g.head_bias)) {
                    *a += b;
                }
                if cfg.linear_encoder {
                    for (o, &gf) in g.embedding.iter().enumerate() {
                        for (i, &xi) in x.iter().enumerate() {
                            g_enc[o * d + i] += gf * xi as f64;
                        }
                        g_enc[d * d + o] += gf;
                    }
                }
            }
            let scale = 1.0 / batch.len() as f64;
            g_head.iter_mut().for_each(|g| *g *= scale);
            let lr = cosine_lr(cfg.learning_rate, step, total_steps);
            step += 1;

            let mut flat: Vec<f32> = head.weight.iter().chain(&head.bias).copied().collect();
            head_opt.step(&mut flat, &g_head, lr);
            let (w, b) = flat.split_at(classes * d);
            head.weight.copy_from_slice(w);
            head.bias.copy_from_slice(b);

            if let Encoder::Linear { weight, bias, .. } = &mut encoder {
                g_enc.iter_mut().for_each(|g| *g *= scale);
                let mut flat: Vec<f32> = weight.iter().chain(bias.iter()).copied().collect();
                enc_opt.step(&mut flat, &g_enc, lr * cfg.encoder_lr_scale);
                let (w, b) = flat.split_at(d * d);
                weight.copy_from_slice(w);
                bias.copy_from_slice(b);
            }
        }
        let mean = epoch_loss / rows.len() as f64;
        debug!("tokenizer epoch {epoch}: loss {mean:.5}");
        loss_log.push(mean);
        if !cfg.freeze_codebooks {
            reseeded += refresh_codebooks(&mut stack, &encode_all(&encoder), cfg.kmeans_iters);
        }
    }
    if let Some(last) = loss_log.last() {
        info!("tokenizer trained: {} epochs, final loss {last:.5}", cfg.epochs);
    }
    Ok(TrainedTokenizer {
        tokenizer: Tokenizer {
            encoder,
            stack,
            head,
        },
        loss_log,
        reseeded,
    })
}

/// Level-by-level k-means++ and Lloyd on the residuals left by earlier levels.
fn init_codebooks<R: Rng>(stack: &mut CodebookStack, fs: &[f64], iters: usize, rng: &mut R) -> usize {
    let d = stack.dim();
    let mut residual = fs.to_vec();
    let mut reseeded = 0;
    for m in 0..stack.levels() {
        let km = kmeans::kmeans(&residual, d, stack.size(), iters, rng);
        if km.degenerate {
            warn!(
                "level {m}: fewer distinct residuals than {} centroids; duplicates drawn at random",
                stack.size()
            );
        }
        reseeded += km.reseeded;
        stack.level_mut(m).copy_from_slice(&km.centroids);
        subtract_assigned(&mut residual, d, &km.centroids, &km.assignments);
    }
    reseeded
}

/// Lloyd iterations on each level's current residuals, starting from the
/// current centroids. Later levels see the residuals of the refreshed
/// earlier levels.
fn refresh_codebooks(stack: &mut CodebookStack, fs: &[f64], iters: usize) -> usize {
    let d = stack.dim();
    let mut residual = fs.to_vec();
    let mut reseeded = 0;
    for m in 0..stack.levels() {
        let mut centroids = stack.level(m).to_vec();
        let km = kmeans::lloyd(&residual, d, &mut centroids, iters);
        reseeded += km.reseeded;
        stack.level_mut(m).copy_from_slice(&km.centroids);
        subtract_assigned(&mut residual, d, &km.centroids, &km.assignments);
    }
    reseeded
}

fn subtract_assigned(residual: &mut [f64], d: usize, centroids: &[f32], assignments: &[u32]) {
    for (r, &a) in residual.chunks_exact_mut(d).zip(assignments) {
        let c = &centroids[a as usize * d..(a as usize + 1) * d];
        for (x, &v) in r.iter_mut().zip(c) {
            *x -= v as f64;
        }
    }
}
