//! Tokenizer objective and its gradients.
//!
//! ```text
//! L = CE(head(f)) + λ1 Σ_m CE(head(f̂_m)) + λ2 Σ_m ||f - sg[f̂_m]||²
//! f̂_m = Σ_{i<=m} c_{i,l_i}
//! ```
//!
//! Gradient routing: the head receives the gradient of every CE term. The
//! `CE(head(f̂_m))` terms reach the selected centroids directly and reach `f`
//! through the straight-through estimator (the gradient at `f̂_m` is copied
//! to `f`). The commitment terms treat `f̂_m` as a constant, so they only
//! produce gradient for `f`.

use crate::error::{Error, Result};
use crate::real::{log_softmax, relative_error, Precision, Real};

use super::{CodebookStack, SemanticHead, TokenizerConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    /// `CE(head(f))`.
    pub ce_embedding: f64,
    /// `CE(head(f̂_m))` for `m = 1..=M`, unweighted.
    pub ce_prefix: Vec<f64>,
    /// `||f - f̂_m||²` for `m = 1..=M`, unweighted.
    pub commitment: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossGrads<F> {
    pub head_weight: Vec<F>,
    pub head_bias: Vec<F>,
    pub embedding: Vec<F>,
    /// Same `M x L x d` layout as the codebook stack.
    pub books: Vec<F>,
}

pub(crate) struct Params<'a, F> {
    pub books: &'a [F],
    pub levels: usize,
    pub size: usize,
    pub dim: usize,
    pub head_w: &'a [F],
    pub head_b: &'a [F],
    pub classes: usize,
}

impl<F: Real> Params<'_, F> {
    fn logits(&self, z: &[F]) -> Vec<F> {
        (0..self.classes)
            .map(|c| {
                let w = &self.head_w[c * self.dim..(c + 1) * self.dim];
                self.head_b[c] + w.iter().zip(z).map(|(&a, &b)| a * b).sum::<F>()
            })
            .collect()
    }

    fn ce(&self, z: &[F], label: usize) -> f64 {
        -log_softmax(&self.logits(z))[label]
    }

    /// Adds `scale * d CE(head(z)) / d(w, b, z)` into the given buffers.
    fn ce_backward(&self, z: &[F], label: usize, scale: f64, gw: &mut [F], gb: &mut [F], gz: &mut [F]) {
        let lp = log_softmax(&self.logits(z));
        for (c, &l) in lp.iter().enumerate() {
            let delta = l.exp() - if c == label { 1.0 } else { 0.0 };
            let delta = F::of(scale * delta);
            gb[c] += delta;
            let w = &self.head_w[c * self.dim..(c + 1) * self.dim];
            let gwc = &mut gw[c * self.dim..(c + 1) * self.dim];
            for k in 0..self.dim {
                gwc[k] += delta * z[k];
                gz[k] += delta * w[k];
            }
        }
    }

    fn centroid(&self, m: usize, l: u32) -> &[F] {
        let off = (m * self.size + l as usize) * self.dim;
        &self.books[off..off + self.dim]
    }

    /// `f̂_m` for `m = 1..=M`.
    fn reconstructions(&self, tokens: &[u32]) -> Vec<Vec<F>> {
        let mut acc = vec![F::zero(); self.dim];
        tokens
            .iter()
            .enumerate()
            .map(|(m, &t)| {
                for (a, &c) in acc.iter_mut().zip(self.centroid(m, t)) {
                    *a += c;
                }
                acc.clone()
            })
            .collect()
    }
}

fn sq_diff<F: Real>(a: &[F], b: &[F]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x - y).f64().powi(2)).sum()
}

pub(crate) fn loss_and_grad<F: Real>(
    p: &Params<F>,
    f: &[F],
    tokens: &[u32],
    label: usize,
    lambda1: f64,
    lambda2: f64,
) -> (LossBreakdown, LossGrads<F>) {
    let mut g = LossGrads {
        head_weight: vec![F::zero(); p.head_w.len()],
        head_bias: vec![F::zero(); p.head_b.len()],
        embedding: vec![F::zero(); p.dim],
        books: vec![F::zero(); p.books.len()],
    };
    let ce_embedding = p.ce(f, label);
    p.ce_backward(f, label, 1.0, &mut g.head_weight, &mut g.head_bias, &mut g.embedding);

    let recon = p.reconstructions(tokens);
    let mut ce_prefix = Vec::with_capacity(p.levels);
    let mut commitment = Vec::with_capacity(p.levels);
    let mut gz = vec![F::zero(); p.dim];
    for (m, z) in recon.iter().enumerate() {
        ce_prefix.push(p.ce(z, label));
        gz.iter_mut().for_each(|v| *v = F::zero());
        p.ce_backward(z, label, lambda1, &mut g.head_weight, &mut g.head_bias, &mut gz);
        for (i, &t) in tokens[..=m].iter().enumerate() {
            let off = (i * p.size + t as usize) * p.dim;
            for (gb, &v) in g.books[off..off + p.dim].iter_mut().zip(&gz) {
                *gb += v;
            }
        }
        // straight-through: the gradient at f̂_m is copied onto f
        let two_l2 = F::of(2.0 * lambda2);
        for k in 0..p.dim {
            g.embedding[k] += gz[k] + two_l2 * (f[k] - z[k]);
        }
        commitment.push(sq_diff(f, z));
    }
    let total = ce_embedding
        + lambda1 * ce_prefix.iter().sum::<f64>()
        + lambda2 * commitment.iter().sum::<f64>();
    (
        LossBreakdown {
            total,
            ce_embedding,
            ce_prefix,
            commitment,
        },
        g,
    )
}

/// Loss value with fixed tokens and the commitment targets held at `frozen`.
fn loss_value<F: Real>(
    p: &Params<F>,
    f: &[F],
    tokens: &[u32],
    label: usize,
    lambda1: f64,
    lambda2: f64,
    frozen: &[Vec<F>],
) -> f64 {
    let recon = p.reconstructions(tokens);
    let mut total = p.ce(f, label);
    for (z, zf) in recon.iter().zip(frozen) {
        total += lambda1 * p.ce(z, label) + lambda2 * sq_diff(f, zf);
    }
    total
}

fn validate(stack: &CodebookStack, head: &SemanticHead, f: &[f32], label: usize) -> Result<()> {
    if f.len() != stack.dim() || head.dim != stack.dim() {
        return Err(Error::Shape(format!(
            "embedding {}, codebooks {} and head {} dimensions differ",
            f.len(),
            stack.dim(),
            head.dim
        )));
    }
    if label >= head.classes {
        return Err(Error::InvalidArgument(format!(
            "label {label} >= {} classes",
            head.classes
        )));
    }
    Ok(())
}

fn widen(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

/// Tokenizer objective at `f`, with tokens from residual quantization.
pub fn tokenizer_loss(
    stack: &CodebookStack,
    head: &SemanticHead,
    f: &[f32],
    label: usize,
    cfg: &TokenizerConfig,
) -> Result<LossBreakdown> {
    tokenizer_loss_grad(stack, head, f, label, cfg).map(|(l, _)| l)
}

/// Objective and gradients, computed in `f64`.
pub fn tokenizer_loss_grad(
    stack: &CodebookStack,
    head: &SemanticHead,
    f: &[f32],
    label: usize,
    cfg: &TokenizerConfig,
) -> Result<(LossBreakdown, LossGrads<f64>)> {
    validate(stack, head, f, label)?;
    let books = widen(stack.as_slice());
    let hw = widen(&head.weight);
    let hb = widen(&head.bias);
    let fv = widen(f);
    let tokens = stack.tokens_f64(&fv);
    let p = Params {
        books: &books,
        levels: stack.levels(),
        size: stack.size(),
        dim: stack.dim(),
        head_w: &hw,
        head_b: &hb,
        classes: head.classes,
    };
    Ok(loss_and_grad(&p, &fv, &tokens, label, cfg.lambda1, cfg.lambda2))
}

/// Largest relative error per parameter group between analytic gradients and
/// central finite differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub head: f64,
    pub books: f64,
    /// `f`, with the straight-through contribution taken from finite
    /// differences of `CE(head(z))` at `z = f̂_m`.
    pub embedding: f64,
    /// Gradient of the prefix CE with respect to `f` versus the gradient of
    /// `CE(head(z))` at `z = f̂_m` (max absolute difference).
    pub straight_through: f64,
    pub max_rel_error: f64,
    pub parameters: usize,
}

/// Compares [`tokenizer_loss_grad`] with central finite differences in the
/// requested precision. Tokens are those of the unperturbed `f`.
pub fn grad_check(
    stack: &CodebookStack,
    head: &SemanticHead,
    f: &[f32],
    label: usize,
    lambda1: f64,
    lambda2: f64,
    precision: Precision,
) -> Result<GradCheckReport> {
    validate(stack, head, f, label)?;
    Ok(match precision {
        Precision::F32 => check::<f32>(stack, head, f, label, lambda1, lambda2, precision),
        Precision::F64 => check::<f64>(stack, head, f, label, lambda1, lambda2, precision),
    })
}

fn check<F: Real>(
    stack: &CodebookStack,
    head: &SemanticHead,
    f: &[f32],
    label: usize,
    lambda1: f64,
    lambda2: f64,
    precision: Precision,
) -> GradCheckReport {
    let cast = |v: &[f32]| v.iter().map(|&x| F::of(x as f64)).collect::<Vec<F>>();
    let mut books = cast(stack.as_slice());
    let mut hw = cast(&head.weight);
    let mut hb = cast(&head.bias);
    let mut fv = cast(f);
    let tokens = stack.tokens_f64(&widen(f));
    let h = precision.fd_step();
    let (levels, size, dim, classes) = (stack.levels(), stack.size(), stack.dim(), head.classes);

    let (_, analytic) = {
        let p = Params { books: &books, levels, size, dim, head_w: &hw, head_b: &hb, classes };
        loss_and_grad(&p, &fv, &tokens, label, lambda1, lambda2)
    };
    let frozen = Params { books: &books, levels, size, dim, head_w: &hw, head_b: &hb, classes }
        .reconstructions(&tokens);

    // central difference on one coordinate of one of the buffers
    macro_rules! central {
        ($buf:ident, $i:expr, $eval:expr) => {{
            let orig = $buf[$i];
            $buf[$i] = orig + F::of(h);
            let up = $buf[$i];
            let lp = $eval;
            $buf[$i] = orig - F::of(h);
            let down = $buf[$i];
            let lm = $eval;
            $buf[$i] = orig;
            (lp - lm) / (up - down).f64()
        }};
    }
    macro_rules! full_loss {
        () => {{
            let p = Params { books: &books, levels, size, dim, head_w: &hw, head_b: &hb, classes };
            loss_value(&p, &fv, &tokens, label, lambda1, lambda2, &frozen)
        }};
    }

    let mut head_err = 0f64;
    for i in 0..hw.len() {
        let num = central!(hw, i, full_loss!());
        head_err = head_err.max(relative_error(analytic.head_weight[i].f64(), num));
    }
    for i in 0..hb.len() {
        let num = central!(hb, i, full_loss!());
        head_err = head_err.max(relative_error(analytic.head_bias[i].f64(), num));
    }
    let mut books_err = 0f64;
    for i in 0..books.len() {
        let num = central!(books, i, full_loss!());
        books_err = books_err.max(relative_error(analytic.books[i].f64(), num));
    }

    // Numeric gradient of f: the direct terms by finite differences in f, the
    // straight-through terms by finite differences of CE(head(z)) at f̂_m.
    let mut ste_numeric = vec![0f64; dim];
    let mut z_err = 0f64;
    for zm in &frozen {
        let mut z = zm.clone();
        let mut analytic_z = vec![F::zero(); dim];
        let mut sink_w = vec![F::zero(); hw.len()];
        let mut sink_b = vec![F::zero(); hb.len()];
        let p = Params { books: &books, levels, size, dim, head_w: &hw, head_b: &hb, classes };
        p.ce_backward(zm, label, 1.0, &mut sink_w, &mut sink_b, &mut analytic_z);
        for k in 0..dim {
            let num = central!(z, k, p.ce(&z, label));
            ste_numeric[k] += lambda1 * num;
            z_err = z_err.max(relative_error(analytic_z[k].f64(), num));
        }
    }
    let mut emb_err = 0f64;
    for k in 0..dim {
        let direct = central!(fv, k, {
            let p = Params { books: &books, levels, size, dim, head_w: &hw, head_b: &hb, classes };
            loss_value(&p, &fv, &tokens, label, 0.0, lambda2, &frozen)
        });
        emb_err = emb_err.max(relative_error(
            analytic.embedding[k].f64(),
            direct + ste_numeric[k],
        ));
    }

    GradCheckReport {
        head: head_err,
        books: books_err,
        embedding: emb_err,
        straight_through: z_err,
        max_rel_error: head_err.max(books_err).max(emb_err).max(z_err),
        parameters: hw.len() + hb.len() + books.len() + dim,
    }
}

/// `(f̂_m, ∇_z CE(head(z)) at z = f̂_m)` for every level.
#[cfg(test)]
fn straight_through_grads(
    stack: &CodebookStack,
    head: &SemanticHead,
    f: &[f32],
    label: usize,
) -> Vec<(Vec<f64>, Vec<f64>)> {
    let books = widen(stack.as_slice());
    let hw = widen(&head.weight);
    let hb = widen(&head.bias);
    let fv = widen(f);
    let tokens = stack.tokens_f64(&fv);
    let p = Params {
        books: &books,
        levels: stack.levels(),
        size: stack.size(),
        dim: stack.dim(),
        head_w: &hw,
        head_b: &hb,
        classes: head.classes,
    };
    let recon = p.reconstructions(&tokens);
    let mut out = Vec::new();
    for m in 0..stack.levels() {
        let mut sink_w = vec![0.0; hw.len()];
        let mut sink_b = vec![0.0; hb.len()];
        let mut direct = vec![0.0; stack.dim()];
        p.ce_backward(&recon[m], label, 1.0, &mut sink_w, &mut sink_b, &mut direct);
        out.push((recon[m].clone(), direct));
    }
    out
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn instance(seed: u64, m: usize, l: usize, d: usize, c: usize) -> (CodebookStack, SemanticHead, Vec<f32>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut u = |s: f32| rng.random_range(-s..s);
        let books = (0..m * l * d).map(|_| u(1.0)).collect();
        let stack = CodebookStack::new(m, l, d, books).unwrap();
        let head = SemanticHead::new(
            c,
            d,
            (0..c * d).map(|_| u(0.8)).collect(),
            (0..c).map(|_| u(0.3)).collect(),
        )
        .unwrap();
        let f = (0..d).map(|_| u(1.5)).collect();
        (stack, head, f)
    }

    fn cfg(l1: f64, l2: f64) -> TokenizerConfig {
        TokenizerConfig {
            lambda1: l1,
            lambda2: l2,
            ..Default::default()
        }
    }

    #[test]
    fn degenerate_weights_give_plain_cross_entropy() {
        let (stack, head, f) = instance(1, 3, 4, 5, 3);
        let loss = tokenizer_loss(&stack, &head, &f, 2, &cfg(0.0, 0.0)).unwrap();
        // softmax CE computed by hand
        let logits: Vec<f64> = (0..3)
            .map(|c| {
                head.bias[c] as f64
                    + (0..5).map(|k| head.weight[c * 5 + k] as f64 * f[k] as f64).sum::<f64>()
            })
            .collect();
        let lse = logits.iter().map(|v| v.exp()).sum::<f64>().ln();
        assert!((loss.total - (lse - logits[2])).abs() < 1e-6);
    }

    #[test]
    fn zero_head_gives_ln2_everywhere() {
        let (stack, _, f) = instance(2, 3, 4, 5, 2);
        let head = SemanticHead::zeros(2, 5);
        let loss = tokenizer_loss(&stack, &head, &f, 1, &cfg(1.0, 0.25)).unwrap();
        let ln2 = std::f64::consts::LN_2;
        assert!((loss.ce_embedding - ln2).abs() < 1e-12);
        assert!(loss.ce_prefix.iter().all(|&v| (v - ln2).abs() < 1e-12));
    }

    #[test]
    fn label_out_of_range() {
        let (stack, head, f) = instance(3, 2, 4, 5, 3);
        assert!(tokenizer_loss(&stack, &head, &f, 3, &cfg(1.0, 0.25)).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..5 {
            let (stack, head, f) = instance(10 + seed, 3, 4, 5, 4);
            let r64 = grad_check(&stack, &head, &f, 1, 1.0, 0.25, Precision::F64).unwrap();
            assert!(r64.max_rel_error <= 1e-5, "{r64:?}");
            let r32 = grad_check(&stack, &head, &f, 1, 1.0, 0.25, Precision::F32).unwrap();
            assert!(r32.max_rel_error <= 1e-3, "{r32:?}");
        }
    }

    #[test]
    fn straight_through_identity() {
        let (stack, head, f) = instance(5, 3, 4, 5, 4);
        // with λ1 = 1 and λ2 = 0 the f-gradient is the CE(f) gradient plus the
        // gradients of CE(head(z)) at every f̂_m
        let (_, g) = tokenizer_loss_grad(&stack, &head, &f, 0, &cfg(1.0, 0.0)).unwrap();
        let (_, base) = tokenizer_loss_grad(&stack, &head, &f, 0, &cfg(0.0, 0.0)).unwrap();
        let ste = straight_through_grads(&stack, &head, &f, 0);
        for k in 0..5 {
            let expected = base.embedding[k] + ste.iter().map(|(_, gz)| gz[k]).sum::<f64>();
            assert!((g.embedding[k] - expected).abs() <= 1e-12 * expected.abs().max(1.0));
        }
    }

    #[test]
    fn commitment_gradient_flows_to_f_only() {
        let (stack, head, f) = instance(6, 2, 4, 5, 3);
        let (_, with) = tokenizer_loss_grad(&stack, &head, &f, 0, &cfg(0.0, 0.7)).unwrap();
        let (_, without) = tokenizer_loss_grad(&stack, &head, &f, 0, &cfg(0.0, 0.0)).unwrap();
        assert_eq!(with.books, without.books);
        assert_eq!(with.head_weight, without.head_weight);
        assert_ne!(with.embedding, without.embedding);
    }
}
