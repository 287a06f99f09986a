use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::layers::{
    attend, attend_backward, axpy, dot, gelu, gelu_grad, layer_norm, layer_norm_backward, linear,
    linear_backward, NormTrace,
};
use super::{ArShape, Layout, Lin, ParamTensor, Role};
use crate::error::{Error, Result};
use crate::real::{log_softmax, Real};
use crate::trie::{Identifier, TokenVocabulary};

/// Examples per gradient-accumulation chunk. Fixed so batch gradients do not
/// depend on the number of worker threads.
const CHUNK: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct ArScorer<F = f32> {
    shape: ArShape,
    layout: Layout,
    params: Vec<F>,
}

impl PartialEq for Layout {
    fn eq(&self, other: &Self) -> bool {
        self.tensors == other.tensors
    }
}

/// Projected conditioning vectors plus the per-block cross-attention keys
/// and values derived from them.
#[derive(Clone, Debug)]
pub struct Context<F = f32> {
    input: Vec<F>,
    rows: usize,
    projected: Vec<F>,
    keys: Vec<Vec<F>>,
    values: Vec<Vec<F>>,
}

impl<F: Real> Context<F> {
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Conditioning vectors after the input projection, `rows x hidden`.
    pub fn projected(&self) -> &[F] {
        &self.projected
    }
}

/// Self-attention key/value cache of a partially decoded identifier.
#[derive(Clone, Debug)]
pub struct DecodeState<F = f32> {
    len: usize,
    keys: Vec<Vec<F>>,
    values: Vec<Vec<F>>,
}

impl<F> DecodeState<F> {
    /// Number of tokens consumed so far, including the begin token; equals
    /// the level whose logits the last step produced, plus one.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

struct BlockTrace<F> {
    n1: NormTrace<F>,
    u1: Vec<F>,
    q: Vec<F>,
    p_self: Vec<F>,
    o1: Vec<F>,
    n2: NormTrace<F>,
    u2: Vec<F>,
    cq: Vec<F>,
    p_cross: Vec<F>,
    o2: Vec<F>,
    n3: NormTrace<F>,
    u3: Vec<F>,
    z: Vec<F>,
    g: Vec<F>,
}

struct RowTrace<F> {
    input: u32,
    blocks: Vec<BlockTrace<F>>,
    nf: NormTrace<F>,
    uf: Vec<F>,
}

/// Log-softmax of `logits` restricted to `level`'s slice of the vocabulary.
pub fn level_log_probs<F: Real>(logits: &[F], vocab: TokenVocabulary, level: usize) -> Vec<f64> {
    log_softmax(&logits[vocab.level_range(level)])
}

impl ArScorer<f32> {
    /// Randomly initialised scorer. Linear weights are `N(0, 1/fan_in)`,
    /// embeddings `N(0, 1/hidden)`; the input projection starts as the
    /// identity when `hidden == input_dim`.
    pub fn new(shape: ArShape, seed: u64) -> Result<Self> {
        shape.validate()?;
        let layout = Layout::new(&shape);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0f32; layout.total];
        for t in &layout.tensors {
            let r = t.range();
            let std = match t.role {
                Role::Embedding => 1.0 / (shape.hidden as f64).sqrt(),
                Role::Weight => 1.0 / (t.dims[1] as f64).sqrt(),
                Role::Gain => {
                    params[r].fill(1.0);
                    continue;
                }
                Role::Bias => continue,
            };
            let normal = Normal::new(0.0, std).expect("positive std");
            for p in &mut params[r] {
                *p = normal.sample(&mut rng) as f32;
            }
        }
        if shape.hidden == shape.input_dim {
            let w = &mut params[layout.cond.w()];
            w.fill(0.0);
            for i in 0..shape.hidden {
                w[i * shape.hidden + i] = 1.0;
            }
        }
        Ok(Self {
            shape,
            layout,
            params,
        })
    }
}

impl<F: Real> ArScorer<F> {
    pub fn from_params(shape: ArShape, params: Vec<F>) -> Result<Self> {
        shape.validate()?;
        let layout = Layout::new(&shape);
        if params.len() != layout.total {
            return Err(Error::Shape(format!(
                "scorer of shape {shape:?} has {} parameters, got {}",
                layout.total,
                params.len()
            )));
        }
        if let Some(i) = params.iter().position(|p| !p.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite scorer parameter at {i}")));
        }
        Ok(Self {
            shape,
            layout,
            params,
        })
    }

    pub fn shape(&self) -> &ArShape {
        &self.shape
    }

    pub fn vocab(&self) -> TokenVocabulary {
        self.shape.vocab()
    }

    pub fn tensors(&self) -> &[ParamTensor] {
        &self.layout.tensors
    }

    pub fn tensor(&self, name: &str) -> Option<&ParamTensor> {
        self.layout.tensors.iter().find(|t| t.name == name)
    }

    pub fn params(&self) -> &[F] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [F] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Same scorer in another precision.
    pub fn cast<G: Real>(&self) -> ArScorer<G> {
        ArScorer {
            shape: self.shape,
            layout: self.layout.clone(),
            params: self.params.iter().map(|&p| G::of(p.f64())).collect(),
        }
    }

    fn lin(&self, l: Lin, x: &[F]) -> Vec<F> {
        linear(&self.params[l.w()], &self.params[l.b()], x)
    }

    /// Projects `rows` conditioning vectors (row-major, `rows x input_dim`)
    /// to the hidden width and precomputes cross-attention keys and values.
    pub fn condition(&self, vectors: &[f32]) -> Result<Context<F>> {
        let d = self.shape.input_dim;
        if vectors.is_empty() || vectors.len() % d != 0 {
            return Err(Error::Shape(format!(
                "conditioning input of length {} is not a non-empty multiple of {d}",
                vectors.len()
            )));
        }
        Ok(self.condition_raw(vectors.iter().map(|&v| F::of(v as f64)).collect()))
    }

    pub(crate) fn condition_raw(&self, input: Vec<F>) -> Context<F> {
        let d = self.shape.input_dim;
        let rows = input.len() / d;
        let projected: Vec<F> = input.chunks_exact(d).flat_map(|x| self.lin(self.layout.cond, x)).collect();
        let h = self.shape.hidden;
        let (keys, values) = self
            .layout
            .blocks
            .iter()
            .map(|b| {
                let k = projected.chunks_exact(h).flat_map(|c| self.lin(b.ck, c)).collect();
                let v = projected.chunks_exact(h).flat_map(|c| self.lin(b.cv, c)).collect();
                (k, v)
            })
            .unzip();
        Context {
            input,
            rows,
            projected,
            keys,
            values,
        }
    }

    pub fn start(&self) -> DecodeState<F> {
        let n = self.layout.blocks.len();
        DecodeState {
            len: 0,
            keys: vec![Vec::new(); n],
            values: vec![Vec::new(); n],
        }
    }

    /// Consumes one input token (global id) and returns the final hidden row.
    fn row(&self, ctx: &Context<F>, st: &mut DecodeState<F>, input: u32, keep: bool) -> (Vec<F>, Option<RowTrace<F>>) {
        let p = &self.params;
        let l = &self.layout;
        let h = self.shape.hidden;
        let heads = self.shape.heads;
        let t = st.len;
        let tok = l.tok + input as usize * h;
        let pos = l.pos + t * h;
        let mut x: Vec<F> = (0..h).map(|i| p[tok + i] + p[pos + i]).collect();
        let mut blocks = Vec::new();
        for (bi, b) in l.blocks.iter().enumerate() {
            let (u1, n1) = layer_norm(&p[b.ln1.g()], &p[b.ln1.b()], &x);
            let q = self.lin(b.q, &u1);
            st.keys[bi].extend(self.lin(b.k, &u1));
            st.values[bi].extend(self.lin(b.v, &u1));
            let (o1, p_self) = attend(&q, &st.keys[bi], &st.values[bi], heads);
            let att = self.lin(b.o, &o1);
            let a: Vec<F> = x.iter().zip(&att).map(|(&u, &v)| u + v).collect();

            let (u2, n2) = layer_norm(&p[b.ln2.g()], &p[b.ln2.b()], &a);
            let cq = self.lin(b.cq, &u2);
            let (o2, p_cross) = attend(&cq, &ctx.keys[bi], &ctx.values[bi], heads);
            let cross = self.lin(b.co, &o2);
            let bv: Vec<F> = a.iter().zip(&cross).map(|(&u, &v)| u + v).collect();

            let (u3, n3) = layer_norm(&p[b.ln3.g()], &p[b.ln3.b()], &bv);
            let z = self.lin(b.ff1, &u3);
            let g: Vec<F> = z.iter().map(|&v| gelu(v)).collect();
            let f = self.lin(b.ff2, &g);
            x = bv.iter().zip(&f).map(|(&u, &v)| u + v).collect();
            if keep {
                blocks.push(BlockTrace {
                    n1,
                    u1,
                    q,
                    p_self,
                    o1,
                    n2,
                    u2,
                    cq,
                    p_cross,
                    o2,
                    n3,
                    u3,
                    z,
                    g,
                });
            }
        }
        st.len += 1;
        let (uf, nf) = layer_norm(&p[l.lnf.g()], &p[l.lnf.b()], &x);
        let trace = keep.then(|| RowTrace {
            input,
            blocks,
            nf,
            uf: uf.clone(),
        });
        (uf, trace)
    }

    fn project(&self, uf: &[F], range: Range<usize>) -> Vec<F> {
        let out = self.layout.out;
        let w = &self.params[out.w()];
        let b = &self.params[out.b()];
        let h = self.shape.hidden;
        range.map(|o| b[o] + dot(&w[o * h..(o + 1) * h], uf)).collect()
    }

    fn input_token(&self, level: usize, prev: Option<u32>) -> Result<u32> {
        let vocab = self.vocab();
        match (level, prev) {
            (0, None) => Ok(vocab.bos()),
            (m, Some(t)) if m > 0 && (t as usize) < vocab.codebook_size => Ok(vocab.global(m - 1, t)),
            (m, prev) => Err(Error::InvalidArgument(format!(
                "cannot feed token {prev:?} at level {m}"
            ))),
        }
    }

    fn advance_range(
        &self,
        ctx: &Context<F>,
        state: &mut DecodeState<F>,
        prev: Option<u32>,
        full: bool,
    ) -> Result<Vec<F>> {
        let level = state.len;
        if level >= self.shape.levels {
            return Err(Error::InvalidArgument(format!(
                "decode state already holds all {} levels",
                self.shape.levels
            )));
        }
        let input = self.input_token(level, prev)?;
        let (uf, _) = self.row(ctx, state, input, false);
        let range = if full {
            0..self.shape.outputs()
        } else {
            self.vocab().level_range(level)
        };
        Ok(self.project(&uf, range))
    }

    /// Feeds the previous level's token (`None` for the begin token) and
    /// returns the raw logits of the next level over the whole vocabulary.
    pub fn advance(&self, ctx: &Context<F>, state: &mut DecodeState<F>, prev: Option<u32>) -> Result<Vec<F>> {
        self.advance_range(ctx, state, prev, true)
    }

    /// Like [`advance`](Self::advance) but returns the level-masked
    /// log-probabilities, indexed by level-local token.
    pub fn advance_log_probs(
        &self,
        ctx: &Context<F>,
        state: &mut DecodeState<F>,
        prev: Option<u32>,
    ) -> Result<Vec<f64>> {
        self.advance_range(ctx, state, prev, false).map(|l| log_softmax(&l))
    }

    /// Raw logits at position `prefix.len()`, given level-local prefix tokens.
    pub fn step_logits(&self, ctx: &Context<F>, prefix: &[u32]) -> Result<Vec<F>> {
        if prefix.len() >= self.shape.levels {
            return Err(Error::InvalidArgument(format!(
                "prefix of length {} for identifiers of length {}",
                prefix.len(),
                self.shape.levels
            )));
        }
        let mut st = self.start();
        let mut prev = None;
        for &t in prefix {
            self.advance_range(ctx, &mut st, prev, false)?;
            prev = Some(t);
        }
        self.advance(ctx, &mut st, prev)
    }

    fn check_target(&self, target: &Identifier) -> Result<()> {
        self.vocab().check(target).map_err(Error::InvalidArgument)
    }

    /// Teacher-forced negative log-likelihood under per-level masking.
    pub fn sequence_nll(&self, ctx: &Context<F>, target: &Identifier) -> Result<f64> {
        self.check_target(target)?;
        let mut st = self.start();
        let mut nll = 0.0;
        let mut prev = None;
        for &t in target.tokens() {
            let lp = self.advance_log_probs(ctx, &mut st, prev)?;
            nll -= lp[t as usize];
            prev = Some(t);
        }
        Ok(nll)
    }

    /// Negative log-likelihood and its gradient with respect to every
    /// parameter (including the input projection).
    pub fn nll_and_grad(&self, ctx: &Context<F>, target: &Identifier) -> Result<(f64, Vec<F>)> {
        self.check_target(target)?;
        let vocab = self.vocab();
        let mut st = self.start();
        let mut traces = Vec::with_capacity(self.shape.levels);
        let mut dlogits = Vec::with_capacity(self.shape.levels);
        let mut nll = 0.0;
        for (m, &t) in target.tokens().iter().enumerate() {
            let input = if m == 0 {
                vocab.bos()
            } else {
                vocab.global(m - 1, target.tokens()[m - 1])
            };
            let (uf, trace) = self.row(ctx, &mut st, input, true);
            let lp = log_softmax(&self.project(&uf, vocab.level_range(m)));
            nll -= lp[t as usize];
            dlogits.push(
                lp.iter()
                    .enumerate()
                    .map(|(j, &v)| F::of(v.exp() - if j == t as usize { 1.0 } else { 0.0 }))
                    .collect::<Vec<F>>(),
            );
            traces.push(trace.expect("trace requested"));
        }
        Ok((nll, self.backward(ctx, &st, &traces, &dlogits)))
    }

    /// Mean negative log-likelihood and gradient over a batch.
    pub fn batch_nll_and_grad(&self, batch: &[(&Context<F>, &Identifier)]) -> Result<(f64, Vec<F>)> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let partial: Vec<Result<(f64, Vec<F>)>> = batch
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut loss = 0.0;
                let mut grad = vec![F::zero(); self.params.len()];
                for (ctx, target) in chunk {
                    let (l, g) = self.nll_and_grad(ctx, target)?;
                    loss += l;
                    for (a, b) in grad.iter_mut().zip(&g) {
                        *a += *b;
                    }
                }
                Ok((loss, grad))
            })
            .collect();
        let mut loss = 0.0;
        let mut grad = vec![F::zero(); self.params.len()];
        for part in partial {
            let (l, g) = part?;
            loss += l;
            for (a, b) in grad.iter_mut().zip(&g) {
                *a += *b;
            }
        }
        let scale = F::of(1.0 / batch.len() as f64);
        grad.iter_mut().for_each(|g| *g *= scale);
        Ok((loss / batch.len() as f64, grad))
    }

    fn backward(&self, ctx: &Context<F>, st: &DecodeState<F>, traces: &[RowTrace<F>], dlogits: &[Vec<F>]) -> Vec<F> {
        let p = &self.params;
        let l = &self.layout;
        let h = self.shape.hidden;
        let heads = self.shape.heads;
        let vocab = self.vocab();
        let rows = traces.len();
        let mut g = vec![F::zero(); l.total];

        // output projection and final norm, only the level slice of each row
        let mut dx: Vec<Vec<F>> = Vec::with_capacity(rows);
        for (t, tr) in traces.iter().enumerate() {
            let mut duf = vec![F::zero(); h];
            for (j, o) in vocab.level_range(t).enumerate() {
                let d = dlogits[t][j];
                g[l.out.b + o] += d;
                axpy(d, &tr.uf, &mut g[l.out.w + o * h..l.out.w + (o + 1) * h]);
                axpy(d, &p[l.out.w + o * h..l.out.w + (o + 1) * h], &mut duf);
            }
            let (dg, db) = pair(&mut g, l.lnf.g(), l.lnf.b());
            dx.push(layer_norm_backward(&p[l.lnf.g()], &tr.nf, &duf, dg, db));
        }

        let mut dctx = vec![F::zero(); ctx.rows * h];
        for (bi, b) in l.blocks.iter().enumerate().rev() {
            let mut dkc = vec![F::zero(); ctx.rows * h];
            let mut dvc = vec![F::zero(); ctx.rows * h];
            let mut da = Vec::with_capacity(rows);
            for t in 0..rows {
                let tr = &traces[t].blocks[bi];
                let (dw, db) = pair(&mut g, b.ff2.w(), b.ff2.b());
                let dgl = linear_backward(&p[b.ff2.w()], &tr.g, &dx[t], dw, db);
                let dz: Vec<F> = dgl.iter().zip(&tr.z).map(|(&d, &z)| d * gelu_grad(z)).collect();
                let (dw, db) = pair(&mut g, b.ff1.w(), b.ff1.b());
                let du3 = linear_backward(&p[b.ff1.w()], &tr.u3, &dz, dw, db);
                let (dg, dbn) = pair(&mut g, b.ln3.g(), b.ln3.b());
                let dres = layer_norm_backward(&p[b.ln3.g()], &tr.n3, &du3, dg, dbn);
                let dbv: Vec<F> = dx[t].iter().zip(&dres).map(|(&u, &v)| u + v).collect();

                let (dw, db) = pair(&mut g, b.co.w(), b.co.b());
                let do2 = linear_backward(&p[b.co.w()], &tr.o2, &dbv, dw, db);
                let dcq = attend_backward(
                    &tr.cq,
                    &ctx.keys[bi],
                    &ctx.values[bi],
                    &tr.p_cross,
                    heads,
                    &do2,
                    &mut dkc,
                    &mut dvc,
                );
                let (dw, db) = pair(&mut g, b.cq.w(), b.cq.b());
                let du2 = linear_backward(&p[b.cq.w()], &tr.u2, &dcq, dw, db);
                let (dg, dbn) = pair(&mut g, b.ln2.g(), b.ln2.b());
                let dres = layer_norm_backward(&p[b.ln2.g()], &tr.n2, &du2, dg, dbn);
                da.push(dbv.iter().zip(&dres).map(|(&u, &v)| u + v).collect::<Vec<F>>());
            }

            // causal self-attention couples rows through the key/value cache
            let keys = &st.keys[bi];
            let values = &st.values[bi];
            let mut dk = vec![F::zero(); rows * h];
            let mut dv = vec![F::zero(); rows * h];
            let mut dq = Vec::with_capacity(rows);
            for t in 0..rows {
                let tr = &traces[t].blocks[bi];
                let (dw, db) = pair(&mut g, b.o.w(), b.o.b());
                let do1 = linear_backward(&p[b.o.w()], &tr.o1, &da[t], dw, db);
                let span = 0..(t + 1) * h;
                let (dks, dvs) = (&mut dk[span.clone()], &mut dv[span.clone()]);
                dq.push(attend_backward(
                    &tr.q,
                    &keys[span.clone()],
                    &values[span.clone()],
                    &tr.p_self,
                    heads,
                    &do1,
                    dks,
                    dvs,
                ));
            }
            for t in 0..rows {
                let tr = &traces[t].blocks[bi];
                let mut du1 = vec![F::zero(); h];
                for (lin, dy) in [
                    (b.q, &dq[t][..]),
                    (b.k, &dk[t * h..(t + 1) * h]),
                    (b.v, &dv[t * h..(t + 1) * h]),
                ] {
                    let (dw, db) = pair(&mut g, lin.w(), lin.b());
                    let d = linear_backward(&p[lin.w()], &tr.u1, dy, dw, db);
                    axpy(F::one(), &d, &mut du1);
                }
                let (dg, dbn) = pair(&mut g, b.ln1.g(), b.ln1.b());
                let dres = layer_norm_backward(&p[b.ln1.g()], &tr.n1, &du1, dg, dbn);
                dx[t] = da[t].iter().zip(&dres).map(|(&u, &v)| u + v).collect();
            }

            for j in 0..ctx.rows {
                let c = &ctx.projected[j * h..(j + 1) * h];
                for (lin, dy) in [(b.ck, &dkc[j * h..(j + 1) * h]), (b.cv, &dvc[j * h..(j + 1) * h])] {
                    let (dw, db) = pair(&mut g, lin.w(), lin.b());
                    let d = linear_backward(&p[lin.w()], c, dy, dw, db);
                    axpy(F::one(), &d, &mut dctx[j * h..(j + 1) * h]);
                }
            }
        }

        for (t, tr) in traces.iter().enumerate() {
            let tok = l.tok + tr.input as usize * h;
            axpy(F::one(), &dx[t], &mut g[tok..tok + h]);
            let pos = l.pos + t * h;
            axpy(F::one(), &dx[t], &mut g[pos..pos + h]);
        }
        let d = self.shape.input_dim;
        for j in 0..ctx.rows {
            let (dw, db) = pair(&mut g, l.cond.w(), l.cond.b());
            linear_backward(&p[l.cond.w()], &ctx.input[j * d..(j + 1) * d], &dctx[j * h..(j + 1) * h], dw, db);
        }
        g
    }
}

/// Two disjoint mutable windows of `g`, `a` lying before `b`.
fn pair<F>(g: &mut [F], a: Range<usize>, b: Range<usize>) -> (&mut [F], &mut [F]) {
    debug_assert!(a.end <= b.start);
    let (lo, hi) = g.split_at_mut(b.start);
    (&mut lo[a], &mut hi[..b.end - b.start])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn shape(levels: usize, size: usize, d: usize, h: usize) -> ArShape {
        ArShape {
            levels,
            codebook_size: size,
            input_dim: d,
            hidden: h,
            blocks: 2,
            heads: 2,
        }
    }

    fn random_vec(n: usize, seed: u64) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect()
    }

    #[test]
    fn identity_projection_passes_context_through() {
        let s = ArScorer::new(shape(2, 3, 8, 8), 1).unwrap();
        let x = random_vec(8, 2);
        let ctx = s.condition(&x).unwrap();
        assert_eq!(ctx.projected(), &x[..]);
    }

    #[test]
    fn zero_input_projects_to_bias() {
        let mut s = ArScorer::new(shape(2, 3, 5, 8), 1).unwrap();
        let cond_b = s.tensor("cond.bias").unwrap().range();
        for (i, p) in s.params_mut()[cond_b.clone()].iter_mut().enumerate() {
            *p = i as f32 * 0.25;
        }
        let ctx = s.condition(&[0.0; 5]).unwrap();
        assert_eq!(ctx.projected(), &s.params()[cond_b]);
    }

    #[test]
    fn condition_rejects_bad_dimension() {
        let s = ArScorer::new(shape(2, 3, 5, 8), 1).unwrap();
        assert!(s.condition(&[0.0; 4]).is_err());
        assert!(s.condition(&[]).is_err());
    }

    #[test]
    fn zero_output_projection_gives_uniform_levels() {
        let mut s = ArScorer::new(shape(3, 4, 6, 8), 3).unwrap();
        let out_w = s.tensor("out.weight").unwrap().range();
        s.params_mut()[out_w].fill(0.0);
        let ctx = s.condition(&random_vec(6, 4)).unwrap();
        let logits = s.step_logits(&ctx, &[1, 2]).unwrap();
        assert!(logits.iter().all(|&v| v == 0.0));
        let lp = level_log_probs(&logits, s.vocab(), 2);
        for v in lp {
            assert!((v + 4f64.ln()).abs() < 1e-12);
        }
        let nll = s.sequence_nll(&ctx, &Identifier::new(vec![0, 3, 1])).unwrap();
        assert!((nll - 3.0 * 4f64.ln()).abs() < 1e-5);
    }

    #[test]
    fn one_level_two_tokens_zero_logits_is_ln2() {
        let mut s = ArScorer::new(shape(1, 2, 3, 4), 0).unwrap();
        let out_w = s.tensor("out.weight").unwrap().range();
        s.params_mut()[out_w].fill(0.0);
        let ctx = s.condition(&[0.1, 0.2, 0.3]).unwrap();
        let nll = s.sequence_nll(&ctx, &Identifier::new(vec![1])).unwrap();
        assert!((nll - std::f64::consts::LN_2).abs() < 1e-7);
    }

    #[test]
    fn prefix_logits_are_causal() {
        let s = ArScorer::new(shape(4, 5, 6, 8), 7).unwrap();
        let ctx = s.condition(&random_vec(6, 8)).unwrap();
        let full = [3u32, 1, 4, 0];
        // incremental decode of the full sequence
        let mut st = s.start();
        let mut prev = None;
        let mut rows = Vec::new();
        for &t in &full {
            rows.push(s.advance(&ctx, &mut st, prev).unwrap());
            prev = Some(t);
        }
        for m in 0..4 {
            assert_eq!(s.step_logits(&ctx, &full[..m]).unwrap(), rows[m]);
        }
        // changing later tokens leaves earlier logits untouched
        let alt = s.step_logits(&ctx, &[3, 1, 2]).unwrap();
        assert_ne!(alt, rows[3]);
        assert_eq!(s.step_logits(&ctx, &[3]).unwrap(), rows[1]);
    }

    #[test]
    fn probabilities_normalise_over_all_sequences() {
        let s = ArScorer::new(shape(3, 4, 5, 8), 11).unwrap();
        let ctx = s.condition(&random_vec(5, 12)).unwrap();
        let mut total = 0.0;
        for a in 0..4 {
            for b in 0..4 {
                for c in 0..4 {
                    let nll = s.sequence_nll(&ctx, &Identifier::new(vec![a, b, c])).unwrap();
                    total += (-nll).exp();
                }
            }
        }
        assert!((total - 1.0).abs() < 1e-6, "{total}");
    }

    #[test]
    fn nll_is_product_of_step_probabilities() {
        let s = ArScorer::new(shape(3, 6, 4, 8), 5).unwrap();
        let ctx = s.condition(&random_vec(4, 6)).unwrap();
        let id = [5u32, 0, 2];
        let mut prob = 1.0f64;
        for m in 0..3 {
            let logits = s.step_logits(&ctx, &id[..m]).unwrap();
            let r = s.vocab().level_range(m);
            let ex: Vec<f64> = logits[r].iter().map(|&v| (v as f64).exp()).collect();
            prob *= ex[id[m] as usize] / ex.iter().sum::<f64>();
        }
        let nll = s.sequence_nll(&ctx, &Identifier::new(id.to_vec())).unwrap();
        assert!(((-nll).exp() - prob).abs() < 1e-6 * prob.max(1e-30));
    }

    #[test]
    fn training_nll_matches_inference_nll() {
        let s = ArScorer::new(shape(3, 6, 4, 8), 5).unwrap();
        let ctx = s.condition(&random_vec(4, 6)).unwrap();
        let id = Identifier::new(vec![1, 4, 2]);
        let (a, _) = s.nll_and_grad(&ctx, &id).unwrap();
        assert_eq!(a, s.sequence_nll(&ctx, &id).unwrap());
    }

    #[test]
    fn batch_nll_is_mean_of_examples() {
        let s = ArScorer::new(shape(2, 4, 4, 8), 9).unwrap();
        let ctxs: Vec<Context> = (0..11).map(|i| s.condition(&random_vec(4, 100 + i)).unwrap()).collect();
        let ids: Vec<Identifier> = (0..11).map(|i| Identifier::new(vec![i % 4, (i * 3) % 4])).collect();
        let batch: Vec<(&Context, &Identifier)> = ctxs.iter().zip(&ids).collect();
        let (mean, _) = s.batch_nll_and_grad(&batch).unwrap();
        let direct: f64 = batch.iter().map(|(c, i)| s.sequence_nll(c, i).unwrap()).sum::<f64>() / 11.0;
        assert!((mean - direct).abs() < 1e-12);
    }

    #[test]
    fn multi_vector_context() {
        let s = ArScorer::new(shape(2, 3, 4, 8), 2).unwrap();
        let ctx = s.condition(&random_vec(12, 3)).unwrap();
        assert_eq!(ctx.rows(), 3);
        let nll = s.sequence_nll(&ctx, &Identifier::new(vec![2, 0])).unwrap();
        assert!(nll.is_finite() && nll > 0.0);
    }

    #[test]
    fn rejects_bad_targets_and_prefixes() {
        let s = ArScorer::new(shape(2, 3, 4, 8), 2).unwrap();
        let ctx = s.condition(&random_vec(4, 3)).unwrap();
        assert!(s.sequence_nll(&ctx, &Identifier::new(vec![3, 0])).is_err());
        assert!(s.sequence_nll(&ctx, &Identifier::new(vec![0])).is_err());
        assert!(s.step_logits(&ctx, &[0, 0]).is_err());
    }

    #[test]
    fn from_params_checks_length() {
        let s = ArScorer::new(shape(2, 3, 4, 8), 2).unwrap();
        let back = ArScorer::from_params(*s.shape(), s.params().to_vec()).unwrap();
        assert_eq!(back, s);
        assert!(ArScorer::from_params(*s.shape(), vec![0f32; 3]).is_err());
    }
}
