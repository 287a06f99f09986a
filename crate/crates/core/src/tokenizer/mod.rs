//! Semantic residual-quantization tokenizer.
//!
//! An embedding `f` is mapped to `M` tokens by quantizing the running
//! residual against one codebook per level:
//!
//! ```text
//! r_0 = f
//! l_m = argmin_l ||r_{m-1} - c_{m,l}||^2      (ties -> lowest l)
//! r_m = r_{m-1} - c_{m,l_m}
//! ```
//!
//! Training ([`train_tokenizer`]) alternates a gradient pass on the
//! classification head (and the optional linear encoder) with a k-means
//! refresh of every codebook on the residuals of its level.

mod loss;
mod train;

pub use loss::{
    grad_check, tokenizer_loss, tokenizer_loss_grad, GradCheckReport, LossBreakdown, LossGrads,
};
pub use train::{train_tokenizer, TokenizerConfig, TrainedTokenizer};

use crate::dataset::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::trie::{Identifier, TokenVocabulary};

/// `M` codebooks of `L` centroids of dimension `d`, stored `M x L x d`.
#[derive(Clone, Debug, PartialEq)]
pub struct CodebookStack {
    levels: usize,
    size: usize,
    dim: usize,
    books: Vec<f32>,
}

/// Tokens of an embedding together with every intermediate residual.
#[derive(Clone, Debug, PartialEq)]
pub struct RqEncoding {
    pub id: Identifier,
    /// `r_1 ..= r_M`, accumulated in `f64`.
    pub residuals: Vec<Vec<f64>>,
}

impl CodebookStack {
    pub fn new(levels: usize, size: usize, dim: usize, books: Vec<f32>) -> Result<Self> {
        if levels == 0 || size == 0 || dim == 0 {
            return Err(Error::Shape(format!(
                "codebook stack needs positive shape, got {levels}x{size}x{dim}"
            )));
        }
        if books.len() != levels * size * dim {
            return Err(Error::Shape(format!(
                "expected {} centroid values for {levels}x{size}x{dim}, got {}",
                levels * size * dim,
                books.len()
            )));
        }
        if books.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite centroid".into()));
        }
        Ok(Self {
            levels,
            size,
            dim,
            books,
        })
    }

    pub fn zeros(levels: usize, size: usize, dim: usize) -> Self {
        Self {
            levels,
            size,
            dim,
            books: vec![0.0; levels * size * dim],
        }
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vocab(&self) -> TokenVocabulary {
        TokenVocabulary {
            levels: self.levels,
            codebook_size: self.size,
        }
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.books
    }

    /// All centroids of one level, `L x d`.
    pub fn level(&self, m: usize) -> &[f32] {
        let stride = self.size * self.dim;
        &self.books[m * stride..(m + 1) * stride]
    }

    pub(crate) fn level_mut(&mut self, m: usize) -> &mut [f32] {
        let stride = self.size * self.dim;
        &mut self.books[m * stride..(m + 1) * stride]
    }

    #[inline]
    pub fn centroid(&self, m: usize, l: usize) -> &[f32] {
        let off = (m * self.size + l) * self.dim;
        &self.books[off..off + self.dim]
    }

    /// Residual-quantizes `f`.
    pub fn encode(&self, f: &[f32]) -> Result<RqEncoding> {
        self.check_dim(f.len())?;
        let f: Vec<f64> = f.iter().map(|&v| v as f64).collect();
        Ok(self.encode_f64(&f))
    }

    pub(crate) fn encode_f64(&self, f: &[f64]) -> RqEncoding {
        let mut r = f.to_vec();
        let mut tokens = Vec::with_capacity(self.levels);
        let mut residuals = Vec::with_capacity(self.levels);
        for m in 0..self.levels {
            let (l, _) = crate::kmeans::nearest(self.level(m), self.dim, &r);
            for (x, &c) in r.iter_mut().zip(self.centroid(m, l)) {
                *x -= c as f64;
            }
            tokens.push(l as u32);
            residuals.push(r.clone());
        }
        RqEncoding {
            id: Identifier::new(tokens),
            residuals,
        }
    }

    /// Tokens only; same argmin as [`encode`](Self::encode).
    pub(crate) fn tokens_f64(&self, f: &[f64]) -> Vec<u32> {
        self.encode_f64(f).id.into_inner()
    }

    /// Sum of the centroids selected by a token prefix of length `1..=M`.
    pub fn decode_prefix(&self, tokens: &[u32]) -> Result<Vec<f64>> {
        if tokens.is_empty() || tokens.len() > self.levels {
            return Err(Error::InvalidArgument(format!(
                "prefix length {} outside 1..={}",
                tokens.len(),
                self.levels
            )));
        }
        let mut out = vec![0f64; self.dim];
        for (m, &t) in tokens.iter().enumerate() {
            if t as usize >= self.size {
                return Err(Error::InvalidArgument(format!(
                    "token {t} at level {m} out of range for codebook size {}",
                    self.size
                )));
            }
            for (o, &c) in out.iter_mut().zip(self.centroid(m, t as usize)) {
                *o += c as f64;
            }
        }
        Ok(out)
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.dim {
            return Err(Error::Shape(format!(
                "vector of dimension {len} for codebooks of dimension {}",
                self.dim
            )));
        }
        Ok(())
    }
}

/// Linear classifier over `d`-vectors used as the semantic supervision head.
#[derive(Clone, Debug, PartialEq)]
pub struct SemanticHead {
    pub classes: usize,
    pub dim: usize,
    /// `classes x dim`, row-major.
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl SemanticHead {
    pub fn zeros(classes: usize, dim: usize) -> Self {
        Self {
            classes,
            dim,
            weight: vec![0.0; classes * dim],
            bias: vec![0.0; classes],
        }
    }

    pub fn new(classes: usize, dim: usize, weight: Vec<f32>, bias: Vec<f32>) -> Result<Self> {
        if weight.len() != classes * dim || bias.len() != classes {
            return Err(Error::Shape(format!(
                "head of {classes} classes over dimension {dim} got {} weights and {} biases",
                weight.len(),
                bias.len()
            )));
        }
        if weight.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite head parameter".into()));
        }
        Ok(Self {
            classes,
            dim,
            weight,
            bias,
        })
    }

    /// Most likely class of `z`; ties go to the lowest class id.
    pub fn predict(&self, z: &[f32]) -> usize {
        let mut best = (0, f64::NEG_INFINITY);
        for c in 0..self.classes {
            let w = &self.weight[c * self.dim..(c + 1) * self.dim];
            let s = self.bias[c] as f64
                + w.iter().zip(z).map(|(&a, &b)| a as f64 * b as f64).sum::<f64>();
            if s > best.1 {
                best = (c, s);
            }
        }
        best.0
    }
}

/// Stand-in for the image encoder: identity or one affine layer applied to
/// the ingested embedding.
#[derive(Clone, Debug, PartialEq)]
pub enum Encoder {
    Identity { dim: usize },
    Linear {
        input: usize,
        output: usize,
        /// `output x input`, row-major.
        weight: Vec<f32>,
        bias: Vec<f32>,
    },
}

impl Encoder {
    /// Affine layer initialised to the identity.
    pub fn linear_identity(dim: usize) -> Self {
        let mut weight = vec![0.0; dim * dim];
        for i in 0..dim {
            weight[i * dim + i] = 1.0;
        }
        Encoder::Linear {
            input: dim,
            output: dim,
            weight,
            bias: vec![0.0; dim],
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Encoder::Identity { dim } => *dim,
            Encoder::Linear { input, .. } => *input,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Encoder::Identity { dim } => *dim,
            Encoder::Linear { output, .. } => *output,
        }
    }

    pub(crate) fn forward_f64(&self, x: &[f32]) -> Vec<f64> {
        match self {
            Encoder::Identity { .. } => x.iter().map(|&v| v as f64).collect(),
            Encoder::Linear {
                input,
                weight,
                bias,
                ..
            } => bias
                .iter()
                .zip(weight.chunks_exact(*input))
                .map(|(&b, w)| {
                    b as f64 + w.iter().zip(x).map(|(&a, &v)| a as f64 * v as f64).sum::<f64>()
                })
                .collect(),
        }
    }

    pub fn forward(&self, x: &[f32]) -> Vec<f32> {
        self.forward_f64(x).into_iter().map(|v| v as f32).collect()
    }
}

/// Trained encoder, codebooks and head.
#[derive(Clone, Debug, PartialEq)]
pub struct Tokenizer {
    pub encoder: Encoder,
    pub stack: CodebookStack,
    pub head: SemanticHead,
}

impl Tokenizer {
    /// Encoder output for every row.
    pub fn embed(&self, x: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
        if x.d() != self.encoder.input_dim() {
            return Err(Error::Shape(format!(
                "embeddings of dimension {} for an encoder expecting {}",
                x.d(),
                self.encoder.input_dim()
            )));
        }
        let mut data = Vec::with_capacity(x.n() * self.encoder.output_dim());
        for row in x.rows() {
            data.extend(self.encoder.forward(row));
        }
        EmbeddingMatrix::new(x.n(), self.encoder.output_dim(), data)
    }

    /// Identifier of every row (raw embeddings, encoded first).
    pub fn identifiers(&self, x: &EmbeddingMatrix) -> Result<Vec<Identifier>> {
        let f = self.embed(x)?;
        f.rows().map(|r| self.stack.encode(r).map(|e| e.id)).collect()
    }
}
