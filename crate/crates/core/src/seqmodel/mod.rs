//! Autoregressive identifier scorer.
//!
//! A small pre-norm causal decoder that reads `[BOS, l_1, .., l_{M-1}]` and
//! emits logits over the union vocabulary at every position. Each block runs
//! causal self-attention, cross-attention over the projected query embedding
//! and a GELU feed-forward layer. Logits at position `m` are only ever read
//! through a softmax restricted to level `m`'s slice of the vocabulary.
//!
//! All parameters live in one flat buffer described by [`ParamTensor`]
//! entries, which keeps the optimizer, checkpointing and finite-difference
//! checks trivial.

mod check;
mod layers;
mod scorer;
mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trie::TokenVocabulary;

pub use check::grad_check;
pub use scorer::{level_log_probs, ArScorer, Context, DecodeState};
pub use train::{train_ar, ArConfig, PairData, PairRule, TrainedScorer};

/// Architecture hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArShape {
    /// Identifier length `M`.
    pub levels: usize,
    /// Tokens per level `L`.
    pub codebook_size: usize,
    /// Width of the conditioning vectors.
    pub input_dim: usize,
    pub hidden: usize,
    pub blocks: usize,
    pub heads: usize,
}

impl ArShape {
    pub fn validate(&self) -> Result<()> {
        TokenVocabulary::new(self.levels, self.codebook_size)?;
        if self.input_dim == 0 || self.hidden == 0 || self.heads == 0 {
            return Err(Error::InvalidArgument(format!("degenerate scorer shape {self:?}")));
        }
        if self.hidden % self.heads != 0 {
            return Err(Error::InvalidArgument(format!(
                "hidden width {} not divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        Ok(())
    }

    pub fn vocab(&self) -> TokenVocabulary {
        TokenVocabulary::new(self.levels, self.codebook_size).expect("validated shape")
    }

    /// Output logits per position, `M * L`.
    pub fn outputs(&self) -> usize {
        self.levels * self.codebook_size
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Role {
    Embedding,
    Weight,
    Bias,
    Gain,
}

/// One named tensor inside the flat parameter buffer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamTensor {
    pub name: String,
    pub offset: usize,
    pub dims: Vec<usize>,
    pub(crate) role: Role,
}

impl ParamTensor {
    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }

    /// Whether weight decay applies.
    pub fn decays(&self) -> bool {
        self.role == Role::Weight
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Lin {
    pub w: usize,
    pub b: usize,
    pub out: usize,
    pub inp: usize,
}

impl Lin {
    pub fn w(&self) -> std::ops::Range<usize> {
        self.w..self.w + self.out * self.inp
    }

    pub fn b(&self) -> std::ops::Range<usize> {
        self.b..self.b + self.out
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Norm {
    pub g: usize,
    pub b: usize,
    pub n: usize,
}

impl Norm {
    pub fn g(&self) -> std::ops::Range<usize> {
        self.g..self.g + self.n
    }

    pub fn b(&self) -> std::ops::Range<usize> {
        self.b..self.b + self.n
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct BlockLayout {
    pub ln1: Norm,
    pub q: Lin,
    pub k: Lin,
    pub v: Lin,
    pub o: Lin,
    pub ln2: Norm,
    pub cq: Lin,
    pub ck: Lin,
    pub cv: Lin,
    pub co: Lin,
    pub ln3: Norm,
    pub ff1: Lin,
    pub ff2: Lin,
}

#[derive(Clone, Debug)]
pub(crate) struct Layout {
    pub tensors: Vec<ParamTensor>,
    pub tok: usize,
    pub pos: usize,
    pub cond: Lin,
    pub blocks: Vec<BlockLayout>,
    pub lnf: Norm,
    pub out: Lin,
    pub total: usize,
}

struct Alloc {
    next: usize,
    tensors: Vec<ParamTensor>,
}

impl Alloc {
    fn take(&mut self, name: String, dims: Vec<usize>, role: Role) -> usize {
        let offset = self.next;
        self.next += dims.iter().product::<usize>();
        self.tensors.push(ParamTensor { name, offset, dims, role });
        offset
    }

    fn lin(&mut self, name: &str, out: usize, inp: usize) -> Lin {
        let w = self.take(format!("{name}.weight"), vec![out, inp], Role::Weight);
        let b = self.take(format!("{name}.bias"), vec![out], Role::Bias);
        Lin { w, b, out, inp }
    }

    fn norm(&mut self, name: &str, n: usize) -> Norm {
        let g = self.take(format!("{name}.gain"), vec![n], Role::Gain);
        let b = self.take(format!("{name}.bias"), vec![n], Role::Bias);
        Norm { g, b, n }
    }
}

impl Layout {
    pub fn new(s: &ArShape) -> Self {
        let h = s.hidden;
        let mut a = Alloc {
            next: 0,
            tensors: Vec::new(),
        };
        let tok = a.take("tok_embed".into(), vec![s.outputs() + 1, h], Role::Embedding);
        let pos = a.take("pos_embed".into(), vec![s.levels + 1, h], Role::Embedding);
        let cond = a.lin("cond", h, s.input_dim);
        let blocks = (0..s.blocks)
            .map(|i| {
                let p = |n: &str| format!("block{i}.{n}");
                BlockLayout {
                    ln1: a.norm(&p("ln1"), h),
                    q: a.lin(&p("self_q"), h, h),
                    k: a.lin(&p("self_k"), h, h),
                    v: a.lin(&p("self_v"), h, h),
                    o: a.lin(&p("self_o"), h, h),
                    ln2: a.norm(&p("ln2"), h),
                    cq: a.lin(&p("cross_q"), h, h),
                    ck: a.lin(&p("cross_k"), h, h),
                    cv: a.lin(&p("cross_v"), h, h),
                    co: a.lin(&p("cross_o"), h, h),
                    ln3: a.norm(&p("ln3"), h),
                    ff1: a.lin(&p("ff1"), 4 * h, h),
                    ff2: a.lin(&p("ff2"), h, 4 * h),
                }
            })
            .collect();
        let lnf = a.norm("ln_final", h);
        let out = a.lin("out", s.outputs(), h);
        Layout {
            total: a.next,
            tensors: a.tensors,
            tok,
            pos,
            cond,
            blocks,
            lnf,
            out,
        }
    }
}
