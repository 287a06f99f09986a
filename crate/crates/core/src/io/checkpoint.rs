//! Save/load of trained artifacts through the tensor container.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tensor::{Tensor, TensorFile};
use crate::error::{Error, Result};
use crate::search::IvfPqIndex;
use crate::seqmodel::{ArScorer, ArShape};
use crate::tokenizer::{CodebookStack, Encoder, SemanticHead, Tokenizer};
use crate::trie::{Identifier, TokenVocabulary};

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.into(),
        reason: reason.into(),
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum EncoderMeta {
    Identity { dim: usize },
    Linear { input: usize, output: usize },
}

#[derive(Serialize, Deserialize)]
struct TokenizerMeta {
    levels: usize,
    size: usize,
    dim: usize,
    classes: usize,
    encoder: EncoderMeta,
}

pub fn save_tokenizer(path: impl AsRef<Path>, t: &Tokenizer) -> Result<()> {
    let mut f = TensorFile::default();
    let s = &t.stack;
    let encoder = match &t.encoder {
        Encoder::Identity { dim } => EncoderMeta::Identity { dim: *dim },
        Encoder::Linear {
            input,
            output,
            weight,
            bias,
        } => {
            f.insert("encoder.weight", Tensor::f32(vec![*output, *input], weight.clone()));
            f.insert("encoder.bias", Tensor::f32(vec![*output], bias.clone()));
            EncoderMeta::Linear {
                input: *input,
                output: *output,
            }
        }
    };
    f.set_meta(&TokenizerMeta {
        levels: s.levels(),
        size: s.size(),
        dim: s.dim(),
        classes: t.head.classes,
        encoder,
    });
    f.insert("books", Tensor::f32(vec![s.levels(), s.size(), s.dim()], s.as_slice().to_vec()));
    f.insert("head.weight", Tensor::f32(vec![t.head.classes, t.head.dim], t.head.weight.clone()));
    f.insert("head.bias", Tensor::f32(vec![t.head.classes], t.head.bias.clone()));
    f.save(path)
}

pub fn load_tokenizer(path: impl AsRef<Path>) -> Result<Tokenizer> {
    let path = path.as_ref();
    let f = TensorFile::load(path)?;
    let meta: TokenizerMeta = f.meta(path)?;
    let wrap = |e: Error| format_err(path, e.to_string());
    let stack = CodebookStack::new(meta.levels, meta.size, meta.dim, f.get_f32(path, "books")?.to_vec()).map_err(wrap)?;
    let head = SemanticHead::new(
        meta.classes,
        meta.dim,
        f.get_f32(path, "head.weight")?.to_vec(),
        f.get_f32(path, "head.bias")?.to_vec(),
    )
    .map_err(wrap)?;
    let encoder = match meta.encoder {
        EncoderMeta::Identity { dim } => Encoder::Identity { dim },
        EncoderMeta::Linear { input, output } => {
            let weight = f.get_f32(path, "encoder.weight")?.to_vec();
            let bias = f.get_f32(path, "encoder.bias")?.to_vec();
            if weight.len() != input * output || bias.len() != output {
                return Err(format_err(path, "encoder tensor shapes disagree with metadata"));
            }
            Encoder::Linear {
                input,
                output,
                weight,
                bias,
            }
        }
    };
    if encoder.output_dim() != meta.dim {
        return Err(format_err(path, "encoder output does not match codebook dimension"));
    }
    Ok(Tokenizer { encoder, stack, head })
}

pub fn save_scorer(path: impl AsRef<Path>, s: &ArScorer) -> Result<()> {
    let mut f = TensorFile::default();
    f.set_meta(s.shape());
    f.insert("params", Tensor::f32(vec![s.num_params()], s.params().to_vec()));
    f.save(path)
}

pub fn load_scorer(path: impl AsRef<Path>) -> Result<ArScorer> {
    let path = path.as_ref();
    let f = TensorFile::load(path)?;
    let shape: ArShape = f.meta(path)?;
    ArScorer::from_params(shape, f.get_f32(path, "params")?.to_vec()).map_err(|e| format_err(path, e.to_string()))
}

#[derive(Serialize, Deserialize)]
struct IndexMeta {
    dim: usize,
    subspaces: usize,
    pq_centroids: usize,
}

pub fn save_index(path: impl AsRef<Path>, idx: &IvfPqIndex) -> Result<()> {
    let mut f = TensorFile::default();
    f.set_meta(&IndexMeta {
        dim: idx.dim,
        subspaces: idx.subspaces,
        pq_centroids: idx.pq_centroids,
    });
    let kc = idx.coarse_clusters();
    f.insert("coarse", Tensor::f32(vec![kc, idx.dim], idx.coarse.clone()));
    f.insert("books", Tensor::f32(vec![idx.books.len()], idx.books.clone()));
    f.insert("codes", Tensor::bytes(idx.codes.clone()));
    let mut offsets = vec![0u64];
    let mut rows = Vec::new();
    for l in &idx.lists {
        rows.extend(l.iter().map(|&r| r as u64));
        offsets.push(rows.len() as u64);
    }
    f.insert("list_offsets", Tensor::u64(vec![offsets.len()], offsets));
    f.insert("list_rows", Tensor::u64(vec![rows.len()], rows));
    f.save(path)
}

pub fn load_index(path: impl AsRef<Path>) -> Result<IvfPqIndex> {
    let path = path.as_ref();
    let f = TensorFile::load(path)?;
    let meta: IndexMeta = f.meta(path)?;
    let offsets = f.get_u64(path, "list_offsets")?;
    let rows = f.get_u64(path, "list_rows")?;
    let coarse = f.get_f32(path, "coarse")?.to_vec();
    let books = f.get_f32(path, "books")?.to_vec();
    let codes = f.get_bytes(path, "codes")?.to_vec();
    let consistent = meta.subspaces > 0
        && meta.dim % meta.subspaces == 0
        && !offsets.is_empty()
        && coarse.len() == (offsets.len() - 1) * meta.dim
        && books.len() == meta.subspaces * meta.pq_centroids * (meta.dim / meta.subspaces)
        && codes.len() == rows.len() * meta.subspaces
        && offsets.windows(2).all(|w| w[0] <= w[1])
        && offsets.last() == Some(&(rows.len() as u64));
    if !consistent {
        return Err(format_err(path, "index tensors are inconsistent"));
    }
    let lists = offsets
        .windows(2)
        .map(|w| rows[w[0] as usize..w[1] as usize].iter().map(|&r| r as usize).collect())
        .collect();
    Ok(IvfPqIndex {
        dim: meta.dim,
        subspaces: meta.subspaces,
        pq_centroids: meta.pq_centroids,
        coarse,
        lists,
        books,
        codes,
    })
}

/// Identifiers of a set of rows.
#[derive(Clone, Debug, PartialEq)]
pub struct IdTable {
    pub vocab: TokenVocabulary,
    pub rows: Vec<usize>,
    pub ids: Vec<Identifier>,
}

#[derive(Serialize, Deserialize)]
struct IdMeta {
    levels: usize,
    codebook_size: usize,
}

pub fn save_ids(path: impl AsRef<Path>, t: &IdTable) -> Result<()> {
    let mut f = TensorFile::default();
    f.set_meta(&IdMeta {
        levels: t.vocab.levels,
        codebook_size: t.vocab.codebook_size,
    });
    let tokens: Vec<u32> = t.ids.iter().flat_map(|i| i.tokens().iter().copied()).collect();
    f.insert("tokens", Tensor::u32(vec![t.ids.len(), t.vocab.levels], tokens));
    f.insert("rows", Tensor::u64(vec![t.rows.len()], t.rows.iter().map(|&r| r as u64).collect()));
    f.save(path)
}

pub fn load_ids(path: impl AsRef<Path>) -> Result<IdTable> {
    let path = path.as_ref();
    let f = TensorFile::load(path)?;
    let meta: IdMeta = f.meta(path)?;
    let vocab = TokenVocabulary::new(meta.levels, meta.codebook_size).map_err(|e| format_err(path, e.to_string()))?;
    let tokens = f.get_u32(path, "tokens")?;
    let rows: Vec<usize> = f.get_u64(path, "rows")?.iter().map(|&r| r as usize).collect();
    if tokens.len() != rows.len() * meta.levels {
        return Err(format_err(path, "token table does not match row count"));
    }
    let ids: Vec<Identifier> = tokens.chunks_exact(meta.levels).map(|c| Identifier::new(c.to_vec())).collect();
    for (i, id) in ids.iter().enumerate() {
        vocab
            .check(id)
            .map_err(|reason| format_err(path, format!("identifier {i}: {reason}")))?;
    }
    Ok(IdTable { vocab, rows, ids })
}
