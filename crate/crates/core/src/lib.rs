//! Generative retrieval over precomputed embedding vectors.
//!
//! Database items are given short discrete identifiers by a residual
//! quantizer trained with class supervision ([`tokenizer`]). A small causal
//! decoder ([`seqmodel`]) learns to emit the identifier of a query's
//! neighbour, and retrieval is a beam search over that decoder constrained
//! to a prefix tree of the stored identifiers ([`search`]). Exact scan and
//! IVF-PQ baselines, the metric suite and the experiment protocols live in
//! [`search`] and [`eval`]; file formats, configs and synthetic data in [`io`].

pub mod dataset;
pub mod error;
pub mod eval;
pub mod identifiers;
pub mod io;
pub mod kmeans;
pub mod optim;
pub mod real;
pub mod search;
pub mod seqmodel;
pub mod tokenizer;
pub mod trie;

pub use dataset::{EmbeddingMatrix, LabeledDataset, Split};
pub use error::{Error, Result};
pub use real::Real;
pub use trie::{IdTrie, Identifier, TokenVocabulary};
