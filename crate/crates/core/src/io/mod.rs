//! File formats, run configuration, manifests and synthetic data.

pub mod checkpoint;
pub mod config;
pub mod emb;
pub mod manifest;
pub mod synth;
pub mod tensor;

pub use checkpoint::{load_ids, load_index, load_scorer, load_tokenizer, save_ids, save_index, save_scorer, save_tokenizer, IdTable};
pub use config::{apply_override, schema, schema_keys, DataConfig, RunConfig};
pub use emb::{load_dataset, read_emb, read_labels, read_splits, save_dataset, write_emb, write_labels, write_splits, EMB_MAGIC};
pub use manifest::Manifest;
pub use synth::{make_synthetic, SynthConfig};
pub use tensor::{Tensor, TensorData, TensorFile};
