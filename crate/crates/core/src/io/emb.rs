//! `EMB1` embedding files and the line-oriented label/split files.
//!
//! ```text
//! "EMB1" | n: u32 LE | d: u32 LE | n*d f32 LE, row-major
//! ```

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::dataset::{EmbeddingMatrix, LabeledDataset, Split};
use crate::error::{Error, Result};

pub const EMB_MAGIC: &[u8; 4] = b"EMB1";
const HEADER: usize = 12;

pub fn write_emb(path: impl AsRef<Path>, m: &EmbeddingMatrix) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut body = Vec::with_capacity(HEADER + 4 * m.as_slice().len());
    body.extend_from_slice(EMB_MAGIC);
    body.extend_from_slice(&(m.n() as u32).to_le_bytes());
    body.extend_from_slice(&(m.d() as u32).to_le_bytes());
    for v in m.as_slice() {
        body.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&body)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn read_emb(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_emb(path, &bytes)
}

pub(crate) fn parse_emb(path: &Path, bytes: &[u8]) -> Result<EmbeddingMatrix> {
    if bytes.len() < 4 || &bytes[..4] != EMB_MAGIC {
        return Err(Error::BadMagic {
            path: path.into(),
            expected: "EMB1".into(),
            found: String::from_utf8_lossy(&bytes[..bytes.len().min(4)]).into_owned(),
        });
    }
    if bytes.len() < HEADER {
        return Err(Error::Truncated {
            path: path.into(),
            expected: HEADER as u64,
            actual: bytes.len() as u64,
        });
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as u64;
    let d = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as u64;
    let expected = HEADER as u64 + 4 * n * d;
    let actual = bytes.len() as u64;
    if actual < expected {
        return Err(Error::Truncated {
            path: path.into(),
            expected,
            actual,
        });
    }
    if actual > expected {
        return Err(Error::Format {
            path: path.into(),
            reason: format!("{} trailing bytes after the payload", actual - expected),
        });
    }
    let mut data = Vec::with_capacity((n * d) as usize);
    for (i, chunk) in bytes[HEADER..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::NonFinite {
                path: path.into(),
                offset: (HEADER + 4 * i) as u64,
            });
        }
        data.push(v);
    }
    EmbeddingMatrix::new(n as usize, d as usize, data).map_err(|e| Error::Format {
        path: path.into(),
        reason: e.to_string(),
    })
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim().to_string()))
        .filter(|(_, l)| !l.is_empty())
        .collect())
}

/// One non-negative integer label per line.
pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<u32>> {
    let path = path.as_ref();
    read_lines(path)?
        .into_iter()
        .map(|(line, l)| {
            l.parse::<u32>().map_err(|e| Error::Parse {
                path: path.into(),
                line,
                reason: format!("label `{l}`: {e}"),
            })
        })
        .collect()
}

/// One of `train`, `gallery`, `query` per line.
pub fn read_splits(path: impl AsRef<Path>) -> Result<Vec<Split>> {
    let path = path.as_ref();
    read_lines(path)?
        .into_iter()
        .map(|(line, l)| {
            l.parse::<Split>().map_err(|reason| Error::Parse {
                path: path.into(),
                line,
                reason,
            })
        })
        .collect()
}

fn write_lines<T: std::fmt::Display>(path: &Path, items: &[T]) -> Result<()> {
    let mut out = String::new();
    for it in items {
        out.push_str(&it.to_string());
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn write_labels(path: impl AsRef<Path>, labels: &[u32]) -> Result<()> {
    write_lines(path.as_ref(), labels)
}

pub fn write_splits(path: impl AsRef<Path>, splits: &[Split]) -> Result<()> {
    write_lines(path.as_ref(), splits)
}

/// Loads and cross-validates the three dataset files.
pub fn load_dataset(
    emb_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    split_path: impl AsRef<Path>,
    num_classes: Option<usize>,
) -> Result<LabeledDataset> {
    let emb = read_emb(emb_path.as_ref())?;
    let labels = read_labels(labels_path.as_ref())?;
    let splits = read_splits(split_path.as_ref())?;
    if labels.len() != emb.n() {
        return Err(Error::Format {
            path: labels_path.as_ref().into(),
            reason: format!("{} labels for {} embeddings", labels.len(), emb.n()),
        });
    }
    if splits.len() != emb.n() {
        return Err(Error::Format {
            path: split_path.as_ref().into(),
            reason: format!("{} split tags for {} embeddings", splits.len(), emb.n()),
        });
    }
    LabeledDataset::new(emb, labels, splits, num_classes)
}

pub fn save_dataset(
    ds: &LabeledDataset,
    emb_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    split_path: impl AsRef<Path>,
) -> Result<()> {
    write_emb(emb_path, ds.embeddings())?;
    write_labels(labels_path, ds.labels())?;
    write_splits(split_path, ds.splits())
}
