//! Dense embedding matrices and their binary file format.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic  b"EMB1"
//! u32    version (1)
//! u64    n_rows
//! u32    dim
//! f32    n_rows * dim values, row-major
//! ids    n_rows image ids, each terminated by '\n'
//! ```

use std::collections::HashMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"EMB1";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 20;

/// Row-major `f32` feature vectors with one image id per row.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    dim: usize,
    data: Vec<f32>,
    row_ids: Vec<String>,
}

impl EmbeddingMatrix {
    pub fn new(dim: usize, data: Vec<f32>, row_ids: Vec<String>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Embedding("dimension must be positive".into()));
        }
        if data.len() != row_ids.len() * dim {
            return Err(Error::Embedding(format!(
                "{} values do not fill {} rows of dimension {dim}",
                data.len(),
                row_ids.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Embedding(format!(
                "non-finite value in row {:?}",
                row_ids[pos / dim]
            )));
        }
        if let Some(id) = row_ids.iter().find(|id| id.is_empty() || id.contains('\n')) {
            return Err(Error::Embedding(format!("invalid row id {id:?}")));
        }
        Ok(EmbeddingMatrix { dim, data, row_ids })
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows<I, S>(rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Vec<f32>)>,
        S: Into<String>,
    {
        let mut dim = None;
        let mut data = Vec::new();
        let mut ids = Vec::new();
        for (id, row) in rows {
            let id = id.into();
            match dim {
                None => dim = Some(row.len()),
                Some(d) if d != row.len() => {
                    return Err(Error::Embedding(format!(
                        "row {id:?} has dimension {} instead of {d}",
                        row.len()
                    )))
                }
                _ => {}
            }
            data.extend_from_slice(&row);
            ids.push(id);
        }
        // an empty matrix still needs a nominal width
        EmbeddingMatrix::new(dim.unwrap_or(1), data, ids)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_rows(&self) -> usize {
        self.row_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.row_ids.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row_ids(&self) -> &[String] {
        &self.row_ids
    }

    /// Maps image id to row number. Later duplicates win.
    pub fn id_index(&self) -> HashMap<&str, usize> {
        self.row_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let ids_len: usize = self.row_ids.iter().map(|s| s.len() + 1).sum();
        let mut out = Vec::with_capacity(HEADER_LEN + self.data.len() * 4 + ids_len);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.n_rows() as u64).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for id in &self.row_ids {
            out.extend_from_slice(id.as_bytes());
            out.push(b'\n');
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Embedding(format!(
                "{} bytes is shorter than the {HEADER_LEN}-byte header",
                bytes.len()
            )));
        }
        if &bytes[0..4] != MAGIC {
            return Err(Error::Embedding("bad magic, expected EMB1".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(Error::Embedding(format!("unsupported version {version}")));
        }
        let n_rows = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let dim = u32::from_le_bytes(bytes[16..20].try_into().unwrap()) as usize;
        let n_values = usize::try_from(n_rows)
            .ok()
            .and_then(|n| n.checked_mul(dim))
            .filter(|n| n.checked_mul(4).is_some())
            .ok_or_else(|| Error::Embedding(format!("{n_rows} x {dim} overflows")))?;
        let float_end = HEADER_LEN + n_values * 4;
        if bytes.len() < float_end {
            return Err(Error::Embedding(format!(
                "truncated: {n_rows} x {dim} floats need {float_end} bytes, have {}",
                bytes.len()
            )));
        }
        let data: Vec<f32> = bytes[HEADER_LEN..float_end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let tail = std::str::from_utf8(&bytes[float_end..])
            .map_err(|e| Error::Embedding(format!("id table is not UTF-8: {e}")))?;
        let tail = tail.strip_suffix('\n').unwrap_or(tail);
        let row_ids: Vec<String> = if tail.is_empty() {
            Vec::new()
        } else {
            tail.split('\n').map(str::to_owned).collect()
        };
        if row_ids.len() as u64 != n_rows {
            return Err(Error::Embedding(format!(
                "header declares {n_rows} rows but id table has {}",
                row_ids.len()
            )));
        }
        EmbeddingMatrix::new(dim, data, row_ids)
    }
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingMatrix> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    EmbeddingMatrix::from_bytes(&bytes)
        .map_err(|e| Error::Embedding(format!("{}: {e}", path.display())))
}

pub fn write_embeddings(matrix: &EmbeddingMatrix, path: &Path) -> Result<()> {
    fs::File::create(path)
        .and_then(|mut f| f.write_all(&matrix.to_bytes()))
        .map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let m = EmbeddingMatrix::from_rows([("a", vec![1.0, 2.0]), ("b", vec![3.0, 4.0])]).unwrap();
        let b = m.to_bytes();
        assert_eq!(&b[0..4], b"EMB1");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(b[8..16].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(b[16..20].try_into().unwrap()), 2);
        assert_eq!(f32::from_le_bytes(b[20..24].try_into().unwrap()), 1.0);
        assert_eq!(&b[36..], b"a\nb\n");
    }

    #[test]
    fn id_table_without_trailing_newline_is_accepted() {
        let m = EmbeddingMatrix::from_rows([("a", vec![1.0]), ("b", vec![2.0])]).unwrap();
        let mut b = m.to_bytes();
        b.pop();
        assert_eq!(EmbeddingMatrix::from_bytes(&b).unwrap(), m);
    }

    #[test]
    fn rejects_nan_and_ragged_rows() {
        assert!(EmbeddingMatrix::from_rows([("a", vec![f32::NAN])]).is_err());
        assert!(EmbeddingMatrix::from_rows([("a", vec![1.0]), ("b", vec![1.0, 2.0])]).is_err());
    }

    #[test]
    fn rejects_truncation_and_bad_magic() {
        let m = EmbeddingMatrix::from_rows([("a", vec![1.0, 2.0])]).unwrap();
        let b = m.to_bytes();
        assert!(EmbeddingMatrix::from_bytes(&b[..22]).is_err());
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(EmbeddingMatrix::from_bytes(&bad).is_err());
        // row count disagrees with id table
        let mut extra = b.clone();
        extra.extend_from_slice(b"zz\n");
        assert!(EmbeddingMatrix::from_bytes(&extra).is_err());
    }

    #[test]
    fn huge_header_does_not_allocate() {
        let mut b = Vec::new();
        b.extend_from_slice(b"EMB1");
        b.extend_from_slice(&1u32.to_le_bytes());
        b.extend_from_slice(&u64::MAX.to_le_bytes());
        b.extend_from_slice(&4096u32.to_le_bytes());
        assert!(EmbeddingMatrix::from_bytes(&b).is_err());
    }

    proptest! {
        #[test]
        fn bytes_round_trip(rows in prop::collection::vec(prop::collection::vec(-1e3f32..1e3, 3), 0..20)) {
            let m = EmbeddingMatrix::from_rows(rows.into_iter().enumerate().map(|(i, r)| (format!("id{i}"), r))).unwrap();
            prop_assert_eq!(EmbeddingMatrix::from_bytes(&m.to_bytes()).unwrap(), m);
        }

        #[test]
        fn arbitrary_bytes_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..64)) {
            let _ = EmbeddingMatrix::from_bytes(&bytes);
        }
    }
}
