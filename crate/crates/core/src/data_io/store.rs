use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::data_io::{put_f64s, write_atomic, ByteReader};
use crate::error::{Error, Result};
use crate::numeric::Matrix;

const MAGIC: &[u8; 4] = b"EMB1";
const VERSION: u32 = 1;

/// Row-labelled feature matrix for one modality.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingStore {
    ids: Vec<String>,
    matrix: Matrix,
    index: HashMap<String, usize>,
}

impl EmbeddingStore {
    /// Checks that ids are unique, one per row, and that every entry is finite.
    pub fn new(ids: Vec<String>, matrix: Matrix) -> Result<Self> {
        if ids.len() != matrix.rows() {
            return Err(Error::Validation(format!("{} ids for {} rows", ids.len(), matrix.rows())));
        }
        if !matrix.is_finite() {
            return Err(Error::Validation("embedding matrix contains NaN or Inf".into()));
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (row, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), row).is_some() {
                return Err(Error::Validation(format!("duplicate id {id:?}")));
            }
        }
        Ok(Self { ids, matrix, index })
    }

    /// An `n = 0` store that still records its feature dimension.
    pub fn empty(d: usize) -> Self {
        Self { ids: Vec::new(), matrix: Matrix::zeros(0, d), index: HashMap::new() }
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn row_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + self.ids.len() * 16 + self.matrix.as_slice().len() * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.matrix.rows() as u64).to_le_bytes());
        out.extend_from_slice(&(self.matrix.cols() as u64).to_le_bytes());
        for id in &self.ids {
            out.extend_from_slice(&(id.len() as u32).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
        }
        put_f64s(&mut out, self.matrix.as_slice());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.magic(MAGIC)?;
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported EMB1 version {version}")));
        }
        let n = r.len_u64()?;
        let d = r.len_u64()?;
        let mut ids = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            let len = r.u32()? as usize;
            let raw = r.take(len)?;
            let id = std::str::from_utf8(raw).map_err(|e| Error::Format(format!("id is not UTF-8: {e}")))?;
            ids.push(id.to_owned());
        }
        let count = n.checked_mul(d).ok_or_else(|| Error::Format(format!("{n}x{d} payload overflows")))?;
        let data = r.f64s(count)?;
        r.finish()?;
        Self::new(ids, Matrix::from_vec(n, d, data)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
