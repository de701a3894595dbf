use std::collections::HashMap;
use std::path::Path;

use crate::data_io::{sample_caption_words, EmbeddingStore, PairManifest, PoolingMode, Split};
use crate::error::{Error, Result};
use crate::numeric::{Matrix, Rng};

pub const X_STORE_FILE: &str = "x.emb";
pub const Y_STORE_FILE: &str = "y.emb";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Caption features grouped per caption: one row per word vector.
///
/// Built from an [`EmbeddingStore`] whose ids are either plain caption ids
/// (one pooled vector each) or `"<caption>#<k>"` for the `k`-th word vector
/// of `<caption>`.
#[derive(Clone, Debug, PartialEq)]
pub struct CaptionStore {
    ids: Vec<String>,
    words: Vec<Matrix>,
    index: HashMap<String, usize>,
    dim: usize,
}

fn caption_key(id: &str) -> &str {
    match id.rsplit_once('#') {
        Some((head, tail)) if !tail.is_empty() && tail.bytes().all(|b| b.is_ascii_digit()) => head,
        _ => id,
    }
}

impl CaptionStore {
    pub fn from_store(store: &EmbeddingStore) -> Self {
        let dim = store.dim();
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut ids = Vec::new();
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut counts: Vec<usize> = Vec::new();
        for (r, id) in store.ids().iter().enumerate() {
            let key = caption_key(id);
            let slot = *index.entry(key.to_owned()).or_insert_with(|| {
                ids.push(key.to_owned());
                rows.push(Vec::new());
                counts.push(0);
                ids.len() - 1
            });
            rows[slot].extend_from_slice(store.matrix().row(r));
            counts[slot] += 1;
        }
        let words = rows
            .into_iter()
            .zip(counts)
            .map(|(data, n)| Matrix::from_vec(n, dim, data).expect("rows collected with fixed width"))
            .collect();
        Self { ids, words, index, dim }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn words(&self, caption: usize) -> &Matrix {
        &self.words[caption]
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }
}

/// Both modalities plus the manifest, with every pair resolved to row indices.
#[derive(Clone, Debug)]
pub struct Dataset {
    x: EmbeddingStore,
    captions: CaptionStore,
    manifest: PairManifest,
    x_rows: Vec<usize>,
    y_rows: Vec<usize>,
}

impl Dataset {
    /// Fails with a validation error if the manifest names an unknown id.
    pub fn new(x: EmbeddingStore, y: &EmbeddingStore, manifest: PairManifest) -> Result<Self> {
        manifest.validate()?;
        let captions = CaptionStore::from_store(y);
        let mut x_rows = Vec::with_capacity(manifest.len());
        let mut y_rows = Vec::with_capacity(manifest.len());
        for r in &manifest.records {
            let xr = x
                .row_of(&r.x_id)
                .ok_or_else(|| Error::Validation(format!("pair {:?}: x_id {:?} not in x store", r.pair_id, r.x_id)))?;
            let yr = captions
                .position(&r.y_id)
                .ok_or_else(|| Error::Validation(format!("pair {:?}: y_id {:?} not in y store", r.pair_id, r.y_id)))?;
            x_rows.push(xr);
            y_rows.push(yr);
        }
        Ok(Self { x, captions, manifest, x_rows, y_rows })
    }

    /// Reads `x.emb`, `y.emb` and `manifest.json` from `dir`.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let x = EmbeddingStore::load(dir.join(X_STORE_FILE))?;
        let y = EmbeddingStore::load(dir.join(Y_STORE_FILE))?;
        let manifest = PairManifest::load(dir.join(MANIFEST_FILE))?;
        Self::new(x, &y, manifest)
    }

    pub fn manifest(&self) -> &PairManifest {
        &self.manifest
    }

    pub fn captions(&self) -> &CaptionStore {
        &self.captions
    }

    pub fn x_dim(&self) -> usize {
        self.x.dim()
    }

    pub fn y_dim(&self) -> usize {
        self.captions.dim()
    }

    /// Pair indices belonging to `split`.
    pub fn split(&self, split: Split) -> Vec<usize> {
        self.manifest.split_indices(split)
    }

    pub fn x_batch(&self, pairs: &[usize]) -> Matrix {
        let rows: Vec<usize> = pairs.iter().map(|&p| self.x_rows[p]).collect();
        self.x.matrix().select_rows(&rows)
    }

    /// Pooled caption vectors for `pairs`, one row per pair.
    pub fn y_batch(&self, pairs: &[usize], mode: PoolingMode, k: usize, rng: &mut Rng) -> Result<Matrix> {
        let mut data = Vec::with_capacity(pairs.len() * self.y_dim());
        for &p in pairs {
            let words = self.captions.words(self.y_rows[p]);
            data.extend(sample_caption_words(words, k, rng, mode)?);
        }
        Matrix::from_vec(pairs.len(), self.y_dim(), data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_io::PairRecord;

    fn store(ids: &[&str], d: usize) -> EmbeddingStore {
        let m = Matrix::from_fn(ids.len(), d, |i, j| (i * d + j) as f64);
        EmbeddingStore::new(ids.iter().map(|s| s.to_string()).collect(), m).unwrap()
    }

    #[test]
    fn groups_word_rows() {
        let s = store(&["a#0", "b", "a#1", "c#x", "a#2"], 2);
        let caps = CaptionStore::from_store(&s);
        assert_eq!(caps.ids(), &["a", "b", "c#x"]);
        assert_eq!(caps.words(0).rows(), 3);
        assert_eq!(caps.words(0).row(1), &[4.0, 5.0]);
        assert_eq!(caps.words(1).rows(), 1);
    }

    #[test]
    fn resolves_pairs_and_batches() {
        let x = store(&["v0", "v1"], 3);
        let y = store(&["c1#0", "c1#1", "c0"], 2);
        let rec =
            |p: &str, x: &str, y: &str, split| PairRecord { pair_id: p.into(), x_id: x.into(), y_id: y.into(), split };
        let manifest =
            PairManifest::new(vec![rec("p0", "v0", "c0", Split::Train), rec("p1", "v1", "c1", Split::Test)]).unwrap();
        let ds = Dataset::new(x, &y, manifest).unwrap();
        assert_eq!(ds.split(Split::Test), vec![1]);
        assert_eq!(ds.x_batch(&[1, 0]).row(0), &[3.0, 4.0, 5.0]);
        let yb = ds.y_batch(&[1, 0], PoolingMode::Eval, 10, &mut Rng::new(0)).unwrap();
        assert_eq!(yb.row(0), &[1.0, 2.0]);
        assert_eq!(yb.row(1), &[4.0, 5.0]);

        let bad = PairManifest::new(vec![rec("p0", "v9", "c0", Split::Train)]).unwrap();
        assert!(matches!(Dataset::new(store(&["v0"], 1), &store(&["c0"], 1), bad), Err(Error::Validation(_))));
    }
}
