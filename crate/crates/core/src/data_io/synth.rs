use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data_io::dataset::{MANIFEST_FILE, X_STORE_FILE, Y_STORE_FILE};
use crate::data_io::{Dataset, EmbeddingStore, PairManifest, PairRecord, Split};
use crate::error::{Error, Result};
use crate::numeric::{dot, Matrix, Rng};

/// Recipe for paired features `x_i = A z_i + σε`, `y_i = C z_i + σε'`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n_pairs: usize,
    pub d_latent: usize,
    pub d_x: usize,
    pub d_y: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    /// 0 writes one vector per caption; otherwise each caption gets between 1
    /// and this many noisy word vectors.
    pub words_per_caption: usize,
    /// Use identity mixing maps (requires `d_x == d_y == d_latent`).
    pub identity_maps: bool,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_pairs: 2000,
            d_latent: 16,
            d_x: 64,
            d_y: 48,
            noise_sigma: 0.5,
            seed: 7,
            words_per_caption: 0,
            identity_maps: false,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_pairs == 0 || self.d_latent == 0 || self.d_x == 0 || self.d_y == 0 {
            return Err(Error::arg("synthetic counts and dimensions must be >= 1"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::arg(format!("noise_sigma must be >= 0, got {}", self.noise_sigma)));
        }
        if self.d_x < self.d_latent || self.d_y < self.d_latent {
            return Err(Error::arg(format!(
                "orthonormal maps need d_x, d_y >= d_latent ({} / {} < {})",
                self.d_x, self.d_y, self.d_latent
            )));
        }
        if self.identity_maps && (self.d_x != self.d_latent || self.d_y != self.d_latent) {
            return Err(Error::arg("identity maps need d_x == d_y == d_latent"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub x: EmbeddingStore,
    pub y: EmbeddingStore,
    pub manifest: PairManifest,
    /// `A`, `d_x × d_latent` with orthonormal columns.
    pub x_map: Matrix,
    /// `C`, `d_y × d_latent` with orthonormal columns.
    pub y_map: Matrix,
}

impl SyntheticData {
    pub fn dataset(&self) -> Result<Dataset> {
        Dataset::new(self.x.clone(), &self.y, self.manifest.clone())
    }

    /// Writes `x.emb`, `y.emb` and `manifest.json` into `dir`.
    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        self.x.save(dir.join(X_STORE_FILE))?;
        self.y.save(dir.join(Y_STORE_FILE))?;
        self.manifest.save(dir.join(MANIFEST_FILE))
    }
}

/// Gaussian matrix orthonormalized column by column (modified Gram-Schmidt).
fn orthonormal_columns(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(cols);
    while columns.len() < cols {
        let mut v: Vec<f64> = (0..rows).map(|_| rng.normal()).collect();
        for q in &columns {
            let p = dot(q, &v);
            v.iter_mut().zip(q).for_each(|(a, b)| *a -= p * b);
        }
        let norm = dot(&v, &v).sqrt();
        // Redraw a numerically dependent column.
        if norm < 1e-8 {
            continue;
        }
        v.iter_mut().for_each(|a| *a /= norm);
        columns.push(v);
    }
    Matrix::from_fn(rows, cols, |i, j| columns[j][i])
}

fn split_of(i: usize, n: usize) -> Split {
    if i < n * 8 / 10 {
        Split::Train
    } else if i < n * 9 / 10 {
        Split::Eval
    } else {
        Split::Test
    }
}

/// Deterministic per seed; the first 80% of pairs are train, the next 10%
/// eval and the rest test.
pub fn synth_generate(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let root = Rng::new(spec.seed);
    let (x_map, y_map) = if spec.identity_maps {
        (Matrix::identity(spec.d_latent), Matrix::identity(spec.d_latent))
    } else {
        let mut maps = root.fork("maps");
        let a = orthonormal_columns(spec.d_x, spec.d_latent, &mut maps);
        let c = orthonormal_columns(spec.d_y, spec.d_latent, &mut maps);
        (a, c)
    };

    let mut latent_rng = root.fork("latent");
    let latent = Matrix::from_fn(spec.n_pairs, spec.d_latent, |_, _| latent_rng.normal());
    let clean_x = latent.matmul_nt(&x_map)?;
    let clean_y = latent.matmul_nt(&y_map)?;
    let sigma = spec.noise_sigma;

    let mut noise_x = root.fork("noise-x");
    let x = Matrix::from_fn(spec.n_pairs, spec.d_x, |i, j| clean_x[(i, j)] + sigma * noise_x.normal());

    let mut noise_y = root.fork("noise-y");
    let mut word_counts = root.fork("word-counts");
    let mut y_ids = Vec::with_capacity(spec.n_pairs);
    let mut y_data = Vec::with_capacity(spec.n_pairs * spec.d_y);
    for i in 0..spec.n_pairs {
        let n_words = if spec.words_per_caption == 0 { 0 } else { 1 + word_counts.below(spec.words_per_caption) };
        if n_words == 0 {
            y_ids.push(format!("c{i:06}"));
            y_data.extend(clean_y.row(i).iter().map(|&v| v + sigma * noise_y.normal()));
        } else {
            for k in 0..n_words {
                y_ids.push(format!("c{i:06}#{k}"));
                y_data.extend(clean_y.row(i).iter().map(|&v| v + sigma * noise_y.normal()));
            }
        }
    }
    let y_rows = y_ids.len();

    let x = EmbeddingStore::new((0..spec.n_pairs).map(|i| format!("v{i:06}")).collect(), x)?;
    let y = EmbeddingStore::new(y_ids, Matrix::from_vec(y_rows, spec.d_y, y_data)?)?;
    let manifest = PairManifest::new(
        (0..spec.n_pairs)
            .map(|i| PairRecord {
                pair_id: format!("p{i:06}"),
                x_id: format!("v{i:06}"),
                y_id: format!("c{i:06}"),
                split: split_of(i, spec.n_pairs),
            })
            .collect(),
    )?;
    Ok(SyntheticData { x, y, manifest, x_map, y_map })
}
