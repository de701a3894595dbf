//! Shared fixtures for the criterion benches.

use amm_align::data_io::{synth_generate, Dataset, SyntheticSpec};
use amm_align::projection::{GluMlpHead, HeadDims};
use amm_align::{Matrix, Rng, SimilarityMatrix};

pub fn gaussian(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = Rng::new(seed);
    Matrix::from_fn(rows, cols, |_, _| rng.normal())
}

pub fn similarity(b: usize, seed: u64) -> SimilarityMatrix {
    SimilarityMatrix::new(gaussian(b, b, seed)).expect("square")
}

pub fn head(d_in: usize, hidden: usize, d_out: usize, seed: u64) -> GluMlpHead {
    GluMlpHead::init(HeadDims::new(d_in, hidden, d_out), &mut Rng::new(seed)).expect("valid dims")
}

/// Default synthetic set shrunk to `n` pairs.
pub fn dataset(n: usize) -> Dataset {
    synth_generate(&SyntheticSpec { n_pairs: n, ..SyntheticSpec::default() })
        .and_then(|d| d.dataset())
        .expect("synthetic data")
}
