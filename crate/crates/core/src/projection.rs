//! Per-modality projection head: two `linear → GLU` blocks.
//!
//! ```text
//! x (B×d_in) → ·W1 + b1 (B×2h) → GLU (B×h) → ·W2 + b2 (B×2d_out) → GLU (B×d_out)
//! ```
//!
//! Every row is processed independently.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{Matrix, Rng};

/// `(d_in, hidden, d_out)` of a head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadDims {
    pub d_in: usize,
    pub hidden: usize,
    pub d_out: usize,
}

impl HeadDims {
    pub fn new(d_in: usize, hidden: usize, d_out: usize) -> Self {
        Self { d_in, hidden, d_out }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_in == 0 || self.hidden == 0 || self.d_out == 0 {
            return Err(Error::arg(format!(
                "head dims must all be >= 1, got d_in={} hidden={} d_out={}",
                self.d_in, self.hidden, self.d_out
            )));
        }
        Ok(())
    }
}

/// Anything that maps a batch of features to a batch of embeddings.
pub trait Projector {
    fn project(&self, x: &Matrix) -> Result<Matrix>;
}

/// Passes features through untouched.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityProjector;

impl Projector for IdentityProjector {
    fn project(&self, x: &Matrix) -> Result<Matrix> {
        Ok(x.clone())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GluMlpHead {
    pub layer1_weight: Matrix,
    pub layer1_bias: Vec<f64>,
    pub layer2_weight: Matrix,
    pub layer2_bias: Vec<f64>,
}

/// Parameter gradients, laid out like [`GluMlpHead`].
#[derive(Clone, Debug, PartialEq)]
pub struct HeadGrads {
    pub layer1_weight: Matrix,
    pub layer1_bias: Vec<f64>,
    pub layer2_weight: Matrix,
    pub layer2_bias: Vec<f64>,
}

/// Activations kept from [`GluMlpHead::forward`] for the reverse pass.
#[derive(Clone, Debug)]
pub struct HeadCache {
    input: Matrix,
    pre1: Matrix,
    hidden: Matrix,
    pre2: Matrix,
}

pub const PARAM_NAMES: [&str; 4] = ["layer1_weight", "layer1_bias", "layer2_weight", "layer2_bias"];

#[inline]
fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Split-and-gate: `z[..d] ⊙ σ(z[d..])`.
pub fn glu(z: &[f64]) -> Result<Vec<f64>> {
    if !z.len().is_multiple_of(2) {
        return Err(Error::shape(format!("glu input length {} is odd", z.len())));
    }
    let (a, b) = z.split_at(z.len() / 2);
    Ok(a.iter().zip(b).map(|(&a, &b)| a * sigmoid(b)).collect())
}

fn glu_rows(z: &Matrix) -> Matrix {
    let d = z.cols() / 2;
    Matrix::from_fn(z.rows(), d, |i, k| {
        let row = z.row(i);
        row[k] * sigmoid(row[k + d])
    })
}

fn glu_rows_backward(z: &Matrix, grad: &Matrix) -> Matrix {
    let d = z.cols() / 2;
    let mut out = Matrix::zeros(z.rows(), z.cols());
    for i in 0..z.rows() {
        let zr = z.row(i);
        let g = grad.row(i);
        let o = out.row_mut(i);
        for k in 0..d {
            let s = sigmoid(zr[k + d]);
            o[k] = g[k] * s;
            o[k + d] = g[k] * zr[k] * s * (1.0 - s);
        }
    }
    out
}

fn affine(x: &Matrix, w: &Matrix, b: &[f64]) -> Result<Matrix> {
    let mut z = x.matmul(w)?;
    z.add_row_vector(b)?;
    Ok(z)
}

impl GluMlpHead {
    /// Xavier-uniform weights, zero biases.
    pub fn init(dims: HeadDims, rng: &mut Rng) -> Result<Self> {
        dims.validate()?;
        let HeadDims { d_in, hidden, d_out } = dims;
        let mut xavier = |fan_in: usize, fan_out: usize| {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            Matrix::from_fn(fan_in, fan_out, |_, _| rng.uniform(-bound, bound))
        };
        Ok(Self {
            layer1_weight: xavier(d_in, 2 * hidden),
            layer1_bias: vec![0.0; 2 * hidden],
            layer2_weight: xavier(hidden, 2 * d_out),
            layer2_bias: vec![0.0; 2 * d_out],
        })
    }

    pub fn zeros(dims: HeadDims) -> Self {
        Self {
            layer1_weight: Matrix::zeros(dims.d_in, 2 * dims.hidden),
            layer1_bias: vec![0.0; 2 * dims.hidden],
            layer2_weight: Matrix::zeros(dims.hidden, 2 * dims.d_out),
            layer2_bias: vec![0.0; 2 * dims.d_out],
        }
    }

    /// Assembles a head from raw parameters, checking that the shapes agree.
    pub fn from_parts(
        layer1_weight: Matrix,
        layer1_bias: Vec<f64>,
        layer2_weight: Matrix,
        layer2_bias: Vec<f64>,
    ) -> Result<Self> {
        let head = Self { layer1_weight, layer1_bias, layer2_weight, layer2_bias };
        head.check()?;
        Ok(head)
    }

    fn check(&self) -> Result<()> {
        let (d_in, two_h) = self.layer1_weight.shape();
        let (h, two_out) = self.layer2_weight.shape();
        if two_h % 2 != 0 || two_out % 2 != 0 || two_h != 2 * h {
            return Err(Error::shape(format!("inconsistent head weights {d_in}x{two_h} and {h}x{two_out}")));
        }
        if self.layer1_bias.len() != two_h || self.layer2_bias.len() != two_out {
            return Err(Error::shape(format!(
                "bias lengths {} and {} do not match weights {d_in}x{two_h}, {h}x{two_out}",
                self.layer1_bias.len(),
                self.layer2_bias.len()
            )));
        }
        Ok(())
    }

    pub fn dims(&self) -> HeadDims {
        HeadDims {
            d_in: self.layer1_weight.rows(),
            hidden: self.layer2_weight.rows(),
            d_out: self.layer2_weight.cols() / 2,
        }
    }

    pub fn param_slices(&self) -> [&[f64]; 4] {
        [self.layer1_weight.as_slice(), &self.layer1_bias, self.layer2_weight.as_slice(), &self.layer2_bias]
    }

    pub fn param_slices_mut(&mut self) -> [&mut [f64]; 4] {
        [
            self.layer1_weight.as_mut_slice(),
            &mut self.layer1_bias,
            self.layer2_weight.as_mut_slice(),
            &mut self.layer2_bias,
        ]
    }

    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, HeadCache)> {
        let dims = self.dims();
        if x.cols() != dims.d_in {
            return Err(Error::shape(format!("head expects {} input features, batch has {}", dims.d_in, x.cols())));
        }
        let pre1 = affine(x, &self.layer1_weight, &self.layer1_bias)?;
        let hidden = glu_rows(&pre1);
        let pre2 = affine(&hidden, &self.layer2_weight, &self.layer2_bias)?;
        let out = glu_rows(&pre2);
        Ok((out, HeadCache { input: x.clone(), pre1, hidden, pre2 }))
    }

    /// Reverse pass: parameter gradients and `∂/∂x`.
    pub fn backward(&self, cache: &HeadCache, grad_out: &Matrix) -> Result<(HeadGrads, Matrix)> {
        let expect = (cache.pre2.rows(), cache.pre2.cols() / 2);
        if grad_out.shape() != expect || cache.pre2.cols() != self.layer2_bias.len() {
            return Err(Error::shape(format!(
                "upstream gradient is {}x{}, forward output was {}x{}",
                grad_out.rows(),
                grad_out.cols(),
                expect.0,
                expect.1
            )));
        }
        let d_pre2 = glu_rows_backward(&cache.pre2, grad_out);
        let layer2_weight = cache.hidden.matmul_tn(&d_pre2)?;
        let layer2_bias = d_pre2.column_sums();
        let d_hidden = d_pre2.matmul_nt(&self.layer2_weight)?;

        let d_pre1 = glu_rows_backward(&cache.pre1, &d_hidden);
        let layer1_weight = cache.input.matmul_tn(&d_pre1)?;
        let layer1_bias = d_pre1.column_sums();
        let grad_x = d_pre1.matmul_nt(&self.layer1_weight)?;

        Ok((HeadGrads { layer1_weight, layer1_bias, layer2_weight, layer2_bias }, grad_x))
    }
}

impl HeadGrads {
    pub fn slices(&self) -> [&[f64]; 4] {
        [self.layer1_weight.as_slice(), &self.layer1_bias, self.layer2_weight.as_slice(), &self.layer2_bias]
    }
}

impl Projector for GluMlpHead {
    fn project(&self, x: &Matrix) -> Result<Matrix> {
        self.forward(x).map(|(out, _)| out)
    }
}
