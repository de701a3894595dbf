//! Contrastive objectives over a similarity matrix.
//!
//! Each directional loss scores the rows of `S` (anchor `x_i` against every
//! `y_j`) and returns the mean row loss together with the exact gradient
//! `∂L/∂S`. [`bidirectional_loss`] adds the column direction by running the
//! same directional loss on `Sᵀ`.
//!
//! Four objectives are provided:
//!
//! * NCE: `−log(e^{S_ii} / Σ_{j≠i} e^{S_ij})`. The positive is left out of
//!   the denominator unless [`LossParams::include_positive_in_nce`] is set.
//! * SHN: triplet hinge on one mined semi-hard negative per row.
//! * MMS: margin softmax `−log(e^{S_ii−M} / (e^{S_ii−M} + Σ_{j≠i} e^{S_ij}))`
//!   with a scheduled scalar margin.
//! * AMM: the MMS form with a per-row margin
//!   `M_i = α·(S_ii − mean_{j≠i} S_ij)`. The margin is differentiated
//!   through, so at `α = 1` the positive similarity drops out of the loss.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{lse, Matrix};
use crate::similarity::SimilarityMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Nce,
    Shn,
    Mms,
    Amm,
}

impl LossKind {
    pub const ALL: [LossKind; 4] = [LossKind::Nce, LossKind::Shn, LossKind::Mms, LossKind::Amm];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Nce => "nce",
            LossKind::Shn => "shn",
            LossKind::Mms => "mms",
            LossKind::Amm => "amm",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nce" => Ok(LossKind::Nce),
            "shn" => Ok(LossKind::Shn),
            "mms" => Ok(LossKind::Mms),
            "amm" => Ok(LossKind::Amm),
            other => Err(Error::arg(format!("unknown loss kind {other:?} (expected nce, shn, mms or amm)"))),
        }
    }
}

/// Scalar loss and its gradient with respect to the similarity matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    pub grad_s: Matrix,
}

/// Margin that starts at `initial` and is multiplied by `growth` every
/// `period_steps` optimizer steps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MmsSchedule {
    pub initial: f64,
    pub growth: f64,
    pub period_steps: u64,
}

impl Default for MmsSchedule {
    fn default() -> Self {
        Self { initial: 0.001, growth: 1.002, period_steps: 1000 }
    }
}

impl MmsSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.initial > 0.0 && self.initial.is_finite()) {
            return Err(Error::arg(format!("mms initial margin must be > 0, got {}", self.initial)));
        }
        if !(self.growth >= 1.0 && self.growth.is_finite()) {
            return Err(Error::arg(format!("mms growth must be >= 1, got {}", self.growth)));
        }
        if self.period_steps < 1 {
            return Err(Error::arg("mms period_steps must be >= 1"));
        }
        Ok(())
    }

    pub fn margin_at(&self, step: u64) -> f64 {
        mms_margin_at(self, step)
    }
}

/// `initial × growth^⌊step / period_steps⌋`.
pub fn mms_margin_at(schedule: &MmsSchedule, step: u64) -> f64 {
    let periods = step / schedule.period_steps.max(1);
    schedule.initial * schedule.growth.powf(periods as f64)
}

/// Dampening of the adaptive mean margin; `alpha ∈ [0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmmConfig {
    pub alpha: f64,
}

impl Default for AmmConfig {
    fn default() -> Self {
        Self { alpha: 0.5 }
    }
}

impl AmmConfig {
    pub fn new(alpha: f64) -> Result<Self> {
        let cfg = Self { alpha };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::arg(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        Ok(())
    }
}

/// Per-kind knobs for [`bidirectional_loss`]. Only the fields of the selected
/// kind are read.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossParams {
    pub shn_margin: f64,
    pub mms_margin: f64,
    pub amm: AmmConfig,
    pub include_positive_in_nce: bool,
}

impl Default for LossParams {
    fn default() -> Self {
        Self {
            shn_margin: 1.0,
            mms_margin: MmsSchedule::default().initial,
            amm: AmmConfig::default(),
            include_positive_in_nce: false,
        }
    }
}

fn check_batch(s: &SimilarityMatrix) -> Result<usize> {
    let b = s.batch();
    if b < 2 {
        return Err(Error::DegenerateBatch(b));
    }
    s.matrix().ensure_finite("similarity matrix")?;
    Ok(b)
}

fn finish(value: f64, grad_s: Matrix) -> Result<LossOutput> {
    if !value.is_finite() {
        return Err(Error::Numeric(format!("loss value {value}")));
    }
    grad_s.ensure_finite("loss gradient")?;
    Ok(LossOutput { value, grad_s })
}

/// NCE over rows with only negatives in the denominator.
pub fn nce_directional(s: &SimilarityMatrix) -> Result<LossOutput> {
    let b = check_batch(s)?;
    let inv_b = 1.0 / b as f64;
    let mut value = 0.0;
    let mut grad = Matrix::zeros(b, b);
    for i in 0..b {
        let row = s.row(i);
        let negatives = row.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &v)| v);
        let log_z = lse(negatives);
        value += log_z - row[i];
        let g = grad.row_mut(i);
        for (j, (gj, &sj)) in g.iter_mut().zip(row).enumerate() {
            *gj = if j == i { -inv_b } else { (sj - log_z).exp() * inv_b };
        }
    }
    finish(value * inv_b, grad)
}

/// Standard InfoNCE: the positive also appears in the denominator.
pub fn nce_directional_with_positive(s: &SimilarityMatrix) -> Result<LossOutput> {
    let b = check_batch(s)?;
    let (value, grad, _) = margin_softmax(s, &vec![0.0; b]);
    finish(value, grad)
}

/// Shared margin-softmax core. Row `i` uses logit `S_ii − margins[i]` for the
/// positive. Returns the mean loss, `∂L/∂S` with the margins held fixed, and
/// `∂ℓ_i/∂(positive logit)` per row (unscaled by `1/B`).
fn margin_softmax(s: &SimilarityMatrix, margins: &[f64]) -> (f64, Matrix, Vec<f64>) {
    let b = s.batch();
    let inv_b = 1.0 / b as f64;
    let mut value = 0.0;
    let mut grad = Matrix::zeros(b, b);
    let mut pos_coef = Vec::with_capacity(b);
    for i in 0..b {
        let row = s.row(i);
        let pos = row[i] - margins[i];
        let logits = row.iter().enumerate().map(|(j, &v)| if j == i { pos } else { v });
        let log_z = lse(logits);
        value += log_z - pos;
        let q = (pos - log_z).exp() - 1.0;
        pos_coef.push(q);
        let g = grad.row_mut(i);
        for (j, (gj, &sj)) in g.iter_mut().zip(row).enumerate() {
            *gj = if j == i { q * inv_b } else { (sj - log_z).exp() * inv_b };
        }
    }
    (value * inv_b, grad, pos_coef)
}

/// Margin softmax with scalar margin `m` on every row.
pub fn mms_directional(s: &SimilarityMatrix, m: f64) -> Result<LossOutput> {
    let b = check_batch(s)?;
    if !m.is_finite() {
        return Err(Error::arg(format!("margin must be finite, got {m}")));
    }
    let (value, grad, _) = margin_softmax(s, &vec![m; b]);
    finish(value, grad)
}

/// Triplet hinge with one mined negative per row.
///
/// The mined negative is the most similar `j ≠ i` with `S_ij < S_ii`; if no
/// negative is below the positive, the least similar negative is used. Ties
/// go to the smallest column index.
pub fn shn_directional(s: &SimilarityMatrix, m: f64) -> Result<LossOutput> {
    let b = check_batch(s)?;
    let inv_b = 1.0 / b as f64;
    let mut value = 0.0;
    let mut grad = Matrix::zeros(b, b);
    for i in 0..b {
        let j = mine_semi_hard(s.row(i), i);
        let hinge = s.get(i, j) - s.get(i, i) + m;
        if hinge > 0.0 {
            value += hinge;
            grad[(i, j)] += inv_b;
            grad[(i, i)] -= inv_b;
        }
    }
    finish(value * inv_b, grad)
}

/// Column index of the mined negative for anchor `i`.
pub fn mine_semi_hard(row: &[f64], i: usize) -> usize {
    let pos = row[i];
    let mut best: Option<usize> = None;
    let mut fallback: Option<usize> = None;
    for (j, &v) in row.iter().enumerate() {
        if j == i {
            continue;
        }
        if v < pos && best.is_none_or(|k| v > row[k]) {
            best = Some(j);
        }
        if fallback.is_none_or(|k| v < row[k]) {
            fallback = Some(j);
        }
    }
    best.or(fallback).expect("row has at least one negative")
}

/// `M_i = α·(S_ii − mean_{j≠i} S_ij)` for every row.
pub fn amm_margins(s: &SimilarityMatrix, cfg: &AmmConfig) -> Result<Vec<f64>> {
    let b = check_batch(s)?;
    cfg.validate()?;
    Ok(raw_amm_margins(s, cfg.alpha, b))
}

fn raw_amm_margins(s: &SimilarityMatrix, alpha: f64, b: usize) -> Vec<f64> {
    let denom = (b - 1) as f64;
    (0..b)
        .map(|i| {
            let row = s.row(i);
            let neg_sum: f64 = row.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, v)| v).sum();
            alpha * (row[i] - neg_sum / denom)
        })
        .collect()
}

/// Margin softmax with the adaptive mean margin, differentiated through the
/// margin.
pub fn amm_directional(s: &SimilarityMatrix, cfg: &AmmConfig) -> Result<LossOutput> {
    let b = check_batch(s)?;
    cfg.validate()?;
    let alpha = cfg.alpha;
    let margins = raw_amm_margins(s, alpha, b);
    let (value, mut grad, pos_coef) = margin_softmax(s, &margins);

    // Positive logit is (1 − α)·S_ii + α/(B−1)·Σ_{j≠i} S_ij.
    let inv_b = 1.0 / b as f64;
    let spread = alpha / (b - 1) as f64;
    for (i, &q) in pos_coef.iter().enumerate() {
        let g = grad.row_mut(i);
        for (j, gj) in g.iter_mut().enumerate() {
            if j == i {
                *gj = q * (1.0 - alpha) * inv_b;
            } else {
                *gj += q * spread * inv_b;
            }
        }
    }
    finish(value, grad)
}

/// One direction of the selected loss.
pub fn directional_loss(kind: LossKind, s: &SimilarityMatrix, params: &LossParams) -> Result<LossOutput> {
    match kind {
        LossKind::Nce if params.include_positive_in_nce => nce_directional_with_positive(s),
        LossKind::Nce => nce_directional(s),
        LossKind::Shn => shn_directional(s, params.shn_margin),
        LossKind::Mms => mms_directional(s, params.mms_margin),
        LossKind::Amm => amm_directional(s, &params.amm),
    }
}

/// Both directions of the selected loss: `(rows of S, rows of Sᵀ)`. The second
/// output's gradient is already transposed back into the layout of `S`.
pub fn bidirectional_parts(
    kind: LossKind,
    s: &SimilarityMatrix,
    params: &LossParams,
) -> Result<(LossOutput, LossOutput)> {
    let forward = directional_loss(kind, s, params)?;
    let mut backward = directional_loss(kind, &s.transpose(), params)?;
    backward.grad_s = backward.grad_s.transpose();
    Ok((forward, backward))
}

/// `L = L_xy + L_yx`, with the gradient summed over both directions.
pub fn bidirectional_loss(kind: LossKind, s: &SimilarityMatrix, params: &LossParams) -> Result<LossOutput> {
    let (forward, backward) = bidirectional_parts(kind, s, params)?;
    let mut grad_s = forward.grad_s;
    grad_s.add_assign(&backward.grad_s)?;
    Ok(LossOutput { value: forward.value + backward.value, grad_s })
}
