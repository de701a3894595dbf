//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::projection::{GluMlpHead, HeadGrads, PARAM_NAMES};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamHyper {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self::with_lr(0.001)
    }
}

/// Moment buffers for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub hyper: AdamHyper,
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(hyper: AdamHyper, len: usize) -> Self {
        Self { hyper, t: 0, m: vec![0.0; len], v: vec![0.0; len] }
    }

    /// One update of `params` in place. `name` labels the tensor in errors.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], name: &str) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::shape(format!(
                "adam state for {name} holds {} entries, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        if let Some(k) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!("gradient of {name}[{k}]")));
        }
        let AdamHyper { lr, beta1, beta2, eps } = self.hyper;
        self.t += 1;
        let t = self.t as f64;
        let c1 = 1.0 - beta1.powf(t);
        let c2 = 1.0 - beta2.powf(t);
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

/// Functional form: applies one step and hands back the updated pieces.
pub fn adam_step(mut state: AdamState, mut params: Vec<f64>, grads: &[f64]) -> Result<(Vec<f64>, AdamState)> {
    state.step(&mut params, grads, "params")?;
    Ok((params, state))
}

/// One Adam state per parameter tensor of a [`GluMlpHead`].
#[derive(Clone, Debug, PartialEq)]
pub struct HeadOptimizer {
    states: [AdamState; 4],
}

impl HeadOptimizer {
    pub fn new(hyper: AdamHyper, head: &GluMlpHead) -> Self {
        let lens = head.param_slices().map(<[f64]>::len);
        Self { states: lens.map(|n| AdamState::new(hyper, n)) }
    }

    pub fn steps(&self) -> u64 {
        self.states[0].t
    }

    pub fn step(&mut self, head: &mut GluMlpHead, grads: &HeadGrads) -> Result<()> {
        for ((state, params), (g, name)) in
            self.states.iter_mut().zip(head.param_slices_mut()).zip(grads.slices().into_iter().zip(PARAM_NAMES))
        {
            state.step(params, g, name)?;
        }
        Ok(())
    }
}
