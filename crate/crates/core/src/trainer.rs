//! Mini-batch training of the two projection heads.
//!
//! Phase one trains both heads at `lr_phase1`; phase two restarts from the
//! best phase-one parameters with fresh Adam moments at `lr_phase2`. After
//! every epoch the eval split is scored with the retrieval protocol and the
//! heads with the highest mean-direction mAP are kept. All randomness derives
//! from `seed` through fixed labels: `init`, `train-shuffle`, `word-sample`
//! and `eval-sample`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data_io::{Dataset, PoolingMode, Split};
use crate::error::{Error, Result};
use crate::losses::{bidirectional_loss, AmmConfig, LossKind, LossParams, MmsSchedule};
use crate::numeric::{Matrix, Rng};
use crate::optim::{AdamHyper, HeadOptimizer};
use crate::projection::{GluMlpHead, HeadCache, HeadDims};
use crate::retrieval::{eval_protocol, EvalOptions, RetrievalReport};
use crate::similarity::{l2_normalize_backward, l2_normalize_rows, similarity_backward, similarity_forward};

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub loss_kind: LossKind,
    pub alpha: f64,
    pub shn_margin: f64,
    pub mms_schedule: MmsSchedule,
    pub include_positive_in_nce: bool,
    pub batch_size: usize,
    pub proj_dim: usize,
    pub hidden: usize,
    pub epochs: usize,
    /// `None` runs as many phase-two epochs as `epochs`.
    pub phase2_epochs: Option<usize>,
    pub lr_phase1: f64,
    pub lr_phase2: f64,
    pub word_sampling: bool,
    pub words_per_sample: usize,
    pub normalize: bool,
    pub n_samples: usize,
    pub sample_size: usize,
    pub seed: u64,
    #[serde(skip, default = "one")]
    pub eval_threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss_kind: LossKind::Amm,
            alpha: 0.5,
            shn_margin: 1.0,
            mms_schedule: MmsSchedule::default(),
            include_positive_in_nce: false,
            batch_size: 2048,
            proj_dim: 4096,
            hidden: 4096,
            epochs: 100,
            phase2_epochs: None,
            lr_phase1: 0.001,
            lr_phase2: 0.00001,
            word_sampling: true,
            words_per_sample: 10,
            normalize: false,
            n_samples: 5,
            sample_size: 1000,
            seed: 0,
            eval_threads: 1,
        }
    }
}

impl TrainConfig {
    /// Small model for CPU experiments: batch 256, 32-wide heads, 30 epochs.
    pub fn desk() -> Self {
        Self { batch_size: 256, proj_dim: 32, hidden: 32, epochs: 30, ..Self::default() }
    }

    pub fn phase2_epochs(&self) -> usize {
        self.phase2_epochs.unwrap_or(self.epochs)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::arg(format!("batch_size must be >= 2, got {}", self.batch_size)));
        }
        if self.epochs < 1 {
            return Err(Error::arg("epochs must be >= 1"));
        }
        if self.proj_dim < 1 || self.hidden < 1 {
            return Err(Error::arg("proj_dim and hidden must be >= 1"));
        }
        AmmConfig { alpha: self.alpha }.validate()?;
        self.mms_schedule.validate()?;
        for (name, lr) in [("lr_phase1", self.lr_phase1), ("lr_phase2", self.lr_phase2)] {
            if !(lr >= 0.0 && lr.is_finite()) {
                return Err(Error::arg(format!("{name} must be finite and >= 0, got {lr}")));
            }
        }
        if !self.shn_margin.is_finite() {
            return Err(Error::arg("shn_margin must be finite"));
        }
        if self.words_per_sample < 1 {
            return Err(Error::arg("words_per_sample must be >= 1"));
        }
        if self.n_samples < 1 || self.sample_size < 1 {
            return Err(Error::arg("n_samples and sample_size must be >= 1"));
        }
        Ok(())
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            n_samples: self.n_samples,
            sample_size: self.sample_size,
            normalize: self.normalize,
            threads: self.eval_threads,
        }
    }

    fn loss_params(&self, step: u64) -> LossParams {
        LossParams {
            shn_margin: self.shn_margin,
            mms_margin: self.mms_schedule.margin_at(step),
            amm: AmmConfig { alpha: self.alpha },
            include_positive_in_nce: self.include_positive_in_nce,
        }
    }
}

/// Stream used by every evaluation of a run; evaluations never advance it.
pub fn eval_rng(seed: u64) -> Rng {
    Rng::new(seed).fork("eval-sample")
}

#[derive(Clone, Debug)]
pub struct TrainState {
    pub x_head: GluMlpHead,
    pub y_head: GluMlpHead,
    pub x_opt: HeadOptimizer,
    pub y_opt: HeadOptimizer,
    pub best_x: GluMlpHead,
    pub best_y: GluMlpHead,
    pub best_metric: f64,
    pub best_epoch: Option<usize>,
    pub epoch: usize,
    pub global_step: u64,
    shuffle_rng: Rng,
    word_rng: Rng,
}

impl TrainState {
    pub fn new(config: &TrainConfig, x_dim: usize, y_dim: usize) -> Result<Self> {
        let root = Rng::new(config.seed);
        let init = root.fork("init");
        let x_head = GluMlpHead::init(HeadDims::new(x_dim, config.hidden, config.proj_dim), &mut init.fork("x"))?;
        let y_head = GluMlpHead::init(HeadDims::new(y_dim, config.hidden, config.proj_dim), &mut init.fork("y"))?;
        let hyper = AdamHyper::with_lr(config.lr_phase1);
        Ok(Self {
            x_opt: HeadOptimizer::new(hyper, &x_head),
            y_opt: HeadOptimizer::new(hyper, &y_head),
            best_x: x_head.clone(),
            best_y: y_head.clone(),
            x_head,
            y_head,
            best_metric: f64::NEG_INFINITY,
            best_epoch: None,
            epoch: 0,
            global_step: 0,
            shuffle_rng: root.fork("train-shuffle"),
            word_rng: root.fork("word-sample"),
        })
    }

    /// Restarts optimization from the best heads with fresh moments at `lr`.
    fn restart_from_best(&mut self, lr: f64) {
        self.x_head = self.best_x.clone();
        self.y_head = self.best_y.clone();
        let hyper = AdamHyper::with_lr(lr);
        self.x_opt = HeadOptimizer::new(hyper, &self.x_head);
        self.y_opt = HeadOptimizer::new(hyper, &self.y_head);
    }

    /// Records an eval score; returns true if it became the new best.
    fn offer(&mut self, metric: f64) -> bool {
        if metric > self.best_metric || self.best_epoch.is_none() {
            self.best_metric = metric;
            self.best_epoch = Some(self.epoch);
            self.best_x = self.x_head.clone();
            self.best_y = self.y_head.clone();
            true
        } else {
            false
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochTrace {
    pub epoch: usize,
    pub phase: u8,
    pub step_losses: Vec<f64>,
    pub mean_loss: f64,
    pub eval_metric: Option<f64>,
}

struct Embedded {
    out: Matrix,
    cache: HeadCache,
    unit: Option<(Matrix, Vec<f64>)>,
}

fn embed(head: &GluMlpHead, x: &Matrix, normalize: bool) -> Result<Embedded> {
    let (out, cache) = head.forward(x)?;
    let unit = normalize.then(|| l2_normalize_rows(&out));
    Ok(Embedded { out, cache, unit })
}

impl Embedded {
    fn features(&self) -> &Matrix {
        self.unit.as_ref().map_or(&self.out, |(u, _)| u)
    }

    fn grad_out(&self, grad: Matrix) -> Result<Matrix> {
        match &self.unit {
            Some((u, norms)) => l2_normalize_backward(&grad, u, norms),
            None => Ok(grad),
        }
    }
}

/// One pass over `train_pairs` in full batches; a trailing partial batch is
/// dropped.
pub fn train_epoch(
    state: &mut TrainState,
    config: &TrainConfig,
    data: &Dataset,
    train_pairs: &[usize],
    phase: u8,
) -> Result<EpochTrace> {
    let b = config.batch_size;
    if train_pairs.len() < b {
        return Err(Error::arg(format!("train split has {} pairs, fewer than one batch of {b}", train_pairs.len())));
    }
    let mut order = train_pairs.to_vec();
    state.shuffle_rng.shuffle(&mut order);
    let mode = if config.word_sampling { PoolingMode::Train } else { PoolingMode::Eval };

    let mut step_losses = Vec::with_capacity(order.len() / b);
    for batch in order.chunks_exact(b) {
        let x = data.x_batch(batch);
        let y = data.y_batch(batch, mode, config.words_per_sample, &mut state.word_rng)?;
        let ex = embed(&state.x_head, &x, config.normalize)?;
        let ey = embed(&state.y_head, &y, config.normalize)?;

        let s = similarity_forward(ex.features(), ey.features())?;
        let loss = bidirectional_loss(config.loss_kind, &s, &config.loss_params(state.global_step))?;
        let (gx, gy) = similarity_backward(&loss.grad_s, ex.features(), ey.features())?;

        let (grads_x, _) = state.x_head.backward(&ex.cache, &ex.grad_out(gx)?)?;
        let (grads_y, _) = state.y_head.backward(&ey.cache, &ey.grad_out(gy)?)?;
        state.x_opt.step(&mut state.x_head, &grads_x)?;
        state.y_opt.step(&mut state.y_head, &grads_y)?;

        state.global_step += 1;
        step_losses.push(loss.value);
    }
    state.epoch += 1;
    let mean_loss = step_losses.iter().sum::<f64>() / step_losses.len() as f64;
    Ok(EpochTrace { epoch: state.epoch, phase, step_losses, mean_loss, eval_metric: None })
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub traces: Vec<EpochTrace>,
    /// Test-split report computed with the best heads.
    pub report: RetrievalReport,
}

/// Both training phases with per-epoch selection on the eval split, then a
/// final test-split evaluation of the selected heads.
pub fn run_two_phase(config: &TrainConfig, data: &Dataset) -> Result<TrainOutcome> {
    config.validate()?;
    let train = data.split(Split::Train);
    for split in [Split::Eval, Split::Test] {
        if data.split(split).is_empty() {
            return Err(Error::arg(format!("{split} split is empty")));
        }
    }
    let opts = config.eval_options();
    let rng = eval_rng(config.seed);

    let mut state = TrainState::new(config, data.x_dim(), data.y_dim())?;
    let mut traces = Vec::new();
    for (phase, epochs, lr) in [(1u8, config.epochs, config.lr_phase1), (2, config.phase2_epochs(), config.lr_phase2)] {
        if epochs == 0 {
            continue;
        }
        if phase == 2 {
            state.restart_from_best(lr);
        }
        for _ in 0..epochs {
            let mut trace = train_epoch(&mut state, config, data, &train, phase)?;
            let report = eval_protocol(data, Split::Eval, &state.x_head, &state.y_head, &opts, &rng)?;
            let metric = report.selection_metric();
            state.offer(metric);
            trace.eval_metric = Some(metric);
            traces.push(trace);
        }
    }

    let report = eval_protocol(data, Split::Test, &state.best_x, &state.best_y, &opts, &rng)?;
    Ok(TrainOutcome { state, traces, report })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationAxis {
    Alpha,
    BatchSize,
    ProjDim,
    Sampling,
    LossKind,
}

impl fmt::Display for AblationAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AblationAxis::Alpha => "alpha",
            AblationAxis::BatchSize => "batch_size",
            AblationAxis::ProjDim => "proj_dim",
            AblationAxis::Sampling => "sampling",
            AblationAxis::LossKind => "loss_kind",
        })
    }
}

impl FromStr for AblationAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "alpha" => Ok(AblationAxis::Alpha),
            "batch_size" => Ok(AblationAxis::BatchSize),
            "proj_dim" => Ok(AblationAxis::ProjDim),
            "sampling" | "word_sampling" => Ok(AblationAxis::Sampling),
            "loss_kind" | "loss" => Ok(AblationAxis::LossKind),
            other => Err(Error::arg(format!("unknown ablation axis {other:?}"))),
        }
    }
}

impl AblationAxis {
    /// `base` with this axis set to `value`.
    pub fn apply(self, base: &TrainConfig, value: &str) -> Result<TrainConfig> {
        let bad = || Error::arg(format!("invalid value {value:?} for axis {self}"));
        let mut cfg = base.clone();
        match self {
            AblationAxis::Alpha => cfg.alpha = value.parse().map_err(|_| bad())?,
            AblationAxis::BatchSize => cfg.batch_size = value.parse().map_err(|_| bad())?,
            AblationAxis::ProjDim => cfg.proj_dim = value.parse().map_err(|_| bad())?,
            AblationAxis::Sampling => {
                cfg.word_sampling = match value {
                    "on" | "true" | "1" => true,
                    "off" | "false" | "0" => false,
                    _ => return Err(bad()),
                }
            }
            AblationAxis::LossKind => cfg.loss_kind = value.parse()?,
        }
        cfg.validate().map_err(|e| Error::arg(format!("axis {self} value {value:?}: {e}")))?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub axis: AblationAxis,
    pub value: String,
    pub best_metric: f64,
    pub report: RetrievalReport,
}

/// Trains one model per value, everything else (seed included) fixed. All
/// values are checked before any training starts.
pub fn ablate(base: &TrainConfig, axis: AblationAxis, values: &[String], data: &Dataset) -> Result<Vec<AblationRow>> {
    if values.is_empty() {
        return Err(Error::arg("ablation needs at least one value"));
    }
    let configs = values.iter().map(|v| axis.apply(base, v)).collect::<Result<Vec<_>>>()?;
    configs
        .iter()
        .zip(values)
        .map(|(cfg, value)| {
            let out = run_two_phase(cfg, data)?;
            Ok(AblationRow { axis, value: value.clone(), best_metric: out.state.best_metric, report: out.report })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_io::{synth_generate, SyntheticSpec};

    fn tiny_data(n: usize, words: usize) -> Dataset {
        synth_generate(&SyntheticSpec {
            n_pairs: n,
            d_latent: 4,
            d_x: 6,
            d_y: 5,
            noise_sigma: 0.3,
            seed: 3,
            words_per_caption: words,
            identity_maps: false,
        })
        .unwrap()
        .dataset()
        .unwrap()
    }

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            batch_size: 16,
            proj_dim: 4,
            hidden: 4,
            epochs: 2,
            phase2_epochs: Some(1),
            n_samples: 2,
            sample_size: 8,
            seed: 5,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn steps_per_epoch_drop_partial_batch() {
        let data = tiny_data(100, 0);
        let cfg = tiny_config();
        let mut state = TrainState::new(&cfg, data.x_dim(), data.y_dim()).unwrap();
        let train = data.split(Split::Train);
        assert_eq!(train.len(), 80);
        let trace = train_epoch(&mut state, &cfg, &data, &train, 1).unwrap();
        assert_eq!(trace.step_losses.len(), 80 / 16);
        assert_eq!(state.global_step, 5);
        let cfg = TrainConfig { batch_size: 30, ..cfg };
        let trace = train_epoch(&mut state, &cfg, &data, &train, 1).unwrap();
        assert_eq!(trace.step_losses.len(), 2);
        assert_eq!(state.global_step, 7);
    }

    #[test]
    fn zero_learning_rate_is_a_null_update() {
        let data = tiny_data(100, 3);
        let cfg = TrainConfig { lr_phase1: 0.0, ..tiny_config() };
        let mut state = TrainState::new(&cfg, data.x_dim(), data.y_dim()).unwrap();
        let before = (state.x_head.clone(), state.y_head.clone());
        let trace = train_epoch(&mut state, &cfg, &data, &data.split(Split::Train), 1).unwrap();
        assert_eq!((state.x_head.clone(), state.y_head.clone()), before);
        assert_eq!(trace.step_losses.len(), 5);
        assert!(trace.step_losses.iter().all(|l| l.is_finite()));
    }

    #[test]
    fn too_small_split_is_rejected() {
        let data = tiny_data(100, 0);
        let cfg = TrainConfig { batch_size: 81, ..tiny_config() };
        let mut state = TrainState::new(&cfg, data.x_dim(), data.y_dim()).unwrap();
        assert!(matches!(train_epoch(&mut state, &cfg, &data, &data.split(Split::Train), 1), Err(Error::Argument(_))));
    }

    #[test]
    fn deterministic_runs() {
        let data = tiny_data(100, 3);
        let a = run_two_phase(&tiny_config(), &data).unwrap();
        let b = run_two_phase(&tiny_config(), &data).unwrap();
        assert_eq!(a.traces, b.traces);
        assert_eq!(a.state.best_x, b.state.best_x);
        assert_eq!(a.report, b.report);
        assert_eq!(a.traces.len(), 3);
        assert_eq!(a.traces[2].phase, 2);
    }

    #[test]
    fn best_metric_dominates_history_and_reproduces() {
        let data = tiny_data(100, 0);
        let out = run_two_phase(&tiny_config(), &data).unwrap();
        for t in &out.traces {
            assert!(out.state.best_metric >= t.eval_metric.unwrap());
        }
        let cfg = tiny_config();
        let again = eval_protocol(
            &data,
            Split::Eval,
            &out.state.best_x,
            &out.state.best_y,
            &cfg.eval_options(),
            &eval_rng(cfg.seed),
        )
        .unwrap();
        assert!((again.selection_metric() - out.state.best_metric).abs() <= 1e-12);
    }

    #[test]
    fn no_phase_two_matches_phase_one_only() {
        let data = tiny_data(100, 0);
        let with_zero = TrainConfig { phase2_epochs: Some(0), ..tiny_config() };
        let out = run_two_phase(&with_zero, &data).unwrap();
        assert_eq!(out.traces.len(), 2);
        assert!(out.traces.iter().all(|t| t.phase == 1));
        let full = run_two_phase(&tiny_config(), &data).unwrap();
        assert_eq!(out.traces[..], full.traces[..2]);
    }

    #[test]
    fn amm_loss_decreases_on_noiseless_identity_data() {
        let spec = SyntheticSpec {
            n_pairs: 640,
            d_latent: 8,
            d_x: 8,
            d_y: 8,
            noise_sigma: 0.0,
            seed: 1,
            words_per_caption: 0,
            identity_maps: true,
        };
        let data = synth_generate(&spec).unwrap().dataset().unwrap();
        let cfg =
            TrainConfig { batch_size: 64, proj_dim: 16, hidden: 16, epochs: 5, seed: 2, ..TrainConfig::default() };
        let mut state = TrainState::new(&cfg, 8, 8).unwrap();
        let train = data.split(Split::Train);
        let means: Vec<f64> =
            (0..5).map(|_| train_epoch(&mut state, &cfg, &data, &train, 1).unwrap().mean_loss).collect();
        for w in means.windows(2) {
            assert!(w[1] < w[0], "{means:?}");
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { batch_size: 1, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { epochs: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { alpha: 1.2, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { lr_phase2: f64::NAN, ..Default::default() }.validate().is_err());
        assert_eq!(TrainConfig::default().phase2_epochs(), 100);
    }

    #[test]
    fn config_json_uses_field_names() {
        let cfg: TrainConfig = serde_json::from_str(r#"{"loss_kind": "mms", "batch_size": 64}"#).unwrap();
        assert_eq!(cfg.loss_kind, LossKind::Mms);
        assert_eq!(cfg.batch_size, 64);
        assert_eq!(cfg.alpha, 0.5);
        let v = serde_json::to_value(TrainConfig::default()).unwrap();
        assert_eq!(v["lr_phase1"], 0.001);
        assert_eq!(v["mms_schedule"]["growth"], 1.002);
        assert!(v.get("eval_threads").is_none());
    }

    #[test]
    fn ablation_validates_before_training() {
        let data = tiny_data(100, 0);
        let vals = vec!["0.5".to_string(), "1.5".to_string()];
        assert!(matches!(ablate(&tiny_config(), AblationAxis::Alpha, &vals, &data), Err(Error::Argument(_))));
        assert!(ablate(&tiny_config(), AblationAxis::Sampling, &["maybe".into()], &data).is_err());
        assert!(ablate(&tiny_config(), AblationAxis::BatchSize, &[], &data).is_err());
        assert_eq!("batch-size".parse::<AblationAxis>().unwrap(), AblationAxis::BatchSize);
    }

    #[test]
    fn single_value_ablation_equals_direct_run() {
        let data = tiny_data(100, 3);
        let rows = ablate(&tiny_config(), AblationAxis::Sampling, &["off".into()], &data).unwrap();
        let direct = run_two_phase(&TrainConfig { word_sampling: false, ..tiny_config() }, &data).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].report, direct.report);
        assert_eq!(rows[0].best_metric, direct.state.best_metric);
    }
}
