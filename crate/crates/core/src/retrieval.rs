//! Bidirectional retrieval metrics and the repeated-subsample evaluation
//! protocol.
//!
//! Rows of the evaluation matrix are caption queries and columns are videos,
//! so `c2v` reads the matrix row-wise and `v2c` reads its transpose. With a
//! single relevant item per query, average precision is the reciprocal rank.

use serde::{Deserialize, Serialize};

use crate::data_io::{Dataset, PoolingMode, Split};
use crate::error::{Error, Result};
use crate::numeric::{sample_indices, Matrix, Rng};
use crate::projection::Projector;
use crate::similarity::{l2_normalize_rows, similarity_forward};

/// 1-based rank of `scores[pos]`. Equal scores at smaller indices rank ahead.
pub fn rank_of_positive(scores: &[f64], pos: usize) -> Result<usize> {
    let target = *scores
        .get(pos)
        .ok_or_else(|| Error::arg(format!("positive index {pos} out of range for {} scores", scores.len())))?;
    let above = scores.iter().enumerate().filter(|&(j, &v)| v > target || (v == target && j < pos)).count();
    Ok(1 + above)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DirectionMetrics {
    pub r_at_1: f64,
    pub r_at_5: f64,
    pub r_at_10: f64,
    pub map: f64,
}

impl DirectionMetrics {
    pub fn from_ranks(ranks: &[usize]) -> Self {
        let n = ranks.len() as f64;
        let within = |k: usize| ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
        Self {
            r_at_1: within(1),
            r_at_5: within(5),
            r_at_10: within(10),
            map: ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n,
        }
    }

    fn average(a: &Self, b: &Self) -> Self {
        Self {
            r_at_1: (a.r_at_1 + b.r_at_1) / 2.0,
            r_at_5: (a.r_at_5 + b.r_at_5) / 2.0,
            r_at_10: (a.r_at_10 + b.r_at_10) / 2.0,
            map: (a.map + b.map) / 2.0,
        }
    }

    fn values(&self) -> [f64; 4] {
        [self.r_at_1, self.r_at_5, self.r_at_10, self.map]
    }
}

/// Metrics of one evaluation matrix.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub c2v: DirectionMetrics,
    pub v2c: DirectionMetrics,
    pub mean: DirectionMetrics,
}

fn row_ranks(s: &Matrix) -> Vec<usize> {
    (0..s.rows()).map(|i| rank_of_positive(s.row(i), i).expect("square matrix")).collect()
}

/// Metrics for both directions of a square matrix with positives on the diagonal.
pub fn retrieval_metrics(s: &Matrix) -> Result<SampleMetrics> {
    if s.rows() != s.cols() || s.rows() == 0 {
        return Err(Error::shape(format!("retrieval needs a nonempty square matrix, got {}x{}", s.rows(), s.cols())));
    }
    let c2v = DirectionMetrics::from_ranks(&row_ranks(s));
    let v2c = DirectionMetrics::from_ranks(&row_ranks(&s.transpose()));
    Ok(SampleMetrics { c2v, v2c, mean: DirectionMetrics::average(&c2v, &v2c) })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricStat {
    pub mean: f64,
    pub std: f64,
}

impl MetricStat {
    /// Mean and sample (n − 1) standard deviation; the std of a single value is 0.
    pub fn from_values(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Self { mean, std }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DirectionReport {
    pub r_at_1: MetricStat,
    pub r_at_5: MetricStat,
    pub r_at_10: MetricStat,
    pub map: MetricStat,
}

impl DirectionReport {
    fn from_samples(samples: &[DirectionMetrics]) -> Self {
        let column = |k: usize| MetricStat::from_values(&samples.iter().map(|m| m.values()[k]).collect::<Vec<_>>());
        Self { r_at_1: column(0), r_at_5: column(1), r_at_10: column(2), map: column(3) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub c2v: DirectionReport,
    pub v2c: DirectionReport,
    pub mean: DirectionReport,
    pub n_samples: usize,
    pub sample_size: usize,
    /// Always `"sample"`: standard deviations use the n − 1 denominator.
    pub std_estimator: String,
}

impl RetrievalReport {
    pub fn from_samples(samples: &[SampleMetrics], sample_size: usize) -> Self {
        let pick = |f: fn(&SampleMetrics) -> DirectionMetrics| samples.iter().map(f).collect::<Vec<_>>();
        Self {
            c2v: DirectionReport::from_samples(&pick(|s| s.c2v)),
            v2c: DirectionReport::from_samples(&pick(|s| s.v2c)),
            mean: DirectionReport::from_samples(&pick(|s| s.mean)),
            n_samples: samples.len(),
            sample_size,
            std_estimator: "sample".into(),
        }
    }

    /// Mean-direction mAP averaged over samples.
    pub fn selection_metric(&self) -> f64 {
        self.mean.map.mean
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub n_samples: usize,
    pub sample_size: usize,
    /// L2-normalize projected embeddings before the dot product.
    pub normalize: bool,
    /// Worker threads for the independent samples; results do not depend on it.
    pub threads: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { n_samples: 5, sample_size: 1000, normalize: false, threads: 1 }
    }
}

/// Scores one set of pairs: rows are captions, columns are videos.
pub fn evaluate_pairs(
    data: &Dataset,
    pairs: &[usize],
    x_head: &dyn Projector,
    y_head: &dyn Projector,
    normalize: bool,
) -> Result<SampleMetrics> {
    let mut x = x_head.project(&data.x_batch(pairs))?;
    // Eval pooling uses every word, so the rng is never consulted.
    let mut y = y_head.project(&data.y_batch(pairs, PoolingMode::Eval, 1, &mut Rng::new(0))?)?;
    if normalize {
        x = l2_normalize_rows(&x).0;
        y = l2_normalize_rows(&y).0;
    }
    let s = similarity_forward(&y, &x)?;
    retrieval_metrics(s.matrix())
}

/// Repeated random-subset evaluation of a split.
///
/// Each of `n_samples` subsets of `sample_size` pairs is drawn without
/// replacement from its own child stream of `rng`, so the report does not
/// depend on `threads`. When the split holds no more than `sample_size`
/// pairs, the whole split is evaluated once and the report records
/// `n_samples = 1`.
pub fn eval_protocol<X, Y>(
    data: &Dataset,
    split: Split,
    x_head: &X,
    y_head: &Y,
    opts: &EvalOptions,
    rng: &Rng,
) -> Result<RetrievalReport>
where
    X: Projector + Sync,
    Y: Projector + Sync,
{
    let pool = data.split(split);
    if pool.is_empty() {
        return Err(Error::arg(format!("{split} split is empty")));
    }
    if opts.n_samples == 0 || opts.sample_size == 0 {
        return Err(Error::arg("n_samples and sample_size must be >= 1"));
    }

    if pool.len() <= opts.sample_size {
        let m = evaluate_pairs(data, &pool, x_head, y_head, opts.normalize)?;
        return Ok(RetrievalReport::from_samples(&[m], pool.len()));
    }

    let run = |s: usize| -> Result<SampleMetrics> {
        let mut child = rng.fork_index(s as u64);
        let picks = sample_indices(&mut child, pool.len(), opts.sample_size, false)?;
        let pairs: Vec<usize> = picks.iter().map(|&i| pool[i]).collect();
        evaluate_pairs(data, &pairs, x_head, y_head, opts.normalize)
    };

    let threads = opts.threads.clamp(1, opts.n_samples);
    let samples: Vec<SampleMetrics> = if threads == 1 {
        (0..opts.n_samples).map(run).collect::<Result<_>>()?
    } else {
        let mut slots: Vec<Option<Result<SampleMetrics>>> = (0..opts.n_samples).map(|_| None).collect();
        std::thread::scope(|scope| {
            for (t, chunk) in slots.chunks_mut(opts.n_samples.div_ceil(threads)).enumerate() {
                let run = &run;
                let start = t * opts.n_samples.div_ceil(threads);
                scope.spawn(move || {
                    for (k, slot) in chunk.iter_mut().enumerate() {
                        *slot = Some(run(start + k));
                    }
                });
            }
        });
        slots.into_iter().map(|s| s.expect("every slot filled")).collect::<Result<_>>()?
    };
    Ok(RetrievalReport::from_samples(&samples, opts.sample_size))
}
