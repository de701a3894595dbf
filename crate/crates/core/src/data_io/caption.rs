use std::collections::HashSet;
use std::fmt;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{sample_indices, Matrix, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolingMode {
    /// Mean of `k` randomly drawn word vectors.
    Train,
    /// Mean of every word vector.
    Eval,
}

/// Pools a caption's word vectors (one per row) into a single vector.
///
/// In train mode `k` rows are drawn without replacement when the caption has
/// at least `k` words and with replacement otherwise. A caption with a single
/// word vector returns that vector unchanged in either mode.
pub fn sample_caption_words(words: &Matrix, k: usize, rng: &mut Rng, mode: PoolingMode) -> Result<Vec<f64>> {
    let n = words.rows();
    if n == 0 {
        return Err(Error::arg("caption has no word vectors"));
    }
    if n == 1 {
        return Ok(words.row(0).to_vec());
    }
    let picks = match mode {
        PoolingMode::Eval => (0..n).collect(),
        PoolingMode::Train => {
            if k == 0 {
                return Err(Error::arg("word sample size must be >= 1"));
            }
            sample_indices(rng, n, k, n < k)?
        }
    };
    let mut out = vec![0.0; words.cols()];
    for &i in &picks {
        for (o, &v) in out.iter_mut().zip(words.row(i)) {
            *o += v;
        }
    }
    let inv = 1.0 / picks.len() as f64;
    out.iter_mut().for_each(|v| *v *= inv);
    Ok(out)
}

/// A transcript with its duration and, optionally, per-word vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct CaptionRecord {
    pub transcript: Vec<String>,
    pub duration_s: f64,
    pub word_vectors: Option<Matrix>,
}

impl CaptionRecord {
    pub fn new(transcript: &str, duration_s: f64) -> Self {
        Self { transcript: transcript.split_whitespace().map(str::to_owned).collect(), duration_s, word_vectors: None }
    }

    pub fn with_word_vectors(mut self, words: Matrix) -> Self {
        self.word_vectors = Some(words);
        self
    }

    pub fn pooled(&self, k: usize, rng: &mut Rng, mode: PoolingMode) -> Result<Vec<f64>> {
        let words = self.word_vectors.as_ref().ok_or_else(|| Error::arg("caption record has no word vectors"))?;
        sample_caption_words(words, k, rng, mode)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum QcFailure {
    /// Fewer than five words.
    WordCount,
    /// Transcript already seen.
    Uniqueness,
    /// Shorter than three seconds.
    Duration,
}

impl fmt::Display for QcFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QcFailure::WordCount => "WordCount",
            QcFailure::Uniqueness => "Uniqueness",
            QcFailure::Duration => "Duration",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QcVerdict {
    Pass,
    Fail(QcFailure),
}

pub const MIN_WORDS: usize = 5;
pub const MIN_DURATION_S: f64 = 3.0;

/// Lowercased, whitespace-collapsed form used for the uniqueness check.
pub fn normalize_transcript(words: &[String]) -> String {
    words.iter().map(|w| w.to_lowercase()).collect::<Vec<_>>().join(" ")
}

#[derive(Clone, Debug, Default)]
pub struct SeenTranscripts(HashSet<String>);

impl SeenTranscripts {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, transcript: &str) -> bool {
        let words: Vec<String> = transcript.split_whitespace().map(str::to_owned).collect();
        self.0.contains(&normalize_transcript(&words))
    }
}

/// Word count, then uniqueness, then duration; the first failing check wins.
/// A passing transcript is added to `seen`.
pub fn validate_caption(rec: &CaptionRecord, seen: &mut SeenTranscripts) -> QcVerdict {
    if rec.transcript.len() < MIN_WORDS {
        return QcVerdict::Fail(QcFailure::WordCount);
    }
    let key = normalize_transcript(&rec.transcript);
    if seen.0.contains(&key) {
        return QcVerdict::Fail(QcFailure::Uniqueness);
    }
    if rec.duration_s < MIN_DURATION_S {
        return QcVerdict::Fail(QcFailure::Duration);
    }
    seen.0.insert(key);
    QcVerdict::Pass
}

/// One line of the caption QC input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QcRecord {
    pub id: String,
    pub transcript: String,
    pub duration_s: f64,
}

impl QcRecord {
    pub fn to_caption(&self) -> CaptionRecord {
        CaptionRecord::new(&self.transcript, self.duration_s)
    }
}

/// Parses JSON lines, skipping blank lines.
pub fn read_qc_records(reader: impl BufRead) -> Result<Vec<QcRecord>> {
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: QcRecord =
            serde_json::from_str(&line).map_err(|e| Error::Format(format!("line {}: {e}", lineno + 1)))?;
        if rec.duration_s.is_nan() || rec.duration_s < 0.0 {
            return Err(Error::Validation(format!(
                "line {}: duration_s must be >= 0, got {}",
                lineno + 1,
                rec.duration_s
            )));
        }
        out.push(rec);
    }
    Ok(out)
}
