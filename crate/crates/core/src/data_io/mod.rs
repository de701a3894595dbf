//! File formats, the synthetic pair generator, caption pooling and caption QC.
//!
//! Binary layouts (all integers and floats little-endian):
//!
//! ```text
//! EMB1 store:       "EMB1" | u32 version=1 | u64 n | u64 d
//!                   | n × (u32 byte_len, utf-8 id) | n·d × f64 row-major
//! CKP1 checkpoint:  "CKP1" | u32 version=1
//!                   | 8 × (u64 rows, u64 cols, rows·cols × f64)
//!                   | u64 byte_len | utf-8 JSON TrainConfig
//! ```
//!
//! The eight checkpoint blocks are `layer1_weight`, `layer1_bias`,
//! `layer2_weight`, `layer2_bias` of the x head followed by the same four for
//! the y head; biases are stored as `1×n`. Trailing bytes after the last
//! section are rejected in both formats.

mod caption;
mod checkpoint;
mod dataset;
mod manifest;
mod store;
mod synth;

use std::fs;
use std::io::Write;
use std::path::Path;

pub use caption::{
    normalize_transcript, read_qc_records, sample_caption_words, validate_caption, CaptionRecord, PoolingMode,
    QcFailure, QcRecord, QcVerdict, SeenTranscripts,
};
pub use checkpoint::Checkpoint;
pub use dataset::{CaptionStore, Dataset};
pub use manifest::{PairManifest, PairRecord, Split};
pub use store::EmbeddingStore;
pub use synth::{synth_generate, SyntheticData, SyntheticSpec};

use crate::error::{Error, Result};

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let name = path.file_name().ok_or_else(|| Error::arg(format!("{} has no file name", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}

/// Little-endian cursor that reports the byte offset of any short read.
pub(crate) struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let out = &self.buf[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(Error::Truncated {
                offset: self.pos as u64,
                source: std::io::Error::new(
                    std::io::ErrorKind::UnexpectedEof,
                    format!("needed {n} bytes, {} left", self.buf.len() - self.pos),
                ),
            }),
        }
    }

    pub(crate) fn magic(&mut self, expect: &[u8; 4]) -> Result<()> {
        let got = self.take(4)?;
        if got != expect {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(got),
                String::from_utf8_lossy(expect)
            )));
        }
        Ok(())
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn len_u64(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| Error::Format(format!("length {v} does not fit in memory")))
    }

    pub(crate) fn f64s(&mut self, count: usize) -> Result<Vec<f64>> {
        let bytes =
            count.checked_mul(8).ok_or_else(|| Error::Format(format!("payload of {count} floats overflows")))?;
        Ok(self.take(bytes)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after offset {}",
                self.buf.len() - self.pos,
                self.pos
            )));
        }
        Ok(())
    }
}

pub(crate) fn put_f64s(out: &mut Vec<u8>, values: &[f64]) {
    out.reserve(values.len() * 8);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}
