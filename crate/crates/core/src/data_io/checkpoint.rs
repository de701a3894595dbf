use std::path::Path;

use crate::data_io::{put_f64s, write_atomic, ByteReader};
use crate::error::{Error, Result};
use crate::numeric::Matrix;
use crate::projection::GluMlpHead;
use crate::trainer::TrainConfig;

const MAGIC: &[u8; 4] = b"CKP1";
const VERSION: u32 = 1;

/// Trained heads plus the configuration that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub x_head: GluMlpHead,
    pub y_head: GluMlpHead,
    pub config: TrainConfig,
}

fn put_block(out: &mut Vec<u8>, rows: usize, cols: usize, data: &[f64]) {
    out.extend_from_slice(&(rows as u64).to_le_bytes());
    out.extend_from_slice(&(cols as u64).to_le_bytes());
    put_f64s(out, data);
}

fn put_head(out: &mut Vec<u8>, head: &GluMlpHead) {
    let w1 = &head.layer1_weight;
    let w2 = &head.layer2_weight;
    put_block(out, w1.rows(), w1.cols(), w1.as_slice());
    put_block(out, 1, head.layer1_bias.len(), &head.layer1_bias);
    put_block(out, w2.rows(), w2.cols(), w2.as_slice());
    put_block(out, 1, head.layer2_bias.len(), &head.layer2_bias);
}

fn read_block(r: &mut ByteReader<'_>) -> Result<Matrix> {
    let rows = r.len_u64()?;
    let cols = r.len_u64()?;
    let count = rows.checked_mul(cols).ok_or_else(|| Error::Format(format!("block {rows}x{cols} overflows")))?;
    let m = Matrix::from_vec(rows, cols, r.f64s(count)?)?;
    m.ensure_finite("checkpoint parameter").map_err(|e| Error::Validation(e.to_string()))?;
    Ok(m)
}

fn read_bias(r: &mut ByteReader<'_>) -> Result<Vec<f64>> {
    let m = read_block(r)?;
    if m.rows() != 1 {
        return Err(Error::Format(format!("bias block must have 1 row, got {}", m.rows())));
    }
    Ok(m.into_vec())
}

fn read_head(r: &mut ByteReader<'_>) -> Result<GluMlpHead> {
    let w1 = read_block(r)?;
    let b1 = read_bias(r)?;
    let w2 = read_block(r)?;
    let b2 = read_bias(r)?;
    GluMlpHead::from_parts(w1, b1, w2, b2).map_err(|e| Error::Format(e.to_string()))
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_head(&mut out, &self.x_head);
        put_head(&mut out, &self.y_head);
        let json = serde_json::to_vec(&self.config)?;
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.magic(MAGIC)?;
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let x_head = read_head(&mut r)?;
        let y_head = read_head(&mut r)?;
        let len = r.len_u64()?;
        let config: TrainConfig =
            serde_json::from_slice(r.take(len)?).map_err(|e| Error::Format(format!("checkpoint config: {e}")))?;
        r.finish()?;
        Ok(Self { x_head, y_head, config })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
