use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data_io::write_atomic;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Eval,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Eval => "eval",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "eval" => Ok(Split::Eval),
            "test" => Ok(Split::Test),
            other => Err(Error::arg(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairRecord {
    pub pair_id: String,
    pub x_id: String,
    pub y_id: String,
    pub split: Split,
}

/// Pairing of x items with y items, serialized as a JSON array of records.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PairManifest {
    pub records: Vec<PairRecord>,
}

impl PairManifest {
    pub fn new(records: Vec<PairRecord>) -> Result<Self> {
        let m = Self { records };
        m.validate()?;
        Ok(m)
    }

    /// Pair ids must be unique.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.records.len());
        for r in &self.records {
            if !seen.insert(r.pair_id.as_str()) {
                return Err(Error::Validation(format!("duplicate pair_id {:?}", r.pair_id)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Positions (into `records`) of the pairs in `split`, in file order.
    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        self.records.iter().enumerate().filter(|(_, r)| r.split == split).map(|(i, _)| i).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_shape() {
        let m = PairManifest::new(vec![PairRecord {
            pair_id: "p0".into(),
            x_id: "v0".into(),
            y_id: "c0".into(),
            split: Split::Eval,
        }])
        .unwrap();
        let v: serde_json::Value = serde_json::from_str(&m.to_json().unwrap()).unwrap();
        assert_eq!(v, serde_json::json!([{"pair_id": "p0", "x_id": "v0", "y_id": "c0", "split": "eval"}]));
        assert_eq!(PairManifest::from_json(&m.to_json().unwrap()).unwrap(), m);
    }

    #[test]
    fn rejects_duplicates_and_bad_splits() {
        let text = r#"[{"pair_id":"a","x_id":"1","y_id":"1","split":"train"},
                       {"pair_id":"a","x_id":"2","y_id":"2","split":"test"}]"#;
        assert!(matches!(PairManifest::from_json(text), Err(Error::Validation(_))));
        let text = r#"[{"pair_id":"a","x_id":"1","y_id":"1","split":"dev"}]"#;
        assert!(matches!(PairManifest::from_json(text), Err(Error::Json(_))));
    }

    #[test]
    fn split_indices_keep_order() {
        let rec = |id: &str, split| PairRecord { pair_id: id.into(), x_id: id.into(), y_id: id.into(), split };
        let m = PairManifest::new(vec![rec("a", Split::Test), rec("b", Split::Train), rec("c", Split::Test)]).unwrap();
        assert_eq!(m.split_indices(Split::Test), vec![0, 2]);
        assert_eq!(m.split_indices(Split::Eval), Vec::<usize>::new());
    }
}
