//! Self-describing JSON checkpoints with exact `f64` round trips.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::autodiff::{ParamSet, Tensor};
use crate::error::{Error, Result};
use crate::model::{Architecture, SrRnn};

pub const FORMAT: &str = "srnn-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBlock {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub architecture: Architecture,
    pub params: Vec<ParamBlock>,
    /// Free-form echo of the configuration that produced the parameters.
    #[serde(default)]
    pub config: Value,
    pub seed: u64,
}

impl Checkpoint {
    pub fn from_model(model: &SrRnn, config: Value, seed: u64) -> Self {
        let params = model
            .params()
            .iter()
            .map(|p| ParamBlock {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                values: p.value.data().to_vec(),
            })
            .collect();
        Checkpoint {
            format: FORMAT.into(),
            version: VERSION,
            architecture: model.architecture().clone(),
            params,
            config,
            seed,
        }
    }

    pub fn to_model(&self) -> Result<SrRnn> {
        let mut set = ParamSet::new();
        for b in &self.params {
            let t = Tensor::new(b.shape.clone(), b.values.clone())
                .map_err(|e| Error::Checkpoint(format!("block {}: {e}", b.name)))?;
            set.add(b.name.clone(), t);
        }
        SrRnn::from_parts(self.architecture.clone(), set)
            .map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn to_json(&self) -> Result<String> {
        if self
            .params
            .iter()
            .any(|b| b.values.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::Checkpoint(
                "parameters contain non-finite values".into(),
            ));
        }
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Parses a checkpoint, checking the format tag and version first.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text)
            .map_err(|e| Error::Checkpoint(format!("not valid JSON: {e}")))?;
        match value.get("format").and_then(Value::as_str) {
            Some(FORMAT) => {}
            Some(other) => return Err(Error::Checkpoint(format!("unknown format {other:?}"))),
            None => return Err(Error::Checkpoint("missing format tag".into())),
        }
        match value.get("version").and_then(Value::as_u64) {
            Some(v) if v == u64::from(VERSION) => {}
            Some(v) => {
                return Err(Error::Checkpoint(format!(
                    "unsupported version {v} (this build reads version {VERSION})"
                )))
            }
            None => return Err(Error::Checkpoint("missing version".into())),
        }
        serde_json::from_value(value)
            .map_err(|e| Error::Checkpoint(format!("version {VERSION}: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

pub fn save_model(model: &SrRnn, path: &Path, config: Value, seed: u64) -> Result<()> {
    Checkpoint::from_model(model, config, seed).save(path)
}

pub fn load_model(path: &Path) -> Result<SrRnn> {
    Checkpoint::load(path)?.to_model()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cells::CellKind;
    use crate::langs::strs;
    use crate::state_reg::Similarity;

    fn model(cell: CellKind, seed: u64) -> SrRnn {
        let mut arch = Architecture::classifier(cell, 7, Some(3), &strs(&["(", ")", "a"])).unwrap();
        arch.similarity = Similarity::Euclidean;
        arch.tau = 0.37;
        SrRnn::new(arch, seed).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for cell in [CellKind::Gru, CellKind::Lstm, CellKind::LstmP] {
            let mut m = model(cell, 42);
            // Values whose shortest decimal forms are long.
            let id = m.params().find("head.b").unwrap();
            m.params_mut().get_mut(id).value.data_mut()[0] = 0.1 + 0.2;
            m.params_mut().get_mut(id).value.data_mut()[1] = f64::MIN_POSITIVE / 3.0;
            let cp = Checkpoint::from_model(&m, serde_json::json!({"lr": 0.01}), 42);
            let text = cp.to_json().unwrap();
            let back = Checkpoint::from_json(&text).unwrap();
            assert_eq!(back, cp);
            let m2 = back.to_model().unwrap();
            for (a, b) in m.params().iter().zip(m2.params().iter()) {
                let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
                assert_eq!(bits(&a.value), bits(&b.value));
            }
            let seqs: Vec<&[usize]> = vec![&[0, 1], &[], &[2, 2, 0]];
            let p1 = m.predict(&seqs).unwrap();
            let p2 = m2.predict(&seqs).unwrap();
            assert_eq!(format!("{p1:?}"), format!("{p2:?}"));
            assert_eq!(
                text,
                Checkpoint::from_model(&m2, cp.config.clone(), 42)
                    .to_json()
                    .unwrap()
            );
        }
    }

    #[test]
    fn load_errors_are_versioned() {
        let cp = Checkpoint::from_model(&model(CellKind::Gru, 1), Value::Null, 1);
        let text = cp.to_json().unwrap();
        let err = |t: &str| Checkpoint::from_json(t).unwrap_err().to_string();
        assert!(err(&text.replacen("\"version\": 1", "\"version\": 9", 1))
            .contains("unsupported version 9"));
        assert!(err(&text.replacen(FORMAT, "other", 1)).contains("unknown format"));
        assert!(err(&text[..text.len() / 2]).contains("not valid JSON"));
        assert!(err("{\"format\":\"srnn-checkpoint\",\"version\":1}").contains("version 1"));
        let mut short = cp.clone();
        short.params[0].values.pop();
        assert!(matches!(short.to_model(), Err(Error::Checkpoint(_))));
        let mut missing = cp.clone();
        missing.params.pop();
        assert!(matches!(missing.to_model(), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let m = model(CellKind::LstmP, 3);
        save_model(&m, &path, Value::Null, 3).unwrap();
        assert_eq!(load_model(&path).unwrap(), m);
        assert!(matches!(
            load_model(&dir.path().join("none.json")),
            Err(Error::Io { .. })
        ));
    }
}
