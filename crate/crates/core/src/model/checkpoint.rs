use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::forward::predict_ids;
use super::{EvalRecord, ModelConfig, Params};
use crate::error::{Error, Result};
use crate::labeling::SchemeSpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// Self-describing model file: configuration, label scheme, fingerprint
/// of the vocabulary it was trained with, weights and training history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub scheme: SchemeSpec,
    pub vocab_fingerprint: String,
    pub tensors: Vec<TensorRecord>,
    pub history: Vec<EvalRecord>,
}

impl Checkpoint {
    pub fn new(
        params: &Params<f32>,
        scheme: SchemeSpec,
        vocab_fingerprint: String,
        history: Vec<EvalRecord>,
    ) -> Self {
        let tensors = params
            .tensors
            .iter()
            .map(|t| TensorRecord {
                name: t.name.clone(),
                shape: t.shape.clone(),
                data: params.data[t.offset..t.offset + t.len()].to_vec(),
            })
            .collect();
        Checkpoint {
            config: params.config.clone(),
            scheme,
            vocab_fingerprint,
            tensors,
            history,
        }
    }

    pub fn params(&self) -> Result<Params<f32>> {
        let expected = Params::<f32>::from_parts(
            self.config.clone(),
            self.tensors.iter().flat_map(|t| t.data.iter().copied()).collect(),
        )?;
        for (want, got) in expected.tensors.iter().zip(&self.tensors) {
            if want.name != got.name || want.shape != got.shape || got.data.len() != want.len() {
                return Err(Error::Validation(format!(
                    "checkpoint tensor {} {:?} does not match the configuration ({} {:?})",
                    got.name, got.shape, want.name, want.shape
                )));
            }
        }
        if expected.tensors.len() != self.tensors.len() {
            return Err(Error::LengthMismatch(self.tensors.len(), expected.tensors.len()));
        }
        Ok(expected)
    }

    pub fn check_fingerprint(&self, fingerprint: &str) -> Result<()> {
        if fingerprint != self.vocab_fingerprint {
            return Err(Error::FingerprintMismatch {
                expected: self.vocab_fingerprint.clone(),
                actual: fingerprint.to_string(),
            });
        }
        Ok(())
    }

    /// Label ids for each stream, after checking the vocabulary matches.
    pub fn predict(&self, streams: &[&[u32]], fingerprint: &str) -> Result<Vec<Vec<u16>>> {
        self.check_fingerprint(fingerprint)?;
        let params = self.params()?;
        streams.iter().map(|ids| predict_ids(&params, ids)).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text)?;
        ck.params()?;
        Ok(ck)
    }
}
