use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{GruDims, GruModel, NnError, Param, RealTensor};
use crate::quant::QuantState;

pub const CHECKPOINT_FORMAT: &str = "mpdpd-gru-v1";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed checkpoint: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unknown checkpoint format {0:?}")]
    Format(String),
    #[error("tensor {index}: expected {expected}, found {found}")]
    TensorOrder {
        index: usize,
        expected: &'static str,
        found: String,
    },
    #[error(transparent)]
    Model(#[from] NnError),
    #[error("quantization state does not match the model: {0}")]
    Quant(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    #[serde(flatten)]
    pub tensor: RealTensor,
}

/// Serialized model: tensors in fixed order, optional quantization state and
/// free-form string attributes (role, seed, ...).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub dims: GruDims,
    pub tensors: Vec<NamedTensor>,
    #[serde(default)]
    pub quant: Option<QuantState>,
    #[serde(default)]
    pub attributes: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn from_model(model: &GruModel, quant: Option<&QuantState>) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            dims: model.dims(),
            tensors: model
                .to_tensors()
                .into_iter()
                .map(|(p, tensor)| NamedTensor {
                    name: p.name().to_string(),
                    tensor,
                })
                .collect(),
            quant: quant.cloned(),
            attributes: BTreeMap::new(),
        }
    }

    pub fn with_attribute(mut self, key: &str, value: impl ToString) -> Self {
        self.attributes.insert(key.to_string(), value.to_string());
        self
    }

    /// Validates and rebuilds the model.
    pub fn model(&self) -> Result<GruModel, CheckpointError> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(CheckpointError::Format(self.format.clone()));
        }
        if self.tensors.len() != Param::ALL.len() {
            return Err(NnError::Dimension(format!("{} tensors, expected {}", self.tensors.len(), Param::ALL.len())).into());
        }
        let mut params = Vec::with_capacity(self.dims.parameter_count());
        for (i, (p, nt)) in Param::ALL.iter().zip(&self.tensors).enumerate() {
            if nt.name != p.name() {
                return Err(CheckpointError::TensorOrder {
                    index: i,
                    expected: p.name(),
                    found: nt.name.clone(),
                });
            }
            nt.tensor.validate()?;
            if nt.tensor.shape != self.dims.shape(*p) {
                return Err(NnError::Dimension(format!(
                    "{} has shape {:?}, expected {:?}",
                    nt.name,
                    nt.tensor.shape,
                    self.dims.shape(*p)
                ))
                .into());
            }
            params.extend_from_slice(&nt.tensor.data);
        }
        if let Some(q) = &self.quant {
            if q.weights.len() != Param::ALL.len() || q.sites.len() != super::Site::ALL.len() {
                return Err(CheckpointError::Quant(format!(
                    "{} weight specs and {} site specs",
                    q.weights.len(),
                    q.sites.len()
                )));
            }
        }
        Ok(GruModel::from_params(self.dims, params)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, CheckpointError> {
        let c: Self = serde_json::from_str(s)?;
        c.model()?;
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        std::fs::write(path, self.to_json()).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let s = std::fs::read_to_string(path).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&s)
    }
}
