use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamSet, Tensor};

use super::{Forecaster, ModelError, ModelKind};

/// Flat JSON form of a trained forecaster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamFile {
    pub kind: ModelKind,
    pub hidden: usize,
    pub features: usize,
    pub seed: u64,
    pub params: BTreeMap<String, Tensor>,
}

impl From<&Forecaster> for ParamFile {
    fn from(f: &Forecaster) -> Self {
        Self {
            kind: f.kind(),
            hidden: f.hidden(),
            features: f.features(),
            seed: f.seed(),
            params: f
                .params()
                .iter()
                .map(|(k, t)| {
                    let mut plain = t.clone();
                    plain.clear_grad();
                    (k.to_string(), plain)
                })
                .collect(),
        }
    }
}

impl ParamFile {
    pub fn into_forecaster(self) -> Result<Forecaster, ModelError> {
        let mut params = ParamSet::new(self.seed);
        for (name, tensor) in self.params {
            // Re-validates shape/data agreement lost by deserialization.
            let t = Tensor::new(tensor.shape().to_vec(), tensor.data().to_vec())
                .map_err(|e| ModelError::ParamFile(format!("`{name}`: {e}")))?;
            params.insert(name, t)?;
        }
        Forecaster::from_params(self.kind, self.features, self.hidden, params)
    }
}

impl Forecaster {
    pub fn to_json(&self) -> String {
        serde_json::to_string(&ParamFile::from(self)).expect("param file serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let file: ParamFile =
            serde_json::from_str(text).map_err(|e| ModelError::ParamFile(e.to_string()))?;
        file.into_forecaster()
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        std::fs::write(path, self.to_json())
            .map_err(|e| ModelError::ParamFile(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ModelError::ParamFile(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}
