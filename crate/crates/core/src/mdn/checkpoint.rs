//! JSON checkpoints: architecture, flat row-major parameter arrays, step count.

use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdn::network::{Dense, MdnArch, MdnParams};
use crate::mdn::train::MdnEnsemble;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub fan_in: usize,
    pub fan_out: usize,
    /// Row-major `fan_in x fan_out`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub arch: MdnArch,
    pub steps: u64,
    pub layers: Vec<LayerRecord>,
}

impl Checkpoint {
    pub fn from_params(p: &MdnParams) -> Self {
        let layers = p
            .layers()
            .iter()
            .map(|l| LayerRecord {
                fan_in: l.weight.nrows(),
                fan_out: l.weight.ncols(),
                weight: l.weight.iter().copied().collect(),
                bias: l.bias.to_vec(),
            })
            .collect();
        Self {
            arch: p.arch(),
            steps: p.steps,
            layers,
        }
    }

    pub fn to_params(&self) -> Result<MdnParams> {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let weight = Array2::from_shape_vec((l.fan_in, l.fan_out), l.weight.clone())
                    .map_err(|e| Error::InvalidParameter(format!("checkpoint layer: {e}")))?;
                Ok(Dense {
                    weight,
                    bias: Array1::from(l.bias.clone()),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        MdnParams::from_layers(self.arch, layers, self.steps)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleCheckpoint {
    pub members: Vec<Checkpoint>,
}

impl EnsembleCheckpoint {
    pub fn from_ensemble(e: &MdnEnsemble) -> Self {
        Self {
            members: e.members().iter().map(Checkpoint::from_params).collect(),
        }
    }

    pub fn to_ensemble(&self) -> Result<MdnEnsemble> {
        MdnEnsemble::new(self.members.iter().map(Checkpoint::to_params).collect::<Result<_>>()?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}
