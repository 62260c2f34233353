use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::batch::InputScaling;
use super::bgnn::Bgnn;
use super::config::{ModelConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::nn::{Adam, Tensor};

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub model: ModelConfig,
    pub params: Vec<NamedTensor>,
    #[serde(default)]
    pub input_scaling: Option<InputScaling>,
    pub optimizer: Option<Adam>,
    pub train: Option<TrainConfig>,
    /// Epochs completed when the checkpoint was taken.
    pub epoch: usize,
}

impl Checkpoint {
    pub fn new(model: &Bgnn, optimizer: Option<Adam>, train: Option<TrainConfig>, epoch: usize) -> Self {
        let params = model
            .names()
            .iter()
            .zip(model.params())
            .map(|(n, t)| NamedTensor { name: n.clone(), rows: t.rows(), cols: t.cols(), values: t.data().to_vec() })
            .collect();
        Self {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            model: model.config().clone(),
            params,
            input_scaling: model.scaling().cloned(),
            optimizer,
            train,
            epoch,
        }
    }

    /// Rebuilds the network and loads the stored parameters by name.
    pub fn restore(&self) -> Result<Bgnn> {
        if self.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Err(Error::Data(format!("unsupported checkpoint schema {}", self.schema_version)));
        }
        let mut model = Bgnn::new(self.model.clone())?;
        if model.names().len() != self.params.len() {
            return Err(Error::Data("checkpoint parameter count does not match its model config".into()));
        }
        let mut params = Vec::with_capacity(self.params.len());
        for (name, p) in model.names().iter().zip(&self.params) {
            if *name != p.name {
                return Err(Error::Data(format!("checkpoint parameter {} where {name} was expected", p.name)));
            }
            params.push(Tensor::new(p.rows, p.cols, p.values.clone())?);
        }
        model.set_params(params)?;
        model.set_scaling(self.input_scaling.clone());
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        serde_json::to_writer(&mut w, self)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_reader(BufReader::new(f))?)
    }
}
