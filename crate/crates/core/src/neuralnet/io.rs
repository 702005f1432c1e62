use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{MlpModel, ParamKind};
use super::MlpConfig;
use crate::error::{Error, Result};
use crate::jsonfmt;

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// A named tensor: shape plus row-major flat data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// On-disk model container. `kind` and `meta` describe how the network is
/// used (schema, normalization scale, input layout).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub kind: String,
    pub config: MlpConfig,
    #[serde(default)]
    pub meta: serde_json::Map<String, serde_json::Value>,
    pub tensors: Vec<Tensor>,
}

impl ModelFile {
    pub fn from_model(kind: &str, model: &MlpModel, meta: serde_json::Map<String, serde_json::Value>) -> Self {
        let mut tensors = Vec::new();
        for (name, kind, data) in model.parameters() {
            let shape = match kind {
                ParamKind::Weight { rows, cols } => vec![rows, cols],
                _ => vec![data.len()],
            };
            tensors.push(Tensor {
                name,
                shape,
                data: data.to_vec(),
            });
        }
        for (name, mean, var) in model.running_stats() {
            tensors.push(Tensor {
                name: format!("{name}.bn.running_mean"),
                shape: vec![mean.len()],
                data: mean.to_vec(),
            });
            tensors.push(Tensor {
                name: format!("{name}.bn.running_var"),
                shape: vec![var.len()],
                data: var.to_vec(),
            });
        }
        ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            kind: kind.to_string(),
            config: model.config.clone(),
            meta,
            tensors,
        }
    }

    /// Rebuilds the network, checking every tensor name and shape.
    pub fn to_model(&self) -> Result<MlpModel> {
        if self.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Model(format!("unsupported format_version {}", self.format_version)));
        }
        let mut model = MlpModel::init_kaiming(&self.config).map_err(|e| Error::Model(e.to_string()))?;
        let find = |name: &str| {
            self.tensors
                .iter()
                .find(|t| t.name == name)
                .ok_or_else(|| Error::Model(format!("missing tensor {name}")))
        };
        let fill = |dst: &mut [f64], t: &Tensor, shape: &[usize]| -> Result<()> {
            if t.shape != shape || t.data.len() != dst.len() {
                return Err(Error::Model(format!("tensor {} has shape {:?}, expected {:?}", t.name, t.shape, shape)));
            }
            dst.copy_from_slice(&t.data);
            Ok(())
        };
        for p in model.parameters_mut() {
            let shape = match p.kind {
                ParamKind::Weight { rows, cols } => vec![rows, cols],
                _ => vec![p.data.len()],
            };
            fill(p.data, find(&p.name)?, &shape)?;
        }
        for (name, mean, var) in model.running_stats_mut() {
            let n = mean.len();
            fill(mean, find(&format!("{name}.bn.running_mean"))?, &[n])?;
            fill(var, find(&format!("{name}.bn.running_var"))?, &[n])?;
            if var.iter().any(|v| *v < 0.0) {
                return Err(Error::Model(format!("{name} has negative running variance")));
            }
        }
        let expected = model.parameters().len() + 2 * model.running_stats().len();
        if self.tensors.len() != expected {
            return Err(Error::Model(format!("{} tensors, expected {expected}", self.tensors.len())));
        }
        Ok(model)
    }

    pub fn to_json(&self) -> String {
        jsonfmt::to_string(self).expect("model serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = crate::error::create_file(path)?;
        let mut w = BufWriter::new(f);
        jsonfmt::to_writer(&mut w, self).map_err(|e| Error::Model(e.to_string()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_reader(BufReader::new(f)).map_err(|e| Error::Model(format!("{}: {e}", path.display())))
    }
}
