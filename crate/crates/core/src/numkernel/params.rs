use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::numkernel::{KernelError, Tensor};
use crate::scalar::Scalar;

/// Header string every checkpoint file carries.
pub const CHECKPOINT_FORMAT: &str = "mtlsp-ckpt-v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered collection of learnable tensors.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    index: HashMap<String, ParamId>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId, KernelError> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(KernelError::DuplicateParam(name));
        }
        let id = ParamId(self.tensors.len());
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(value);
        Ok(id)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<T>)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    /// Number of learnable scalars.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let params = self
            .iter()
            .map(|(_, name, t)| {
                (
                    name.to_string(),
                    ParamRecord {
                        shape: t.shape().to_vec(),
                        values: t.data().iter().map(|v| v.as_f64()).collect(),
                    },
                )
            })
            .collect();
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            params,
        }
    }

    /// Overwrites every parameter from `ckpt`; names and shapes must match exactly.
    pub fn load_checkpoint(&mut self, ckpt: &Checkpoint) -> Result<(), KernelError> {
        if ckpt.params.len() != self.len() {
            return Err(KernelError::Checkpoint(format!(
                "checkpoint has {} parameters, model has {}",
                ckpt.params.len(),
                self.len()
            )));
        }
        for (i, name) in self.names.iter().enumerate() {
            let rec = ckpt
                .params
                .get(name)
                .ok_or_else(|| KernelError::Checkpoint(format!("checkpoint lacks parameter '{name}'")))?;
            if rec.shape != self.tensors[i].shape() {
                return Err(KernelError::Checkpoint(format!(
                    "parameter '{name}' has shape {:?} in checkpoint, {:?} in model",
                    rec.shape,
                    self.tensors[i].shape()
                )));
            }
            let data = rec.values.iter().map(|&v| T::of(v)).collect();
            self.tensors[i] = Tensor::new(rec.shape.clone(), data)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), KernelError> {
        self.to_checkpoint().write(path)
    }

    pub fn load(&mut self, path: &Path) -> Result<(), KernelError> {
        let ckpt = Checkpoint::read(path)?;
        self.load_checkpoint(&ckpt)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// On-disk parameter map, serialized as JSON with a format header.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub params: BTreeMap<String, ParamRecord>,
}

impl Checkpoint {
    pub fn write(&self, path: &Path) -> Result<(), KernelError> {
        let text = serde_json::to_string(self).map_err(|e| KernelError::Checkpoint(e.to_string()))?;
        fs::write(path, text).map_err(|e| KernelError::Io(path.display().to_string(), e.to_string()))
    }

    pub fn read(path: &Path) -> Result<Self, KernelError> {
        let text = fs::read_to_string(path).map_err(|e| KernelError::Io(path.display().to_string(), e.to_string()))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, KernelError> {
        let bad_header =
            || KernelError::Checkpoint(format!("not a checkpoint: expected header \"{CHECKPOINT_FORMAT}\""));
        let value: serde_json::Value = serde_json::from_str(text).map_err(|_| bad_header())?;
        if value.get("format").and_then(|f| f.as_str()) != Some(CHECKPOINT_FORMAT) {
            return Err(bad_header());
        }
        serde_json::from_value(value).map_err(|e| KernelError::Checkpoint(e.to_string()))
    }
}
