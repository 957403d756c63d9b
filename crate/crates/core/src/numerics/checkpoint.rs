use serde::{Deserialize, Serialize};

use super::layers::ParamSet;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor,
}

/// Version-tagged list of named parameter blocks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub version: u32,
    pub tensors: Vec<NamedTensor>,
}

impl TensorRecord {
    pub fn from_params(params: &impl ParamSet, prefix: &str) -> Self {
        let mut record = Self {
            version: CHECKPOINT_VERSION,
            tensors: Vec::new(),
        };
        record.extend(params, prefix);
        record
    }

    pub fn extend(&mut self, params: &impl ParamSet, prefix: &str) {
        for (name, t) in params.param_names().into_iter().zip(params.params()) {
            self.tensors.push(NamedTensor {
                name: format!("{prefix}{name}"),
                tensor: t.clone(),
            });
        }
    }

    /// Copies every block named `prefix + name` into `params`.
    pub fn load_into(&self, params: &mut impl ParamSet, prefix: &str) -> Result<()> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {} (expected {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        let names = params.param_names();
        let mut found = Vec::with_capacity(names.len());
        for name in &names {
            let full = format!("{prefix}{name}");
            let entry = self
                .tensors
                .iter()
                .find(|t| t.name == full)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{full}`")))?;
            found.push(entry);
        }
        for (dst, entry) in params.params_mut().into_iter().zip(&found) {
            if !dst.same_shape(&entry.tensor) {
                return Err(Error::Checkpoint(format!(
                    "tensor `{}` has shape {:?}, expected {:?}",
                    entry.name,
                    entry.tensor.shape(),
                    dst.shape()
                )));
            }
        }
        for (dst, entry) in params.params_mut().into_iter().zip(found) {
            dst.data_mut().copy_from_slice(entry.tensor.data());
        }
        Ok(())
    }
}
