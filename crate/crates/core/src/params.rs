//! Named parameter sets and their JSON container.
//!
//! Container layout (keys appear in this order):
//!
//! ```json
//! {
//!   "format": "armot-params",
//!   "version": 1,
//!   "params": [
//!     { "name": "fusion.proj_v", "shape": [32, 32], "values": [ ... row-major ... ] }
//!   ]
//! }
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Gradients, Tape, Tensor};

pub const PARAM_FORMAT: &str = "armot-params";
pub const PARAM_VERSION: u32 = 1;

/// A struct of named trainable tensors with a fixed order.
pub trait Parameters: Clone {
    fn tensors(&self) -> Vec<(String, &Tensor)>;

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)>;

    /// Copy whose tensors are registered on `tape` as trainable leaves.
    fn bind(&self, tape: &mut Tape) -> Self {
        let mut bound = self.clone();
        for (_, t) in bound.tensors_mut() {
            *t = tape.param(t);
        }
        bound
    }

    /// Copy whose tensors are registered on `tape` as constants.
    fn bind_frozen(&self, tape: &mut Tape) -> Self {
        let mut bound = self.clone();
        for (_, t) in bound.tensors_mut() {
            *t = tape.constant(t);
        }
        bound
    }

    fn named(&self) -> Vec<(String, Tensor)> {
        self.tensors()
            .into_iter()
            .map(|(n, t)| (n, t.detach()))
            .collect()
    }

    /// Copy with every tensor replaced, in [`Parameters::tensors`] order.
    fn with_values(&self, values: &[Tensor]) -> Result<Self> {
        let mut out = self.clone();
        {
            let slots = out.tensors_mut();
            if slots.len() != values.len() {
                return Err(Error::invalid(format!(
                    "expected {} tensors, got {}",
                    slots.len(),
                    values.len()
                )));
            }
            for ((name, slot), v) in slots.into_iter().zip(values) {
                if slot.shape() != v.shape() {
                    return Err(Error::shape(
                        "Parameters::with_values",
                        format!("{name}: {:?} vs {:?}", slot.shape(), v.shape()),
                    ));
                }
                *slot = v.clone();
            }
        }
        Ok(out)
    }

    /// Plain gradient-descent step using gradients recorded for `bound`
    /// (a [`Parameters::bind`] copy of `self`).
    fn descend(&mut self, bound: &Self, grads: &Gradients, lr: f64) {
        let bound_tensors = bound.tensors();
        for ((_, t), (_, b)) in self.tensors_mut().into_iter().zip(bound_tensors) {
            if let Some(g) = grads.get(b) {
                for (v, d) in t.data_mut().iter_mut().zip(g.data()) {
                    *v -= lr * d;
                }
            }
        }
    }

    fn to_param_file(&self) -> ParamFile {
        ParamFile {
            format: PARAM_FORMAT.to_string(),
            version: PARAM_VERSION,
            params: self
                .tensors()
                .into_iter()
                .map(|(name, t)| ParamEntry {
                    name,
                    shape: t.shape().to_vec(),
                    values: t.data().to_vec(),
                })
                .collect(),
        }
    }

    /// Overwrites every tensor from `file`; names, order and shapes must
    /// match exactly.
    fn load_param_file(&mut self, file: &ParamFile) -> Result<()> {
        if file.format != PARAM_FORMAT || file.version != PARAM_VERSION {
            return Err(Error::invalid(format!(
                "unsupported parameter container {} v{}",
                file.format, file.version
            )));
        }
        let slots = self.tensors_mut();
        if slots.len() != file.params.len() {
            return Err(Error::invalid(format!(
                "parameter count mismatch: expected {}, file has {}",
                slots.len(),
                file.params.len()
            )));
        }
        let mut staged = Vec::with_capacity(slots.len());
        for ((name, slot), entry) in slots.iter().zip(&file.params) {
            if *name != entry.name {
                return Err(Error::invalid(format!(
                    "parameter order mismatch: expected `{name}`, found `{}`",
                    entry.name
                )));
            }
            if slot.shape() != entry.shape.as_slice() {
                return Err(Error::shape(
                    "load_param_file",
                    format!("{name}: expected {:?}, file has {:?}", slot.shape(), entry.shape),
                ));
            }
            staged.push(Tensor::new(entry.shape.clone(), entry.values.clone())?);
        }
        for ((_, slot), t) in slots.into_iter().zip(staged) {
            *slot = t;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamFile {
    pub format: String,
    pub version: u32,
    pub params: Vec<ParamEntry>,
}

impl ParamFile {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Prefixes every name of a nested parameter set.
pub(crate) fn prefixed<'a>(prefix: &str, items: Vec<(String, &'a Tensor)>) -> Vec<(String, &'a Tensor)> {
    items
        .into_iter()
        .map(|(n, t)| (format!("{prefix}.{n}"), t))
        .collect()
}

pub(crate) fn prefixed_mut<'a>(
    prefix: &str,
    items: Vec<(String, &'a mut Tensor)>,
) -> Vec<(String, &'a mut Tensor)> {
    items
        .into_iter()
        .map(|(n, t)| (format!("{prefix}.{n}"), t))
        .collect()
}
