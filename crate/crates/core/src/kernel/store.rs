use std::io::{BufRead, Write};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{KernelError, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub grad: Option<Tensor>,
    pub(crate) velocity: Option<Tensor>,
}

/// Named parameters with gradient slots. Iteration order is insertion order,
/// which fixes the serialized layout.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: IndexMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<(), KernelError> {
        if self.params.contains_key(name) {
            return Err(KernelError::DuplicateName(name.to_owned()));
        }
        self.params.insert(
            name.to_owned(),
            Param {
                value,
                grad: None,
                velocity: None,
            },
        );
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor, KernelError> {
        self.params
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| KernelError::UnknownParam(name.to_owned()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor, KernelError> {
        self.params
            .get_mut(name)
            .map(|p| &mut p.value)
            .ok_or_else(|| KernelError::UnknownParam(name.to_owned()))
    }

    /// Position of `name` in store order (the layout of `zeros_like`).
    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.get_index_of(name)
    }

    pub fn param(&self, name: &str) -> Option<&Param> {
        self.params.get(name)
    }

    pub(crate) fn params_mut(&mut self, name: &str) -> &mut Param {
        self.params.get_mut(name).expect("known parameter name")
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn values(&self) -> impl Iterator<Item = &Tensor> {
        self.params.values().map(|p| &p.value)
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.params.values_mut().map(|p| &mut p.value)
    }

    pub fn grad(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name).and_then(|p| p.grad.as_ref())
    }

    /// Gradient slot for `name`, created as zeros if unset.
    pub fn grad_mut(&mut self, name: &str) -> Result<&mut Tensor, KernelError> {
        let p = self
            .params
            .get_mut(name)
            .ok_or_else(|| KernelError::UnknownParam(name.to_owned()))?;
        Ok(p.grad.get_or_insert_with(|| Tensor::zeros(p.value.shape())))
    }

    /// Zero tensors shaped like every parameter, in store order.
    pub fn zeros_like(&self) -> Vec<Tensor> {
        self.params
            .values()
            .map(|p| Tensor::zeros(p.value.shape()))
            .collect()
    }

    /// Install a full set of gradients (store order).
    pub fn set_grads(&mut self, grads: Vec<Tensor>) -> Result<(), KernelError> {
        if grads.len() != self.params.len() {
            return Err(KernelError::ShapeMismatch(format!(
                "expected {} gradients, got {}",
                self.params.len(),
                grads.len()
            )));
        }
        for ((name, p), g) in self.params.iter_mut().zip(grads) {
            g.expect_shape(p.value.shape(), name)?;
            p.grad = Some(g);
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for p in self.params.values_mut() {
            p.grad = Some(Tensor::zeros(p.value.shape()));
        }
    }

    pub fn clear_grads(&mut self) {
        for p in self.params.values_mut() {
            p.grad = None;
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.params
            .values()
            .filter_map(|p| p.grad.as_ref())
            .map(Tensor::sum_sq)
            .sum::<f64>()
            .sqrt()
    }

    pub fn sum_sq(&self) -> f64 {
        self.params.values().map(|p| p.value.sum_sq()).sum()
    }

    /// Parameter values only (no gradients or optimizer state).
    pub fn snapshot(&self) -> ParamStore {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|(k, p)| {
                    (
                        k.clone(),
                        Param {
                            value: p.value.clone(),
                            grad: None,
                            velocity: None,
                        },
                    )
                })
                .collect(),
        }
    }

    pub fn manifest(&self) -> StoreManifest {
        let mut offset = 0;
        let tensors = self
            .params
            .iter()
            .map(|(name, p)| {
                let entry = TensorEntry {
                    name: name.clone(),
                    shape: p.value.shape().to_vec(),
                    dtype: "f64le".into(),
                    offset,
                };
                offset += p.value.len() * 8;
                entry
            })
            .collect();
        StoreManifest {
            tensors,
            blob_bytes: offset,
        }
    }

    pub fn blob(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.manifest().blob_bytes);
        for p in self.params.values() {
            for v in p.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_parts(manifest: &StoreManifest, blob: &[u8]) -> Result<Self, KernelError> {
        if blob.len() != manifest.blob_bytes {
            return Err(KernelError::Format(format!(
                "blob has {} bytes, manifest declares {}",
                blob.len(),
                manifest.blob_bytes
            )));
        }
        let mut store = ParamStore::new();
        for e in &manifest.tensors {
            if e.dtype != "f64le" {
                return Err(KernelError::Format(format!("unsupported dtype {}", e.dtype)));
            }
            let n: usize = e.shape.iter().product();
            let end = e.offset + n * 8;
            let bytes = blob.get(e.offset..end).ok_or_else(|| {
                KernelError::Format(format!("tensor {} overruns the blob", e.name))
            })?;
            let data = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            store.insert(&e.name, Tensor::new(e.shape.clone(), data)?)?;
        }
        Ok(store)
    }

    /// Manifest as one JSON line, followed by the raw blob.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), KernelError> {
        let manifest =
            serde_json::to_string(&self.manifest()).map_err(|e| KernelError::Format(e.to_string()))?;
        w.write_all(manifest.as_bytes())?;
        w.write_all(b"\n")?;
        w.write_all(&self.blob())?;
        Ok(())
    }

    pub fn read_from<R: BufRead>(mut r: R) -> Result<Self, KernelError> {
        let mut line = String::new();
        r.read_line(&mut line)?;
        let manifest: StoreManifest =
            serde_json::from_str(line.trim_end()).map_err(|e| KernelError::Format(e.to_string()))?;
        let mut blob = Vec::with_capacity(manifest.blob_bytes);
        r.read_to_end(&mut blob)?;
        Self::from_parts(&manifest, &blob)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    /// Byte offset into the blob.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoreManifest {
    pub tensors: Vec<TensorEntry>,
    pub blob_bytes: usize,
}
