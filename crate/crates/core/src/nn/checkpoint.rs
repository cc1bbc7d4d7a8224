//! JSON checkpoint manifest: `{"tensors": [{"name", "shape", "data"}]}`, names sorted.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::layers::Module;
use super::tensor::Tensor;
use crate::error::{LoatError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    tensors: Vec<Entry>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    tensors: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    /// Adds all parameters of `module` under `prefix.`.
    pub fn add_module(&mut self, prefix: &str, module: &impl Module) {
        for (name, t) in module.named_params() {
            self.insert(format!("{prefix}.{name}"), t.clone());
        }
    }

    /// Overwrites the parameters of `module` from tensors under `prefix.`.
    pub fn restore_module(&self, prefix: &str, module: &mut impl Module) -> Result<()> {
        let names: Vec<String> = module.named_params().into_iter().map(|(n, _)| n).collect();
        for (name, slot) in names.iter().zip(module.params_mut()) {
            let key = format!("{prefix}.{name}");
            let t = self.get(&key)?;
            t.expect_shape(slot.shape(), &key)?;
            *slot = t.clone();
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| LoatError::InvalidArgument(format!("checkpoint is missing tensor `{name}`")))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn merge(&mut self, other: &Checkpoint) {
        for (k, v) in &other.tensors {
            self.tensors.insert(k.clone(), v.clone());
        }
    }

    pub fn to_json(&self) -> String {
        let m = Manifest {
            tensors: self
                .tensors
                .iter()
                .map(|(name, t)| Entry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                    data: t.data().to_vec(),
                })
                .collect(),
        };
        let mut s = serde_json::to_string(&m).expect("checkpoint serializes");
        s.push('\n');
        s
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let m: Manifest = serde_json::from_str(text).map_err(|e| LoatError::malformed(origin, e.to_string()))?;
        let mut out = Checkpoint::new();
        for e in m.tensors {
            let t = Tensor::new(e.shape, e.data).map_err(|err| LoatError::malformed(origin, err.to_string()))?;
            if out.tensors.insert(e.name.clone(), t).is_some() {
                return Err(LoatError::malformed(origin, format!("duplicate tensor `{}`", e.name)));
            }
        }
        Ok(out)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| LoatError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| LoatError::io(path, e))?;
        Self::parse(&text, path)
    }

    /// SHA-256 of the canonical JSON, hex encoded.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layers::{Activation, Mlp};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn module_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mlp = Mlp::new(&[3, 5, 1], Activation::Relu, Activation::Identity, &mut rng);
        let mut ck = Checkpoint::new();
        ck.add_module("head", &mlp);
        let text = ck.to_json();
        let back = Checkpoint::parse(&text, Path::new("mem")).unwrap();
        assert_eq!(back.to_json(), text);
        let mut other = Mlp::new(&[3, 5, 1], Activation::Relu, Activation::Identity, &mut rng);
        back.restore_module("head", &mut other).unwrap();
        assert_eq!(other, mlp);
        let names: Vec<_> = back.names().collect();
        let mut sorted = names.clone();
        sorted.sort();
        assert_eq!(names, sorted);
    }

    #[test]
    fn missing_tensor_is_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut mlp = Mlp::new(&[3, 1], Activation::Relu, Activation::Identity, &mut rng);
        assert!(Checkpoint::new().restore_module("x", &mut mlp).is_err());
    }
}
