//! Named parameter storage, initialization and on-disk format.
//!
//! A saved [`ParameterSet`] is a directory holding `manifest.json` and one
//! little-endian `f32` file per tensor:
//!
//! ```text
//! {
//!   "version": "...",
//!   "tensors": {
//!     "encoder.key.w": { "shape": [1, 64], "dtype": "f32", "file": "encoder.key.w.f32", "offset": 0 }
//!   }
//! }
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tape::{Gradients, Tape, Var};
use crate::tensor::Tensor;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Model parameters keyed by dot-separated path, iterated in lexicographic
/// order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterSet {
    version: String,
    tensors: BTreeMap<String, Tensor<f32>>,
}

impl ParameterSet {
    pub fn new(version: impl Into<String>) -> Self {
        ParameterSet {
            version: version.into(),
            tensors: BTreeMap::new(),
        }
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn insert(&mut self, path: impl Into<String>, tensor: Tensor<f32>) -> Result<()> {
        let path = path.into();
        if self.tensors.contains_key(&path) {
            return Err(TensorError::DuplicateParam(path));
        }
        self.tensors.insert(path, tensor);
        Ok(())
    }

    pub fn get(&self, path: &str) -> Result<&Tensor<f32>> {
        self.tensors
            .get(path)
            .ok_or_else(|| TensorError::MissingParam(path.to_string()))
    }

    pub fn get_mut(&mut self, path: &str) -> Result<&mut Tensor<f32>> {
        self.tensors
            .get_mut(path)
            .ok_or_else(|| TensorError::MissingParam(path.to_string()))
    }

    pub fn contains(&self, path: &str) -> bool {
        self.tensors.contains_key(path)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<f32>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<f32>)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn paths(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar values.
    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    pub fn cast<T: Scalar>(&self) -> BTreeMap<String, Tensor<T>> {
        self.tensors
            .iter()
            .map(|(k, v)| (k.clone(), v.cast()))
            .collect()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut entries = BTreeMap::new();
        for (path, tensor) in &self.tensors {
            let file = format!("{path}.f32");
            let mut bytes = Vec::with_capacity(tensor.numel() * 4);
            for v in tensor.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            fs::File::create(dir.join(&file))?.write_all(&bytes)?;
            entries.insert(
                path.clone(),
                ManifestEntry {
                    shape: tensor.shape().to_vec(),
                    dtype: "f32".to_string(),
                    file,
                    offset: 0,
                },
            );
        }
        let manifest = Manifest {
            version: self.version.clone(),
            tensors: entries,
        };
        fs::write(dir.join(MANIFEST_FILE), serde_json::to_vec_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST_FILE))?)?;
        let mut set = ParameterSet::new(manifest.version);
        for (path, entry) in manifest.tensors {
            if entry.dtype != "f32" {
                return Err(TensorError::invalid("load", format!("{path}: unsupported dtype {}", entry.dtype)));
            }
            let bytes = fs::read(dir.join(&entry.file))?;
            let numel: usize = entry.shape.iter().product();
            let end = entry.offset + numel * 4;
            if bytes.len() < end {
                return Err(TensorError::invalid(
                    "load",
                    format!("{path}: file holds {} bytes, need {end}", bytes.len()),
                ));
            }
            let data = bytes[entry.offset..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            set.insert(path, Tensor::new(entry.shape, data)?)?;
        }
        Ok(set)
    }
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: String,
    tensors: BTreeMap<String, ManifestEntry>,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    shape: Vec<usize>,
    dtype: String,
    file: String,
    offset: usize,
}

/// How a parameter starts out.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
    Xavier { fan_in: usize, fan_out: usize },
    Zeros,
    Ones,
    Constant(f32),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub path: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn new(path: impl Into<String>, shape: Vec<usize>, init: Init) -> Self {
        ParamSpec {
            path: path.into(),
            shape,
            init,
        }
    }

    /// A weight matrix with Xavier bounds from its own shape.
    pub fn weight(path: impl Into<String>, fan_in: usize, fan_out: usize) -> Self {
        Self::new(path, vec![fan_in, fan_out], Init::Xavier { fan_in, fan_out })
    }

    pub fn bias(path: impl Into<String>, width: usize) -> Self {
        Self::new(path, vec![width], Init::Zeros)
    }
}

/// Specs for `{name}.w` / `{name}.b` of a linear layer.
pub fn linear_specs(name: &str, fan_in: usize, fan_out: usize) -> Vec<ParamSpec> {
    vec![
        ParamSpec::weight(format!("{name}.w"), fan_in, fan_out),
        ParamSpec::bias(format!("{name}.b"), fan_out),
    ]
}

/// Specs for an MLP with layer widths `widths[0] -> widths[1] -> ...`.
pub fn mlp_specs(name: &str, widths: &[usize]) -> Vec<ParamSpec> {
    widths
        .windows(2)
        .enumerate()
        .flat_map(|(i, w)| linear_specs(&format!("{name}.l{i}"), w[0], w[1]))
        .collect()
}

/// Specs for `{name}.gamma` / `{name}.beta` of a layer norm.
pub fn layer_norm_specs(name: &str, width: usize) -> Vec<ParamSpec> {
    vec![
        ParamSpec::new(format!("{name}.gamma"), vec![width], Init::Ones),
        ParamSpec::new(format!("{name}.beta"), vec![width], Init::Zeros),
    ]
}

fn path_stream(path: &str) -> u64 {
    // FNV-1a; stable across platforms and releases
    path.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Draws every parameter from its own seeded stream, so a tensor's initial
/// value depends only on `(seed, path)`.
pub fn init_parameters(specs: &[ParamSpec], seed: u64, version: &str) -> Result<ParameterSet> {
    let mut set = ParameterSet::new(version);
    for spec in specs {
        let numel: usize = spec.shape.iter().product();
        let data = match spec.init {
            Init::Zeros => vec![0.0; numel],
            Init::Ones => vec![1.0; numel],
            Init::Constant(c) => vec![c; numel],
            Init::Xavier { fan_in, fan_out } => {
                let bound = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt() as f32;
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(path_stream(&spec.path));
                let dist = Uniform::new_inclusive(-bound, bound);
                (0..numel).map(|_| dist.sample(&mut rng)).collect()
            }
        };
        set.insert(spec.path.clone(), Tensor::new(spec.shape.clone(), data)?)?;
    }
    Ok(set)
}

/// Parameters placed on a tape as differentiable leaves.
pub struct ParamVars<'t, T: Scalar = f32> {
    vars: BTreeMap<String, Var<'t, T>>,
}

impl<'t, T: Scalar> ParamVars<'t, T> {
    pub fn bind(tape: &'t Tape<T>, params: &ParameterSet) -> Self {
        ParamVars {
            vars: params
                .iter()
                .map(|(k, v)| (k.to_string(), tape.param(v.cast())))
                .collect(),
        }
    }

    pub fn bind_typed(tape: &'t Tape<T>, params: &BTreeMap<String, Tensor<T>>) -> Self {
        ParamVars {
            vars: params
                .iter()
                .map(|(k, v)| (k.clone(), tape.param(v.clone())))
                .collect(),
        }
    }

    pub fn get(&self, path: &str) -> Result<&Var<'t, T>> {
        self.vars
            .get(path)
            .ok_or_else(|| TensorError::MissingParam(path.to_string()))
    }

    pub fn contains(&self, path: &str) -> bool {
        self.vars.contains_key(path)
    }

    /// Gradient per parameter path, zeros for parameters the loss ignores.
    pub fn gradients(&self, grads: &Gradients<T>) -> BTreeMap<String, Tensor<T>> {
        self.vars
            .iter()
            .map(|(k, v)| (k.clone(), grads.wrt_or_zeros(v)))
            .collect()
    }
}
