use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use super::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &str = "stockformer-checkpoint";

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub value: Tensor,
    pub grad: Tensor,
    pub trainable: bool,
}

/// Named parameters with gradients, ordered by name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterStore {
    params: BTreeMap<String, Parameter>,
    meta: BTreeMap<String, String>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<()> {
        self.insert_with(name, value, true)
    }

    /// Registers a tensor that is saved with the model but never updated.
    pub fn insert_frozen(&mut self, name: &str, value: Tensor) -> Result<()> {
        self.insert_with(name, value, false)
    }

    fn insert_with(&mut self, name: &str, value: Tensor, trainable: bool) -> Result<()> {
        if name.is_empty() || name.contains(char::is_whitespace) {
            return Err(Error::arg(format!("bad parameter name {name:?}")));
        }
        if self.params.contains_key(name) {
            return Err(Error::arg(format!("duplicate parameter {name:?}")));
        }
        let grad = Tensor::zeros(value.shape());
        self.params.insert(
            name.to_string(),
            Parameter {
                value,
                grad,
                trainable,
            },
        );
        Ok(())
    }

    /// Glorot-uniform initialised matrix-like parameter; `fan_in` and
    /// `fan_out` are taken from the last two dims (or both from a 1-D shape).
    pub fn insert_glorot(&mut self, name: &str, shape: &[usize], rng: &mut impl Rng) -> Result<()> {
        let (fan_in, fan_out) = match shape {
            [] => (1, 1),
            [n] => (*n, *n),
            [.., a, b] => (*a, *b),
        };
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
        self.insert(name, Tensor::new(shape.to_vec(), data)?)
    }

    pub fn insert_zeros(&mut self, name: &str, shape: &[usize]) -> Result<()> {
        self.insert(name, Tensor::zeros(shape))
    }

    pub fn get(&self, name: &str) -> Option<&Parameter> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Parameter> {
        self.params.get_mut(name)
    }

    pub fn value(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .map(|p| &p.value)
            .ok_or_else(|| Error::arg(format!("unknown parameter {name:?}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Parameter)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Parameter)> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn n_trainable_values(&self) -> usize {
        self.params
            .values()
            .filter(|p| p.trainable)
            .map(|p| p.value.numel())
            .sum()
    }

    pub fn zero_grads(&mut self) {
        for p in self.params.values_mut() {
            p.grad.data_mut().fill(0.0);
        }
    }

    pub fn set_meta(&mut self, key: &str, value: impl Into<String>) {
        self.meta.insert(key.to_string(), value.into());
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.get(key).map(String::as_str)
    }

    pub fn meta_entries(&self) -> &BTreeMap<String, String> {
        &self.meta
    }

    /// Text serialisation; values round-trip exactly.
    pub fn to_checkpoint_string(&self) -> String {
        let mut out = format!("{MAGIC} {CHECKPOINT_VERSION}\n");
        for (k, v) in &self.meta {
            let _ = writeln!(out, "meta\t{k}\t{}", v.replace(['\t', '\n'], " "));
        }
        for (name, p) in &self.params {
            let dims: Vec<String> = p.value.shape().iter().map(|d| d.to_string()).collect();
            let vals: Vec<String> = p.value.data().iter().map(|v| format!("{v:e}")).collect();
            let _ = writeln!(
                out,
                "param\t{name}\t{}\t{}\t{}",
                u8::from(p.trainable),
                dims.join(","),
                vals.join(" ")
            );
        }
        out
    }

    pub fn from_checkpoint_str(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Checkpoint("empty file".into()))?;
        let version = header
            .strip_prefix(MAGIC)
            .map(str::trim)
            .ok_or_else(|| Error::Checkpoint(format!("bad header {header:?}")))?;
        if version != CHECKPOINT_VERSION.to_string() {
            return Err(Error::Checkpoint(format!(
                "unsupported version {version} (expected {CHECKPOINT_VERSION})"
            )));
        }
        let mut store = ParameterStore::new();
        for (i, line) in lines.enumerate() {
            let bad = |m: &str| Error::Checkpoint(format!("line {}: {m}", i + 2));
            let fields: Vec<&str> = line.split('\t').collect();
            match fields.as_slice() {
                ["meta", k, v] => store.set_meta(k, *v),
                ["param", name, trainable, dims, vals] => {
                    let shape = if dims.is_empty() {
                        vec![]
                    } else {
                        dims.split(',')
                            .map(str::parse)
                            .collect::<Result<Vec<usize>, _>>()
                            .map_err(|_| bad("bad dims"))?
                    };
                    let data = vals
                        .split_whitespace()
                        .map(str::parse)
                        .collect::<Result<Vec<f64>, _>>()
                        .map_err(|_| bad("bad value"))?;
                    let value = Tensor::new(shape, data).map_err(|e| bad(&e.to_string()))?;
                    store
                        .insert_with(name, value, *trainable == "1")
                        .map_err(|e| bad(&e.to_string()))?;
                }
                [""] => {}
                _ => return Err(bad("unrecognised record")),
            }
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_checkpoint_string())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint_str(&std::fs::read_to_string(path)?)
    }

    /// Copies values from `other`, which must hold exactly the same names and
    /// shapes.
    pub fn assign_from(&mut self, other: &ParameterStore) -> Result<()> {
        if self.params.len() != other.params.len() {
            return Err(Error::Compatibility(format!(
                "expected {} parameters, found {}",
                self.params.len(),
                other.params.len()
            )));
        }
        for (name, p) in &mut self.params {
            let o = other
                .params
                .get(name)
                .ok_or_else(|| Error::Compatibility(format!("missing parameter {name}")))?;
            if o.value.shape() != p.value.shape() {
                return Err(Error::Compatibility(format!(
                    "parameter {name} has shape {:?}, expected {:?}",
                    o.value.shape(),
                    p.value.shape()
                )));
            }
            p.value = o.value.clone();
        }
        self.meta = other.meta.clone();
        Ok(())
    }
}
