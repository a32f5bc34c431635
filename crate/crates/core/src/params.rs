//! Named learnable tensors and the checkpoint container that stores them.
//!
//! Checkpoint layout (little-endian): magic `RASK`, u16 version, u32
//! length + UTF-8 metadata text, u32 entry count, then per entry a u32
//! length + UTF-8 name followed by one tensor snapshot.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::snapshot::{self, Reader};
use crate::numerics::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "parameter {name} registered twice");
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Record every parameter as a trainable leaf on `tape`.
    pub fn bind<'t>(&self, tape: &'t Tape) -> BoundParams<'t> {
        BoundParams {
            vars: self.values.iter().map(|v| tape.param(v.clone())).collect(),
        }
    }

    /// Record every parameter as a constant (inference only).
    pub fn bind_frozen<'t>(&self, tape: &'t Tape) -> BoundParams<'t> {
        BoundParams {
            vars: self.values.iter().map(|v| tape.constant(v.clone())).collect(),
        }
    }

    /// Replace values from `other`, which must hold the same names and shapes.
    pub fn load_from(&mut self, other: &ParameterStore) -> Result<()> {
        for (i, name) in self.names.iter().enumerate() {
            let j = other
                .index
                .get(name)
                .ok_or_else(|| Error::format("checkpoint", 0, format!("missing parameter {name}")))?;
            if other.values[*j].shape() != self.values[i].shape() {
                return Err(Error::format(
                    "checkpoint",
                    0,
                    format!(
                        "parameter {name} has shape {:?}, model expects {:?}",
                        other.values[*j].shape(),
                        self.values[i].shape()
                    ),
                ));
            }
        }
        for (i, name) in self.names.iter().enumerate() {
            self.values[i] = other.values[other.index[name]].clone();
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct BoundParams<'t> {
    vars: Vec<Var<'t>>,
}

impl<'t> BoundParams<'t> {
    /// Wrap vars already on a tape, one per parameter in store order.
    pub fn from_vars(vars: Vec<Var<'t>>) -> Self {
        BoundParams { vars }
    }

    pub fn var(&self, id: ParamId) -> Var<'t> {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var<'t>] {
        &self.vars
    }
}

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"RASK";
pub const CHECKPOINT_VERSION: u16 = 1;

/// Named tensors plus free-form metadata text.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub metadata: String,
    pub entries: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn store_with_prefix(&self, prefix: &str) -> ParameterStore {
        let mut store = ParameterStore::new();
        for (n, t) in &self.entries {
            if let Some(rest) = n.strip_prefix(prefix) {
                store.add(rest, t.clone());
            }
        }
        store
    }

    pub fn push_store(&mut self, prefix: &str, store: &ParameterStore) {
        for (_, name, t) in store.iter() {
            self.entries.push((format!("{prefix}{name}"), t.clone()));
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.metadata.len() as u32).to_le_bytes());
        out.extend_from_slice(self.metadata.as_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, t) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            snapshot::encode_into(t, &mut out);
        }
        out
    }

    pub fn decode(bytes: &[u8], source: &str) -> Result<Self> {
        let mut r = Reader::new(bytes, source);
        r.expect_magic(CHECKPOINT_MAGIC)?;
        let version = r.u16()?;
        if version != CHECKPOINT_VERSION {
            return Err(r.error(format!("unsupported checkpoint version {version}")));
        }
        let meta_len = r.u32()? as usize;
        let metadata = String::from_utf8(r.take(meta_len)?.to_vec()).map_err(|_| r.error("metadata is not UTF-8"))?;
        let count = r.u32()? as usize;
        let mut entries = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let n = r.u32()? as usize;
            let name = String::from_utf8(r.take(n)?.to_vec()).map_err(|_| r.error("entry name is not UTF-8"))?;
            entries.push((name, r.tensor()?));
        }
        if !r.at_end() {
            return Err(r.error("trailing bytes after checkpoint"));
        }
        Ok(Checkpoint { metadata, entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::decode(&bytes, &path.display().to_string())
    }
}
