//! Checkpoint files: one line of JSON manifest, then every named tensor in
//! the tensor serialization format (`shape=...\n` + little-endian f32), in
//! manifest order.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LayerKind, Module, Sequential};
use crate::error::{Error, Result};
use crate::tensor::{read_tensor, write_tensor, Tensor};

pub const FORMAT: &str = "featvae-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub name: String,
    pub kind: LayerKind,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub hyper: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    /// Model-specific configuration needed to rebuild the architecture.
    pub meta: serde_json::Value,
    pub layers: Vec<LayerEntry>,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, Default)]
pub struct Checkpoint {
    pub meta: serde_json::Value,
    pub layers: Vec<LayerEntry>,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn new(meta: serde_json::Value) -> Self {
        Self {
            meta,
            layers: Vec::new(),
            tensors: Vec::new(),
        }
    }

    /// Records a layer's manifest entry, parameters and buffers under `prefix`.
    pub fn add_module(&mut self, prefix: &str, layer: &dyn Module<f32>) {
        self.layers.push(LayerEntry {
            name: prefix.to_string(),
            kind: layer.kind(),
            hyper: layer.hyper(),
        });
        for p in layer.params() {
            self.tensors.push((format!("{prefix}.{}", p.name), p.value.clone()));
        }
        for (name, t) in layer.buffers() {
            self.tensors.push((format!("{prefix}.{name}"), t.clone()));
        }
    }

    pub fn add_sequential(&mut self, prefix: &str, seq: &Sequential<f32>) {
        for (i, layer) in seq.layers().iter().enumerate() {
            self.add_module(&format!("{prefix}.{i}"), layer.as_ref());
        }
    }

    pub fn add_tensor(&mut self, name: &str, t: Tensor<f32>) {
        self.tensors.push((name.to_string(), t));
    }

    pub fn tensor_map(&self) -> BTreeMap<&str, &Tensor<f32>> {
        self.tensors.iter().map(|(n, t)| (n.as_str(), t)).collect()
    }

    pub fn write_to<W: Write>(&self, out: &mut W) -> Result<()> {
        let manifest = Manifest {
            format: FORMAT.into(),
            version: VERSION,
            meta: self.meta.clone(),
            layers: self.layers.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|(n, t)| TensorEntry {
                    name: n.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        serde_json::to_writer(&mut *out, &manifest)?;
        out.write_all(b"\n")?;
        for (_, t) in &self.tensors {
            write_tensor(out, t)?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(input: &mut R) -> Result<Self> {
        let mut line = String::new();
        let n = input.read_line(&mut line)?;
        if n == 0 {
            return Err(Error::format(0, "empty checkpoint"));
        }
        let manifest: Manifest =
            serde_json::from_str(line.trim_end()).map_err(|e| Error::format(0, format!("bad manifest: {e}")))?;
        if manifest.format != FORMAT {
            return Err(Error::header(
                "format",
                format!("expected {FORMAT}, got {}", manifest.format),
            ));
        }
        if manifest.version != VERSION {
            return Err(Error::header(
                "version",
                format!("unsupported version {}", manifest.version),
            ));
        }
        let mut offset = n as u64;
        let mut tensors = Vec::with_capacity(manifest.tensors.len());
        for entry in &manifest.tensors {
            let start = offset;
            let t: Tensor<f32> = read_tensor(input, &mut offset)?;
            if t.shape() != entry.shape.as_slice() {
                return Err(Error::format(
                    start,
                    format!(
                        "tensor `{}` has shape {:?}, manifest says {:?}",
                        entry.name,
                        t.shape(),
                        entry.shape
                    ),
                ));
            }
            tensors.push((entry.name.clone(), t));
        }
        Ok(Self {
            meta: manifest.meta,
            layers: manifest.layers,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}

fn take(map: &BTreeMap<&str, &Tensor<f32>>, name: &str, like: &Tensor<f32>) -> Result<Tensor<f32>> {
    let t = map
        .get(name)
        .ok_or_else(|| Error::format(0, format!("checkpoint is missing tensor `{name}`")))?;
    if t.shape() != like.shape() {
        return Err(Error::Architecture(format!(
            "tensor `{name}` has shape {:?}, model expects {:?}",
            t.shape(),
            like.shape()
        )));
    }
    Ok((*t).clone())
}

/// Loads parameters and buffers saved by [`Checkpoint::add_module`].
pub fn restore_module(ckpt: &BTreeMap<&str, &Tensor<f32>>, prefix: &str, layer: &mut dyn Module<f32>) -> Result<()> {
    for p in layer.params_mut() {
        p.value = take(ckpt, &format!("{prefix}.{}", p.name), &p.value)?;
    }
    for (name, buf) in layer.buffers_mut() {
        *buf = take(ckpt, &format!("{prefix}.{name}"), buf)?;
    }
    Ok(())
}

pub fn restore_sequential(ckpt: &BTreeMap<&str, &Tensor<f32>>, prefix: &str, seq: &mut Sequential<f32>) -> Result<()> {
    for (i, layer) in seq.layers_mut().iter_mut().enumerate() {
        restore_module(ckpt, &format!("{prefix}.{i}"), layer.as_mut())?;
    }
    Ok(())
}
