//! Binary checkpoint container.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic        8 bytes  "PEPRCKPT"
//! version      u32
//! header_len   u64
//! header       header_len bytes of UTF-8 JSON:
//!              {"format_version", "meta", "tensors": [{"name", "len"}, ...]}
//! payload      f64 values of every tensor, in header order
//! ```
//!
//! `meta` is free-form JSON describing what the tensors are (layer specs,
//! seeds, group schemes, training config).

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::layer::LayerSpec;
use super::network::Network;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"PEPRCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    len: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Container {
    pub meta: serde_json::Value,
    pub tensors: Vec<(String, Vec<f64>)>,
}

impl Container {
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let header = Header {
            format_version: FORMAT_VERSION,
            meta: self.meta.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|(name, v)| TensorEntry {
                    name: name.clone(),
                    len: v.len() as u64,
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        for (_, values) in &self.tensors {
            for v in values {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let mut u32b = [0u8; 4];
        r.read_exact(&mut u32b)?;
        let version = u32::from_le_bytes(u32b);
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let mut u64b = [0u8; 8];
        r.read_exact(&mut u64b)?;
        let header_len = u64::from_le_bytes(u64b) as usize;
        let mut json = vec![0u8; header_len];
        r.read_exact(&mut json)?;
        let header: Header = serde_json::from_slice(&json)?;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for entry in header.tensors {
            let mut values = Vec::with_capacity(entry.len as usize);
            for _ in 0..entry.len {
                r.read_exact(&mut u64b)?;
                values.push(f64::from_le_bytes(u64b));
            }
            tensors.push((entry.name, values));
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(Error::Format(format!("{} trailing bytes after payload", rest.len())));
        }
        Ok(Self {
            meta: header.meta,
            tensors,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }

    pub fn tensor_map(&self) -> HashMap<&str, &[f64]> {
        self.tensors.iter().map(|(n, v)| (n.as_str(), v.as_slice())).collect()
    }
}

/// Structural description of a [`Network`], stored in checkpoint metadata.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkHeader {
    pub input_dim: usize,
    pub layers: Vec<LayerSpec>,
    pub seed: u64,
    pub trainable: bool,
    pub anchored: bool,
}

impl Network {
    /// Appends this network's tensors (parameters, running statistics,
    /// anchors) under `prefix` and returns its header.
    pub fn export(&self, prefix: &str, tensors: &mut Vec<(String, Vec<f64>)>) -> NetworkHeader {
        for (i, p) in self.params().iter().enumerate() {
            tensors.push((format!("{prefix}.param.{i}"), p.to_vec()));
        }
        for (i, b) in self.buffers().iter().enumerate() {
            tensors.push((format!("{prefix}.buffer.{i}"), b.to_vec()));
        }
        if let Some(anchors) = self.anchors() {
            for (i, a) in anchors.iter().enumerate() {
                tensors.push((format!("{prefix}.anchor.{i}"), a.clone()));
            }
        }
        NetworkHeader {
            input_dim: self.input_dim(),
            layers: self.specs(),
            seed: self.seed(),
            trainable: self.is_trainable(),
            anchored: self.anchors().is_some(),
        }
    }

    pub fn import(header: &NetworkHeader, prefix: &str, tensors: &HashMap<&str, &[f64]>) -> Result<Self> {
        let mut net = Network::new(header.input_dim, header.layers.clone(), header.seed)?;
        net.set_trainable(header.trainable);
        let fetch = |name: String, len: usize| -> Result<Vec<f64>> {
            let v = tensors
                .get(name.as_str())
                .ok_or_else(|| Error::Format(format!("checkpoint lacks tensor {name}")))?;
            if v.len() != len {
                return Err(Error::Format(format!(
                    "tensor {name} has {} values, expected {len}",
                    v.len()
                )));
            }
            Ok(v.to_vec())
        };
        let lens: Vec<usize> = net.params().iter().map(|p| p.len()).collect();
        for (i, (p, len)) in net.param_vecs_mut().into_iter().zip(&lens).enumerate() {
            *p = fetch(format!("{prefix}.param.{i}"), *len)?;
        }
        let blens: Vec<usize> = net.buffers().iter().map(|b| b.len()).collect();
        for (i, (b, len)) in net.buffers_mut().into_iter().zip(&blens).enumerate() {
            *b = fetch(format!("{prefix}.buffer.{i}"), *len)?;
        }
        if header.anchored {
            let anchors = lens
                .iter()
                .enumerate()
                .map(|(i, len)| fetch(format!("{prefix}.anchor.{i}"), *len))
                .collect::<Result<Vec<_>>>()?;
            net.set_anchors(anchors)?;
        }
        Ok(net)
    }
}

pub fn save_network(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    let mut tensors = Vec::new();
    let header = net.export("net", &mut tensors);
    Container {
        meta: serde_json::json!({ "network": header }),
        tensors,
    }
    .save(path)
}

pub fn load_network(path: impl AsRef<Path>) -> Result<Network> {
    let c = Container::load(path)?;
    let header: NetworkHeader = serde_json::from_value(
        c.meta
            .get("network")
            .cloned()
            .ok_or_else(|| Error::Format("checkpoint meta lacks a network".into()))?,
    )?;
    Network::import(&header, "net", &c.tensor_map())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Mode;
    use crate::tensor::Tensor2;

    #[test]
    fn network_round_trip_is_bit_identical() {
        let mut net = Network::new(
            3,
            vec![
                LayerSpec::dense(3, 4),
                LayerSpec::Elu,
                LayerSpec::batch_norm(4),
                LayerSpec::Dropout { rate: 0.1 },
                LayerSpec::dense(4, 2),
                LayerSpec::LeakyRelu { slope: 0.1 },
            ],
            42,
        )
        .unwrap();
        net.attach_anchors();
        let x = Tensor2::from_vec(4, 3, (0..12).map(|v| v as f64 / 7.0).collect()).unwrap();
        net.forward(&x, Mode::Train).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        save_network(&net, &path).unwrap();
        let back = load_network(&path).unwrap();
        assert_eq!(back.flat_params(), net.flat_params());
        assert_eq!(back.buffers(), net.buffers());
        assert_eq!(back.anchors(), net.anchors());
        assert_eq!(back.specs(), net.specs());
        assert_eq!(back.predict(&x).unwrap(), net.predict(&x).unwrap());

        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..8], MAGIC);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), FORMAT_VERSION);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(Container::read_from(&b"NOTACKPT\x01\0\0\0"[..]).is_err());
        let c = Container {
            meta: serde_json::json!({}),
            tensors: vec![("a".into(), vec![1.0, 2.0])],
        };
        let mut buf = Vec::new();
        c.write_to(&mut buf).unwrap();
        assert_eq!(Container::read_from(&buf[..]).unwrap(), c);
        assert!(Container::read_from(&buf[..buf.len() - 3]).is_err());
    }
}
