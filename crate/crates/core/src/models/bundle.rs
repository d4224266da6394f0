//! A network together with the architecture description needed to rebuild
//! it, and the binary checkpoint format.
//!
//! Layout: `b"DBCK"`, `u32` format version, `u64` header length, a JSON
//! header, then every parameter as little-endian `f64` in visit order.

use super::{
    Arch, AutoBc, AutoBcConfig, Autoencoder, AutoencoderConfig, SpatialConfig, SpatialNet, Trainable, VitConfig, VitNet,
};
use crate::error::{Error, Result};
use crate::nn::{ParamVisitor, Parameterized, Tensor};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"DBCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "arch", content = "params", rename_all = "snake_case")]
pub enum ModelConfig {
    Autoencoder(AutoencoderConfig),
    Autobc(AutoBcConfig),
    AutobcSpatial(SpatialConfig),
    Vit(VitConfig),
}

impl ModelConfig {
    pub fn arch(&self) -> Arch {
        match self {
            ModelConfig::Autoencoder(_) => Arch::Autoencoder,
            ModelConfig::Autobc(_) => Arch::Autobc,
            ModelConfig::AutobcSpatial(_) => Arch::AutobcSpatial,
            ModelConfig::Vit(_) => Arch::Vit,
        }
    }
}

#[derive(Clone, Debug)]
pub enum Network {
    Autoencoder(Autoencoder),
    Autobc(AutoBc),
    AutobcSpatial(SpatialNet),
    Vit(VitNet),
}

impl Network {
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self> {
        Ok(match config {
            ModelConfig::Autoencoder(c) => Network::Autoencoder(Autoencoder::new(c.clone(), seed)?),
            ModelConfig::Autobc(c) => Network::Autobc(AutoBc::new(c.clone(), seed)?),
            ModelConfig::AutobcSpatial(c) => Network::AutobcSpatial(SpatialNet::new(c.clone(), seed)?),
            ModelConfig::Vit(c) => Network::Vit(VitNet::new(c.clone(), seed)?),
        })
    }

    pub fn trainable(&mut self) -> &mut dyn Trainable {
        match self {
            Network::Autoencoder(n) => n,
            Network::Autobc(n) => n,
            Network::AutobcSpatial(n) => n,
            Network::Vit(n) => n,
        }
    }
}

impl Parameterized for Network {
    fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor<'_>) {
        self.trainable().visit_params(prefix, f)
    }
}

#[derive(Clone, Debug)]
pub struct ModelBundle {
    pub config: ModelConfig,
    /// Initialization seed; together with `config` it fixes every shape.
    pub seed: u64,
    /// Free-form provenance (training epochs, pre-training source, ...).
    pub meta: BTreeMap<String, String>,
    pub net: Network,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    #[serde(flatten)]
    config: ModelConfig,
    seed: u64,
    meta: BTreeMap<String, String>,
    tensors: Vec<TensorEntry>,
}

impl ModelBundle {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let net = Network::build(&config, seed)?;
        Ok(ModelBundle {
            config,
            seed,
            meta: BTreeMap::new(),
            net,
        })
    }

    pub fn arch(&self) -> Arch {
        self.config.arch()
    }

    /// Steering predictions for normalized `[B, 3, 224, 224]` images.
    pub fn predict(&mut self, images: &Tensor) -> Result<Vec<f64>> {
        match &mut self.net {
            Network::Autoencoder(_) => Err(Error::invalid("the autoencoder does not predict steering")),
            Network::Autobc(n) => n.predict(images),
            Network::AutobcSpatial(n) => n.predict(images),
            Network::Vit(n) => n.predict(images),
        }
    }

    pub fn named_tensors(&mut self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.net
            .visit_params("", &mut |name, p| out.push((name.to_string(), p.value.clone())));
        out
    }

    pub fn to_bytes(&mut self) -> Result<Vec<u8>> {
        let tensors = self.named_tensors();
        let header = Header {
            config: self.config.clone(),
            seed: self.seed,
            meta: self.meta.clone(),
            tensors: tensors
                .iter()
                .map(|(n, t)| TensorEntry {
                    name: n.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let total: usize = tensors.iter().map(|(_, t)| t.len()).sum();
        let mut buf = Vec::with_capacity(16 + json.len() + total * 8);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
        buf.extend_from_slice(&json);
        for (_, t) in &tensors {
            for v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(bad("not a checkpoint (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body = bytes.get(16..).ok_or_else(|| bad("truncated header"))?;
        let json = body.get(..hlen).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(json).map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        let mut bundle = ModelBundle::new(header.config, header.seed)?;
        bundle.meta = header.meta;

        let mut data = &body[hlen..];
        let mut values: BTreeMap<String, Tensor> = BTreeMap::new();
        for e in &header.tensors {
            let n: usize = e.shape.iter().product();
            if data.len() < n * 8 {
                return Err(Error::Checkpoint(format!("truncated data for `{}`", e.name)));
            }
            let v = data[..n * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            data = &data[n * 8..];
            values.insert(e.name.clone(), Tensor::from_vec(&e.shape, v)?);
        }
        if !data.is_empty() {
            return Err(bad("trailing bytes after tensor data"));
        }
        let mut err = None;
        bundle.net.visit_params("", &mut |name, p| {
            if err.is_some() {
                return;
            }
            match values.remove(name) {
                Some(t) if t.shape() == p.value.shape() => p.value = t,
                Some(t) => {
                    err = Some(Error::Checkpoint(format!(
                        "`{name}` has shape {:?}, model expects {:?}",
                        t.shape(),
                        p.value.shape()
                    )))
                }
                None => err = Some(Error::Checkpoint(format!("missing tensor `{name}`"))),
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        if let Some(extra) = values.keys().next() {
            return Err(Error::Checkpoint(format!("unexpected tensor `{extra}`")));
        }
        Ok(bundle)
    }

    pub fn save(&mut self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        ModelBundle::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}
