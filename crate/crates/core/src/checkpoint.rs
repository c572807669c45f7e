//! Versioned, self-describing model checkpoints.
//!
//! A checkpoint is a JSON document holding the model kind, its config,
//! the named seeds used to produce it and a set of named float blobs. Blob
//! values are stored as hex of their little-endian bytes so they load back
//! bit for bit.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{NetworkConfig, NetworkParams, TrainHistory};

pub const FORMAT: &str = "curvecast-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckpointKind {
    Network,
    Bayes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Blob {
    pub shape: Vec<usize>,
    pub data: String,
}

impl Blob {
    pub fn encode(shape: Vec<usize>, values: &[f64]) -> Self {
        let mut bytes = Vec::with_capacity(values.len() * 8);
        for v in values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        Self {
            shape,
            data: hex::encode(bytes),
        }
    }

    pub fn decode(&self) -> Result<Vec<f64>> {
        let bytes = hex::decode(&self.data).map_err(|e| Error::Format(format!("blob hex: {e}")))?;
        if bytes.len() % 8 != 0 {
            return Err(Error::Format("blob length is not a multiple of 8 bytes".into()));
        }
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let expected: usize = self.shape.iter().product();
        if values.len() != expected {
            return Err(Error::shape("blob values", expected, values.len()));
        }
        Ok(values)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub kind: CheckpointKind,
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    #[serde(default)]
    pub meta: serde_json::Value,
    pub blobs: BTreeMap<String, Blob>,
}

impl Checkpoint {
    pub fn new(kind: CheckpointKind, config: serde_json::Value) -> Self {
        Self {
            format: FORMAT.into(),
            version: VERSION,
            kind,
            config,
            seeds: BTreeMap::new(),
            meta: serde_json::Value::Null,
            blobs: BTreeMap::new(),
        }
    }

    pub fn blob(&self, name: &str) -> Result<Vec<f64>> {
        self.blobs
            .get(name)
            .ok_or_else(|| Error::Format(format!("checkpoint has no blob '{name}'")))?
            .decode()
    }

    pub fn expect_kind(&self, kind: CheckpointKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Format(format!(
                "expected a {kind:?} checkpoint, found {:?}",
                self.kind
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text).map_err(|e| Error::Format(format!("checkpoint: {e}")))?;
        if ck.format != FORMAT {
            return Err(Error::Format(format!("not a checkpoint: format '{}'", ck.format)));
        }
        if ck.version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {}", ck.version)));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Network checkpoint with its training history in `meta`.
pub fn network_checkpoint(params: &NetworkParams, history: Option<&TrainHistory>, seeds: &[(&str, u64)]) -> Result<Checkpoint> {
    let config = serde_json::to_value(&params.config).map_err(|e| Error::Format(e.to_string()))?;
    let mut ck = Checkpoint::new(CheckpointKind::Network, config);
    for (k, v) in seeds {
        ck.seeds.insert((*k).into(), *v);
    }
    if let Some(h) = history {
        ck.meta = serde_json::to_value(h).map_err(|e| Error::Format(e.to_string()))?;
    }
    ck.blobs
        .insert("params".into(), Blob::encode(vec![params.len()], &params.values));
    Ok(ck)
}

pub fn network_from_checkpoint(ck: &Checkpoint) -> Result<NetworkParams> {
    ck.expect_kind(CheckpointKind::Network)?;
    let config: NetworkConfig =
        serde_json::from_value(ck.config.clone()).map_err(|e| Error::Format(format!("network config: {e}")))?;
    NetworkParams::from_values(&config, ck.blob("params")?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blob_round_trip_is_bit_exact() {
        let v = vec![0.1, -0.0, f64::MIN_POSITIVE, 1e300, std::f64::consts::PI];
        let b = Blob::encode(vec![5], &v);
        let back = b.decode().unwrap();
        for (a, b) in v.iter().zip(&back) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        let bad = Blob { shape: vec![4], ..b };
        assert!(bad.decode().is_err());
    }

    #[test]
    fn network_round_trip() {
        let cfg = NetworkConfig {
            contracts: 2,
            window_len: 3,
            common_layers: vec![4],
            branch_layers: vec![3],
            ..NetworkConfig::default()
        };
        let p = NetworkParams::init(&cfg).unwrap();
        let ck = network_checkpoint(&p, Some(&TrainHistory::default()), &[("init", 0)]).unwrap();
        let text = ck.to_json().unwrap();
        let back = network_from_checkpoint(&Checkpoint::from_json(&text).unwrap()).unwrap();
        assert_eq!(back, p);
        assert_eq!(ck.seeds["init"], 0);
    }

    #[test]
    fn wrong_version_or_kind_rejected() {
        let mut ck = Checkpoint::new(CheckpointKind::Bayes, serde_json::Value::Null);
        assert!(network_from_checkpoint(&ck).is_err());
        ck.version = 99;
        assert!(Checkpoint::from_json(&ck.to_json().unwrap()).is_err());
    }

    #[test]
    fn missing_file_names_the_path() {
        let err = Checkpoint::load(Path::new("/nonexistent/model.json")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/model.json"));
    }
}
