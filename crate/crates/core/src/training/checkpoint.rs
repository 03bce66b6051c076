use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, Network};

const MAGIC: &[u8; 8] = b"SCORRCKP";
/// Current container version.
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    version: u32,
    config: TrainConfig,
    model: ModelConfig,
    epoch: usize,
    val_pck: f64,
    tensor_sizes: Vec<usize>,
}

/// Trained weights plus the configuration and metrics they came from.
///
/// On disk: 8-byte magic, little-endian `u32` version, `u64` header length, a JSON header, then
/// every parameter as a little-endian `f64` in [`Network::params`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub config: TrainConfig,
    pub network: Network,
    /// Epoch the weights were taken after (0 = initialization).
    pub epoch: usize,
    pub val_pck: f64,
}

impl Checkpoint {
    pub fn new(config: &TrainConfig, network: &Network, epoch: usize, val_pck: f64) -> Self {
        Self {
            version: FORMAT_VERSION,
            config: config.clone(),
            network: network.clone(),
            epoch,
            val_pck,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let params = self.network.params();
        let header = Header {
            version: self.version,
            config: self.config.clone(),
            model: self.network.config.clone(),
            epoch: self.epoch,
            val_pck: self.val_pck,
            tensor_sizes: params.iter().map(|p| p.len()).collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let total: usize = header.tensor_sizes.iter().sum();
        let mut out = Vec::with_capacity(20 + json.len() + 8 * total);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for p in params {
            for v in p {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("missing checkpoint magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = &bytes[20..];
        if body.len() < hlen {
            return Err(bad("truncated header"));
        }
        let header: Header = serde_json::from_slice(&body[..hlen])?;
        let mut network = Network::init(&header.model, 0)
            .map_err(|e| Error::Checkpoint(format!("model config: {e}")))?;
        let sizes: Vec<usize> = network.params().iter().map(|p| p.len()).collect();
        if sizes != header.tensor_sizes {
            return Err(bad("tensor sizes do not match the model config"));
        }
        let weights = &body[hlen..];
        if weights.len() != 8 * sizes.iter().sum::<usize>() {
            return Err(bad("weight payload has the wrong length"));
        }
        let mut chunks = weights.chunks_exact(8);
        for p in network.params_mut() {
            for v in p.iter_mut() {
                *v = f64::from_le_bytes(chunks.next().unwrap().try_into().unwrap());
            }
        }
        Ok(Self {
            version,
            config: header.config,
            network,
            epoch: header.epoch,
            val_pck: header.val_pck,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_lossless() {
        let cfg = TrainConfig::with_seed(3);
        let net = Network::init(&cfg.model, 17).unwrap();
        let ck = Checkpoint::new(&cfg, &net, 4, 0.625);
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        assert_eq!(back, ck);
    }

    #[test]
    fn rejects_corruption() {
        let cfg = TrainConfig::with_seed(3);
        let net = Network::init(&cfg.model, 1).unwrap();
        let bytes = Checkpoint::new(&cfg, &net, 0, 0.0).to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(Checkpoint::from_bytes(&wrong).is_err());
        let mut ver = bytes;
        ver[8] = 9;
        assert!(Checkpoint::from_bytes(&ver).is_err());
    }
}
