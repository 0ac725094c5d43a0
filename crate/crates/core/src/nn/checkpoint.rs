//! JSON checkpoints: the network spec plus every tensor as base64 of
//! little-endian f64 bytes, so parameters round-trip bit-exactly.

use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{NetError, Network, NetworkSpec};

pub const FORMAT: &str = "crodobo-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("not a checkpoint (format {format:?}, version {version})")]
    Format { format: String, version: u32 },
    #[error("tensor {index}: {reason}")]
    Tensor { index: usize, reason: String },
    #[error(transparent)]
    Net(#[from] NetError),
}

#[derive(Debug, Serialize, Deserialize)]
struct NetworkRecord {
    params: Vec<String>,
    running_stats: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    encoding: String,
    spec: NetworkSpec,
    networks: Vec<NetworkRecord>,
}

fn encode(values: &[f64]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    STANDARD.encode(bytes)
}

fn decode(text: &str, expected: usize, index: usize) -> Result<Vec<f64>, CheckpointError> {
    let bytes = STANDARD.decode(text).map_err(|e| CheckpointError::Tensor {
        index,
        reason: e.to_string(),
    })?;
    if bytes.len() != expected * 8 {
        return Err(CheckpointError::Tensor {
            index,
            reason: format!("expected {expected} values, found {} bytes", bytes.len()),
        });
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

pub fn to_json(networks: &[Network]) -> Result<String, CheckpointError> {
    let spec = networks
        .first()
        .map(|n| n.spec().clone())
        .ok_or_else(|| NetError::InvalidSpec("checkpoint needs at least one network".into()))?;
    if networks.iter().any(|n| n.spec() != &spec) {
        return Err(NetError::InvalidSpec("all networks in a checkpoint must share a spec".into()).into());
    }
    let file = CheckpointFile {
        format: FORMAT.into(),
        version: VERSION,
        encoding: "f64-le-base64".into(),
        spec,
        networks: networks
            .iter()
            .map(|n| NetworkRecord {
                params: n.params().iter().map(|t| encode(t)).collect(),
                running_stats: n.running_stats().iter().map(|t| encode(t)).collect(),
            })
            .collect(),
    };
    Ok(serde_json::to_string_pretty(&file)?)
}

pub fn from_json(text: &str) -> Result<Vec<Network>, CheckpointError> {
    let file: CheckpointFile = serde_json::from_str(text)?;
    if file.format != FORMAT || file.version != VERSION {
        return Err(CheckpointError::Format {
            format: file.format,
            version: file.version,
        });
    }
    file.networks
        .iter()
        .map(|record| {
            let mut net = Network::new(&file.spec, 0)?;
            fill(net.params_mut(), &record.params)?;
            fill(net.running_stats_mut(), &record.running_stats)?;
            if net
                .running_stats()
                .iter()
                .skip(1)
                .step_by(2)
                .flat_map(|v| v.iter())
                .any(|&v| !(v > 0.0))
            {
                return Err(CheckpointError::Tensor {
                    index: 0,
                    reason: "running variance must be strictly positive".into(),
                });
            }
            Ok(net)
        })
        .collect()
}

fn fill(targets: Vec<&mut [f64]>, encoded: &[String]) -> Result<(), CheckpointError> {
    if targets.len() != encoded.len() {
        return Err(CheckpointError::Tensor {
            index: encoded.len(),
            reason: format!("expected {} tensors, found {}", targets.len(), encoded.len()),
        });
    }
    for (index, (dst, text)) in targets.into_iter().zip(encoded).enumerate() {
        let values = decode(text, dst.len(), index)?;
        dst.copy_from_slice(&values);
    }
    Ok(())
}

pub fn save(path: &Path, networks: &[Network]) -> Result<(), CheckpointError> {
    std::fs::write(path, to_json(networks)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Vec<Network>, CheckpointError> {
    from_json(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let spec = NetworkSpec::new(3, 4).with_hidden(vec![5, 2]);
        let mut a = Network::new(&spec, 1).unwrap();
        let x = ndarray::array![[0.1, 0.2, 0.3], [1.0, -2.0, 0.5], [0.0, 0.7, -0.1]];
        a.forward_train(x.view()).unwrap();
        let b = Network::new(&spec, 2).unwrap();
        let back = from_json(&to_json(&[a.clone(), b.clone()]).unwrap()).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].params(), a.params());
        assert_eq!(back[0].running_stats(), a.running_stats());
        assert_eq!(back[1].params(), b.params());
    }

    #[test]
    fn rejects_foreign_json_and_truncated_tensors() {
        assert!(from_json("{}").is_err());
        let spec = NetworkSpec::new(2, 2).with_hidden(vec![2]);
        let text = to_json(&[Network::new(&spec, 0).unwrap()]).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["networks"][0]["params"][0] = serde_json::Value::String(STANDARD.encode([0u8; 8]));
        assert!(matches!(from_json(&v.to_string()), Err(CheckpointError::Tensor { index: 0, .. })));
        v["format"] = "other".into();
        assert!(matches!(from_json(&v.to_string()), Err(CheckpointError::Format { .. })));
    }
}
