//! `FRPT` checkpoints: the JSON header lists the input shape and each unit's
//! architecture with its parameter shapes; the payload holds every unit's
//! weights then bias, in unit order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LayerUnit, Network, UnitSpec};
use crate::container::{self, Decoded};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"FRPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct UnitHeader {
    #[serde(flatten)]
    spec: UnitSpec,
    weight_shape: Vec<usize>,
    bias_shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    input_shape: Vec<usize>,
    units: Vec<UnitHeader>,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    metadata: serde_json::Value,
}

/// Serializes a network with optional free-form metadata (e.g. epoch, seed).
pub fn to_bytes(net: &Network, metadata: serde_json::Value) -> Result<Vec<u8>> {
    let header = Header {
        input_shape: net.input_shape().to_vec(),
        units: net
            .units()
            .iter()
            .map(|u| UnitHeader {
                spec: u.spec,
                weight_shape: u.weights.shape().to_vec(),
                bias_shape: u.bias.shape().to_vec(),
            })
            .collect(),
        metadata,
    };
    let payload: Vec<f64> = net
        .units()
        .iter()
        .flat_map(|u| u.weights.data().iter().chain(u.bias.data()).copied())
        .collect();
    container::encode(MAGIC, VERSION, &header, &payload)
}

/// Parses a checkpoint into its network and metadata.
pub fn from_bytes(bytes: &[u8]) -> Result<(Network, serde_json::Value)> {
    let Decoded { header, payload, .. } = container::decode::<Header>(bytes, MAGIC, VERSION)?;
    let expected: usize = header
        .units
        .iter()
        .map(|u| u.weight_shape.iter().product::<usize>() + u.bias_shape.iter().product::<usize>())
        .sum();
    if payload.len() != expected {
        return Err(Error::TruncatedFile {
            what: "checkpoint payload".into(),
            expected: expected * 8,
            found: payload.len() * 8,
        });
    }
    let mut offset = 0;
    let mut take = |shape: &[usize]| -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let t = Tensor::new(shape.to_vec(), payload[offset..offset + n].to_vec())?;
        offset += n;
        Ok(t)
    };
    let units = header
        .units
        .iter()
        .map(|u| {
            Ok(LayerUnit {
                spec: u.spec,
                weights: take(&u.weight_shape)?,
                bias: take(&u.bias_shape)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((Network::from_units(&header.input_shape, units)?, header.metadata))
}

pub fn save(path: &Path, net: &Network, metadata: serde_json::Value) -> Result<()> {
    container::write_atomic(path, &to_bytes(net, metadata)?)
}

pub fn load(path: &Path) -> Result<(Network, serde_json::Value)> {
    from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Preset;

    #[test]
    fn round_trip_is_bit_exact() {
        let net = Preset::ChannelsIncreasing.build(&[1, 28, 28], 10, 4).unwrap();
        let meta = serde_json::json!({"epoch": 3});
        let bytes = to_bytes(&net, meta.clone()).unwrap();
        let (back, back_meta) = from_bytes(&bytes).unwrap();
        assert_eq!(back, net);
        assert_eq!(back_meta, meta);
        assert_eq!(to_bytes(&back, back_meta).unwrap(), bytes);
        assert_eq!(&bytes[..4], b"FRPT");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), VERSION);
    }

    #[test]
    fn short_payload_is_rejected() {
        let net = Preset::MnistBaseline.build(&[1, 28, 28], 10, 0).unwrap();
        let bytes = to_bytes(&net, serde_json::Value::Null).unwrap();
        assert!(matches!(from_bytes(&bytes[..bytes.len() - 8]), Err(Error::TruncatedFile { .. })));
    }
}
