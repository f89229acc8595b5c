//! Weight files.
//!
//! Layout: `PTYW` magic, `u32` LE version, `u32` LE header length, a UTF-8
//! JSON header listing layer descriptors and tensor shapes in order, then the
//! tensors as concatenated little-endian `f32` values in header order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::layer::Layer;
use super::network::{Network, Params};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"PTYW";
pub const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

pub fn encode_weights(net: &Network) -> Result<Vec<u8>> {
    let mut tensors = Vec::new();
    let mut payload = Vec::with_capacity(net.param_count() * 4);
    for (i, p) in net.params().iter().enumerate() {
        if let Some(p) = p {
            for (suffix, t) in [("weight", &p.weight), ("bias", &p.bias)] {
                tensors.push(TensorEntry {
                    name: format!("{i}.{suffix}"),
                    shape: t.shape().to_vec(),
                });
                for v in t.data() {
                    payload.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
    }
    let header = serde_json::to_vec(&Header {
        input_shape: net.input_shape().to_vec(),
        layers: net.layers().to_vec(),
        tensors,
    })?;
    let mut out = Vec::with_capacity(12 + header.len() + payload.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn decode_weights(bytes: &[u8]) -> Result<Network> {
    if bytes.len() < 4 {
        return Err(Error::Truncated(format!("{} bytes, no magic", bytes.len())));
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    if bytes.len() < 12 {
        return Err(Error::Truncated("file ends inside the preamble".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: VERSION,
        });
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if bytes.len() < 12 + header_len {
        return Err(Error::Truncated(format!(
            "header declares {header_len} bytes, {} available",
            bytes.len() - 12
        )));
    }
    let header: Header = serde_json::from_slice(&bytes[12..12 + header_len])?;
    let payload = &bytes[12 + header_len..];
    if payload.len() % 4 != 0 {
        return Err(Error::Truncated(format!(
            "payload of {} bytes is not a whole number of f32 values",
            payload.len()
        )));
    }
    let declared: usize = header
        .tensors
        .iter()
        .map(|t| t.shape.iter().product::<usize>())
        .sum();
    if declared != payload.len() / 4 {
        return Err(Error::PayloadLengthMismatch {
            declared,
            actual: payload.len() / 4,
        });
    }
    let mut floats = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()));
    let mut entries = header.tensors.iter();
    let mut take = |expect: &str| -> Result<Tensor> {
        let entry = entries
            .next()
            .ok_or_else(|| Error::DescriptorMismatch(format!("missing tensor {expect}")))?;
        if entry.name != expect {
            return Err(Error::DescriptorMismatch(format!(
                "expected tensor {expect}, header lists {}",
                entry.name
            )));
        }
        let n: usize = entry.shape.iter().product();
        Tensor::from_vec(&entry.shape, floats.by_ref().take(n).collect())
    };
    let mut params = Vec::with_capacity(header.layers.len());
    for (i, layer) in header.layers.iter().enumerate() {
        if layer.has_params() {
            let weight = take(&format!("{i}.weight"))?;
            let bias = take(&format!("{i}.bias"))?;
            params.push(Some(Params { weight, bias }));
        } else {
            params.push(None);
        }
    }
    if entries.next().is_some() {
        return Err(Error::DescriptorMismatch(
            "header lists more tensors than the layers use".into(),
        ));
    }
    Network::from_parts(&header.input_shape, header.layers, params)
}

pub fn save_weights(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_weights(net)?).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<Network> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_weights(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn net() -> Network {
        Network::new(
            &[3, 8, 8],
            vec![
                Layer::conv(4, 3),
                Layer::Relu,
                Layer::MaxPool { k: 2 },
                Layer::Flatten,
                Layer::dense(5),
            ],
            1,
        )
        .unwrap()
    }

    fn rewrite_header(bytes: &[u8], f: impl FnOnce(&mut serde_json::Value)) -> Vec<u8> {
        let len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let mut header: serde_json::Value = serde_json::from_slice(&bytes[12..12 + len]).unwrap();
        f(&mut header);
        let h = serde_json::to_vec(&header).unwrap();
        let mut out = bytes[..8].to_vec();
        out.extend_from_slice(&(h.len() as u32).to_le_bytes());
        out.extend_from_slice(&h);
        out.extend_from_slice(&bytes[12 + len..]);
        out
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let n = net();
        let back = decode_weights(&encode_weights(&n).unwrap()).unwrap();
        assert_eq!(back.param_bytes(), n.param_bytes());
        assert_eq!(back.layers(), n.layers());
        let x = Tensor::from_vec(&[2, 3, 8, 8], (0..384).map(|i| (i as f32 * 0.01).sin()).collect()).unwrap();
        assert_eq!(back.forward(&x).unwrap(), n.forward(&x).unwrap());
    }

    #[test]
    fn bad_magic() {
        let mut b = encode_weights(&net()).unwrap();
        b[0] = b'X';
        assert!(matches!(decode_weights(&b), Err(Error::BadMagic(_))));
    }

    #[test]
    fn version_mismatch() {
        let mut b = encode_weights(&net()).unwrap();
        b[4] = 9;
        assert!(matches!(decode_weights(&b), Err(Error::VersionMismatch { found: 9, .. })));
    }

    #[test]
    fn truncated_file() {
        let b = encode_weights(&net()).unwrap();
        assert!(matches!(decode_weights(&b[..10]), Err(Error::Truncated(_))));
        assert!(matches!(decode_weights(&b[..20]), Err(Error::Truncated(_))));
        let cut = &b[..b.len() - 4];
        assert!(matches!(decode_weights(cut), Err(Error::PayloadLengthMismatch { .. })));
    }

    #[test]
    fn edited_shape_is_a_length_mismatch() {
        let b = encode_weights(&net()).unwrap();
        let edited = rewrite_header(&b, |h| h["tensors"][0]["shape"][0] = 5.into());
        assert!(matches!(decode_weights(&edited), Err(Error::PayloadLengthMismatch { .. })));
    }

    #[test]
    fn descriptor_mismatch() {
        let b = encode_weights(&net()).unwrap();
        // same element count, wrong layout for the conv layer
        let edited = rewrite_header(&b, |h| {
            h["tensors"][0]["shape"] = serde_json::json!([4, 27]);
        });
        assert!(matches!(decode_weights(&edited), Err(Error::DescriptorMismatch(_))));
    }
}
