//! Flat binary layout for [`ModelParams`].
//!
//! ```text
//! offset  size  field
//! 0       4     magic "FLDR"
//! 4       4     format version (u32 LE, currently 1)
//! 8       1     model kind (0 adaptive, 1 shared)
//! 9       3     zero padding
//! 12      72    u64 LE: nodes, history, horizon, in_features, out_features,
//!               hidden, layers, embed_dim, pool_dim
//! 84      8·P   payload: f64 LE, blocks in order E^A, E^G, W_0, b_0, ...,
//!               each block row-major
//! ```
//!
//! Only the payload travels between clients and the server, so
//! communication accounting counts `8·P` bytes.

use std::path::Path;

use super::params::{Architecture, ModelKind, ModelParams};
use crate::error::{Error, Result};
use crate::numkit::Tensor;

pub const MAGIC: &[u8; 4] = b"FLDR";
pub const VERSION: u32 = 1;
pub const HEADER_BYTES: usize = 84;
pub const VALUE_BYTES: u64 = 8;

/// Bytes of parameter payload, excluding the header.
pub fn payload_bytes(params: &ModelParams) -> u64 {
    params.numel() as u64 * VALUE_BYTES
}

pub fn encode(params: &ModelParams) -> Vec<u8> {
    let arch = params.arch();
    let mut out = Vec::with_capacity(HEADER_BYTES + payload_bytes(params) as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(params.kind().code());
    out.extend_from_slice(&[0u8; 3]);
    for v in [
        params.nodes(),
        arch.history,
        arch.horizon,
        arch.in_features,
        arch.out_features,
        arch.hidden,
        arch.layers,
        arch.embed_dim,
        arch.pool_dim,
    ] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    for b in params.blocks() {
        for v in b.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn bad(message: impl Into<String>) -> Error {
    Error::Parse {
        location: "checkpoint".into(),
        message: message.into(),
    }
}

pub fn decode(bytes: &[u8]) -> Result<ModelParams> {
    if bytes.len() < HEADER_BYTES || &bytes[0..4] != MAGIC {
        return Err(bad("missing FLDR header"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let kind = ModelKind::from_code(bytes[8]).ok_or_else(|| bad("unknown model kind"))?;
    let mut dims = [0usize; 9];
    for (i, d) in dims.iter_mut().enumerate() {
        let off = 12 + 8 * i;
        *d = u64::from_le_bytes(bytes[off..off + 8].try_into().expect("8 bytes")) as usize;
    }
    let arch = Architecture {
        history: dims[1],
        horizon: dims[2],
        in_features: dims[3],
        out_features: dims[4],
        hidden: dims[5],
        layers: dims[6],
        embed_dim: dims[7],
        pool_dim: dims[8],
    };
    arch.validate().map_err(|e| bad(e.to_string()))?;
    let shapes = ModelParams::block_shapes(&arch, kind, dims[0]);
    let total: usize = shapes.iter().map(|s| s.iter().product::<usize>()).sum();
    let payload = &bytes[HEADER_BYTES..];
    if payload.len() != total * 8 {
        return Err(bad(format!(
            "payload has {} bytes, layout needs {}",
            payload.len(),
            total * 8
        )));
    }
    let mut values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let blocks = shapes
        .iter()
        .map(|s| Tensor::new(s, values.by_ref().take(s.iter().product()).collect()))
        .collect::<Result<Vec<_>>>()?;
    ModelParams::from_blocks(arch, kind, dims[0], blocks)
}

pub fn write_checkpoint(path: &Path, params: &ModelParams) -> Result<()> {
    std::fs::write(path, encode(params)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<ModelParams> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_count_matches_layout() {
        let arch = Architecture {
            history: 4,
            horizon: 2,
            hidden: 8,
            embed_dim: 3,
            pool_dim: 5,
            ..Architecture::default()
        };
        let p = ModelParams::init(arch, ModelKind::Adaptive, 6, 0).unwrap();
        // 6·3 + 6·5 + 5·4·8 + 5·8 + 5·8·2 + 5·2 values
        let values = 18 + 30 + 160 + 40 + 80 + 10;
        assert_eq!(payload_bytes(&p), 8 * values);
        let bytes = encode(&p);
        assert_eq!(bytes.len(), HEADER_BYTES + 8 * values as usize);
        assert_eq!(decode(&bytes).unwrap(), p);
    }

    #[test]
    fn rejects_truncated_payload() {
        let p = ModelParams::init(Architecture::default(), ModelKind::Shared, 2, 0).unwrap();
        let mut bytes = encode(&p);
        bytes.pop();
        assert!(decode(&bytes).is_err());
        assert!(decode(b"nope").is_err());
    }
}
