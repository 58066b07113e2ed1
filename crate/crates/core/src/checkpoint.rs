//! Single-file network checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! bytes 0..8    magic "EENETCKP"
//! bytes 8..12   format version (u32)
//! bytes 12..20  manifest length in bytes (u64)
//! ...           manifest: JSON { format_version, dtype, tensors: [{name, shape, role}] }
//! ...           raw tensor data, little-endian scalars, in manifest order
//! ```
//!
//! The manifest lists learnable parameters first, then persistent state
//! (batch-norm running statistics), both in the network's canonical
//! naming order. Loading demands an exact match of dtype, names and
//! shapes against the receiving network, so an architecture mismatch is
//! caught before any data moves. A save/load/save round trip reproduces
//! the file byte for byte.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::EarlyExitNet;
use crate::Scalar;

const MAGIC: &[u8; 8] = b"EENETCKP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// `"param"` for learnable tensors, `"state"` for running statistics.
    pub role: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub dtype: String,
    pub tensors: Vec<TensorEntry>,
}

fn manifest_of<S: Scalar>(net: &EarlyExitNet<S>) -> Manifest {
    let mut tensors = Vec::new();
    for p in net.params() {
        tensors.push(TensorEntry {
            name: p.name,
            shape: p.value.shape().to_vec(),
            role: "param".into(),
        });
    }
    for (name, value) in net.state() {
        tensors.push(TensorEntry { name, shape: value.shape().to_vec(), role: "state".into() });
    }
    Manifest { format_version: FORMAT_VERSION, dtype: S::DTYPE.into(), tensors }
}

/// Write the network's parameters and running statistics to `path`.
pub fn save<S: Scalar>(net: &EarlyExitNet<S>, path: &Path) -> Result<()> {
    let manifest = manifest_of(net);
    let manifest_bytes = serde_json::to_vec(&manifest)
        .map_err(|e| Error::checkpoint(path, format!("manifest encoding failed: {e}")))?;

    let numel: usize = manifest.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
    let mut out = Vec::with_capacity(20 + manifest_bytes.len() + numel * S::BYTE_WIDTH);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(manifest_bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&manifest_bytes);
    for p in net.params() {
        for v in p.value.data() {
            v.write_le(&mut out);
        }
    }
    for (_, value) in net.state() {
        for v in value.data() {
            v.write_le(&mut out);
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Fill `net`'s parameters and running statistics from `path`. The file
/// must have been saved from an identically-shaped network with the same
/// scalar type.
pub fn load<S: Scalar>(net: &mut EarlyExitNet<S>, path: &Path) -> Result<()> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(Error::checkpoint(path, "not a checkpoint file (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::checkpoint(
            path,
            format!("format version {version}, this build reads {FORMAT_VERSION}"),
        ));
    }
    let manifest_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let data_start = 20 + manifest_len;
    if bytes.len() < data_start {
        return Err(Error::checkpoint(path, "truncated manifest"));
    }
    let manifest: Manifest = serde_json::from_slice(&bytes[20..data_start])
        .map_err(|e| Error::checkpoint(path, format!("bad manifest: {e}")))?;
    if manifest.dtype != S::DTYPE {
        return Err(Error::checkpoint(
            path,
            format!("dtype {} in file, network uses {}", manifest.dtype, S::DTYPE),
        ));
    }

    let expected = manifest_of(net);
    if manifest.tensors.len() != expected.tensors.len() {
        return Err(Error::checkpoint(
            path,
            format!(
                "{} tensors in file, network has {}",
                manifest.tensors.len(),
                expected.tensors.len()
            ),
        ));
    }
    for (got, want) in manifest.tensors.iter().zip(&expected.tensors) {
        if got.name != want.name || got.shape != want.shape || got.role != want.role {
            return Err(Error::checkpoint(
                path,
                format!(
                    "tensor mismatch: file has {} {:?} ({}), network expects {} {:?} ({})",
                    got.name, got.shape, got.role, want.name, want.shape, want.role
                ),
            ));
        }
    }

    let numel: usize = expected.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
    if bytes.len() != data_start + numel * S::BYTE_WIDTH {
        return Err(Error::checkpoint(
            path,
            format!(
                "data block is {} bytes, expected {}",
                bytes.len() - data_start,
                numel * S::BYTE_WIDTH
            ),
        ));
    }

    let mut cursor = data_start;
    for p in net.params_mut() {
        for v in p.value.data_mut() {
            *v = S::read_le(&bytes[cursor..cursor + S::BYTE_WIDTH]);
            cursor += S::BYTE_WIDTH;
        }
    }
    for (_, value) in net.state_mut() {
        for v in value.data_mut() {
            *v = S::read_le(&bytes[cursor..cursor + S::BYTE_WIDTH]);
            cursor += S::BYTE_WIDTH;
        }
    }
    Ok(())
}
