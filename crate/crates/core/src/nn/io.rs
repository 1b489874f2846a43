//! Weight container: magic "HNW1", a length-prefixed JSON manifest
//! (tensor name -> shape, dtype, byte offset, plus free-form metadata),
//! raw little-endian f64 data, and a trailing FNV-1a 64 checksum of the
//! data section.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;

const MAGIC: [u8; 4] = *b"HNW1";

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    tensors: Vec<ManifestEntry>,
    #[serde(default)]
    meta: serde_json::Value,
}

/// Serialize named tensors plus a metadata document.
pub fn write_container(
    path: &Path,
    tensors: &BTreeMap<String, Tensor>,
    meta: serde_json::Value,
) -> Result<()> {
    let mut entries = Vec::with_capacity(tensors.len());
    let mut data = Vec::new();
    for (name, t) in tensors {
        entries.push(ManifestEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            dtype: "f64".into(),
            offset: data.len() as u64,
        });
        for v in t.data() {
            data.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = serde_json::to_vec(&Manifest { tensors: entries, meta })?;

    let mut out = Vec::with_capacity(4 + 4 + manifest.len() + data.len() + 8);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
    out.extend_from_slice(&manifest);
    out.extend_from_slice(&data);
    out.extend_from_slice(&fnv1a64(&data).to_le_bytes());
    fs::write(path, out)?;
    Ok(())
}

/// Read a container back; verifies the checksum and every tensor's
/// bounds before materializing.
pub fn read_container(path: &Path) -> Result<(BTreeMap<String, Tensor>, serde_json::Value)> {
    let bytes = fs::read(path)?;
    if bytes.len() < 8 {
        return Err(Error::Truncated { offset: bytes.len() as u64, context: "header".into() });
    }
    let mut magic = [0u8; 4];
    magic.copy_from_slice(&bytes[0..4]);
    if magic != MAGIC {
        return Err(Error::BadMagic { offset: 0, expected: MAGIC, found: magic });
    }
    let mlen = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let data_start = 8 + mlen;
    if bytes.len() < data_start + 8 {
        return Err(Error::Truncated { offset: bytes.len() as u64, context: "manifest".into() });
    }
    let manifest: Manifest = serde_json::from_slice(&bytes[8..data_start])?;
    let data = &bytes[data_start..bytes.len() - 8];
    let stored = u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().unwrap());
    let computed = fnv1a64(data);
    if stored != computed {
        return Err(Error::ChecksumMismatch { stored, computed });
    }

    let mut tensors = BTreeMap::new();
    for e in &manifest.tensors {
        let count: usize = e.shape.iter().product();
        let start = e.offset as usize;
        let end = start + count * 8;
        if end > data.len() {
            return Err(Error::ShapeMismatch {
                name: e.name.clone(),
                expected: e.shape.clone(),
                found: vec![(data.len().saturating_sub(start)) / 8],
            });
        }
        if e.dtype != "f64" {
            return Err(Error::invalid(format!("tensor {}: unsupported dtype {}", e.name, e.dtype)));
        }
        let values: Vec<f64> = data[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.insert(e.name.clone(), Tensor::from_vec(&e.shape, values)?);
    }
    Ok((tensors, manifest.meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> BTreeMap<String, Tensor> {
        let mut m = BTreeMap::new();
        m.insert("a.weight".to_string(), Tensor::from_vec(&[2, 2], vec![1.0, -2.5, 0.0, 1e-30]).unwrap());
        m.insert("b.bias".to_string(), Tensor::from_vec(&[3], vec![0.1, 0.2, 0.3]).unwrap());
        m
    }

    #[test]
    fn roundtrip_and_resave_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("w1.hnw");
        let p2 = dir.path().join("w2.hnw");
        let meta = serde_json::json!({"layers": 4});
        write_container(&p1, &sample(), meta.clone()).unwrap();
        let (back, meta_back) = read_container(&p1).unwrap();
        assert_eq!(back, sample());
        assert_eq!(meta_back, meta);
        write_container(&p2, &back, meta_back).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
    }

    #[test]
    fn corrupted_data_byte_fails_checksum() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.hnw");
        write_container(&p, &sample(), serde_json::Value::Null).unwrap();
        let mut bytes = fs::read(&p).unwrap();
        let n = bytes.len();
        bytes[n - 12] ^= 0xff; // inside the data section
        fs::write(&p, bytes).unwrap();
        assert!(matches!(read_container(&p), Err(Error::ChecksumMismatch { .. })));
    }

    #[test]
    fn manifest_shape_overrun_detected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.hnw");
        write_container(&p, &sample(), serde_json::Value::Null).unwrap();
        let bytes = fs::read(&p).unwrap();
        // Grow a declared shape without growing the data.
        let mlen = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let manifest = String::from_utf8(bytes[8..8 + mlen].to_vec()).unwrap();
        let tampered = manifest.replace("\"shape\":[2,2]", "\"shape\":[2,200]");
        assert_ne!(manifest, tampered);
        let mut out = bytes[0..4].to_vec();
        out.extend_from_slice(&(tampered.len() as u32).to_le_bytes());
        out.extend_from_slice(tampered.as_bytes());
        out.extend_from_slice(&bytes[8 + mlen..]);
        fs::write(&p, out).unwrap();
        assert!(matches!(read_container(&p), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn wrong_magic_reported() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.hnw");
        fs::write(&p, b"NOPE....").unwrap();
        assert!(matches!(read_container(&p), Err(Error::BadMagic { .. })));
    }
}
