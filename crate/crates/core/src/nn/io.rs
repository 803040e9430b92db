//! Weight file format.
//!
//! Layout: magic bytes `CDW1`, a little-endian u32 byte length, that many
//! bytes of UTF-8 JSON (the [`NetworkSpec`] plus an ordered shape table),
//! then every parameter tensor as raw little-endian f32 in header order.
//! Round trips are bit-exact.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{NetworkSpec, NetworkWeights};

const MAGIC: &[u8; 4] = b"CDW1";

#[derive(Serialize, Deserialize)]
struct Header {
    spec: NetworkSpec,
    shapes: Vec<Vec<usize>>,
}

pub fn save_weights(spec: &NetworkSpec, weights: &NetworkWeights<f32>, path: &Path) -> Result<()> {
    weights.matches(spec)?;
    let header = Header { spec: spec.clone(), shapes: spec.param_shapes()? };
    let header_json = serde_json::to_vec(&header)
        .map_err(|source| Error::Json { context: "encoding weights header".into(), source })?;
    let header_len = u32::try_from(header_json.len())
        .map_err(|_| Error::Spec("weights header exceeds u32 length".into()))?;

    let mut buf = Vec::with_capacity(8 + header_json.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&header_len.to_le_bytes());
    buf.extend_from_slice(&header_json);
    for tensor in &weights.tensors {
        for &v in tensor.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }

    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn load_weights(path: &Path) -> Result<(NetworkSpec, NetworkWeights<f32>)> {
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingInput { path: path.to_path_buf() },
        _ => Error::io(path, e),
    })?;
    let len = bytes.len() as u64;

    let need = |start: u64, end: u64| -> Result<()> {
        if end > len {
            Err(Error::Truncated { start, end, len })
        } else {
            Ok(())
        }
    };

    need(0, 8)?;
    if &bytes[0..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    let header_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as u64;
    need(8, 8 + header_len)?;
    let header: Header = serde_json::from_slice(&bytes[8..(8 + header_len) as usize])
        .map_err(|source| Error::Json { context: format!("weights header in {}", path.display()), source })?;

    let expected = header.spec.param_shapes()?;
    if header.shapes != expected {
        return Err(Error::Corrupt {
            offset: 8,
            message: format!("shape table {:?} does not match the spec's parameters {:?}", header.shapes, expected),
        });
    }

    let mut offset = 8 + header_len;
    let mut tensors = Vec::with_capacity(expected.len());
    for shape in expected {
        let count: usize = shape.iter().product();
        let end = offset + 4 * count as u64;
        need(offset, end)?;
        let data: Vec<f32> = bytes[offset as usize..end as usize]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push(Tensor::new(shape, data)?);
        offset = end;
    }
    if offset != len {
        return Err(Error::Corrupt {
            offset,
            message: format!("{} trailing bytes after the last tensor", len - offset),
        });
    }
    Ok((header.spec, NetworkWeights { tensors }))
}

#[cfg(test)]
mod tests {
    use super::super::{init_weights, LayerSpec};
    use super::*;

    fn sample() -> (NetworkSpec, NetworkWeights<f32>) {
        let spec = NetworkSpec {
            input_shape: (2, 5, 5),
            layers: vec![
                LayerSpec::Conv { out_channels: 3, kernel: 3, stride: 1, padding: 1 },
                LayerSpec::Relu,
                LayerSpec::Flatten,
                LayerSpec::Fc { out_features: 4 },
            ],
            output_dim: 4,
        };
        let weights = init_weights(&spec, 7, 1.0).unwrap();
        (spec, weights)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (spec, weights) = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.cdw");
        save_weights(&spec, &weights, &path).unwrap();
        let (spec2, weights2) = load_weights(&path).unwrap();
        assert_eq!(spec, spec2);
        assert_eq!(weights.tensors.len(), weights2.tensors.len());
        for (a, b) in weights.tensors.iter().zip(&weights2.tensors) {
            assert_eq!(a.shape(), b.shape());
            let ab: Vec<u32> = a.data().iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u32> = b.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(ab, bb);
        }
    }

    #[test]
    fn truncated_file_names_the_missing_range() {
        let (spec, weights) = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.cdw");
        save_weights(&spec, &weights, &path).unwrap();
        let full = std::fs::read(&path).unwrap();
        std::fs::write(&path, &full[..full.len() - 5]).unwrap();
        match load_weights(&path) {
            Err(Error::Truncated { start, end, len }) => {
                assert_eq!(len, full.len() as u64 - 5);
                assert!(end > len, "reported range {start}..{end} must overrun {len}");
            }
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.cdw");
        std::fs::write(&path, b"NOPE\0\0\0\0rest").unwrap();
        assert!(matches!(load_weights(&path), Err(Error::BadMagic)));
    }

    #[test]
    fn missing_file_is_reported_as_missing_input() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("absent.cdw");
        assert!(matches!(load_weights(&path), Err(Error::MissingInput { .. })));
    }
}
