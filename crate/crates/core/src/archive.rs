//! Named-tensor archives in the safetensors container format.
//!
//! Only little-endian `f32` tensors are written or accepted.

use std::collections::BTreeMap;
use std::path::Path;

use safetensors::tensor::{Dtype, SafeTensors};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub type TensorMap = BTreeMap<String, Tensor>;
pub type Metadata = BTreeMap<String, String>;

/// Serializes in the safetensors layout with a key-sorted JSON header and
/// tensor data in name order, so equal inputs always give equal bytes.
pub fn encode(tensors: &TensorMap, metadata: &Metadata) -> Result<Vec<u8>> {
    let mut header = serde_json::Map::new();
    if !metadata.is_empty() {
        header.insert("__metadata__".into(), serde_json::to_value(metadata)?);
    }
    let mut offset = 0usize;
    for (name, t) in tensors {
        if name == "__metadata__" {
            return Err(Error::Archive("`__metadata__` is a reserved tensor name".into()));
        }
        let end = offset + t.len() * 4;
        header.insert(
            name.clone(),
            serde_json::json!({ "dtype": "F32", "shape": t.shape(), "data_offsets": [offset, end] }),
        );
        offset = end;
    }
    let mut head = serde_json::to_vec(&serde_json::Value::Object(header))?;
    while head.len() % 8 != 0 {
        head.push(b' ');
    }
    let mut out = Vec::with_capacity(8 + head.len() + offset);
    out.extend_from_slice(&(head.len() as u64).to_le_bytes());
    out.extend_from_slice(&head);
    for t in tensors.values() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<(TensorMap, Metadata)> {
    let st = SafeTensors::deserialize(bytes)?;
    let mut out = TensorMap::new();
    for (name, view) in st.tensors() {
        if view.dtype() != Dtype::F32 {
            return Err(Error::Archive(format!(
                "tensor `{name}` has dtype {:?}; only F32 is supported",
                view.dtype()
            )));
        }
        let data: Vec<f32> = view
            .data()
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        out.insert(name, Tensor::new(view.shape().to_vec(), data)?);
    }
    let (_, header) = SafeTensors::read_metadata(bytes)?;
    let metadata = header
        .metadata()
        .as_ref()
        .map(|m| m.iter().map(|(k, v)| (k.clone(), v.clone())).collect())
        .unwrap_or_default();
    Ok((out, metadata))
}

pub fn write(path: &Path, tensors: &TensorMap, metadata: &Metadata) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(path, encode(tensors, metadata)?)?;
    Ok(())
}

pub fn read(path: &Path) -> Result<(TensorMap, Metadata)> {
    let bytes = std::fs::read(path)?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut m = TensorMap::new();
        m.insert("b".into(), Tensor::new(vec![2], vec![1.5, -0.0]).unwrap());
        m.insert("a".into(), Tensor::new(vec![1, 3], vec![f32::MIN_POSITIVE, 3.0, 7.25]).unwrap());
        let mut meta = Metadata::new();
        meta.insert("kind".into(), "test".into());
        let bytes = encode(&m, &meta).unwrap();
        let (back, meta_back) = decode(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(meta_back, meta);
        assert_eq!(encode(&back, &meta_back).unwrap(), bytes);
    }

    #[test]
    fn encoding_ignores_insertion_history() {
        let mut meta = Metadata::new();
        for i in 0..16 {
            meta.insert(format!("k{i}"), format!("v{i}"));
        }
        let mut m = TensorMap::new();
        m.insert("w".into(), Tensor::zeros(vec![3]));
        let first = encode(&m, &meta).unwrap();
        for _ in 0..8 {
            assert_eq!(encode(&m, &meta).unwrap(), first);
        }
        let header_len = u64::from_le_bytes(first[..8].try_into().unwrap()) as usize;
        assert_eq!(header_len % 8, 0);
        assert_eq!(first.len(), 8 + header_len + 12);
    }

    #[test]
    fn rejects_other_dtypes() {
        use safetensors::tensor::TensorView;
        let data = [0u8; 16];
        let view = TensorView::new(Dtype::F64, vec![2], &data).unwrap();
        let bytes = safetensors::serialize([("x", view)], &None).unwrap();
        assert!(matches!(decode(&bytes), Err(Error::Archive(_))));
    }
}
