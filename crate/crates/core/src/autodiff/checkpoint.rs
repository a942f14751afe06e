//! Parameter persistence: a JSON manifest plus one little-endian `f64` blob
//! per parameter.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
const DTYPE: &str = "float64-le";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub dtype: String,
    pub params: Vec<ManifestEntry>,
}

pub fn encode_f64s(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn decode_f64s(bytes: &[u8]) -> Result<Vec<f64>> {
    if !bytes.len().is_multiple_of(8) {
        return Err(Error::Data(format!("blob length {} is not a multiple of 8", bytes.len())));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

/// Writes parameter values (not optimizer state) under `dir`.
pub fn save_params(store: &ParamStore, dir: &Path) -> Result<()> {
    let blobs = dir.join("params");
    fs::create_dir_all(&blobs).map_err(|e| Error::io(&blobs, e))?;
    let mut entries = Vec::with_capacity(store.len());
    for (id, p) in store.iter() {
        let file = format!("params/{:04}.bin", id.index());
        let path = dir.join(&file);
        fs::write(&path, encode_f64s(p.value.data())).map_err(|e| Error::io(&path, e))?;
        entries.push(ManifestEntry {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            file,
        });
    }
    let manifest = Manifest {
        version: FORMAT_VERSION,
        dtype: DTYPE.to_string(),
        params: entries,
    };
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(())
}

pub fn load_params(dir: &Path) -> Result<ParamStore> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.version != FORMAT_VERSION || manifest.dtype != DTYPE {
        return Err(Error::Data(format!(
            "unsupported checkpoint version {} / dtype {}",
            manifest.version, manifest.dtype
        )));
    }
    let mut store = ParamStore::new();
    for entry in manifest.params {
        let path = dir.join(&entry.file);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let tensor = Tensor::new(entry.shape, decode_f64s(&bytes)?)?;
        store.insert(entry.name, tensor)?;
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = ParamStore::new();
        store
            .insert("w", Tensor::matrix(2, 2, vec![0.1, -0.0, f64::MIN_POSITIVE, 1e300]).unwrap())
            .unwrap();
        store.insert("b", Tensor::vector(vec![std::f64::consts::PI])).unwrap();
        save_params(&store, dir.path()).unwrap();
        let loaded = load_params(dir.path()).unwrap();
        assert_eq!(loaded.len(), 2);
        for (id, p) in store.iter() {
            let q = loaded.param(id);
            assert_eq!(p.name, q.name);
            assert_eq!(p.value.shape(), q.value.shape());
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&p.value), bits(&q.value));
        }
    }

    proptest! {
        #[test]
        fn blob_encoding_round_trips(values in proptest::collection::vec(any::<f64>(), 0..64)) {
            let back = decode_f64s(&encode_f64s(&values)).unwrap();
            prop_assert_eq!(
                back.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                values.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
        }
    }
}
