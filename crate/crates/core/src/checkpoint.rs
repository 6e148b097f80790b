//! Versioned checkpoint container.
//!
//! A checkpoint is a safetensors file of flat parameter arrays whose header
//! metadata carries a single `mulsmo` entry: a JSON document holding the
//! format tag (for example `{"vae-ckpt": 1, "config": {...}}`).

use std::collections::HashMap;
use std::path::Path;

use candle_core::{Device, Tensor};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};

use crate::nn::ParamStore;
use crate::{Error, Result};

pub const VAE: &str = "vae-ckpt";
pub const DENOISER: &str = "denoiser-ckpt";
pub const STYLENET: &str = "stylenet-ckpt";
pub const STYLE_CLASSIFIER: &str = "styleclf-ckpt";
pub const ADAPTOR: &str = "adaptor-ckpt";
pub const RETRIEVAL: &str = "retrieval-ckpt";

const META_KEY: &str = "mulsmo";
pub const FORMAT_VERSION: u64 = 1;

pub fn save<C: Serialize>(path: &Path, tag: &str, config: &C, params: &ParamStore) -> Result<()> {
    let header = json!({ tag: FORMAT_VERSION, "config": config });
    let meta = HashMap::from([(META_KEY.to_string(), serde_json::to_string(&header)?)]);
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tensors = params.tensors();
    safetensors::serialize_to_file(tensors.iter(), Some(meta), path).map_err(|e| {
        Error::Checkpoint {
            path: path.to_path_buf(),
            reason: e.to_string(),
        }
    })
}

pub struct Loaded<C> {
    pub config: C,
    pub tensors: HashMap<String, Tensor>,
}

pub fn load<C: DeserializeOwned>(path: &Path, tag: &str) -> Result<Loaded<C>> {
    let fail = |reason: String| Error::Checkpoint {
        path: path.to_path_buf(),
        reason,
    };
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (_, meta) =
        safetensors::SafeTensors::read_metadata(&bytes).map_err(|e| fail(e.to_string()))?;
    let raw = meta
        .metadata()
        .as_ref()
        .and_then(|m| m.get(META_KEY))
        .ok_or_else(|| fail("no mulsmo header".into()))?;
    let header: Value = serde_json::from_str(raw)?;
    match header.get(tag).and_then(Value::as_u64) {
        Some(FORMAT_VERSION) => {}
        Some(v) => return Err(fail(format!("unsupported {tag} version {v}"))),
        None => return Err(fail(format!("not a {tag} checkpoint"))),
    }
    let config = serde_json::from_value(header.get("config").cloned().unwrap_or(Value::Null))?;
    let tensors = candle_core::safetensors::load_buffer(&bytes, &Device::Cpu)?;
    Ok(Loaded { config, tensors })
}

/// SHA-256 of a file's bytes.
pub fn file_hash(path: &Path) -> Result<String> {
    use sha2::{Digest, Sha256};
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{linear, Params};

    #[derive(Serialize, serde::Deserialize, PartialEq, Debug)]
    struct Cfg {
        width: usize,
    }

    #[test]
    fn round_trip_and_tag_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.safetensors");
        let p = Params::fresh(9);
        linear(3, 4, &p.pp("l")).unwrap();
        save(&path, VAE, &Cfg { width: 3 }, &p.store()).unwrap();
        let loaded: Loaded<Cfg> = load(&path, VAE).unwrap();
        assert_eq!(loaded.config, Cfg { width: 3 });
        let q = Params::from_tensors(loaded.tensors, false);
        linear(3, 4, &q.pp("l")).unwrap();
        assert_eq!(p.store().hash().unwrap(), q.store().hash().unwrap());
        assert!(load::<Cfg>(&path, DENOISER).is_err());

        let again = dir.path().join("m2.safetensors");
        save(&again, VAE, &Cfg { width: 3 }, &p.store()).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
    }
}
