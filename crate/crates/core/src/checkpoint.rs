//! Versioned checkpoint container: an 8-byte magic, a little-endian u32
//! manifest length, a JSON manifest (tensor names, shapes, f32 dtype, byte
//! offsets, endianness, plus activation kind / FTA config / config hash),
//! then the raw little-endian f32 payload.
//!
//! Stage-1 training saves the representation tensors (θ_R) in one file and
//! the value head (θ_V) in a sibling file with the same layout.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Activation, ValueHeadKind};
use crate::num::Real;
use crate::tensor::Parameterized;

const MAGIC: &[u8; 8] = b"RSCKPT01";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the payload section.
    pub offset: u64,
    /// Element count.
    pub len: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    /// "representation" or "value_head".
    pub kind: String,
    pub dtype: String,
    pub endianness: String,
    pub obs_h: usize,
    pub obs_w: usize,
    pub activation: Activation,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub value_head: Option<ValueHeadKind>,
    pub config_hash: String,
    pub saved_at_step: u64,
    /// False when the early-saving criterion was never met and the final-step
    /// parameters were kept instead.
    pub converged: bool,
    pub tensors: Vec<TensorEntry>,
}

/// Everything but the tensor table, supplied by the caller at save time.
#[derive(Debug, Clone)]
pub struct Meta {
    pub kind: String,
    pub obs_h: usize,
    pub obs_w: usize,
    pub activation: Activation,
    pub value_head: Option<ValueHeadKind>,
    pub config_hash: String,
    pub saved_at_step: u64,
    pub converged: bool,
}

/// Writes every parameter the module exposes, in visitation order.
pub fn save(path: &Path, meta: &Meta, module: &mut dyn Parameterized<Real>) -> Result<()> {
    let mut entries = Vec::new();
    let mut payload: Vec<u8> = Vec::new();
    module.visit_params(&mut |name, p| {
        entries.push(TensorEntry {
            name: name.to_string(),
            shape: p.value.shape().to_vec(),
            offset: payload.len() as u64,
            len: p.value.len() as u64,
        });
        for &v in p.value.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    });
    let manifest = Manifest {
        version: 1,
        kind: meta.kind.clone(),
        dtype: "f32".to_string(),
        endianness: "little".to_string(),
        obs_h: meta.obs_h,
        obs_w: meta.obs_w,
        activation: meta.activation,
        value_head: meta.value_head,
        config_hash: meta.config_hash.clone(),
        saved_at_step: meta.saved_at_step,
        converged: meta.converged,
        tensors: entries,
    };
    let manifest_bytes = serde_json::to_vec(&manifest)
        .map_err(|e| Error::format(format!("manifest encode: {e}")))?;
    let mut out = Vec::with_capacity(12 + manifest_bytes.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(manifest_bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(&manifest_bytes);
    out.extend_from_slice(&payload);
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("ckpt.tmp");
    std::fs::write(&tmp, &out)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Reads the manifest and raw tensors.
pub fn load(path: &Path) -> Result<(Manifest, Vec<Vec<Real>>)> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::config(format!("cannot read checkpoint {}: {e}", path.display())))?;
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(Error::format(format!(
            "{}: not a checkpoint file (bad magic)",
            path.display()
        )));
    }
    let mlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if bytes.len() < 12 + mlen {
        return Err(Error::format("checkpoint truncated in manifest"));
    }
    let manifest: Manifest = serde_json::from_slice(&bytes[12..12 + mlen])
        .map_err(|e| Error::format(format!("manifest decode: {e}")))?;
    if manifest.dtype != "f32" || manifest.endianness != "little" {
        return Err(Error::format(format!(
            "unsupported checkpoint encoding {}/{}",
            manifest.dtype, manifest.endianness
        )));
    }
    let payload = &bytes[12 + mlen..];
    let mut tensors = Vec::with_capacity(manifest.tensors.len());
    for entry in &manifest.tensors {
        let start = entry.offset as usize;
        let nbytes = entry.len as usize * 4;
        if start + nbytes > payload.len() {
            return Err(Error::format(format!(
                "checkpoint truncated in tensor {}",
                entry.name
            )));
        }
        let expect: usize = entry.shape.iter().product();
        if expect != entry.len as usize {
            return Err(Error::format(format!(
                "tensor {} shape/len mismatch in manifest",
                entry.name
            )));
        }
        let data: Vec<Real> = payload[start..start + nbytes]
            .chunks_exact(4)
            .map(|b| Real::from_le_bytes(b.try_into().unwrap()))
            .collect();
        tensors.push(data);
    }
    Ok((manifest, tensors))
}

/// Copies loaded tensors into a module, requiring an exact name/shape match
/// in visitation order.
pub fn apply(
    manifest: &Manifest,
    tensors: &[Vec<Real>],
    module: &mut dyn Parameterized<Real>,
) -> Result<()> {
    let mut idx = 0;
    let mut err: Option<Error> = None;
    module.visit_params(&mut |name, p| {
        if err.is_some() {
            return;
        }
        let Some(entry) = manifest.tensors.get(idx) else {
            err = Some(Error::config(format!(
                "checkpoint has {} tensors but module expects more (at {name})",
                manifest.tensors.len()
            )));
            return;
        };
        if entry.name != name || entry.shape != p.value.shape() {
            err = Some(Error::config(format!(
                "architecture mismatch: checkpoint tensor {}{:?} vs module {}{:?}",
                entry.name,
                entry.shape,
                name,
                p.value.shape()
            )));
            return;
        }
        p.value.data_mut().copy_from_slice(&tensors[idx]);
        idx += 1;
    });
    if let Some(e) = err {
        return Err(e);
    }
    if idx != manifest.tensors.len() {
        return Err(Error::config(format!(
            "checkpoint has {} tensors but module consumed {idx}",
            manifest.tensors.len()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Trunk;
    use crate::rng::Seed;

    fn meta(activation: Activation) -> Meta {
        Meta {
            kind: "representation".into(),
            obs_h: 15,
            obs_w: 15,
            activation,
            value_head: None,
            config_hash: "deadbeef".into(),
            saved_at_step: 1234,
            converged: true,
        }
    }

    #[test]
    fn save_load_roundtrip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rep.ckpt");
        let mut rng = Seed(5).stream();
        let mut trunk = Trunk::<f32>::new(15, 15, Activation::Relu32, &mut rng);
        save(&path, &meta(Activation::Relu32), &mut trunk).unwrap();

        let (manifest, tensors) = load(&path).unwrap();
        assert_eq!(manifest.kind, "representation");
        assert_eq!(manifest.config_hash, "deadbeef");
        assert_eq!(manifest.tensors.len(), 6);
        assert_eq!(manifest.tensors[0].name, "trunk.conv1.w");

        let mut rng2 = Seed(99).stream();
        let mut other = Trunk::<f32>::new(15, 15, Activation::Relu32, &mut rng2);
        apply(&manifest, &tensors, &mut other).unwrap();
        let mut orig_vals = Vec::new();
        trunk.visit_params(&mut |_, p| orig_vals.push(p.value.data().to_vec()));
        let mut new_vals = Vec::new();
        other.visit_params(&mut |_, p| new_vals.push(p.value.data().to_vec()));
        assert_eq!(orig_vals, new_vals);
    }

    #[test]
    fn apply_rejects_architecture_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rep.ckpt");
        let mut rng = Seed(5).stream();
        let mut trunk = Trunk::<f32>::new(15, 15, Activation::Relu32, &mut rng);
        save(&path, &meta(Activation::Relu32), &mut trunk).unwrap();
        let (manifest, tensors) = load(&path).unwrap();
        let mut wide = Trunk::<f32>::new(15, 15, Activation::Relu640, &mut rng);
        let err = apply(&manifest, &tensors, &mut wide).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn load_rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, b"not a checkpoint").unwrap();
        assert!(load(&path).is_err());
    }
}
