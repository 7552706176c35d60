//! Versioned checkpoint container shared by the autoencoder, generator,
//! and classifier models.
//!
//! Layout: `b"DGCK"` magic, u16 LE version, u32 LE header length, a JSON
//! header (kind, architecture fingerprint, arch/meta/log documents, tensor
//! table), then the raw little-endian f32 tensor payload. Loading verifies
//! magic, version, and fingerprint, and a save -> load -> save cycle is
//! byte-identical.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{ArrayD, ArrayViewMutD, IxDyn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autoencoder::{ArchConfig, Autoencoder};
use crate::error::{Error, Result};
use crate::gan::{GanKind, Generator};

const MAGIC: &[u8; 4] = b"DGCK";
const VERSION: u16 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Element offset into the payload.
    offset: usize,
    /// Element count.
    len: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    kind: String,
    fingerprint: String,
    arch: serde_json::Value,
    meta: serde_json::Value,
    log: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

/// An in-memory checkpoint.
#[derive(Debug, Clone)]
pub struct Container {
    pub kind: String,
    pub fingerprint: String,
    pub arch: serde_json::Value,
    pub meta: serde_json::Value,
    pub log: serde_json::Value,
    pub tensors: Vec<(String, ArrayD<f32>)>,
}

/// SHA-256 of the canonical JSON encoding of the architecture document.
pub fn fingerprint_of(arch: &serde_json::Value) -> String {
    let canonical = serde_json::to_string(arch).expect("arch serializes");
    let mut hasher = Sha256::new();
    hasher.update(canonical.as_bytes());
    format!("{:x}", hasher.finalize())
}

impl Container {
    pub fn new(
        kind: &str,
        arch: serde_json::Value,
        meta: serde_json::Value,
        log: serde_json::Value,
        tensors: Vec<(String, ArrayD<f32>)>,
    ) -> Self {
        let fingerprint = fingerprint_of(&arch);
        Self { kind: kind.to_string(), fingerprint, arch, meta, log, tensors }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut entries = Vec::with_capacity(self.tensors.len());
        let mut offset = 0usize;
        for (name, tensor) in &self.tensors {
            entries.push(TensorEntry {
                name: name.clone(),
                shape: tensor.shape().to_vec(),
                offset,
                len: tensor.len(),
            });
            offset += tensor.len();
        }
        let header = Header {
            kind: self.kind.clone(),
            fingerprint: self.fingerprint.clone(),
            arch: self.arch.clone(),
            meta: self.meta.clone(),
            log: self.log.clone(),
            tensors: entries,
        };
        let header_bytes = serde_json::to_vec(&header)
            .map_err(|e| Error::Checkpoint(format!("header serialization: {e}")))?;

        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let io = |e: std::io::Error| Error::io(path, e);
        w.write_all(MAGIC).map_err(io)?;
        w.write_all(&VERSION.to_le_bytes()).map_err(io)?;
        w.write_all(&(header_bytes.len() as u32).to_le_bytes()).map_err(io)?;
        w.write_all(&header_bytes).map_err(io)?;
        for (_, tensor) in &self.tensors {
            let std_order = tensor.as_standard_layout();
            for &v in std_order.iter() {
                w.write_all(&v.to_le_bytes()).map_err(io)?;
            }
        }
        w.flush().map_err(io)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
        if bytes.len() < 10 || &bytes[0..4] != MAGIC {
            return Err(Error::Checkpoint(format!("{} is not a checkpoint file", path.display())));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version} (expected {VERSION})"
            )));
        }
        let header_len = u32::from_le_bytes([bytes[6], bytes[7], bytes[8], bytes[9]]) as usize;
        let header_end = 10 + header_len;
        if bytes.len() < header_end {
            return Err(Error::Checkpoint("truncated checkpoint header".into()));
        }
        let header: Header = serde_json::from_slice(&bytes[10..header_end])
            .map_err(|e| Error::Checkpoint(format!("bad checkpoint header: {e}")))?;

        if fingerprint_of(&header.arch) != header.fingerprint {
            return Err(Error::Checkpoint(
                "architecture fingerprint does not match the stored architecture".into(),
            ));
        }

        let payload = &bytes[header_end..];
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for entry in &header.tensors {
            let start = entry.offset * 4;
            let end = start + entry.len * 4;
            if payload.len() < end {
                return Err(Error::Checkpoint(format!("truncated tensor {}", entry.name)));
            }
            let data: Vec<f32> = payload[start..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let shape = IxDyn(&entry.shape);
            let tensor = ArrayD::from_shape_vec(shape, data)
                .map_err(|e| Error::Checkpoint(format!("tensor {}: {e}", entry.name)))?;
            tensors.push((entry.name.clone(), tensor));
        }

        Ok(Self {
            kind: header.kind,
            fingerprint: header.fingerprint,
            arch: header.arch,
            meta: header.meta,
            log: header.log,
            tensors,
        })
    }
}

/// Copies container tensors into a model's named parameter views, checking
/// names and shapes both ways.
pub fn apply_tensors(
    tensors: &[(String, ArrayD<f32>)],
    mut views: Vec<(String, ArrayViewMutD<f32>)>,
) -> Result<()> {
    let map: HashMap<&str, &ArrayD<f32>> =
        tensors.iter().map(|(n, t)| (n.as_str(), t)).collect();
    if map.len() != views.len() {
        return Err(Error::Checkpoint(format!(
            "parameter count mismatch: checkpoint has {}, model has {}",
            map.len(),
            views.len()
        )));
    }
    for (name, view) in views.iter_mut() {
        let tensor = map.get(name.as_str()).ok_or_else(|| {
            Error::Checkpoint(format!("checkpoint is missing parameter {name}"))
        })?;
        if tensor.shape() != view.shape() {
            return Err(Error::Checkpoint(format!(
                "parameter {name}: checkpoint shape {:?} vs model shape {:?}",
                tensor.shape(),
                view.shape()
            )));
        }
        view.assign(tensor);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Autoencoder checkpoints
// ---------------------------------------------------------------------------

pub fn autoencoder_container(
    ae: &Autoencoder<f32>,
    meta: serde_json::Value,
    log: serde_json::Value,
) -> Container {
    let arch = serde_json::to_value(&ae.cfg).expect("arch serializes");
    Container::new("autoencoder", arch, meta, log, ae.param_tensors())
}

pub fn save_autoencoder(
    path: &Path,
    ae: &Autoencoder<f32>,
    meta: serde_json::Value,
    log: serde_json::Value,
) -> Result<()> {
    autoencoder_container(ae, meta, log).save(path)
}

pub fn load_autoencoder(path: &Path) -> Result<(Autoencoder<f32>, Container)> {
    let container = Container::load(path)?;
    if container.kind != "autoencoder" {
        return Err(Error::Checkpoint(format!(
            "expected an autoencoder checkpoint, found {:?}",
            container.kind
        )));
    }
    let cfg: ArchConfig = serde_json::from_value(container.arch.clone())
        .map_err(|e| Error::Checkpoint(format!("bad architecture document: {e}")))?;
    let mut ae = Autoencoder::<f32>::new(&cfg, 0)?;
    apply_tensors(&container.tensors, ae.named_param_views_mut())?;
    Ok((ae, container))
}

// ---------------------------------------------------------------------------
// Generator checkpoints
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
struct GeneratorArch {
    autoencoder: ArchConfig,
    noise_dim: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneratorMeta {
    pub variant: String,
    pub noise_dim: usize,
    pub steps_trained: u64,
    pub config_hash: Option<String>,
}

pub fn generator_container(
    gen: &Generator<f32>,
    config_hash: Option<String>,
    log: serde_json::Value,
) -> Container {
    let arch = serde_json::to_value(GeneratorArch {
        autoencoder: gen.decoder.cfg.clone(),
        noise_dim: gen.noise_dim,
    })
    .expect("arch serializes");
    let meta = serde_json::to_value(GeneratorMeta {
        variant: gen.kind.name().to_string(),
        noise_dim: gen.noise_dim,
        steps_trained: gen.steps_trained,
        config_hash,
    })
    .expect("meta serializes");

    let mut tensors = vec![
        ("gen.head.w".to_string(), gen.head.w.clone().into_dyn()),
        ("gen.head.b".to_string(), gen.head.b.clone().into_dyn()),
    ];
    tensors.extend(gen.decoder.param_tensors());
    Container::new("generator", arch, meta, log, tensors)
}

pub fn save_generator(
    path: &Path,
    gen: &Generator<f32>,
    config_hash: Option<String>,
    log: serde_json::Value,
) -> Result<()> {
    generator_container(gen, config_hash, log).save(path)
}

pub fn load_generator(path: &Path) -> Result<(Generator<f32>, GeneratorMeta, Container)> {
    let container = Container::load(path)?;
    if container.kind != "generator" {
        return Err(Error::Checkpoint(format!(
            "expected a generator checkpoint, found {:?}",
            container.kind
        )));
    }
    let arch: GeneratorArch = serde_json::from_value(container.arch.clone())
        .map_err(|e| Error::Checkpoint(format!("bad architecture document: {e}")))?;
    let meta: GeneratorMeta = serde_json::from_value(container.meta.clone())
        .map_err(|e| Error::Checkpoint(format!("bad generator metadata: {e}")))?;
    let kind: GanKind = meta.variant.parse()?;

    let ae = Autoencoder::<f32>::new(&arch.autoencoder, 0)?;
    let mut gen = Generator::new(ae.decoder, arch.noise_dim, kind, 0);
    gen.steps_trained = meta.steps_trained;

    let mut views = vec![
        ("gen.head.w".to_string(), gen.head.w.view_mut().into_dyn()),
        ("gen.head.b".to_string(), gen.head.b.view_mut().into_dyn()),
    ];
    views.extend(gen.decoder.named_param_views_mut());
    apply_tensors(&container.tensors, views)?;
    Ok((gen, meta, container))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_ae(seed: u64) -> Autoencoder<f32> {
        Autoencoder::<f32>::new(&ArchConfig::tiny(), seed).unwrap()
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let ae = tiny_ae(99);
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        save_autoencoder(&p1, &ae, serde_json::json!({"epochs": 3}), serde_json::json!([])).unwrap();

        let (loaded, container) = load_autoencoder(&p1).unwrap();
        Container {
            kind: container.kind.clone(),
            fingerprint: container.fingerprint.clone(),
            arch: container.arch.clone(),
            meta: container.meta.clone(),
            log: container.log.clone(),
            tensors: loaded.param_tensors(),
        }
        .save(&p2)
        .unwrap();

        let b1 = std::fs::read(&p1).unwrap();
        let b2 = std::fs::read(&p2).unwrap();
        assert_eq!(b1, b2);
    }

    #[test]
    fn roundtrip_preserves_parameters_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let ae = tiny_ae(7);
        let path = dir.path().join("ae.ckpt");
        save_autoencoder(&path, &ae, serde_json::json!({}), serde_json::json!(null)).unwrap();
        let (loaded, _) = load_autoencoder(&path).unwrap();
        for ((n1, t1), (n2, t2)) in ae.param_tensors().iter().zip(loaded.param_tensors()) {
            assert_eq!(n1, &n2);
            assert_eq!(t1, &t2, "tensor {n1} drifted through serialization");
        }
    }

    #[test]
    fn fingerprint_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let ae = tiny_ae(1);
        let path = dir.path().join("ae.ckpt");
        save_autoencoder(&path, &ae, serde_json::json!({}), serde_json::json!(null)).unwrap();

        // Corrupt one byte inside the fingerprint field.
        let mut bytes = std::fs::read(&path).unwrap();
        let needle = b"\"fingerprint\":\"";
        let pos = bytes
            .windows(needle.len())
            .position(|w| w == needle)
            .expect("fingerprint field present")
            + needle.len();
        bytes[pos] = if bytes[pos] == b'0' { b'1' } else { b'0' };
        std::fs::write(&path, &bytes).unwrap();

        assert!(matches!(load_autoencoder(&path), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn generator_roundtrip_keeps_variant_and_steps() {
        let dir = tempfile::tempdir().unwrap();
        let ae = tiny_ae(3);
        let mut gen = Generator::new(ae.decoder.clone(), 12, GanKind::Lsgan, 4);
        gen.steps_trained = 77;
        let path = dir.path().join("gen.ckpt");
        save_generator(&path, &gen, Some("deadbeef".into()), serde_json::json!([])).unwrap();

        let (loaded, meta, _) = load_generator(&path).unwrap();
        assert_eq!(meta.variant, "lsgan");
        assert_eq!(meta.steps_trained, 77);
        assert_eq!(meta.config_hash.as_deref(), Some("deadbeef"));
        assert_eq!(loaded.noise_dim, 12);
        assert_eq!(loaded.head.w, gen.head.w);
        for ((_, a), (_, b)) in
            loaded.decoder.param_tensors().iter().zip(gen.decoder.param_tensors())
        {
            assert_eq!(a, &b);
        }
    }

    #[test]
    fn wrong_kind_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let ae = tiny_ae(3);
        let path = dir.path().join("x.ckpt");
        save_autoencoder(&path, &ae, serde_json::json!({}), serde_json::json!(null)).unwrap();
        assert!(matches!(load_generator(&path), Err(Error::Checkpoint(_))));
    }
}
