//! Self-describing checkpoint container.
//!
//! Layout: the 8-byte magic `TLFCKPT\0`, a little-endian `u32` format
//! version, a little-endian `u64` header length, a JSON header describing
//! the architecture, config, optional vocabulary and tensor table, then the
//! tensor payload as little-endian `f64`.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AnyModel, Architecture, ModelConfig};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"TLFCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Offset into the payload in elements.
    offset: usize,
    len: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    version: u32,
    arch: Architecture,
    config: ModelConfig,
    vocab: Option<Vec<char>>,
    tensors: Vec<TensorEntry>,
}

/// A loaded checkpoint: the model and the vocabulary it was trained with.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: AnyModel<f64>,
    pub vocab: Option<Vec<char>>,
}

pub fn encode(model: &AnyModel<f64>, vocab: Option<&[char]>) -> Result<Vec<u8>> {
    let mut tensors = Vec::new();
    let mut payload = Vec::new();
    let mut offset = 0;
    for (_, name, t) in model.params().iter() {
        tensors.push(TensorEntry { name: name.to_string(), shape: t.shape().to_vec(), offset, len: t.len() });
        offset += t.len();
        for v in t.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let header = Header {
        version: FORMAT_VERSION,
        arch: model.arch(),
        config: model.config().clone(),
        vocab: vocab.map(<[char]>::to_vec),
        tensors,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(20 + json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version} (this build reads version {FORMAT_VERSION})"
        )));
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body = &bytes[20..];
    if body.len() < header_len {
        return Err(bad("truncated header"));
    }
    let header: Header =
        serde_json::from_slice(&body[..header_len]).map_err(|e| Error::Checkpoint(format!("corrupt header: {e}")))?;
    let payload = &body[header_len..];
    let mut entries = Vec::with_capacity(header.tensors.len());
    for e in &header.tensors {
        let (start, end) = (e.offset * 8, (e.offset + e.len) * 8);
        if end > payload.len() {
            return Err(Error::Checkpoint(format!("tensor {} runs past the payload", e.name)));
        }
        let data = payload[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::new(e.shape.clone(), data).map_err(|err| Error::Checkpoint(format!("{}: {err}", e.name)))?;
        entries.push((e.name.clone(), t));
    }
    let mut model = AnyModel::<f64>::new(header.arch, header.config, 0)?;
    model.params_mut().load_named(&entries)?;
    Ok(Checkpoint { model, vocab: header.vocab })
}

/// Writes a checkpoint atomically: a temporary file in the target directory
/// is renamed over `path` once fully written.
pub fn save(path: &Path, model: &AnyModel<f64>, vocab: Option<&[char]>) -> Result<()> {
    write_atomic(path, &encode(model, vocab)?)
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode(&bytes)
}

/// Temp-file-and-rename write used for every file output.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            vocab_size: 5,
            d_model: 4,
            n_head: 2,
            depth_h: 1,
            n_blocks: 1,
            woh: 2,
            wog: 2,
            ffn_mult: 2,
            max_seq: 32,
            restore_last_block: true,
            init_std: 0.5,
        }
    }

    #[test]
    fn round_trip_preserves_every_tensor() {
        for arch in [Architecture::Tlinformer, Architecture::Baseline] {
            let m = AnyModel::<f64>::new(arch, tiny(), 7).unwrap();
            let vocab = ['a', 'b', 'c', 'd', 'e'];
            let back = decode(&encode(&m, Some(&vocab)).unwrap()).unwrap();
            assert_eq!(back.vocab.as_deref(), Some(&vocab[..]));
            assert_eq!(back.model.arch(), arch);
            for ((_, n1, t1), (_, n2, t2)) in m.params().iter().zip(back.model.params().iter()) {
                assert_eq!(n1, n2);
                assert_eq!(t1, t2);
            }
        }
    }

    #[test]
    fn wrong_version_is_reported() {
        let m = AnyModel::<f64>::new(Architecture::Baseline, tiny(), 1).unwrap();
        let mut bytes = encode(&m, None).unwrap();
        bytes[8..12].copy_from_slice(&9u32.to_le_bytes());
        let err = decode(&bytes).unwrap_err().to_string();
        assert!(err.contains("version 9"), "{err}");
    }

    #[test]
    fn garbage_is_rejected() {
        assert!(matches!(decode(b"hello world, not a model"), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn atomic_save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let m = AnyModel::<f64>::new(Architecture::Tlinformer, tiny(), 3).unwrap();
        save(&path, &m, None).unwrap();
        let back = load(&path).unwrap();
        assert_eq!(back.model.params().total_elements(), m.params().total_elements());
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
