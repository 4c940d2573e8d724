//! Bit-exact checkpoint files.
//!
//! Layout:
//!
//! ```text
//! "AAP1" | header length (u64 LE) | header (UTF-8 JSON) | payload
//! ```
//!
//! The header lists every tensor (name, shape, byte offset and length into
//! the payload) and every mask (layer, bit count, offset, length), plus an
//! arbitrary JSON metadata object. Tensors are raw little-endian floats of
//! the recorded dtype; masks are LSB-first packed bits. Entries are laid out
//! back to back in header order, so a given state has exactly one encoding.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::{Architecture, FilterMask, ModelGraph};
use crate::nn::SgdState;
use crate::tensor::{Dtype, Scalar};

pub const MAGIC: &[u8; 4] = b"AAP1";
pub const FORMAT_VERSION: u32 = 1;
const MAX_HEADER: u64 = 64 << 20;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub len: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskEntry {
    pub layer: usize,
    pub bits: usize,
    pub offset: u64,
    pub len: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub version: u32,
    pub fingerprint: String,
    pub architecture: Architecture,
    pub dtype: Dtype,
    pub epoch: usize,
    pub round: usize,
    pub tensors: Vec<TensorEntry>,
    pub masks: Vec<MaskEntry>,
    pub meta: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    /// Raw little-endian element bytes.
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub fingerprint: String,
    pub architecture: Architecture,
    pub dtype: Dtype,
    pub epoch: usize,
    pub round: usize,
    pub tensors: Vec<NamedTensor>,
    pub masks: Vec<(usize, FilterMask)>,
    pub meta: serde_json::Value,
}

fn encode_slice<S: Scalar>(values: &[S]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * S::DTYPE.size());
    for &v in values {
        v.write_le(&mut out);
    }
    out
}

fn decode_slice<S: Scalar>(bytes: &[u8]) -> Vec<S> {
    bytes.chunks_exact(S::DTYPE.size()).map(S::read_le).collect()
}

impl Checkpoint {
    /// Snapshots weights, masks and (optionally) optimizer momentum.
    pub fn capture<S: Scalar>(
        model: &ModelGraph<S>,
        optimizer: Option<&SgdState<S>>,
        epoch: usize,
        round: usize,
        meta: serde_json::Value,
    ) -> Self {
        let mut tensors = Vec::new();
        for (i, layer) in model.layers().iter().enumerate() {
            if let (Some(w), Some(b)) = (&layer.weight, &layer.bias) {
                tensors.push(NamedTensor {
                    name: format!("layers.{i}.weight"),
                    shape: w.shape().to_vec(),
                    bytes: encode_slice(w.data()),
                });
                tensors.push(NamedTensor {
                    name: format!("layers.{i}.bias"),
                    shape: vec![b.len()],
                    bytes: encode_slice(b),
                });
            }
        }
        if let Some(state) = optimizer {
            for (j, buf) in state.momentum.iter().enumerate() {
                tensors.push(NamedTensor {
                    name: format!("momentum.{j}"),
                    shape: vec![buf.len()],
                    bytes: encode_slice(buf),
                });
            }
        }
        Self {
            fingerprint: model.fingerprint(),
            architecture: model.architecture(),
            dtype: S::DTYPE,
            epoch,
            round,
            tensors,
            masks: model.masks(),
            meta,
        }
    }

    fn tensor(&self, name: &str) -> Result<&NamedTensor> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::invalid(format!("checkpoint has no tensor {name}")))
    }

    pub fn has_optimizer_state(&self) -> bool {
        self.tensors.iter().any(|t| t.name.starts_with("momentum."))
    }

    /// Overwrites `model` (and `optimizer`, when given) with the stored state.
    ///
    /// A checkpoint without momentum buffers resets the optimizer to zero.
    pub fn restore<S: Scalar>(&self, model: &mut ModelGraph<S>, optimizer: Option<&mut SgdState<S>>) -> Result<()> {
        let expected = model.fingerprint();
        if self.fingerprint != expected {
            return Err(Error::Fingerprint {
                expected,
                found: self.fingerprint.clone(),
            });
        }
        if self.dtype != S::DTYPE {
            return Err(Error::invalid(format!(
                "checkpoint dtype {:?} does not match model {:?}",
                self.dtype,
                S::DTYPE
            )));
        }
        let mask_layers: Vec<usize> = self.masks.iter().map(|(l, _)| *l).collect();
        if mask_layers != model.prunable_layers() {
            return Err(Error::invalid(format!(
                "checkpoint masks cover layers {mask_layers:?}, model prunes {:?}",
                model.prunable_layers()
            )));
        }
        // Validate everything before mutating.
        let mut staged: Vec<(usize, Vec<S>, Vec<S>)> = Vec::new();
        for (i, layer) in model.layers().iter().enumerate() {
            if let (Some(w), Some(b)) = (&layer.weight, &layer.bias) {
                let tw = self.tensor(&format!("layers.{i}.weight"))?;
                let tb = self.tensor(&format!("layers.{i}.bias"))?;
                if tw.shape != w.shape() || tb.shape != [b.len()] {
                    return Err(Error::ShapeMismatch {
                        expected: w.shape().to_vec(),
                        actual: tw.shape.clone(),
                    });
                }
                staged.push((i, decode_slice(&tw.bytes), decode_slice(&tb.bytes)));
            }
        }
        let mut momentum = Vec::new();
        if optimizer.is_some() && self.has_optimizer_state() {
            for (j, slice) in model.param_slices().iter().enumerate() {
                let t = self.tensor(&format!("momentum.{j}"))?;
                if t.shape != [slice.len()] {
                    return Err(Error::invalid(format!("momentum.{j} has the wrong length")));
                }
                momentum.push(decode_slice::<S>(&t.bytes));
            }
        }
        let layers = model.layers_mut();
        for (i, w, b) in staged {
            layers[i].weight.as_mut().unwrap().data_mut().copy_from_slice(&w);
            layers[i].bias.as_mut().unwrap().copy_from_slice(&b);
        }
        model.set_masks(self.masks.clone())?;
        if let Some(state) = optimizer {
            if momentum.is_empty() {
                state.reset();
            } else {
                state.momentum = momentum;
            }
        }
        Ok(())
    }

    pub fn header(&self) -> Header {
        let mut offset = 0u64;
        let tensors = self
            .tensors
            .iter()
            .map(|t| {
                let e = TensorEntry {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    offset,
                    len: t.bytes.len() as u64,
                };
                offset += e.len;
                e
            })
            .collect();
        let masks = self
            .masks
            .iter()
            .map(|(layer, m)| {
                let e = MaskEntry {
                    layer: *layer,
                    bits: m.len(),
                    offset,
                    len: m.len().div_ceil(8) as u64,
                };
                offset += e.len;
                e
            })
            .collect();
        Header {
            version: FORMAT_VERSION,
            fingerprint: self.fingerprint.clone(),
            architecture: self.architecture.clone(),
            dtype: self.dtype,
            epoch: self.epoch,
            round: self.round,
            tensors,
            masks,
            meta: self.meta.clone(),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header()).expect("header serializes");
        let mut out = Vec::with_capacity(12 + header.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for t in &self.tensors {
            out.extend_from_slice(&t.bytes);
        }
        for (_, m) in &self.masks {
            out.extend_from_slice(&m.to_packed());
        }
        out
    }

    /// Content hash (SHA-256 of the encoding, hex).
    pub fn id(&self) -> String {
        content_id(&self.encode())
    }

    /// Parses just the header; useful for inspection.
    pub fn decode_header(bytes: &[u8]) -> Result<(Header, usize)> {
        if bytes.len() < 12 {
            return Err(Error::format(bytes.len() as u64, "file shorter than the fixed prefix"));
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::format(0, "bad magic, expected AAP1"));
        }
        let len = u64::from_le_bytes(bytes[4..12].try_into().unwrap());
        if len > MAX_HEADER || len > (bytes.len() - 12) as u64 {
            return Err(Error::format(4, format!("header length {len} exceeds file")));
        }
        let end = 12 + len as usize;
        let header: Header = serde_json::from_slice(&bytes[12..end])
            .map_err(|e| Error::format(12, format!("header JSON: {e}")))?;
        if header.version != FORMAT_VERSION {
            return Err(Error::format(12, format!("unsupported version {}", header.version)));
        }
        if header.architecture.fingerprint() != header.fingerprint {
            return Err(Error::format(12, "fingerprint does not match the stored architecture"));
        }
        Ok((header, end))
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let (header, start) = Self::decode_header(bytes)?;
        let payload = &bytes[start..];
        let mut cursor = 0u64;
        let mut take = |offset: u64, len: u64, what: &str| -> Result<&[u8]> {
            if offset != cursor {
                return Err(Error::format(start as u64 + offset, format!("{what} is not contiguous")));
            }
            let end = offset
                .checked_add(len)
                .filter(|&e| e <= payload.len() as u64)
                .ok_or_else(|| Error::format(start as u64 + offset, format!("{what} runs past the end")))?;
            cursor = end;
            Ok(&payload[offset as usize..end as usize])
        };
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for t in &header.tensors {
            let elems = t
                .shape
                .iter()
                .try_fold(1u64, |acc, &d| acc.checked_mul(d as u64))
                .and_then(|n| n.checked_mul(header.dtype.size() as u64));
            if elems != Some(t.len) {
                return Err(Error::format(12, format!("tensor {} length disagrees with shape", t.name)));
            }
            tensors.push(NamedTensor {
                name: t.name.clone(),
                shape: t.shape.clone(),
                bytes: take(t.offset, t.len, &t.name)?.to_vec(),
            });
        }
        let mut masks = Vec::with_capacity(header.masks.len());
        for m in &header.masks {
            let bytes = take(m.offset, m.len, "mask")?;
            let mask = FilterMask::from_packed(bytes, m.bits)
                .ok_or_else(|| Error::format(start as u64 + m.offset, "mask length disagrees with bit count"))?;
            masks.push((m.layer, mask));
        }
        if cursor != payload.len() as u64 {
            return Err(Error::format(start as u64 + cursor, "trailing bytes after payload"));
        }
        Ok(Self {
            fingerprint: header.fingerprint,
            architecture: header.architecture,
            dtype: header.dtype,
            epoch: header.epoch,
            round: header.round,
            tensors,
            masks,
            meta: header.meta,
        })
    }

    /// Atomically writes the checkpoint (temp file + rename) and returns its id.
    pub fn save(&self, path: &Path) -> Result<String> {
        let bytes = self.encode();
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        fs::create_dir_all(dir).map_err(|e| Error::persistence(dir, e))?;
        let tmp = dir.join(format!(
            ".{}.tmp{}",
            path.file_name().and_then(|n| n.to_str()).unwrap_or("ckpt"),
            std::process::id()
        ));
        let write = || -> std::io::Result<()> {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
            fs::rename(&tmp, path)
        };
        if let Err(e) = write() {
            let _ = fs::remove_file(&tmp);
            return Err(Error::persistence(path, e));
        }
        Ok(hex::encode(Sha256::digest(&bytes)))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = match fs::read(path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(Error::NotFound(path.to_path_buf())),
            Err(e) => return Err(Error::persistence(path, e)),
        };
        Self::decode(&bytes)
    }
}

/// SHA-256 of encoded checkpoint bytes, in hex.
pub fn content_id(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Restores a saved state into `model`, returning the checkpoint's metadata.
pub fn rollback<S: Scalar>(
    model: &mut ModelGraph<S>,
    optimizer: Option<&mut SgdState<S>>,
    path: &Path,
) -> Result<serde_json::Value> {
    let ckpt = Checkpoint::load(path)?;
    ckpt.restore(model, optimizer)?;
    Ok(ckpt.meta)
}

/// Per-round checkpoints in one directory.
#[derive(Debug, Clone)]
pub struct CheckpointStore {
    dir: PathBuf,
}

impl CheckpointStore {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::persistence(&dir, e))?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn round_path(&self, round: usize) -> PathBuf {
        self.dir.join(format!("round-{round:04}.aap"))
    }

    pub fn named_path(&self, name: &str) -> PathBuf {
        self.dir.join(format!("{name}.aap"))
    }

    pub fn save_round(&self, ckpt: &Checkpoint) -> Result<String> {
        ckpt.save(&self.round_path(ckpt.round))
    }

    pub fn load_round(&self, round: usize) -> Result<Checkpoint> {
        Checkpoint::load(&self.round_path(round))
    }

    /// Deletes a round checkpoint that can no longer be a rollback target.
    pub fn discard_round(&self, round: usize) -> Result<()> {
        let path = self.round_path(round);
        match fs::remove_file(&path) {
            Ok(()) => Ok(()),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(()),
            Err(e) => Err(Error::persistence(path, e)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{lenet5, smallconv};

    #[test]
    fn encode_decode_roundtrip() {
        let mut m = smallconv::<f32>(3).unwrap();
        m.prune_filters(0, &[1]).unwrap();
        let mut state = SgdState::new(&m);
        state.momentum[0][0] = 0.25;
        let ckpt = Checkpoint::capture(&m, Some(&state), 7, 2, serde_json::json!({"t": 0.07}));
        let bytes = ckpt.encode();
        assert_eq!(&bytes[..4], MAGIC);
        let back = Checkpoint::decode(&bytes).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(back.encode(), bytes);
    }

    #[test]
    fn restore_rejects_other_architectures() {
        let m = smallconv::<f32>(0).unwrap();
        let ckpt = Checkpoint::capture(&m, None, 0, 0, serde_json::Value::Null);
        let mut other = lenet5::<f32>(0).unwrap();
        assert!(matches!(ckpt.restore(&mut other, None), Err(Error::Fingerprint { .. })));
    }

    #[test]
    fn save_is_atomic_and_content_addressed() {
        let dir = tempfile::tempdir().unwrap();
        let m = smallconv::<f32>(1).unwrap();
        let ckpt = Checkpoint::capture(&m, None, 0, 0, serde_json::json!({}));
        let a = ckpt.save(&dir.path().join("a.aap")).unwrap();
        let b = ckpt.save(&dir.path().join("b.aap")).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, ckpt.id());
        let names: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names.len(), 2, "no temp files left behind: {names:?}");
    }

    #[test]
    fn missing_checkpoint_is_not_found() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = smallconv::<f32>(1).unwrap();
        assert!(matches!(
            rollback(&mut m, None, &dir.path().join("nope.aap")),
            Err(Error::NotFound(_))
        ));
    }

    #[test]
    fn corrupt_headers_are_format_errors() {
        let m = smallconv::<f32>(1).unwrap();
        let bytes = Checkpoint::capture(&m, None, 0, 0, serde_json::json!({})).encode();
        assert!(Checkpoint::decode(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::decode(&bad).is_err());
        let mut long = bytes.clone();
        long[4..12].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(Checkpoint::decode(&long).is_err());
        let mut trailing = bytes;
        trailing.push(0);
        assert!(Checkpoint::decode(&trailing).is_err());
    }
}
