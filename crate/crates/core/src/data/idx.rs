//! IDX container parsing (the MNIST file format).
//!
//! Layout: two zero bytes, a type code (0x08 = unsigned byte), the number of
//! dimensions, then one big-endian `u32` per dimension, then the payload.
//! Gzip-compressed files are detected by their magic bytes and inflated.

use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use super::{Dataset, Split};
use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Upper bound on decoded payload size; guards against hostile headers.
const MAX_PAYLOAD: usize = 1 << 31;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxArray {
    pub magic: u32,
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::format(offset as u64, "truncated header"))
}

/// Parses an uncompressed IDX byte buffer of unsigned bytes.
pub fn parse_idx(bytes: &[u8]) -> Result<IdxArray> {
    let magic = be_u32(bytes, 0)?;
    if magic >> 16 != 0 {
        return Err(Error::format(0, format!("bad magic 0x{magic:08x}")));
    }
    let dtype = (magic >> 8) & 0xff;
    if dtype != 0x08 {
        return Err(Error::format(2, format!("unsupported element type 0x{dtype:02x}")));
    }
    let ndim = (magic & 0xff) as usize;
    if ndim == 0 {
        return Err(Error::format(3, "zero dimensions"));
    }
    let mut dims = Vec::with_capacity(ndim);
    let mut total: usize = 1;
    for d in 0..ndim {
        let offset = 4 + 4 * d;
        let dim = be_u32(bytes, offset)? as usize;
        total = total
            .checked_mul(dim)
            .filter(|&t| t <= MAX_PAYLOAD)
            .ok_or_else(|| Error::format(offset as u64, "payload size overflows"))?;
        dims.push(dim);
    }
    let start = 4 + 4 * ndim;
    let available = bytes.len() - start.min(bytes.len());
    if available < total {
        return Err(Error::format(
            bytes.len() as u64,
            format!("truncated payload: expected {total} bytes, found {available}"),
        ));
    }
    if available > total {
        return Err(Error::format((start + total) as u64, "trailing bytes after payload"));
    }
    Ok(IdxArray {
        magic,
        dims,
        data: bytes[start..].to_vec(),
    })
}

/// Reads a file, transparently inflating gzip.
pub fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path).map_err(|e| Error::persistence(path, e))?;
    decode_maybe_gz(&raw)
}

pub fn decode_maybe_gz(raw: &[u8]) -> Result<Vec<u8>> {
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw)
            .take(MAX_PAYLOAD as u64 + 64)
            .read_to_end(&mut out)
            .map_err(|e| Error::format(0, format!("gzip: {e}")))?;
        Ok(out)
    } else {
        Ok(raw.to_vec())
    }
}

/// Builds a dataset split from parsed image and label arrays.
pub fn dataset_from_idx(images: &IdxArray, labels: &IdxArray, split: Split) -> Result<Dataset> {
    if images.magic != IMAGES_MAGIC {
        return Err(Error::format(0, format!("images magic 0x{:08x}, expected 0x{IMAGES_MAGIC:08x}", images.magic)));
    }
    if labels.magic != LABELS_MAGIC {
        return Err(Error::format(0, format!("labels magic 0x{:08x}, expected 0x{LABELS_MAGIC:08x}", labels.magic)));
    }
    let (n, h, w) = (images.dims[0], images.dims[1], images.dims[2]);
    if labels.dims[0] != n {
        return Err(Error::format(4, format!("{n} images but {} labels", labels.dims[0])));
    }
    if h == 0 || w == 0 {
        return Err(Error::format(8, "zero-sized images"));
    }
    let labels: Vec<usize> = labels.data.iter().map(|&l| l as usize).collect();
    if let Some(pos) = labels.iter().position(|&l| l > 9) {
        return Err(Error::format(8 + pos as u64, format!("label {} outside [0, 9]", labels[pos])));
    }
    let images = images.data.iter().map(|&p| p as f32 / 255.0).collect();
    Dataset::new(images, labels, [1, h, w], 10, split)
}

/// Loads one MNIST-style split from an images file and a labels file.
pub fn load_idx(images_path: &Path, labels_path: &Path, split: Split) -> Result<Dataset> {
    let images = parse_idx(&read_maybe_gz(images_path)?)?;
    let labels = parse_idx(&read_maybe_gz(labels_path)?)?;
    dataset_from_idx(&images, &labels, split)
}

fn locate(dir: &Path, stem: &str) -> Result<std::path::PathBuf> {
    for candidate in [dir.join(stem), dir.join(format!("{stem}.gz"))] {
        if candidate.exists() {
            return Ok(candidate);
        }
    }
    Err(Error::NotFound(dir.join(stem)))
}

/// Loads `train-*` / `t10k-*` files from a directory (raw or `.gz`).
pub fn load_mnist_dir(dir: &Path, split: Split) -> Result<Dataset> {
    let prefix = match split {
        Split::Train => "train",
        Split::Test => "t10k",
    };
    load_idx(
        &locate(dir, &format!("{prefix}-images-idx3-ubyte"))?,
        &locate(dir, &format!("{prefix}-labels-idx1-ubyte"))?,
        split,
    )
}

pub fn encode_idx(magic: u32, dims: &[u32], data: &[u8]) -> Vec<u8> {
    let mut out = magic.to_be_bytes().to_vec();
    for d in dims {
        out.extend_from_slice(&d.to_be_bytes());
    }
    out.extend_from_slice(data);
    out
}
