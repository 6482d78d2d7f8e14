//! Binary per-layer feature files.
//!
//! ```text
//! "FSSD"            4 bytes magic
//! version  u16      = 1
//! layers   u16      L
//! L times:
//!   h, w, d, r      u32 each
//!   h*w*d f32       patch features, channel-last, row-major
//!   r*d   f32       register tokens
//! ```
//!
//! Everything is little-endian. All layers share `(h, w, d, r)`. The source
//! image size is not stored; callers supply it when loading a stack.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::{FeatureMap, Layer, LayerStack, RegisterTokens};

pub const MAGIC: [u8; 4] = *b"FSSD";
pub const VERSION: u16 = 1;

pub fn encode_layers(layers: &[Layer]) -> Result<Vec<u8>> {
    let count = u16::try_from(layers.len())
        .map_err(|_| Error::SizeMismatch(format!("{} layers exceed u16", layers.len())))?;
    let payload: usize = layers
        .iter()
        .map(|l| 16 + 4 * (l.features.data().len() + l.registers.data().len()))
        .sum();
    let mut out = Vec::with_capacity(8 + payload);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    for layer in layers {
        let f = &layer.features;
        for dim in [f.height(), f.width(), f.channels(), layer.registers.count()] {
            let dim = u32::try_from(dim)
                .map_err(|_| Error::SizeMismatch(format!("dimension {dim} exceeds u32")))?;
            out.extend_from_slice(&dim.to_le_bytes());
        }
        for v in f.data().iter().chain(layer.registers.data()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, layer: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(Error::UnexpectedEof { layer })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self, layer: usize) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, layer)?.try_into().unwrap()))
    }

    fn u32(&mut self, layer: usize) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, layer)?.try_into().unwrap()) as usize)
    }

    fn f32s(&mut self, n: usize, layer: usize) -> Result<Vec<f32>> {
        let bytes_len = n
            .checked_mul(4)
            .ok_or_else(|| Error::SizeMismatch(format!("layer {layer} size overflows")))?;
        Ok(self
            .take(bytes_len, layer)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

/// Parses a feature file. Layer 0 in an end-of-file error means the file header.
pub fn decode_layers(bytes: &[u8]) -> Result<Vec<Layer>> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic: [u8; 4] = cur.take(4, 0)?.try_into().unwrap();
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let version = cur.u16(0)?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let count = cur.u16(0)? as usize;
    if count == 0 {
        return Err(Error::SizeMismatch("file declares zero layers".into()));
    }

    let mut layers = Vec::with_capacity(count);
    let mut shape = None;
    for k in 1..=count {
        let dims = [cur.u32(k)?, cur.u32(k)?, cur.u32(k)?, cur.u32(k)?];
        match shape {
            None => shape = Some(dims),
            Some(s) if s != dims => {
                return Err(Error::SizeMismatch(format!(
                    "layer {k} declares {dims:?}, layer 1 declares {s:?}"
                )))
            }
            _ => {}
        }
        let [h, w, d, r] = dims;
        let n = h
            .checked_mul(w)
            .and_then(|x| x.checked_mul(d))
            .ok_or_else(|| Error::SizeMismatch(format!("layer {k} size overflows")))?;
        let feats = cur.f32s(n, k)?;
        let regs = cur.f32s(r.saturating_mul(d), k)?;
        let in_layer = |e: Error| match e {
            Error::NonFinite(what) => Error::NonFinite(format!("layer {k}, {what}")),
            other => other,
        };
        let features = FeatureMap::new(h, w, d, feats).map_err(in_layer)?;
        let registers = RegisterTokens::new(r, d, regs).map_err(in_layer)?;
        layers.push(Layer::new(features, registers)?);
    }
    let trailing = bytes.len() - cur.pos;
    if trailing != 0 {
        return Err(Error::SizeMismatch(format!(
            "{trailing} trailing bytes after layer {count}"
        )));
    }
    Ok(layers)
}

pub fn write_feature_file(stack: &LayerStack, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_layers(stack.layers())?;
    fs::write(path, bytes).map_err(|e| Error::from(e).at_path(path))
}

/// Loads a stack whose source image is `image_size` pixels.
pub fn read_feature_file(path: impl AsRef<Path>, image_size: (usize, usize)) -> Result<LayerStack> {
    let path = path.as_ref();
    let load = || -> Result<LayerStack> {
        let bytes = fs::read(path)?;
        LayerStack::new(decode_layers(&bytes)?, image_size)
    };
    load().map_err(|e| e.at_path(path))
}
