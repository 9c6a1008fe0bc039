//! IDX image files as distributed with MNIST.
//!
//! Big-endian header: magic `0x00000803` (unsigned bytes, three dimensions),
//! then three `u32` sizes (count, rows, cols), then the pixels.

use std::path::Path;

use crate::error::{Error, Result};

pub const IDX3_MAGIC: u32 = 0x0000_0803;

/// Stack of 8-bit images.
#[derive(Debug, Clone, PartialEq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl IdxImages {
    /// Image `i`, row-major.
    pub fn image(&self, i: usize) -> &[u8] {
        let size = self.rows * self.cols;
        &self.pixels[i * size..(i + 1) * size]
    }
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxImages> {
    if bytes.len() < 16 {
        return Err(Error::Truncated { expected: 16, found: bytes.len() });
    }
    let word = |i: usize| u32::from_be_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap());
    let magic = word(0);
    if magic != IDX3_MAGIC {
        return Err(Error::BadMagic { found: magic, expected: IDX3_MAGIC });
    }
    let dims = [word(1) as u64, word(2) as u64, word(3) as u64];
    let total = dims[0]
        .checked_mul(dims[1])
        .and_then(|v| v.checked_mul(dims[2]))
        .filter(|&v| v <= isize::MAX as u64 - 16)
        .ok_or_else(|| Error::DimOverflow(dims.to_vec()))?;
    let need = 16 + total as usize;
    if bytes.len() < need {
        return Err(Error::Truncated { expected: need, found: bytes.len() });
    }
    Ok(IdxImages {
        count: dims[0] as usize,
        rows: dims[1] as usize,
        cols: dims[2] as usize,
        pixels: bytes[16..need].to_vec(),
    })
}

pub fn load_idx(path: &Path) -> Result<IdxImages> {
    parse_idx(&std::fs::read(path)?)
}

pub fn encode_idx(images: &IdxImages) -> Result<Vec<u8>> {
    if images.pixels.len() != images.count * images.rows * images.cols {
        return Err(Error::Dimension("pixel buffer does not match the declared dimensions".into()));
    }
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    out.extend_from_slice(&IDX3_MAGIC.to_be_bytes());
    for d in [images.count, images.rows, images.cols] {
        let d = u32::try_from(d).map_err(|_| Error::DimOverflow(vec![d as u64]))?;
        out.extend_from_slice(&d.to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    Ok(out)
}

pub fn write_idx(path: &Path, images: &IdxImages) -> Result<()> {
    crate::io::write_atomic(path, &encode_idx(images)?)
}
