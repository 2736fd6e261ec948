//! Precomputed block embeddings on disk.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "TSB1"  u32 H  u32 L  u32 D  f32 × (H·L·D), row-major (h, l, d)
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"TSB1";
const HEADER_LEN: usize = 16;

pub fn encode_block_stack(stack: &Tensor<f32>) -> Result<Vec<u8>> {
    let (h, l, d) = stack.dims3()?;
    let mut out = Vec::with_capacity(HEADER_LEN + stack.len() * 4);
    out.extend_from_slice(MAGIC);
    for dim in [h, l, d] {
        let v =
            u32::try_from(dim).map_err(|_| Error::shape(format!("dimension {dim} exceeds u32")))?;
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in stack.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_block_stack(bytes: &[u8]) -> Result<Tensor<f32>> {
    if bytes.len() < 4 {
        return Err(Error::format(bytes.len(), "truncated magic"));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::format(0, "bad magic, expected TSB1"));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(bytes.len(), "truncated header"));
    }
    let dim =
        |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (h, l, d) = (dim(0), dim(1), dim(2));
    for (i, v) in [h, l, d].into_iter().enumerate() {
        if v == 0 {
            return Err(Error::format(4 + 4 * i, "zero dimension"));
        }
    }
    let count = h
        .checked_mul(l)
        .and_then(|v| v.checked_mul(d))
        .filter(|&v| v.checked_mul(4).is_some())
        .ok_or_else(|| Error::format(4, "dimensions overflow"))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() < count * 4 {
        return Err(Error::format(
            bytes.len(),
            format!(
                "truncated payload: need {} bytes, have {}",
                count * 4,
                payload.len()
            ),
        ));
    }
    if payload.len() > count * 4 {
        return Err(Error::format(
            HEADER_LEN + count * 4,
            "trailing bytes after payload",
        ));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::tensor3(h, l, d, data)
}

pub fn write_block_stack(path: impl AsRef<Path>, stack: &Tensor<f32>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_block_stack(stack)?).map_err(|e| Error::io(path, e))
}

pub fn load_block_stack(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_block_stack(&bytes)
}
