//! ESDF v1: `"ESDF" | version | L | T | D | dtype` as little-endian u32s,
//! followed by `L·T·D` little-endian f32 values, layer-major then time then dim.

use std::io::{Read, Write};

use super::FeatureStack;
use crate::error::{Error, Result};

pub const ESDF_MAGIC: &[u8; 4] = b"ESDF";
pub const ESDF_VERSION: u32 = 1;
pub const ESDF_HEADER_LEN: usize = 24;
const DTYPE_F32: u32 = 0;

pub fn write_feature_stack<W: Write>(stack: &FeatureStack, mut dest: W) -> Result<u64> {
    let mut header = Vec::with_capacity(ESDF_HEADER_LEN);
    header.extend_from_slice(ESDF_MAGIC);
    for field in [
        ESDF_VERSION,
        stack.layers() as u32,
        stack.frames() as u32,
        stack.dim() as u32,
        DTYPE_F32,
    ] {
        header.extend_from_slice(&field.to_le_bytes());
    }
    let mut payload = Vec::with_capacity(stack.values().len() * 4);
    for v in stack.values() {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    dest.write_all(&header)?;
    dest.write_all(&payload)?;
    dest.flush()?;
    Ok((header.len() + payload.len()) as u64)
}

fn read_full<R: Read>(src: &mut R, buf: &mut [u8]) -> Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match src.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(filled)
}

pub fn read_feature_stack<R: Read>(mut src: R) -> Result<FeatureStack> {
    let mut header = [0u8; ESDF_HEADER_LEN];
    let got = read_full(&mut src, &mut header)?;
    if got < 4 || &header[..4] != ESDF_MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected \"ESDF\"",
            String::from_utf8_lossy(&header[..got.min(4)])
        )));
    }
    if got < ESDF_HEADER_LEN {
        return Err(Error::Format(format!(
            "truncated header: {got} of {ESDF_HEADER_LEN} bytes"
        )));
    }
    let field = |i: usize| u32::from_le_bytes(header[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    let version = field(0);
    if version != ESDF_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let (layers, frames, dim, dtype) = (field(1), field(2), field(3), field(4));
    if dtype != DTYPE_F32 {
        return Err(Error::Format(format!("unknown dtype code {dtype}")));
    }
    if layers == 0 || frames == 0 || dim == 0 {
        return Err(Error::Format(format!("zero extent in header {layers}x{frames}x{dim}")));
    }
    let expected = layers as u64 * frames as u64 * dim as u64 * 4;
    let mut payload = Vec::new();
    src.take(expected + 1).read_to_end(&mut payload)?;
    let actual = payload.len() as u64;
    if actual < expected {
        return Err(Error::Corrupt { expected, actual });
    }
    if actual > expected {
        return Err(Error::Format("trailing bytes after payload".into()));
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    FeatureStack::new(layers as usize, frames as usize, dim as usize, values)
}
