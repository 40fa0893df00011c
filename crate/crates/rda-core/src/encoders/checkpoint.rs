//! Encoder checkpoint container.
//!
//! Layout (all integers little-endian):
//!   magic    8 bytes  "RDACKPT1"
//!   version  u16      currently 1
//!   h, w, c  u32 x 3  input shape
//!   n_blocks u16      followed by n_blocks x u32 channel counts
//!   dim      u32
//!   count    u64      parameter count
//!   params   count x f32
//!   digest   32 bytes sha256 over descriptor bytes + f32 parameter bytes
//!
//! The digest doubles as the encoder fingerprint; load recomputes and
//! verifies it, so any corruption or tampering is rejected.

use std::path::Path;

use ndarray::Array1;

use super::conv::{ConvDescriptor, ConvEncoder};
use super::EncoderInterface;
use crate::error::{FormatErrorCode, RdaError, Result};

const MAGIC: &[u8; 8] = b"RDACKPT1";
const VERSION: u16 = 1;
const MAX_BLOCKS: usize = 64;
const MAX_SIDE: u32 = 1 << 16;

pub fn encode_checkpoint(encoder: &ConvEncoder) -> Vec<u8> {
    let d = encoder.descriptor();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(d.input.0 as u32).to_le_bytes());
    out.extend_from_slice(&(d.input.1 as u32).to_le_bytes());
    out.extend_from_slice(&(d.input.2 as u32).to_le_bytes());
    out.extend_from_slice(&(d.channels.len() as u16).to_le_bytes());
    for &c in &d.channels {
        out.extend_from_slice(&(c as u32).to_le_bytes());
    }
    out.extend_from_slice(&(d.dim as u32).to_le_bytes());
    out.extend_from_slice(&(encoder.param_count() as u64).to_le_bytes());
    for v in encoder.params().iter() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out.extend_from_slice(&encoder.fingerprint());
    out
}

pub fn save_checkpoint(encoder: &ConvEncoder, path: &Path) -> Result<()> {
    std::fs::write(path, encode_checkpoint(encoder))?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(RdaError::format(FormatErrorCode::Truncated, "unexpected end of file"));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Decode a checkpoint from untrusted bytes.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<ConvEncoder> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(8)? != MAGIC {
        return Err(RdaError::format(FormatErrorCode::BadMagic, "not a checkpoint file"));
    }
    let version = cur.u16()?;
    if version != VERSION {
        return Err(RdaError::format(
            FormatErrorCode::VersionMismatch,
            format!("checkpoint version {version}, expected {VERSION}"),
        ));
    }
    let h = cur.u32()?;
    let w = cur.u32()?;
    let c = cur.u32()?;
    if h == 0 || w == 0 || c == 0 || h > MAX_SIDE || w > MAX_SIDE || c > MAX_SIDE {
        return Err(RdaError::format(FormatErrorCode::Malformed, "implausible input shape"));
    }
    let n_blocks = cur.u16()? as usize;
    if n_blocks == 0 || n_blocks > MAX_BLOCKS {
        return Err(RdaError::format(FormatErrorCode::Malformed, "implausible block count"));
    }
    let mut channels = Vec::with_capacity(n_blocks);
    for _ in 0..n_blocks {
        let ch = cur.u32()?;
        if ch == 0 || ch > MAX_SIDE {
            return Err(RdaError::format(FormatErrorCode::Malformed, "implausible channel count"));
        }
        channels.push(ch as usize);
    }
    let dim = cur.u32()?;
    if dim == 0 || dim > MAX_SIDE {
        return Err(RdaError::format(FormatErrorCode::Malformed, "implausible head dim"));
    }
    let descriptor =
        ConvDescriptor { input: (h as usize, w as usize, c as usize), channels, dim: dim as usize };
    let declared = cur.u64()? as usize;
    let expected = descriptor.param_count();
    if declared != expected {
        return Err(RdaError::format(
            FormatErrorCode::Malformed,
            format!("parameter count {declared} does not match descriptor ({expected})"),
        ));
    }
    let param_bytes = cur.take(expected.checked_mul(4).ok_or_else(|| {
        RdaError::format(FormatErrorCode::Malformed, "parameter count overflow")
    })?)?;
    let params: Array1<f64> = param_bytes
        .chunks_exact(4)
        .map(|ch| f32::from_le_bytes(ch.try_into().unwrap()) as f64)
        .collect();
    if params.iter().any(|v| !v.is_finite()) {
        return Err(RdaError::format(FormatErrorCode::Malformed, "non-finite parameters"));
    }
    let stored_digest: [u8; 32] = cur
        .take(32)?
        .try_into()
        .map_err(|_| RdaError::format(FormatErrorCode::FingerprintMissing, "missing fingerprint"))?;
    if cur.pos != bytes.len() {
        return Err(RdaError::format(FormatErrorCode::Malformed, "trailing bytes"));
    }

    let encoder = ConvEncoder::from_params(descriptor, params)
        .map_err(|e| RdaError::format(FormatErrorCode::Malformed, e.to_string()))?;
    if encoder.fingerprint() != stored_digest {
        return Err(RdaError::format(
            FormatErrorCode::FingerprintMismatch,
            "fingerprint does not match content",
        ));
    }
    Ok(encoder)
}

pub fn load_checkpoint(path: &Path) -> Result<ConvEncoder> {
    let bytes = std::fs::read(path)?;
    decode_checkpoint(&bytes)
}
