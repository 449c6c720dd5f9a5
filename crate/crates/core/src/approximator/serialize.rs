//! Binary encoding of a [`ParamSet`].
//!
//! ```text
//! "PSET" | u16 format | u64 version | u32 tensor count
//!   per tensor: u32 rank | u32 extent × rank | f64 × product(extents)
//! sha256 of every preceding byte (32 bytes)
//! ```
//! All integers and floats are little-endian.

use sha2::{Digest, Sha256};

use super::network::ParamSet;
use super::tensor::Tensor;
use super::ApproxError;

const MAGIC: &[u8; 4] = b"PSET";
pub const PARAMS_FORMAT_VERSION: u16 = 1;

pub fn save_params(params: &ParamSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(18 + params.element_count() * 8 + 32);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&PARAMS_FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&params.version.to_le_bytes());
    out.extend_from_slice(&(params.tensors.len() as u32).to_le_bytes());
    for t in &params.tensors {
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ApproxError> {
        if self.buf.len() - self.pos < n {
            return Err(ApproxError::Corrupt(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ApproxError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn load_params(bytes: &[u8]) -> Result<ParamSet, ApproxError> {
    if bytes.len() < 18 + 32 {
        return Err(ApproxError::Corrupt(format!("{} bytes is too short", bytes.len())));
    }
    let (body, checksum) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != checksum {
        return Err(ApproxError::Corrupt("checksum mismatch".into()));
    }
    let mut r = Reader { buf: body, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(ApproxError::Corrupt("bad magic".into()));
    }
    let format = u16::from_le_bytes(r.take(2)?.try_into().expect("2 bytes"));
    if format != PARAMS_FORMAT_VERSION {
        return Err(ApproxError::Version { found: format, supported: PARAMS_FORMAT_VERSION });
    }
    let version = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let rank = r.u32()? as usize;
        if rank == 0 || rank > 8 {
            return Err(ApproxError::Corrupt(format!("implausible tensor rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let len = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n.checked_mul(8).is_some_and(|b| b <= body.len()))
            .ok_or_else(|| ApproxError::Corrupt(format!("implausible tensor shape {shape:?}")))?;
        let raw = r.take(len * 8)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        tensors.push(Tensor::new(shape, data).map_err(|e| ApproxError::Corrupt(e.to_string()))?);
    }
    if r.pos != body.len() {
        return Err(ApproxError::Corrupt(format!("{} trailing bytes", body.len() - r.pos)));
    }
    Ok(ParamSet { tensors, version })
}
