//! Model package binary layout, all integers little-endian:
//!
//! ```text
//! "MEDC" | u16 version (1) | u32 metadata length | metadata JSON
//!        | u64 payload length | payload (encoded ParamSet) | SHA-256 of all preceding bytes
//! ```

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::HarnessError;
use crate::approximator::{load_params, save_params, NetworkSpec, ParamSet};
use crate::registry::canonical_json;

pub const PACKAGE_MAGIC: &[u8; 4] = b"MEDC";
pub const PACKAGE_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PackageMetadata {
    pub application: String,
    pub environment_details: Vec<u64>,
    pub description: String,
    pub network: NetworkSpec,
    pub training_steps: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelPackage {
    pub metadata: PackageMetadata,
    pub params: ParamSet,
}

impl ModelPackage {
    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = canonical_json(&self.metadata).into_bytes();
        let payload = save_params(&self.params);
        let mut out = Vec::with_capacity(4 + 2 + 4 + meta.len() + 8 + payload.len() + 32);
        out.extend_from_slice(PACKAGE_MAGIC);
        out.extend_from_slice(&PACKAGE_VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&payload);
        let sum = Sha256::digest(&out);
        out.extend_from_slice(&sum);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, HarnessError> {
        let corrupt = |m: &str| HarnessError::Package(m.to_string());
        if bytes.len() < 4 + 2 + 4 + 8 + 32 {
            return Err(corrupt("truncated package"));
        }
        let (body, sum) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != sum {
            return Err(corrupt("checksum mismatch"));
        }
        if &body[..4] != PACKAGE_MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = u16::from_le_bytes([body[4], body[5]]);
        if version != PACKAGE_VERSION {
            return Err(HarnessError::Package(format!(
                "unsupported package version {version} (supported: {PACKAGE_VERSION})"
            )));
        }
        let meta_len = u32::from_le_bytes(body[6..10].try_into().expect("4 bytes")) as usize;
        let meta_end = 10usize
            .checked_add(meta_len)
            .filter(|&e| e + 8 <= body.len())
            .ok_or_else(|| corrupt("truncated metadata"))?;
        let metadata: PackageMetadata =
            serde_json::from_slice(&body[10..meta_end]).map_err(|e| HarnessError::Package(format!("metadata: {e}")))?;
        let payload_len = u64::from_le_bytes(body[meta_end..meta_end + 8].try_into().expect("8 bytes")) as usize;
        let payload = &body[meta_end + 8..];
        if payload.len() != payload_len {
            return Err(corrupt("payload length mismatch"));
        }
        let params = load_params(payload).map_err(|e| HarnessError::Package(format!("payload: {e}")))?;
        if !params.matches(&metadata.network) {
            return Err(corrupt("parameters do not match the declared network"));
        }
        Ok(Self { metadata, params })
    }

    pub fn write(&self, path: &std::path::Path) -> Result<(), HarnessError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &std::path::Path) -> Result<Self, HarnessError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
