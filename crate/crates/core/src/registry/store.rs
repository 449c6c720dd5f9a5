use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::ledger::digest_hex;
use super::RegistryError;

/// Content-addressed blob store keyed by hex SHA-256, in memory or as a
/// directory of CID-named files.
#[derive(Debug, Clone)]
pub enum ContentStore {
    Memory(BTreeMap<String, Vec<u8>>),
    Directory(PathBuf),
}

impl ContentStore {
    pub fn memory() -> Self {
        Self::Memory(BTreeMap::new())
    }

    pub fn open(dir: impl AsRef<Path>) -> Result<Self, RegistryError> {
        fs::create_dir_all(dir.as_ref())?;
        Ok(Self::Directory(dir.as_ref().to_path_buf()))
    }

    /// Stores `bytes` and returns their CID.
    pub fn put(&mut self, bytes: &[u8]) -> Result<String, RegistryError> {
        let cid = digest_hex(bytes);
        match self {
            Self::Memory(m) => {
                m.insert(cid.clone(), bytes.to_vec());
            }
            Self::Directory(d) => {
                let path = d.join(&cid);
                if !path.exists() {
                    let tmp = d.join(format!(".{cid}.tmp"));
                    fs::write(&tmp, bytes)?;
                    fs::rename(&tmp, &path)?;
                }
            }
        }
        Ok(cid)
    }

    pub fn contains(&self, cid: &str) -> bool {
        match self {
            Self::Memory(m) => m.contains_key(cid),
            Self::Directory(d) => is_cid(cid) && d.join(cid).is_file(),
        }
    }

    /// Bytes stored under `cid`, checked against the digest.
    pub fn get(&self, cid: &str) -> Result<Vec<u8>, RegistryError> {
        let bytes = match self {
            Self::Memory(m) => m.get(cid).cloned().ok_or_else(|| RegistryError::UnknownCid(cid.to_string()))?,
            Self::Directory(d) => {
                if !is_cid(cid) {
                    return Err(RegistryError::UnknownCid(cid.to_string()));
                }
                match fs::read(d.join(cid)) {
                    Ok(b) => b,
                    Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                        return Err(RegistryError::UnknownCid(cid.to_string()))
                    }
                    Err(e) => return Err(e.into()),
                }
            }
        };
        if digest_hex(&bytes) != cid {
            return Err(RegistryError::ContentMismatch(cid.to_string()));
        }
        Ok(bytes)
    }
}

fn is_cid(s: &str) -> bool {
    s.len() == 64 && s.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
}
