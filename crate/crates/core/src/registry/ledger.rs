use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{AllocationRequest, RegistryError};

/// Hex SHA-256 of `bytes`.
pub fn digest_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub const GENESIS_PREV: &str = "0000000000000000000000000000000000000000000000000000000000000000";

/// A registry state transition as recorded on the ledger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum Operation {
    Genesis,
    AddUser {
        address: String,
        balance: u64,
    },
    AddModel {
        owner: String,
        cid: String,
        description: String,
        application: String,
        details: Vec<u64>,
    },
    Allocate {
        requester: String,
        request: AllocationRequest,
        cids: Vec<String>,
    },
    Payment {
        from: String,
        to: String,
        amount: u64,
        cid: String,
    },
    Review {
        requester: String,
        cid: String,
        /// Review in ten-thousandths.
        review: u64,
    },
}

impl Operation {
    pub fn tag(&self) -> &'static str {
        match self {
            Self::Genesis => "genesis",
            Self::AddUser { .. } => "add_user",
            Self::AddModel { .. } => "add_model",
            Self::Allocate { .. } => "allocate",
            Self::Payment { .. } => "payment",
            Self::Review { .. } => "review",
        }
    }

    pub fn digest(&self) -> String {
        digest_hex(canonical_json(self).as_bytes())
    }
}

/// JSON text with object keys sorted at every level.
pub fn canonical_json<T: Serialize>(value: &T) -> String {
    // serde_json::Value keeps object keys in a BTreeMap
    let v = serde_json::to_value(value).expect("registry types serialize to JSON");
    serde_json::to_string(&v).expect("JSON values serialize")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LedgerEntry {
    pub index: u64,
    /// Logical clock; every entry produced by one command shares it.
    pub timestamp: u64,
    pub payload: Operation,
    pub payload_digest: String,
    pub prev_hash: String,
    pub hash: String,
}

impl LedgerEntry {
    pub fn new(index: u64, timestamp: u64, payload: Operation, prev_hash: &str) -> Self {
        let payload_digest = payload.digest();
        let hash = entry_hash(index, timestamp, &payload_digest, prev_hash);
        Self { index, timestamp, payload, payload_digest, prev_hash: prev_hash.to_string(), hash }
    }
}

/// `H(index ‖ timestamp ‖ payload digest ‖ previous hash)` with little-endian
/// integers and the digests as their hex text.
pub fn entry_hash(index: u64, timestamp: u64, payload_digest: &str, prev_hash: &str) -> String {
    let mut h = Sha256::new();
    h.update(index.to_le_bytes());
    h.update(timestamp.to_le_bytes());
    h.update(payload_digest.as_bytes());
    h.update(prev_hash.as_bytes());
    hex::encode(h.finalize())
}

/// Index of the first entry that breaks the chain, if any.
pub fn verify_entries(entries: &[LedgerEntry]) -> Option<usize> {
    let mut prev = GENESIS_PREV;
    for (i, e) in entries.iter().enumerate() {
        let ok = e.index == i as u64
            && e.prev_hash == prev
            && e.payload_digest == e.payload.digest()
            && e.hash == entry_hash(e.index, e.timestamp, &e.payload_digest, &e.prev_hash);
        if !ok {
            return Some(i);
        }
        prev = &e.hash;
    }
    None
}

pub fn to_json_lines(entries: &[LedgerEntry]) -> String {
    let mut out = String::new();
    for e in entries {
        out.push_str(&canonical_json(e));
        out.push('\n');
    }
    out
}

/// Parses JSON-lines ledger text. A line that fails to parse, or is not in
/// canonical form, is reported as corrupt at its index.
pub fn parse_json_lines(text: &str) -> Result<Vec<LedgerEntry>, RegistryError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let e: LedgerEntry = serde_json::from_str(line).map_err(|_| RegistryError::CorruptLedger(i))?;
        if canonical_json(&e) != line {
            return Err(RegistryError::CorruptLedger(i));
        }
        out.push(e);
    }
    Ok(out)
}

/// Verifies exported ledger text; `Err(i)` names the first corrupt line.
pub fn verify_json_lines(text: &str) -> Result<usize, usize> {
    let entries = parse_json_lines(text).map_err(|e| match e {
        RegistryError::CorruptLedger(i) => i,
        _ => 0,
    })?;
    match verify_entries(&entries) {
        Some(i) => Err(i),
        None => Ok(entries.len()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain(n: usize) -> Vec<LedgerEntry> {
        let mut out: Vec<LedgerEntry> = Vec::new();
        for i in 0..n {
            let prev = out.last().map_or(GENESIS_PREV.to_string(), |e| e.hash.clone());
            let op = if i == 0 {
                Operation::Genesis
            } else {
                Operation::AddUser { address: format!("u{i}"), balance: i as u64 }
            };
            out.push(LedgerEntry::new(i as u64, i as u64, op, &prev));
        }
        out
    }

    #[test]
    fn untouched_chain_verifies() {
        assert_eq!(verify_entries(&chain(6)), None);
        assert_eq!(chain(1)[0].prev_hash, GENESIS_PREV);
    }

    #[test]
    fn flipped_digest_bit_is_located() {
        let mut c = chain(6);
        let mut bytes = c[3].payload_digest.clone().into_bytes();
        bytes[10] ^= 1;
        c[3].payload_digest = String::from_utf8(bytes).unwrap();
        assert_eq!(verify_entries(&c), Some(3));
    }

    #[test]
    fn swapped_entries_are_caught() {
        let mut c = chain(6);
        c.swap(2, 3);
        assert!(verify_entries(&c).unwrap() <= 3);
    }

    #[test]
    fn json_lines_round_trip() {
        let c = chain(5);
        let text = to_json_lines(&c);
        assert_eq!(parse_json_lines(&text).unwrap(), c);
        assert_eq!(verify_json_lines(&text), Ok(5));
    }

    #[test]
    fn hex_case_change_is_corruption() {
        let c = chain(3);
        let text = to_json_lines(&c);
        let upper = text.replacen(&c[1].hash, &c[1].hash.to_uppercase(), 1);
        assert_ne!(upper, text);
        assert_eq!(verify_json_lines(&upper), Err(1));
    }
}
