//! Simulated model-sharing chain: users and models with review-driven
//! reputations, QoS-greedy allocation with payments, a content-addressed
//! package store, and a hash-chained ledger.

mod ledger;
mod store;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use ledger::{
    canonical_json, digest_hex, entry_hash, parse_json_lines, to_json_lines, verify_entries, verify_json_lines,
    LedgerEntry, Operation, GENESIS_PREV,
};
pub use store::ContentStore;

/// Fixed-point scale: reputations and reviews are stored in ten-thousandths.
pub const SCALE: u64 = 10_000;
pub const INITIAL_REPUTATION: u64 = 5_000;
/// Floor on the environment distance in the QoS quotient.
pub const DM_FLOOR: f64 = 0.5;

#[derive(Debug, thiserror::Error)]
pub enum RegistryError {
    #[error("address {0:?} is already registered")]
    DuplicateUser(String),
    #[error("unknown user {0:?}")]
    UnknownUser(String),
    #[error("unknown application {0:?}")]
    UnknownApplication(String),
    #[error("{application} expects {expected} environment details, got {got}")]
    SchemaMismatch { application: String, expected: usize, got: usize },
    #[error("model {0} is already registered for this application")]
    DuplicateModel(String),
    #[error("unknown CID {0}")]
    UnknownCid(String),
    #[error("stored content does not hash to {0}")]
    ContentMismatch(String),
    #[error("insufficient balance: need {need}, have {have}")]
    InsufficientBalance { need: u64, have: u64 },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error("review must lie in [0, 1], got {0}")]
    InvalidReview(f64),
    #[error("{requester:?} has no unreviewed allocation of {cid}")]
    NoPendingAllocation { requester: String, cid: String },
    #[error("ledger is corrupt at entry {0}")]
    CorruptLedger(usize),
    #[error("replay diverged at ledger entry {0}")]
    ReplayMismatch(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Environment-detail attribute names per application.
pub fn schema(application: &str) -> Option<&'static [&'static str]> {
    match application {
        "target_localization" => Some(&["agents", "targets", "obstacles"]),
        "fleet" => Some(&["agents", "customers", "capacity"]),
        "maze" => Some(&["agents", "grid_h", "grid_w"]),
        _ => None,
    }
}

/// Converts a value in [0, 1] to ten-thousandths, rounding half away from zero.
pub fn to_fixed(x: f64) -> Option<u64> {
    (x.is_finite() && (0.0..=1.0).contains(&x)).then(|| (x * SCALE as f64).round() as u64)
}

pub fn from_fixed(v: u64) -> f64 {
    v as f64 / SCALE as f64
}

/// `total / count` in fixed point, rounded half up; `initial` when `count` is zero.
fn mean_fixed(total: u64, count: u64, initial: u64) -> u64 {
    if count == 0 {
        initial
    } else {
        (2 * total + count) / (2 * count)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct User {
    pub address: String,
    pub reputation: u64,
    pub models_alloc_count: u64,
    pub total_review: u64,
    pub balance: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub owner: String,
    pub cid: String,
    pub reputation: u64,
    pub allocation_count: u64,
    pub total_model_review: u64,
    pub description: String,
    pub application: String,
    pub details: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AllocationRequest {
    pub application: String,
    pub details: Vec<u64>,
    pub weights: Vec<f64>,
    /// Minimum model reputation, ten-thousandths.
    pub min_model_rep: u64,
    /// Minimum owner reputation, ten-thousandths.
    pub min_owner_rep: u64,
    pub count: usize,
    pub price: u64,
}

impl AllocationRequest {
    /// Equal weights and no reputation floor.
    pub fn new(application: &str, details: Vec<u64>, count: usize, price: u64) -> Self {
        let n = details.len().max(1);
        Self {
            application: application.to_string(),
            weights: vec![1.0 / n as f64; details.len()],
            details,
            min_model_rep: 0,
            min_owner_rep: 0,
            count,
            price,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Allocation {
    pub requester: String,
    pub application: String,
    pub cid: String,
    pub reviewed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllocationResult {
    pub records: Vec<ModelRecord>,
    pub qos: Vec<f64>,
    /// Fewer models qualified than were requested.
    pub short: bool,
}

impl AllocationResult {
    pub fn cids(&self) -> Vec<String> {
        self.records.iter().map(|r| r.cid.clone()).collect()
    }
}

/// Weighted L1 distance between environment-detail tuples.
pub fn compute_dm(model: &[u64], requested: &[u64], weights: &[f64]) -> Result<f64, RegistryError> {
    if model.len() != requested.len() || weights.len() != model.len() {
        return Err(RegistryError::InvalidWeights(format!(
            "lengths differ: model {}, requested {}, weights {}",
            model.len(),
            requested.len(),
            weights.len()
        )));
    }
    check_weights(weights)?;
    Ok(model.iter().zip(requested).zip(weights).map(|((&m, &r), &w)| w * m.abs_diff(r) as f64).sum())
}

fn check_weights(weights: &[f64]) -> Result<(), RegistryError> {
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(RegistryError::InvalidWeights("weights must be finite and non-negative".into()));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(RegistryError::InvalidWeights(format!("weights sum to {sum}, not 1")));
    }
    Ok(())
}

/// `Rep_i · Rep_m / max(D_m, 0.5)`.
pub fn compute_qos(owner_rep: f64, model_rep: f64, dm: f64) -> f64 {
    owner_rep * model_rep / dm.max(DM_FLOOR)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RegistryState {
    pub users: BTreeMap<String, User>,
    /// Application, then CID.
    pub models: BTreeMap<String, BTreeMap<String, ModelRecord>>,
    pub allocations: Vec<Allocation>,
    pub clock: u64,
}

#[derive(Debug, Clone)]
pub struct Registry {
    state: RegistryState,
    ledger: Vec<LedgerEntry>,
    store: ContentStore,
}

const STATE_FILE: &str = "state.json";
const LEDGER_FILE: &str = "ledger.jsonl";
const CONTENT_DIR: &str = "content";

impl Registry {
    /// Empty registry whose ledger holds only the genesis entry.
    pub fn new(store: ContentStore) -> Self {
        let mut r = Self { state: RegistryState::default(), ledger: Vec::new(), store };
        r.append(Operation::Genesis);
        r.state.clock += 1;
        r
    }

    pub fn in_memory() -> Self {
        Self::new(ContentStore::memory())
    }

    pub fn state(&self) -> &RegistryState {
        &self.state
    }

    pub fn ledger(&self) -> &[LedgerEntry] {
        &self.ledger
    }

    pub fn store(&self) -> &ContentStore {
        &self.store
    }

    pub fn user(&self, address: &str) -> Option<&User> {
        self.state.users.get(address)
    }

    pub fn model(&self, application: &str, cid: &str) -> Option<&ModelRecord> {
        self.state.models.get(application)?.get(cid)
    }

    pub fn total_balance(&self) -> u64 {
        self.state.users.values().map(|u| u.balance).sum()
    }

    fn append(&mut self, op: Operation) {
        let prev = self.ledger.last().map_or(GENESIS_PREV, |e| e.hash.as_str()).to_string();
        let entry = LedgerEntry::new(self.ledger.len() as u64, self.state.clock, op, &prev);
        self.ledger.push(entry);
    }

    fn commit(&mut self, ops: Vec<Operation>) {
        for op in ops {
            self.append(op);
        }
        self.state.clock += 1;
    }

    pub fn add_user(&mut self, address: &str, balance: u64) -> Result<User, RegistryError> {
        if address.is_empty() {
            return Err(RegistryError::InvalidRequest("empty address".into()));
        }
        if self.state.users.contains_key(address) {
            return Err(RegistryError::DuplicateUser(address.to_string()));
        }
        let user = User {
            address: address.to_string(),
            reputation: INITIAL_REPUTATION,
            models_alloc_count: 0,
            total_review: 0,
            balance,
        };
        self.state.users.insert(address.to_string(), user.clone());
        self.commit(vec![Operation::AddUser { address: address.to_string(), balance }]);
        Ok(user)
    }

    pub fn add_model(
        &mut self,
        owner: &str,
        package: &[u8],
        description: &str,
        application: &str,
        details: &[u64],
    ) -> Result<ModelRecord, RegistryError> {
        if !self.state.users.contains_key(owner) {
            return Err(RegistryError::UnknownUser(owner.to_string()));
        }
        let names = schema(application).ok_or_else(|| RegistryError::UnknownApplication(application.to_string()))?;
        if names.len() != details.len() {
            return Err(RegistryError::SchemaMismatch {
                application: application.to_string(),
                expected: names.len(),
                got: details.len(),
            });
        }
        let cid = digest_hex(package);
        if self.model(application, &cid).is_some() {
            return Err(RegistryError::DuplicateModel(cid));
        }
        self.store.put(package)?;
        let record = ModelRecord {
            owner: owner.to_string(),
            cid: cid.clone(),
            reputation: INITIAL_REPUTATION,
            allocation_count: 0,
            total_model_review: 0,
            description: description.to_string(),
            application: application.to_string(),
            details: details.to_vec(),
        };
        self.state.models.entry(application.to_string()).or_default().insert(cid.clone(), record.clone());
        self.commit(vec![Operation::AddModel {
            owner: owner.to_string(),
            cid,
            description: description.to_string(),
            application: application.to_string(),
            details: details.to_vec(),
        }]);
        Ok(record)
    }

    /// Ranked qualifying models for `request`, without side effects.
    pub fn rank_models(
        &self,
        request: &AllocationRequest,
        requester: &str,
    ) -> Result<Vec<(f64, ModelRecord)>, RegistryError> {
        let names = schema(&request.application)
            .ok_or_else(|| RegistryError::UnknownApplication(request.application.clone()))?;
        if request.details.len() != names.len() {
            return Err(RegistryError::SchemaMismatch {
                application: request.application.clone(),
                expected: names.len(),
                got: request.details.len(),
            });
        }
        if request.weights.len() != names.len() {
            return Err(RegistryError::InvalidWeights(format!(
                "{} weights for {} attributes",
                request.weights.len(),
                names.len()
            )));
        }
        check_weights(&request.weights)?;
        let mut pool = Vec::new();
        for m in self.state.models.get(&request.application).into_iter().flat_map(|m| m.values()) {
            if m.owner == requester {
                continue;
            }
            let owner = &self.state.users[&m.owner];
            if m.reputation < request.min_model_rep || owner.reputation < request.min_owner_rep {
                continue;
            }
            let dm = compute_dm(&m.details, &request.details, &request.weights)?;
            pool.push((compute_qos(from_fixed(owner.reputation), from_fixed(m.reputation), dm), m.clone()));
        }
        pool.sort_by(|(qa, a), (qb, b)| {
            qb.total_cmp(qa).then(b.reputation.cmp(&a.reputation)).then_with(|| a.cid.cmp(&b.cid))
        });
        Ok(pool)
    }

    /// Greedy top-`count` allocation by QoS, paying `price` to each owner.
    pub fn allocate_models(
        &mut self,
        request: &AllocationRequest,
        requester: &str,
    ) -> Result<AllocationResult, RegistryError> {
        let balance = self.user(requester).ok_or_else(|| RegistryError::UnknownUser(requester.to_string()))?.balance;
        if request.count == 0 {
            return Err(RegistryError::InvalidRequest("count must be at least 1".into()));
        }
        let need = (request.count as u64)
            .checked_mul(request.price)
            .ok_or_else(|| RegistryError::InvalidRequest("price overflow".into()))?;
        if balance < need {
            return Err(RegistryError::InsufficientBalance { need, have: balance });
        }
        let mut ranked = self.rank_models(request, requester)?;
        let short = ranked.len() < request.count;
        ranked.truncate(request.count);

        let mut ops = vec![Operation::Allocate {
            requester: requester.to_string(),
            request: request.clone(),
            cids: ranked.iter().map(|(_, m)| m.cid.clone()).collect(),
        }];
        let mut records = Vec::with_capacity(ranked.len());
        let mut qos = Vec::with_capacity(ranked.len());
        for (q, m) in ranked {
            let rec = self
                .state
                .models
                .get_mut(&request.application)
                .and_then(|ms| ms.get_mut(&m.cid))
                .expect("ranked model exists");
            rec.allocation_count += 1;
            rec.reputation = mean_fixed(rec.total_model_review, rec.allocation_count, INITIAL_REPUTATION);
            records.push(rec.clone());
            qos.push(q);
            let owner = self.state.users.get_mut(&m.owner).expect("owner exists");
            owner.models_alloc_count += 1;
            owner.reputation = mean_fixed(owner.total_review, owner.models_alloc_count, INITIAL_REPUTATION);
            owner.balance += request.price;
            self.state.users.get_mut(requester).expect("requester exists").balance -= request.price;
            self.state.allocations.push(Allocation {
                requester: requester.to_string(),
                application: request.application.clone(),
                cid: m.cid.clone(),
                reviewed: false,
            });
            ops.push(Operation::Payment {
                from: requester.to_string(),
                to: m.owner.clone(),
                amount: request.price,
                cid: m.cid,
            });
        }
        self.commit(ops);
        Ok(AllocationResult { records, qos, short })
    }

    /// Reviews the requester's oldest unreviewed allocation of `cid`.
    pub fn submit_review(
        &mut self,
        requester: &str,
        cid: &str,
        review: f64,
    ) -> Result<(User, ModelRecord), RegistryError> {
        let fixed = to_fixed(review).ok_or(RegistryError::InvalidReview(review))?;
        self.review_fixed(requester, cid, fixed)
    }

    fn review_fixed(&mut self, requester: &str, cid: &str, review: u64) -> Result<(User, ModelRecord), RegistryError> {
        if review > SCALE {
            return Err(RegistryError::InvalidReview(from_fixed(review)));
        }
        let slot = self
            .state
            .allocations
            .iter()
            .position(|a| a.requester == requester && a.cid == cid && !a.reviewed)
            .ok_or_else(|| RegistryError::NoPendingAllocation {
                requester: requester.to_string(),
                cid: cid.to_string(),
            })?;
        let app = self.state.allocations[slot].application.clone();
        self.state.allocations[slot].reviewed = true;
        let rec = self.state.models.get_mut(&app).and_then(|m| m.get_mut(cid)).expect("allocated model exists");
        rec.total_model_review += review;
        rec.reputation = mean_fixed(rec.total_model_review, rec.allocation_count, INITIAL_REPUTATION);
        let rec = rec.clone();
        let owner = self.state.users.get_mut(&rec.owner).expect("owner exists");
        owner.total_review += review;
        owner.reputation = mean_fixed(owner.total_review, owner.models_alloc_count, INITIAL_REPUTATION);
        let owner = owner.clone();
        self.commit(vec![Operation::Review { requester: requester.to_string(), cid: cid.to_string(), review }]);
        Ok((owner, rec))
    }

    pub fn fetch_content(&self, cid: &str) -> Result<Vec<u8>, RegistryError> {
        self.store.get(cid)
    }

    /// Index of the first corrupt ledger entry, if any.
    pub fn verify_ledger(&self) -> Option<usize> {
        verify_entries(&self.ledger)
    }

    /// Canonical JSON of the registry state.
    pub fn export_state(&self) -> String {
        canonical_json(&self.state)
    }

    pub fn export_ledger(&self) -> String {
        to_json_lines(&self.ledger)
    }

    /// Rebuilds a registry from state JSON and ledger lines.
    pub fn import(state_json: &str, ledger_lines: &str, store: ContentStore) -> Result<Self, RegistryError> {
        let state: RegistryState = serde_json::from_str(state_json)?;
        let ledger = parse_json_lines(ledger_lines)?;
        if let Some(i) = verify_entries(&ledger) {
            return Err(RegistryError::CorruptLedger(i));
        }
        Ok(Self { state, ledger, store })
    }

    /// Re-executes every command on the ledger against a fresh registry and
    /// checks that the resulting ledger is identical.
    pub fn replay(entries: &[LedgerEntry], store: ContentStore) -> Result<Self, RegistryError> {
        if let Some(i) = verify_entries(entries) {
            return Err(RegistryError::CorruptLedger(i));
        }
        let mut r = Self::new(store);
        for e in entries.iter().skip(1) {
            match &e.payload {
                Operation::Genesis => return Err(RegistryError::ReplayMismatch(e.index as usize)),
                Operation::AddUser { address, balance } => {
                    r.add_user(address, *balance)?;
                }
                Operation::AddModel { owner, cid, description, application, details } => {
                    let bytes = r.store.get(cid)?;
                    r.add_model(owner, &bytes, description, application, details)?;
                }
                Operation::Allocate { requester, request, .. } => {
                    r.allocate_models(request, requester)?;
                }
                Operation::Payment { .. } => {}
                Operation::Review { requester, cid, review } => {
                    r.review_fixed(requester, cid, *review)?;
                }
            }
            let upto = (e.index as usize + 1).min(r.ledger.len());
            if let Some(i) = (0..upto).find(|&i| r.ledger[i] != entries[i]) {
                return Err(RegistryError::ReplayMismatch(i));
            }
        }
        if r.ledger.len() != entries.len() {
            return Err(RegistryError::ReplayMismatch(r.ledger.len().min(entries.len())));
        }
        Ok(r)
    }

    /// Creates `dir` with an empty registry.
    pub fn init_dir(dir: &Path) -> Result<Self, RegistryError> {
        if dir.join(STATE_FILE).exists() {
            return Err(RegistryError::InvalidRequest(format!("{} already holds a registry", dir.display())));
        }
        fs::create_dir_all(dir)?;
        let r = Self::new(ContentStore::open(dir.join(CONTENT_DIR))?);
        r.save_dir(dir)?;
        Ok(r)
    }

    pub fn open_dir(dir: &Path) -> Result<Self, RegistryError> {
        let state = fs::read_to_string(dir.join(STATE_FILE))?;
        let ledger = fs::read_to_string(dir.join(LEDGER_FILE))?;
        Self::import(&state, &ledger, ContentStore::open(dir.join(CONTENT_DIR))?)
    }

    pub fn save_dir(&self, dir: &Path) -> Result<(), RegistryError> {
        write_atomic(&dir.join(STATE_FILE), self.export_state().as_bytes())?;
        write_atomic(&dir.join(LEDGER_FILE), self.export_ledger().as_bytes())?;
        Ok(())
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), RegistryError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reg() -> Registry {
        let mut r = Registry::in_memory();
        for (a, b) in [("alice", 100), ("bob", 100), ("carol", 100), ("dave", 100)] {
            r.add_user(a, b).unwrap();
        }
        r
    }

    #[test]
    fn add_user_initial_values() {
        let mut r = Registry::in_memory();
        let before = r.ledger().len();
        let u = r.add_user("alice", 10).unwrap();
        assert_eq!((u.reputation, u.models_alloc_count, u.total_review), (5000, 0, 0));
        assert_eq!(from_fixed(u.reputation), 0.5);
        assert_eq!(r.ledger().len(), before + 1);
        assert!(matches!(r.add_user("alice", 10), Err(RegistryError::DuplicateUser(_))));
    }

    #[test]
    fn add_model_content_addressing() {
        let mut r = reg();
        let m = r.add_model("alice", b"pkg-1", "d", "target_localization", &[3, 1, 3]).unwrap();
        assert_eq!(m.cid, digest_hex(b"pkg-1"));
        assert_eq!(m.reputation, 5000);
        assert!(matches!(
            r.add_model("bob", b"pkg-1", "d", "target_localization", &[3, 1, 3]),
            Err(RegistryError::DuplicateModel(_))
        ));
        let other = r.add_model("alice", b"pkg-2", "d", "target_localization", &[3, 1, 3]).unwrap();
        assert_ne!(other.cid, m.cid);
        assert!(matches!(
            r.add_model("alice", b"pkg-3", "d", "target_localization", &[3, 1]),
            Err(RegistryError::SchemaMismatch { expected: 3, got: 2, .. })
        ));
        assert!(matches!(r.add_model("zed", b"x", "d", "maze", &[1, 2, 3]), Err(RegistryError::UnknownUser(_))));
        assert!(matches!(r.add_model("alice", b"x", "d", "chess", &[1]), Err(RegistryError::UnknownApplication(_))));
        assert_eq!(r.fetch_content(&m.cid).unwrap(), b"pkg-1");
        assert!(r.fetch_content(&"a".repeat(64)).is_err());
    }

    #[test]
    fn dm_and_qos_examples() {
        assert_eq!(compute_dm(&[2, 5], &[2, 5], &[0.5, 0.5]).unwrap(), 0.0);
        assert_eq!(compute_dm(&[1, 0], &[3, 2], &[0.5, 0.5]).unwrap(), 2.0);
        assert_eq!(compute_dm(&[1, 7], &[4, 0], &[1.0, 0.0]).unwrap(), 3.0);
        assert!(compute_dm(&[1, 0], &[3, 2], &[0.5, 0.6]).is_err());
        assert_eq!(compute_qos(0.5, 0.5, 1.0), 0.25);
        assert_eq!(compute_qos(0.5, 0.5, 0.0), 0.5);
        assert_eq!(compute_qos(0.8, 0.6, 4.0), 2.0 * compute_qos(0.8, 0.6, 8.0));
    }

    #[test]
    fn allocation_orders_filters_and_pays() {
        let mut r = reg();
        let close = r.add_model("alice", b"close", "", "target_localization", &[3, 1, 3]).unwrap();
        let mid = r.add_model("bob", b"mid", "", "target_localization", &[2, 1, 2]).unwrap();
        r.add_model("carol", b"far", "", "target_localization", &[1, 1, 0]).unwrap();
        r.add_model("dave", b"mine", "", "target_localization", &[3, 1, 3]).unwrap();
        let total = r.total_balance();
        let req = AllocationRequest::new("target_localization", vec![3, 1, 3], 2, 7);
        let res = r.allocate_models(&req, "dave").unwrap();
        assert_eq!(res.cids(), vec![close.cid.clone(), mid.cid.clone()]);
        assert!(!res.short);
        assert_eq!(r.total_balance(), total);
        assert_eq!(r.user("dave").unwrap().balance, 86);
        assert_eq!(r.user("alice").unwrap().balance, 107);
        // unreviewed allocations pull reputation to total/count
        assert_eq!(r.user("alice").unwrap().reputation, 0);
        assert_eq!(r.model("target_localization", &close.cid).unwrap().allocation_count, 1);

        let mut strict = req.clone();
        strict.min_model_rep = 4000;
        strict.count = 5;
        let res = r.allocate_models(&strict, "dave").unwrap();
        // alice's and bob's models now sit at reputation 0
        assert_eq!(res.records.len(), 1);
        assert!(res.short);
        assert!(matches!(
            r.allocate_models(&AllocationRequest::new("target_localization", vec![3, 1, 3], 100, 7), "dave"),
            Err(RegistryError::InsufficientBalance { .. })
        ));
        assert!(matches!(
            r.allocate_models(&AllocationRequest::new("chess", vec![1], 1, 0), "dave"),
            Err(RegistryError::UnknownApplication(_))
        ));
    }

    #[test]
    fn low_reputation_model_excluded() {
        let mut r = reg();
        let m = r.add_model("alice", b"m", "", "maze", &[1, 10, 10]).unwrap();
        r.allocate_models(&AllocationRequest::new("maze", vec![1, 10, 10], 1, 0), "bob").unwrap();
        r.submit_review("bob", &m.cid, 0.3).unwrap();
        assert_eq!(r.model("maze", &m.cid).unwrap().reputation, 3000);
        let mut req = AllocationRequest::new("maze", vec![1, 10, 10], 1, 0);
        req.min_model_rep = 4000;
        assert!(r.allocate_models(&req, "carol").unwrap().records.is_empty());
    }

    #[test]
    fn reviews_follow_reputation_rule() {
        let mut r = reg();
        let mut cids = Vec::new();
        for i in 0..4u8 {
            cids.push(r.add_model("alice", &[i], "", "fleet", &[3, 8, 2]).unwrap().cid);
        }
        r.allocate_models(&AllocationRequest::new("fleet", vec![3, 8, 2], 4, 1), "bob").unwrap();
        for (c, v) in cids.iter().zip([1.0, 1.0, 0.5, 0.5]) {
            r.submit_review("bob", c, v).unwrap();
        }
        let alice = r.user("alice").unwrap();
        assert_eq!((alice.total_review, alice.models_alloc_count), (30000, 4));
        assert_eq!(alice.reputation, 7500);
        assert_eq!(r.model("fleet", &cids[0]).unwrap().reputation, 10000);
        assert!(matches!(r.submit_review("bob", &cids[0], 1.0), Err(RegistryError::NoPendingAllocation { .. })));
        assert!(matches!(r.submit_review("bob", &cids[1], 1.5), Err(RegistryError::InvalidReview(_))));
        assert!(matches!(r.submit_review("carol", &cids[1], 0.5), Err(RegistryError::NoPendingAllocation { .. })));
    }

    #[test]
    fn replay_and_round_trip() {
        let mut r = reg();
        let a = r.add_model("alice", b"a", "", "maze", &[1, 9, 9]).unwrap();
        r.add_model("bob", b"b", "", "maze", &[2, 9, 9]).unwrap();
        r.allocate_models(&AllocationRequest::new("maze", vec![1, 9, 9], 2, 3), "carol").unwrap();
        r.submit_review("carol", &a.cid, 0.8).unwrap();
        assert_eq!(r.verify_ledger(), None);
        let replayed = Registry::replay(r.ledger(), r.store().clone()).unwrap();
        assert_eq!(replayed.export_state(), r.export_state());
        assert_eq!(replayed.export_ledger(), r.export_ledger());

        let dir = tempfile::tempdir().unwrap();
        let d = dir.path().join("reg");
        let mut disk = Registry::init_dir(&d).unwrap();
        disk.add_user("x", 5).unwrap();
        disk.save_dir(&d).unwrap();
        let back = Registry::open_dir(&d).unwrap();
        assert_eq!(back.export_state(), disk.export_state());
        assert!(Registry::init_dir(&d).is_err());
    }

    #[test]
    fn canonical_state_has_sorted_keys() {
        let r = reg();
        let s = r.export_state();
        let alloc = s.find("\"allocations\"").unwrap();
        let clock = s.find("\"clock\"").unwrap();
        let models = s.find("\"models\"").unwrap();
        let users = s.find("\"users\"").unwrap();
        assert!(alloc < clock && clock < models && models < users);
    }
}
