use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::package::ModelPackage;
use super::HarnessError;
use crate::registry::{from_fixed, to_fixed, AllocationRequest, Registry, RegistryError};

/// One registry operation against a state directory.
#[derive(Debug, Clone, PartialEq)]
pub enum RegistryCommand {
    Init,
    AddUser {
        address: String,
        balance: u64,
    },
    /// Registers a model package file; application and details come from its metadata.
    AddModel {
        owner: String,
        package: PathBuf,
        description: Option<String>,
    },
    Allocate {
        requester: String,
        application: String,
        details: Vec<u64>,
        weights: Option<Vec<f64>>,
        min_model_rep: f64,
        min_owner_rep: f64,
        count: usize,
        price: u64,
        /// Directory receiving `<cid>.medc` for every allocated model.
        out: PathBuf,
    },
    Review {
        requester: String,
        cid: String,
        score: f64,
    },
    Balances,
    VerifyLedger,
    ExportState {
        out: Option<PathBuf>,
    },
}

/// Executes `cmd` on the registry stored in `dir` and returns its textual output.
/// Mutating commands persist the directory only on success.
pub fn registry_command(dir: &Path, cmd: &RegistryCommand) -> Result<String, HarnessError> {
    let mut out = String::new();
    if *cmd == RegistryCommand::Init {
        let r = Registry::init_dir(dir)?;
        writeln!(out, "initialized {} ({} ledger entry)", dir.display(), r.ledger().len()).ok();
        return Ok(out);
    }
    let mut reg = Registry::open_dir(dir)?;
    match cmd {
        RegistryCommand::Init => unreachable!(),
        RegistryCommand::AddUser { address, balance } => {
            let u = reg.add_user(address, *balance)?;
            reg.save_dir(dir)?;
            writeln!(out, "{} balance {} reputation {:.4}", u.address, u.balance, from_fixed(u.reputation)).ok();
        }
        RegistryCommand::AddModel { owner, package, description } => {
            let bytes = fs::read(package)?;
            let pkg = ModelPackage::from_bytes(&bytes)?;
            let m = &pkg.metadata;
            let desc = description.as_deref().unwrap_or(&m.description);
            let rec = reg.add_model(owner, &bytes, desc, &m.application, &m.environment_details)?;
            reg.save_dir(dir)?;
            writeln!(out, "{}", rec.cid).ok();
        }
        RegistryCommand::Allocate {
            requester,
            application,
            details,
            weights,
            min_model_rep,
            min_owner_rep,
            count,
            price,
            out: dest,
        } => {
            let mut req = AllocationRequest::new(application, details.clone(), *count, *price);
            if let Some(w) = weights {
                req.weights = w.clone();
            }
            let rep = |x: f64| {
                to_fixed(x).ok_or_else(|| RegistryError::InvalidRequest(format!("reputation floor {x} outside [0, 1]")))
            };
            req.min_model_rep = rep(*min_model_rep)?;
            req.min_owner_rep = rep(*min_owner_rep)?;
            let res = reg.allocate_models(&req, requester)?;
            fs::create_dir_all(dest)?;
            for rec in &res.records {
                fs::write(dest.join(format!("{}.medc", rec.cid)), reg.fetch_content(&rec.cid)?)?;
            }
            reg.save_dir(dir)?;
            for (rec, q) in res.records.iter().zip(&res.qos) {
                writeln!(out, "{} qos {:.6} owner {}", rec.cid, q, rec.owner).ok();
            }
            if res.short {
                writeln!(out, "only {} of {} requested models qualified", res.records.len(), count).ok();
            }
        }
        RegistryCommand::Review { requester, cid, score } => {
            let (u, m) = reg.submit_review(requester, cid, *score)?;
            reg.save_dir(dir)?;
            writeln!(out, "model {} reputation {:.4}", m.cid, from_fixed(m.reputation)).ok();
            writeln!(out, "owner {} reputation {:.4}", u.address, from_fixed(u.reputation)).ok();
        }
        RegistryCommand::Balances => {
            for u in reg.state().users.values() {
                writeln!(out, "{} {} {:.4}", u.address, u.balance, from_fixed(u.reputation)).ok();
            }
        }
        RegistryCommand::VerifyLedger => match reg.verify_ledger() {
            None => {
                writeln!(out, "ledger ok ({} entries)", reg.ledger().len()).ok();
            }
            Some(i) => return Err(RegistryError::CorruptLedger(i).into()),
        },
        RegistryCommand::ExportState { out: dest } => {
            let json = reg.export_state();
            match dest {
                Some(p) => fs::write(p, &json)?,
                None => out.push_str(&json),
            }
        }
    }
    Ok(out)
}
