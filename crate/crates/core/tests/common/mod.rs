//! Independent oracles shared by the integration suites.
#![allow(dead_code)]

use std::collections::BTreeMap;

use medc_core::approximator::{
    cross_entropy, loss_and_gradients, ppo_loss, value_mse, Activation, ForwardVars, Graph, LayerSpec, NetworkSpec,
    ParamSet, PpoLossConfig, Var,
};
use medc_core::envs::ObservationStack;
use medc_core::registry::{digest_hex, ContentStore, ModelRecord, Registry, RegistryState, User, SCALE};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Conv(tanh) → dense(tanh) net of 120 parameters on 2×4×4 input.
pub fn small_spec() -> NetworkSpec {
    NetworkSpec {
        channels: 2,
        height: 4,
        width: 4,
        layers: vec![
            LayerSpec::Conv { filters: 2, kernel: 3, stride: 1, activation: Activation::Tanh },
            LayerSpec::Dense { units: 6, activation: Activation::Tanh },
        ],
        actions: 3,
    }
}

pub fn random_params(spec: &NetworkSpec, rng: &mut ChaCha8Rng) -> ParamSet {
    let mut p = medc_core::approximator::build_network(spec, rng.gen()).unwrap();
    for t in &mut p.tensors {
        for v in t.data_mut() {
            *v = rng.gen_range(-0.8..0.8);
        }
    }
    p
}

pub fn random_obs(spec: &NetworkSpec, n: usize, rng: &mut ChaCha8Rng) -> Vec<ObservationStack> {
    (0..n)
        .map(|_| {
            let data = (0..spec.channels * spec.height * spec.width).map(|_| rng.gen_range(-1.0..1.0)).collect();
            ObservationStack::from_data(spec.channels, spec.height, spec.width, data).unwrap()
        })
        .collect()
}

/// Naive forward pass: per-sample loops, channel-first indexing, no GEMM.
pub fn naive_forward(spec: &NetworkSpec, params: &ParamSet, obs: &ObservationStack) -> (Vec<f64>, f64) {
    let t = &params.tensors;
    // activation as (h, w, c) grid, or flat vector after dense layers
    let (mut h, mut w, mut c) = (spec.height, spec.width, spec.channels);
    let mut grid: Vec<Vec<Vec<f64>>> =
        (0..h).map(|y| (0..w).map(|x| (0..c).map(|ch| obs.data()[(ch * h + y) * w + x]).collect()).collect()).collect();
    let mut flat: Option<Vec<f64>> = None;
    let act = |a: Activation, v: f64| match a {
        Activation::Relu => v.max(0.0),
        Activation::Tanh => v.tanh(),
        Activation::Identity => v,
    };
    for (i, layer) in spec.layers.iter().enumerate() {
        let (wt, bt) = (t[2 * i].data(), t[2 * i + 1].data());
        match *layer {
            LayerSpec::Conv { filters, kernel: k, stride: s, activation } => {
                let (oh, ow) = ((h - k) / s + 1, (w - k) / s + 1);
                let mut out = vec![vec![vec![0.0; filters]; ow]; oh];
                for (oy, row) in out.iter_mut().enumerate() {
                    for (ox, cell) in row.iter_mut().enumerate() {
                        for (f, o) in cell.iter_mut().enumerate() {
                            let mut acc = bt[f];
                            for ky in 0..k {
                                for kx in 0..k {
                                    for ch in 0..c {
                                        acc +=
                                            wt[((f * k + ky) * k + kx) * c + ch] * grid[oy * s + ky][ox * s + kx][ch];
                                    }
                                }
                            }
                            *o = act(activation, acc);
                        }
                    }
                }
                grid = out;
                (h, w, c) = (oh, ow, filters);
            }
            LayerSpec::Dense { units, activation } => {
                let x = flat.take().unwrap_or_else(|| grid.iter().flatten().flatten().copied().collect());
                flat = Some(dense(wt, bt, &x, units).into_iter().map(|v| act(activation, v)).collect());
            }
        }
    }
    let x = flat.unwrap_or_else(|| grid.iter().flatten().flatten().copied().collect());
    let k = t.len();
    let logits = dense(t[k - 4].data(), t[k - 3].data(), &x, spec.actions);
    let value = dense(t[k - 2].data(), t[k - 1].data(), &x, 1)[0];
    (logits, value)
}

fn dense(w: &[f64], b: &[f64], x: &[f64], units: usize) -> Vec<f64> {
    (0..units).map(|u| b[u] + (0..x.len()).map(|i| w[u * x.len() + i] * x[i]).sum::<f64>()).collect()
}

pub fn naive_log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z = logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln() + m;
    logits.iter().map(|l| l - z).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    Ppo,
    ValueMse,
    CrossEntropy,
}

/// Maximum relative error between analytic and central-difference gradients.
pub fn gradient_check(kind: LossKind, seed: u64, h: f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = small_spec();
    let params = random_params(&spec, &mut rng);
    let n = 6;
    let obs = random_obs(&spec, n, &mut rng);
    let refs: Vec<&ObservationStack> = obs.iter().collect();
    let actions: Vec<usize> = (0..n).map(|_| rng.gen_range(0..spec.actions)).collect();
    let advantages: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let returns: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    // old log-probs near the current ones so some ratios clip and some do not
    let old: Vec<f64> = obs
        .iter()
        .zip(&actions)
        .map(|(o, &a)| naive_log_softmax(&naive_forward(&spec, &params, o).0)[a] + rng.gen_range(-0.4..0.4))
        .collect();
    let cfg = PpoLossConfig::default();
    let build = |g: &mut Graph, fw: ForwardVars| -> Result<(Var, ()), medc_core::approximator::ApproxError> {
        Ok(match kind {
            LossKind::Ppo => (ppo_loss(g, fw, &actions, &old, &advantages, &returns, &cfg)?.0, ()),
            LossKind::ValueMse => (value_mse(g, fw, &returns)?, ()),
            LossKind::CrossEntropy => (cross_entropy(g, fw, &actions)?, ()),
        })
    };
    let (_, grads, ()) = loss_and_gradients(&spec, &params, &refs, build).unwrap();
    let loss_at = |p: &ParamSet| loss_and_gradients(&spec, p, &refs, build).unwrap().0;
    let mut worst: f64 = 0.0;
    for (ti, t) in params.tensors.iter().enumerate() {
        for i in 0..t.len() {
            let mut plus = params.clone();
            plus.tensors[ti].data_mut()[i] += h;
            let mut minus = params.clone();
            minus.tensors[ti].data_mut()[i] -= h;
            let numeric = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
            let analytic = grads.tensors[ti].data()[i];
            let denom = analytic.abs().max(numeric.abs()).max(1e-7);
            worst = worst.max((analytic - numeric).abs() / denom);
        }
    }
    worst
}

/// Direct transcription of the GAE recursion as a double sum:
/// `Â_t = Σ_{l≥0} (γλ)^l δ_{t+l}`, truncated at the first terminal flag.
pub fn gae_double_loop(
    rewards: &[f64],
    values: &[f64],
    flags: &[bool],
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
) -> Vec<f64> {
    let n = rewards.len();
    let next_value = |t: usize| {
        if flags[t] {
            0.0
        } else if t + 1 < n {
            values[t + 1]
        } else {
            bootstrap
        }
    };
    let delta: Vec<f64> = (0..n).map(|t| rewards[t] + gamma * next_value(t) - values[t]).collect();
    (0..n)
        .map(|t| {
            let mut sum = 0.0;
            let mut weight = 1.0;
            for l in t..n {
                sum += weight * delta[l];
                if flags[l] {
                    break;
                }
                weight *= gamma * lambda;
            }
            sum
        })
        .collect()
}

/// A registry whose ledger has at least `entries` entries, built from a
/// seeded mix of registrations, submissions, allocations and reviews.
pub fn scripted_registry(entries: usize, seed: u64) -> Registry {
    use medc_core::registry::AllocationRequest;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = Registry::in_memory();
    let users: Vec<String> = (0..12).map(|i| format!("user{i:02}")).collect();
    for u in &users {
        r.add_user(u, 1_000_000).unwrap();
    }
    let mut m = 0u32;
    while r.ledger().len() < entries {
        match rng.gen_range(0..4) {
            0 => {
                let owner = &users[rng.gen_range(0..users.len())];
                let details = vec![rng.gen_range(1..5), 1, rng.gen_range(0..5)];
                let bytes = format!("package {m} {seed}").into_bytes();
                m += 1;
                r.add_model(owner, &bytes, "scripted", "target_localization", &details).unwrap();
            }
            1 | 2 => {
                let requester = users[rng.gen_range(0..users.len())].clone();
                let req = AllocationRequest::new(
                    "target_localization",
                    vec![rng.gen_range(1..5), 1, rng.gen_range(0..5)],
                    rng.gen_range(1..3),
                    rng.gen_range(0..20),
                );
                // an empty pool is fine; it still records the request
                r.allocate_models(&req, &requester).unwrap();
            }
            _ => {
                let pending: Vec<(String, String)> = r
                    .state()
                    .allocations
                    .iter()
                    .filter(|a| !a.reviewed)
                    .map(|a| (a.requester.clone(), a.cid.clone()))
                    .collect();
                if let Some((who, cid)) = pending.get(rng.gen_range(0..pending.len().max(1))) {
                    r.submit_review(who, cid, rng.gen_range(0..=10_000) as f64 / 10_000.0).unwrap();
                }
            }
        }
    }
    r
}

/// Plays `episodes` uniformly random episodes and checks the environment
/// invariants after every step. Returns the number of steps taken.
pub fn audit_random_episodes(cfg: &medc_core::envs::EnvConfig, episodes: usize, seed: u64) -> Result<usize, String> {
    use medc_core::envs::{make_env, EnvKind, Environment, RewardMode, NUM_ACTIONS};
    let mut env = make_env(cfg).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cap = cfg.max_episode_length;
    let mut steps = 0;
    for ep in 0..episodes {
        let mut obs = env.reset();
        if cfg.kind == EnvKind::Maze && !env.walls().is_connected() {
            return Err(format!("episode {ep}: maze free cells are not connected"));
        }
        let mut total = 0.0;
        let mut len = 0;
        loop {
            check_observations(cfg, &obs).map_err(|e| format!("episode {ep} step {len}: {e}"))?;
            let actions: Vec<usize> = (0..cfg.agents).map(|_| rng.gen_range(0..NUM_ACTIONS)).collect();
            let r = env.step(&actions).map_err(|e| e.to_string())?;
            len += 1;
            steps += 1;
            total += r.reward;
            for p in env.positions() {
                if !env.walls().contains(*p) || env.walls().is_wall(*p) {
                    return Err(format!("episode {ep}: agent at {p:?} is off-grid or inside a wall"));
                }
            }
            if let Environment::Fleet(f) = &env {
                for v in 0..cfg.agents {
                    if f.load(v) > cfg.capacity {
                        return Err(format!("episode {ep}: vehicle {v} carries {} > {}", f.load(v), cfg.capacity));
                    }
                }
            }
            if cfg.kind == EnvKind::TargetLocalization
                && cfg.reward_mode == RewardMode::Sparse
                && r.reward != 0.0
                && r.reward != 1.0
            {
                return Err(format!("episode {ep}: sparse reward {}", r.reward));
            }
            if len > cap {
                return Err(format!("episode {ep} exceeded {cap} steps"));
            }
            obs = r.observations;
            if r.done {
                break;
            }
        }
        if cfg.kind == EnvKind::TargetLocalization
            && cfg.reward_mode == RewardMode::Sparse
            && total != 0.0
            && total != 1.0
        {
            return Err(format!("episode {ep}: sparse return {total}"));
        }
    }
    Ok(steps)
}

fn check_observations(cfg: &medc_core::envs::EnvConfig, obs: &[ObservationStack]) -> Result<(), String> {
    if obs.len() != cfg.agents {
        return Err(format!("{} observations for {} agents", obs.len(), cfg.agents));
    }
    for o in obs {
        if o.channels() != medc_core::envs::OBSERVATION_CHANNELS {
            return Err(format!("{} channels", o.channels()));
        }
        let own: f64 = o.channel(0).iter().sum();
        if own != 1.0 || o.channel(0).iter().any(|v| *v != 0.0 && *v != 1.0) {
            return Err("own-location map is not one-hot".into());
        }
        if o.channel(4).iter().any(|v| *v != 0.0 && *v != 1.0) {
            return Err("walls map is not binary".into());
        }
        if cfg.kind != medc_core::envs::EnvKind::Fleet && o.channel(3).iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err("visit counts outside [0, 1]".into());
        }
    }
    Ok(())
}

/// Random allocation pool: owners with reputations, models with reputations
/// and detail tuples, and a request.
#[derive(Debug, Clone)]
pub struct Pool {
    pub owners: Vec<u64>,
    pub models: Vec<(usize, u64, [u64; 3])>,
    pub request: [u64; 3],
    pub weights: Vec<f64>,
    pub count: usize,
    pub min_model_rep: u64,
    pub min_owner_rep: u64,
    pub requester: usize,
}

pub fn pool() -> impl Strategy<Value = Pool> {
    (1usize..6, 0usize..=20).prop_flat_map(|(n_owners, n_models)| {
        (
            prop::collection::vec(0u64..=SCALE, n_owners),
            prop::collection::vec((0..n_owners, 0u64..=SCALE, prop::array::uniform3(0u64..6)), n_models),
            prop::array::uniform3(0u64..6),
            prop::collection::vec(0u32..10, 3).prop_filter("some weight", |w| w.iter().any(|x| *x > 0)),
            1usize..6,
            prop_oneof![Just(0u64), 0u64..=SCALE],
            prop_oneof![Just(0u64), 0u64..=SCALE],
            0..n_owners + 1,
        )
            .prop_map(|(owners, models, request, raw, count, min_model_rep, min_owner_rep, requester)| {
                let total: u32 = raw.iter().sum();
                let weights = raw.iter().map(|&w| w as f64 / total as f64).collect();
                Pool { owners, models, request, weights, count, min_model_rep, min_owner_rep, requester }
            })
    })
}

/// Registry holding exactly the pool, plus a rich requester `req` when the
/// requester index is past the owner list.
pub fn registry_for(p: &Pool) -> (Registry, String) {
    let mut users = BTreeMap::new();
    for (i, &rep) in p.owners.iter().enumerate() {
        let address = format!("owner{i}");
        users.insert(
            address.clone(),
            User { address, reputation: rep, models_alloc_count: 1, total_review: rep, balance: 10_000 },
        );
    }
    let requester = if p.requester < p.owners.len() { format!("owner{}", p.requester) } else { "req".to_string() };
    users.entry(requester.clone()).or_insert(User {
        address: requester.clone(),
        reputation: 5_000,
        models_alloc_count: 0,
        total_review: 0,
        balance: 10_000,
    });
    let mut models = BTreeMap::new();
    for (j, &(owner, rep, details)) in p.models.iter().enumerate() {
        let cid = digest_hex(format!("model {j}").as_bytes());
        let rec = ModelRecord {
            owner: format!("owner{owner}"),
            cid: cid.clone(),
            reputation: rep,
            allocation_count: 1,
            total_model_review: rep,
            description: String::new(),
            application: "target_localization".into(),
            details: details.to_vec(),
        };
        models.insert(cid, rec);
    }
    let state = RegistryState {
        users,
        models: BTreeMap::from([("target_localization".to_string(), models)]),
        allocations: Vec::new(),
        clock: 1,
    };
    let genesis = Registry::in_memory().export_ledger();
    let state_json = serde_json::to_string(&state).unwrap();
    (Registry::import(&state_json, &genesis, ContentStore::memory()).unwrap(), requester)
}

/// Brute force: a model is selected iff fewer than `count` qualifying models
/// beat it, and its position is the number that do.
pub fn top_k_oracle(p: &Pool, requester: &str) -> Vec<String> {
    let mut cands = Vec::new();
    for (j, &(owner, rep, details)) in p.models.iter().enumerate() {
        let owner_name = format!("owner{owner}");
        if owner_name == requester || rep < p.min_model_rep || p.owners[owner] < p.min_owner_rep {
            continue;
        }
        let dm: f64 =
            details.iter().zip(&p.request).zip(&p.weights).map(|((&a, &b), &w)| w * a.abs_diff(b) as f64).sum();
        let qos = (p.owners[owner] as f64 / SCALE as f64) * (rep as f64 / SCALE as f64) / dm.max(0.5);
        cands.push((qos, rep, digest_hex(format!("model {j}").as_bytes())));
    }
    let beats = |a: &(f64, u64, String), b: &(f64, u64, String)| {
        a.0 > b.0 || (a.0 == b.0 && (a.1 > b.1 || (a.1 == b.1 && a.2 < b.2)))
    };
    let mut picked: Vec<(usize, String)> = cands
        .iter()
        .map(|c| (cands.iter().filter(|o| beats(o, c)).count(), c.2.clone()))
        .filter(|(better, _)| *better < p.count)
        .collect();
    picked.sort();
    picked.into_iter().map(|(_, c)| c).collect()
}
