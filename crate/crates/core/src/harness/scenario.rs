use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{Baseline, ExpertSpec, ScenarioConfig};
use super::curves::{aggregate, sort_rows, write_rows, CurveRow, CurveSink};
use super::package::{ModelPackage, PackageMetadata};
use super::HarnessError;
use crate::approximator::{NetworkSpec, ParamSet};
use crate::envs::{EnvConfig, EnvKind, RewardMode};
use crate::medc::{frl_train, ExpertHandle, ExpertSource, IlHook, MedcHook, MedcStats};
use crate::registry::{compute_dm, compute_qos, from_fixed, Registry, INITIAL_REPUTATION};
use crate::trainer::{
    derive_seed, run, CollectStats, EvalReport, NoHook, TrainError, TrainObserver, Trainer, UpdateStats,
};

/// Registry application key and environment-detail tuple of `env`.
pub fn env_details(env: &EnvConfig) -> (&'static str, Vec<u64>) {
    match env.kind {
        EnvKind::TargetLocalization => ("target_localization", vec![env.agents as u64, 1, env.walls as u64]),
        EnvKind::Fleet => ("fleet", vec![env.agents as u64, env.customers as u64, env.capacity as u64]),
        EnvKind::Maze => ("maze", vec![env.agents as u64, env.height as u64, env.width as u64]),
    }
}

/// `AyWz` label for target localization, a short description otherwise.
pub fn env_label(env: &EnvConfig) -> String {
    match env.kind {
        EnvKind::TargetLocalization => format!("A{}W{}", env.agents, env.walls),
        EnvKind::Fleet => format!("fleet-{}v{}c", env.agents, env.customers),
        EnvKind::Maze => format!("maze-{}a", env.agents),
    }
}

/// Builds expert handles for `target`. Loaded experts without an explicit
/// weight share QoS-proportional weights; synthetic ones default to 1.
pub fn load_experts(specs: &[(String, ExpertSpec)], target: &EnvConfig) -> Result<Vec<ExpertHandle>, HarnessError> {
    let (app, wanted) = env_details(target);
    let weights = vec![1.0 / wanted.len() as f64; wanted.len()];
    let mut out = Vec::with_capacity(specs.len());
    // (index into out, qos) for loaded experts that need a derived weight
    let mut derived: Vec<(usize, f64)> = Vec::new();
    for (name, spec) in specs {
        let (handle, qos) = match spec {
            ExpertSpec::Random { similarity } => (ExpertHandle::random(similarity.unwrap_or(1.0))?, None),
            ExpertSpec::Biased { action, similarity } => {
                (ExpertHandle::biased(*action, similarity.unwrap_or(1.0))?, None)
            }
            ExpertSpec::File { path, malicious, similarity } => {
                let pkg = ModelPackage::read(path)?;
                let rep = from_fixed(INITIAL_REPUTATION);
                build_loaded(name, pkg, *malicious, *similarity, rep, rep, app, &wanted, &weights, target)?
            }
            ExpertSpec::Registry { dir, cid, malicious, similarity } => {
                let reg = Registry::open_dir(dir)?;
                let pkg = ModelPackage::from_bytes(&reg.fetch_content(cid)?)?;
                let record = reg
                    .state()
                    .models
                    .values()
                    .find_map(|m| m.get(cid))
                    .ok_or_else(|| HarnessError::Expert(format!("{name}: {cid} is not a registered model")))?;
                let owner = reg.user(&record.owner).map_or(INITIAL_REPUTATION, |u| u.reputation);
                let (rep_i, rep_m) = (from_fixed(owner), from_fixed(record.reputation));
                build_loaded(name, pkg, *malicious, *similarity, rep_i, rep_m, app, &wanted, &weights, target)?
            }
        };
        if let Some(q) = qos {
            derived.push((out.len(), q));
        }
        out.push(handle);
    }
    let total: f64 = derived.iter().map(|(_, q)| q).sum();
    for (i, q) in derived {
        out[i].similarity = if total > 0.0 { q / total } else { 1.0 };
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn build_loaded(
    name: &str,
    pkg: ModelPackage,
    malicious: bool,
    similarity: Option<f64>,
    rep_i: f64,
    rep_m: f64,
    app: &str,
    wanted: &[u64],
    weights: &[f64],
    target: &EnvConfig,
) -> Result<(ExpertHandle, Option<f64>), HarnessError> {
    let m = &pkg.metadata;
    if (m.network.height, m.network.width) != (target.height, target.width) {
        return Err(HarnessError::Expert(format!(
            "{name}: expert expects a {}x{} grid, scenario uses {}x{}",
            m.network.height, m.network.width, target.height, target.width
        )));
    }
    let qos = if m.application == app && m.environment_details.len() == wanted.len() {
        compute_qos(rep_i, rep_m, compute_dm(&m.environment_details, wanted, weights)?)
    } else {
        0.0
    };
    let source = ExpertSource {
        application: m.application.clone(),
        details: m.environment_details.clone(),
        description: m.description.clone(),
    };
    let rs = similarity.unwrap_or(1.0);
    let handle = if malicious {
        ExpertHandle::malicious(pkg.metadata.network, pkg.params, rs)?
    } else {
        ExpertHandle::trained(pkg.metadata.network, pkg.params, rs)?
    }
    .with_source(source);
    Ok((handle, similarity.is_none().then_some(qos)))
}

/// Result of one seed of a scenario.
#[derive(Debug, Clone)]
pub struct SeedOutcome {
    pub seed: u64,
    pub rows: Vec<CurveRow>,
    pub curve: PathBuf,
    pub package: PathBuf,
    /// Per-horizon expert statistics of MEDC runs.
    pub medc: Vec<MedcStats>,
    pub collect: Vec<CollectSummary>,
    pub spec: NetworkSpec,
    pub params: ParamSet,
}

/// Compact per-horizon collection record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollectSummary {
    pub steps: usize,
    pub episodes: usize,
    pub mean_episode_length: Option<f64>,
    pub hook_actions: usize,
    pub min_hook_prob: Option<f64>,
}

impl CollectSummary {
    fn from_stats(c: &CollectStats) -> Self {
        let n = c.episode_lengths.len();
        Self {
            steps: c.steps,
            episodes: n,
            mean_episode_length: (n > 0).then(|| c.episode_lengths.iter().sum::<usize>() as f64 / n as f64),
            hook_actions: c.hook_actions,
            min_hook_prob: c.min_hook_prob,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioOutcome {
    pub seeds: Vec<SeedOutcome>,
    pub aggregate: PathBuf,
}

impl ScenarioOutcome {
    pub fn rows(&self) -> Vec<CurveRow> {
        let mut rows: Vec<CurveRow> = self.seeds.iter().flat_map(|s| s.rows.clone()).collect();
        sort_rows(&mut rows);
        rows
    }
}

struct RunObserver<'a> {
    curve: CurveSink,
    collect: Vec<CollectSummary>,
    checkpoint: Option<(usize, PathBuf)>,
    meta: &'a PackageMetadata,
    spec: &'a NetworkSpec,
    horizon: usize,
}

impl TrainObserver for RunObserver<'_> {
    fn on_eval(&mut self, report: &EvalReport) -> Result<(), TrainError> {
        self.curve.on_eval(report)
    }

    fn on_update(
        &mut self,
        update: usize,
        params: &ParamSet,
        c: &CollectStats,
        _: &UpdateStats,
    ) -> Result<(), TrainError> {
        self.collect.push(CollectSummary::from_stats(c));
        if let Some((every, path)) = &self.checkpoint {
            if *every > 0 && update.is_multiple_of(*every) {
                let pkg = ModelPackage {
                    metadata: PackageMetadata {
                        network: self.spec.clone(),
                        training_steps: (self.collect.len() * self.horizon) as u64,
                        ..self.meta.clone()
                    },
                    params: params.clone(),
                };
                pkg.write(path).map_err(|e| TrainError::Hook(e.to_string()))?;
            }
        }
        Ok(())
    }
}

/// Runs every seed of `cfg`, writing per-seed curves, the median curve, and
/// the final model package of each seed into `cfg.output`.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioOutcome, HarnessError> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.output)?;
    let experts = match cfg.baseline {
        Baseline::Medc | Baseline::Il => load_experts(&cfg.experts, &cfg.env)?,
        _ => Vec::new(),
    };
    let mut seeds = Vec::with_capacity(cfg.seeds.len());
    let mut all_rows = Vec::new();
    for &seed in &cfg.seeds {
        let finished = if cfg.resume { load_seed(cfg, seed)? } else { None };
        let outcome = match finished {
            Some(o) => o,
            None => run_seed(cfg, &experts, seed)?,
        };
        all_rows.extend(outcome.rows.iter().cloned());
        seeds.push(outcome);
    }
    sort_rows(&mut all_rows);
    let aggregate_path = cfg.output.join("curve_median.csv");
    write_rows(&aggregate_path, &aggregate(&all_rows))?;
    Ok(ScenarioOutcome { seeds, aggregate: aggregate_path })
}

fn run_seed(cfg: &ScenarioConfig, experts: &[ExpertHandle], seed: u64) -> Result<SeedOutcome, HarnessError> {
    let mut env = cfg.env.clone();
    env.seed = seed;
    if cfg.baseline == Baseline::Rs {
        env.reward_mode = RewardMode::Shaped;
    }
    let ppo = crate::trainer::PpoConfig { seed, ..cfg.ppo.clone() };
    let (app, details) = env_details(&env);
    let curve_path = cfg.output.join(format!("curve_seed{seed}.csv"));
    let package_path = cfg.output.join(format!("model_seed{seed}.medc"));
    let mut meta = PackageMetadata {
        application: app.to_string(),
        environment_details: details,
        description: format!("{} {} seed {seed}", cfg.baseline.name(), env_label(&env)),
        network: NetworkSpec::default_for(
            crate::envs::OBSERVATION_CHANNELS,
            env.height,
            env.width,
            crate::envs::NUM_ACTIONS,
        ),
        training_steps: 0,
    };
    let spec = meta.network.clone();
    let mut obs = RunObserver {
        curve: CurveSink::create(&curve_path, seed)?,
        collect: Vec::new(),
        checkpoint: cfg.checkpoint_every.map(|n| (n, cfg.output.join(format!("checkpoint_seed{seed}.medc")))),
        meta: &meta.clone(),
        spec: &spec,
        horizon: ppo.horizon,
    };
    let mut medc = Vec::new();
    let (params, steps) = match cfg.baseline {
        Baseline::Sparse | Baseline::Rs => {
            let mut t = Trainer::new(&env, &ppo)?;
            let out = run(&mut t, &mut NoHook, &mut obs)?;
            (out.params, out.steps)
        }
        Baseline::Medc => {
            let mut hook = MedcHook::new(cfg.medc, experts.to_vec(), derive_seed(seed, 500))?;
            let mut t = Trainer::new(&env, &ppo)?;
            let out = run(&mut t, &mut hook, &mut obs)?;
            medc = hook.horizons().to_vec();
            fs::write(cfg.output.join(format!("medc_seed{seed}.json")), serde_json::to_string(&medc)?)?;
            (out.params, out.steps)
        }
        Baseline::Il => {
            let mut hook =
                IlHook::new(experts.to_vec(), ppo.learning_rate, ppo.minibatch_size, derive_seed(seed, 600))?;
            let mut t = Trainer::new(&env, &ppo)?;
            let out = run(&mut t, &mut hook, &mut obs)?;
            (out.params, out.steps)
        }
        Baseline::Frl => {
            let users: Vec<EnvConfig> = cfg
                .frl_users
                .iter()
                .enumerate()
                .map(|(i, u)| EnvConfig { seed: derive_seed(seed, 200 + i as u64), ..u.clone() })
                .collect();
            let out = frl_train(&users, &env, &ppo, &mut obs)?;
            (out.params, out.steps)
        }
    };
    meta.training_steps = steps as u64;
    let collect = std::mem::take(&mut obs.collect);
    fs::write(cfg.output.join(format!("collect_seed{seed}.json")), serde_json::to_string(&collect)?)?;
    // written last; its presence marks the seed as finished
    ModelPackage { metadata: meta, params: params.clone() }.write(&package_path)?;
    Ok(SeedOutcome {
        seed,
        rows: obs.curve.into_rows(),
        curve: curve_path,
        package: package_path,
        medc,
        collect,
        spec,
        params,
    })
}

/// Trains a plain-PPO expert on `env` and writes its package to `path`.
/// Outputs of a seed that already ran to `cfg.ppo.total_steps`, if present.
fn load_seed(cfg: &ScenarioConfig, seed: u64) -> Result<Option<SeedOutcome>, HarnessError> {
    let file = |name: &str, ext: &str| cfg.output.join(format!("{name}_seed{seed}.{ext}"));
    let package = file("model", "medc");
    if !package.exists() {
        return Ok(None);
    }
    let pkg = ModelPackage::read(&package)?;
    if pkg.metadata.training_steps < cfg.ppo.total_steps as u64 {
        return Ok(None);
    }
    let collect: Vec<CollectSummary> = serde_json::from_str(&fs::read_to_string(file("collect", "json"))?)?;
    let medc: Vec<MedcStats> = match cfg.baseline {
        Baseline::Medc => serde_json::from_str(&fs::read_to_string(file("medc", "json"))?)?,
        _ => Vec::new(),
    };
    let curve = file("curve", "csv");
    Ok(Some(SeedOutcome {
        seed,
        rows: super::curves::read_curve(&curve)?,
        curve,
        package,
        medc,
        collect,
        spec: pkg.metadata.network,
        params: pkg.params,
    }))
}

/// Trains a plain sparse-reward policy on `env`. With `target_length`, training
/// ends at the first evaluation whose mean episode length is at most that value.
pub fn pretrain_expert(
    env: &EnvConfig,
    ppo: &crate::trainer::PpoConfig,
    target_length: Option<f64>,
    path: &Path,
) -> Result<(ModelPackage, Vec<EvalReport>), HarnessError> {
    let mut t = Trainer::new(env, ppo)?;
    let mut reports: Vec<EvalReport> = Vec::new();
    let mut next_eval = ppo.eval_interval;
    'train: while t.steps() < ppo.total_steps {
        t.iteration(&mut NoHook)?;
        while next_eval <= t.steps() && next_eval <= ppo.total_steps {
            let report = t.evaluate(next_eval)?;
            next_eval += ppo.eval_interval;
            let done = target_length.is_some_and(|l| report.episodes > 0 && report.mean_episode_length <= l);
            reports.push(report);
            if done {
                break 'train;
            }
        }
    }
    let (app, details) = env_details(env);
    let pkg = ModelPackage {
        metadata: PackageMetadata {
            application: app.to_string(),
            environment_details: details,
            description: format!("{} expert", env_label(env)),
            network: t.spec.clone(),
            training_steps: t.steps() as u64,
        },
        params: t.params().clone(),
    };
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    pkg.write(path)?;
    Ok((pkg, reports))
}
