use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::{Baseline, ExpertSpec, ScenarioConfig};
use super::curves::{aggregate, write_rows};
use super::scenario::{env_label, pretrain_expert, run_scenario, ScenarioOutcome};
use super::HarnessError;
use crate::envs::EnvConfig;
use crate::trainer::PpoConfig;

pub const PRESETS: [&str; 6] = ["fig5", "fig7", "fig8-frl", "fig8-il", "fleet", "maze"];

const GRID: usize = 10;
const EXPERT_SEED: u64 = 1000;
const FIG7_BIASED: [usize; 5] = [0, 2, 4, 6, 8];
const FRL_USERS: [(usize, usize); 8] = [(1, 0), (1, 1), (1, 2), (2, 0), (2, 1), (2, 2), (3, 0), (3, 2)];

#[derive(Debug, Clone)]
pub struct FigureOptions {
    pub out: PathBuf,
    pub seeds: Vec<u64>,
    /// PPO settings of every scenario; `total_steps` is the run length.
    pub ppo: PpoConfig,
    /// Upper bound on training steps for a pretrained expert.
    pub expert_steps: usize,
    /// Pretraining stops at the first evaluation at or below this mean episode length.
    pub expert_target: Option<f64>,
    /// Use this package as the target-localization expert instead of pretraining one.
    pub expert: Option<PathBuf>,
    /// Keep finished seeds already present under `out`.
    pub resume: bool,
}

impl FigureOptions {
    /// Five seeds, 500k steps per run, expert trained until episode length 30 (at most 3M steps).
    pub fn new(out: impl Into<PathBuf>) -> Self {
        Self {
            out: out.into(),
            seeds: (0..5).collect(),
            ppo: PpoConfig::default(),
            expert_steps: 3_000_000,
            expert_target: Some(30.0),
            expert: None,
            resume: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FigureOutcome {
    pub scenarios: Vec<(String, ScenarioOutcome)>,
    pub comparison: PathBuf,
    pub expert: Option<PathBuf>,
}

impl FigureOutcome {
    pub fn scenario(&self, label: &str) -> Option<&ScenarioOutcome> {
        self.scenarios.iter().find(|(l, _)| l == label).map(|(_, s)| s)
    }
}

#[derive(Serialize)]
struct ComparisonRow<'a> {
    scenario: &'a str,
    step: u64,
    mean_episode_length: f64,
    mean_return: f64,
    episodes: f64,
}

/// Runs the named preset batch under `opts.out/<scenario>` and writes
/// `comparison.csv` with the per-step medians of every scenario.
/// Scenarios with the same label are identical across presets, so presets
/// can share one output directory under `opts.resume`. A pretrained expert
/// already present in `opts.out` is reused.
pub fn replicate_figure(name: &str, opts: &FigureOptions) -> Result<FigureOutcome, HarnessError> {
    if !PRESETS.contains(&name) {
        return Err(HarnessError::UnknownPreset(name.to_string()));
    }
    std::fs::create_dir_all(&opts.out)?;
    let tl = |agents, walls| EnvConfig::target_localization(GRID, GRID, agents, walls, 0);
    let (target, expert_env) = match name {
        "fleet" => (EnvConfig::fleet(GRID, GRID, 3, 8, 2, 0), EnvConfig::fleet(GRID, GRID, 1, 8, 2, 0)),
        "maze" => (EnvConfig::maze(GRID, GRID, 3, 0), EnvConfig::maze(GRID, GRID, 1, 0)),
        _ => (tl(2, 2), tl(1, 0)),
    };
    let expert = match (&opts.expert, name) {
        (Some(p), n) if n != "fleet" && n != "maze" => p.clone(),
        _ => ensure_expert(&expert_env, opts, &opts.out.join(format!("expert_{}.medc", env_label(&expert_env))))?,
    };
    let scenario = |label: &str, baseline, experts: Vec<(String, ExpertSpec)>| {
        let mut cfg = ScenarioConfig::new(target.clone(), baseline, opts.seeds.clone(), opts.out.join(label));
        cfg.ppo = opts.ppo.clone();
        cfg.experts = experts;
        cfg.resume = opts.resume;
        (label.to_string(), cfg)
    };
    let proper =
        || vec![("proper".to_string(), ExpertSpec::File { path: expert.clone(), malicious: false, similarity: None })];
    let batch: Vec<(String, ScenarioConfig)> = match name {
        "fig5" | "fleet" | "maze" => {
            vec![scenario("sparse", Baseline::Sparse, vec![]), scenario("medc", Baseline::Medc, proper())]
        }
        "fig7" => vec![
            scenario("sparse", Baseline::Sparse, vec![]),
            scenario("medc", Baseline::Medc, proper()),
            scenario(
                "random",
                Baseline::Medc,
                (0..5).map(|i| (format!("random{i}"), ExpertSpec::Random { similarity: None })).collect(),
            ),
            scenario(
                "biased",
                Baseline::Medc,
                FIG7_BIASED
                    .iter()
                    .map(|&a| (format!("biased{a}"), ExpertSpec::Biased { action: a, similarity: None }))
                    .collect(),
            ),
            scenario(
                "malicious",
                Baseline::Medc,
                (0..5)
                    .map(|i| {
                        (
                            format!("malicious{i}"),
                            ExpertSpec::File { path: expert.clone(), malicious: true, similarity: None },
                        )
                    })
                    .collect(),
            ),
        ],
        "fig8-frl" => {
            let mut frl = scenario("frl", Baseline::Frl, vec![]);
            frl.1.frl_users = FRL_USERS.iter().map(|&(a, w)| tl(a, w)).collect();
            vec![scenario("medc", Baseline::Medc, proper()), frl]
        }
        "fig8-il" => vec![scenario("medc", Baseline::Medc, proper()), scenario("il", Baseline::Il, proper())],
        _ => unreachable!("preset list checked above"),
    };
    let mut scenarios = Vec::with_capacity(batch.len());
    for (label, cfg) in batch {
        let outcome = run_scenario(&cfg)?;
        scenarios.push((label, outcome));
    }
    let comparison = opts.out.join("comparison.csv");
    write_comparison(&comparison, &scenarios)?;
    Ok(FigureOutcome { scenarios, comparison, expert: Some(expert) })
}

fn ensure_expert(env: &EnvConfig, opts: &FigureOptions, path: &Path) -> Result<PathBuf, HarnessError> {
    if !path.exists() {
        let env = EnvConfig { seed: EXPERT_SEED, ..env.clone() };
        let ppo = PpoConfig { total_steps: opts.expert_steps, seed: EXPERT_SEED, ..opts.ppo.clone() };
        pretrain_expert(&env, &ppo, opts.expert_target, path)?;
    }
    Ok(path.to_path_buf())
}

fn write_comparison(path: &Path, scenarios: &[(String, ScenarioOutcome)]) -> Result<(), HarnessError> {
    let mut rows = Vec::new();
    let medians: Vec<_> = scenarios.iter().map(|(l, s)| (l, aggregate(&s.rows()))).collect();
    for (label, agg) in &medians {
        for r in agg {
            rows.push(ComparisonRow {
                scenario: label,
                step: r.step,
                mean_episode_length: r.mean_episode_length,
                mean_return: r.mean_return,
                episodes: r.episodes,
            });
        }
    }
    rows.sort_by(|a, b| a.step.cmp(&b.step).then(a.scenario.cmp(b.scenario)));
    if rows.is_empty() {
        std::fs::write(path, "scenario,step,mean_episode_length,mean_return,episodes\n")?;
        return Ok(());
    }
    write_rows(path, &rows)
}
