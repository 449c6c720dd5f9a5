//! Scenario files: `[section]` headers, `key = value` lines, `#` comments.
//!
//! ```text
//! [env]
//! shorthand = A3W2          # or kind/agents/walls/... explicitly
//! height = 10
//! width = 10
//!
//! [ppo]
//! total_steps = 500000      # any field omitted keeps its default
//!
//! [medc]
//! expert_rate = 0.1
//! q = 0.05
//!
//! [experts]
//! proper = trained experts/a1w0.medc
//! noisy = random rs=0.5
//! stuck = biased 4
//! liar = malicious experts/a1w0.medc
//! shared = registry ./registry <cid>
//!
//! [frl]
//! users = A1W0, A1W2, A2W0, A2W2
//!
//! [run]
//! baseline = medc           # sparse | medc | frl | rs | il
//! seeds = 0, 1, 2, 3, 4
//! output = runs/a2w2-medc
//! checkpoint_every = 25
//! resume = true            # keep seeds whose outputs are already complete
//! ```
//!
//! Unknown sections or keys are errors.

use std::path::{Path, PathBuf};

use super::HarnessError;
use crate::envs::{EnvConfig, EnvKind, RewardMode};
use crate::medc::MedcConfig;
use crate::trainer::PpoConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Baseline {
    Sparse,
    Medc,
    Frl,
    Rs,
    Il,
}

impl std::str::FromStr for Baseline {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "sparse" => Self::Sparse,
            "medc" => Self::Medc,
            "frl" => Self::Frl,
            "rs" => Self::Rs,
            "il" => Self::Il,
            other => return Err(format!("unknown baseline {other:?} (expected sparse, medc, frl, rs or il)")),
        })
    }
}

impl Baseline {
    pub fn name(self) -> &'static str {
        match self {
            Self::Sparse => "sparse",
            Self::Medc => "medc",
            Self::Frl => "frl",
            Self::Rs => "rs",
            Self::Il => "il",
        }
    }
}

/// Where an expert comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum ExpertSpec {
    /// A model package file, used as-is (`trained`) or inverted (`malicious`).
    File {
        path: PathBuf,
        malicious: bool,
        similarity: Option<f64>,
    },
    /// A package fetched from a registry directory by CID.
    Registry {
        dir: PathBuf,
        cid: String,
        malicious: bool,
        similarity: Option<f64>,
    },
    Random {
        similarity: Option<f64>,
    },
    Biased {
        action: usize,
        similarity: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub env: EnvConfig,
    pub ppo: PpoConfig,
    pub medc: MedcConfig,
    pub experts: Vec<(String, ExpertSpec)>,
    pub frl_users: Vec<EnvConfig>,
    pub baseline: Baseline,
    pub seeds: Vec<u64>,
    pub output: PathBuf,
    /// Write a checkpoint package every this many updates.
    pub checkpoint_every: Option<usize>,
    /// Reuse the outputs of seeds that already finished in `output`.
    pub resume: bool,
}

impl ScenarioConfig {
    /// A 10×10 sparse target-localization scenario with default hyperparameters.
    pub fn new(env: EnvConfig, baseline: Baseline, seeds: Vec<u64>, output: impl Into<PathBuf>) -> Self {
        Self {
            env,
            ppo: PpoConfig::default(),
            medc: MedcConfig::default(),
            experts: Vec::new(),
            frl_users: Vec::new(),
            baseline,
            seeds,
            output: output.into(),
            checkpoint_every: None,
            resume: false,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config { line: 0, message: m });
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        self.env.validate().map_err(|e| HarnessError::Config { line: 0, message: e.to_string() })?;
        self.ppo.validate().map_err(|e| HarnessError::Config { line: 0, message: e.to_string() })?;
        self.medc.validate().map_err(|e| HarnessError::Config { line: 0, message: e.to_string() })?;
        match self.baseline {
            Baseline::Medc | Baseline::Il if self.experts.is_empty() => {
                bad(format!("baseline {} needs at least one expert", self.baseline.name()))
            }
            Baseline::Frl if self.frl_users.is_empty() => bad("baseline frl needs [frl] users".into()),
            _ => Ok(()),
        }
    }
}

/// Parses `AyWz` into (agents, walls).
pub fn parse_shorthand(s: &str) -> Option<(usize, usize)> {
    let rest = s.strip_prefix('A')?;
    let w = rest.find('W')?;
    let (a, z) = (&rest[..w], &rest[w + 1..]);
    let all_digits = |t: &str| !t.is_empty() && t.bytes().all(|b| b.is_ascii_digit());
    if !all_digits(a) || !all_digits(z) {
        return None;
    }
    Some((a.parse().ok()?, z.parse().ok()?))
}

pub fn parse_scenario(path: &Path) -> Result<ScenarioConfig, HarnessError> {
    let text = std::fs::read_to_string(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_scenario_str(&text, base)
}

/// Parses scenario text; relative paths resolve against `base`.
pub fn parse_scenario_str(text: &str, base: &Path) -> Result<ScenarioConfig, HarnessError> {
    let mut cfg = ScenarioConfig::new(
        EnvConfig::target_localization(10, 10, 1, 0, 0),
        Baseline::Sparse,
        Vec::new(),
        base.join("runs"),
    );
    let mut baseline_seen = false;
    let mut section = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let err = |message: String| HarnessError::Config { line: line_no, message };
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name.strip_suffix(']').ok_or_else(|| err(format!("malformed section header {line:?}")))?;
            if !["env", "ppo", "medc", "experts", "frl", "run"].contains(&name) {
                return Err(err(format!("unknown section [{name}]")));
            }
            section = name.to_string();
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| err(format!("expected key = value, got {line:?}")))?;
        let (key, value) = (key.trim(), value.trim());
        let num = |v: &str| v.parse::<f64>().map_err(|_| err(format!("{key}: expected a number, got {v:?}")));
        let int = |v: &str| v.parse::<usize>().map_err(|_| err(format!("{key}: expected an integer, got {v:?}")));
        match (section.as_str(), key) {
            ("", _) => return Err(err(format!("key {key:?} outside any section"))),
            ("env", "shorthand") => {
                let (a, w) = parse_shorthand(value).ok_or_else(|| err(format!("invalid AyWz shorthand {value:?}")))?;
                cfg.env.kind = EnvKind::TargetLocalization;
                cfg.env.agents = a;
                cfg.env.walls = w;
            }
            ("env", "kind") => {
                cfg.env.kind = match value {
                    "target_localization" => EnvKind::TargetLocalization,
                    "fleet" => EnvKind::Fleet,
                    "maze" => EnvKind::Maze,
                    other => return Err(err(format!("unknown environment kind {other:?}"))),
                }
            }
            ("env", "height") => cfg.env.height = int(value)?,
            ("env", "width") => cfg.env.width = int(value)?,
            ("env", "agents") => cfg.env.agents = int(value)?,
            ("env", "walls") => cfg.env.walls = int(value)?,
            ("env", "customers") => cfg.env.customers = int(value)?,
            ("env", "capacity") => cfg.env.capacity = int(value)?,
            ("env", "max_episode_length") => cfg.env.max_episode_length = int(value)?,
            ("env", "reward_mode") => {
                cfg.env.reward_mode = match value {
                    "sparse" => RewardMode::Sparse,
                    "shaped" => RewardMode::Shaped,
                    other => return Err(err(format!("unknown reward mode {other:?}"))),
                }
            }
            ("env", "localized_reward") => cfg.env.rewards.localized = num(value)?,
            ("env", "pickup_reward") => cfg.env.rewards.pickup = num(value)?,
            ("env", "delivered_reward") => cfg.env.rewards.all_delivered = num(value)?,
            ("env", "clean_reward") => cfg.env.rewards.clean_cell = num(value)?,
            ("env", "step_cost") => cfg.env.rewards.step_cost = num(value)?,
            ("env", "shaping_bonus") => cfg.env.rewards.shaping_bonus = num(value)?,
            ("ppo", "learning_rate") => cfg.ppo.learning_rate = num(value)?,
            ("ppo", "clip") => cfg.ppo.clip = num(value)?,
            ("ppo", "entropy_coef") => cfg.ppo.entropy_coef = num(value)?,
            ("ppo", "gamma") => cfg.ppo.gamma = num(value)?,
            ("ppo", "lambda") => cfg.ppo.lambda = num(value)?,
            ("ppo", "horizon") => cfg.ppo.horizon = int(value)?,
            ("ppo", "epochs") => cfg.ppo.epochs = int(value)?,
            ("ppo", "total_steps") => cfg.ppo.total_steps = int(value)?,
            ("ppo", "minibatch_size") => cfg.ppo.minibatch_size = int(value)?,
            ("ppo", "value_coef") => cfg.ppo.value_coef = num(value)?,
            ("ppo", "max_grad_norm") => cfg.ppo.max_grad_norm = if value == "none" { None } else { Some(num(value)?) },
            ("ppo", "eval_interval") => cfg.ppo.eval_interval = int(value)?,
            ("ppo", "eval_steps") => cfg.ppo.eval_steps = int(value)?,
            ("medc", "expert_rate") => cfg.medc.expert_rate = num(value)?,
            ("medc", "q") => cfg.medc.q = num(value)?,
            ("experts", name) => {
                let spec = parse_expert(value, base).map_err(err)?;
                cfg.experts.push((name.to_string(), spec));
            }
            ("frl", "users") => {
                cfg.frl_users = value
                    .split(',')
                    .map(|s| {
                        let s = s.trim();
                        parse_shorthand(s)
                            .map(|(a, w)| EnvConfig::target_localization(0, 0, a, w, 0))
                            .ok_or_else(|| err(format!("invalid AyWz shorthand {s:?}")))
                    })
                    .collect::<Result<_, _>>()?;
            }
            ("run", "baseline") => {
                if baseline_seen {
                    return Err(err("baseline given more than once".into()));
                }
                baseline_seen = true;
                cfg.baseline = value.parse().map_err(err)?;
            }
            ("run", "seeds") => {
                cfg.seeds = value
                    .split(',')
                    .map(|s| s.trim().parse::<u64>().map_err(|_| err(format!("invalid seed {s:?}"))))
                    .collect::<Result<_, _>>()?;
            }
            ("run", "output") => cfg.output = base.join(value),
            ("run", "checkpoint_every") => cfg.checkpoint_every = Some(int(value)?),
            ("run", "resume") => cfg.resume = value.parse().map_err(|_| err(format!("invalid boolean {value:?}")))?,
            (s, k) => return Err(err(format!("unknown key {k:?} in [{s}]"))),
        }
    }
    // user environments share the scenario's grid
    for u in &mut cfg.frl_users {
        u.height = cfg.env.height;
        u.width = cfg.env.width;
        u.max_episode_length = cfg.env.max_episode_length;
        u.rewards = cfg.env.rewards;
    }
    if !baseline_seen {
        return Err(HarnessError::Config { line: 0, message: "[run] baseline is required".into() });
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_expert(value: &str, base: &Path) -> Result<ExpertSpec, String> {
    let mut words: Vec<&str> = value.split_whitespace().collect();
    let mut similarity = None;
    if let Some(last) = words.last() {
        if let Some(w) = last.strip_prefix("rs=") {
            let v: f64 = w.parse().map_err(|_| format!("invalid similarity {w:?}"))?;
            if !(v.is_finite() && v >= 0.0) {
                return Err(format!("similarity must be finite and non-negative, got {v}"));
            }
            similarity = Some(v);
            words.pop();
        }
    }
    match words.as_slice() {
        ["random"] => Ok(ExpertSpec::Random { similarity }),
        ["biased", a] => {
            let action: usize = a.parse().map_err(|_| format!("invalid biased action {a:?}"))?;
            if action >= crate::envs::NUM_ACTIONS {
                return Err(format!("biased action {action} out of range"));
            }
            Ok(ExpertSpec::Biased { action, similarity })
        }
        [kind @ ("trained" | "malicious"), path] => {
            Ok(ExpertSpec::File { path: base.join(path), malicious: *kind == "malicious", similarity })
        }
        ["registry", dir, cid] => {
            Ok(ExpertSpec::Registry { dir: base.join(dir), cid: cid.to_string(), malicious: false, similarity })
        }
        ["malicious", "registry", dir, cid] => {
            Ok(ExpertSpec::Registry { dir: base.join(dir), cid: cid.to_string(), malicious: true, similarity })
        }
        _ => Err(format!("cannot parse expert {value:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ScenarioConfig, HarnessError> {
        parse_scenario_str(text, Path::new("/base"))
    }

    #[test]
    fn shorthand() {
        assert_eq!(parse_shorthand("A3W2"), Some((3, 2)));
        assert_eq!(parse_shorthand("A10W0"), Some((10, 0)));
        for bad in ["A3Wx", "3W2", "AW2", "A3W", "A3W2 ", "A-1W2", "A3X2"] {
            assert_eq!(parse_shorthand(bad), None, "{bad}");
        }
    }

    #[test]
    fn defaults_come_from_hyperparameter_table() {
        let c = parse("[env]\nshorthand = A3W2\n[run]\nbaseline = sparse\nseeds = 1\n").unwrap();
        assert_eq!((c.env.agents, c.env.walls, c.env.kind), (3, 2, EnvKind::TargetLocalization));
        assert_eq!(c.ppo, PpoConfig::default());
        assert_eq!(c.medc, MedcConfig { expert_rate: 0.1, q: 0.05 });
        assert_eq!(c.output, PathBuf::from("/base/runs"));
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = parse("[env]\n\nshorthand = A3Wx\n").unwrap_err();
        assert!(matches!(e, HarnessError::Config { line: 3, .. }), "{e}");
        let e = parse("[env]\nheight = 10\nfoo = 1\n").unwrap_err();
        assert!(matches!(e, HarnessError::Config { line: 3, .. }));
        let e = parse("[nope]\n").unwrap_err();
        assert!(matches!(e, HarnessError::Config { line: 1, .. }));
        let e = parse("[run]\nbaseline = sparse\nbaseline = medc\n").unwrap_err();
        assert!(matches!(e, HarnessError::Config { line: 3, .. }));
        assert!(parse("[run]\nbaseline = sparse\n").is_err(), "seeds required");
        assert!(parse("[run]\nseeds = 1\n").is_err(), "baseline required");
        assert!(parse("[run]\nbaseline = medc\nseeds = 1\n").is_err(), "experts required");
    }

    #[test]
    fn full_scenario() {
        let text = "\
# comment line
[env]
shorthand = A2W2   # trailing comment
[ppo]
total_steps = 120000
max_grad_norm = none
[medc]
expert_rate = 0.2
[experts]
a = trained pkg/a.medc rs=2.5
b = random
c = biased 4
d = malicious pkg/a.medc
e = registry reg 00ff
[frl]
users = A1W0, A2W1
[run]
baseline = medc
seeds = 3, 4
output = out
checkpoint_every = 5
";
        let c = parse(text).unwrap();
        assert_eq!(c.ppo.total_steps, 120_000);
        assert_eq!(c.ppo.max_grad_norm, None);
        assert_eq!(c.medc.expert_rate, 0.2);
        assert_eq!(c.experts.len(), 5);
        assert_eq!(
            c.experts[0].1,
            ExpertSpec::File { path: PathBuf::from("/base/pkg/a.medc"), malicious: false, similarity: Some(2.5) }
        );
        assert_eq!(c.experts[2].1, ExpertSpec::Biased { action: 4, similarity: None });
        assert_eq!(c.frl_users.len(), 2);
        assert_eq!((c.frl_users[1].agents, c.frl_users[1].walls, c.frl_users[1].height), (2, 1, 10));
        assert_eq!(c.seeds, vec![3, 4]);
        assert_eq!(c.checkpoint_every, Some(5));
        assert_eq!(c.baseline, Baseline::Medc);
    }
}
