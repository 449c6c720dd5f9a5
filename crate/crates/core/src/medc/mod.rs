//! Expert-guided exploration on top of PPO, plus the federated-averaging and
//! behavioral-cloning baselines.

mod baselines;
mod expert;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::approximator::{ActionDistribution, ApproxError};
use crate::envs::ObservationStack;
use crate::trainer::{ActionHook, HookDecision, TrainError};

pub use baselines::{bc_update, frl_average, frl_train, FrlOutcome, IlHook};
pub use expert::{expert_rank_actions, ExpertHandle, ExpertKind, ExpertSource};

#[derive(Debug, thiserror::Error)]
pub enum MedcError {
    #[error("invalid MEDC config: {0}")]
    Config(String),
    #[error("expert: {0}")]
    Expert(String),
    #[error("no experts to select from")]
    NoExperts,
    #[error("parameter sets differ in architecture")]
    Architecture,
    #[error(transparent)]
    Approx(#[from] ApproxError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

impl From<MedcError> for TrainError {
    fn from(e: MedcError) -> Self {
        match e {
            MedcError::Train(t) => t,
            MedcError::Approx(a) => TrainError::Approx(a),
            other => TrainError::Hook(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MedcConfig {
    /// Probability that an episode is expert-guided (R_E).
    pub expert_rate: f64,
    /// Minimum own-policy probability an expert action needs (Q).
    pub q: f64,
}

impl Default for MedcConfig {
    fn default() -> Self {
        Self { expert_rate: 0.1, q: 0.05 }
    }
}

impl MedcConfig {
    pub fn validate(&self) -> Result<(), MedcError> {
        if !(0.0..=1.0).contains(&self.expert_rate) || !(0.0..=1.0).contains(&self.q) {
            return Err(MedcError::Config(format!(
                "expert rate {} and threshold {} must lie in [0, 1]",
                self.expert_rate, self.q
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EpisodeMode {
    Mdrl,
    /// Guided by the expert at this index.
    Medc(usize),
}

/// Index drawn with probability proportional to `weights`; uniform when every
/// weight is zero.
pub fn roulette_index<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> Result<usize, MedcError> {
    if weights.is_empty() {
        return Err(MedcError::NoExperts);
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Ok(rng.gen_range(0..weights.len()));
    }
    let u = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            acc += w;
            last = i;
            if u < acc {
                return Ok(i);
            }
        }
    }
    Ok(last)
}

pub fn roulette_select<R: Rng + ?Sized>(experts: &[ExpertHandle], rng: &mut R) -> Result<usize, MedcError> {
    let w: Vec<f64> = experts.iter().map(|e| e.similarity).collect();
    roulette_index(&w, rng)
}

/// Expert-guided with probability `expert_rate`; an empty expert list always
/// yields [`EpisodeMode::Mdrl`].
pub fn draw_mode<R: Rng + ?Sized>(cfg: &MedcConfig, experts: &[ExpertHandle], rng: &mut R) -> EpisodeMode {
    let check: f64 = rng.gen();
    if check < cfg.expert_rate && !experts.is_empty() {
        // roulette_select only fails on an empty list
        EpisodeMode::Medc(roulette_select(experts, rng).unwrap_or(0))
    } else {
        EpisodeMode::Mdrl
    }
}

/// Highest-ranked action with own probability at least `q`, with its rank.
/// `None` means the caller samples from its own policy.
pub fn q_filter(ranked: &[usize], own: &ActionDistribution, q: f64) -> Option<(usize, usize)> {
    ranked.iter().enumerate().find(|(_, &a)| own.prob(a) >= q).map(|(rank, &a)| (a, rank))
}

/// Counters over one collection horizon.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MedcStats {
    pub episodes: usize,
    pub medc_episodes: usize,
    /// Agent-steps taken in expert-guided episodes.
    pub medc_steps: usize,
    /// Of those, steps where the expert's first choice met the threshold.
    pub top_passed: usize,
    pub expert_actions: usize,
    pub fallbacks: usize,
    /// Executed expert actions whose own probability was below Q; must stay zero.
    pub q_violations: usize,
    pub min_executed_prob: Option<f64>,
}

impl MedcStats {
    fn absorb(&mut self, o: &MedcStats) {
        self.episodes += o.episodes;
        self.medc_episodes += o.medc_episodes;
        self.medc_steps += o.medc_steps;
        self.top_passed += o.top_passed;
        self.expert_actions += o.expert_actions;
        self.fallbacks += o.fallbacks;
        self.q_violations += o.q_violations;
        self.min_executed_prob = match (self.min_executed_prob, o.min_executed_prob) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        };
    }

    pub fn top_pass_fraction(&self) -> Option<f64> {
        (self.medc_steps > 0).then(|| self.top_passed as f64 / self.medc_steps as f64)
    }
}

/// Action hook implementing expert-guided episodes.
#[derive(Debug, Clone)]
pub struct MedcHook {
    cfg: MedcConfig,
    experts: Vec<ExpertHandle>,
    rng: ChaCha8Rng,
    mode: EpisodeMode,
    current: MedcStats,
    horizons: Vec<MedcStats>,
}

impl MedcHook {
    pub fn new(cfg: MedcConfig, experts: Vec<ExpertHandle>, seed: u64) -> Result<Self, MedcError> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            experts,
            rng: ChaCha8Rng::seed_from_u64(seed),
            mode: EpisodeMode::Mdrl,
            current: MedcStats::default(),
            horizons: Vec::new(),
        })
    }

    pub fn mode(&self) -> EpisodeMode {
        self.mode
    }

    pub fn experts(&self) -> &[ExpertHandle] {
        &self.experts
    }

    /// Per-horizon counters, oldest first.
    pub fn horizons(&self) -> &[MedcStats] {
        &self.horizons
    }

    pub fn totals(&self) -> MedcStats {
        let mut t = MedcStats::default();
        for h in &self.horizons {
            t.absorb(h);
        }
        t.absorb(&self.current);
        t
    }
}

impl ActionHook for MedcHook {
    fn begin_episode(&mut self) {
        self.mode = draw_mode(&self.cfg, &self.experts, &mut self.rng);
        self.current.episodes += 1;
        if matches!(self.mode, EpisodeMode::Medc(_)) {
            self.current.medc_episodes += 1;
        }
    }

    fn choose(
        &mut self,
        _agent: usize,
        obs: &ObservationStack,
        own: &ActionDistribution,
    ) -> Result<HookDecision, TrainError> {
        let EpisodeMode::Medc(e) = self.mode else {
            return Ok(HookDecision::OwnPolicy);
        };
        let ranked = expert_rank_actions(&self.experts[e], obs, &mut self.rng)?;
        let s = &mut self.current;
        s.medc_steps += 1;
        if own.prob(ranked[0]) >= self.cfg.q {
            s.top_passed += 1;
        }
        match q_filter(&ranked, own, self.cfg.q) {
            Some((a, _)) => {
                let p = own.prob(a);
                s.expert_actions += 1;
                if p < self.cfg.q {
                    s.q_violations += 1;
                }
                s.min_executed_prob = Some(s.min_executed_prob.map_or(p, |m| m.min(p)));
                Ok(HookDecision::Execute(a))
            }
            None => {
                s.fallbacks += 1;
                Ok(HookDecision::OwnPolicy)
            }
        }
    }

    fn end_horizon(&mut self) {
        self.horizons.push(std::mem::take(&mut self.current));
    }
}

/// Pooled top-pass fraction of the first and last tenth of `horizons`.
pub fn decile_pass_fractions(horizons: &[MedcStats]) -> Option<(f64, f64)> {
    let n = horizons.len();
    if n == 0 {
        return None;
    }
    let tenth = n.div_ceil(10);
    let pool = |hs: &[MedcStats]| {
        let mut t = MedcStats::default();
        hs.iter().for_each(|h| t.absorb(h));
        t.top_pass_fraction()
    };
    Some((pool(&horizons[..tenth])?, pool(&horizons[n - tenth..])?))
}
