//! Multi-agent grid worlds behind a common reset/step interface.
//!
//! Three kinds share a 9-way action space (8 compass moves plus stay) and a
//! stack of five `H × W` observation maps per agent:
//!
//! | kind | maps |
//! |------|------|
//! | target localization | own location, teammates, readings, visit counts, walls |
//! | fleet | own location, teammates, waiting pickups, own drop-offs, walls |
//! | maze | own location, teammates, dirty cells, visit counts, walls |

mod fleet;
mod grid;
mod maze;
mod target;
mod trace;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use fleet::FleetEnv;
pub use grid::{
    action_delta, bfs_distance, opposite_action, sensor_field, walls_crossed, Pos, SensorModel, WallMap, NUM_ACTIONS,
    STAY,
};
pub use maze::{maze_generate, MazeEnv};
pub use target::{shaped_reward, TargetLocalizationEnv};
pub use trace::{EpisodeTracer, TraceRecord};

pub const OBSERVATION_CHANNELS: usize = 5;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EnvError {
    #[error("invalid environment config: {0}")]
    InvalidConfig(String),
    #[error("infeasible layout: {0}")]
    Infeasible(String),
    #[error("expected {expected} actions, got {got}")]
    ActionCount { expected: usize, got: usize },
    #[error("agent {agent} chose action {action}, valid actions are 0..{NUM_ACTIONS}")]
    ActionOutOfRange { agent: usize, action: usize },
    #[error("episode is not active; call reset() first")]
    EpisodeOver,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    TargetLocalization,
    Fleet,
    Maze,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    Sparse,
    /// Sparse reward plus a bonus per agent that got closer to the target.
    Shaped,
}

/// Reward constants for every environment kind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub localized: f64,
    pub pickup: f64,
    pub all_delivered: f64,
    pub clean_cell: f64,
    /// Subtracted once per step in fleet and maze.
    pub step_cost: f64,
    pub shaping_bonus: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            localized: 1.0,
            pickup: 0.1,
            all_delivered: 1.0,
            clean_cell: 0.01,
            step_cost: 0.005,
            shaping_bonus: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub kind: EnvKind,
    pub height: usize,
    pub width: usize,
    pub agents: usize,
    pub walls: usize,
    pub customers: usize,
    pub capacity: usize,
    pub max_episode_length: usize,
    pub reward_mode: RewardMode,
    pub rewards: RewardConfig,
    pub sensor: SensorModel,
    pub seed: u64,
}

impl EnvConfig {
    pub fn target_localization(height: usize, width: usize, agents: usize, walls: usize, seed: u64) -> Self {
        Self {
            kind: EnvKind::TargetLocalization,
            height,
            width,
            agents,
            walls,
            customers: 0,
            capacity: 0,
            max_episode_length: 100,
            reward_mode: RewardMode::Sparse,
            rewards: RewardConfig::default(),
            sensor: SensorModel::default(),
            seed,
        }
    }

    pub fn fleet(height: usize, width: usize, agents: usize, customers: usize, capacity: usize, seed: u64) -> Self {
        Self { kind: EnvKind::Fleet, customers, capacity, ..Self::target_localization(height, width, agents, 0, seed) }
    }

    pub fn maze(height: usize, width: usize, agents: usize, seed: u64) -> Self {
        Self { kind: EnvKind::Maze, ..Self::target_localization(height, width, agents, 0, seed) }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: String| Err(EnvError::InvalidConfig(m));
        if self.height < 4 || self.width < 4 {
            return bad(format!("grid must be at least 4x4, got {}x{}", self.height, self.width));
        }
        if self.agents == 0 {
            return bad("at least one agent is required".into());
        }
        if self.max_episode_length == 0 {
            return bad("max episode length must be at least 1".into());
        }
        let cells = self.height * self.width;
        match self.kind {
            EnvKind::TargetLocalization => {
                if self.walls + 1 + self.agents > cells {
                    return Err(EnvError::Infeasible(format!(
                        "{} walls leave no room for a target and {} agents on {cells} cells",
                        self.walls, self.agents
                    )));
                }
            }
            EnvKind::Fleet => {
                if self.capacity == 0 {
                    return bad("vehicle capacity must be at least 1".into());
                }
                if self.customers == 0 {
                    return bad("fleet needs at least one customer".into());
                }
                if self.walls + self.agents + self.customers + 1 > cells {
                    return Err(EnvError::Infeasible(format!(
                        "{} vehicles and {} customers do not fit on {cells} cells with {} walls",
                        self.agents, self.customers, self.walls
                    )));
                }
            }
            EnvKind::Maze => {}
        }
        Ok(())
    }
}

/// `C × H × W` real maps, channel-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationStack {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ObservationStack {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width, data: vec![0.0; channels * height * width] }
    }

    pub fn from_data(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Option<Self> {
        (data.len() == channels * height * width).then_some(Self { channels, height, width, data })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.height * self.width;
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn set(&mut self, c: usize, p: Pos, value: f64) {
        let i = (c * self.height + p.row) * self.width + p.col;
        self.data[i] = value;
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub localized: bool,
    /// Episode ended by the step cap rather than by task completion.
    pub truncated: bool,
    pub picked_up: usize,
    pub delivered: usize,
    pub cleaned: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observations: Vec<ObservationStack>,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// A seeded multi-agent grid world.
#[derive(Debug, Clone)]
pub enum Environment {
    TargetLocalization(TargetLocalizationEnv),
    Fleet(FleetEnv),
    Maze(MazeEnv),
}

pub fn make_env(cfg: &EnvConfig) -> Result<Environment, EnvError> {
    cfg.validate()?;
    Ok(match cfg.kind {
        EnvKind::TargetLocalization => Environment::TargetLocalization(TargetLocalizationEnv::new(cfg.clone())),
        EnvKind::Fleet => Environment::Fleet(FleetEnv::new(cfg.clone())),
        EnvKind::Maze => Environment::Maze(MazeEnv::new(cfg.clone())),
    })
}

macro_rules! dispatch {
    ($self:ident, $e:ident => $body:expr) => {
        match $self {
            Environment::TargetLocalization($e) => $body,
            Environment::Fleet($e) => $body,
            Environment::Maze($e) => $body,
        }
    };
}

impl Environment {
    pub fn config(&self) -> &EnvConfig {
        dispatch!(self, e => e.config())
    }

    pub fn num_agents(&self) -> usize {
        self.config().agents
    }

    pub fn num_actions(&self) -> usize {
        NUM_ACTIONS
    }

    /// `(channels, height, width)` of every agent's observation.
    pub fn observation_shape(&self) -> (usize, usize, usize) {
        let c = self.config();
        (OBSERVATION_CHANNELS, c.height, c.width)
    }

    pub fn reset(&mut self) -> Vec<ObservationStack> {
        dispatch!(self, e => e.reset())
    }

    pub fn step(&mut self, actions: &[usize]) -> Result<StepResult, EnvError> {
        dispatch!(self, e => e.step(actions))
    }

    pub fn positions(&self) -> &[Pos] {
        dispatch!(self, e => e.positions())
    }

    pub fn walls(&self) -> &WallMap {
        dispatch!(self, e => e.walls())
    }

    /// Steps taken in the current episode.
    pub fn elapsed(&self) -> usize {
        dispatch!(self, e => e.elapsed())
    }

    pub fn is_done(&self) -> bool {
        dispatch!(self, e => e.is_done())
    }
}

pub(crate) fn check_actions(actions: &[usize], agents: usize, done: bool) -> Result<(), EnvError> {
    if done {
        return Err(EnvError::EpisodeOver);
    }
    if actions.len() != agents {
        return Err(EnvError::ActionCount { expected: agents, got: actions.len() });
    }
    if let Some((agent, &action)) = actions.iter().enumerate().find(|(_, &a)| a >= NUM_ACTIONS) {
        return Err(EnvError::ActionOutOfRange { agent, action });
    }
    Ok(())
}

/// `count` distinct cells drawn uniformly from `candidates`.
pub(crate) fn sample_cells<R: Rng>(rng: &mut R, candidates: &[Pos], count: usize) -> Vec<Pos> {
    candidates.choose_multiple(rng, count).copied().collect()
}

/// Writes own-location and teammate maps (channels 0 and 1) for `agent`.
pub(crate) fn write_positions(obs: &mut ObservationStack, positions: &[Pos], agent: usize) {
    obs.set(0, positions[agent], 1.0);
    for (j, &p) in positions.iter().enumerate() {
        if j != agent {
            obs.set(1, p, 1.0);
        }
    }
}

pub(crate) fn write_walls(obs: &mut ObservationStack, walls: &WallMap, channel: usize) {
    for (dst, &w) in obs.channel_mut(channel).iter_mut().zip(walls.cells()) {
        *dst = if w { 1.0 } else { 0.0 };
    }
}

/// Visit counts scaled so the most visited cell reads 1.
pub(crate) fn write_visits(obs: &mut ObservationStack, visits: &[u32], channel: usize) {
    let max = visits.iter().copied().max().unwrap_or(0).max(1) as f64;
    for (dst, &v) in obs.channel_mut(channel).iter_mut().zip(visits) {
        *dst = v as f64 / max;
    }
}
