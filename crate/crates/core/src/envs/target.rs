use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::grid::{bfs_distance, Pos, WallMap};
use super::{
    check_actions, sample_cells, write_positions, write_visits, write_walls, EnvConfig, EnvError, ObservationStack,
    RewardMode, StepInfo, StepResult, OBSERVATION_CHANNELS,
};

const LAYOUT_ATTEMPTS: usize = 1000;

/// `bonus` for every agent whose BFS distance to `target` strictly dropped.
pub fn shaped_reward(prev: &[Pos], new: &[Pos], target: Pos, walls: &WallMap, bonus: f64) -> f64 {
    prev.iter()
        .zip(new)
        .filter(|(p, n)| match (bfs_distance(walls, **p, target), bfs_distance(walls, **n, target)) {
            (Some(a), Some(b)) => b < a,
            _ => false,
        })
        .count() as f64
        * bonus
}

/// Search for a hidden target with sensing agents; the episode ends when an
/// agent stands on the target cell or the step cap is hit.
#[derive(Debug, Clone)]
pub struct TargetLocalizationEnv {
    cfg: EnvConfig,
    rng: ChaCha8Rng,
    walls: WallMap,
    target: Pos,
    agents: Vec<Pos>,
    visits: Vec<u32>,
    readings: Vec<f64>,
    /// BFS distance field from the target, kept for reward shaping.
    distance: Vec<Option<u32>>,
    elapsed: usize,
    done: bool,
}

impl TargetLocalizationEnv {
    pub(super) fn new(cfg: EnvConfig) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let walls = WallMap::empty(cfg.height, cfg.width);
        let n = cfg.height * cfg.width;
        Self {
            target: Pos::new(0, 0),
            agents: vec![Pos::new(0, 0); cfg.agents],
            visits: vec![0; n],
            readings: vec![0.0; n],
            distance: vec![None; n],
            elapsed: 0,
            done: true,
            cfg,
            rng,
            walls,
        }
    }

    pub(super) fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub(super) fn positions(&self) -> &[Pos] {
        &self.agents
    }

    pub(super) fn walls(&self) -> &WallMap {
        &self.walls
    }

    pub(super) fn elapsed(&self) -> usize {
        self.elapsed
    }

    pub(super) fn is_done(&self) -> bool {
        self.done
    }

    pub fn target(&self) -> Pos {
        self.target
    }

    /// Draws walls, target, and agents on distinct cells, retrying until
    /// every agent can reach the target.
    fn draw_layout(&mut self) {
        let all = WallMap::empty(self.cfg.height, self.cfg.width).free_cells();
        for attempt in 0..LAYOUT_ATTEMPTS {
            let picked = sample_cells(&mut self.rng, &all, self.cfg.walls + 1 + self.cfg.agents);
            let mut walls = WallMap::empty(self.cfg.height, self.cfg.width);
            for &p in &picked[..self.cfg.walls] {
                walls.set_wall(p, true);
            }
            let target = picked[self.cfg.walls];
            let agents = picked[self.cfg.walls + 1..].to_vec();
            let field = walls.distance_field(target);
            let reachable = agents.iter().all(|&a| field[walls.index(a)].is_some());
            if reachable || attempt + 1 == LAYOUT_ATTEMPTS {
                self.walls = walls;
                self.target = target;
                self.agents = agents;
                self.distance = field;
                return;
            }
        }
    }

    fn record(&mut self) {
        for i in 0..self.agents.len() {
            let p = self.agents[i];
            let idx = self.walls.index(p);
            self.visits[idx] += 1;
            self.readings[idx] = self.cfg.sensor.reading(self.target, &self.walls, p);
        }
    }

    pub(super) fn reset(&mut self) -> Vec<ObservationStack> {
        self.draw_layout();
        self.visits.iter_mut().for_each(|v| *v = 0);
        self.readings.iter_mut().for_each(|v| *v = 0.0);
        self.record();
        self.elapsed = 0;
        self.done = false;
        self.observations()
    }

    pub fn observations(&self) -> Vec<ObservationStack> {
        let (h, w) = (self.cfg.height, self.cfg.width);
        let scale = 1.0 / self.cfg.sensor.strength;
        (0..self.agents.len())
            .map(|k| {
                let mut obs = ObservationStack::zeros(OBSERVATION_CHANNELS, h, w);
                write_positions(&mut obs, &self.agents, k);
                for (dst, &r) in obs.channel_mut(2).iter_mut().zip(&self.readings) {
                    *dst = r * scale;
                }
                write_visits(&mut obs, &self.visits, 3);
                write_walls(&mut obs, &self.walls, 4);
                obs
            })
            .collect()
    }

    pub(super) fn step(&mut self, actions: &[usize]) -> Result<StepResult, EnvError> {
        check_actions(actions, self.agents.len(), self.done)?;
        let prev = self.agents.clone();
        for (p, &a) in self.agents.iter_mut().zip(actions) {
            *p = self.walls.apply(*p, a);
        }
        self.elapsed += 1;
        self.record();

        let mut reward = 0.0;
        if self.cfg.reward_mode == RewardMode::Shaped {
            let closer = prev
                .iter()
                .zip(&self.agents)
                .filter(|(a, b)| match (self.distance[self.walls.index(**a)], self.distance[self.walls.index(**b)]) {
                    (Some(x), Some(y)) => y < x,
                    _ => false,
                })
                .count();
            reward += closer as f64 * self.cfg.rewards.shaping_bonus;
        }
        let localized = self.agents.contains(&self.target);
        let mut info = StepInfo { localized, ..StepInfo::default() };
        if localized {
            reward += self.cfg.rewards.localized;
            self.done = true;
        } else if self.elapsed >= self.cfg.max_episode_length {
            info.truncated = true;
            self.done = true;
        }
        Ok(StepResult { observations: self.observations(), reward, done: self.done, info })
    }
}
