use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::grid::{Pos, WallMap};
use super::{
    check_actions, write_positions, write_visits, write_walls, EnvConfig, EnvError, ObservationStack, StepInfo,
    StepResult, OBSERVATION_CHANNELS,
};

/// Perfect maze by randomized depth-first carving. Rooms sit on even
/// coordinates; a trailing odd row/column stays solid.
pub fn maze_generate(seed: u64, height: usize, width: usize) -> WallMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    carve(&mut rng, height, width)
}

fn carve<R: Rng>(rng: &mut R, height: usize, width: usize) -> WallMap {
    let mut walls = WallMap::empty(height, width);
    for r in 0..height {
        for c in 0..width {
            walls.set_wall(Pos::new(r, c), true);
        }
    }
    let (rows, cols) = (height.div_ceil(2), width.div_ceil(2));
    let mut seen = vec![false; rows * cols];
    let start = (rng.gen_range(0..rows), rng.gen_range(0..cols));
    seen[start.0 * cols + start.1] = true;
    walls.set_wall(Pos::new(2 * start.0, 2 * start.1), false);
    let mut stack = vec![start];
    while let Some(&(r, c)) = stack.last() {
        let mut next: Vec<(usize, usize)> = Vec::with_capacity(4);
        if r > 0 {
            next.push((r - 1, c));
        }
        if r + 1 < rows {
            next.push((r + 1, c));
        }
        if c > 0 {
            next.push((r, c - 1));
        }
        if c + 1 < cols {
            next.push((r, c + 1));
        }
        next.retain(|&(nr, nc)| !seen[nr * cols + nc]);
        match next.choose(rng) {
            Some(&(nr, nc)) => {
                seen[nr * cols + nc] = true;
                walls.set_wall(Pos::new(r + nr, c + nc), false); // passage between rooms
                walls.set_wall(Pos::new(2 * nr, 2 * nc), false);
                stack.push((nr, nc));
            }
            None => {
                stack.pop();
            }
        }
    }
    walls
}

/// Agents clean every cell they stand on; the episode ends once no free
/// cell is dirty.
#[derive(Debug, Clone)]
pub struct MazeEnv {
    cfg: EnvConfig,
    rng: ChaCha8Rng,
    walls: WallMap,
    agents: Vec<Pos>,
    dirty: Vec<bool>,
    visits: Vec<u32>,
    elapsed: usize,
    done: bool,
}

impl MazeEnv {
    pub(super) fn new(cfg: EnvConfig) -> Self {
        let n = cfg.height * cfg.width;
        Self {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            walls: WallMap::empty(cfg.height, cfg.width),
            agents: vec![Pos::new(0, 0); cfg.agents],
            dirty: vec![false; n],
            visits: vec![0; n],
            elapsed: 0,
            done: true,
            cfg,
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

    pub fn dirty_count(&self) -> usize {
        self.dirty.iter().filter(|&&d| d).count()
    }

    /// Cleans the agents' cells, returning how many were dirty.
    fn clean(&mut self) -> usize {
        let mut cleaned = 0;
        for &p in &self.agents {
            let i = self.walls.index(p);
            self.visits[i] += 1;
            if self.dirty[i] {
                self.dirty[i] = false;
                cleaned += 1;
            }
        }
        cleaned
    }

    pub(super) fn reset(&mut self) -> Vec<ObservationStack> {
        self.walls = carve(&mut self.rng, self.cfg.height, self.cfg.width);
        let free = self.walls.free_cells();
        self.agents = (0..self.cfg.agents).map(|_| free[self.rng.gen_range(0..free.len())]).collect();
        self.dirty = self.walls.cells().iter().map(|&w| !w).collect();
        self.visits.iter_mut().for_each(|v| *v = 0);
        self.clean();
        self.elapsed = 0;
        self.done = self.dirty_count() == 0;
        self.observations()
    }

    pub fn observations(&self) -> Vec<ObservationStack> {
        (0..self.agents.len())
            .map(|k| {
                let mut obs = ObservationStack::zeros(OBSERVATION_CHANNELS, self.cfg.height, self.cfg.width);
                write_positions(&mut obs, &self.agents, k);
                for (dst, &d) in obs.channel_mut(2).iter_mut().zip(&self.dirty) {
                    *dst = if d { 1.0 } else { 0.0 };
                }
                write_visits(&mut obs, &self.visits, 3);
                write_walls(&mut obs, &self.walls, 4);
                obs
            })
            .collect()
    }

    pub(super) fn step(&mut self, actions: &[usize]) -> Result<StepResult, EnvError> {
        check_actions(actions, self.agents.len(), self.done)?;
        for (p, &a) in self.agents.iter_mut().zip(actions) {
            *p = self.walls.apply(*p, a);
        }
        self.elapsed += 1;
        let cleaned = self.clean();
        let rw = self.cfg.rewards;
        let reward = cleaned as f64 * rw.clean_cell - rw.step_cost;
        let mut info = StepInfo { cleaned, ..StepInfo::default() };
        if self.dirty_count() == 0 {
            self.done = true;
        } else if self.elapsed >= self.cfg.max_episode_length {
            info.truncated = true;
            self.done = true;
        }
        Ok(StepResult { observations: self.observations(), reward, done: self.done, info })
    }

    #[cfg(test)]
    pub(crate) fn set_state(&mut self, walls: WallMap, agents: Vec<Pos>, dirty: Vec<bool>) {
        self.walls = walls;
        self.agents = agents;
        self.dirty = dirty;
        self.elapsed = 0;
        self.done = false;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generated_maze_is_connected_and_dirty() {
        for seed in 0..50 {
            for (h, w) in [(10, 10), (7, 9), (4, 4), (11, 6)] {
                let m = maze_generate(seed, h, w);
                assert!(m.is_connected(), "seed {seed} {h}x{w}");
                assert!(m.free_cells().len() >= h.div_ceil(2) * w.div_ceil(2));
                // every free cell starts dirty in a fresh episode
                let dirty: Vec<bool> = m.cells().iter().map(|&x| !x).collect();
                let frac = dirty.iter().filter(|&&d| d).count() as f64 / m.free_cells().len() as f64;
                assert_eq!(frac, 1.0);
            }
        }
    }

    #[test]
    fn cleaning_last_cells_terminates_with_bonus() {
        let mut env = MazeEnv::new(EnvConfig::maze(4, 4, 1, 0));
        let mut walls = WallMap::empty(4, 4);
        for r in 0..4 {
            for c in 0..4 {
                if !(r == 0 && c < 3) {
                    walls.set_wall(Pos::new(r, c), true);
                }
            }
        }
        let mut dirty = vec![false; 16];
        dirty[1] = true;
        dirty[2] = true;
        env.set_state(walls, vec![Pos::new(0, 0)], dirty);
        let r = env.step(&[2]).unwrap();
        assert!((r.reward - (0.01 - 0.005)).abs() < 1e-12);
        assert!(!r.done);
        let r = env.step(&[2]).unwrap();
        assert!(r.done);
        assert!((r.reward - (0.01 - 0.005)).abs() < 1e-12);
        assert!(!r.info.truncated);
    }
}
