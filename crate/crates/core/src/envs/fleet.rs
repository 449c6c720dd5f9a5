use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::grid::{Pos, WallMap};
use super::{
    check_actions, sample_cells, write_positions, write_walls, EnvConfig, EnvError, ObservationStack, StepInfo,
    StepResult, OBSERVATION_CHANNELS,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CustomerState {
    Waiting,
    Riding(usize),
    Delivered,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Customer {
    pub origin: Pos,
    pub destination: Pos,
    pub state: CustomerState,
}

/// Vehicles pick customers up at their origin and drop them at their
/// destination. Pickup and drop-off happen automatically on arrival.
#[derive(Debug, Clone)]
pub struct FleetEnv {
    cfg: EnvConfig,
    rng: ChaCha8Rng,
    walls: WallMap,
    vehicles: Vec<Pos>,
    customers: Vec<Customer>,
    elapsed: usize,
    done: bool,
}

impl FleetEnv {
    pub(super) fn new(cfg: EnvConfig) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            walls: WallMap::empty(cfg.height, cfg.width),
            vehicles: vec![Pos::new(0, 0); cfg.agents],
            customers: Vec::new(),
            elapsed: 0,
            done: true,
            cfg,
        }
    }

    pub(super) fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub(super) fn positions(&self) -> &[Pos] {
        &self.vehicles
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

    pub fn customers(&self) -> &[Customer] {
        &self.customers
    }

    pub fn load(&self, vehicle: usize) -> usize {
        self.customers.iter().filter(|c| c.state == CustomerState::Riding(vehicle)).count()
    }

    #[cfg(test)]
    pub(crate) fn place(&mut self, vehicles: Vec<Pos>, customers: Vec<Customer>) {
        self.vehicles = vehicles;
        self.customers = customers;
        self.elapsed = 0;
        self.done = false;
    }

    pub(super) fn reset(&mut self) -> Vec<ObservationStack> {
        let all = WallMap::empty(self.cfg.height, self.cfg.width).free_cells();
        let (v, c) = (self.cfg.agents, self.cfg.customers);
        let picked = sample_cells(&mut self.rng, &all, self.cfg.walls + v + c);
        let mut walls = WallMap::empty(self.cfg.height, self.cfg.width);
        for &p in &picked[..self.cfg.walls] {
            walls.set_wall(p, true);
        }
        self.vehicles = picked[self.cfg.walls..self.cfg.walls + v].to_vec();
        let free = walls.free_cells();
        let origins = picked[self.cfg.walls + v..].to_vec();
        self.customers = origins
            .into_iter()
            .map(|origin| {
                let destination = loop {
                    let d = free[self.rng.gen_range(0..free.len())];
                    if d != origin {
                        break d;
                    }
                };
                Customer { origin, destination, state: CustomerState::Waiting }
            })
            .collect();
        self.walls = walls;
        self.elapsed = 0;
        self.done = false;
        self.observations()
    }

    pub fn observations(&self) -> Vec<ObservationStack> {
        (0..self.vehicles.len())
            .map(|k| {
                let mut obs = ObservationStack::zeros(OBSERVATION_CHANNELS, self.cfg.height, self.cfg.width);
                write_positions(&mut obs, &self.vehicles, k);
                for c in &self.customers {
                    match c.state {
                        CustomerState::Waiting => obs.set(2, c.origin, 1.0),
                        CustomerState::Riding(v) if v == k => obs.set(3, c.destination, 1.0),
                        _ => {}
                    }
                }
                write_walls(&mut obs, &self.walls, 4);
                obs
            })
            .collect()
    }

    pub(super) fn step(&mut self, actions: &[usize]) -> Result<StepResult, EnvError> {
        check_actions(actions, self.vehicles.len(), self.done)?;
        for (p, &a) in self.vehicles.iter_mut().zip(actions) {
            *p = self.walls.apply(*p, a);
        }
        self.elapsed += 1;
        let rw = self.cfg.rewards;
        let mut info = StepInfo::default();
        let mut reward = -rw.step_cost;
        for k in 0..self.vehicles.len() {
            let at = self.vehicles[k];
            for c in self.customers.iter_mut() {
                if c.state == CustomerState::Riding(k) && c.destination == at {
                    c.state = CustomerState::Delivered;
                    info.delivered += 1;
                }
            }
            let mut load = self.customers.iter().filter(|c| c.state == CustomerState::Riding(k)).count();
            for c in self.customers.iter_mut() {
                if load >= self.cfg.capacity {
                    break;
                }
                if c.state == CustomerState::Waiting && c.origin == at {
                    c.state = CustomerState::Riding(k);
                    load += 1;
                    info.picked_up += 1;
                    reward += rw.pickup;
                }
            }
        }
        if self.customers.iter().all(|c| c.state == CustomerState::Delivered) {
            reward += rw.all_delivered;
            self.done = true;
        } else if self.elapsed >= self.cfg.max_episode_length {
            info.truncated = true;
            self.done = true;
        }
        Ok(StepResult { observations: self.observations(), reward, done: self.done, info })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{make_env, Environment, STAY};

    fn fleet(capacity: usize, customers: usize) -> FleetEnv {
        match make_env(&EnvConfig::fleet(6, 6, 1, customers, capacity, 1)).unwrap() {
            Environment::Fleet(e) => e,
            _ => unreachable!(),
        }
    }

    fn waiting(origin: Pos, destination: Pos) -> Customer {
        Customer { origin, destination, state: CustomerState::Waiting }
    }

    #[test]
    fn idle_step_costs_time() {
        let mut env = fleet(1, 1);
        env.place(vec![Pos::new(0, 0)], vec![waiting(Pos::new(5, 5), Pos::new(4, 4))]);
        let r = env.step(&[STAY]).unwrap();
        assert_eq!(r.reward, -0.005);
        assert!(!r.done);
    }

    #[test]
    fn full_vehicle_passes_waiting_customer() {
        let mut env = fleet(1, 2);
        env.place(
            vec![Pos::new(0, 0)],
            vec![
                Customer { origin: Pos::new(5, 5), destination: Pos::new(5, 0), state: CustomerState::Riding(0) },
                waiting(Pos::new(0, 1), Pos::new(3, 3)),
            ],
        );
        let r = env.step(&[2]).unwrap();
        assert_eq!(r.info.picked_up, 0);
        assert_eq!(r.reward, -0.005);
        assert_eq!(env.customers[1].state, CustomerState::Waiting);
        assert_eq!(env.load(0), 1);
    }

    #[test]
    fn pickup_then_final_delivery_terminates() {
        let mut env = fleet(2, 1);
        env.place(vec![Pos::new(0, 0)], vec![waiting(Pos::new(0, 1), Pos::new(0, 2))]);
        let r = env.step(&[2]).unwrap();
        assert!((r.reward - (0.1 - 0.005)).abs() < 1e-12);
        assert_eq!(r.observations[0].channel(3)[2], 1.0);
        let r = env.step(&[2]).unwrap();
        assert!(r.done);
        assert!((r.reward - (1.0 - 0.005)).abs() < 1e-12);
        assert_eq!(r.info.delivered, 1);
    }

    #[test]
    fn reset_places_distinct_origins() {
        let mut env = fleet(2, 8);
        env.reset();
        let mut origins: Vec<Pos> = env.customers.iter().map(|c| c.origin).collect();
        origins.sort();
        origins.dedup();
        assert_eq!(origins.len(), 8);
        assert!(env.customers.iter().all(|c| c.origin != c.destination));
        assert!(!origins.contains(&env.vehicles[0]));
    }
}
