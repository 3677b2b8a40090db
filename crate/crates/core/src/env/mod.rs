//! Multi-vehicle CVRP environment with per-vehicle sequential execution.
//!
//! Each agent step carries one action per vehicle. Vehicles act in index
//! order and every move updates the shared state before the next vehicle
//! acts, so an action chosen against an earlier mask may have become invalid
//! by the time it executes; it is then penalised as a no-op.

mod instance;
mod reward;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Point;

pub use instance::Instance;
pub use reward::{
    anchor, crossing_penalty, move_crosses, overlap_exponential, zone_cost, zone_cost_ratio,
    RewardBreakdown,
};

pub type Pos = Point<f64>;

pub const DEPOT_POSITION: Pos = Pos::new(0.5, 0.5);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("invalid environment configuration: {0}")]
    Config(String),
    #[error("expected {expected} actions (one per vehicle), got {got}")]
    ActionCount { expected: usize, got: usize },
    #[error("vehicle {vehicle}: action index {action} outside 0..={limit}")]
    MalformedAction {
        vehicle: usize,
        action: usize,
        limit: usize,
    },
    #[error("episode already terminated")]
    Terminated,
    #[error("contract violation: {0}")]
    Contract(String),
}

/// Which overlap term enters the service reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlapMode {
    /// Penalise a move that properly crosses an existing route segment.
    #[default]
    Crossing,
    /// Crossing penalty plus the exponential proximity term between vehicles.
    CrossingAndExponential,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub n_clients: usize,
    pub n_vehicles: usize,
    pub vehicle_capacity: f64,
    pub demand_max: u32,
    /// Shared depot stock; `None` means twice the total initial demand.
    pub depot_capacity: Option<f64>,
    pub alpha: f64,
    pub beta: f64,
    pub lambda_overlap: f64,
    pub lambda_zone: f64,
    pub gamma_overlap: f64,
    pub epsilon_zone: f64,
    pub neighbor_threshold: f64,
    pub nearby_client_bonus: f64,
    pub invalid_action_penalty: f64,
    pub unserved_client_penalty: f64,
    /// Horizon in agent steps; `None` means `8 * n_clients`.
    pub max_agent_steps: Option<usize>,
    pub overlap_mode: OverlapMode,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            n_clients: 20,
            n_vehicles: 4,
            vehicle_capacity: 30.0,
            demand_max: 9,
            depot_capacity: None,
            alpha: 1.0,
            beta: 1.0,
            lambda_overlap: 1.0,
            lambda_zone: 1.0,
            gamma_overlap: 0.1,
            epsilon_zone: 1e-6,
            neighbor_threshold: 0.2,
            nearby_client_bonus: 5.0,
            invalid_action_penalty: -1.0,
            unserved_client_penalty: -1.0,
            max_agent_steps: None,
            overlap_mode: OverlapMode::Crossing,
        }
    }
}

impl EnvConfig {
    pub fn with_size(n_clients: usize, n_vehicles: usize) -> Self {
        Self {
            n_clients,
            n_vehicles,
            ..Self::default()
        }
    }

    /// Diagonal of the unit square.
    pub fn d_max(&self) -> f64 {
        std::f64::consts::SQRT_2
    }

    pub fn horizon(&self) -> usize {
        self.max_agent_steps.unwrap_or(8 * self.n_clients)
    }

    pub fn observation_len(&self) -> usize {
        3 + 3 * self.n_clients + 3 * self.n_vehicles
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let fail = |m: &str| Err(EnvError::Config(m.to_owned()));
        if self.n_clients == 0 || self.n_vehicles == 0 {
            return fail("n_clients and n_vehicles must be at least 1");
        }
        if !(self.vehicle_capacity > 0.0) || self.demand_max == 0 {
            return fail("vehicle_capacity and demand_max must be positive");
        }
        if self.depot_capacity.is_some_and(|c| !(c > 0.0)) {
            return fail("depot_capacity must be positive");
        }
        let weights = [self.alpha, self.beta, self.lambda_overlap, self.lambda_zone];
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return fail("alpha, beta and the lambda weights must be non-negative");
        }
        if !(self.gamma_overlap > 0.0) || !(self.epsilon_zone > 0.0) {
            return fail("gamma_overlap and epsilon_zone must be positive");
        }
        if self.horizon() == 0 {
            return fail("max_agent_steps must be positive");
        }
        Ok(())
    }
}

/// Where a vehicle went on one move.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Stop {
    Client { id: usize, demand: u32 },
    Depot { reload: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Visit {
    pub stop: Stop,
    pub position: Pos,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Depot {
    pub position: Pos,
    pub remaining: f64,
    pub initial: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Client {
    pub position: Pos,
    pub demand: u32,
    pub initial_demand: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vehicle {
    pub position: Pos,
    pub capacity: f64,
    pub start: Pos,
    pub route: Vec<Visit>,
    /// Euclidean length travelled so far.
    pub distance: f64,
    pub reloaded: f64,
}

impl Vehicle {
    fn at_depot(depot: Pos, capacity: f64) -> Self {
        Self {
            position: depot,
            capacity,
            start: depot,
            route: Vec::new(),
            distance: 0.0,
            reloaded: 0.0,
        }
    }

    pub fn served_positions(&self) -> impl Iterator<Item = Pos> + '_ {
        self.route.iter().filter_map(|v| match v.stop {
            Stop::Client { .. } => Some(v.position),
            Stop::Depot { .. } => None,
        })
    }

    /// Consecutive route positions, starting at the depot.
    pub fn segments(&self) -> Vec<(Pos, Pos)> {
        let mut prev = self.start;
        self.route
            .iter()
            .map(|v| {
                let s = (prev, v.position);
                prev = v.position;
                s
            })
            .collect()
    }
}

/// One action per vehicle: a client index in `0..n_clients`, or `n_clients` for the depot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionSet(pub Vec<usize>);

/// Per-transition diagnostics.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StepInfo {
    /// Vehicles whose action was masked at execution time.
    pub invalid: Vec<bool>,
    /// Vehicles skipped because every demand was already served.
    pub skipped: Vec<bool>,
    pub move_lengths: Vec<f64>,
    pub reloads: Vec<f64>,
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub rewards: Vec<RewardBreakdown>,
    pub done: bool,
    pub info: StepInfo,
}

impl StepOutcome {
    /// Sum of the per-vehicle totals.
    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().map(|r| r.total).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub config: EnvConfig,
    pub seed: u64,
    pub depot: Depot,
    pub clients: Vec<Client>,
    pub vehicles: Vec<Vehicle>,
    pub agent_step: usize,
}

impl EnvState {
    /// Fresh episode: clients uniform on the unit square with integer demands
    /// in `1..=demand_max`, depot at the centre, full vehicles at the depot.
    pub fn reset(config: &EnvConfig, seed: u64) -> Result<Self, EnvError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let clients: Vec<Client> = (0..config.n_clients)
            .map(|_| {
                let position = Pos::new(rng.gen::<f64>(), rng.gen::<f64>());
                let demand = rng.gen_range(1..=config.demand_max);
                Client {
                    position,
                    demand,
                    initial_demand: demand,
                }
            })
            .collect();
        Ok(Self::assemble(
            config.clone(),
            seed,
            DEPOT_POSITION,
            clients,
        ))
    }

    fn assemble(config: EnvConfig, seed: u64, depot: Pos, clients: Vec<Client>) -> Self {
        let total: f64 = clients.iter().map(|c| f64::from(c.initial_demand)).sum();
        let depot_capacity = config.depot_capacity.unwrap_or(2.0 * total);
        let vehicles = (0..config.n_vehicles)
            .map(|_| Vehicle::at_depot(depot, config.vehicle_capacity))
            .collect();
        Self {
            config,
            seed,
            depot: Depot {
                position: depot,
                remaining: depot_capacity,
                initial: depot_capacity,
            },
            clients,
            vehicles,
            agent_step: 0,
        }
    }

    /// Rebuilds the initial state of a dumped instance; reward weights come from `config`.
    pub fn from_instance(instance: &Instance, config: &EnvConfig) -> Result<Self, EnvError> {
        instance.validate()?;
        let mut config = config.clone();
        config.n_clients = instance.n_clients;
        config.n_vehicles = instance.n_vehicles;
        config.vehicle_capacity = instance.q;
        let total: f64 = instance.demands.iter().map(|&d| f64::from(d)).sum();
        if config.depot_capacity.unwrap_or(2.0 * total) != instance.depot_capacity {
            config.depot_capacity = Some(instance.depot_capacity);
        }
        let max_demand = instance.demands.iter().copied().max().unwrap_or(1);
        config.demand_max = config.demand_max.max(max_demand);
        config.validate()?;
        let clients = instance
            .positions
            .iter()
            .zip(&instance.demands)
            .map(|(p, &d)| Client {
                position: Pos::new(p[0], p[1]),
                demand: d,
                initial_demand: d,
            })
            .collect();
        let depot = Pos::new(instance.depot[0], instance.depot[1]);
        Ok(Self::assemble(config, instance.seed, depot, clients))
    }

    pub fn to_instance(&self) -> Instance {
        Instance {
            seed: self.seed,
            n_clients: self.clients.len(),
            n_vehicles: self.vehicles.len(),
            positions: self
                .clients
                .iter()
                .map(|c| [c.position.x, c.position.y])
                .collect(),
            demands: self.clients.iter().map(|c| c.initial_demand).collect(),
            depot: [self.depot.position.x, self.depot.position.y],
            q: self.config.vehicle_capacity,
            depot_capacity: self.depot.initial,
            config: Some(self.config.clone()),
        }
    }

    pub fn n_clients(&self) -> usize {
        self.clients.len()
    }

    pub fn n_vehicles(&self) -> usize {
        self.vehicles.len()
    }

    /// Action index of the depot.
    pub fn depot_action(&self) -> usize {
        self.clients.len()
    }

    /// `[depot x, y, stock fraction] ++ [client x, y, demand / demand_max]* ++
    /// [vehicle x, y, capacity / Q]*`.
    pub fn observe(&self) -> Vec<f64> {
        let mut obs = Vec::with_capacity(self.config.observation_len());
        let stock = if self.depot.initial > 0.0 {
            self.depot.remaining / self.depot.initial
        } else {
            0.0
        };
        obs.extend([self.depot.position.x, self.depot.position.y, stock]);
        let dmax = f64::from(self.config.demand_max);
        for c in &self.clients {
            obs.extend([c.position.x, c.position.y, f64::from(c.demand) / dmax]);
        }
        for v in &self.vehicles {
            obs.extend([
                v.position.x,
                v.position.y,
                v.capacity / self.config.vehicle_capacity,
            ]);
        }
        obs
    }

    /// Client `c` is valid iff it has demand that fits the vehicle; the depot
    /// is valid iff no client is.
    pub fn valid_action_mask(&self, vehicle: usize) -> Vec<bool> {
        let cap = self.vehicles[vehicle].capacity;
        let mut mask: Vec<bool> = self
            .clients
            .iter()
            .map(|c| c.demand > 0 && f64::from(c.demand) <= cap)
            .collect();
        let any = mask.iter().any(|&m| m);
        mask.push(!any);
        mask
    }

    pub fn remaining_demand(&self) -> u64 {
        self.clients.iter().map(|c| u64::from(c.demand)).sum()
    }

    pub fn initial_demand(&self) -> u64 {
        self.clients
            .iter()
            .map(|c| u64::from(c.initial_demand))
            .sum()
    }

    pub fn unserved_clients(&self) -> usize {
        self.clients.iter().filter(|c| c.demand > 0).count()
    }

    pub fn all_served(&self) -> bool {
        self.clients.iter().all(|c| c.demand == 0)
    }

    pub fn is_terminal(&self) -> bool {
        self.all_served() || self.agent_step >= self.config.horizon()
    }

    /// Executes one action per vehicle, in vehicle order.
    pub fn step(&mut self, actions: &ActionSet) -> Result<StepOutcome, EnvError> {
        let nv = self.vehicles.len();
        if actions.0.len() != nv {
            return Err(EnvError::ActionCount {
                expected: nv,
                got: actions.0.len(),
            });
        }
        let limit = self.depot_action();
        if let Some((vehicle, &action)) = actions.0.iter().enumerate().find(|(_, &a)| a > limit) {
            return Err(EnvError::MalformedAction {
                vehicle,
                action,
                limit,
            });
        }
        if self.is_terminal() {
            return Err(EnvError::Terminated);
        }

        self.agent_step += 1;
        let mut rewards = vec![RewardBreakdown::default(); nv];
        let mut info = StepInfo {
            invalid: vec![false; nv],
            skipped: vec![false; nv],
            move_lengths: vec![0.0; nv],
            reloads: vec![0.0; nv],
            truncated: false,
        };

        for (v, &action) in actions.0.iter().enumerate() {
            if self.all_served() {
                info.skipped[v] = true;
                continue;
            }
            let r = &mut rewards[v];
            if !self.valid_action_mask(v)[action] {
                r.invalid = self.config.invalid_action_penalty;
                info.invalid[v] = true;
                continue;
            }
            let (length, reload) = if action == limit {
                self.return_to_depot(v, r)
            } else {
                (self.serve(v, action, r)?, 0.0)
            };
            info.move_lengths[v] = length;
            info.reloads[v] = reload;
        }

        let done = if self.all_served() {
            true
        } else if self.agent_step >= self.config.horizon() {
            info.truncated = true;
            let share =
                self.config.unserved_client_penalty * self.unserved_clients() as f64 / nv as f64;
            for r in &mut rewards {
                r.unserved = share;
            }
            true
        } else {
            false
        };
        for r in &mut rewards {
            r.finalize();
        }
        Ok(StepOutcome {
            rewards,
            done,
            info,
        })
    }

    fn serve(&mut self, v: usize, client: usize, r: &mut RewardBreakdown) -> Result<f64, EnvError> {
        let cfg = &self.config;
        let from = self.vehicles[v].position;
        let to = self.clients[client].position;
        let length = from.distance(to);
        r.service = cfg.beta;
        r.distance = -cfg.alpha * length / cfg.d_max();
        r.zone = -cfg.lambda_zone * zone_cost(self, v, client);
        r.crossing = crossing_penalty(self, v, from, to);
        if length <= cfg.neighbor_threshold * cfg.d_max() {
            r.nearby_bonus = cfg.nearby_client_bonus;
        }

        let demand = self.clients[client].demand;
        let veh = &mut self.vehicles[v];
        veh.position = to;
        veh.capacity -= f64::from(demand);
        veh.distance += length;
        veh.route.push(Visit {
            stop: Stop::Client { id: client, demand },
            position: to,
        });
        self.clients[client].demand = 0;

        if self.config.overlap_mode == OverlapMode::CrossingAndExponential
            && self.vehicles.len() > 1
        {
            r.overlap = -self.config.lambda_overlap * overlap_exponential(self, v)?;
        }
        Ok(length)
    }

    fn return_to_depot(&mut self, v: usize, r: &mut RewardBreakdown) -> (f64, f64) {
        let depot = self.depot.position;
        let q = self.config.vehicle_capacity;
        let d_max = self.config.d_max();
        let alpha = self.config.alpha;
        let veh = &mut self.vehicles[v];
        let length = veh.position.distance(depot);
        r.distance = -alpha * length / d_max;
        let reload = (q - veh.capacity).min(self.depot.remaining).max(0.0);
        veh.capacity += reload;
        veh.position = depot;
        veh.distance += length;
        veh.reloaded += reload;
        veh.route.push(Visit {
            stop: Stop::Depot { reload },
            position: depot,
        });
        self.depot.remaining -= reload;
        (length, reload)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn single_vehicle_at(client: Pos) -> EnvState {
        let cfg = EnvConfig::with_size(1, 1);
        let mut s = EnvState::reset(&cfg, 0).unwrap();
        s.clients[0].position = client;
        s
    }

    #[test]
    fn reset_is_deterministic_and_sized() {
        let cfg = EnvConfig::default();
        let a = EnvState::reset(&cfg, 42).unwrap();
        let b = EnvState::reset(&cfg, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.observe().len(), 75);
        assert_ne!(a, EnvState::reset(&cfg, 43).unwrap());
        assert!(a
            .vehicles
            .iter()
            .all(|v| v.position == DEPOT_POSITION && v.capacity == 30.0));
    }

    #[test]
    fn demands_in_range_over_many_seeds() {
        let cfg = EnvConfig::default();
        for seed in 0..1000 {
            let s = EnvState::reset(&cfg, seed).unwrap();
            assert!(s.clients.iter().all(|c| (1..=9).contains(&c.demand)));
        }
    }

    #[test]
    fn observation_layout() {
        let cfg = EnvConfig::with_size(3, 2);
        let mut s = EnvState::reset(&cfg, 7).unwrap();
        let obs = s.observe();
        assert_eq!(&obs[..3], &[0.5, 0.5, 1.0]);
        for v in 0..2 {
            assert_eq!(obs[3 + 9 + 3 * v + 2], 1.0);
        }
        assert!(obs.iter().all(|x| (0.0..=1.0).contains(x)));
        s.step(&ActionSet(vec![1, 3])).unwrap();
        let obs = s.observe();
        assert_eq!(obs[3 + 3 + 2], 0.0);
    }

    #[test]
    fn mask_rules() {
        let cfg = EnvConfig::default();
        let mut s = EnvState::reset(&cfg, 1).unwrap();
        let m = s.valid_action_mask(0);
        assert!(m[..20].iter().all(|&b| b));
        assert!(!m[20]);

        s.vehicles[0].capacity = 0.0;
        let m = s.valid_action_mask(0);
        assert!(m[..20].iter().all(|&b| !b));
        assert!(m[20]);

        s.vehicles[0].capacity = 5.0;
        s.clients[3].demand = 7;
        assert!(!s.valid_action_mask(0)[3]);
    }

    #[test]
    fn serving_own_position_earns_service_and_bonus() {
        let mut s = single_vehicle_at(DEPOT_POSITION);
        let out = s.step(&ActionSet(vec![0])).unwrap();
        let r = out.rewards[0];
        assert_eq!(r.total, 6.0);
        assert_eq!(r.zone, 0.0);
        assert_eq!(r.distance, 0.0);
        assert!(out.done);
        assert!(s.is_terminal());
    }

    #[test]
    fn masked_action_is_a_penalised_no_op() {
        let cfg = EnvConfig::with_size(3, 1);
        let mut s = EnvState::reset(&cfg, 3).unwrap();
        let before = s.vehicles[0].clone();
        // depot is masked while clients remain
        let out = s.step(&ActionSet(vec![3])).unwrap();
        assert_eq!(out.rewards[0].total, -1.0);
        assert!(out.info.invalid[0]);
        assert_eq!(s.vehicles[0], before);
    }

    #[test]
    fn malformed_actions_are_rejected() {
        let cfg = EnvConfig::with_size(3, 2);
        let mut s = EnvState::reset(&cfg, 3).unwrap();
        assert!(matches!(
            s.step(&ActionSet(vec![0, 4])),
            Err(EnvError::MalformedAction {
                vehicle: 1,
                action: 4,
                ..
            })
        ));
        assert!(matches!(
            s.step(&ActionSet(vec![0])),
            Err(EnvError::ActionCount { .. })
        ));
        assert_eq!(s.agent_step, 0);
    }

    #[test]
    fn terminal_conditions() {
        let cfg = EnvConfig {
            max_agent_steps: Some(1),
            ..EnvConfig::with_size(3, 1)
        };
        let mut s = EnvState::reset(&cfg, 5).unwrap();
        assert!(!s.is_terminal());
        let out = s.step(&ActionSet(vec![0])).unwrap();
        assert!(out.done && out.info.truncated);
        assert_eq!(out.rewards[0].unserved, -2.0);
        assert!(s.is_terminal());
        assert_eq!(s.step(&ActionSet(vec![1])), Err(EnvError::Terminated));

        let mut s = EnvState::reset(&EnvConfig::with_size(3, 1), 5).unwrap();
        for c in &mut s.clients {
            c.demand = 0;
        }
        assert!(s.is_terminal());
    }

    #[test]
    fn depot_reload_is_bounded_by_stock() {
        let cfg = EnvConfig {
            vehicle_capacity: 10.0,
            depot_capacity: Some(3.0),
            ..EnvConfig::with_size(2, 1)
        };
        let mut s = EnvState::reset(&cfg, 9).unwrap();
        s.clients[0].demand = 8;
        s.clients[1].demand = 8;
        s.step(&ActionSet(vec![0])).unwrap();
        assert_eq!(s.valid_action_mask(0), vec![false, false, true]);
        let out = s.step(&ActionSet(vec![2])).unwrap();
        assert_eq!(out.info.reloads[0], 3.0);
        assert_eq!(s.vehicles[0].capacity, 5.0);
        assert_eq!(s.depot.remaining, 0.0);
        assert_eq!(s.vehicles[0].position, DEPOT_POSITION);
        assert_eq!(out.rewards[0].service, 0.0);
    }

    #[test]
    fn exponential_overlap_values() {
        let cfg = EnvConfig::with_size(2, 3);
        let mut s = EnvState::reset(&cfg, 0).unwrap();
        assert_abs_diff_eq!(overlap_exponential(&s, 0).unwrap(), 1.0, epsilon = 1e-15);
        // one peer at distance gamma * d_max -> e^-1, one co-located -> 1
        let step = cfg.gamma_overlap * cfg.d_max();
        s.vehicles[1].position = Pos::new(0.5 + step, 0.5);
        assert_abs_diff_eq!(
            overlap_exponential(&s, 0).unwrap(),
            (1.0 + (-1f64).exp()) / 2.0,
            epsilon = 1e-12
        );
        let single = EnvState::reset(&EnvConfig::with_size(2, 1), 0).unwrap();
        assert!(overlap_exponential(&single, 0).is_err());
    }

    #[test]
    fn exponential_overlap_mode_enters_the_reward() {
        let cfg = EnvConfig {
            overlap_mode: OverlapMode::CrossingAndExponential,
            ..EnvConfig::with_size(4, 2)
        };
        let mut s = EnvState::reset(&cfg, 2).unwrap();
        let out = s.step(&ActionSet(vec![0, 1])).unwrap();
        assert!(out.rewards.iter().all(|r| r.overlap < 0.0));
        assert!(out.rewards.iter().all(|r| r.total == r.component_sum()));
    }

    #[test]
    fn anchor_cases() {
        let cfg = EnvConfig::with_size(4, 1);
        let mut s = EnvState::reset(&cfg, 0).unwrap();
        assert_eq!(anchor(&s, 0), DEPOT_POSITION);
        let corners = [(0.0, 0.0), (1.0, 1.0), (0.0, 1.0), (1.0, 0.0)];
        for (i, &(x, y)) in corners.iter().enumerate() {
            s.clients[i].position = Pos::new(x, y);
        }
        s.step(&ActionSet(vec![0])).unwrap();
        s.step(&ActionSet(vec![1])).unwrap();
        assert_eq!(anchor(&s, 0), Pos::new(0.5, 0.5));
        s.step(&ActionSet(vec![2])).unwrap();
        s.step(&ActionSet(vec![3])).unwrap();
        assert_eq!(anchor(&s, 0), Pos::new(0.5, 0.5));
    }

    #[test]
    fn zone_cost_cases() {
        assert_abs_diff_eq!(zone_cost_ratio(2.0), 1.0 - (-1f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(
            zone_cost_ratio(2.0),
            0.632_120_558_828_557_7,
            epsilon = 1e-15
        );

        let cfg = EnvConfig::with_size(3, 1);
        let s = EnvState::reset(&cfg, 4).unwrap();
        for c in 0..3 {
            assert_eq!(zone_cost(&s, 0, c), 0.0);
        }

        let cfg = EnvConfig::with_size(3, 2);
        let mut s = EnvState::reset(&cfg, 4).unwrap();
        s.vehicles[1].position = s.clients[2].position;
        assert_eq!(zone_cost(&s, 1, 2), 0.0);
        assert!(zone_cost(&s, 0, 2) > 0.0);
    }

    #[test]
    fn crossing_penalty_cases() {
        let cfg = EnvConfig::with_size(4, 2);
        let mut s = EnvState::reset(&cfg, 0).unwrap();
        let a = Pos::new(0.0, 0.0);
        let b = Pos::new(1.0, 1.0);
        assert_eq!(crossing_penalty(&s, 0, a, b), 0.0);

        // vehicle 1 has travelled depot -> (0.5, 1.0); vehicle 0 moves across it
        s.vehicles[1].route.push(Visit {
            stop: Stop::Client { id: 0, demand: 1 },
            position: Pos::new(0.5, 1.0),
        });
        let from = Pos::new(0.0, 0.75);
        let to = Pos::new(1.0, 0.75);
        assert_abs_diff_eq!(
            crossing_penalty(&s, 0, from, to),
            -1.0 / cfg.d_max(),
            epsilon = 1e-15
        );

        // a diagonal move of length d_max across the same segment
        let diag_a = Pos::new(0.0, 1.0);
        let diag_b = Pos::new(1.0, 0.0);
        s.vehicles[1].route.clear();
        s.vehicles[1].start = Pos::new(0.0, 0.0);
        s.vehicles[1].route.push(Visit {
            stop: Stop::Client { id: 0, demand: 1 },
            position: Pos::new(1.0, 1.0),
        });
        assert_abs_diff_eq!(
            crossing_penalty(&s, 0, diag_a, diag_b),
            -1.0,
            epsilon = 1e-15
        );

        // crossing a second route does not double the penalty
        s.vehicles[0].start = Pos::new(0.2, 0.0);
        s.vehicles[0].route.push(Visit {
            stop: Stop::Client { id: 1, demand: 1 },
            position: Pos::new(0.2, 1.0),
        });
        let p = crossing_penalty(&s, 1, Pos::new(0.0, 0.5), Pos::new(1.0, 0.5));
        assert_abs_diff_eq!(p, -1.0 / cfg.d_max(), epsilon = 1e-15);
    }

    #[test]
    fn own_last_segment_is_excluded() {
        let cfg = EnvConfig::with_size(2, 1);
        let mut s = EnvState::reset(&cfg, 0).unwrap();
        s.vehicles[0].route.push(Visit {
            stop: Stop::Client { id: 0, demand: 1 },
            position: Pos::new(0.9, 0.5),
        });
        s.vehicles[0].position = Pos::new(0.9, 0.5);
        // folding back along the same line: collinear, never a proper crossing
        assert_eq!(
            crossing_penalty(&s, 0, Pos::new(0.9, 0.5), Pos::new(0.1, 0.5)),
            0.0
        );
        assert!(!move_crosses(&s, 0, Pos::new(0.9, 0.5), Pos::new(0.7, 0.9)));
    }
}
