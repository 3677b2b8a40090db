//! Reward terms: anchors and zone cost, crossing penalty, exponential overlap.

use serde::{Deserialize, Serialize};

use super::{EnvError, EnvState, Pos};
use crate::geometry::segments_properly_intersect;

/// Per-vehicle, per-transition reward decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub service: f64,
    pub distance: f64,
    pub zone: f64,
    pub crossing: f64,
    pub overlap: f64,
    pub nearby_bonus: f64,
    pub invalid: f64,
    pub unserved: f64,
    pub total: f64,
}

impl RewardBreakdown {
    pub fn component_sum(&self) -> f64 {
        self.service
            + self.distance
            + self.zone
            + self.crossing
            + self.overlap
            + self.nearby_bonus
            + self.invalid
            + self.unserved
    }

    pub(crate) fn finalize(&mut self) {
        self.total = self.component_sum();
    }
}

/// Centroid of the positions a vehicle has served, or its position if none.
pub fn anchor(state: &EnvState, vehicle: usize) -> Pos {
    let v = &state.vehicles[vehicle];
    let served: Vec<Pos> = v.served_positions().collect();
    if served.is_empty() {
        return v.position;
    }
    let n = served.len() as f64;
    let (sx, sy) = served
        .iter()
        .fold((0.0, 0.0), |(ax, ay), p| (ax + p.x, ay + p.y));
    Pos::new(sx / n, sy / n)
}

/// `1 - exp(-(d / d_best - 1))` with `d = ||x_c - anchor|| + eps`; zero for
/// the vehicle whose anchor is closest.
pub fn zone_cost(state: &EnvState, vehicle: usize, client: usize) -> f64 {
    let eps = state.config.epsilon_zone;
    let target = state.clients[client].position;
    let dist = |v: usize| target.distance(anchor(state, v)) + eps;
    let d = dist(vehicle);
    let d_best = (0..state.vehicles.len())
        .map(dist)
        .fold(f64::INFINITY, f64::min);
    zone_cost_ratio(d / d_best)
}

/// Largest `f64` below one.
const BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;

/// Closed form of the zone cost as a function of `d / d_best`. Large ratios
/// round down to the last float below one rather than up to one.
pub fn zone_cost_ratio(ratio: f64) -> f64 {
    (-(-(ratio - 1.0)).exp_m1()).min(BELOW_ONE)
}

/// Whether the move `from -> to` of `vehicle` properly crosses any existing
/// route segment, ignoring the vehicle's own last segment (contiguous to the move).
pub fn move_crosses(state: &EnvState, vehicle: usize, from: Pos, to: Pos) -> bool {
    state.vehicles.iter().enumerate().any(|(v, veh)| {
        let segs = veh.segments();
        let skip = if v == vehicle {
            segs.len().checked_sub(1)
        } else {
            None
        };
        segs.iter()
            .enumerate()
            .filter(|(i, _)| Some(*i) != skip)
            .any(|(_, (s1, s2))| segments_properly_intersect(from, to, *s1, *s2))
    })
}

/// `-lambda_overlap * ||to - from|| / d_max` if the move crosses an existing
/// segment, else 0. Charged once per move however many segments are crossed.
pub fn crossing_penalty(state: &EnvState, vehicle: usize, from: Pos, to: Pos) -> f64 {
    if move_crosses(state, vehicle, from, to) {
        -state.config.lambda_overlap * from.distance(to) / state.config.d_max()
    } else {
        0.0
    }
}

/// Mean of `exp(-||p_k - p_v|| / (gamma d_max))` over the other vehicles.
pub fn overlap_exponential(state: &EnvState, vehicle: usize) -> Result<f64, EnvError> {
    let n = state.vehicles.len();
    if n < 2 {
        return Err(EnvError::Contract(
            "exponential overlap needs at least two vehicles".into(),
        ));
    }
    let scale = state.config.gamma_overlap * state.config.d_max();
    let p = state.vehicles[vehicle].position;
    let total: f64 = state
        .vehicles
        .iter()
        .enumerate()
        .filter(|(v, _)| *v != vehicle)
        .map(|(_, other)| (-p.distance(other.position) / scale).exp())
        .sum();
    Ok(total / (n - 1) as f64)
}
