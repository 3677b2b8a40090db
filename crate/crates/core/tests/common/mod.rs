//! Independent reference implementations shared by the integration tests.

#![allow(dead_code)]

use num_rational::Ratio;
use qpn_core::env::{EnvState, StepOutcome};
use qpn_core::{ActionSet, EnvConfig, Point64};
use rand::Rng;

/// Parametric crossing test on exact rationals: solves `a1 + t (a2 - a1) =
/// b1 + u (b2 - b1)` by Cramer's rule and demands `0 < t, u < 1`.
pub fn crossing_by_parameters(
    a1: (i64, i64),
    a2: (i64, i64),
    b1: (i64, i64),
    b2: (i64, i64),
) -> bool {
    let (rx, ry) = (a2.0 - a1.0, a2.1 - a1.1);
    let (sx, sy) = (b2.0 - b1.0, b2.1 - b1.1);
    let den = rx * sy - ry * sx;
    if den == 0 {
        return false;
    }
    let (qx, qy) = (b1.0 - a1.0, b1.1 - a1.1);
    let t = Ratio::new(qx * sy - qy * sx, den);
    let u = Ratio::new(qx * ry - qy * rx, den);
    let zero = Ratio::from_integer(0);
    let one = Ratio::from_integer(1);
    t > zero && t < one && u > zero && u < one
}

/// Same solve in floating point for continuous coordinates.
pub fn crossing_by_parameters_f64(a1: Point64, a2: Point64, b1: Point64, b2: Point64) -> bool {
    let (rx, ry) = (a2.x - a1.x, a2.y - a1.y);
    let (sx, sy) = (b2.x - b1.x, b2.y - b1.y);
    let den = rx * sy - ry * sx;
    if den == 0.0 {
        return false;
    }
    let (qx, qy) = (b1.x - a1.x, b1.y - a1.y);
    let t = (qx * sy - qy * sx) / den;
    let u = (qx * ry - qy * rx) / den;
    t > 0.0 && t < 1.0 && u > 0.0 && u < 1.0
}

/// Mirror of the shared demands and vehicle capacities, advanced one vehicle
/// at a time from the reported step diagnostics.
#[derive(Debug, Clone)]
pub struct Mirror {
    pub demands: Vec<u32>,
    pub capacities: Vec<f64>,
}

impl Mirror {
    pub fn of(state: &EnvState) -> Self {
        Self {
            demands: state.clients.iter().map(|c| c.demand).collect(),
            capacities: state.vehicles.iter().map(|v| v.capacity).collect(),
        }
    }

    pub fn mask(&self, vehicle: usize) -> Vec<bool> {
        let cap = self.capacities[vehicle];
        let mut m: Vec<bool> = self
            .demands
            .iter()
            .map(|&d| d > 0 && f64::from(d) <= cap)
            .collect();
        let any = m.iter().any(|&b| b);
        m.push(!any);
        m
    }

    pub fn all_served(&self) -> bool {
        self.demands.iter().all(|&d| d == 0)
    }
}

/// Facts checked per transition; returns a description of the first breach.
pub fn audit_step(
    before: &EnvState,
    actions: &ActionSet,
    outcome: &StepOutcome,
    after: &EnvState,
) -> Result<(), String> {
    let mut mirror = Mirror::of(before);
    let n = before.n_clients();
    for (v, &a) in actions.0.iter().enumerate() {
        if mirror.all_served() {
            if !outcome.info.skipped[v] {
                return Err(format!("vehicle {v} acted after every demand was served"));
            }
            continue;
        }
        let valid = mirror.mask(v)[a];
        if outcome.info.invalid[v] == valid {
            return Err(format!(
                "vehicle {v} action {a}: valid={valid} but invalid flag {}",
                outcome.info.invalid[v]
            ));
        }
        if !valid {
            continue;
        }
        if a == n {
            mirror.capacities[v] += outcome.info.reloads[v];
        } else {
            mirror.capacities[v] -= f64::from(mirror.demands[a]);
            mirror.demands[a] = 0;
        }
    }
    let demands: Vec<u32> = after.clients.iter().map(|c| c.demand).collect();
    if demands != mirror.demands {
        return Err(format!(
            "demands {demands:?} differ from mirror {:?}",
            mirror.demands
        ));
    }
    for (v, veh) in after.vehicles.iter().enumerate() {
        if veh.capacity < 0.0 {
            return Err(format!("vehicle {v} capacity {} is negative", veh.capacity));
        }
        if veh.capacity != mirror.capacities[v] {
            return Err(format!(
                "vehicle {v} capacity {} differs from mirror {}",
                veh.capacity, mirror.capacities[v]
            ));
        }
    }
    for (v, r) in outcome.rewards.iter().enumerate() {
        if r.total != r.component_sum() {
            return Err(format!(
                "vehicle {v} total {} differs from component sum {}",
                r.total,
                r.component_sum()
            ));
        }
    }
    Ok(())
}

/// Episode-level conservation: delivered demand equals the demand removed
/// from clients, and reloads never exceed the initial depot stock.
pub fn audit_episode(state: &EnvState) -> Result<(), String> {
    let delivered: u64 = state
        .vehicles
        .iter()
        .flat_map(|v| &v.route)
        .map(|visit| match visit.stop {
            qpn_core::env::Stop::Client { demand, .. } => u64::from(demand),
            qpn_core::env::Stop::Depot { .. } => 0,
        })
        .sum();
    if delivered + state.remaining_demand() != state.initial_demand() {
        return Err(format!(
            "delivered {delivered} + remaining {} != initial {}",
            state.remaining_demand(),
            state.initial_demand()
        ));
    }
    let reloaded: f64 = state.vehicles.iter().map(|v| v.reloaded).sum();
    if reloaded > state.depot.initial {
        return Err(format!(
            "reloaded {reloaded} exceeds depot stock {}",
            state.depot.initial
        ));
    }
    if state.depot.remaining < 0.0 {
        return Err(format!("depot stock {} is negative", state.depot.remaining));
    }
    Ok(())
}

/// Random actions: a valid one with probability `p_valid`, otherwise uniform
/// over every action including masked ones.
pub fn random_actions<R: Rng>(state: &EnvState, p_valid: f64, rng: &mut R) -> ActionSet {
    let n = state.n_clients() + 1;
    ActionSet(
        (0..state.n_vehicles())
            .map(|v| {
                if rng.gen_bool(p_valid) {
                    let valid: Vec<usize> = state
                        .valid_action_mask(v)
                        .iter()
                        .enumerate()
                        .filter(|(_, &m)| m)
                        .map(|(i, _)| i)
                        .collect();
                    valid[rng.gen_range(0..valid.len())]
                } else {
                    rng.gen_range(0..n)
                }
            })
            .collect(),
    )
}

/// Runs one random-policy episode, auditing every transition.
pub fn audited_episode<R: Rng>(
    config: &EnvConfig,
    seed: u64,
    p_valid: f64,
    rng: &mut R,
) -> Result<EnvState, String> {
    let mut state = EnvState::reset(config, seed).map_err(|e| e.to_string())?;
    while !state.is_terminal() {
        let actions = random_actions(&state, p_valid, rng);
        let before = state.clone();
        let outcome = state.step(&actions).map_err(|e| e.to_string())?;
        audit_step(&before, &actions, &outcome, &state)?;
        if outcome.done != state.is_terminal() {
            return Err("done flag disagrees with terminal state".into());
        }
    }
    audit_episode(&state)?;
    Ok(state)
}

/// Best single-vehicle tour by exhaustive search over client orders.
/// A reload is only legal when no remaining client fits; an order that asks
/// for a client that does not fit while another would is discarded.
#[derive(Debug, Clone, PartialEq)]
pub struct Tour {
    pub actions: Vec<usize>,
    pub distance: f64,
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

pub fn brute_force_tour(
    positions: &[(f64, f64)],
    demands: &[u32],
    depot: (f64, f64),
    q: f64,
    depot_stock: f64,
) -> Option<Tour> {
    let n = positions.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut best: Option<Tour> = None;
    permute(&mut order, 0, &mut |perm| {
        let mut cap = q;
        let mut stock = depot_stock;
        let mut pos = depot;
        let mut served = vec![false; n];
        let mut total = 0.0;
        let mut actions = Vec::new();
        for &c in perm {
            if f64::from(demands[c]) > cap {
                let other_fits = (0..n).any(|k| !served[k] && f64::from(demands[k]) <= cap);
                if other_fits {
                    return;
                }
                total += dist(pos, depot);
                pos = depot;
                let reload = (q - cap).min(stock);
                cap += reload;
                stock -= reload;
                actions.push(n);
                if f64::from(demands[c]) > cap {
                    return;
                }
            }
            total += dist(pos, positions[c]);
            pos = positions[c];
            cap -= f64::from(demands[c]);
            served[c] = true;
            actions.push(c);
        }
        if best.as_ref().is_none_or(|b| total < b.distance) {
            best = Some(Tour {
                actions,
                distance: total,
            });
        }
    });
    best
}

fn permute(items: &mut Vec<usize>, k: usize, visit: &mut dyn FnMut(&[usize])) {
    if k == items.len() {
        visit(items);
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        permute(items, k + 1, visit);
        items.swap(k, i);
    }
}
