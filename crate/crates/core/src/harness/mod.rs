//! Route logs, solution metrics, multi-seed statistics, SVG rendering,
//! run configuration and the multi-seed benchmark driver.

mod bench;
mod config;
mod stats;
mod svg;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::a2c::TrainError;
use crate::env::{EnvError, EnvState, Pos, Stop};
use crate::geometry::segments_properly_intersect;
use crate::policy::PolicyError;

pub use bench::{bench, BenchCell, BenchReport};
pub use config::RunConfig;
pub use stats::{
    aggregate_runs, boxplot_summary, render_table, BoxplotSummary, Report, Stat, METRICS,
};
pub use svg::{render_boxplot_svg, render_routes_svg, routes_svg};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("undefined metric: {0}")]
    Undefined(&'static str),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Env(#[from] EnvError),
}

impl HarnessError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Self::Json {
            context: context.into(),
            source,
        }
    }
}

/// One vehicle's path: `positions[0]` is the depot and `stops[i]` annotates
/// the move into `positions[i + 1]`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct VehicleRoute {
    pub positions: Vec<Pos>,
    pub stops: Vec<Stop>,
}

impl VehicleRoute {
    pub fn segments(&self) -> impl Iterator<Item = (Pos, Pos)> + '_ {
        self.positions.windows(2).map(|w| (w[0], w[1]))
    }

    pub fn served_positions(&self) -> Vec<Pos> {
        self.stops
            .iter()
            .zip(&self.positions[1..])
            .filter(|(s, _)| matches!(s, Stop::Client { .. }))
            .map(|(_, p)| *p)
            .collect()
    }

    pub fn length(&self) -> f64 {
        self.segments().map(|(a, b)| a.distance(b)).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RouteLog {
    pub vehicles: Vec<VehicleRoute>,
}

impl RouteLog {
    pub fn from_state(state: &EnvState) -> Self {
        let vehicles = state
            .vehicles
            .iter()
            .map(|v| VehicleRoute {
                positions: std::iter::once(v.start)
                    .chain(v.route.iter().map(|r| r.position))
                    .collect(),
                stops: v.route.iter().map(|r| r.stop).collect(),
            })
            .collect();
        Self { vehicles }
    }

    pub fn served_clients(&self) -> usize {
        self.vehicles
            .iter()
            .map(|v| v.served_positions().len())
            .sum()
    }
}

/// Sum of all segment lengths over all vehicles.
pub fn total_distance(routes: &RouteLog) -> f64 {
    routes.vehicles.iter().map(VehicleRoute::length).sum()
}

/// `100 * sum_v mean_i ||p_i - centroid_v||` over vehicles that served at
/// least one client. Lower is tighter.
pub fn compactness(routes: &RouteLog) -> Result<f64, HarnessError> {
    let mut total = 0.0;
    let mut any = false;
    for v in &routes.vehicles {
        let served = v.served_positions();
        if served.is_empty() {
            continue;
        }
        any = true;
        let n = served.len() as f64;
        let cx = served.iter().map(|p| p.x).sum::<f64>() / n;
        let cy = served.iter().map(|p| p.y).sum::<f64>() / n;
        let c = Pos::new(cx, cy);
        total += served.iter().map(|p| p.distance(c)).sum::<f64>() / n;
    }
    if !any {
        return Err(HarnessError::Undefined(
            "compactness needs at least one served client",
        ));
    }
    Ok(100.0 * total)
}

/// Unordered pairs of properly crossing segments, skipping consecutive
/// segments of the same vehicle.
pub fn crossings_count(routes: &RouteLog) -> usize {
    let segs: Vec<(usize, usize, Pos, Pos)> = routes
        .vehicles
        .iter()
        .enumerate()
        .flat_map(|(v, r)| {
            r.segments()
                .enumerate()
                .map(move |(i, (a, b))| (v, i, a, b))
        })
        .collect();
    let mut count = 0;
    for (i, &(va, ia, a1, a2)) in segs.iter().enumerate() {
        for &(vb, ib, b1, b2) in &segs[i + 1..] {
            if va == vb && ia.abs_diff(ib) == 1 {
                continue;
            }
            if segments_properly_intersect(a1, a2, b1, b2) {
                count += 1;
            }
        }
    }
    count
}

/// Solution quality of one greedy evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub variant: String,
    pub seed: u64,
    pub episode: usize,
    pub reward: f64,
    pub distance: f64,
    /// `None` when no client was served.
    pub compactness: Option<f64>,
    pub crossings: usize,
    pub served: usize,
}

impl MetricsRecord {
    pub fn measure(
        variant: &str,
        seed: u64,
        episode: usize,
        reward: f64,
        routes: &RouteLog,
    ) -> Self {
        Self {
            variant: variant.to_owned(),
            seed,
            episode,
            reward,
            distance: total_distance(routes),
            compactness: compactness(routes).ok(),
            crossings: crossings_count(routes),
            served: routes.served_clients(),
        }
    }

    pub fn metric(&self, name: &str) -> Option<f64> {
        match name {
            "distance" => Some(self.distance),
            "compactness" => self.compactness,
            "crossings" => Some(self.crossings as f64),
            "reward" => Some(self.reward),
            "served" => Some(self.served as f64),
            _ => None,
        }
    }
}
