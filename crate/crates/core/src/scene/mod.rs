//! Synthetic multi-agent driving scenes and their line-delimited file format.

mod dataset;
mod synth;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lane_graph::geometry::{self, Point};
use crate::lane_graph::{project_track_indices, GraphError, LaneGraph, WaypointOccupancy, DEFAULT_MAX_OFFLANE};

pub use dataset::{read_dataset, write_dataset, DatasetError, DATASET_FORMAT_VERSION};
pub use synth::{generate_scene, generate_split, split_seeds, SceneParams, Split, V_MAX};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("parameter `{name}` = {value} outside [{min}, {max}]")]
    ParamOutOfBounds {
        name: &'static str,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("agent {agent}: {reason}")]
    BadTrack { agent: usize, reason: String },
    #[error("scene has no agents")]
    NoAgents,
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Merge,
    Intersection,
    Follow,
}

impl ScenarioKind {
    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::Merge => "merge",
            ScenarioKind::Intersection => "intersection",
            ScenarioKind::Follow => "follow",
        }
    }
}

impl std::str::FromStr for ScenarioKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "merge" => Ok(Self::Merge),
            "intersection" => Ok(Self::Intersection),
            "follow" => Ok(Self::Follow),
            other => Err(format!("unknown scenario kind `{other}`")),
        }
    }
}

/// Outcome of the latent conflict between the two primary agents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InteractionMode {
    /// Agent 0 lets agent 1 pass the conflict point first.
    Yield,
    /// Agent 0 passes the conflict point first.
    Surpass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTrack {
    pub agent_id: u32,
    /// `t_p` positions; the last one is the current position.
    pub past: Vec<Point>,
    /// `t_f` positions at times `dt, 2 dt, ...`.
    pub future: Vec<Point>,
    /// `t_p + t_f` headings in radians, past first.
    pub headings: Vec<f64>,
}

impl AgentTrack {
    pub fn current_position(&self) -> Point {
        *self.past.last().expect("non-empty past")
    }

    pub fn current_heading(&self) -> f64 {
        self.headings[self.past.len() - 1]
    }

    pub fn past_headings(&self) -> &[f64] {
        &self.headings[..self.past.len()]
    }

    pub fn future_headings(&self) -> &[f64] {
        &self.headings[self.past.len()..]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub scenario_kind: ScenarioKind,
    pub seed: u64,
    pub dt: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interaction: Option<InteractionMode>,
    pub graph: LaneGraph,
    pub agents: Vec<AgentTrack>,
}

impl Scene {
    pub fn num_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn t_past(&self) -> usize {
        self.agents[0].past.len()
    }

    pub fn t_future(&self) -> usize {
        self.agents[0].future.len()
    }

    /// Ground-truth occupancy of every agent's future (`N x M x t_f`).
    pub fn gt_occupancy(&self) -> Result<WaypointOccupancy, GraphError> {
        let lanes = self.gt_lane_indices()?;
        WaypointOccupancy::one_hot(&lanes, self.graph.num_segments())
    }

    pub fn gt_lane_indices(&self) -> Result<Vec<Vec<usize>>, GraphError> {
        self.agents
            .iter()
            .map(|a| project_track_indices(&a.future, a.future_headings(), &self.graph, DEFAULT_MAX_OFFLANE))
            .collect()
    }

    /// Checks shared lengths, finiteness, speed bounds and on-map futures.
    pub fn validate(&self) -> Result<(), SceneError> {
        let first = self.agents.first().ok_or(SceneError::NoAgents)?;
        let (tp, tf) = (first.past.len(), first.future.len());
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(SceneError::ParamOutOfBounds {
                name: "dt",
                value: self.dt,
                min: 0.0,
                max: f64::INFINITY,
            });
        }
        for (i, a) in self.agents.iter().enumerate() {
            let bad = |reason: String| SceneError::BadTrack { agent: i, reason };
            if a.past.len() != tp || a.future.len() != tf || tp == 0 || tf == 0 {
                return Err(bad(format!(
                    "track lengths {}/{} differ from {tp}/{tf}",
                    a.past.len(),
                    a.future.len()
                )));
            }
            if a.headings.len() != tp + tf {
                return Err(bad(format!("{} headings for {} positions", a.headings.len(), tp + tf)));
            }
            let all: Vec<Point> = a.past.iter().chain(&a.future).copied().collect();
            if all.iter().flatten().chain(&a.headings).any(|v| !v.is_finite()) {
                return Err(bad("non-finite value".into()));
            }
            for (k, w) in all.windows(2).enumerate() {
                let step = geometry::sub(w[1], w[0]);
                let speed = geometry::norm(step) / self.dt;
                if speed > V_MAX + 1e-9 {
                    return Err(bad(format!("speed {speed:.2} m/s exceeds {V_MAX}")));
                }
                let off = geometry::wrap_angle(step[1].atan2(step[0]) - a.headings[k + 1]).abs();
                if speed > 0.5 && off > std::f64::consts::FRAC_PI_4 {
                    return Err(bad(format!("heading off displacement by {off:.2} rad at step {}", k + 1)));
                }
            }
            project_track_indices(&a.future, a.future_headings(), &self.graph, DEFAULT_MAX_OFFLANE)?;
        }
        Ok(())
    }
}
