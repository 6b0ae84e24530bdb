use serde::{Deserialize, Serialize};

use super::GraphError;
use crate::numkit::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OccupancyKind {
    Predicted,
    GroundTruth,
}

/// Per-agent, per-timestep distribution over lane segments, stored as an
/// `N x M x T` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct WaypointOccupancy {
    values: Tensor,
    kind: OccupancyKind,
}

const SIMPLEX_TOL: f64 = 1e-9;

impl WaypointOccupancy {
    /// Wraps and validates a tensor of the given kind.
    pub fn new(values: Tensor, kind: OccupancyKind) -> Result<Self, GraphError> {
        let occ = Self { values, kind };
        occ.validate()?;
        Ok(occ)
    }

    /// One-hot occupancy from per-agent lane indices (`lanes[agent][t]`).
    pub fn one_hot(lanes: &[Vec<usize>], num_lanes: usize) -> Result<Self, GraphError> {
        let n = lanes.len();
        let t = lanes.first().map_or(0, Vec::len);
        let mut values = Tensor::zeros(&[n, num_lanes, t]);
        for (i, row) in lanes.iter().enumerate() {
            if row.len() != t {
                return Err(GraphError::InvalidOccupancy("ragged lane index rows".into()));
            }
            for (step, &m) in row.iter().enumerate() {
                if m >= num_lanes {
                    return Err(GraphError::InvalidOccupancy(format!("lane index {m} >= {num_lanes}")));
                }
                values.set(&[i, m, step], 1.0);
            }
        }
        Self::new(values, OccupancyKind::GroundTruth)
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn kind(&self) -> OccupancyKind {
        self.kind
    }

    pub fn num_agents(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn num_lanes(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn horizon(&self) -> usize {
        self.values.shape()[2]
    }

    /// Probability vector over lanes for one agent and timestep.
    pub fn slice(&self, agent: usize, step: usize) -> Vec<f64> {
        (0..self.num_lanes()).map(|m| self.values.at(&[agent, m, step])).collect()
    }

    /// Most probable lane (lowest index on ties).
    pub fn argmax(&self, agent: usize, step: usize) -> usize {
        let s = self.slice(agent, step);
        let mut best = 0;
        for (m, &v) in s.iter().enumerate() {
            if v > s[best] {
                best = m;
            }
        }
        best
    }

    /// `N x M` slice at the last timestep.
    pub fn final_step(&self) -> Tensor {
        let (n, m, t) = (self.num_agents(), self.num_lanes(), self.horizon());
        Tensor::from_fn(&[n, m], |i| self.values.at(&[i / m, i % m, t - 1]))
    }

    /// All timesteps but the last.
    pub fn intermediate(&self) -> Tensor {
        let (n, m, t) = (self.num_agents(), self.num_lanes(), self.horizon());
        let keep = t.saturating_sub(1);
        Tensor::from_fn(&[n, m, keep], |i| {
            let (a, rest) = (i / (m * keep), i % (m * keep));
            self.values.at(&[a, rest / keep, rest % keep])
        })
    }

    pub fn validate(&self) -> Result<(), GraphError> {
        if self.values.rank() != 3 {
            return Err(GraphError::InvalidOccupancy(format!(
                "expected N x M x T, got {:?}",
                self.values.shape()
            )));
        }
        for i in 0..self.num_agents() {
            for t in 0..self.horizon() {
                let s = self.slice(i, t);
                if s.iter().any(|&v| v < 0.0 || !v.is_finite()) {
                    return Err(GraphError::InvalidOccupancy(format!("agent {i} step {t}: negative or non-finite")));
                }
                match self.kind {
                    OccupancyKind::Predicted => {
                        let total: f64 = s.iter().sum();
                        if (total - 1.0).abs() > SIMPLEX_TOL {
                            return Err(GraphError::InvalidOccupancy(format!(
                                "agent {i} step {t}: sums to {total}"
                            )));
                        }
                    }
                    OccupancyKind::GroundTruth => {
                        let ones = s.iter().filter(|&&v| v == 1.0).count();
                        let zeros = s.iter().filter(|&&v| v == 0.0).count();
                        if ones != 1 || ones + zeros != s.len() {
                            return Err(GraphError::InvalidOccupancy(format!("agent {i} step {t}: not one-hot")));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}
