//! Lane-segment graph with five typed relations, the adjacency/degree
//! operators used by graph convolutions, and ground-truth waypoint occupancy.

pub mod geometry;
mod occupancy;
mod projection;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numkit::Tensor;
use geometry::Point;

pub use occupancy::{OccupancyKind, WaypointOccupancy};
pub use projection::{project_track, project_track_indices, DEFAULT_MAX_OFFLANE};

pub type SegmentId = u32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("lane graph needs at least one segment")]
    NoSegments,
    #[error("duplicate segment id {0}")]
    DuplicateId(SegmentId),
    #[error("edge {relation:?}({from}, {to}) references unknown segment id {missing}")]
    DanglingId {
        relation: Relation,
        from: SegmentId,
        to: SegmentId,
        missing: SegmentId,
    },
    #[error("self-loop {relation:?} on segment {id}")]
    SelfLoop { relation: Relation, id: SegmentId },
    #[error("in_same_intersection({from}, {to}) joins segments in different intersections")]
    IntersectionMismatch { from: SegmentId, to: SegmentId },
    #[error("segment {id}: {reason}")]
    BadSegment { id: SegmentId, reason: String },
    #[error("timestep {timestep}: nearest admissible lane is {distance:.2} m away (limit {limit} m)")]
    OffMap { timestep: usize, distance: f64, limit: f64 },
    #[error("track has {positions} positions but {headings} headings")]
    TrackLength { positions: usize, headings: usize },
    #[error("occupancy invalid: {0}")]
    InvalidOccupancy(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Predecessor,
    Successor,
    LeftNeighbor,
    RightNeighbor,
    InSameIntersection,
}

impl Relation {
    pub const ALL: [Relation; 5] = [
        Relation::Predecessor,
        Relation::Successor,
        Relation::LeftNeighbor,
        Relation::RightNeighbor,
        Relation::InSameIntersection,
    ];

    /// Relation that holds for the reversed pair.
    pub fn dual(self) -> Relation {
        match self {
            Relation::Predecessor => Relation::Successor,
            Relation::Successor => Relation::Predecessor,
            Relation::LeftNeighbor => Relation::RightNeighbor,
            Relation::RightNeighbor => Relation::LeftNeighbor,
            Relation::InSameIntersection => Relation::InSameIntersection,
        }
    }

    fn slot(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneSegment {
    pub id: SegmentId,
    pub centerline: Vec<Point>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intersection_id: Option<u32>,
}

impl LaneSegment {
    pub fn new(id: SegmentId, centerline: Vec<Point>) -> Self {
        Self {
            id,
            centerline,
            intersection_id: None,
        }
    }

    pub fn in_intersection(mut self, intersection_id: u32) -> Self {
        self.intersection_id = Some(intersection_id);
        self
    }

    pub fn length(&self) -> f64 {
        geometry::polyline_length(&self.centerline)
    }

    fn validate(&self) -> Result<(), GraphError> {
        let bad = |reason: &str| GraphError::BadSegment {
            id: self.id,
            reason: reason.to_string(),
        };
        if self.centerline.len() < 2 {
            return Err(bad("centerline needs at least 2 points"));
        }
        if self.centerline.iter().flatten().any(|v| !v.is_finite()) {
            return Err(bad("non-finite centerline coordinate"));
        }
        if self.centerline.windows(2).any(|w| w[0] == w[1]) {
            return Err(bad("consecutive centerline points coincide"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TypedEdge {
    pub relation: Relation,
    pub from: SegmentId,
    pub to: SegmentId,
}

impl TypedEdge {
    pub fn new(relation: Relation, from: SegmentId, to: SegmentId) -> Self {
        Self { relation, from, to }
    }
}

#[derive(Serialize, Deserialize)]
struct RawLaneGraph {
    segments: Vec<LaneSegment>,
    edges: Vec<TypedEdge>,
}

/// Validated lane graph. Segments are kept in ascending id order and that
/// order defines the lane axis of every M-sized tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawLaneGraph", into = "RawLaneGraph")]
pub struct LaneGraph {
    segments: Vec<LaneSegment>,
    index: BTreeMap<SegmentId, usize>,
    edges: [BTreeSet<(SegmentId, SegmentId)>; 5],
}

impl TryFrom<RawLaneGraph> for LaneGraph {
    type Error = GraphError;

    fn try_from(raw: RawLaneGraph) -> Result<Self, GraphError> {
        build_graph(raw.segments, &raw.edges)
    }
}

impl From<LaneGraph> for RawLaneGraph {
    fn from(g: LaneGraph) -> Self {
        let edges = g.typed_edges();
        RawLaneGraph {
            segments: g.segments,
            edges,
        }
    }
}

/// Validates segments and edges and completes reciprocal relations.
pub fn build_graph(mut segments: Vec<LaneSegment>, typed_edges: &[TypedEdge]) -> Result<LaneGraph, GraphError> {
    if segments.is_empty() {
        return Err(GraphError::NoSegments);
    }
    segments.sort_by_key(|s| s.id);
    let mut index = BTreeMap::new();
    for (i, s) in segments.iter().enumerate() {
        s.validate()?;
        if index.insert(s.id, i).is_some() {
            return Err(GraphError::DuplicateId(s.id));
        }
    }
    let mut edges: [BTreeSet<(SegmentId, SegmentId)>; 5] = Default::default();
    for e in typed_edges {
        for endpoint in [e.from, e.to] {
            if !index.contains_key(&endpoint) {
                return Err(GraphError::DanglingId {
                    relation: e.relation,
                    from: e.from,
                    to: e.to,
                    missing: endpoint,
                });
            }
        }
        if e.from == e.to {
            return Err(GraphError::SelfLoop {
                relation: e.relation,
                id: e.from,
            });
        }
        if e.relation == Relation::InSameIntersection {
            let a = segments[index[&e.from]].intersection_id;
            let b = segments[index[&e.to]].intersection_id;
            if a.is_none() || a != b {
                return Err(GraphError::IntersectionMismatch { from: e.from, to: e.to });
            }
        }
        edges[e.relation.slot()].insert((e.from, e.to));
        edges[e.relation.dual().slot()].insert((e.to, e.from));
    }
    Ok(LaneGraph { segments, index, edges })
}

impl LaneGraph {
    pub fn num_segments(&self) -> usize {
        self.segments.len()
    }

    pub fn segments(&self) -> &[LaneSegment] {
        &self.segments
    }

    /// Segment at lane-axis position `index`.
    pub fn segment(&self, index: usize) -> &LaneSegment {
        &self.segments[index]
    }

    pub fn index_of(&self, id: SegmentId) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn has_edge(&self, relation: Relation, from: SegmentId, to: SegmentId) -> bool {
        self.edges[relation.slot()].contains(&(from, to))
    }

    pub fn edges(&self, relation: Relation) -> impl Iterator<Item = (SegmentId, SegmentId)> + '_ {
        self.edges[relation.slot()].iter().copied()
    }

    /// Every stored edge, duals included, in deterministic order.
    pub fn typed_edges(&self) -> Vec<TypedEdge> {
        Relation::ALL
            .iter()
            .flat_map(|&r| self.edges(r).map(move |(a, b)| TypedEdge::new(r, a, b)))
            .collect()
    }

    /// True when two segments are identical or joined by any relation.
    pub fn related(&self, a: usize, b: usize) -> bool {
        let (ia, ib) = (self.segments[a].id, self.segments[b].id);
        a == b || Relation::ALL.iter().any(|&r| self.has_edge(r, ia, ib))
    }

    /// `(A_e, D_e)` for one relation: `A_e[i][j] = 1` iff `relation(i, j)`;
    /// `D_e` is diagonal with `max(1, out-degree)`, so it is always invertible.
    pub fn adjacency(&self, relation: Relation) -> (Tensor, Tensor) {
        let m = self.num_segments();
        let mut a = Tensor::zeros(&[m, m]);
        for (from, to) in self.edges(relation) {
            a.set(&[self.index[&from], self.index[&to]], 1.0);
        }
        let mut d = Tensor::zeros(&[m, m]);
        for i in 0..m {
            let deg: f64 = (0..m).map(|j| a.at(&[i, j])).sum();
            d.set(&[i, i], deg.max(1.0));
        }
        (a, d)
    }

    /// Row-normalized operator `D_e^-1 A_e`.
    pub fn normalized_adjacency(&self, relation: Relation) -> Tensor {
        let (mut a, d) = self.adjacency(relation);
        let m = self.num_segments();
        for i in 0..m {
            let inv = 1.0 / d.at(&[i, i]);
            for j in 0..m {
                let v = a.at(&[i, j]);
                a.set(&[i, j], v * inv);
            }
        }
        a
    }

    /// Decodes an adjacency matrix back into id pairs.
    pub fn edges_from_adjacency(&self, a: &Tensor) -> BTreeSet<(SegmentId, SegmentId)> {
        let m = self.num_segments();
        let mut out = BTreeSet::new();
        for i in 0..m {
            for j in 0..m {
                if a.at(&[i, j]) != 0.0 {
                    out.insert((self.segments[i].id, self.segments[j].id));
                }
            }
        }
        out
    }
}
