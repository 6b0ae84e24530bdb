//! Agent-centric preprocessing. Every agent's track is expressed in its own
//! current pose (origin at the last observed position, x axis along the
//! current heading); lanes are summarized in a scene frame and, pairwise, in
//! each agent's frame.

use crate::lane_graph::geometry::{self, Point};
use crate::lane_graph::{Relation, WaypointOccupancy};
use crate::numkit::Tensor;
use crate::scene::Scene;

use super::ModelError;

/// Per-step motion channels: local position, local velocity, heading cos/sin.
pub const MOTION_FEATURES: usize = 6;
/// Resampled centerline, length, chord direction.
pub const LANE_FEATURES: usize = 2 * LANE_POINTS + 3;
/// Centerline and chord direction in the agent frame, plus distance.
pub const GEO_FEATURES: usize = 2 * LANE_POINTS + 3;

const LANE_POINTS: usize = 6;
const POS_SCALE: f64 = 20.0;
const VEL_SCALE: f64 = 10.0;
const LANE_SCALE: f64 = 50.0;
const GEO_SCALE: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub origin: Point,
    pub heading: f64,
}

impl Frame {
    pub fn to_local(&self, p: Point) -> Point {
        geometry::rotate(geometry::sub(p, self.origin), -self.heading)
    }

    pub fn to_world(&self, p: Point) -> Point {
        let r = geometry::rotate(p, self.heading);
        [r[0] + self.origin[0], r[1] + self.origin[1]]
    }

    pub fn rotate_to_local(&self, v: Point) -> Point {
        geometry::rotate(v, -self.heading)
    }
}

/// `[T, MOTION_FEATURES]` rows for one track in `frame`.
pub fn motion_rows(points: &[Point], headings: &[f64], frame: &Frame, dt: f64) -> Vec<[f64; MOTION_FEATURES]> {
    let vel = |k: usize| -> Point {
        if points.len() < 2 {
            return [0.0, 0.0];
        }
        let k = k.max(1);
        let d = frame.rotate_to_local(geometry::sub(points[k], points[k - 1]));
        [d[0] / dt, d[1] / dt]
    };
    points
        .iter()
        .zip(headings)
        .enumerate()
        .map(|(k, (&p, &h))| {
            let q = frame.to_local(p);
            let v = vel(k);
            let a = geometry::wrap_angle(h - frame.heading);
            [q[0] / POS_SCALE, q[1] / POS_SCALE, v[0] / VEL_SCALE, v[1] / VEL_SCALE, a.cos(), a.sin()]
        })
        .collect()
}

fn stack(rows: &[Vec<[f64; MOTION_FEATURES]>]) -> Tensor {
    let t = rows.first().map_or(0, Vec::len);
    let data: Vec<f64> = rows.iter().flatten().flatten().copied().collect();
    Tensor::new(&[rows.len(), t, MOTION_FEATURES], data).expect("uniform track lengths")
}

/// Everything the model reads from a scene at inference time.
#[derive(Debug, Clone)]
pub struct SceneInputs {
    pub frames: Vec<Frame>,
    /// `N x t_p x MOTION_FEATURES`.
    pub past: Tensor,
    /// `M x LANE_FEATURES`.
    pub lanes: Tensor,
    /// `N x M x GEO_FEATURES`.
    pub geo: Tensor,
    /// `D_e^-1 A_e` for each relation, in [`Relation::ALL`] order.
    pub adjacency: Vec<Tensor>,
    /// `N x 2` constant-velocity displacement per step, agent frame.
    pub cv_step: Tensor,
}

impl SceneInputs {
    pub fn num_agents(&self) -> usize {
        self.frames.len()
    }

    pub fn num_lanes(&self) -> usize {
        self.lanes.shape()[0]
    }
}

/// Ground truth used for training.
#[derive(Debug, Clone)]
pub struct Supervision {
    /// `N x (t_f + 1) x MOTION_FEATURES`: current position followed by the future.
    pub future: Tensor,
    /// `N x t_f x 2` future positions in the agent frame.
    pub future_local: Tensor,
    /// One-hot `N x M x t_f`.
    pub occupancy: WaypointOccupancy,
    /// Segment index occupied at the final step, per agent.
    pub goals: Vec<usize>,
}

pub fn scene_inputs(scene: &Scene, t_past: usize) -> Result<SceneInputs, ModelError> {
    if scene.agents.is_empty() {
        return Err(ModelError::Input("scene has no agents".into()));
    }
    if let Some((i, a)) = scene.agents.iter().enumerate().find(|(_, a)| a.past.len() != t_past) {
        return Err(ModelError::TrackLength {
            agent: i,
            expected: t_past,
            found: a.past.len(),
        });
    }
    let frames: Vec<Frame> = scene
        .agents
        .iter()
        .map(|a| Frame {
            origin: a.current_position(),
            heading: a.current_heading(),
        })
        .collect();
    let past: Vec<_> = scene
        .agents
        .iter()
        .zip(&frames)
        .map(|(a, f)| motion_rows(&a.past, a.past_headings(), f, scene.dt))
        .collect();

    let n = frames.len();
    let center = [
        frames.iter().map(|f| f.origin[0]).sum::<f64>() / n as f64,
        frames.iter().map(|f| f.origin[1]).sum::<f64>() / n as f64,
    ];
    let scene_frame = Frame {
        origin: center,
        heading: frames[0].heading,
    };
    let graph = &scene.graph;
    let m = graph.num_segments();
    let resampled: Vec<Vec<Point>> = graph
        .segments()
        .iter()
        .map(|s| geometry::resample(&s.centerline, LANE_POINTS))
        .collect();

    let mut lanes = Vec::with_capacity(m * LANE_FEATURES);
    for (seg, pts) in graph.segments().iter().zip(&resampled) {
        for &p in pts {
            let q = scene_frame.to_local(p);
            lanes.extend([q[0] / LANE_SCALE, q[1] / LANE_SCALE]);
        }
        lanes.push(seg.length() / LANE_SCALE);
        lanes.extend(chord(pts, &scene_frame));
    }

    let mut geo = Vec::with_capacity(n * m * GEO_FEATURES);
    for f in &frames {
        for (seg, pts) in graph.segments().iter().zip(&resampled) {
            for &p in pts {
                let q = f.to_local(p);
                geo.extend([q[0] / GEO_SCALE, q[1] / GEO_SCALE]);
            }
            geo.extend(chord(pts, f));
            geo.push(geometry::project_onto_polyline(&seg.centerline, f.origin).distance / GEO_SCALE);
        }
    }

    let cv: Vec<f64> = scene
        .agents
        .iter()
        .zip(&frames)
        .flat_map(|(a, f)| {
            match a.past.len() {
                0 | 1 => [0.0, 0.0],
                k => f.rotate_to_local(geometry::sub(a.past[k - 1], a.past[k - 2])),
            }
        })
        .collect();

    Ok(SceneInputs {
        past: stack(&past),
        lanes: Tensor::new(&[m, LANE_FEATURES], lanes)?,
        geo: Tensor::new(&[n, m, GEO_FEATURES], geo)?,
        adjacency: Relation::ALL.iter().map(|&r| graph.normalized_adjacency(r)).collect(),
        cv_step: Tensor::new(&[n, 2], cv)?,
        frames,
    })
}

fn chord(pts: &[Point], frame: &Frame) -> [f64; 2] {
    let d = frame.rotate_to_local(geometry::sub(pts[pts.len() - 1], pts[0]));
    let len = geometry::norm(d);
    if len > 0.0 {
        [d[0] / len, d[1] / len]
    } else {
        [1.0, 0.0]
    }
}

pub fn supervision(scene: &Scene, inputs: &SceneInputs, t_future: usize) -> Result<Supervision, ModelError> {
    if let Some((i, a)) = scene.agents.iter().enumerate().find(|(_, a)| a.future.len() != t_future) {
        return Err(ModelError::TrackLength {
            agent: i,
            expected: t_future,
            found: a.future.len(),
        });
    }
    let rows: Vec<_> = scene
        .agents
        .iter()
        .zip(&inputs.frames)
        .map(|(a, f)| {
            let mut pts = vec![a.current_position()];
            pts.extend_from_slice(&a.future);
            motion_rows(&pts, &a.headings[a.past.len() - 1..], f, scene.dt)
        })
        .collect();
    let local: Vec<f64> = scene
        .agents
        .iter()
        .zip(&inputs.frames)
        .flat_map(|(a, f)| a.future.iter().flat_map(|&p| f.to_local(p)).collect::<Vec<_>>())
        .collect();
    let occupancy = scene.gt_occupancy()?;
    let goals = (0..scene.num_agents()).map(|i| occupancy.argmax(i, t_future - 1)).collect();
    Ok(Supervision {
        future: stack(&rows),
        future_local: Tensor::new(&[scene.num_agents(), t_future, 2], local)?,
        occupancy,
        goals,
    })
}
