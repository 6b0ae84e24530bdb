//! Deterministic scene generators.
//!
//! Every agent drives along a route (a chain of lane centerlines) with a
//! longitudinal controller: either a piecewise-constant acceleration profile
//! or an intelligent-driver car-following law behind a leader on the same
//! route. Accelerations that depend on the latent interaction mode only start
//! at `t = 0`, so the observed past is identical across modes.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{AgentTrack, InteractionMode, ScenarioKind, Scene, SceneError};
use crate::lane_graph::geometry::{self, Point};
use crate::lane_graph::{build_graph, LaneGraph, LaneSegment, Relation, TypedEdge};
use crate::numkit::random::{self, derive_seed, Rng};

/// Speed ceiling (m/s) enforced by every rollout.
pub const V_MAX: f64 = 30.0;
const SUBSTEPS: usize = 10;
const MAX_DURATION: f64 = 12.0;
const VEHICLE_LENGTH: f64 = 5.0;
const A_MIN: f64 = -4.0;
const A_MAX: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneParams {
    pub num_agents: usize,
    pub t_past: usize,
    pub t_future: usize,
    pub dt: f64,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            num_agents: 2,
            t_past: 4,
            t_future: 12,
            dt: 0.5,
        }
    }
}

impl SceneParams {
    pub fn validate(&self) -> Result<(), SceneError> {
        let check = |name, value: f64, min: f64, max: f64| {
            if (min..=max).contains(&value) {
                Ok(())
            } else {
                Err(SceneError::ParamOutOfBounds { name, value, min, max })
            }
        };
        check("num_agents", self.num_agents as f64, 2.0, 8.0)?;
        check("t_past", self.t_past as f64, 2.0, 20.0)?;
        check("t_future", self.t_future as f64, 2.0, 60.0)?;
        check("dt", self.dt, 0.05, 1.0)?;
        check("duration", self.duration(), 0.0, MAX_DURATION)
    }

    fn duration(&self) -> f64 {
        (self.t_past - 1 + self.t_future) as f64 * self.dt
    }

    fn horizon(&self) -> f64 {
        self.t_future as f64 * self.dt
    }

    fn past_span(&self) -> f64 {
        (self.t_past - 1) as f64 * self.dt
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

const VAL_SEED_BASE: u64 = 1 << 40;

/// Seeds of a dataset split. Train and validation ranges never overlap.
pub fn split_seeds(split: Split, count: usize) -> std::ops::Range<u64> {
    let base = match split {
        Split::Train => 0,
        Split::Val => VAL_SEED_BASE,
    };
    base..base + count as u64
}

pub fn generate_split(kind: ScenarioKind, split: Split, count: usize, params: SceneParams) -> Result<Vec<Scene>, SceneError> {
    split_seeds(split, count).map(|s| generate_scene(kind, s, params)).collect()
}

struct Route {
    points: Vec<Point>,
}

impl Route {
    fn through(graph: &LaneGraph, ids: &[u32]) -> Self {
        let mut points: Vec<Point> = Vec::new();
        for &id in ids {
            let seg = graph.segment(graph.index_of(id).expect("route id exists"));
            for &p in &seg.centerline {
                if points.last().is_none_or(|&q| geometry::dist(p, q) > 1e-9) {
                    points.push(p);
                }
            }
        }
        Self { points }
    }

    fn length(&self) -> f64 {
        geometry::polyline_length(&self.points)
    }

    fn pose(&self, s: f64) -> (Point, f64) {
        let (p, t) = geometry::point_at(&self.points, s);
        (p, t[1].atan2(t[0]))
    }
}

#[derive(Debug, Clone)]
enum Control {
    /// `(start time, acceleration)` pieces, sorted by time.
    Profile(Vec<(f64, f64)>),
    Follow { leader: usize, desired_speed: f64 },
}

struct Plan {
    route: usize,
    /// Arc length and speed at the first past sample.
    s: f64,
    v: f64,
    control: Control,
}

impl Control {
    fn constant_then(pieces: &[(f64, f64)]) -> Self {
        let mut p = vec![(f64::NEG_INFINITY, 0.0)];
        p.extend_from_slice(pieces);
        Control::Profile(p)
    }
}

fn idm_accel(v: f64, desired: f64, gap: f64, dv: f64) -> f64 {
    const A: f64 = 1.5;
    const B: f64 = 2.0;
    const S0: f64 = 2.0;
    const HEADWAY: f64 = 1.2;
    let s_star = S0 + (v * HEADWAY + v * dv / (2.0 * (A * B).sqrt())).max(0.0);
    let a = A * (1.0 - (v / desired).powi(4) - (s_star / gap.max(0.5)).powi(2));
    a.clamp(A_MIN * 2.0, A)
}

/// Integrates every plan over the sample grid and returns `(s, v)` per
/// sample time per agent.
fn simulate(plans: &[Plan], params: &SceneParams) -> Vec<Vec<f64>> {
    let samples = params.t_past + params.t_future;
    let h = params.dt / SUBSTEPS as f64;
    let t0 = -params.past_span();
    let mut s: Vec<f64> = plans.iter().map(|p| p.s).collect();
    let mut v: Vec<f64> = plans.iter().map(|p| p.v).collect();
    let mut out = vec![Vec::with_capacity(samples); plans.len()];
    for (i, o) in out.iter_mut().enumerate() {
        o.push(s[i]);
    }
    for k in 0..(samples - 1) * SUBSTEPS {
        let t = t0 + k as f64 * h;
        let accel: Vec<f64> = plans
            .iter()
            .enumerate()
            .map(|(i, p)| match &p.control {
                Control::Profile(pieces) => pieces.iter().rev().find(|(start, _)| t + 1e-9 >= *start).map_or(0.0, |x| x.1),
                Control::Follow { leader, desired_speed } => {
                    let gap = s[*leader] - s[i] - VEHICLE_LENGTH;
                    idm_accel(v[i], *desired_speed, gap, v[i] - v[*leader])
                }
            })
            .collect();
        for i in 0..plans.len() {
            let nv = (v[i] + accel[i] * h).clamp(0.0, V_MAX);
            s[i] += 0.5 * (v[i] + nv) * h;
            v[i] = nv;
        }
        if (k + 1) % SUBSTEPS == 0 {
            for (i, o) in out.iter_mut().enumerate() {
                o.push(s[i]);
            }
        }
    }
    out
}

fn tracks(routes: &[Route], plans: &[Plan], params: &SceneParams) -> Vec<AgentTrack> {
    let arc = simulate(plans, params);
    plans
        .iter()
        .zip(arc)
        .enumerate()
        .map(|(i, (plan, s))| {
            let route = &routes[plan.route];
            let poses: Vec<(Point, f64)> = s.iter().map(|&x| route.pose(x)).collect();
            AgentTrack {
                agent_id: i as u32,
                past: poses[..params.t_past].iter().map(|p| p.0).collect(),
                future: poses[params.t_past..].iter().map(|p| p.0).collect(),
                headings: poses.iter().map(|p| p.1).collect(),
            }
        })
        .collect()
}

/// Time to cover `d` metres from speed `v` under constant acceleration `a`.
fn arrival_time(d: f64, v: f64, a: f64) -> f64 {
    if a.abs() < 1e-12 {
        return d / v;
    }
    let disc = v * v + 2.0 * a * d;
    if disc < 0.0 {
        f64::INFINITY
    } else {
        (-v + disc.sqrt()) / a
    }
}

/// Constant acceleration that covers `d` in `t` starting from speed `v`.
fn accel_for(d: f64, v: f64, t: f64) -> f64 {
    (2.0 * (d - v * t) / (t * t)).clamp(A_MIN, A_MAX)
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Conflict resolution between agent 0 (arriving after `t0` s at `d0` m) and
/// agent 1 (`t1` s, `d1` m). Returns the mode and both accelerations with
/// the times they stop acting.
struct Conflict {
    mode: InteractionMode,
    a0: f64,
    until0: f64,
    a1: f64,
    until1: f64,
}

fn resolve_conflict(rng: &mut Rng, d0: f64, v0: f64, d1: f64, v1: f64) -> Conflict {
    let (t0, t1) = (d0 / v0, d1 / v1);
    // Whoever is expected first is more likely, not certain, to go first.
    let p_surpass = logistic((t1 - t0) / 0.5);
    let headway = rng.gen_range(1.0..1.4);
    let jitter = rng.gen_range(0.0..0.4);
    if rng.gen_bool(p_surpass) {
        let target0 = (t1 - 0.5 * headway - jitter).clamp(0.6 * t0, t0);
        let a0 = accel_for(d0, v0, target0).max(0.0);
        let arrive0 = arrival_time(d0, v0, a0);
        let target1 = (arrive0 + headway).clamp(t1, 1.8 * t1);
        let a1 = accel_for(d1, v1, target1).min(0.0);
        Conflict {
            mode: InteractionMode::Surpass,
            a0,
            until0: arrive0,
            a1,
            until1: arrival_time(d1, v1, a1),
        }
    } else {
        let target0 = (t1 + headway + jitter).clamp(t0, 1.8 * t0);
        let a0 = accel_for(d0, v0, target0).min(0.0);
        Conflict {
            mode: InteractionMode::Yield,
            a0,
            until0: arrival_time(d0, v0, a0),
            a1: 0.0,
            until1: 0.0,
        }
    }
}

fn straight(id: u32, from: Point, to: Point) -> LaneSegment {
    LaneSegment::new(id, vec![from, to])
}

fn scene_rng(kind: ScenarioKind, seed: u64) -> Rng {
    random::rng(derive_seed(seed, kind as u64 + 1))
}

/// Generates one scene; identical `(kind, seed, params)` give identical scenes.
pub fn generate_scene(kind: ScenarioKind, seed: u64, params: SceneParams) -> Result<Scene, SceneError> {
    params.validate()?;
    let mut rng = scene_rng(kind, seed);
    let (graph, agents, interaction) = match kind {
        ScenarioKind::Merge => merge(&mut rng, &params)?,
        ScenarioKind::Intersection => intersection(&mut rng, &params)?,
        ScenarioKind::Follow => follow(&mut rng, &params)?,
    };
    let scene = Scene {
        scenario_kind: kind,
        seed,
        dt: params.dt,
        interaction,
        graph,
        agents,
    };
    scene.validate()?;
    Ok(scene)
}

type Generated = (LaneGraph, Vec<AgentTrack>, Option<InteractionMode>);

// Two-lane road along +x (right lane y = 0, left lane y = 3.5), six 50 m
// segments per lane from x = -150, and an on-ramp joining the right lane at
// the origin.
const MERGE_LANE_SEGMENTS: u32 = 6;

fn merge_graph() -> Result<LaneGraph, SceneError> {
    let n = MERGE_LANE_SEGMENTS;
    let left = |k: u32| k;
    let right = |k: u32| n + k;
    let (ramp0, ramp1) = (2 * n, 2 * n + 1);
    let x = |k: u32| -150.0 + 50.0 * k as f64;

    let mut segs = Vec::new();
    let mut edges = Vec::new();
    for k in 0..n {
        segs.push(straight(left(k), [x(k), 3.5], [x(k + 1), 3.5]));
        let mut r = straight(right(k), [x(k), 0.0], [x(k + 1), 0.0]);
        if k == 2 {
            r = r.in_intersection(0);
        }
        segs.push(r);
        edges.push(TypedEdge::new(Relation::LeftNeighbor, right(k), left(k)));
        if k + 1 < n {
            edges.push(TypedEdge::new(Relation::Successor, left(k), left(k + 1)));
            edges.push(TypedEdge::new(Relation::Successor, right(k), right(k + 1)));
        }
    }
    segs.push(straight(ramp0, [-100.0, -30.0], [-50.0, -10.0]));
    // Quadratic Bezier tangent to the ramp at its start and to the road at the origin.
    let (p0, p1, p2) = ([-50.0, -10.0], [-25.0, 0.0], [0.0, 0.0]);
    let curve = (0..=8)
        .map(|i| {
            let t = i as f64 / 8.0;
            let u = 1.0 - t;
            [
                u * u * p0[0] + 2.0 * u * t * p1[0] + t * t * p2[0],
                u * u * p0[1] + 2.0 * u * t * p1[1] + t * t * p2[1],
            ]
        })
        .collect();
    segs.push(LaneSegment::new(ramp1, curve).in_intersection(0));
    edges.push(TypedEdge::new(Relation::Successor, ramp0, ramp1));
    edges.push(TypedEdge::new(Relation::Successor, ramp1, right(3)));
    edges.push(TypedEdge::new(Relation::InSameIntersection, ramp1, right(2)));
    Ok(build_graph(segs, &edges)?)
}

fn merge(rng: &mut Rng, params: &SceneParams) -> Result<Generated, SceneError> {
    let graph = merge_graph()?;
    let n = MERGE_LANE_SEGMENTS;
    let routes = vec![
        Route::through(&graph, &[2 * n, 2 * n + 1, n + 3, n + 4, n + 5]),
        Route::through(&graph, &(n..2 * n).collect::<Vec<_>>()),
        Route::through(&graph, &(0..n).collect::<Vec<_>>()),
    ];
    let ramp_merge = graph.segment(graph.index_of(2 * n).unwrap()).length() + graph.segment(graph.index_of(2 * n + 1).unwrap()).length();
    let main_merge = 150.0;

    let horizon = params.horizon();
    let v1 = rng.gen_range(10.0..15.0);
    let v0 = rng.gen_range(9.0..14.0);
    let t1 = rng.gen_range(0.3..0.65) * horizon;
    let t0 = (t1 + rng.gen_range(-1.5..1.5)).max(0.15 * horizon);
    let (d0, d1) = (v0 * t0, v1 * t1);
    let conflict = resolve_conflict(rng, d0, v0, d1, v1);

    let back = params.past_span();
    let mut plans = vec![
        Plan {
            route: 0,
            s: ramp_merge - d0 - v0 * back,
            v: v0,
            control: Control::constant_then(&[(0.0, conflict.a0), (conflict.until0, 0.0)]),
        },
        Plan {
            route: 1,
            s: main_merge - d1 - v1 * back,
            v: v1,
            control: Control::constant_then(&[(0.0, conflict.a1), (conflict.until1, 0.0)]),
        },
    ];
    if params.num_agents >= 3 {
        let gap = rng.gen_range(45.0..60.0);
        let v = v1 + rng.gen_range(-1.0..1.0);
        plans.push(Plan {
            route: 1,
            s: plans[1].s - gap,
            v,
            control: Control::Follow {
                leader: 1,
                desired_speed: v * 1.1,
            },
        });
    }
    for k in 0..params.num_agents.saturating_sub(3) {
        let v = rng.gen_range(11.0..15.0);
        let s_now = 30.0 + 32.0 * k as f64 + rng.gen_range(0.0..8.0);
        let a = rng.gen_range(-0.5..0.5);
        plans.push(Plan {
            route: 2,
            s: s_now - v * back,
            v,
            control: Control::constant_then(&[(0.0, a)]),
        });
    }
    let agents = tracks(&routes, &plans, params);
    Ok((graph, agents, Some(conflict.mode)))
}

// Four-way single-lane intersection centred at the origin with right-hand
// traffic. Approach d travels at heading d * 90 degrees.
const APPROACH_LEN: f64 = 160.0;
const BOX_HALF: f64 = 10.0;
const LANE_OFFSET: f64 = 1.75;

#[derive(Clone, Copy)]
enum Turn {
    Straight = 0,
    Left = 1,
    Right = 2,
}

fn incoming(d: u32) -> u32 {
    d
}

fn outgoing(d: u32) -> u32 {
    4 + d
}

fn connector(d: u32, turn: Turn) -> u32 {
    8 + 3 * d + turn as u32
}

fn arc(center: Point, radius: f64, from: f64, to: f64) -> Vec<Point> {
    (0..=8)
        .map(|i| {
            let a = from + (to - from) * i as f64 / 8.0;
            [center[0] + radius * a.cos(), center[1] + radius * a.sin()]
        })
        .collect()
}

fn intersection_graph() -> Result<LaneGraph, SceneError> {
    let mut segs = Vec::new();
    let mut edges = Vec::new();
    for d in 0..4u32 {
        let theta = d as f64 * FRAC_PI_2;
        let local = |p: Point| geometry::rotate(p, theta);
        segs.push(straight(
            incoming(d),
            local([-BOX_HALF - APPROACH_LEN, -LANE_OFFSET]),
            local([-BOX_HALF, -LANE_OFFSET]),
        ));
        segs.push(straight(
            outgoing(d),
            local([BOX_HALF, -LANE_OFFSET]),
            local([BOX_HALF + APPROACH_LEN, -LANE_OFFSET]),
        ));
        let straight_conn = vec![local([-BOX_HALF, -LANE_OFFSET]), local([BOX_HALF, -LANE_OFFSET])];
        let right_r = BOX_HALF - LANE_OFFSET;
        let right_conn = arc([-BOX_HALF, -BOX_HALF], right_r, FRAC_PI_2, 0.0).into_iter().map(local).collect();
        let left_r = BOX_HALF + LANE_OFFSET;
        let left_conn = arc([-BOX_HALF, BOX_HALF], left_r, -FRAC_PI_2, 0.0).into_iter().map(local).collect();
        for (turn, line, target) in [
            (Turn::Straight, straight_conn, d),
            (Turn::Left, left_conn, (d + 1) % 4),
            (Turn::Right, right_conn, (d + 3) % 4),
        ] {
            let id = connector(d, turn);
            segs.push(LaneSegment::new(id, line).in_intersection(0));
            edges.push(TypedEdge::new(Relation::Successor, incoming(d), id));
            edges.push(TypedEdge::new(Relation::Successor, id, outgoing(target)));
        }
    }
    for a in 8..20 {
        for b in a + 1..20 {
            edges.push(TypedEdge::new(Relation::InSameIntersection, a, b));
        }
    }
    Ok(build_graph(segs, &edges)?)
}

fn sample_turn(rng: &mut Rng) -> Turn {
    match rng.gen_range(0..4) {
        0 | 1 => Turn::Straight,
        2 => Turn::Left,
        _ => Turn::Right,
    }
}

fn route_for(d: u32, turn: Turn) -> [u32; 3] {
    let target = match turn {
        Turn::Straight => d,
        Turn::Left => (d + 1) % 4,
        Turn::Right => (d + 3) % 4,
    };
    [incoming(d), connector(d, turn), outgoing(target)]
}

/// First pair of arc lengths at which two routes come within `radius` m.
fn first_conflict(a: &Route, b: &Route, radius: f64) -> Option<(f64, f64)> {
    let step = 0.5;
    let n = (a.length() / step) as usize;
    (0..=n).find_map(|i| {
        let s = i as f64 * step;
        let p = a.pose(s).0;
        let proj = geometry::project_onto_polyline(&b.points, p);
        (proj.distance < radius).then_some((s, proj.arc_length))
    })
}

fn intersection(rng: &mut Rng, params: &SceneParams) -> Result<Generated, SceneError> {
    let graph = intersection_graph()?;
    let turns = [sample_turn(rng), sample_turn(rng)];
    let routes = vec![Route::through(&graph, &route_for(0, turns[0])), Route::through(&graph, &route_for(1, turns[1]))];
    let horizon = params.horizon();
    let back = params.past_span();
    let v0 = rng.gen_range(8.0..12.0);
    let v1 = rng.gen_range(8.0..12.0);
    let t1 = rng.gen_range(0.3..0.65) * horizon;
    let t0 = (t1 + rng.gen_range(-1.5..1.5)).max(0.15 * horizon);

    let (conflict0, conflict1) = first_conflict(&routes[0], &routes[1], 1.5).unwrap_or((APPROACH_LEN, APPROACH_LEN));
    let (d0, d1) = (v0 * t0, v1 * t1);
    let entry = APPROACH_LEN;
    let (mode, pieces0, pieces1) = if first_conflict(&routes[0], &routes[1], 1.5).is_some() {
        let c = resolve_conflict(rng, d0, v0, d1, v1);
        (Some(c.mode), vec![(0.0, c.a0), (c.until0, 0.0)], vec![(0.0, c.a1), (c.until1, 0.0)])
    } else {
        (None, vec![], vec![])
    };
    let s0 = if mode.is_some() { conflict0 } else { entry };
    let s1 = if mode.is_some() { conflict1 } else { entry };
    let mut plans = vec![
        Plan {
            route: 0,
            s: s0 - d0 - v0 * back,
            v: v0,
            control: Control::constant_then(&pieces0),
        },
        Plan {
            route: 1,
            s: s1 - d1 - v1 * back,
            v: v1,
            control: Control::constant_then(&pieces1),
        },
    ];
    for k in 0..params.num_agents.saturating_sub(2) {
        // Agent k + 2 follows agent k, alternating between the two approaches.
        let leader = k;
        let lead = &plans[leader];
        let gap = rng.gen_range(25.0..35.0);
        let v = lead.v + rng.gen_range(-1.0..1.0);
        plans.push(Plan {
            route: lead.route,
            s: lead.s - gap,
            v,
            control: Control::Follow {
                leader,
                desired_speed: v * 1.15,
            },
        });
    }
    let agents = tracks(&routes, &plans, params);
    Ok((graph, agents, mode))
}

// Single lane of eight 50 m segments with constant gentle curvature.
fn follow_graph(rng: &mut Rng) -> Result<LaneGraph, SceneError> {
    let curvature: f64 = rng.gen_range(-0.004..0.004);
    let heading0: f64 = rng.gen_range(-PI..PI);
    let pose = |s: f64| -> Point {
        if curvature.abs() < 1e-9 {
            return [s * heading0.cos(), s * heading0.sin()];
        }
        let r = 1.0 / curvature;
        let a = heading0 + s * curvature;
        [r * (a.sin() - heading0.sin()), -r * (a.cos() - heading0.cos())]
    };
    let segs: Vec<LaneSegment> = (0..8u32)
        .map(|k| {
            let pts = (0..=5).map(|i| pose(50.0 * k as f64 + 10.0 * i as f64)).collect();
            LaneSegment::new(k, pts)
        })
        .collect();
    let edges: Vec<TypedEdge> = (0..7).map(|k| TypedEdge::new(Relation::Successor, k, k + 1)).collect();
    Ok(build_graph(segs, &edges)?)
}

fn follow(rng: &mut Rng, params: &SceneParams) -> Result<Generated, SceneError> {
    let graph = follow_graph(rng)?;
    let routes = vec![Route::through(&graph, &(0..8).collect::<Vec<_>>())];
    let back = params.past_span();
    let v = rng.gen_range(10.0..15.0);
    let s_now = 280.0 + rng.gen_range(0.0..20.0);
    let leader_accel = match rng.gen_range(0..3) {
        0 => -2.0,
        1 => 1.0,
        _ => 0.0,
    };
    let brake_until = rng.gen_range(1.0..3.0);
    let mut plans = vec![Plan {
        route: 0,
        s: s_now - v * back,
        v,
        control: Control::constant_then(&[(0.0, leader_accel), (brake_until, 0.0)]),
    }];
    for k in 1..params.num_agents {
        let lead = &plans[k - 1];
        let gap = rng.gen_range(20.0..35.0);
        let fv = (lead.v + rng.gen_range(-1.0..1.0)).max(1.0);
        plans.push(Plan {
            route: 0,
            s: lead.s - gap,
            v: fv,
            control: Control::Follow {
                leader: k - 1,
                desired_speed: fv * 1.1,
            },
        });
    }
    let agents = tracks(&routes, &plans, params);
    Ok((graph, agents, None))
}
