//! Encoders, the waypoint-occupancy head, goal sampling, intention features
//! and the trajectory decoder, plus end-to-end inference.

pub mod features;
pub mod layers;

use std::rc::Rc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frm::{self, Ablation, FrmDims};
use crate::lane_graph::geometry::Point;
use crate::lane_graph::{GraphError, Relation, SegmentId};
use crate::numkit::random::{self, derive_seed};
use crate::numkit::{Checkpoint, NumError, ParamStore, Tensor, Var};
use crate::scene::Scene;

pub use features::{scene_inputs, supervision, Frame, SceneInputs, Supervision, GEO_FEATURES, LANE_FEATURES, MOTION_FEATURES};
pub use layers::Session;
use layers::{init_linear, init_linear_zero};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("agent {agent}: track has {found} steps, model expects {expected}")]
    TrackLength { agent: usize, expected: usize, found: usize },
    #[error("agent {agent}: goal index {goal} out of range for {lanes} lanes")]
    InvalidGoal { agent: usize, goal: usize, lanes: usize },
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Input(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: usize,
    pub edge_dim: usize,
    pub mixtures: usize,
    /// Trajectories drawn per agent at inference.
    pub samples: usize,
    pub t_past: usize,
    pub t_future: usize,
    pub conv_channels: usize,
    pub gcn_init_scale: f64,
    pub ablation: Ablation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            edge_dim: 32,
            mixtures: 3,
            samples: 6,
            t_past: 4,
            t_future: 12,
            conv_channels: 8,
            gcn_init_scale: 4.0,
            ablation: Ablation::default(),
        }
    }
}

impl ModelConfig {
    /// Mixture components actually used (one under the Gaussian-prior ablation).
    pub fn components(&self) -> usize {
        if self.ablation.gaussian_prior {
            1
        } else {
            self.mixtures
        }
    }

    pub fn frm_dims(&self) -> FrmDims {
        FrmDims {
            horizon: self.t_future - 1,
            hidden: self.hidden,
            edge_dim: self.edge_dim,
            mixtures: self.components(),
            conv_channels: self.conv_channels,
            gcn_init_scale: self.gcn_init_scale,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            ("hidden", self.hidden),
            ("edge_dim", self.edge_dim),
            ("mixtures", self.mixtures),
            ("samples", self.samples),
            ("t_past", self.t_past),
            ("conv_channels", self.conv_channels),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(ModelError::Config(format!("{name} must be positive")));
        }
        if self.t_future < 2 {
            return Err(ModelError::Config("t_future must be at least 2".into()));
        }
        if !(self.gcn_init_scale.is_finite() && self.gcn_init_scale > 0.0) {
            return Err(ModelError::Config("gcn_init_scale must be positive".into()));
        }
        Ok(())
    }
}

fn lane_gcn_param(r: Relation) -> String {
    format!("lane.gcn.{}.w", serde_json::to_value(r).expect("relation").as_str().expect("string"))
}

/// Registers every parameter of the model in `store`.
pub fn init_params(store: &mut ParamStore, cfg: &ModelConfig) -> Result<(), ModelError> {
    cfg.validate()?;
    let h = cfg.hidden;
    init_linear(store, "motion.conv", 2 * MOTION_FEATURES, h)?;
    init_linear(store, "motion.point", h, h)?;
    init_linear(store, "motion.out", 2 * h, h)?;
    init_linear(store, "lane.embed0", LANE_FEATURES, h)?;
    init_linear(store, "lane.embed1", h, h)?;
    init_linear(store, "lane.gcn.self", h, h)?;
    for r in Relation::ALL {
        store.init_glorot(&lane_gcn_param(r), h, h)?;
    }
    init_linear(store, "waypoint.hidden", 2 * h + GEO_FEATURES, h)?;
    init_linear_zero(store, "waypoint.out", h, cfg.t_future)?;
    init_linear(store, "intention.hidden", 2 * h + GEO_FEATURES, h)?;
    init_linear(store, "intention.out", h, h)?;
    init_linear(store, "decoder.hidden", h + cfg.edge_dim, h)?;
    init_linear_zero(store, "decoder.out", h, 2 * cfg.t_future)?;
    frm::init_params(store, &cfg.frm_dims())?;
    Ok(())
}

/// Shared motion encoder: `N x T x MOTION_FEATURES` -> `N x hidden`.
///
/// A width-2 temporal convolution and a pointwise layer, pooled as
/// `[mean over time, last step]`. The same weights encode past and future
/// tracks of any length.
pub fn encode_motion(s: &mut Session, track: Var) -> Result<Var, ModelError> {
    let shape = s.shape(track);
    let [n, t, c] = shape[..] else {
        return Err(ModelError::Input(format!("track tensor must be N x T x C, got {shape:?}")));
    };
    if c != MOTION_FEATURES || t == 0 {
        return Err(ModelError::Input(format!("track tensor has shape {shape:?}")));
    }
    let w = (t - 1).max(1);
    let idx: Rc<[usize]> = (0..n)
        .flat_map(|i| {
            (0..w).flat_map(move |win| (0..2).flat_map(move |k| (0..c).map(move |ch| (i * t + (win + k).min(t - 1)) * c + ch)))
        })
        .collect();
    let windows = s.tape.gather(track, idx, &[n * w, 2 * c])?;
    let x = s.linear(windows, "motion.conv")?;
    let x = s.tape.relu(x)?;
    let x = s.linear(x, "motion.point")?;
    let x = s.tape.relu(x)?;
    let h = s.shape(x)[1];
    let x = s.tape.reshape(x, &[n, w, h])?;
    let mean = s.tape.sum_axis(x, 1)?;
    let mean = s.tape.scale(mean, 1.0 / w as f64)?;
    let last = s.tape.slice_axis(x, 1, w - 1, w)?;
    let last = s.tape.reshape(last, &[n, h])?;
    let pooled = s.tape.concat(&[mean, last], 1)?;
    Ok(s.linear(pooled, "motion.out")?)
}

/// Lane encoder: per-segment MLP, then one typed-edge graph convolution
/// `relu(x W_self + b + sum_e D_e^-1 A_e x W_e)`. Returns `M x hidden`.
pub fn encode_lanes(s: &mut Session, lanes: Var, adjacency: &[Tensor]) -> Result<Var, ModelError> {
    let x = s.mlp(lanes, &["lane.embed0", "lane.embed1"])?;
    let x = s.tape.relu(x)?;
    let mut acc = s.linear(x, "lane.gcn.self")?;
    for (r, a) in Relation::ALL.iter().zip(adjacency) {
        let a = s.constant(a.clone());
        let w = s.param(&lane_gcn_param(*r))?;
        let ax = s.tape.matmul(a, x)?;
        let axw = s.tape.matmul(ax, w)?;
        acc = s.tape.add(acc, axw)?;
    }
    Ok(s.tape.relu(acc)?)
}

/// `[h_x[i], h_l[m], geo[i][m]]` for each `(agent, lane)` pair in `pairs`.
fn pair_features(s: &mut Session, h_x: Var, h_l: Var, geo: Var, pairs: &[(usize, usize)]) -> Result<Var, ModelError> {
    let m = s.shape(h_l)[0];
    let g = s.shape(geo)[2];
    let n = s.shape(geo)[0];
    let geo = s.tape.reshape(geo, &[n * m, g])?;
    let agents: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let lanes: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    let flat: Vec<usize> = pairs.iter().map(|&(i, l)| i * m + l).collect();
    let a = s.tape.index_rows(h_x, &agents)?;
    let b = s.tape.index_rows(h_l, &lanes)?;
    let c = s.tape.index_rows(geo, &flat)?;
    Ok(s.tape.concat(&[a, b, c], 1)?)
}

/// Waypoint occupancy `softmax_lanes(MLP([h_x, h_l, geo]))`, `N x M x t_f`.
pub fn predict_waypoint_occupancy(s: &mut Session, h_x: Var, h_l: Var, geo: Var) -> Result<Var, ModelError> {
    let (n, m) = (s.shape(h_x)[0], s.shape(h_l)[0]);
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..m).map(move |l| (i, l))).collect();
    let x = pair_features(s, h_x, h_l, geo, &pairs)?;
    let logits = s.mlp(x, &["waypoint.hidden", "waypoint.out"])?;
    let t = s.shape(logits)[1];
    let logits = s.tape.reshape(logits, &[n, m, t])?;
    Ok(s.tape.softmax(logits, 1)?)
}

/// `count` categorical goal draws per agent from the final-step occupancy
/// (`N x M`), returned as `count x N` lane indices.
pub fn sample_goal(tau_final: &Tensor, count: usize, seed: u64) -> Vec<Vec<usize>> {
    let (n, m) = (tau_final.shape()[0], tau_final.shape()[1]);
    let mut rng = random::rng(seed);
    let mut out = vec![vec![0; n]; count];
    for row in out.iter_mut() {
        for (i, goal) in row.iter_mut().enumerate() {
            let u: f64 = rand::Rng::gen(&mut rng);
            let probs = &tau_final.data()[i * m..(i + 1) * m];
            let mut acc = 0.0;
            *goal = m - 1;
            for (k, &p) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    *goal = k;
                    break;
                }
            }
        }
    }
    out
}

/// Intention features `MLP([h_x[i], h_l[g], geo[i][g]])` for goals
/// `goal_ids[f][i]`; returns `F x N x hidden`.
pub fn intention_feature(s: &mut Session, h_x: Var, h_l: Var, geo: Var, goal_ids: &[Vec<usize>]) -> Result<Var, ModelError> {
    let (n, m) = (s.shape(h_x)[0], s.shape(h_l)[0]);
    let mut pairs = Vec::with_capacity(goal_ids.len() * n);
    for row in goal_ids {
        if row.len() != n {
            return Err(ModelError::Input(format!("{} goals for {n} agents", row.len())));
        }
        for (i, &g) in row.iter().enumerate() {
            if g >= m {
                return Err(ModelError::InvalidGoal { agent: i, goal: g, lanes: m });
            }
            pairs.push((i, g));
        }
    }
    let x = pair_features(s, h_x, h_l, geo, &pairs)?;
    let x = s.mlp(x, &["intention.hidden", "intention.out"])?;
    let x = s.tape.relu(x)?;
    let h = s.shape(x)[1];
    Ok(s.tape.reshape(x, &[goal_ids.len(), n, h])?)
}

/// Decoder: a 2-layer MLP over `[h_I, h_R]` predicts per-step displacement
/// corrections to constant velocity; cumulative sums give positions in each
/// agent's frame. Returns `F x N x t_f x 2`.
pub fn decode(s: &mut Session, h_i: Var, h_r: Var, cv_step: &Tensor) -> Result<Var, ModelError> {
    let shape = s.shape(h_i);
    let (f, n) = (shape[0], shape[1]);
    if s.shape(h_r)[..2] != shape[..2] || cv_step.shape() != [n, 2] {
        return Err(ModelError::Input(format!(
            "decoder inputs disagree: h_I {shape:?}, h_R {:?}, cv {:?}",
            s.shape(h_r),
            cv_step.shape()
        )));
    }
    let x = s.tape.concat(&[h_i, h_r], 2)?;
    let x = s.mlp(x, &["decoder.hidden", "decoder.out"])?;
    let t = s.shape(x)[2] / 2;
    let rows = f * n;
    let x = s.tape.reshape(x, &[rows, t, 2])?;
    let cv = Tensor::from_fn(&[rows, t, 2], |q| cv_step.data()[((q / (2 * t)) % n) * 2 + q % 2]);
    let cv = s.constant(cv);
    let steps = s.tape.add(x, cv)?;
    let steps = s.tape.permute(steps, &[1, 0, 2])?;
    let steps = s.tape.reshape(steps, &[t, rows * 2])?;
    let lower = s.constant(Tensor::from_fn(&[t, t], |q| if q % t <= q / t { 1.0 } else { 0.0 }));
    let pos = s.tape.matmul(lower, steps)?;
    let pos = s.tape.reshape(pos, &[t, rows, 2])?;
    let pos = s.tape.permute(pos, &[1, 0, 2])?;
    Ok(s.tape.reshape(pos, &[f, n, t, 2])?)
}

/// Forecast for one scene. Samples are ranked per agent by the predicted
/// final-step probability of their goal segment, highest first; ties
/// (samples sharing a goal) go to the more probable interaction edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub scene_seed: u64,
    /// `[agent][rank][step]`, world coordinates.
    pub trajectories: Vec<Vec<Vec<Point>>>,
    /// Goal segment id of each ranked sample.
    pub goal_ids: Vec<Vec<SegmentId>>,
    pub goal_probs: Vec<Vec<f64>>,
    /// Original draw index of each ranked sample.
    pub sample_index: Vec<Vec<usize>>,
    /// Interaction mode of every ordered pair, per draw: `[draw][i * N + j]`.
    pub edge_modes: Vec<Vec<usize>>,
}

impl PredictionSet {
    pub fn num_agents(&self) -> usize {
        self.trajectories.len()
    }

    pub fn num_samples(&self) -> usize {
        self.trajectories.first().map_or(0, Vec::len)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictOptions {
    pub samples: usize,
    pub seed: u64,
    /// Adds `scale * N(0, 1)` to every edge sample (decoder sensitivity probe).
    pub edge_noise: Option<f64>,
}

/// Model weights with their configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        let mut params = ParamStore::new(seed);
        init_params(&mut params, &config)?;
        Ok(Self { config, params })
    }

    /// Checkpoint with `model` and `variant` metadata; object fields of
    /// `extra` are merged in.
    pub fn to_checkpoint(&self, extra: serde_json::Value) -> Checkpoint {
        let mut meta = serde_json::json!({
            "model": self.config,
            "variant": self.config.ablation.variant_name(),
        });
        if let (Some(dst), serde_json::Value::Object(src)) = (meta.as_object_mut(), extra) {
            dst.extend(src);
        }
        Checkpoint::from_store(&self.params, meta)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, ModelError> {
        let cfg = ckpt
            .metadata
            .get("model")
            .ok_or_else(|| ModelError::Config("checkpoint metadata lacks `model`".into()))?;
        let config: ModelConfig = serde_json::from_value(cfg.clone()).map_err(|e| ModelError::Config(e.to_string()))?;
        config.validate()?;
        let params = ckpt.to_store()?;
        // Every expected parameter must be present with the right shape.
        let reference = Self::new(config, 0)?;
        for (name, t) in reference.params.iter() {
            match params.get(name) {
                Some(p) if p.shape() == t.shape() => {}
                Some(p) => {
                    return Err(ModelError::Config(format!(
                        "parameter `{name}` has shape {:?}, expected {:?}",
                        p.shape(),
                        t.shape()
                    )))
                }
                None => return Err(NumError::MissingParam(name.to_string()).into()),
            }
        }
        Ok(Self { config, params })
    }

    /// Motion, lane and occupancy features shared by training and inference.
    pub fn encode(&self, s: &mut Session, inputs: &SceneInputs) -> Result<Encoded, ModelError> {
        let past = s.constant(inputs.past.clone());
        let h_x = encode_motion(s, past)?;
        let lanes = s.constant(inputs.lanes.clone());
        let h_l = encode_lanes(s, lanes, &inputs.adjacency)?;
        let geo = s.constant(inputs.geo.clone());
        let tau = predict_waypoint_occupancy(s, h_x, h_l, geo)?;
        Ok(Encoded { h_x, h_l, geo, tau })
    }

    /// Proximity of an occupancy tensor (`N x M x t_f` or its intermediate
    /// part), honoring the ablation switches.
    pub fn proximity(&self, s: &mut Session, tau: Var, adjacency: &[Tensor]) -> Result<Var, ModelError> {
        let shape = s.shape(tau);
        let (n, horizon) = (shape[0], self.config.t_future - 1);
        if self.config.ablation.no_fr {
            return Ok(s.constant(Tensor::zeros(&[n, n, horizon])));
        }
        let inter = s.tape.slice_axis(tau, 2, 0, horizon)?;
        let smoothed = if self.config.ablation.no_gcn {
            inter
        } else {
            frm::smooth_occupancy(s, inter, adjacency)?
        };
        Ok(frm::proximity(s, smoothed)?)
    }

    pub fn predict(&self, scene: &Scene, opts: &PredictOptions) -> Result<PredictionSet, ModelError> {
        let inputs = scene_inputs(scene, self.config.t_past)?;
        let mut s = Session::new(&self.params);
        let enc = self.encode(&mut s, &inputs)?;
        let (n, m, t) = (inputs.num_agents(), inputs.num_lanes(), self.config.t_future);
        let tau = s.value(enc.tau).clone();
        let tau_final = Tensor::from_fn(&[n, m], |q| tau.at(&[q / m, q % m, t - 1]));
        let goals = sample_goal(&tau_final, opts.samples, derive_seed(opts.seed, 1));
        let h_i = intention_feature(&mut s, enc.h_x, enc.h_l, enc.geo, &goals)?;

        let pr = self.proximity(&mut s, enc.tau, &inputs.adjacency)?;
        let dims = self.config.frm_dims();
        let ab = self.config.ablation;
        let prior = frm::prior_params(&mut s, pr, enc.h_x, m, &dims, ab.symmetric)?;
        let edges = frm::sample_prior_edges(&mut s, &prior, opts.samples, derive_seed(opts.seed, 2), &ab)?;
        let plausibility = edge_log_density(&s, &prior, &edges);
        let mut z = edges.z;
        if let Some(scale) = opts.edge_noise {
            let shape = s.shape(z);
            let mut noise = random::sample_gaussian(&shape, derive_seed(opts.seed, 3));
            noise.data_mut().iter_mut().for_each(|v| *v *= scale);
            let noise = s.constant(noise);
            z = s.tape.add(z, noise)?;
        }
        let h_r = frm::message_passing(&mut s, z, enc.h_x)?;
        let local = decode(&mut s, h_i, h_r, &inputs.cv_step)?;
        let local = s.value(local).clone();

        let mut set = PredictionSet {
            scene_seed: scene.seed,
            trajectories: Vec::with_capacity(n),
            goal_ids: Vec::with_capacity(n),
            goal_probs: Vec::with_capacity(n),
            sample_index: Vec::with_capacity(n),
            edge_modes: edges.modes,
        };
        for (i, frame) in inputs.frames.iter().enumerate() {
            let probs: Vec<f64> = goals.iter().map(|row| tau_final.at(&[i, row[i]])).collect();
            let mut order: Vec<usize> = (0..opts.samples).collect();
            order.sort_by(|&a, &b| {
                probs[b]
                    .total_cmp(&probs[a])
                    .then(plausibility[b][i].total_cmp(&plausibility[a][i]))
                    .then(a.cmp(&b))
            });
            set.trajectories.push(
                order
                    .iter()
                    .map(|&f| (0..t).map(|k| frame.to_world([local.at(&[f, i, k, 0]), local.at(&[f, i, k, 1])])).collect())
                    .collect(),
            );
            set.goal_ids.push(order.iter().map(|&f| scene.graph.segment(goals[f][i]).id).collect());
            set.goal_probs.push(order.iter().map(|&f| probs[f]).collect());
            set.sample_index.push(order);
        }
        Ok(set)
    }
}

/// Log prior density (up to a constant) of each agent's outgoing edges in
/// every draw: `sum_{j != i} log pi_k + log N(z | mu_k, sigma_k)`, as
/// `[draw][agent]`.
fn edge_log_density(s: &Session, prior: &frm::InteractionPrior, edges: &frm::InteractionEdgeSample) -> Vec<Vec<f64>> {
    let (pi, mu, sigma, z) = (s.value(prior.pi), s.value(prior.mu), s.value(prior.sigma), s.value(edges.z));
    let shape = mu.shape();
    let (n, k, d) = (shape[0], shape[2], shape[3]);
    edges
        .modes
        .iter()
        .enumerate()
        .map(|(f, modes)| {
            (0..n)
                .map(|i| {
                    (0..n)
                        .filter(|&j| j != i)
                        .map(|j| {
                            let q = i * n + j;
                            let mode = modes[q];
                            let base = (q * k + mode) * d;
                            let density: f64 = (0..d)
                                .map(|c| {
                                    let sd = sigma.data()[base + c];
                                    let r = (z.data()[(f * n * n + q) * d + c] - mu.data()[base + c]) / sd;
                                    -sd.ln() - 0.5 * r * r
                                })
                                .sum();
                            pi.data()[q * k + mode].max(crate::numkit::LOG_FLOOR).ln() + density
                        })
                        .sum()
                })
                .collect()
        })
        .collect()
}

/// Outputs of [`Model::encode`].
#[derive(Debug, Clone, Copy)]
pub struct Encoded {
    pub h_x: Var,
    pub h_l: Var,
    pub geo: Var,
    /// `N x M x t_f` predicted waypoint occupancy.
    pub tau: Var,
}
