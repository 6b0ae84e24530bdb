//! Displacement metrics, the constant-velocity yardstick, the evaluation
//! harness and SVG scene plots.

mod plot;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lane_graph::geometry::Point;
use crate::model::{Model, ModelError, PredictOptions, PredictionSet};
use crate::numkit::random::derive_seed;
use crate::scene::Scene;

pub use plot::scene_svg;

/// Final-step miss threshold in meters.
pub const MISS_THRESHOLD: f64 = 2.0;
/// Sample budgets reported by default.
pub const DEFAULT_KS: [usize; 3] = [1, 5, 6];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("k = {k} exceeds the {available} available samples")]
    TooFewSamples { k: usize, available: usize },
    #[error("k must be positive")]
    ZeroK,
    #[error("miss threshold must be positive, got {0}")]
    Threshold(f64),
    #[error("prediction has {found} steps, ground truth {expected}")]
    Horizon { expected: usize, found: usize },
    #[error("scene {seed}: {detail}")]
    Mismatch { seed: u64, detail: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn check(preds: &[Vec<Point>], gt: &[Point], k: usize) -> Result<(), EvalError> {
    if k == 0 {
        return Err(EvalError::ZeroK);
    }
    if k > preds.len() {
        return Err(EvalError::TooFewSamples { k, available: preds.len() });
    }
    if let Some(bad) = preds[..k].iter().find(|p| p.len() != gt.len() || p.is_empty()) {
        return Err(EvalError::Horizon {
            expected: gt.len(),
            found: bad.len(),
        });
    }
    Ok(())
}

/// Minimum over the first `k` samples of the mean pointwise distance.
pub fn min_ade(preds: &[Vec<Point>], gt: &[Point], k: usize) -> Result<f64, EvalError> {
    check(preds, gt, k)?;
    Ok(preds[..k]
        .iter()
        .map(|p| p.iter().zip(gt).map(|(a, b)| dist(*a, *b)).sum::<f64>() / gt.len() as f64)
        .fold(f64::INFINITY, f64::min))
}

/// Minimum over the first `k` samples of the final-step distance.
pub fn min_fde(preds: &[Vec<Point>], gt: &[Point], k: usize) -> Result<f64, EvalError> {
    check(preds, gt, k)?;
    let last = *gt.last().expect("checked non-empty");
    Ok(preds[..k]
        .iter()
        .map(|p| dist(*p.last().expect("checked non-empty"), last))
        .fold(f64::INFINITY, f64::min))
}

/// Fraction of agents whose best-of-`k` final displacement exceeds
/// `threshold`; a displacement exactly at the threshold is a hit.
/// `agents` holds `(ranked samples, ground truth)` per agent.
pub fn miss_rate(agents: &[(&[Vec<Point>], &[Point])], k: usize, threshold: f64) -> Result<f64, EvalError> {
    if !(threshold.is_finite() && threshold > 0.0) {
        return Err(EvalError::Threshold(threshold));
    }
    if agents.is_empty() {
        return Ok(0.0);
    }
    let mut misses = 0usize;
    for (preds, gt) in agents {
        if min_fde(preds, gt, k)? > threshold {
            misses += 1;
        }
    }
    Ok(misses as f64 / agents.len() as f64)
}

/// Aggregated metrics: per-agent values averaged over every agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub variant: String,
    pub num_agents: usize,
    pub made: BTreeMap<usize, f64>,
    pub mfde: BTreeMap<usize, f64>,
    pub miss_rate: BTreeMap<usize, f64>,
}

impl MetricsReport {
    /// Pretty JSON with a trailing newline; stable across runs.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Checks non-negativity, the `[0, 1]` range and monotonicity in `k`.
    pub fn is_consistent(&self) -> bool {
        let mono = |m: &BTreeMap<usize, f64>| m.values().zip(m.values().skip(1)).all(|(a, b)| b <= &(a + 1e-12));
        self.made.values().chain(self.mfde.values()).all(|v| *v >= 0.0)
            && self.miss_rate.values().all(|v| (0.0..=1.0).contains(v))
            && mono(&self.made)
            && mono(&self.mfde)
            && mono(&self.miss_rate)
    }
}

/// Scores ranked predictions against the scenes' ground-truth futures.
/// `predictions[s]` must belong to `scenes[s]`.
pub fn score(scenes: &[Scene], predictions: &[PredictionSet], ks: &[usize], variant: &str) -> Result<MetricsReport, EvalError> {
    score_with_threshold(scenes, predictions, ks, variant, MISS_THRESHOLD)
}

pub fn score_with_threshold(
    scenes: &[Scene],
    predictions: &[PredictionSet],
    ks: &[usize],
    variant: &str,
    threshold: f64,
) -> Result<MetricsReport, EvalError> {
    if !(threshold.is_finite() && threshold > 0.0) {
        return Err(EvalError::Threshold(threshold));
    }
    let mut ks = ks.to_vec();
    ks.sort_unstable();
    ks.dedup();
    let mut sums: BTreeMap<usize, [f64; 3]> = ks.iter().map(|&k| (k, [0.0; 3])).collect();
    let mut num_agents = 0;
    for (scene, pred) in scenes.iter().zip(predictions) {
        if pred.scene_seed != scene.seed || pred.num_agents() != scene.num_agents() {
            return Err(EvalError::Mismatch {
                seed: scene.seed,
                detail: format!(
                    "prediction for scene {} with {} agents, scene has {}",
                    pred.scene_seed,
                    pred.num_agents(),
                    scene.num_agents()
                ),
            });
        }
        for (agent, samples) in scene.agents.iter().zip(&pred.trajectories) {
            for &k in &ks {
                let ade = min_ade(samples, &agent.future, k)?;
                let fde = min_fde(samples, &agent.future, k)?;
                let s = sums.get_mut(&k).expect("k registered");
                s[0] += ade;
                s[1] += fde;
                s[2] += f64::from(u8::from(fde > threshold));
            }
            num_agents += 1;
        }
    }
    if scenes.len() != predictions.len() {
        return Err(EvalError::Mismatch {
            seed: scenes.get(predictions.len()).map_or(0, |s| s.seed),
            detail: format!("{} scenes but {} prediction sets", scenes.len(), predictions.len()),
        });
    }
    let denom = num_agents.max(1) as f64;
    let pick = |i: usize| sums.iter().map(|(&k, s)| (k, s[i] / denom)).collect();
    Ok(MetricsReport {
        variant: variant.to_string(),
        num_agents,
        made: pick(0),
        mfde: pick(1),
        miss_rate: pick(2),
    })
}

pub const PREDICTION_FORMAT_VERSION: u32 = 1;

/// On-disk collection of forecasts, one set per scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionFile {
    pub format_version: u32,
    pub variant: String,
    pub seed: u64,
    pub scenes: Vec<PredictionSet>,
}

impl PredictionFile {
    /// Orders `scenes`' forecasts to match `dataset` by scene seed.
    pub fn aligned_to(&self, dataset: &[Scene]) -> Result<Vec<PredictionSet>, EvalError> {
        let by_seed: BTreeMap<u64, &PredictionSet> = self.scenes.iter().map(|p| (p.scene_seed, p)).collect();
        dataset
            .iter()
            .map(|s| {
                by_seed.get(&s.seed).map(|p| (*p).clone()).ok_or_else(|| EvalError::Mismatch {
                    seed: s.seed,
                    detail: "no prediction for this scene".into(),
                })
            })
            .collect()
    }
}

/// Extrapolates each agent's last displacement; all `samples` rollouts are
/// identical. A single-point past gives a stationary rollout.
pub fn constant_velocity_baseline(scene: &Scene, samples: usize) -> PredictionSet {
    let t_f = scene.t_future();
    let mut set = PredictionSet {
        scene_seed: scene.seed,
        trajectories: Vec::with_capacity(scene.num_agents()),
        goal_ids: Vec::new(),
        goal_probs: Vec::new(),
        sample_index: Vec::new(),
        edge_modes: Vec::new(),
    };
    for agent in &scene.agents {
        let cur = agent.current_position();
        let v = match agent.past.len() {
            0 | 1 => [0.0, 0.0],
            n => [cur[0] - agent.past[n - 2][0], cur[1] - agent.past[n - 2][1]],
        };
        let path: Vec<Point> = (1..=t_f).map(|k| [cur[0] + v[0] * k as f64, cur[1] + v[1] * k as f64]).collect();
        set.trajectories.push(vec![path; samples]);
        set.sample_index.push((0..samples).collect());
    }
    set
}

/// Seed used to predict `scene` during an evaluation seeded with `seed`;
/// depends only on the scene, so order never matters.
pub fn scene_seed(seed: u64, scene: &Scene) -> u64 {
    derive_seed(seed, scene.seed)
}

pub fn predict_all(model: &Model, scenes: &[Scene], samples: usize, seed: u64) -> Result<Vec<PredictionSet>, EvalError> {
    scenes
        .iter()
        .map(|scene| {
            let opts = PredictOptions {
                samples,
                seed: scene_seed(seed, scene),
                edge_noise: None,
            };
            Ok(model.predict(scene, &opts)?)
        })
        .collect()
}

/// Model evaluation with `max(ks)` samples per scene.
pub fn evaluate_model(model: &Model, scenes: &[Scene], ks: &[usize], seed: u64) -> Result<MetricsReport, EvalError> {
    let samples = ks.iter().copied().max().ok_or(EvalError::ZeroK)?;
    let preds = predict_all(model, scenes, samples, seed)?;
    score(scenes, &preds, ks, &model.config.ablation.variant_name())
}

pub fn evaluate_baseline(scenes: &[Scene], ks: &[usize]) -> Result<MetricsReport, EvalError> {
    let samples = ks.iter().copied().max().ok_or(EvalError::ZeroK)?;
    let preds: Vec<_> = scenes.iter().map(|s| constant_velocity_baseline(s, samples)).collect();
    score(scenes, &preds, ks, "constant_velocity")
}

/// Mean displacement (meters, over scenes, agents, samples and steps)
/// between predictions with and without `scale * N(0, 1)` added to the
/// interaction edges. Everything else, including goals, is held fixed.
pub fn edge_sensitivity(model: &Model, scenes: &[Scene], samples: usize, seed: u64, scale: f64) -> Result<f64, EvalError> {
    let (mut total, mut count) = (0.0, 0usize);
    for scene in scenes {
        let base = PredictOptions {
            samples,
            seed: scene_seed(seed, scene),
            edge_noise: None,
        };
        let clean = model.predict(scene, &base)?;
        let noisy = model.predict(
            scene,
            &PredictOptions {
                edge_noise: Some(scale),
                ..base
            },
        )?;
        for (a, b) in clean.trajectories.iter().flatten().zip(noisy.trajectories.iter().flatten()) {
            for (p, q) in a.iter().zip(b) {
                total += dist(*p, *q);
                count += 1;
            }
        }
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

#[cfg(test)]
mod tests;
