//! Losses, configuration and the deterministic training loop.

pub mod losses;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frm::{self, Ablation};
use crate::model::{
    decode, encode_motion, intention_feature, scene_inputs, supervision, Model, ModelConfig, ModelError, SceneInputs, Session, Supervision,
};
use crate::numkit::random::{derive_seed, rng};
use crate::numkit::{clip_grad_norm, Adam, AdamConfig, Checkpoint, NumError, Tensor, Var};
use crate::scene::Scene;

pub use losses::{kl_loss, nll_loss, off_diagonal, recon_loss};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("training diverged at step {step}: {term} loss is not finite ({detail})")]
    Divergence { term: &'static str, step: usize, detail: String },
    #[error("no training scenes")]
    EmptyDataset,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub nll: f64,
    pub kl: f64,
    pub recon: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { nll: 1.0, kl: 1.0, recon: 1.0 }
    }
}

/// Training run description, usually read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch_scenes: usize,
    /// Stops early after this many optimizer steps.
    pub max_steps: Option<usize>,
    pub lr: f64,
    /// Posterior samples per scene for the best-of-many reconstruction.
    pub f_train: usize,
    pub weights: LossWeights,
    /// The KL weight ramps linearly from 0 over this many steps.
    pub kl_warmup_steps: usize,
    pub clip_norm: Option<f64>,
    /// Overrides `model.ablation`.
    pub ablation: Ablation,
    /// `t_past` / `t_future` are taken from the data.
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            epochs: 10,
            batch_scenes: 8,
            max_steps: None,
            lr: 1e-3,
            f_train: 6,
            weights: LossWeights::default(),
            kl_warmup_steps: 0,
            clip_norm: Some(10.0),
            ablation: Ablation::default(),
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self, TrainError> {
        let cfg: Self = toml::from_str(text).map_err(|e| TrainError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let text = fs::read_to_string(path).map_err(|source| TrainError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 || self.batch_scenes == 0 || self.f_train == 0 {
            return Err(TrainError::Config("epochs, batch_scenes and f_train must be positive".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(TrainError::Config("lr must be positive".into()));
        }
        let w = self.weights;
        if [w.nll, w.kl, w.recon].iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(TrainError::Config("loss weights must be finite and non-negative".into()));
        }
        if matches!(self.clip_norm, Some(c) if !(c.is_finite() && c > 0.0)) {
            return Err(TrainError::Config("clip_norm must be positive".into()));
        }
        Ok(())
    }

    /// Model configuration for data with the given horizons.
    pub fn model_config(&self, t_past: usize, t_future: usize) -> ModelConfig {
        ModelConfig {
            t_past,
            t_future,
            ablation: self.ablation,
            ..self.model
        }
    }
}

/// Loss values for one step (batch means) or one evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub step: usize,
    pub nll: f64,
    pub kl: f64,
    pub recon: f64,
    pub total: f64,
}

pub const LOSS_CSV_HEADER: &str = "step,nll,kl,recon,total";

pub fn losses_to_csv(history: &[LossReport]) -> String {
    let mut out = String::from(LOSS_CSV_HEADER);
    out.push('\n');
    for r in history {
        writeln!(out, "{},{},{},{},{}", r.step, r.nll, r.kl, r.recon, r.total).expect("string write");
    }
    out
}

/// Per-scene inputs and targets, computed once.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub inputs: SceneInputs,
    pub target: Supervision,
}

pub fn prepare(scenes: &[Scene], t_past: usize, t_future: usize) -> Result<Vec<Prepared>, ModelError> {
    scenes
        .iter()
        .map(|scene| {
            let inputs = scene_inputs(scene, t_past)?;
            let target = supervision(scene, &inputs, t_future)?;
            Ok(Prepared { inputs, target })
        })
        .collect()
}

/// The three loss terms and their weighted sum, on one tape.
#[derive(Debug, Clone, Copy)]
pub struct SceneLoss {
    pub nll: Var,
    pub kl: Var,
    pub recon: Var,
    pub total: Var,
}

fn stage<T>(term: &'static str, step: usize, r: Result<T, ModelError>) -> Result<T, TrainError> {
    r.map_err(|e| match e {
        ModelError::Num(NumError::NonFinite { op }) => TrainError::Divergence {
            term,
            step,
            detail: format!("non-finite value in `{op}`"),
        },
        other => TrainError::Model(other),
    })
}

fn num<T>(r: Result<T, NumError>) -> Result<T, ModelError> {
    r.map_err(ModelError::from)
}

/// Builds the full training objective for one scene. `kl_weight` already
/// includes any warm-up factor; `step` only labels divergence errors.
pub fn scene_objective(
    model: &Model,
    s: &mut Session,
    data: &Prepared,
    f_train: usize,
    seed: u64,
    weights: LossWeights,
    step: usize,
) -> Result<SceneLoss, TrainError> {
    let cfg = model.config;
    let (inputs, target) = (&data.inputs, &data.target);
    let m = inputs.num_lanes();
    let enc = stage("nll", step, model.encode(s, inputs))?;
    let nll = stage("nll", step, num(nll_loss(s, enc.tau, target.occupancy.values())))?;

    let (pr_prior, pr_post, h_future) = stage("kl", step, (|| {
        let pr_prior = model.proximity(s, enc.tau, &inputs.adjacency)?;
        let gt_tau = s.constant(target.occupancy.values().clone());
        let pr_post = model.proximity(s, gt_tau, &inputs.adjacency)?;
        let future = s.constant(target.future.clone());
        let h_future = encode_motion(s, future)?;
        Ok((pr_prior, pr_post, h_future))
    })())?;
    let dims = cfg.frm_dims();
    let sym = cfg.ablation.symmetric;
    let (post, kl) = stage("kl", step, (|| {
        let prior = num(frm::prior_params(s, pr_prior, enc.h_x, m, &dims, sym))?;
        let post = num(frm::posterior_params(s, pr_post, h_future, m, &dims, sym))?;
        let kl = num(kl_loss(s, &post, &prior))?;
        Ok((post, kl))
    })())?;

    let recon = stage("recon", step, (|| {
        let z = num(frm::sample_posterior_edges(s, &post, f_train, seed, &cfg.ablation))?;
        let h_r = num(frm::message_passing(s, z, enc.h_x))?;
        let goals = vec![target.goals.clone(); f_train];
        let h_i = intention_feature(s, enc.h_x, enc.h_l, enc.geo, &goals)?;
        let pred = decode(s, h_i, h_r, &inputs.cv_step)?;
        num(recon_loss(s, pred, &target.future_local))
    })())?;

    let total = stage("total", step, (|| {
        let a = num(s.tape.scale(nll, weights.nll))?;
        let b = num(s.tape.scale(kl, weights.kl))?;
        let c = num(s.tape.scale(recon, weights.recon))?;
        let ab = num(s.tape.add(a, b))?;
        num(s.tape.add(ab, c))
    })())?;
    Ok(SceneLoss { nll, kl, recon, total })
}

fn report_of(s: &Session, l: &SceneLoss, step: usize) -> LossReport {
    LossReport {
        step,
        nll: s.value(l.nll).item(),
        kl: s.value(l.kl).item(),
        recon: s.value(l.recon).item(),
        total: s.value(l.total).item(),
    }
}

fn check_finite(r: &LossReport) -> Result<(), TrainError> {
    for (term, v) in [("nll", r.nll), ("kl", r.kl), ("recon", r.recon), ("total", r.total)] {
        if !v.is_finite() {
            return Err(TrainError::Divergence {
                term,
                step: r.step,
                detail: format!("value {v}"),
            });
        }
    }
    Ok(())
}

fn mean_report(reports: &[LossReport], step: usize) -> LossReport {
    let k = reports.len().max(1) as f64;
    LossReport {
        step,
        nll: reports.iter().map(|r| r.nll).sum::<f64>() / k,
        kl: reports.iter().map(|r| r.kl).sum::<f64>() / k,
        recon: reports.iter().map(|r| r.recon).sum::<f64>() / k,
        total: reports.iter().map(|r| r.total).sum::<f64>() / k,
    }
}

/// Mean loss terms over `data` with unit weights (no parameter updates).
pub fn evaluate_loss(model: &Model, data: &[Prepared], f_train: usize, seed: u64) -> Result<LossReport, TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut reports = Vec::with_capacity(data.len());
    for (i, d) in data.iter().enumerate() {
        let mut s = Session::new(&model.params);
        let l = scene_objective(model, &mut s, d, f_train, derive_seed(seed, i as u64), LossWeights::default(), 0)?;
        reports.push(report_of(&s, &l, 0));
    }
    Ok(mean_report(&reports, 0))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub history: Vec<LossReport>,
}

impl TrainOutcome {
    /// Checkpoint carrying the model and training configuration.
    pub fn checkpoint(&self, config: &TrainConfig) -> Checkpoint {
        self.model.to_checkpoint(serde_json::json!({
            "train": config,
            "steps": self.history.len(),
        }))
    }
}

/// Trains a fresh model on `scenes`. Fully deterministic given the config:
/// scene order, edge noise and initialization all derive from `config.seed`.
/// `on_step` is called after every optimizer step.
pub fn train(scenes: &[Scene], config: &TrainConfig, mut on_step: impl FnMut(&LossReport)) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    let first = scenes.first().ok_or(TrainError::EmptyDataset)?;
    let (t_past, t_future) = (first.t_past(), first.t_future());
    let model_cfg = config.model_config(t_past, t_future);
    let mut model = Model::new(model_cfg, derive_seed(config.seed, 0))?;
    let data = prepare(scenes, t_past, t_future)?;
    let mut adam = Adam::new(AdamConfig {
        lr: config.lr,
        ..AdamConfig::default()
    });
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut step = 0usize;
    'epochs: for epoch in 0..config.epochs {
        order.shuffle(&mut rng(derive_seed(config.seed, 1_000_000 + epoch as u64)));
        for batch in order.chunks(config.batch_scenes) {
            if config.max_steps.is_some_and(|m| step >= m) {
                break 'epochs;
            }
            let warm = if config.kl_warmup_steps == 0 {
                1.0
            } else {
                (step as f64 / config.kl_warmup_steps as f64).min(1.0)
            };
            let weights = LossWeights {
                kl: config.weights.kl * warm,
                ..config.weights
            };
            let mut grads: BTreeMap<String, Tensor> = BTreeMap::new();
            let mut reports = Vec::with_capacity(batch.len());
            for &idx in batch {
                let seed = derive_seed(derive_seed(config.seed, 2_000_000 + step as u64), idx as u64);
                let mut s = Session::new(&model.params);
                let l = scene_objective(&model, &mut s, &data[idx], config.f_train, seed, weights, step)?;
                let r = report_of(&s, &l, step);
                check_finite(&r)?;
                reports.push(r);
                for (name, g) in s.gradients(l.total) {
                    match grads.get_mut(&name) {
                        Some(acc) => acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += b),
                        None => {
                            grads.insert(name, g);
                        }
                    }
                }
            }
            let k = batch.len() as f64;
            grads.values_mut().for_each(|g| g.data_mut().iter_mut().for_each(|v| *v /= k));
            if let Some(c) = config.clip_norm {
                clip_grad_norm(&mut grads, c);
            }
            if grads.values().any(|g| !g.is_finite()) {
                return Err(TrainError::Divergence {
                    term: "total",
                    step,
                    detail: "non-finite gradient".into(),
                });
            }
            adam.step(&mut model.params, &grads).map_err(ModelError::from)?;
            let report = mean_report(&reports, step);
            on_step(&report);
            history.push(report);
            step += 1;
        }
    }
    Ok(TrainOutcome { model, history })
}

#[cfg(test)]
mod tests;
