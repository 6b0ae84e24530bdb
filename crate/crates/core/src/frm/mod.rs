//! Future relationship module: occupancy smoothing on the typed lane graph,
//! inter-agent proximity, the mixture prior / Gaussian posterior over pairwise
//! interaction edges, edge sampling and message passing.
//!
//! Pair tensors are laid out `N x N x ...` with row-major pair index
//! `i * N + j` for the ordered pair (sender `j` -> receiver `i`). Diagonal
//! pairs are computed but masked everywhere downstream.

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::lane_graph::Relation;
use crate::model::layers::{init_linear, init_linear_zero, Session};
use crate::numkit::random::{self, derive_seed, gumbel_argmax};
use crate::numkit::{NumError, ParamStore, Tensor, Var};

pub const NUM_RELATIONS: usize = 5;
pub const GCN_LAYERS: usize = 2;
/// Temporal kernel of the proximity convolution (zero padded, stride 1).
pub const PR_KERNEL: usize = 3;

/// Ablation switches; all off is the full model.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    /// Feed zeros instead of proximity to the prior and posterior.
    pub no_fr: bool,
    /// Use raw occupancy for proximity, skipping the graph convolution.
    pub no_gcn: bool,
    /// Tie the parameters (and samples) of pairs `(i, j)` and `(j, i)`.
    pub symmetric: bool,
    /// Single-component prior.
    pub gaussian_prior: bool,
    /// `z = mu` with no Gaussian noise.
    pub deterministic_edges: bool,
}

impl Ablation {
    pub const NAMES: [&'static str; 5] = ["no_fr", "no_gcn", "symmetric", "gaussian_prior", "deterministic_edges"];

    fn flags(&self) -> [bool; 5] {
        [self.no_fr, self.no_gcn, self.symmetric, self.gaussian_prior, self.deterministic_edges]
    }

    /// `full`, or the enabled flags joined by `+`.
    pub fn variant_name(&self) -> String {
        let on: Vec<&str> = Self::NAMES
            .iter()
            .zip(self.flags())
            .filter(|(_, f)| *f)
            .map(|(n, _)| *n)
            .collect();
        if on.is_empty() {
            "full".into()
        } else {
            on.join("+")
        }
    }

    /// Inverse of [`Ablation::variant_name`].
    pub fn from_variant(name: &str) -> Result<Self, String> {
        let mut a = Ablation::default();
        if name == "full" {
            return Ok(a);
        }
        for part in name.split('+') {
            match part {
                "no_fr" => a.no_fr = true,
                "no_gcn" => a.no_gcn = true,
                "symmetric" => a.symmetric = true,
                "gaussian_prior" => a.gaussian_prior = true,
                "deterministic_edges" => a.deterministic_edges = true,
                other => return Err(format!("unknown variant flag `{other}` (expected full or {})", Self::NAMES.join(", "))),
            }
        }
        Ok(a)
    }
}

/// Sizes of the module's parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrmDims {
    /// Intermediate horizon `t_f - 1`.
    pub horizon: usize,
    pub hidden: usize,
    pub edge_dim: usize,
    pub mixtures: usize,
    pub conv_channels: usize,
    /// Diagonal value of the initial `W_e`.
    pub gcn_init_scale: f64,
}

fn relation_name(r: Relation) -> &'static str {
    match r {
        Relation::Predecessor => "predecessor",
        Relation::Successor => "successor",
        Relation::LeftNeighbor => "left_neighbor",
        Relation::RightNeighbor => "right_neighbor",
        Relation::InSameIntersection => "in_same_intersection",
    }
}

pub fn gcn_param(layer: usize, r: Relation) -> String {
    format!("frm.gcn{layer}.{}", relation_name(r))
}

pub fn init_params(store: &mut ParamStore, dims: &FrmDims) -> Result<(), NumError> {
    let t = dims.horizon;
    for layer in 0..GCN_LAYERS {
        for r in Relation::ALL {
            let mut w = Tensor::eye(t);
            w.data_mut().iter_mut().for_each(|v| *v *= dims.gcn_init_scale);
            store.insert(gcn_param(layer, r), w)?;
        }
    }
    let pair_in = t * dims.conv_channels + 2 * dims.hidden;
    let (k, d) = (dims.mixtures, dims.edge_dim);
    init_linear(store, "frm.prior.conv", PR_KERNEL, dims.conv_channels)?;
    init_linear(store, "frm.prior.hidden", pair_in, dims.hidden)?;
    // Random head so that mixture components start distinct.
    init_linear(store, "frm.prior.head", dims.hidden, 2 * k * d + k)?;
    init_linear(store, "frm.post.conv", PR_KERNEL, dims.conv_channels)?;
    init_linear(store, "frm.post.hidden", pair_in, dims.hidden)?;
    init_linear_zero(store, "frm.post.head", dims.hidden, 2 * d)?;
    init_linear(store, "frm.sender", dims.hidden, d)?;
    init_linear(store, "frm.update", d, d)?;
    Ok(())
}

/// Two stacked typed-edge convolutions over the lane axis of `tau`
/// (`N x M x T`). Each layer computes
/// `(1/5) * sum_e softmax_lanes(relu(D_e^-1 A_e tau W_e))`, so every
/// `(agent, step)` slice of the output is a simplex.
pub fn smooth_occupancy(s: &mut Session, tau: Var, adjacency: &[Tensor]) -> Result<Var, NumError> {
    let shape = s.shape(tau);
    let [n, m, t] = shape[..] else {
        return Err(NumError::BadAxis {
            op: "smooth_occupancy",
            axis: 2,
            shape,
        });
    };
    if adjacency.len() != NUM_RELATIONS {
        return Err(NumError::ShapeMismatch {
            op: "smooth_occupancy",
            lhs: vec![adjacency.len()],
            rhs: vec![NUM_RELATIONS],
        });
    }
    // Work lane-major: [M, N * T].
    let x = s.tape.permute(tau, &[1, 0, 2])?;
    let mut x = s.tape.reshape(x, &[m, n * t])?;
    for layer in 0..GCN_LAYERS {
        x = smoothing_layer(s, x, adjacency, layer, n)?;
    }
    let x = s.tape.reshape(x, &[m, n, t])?;
    s.tape.permute(x, &[1, 0, 2])
}

/// One typed-edge layer on a lane-major `M x (N * T)` occupancy.
pub fn smoothing_layer(s: &mut Session, x: Var, adjacency: &[Tensor], layer: usize, n: usize) -> Result<Var, NumError> {
    let m = s.shape(x)[0];
    let t = s.shape(x)[1] / n.max(1);
    let mut terms = Vec::with_capacity(NUM_RELATIONS);
    for (r, a) in Relation::ALL.iter().zip(adjacency) {
        let a = s.constant(a.clone());
        let w = s.param(&gcn_param(layer, *r))?;
        let ax = s.tape.matmul(a, x)?;
        let ax = s.tape.reshape(ax, &[m * n, t])?;
        let axw = s.tape.matmul(ax, w)?;
        let h = s.tape.relu(axw)?;
        let h = s.tape.reshape(h, &[m, n * t])?;
        terms.push(s.tape.softmax(h, 0)?);
    }
    let stacked = s.tape.concat(&terms, 0)?;
    let stacked = s.tape.reshape(stacked, &[NUM_RELATIONS, m, n * t])?;
    let summed = s.tape.sum_axis(stacked, 0)?;
    s.tape.scale(summed, 1.0 / NUM_RELATIONS as f64)
}

/// Per-step Gram matrix of occupancy rows: `PR[i][j][t] = sum_m tau[i][m][t] tau[j][m][t]`.
pub fn proximity(s: &mut Session, tau: Var) -> Result<Var, NumError> {
    let by_step = s.tape.permute(tau, &[2, 0, 1])?; // T x N x M
    let transposed = s.tape.permute(tau, &[2, 1, 0])?; // T x M x N
    let gram = s.tape.bmm(by_step, transposed)?; // T x N x N
    s.tape.permute(gram, &[1, 2, 0])
}

/// Mixture prior over the edge feature of every ordered pair.
#[derive(Debug, Clone, Copy)]
pub struct InteractionPrior {
    /// `N x N x K`.
    pub pi: Var,
    /// `N x N x K x d`.
    pub mu: Var,
    /// `N x N x K x d`, strictly positive.
    pub sigma: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct InteractionPosterior {
    /// `N x N x d`.
    pub mu: Var,
    /// `N x N x d`, strictly positive.
    pub sigma: Var,
}

/// Shared pair network: proximity row through a temporal convolution, then
/// concatenated with both agents' motion features. Returns `N^2 x hidden`.
fn pair_trunk(s: &mut Session, prefix: &str, pr: Var, h_x: Var, num_lanes: usize) -> Result<Var, NumError> {
    let shape = s.shape(pr);
    let (n, t) = (shape[0], shape[2]);
    let p = n * n;
    // Proximity is rescaled so that two independent uniform rows give 1.
    let pr = s.tape.scale(pr, num_lanes as f64)?;
    let pr = s.tape.reshape(pr, &[p, t])?;
    let pad = s.constant(Tensor::zeros(&[p, PR_KERNEL / 2]));
    let padded = s.tape.concat(&[pad, pr, pad], 1)?;
    let width = t + 2 * (PR_KERNEL / 2);
    let idx: Rc<[usize]> = (0..p)
        .flat_map(|q| (0..t).flat_map(move |step| (0..PR_KERNEL).map(move |k| q * width + step + k)))
        .collect();
    let windows = s.tape.gather(padded, idx, &[p * t, PR_KERNEL])?;
    let conv = s.linear(windows, &format!("{prefix}.conv"))?;
    let conv = s.tape.relu(conv)?;
    let channels = s.shape(conv)[1];
    let conv = s.tape.reshape(conv, &[p, t * channels])?;
    let receivers: Vec<usize> = (0..p).map(|q| q / n).collect();
    let senders: Vec<usize> = (0..p).map(|q| q % n).collect();
    let hi = s.tape.index_rows(h_x, &receivers)?;
    let hj = s.tape.index_rows(h_x, &senders)?;
    let x = s.tape.concat(&[conv, hi, hj], 1)?;
    let x = s.linear(x, &format!("{prefix}.hidden"))?;
    s.tape.relu(x)
}

/// Averages pair `(i, j)` with `(j, i)` row-wise (`N^2 x C` input).
fn symmetrize(s: &mut Session, x: Var, n: usize) -> Result<Var, NumError> {
    let c = s.shape(x)[1];
    let idx: Rc<[usize]> = (0..n * n)
        .flat_map(|q| {
            let swapped = (q % n) * n + q / n;
            (0..c).map(move |k| swapped * c + k)
        })
        .collect();
    let swapped = s.tape.gather(x, idx, &[n * n, c])?;
    let sum = s.tape.add(x, swapped)?;
    s.tape.scale(sum, 0.5)
}

/// Mixture prior from predicted-occupancy proximity `pr` (`N x N x T`) and
/// past motion features `h_x` (`N x hidden`).
pub fn prior_params(
    s: &mut Session,
    pr: Var,
    h_x: Var,
    num_lanes: usize,
    dims: &FrmDims,
    symmetric: bool,
) -> Result<InteractionPrior, NumError> {
    let n = s.shape(h_x)[0];
    let (k, d) = (dims.mixtures, dims.edge_dim);
    let trunk = pair_trunk(s, "frm.prior", pr, h_x, num_lanes)?;
    let mut out = s.linear(trunk, "frm.prior.head")?;
    if symmetric {
        out = symmetrize(s, out, n)?;
    }
    let mu = s.tape.slice_axis(out, 1, 0, k * d)?;
    let sigma = s.tape.slice_axis(out, 1, k * d, 2 * k * d)?;
    let logits = s.tape.slice_axis(out, 1, 2 * k * d, 2 * k * d + k)?;
    let sigma = s.tape.softplus(sigma)?;
    let pi = s.tape.softmax(logits, 1)?;
    Ok(InteractionPrior {
        pi: s.tape.reshape(pi, &[n, n, k])?,
        mu: s.tape.reshape(mu, &[n, n, k, d])?,
        sigma: s.tape.reshape(sigma, &[n, n, k, d])?,
    })
}

/// Gaussian posterior from ground-truth proximity and future motion features.
pub fn posterior_params(
    s: &mut Session,
    pr: Var,
    h_x: Var,
    num_lanes: usize,
    dims: &FrmDims,
    symmetric: bool,
) -> Result<InteractionPosterior, NumError> {
    let n = s.shape(h_x)[0];
    let d = dims.edge_dim;
    let trunk = pair_trunk(s, "frm.post", pr, h_x, num_lanes)?;
    let mut out = s.linear(trunk, "frm.post.head")?;
    if symmetric {
        out = symmetrize(s, out, n)?;
    }
    let mu = s.tape.slice_axis(out, 1, 0, d)?;
    let sigma = s.tape.slice_axis(out, 1, d, 2 * d)?;
    let sigma = s.tape.softplus(sigma)?;
    Ok(InteractionPosterior {
        mu: s.tape.reshape(mu, &[n, n, d])?,
        sigma: s.tape.reshape(sigma, &[n, n, d])?,
    })
}

/// `count` edge samples: `z` is `count x N x N x d`; `modes[f][i * N + j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionEdgeSample {
    pub z: Var,
    pub modes: Vec<Vec<usize>>,
}

/// Random stream for sample `f` of pair `(i, j)`; symmetric sampling keys
/// both orientations of a pair to the same stream.
fn pair_rng(seed: u64, f: usize, i: usize, j: usize, n: usize, symmetric: bool) -> random::Rng {
    let (a, b) = if symmetric && j < i { (j, i) } else { (i, j) };
    random::rng(derive_seed(derive_seed(seed, f as u64), (a * n + b) as u64))
}

/// Gumbel-max categorical draw from probabilities `pi` (`log pi + g`).
pub fn sample_mode(pi: &[f64], rng: &mut random::Rng) -> usize {
    let log_pi: Vec<f64> = pi.iter().map(|&p| p.max(crate::numkit::LOG_FLOOR).ln()).collect();
    gumbel_argmax(&log_pi, rng)
}

/// Draws `count` samples per pair: mode `k` by Gumbel-max on `pi`, then
/// `z = mu_k + sigma_k * eps`. Gradients reach the selected component's
/// `mu` and `sigma` only.
pub fn sample_prior_edges(
    s: &mut Session,
    prior: &InteractionPrior,
    count: usize,
    seed: u64,
    ablation: &Ablation,
) -> Result<InteractionEdgeSample, NumError> {
    let shape = s.shape(prior.mu);
    let (n, k, d) = (shape[0], shape[2], shape[3]);
    let pi = s.value(prior.pi).clone();
    let mut modes = Vec::with_capacity(count);
    let mut idx = Vec::with_capacity(count * n * n * d);
    let mut eps = Vec::with_capacity(count * n * n * d);
    for f in 0..count {
        let mut row = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                let q = i * n + j;
                let mut rng = pair_rng(seed, f, i, j, n, ablation.symmetric);
                let mode = sample_mode(&pi.data()[q * k..(q + 1) * k], &mut rng);
                row.push(mode);
                idx.extend((0..d).map(|c| (q * k + mode) * d + c));
                for _ in 0..d {
                    let e = random::gaussian(&mut rng);
                    eps.push(if ablation.deterministic_edges { 0.0 } else { e });
                }
            }
        }
        modes.push(row);
    }
    let out = [count, n, n, d];
    let idx: Rc<[usize]> = idx.into();
    let mu = s.tape.gather(prior.mu, idx.clone(), &out)?;
    let z = if ablation.deterministic_edges {
        mu
    } else {
        let sigma = s.tape.gather(prior.sigma, idx, &out)?;
        let eps = s.constant(Tensor::new(&out, eps)?);
        let noise = s.tape.mul(sigma, eps)?;
        s.tape.add(mu, noise)?
    };
    Ok(InteractionEdgeSample { z, modes })
}

/// Reparameterized posterior samples `z = mu + sigma * eps` (`count x N x N x d`).
pub fn sample_posterior_edges(
    s: &mut Session,
    post: &InteractionPosterior,
    count: usize,
    seed: u64,
    ablation: &Ablation,
) -> Result<Var, NumError> {
    let shape = s.shape(post.mu);
    let (n, d) = (shape[0], shape[2]);
    let mu = s.tile(post.mu, count)?;
    if ablation.deterministic_edges {
        return Ok(mu);
    }
    let mut eps = Vec::with_capacity(count * n * n * d);
    for f in 0..count {
        for i in 0..n {
            for j in 0..n {
                let mut rng = pair_rng(seed, f, i, j, n, ablation.symmetric);
                eps.extend((0..d).map(|_| random::gaussian(&mut rng)));
            }
        }
    }
    let sigma = s.tile(post.sigma, count)?;
    let eps = s.constant(Tensor::new(&[count, n, n, d], eps)?);
    let noise = s.tape.mul(sigma, eps)?;
    s.tape.add(mu, noise)
}

/// `h_R[f][i] = relu(affine(mean_{j != i} z[f][i][j] * F_p(h_x[j])))`,
/// returned as `count x N x d`. With one agent the mean is taken as zero.
pub fn message_passing(s: &mut Session, z: Var, h_x: Var) -> Result<Var, NumError> {
    let shape = s.shape(z);
    let [count, n, n2, d] = shape[..] else {
        return Err(NumError::BadAxis {
            op: "message_passing",
            axis: 3,
            shape,
        });
    };
    if n != n2 || s.shape(h_x)[0] != n {
        return Err(NumError::ShapeMismatch {
            op: "message_passing",
            lhs: shape,
            rhs: s.shape(h_x),
        });
    }
    let sender = s.linear(h_x, "frm.sender")?; // N x d
    let idx: Rc<[usize]> = (0..count * n * n * d).map(|q| ((q / d) % n) * d + q % d).collect();
    let sender = s.tape.gather(sender, idx, &[count, n, n, d])?;
    let w = if n > 1 { 1.0 / (n - 1) as f64 } else { 0.0 };
    let mask = Tensor::from_fn(&[count, n, n, d], |q| {
        let (i, j) = ((q / (n * d)) % n, (q / d) % n);
        if i == j {
            0.0
        } else {
            w
        }
    });
    let mask = s.constant(mask);
    let msg = s.tape.mul(z, sender)?;
    let msg = s.tape.mul(msg, mask)?;
    let agg = s.tape.sum_axis(msg, 2)?;
    let out = s.linear(agg, "frm.update")?;
    s.tape.relu(out)
}
