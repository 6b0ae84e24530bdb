use std::rc::Rc;

use crate::frm::{InteractionPosterior, InteractionPrior};
use crate::model::Session;
use crate::numkit::{NumError, Tensor, Var};

/// Mean over agents and steps of `-log tau_pred` at the occupied lane.
/// `tau_pred` is `N x M x T`; `tau_gt` is a one-hot tensor of the same shape.
pub fn nll_loss(s: &mut Session, tau_pred: Var, tau_gt: &Tensor) -> Result<Var, NumError> {
    let shape = s.shape(tau_pred);
    if shape != tau_gt.shape() || shape.len() != 3 {
        return Err(NumError::ShapeMismatch {
            op: "nll_loss",
            lhs: shape,
            rhs: tau_gt.shape().to_vec(),
        });
    }
    let log = s.tape.log(tau_pred)?;
    let gt = s.constant(tau_gt.clone());
    let picked = s.tape.mul(log, gt)?;
    let total = s.tape.sum(picked)?;
    s.tape.scale(total, -1.0 / (shape[0] * shape[2]) as f64)
}

/// Off-diagonal ordered pairs `i * N + j`, `i != j`.
pub fn off_diagonal(n: usize) -> Vec<usize> {
    (0..n * n).filter(|q| q / n != q % n).collect()
}

/// Mixture KL approximation: per pair `-log sum_k pi_k exp(-KL(q || p_k))`
/// with closed-form diagonal-Gaussian `KL_k`, averaged over off-diagonal
/// pairs. Zero when there are no pairs.
pub fn kl_loss(s: &mut Session, post: &InteractionPosterior, prior: &InteractionPrior) -> Result<Var, NumError> {
    let ps = s.shape(prior.mu);
    let (n, k, d) = (ps[0], ps[2], ps[3]);
    if s.shape(post.mu) != [n, n, d] || s.shape(post.sigma) != [n, n, d] {
        return Err(NumError::ShapeMismatch {
            op: "kl_loss",
            lhs: s.shape(post.mu),
            rhs: ps,
        });
    }
    let pairs = off_diagonal(n);
    if pairs.is_empty() {
        return Ok(s.constant(Tensor::scalar(0.0)));
    }
    let p = pairs.len();
    let rows = |s: &mut Session, v: Var, width: usize| -> Result<Var, NumError> {
        let flat = s.tape.reshape(v, &[n * n, width])?;
        s.tape.index_rows(flat, &pairs)
    };
    // Posterior broadcast over components: [P, K, d].
    let spread: Rc<[usize]> = (0..p * k * d).map(|q| (q / (k * d)) * d + q % d).collect();
    let mq = rows(s, post.mu, d)?;
    let mq = s.tape.gather(mq, spread.clone(), &[p, k, d])?;
    let sq = rows(s, post.sigma, d)?;
    let sq = s.tape.gather(sq, spread, &[p, k, d])?;
    let mp = rows(s, prior.mu, k * d)?;
    let mp = s.tape.reshape(mp, &[p, k, d])?;
    let sp = rows(s, prior.sigma, k * d)?;
    let sp = s.tape.reshape(sp, &[p, k, d])?;

    let log_sp = s.tape.log(sp)?;
    let log_sq = s.tape.log(sq)?;
    let log_ratio = s.tape.sub(log_sp, log_sq)?;
    let var_q = s.tape.square(sq)?;
    let diff = s.tape.sub(mq, mp)?;
    let diff2 = s.tape.square(diff)?;
    let num = s.tape.add(var_q, diff2)?;
    let var_p = s.tape.square(sp)?;
    let den = s.tape.scale(var_p, 2.0)?;
    let frac = s.tape.div(num, den)?;
    let per_dim = s.tape.add(log_ratio, frac)?;
    let per_dim = s.tape.add_scalar(per_dim, -0.5)?;
    let kl_k = s.tape.sum_axis(per_dim, 2)?; // P x K

    let pi = rows(s, prior.pi, k)?;
    let log_pi = s.tape.log(pi)?;
    let logits = s.tape.sub(log_pi, kl_k)?;
    let lse = s.tape.log_sum_exp(logits, 1)?;
    let mean = s.tape.mean(lse)?;
    s.tape.neg(mean)
}

/// Best-of-many reconstruction: for each agent the smallest (over the `F`
/// samples) mean squared displacement to the ground truth, then averaged over
/// agents. `pred` is `F x N x T x 2`; `gt` is `N x T x 2`. Gradients reach the
/// selected sample only.
pub fn recon_loss(s: &mut Session, pred: Var, gt: &Tensor) -> Result<Var, NumError> {
    let shape = s.shape(pred);
    if shape.len() != 4 || shape[1..] != *gt.shape() {
        return Err(NumError::ShapeMismatch {
            op: "recon_loss",
            lhs: shape,
            rhs: gt.shape().to_vec(),
        });
    }
    let (f, n, t) = (shape[0], shape[1], shape[2]);
    let target = Tensor::from_fn(&shape, |q| gt.data()[q % (n * t * 2)]);
    let target = s.constant(target);
    let diff = s.tape.sub(pred, target)?;
    let sq = s.tape.square(diff)?;
    let dist = s.tape.sum_axis(sq, 3)?;
    let per_sample = s.tape.sum_axis(dist, 2)?;
    let per_sample = s.tape.scale(per_sample, 1.0 / t as f64)?; // F x N
    let values = s.value(per_sample).clone();
    let best: Vec<usize> = (0..n)
        .map(|i| {
            (0..f)
                .min_by(|&a, &b| values.data()[a * n + i].total_cmp(&values.data()[b * n + i]))
                .map(|a| a * n + i)
                .expect("at least one sample")
        })
        .collect();
    let chosen = s.tape.gather(per_sample, best.into(), &[n])?;
    s.tape.mean(chosen)
}
