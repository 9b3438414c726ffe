//! The three training losses, evaluated on network head outputs, plus their
//! gradients with respect to those outputs.
//!
//! Every loss is a batch mean. Targets (critic outputs for the value loss,
//! value outputs for the critic loss, advantages for the actor loss) arrive
//! as plain numbers, so no gradient can leak into them.

use ndarray::Array2;

use crate::mixture::{expectile_weight, gaussian_w2_sq, GaussianMixture};

use super::nn::{HeadGrad, MixtureBatch};

/// Asymmetric mixture Wasserstein loss pulling the value distribution toward
/// an upper expectile of the selected critic distribution.
pub fn value_loss_head(v: &MixtureBatch, q: &[GaussianMixture], tau: f64) -> (f64, HeadGrad) {
    let b = v.len();
    let n = v.components();
    assert_eq!(q.len(), b, "one critic target per sample");
    let inv = 1.0 / b as f64;
    let mut loss = 0.0;
    let mut dw = Array2::zeros((b, n));
    let mut dm = Array2::zeros((b, n));
    let mut ds = Array2::zeros((b, n));
    for r in 0..b {
        for i in 0..n {
            let (wv, mv, sv) = (v.weights[[r, i]], v.means[[r, i]], v.stds[[r, i]]);
            for (wq, mq, sq) in q[r].components() {
                let e = expectile_weight(tau, mq, mv);
                let d = gaussian_w2_sq(mv, sv, mq, sq);
                loss += wv * wq * d * e;
                dw[[r, i]] += wq * d * e * inv;
                dm[[r, i]] += wv * wq * e * 2.0 * (mv - mq) * inv;
                ds[[r, i]] += wv * wq * e * 2.0 * (sv - sq) * inv;
            }
        }
    }
    (loss * inv, HeadGrad::from_weight_grad(&v.weights, &dw, dm, ds))
}

/// Symmetric component-wise squared 2-Wasserstein loss against fixed targets.
pub fn critic_loss_head(q: &MixtureBatch, targets: &[GaussianMixture]) -> (f64, HeadGrad) {
    let b = q.len();
    let n = q.components();
    assert_eq!(targets.len(), b, "one target per sample");
    let inv = 1.0 / b as f64;
    let mut loss = 0.0;
    let mut dw = Array2::zeros((b, n));
    let mut dm = Array2::zeros((b, n));
    let mut ds = Array2::zeros((b, n));
    for r in 0..b {
        for j in 0..n {
            let (wq, mq, sq) = (q.weights[[r, j]], q.means[[r, j]], q.stds[[r, j]]);
            for (wt, mt, st) in targets[r].components() {
                let d = gaussian_w2_sq(mt, st, mq, sq);
                loss += wt * wq * d;
                dw[[r, j]] += wt * d * inv;
                dm[[r, j]] += wt * wq * 2.0 * (mq - mt) * inv;
                ds[[r, j]] += wt * wq * 2.0 * (sq - st) * inv;
            }
        }
    }
    (loss * inv, HeadGrad::from_weight_grad(&q.weights, &dw, dm, ds))
}

/// Weighted negative log-likelihood of dataset actions under the policy.
pub fn actor_loss_head(pi: &MixtureBatch, actions: &[f64], weights: &[f64]) -> (f64, HeadGrad) {
    let b = pi.len();
    let n = pi.components();
    assert_eq!(actions.len(), b);
    assert_eq!(weights.len(), b);
    let inv = 1.0 / b as f64;
    let mut loss = 0.0;
    let mut g = HeadGrad::zeros(b, n);
    let mut logp = vec![0.0; n];
    for r in 0..b {
        let a = actions[r];
        for k in 0..n {
            let (w, m, s) = (pi.weights[[r, k]], pi.means[[r, k]], pi.stds[[r, k]]);
            let z = (a - m) / s;
            logp[k] = w.ln() - 0.5 * z * z - s.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
        }
        let max = logp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logp.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        let c = weights[r] * inv;
        loss -= c * lse;
        for k in 0..n {
            let resp = (logp[k] - lse).exp();
            let (w, m, s) = (pi.weights[[r, k]], pi.means[[r, k]], pi.stds[[r, k]]);
            let d = a - m;
            g.d_logits[[r, k]] = -c * (resp - w);
            g.d_means[[r, k]] = -c * resp * d / (s * s);
            g.d_stds[[r, k]] = -c * resp * (d * d / (s * s * s) - 1.0 / s);
        }
    }
    (loss, g)
}

/// Advantage weight `min(exp(beta * adv), clip)`.
pub fn awr_weight(adv: f64, beta: f64, clip: f64) -> f64 {
    (beta * adv).exp().min(clip)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixture::{gm_log_density, SIGMA_FLOOR};

    #[test]
    fn clip_rule() {
        assert_eq!(awr_weight(200f64.ln() / 3.0, 3.0, 100.0), 100.0);
        assert_eq!(awr_weight(0.0, 3.0, 100.0), 1.0);
    }

    #[test]
    fn actor_loss_is_weighted_nll() {
        let z = GaussianMixture::new(vec![0.3, 0.7], vec![-0.2, 0.4], vec![0.1, 0.3]).unwrap();
        let batch = MixtureBatch::from_mixtures(&[z.clone(), z.clone()]);
        let (l, _) = actor_loss_head(&batch, &[0.1, 0.5], &[1.0, 1.0]);
        let oracle = -(gm_log_density(&z, 0.1) + gm_log_density(&z, 0.5)) / 2.0;
        assert!((l - oracle).abs() < 1e-12);
        let (l2, _) = actor_loss_head(&batch, &[0.1, 0.5], &[2.0, 0.0]);
        assert!((l2 + gm_log_density(&z, 0.1)).abs() < 1e-12);
    }

    #[test]
    fn critic_loss_vanishes_on_its_target() {
        let z = GaussianMixture::single(1.3, 0.4).unwrap();
        let batch = MixtureBatch::from_mixtures(&[z.clone()]);
        let (l, g) = critic_loss_head(&batch, &[z]);
        assert_eq!(l, 0.0);
        assert!(g.d_means.iter().chain(g.d_stds.iter()).all(|v| *v == 0.0));
    }

    #[test]
    fn value_loss_reduces_to_expectile() {
        let v = GaussianMixture::single(1.0, SIGMA_FLOOR).unwrap();
        let q = GaussianMixture::single(2.0, SIGMA_FLOOR).unwrap();
        let batch = MixtureBatch::from_mixtures(&[v.clone()]);
        let (l, _) = value_loss_head(&batch, &[q], 0.7);
        assert!((l - 0.7).abs() < 1e-12);
        let (l0, g) = value_loss_head(&batch, &[v], 0.7);
        assert_eq!(l0, 0.0);
        assert!(g.d_means.iter().all(|x| *x == 0.0));
    }
}
