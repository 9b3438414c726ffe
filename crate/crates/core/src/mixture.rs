//! One-dimensional Gaussian mixtures and the transport costs between them.
//!
//! Every distribution handled by the learner (value and critic return
//! distributions, Bellman targets and the policy's action distribution) is a
//! [`GaussianMixture`]. The functions here are pure and allocation-light so
//! they can be called from any worker thread.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Lower bound applied to every component standard deviation.
pub const SIGMA_FLOOR: f64 = 1e-4;

/// Tolerance on the sum of mixture weights.
pub const WEIGHT_SUM_TOL: f64 = 1e-6;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Error, PartialEq)]
pub enum MixtureError {
    #[error("mixture needs at least one component")]
    Empty,
    #[error("component arrays differ in length: {weights} weights, {means} means, {stds} stds")]
    LengthMismatch {
        weights: usize,
        means: usize,
        stds: usize,
    },
    #[error("weight {index} is {value}, expected a finite non-negative number")]
    BadWeight { index: usize, value: f64 },
    #[error("weights sum to {0}, expected 1")]
    WeightSum(f64),
    #[error("component {index} has std {value}, below the floor {SIGMA_FLOOR}")]
    StdBelowFloor { index: usize, value: f64 },
    #[error("component {index} has a non-finite mean")]
    BadMean { index: usize },
    #[error("exact transport oracle supports at most 3 components per side, got {0}")]
    TooManyComponents(usize),
}

/// Weighted sum of one-dimensional normal components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixture {
    weights: Vec<f64>,
    means: Vec<f64>,
    stds: Vec<f64>,
}

impl GaussianMixture {
    /// Builds a mixture, rejecting anything that breaks the invariants.
    pub fn new(weights: Vec<f64>, means: Vec<f64>, stds: Vec<f64>) -> Result<Self, MixtureError> {
        if weights.len() != means.len() || weights.len() != stds.len() {
            return Err(MixtureError::LengthMismatch {
                weights: weights.len(),
                means: means.len(),
                stds: stds.len(),
            });
        }
        if weights.is_empty() {
            return Err(MixtureError::Empty);
        }
        for (index, &value) in weights.iter().enumerate() {
            if !value.is_finite() || value < 0.0 {
                return Err(MixtureError::BadWeight { index, value });
            }
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(MixtureError::WeightSum(total));
        }
        for (index, &m) in means.iter().enumerate() {
            if !m.is_finite() {
                return Err(MixtureError::BadMean { index });
            }
        }
        for (index, &value) in stds.iter().enumerate() {
            // NaN fails this comparison too
            if !(value >= SIGMA_FLOOR) || !value.is_finite() {
                return Err(MixtureError::StdBelowFloor { index, value });
            }
        }
        Ok(Self {
            weights,
            means,
            stds,
        })
    }

    /// Like [`GaussianMixture::new`] but lifts every std to the floor first.
    pub fn with_floor(
        weights: Vec<f64>,
        means: Vec<f64>,
        stds: Vec<f64>,
    ) -> Result<Self, MixtureError> {
        let stds = stds.into_iter().map(floor_std).collect();
        Self::new(weights, means, stds)
    }

    pub fn single(mean: f64, std: f64) -> Result<Self, MixtureError> {
        Self::new(vec![1.0], vec![mean], vec![std])
    }

    /// Equal-weight mixture over the given `(mean, std)` pairs.
    pub fn uniform(components: &[(f64, f64)]) -> Result<Self, MixtureError> {
        let n = components.len();
        if n == 0 {
            return Err(MixtureError::Empty);
        }
        let w = 1.0 / n as f64;
        Self::new(
            vec![w; n],
            components.iter().map(|c| c.0).collect(),
            components.iter().map(|c| c.1).collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn stds(&self) -> &[f64] {
        &self.stds
    }

    pub fn components(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.weights
            .iter()
            .zip(&self.means)
            .zip(&self.stds)
            .map(|((&w, &m), &s)| (w, m, s))
    }

    pub fn mean(&self) -> f64 {
        mixture_mean(self)
    }

    pub fn log_density(&self, x: f64) -> f64 {
        gm_log_density(self, x)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        gm_sample(self, rng)
    }
}

#[inline]
pub fn floor_std(s: f64) -> f64 {
    if s.is_nan() {
        SIGMA_FLOOR
    } else {
        s.max(SIGMA_FLOOR)
    }
}

/// Squared 2-Wasserstein distance between `N(mu_a, sigma_a)` and `N(mu_b, sigma_b)`.
#[inline]
pub fn gaussian_w2_sq(mu_a: f64, sigma_a: f64, mu_b: f64, sigma_b: f64) -> f64 {
    let dm = mu_a - mu_b;
    let ds = sigma_a - sigma_b;
    dm * dm + ds * ds
}

/// Transport cost of the independent (product) coupling between the two
/// mixtures. Always an upper bound on the optimal mixture-restricted cost.
pub fn mw2_upper(a: &GaussianMixture, b: &GaussianMixture) -> f64 {
    let mut total = 0.0;
    for (wa, ma, sa) in a.components() {
        for (wb, mb, sb) in b.components() {
            total += wa * wb * gaussian_w2_sq(ma, sa, mb, sb);
        }
    }
    total
}

/// Optimal mixture-restricted transport cost, computed exactly for small
/// mixtures.
///
/// The cost is linear in the coupling, so the minimum sits on a vertex of the
/// transportation polytope. Every vertex is the unique solution supported on
/// some spanning tree of the complete bipartite graph between components, and
/// with at most three components per side there are at most 81 such trees.
/// Only meant as a reference for checking [`mw2_upper`].
pub fn mw2_exact_oracle(a: &GaussianMixture, b: &GaussianMixture) -> Result<f64, MixtureError> {
    let (n, m) = (a.len(), b.len());
    if n > 3 {
        return Err(MixtureError::TooManyComponents(n));
    }
    if m > 3 {
        return Err(MixtureError::TooManyComponents(m));
    }
    let cost = |i: usize, j: usize| gaussian_w2_sq(a.means[i], a.stds[i], b.means[j], b.stds[j]);
    let cells = n * m;
    let basis = n + m - 1;
    let mut best = f64::INFINITY;
    for mask in 0u32..(1u32 << cells) {
        if mask.count_ones() as usize != basis {
            continue;
        }
        if let Some(plan) = tree_solution(mask, n, m, a.weights(), b.weights()) {
            let c: f64 = (0..cells)
                .filter(|k| mask & (1 << k) != 0)
                .map(|k| plan[k] * cost(k / m, k % m))
                .sum();
            best = best.min(c);
        }
    }
    Ok(best.max(0.0))
}

/// Solves the transport plan supported on the cells in `mask` if they form a
/// spanning tree and the plan is feasible.
fn tree_solution(mask: u32, n: usize, m: usize, row: &[f64], col: &[f64]) -> Option<Vec<f64>> {
    let mut plan = vec![0.0; n * m];
    let mut open: Vec<usize> = (0..n * m).filter(|k| mask & (1 << k) != 0).collect();
    let mut row_left = row.to_vec();
    let mut col_left = col.to_vec();
    // Peel leaves: a row or column with exactly one open cell fixes that cell.
    while !open.is_empty() {
        let mut progressed = false;
        for r in 0..n {
            let in_row: Vec<usize> = open.iter().copied().filter(|&k| k / m == r).collect();
            if in_row.len() == 1 {
                let k = in_row[0];
                let v = row_left[r];
                plan[k] = v;
                row_left[r] -= v;
                col_left[k % m] -= v;
                open.retain(|&c| c != k);
                progressed = true;
            }
        }
        for c in 0..m {
            let in_col: Vec<usize> = open.iter().copied().filter(|&k| k % m == c).collect();
            if in_col.len() == 1 {
                let k = in_col[0];
                let v = col_left[c];
                plan[k] = v;
                row_left[k / m] -= v;
                col_left[c] -= v;
                open.retain(|&x| x != k);
                progressed = true;
            }
        }
        if !progressed {
            // a cycle: not a tree
            return None;
        }
    }
    let tol = 1e-12;
    let balanced = row_left.iter().chain(&col_left).all(|r| r.abs() < 1e-9);
    if balanced && plan.iter().all(|&v| v >= -tol) {
        Some(plan.into_iter().map(|v| v.max(0.0)).collect())
    } else {
        None
    }
}

/// Asymmetric expectile weight `|tau - 1{mu_q - mu_v < 0}|`.
#[inline]
pub fn expectile_weight(tau: f64, mu_q: f64, mu_v: f64) -> f64 {
    if mu_q - mu_v < 0.0 {
        1.0 - tau
    } else {
        tau
    }
}

/// Shifts a next-state return mixture by `reward` and scales it by `gamma`.
pub fn bellman_target(reward: f64, gamma: f64, next: &GaussianMixture) -> GaussianMixture {
    GaussianMixture {
        weights: next.weights.clone(),
        means: next.means.iter().map(|m| reward + gamma * m).collect(),
        stds: next.stds.iter().map(|s| floor_std(gamma * s)).collect(),
    }
}

pub fn mixture_mean(z: &GaussianMixture) -> f64 {
    z.weights.iter().zip(&z.means).map(|(w, m)| w * m).sum()
}

#[inline]
pub(crate) fn normal_log_pdf(x: f64, mean: f64, std: f64) -> f64 {
    let u = (x - mean) / std;
    -0.5 * u * u - std.ln() - LN_SQRT_2PI
}

/// Log density of the mixture at `x`, stabilised with log-sum-exp.
pub fn gm_log_density(z: &GaussianMixture, x: f64) -> f64 {
    let mut terms = [0.0f64; 8];
    let mut heap = Vec::new();
    let logs: &mut [f64] = if z.len() <= terms.len() {
        &mut terms[..z.len()]
    } else {
        heap.resize(z.len(), 0.0);
        &mut heap
    };
    for (slot, (w, m, s)) in logs.iter_mut().zip(z.components()) {
        *slot = if w > 0.0 {
            w.ln() + normal_log_pdf(x, m, s)
        } else {
            f64::NEG_INFINITY
        };
    }
    log_sum_exp(logs)
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Draws a component by weight, then a value from that component.
pub fn gm_sample<R: Rng + ?Sized>(z: &GaussianMixture, rng: &mut R) -> f64 {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut pick = z.len() - 1;
    for (i, w) in z.weights.iter().enumerate() {
        acc += w;
        if u < acc {
            pick = i;
            break;
        }
    }
    // Trailing zero-weight components must never be chosen by round-off.
    while z.weights[pick] == 0.0 && pick > 0 {
        pick -= 1;
    }
    let eps: f64 = StandardNormal.sample(rng);
    z.means[pick] + z.stds[pick] * eps
}

/// Returns the mixture with the smaller mean; ties go to `first`.
pub fn min_mean_select<'a>(
    first: &'a GaussianMixture,
    second: &'a GaussianMixture,
) -> &'a GaussianMixture {
    if mixture_mean(second) < mixture_mean(first) {
        second
    } else {
        first
    }
}
