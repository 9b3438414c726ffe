//! Rule-based delay-gradient estimator used to collect the offline dataset
//! and as the baseline in evaluation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::session::{ActionMap, Feature, Observation};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BehaviorConfig {
    pub initial_bps: f64,
    pub delay_smoothing: f64,
    pub decrease_loss: f64,
    pub decrease_gradient_ms: f64,
    pub increase_loss: f64,
    pub increase_gradient_ms: f64,
    pub decrease_factor: f64,
    pub increase_factor: f64,
    pub increase_step_bps: f64,
    /// Probability of an exploration perturbation per step. Zero in evaluation.
    pub jitter_prob: f64,
    pub jitter_span: f64,
}

impl Default for BehaviorConfig {
    fn default() -> Self {
        Self {
            initial_bps: 300_000.0,
            delay_smoothing: 0.9,
            decrease_loss: 0.1,
            decrease_gradient_ms: 2.0,
            increase_loss: 0.02,
            increase_gradient_ms: 0.5,
            decrease_factor: 0.85,
            increase_factor: 1.05,
            increase_step_bps: 1000.0,
            jitter_prob: 0.1,
            jitter_span: 0.1,
        }
    }
}

impl BehaviorConfig {
    pub fn without_jitter(mut self) -> Self {
        self.jitter_prob = 0.0;
        self
    }
}

#[derive(Debug, Clone)]
pub struct EstimatorState {
    pub estimate_bps: f64,
    pub smoothed_delay_ms: f64,
    pub prev_smoothed_delay_ms: f64,
    primed: bool,
    rng: ChaCha8Rng,
}

impl EstimatorState {
    pub fn new(cfg: &BehaviorConfig, map: &ActionMap, seed: u64) -> Self {
        Self {
            estimate_bps: map.clamp_bps(cfg.initial_bps),
            smoothed_delay_ms: 0.0,
            prev_smoothed_delay_ms: 0.0,
            primed: false,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

/// One decision of the estimator on a raw observation.
///
/// Uses the newest short interval's delay and loss. The first observation
/// seeds the delay filter so the startup transient is not read as a gradient.
pub fn ukf_like_step(
    state: &mut EstimatorState,
    obs: &Observation,
    cfg: &BehaviorConfig,
    map: &ActionMap,
) -> f64 {
    debug_assert!(!obs.is_normalized(), "behavior policy expects raw observations");
    let delay = obs.get(Feature::OneWayDelay, 0);
    let loss = obs.get(Feature::LossRatio, 0);
    if !state.primed && delay > 0.0 {
        state.smoothed_delay_ms = delay;
        state.prev_smoothed_delay_ms = delay;
        state.primed = true;
    }
    state.prev_smoothed_delay_ms = state.smoothed_delay_ms;
    state.smoothed_delay_ms =
        cfg.delay_smoothing * state.smoothed_delay_ms + (1.0 - cfg.delay_smoothing) * delay;
    let gradient = state.smoothed_delay_ms - state.prev_smoothed_delay_ms;

    let mut est = state.estimate_bps;
    if loss > cfg.decrease_loss || gradient > cfg.decrease_gradient_ms {
        est *= cfg.decrease_factor;
    } else if loss < cfg.increase_loss && gradient < cfg.increase_gradient_ms {
        est = cfg.increase_factor * est + cfg.increase_step_bps;
    }
    if cfg.jitter_prob > 0.0 && state.rng.random::<f64>() < cfg.jitter_prob {
        est *= state
            .rng
            .random_range(1.0 - cfg.jitter_span..1.0 + cfg.jitter_span);
    }
    state.estimate_bps = map.clamp_bps(est);
    state.estimate_bps
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::session::{obs_index, OBS_DIM};

    fn obs(delay: f64, loss: f64) -> Observation {
        let mut v = vec![0.0; OBS_DIM];
        v[obs_index(Feature::OneWayDelay, 0)] = delay;
        v[obs_index(Feature::LossRatio, 0)] = loss;
        Observation::from_raw(v).unwrap()
    }

    fn state_at(bps: f64, delay: f64) -> EstimatorState {
        let cfg = BehaviorConfig::default();
        let mut s = EstimatorState::new(&cfg, &ActionMap::default(), 1);
        s.estimate_bps = bps;
        s.smoothed_delay_ms = delay;
        s.prev_smoothed_delay_ms = delay;
        s.primed = true;
        s
    }

    #[test]
    fn increase_rule() {
        let cfg = BehaviorConfig::default().without_jitter();
        let mut s = state_at(1e6, 40.0);
        let e = ukf_like_step(&mut s, &obs(40.0, 0.0), &cfg, &ActionMap::default());
        assert!((e - 1_051_000.0).abs() < 1e-6);
    }

    #[test]
    fn decrease_on_loss() {
        let cfg = BehaviorConfig::default().without_jitter();
        let mut s = state_at(1e6, 40.0);
        let e = ukf_like_step(&mut s, &obs(40.0, 0.25), &cfg, &ActionMap::default());
        assert!((e - 850_000.0).abs() < 1e-6);
    }

    #[test]
    fn decrease_on_delay_growth() {
        let cfg = BehaviorConfig::default().without_jitter();
        let mut s = state_at(1e6, 40.0);
        // smoothed moves by 0.1 * 30 = 3 ms > 2 ms
        let e = ukf_like_step(&mut s, &obs(70.0, 0.0), &cfg, &ActionMap::default());
        assert!((e - 850_000.0).abs() < 1e-6);
        // 0.1 * 10 = 1 ms sits between the thresholds: hold
        let mut s = state_at(1e6, 40.0);
        let e = ukf_like_step(&mut s, &obs(50.0, 0.0), &cfg, &ActionMap::default());
        assert_eq!(e, 1e6);
    }

    #[test]
    fn estimate_stays_in_range() {
        let cfg = BehaviorConfig::default();
        let map = ActionMap::default();
        let mut s = state_at(map.b_max, 40.0);
        for _ in 0..200 {
            let e = ukf_like_step(&mut s, &obs(40.0, 0.0), &cfg, &map);
            assert!(e <= map.b_max && e >= map.b_min);
        }
        for _ in 0..500 {
            let e = ukf_like_step(&mut s, &obs(40.0, 0.5), &cfg, &map);
            assert!(e <= map.b_max && e >= map.b_min);
        }
        assert!((s.estimate_bps - map.b_min).abs() < 0.2 * map.b_min);
    }

    #[test]
    fn jitter_is_seeded() {
        let cfg = BehaviorConfig {
            jitter_prob: 1.0,
            ..Default::default()
        };
        let map = ActionMap::default();
        let run = |seed| {
            let mut s = EstimatorState::new(&cfg, &map, seed);
            (0..50)
                .map(|_| ukf_like_step(&mut s, &obs(30.0, 0.05), &cfg, &map))
                .collect::<Vec<_>>()
        };
        assert_eq!(run(3), run(3));
        assert_ne!(run(3), run(4));
    }
}
