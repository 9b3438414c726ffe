//! Closed-loop call runner: sender, emulated link, receiver and a rate policy
//! stepped together at the decision cadence.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::behavior::{ukf_like_step, BehaviorConfig, EstimatorState};
use crate::emulator::{LinkState, LinkStats, NetworkProfile, PacketRecord};
use crate::qoe::RewardConfig;
use crate::session::{
    build_observation, normalize_observation, ActionMap, Normalization, Observation, ReceiverLog,
    SessionState,
};

pub const DECISION_MS: u64 = 60;

/// Splits one root seed into independent streams by label.
pub fn derive_seed(root: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update(label.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest length"))
}

/// A bitrate controller driven once per decision interval.
pub trait RatePolicy {
    /// Called once before each call.
    fn reset(&mut self, call_seed: u64);
    /// Returns the new target bitrate.
    fn decide(&mut self, raw: &Observation, normalized: &Observation) -> f64;
}

/// The rule-based estimator as a policy.
#[derive(Debug, Clone)]
pub struct BehaviorPolicy {
    pub cfg: BehaviorConfig,
    pub map: ActionMap,
    state: EstimatorState,
}

impl BehaviorPolicy {
    pub fn new(cfg: BehaviorConfig, map: ActionMap) -> Self {
        let state = EstimatorState::new(&cfg, &map, 0);
        Self { cfg, map, state }
    }
}

impl RatePolicy for BehaviorPolicy {
    fn reset(&mut self, call_seed: u64) {
        self.state = EstimatorState::new(&self.cfg, &self.map, derive_seed(call_seed, "behavior"));
    }

    fn decide(&mut self, raw: &Observation, _normalized: &Observation) -> f64 {
        ukf_like_step(&mut self.state, raw, &self.cfg, &self.map)
    }
}

/// Holds a fixed bitrate regardless of feedback.
#[derive(Debug, Clone, Copy)]
pub struct ConstantPolicy {
    pub bps: f64,
}

impl RatePolicy for ConstantPolicy {
    fn reset(&mut self, _call_seed: u64) {}

    fn decide(&mut self, _raw: &Observation, _normalized: &Observation) -> f64 {
        self.bps
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CallConfig {
    pub action_map: ActionMap,
    pub normalization: Normalization,
    pub reward: RewardConfig,
    pub initial_bps: f64,
}

impl Default for CallConfig {
    fn default() -> Self {
        let map = ActionMap::default();
        Self {
            action_map: map,
            normalization: Normalization::for_action_map(&map),
            reward: RewardConfig::default(),
            initial_bps: BehaviorConfig::default().initial_bps,
        }
    }
}

/// One decision instant. `target_bps` is `None` at the final instant, where
/// the call ends before another action is taken.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionStep {
    pub t_ms: u64,
    pub obs: Observation,
    /// Reward of the window ending at this instant.
    pub reward: f64,
    pub target_bps: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CallTrace {
    pub profile: String,
    pub steps: Vec<DecisionStep>,
    pub link: LinkStats,
    /// Every packet that left the link, in departure order.
    pub departures: Vec<PacketRecord>,
}

impl CallTrace {
    /// Mean reward over the instants that follow a policy action.
    pub fn mean_reward(&self) -> f64 {
        let r: Vec<f64> = self.steps.iter().skip(1).map(|s| s.reward).collect();
        if r.is_empty() {
            return 0.0;
        }
        r.iter().sum::<f64>() / r.len() as f64
    }

    pub fn mean_target_bps(&self) -> f64 {
        let a: Vec<f64> = self.steps.iter().filter_map(|s| s.target_bps).collect();
        if a.is_empty() {
            return 0.0;
        }
        a.iter().sum::<f64>() / a.len() as f64
    }
}

/// Runs one call end to end.
///
/// Decisions happen every [`DECISION_MS`] starting at the first full
/// interval; the instant at the end of the call yields an observation and a
/// reward but no action.
pub fn run_call(
    profile: &NetworkProfile,
    policy: &mut dyn RatePolicy,
    call_seed: u64,
    cfg: &CallConfig,
    keep_departures: bool,
) -> CallTrace {
    policy.reset(call_seed);
    let mut link = LinkState::new(profile.clone(), derive_seed(call_seed, "link"));
    let mut session = SessionState::new(cfg.initial_bps, cfg.action_map);
    let mut rx = ReceiverLog::new();
    let mut steps = Vec::with_capacity((profile.duration_ms / DECISION_MS) as usize);
    let mut departures = Vec::new();

    for t in 0..=profile.duration_ms {
        if t > 0 && t % DECISION_MS == 0 {
            let now = t as f64;
            let raw = build_observation(rx.packets(), now);
            let norm = normalize_observation(&raw, &cfg.normalization).expect("raw observation");
            let reward = cfg.reward.reward_at(rx.packets(), now);
            let target = if t < profile.duration_ms {
                let bps = cfg.action_map.clamp_bps(policy.decide(&raw, &norm));
                session.set_target(bps);
                Some(bps)
            } else {
                None
            };
            steps.push(DecisionStep { t_ms: t, obs: norm, reward, target_bps: target });
        }
        if t == profile.duration_ms {
            break;
        }
        let sent = session.generate_media(t);
        for p in link.step_link(sent) {
            if p.recv_ts_ms.is_some() {
                rx.push(p);
            }
            if keep_departures {
                departures.push(p);
            }
        }
    }
    CallTrace { profile: profile.name.clone(), steps, link: link.stats(), departures }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::emulator::{builtin_profiles, find_profile};

    fn profile(name: &str) -> NetworkProfile {
        find_profile(&builtin_profiles(), name).unwrap().clone()
    }

    #[test]
    fn decision_grid() {
        let mut p = profile("fb_1m");
        p.duration_ms = 12_000;
        let trace = run_call(&p, &mut ConstantPolicy { bps: 5e5 }, 1, &CallConfig::default(), false);
        assert_eq!(trace.steps.len(), 200);
        assert_eq!(trace.steps[0].t_ms, 60);
        assert!(trace.steps.last().unwrap().target_bps.is_none());
        assert!(trace.steps.iter().all(|s| (1.0..=5.0).contains(&s.reward)));
        assert!(trace.steps.iter().all(|s| s.obs.values().iter().all(|v| (0.0..=1.0).contains(v))));
    }

    #[test]
    fn packets_are_conserved() {
        let mut p = profile("bl_1m_10");
        p.duration_ms = 10_000;
        let trace = run_call(&p, &mut ConstantPolicy { bps: 2e6 }, 3, &CallConfig::default(), true);
        let s = trace.link;
        assert!(s.dropped > 0 && s.lost > 0);
        assert_eq!(s.sent, s.delivered + s.lost + s.dropped + s.in_flight());
        assert_eq!(trace.departures.len() as u64, s.delivered + s.lost + s.dropped);
    }

    #[test]
    fn behavior_tracks_fixed_capacity() {
        let p = profile("fb_1m");
        let cfg = CallConfig::default();
        for seed in 0..10 {
            let mut policy = BehaviorPolicy::new(BehaviorConfig::default().without_jitter(), cfg.action_map);
            let trace = run_call(&p, &mut policy, seed, &cfg, false);
            let avg = trace.mean_target_bps();
            assert!((6e5..=1.1e6).contains(&avg), "seed {seed}: {avg}");
        }
    }

    #[test]
    fn seeds_are_label_separated() {
        assert_eq!(derive_seed(1, "a"), derive_seed(1, "a"));
        assert_ne!(derive_seed(1, "a"), derive_seed(1, "b"));
        assert_ne!(derive_seed(1, "a"), derive_seed(2, "a"));
    }
}
