//! Deterministic audio/video quality surrogates and the QoE reward that
//! blends them.
//!
//! The surrogates only preserve shape: quality rises with receive rate and
//! falls with loss, jitter and delay, so both overshooting the link (queueing
//! and drops) and undershooting it (low media rate) cost reward.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::emulator::PacketRecord;
use crate::session::window_stats;

pub const MOS_MIN: f64 = 1.0;
pub const MOS_MAX: f64 = 5.0;
pub const REWARD_WINDOW_MS: f64 = 600.0;

#[derive(Debug, Error, PartialEq)]
pub enum QoeError {
    #[error("audio weight {0} outside [0, 1]")]
    BadAlpha(f64),
}

/// Receive-side statistics over the reward window.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MediaWindowStats {
    pub audio_rate_bps: f64,
    pub video_rate_bps: f64,
    pub loss_ratio: f64,
    pub jitter_ms: f64,
    pub one_way_delay_ms: f64,
}

impl MediaWindowStats {
    /// Stats over the `window_ms` ending (exclusively) at `end_ms`.
    pub fn from_log(log: &[PacketRecord], end_ms: f64, window_ms: f64) -> Self {
        let s = window_stats(log, end_ms - window_ms, end_ms);
        let secs = window_ms / 1000.0;
        Self {
            audio_rate_bps: s.audio_bytes as f64 * 8.0 / secs,
            video_rate_bps: s.video_bytes as f64 * 8.0 / secs,
            loss_ratio: s.loss_ratio(),
            jitter_ms: s.jitter_ms,
            one_way_delay_ms: s.mean_delay_ms,
        }
    }
}

/// Constants of the surrogate quality models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurrogateConstants {
    pub audio_saturation_bps: f64,
    pub audio_loss_exponent: f64,
    pub audio_jitter_decay_ms: f64,
    pub video_knee_bps: f64,
    pub video_ceiling_bps: f64,
    pub video_loss_exponent: f64,
    pub video_delay_free_ms: f64,
    pub video_delay_decay_ms: f64,
}

impl Default for SurrogateConstants {
    fn default() -> Self {
        Self {
            audio_saturation_bps: 25_000.0,
            audio_loss_exponent: 3.0,
            audio_jitter_decay_ms: 60.0,
            video_knee_bps: 1e5,
            video_ceiling_bps: 8e6,
            video_loss_exponent: 2.0,
            video_delay_free_ms: 100.0,
            video_delay_decay_ms: 200.0,
        }
    }
}

fn clamp_mos(x: f64) -> f64 {
    if x.is_nan() {
        MOS_MIN
    } else {
        x.clamp(MOS_MIN, MOS_MAX)
    }
}

pub fn audio_mos(s: &MediaWindowStats, c: &SurrogateConstants) -> f64 {
    let rate = (s.audio_rate_bps.max(0.0) / c.audio_saturation_bps).min(1.0);
    let loss = (1.0 - s.loss_ratio.clamp(0.0, 1.0)).powf(c.audio_loss_exponent);
    let jitter = (-s.jitter_ms.max(0.0) / c.audio_jitter_decay_ms).exp();
    clamp_mos(1.0 + 4.0 * rate * loss * jitter)
}

pub fn video_mos(s: &MediaWindowStats, c: &SurrogateConstants) -> f64 {
    let rate = (1.0 + s.video_rate_bps.max(0.0) / c.video_knee_bps).ln()
        / (1.0 + c.video_ceiling_bps / c.video_knee_bps).ln();
    let loss = (1.0 - s.loss_ratio.clamp(0.0, 1.0)).powf(c.video_loss_exponent);
    let delay = (-(s.one_way_delay_ms - c.video_delay_free_ms).max(0.0) / c.video_delay_decay_ms).exp();
    clamp_mos(1.0 + 4.0 * rate.min(1.0) * loss * delay)
}

/// `alpha * audio + (1 - alpha) * video`.
pub fn qoe_reward(audio: f64, video: f64, alpha: f64) -> Result<f64, QoeError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(QoeError::BadAlpha(alpha));
    }
    Ok(alpha * audio + (1.0 - alpha) * video)
}

/// Reward settings shared by collection and evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    pub alpha: f64,
    pub window_ms: f64,
    pub surrogate: SurrogateConstants,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            window_ms: REWARD_WINDOW_MS,
            surrogate: SurrogateConstants::default(),
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), QoeError> {
        qoe_reward(MOS_MIN, MOS_MIN, self.alpha).map(|_| ())
    }

    pub fn reward(&self, s: &MediaWindowStats) -> f64 {
        let a = audio_mos(s, &self.surrogate);
        let v = video_mos(s, &self.surrogate);
        qoe_reward(a, v, self.alpha).expect("alpha validated with the config")
    }

    /// Reward over the trailing window of the receive log ending at `now_ms`.
    pub fn reward_at(&self, log: &[PacketRecord], now_ms: f64) -> f64 {
        self.reward(&MediaWindowStats::from_log(log, now_ms, self.window_ms))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c() -> SurrogateConstants {
        SurrogateConstants::default()
    }

    #[test]
    fn audio_examples() {
        let best = MediaWindowStats {
            audio_rate_bps: 30_000.0,
            ..Default::default()
        };
        assert_eq!(audio_mos(&best, &c()), 5.0);
        assert_eq!(audio_mos(&MediaWindowStats::default(), &c()), 1.0);
        let s = MediaWindowStats {
            audio_rate_bps: 25_000.0,
            loss_ratio: 0.2,
            jitter_ms: 30.0,
            ..Default::default()
        };
        let oracle = 1.0 + 4.0 * 0.8f64.powi(3) * (-0.5f64).exp();
        assert!((audio_mos(&s, &c()) - oracle).abs() < 1e-12);
        assert!((oracle - 2.242).abs() < 1e-3);
    }

    #[test]
    fn video_examples() {
        let best = MediaWindowStats {
            video_rate_bps: 8e6,
            one_way_delay_ms: 80.0,
            ..Default::default()
        };
        assert!((video_mos(&best, &c()) - 5.0).abs() < 1e-12);
        assert_eq!(video_mos(&MediaWindowStats::default(), &c()), 1.0);
        let s = MediaWindowStats {
            video_rate_bps: 1e6,
            loss_ratio: 0.1,
            one_way_delay_ms: 150.0,
            ..Default::default()
        };
        let oracle = 1.0 + 4.0 * (11f64.ln() / 81f64.ln()) * 0.81 * (-0.25f64).exp();
        assert!((video_mos(&s, &c()) - oracle).abs() < 1e-12);
        assert!((oracle - 2.377).abs() < 1e-3);
    }

    #[test]
    fn reward_examples() {
        assert_eq!(qoe_reward(4.0, 3.0, 0.5).unwrap(), 3.5);
        assert_eq!(qoe_reward(4.2, 1.7, 1.0).unwrap(), 4.2);
        assert_eq!(qoe_reward(4.2, 1.7, 0.0).unwrap(), 1.7);
        assert_eq!(qoe_reward(4.0, 3.0, 1.5), Err(QoeError::BadAlpha(1.5)));
        assert!(qoe_reward(4.0, 3.0, -0.1).is_err());
    }

    fn arb_stats() -> impl Strategy<Value = MediaWindowStats> {
        (0.0f64..1e5, 0.0f64..1e7, 0.0f64..=1.0, 0.0f64..500.0, 0.0f64..2000.0).prop_map(
            |(a, v, l, j, d)| MediaWindowStats {
                audio_rate_bps: a,
                video_rate_bps: v,
                loss_ratio: l,
                jitter_ms: j,
                one_way_delay_ms: d,
            },
        )
    }

    proptest! {
        #[test]
        fn surrogates_are_monotone(s in arb_stats(), bump in 0.0f64..1.0) {
            let k = c();
            let a = audio_mos(&s, &k);
            let v = video_mos(&s, &k);
            prop_assert!((1.0..=5.0).contains(&a) && (1.0..=5.0).contains(&v));

            let mut up = s; up.audio_rate_bps += bump * 1e4;
            prop_assert!(audio_mos(&up, &k) >= a);
            let mut up = s; up.video_rate_bps += bump * 1e6;
            prop_assert!(video_mos(&up, &k) >= v);
            let mut worse = s; worse.loss_ratio = (s.loss_ratio + bump * 0.2).min(1.0);
            prop_assert!(audio_mos(&worse, &k) <= a && video_mos(&worse, &k) <= v);
            let mut worse = s; worse.jitter_ms += bump * 50.0;
            prop_assert!(audio_mos(&worse, &k) <= a && video_mos(&worse, &k) <= v);
            let mut worse = s; worse.one_way_delay_ms += bump * 300.0;
            prop_assert!(audio_mos(&worse, &k) <= a && video_mos(&worse, &k) <= v);
        }

        #[test]
        fn reward_is_linear_in_alpha(a in 1.0f64..=5.0, v in 1.0f64..=5.0, x in 0.0f64..=1.0, y in 0.0f64..=1.0) {
            let rx = qoe_reward(a, v, x).unwrap();
            let ry = qoe_reward(a, v, y).unwrap();
            let mid = qoe_reward(a, v, 0.5 * (x + y)).unwrap();
            prop_assert!((mid - 0.5 * (rx + ry)).abs() < 1e-12);
            prop_assert!((1.0..=5.0).contains(&rx));
        }
    }
}
