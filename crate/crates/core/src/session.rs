//! Sender/receiver pair of a simulated call: packetization driven by the
//! current bandwidth estimate, receive-side statistics, and the 54-value
//! observation over short and long monitoring intervals.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::emulator::{PacketKind, PacketRecord};

pub const SHORT_MI_MS: f64 = 60.0;
pub const LONG_MI_MS: f64 = 600.0;
pub const MIS_PER_SCALE: usize = 3;
pub const MI_COUNT: usize = 2 * MIS_PER_SCALE;
pub const FEATURE_COUNT: usize = 9;
pub const OBS_DIM: usize = FEATURE_COUNT * MI_COUNT;

pub const AUDIO_BPS: f64 = 30_000.0;
pub const AUDIO_PACKET_BYTES: u32 = 75;
pub const AUDIO_INTERVAL_MS: u64 = 20;
pub const VIDEO_PACKET_BYTES: u32 = 1200;
pub const PROBE_PERIOD_MS: u64 = 5_000;
pub const PROBE_PACKETS: u32 = 10;
pub const PROBE_RATE_FACTOR: f64 = 1.5;
pub const PROBE_PACKET_BYTES: u32 = 1200;

/// Per-MI features in vector order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(usize)]
pub enum Feature {
    ReceivingRate = 0,
    OneWayDelay = 1,
    LossRatio = 2,
    Jitter = 3,
    PVideo = 4,
    PAudio = 5,
    PScreenshare = 6,
    PProbing = 7,
    ProbingEstimate = 8,
}

impl Feature {
    pub const ALL: [Feature; FEATURE_COUNT] = [
        Feature::ReceivingRate,
        Feature::OneWayDelay,
        Feature::LossRatio,
        Feature::Jitter,
        Feature::PVideo,
        Feature::PAudio,
        Feature::PScreenshare,
        Feature::PProbing,
        Feature::ProbingEstimate,
    ];
}

/// Index of `feature` in monitoring interval `mi` (0..3 short, 3..6 long,
/// newest first within each scale).
#[inline]
pub fn obs_index(feature: Feature, mi: usize) -> usize {
    feature as usize * MI_COUNT + mi
}

#[derive(Debug, Error, PartialEq)]
pub enum SessionError {
    #[error("observation is already normalized")]
    AlreadyNormalized,
    #[error("observation has {0} values, expected {OBS_DIM}")]
    BadLength(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    values: Vec<f64>,
    normalized: bool,
}

impl Observation {
    pub fn zeros() -> Self {
        Self {
            values: vec![0.0; OBS_DIM],
            normalized: false,
        }
    }

    pub fn from_raw(values: Vec<f64>) -> Result<Self, SessionError> {
        if values.len() != OBS_DIM {
            return Err(SessionError::BadLength(values.len()));
        }
        Ok(Self {
            values,
            normalized: false,
        })
    }

    pub fn from_normalized(values: Vec<f64>) -> Result<Self, SessionError> {
        if values.len() != OBS_DIM {
            return Err(SessionError::BadLength(values.len()));
        }
        Ok(Self {
            values,
            normalized: true,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn get(&self, feature: Feature, mi: usize) -> f64 {
        self.values[obs_index(feature, mi)]
    }
}

/// Log-linear map between normalized actions in `[-1, 1]` and bitrates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionMap {
    pub b_min: f64,
    pub b_max: f64,
}

impl Default for ActionMap {
    fn default() -> Self {
        Self {
            b_min: 10_000.0,
            b_max: 8_000_000.0,
        }
    }
}

impl ActionMap {
    pub fn action_to_bps(&self, a: f64) -> f64 {
        let clamped = if a.is_nan() { -1.0 } else { a.clamp(-1.0, 1.0) };
        if clamped != a {
            log::trace!("action {a} clamped to {clamped}");
        }
        let (lo, hi) = (self.b_min.ln(), self.b_max.ln());
        (lo + (clamped + 1.0) / 2.0 * (hi - lo)).exp()
    }

    pub fn bps_to_action(&self, b: f64) -> f64 {
        let clamped = if b.is_nan() {
            self.b_min
        } else {
            b.clamp(self.b_min, self.b_max)
        };
        if clamped != b {
            log::trace!("bitrate {b} clamped to {clamped}");
        }
        let (lo, hi) = (self.b_min.ln(), self.b_max.ln());
        2.0 * (clamped.ln() - lo) / (hi - lo) - 1.0
    }

    pub fn clamp_bps(&self, b: f64) -> f64 {
        b.clamp(self.b_min, self.b_max)
    }
}

/// Constants of the observation normalization; echoed in dataset headers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub rate_ref_bps: f64,
    pub delay_clip_ms: f64,
    pub jitter_clip_ms: f64,
}

impl Default for Normalization {
    fn default() -> Self {
        Self::for_action_map(&ActionMap::default())
    }
}

impl Normalization {
    pub fn for_action_map(map: &ActionMap) -> Self {
        Self {
            rate_ref_bps: map.b_max,
            delay_clip_ms: 1000.0,
            jitter_clip_ms: 500.0,
        }
    }

    fn rate(&self, x: f64) -> f64 {
        ((1.0 + x.max(0.0)).ln() / (1.0 + self.rate_ref_bps).ln()).min(1.0)
    }
}

/// Maps a raw observation into `[0, 1]`. Rejects already-normalized input.
pub fn normalize_observation(
    obs: &Observation,
    norm: &Normalization,
) -> Result<Observation, SessionError> {
    if obs.normalized {
        return Err(SessionError::AlreadyNormalized);
    }
    let mut values = obs.values.clone();
    for mi in 0..MI_COUNT {
        for f in Feature::ALL {
            let i = obs_index(f, mi);
            let x = values[i];
            values[i] = match f {
                Feature::ReceivingRate | Feature::ProbingEstimate => norm.rate(x),
                Feature::OneWayDelay => x.clamp(0.0, norm.delay_clip_ms) / norm.delay_clip_ms,
                Feature::Jitter => x.clamp(0.0, norm.jitter_clip_ms) / norm.jitter_clip_ms,
                _ => x,
            };
        }
    }
    Ok(Observation {
        values,
        normalized: true,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct ProbeBurst {
    remaining: u32,
    next_emit_ms: f64,
    interval_ms: f64,
}

/// Sender half of a call: media generation at the current target bitrate.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionState {
    current_target_bps: f64,
    next_seq: u64,
    video_credit_bytes: f64,
    probe: Option<ProbeBurst>,
    decisions: u64,
    action_map: ActionMap,
}

impl SessionState {
    pub fn new(initial_target_bps: f64, action_map: ActionMap) -> Self {
        Self {
            current_target_bps: action_map.clamp_bps(initial_target_bps),
            next_seq: 0,
            video_credit_bytes: 0.0,
            probe: None,
            decisions: 0,
            action_map,
        }
    }

    pub fn target_bps(&self) -> f64 {
        self.current_target_bps
    }

    pub fn decisions(&self) -> u64 {
        self.decisions
    }

    /// Applies a new estimate from the policy; counts one decision step.
    pub fn set_target(&mut self, bps: f64) {
        self.current_target_bps = self.action_map.clamp_bps(bps);
        self.decisions += 1;
    }

    fn packet(&mut self, kind: PacketKind, size: u32, tick_ms: u64) -> PacketRecord {
        let seq = self.next_seq;
        self.next_seq += 1;
        PacketRecord {
            seq,
            kind,
            size_bytes: size,
            send_ts_ms: tick_ms as f64,
            recv_ts_ms: None,
        }
    }

    /// Packets the sender emits during tick `tick_ms`.
    pub fn generate_media(&mut self, tick_ms: u64) -> Vec<PacketRecord> {
        let mut out = Vec::new();
        if tick_ms % AUDIO_INTERVAL_MS == 0 {
            out.push(self.packet(PacketKind::Audio, AUDIO_PACKET_BYTES, tick_ms));
        }

        let video_bps = (self.current_target_bps - AUDIO_BPS).max(0.0);
        self.video_credit_bytes += video_bps / 8_000.0;
        while self.video_credit_bytes >= VIDEO_PACKET_BYTES as f64 {
            self.video_credit_bytes -= VIDEO_PACKET_BYTES as f64;
            out.push(self.packet(PacketKind::Video, VIDEO_PACKET_BYTES, tick_ms));
        }

        if tick_ms > 0 && tick_ms % PROBE_PERIOD_MS == 0 {
            let rate = PROBE_RATE_FACTOR * self.current_target_bps;
            self.probe = Some(ProbeBurst {
                remaining: PROBE_PACKETS,
                next_emit_ms: tick_ms as f64,
                interval_ms: PROBE_PACKET_BYTES as f64 * 8_000.0 / rate,
            });
        }
        let now = tick_ms as f64;
        while let Some(mut burst) = self.probe.take() {
            if burst.remaining == 0 || burst.next_emit_ms > now {
                if burst.remaining > 0 {
                    self.probe = Some(burst);
                }
                break;
            }
            out.push(self.packet(PacketKind::Probing, PROBE_PACKET_BYTES, tick_ms));
            burst.remaining -= 1;
            burst.next_emit_ms += burst.interval_ms;
            self.probe = Some(burst);
        }
        out
    }
}

/// Aggregates over the packets received in one window.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct WindowStats {
    pub received: usize,
    pub lost: u64,
    pub bytes: u64,
    pub audio_bytes: u64,
    pub video_bytes: u64,
    pub count_video: usize,
    pub count_audio: usize,
    pub count_screenshare: usize,
    pub count_probing: usize,
    pub mean_delay_ms: f64,
    pub jitter_ms: f64,
}

impl WindowStats {
    pub fn loss_ratio(&self) -> f64 {
        let total = self.lost + self.received as u64;
        if total == 0 {
            0.0
        } else {
            self.lost as f64 / total as f64
        }
    }
}

/// Receive-side log: delivered packets in arrival order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReceiverLog {
    packets: Vec<PacketRecord>,
}

impl ReceiverLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records a delivered packet. Arrivals must come in receive order.
    pub fn push(&mut self, p: PacketRecord) {
        let recv = p.recv_ts_ms.expect("receiver only logs delivered packets");
        debug_assert!(self
            .packets
            .last()
            .is_none_or(|q| q.recv_ts_ms.unwrap() <= recv));
        self.packets.push(p);
    }

    pub fn packets(&self) -> &[PacketRecord] {
        &self.packets
    }

    pub fn len(&self) -> usize {
        self.packets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.packets.is_empty()
    }
}

fn recv(p: &PacketRecord) -> f64 {
    p.recv_ts_ms.unwrap_or(f64::INFINITY)
}

/// Statistics of packets received in `[start_ms, end_ms)`.
///
/// Loss comes from sequence gaps: each received packet is charged with the
/// packets missing between it and its predecessor in the whole log.
pub fn window_stats(log: &[PacketRecord], start_ms: f64, end_ms: f64) -> WindowStats {
    let lo = log.partition_point(|p| recv(p) < start_ms);
    let hi = log.partition_point(|p| recv(p) < end_ms);
    let mut s = WindowStats::default();
    if hi <= lo {
        return s;
    }
    let mut delay_sum = 0.0;
    let mut gap_sum = 0.0;
    let mut gap_sq = 0.0;
    let mut gaps = 0usize;
    for i in lo..hi {
        let p = &log[i];
        let prev_seq = if i == 0 { -1 } else { log[i - 1].seq as i64 };
        s.lost += (p.seq as i64 - prev_seq - 1).max(0) as u64;
        s.received += 1;
        s.bytes += p.size_bytes as u64;
        match p.kind {
            PacketKind::Audio => {
                s.count_audio += 1;
                s.audio_bytes += p.size_bytes as u64;
            }
            PacketKind::Video => {
                s.count_video += 1;
                s.video_bytes += p.size_bytes as u64;
            }
            PacketKind::Screenshare => s.count_screenshare += 1,
            PacketKind::Probing => s.count_probing += 1,
        }
        delay_sum += recv(p) - p.send_ts_ms;
        if i > lo {
            let g = recv(p) - recv(&log[i - 1]);
            gap_sum += g;
            gap_sq += g * g;
            gaps += 1;
        }
    }
    s.mean_delay_ms = delay_sum / s.received as f64;
    if gaps >= 2 {
        let mean = gap_sum / gaps as f64;
        s.jitter_ms = (gap_sq / gaps as f64 - mean * mean).max(0.0).sqrt();
    }
    s
}

/// Delivered-rate estimate of the latest probe burst received before `end_ms`.
pub fn probing_estimate(log: &[PacketRecord], end_ms: f64) -> f64 {
    let mut hi = log.partition_point(|p| recv(p) < end_ms);
    while hi > 0 {
        let Some(last) = log[..hi]
            .iter()
            .rposition(|p| p.kind == PacketKind::Probing)
        else {
            return 0.0;
        };
        let burst = (log[last].send_ts_ms / PROBE_PERIOD_MS as f64).floor() as i64;
        let burst_start = burst as f64 * PROBE_PERIOD_MS as f64;
        let mut first = last;
        let mut bits = 0.0;
        let mut count = 0;
        let mut i = last + 1;
        while i > 0 {
            i -= 1;
            let p = &log[i];
            if p.send_ts_ms < burst_start {
                break;
            }
            if p.kind == PacketKind::Probing {
                first = i;
                bits += p.size_bytes as f64 * 8.0;
                count += 1;
            }
        }
        let span_ms = recv(&log[last]) - recv(&log[first]);
        if count >= 2 && span_ms > 0.0 {
            return bits / (span_ms / 1000.0);
        }
        hi = first;
    }
    0.0
}

/// Raw (un-normalized) observation at `now_ms` from the receive log.
pub fn build_observation(log: &[PacketRecord], now_ms: f64) -> Observation {
    let mut values = vec![0.0; OBS_DIM];
    let windows = (0..MIS_PER_SCALE)
        .map(|k| (k, SHORT_MI_MS))
        .chain((0..MIS_PER_SCALE).map(|k| (k, LONG_MI_MS)));
    for (mi, (k, width)) in windows.enumerate() {
        let end = now_ms - width * k as f64;
        let start = end - width;
        let s = window_stats(log, start, end);
        if s.received == 0 {
            continue;
        }
        let n = s.received as f64;
        let mut set = |f: Feature, v: f64| values[obs_index(f, mi)] = v;
        set(Feature::ReceivingRate, s.bytes as f64 * 8.0 / (width / 1000.0));
        set(Feature::OneWayDelay, s.mean_delay_ms);
        set(Feature::LossRatio, s.loss_ratio());
        set(Feature::Jitter, s.jitter_ms);
        set(Feature::PVideo, s.count_video as f64 / n);
        set(Feature::PAudio, s.count_audio as f64 / n);
        set(Feature::PScreenshare, s.count_screenshare as f64 / n);
        set(Feature::PProbing, s.count_probing as f64 / n);
        set(Feature::ProbingEstimate, probing_estimate(log, end));
    }
    Observation {
        values,
        normalized: false,
    }
}
