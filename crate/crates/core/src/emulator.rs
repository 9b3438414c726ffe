//! Fixed-tick bottleneck link: capacity schedule, drop-tail FIFO, propagation
//! delay and random or bursty loss.

use std::collections::VecDeque;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const TICK_MS: u64 = 1;
pub const DEFAULT_QUEUE_MS: f64 = 300.0;
pub const MIN_DURATION_MS: u64 = 10_000;

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("profile {name}: {reason}")]
    Invalid { name: String, reason: String },
    #[error("unknown profile {0:?}")]
    Unknown(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: document {index}: {source}")]
    Parse {
        path: String,
        index: usize,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PacketKind {
    Audio,
    Video,
    Screenshare,
    Probing,
}

/// Header-level view of one RTP packet.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PacketRecord {
    pub seq: u64,
    pub kind: PacketKind,
    pub size_bytes: u32,
    pub send_ts_ms: f64,
    /// `None` once the packet is lost or dropped.
    pub recv_ts_ms: Option<f64>,
}

impl PacketRecord {
    pub fn is_delivered(&self) -> bool {
        self.recv_ts_ms.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LossModel {
    None,
    Iid {
        p: f64,
    },
    /// Gilbert-Elliott two-state chain.
    Gilbert {
        p_good_to_bad: f64,
        p_bad_to_good: f64,
        loss_in_bad: f64,
    },
}

impl LossModel {
    /// Long-run fraction of packets lost.
    pub fn stationary_loss(&self) -> f64 {
        match *self {
            LossModel::None => 0.0,
            LossModel::Iid { p } => p,
            LossModel::Gilbert {
                p_good_to_bad,
                p_bad_to_good,
                loss_in_bad,
            } => {
                let denom = p_good_to_bad + p_bad_to_good;
                if denom == 0.0 {
                    0.0
                } else {
                    loss_in_bad * p_good_to_bad / denom
                }
            }
        }
    }

    fn probabilities(&self) -> Vec<f64> {
        match *self {
            LossModel::None => vec![],
            LossModel::Iid { p } => vec![p],
            LossModel::Gilbert {
                p_good_to_bad,
                p_bad_to_good,
                loss_in_bad,
            } => vec![p_good_to_bad, p_bad_to_good, loss_in_bad],
        }
    }
}

/// State of the loss process: RNG plus the Gilbert chain's current state.
#[derive(Debug, Clone)]
pub struct LossChain {
    rng: ChaCha8Rng,
    bad: bool,
}

impl LossChain {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            bad: false,
        }
    }

    pub fn in_bad_state(&self) -> bool {
        self.bad
    }
}

/// Decides whether the next packet is lost.
pub fn sample_loss(model: &LossModel, chain: &mut LossChain) -> bool {
    match *model {
        LossModel::None => false,
        LossModel::Iid { p } => chain.rng.random::<f64>() < p,
        LossModel::Gilbert {
            p_good_to_bad,
            p_bad_to_good,
            loss_in_bad,
        } => {
            let u: f64 = chain.rng.random();
            chain.bad = if chain.bad {
                u >= p_bad_to_good
            } else {
                u < p_good_to_bad
            };
            chain.bad && chain.rng.random::<f64>() < loss_in_bad
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapacityStep {
    pub start_ms: u64,
    pub capacity_bps: f64,
}

/// Scripted capacity/delay/loss schedule for one emulated call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkProfile {
    pub name: String,
    pub capacity_schedule: Vec<CapacityStep>,
    pub base_delay_ms: f64,
    pub loss_model: LossModel,
    #[serde(default = "default_queue_ms")]
    pub queue_capacity_ms: f64,
    pub duration_ms: u64,
}

fn default_queue_ms() -> f64 {
    DEFAULT_QUEUE_MS
}

impl NetworkProfile {
    pub fn validate(&self) -> Result<(), ProfileError> {
        let bad = |reason: String| ProfileError::Invalid {
            name: self.name.clone(),
            reason,
        };
        if self.name.is_empty() {
            return Err(bad("empty name".into()));
        }
        let first = self
            .capacity_schedule
            .first()
            .ok_or_else(|| bad("empty capacity schedule".into()))?;
        if first.start_ms != 0 {
            return Err(bad("capacity schedule must start at 0 ms".into()));
        }
        for w in self.capacity_schedule.windows(2) {
            if w[1].start_ms <= w[0].start_ms {
                return Err(bad("capacity schedule not strictly sorted".into()));
            }
        }
        if let Some(s) = self
            .capacity_schedule
            .iter()
            .find(|s| !(s.capacity_bps > 0.0 && s.capacity_bps.is_finite()))
        {
            return Err(bad(format!("non-positive capacity at {} ms", s.start_ms)));
        }
        if !(self.base_delay_ms >= 0.0 && self.base_delay_ms.is_finite()) {
            return Err(bad("base delay must be non-negative".into()));
        }
        if !(self.queue_capacity_ms > 0.0 && self.queue_capacity_ms.is_finite()) {
            return Err(bad("queue capacity must be positive".into()));
        }
        if self
            .loss_model
            .probabilities()
            .iter()
            .any(|p| !(0.0..=1.0).contains(p))
        {
            return Err(bad("loss probabilities must lie in [0, 1]".into()));
        }
        if self.duration_ms < MIN_DURATION_MS {
            return Err(bad(format!(
                "duration {} ms is shorter than {MIN_DURATION_MS} ms",
                self.duration_ms
            )));
        }
        Ok(())
    }

    pub fn capacity_at(&self, t_ms: u64) -> f64 {
        let idx = self
            .capacity_schedule
            .partition_point(|s| s.start_ms <= t_ms);
        self.capacity_schedule[idx.saturating_sub(1)].capacity_bps
    }

    /// Time-weighted mean capacity over the call.
    pub fn mean_capacity(&self) -> f64 {
        let mut total = 0.0;
        for (i, step) in self.capacity_schedule.iter().enumerate() {
            if step.start_ms >= self.duration_ms {
                break;
            }
            let end = self
                .capacity_schedule
                .get(i + 1)
                .map_or(self.duration_ms, |n| n.start_ms.min(self.duration_ms));
            total += step.capacity_bps * (end - step.start_ms) as f64;
        }
        total / self.duration_ms as f64
    }
}

fn constant(name: &str, bps: f64, delay: f64, loss: LossModel) -> NetworkProfile {
    NetworkProfile {
        name: name.to_string(),
        capacity_schedule: vec![CapacityStep {
            start_ms: 0,
            capacity_bps: bps,
        }],
        base_delay_ms: delay,
        loss_model: loss,
        queue_capacity_ms: DEFAULT_QUEUE_MS,
        duration_ms: 60_000,
    }
}

fn gilbert_for(target_loss: f64) -> LossModel {
    // loss_in_bad 0.5, exit probability 0.2; solve the entry probability for
    // the requested long-run loss
    let (exit, in_bad) = (0.2, 0.5);
    let frac_bad = target_loss / in_bad;
    LossModel::Gilbert {
        p_good_to_bad: exit * frac_bad / (1.0 - frac_bad),
        p_bad_to_good: exit,
        loss_in_bad: in_bad,
    }
}

/// Built-in profiles covering fixed, fluctuating, lossy and cellular-like links.
pub fn builtin_profiles() -> Vec<NetworkProfile> {
    let mut out = vec![
        constant("fb_8m", 8e6, 20.0, LossModel::None),
        constant("fb_4m", 4e6, 20.0, LossModel::None),
        constant("fb_2m", 2e6, 30.0, LossModel::None),
        constant("fb_1m", 1e6, 30.0, LossModel::None),
        constant("fb_500k", 5e5, 40.0, LossModel::None),
        constant("fb_100k", 1e5, 50.0, LossModel::None),
    ];

    let flb = NetworkProfile {
        name: "flb_500k_2m".into(),
        capacity_schedule: (0..6)
            .map(|k| CapacityStep {
                start_ms: k * 10_000,
                capacity_bps: if k % 2 == 0 { 5e5 } else { 2e6 },
            })
            .collect(),
        ..constant("flb_500k_2m", 5e5, 30.0, LossModel::None)
    };
    out.push(flb);

    out.push(constant("bl_1m_10", 1e6, 30.0, gilbert_for(0.10)));
    out.push(constant("bl_1m_25", 1e6, 30.0, gilbert_for(0.25)));
    out.push(constant("rndl_1ml10", 1e6, 30.0, LossModel::Iid { p: 0.10 }));
    out.push(constant("rndl_1ml20", 1e6, 30.0, LossModel::Iid { p: 0.20 }));

    // piecewise cellular-like trace between 300 and 700 kbps
    let pattern = [700e3, 550e3, 420e3, 300e3, 380e3, 520e3, 650e3, 480e3];
    let lte = NetworkProfile {
        name: "4g_700k".into(),
        capacity_schedule: (0..30)
            .map(|k| CapacityStep {
                start_ms: k as u64 * 2_000,
                capacity_bps: pattern[k % pattern.len()],
            })
            .collect(),
        ..constant("4g_700k", 7e5, 45.0, LossModel::Iid { p: 0.01 })
    };
    out.push(lte);
    out
}

/// Canonical form used for profile lookups: `"FB 1M"` and `"fb_1m"` match.
pub fn canonical_profile_name(name: &str) -> String {
    name.trim()
        .to_ascii_lowercase()
        .replace([' ', '-'], "_")
}

pub fn find_profile<'a>(
    profiles: &'a [NetworkProfile],
    name: &str,
) -> Result<&'a NetworkProfile, ProfileError> {
    let key = canonical_profile_name(name);
    profiles
        .iter()
        .find(|p| canonical_profile_name(&p.name) == key)
        .ok_or_else(|| ProfileError::Unknown(name.to_string()))
}

/// Reads a stream of JSON documents, one profile each.
pub fn load_profiles(path: &Path) -> Result<Vec<NetworkProfile>, ProfileError> {
    let text = fs::read_to_string(path).map_err(|source| ProfileError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_profiles(&text, &path.display().to_string())
}

pub fn parse_profiles(text: &str, origin: &str) -> Result<Vec<NetworkProfile>, ProfileError> {
    let mut out = Vec::new();
    for (index, doc) in serde_json::Deserializer::from_str(text)
        .into_iter::<NetworkProfile>()
        .enumerate()
    {
        let profile = doc.map_err(|source| ProfileError::Parse {
            path: origin.to_string(),
            index,
            source,
        })?;
        profile.validate()?;
        out.push(profile);
    }
    Ok(out)
}

pub fn dump_profiles(profiles: &[NetworkProfile]) -> String {
    let mut s = String::new();
    for p in profiles {
        s.push_str(&serde_json::to_string_pretty(p).expect("profile serializes"));
        s.push('\n');
    }
    s
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkStats {
    pub sent: u64,
    pub delivered: u64,
    pub lost: u64,
    pub dropped: u64,
    pub sent_bytes: u64,
    pub dropped_bytes: u64,
}

impl LinkStats {
    pub fn in_flight(&self) -> u64 {
        self.sent - self.delivered - self.lost - self.dropped
    }
}

/// Mutable state of one emulated bottleneck.
#[derive(Debug, Clone)]
pub struct LinkState {
    profile: NetworkProfile,
    now_ms: u64,
    queue: VecDeque<PacketRecord>,
    /// Bytes waiting, counting only the unsent part of the head packet.
    queued_bytes: f64,
    head_remaining: f64,
    loss: LossChain,
    stats: LinkStats,
}

impl LinkState {
    pub fn new(profile: NetworkProfile, seed: u64) -> Self {
        Self {
            profile,
            now_ms: 0,
            queue: VecDeque::new(),
            queued_bytes: 0.0,
            head_remaining: 0.0,
            loss: LossChain::new(seed),
            stats: LinkStats::default(),
        }
    }

    pub fn now_ms(&self) -> u64 {
        self.now_ms
    }

    pub fn profile(&self) -> &NetworkProfile {
        &self.profile
    }

    pub fn stats(&self) -> LinkStats {
        self.stats
    }

    pub fn queued_bytes(&self) -> f64 {
        self.queued_bytes
    }

    pub fn queue_len(&self) -> usize {
        self.queue.len()
    }

    /// Advances the link by one tick.
    ///
    /// `arrivals` are stamped with the current tick as their send time. The
    /// returned records have left the link during this tick: delivered ones
    /// carry a receive timestamp, lost or dropped ones carry `None`.
    pub fn step_link(&mut self, arrivals: Vec<PacketRecord>) -> Vec<PacketRecord> {
        let t = self.now_ms;
        let capacity = self.profile.capacity_at(t);
        let bytes_per_ms = capacity / 8_000.0;
        let limit = bytes_per_ms * self.profile.queue_capacity_ms;
        let mut out = Vec::new();

        for mut p in arrivals {
            p.send_ts_ms = t as f64;
            p.recv_ts_ms = None;
            self.stats.sent += 1;
            self.stats.sent_bytes += p.size_bytes as u64;
            let size = p.size_bytes as f64;
            if self.queued_bytes + size > limit {
                self.stats.dropped += 1;
                self.stats.dropped_bytes += p.size_bytes as u64;
                out.push(p);
                continue;
            }
            if self.queue.is_empty() {
                self.head_remaining = size;
            }
            self.queued_bytes += size;
            self.queue.push_back(p);
        }

        let mut cursor = t as f64;
        let tick_end = (t + TICK_MS) as f64;
        while let Some(head) = self.queue.front() {
            let need = self.head_remaining / bytes_per_ms;
            if cursor + need <= tick_end {
                cursor += need;
                self.queued_bytes -= self.head_remaining;
                let mut p = *head;
                self.queue.pop_front();
                if let Some(next) = self.queue.front() {
                    self.head_remaining = next.size_bytes as f64;
                } else {
                    self.head_remaining = 0.0;
                    self.queued_bytes = 0.0;
                }
                if sample_loss(&self.profile.loss_model, &mut self.loss) {
                    self.stats.lost += 1;
                } else {
                    p.recv_ts_ms = Some(cursor + self.profile.base_delay_ms);
                    self.stats.delivered += 1;
                }
                out.push(p);
            } else {
                let sent = (tick_end - cursor) * bytes_per_ms;
                self.head_remaining -= sent;
                self.queued_bytes -= sent;
                break;
            }
        }
        self.now_ms += TICK_MS;
        out
    }
}
