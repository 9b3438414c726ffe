//! Offline dataset: collection with the behavior policy, NDJSON storage and
//! validated loading.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::behavior::BehaviorConfig;
use crate::emulator::NetworkProfile;
use crate::qoe::{MOS_MAX, MOS_MIN};
use crate::session::{ActionMap, Normalization, OBS_DIM};
use crate::sim::{derive_seed, run_call, BehaviorPolicy, CallConfig, CallTrace};

pub const SCHEMA: &str = "bwe-lab/dataset/v1";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {msg}")]
    Invalid { path: PathBuf, line: usize, msg: String },
    #[error("dataset header disagrees with config: {0}")]
    HeaderMismatch(String),
    #[error("calls_per_profile must be at least 1")]
    NoCalls,
    #[error("no profiles given")]
    NoProfiles,
}

/// First line of every dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub schema: String,
    pub obs_dim: usize,
    pub b_min: f64,
    pub b_max: f64,
    pub alpha: f64,
    pub normalization: Normalization,
    pub reward_window_ms: f64,
    pub seed: u64,
    pub profiles: Vec<String>,
    pub calls_per_profile: usize,
}

impl DatasetHeader {
    pub fn action_map(&self) -> ActionMap {
        ActionMap { b_min: self.b_min, b_max: self.b_max }
    }

    /// Checks the fields the learner and evaluator depend on.
    pub fn check_against(&self, call: &CallConfig) -> Result<(), DatasetError> {
        let mut bad = Vec::new();
        if self.schema != SCHEMA {
            bad.push(format!("schema {}", self.schema));
        }
        if self.obs_dim != OBS_DIM {
            bad.push(format!("obs_dim {}", self.obs_dim));
        }
        if self.b_min != call.action_map.b_min || self.b_max != call.action_map.b_max {
            bad.push(format!(
                "bitrate range [{}, {}] vs [{}, {}]",
                self.b_min, self.b_max, call.action_map.b_min, call.action_map.b_max
            ));
        }
        if self.alpha != call.reward.alpha {
            bad.push(format!("alpha {} vs {}", self.alpha, call.reward.alpha));
        }
        if self.normalization != call.normalization {
            bad.push("normalization constants".into());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(DatasetError::HeaderMismatch(bad.join("; ")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub call_id: String,
    pub t: usize,
    pub obs: Vec<f64>,
    pub action: f64,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub done: bool,
}

impl Transition {
    fn check(&self) -> Result<(), String> {
        if self.obs.len() != OBS_DIM {
            return Err(format!("obs has length {}, expected {OBS_DIM}", self.obs.len()));
        }
        if self.next_obs.len() != OBS_DIM {
            return Err(format!("next_obs has length {}, expected {OBS_DIM}", self.next_obs.len()));
        }
        if let Some(v) = self.obs.iter().chain(&self.next_obs).find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(format!("observation value {v} outside [0, 1]"));
        }
        if !(MOS_MIN..=MOS_MAX).contains(&self.reward) {
            return Err(format!("reward {} outside [1, 5]", self.reward));
        }
        if !(-1.0..=1.0).contains(&self.action) {
            return Err(format!("action {} outside [-1, 1]", self.action));
        }
        Ok(())
    }
}

/// A call's contiguous span of transitions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CallSpan {
    pub call_id: String,
    pub start: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub transitions: Vec<Transition>,
    pub calls: Vec<CallSpan>,
    /// For each transition, the index of its call in `calls`.
    pub call_of: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    /// Builds the per-call index and checks every invariant.
    pub fn from_parts(header: DatasetHeader, transitions: Vec<Transition>) -> Result<Self, (usize, String)> {
        let mut calls: Vec<CallSpan> = Vec::new();
        let mut call_of = Vec::with_capacity(transitions.len());
        for (i, tr) in transitions.iter().enumerate() {
            tr.check().map_err(|m| (i, m))?;
            let same = calls.last().is_some_and(|c| c.call_id == tr.call_id);
            if same {
                let prev = &transitions[i - 1];
                if prev.done {
                    return Err((i, format!("call {} continues after done", tr.call_id)));
                }
                if tr.t != prev.t + 1 {
                    return Err((i, format!("step {} follows step {} in call {}", tr.t, prev.t, tr.call_id)));
                }
                if prev.next_obs != tr.obs {
                    return Err((i, format!("obs of step {} differs from previous next_obs", tr.t)));
                }
                calls.last_mut().expect("open call").len += 1;
            } else {
                if let Some(prev) = i.checked_sub(1).map(|j| &transitions[j]) {
                    if !prev.done {
                        return Err((i - 1, format!("call {} ends without done", prev.call_id)));
                    }
                }
                if calls.iter().any(|c| c.call_id == tr.call_id) {
                    return Err((i, format!("call {} is not contiguous", tr.call_id)));
                }
                if tr.t != 0 {
                    return Err((i, format!("call {} starts at step {}", tr.call_id, tr.t)));
                }
                calls.push(CallSpan { call_id: tr.call_id.clone(), start: i, len: 1 });
            }
            call_of.push(calls.len() - 1);
        }
        if let Some(last) = transitions.last() {
            if !last.done {
                return Err((transitions.len() - 1, format!("call {} ends without done", last.call_id)));
            }
        }
        Ok(Self { header, transitions, calls, call_of })
    }

    /// Index of the transition `back` steps before `i` in the same call.
    pub fn history(&self, i: usize, back: usize) -> Option<usize> {
        let span = &self.calls[self.call_of[i]];
        (i >= span.start + back).then(|| i - back)
    }

    pub fn action_variance(&self) -> f64 {
        let n = self.len() as f64;
        let mean = self.transitions.iter().map(|t| t.action).sum::<f64>() / n;
        self.transitions.iter().map(|t| (t.action - mean).powi(2)).sum::<f64>() / n
    }

    /// Largest minus smallest undiscounted per-call return.
    pub fn return_spread(&self) -> f64 {
        let sums = self.calls.iter().map(|c| {
            self.transitions[c.start..c.start + c.len].iter().map(|t| t.reward).sum::<f64>()
        });
        let (lo, hi) = sums.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
        if hi >= lo { hi - lo } else { 0.0 }
    }

    pub fn mean_reward(&self) -> f64 {
        self.transitions.iter().map(|t| t.reward).sum::<f64>() / self.len().max(1) as f64
    }
}

/// Converts one simulated call into transitions.
pub fn trace_to_transitions(call_id: &str, trace: &CallTrace, map: &ActionMap) -> Vec<Transition> {
    let steps = &trace.steps;
    let n = steps.len().saturating_sub(1);
    (0..n)
        .map(|k| {
            let bps = steps[k].target_bps.expect("action at every non-final instant");
            Transition {
                call_id: call_id.to_string(),
                t: k,
                obs: steps[k].obs.values().to_vec(),
                action: map.bps_to_action(bps),
                reward: steps[k + 1].reward,
                next_obs: steps[k + 1].obs.values().to_vec(),
                done: k + 1 == n,
            }
        })
        .collect()
}

pub fn call_id(profile: &str, index: usize) -> String {
    format!("{profile}#{index:03}")
}

/// Runs `calls_per_profile` behavior calls per profile.
///
/// Calls run in parallel; the result is ordered by profile then call index.
pub fn collect(
    profiles: &[NetworkProfile],
    calls_per_profile: usize,
    seed: u64,
    call: &CallConfig,
    behavior: &BehaviorConfig,
) -> Result<Dataset, DatasetError> {
    if calls_per_profile == 0 {
        return Err(DatasetError::NoCalls);
    }
    if profiles.is_empty() {
        return Err(DatasetError::NoProfiles);
    }
    let jobs: Vec<(String, &NetworkProfile)> = profiles
        .iter()
        .flat_map(|p| (0..calls_per_profile).map(move |i| (call_id(&p.name, i), p)))
        .collect();
    let per_call: Vec<Vec<Transition>> = jobs
        .par_iter()
        .map(|(id, p)| {
            let mut policy = BehaviorPolicy::new(*behavior, call.action_map);
            let trace = run_call(p, &mut policy, derive_seed(seed, id), call, false);
            trace_to_transitions(id, &trace, &call.action_map)
        })
        .collect();
    let header = DatasetHeader {
        schema: SCHEMA.into(),
        obs_dim: OBS_DIM,
        b_min: call.action_map.b_min,
        b_max: call.action_map.b_max,
        alpha: call.reward.alpha,
        normalization: call.normalization,
        reward_window_ms: call.reward.window_ms,
        seed,
        profiles: profiles.iter().map(|p| p.name.clone()).collect(),
        calls_per_profile,
    };
    let transitions = per_call.into_iter().flatten().collect();
    Dataset::from_parts(header, transitions).map_err(|(line, msg)| DatasetError::Invalid {
        path: PathBuf::from("<collect>"),
        line: line + 2,
        msg,
    })
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io { path: path.to_path_buf(), source }
}

pub fn write_dataset(ds: &Dataset, path: &Path) -> Result<(), DatasetError> {
    let f = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(f);
    let header = serde_json::to_string(&ds.header).expect("header serializes");
    writeln!(w, "{header}").map_err(io_err(path))?;
    for tr in &ds.transitions {
        let line = serde_json::to_string(tr).expect("transition serializes");
        writeln!(w, "{line}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Reads and validates a dataset file. Line numbers in errors are 1-based.
pub fn load_dataset(path: &Path) -> Result<Dataset, DatasetError> {
    let f = File::open(path).map_err(io_err(path))?;
    let reader = BufReader::new(f);
    let invalid = |line: usize, msg: String| DatasetError::Invalid { path: path.to_path_buf(), line, msg };
    let mut header: Option<DatasetHeader> = None;
    let mut transitions = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        let lineno = i + 1;
        if header.is_none() {
            let h: DatasetHeader =
                serde_json::from_str(&line).map_err(|e| invalid(lineno, format!("bad header: {e}")))?;
            if h.schema != SCHEMA {
                return Err(invalid(lineno, format!("unsupported schema {}", h.schema)));
            }
            if h.obs_dim != OBS_DIM {
                return Err(invalid(lineno, format!("obs_dim {} unsupported", h.obs_dim)));
            }
            header = Some(h);
            continue;
        }
        if line.trim().is_empty() {
            return Err(invalid(lineno, "empty line".into()));
        }
        let tr: Transition = serde_json::from_str(&line).map_err(|e| invalid(lineno, e.to_string()))?;
        transitions.push(tr);
    }
    let header = header.ok_or_else(|| invalid(1, "missing header".into()))?;
    Dataset::from_parts(header, transitions).map_err(|(idx, msg)| invalid(idx + 2, msg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::emulator::{builtin_profiles, find_profile};

    fn short(name: &str, ms: u64) -> NetworkProfile {
        let mut p = find_profile(&builtin_profiles(), name).unwrap().clone();
        p.duration_ms = ms;
        p
    }

    fn small() -> Dataset {
        let ps = [short("fb_1m", 10_000), short("bl_1m_10", 10_000)];
        collect(&ps, 2, 7, &CallConfig::default(), &BehaviorConfig::default()).unwrap()
    }

    #[test]
    fn sixty_second_call_gives_999_transitions() {
        let ds = collect(&[short("fb_2m", 60_000)], 1, 1, &CallConfig::default(), &BehaviorConfig::default()).unwrap();
        assert_eq!(ds.len(), 999);
        assert!(ds.transitions[998].done);
        assert_eq!(ds.transitions.iter().filter(|t| t.done).count(), 1);
    }

    #[test]
    fn chained_observations() {
        let ds = small();
        assert_eq!(ds.calls.len(), 4);
        for w in ds.transitions.windows(2) {
            if w[0].call_id == w[1].call_id {
                assert_eq!(w[0].next_obs, w[1].obs);
            }
        }
        assert!(ds.action_variance() > 0.0);
    }

    #[test]
    fn round_trip_is_exact() {
        let ds = small();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.ndjson");
        write_dataset(&ds, &p).unwrap();
        let back = load_dataset(&p).unwrap();
        assert_eq!(back, ds);
        let p2 = dir.path().join("e.ndjson");
        write_dataset(&small(), &p2).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn truncated_line_is_reported() {
        let ds = small();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.ndjson");
        write_dataset(&ds, &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let cut = &text[..text.len() - 40];
        std::fs::write(&p, cut).unwrap();
        let err = load_dataset(&p).unwrap_err().to_string();
        let expect = format!(":{}:", ds.len() + 1);
        assert!(err.contains(&expect), "{err}");
    }

    #[test]
    fn short_observation_is_rejected() {
        let mut ds = small();
        ds.transitions[3].obs.pop();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.ndjson");
        write_dataset(&ds, &p).unwrap();
        let err = load_dataset(&p).unwrap_err().to_string();
        assert!(err.contains(":5:") && err.contains("length 53"), "{err}");
    }

    #[test]
    fn header_must_match_config() {
        let ds = small();
        let mut cfg = CallConfig::default();
        assert!(ds.header.check_against(&cfg).is_ok());
        cfg.reward.alpha = 0.3;
        assert!(matches!(ds.header.check_against(&cfg), Err(DatasetError::HeaderMismatch(_))));
    }
}
