//! Online evaluation: run policies through emulated calls and compare their
//! QoE per profile against the behavior baseline.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::behavior::BehaviorConfig;
use crate::emulator::NetworkProfile;
use crate::learner::{ActorPolicy, Checkpoint};
use crate::sim::{derive_seed, run_call, BehaviorPolicy, CallConfig, ConstantPolicy, RatePolicy};

pub const BASELINE: &str = "behavior";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("checkpoint for {name} was trained with a different call config ({what})")]
    ConfigMismatch { name: String, what: String },
    #[error("no results for the baseline method {0:?}")]
    MissingBaseline(String),
    #[error("method {method} has no results for profile {profile}")]
    MissingProfile { method: String, profile: String },
    #[error("need at least two methods to compare")]
    TooFewMethods,
    #[error("no candidate checkpoints for {0}")]
    NoCandidates(String),
}

/// A policy to evaluate, by construction recipe.
#[derive(Debug, Clone)]
pub enum PolicySpec {
    /// Rule-based estimator with exploration jitter off.
    Behavior(BehaviorConfig),
    /// Trained actor, deterministic mean action unless `stochastic`.
    Actor { checkpoint: Box<Checkpoint>, stochastic: bool },
    Constant { bps: f64 },
}

impl PolicySpec {
    fn build(&self, call: &CallConfig) -> Box<dyn RatePolicy> {
        match self {
            PolicySpec::Behavior(cfg) => Box::new(BehaviorPolicy::new(cfg.without_jitter(), call.action_map)),
            PolicySpec::Actor { checkpoint, stochastic } => {
                Box::new(ActorPolicy::from_checkpoint(checkpoint, *stochastic))
            }
            PolicySpec::Constant { bps } => Box::new(ConstantPolicy { bps: *bps }),
        }
    }

    fn check(&self, name: &str, call: &CallConfig) -> Result<(), EvalError> {
        if let PolicySpec::Actor { checkpoint, .. } = self {
            let c = &checkpoint.meta.call;
            let what = if c.action_map != call.action_map {
                "bitrate range"
            } else if c.normalization != call.normalization {
                "normalization"
            } else if c.reward != call.reward {
                "reward"
            } else {
                return Ok(());
            };
            return Err(EvalError::ConfigMismatch { name: name.into(), what: what.into() });
        }
        Ok(())
    }
}

/// Per-call outcomes of one method on one profile, in call-index order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRuns {
    pub profile: String,
    pub qoe: Vec<f64>,
    pub mean_bps: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRuns {
    pub method: String,
    pub profiles: Vec<ProfileRuns>,
}

/// Raw evaluation values; the report is derived from these alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawResults {
    pub seed: u64,
    pub calls: usize,
    pub methods: Vec<MethodRuns>,
}

pub fn eval_call_seed(seed: u64, profile: &str, index: usize) -> u64 {
    derive_seed(seed, &format!("eval/{profile}#{index:03}"))
}

/// Runs `calls` calls of one policy on one profile. Call `i` uses the same
/// link seed for every policy, so methods face identical loss patterns.
pub fn run_policy(
    spec: &PolicySpec,
    profile: &NetworkProfile,
    calls: usize,
    seed: u64,
    call: &CallConfig,
) -> ProfileRuns {
    let out: Vec<(f64, f64)> = (0..calls)
        .into_par_iter()
        .map(|i| {
            let mut policy = spec.build(call);
            let trace = run_call(profile, policy.as_mut(), eval_call_seed(seed, &profile.name, i), call, false);
            (trace.mean_reward(), trace.mean_target_bps())
        })
        .collect();
    ProfileRuns {
        profile: profile.name.clone(),
        qoe: out.iter().map(|x| x.0).collect(),
        mean_bps: out.iter().map(|x| x.1).collect(),
    }
}

/// Evaluates every named method on every profile.
pub fn evaluate(
    methods: &[(String, PolicySpec)],
    profiles: &[NetworkProfile],
    calls: usize,
    seed: u64,
    call: &CallConfig,
) -> Result<RawResults, EvalError> {
    for (name, spec) in methods {
        spec.check(name, call)?;
    }
    let methods = methods
        .iter()
        .map(|(name, spec)| {
            log::info!("evaluating {name}");
            MethodRuns {
                method: name.clone(),
                profiles: profiles.iter().map(|p| run_policy(spec, p, calls, seed, call)).collect(),
            }
        })
        .collect();
    Ok(RawResults { seed, calls, methods })
}

/// Online score of one candidate checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub epoch: usize,
    pub offline_mse: f64,
    /// Mean over profiles of the per-profile mean QoE.
    pub mean_qoe: f64,
}

/// Evaluates every candidate and keeps the one with the highest mean QoE,
/// the earliest candidate winning ties. Returns the winner's index, its
/// runs filed under `name`, and the score of every candidate.
pub fn best_online(
    name: &str,
    candidates: &[Checkpoint],
    stochastic: bool,
    profiles: &[NetworkProfile],
    calls: usize,
    seed: u64,
    call: &CallConfig,
) -> Result<(usize, MethodRuns, Vec<CandidateScore>), EvalError> {
    if candidates.is_empty() {
        return Err(EvalError::NoCandidates(name.into()));
    }
    let mut best: Option<(usize, MethodRuns)> = None;
    let mut scores = Vec::new();
    for (k, ck) in candidates.iter().enumerate() {
        let spec = PolicySpec::Actor { checkpoint: Box::new(ck.clone()), stochastic };
        let label = format!("{name}@{}", ck.meta.epoch);
        let raw = evaluate(&[(label, spec)], profiles, calls, seed, call)?;
        let runs = raw.methods.into_iter().next().expect("one method");
        let q = mean(&runs.profiles.iter().map(|p| mean(&p.qoe)).collect::<Vec<_>>());
        scores.push(CandidateScore { epoch: ck.meta.epoch, offline_mse: ck.meta.offline_mse, mean_qoe: q });
        if best.as_ref().is_none_or(|(b, _)| q > scores[*b].mean_qoe) {
            best = Some((k, runs));
        }
    }
    let (k, mut runs) = best.expect("non-empty");
    runs.method = name.into();
    Ok((k, runs, scores))
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1 denominator); zero for a single value.
pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub profile: String,
    pub calls: usize,
    pub mean_qoe: f64,
    pub std_qoe: f64,
    pub mean_bps: f64,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub mean_qoe: f64,
    pub avg_gain: f64,
    pub min_gain: f64,
    pub min_gain_profile: String,
    /// Profiles where the method's mean QoE is at least the baseline's.
    pub profiles_not_worse: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub baseline: String,
    pub profiles: Vec<String>,
    pub rows: Vec<ReportRow>,
    pub summary: Vec<MethodSummary>,
}

impl Report {
    pub fn row(&self, method: &str, profile: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.method == method && r.profile == profile)
    }

    pub fn summary_for(&self, method: &str) -> Option<&MethodSummary> {
        self.summary.iter().find(|s| s.method == method)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("# std is the per-call sample standard deviation (n-1)\n");
        s.push_str("method,profile,calls,mean_qoe,std_qoe,mean_bps,gain\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{:.6},{:.6},{:.1},{:.6}",
                r.method, r.profile, r.calls, r.mean_qoe, r.std_qoe, r.mean_bps, r.gain
            );
        }
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let width = self.profiles.iter().map(|p| p.len()).max().unwrap_or(7).max(7);
        let _ = write!(s, "{:<width$}", "profile");
        for m in &self.summary {
            let _ = write!(s, "  {:>18}", m.method);
        }
        s.push('\n');
        for p in &self.profiles {
            let _ = write!(s, "{p:<width$}");
            for m in &self.summary {
                let r = self.row(&m.method, p).expect("complete table");
                let _ = write!(s, "  {:>9.3} ± {:<6.3}", r.mean_qoe, r.std_qoe);
            }
            s.push('\n');
        }
        let _ = writeln!(s, "\nmean QoE ± sample std (n-1) over calls; gains relative to {}", self.baseline);
        for m in &self.summary {
            let _ = writeln!(
                s,
                "{:<10} mean {:.3}  avg gain {:+.4}  min gain {:+.4} ({})  not worse on {}/{}",
                m.method,
                m.mean_qoe,
                m.avg_gain,
                m.min_gain,
                m.min_gain_profile,
                m.profiles_not_worse,
                self.profiles.len()
            );
        }
        s
    }

    /// Methods whose minimum per-profile gain is below `floor`.
    pub fn regressions(&self, floor: f64) -> Vec<&MethodSummary> {
        self.summary
            .iter()
            .filter(|m| m.method != self.baseline && m.min_gain < floor)
            .collect()
    }
}

/// Builds the comparison table from raw per-call values.
pub fn compare_results(raw: &RawResults, baseline: &str) -> Result<Report, EvalError> {
    if raw.methods.len() < 2 {
        return Err(EvalError::TooFewMethods);
    }
    let base = raw
        .methods
        .iter()
        .find(|m| m.method == baseline)
        .ok_or_else(|| EvalError::MissingBaseline(baseline.into()))?;
    let profiles: Vec<String> = base.profiles.iter().map(|p| p.profile.clone()).collect();
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for m in &raw.methods {
        let mut gains = Vec::new();
        let mut means = Vec::new();
        for (p, bp) in profiles.iter().zip(&base.profiles) {
            let runs = m
                .profiles
                .iter()
                .find(|r| &r.profile == p)
                .ok_or_else(|| EvalError::MissingProfile { method: m.method.clone(), profile: p.clone() })?;
            let mq = mean(&runs.qoe);
            let gain = mq - mean(&bp.qoe);
            gains.push((gain, p.clone()));
            means.push(mq);
            rows.push(ReportRow {
                method: m.method.clone(),
                profile: p.clone(),
                calls: runs.qoe.len(),
                mean_qoe: mq,
                std_qoe: sample_std(&runs.qoe),
                mean_bps: mean(&runs.mean_bps),
                gain,
            });
        }
        let (min_gain, min_p) = gains
            .iter()
            .fold((f64::INFINITY, String::new()), |acc, (g, p)| if *g < acc.0 { (*g, p.clone()) } else { acc });
        summary.push(MethodSummary {
            method: m.method.clone(),
            mean_qoe: mean(&means),
            avg_gain: gains.iter().map(|g| g.0).sum::<f64>() / gains.len() as f64,
            min_gain,
            min_gain_profile: min_p,
            profiles_not_worse: gains.iter().filter(|g| g.0 >= 0.0).count(),
        });
    }
    Ok(Report { baseline: baseline.into(), profiles, rows, summary })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::emulator::{builtin_profiles, find_profile};
    use crate::qoe::{audio_mos, video_mos, MediaWindowStats};
    use crate::session::{
        AUDIO_BPS, AUDIO_INTERVAL_MS, AUDIO_PACKET_BYTES, PROBE_PACKETS, PROBE_PACKET_BYTES, PROBE_PERIOD_MS,
        VIDEO_PACKET_BYTES,
    };

    fn profile(name: &str) -> NetworkProfile {
        find_profile(&builtin_profiles(), name).unwrap().clone()
    }

    #[test]
    fn constant_at_capacity_matches_closed_form() {
        let p = profile("fb_1m");
        let cap = 1e6;
        let call = CallConfig::default();
        // offered load (media plus the probe average) equals capacity
        let probe_bps = (PROBE_PACKETS * PROBE_PACKET_BYTES) as f64 * 8.0 / (PROBE_PERIOD_MS as f64 / 1000.0);
        let target = cap - probe_bps;
        let runs = run_policy(&PolicySpec::Constant { bps: target }, &p, 2, 3, &call);
        // the saturated link delivers back to back, so each inter-arrival gap
        // is the serialization time of the arriving packet
        let ser = |bytes: u32| bytes as f64 * 8.0 / cap * 1000.0;
        let n_audio = 1000.0 / AUDIO_INTERVAL_MS as f64;
        let n_big = (target - AUDIO_BPS) / (VIDEO_PACKET_BYTES as f64 * 8.0) + probe_bps / (PROBE_PACKET_BYTES as f64 * 8.0);
        let n = n_audio + n_big;
        let m = (n_audio * ser(AUDIO_PACKET_BYTES) + n_big * ser(VIDEO_PACKET_BYTES)) / n;
        let var = (n_audio * (ser(AUDIO_PACKET_BYTES) - m).powi(2) + n_big * (ser(VIDEO_PACKET_BYTES) - m).powi(2)) / n;
        let s = MediaWindowStats {
            audio_rate_bps: AUDIO_BPS,
            video_rate_bps: target - AUDIO_BPS,
            loss_ratio: 0.0,
            jitter_ms: var.sqrt(),
            // probe residue keeps the queue far below the delay knee
            one_way_delay_ms: p.base_delay_ms,
        };
        let k = &call.reward.surrogate;
        assert!(p.base_delay_ms + 60.0 < k.video_delay_free_ms);
        let oracle = 0.5 * audio_mos(&s, k) + 0.5 * video_mos(&s, k);
        for q in runs.qoe {
            assert!((q - oracle).abs() / oracle < 0.02, "{q} vs {oracle}");
        }
    }

    #[test]
    fn overload_is_punished() {
        let runs = run_policy(&PolicySpec::Constant { bps: 8e6 }, &profile("fb_100k"), 2, 1, &CallConfig::default());
        assert!(runs.qoe.iter().all(|q| *q < 2.0), "{:?}", runs.qoe);
    }

    #[test]
    fn runs_are_repeatable() {
        let spec = PolicySpec::Behavior(BehaviorConfig::default());
        let p = profile("bl_1m_10");
        let call = CallConfig::default();
        assert_eq!(run_policy(&spec, &p, 3, 5, &call), run_policy(&spec, &p, 3, 5, &call));
    }

    fn raw(values: &[(&str, &[&[f64]])]) -> RawResults {
        RawResults {
            seed: 0,
            calls: 0,
            methods: values
                .iter()
                .map(|(m, ps)| MethodRuns {
                    method: m.to_string(),
                    profiles: ps
                        .iter()
                        .enumerate()
                        .map(|(i, q)| ProfileRuns { profile: format!("p{i}"), qoe: q.to_vec(), mean_bps: vec![1.0; q.len()] })
                        .collect(),
                })
                .collect(),
        }
    }

    #[test]
    fn self_comparison_has_zero_gain() {
        let r = raw(&[("behavior", &[&[3.0, 3.5], &[2.0, 2.2]]), ("copy", &[&[3.0, 3.5], &[2.0, 2.2]])]);
        let rep = compare_results(&r, BASELINE).unwrap();
        assert!(rep.rows.iter().all(|r| r.gain == 0.0));
        assert!(rep.regressions(0.0).is_empty());
    }

    #[test]
    fn injected_gain_is_reported() {
        let r = raw(&[("behavior", &[&[3.0, 3.5], &[2.0, 2.2]]), ("plus", &[&[3.1, 3.6], &[2.1, 2.3]])]);
        let rep = compare_results(&r, BASELINE).unwrap();
        let s = rep.summary_for("plus").unwrap();
        assert!((s.avg_gain - 0.1).abs() < 1e-12);
        assert_eq!(s.profiles_not_worse, 2);
    }

    #[test]
    fn table_matches_recomputation() {
        let vals: &[&[f64]] = &[&[3.0, 3.4, 2.9], &[1.5, 1.9, 1.6]];
        let other: &[&[f64]] = &[&[3.3, 3.1, 3.0], &[1.2, 1.4, 1.9]];
        let rep = compare_results(&raw(&[("behavior", vals), ("x", other)]), BASELINE).unwrap();
        let order: Vec<(&str, &str)> = rep.rows.iter().map(|r| (r.method.as_str(), r.profile.as_str())).collect();
        assert_eq!(order, vec![("behavior", "p0"), ("behavior", "p1"), ("x", "p0"), ("x", "p1")]);
        let r = rep.row("x", "p1").unwrap();
        let m = (1.2 + 1.4 + 1.9) / 3.0;
        let sd = (((1.2f64 - m).powi(2) + (1.4f64 - m).powi(2) + (1.9f64 - m).powi(2)) / 2.0).sqrt();
        assert!((r.mean_qoe - m).abs() < 1e-12 && (r.std_qoe - sd).abs() < 1e-12);
        assert!((r.gain - (m - (1.5 + 1.9 + 1.6) / 3.0)).abs() < 1e-12);
        assert!(rep.to_csv().lines().count() == 2 + 4);
        assert!(rep.to_text().contains("min gain"));
    }

    #[test]
    fn needs_baseline_and_two_methods() {
        assert!(matches!(compare_results(&raw(&[("behavior", &[&[1.0]])]), BASELINE), Err(EvalError::TooFewMethods)));
        assert!(matches!(
            compare_results(&raw(&[("a", &[&[1.0]]), ("b", &[&[1.0]])]), BASELINE),
            Err(EvalError::MissingBaseline(_))
        ));
    }
}
