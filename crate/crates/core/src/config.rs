//! Single TOML configuration for every pipeline stage.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::behavior::BehaviorConfig;
use crate::emulator::{builtin_profiles, find_profile, load_profiles, NetworkProfile, ProfileError};
use crate::learner::TrainConfig;
use crate::qoe::RewardConfig;
use crate::session::{ActionMap, Normalization};
use crate::sim::CallConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Profile(#[from] ProfileError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollectSection {
    /// Built-in profile names; empty means all of them.
    pub profiles: Vec<String>,
    /// Extra profile definitions (JSON stream) to draw from.
    pub profile_file: Option<PathBuf>,
    pub calls_per_profile: usize,
}

impl Default for CollectSection {
    fn default() -> Self {
        Self { profiles: Vec::new(), profile_file: None, calls_per_profile: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub calls: usize,
    /// Exit nonzero when a method's smallest per-profile gain is below this.
    pub min_gain_floor: f64,
    /// Sample actions from the policy instead of taking the mixture mean.
    pub stochastic: bool,
    /// Online candidates per trained run (lowest offline MSE first).
    pub top_k: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { calls: 15, min_gain_floor: -0.05, stochastic: false, top_k: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabConfig {
    pub seed: u64,
    pub b_min: f64,
    pub b_max: f64,
    pub initial_bps: f64,
    pub reward: RewardConfig,
    pub behavior: BehaviorConfig,
    pub train: TrainConfig,
    pub collect: CollectSection,
    pub eval: EvalSection,
}

impl Default for LabConfig {
    fn default() -> Self {
        let map = ActionMap::default();
        let behavior = BehaviorConfig::default();
        Self {
            seed: 0,
            b_min: map.b_min,
            b_max: map.b_max,
            initial_bps: behavior.initial_bps,
            reward: RewardConfig::default(),
            behavior,
            train: TrainConfig::default(),
            collect: CollectSection::default(),
            eval: EvalSection::default(),
        }
    }
}

impl LabConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        let cfg: LabConfig = toml::from_str(&text).map_err(|source| ConfigError::Parse { path: path.into(), source })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.b_min > 0.0 && self.b_min < self.b_max) {
            return Err(ConfigError::Invalid(format!("need 0 < b_min < b_max, got {} and {}", self.b_min, self.b_max)));
        }
        self.reward.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.eval.calls == 0 || self.eval.top_k == 0 {
            return Err(ConfigError::Invalid("eval.calls and eval.top_k must be positive".into()));
        }
        Ok(())
    }

    pub fn action_map(&self) -> ActionMap {
        ActionMap { b_min: self.b_min, b_max: self.b_max }
    }

    pub fn call_config(&self) -> CallConfig {
        let map = self.action_map();
        CallConfig {
            action_map: map,
            normalization: Normalization::for_action_map(&map),
            reward: self.reward,
            initial_bps: self.initial_bps,
        }
    }

    /// Training settings with the root seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: self.seed, ..self.train.clone() }
    }

    /// Built-in profiles plus any from `collect.profile_file`, filtered by
    /// name. An empty filter keeps them all.
    pub fn resolve_profiles(&self, names: &[String]) -> Result<Vec<NetworkProfile>, ConfigError> {
        let mut all = builtin_profiles();
        if let Some(path) = &self.collect.profile_file {
            all.extend(load_profiles(path)?);
        }
        if names.is_empty() {
            return Ok(all);
        }
        names.iter().map(|n| Ok(find_profile(&all, n)?.clone())).collect()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_fills_defaults() {
        let cfg: LabConfig = toml::from_str("seed = 4\n[train]\nepochs = 7\nmethod = \"bc\"\n").unwrap();
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.train.epochs, 7);
        assert_eq!(cfg.train.tau, 0.7);
        assert_eq!(cfg.call_config(), CallConfig::default());
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = LabConfig::default();
        let back: LabConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn profile_filter_keeps_requested_order() {
        let cfg = LabConfig::default();
        let ps = cfg.resolve_profiles(&["FB 1M".into(), "fb_8m".into()]).unwrap();
        let names: Vec<&str> = ps.iter().map(|p| p.name.as_str()).collect();
        assert_eq!(names, ["fb_1m", "fb_8m"]);
        assert!(cfg.resolve_profiles(&["nope".into()]).is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<LabConfig>("sede = 4\n").is_err());
    }
}
