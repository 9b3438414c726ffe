//! A trained actor driving a call.

use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{build_actor_input, ActorKind, Checkpoint, MixtureNetwork};
use crate::mixture::gm_sample;
use crate::session::{ActionMap, Observation, OBS_DIM};
use crate::sim::{derive_seed, RatePolicy};

#[derive(Debug, Clone)]
pub struct ActorPolicy {
    net: MixtureNetwork,
    params: Vec<f64>,
    kind: ActorKind,
    len: usize,
    map: ActionMap,
    history: VecDeque<Vec<f64>>,
    stochastic: bool,
    rng: ChaCha8Rng,
}

impl ActorPolicy {
    pub fn from_checkpoint(ck: &Checkpoint, stochastic: bool) -> Self {
        Self {
            net: MixtureNetwork::new(ck.meta.actor.clone()),
            params: ck.params.actor.clone(),
            kind: ck.meta.train.actor,
            len: ck.meta.train.history_len(),
            map: ck.meta.call.action_map,
            history: VecDeque::new(),
            stochastic,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    pub fn clear(&mut self) {
        self.history.clear();
    }

    /// Normalized action for the newest normalized observation.
    pub fn act(&mut self, normalized: &[f64]) -> f64 {
        assert_eq!(normalized.len(), OBS_DIM);
        self.history.push_front(normalized.to_vec());
        self.history.truncate(self.len);
        let hist: Vec<Option<&[f64]>> = (0..self.len).map(|k| self.history.get(k).map(|v| v.as_slice())).collect();
        let out = self.net.predict(&self.params, build_actor_input(self.kind, self.len, &[hist]));
        let a = if self.stochastic {
            gm_sample(&out.mixture(0), &mut self.rng)
        } else {
            out.row_mean(0)
        };
        a.clamp(-1.0, 1.0)
    }
}

impl RatePolicy for ActorPolicy {
    fn reset(&mut self, call_seed: u64) {
        self.history.clear();
        self.rng = ChaCha8Rng::seed_from_u64(derive_seed(call_seed, "actor"));
    }

    fn decide(&mut self, _raw: &Observation, normalized: &Observation) -> f64 {
        let a = self.act(normalized.values());
        self.map.action_to_bps(a)
    }
}
