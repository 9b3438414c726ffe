//! Offline training of mixture-head actor, twin critics and value network,
//! plus the behavior-cloning and scalar baselines.

pub mod checkpoint;
pub mod losses;
pub mod nn;
mod policy;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, DatasetError};
use crate::mixture::{bellman_target, min_mean_select, GaussianMixture};
use crate::session::OBS_DIM;
use crate::sim::{derive_seed, CallConfig};

pub use checkpoint::{select_checkpoints, Checkpoint, CheckpointMeta, ModelParams};
pub use losses::awr_weight;
pub use nn::{DropoutCtx, HeadSpec, MeanMode, MixtureBatch, MixtureNetwork, NetInput, NetworkSpec};
pub use policy::ActorPolicy;

#[derive(Debug, Error)]
pub enum LearnerError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("non-finite {what} in {network} at step {step}")]
    NonFinite { network: &'static str, what: &'static str, step: u64 },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io { path: std::path::PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Diql,
    Bc,
    Iql,
}

impl std::str::FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "diql" => Ok(Method::Diql),
            "bc" => Ok(Method::Bc),
            "iql" => Ok(Method::Iql),
            other => Err(format!("unknown method {other:?} (expected diql, bc or iql)")),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Diql => "diql",
            Method::Bc => "bc",
            Method::Iql => "iql",
        })
    }
}

/// How the actor sees observation history.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActorKind {
    /// Gated recurrent cell unrolled over `window_len` steps.
    Recurrent,
    /// Dense stack on the last `stack_len` observations concatenated.
    Stacked,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub method: Method,
    pub tau: f64,
    pub beta: f64,
    pub gamma: f64,
    pub components: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub window_len: usize,
    pub awr_clip: f64,
    pub eval_every: usize,
    pub seed: u64,
    pub actor: ActorKind,
    pub stack_len: usize,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub recurrent_width: usize,
    pub dropout: f64,
    pub top_k: usize,
    /// Multiplier applied to rewards before any value learning. Unset, the
    /// trainer uses 1000 over the spread of per-call returns in the dataset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reward_scale: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            method: Method::Diql,
            tau: 0.7,
            beta: 3.0,
            gamma: 0.99,
            components: 3,
            lr: 3e-5,
            batch_size: 256,
            epochs: 300,
            window_len: 16,
            awr_clip: 100.0,
            eval_every: 5,
            seed: 0,
            actor: ActorKind::Recurrent,
            stack_len: 4,
            hidden_layers: 5,
            hidden_width: 128,
            recurrent_width: 128,
            dropout: 0.05,
            top_k: 3,
            reward_scale: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), LearnerError> {
        let bad = |m: String| Err(LearnerError::Config(m));
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return bad(format!("tau {} must lie in (0, 1)", self.tau));
        }
        if !(self.beta > 0.0) {
            return bad(format!("beta {} must be positive", self.beta));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!("gamma {} must lie in [0, 1)", self.gamma));
        }
        if self.components == 0 {
            return bad("components must be at least 1".into());
        }
        if self.method == Method::Iql && self.components != 1 {
            return bad(format!(
                "scalar IQL needs components = 1, config has {}",
                self.components
            ));
        }
        if !(self.lr > 0.0) || self.batch_size == 0 || self.epochs == 0 || self.eval_every == 0 {
            return bad("lr, batch_size, epochs and eval_every must be positive".into());
        }
        if self.window_len == 0 || self.stack_len == 0 {
            return bad("window_len and stack_len must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} must lie in [0, 1)", self.dropout));
        }
        if !(self.awr_clip > 0.0) {
            return bad("awr_clip must be positive".into());
        }
        if !(self.reward_scale() > 0.0 && self.reward_scale().is_finite()) {
            return bad(format!("reward_scale {} must be positive", self.reward_scale()));
        }
        Ok(())
    }

    /// Observations the actor sees per decision.
    pub fn history_len(&self) -> usize {
        match self.actor {
            ActorKind::Recurrent => self.window_len,
            ActorKind::Stacked => self.stack_len,
        }
    }

    pub fn reward_scale(&self) -> f64 {
        self.reward_scale.unwrap_or(1.0)
    }

    fn return_head(&self, mean_reward: f64) -> HeadSpec {
        let scale = self.reward_scale() / (1.0 - self.gamma);
        HeadSpec {
            components: self.components,
            mean: MeanMode::Affine { scale, offset: mean_reward * scale },
            std_scale: scale,
            pinned_std: self.method == Method::Iql,
        }
    }

    /// Network shapes for actor, value and critic.
    pub fn network_specs(&self, mean_reward: f64) -> (NetworkSpec, NetworkSpec, NetworkSpec) {
        let dense = |input_dim, recurrent_width, head| NetworkSpec {
            input_dim,
            hidden_layers: self.hidden_layers,
            hidden_width: self.hidden_width,
            dropout: self.dropout,
            recurrent_width,
            head,
        };
        let actor_head = HeadSpec {
            components: self.components,
            mean: MeanMode::Tanh,
            std_scale: 1.0,
            pinned_std: false,
        };
        let actor = match self.actor {
            ActorKind::Recurrent => dense(OBS_DIM, Some(self.recurrent_width), actor_head),
            ActorKind::Stacked => dense(OBS_DIM * self.stack_len, None, actor_head),
        };
        let value = dense(OBS_DIM, None, self.return_head(mean_reward));
        let critic = dense(OBS_DIM + 1, None, self.return_head(mean_reward));
        (actor, value, critic)
    }
}

/// Actor input from per-sample histories (`hist[b][k]` is `k` steps back;
/// `None` before the call started, fed as zeros).
pub fn build_actor_input(kind: ActorKind, len: usize, hist: &[Vec<Option<&[f64]>>]) -> NetInput {
    let b = hist.len();
    match kind {
        ActorKind::Stacked => {
            let mut x = Array2::zeros((b, OBS_DIM * len));
            for (r, h) in hist.iter().enumerate() {
                for (k, o) in h.iter().take(len).enumerate() {
                    if let Some(o) = o {
                        for (j, v) in o.iter().enumerate() {
                            x[[r, k * OBS_DIM + j]] = *v;
                        }
                    }
                }
            }
            NetInput::Flat(x)
        }
        ActorKind::Recurrent => {
            let steps = (0..len)
                .map(|s| {
                    let back = len - 1 - s;
                    let mut x = Array2::zeros((b, OBS_DIM));
                    for (r, h) in hist.iter().enumerate() {
                        if let Some(Some(o)) = h.get(back) {
                            for (j, v) in o.iter().enumerate() {
                                x[[r, j]] = *v;
                            }
                        }
                    }
                    x
                })
                .collect();
            NetInput::Sequence(steps)
        }
    }
}

pub fn obs_batch(ds: &Dataset, idx: &[usize], next: bool) -> Array2<f64> {
    let mut x = Array2::zeros((idx.len(), OBS_DIM));
    for (r, &i) in idx.iter().enumerate() {
        let t = &ds.transitions[i];
        let src = if next { &t.next_obs } else { &t.obs };
        for (j, v) in src.iter().enumerate() {
            x[[r, j]] = *v;
        }
    }
    x
}

/// Critic input: observation followed by the normalized action.
pub fn critic_batch(ds: &Dataset, idx: &[usize]) -> Array2<f64> {
    let mut x = Array2::zeros((idx.len(), OBS_DIM + 1));
    for (r, &i) in idx.iter().enumerate() {
        let t = &ds.transitions[i];
        for (j, v) in t.obs.iter().enumerate() {
            x[[r, j]] = *v;
        }
        x[[r, OBS_DIM]] = t.action;
    }
    x
}

pub fn actor_batch(ds: &Dataset, idx: &[usize], cfg: &TrainConfig) -> NetInput {
    let len = cfg.history_len();
    let hist: Vec<Vec<Option<&[f64]>>> = idx
        .iter()
        .map(|&i| {
            (0..len)
                .map(|k| ds.history(i, k).map(|j| ds.transitions[j].obs.as_slice()))
                .collect()
        })
        .collect();
    build_actor_input(cfg.actor, len, &hist)
}

/// Value loss and its gradient with respect to the value parameters.
pub fn value_loss(
    net: &MixtureNetwork,
    params: &[f64],
    obs: NetInput,
    q_sel: &[GaussianMixture],
    tau: f64,
    dropout: Option<&mut DropoutCtx>,
) -> (f64, Vec<f64>) {
    let cache = net.forward(params, obs, dropout);
    let (loss, up) = losses::value_loss_head(&cache.out, q_sel, tau);
    let mut g = vec![0.0; net.n_params()];
    net.backward(params, &cache, &up, &mut g);
    (loss, g)
}

/// Critic loss and its gradient with respect to one critic's parameters.
pub fn critic_loss(
    net: &MixtureNetwork,
    params: &[f64],
    obs_action: NetInput,
    targets: &[GaussianMixture],
    dropout: Option<&mut DropoutCtx>,
) -> (f64, Vec<f64>) {
    let cache = net.forward(params, obs_action, dropout);
    let (loss, up) = losses::critic_loss_head(&cache.out, targets);
    let mut g = vec![0.0; net.n_params()];
    net.backward(params, &cache, &up, &mut g);
    (loss, g)
}

/// Advantage-weighted NLL and its gradient with respect to the actor
/// parameters. `weights` are already clipped and carry no gradient.
pub fn actor_loss(
    net: &MixtureNetwork,
    params: &[f64],
    window: NetInput,
    actions: &[f64],
    weights: &[f64],
    dropout: Option<&mut DropoutCtx>,
) -> (f64, Vec<f64>) {
    let cache = net.forward(params, window, dropout);
    let (loss, up) = losses::actor_loss_head(&cache.out, actions, weights);
    let mut g = vec![0.0; net.n_params()];
    net.backward(params, &cache, &up, &mut g);
    (loss, g)
}

/// Per-sample twin-critic selection by mixture mean.
pub fn select_min(q1: &MixtureBatch, q2: &MixtureBatch) -> Vec<GaussianMixture> {
    (0..q1.len())
        .map(|r| {
            let (a, b) = (q1.mixture(r), q2.mixture(r));
            min_mean_select(&a, &b).clone()
        })
        .collect()
}

/// Distributional Bellman targets; terminal steps drop the bootstrap.
pub fn bellman_targets(next_v: &MixtureBatch, rewards: &[f64], done: &[bool], gamma: f64) -> Vec<GaussianMixture> {
    (0..next_v.len())
        .map(|r| {
            let g = if done[r] { 0.0 } else { gamma };
            bellman_target(rewards[r], g, &next_v.mixture(r))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    pub value: f64,
    pub actor: f64,
    pub critic1: f64,
    pub critic2: f64,
}

impl StepLosses {
    fn add(&mut self, o: &StepLosses, w: f64) {
        self.value += w * o.value;
        self.actor += w * o.actor;
        self.critic1 += w * o.critic1;
        self.critic2 += w * o.critic2;
    }

    fn finite(&self) -> bool {
        [self.value, self.actor, self.critic1, self.critic2].iter().all(|v| v.is_finite())
    }
}

/// Networks, parameters and optimizer state of one training run.
#[derive(Debug, Clone)]
pub struct Agent {
    pub cfg: TrainConfig,
    pub actor: MixtureNetwork,
    pub value: MixtureNetwork,
    pub critic: MixtureNetwork,
    pub params: ModelParams,
    opt: [nn::Adam; 4],
    rng: ChaCha8Rng,
    steps: u64,
}

fn check_finite(p: &[f64], network: &'static str, step: u64) -> Result<(), LearnerError> {
    if p.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(LearnerError::NonFinite { network, what: "parameters", step })
    }
}

fn check_out(out: &MixtureBatch, network: &'static str, step: u64) -> Result<(), LearnerError> {
    if out.all_finite() {
        Ok(())
    } else {
        Err(LearnerError::NonFinite { network, what: "output", step })
    }
}

impl Agent {
    pub fn new(cfg: TrainConfig, mean_reward: f64) -> Result<Self, LearnerError> {
        cfg.validate()?;
        let (a, v, c) = cfg.network_specs(mean_reward);
        let actor = MixtureNetwork::new(a);
        let value = MixtureNetwork::new(v);
        let critic = MixtureNetwork::new(c);
        let s = cfg.seed;
        let params = ModelParams {
            actor: actor.init_params(derive_seed(s, "init/actor")),
            critic1: critic.init_params(derive_seed(s, "init/critic1")),
            critic2: critic.init_params(derive_seed(s, "init/critic2")),
            value: value.init_params(derive_seed(s, "init/value")),
        };
        let opt = [
            nn::Adam::new(actor.n_params(), cfg.lr),
            nn::Adam::new(critic.n_params(), cfg.lr),
            nn::Adam::new(critic.n_params(), cfg.lr),
            nn::Adam::new(value.n_params(), cfg.lr),
        ];
        let rng = ChaCha8Rng::seed_from_u64(derive_seed(s, "dropout"));
        Ok(Self { cfg, actor, value, critic, params, opt, rng, steps: 0 })
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One minibatch: value update, then actor, then both critics.
    pub fn train_step(&mut self, ds: &Dataset, idx: &[usize]) -> Result<StepLosses, LearnerError> {
        self.steps += 1;
        let step = self.steps;
        let cfg = self.cfg.clone();
        let actions: Vec<f64> = idx.iter().map(|&i| ds.transitions[i].action).collect();
        let window = actor_batch(ds, idx, &cfg);
        let rate = cfg.dropout;

        if cfg.method == Method::Bc {
            let ones = vec![1.0; idx.len()];
            let mut drop = DropoutCtx { rate, rng: &mut self.rng };
            let (la, ga) = actor_loss(&self.actor, &self.params.actor, window, &actions, &ones, Some(&mut drop));
            self.opt[0].step(&mut self.params.actor, &ga);
            check_finite(&self.params.actor, "actor", step)?;
            let l = StepLosses { actor: la, ..Default::default() };
            return if l.finite() { Ok(l) } else { Err(LearnerError::NonFinite { network: "actor", what: "loss", step }) };
        }

        let obs = obs_batch(ds, idx, false);
        let obs_act = critic_batch(ds, idx);
        let q1 = self.critic.predict(&self.params.critic1, NetInput::Flat(obs_act.clone()));
        check_out(&q1, "critic1", step)?;
        let q2 = self.critic.predict(&self.params.critic2, NetInput::Flat(obs_act.clone()));
        check_out(&q2, "critic2", step)?;
        let q_sel = select_min(&q1, &q2);

        let (lv, gv) = {
            let mut drop = DropoutCtx { rate, rng: &mut self.rng };
            value_loss(&self.value, &self.params.value, NetInput::Flat(obs.clone()), &q_sel, cfg.tau, Some(&mut drop))
        };
        self.opt[3].step(&mut self.params.value, &gv);
        check_finite(&self.params.value, "value", step)?;

        let v_now = self.value.predict(&self.params.value, NetInput::Flat(obs));
        check_out(&v_now, "value", step)?;
        let weights: Vec<f64> = (0..idx.len())
            .map(|r| awr_weight(q_sel[r].mean() - v_now.row_mean(r), cfg.beta, cfg.awr_clip))
            .collect();
        let (la, ga) = {
            let mut drop = DropoutCtx { rate, rng: &mut self.rng };
            actor_loss(&self.actor, &self.params.actor, window, &actions, &weights, Some(&mut drop))
        };
        self.opt[0].step(&mut self.params.actor, &ga);
        check_finite(&self.params.actor, "actor", step)?;

        let next = obs_batch(ds, idx, true);
        let v_next = self.value.predict(&self.params.value, NetInput::Flat(next));
        check_out(&v_next, "value", step)?;
        let rewards: Vec<f64> = idx.iter().map(|&i| ds.transitions[i].reward * cfg.reward_scale()).collect();
        let done: Vec<bool> = idx.iter().map(|&i| ds.transitions[i].done).collect();
        let targets = bellman_targets(&v_next, &rewards, &done, cfg.gamma);
        let (l1, g1) = {
            let mut drop = DropoutCtx { rate, rng: &mut self.rng };
            critic_loss(&self.critic, &self.params.critic1, NetInput::Flat(obs_act.clone()), &targets, Some(&mut drop))
        };
        let (l2, g2) = {
            let mut drop = DropoutCtx { rate, rng: &mut self.rng };
            critic_loss(&self.critic, &self.params.critic2, NetInput::Flat(obs_act), &targets, Some(&mut drop))
        };
        self.opt[1].step(&mut self.params.critic1, &g1);
        self.opt[2].step(&mut self.params.critic2, &g2);
        check_finite(&self.params.critic1, "critic1", step)?;
        check_finite(&self.params.critic2, "critic2", step)?;

        let l = StepLosses { value: lv, actor: la, critic1: l1, critic2: l2 };
        if !l.finite() {
            return Err(LearnerError::NonFinite { network: "losses", what: "loss", step });
        }
        Ok(l)
    }

    /// Deterministic mean action of the actor for dataset rows.
    pub fn mean_actions(&self, ds: &Dataset, idx: &[usize]) -> Vec<f64> {
        let mut out = Vec::with_capacity(idx.len());
        for chunk in idx.chunks(1024) {
            let pi = self.actor.predict(&self.params.actor, actor_batch(ds, chunk, &self.cfg));
            out.extend((0..pi.len()).map(|r| pi.row_mean(r)));
        }
        out
    }

    /// Mean squared error between the actor's mean action and the dataset
    /// actions, in normalized action space.
    pub fn offline_mse(&self, ds: &Dataset) -> f64 {
        let idx: Vec<usize> = (0..ds.len()).collect();
        let pred = self.mean_actions(ds, &idx);
        pred.iter()
            .zip(&ds.transitions)
            .map(|(p, t)| (p - t.action).powi(2))
            .sum::<f64>()
            / ds.len().max(1) as f64
    }

    /// Losses on a fixed set of rows with dropout off and no update.
    pub fn evaluate_losses(&self, ds: &Dataset, idx: &[usize]) -> StepLosses {
        let cfg = &self.cfg;
        let actions: Vec<f64> = idx.iter().map(|&i| ds.transitions[i].action).collect();
        let pi = self.actor.predict(&self.params.actor, actor_batch(ds, idx, cfg));
        if cfg.method == Method::Bc {
            let ones = vec![1.0; idx.len()];
            return StepLosses { actor: losses::actor_loss_head(&pi, &actions, &ones).0, ..Default::default() };
        }
        let obs_act = NetInput::Flat(critic_batch(ds, idx));
        let q1 = self.critic.predict(&self.params.critic1, obs_act.clone());
        let q2 = self.critic.predict(&self.params.critic2, obs_act);
        let q_sel = select_min(&q1, &q2);
        let v = self.value.predict(&self.params.value, NetInput::Flat(obs_batch(ds, idx, false)));
        let weights: Vec<f64> = (0..idx.len())
            .map(|r| awr_weight(q_sel[r].mean() - v.row_mean(r), cfg.beta, cfg.awr_clip))
            .collect();
        let v_next = self.value.predict(&self.params.value, NetInput::Flat(obs_batch(ds, idx, true)));
        let rewards: Vec<f64> = idx.iter().map(|&i| ds.transitions[i].reward * cfg.reward_scale()).collect();
        let done: Vec<bool> = idx.iter().map(|&i| ds.transitions[i].done).collect();
        let targets = bellman_targets(&v_next, &rewards, &done, cfg.gamma);
        StepLosses {
            value: losses::value_loss_head(&v, &q_sel, cfg.tau).0,
            actor: losses::actor_loss_head(&pi, &actions, &weights).0,
            critic1: losses::critic_loss_head(&q1, &targets).0,
            critic2: losses::critic_loss_head(&q2, &targets).0,
        }
    }

    pub fn checkpoint(&self, epoch: usize, offline_mse: f64, call: &CallConfig) -> Checkpoint {
        Checkpoint {
            meta: CheckpointMeta {
                format: checkpoint::FORMAT.into(),
                method: self.cfg.method,
                epoch,
                offline_mse,
                train: self.cfg.clone(),
                call: *call,
                actor: self.actor.spec.clone(),
                value: self.value.spec.clone(),
                critic: self.critic.spec.clone(),
            },
            params: self.params.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub losses: StepLosses,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoints: Vec<Checkpoint>,
    /// Epoch 0 holds losses of the untrained networks; later entries hold the
    /// mean minibatch loss of that epoch.
    pub log: Vec<EpochLog>,
}

/// Full training run. A checkpoint is taken every `eval_every` epochs and
/// after the last epoch.
pub fn train(ds: &Dataset, cfg: &TrainConfig, call: &CallConfig) -> Result<TrainOutcome, LearnerError> {
    cfg.validate()?;
    ds.header.check_against(call)?;
    if ds.is_empty() {
        return Err(LearnerError::Config("empty dataset".into()));
    }
    let mut cfg = cfg.clone();
    if cfg.reward_scale.is_none() {
        let spread = ds.return_spread();
        cfg.reward_scale = Some(if spread > 1e-9 { 1000.0 / spread } else { 1.0 });
    }
    let cfg = &cfg;
    let mut agent = Agent::new(cfg.clone(), ds.mean_reward())?;
    let mut order: Vec<usize> = (0..ds.len()).collect();
    let probe: Vec<usize> = order.iter().copied().step_by((ds.len() / 2048).max(1)).collect();
    let mut log = vec![EpochLog { epoch: 0, losses: agent.evaluate_losses(ds, &probe) }];
    let mut checkpoints = Vec::new();
    for epoch in 1..=cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &format!("epoch/{epoch}")));
        order.shuffle(&mut rng);
        let mut sum = StepLosses::default();
        for chunk in order.chunks(cfg.batch_size) {
            let l = agent.train_step(ds, chunk)?;
            sum.add(&l, chunk.len() as f64 / ds.len() as f64);
        }
        log::info!(
            "{} epoch {epoch}: value {:.4} actor {:.4} critic {:.4}/{:.4}",
            cfg.method, sum.value, sum.actor, sum.critic1, sum.critic2
        );
        log.push(EpochLog { epoch, losses: sum });
        if epoch % cfg.eval_every == 0 || epoch == cfg.epochs {
            let mse = agent.offline_mse(ds);
            log::info!("checkpoint at epoch {epoch}: offline mse {mse:.6}");
            checkpoints.push(agent.checkpoint(epoch, mse, call));
        }
    }
    Ok(TrainOutcome { checkpoints, log })
}

/// Behavior cloning: the actor loss with unit weights, no critics.
pub fn bc_train(ds: &Dataset, cfg: &TrainConfig, call: &CallConfig) -> Result<TrainOutcome, LearnerError> {
    train(ds, &TrainConfig { method: Method::Bc, ..cfg.clone() }, call)
}

/// Scalar IQL: one component with value and critic spreads pinned to the floor.
pub fn iql_scalar_train(ds: &Dataset, cfg: &TrainConfig, call: &CallConfig) -> Result<TrainOutcome, LearnerError> {
    train(ds, &TrainConfig { method: Method::Iql, components: 1, ..cfg.clone() }, call)
}
