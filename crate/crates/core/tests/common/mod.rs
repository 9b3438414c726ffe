//! Helpers shared by the integration and acceptance targets.
#![allow(dead_code)]

use bwe_lab::dataset::{Dataset, DatasetHeader, Transition, SCHEMA};
use bwe_lab::learner::nn::HeadGrad;
use bwe_lab::learner::{
    actor_batch, critic_batch, obs_batch, Agent, HeadSpec, MeanMode, MixtureNetwork, NetworkSpec, TrainConfig,
};
use bwe_lab::mixture::GaussianMixture;
use bwe_lab::session::OBS_DIM;
use bwe_lab::sim::CallConfig;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Dataset of `calls` calls of `len` steps with uniform random observations,
/// actions from `policy` and rewards from `reward(obs, action)`.
pub fn synthetic_dataset(
    calls: usize,
    len: usize,
    seed: u64,
    policy: impl Fn(&[f64]) -> f64,
    reward: impl Fn(&[f64], f64) -> f64,
) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let call = CallConfig::default();
    let mut out = Vec::with_capacity(calls * len);
    for c in 0..calls {
        let mut obs: Vec<f64> = (0..OBS_DIM).map(|_| rng.random()).collect();
        for t in 0..len {
            let next: Vec<f64> = (0..OBS_DIM).map(|_| rng.random()).collect();
            let action = policy(&obs);
            out.push(Transition {
                call_id: format!("synthetic#{c:03}"),
                t,
                obs: obs.clone(),
                action,
                reward: reward(&obs, action),
                next_obs: next.clone(),
                done: t + 1 == len,
            });
            obs = next;
        }
    }
    let header = DatasetHeader {
        schema: SCHEMA.into(),
        obs_dim: OBS_DIM,
        b_min: call.action_map.b_min,
        b_max: call.action_map.b_max,
        alpha: call.reward.alpha,
        normalization: call.normalization,
        reward_window_ms: call.reward.window_ms,
        seed,
        profiles: vec!["synthetic".into()],
        calls_per_profile: calls,
    };
    Dataset::from_parts(header, out).expect("synthetic dataset is valid")
}

pub fn small_spec(input_dim: usize, mean: MeanMode, std_scale: f64, recurrent: Option<usize>) -> NetworkSpec {
    NetworkSpec {
        input_dim,
        hidden_layers: 2,
        hidden_width: 8,
        dropout: 0.0,
        recurrent_width: recurrent,
        head: HeadSpec { components: 3, mean, std_scale, pinned_std: false },
    }
}

/// Initial parameters plus noise, so no parameter sits at an exact zero.
pub fn jittered_params(net: &MixtureNetwork, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let noise = Normal::new(0.0, 0.2).unwrap();
    net.init_params(seed).into_iter().map(|p| p + noise.sample(&mut rng)).collect()
}

pub fn random_input(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

pub fn random_mixture(n: usize, rng: &mut ChaCha8Rng, center: f64) -> GaussianMixture {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..1.0)).collect();
    let s: f64 = raw.iter().sum();
    GaussianMixture::new(
        raw.iter().map(|w| w / s).collect(),
        (0..n).map(|_| center + rng.random_range(-2.0..2.0)).collect(),
        (0..n).map(|_| rng.random_range(0.1..1.5)).collect(),
    )
    .unwrap()
}

/// Largest coordinate-wise relative error between `analytic` and central
/// differences of `f`. Gradients below 1e-4 in size are compared against
/// that floor instead of their own magnitude.
pub fn fd_max_rel_err(f: impl Fn(&[f64]) -> f64, params: &[f64], analytic: &[f64]) -> f64 {
    let mut p = params.to_vec();
    let mut worst = 0.0f64;
    for i in 0..p.len() {
        let h = 1e-5 * p[i].abs().max(1.0);
        let orig = p[i];
        p[i] = orig + h;
        let up = f(&p);
        p[i] = orig - h;
        let down = f(&p);
        p[i] = orig;
        let num = (up - down) / (2.0 * h);
        let err = (analytic[i] - num).abs() / analytic[i].abs().max(num.abs()).max(1e-4);
        worst = worst.max(err);
    }
    worst
}

/// Plain Adam, written out independently of the library optimizer.
pub struct RefAdam {
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl RefAdam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self { lr, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, p: &mut [f64], g: &[f64]) {
        self.t += 1;
        for i in 0..p.len() {
            self.m[i] = 0.9 * self.m[i] + 0.1 * g[i];
            self.v[i] = 0.999 * self.v[i] + 0.001 * g[i] * g[i];
            let mh = self.m[i] / (1.0 - 0.9f64.powi(self.t));
            let vh = self.v[i] / (1.0 - 0.999f64.powi(self.t));
            p[i] -= self.lr * mh / (vh.sqrt() + 1e-8);
        }
    }
}

/// Textbook scalar IQL on the library's network plumbing: expectile value
/// regression, squared TD critics, clipped exp-advantage weighted NLL actor.
/// Losses and their head gradients are written out here by hand.
pub struct ScalarIql {
    pub cfg: TrainConfig,
    pub actor: MixtureNetwork,
    pub value: MixtureNetwork,
    pub critic: MixtureNetwork,
    pub pa: Vec<f64>,
    pub pv: Vec<f64>,
    pub pc: [Vec<f64>; 2],
    opt_a: RefAdam,
    opt_v: RefAdam,
    opt_c: [RefAdam; 2],
}

impl ScalarIql {
    /// Starts from the same networks and initial parameters as `agent`.
    pub fn mirror(agent: &Agent) -> Self {
        let lr = agent.cfg.lr;
        Self {
            cfg: agent.cfg.clone(),
            actor: agent.actor.clone(),
            value: agent.value.clone(),
            critic: agent.critic.clone(),
            pa: agent.params.actor.clone(),
            pv: agent.params.value.clone(),
            pc: [agent.params.critic1.clone(), agent.params.critic2.clone()],
            opt_a: RefAdam::new(agent.params.actor.len(), lr),
            opt_v: RefAdam::new(agent.params.value.len(), lr),
            opt_c: [RefAdam::new(agent.params.critic1.len(), lr), RefAdam::new(agent.params.critic2.len(), lr)],
        }
    }

    fn scalar(net: &MixtureNetwork, p: &[f64], x: Array2<f64>) -> Vec<f64> {
        let out = net.predict(p, bwe_lab::learner::NetInput::Flat(x));
        (0..out.len()).map(|r| out.means[[r, 0]]).collect()
    }

    /// Expectile loss of `v` against `q`, per sample.
    pub fn expectile(tau: f64, q: f64, v: f64) -> f64 {
        let u = q - v;
        let w = if u < 0.0 { 1.0 - tau } else { tau };
        w * u * u
    }

    pub fn step(&mut self, ds: &bwe_lab::dataset::Dataset, idx: &[usize]) {
        use bwe_lab::learner::NetInput::Flat;
        let b = idx.len() as f64;
        let cfg = self.cfg.clone();
        let obs = obs_batch(ds, idx, false);
        let oa = critic_batch(ds, idx);
        let q1 = Self::scalar(&self.critic, &self.pc[0], oa.clone());
        let q2 = Self::scalar(&self.critic, &self.pc[1], oa.clone());
        let q: Vec<f64> = q1.iter().zip(&q2).map(|(a, c)| if c < a { *c } else { *a }).collect();

        // value: d/dv of w (q - v)^2
        let cache = self.value.forward(&self.pv, Flat(obs.clone()), None);
        let mut up = HeadGrad::zeros(idx.len(), 1);
        for r in 0..idx.len() {
            let u = q[r] - cache.out.means[[r, 0]];
            let w = if u < 0.0 { 1.0 - cfg.tau } else { cfg.tau };
            up.d_means[[r, 0]] = -2.0 * w * u / b;
        }
        let mut g = vec![0.0; self.pv.len()];
        self.value.backward(&self.pv, &cache, &up, &mut g);
        self.opt_v.step(&mut self.pv, &g);

        // actor: weight * Gaussian NLL
        let v = Self::scalar(&self.value, &self.pv, obs);
        let cache = self.actor.forward(&self.pa, actor_batch(ds, idx, &cfg), None);
        let mut up = HeadGrad::zeros(idx.len(), 1);
        for (r, &i) in idx.iter().enumerate() {
            let w = (cfg.beta * (q[r] - v[r])).exp().min(cfg.awr_clip);
            let (mu, sd) = (cache.out.means[[r, 0]], cache.out.stds[[r, 0]]);
            let d = ds.transitions[i].action - mu;
            up.d_means[[r, 0]] = -w * d / (sd * sd) / b;
            up.d_stds[[r, 0]] = w * (1.0 / sd - d * d / (sd * sd * sd)) / b;
        }
        let mut g = vec![0.0; self.pa.len()];
        self.actor.backward(&self.pa, &cache, &up, &mut g);
        self.opt_a.step(&mut self.pa, &g);

        // critics: squared TD error against r + gamma V(s')
        let vn = Self::scalar(&self.value, &self.pv, obs_batch(ds, idx, true));
        let target: Vec<f64> = idx
            .iter()
            .enumerate()
            .map(|(r, &i)| {
                let t = &ds.transitions[i];
                t.reward * cfg.reward_scale() + if t.done { 0.0 } else { cfg.gamma * vn[r] }
            })
            .collect();
        for k in 0..2 {
            let cache = self.critic.forward(&self.pc[k], Flat(oa.clone()), None);
            let mut up = HeadGrad::zeros(idx.len(), 1);
            for r in 0..idx.len() {
                up.d_means[[r, 0]] = -2.0 * (target[r] - cache.out.means[[r, 0]]) / b;
            }
            let mut g = vec![0.0; self.pc[k].len()];
            self.critic.backward(&self.pc[k], &cache, &up, &mut g);
            self.opt_c[k].step(&mut self.pc[k], &g);
        }
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub mod link {
    use bwe_lab::emulator::{
        sample_loss, CapacityStep, LinkState, LossChain, LossModel, NetworkProfile, PacketKind, PacketRecord,
    };

    pub fn constant_profile(capacity_bps: f64, base_delay_ms: f64, loss: LossModel) -> NetworkProfile {
        NetworkProfile {
            name: "test".into(),
            capacity_schedule: vec![CapacityStep { start_ms: 0, capacity_bps }],
            base_delay_ms,
            loss_model: loss,
            queue_capacity_ms: 300.0,
            duration_ms: 60_000,
        }
    }

    pub fn packet(seq: u64, size: u32) -> PacketRecord {
        PacketRecord { seq, kind: PacketKind::Video, size_bytes: size, send_ts_ms: 0.0, recv_ts_ms: None }
    }

    /// One-way delay of a lone packet on an idle link.
    pub fn lone_packet_delay(capacity_bps: f64, base_delay_ms: f64, size: u32) -> f64 {
        let mut link = LinkState::new(constant_profile(capacity_bps, base_delay_ms, LossModel::None), 1);
        let mut out = link.step_link(vec![packet(0, size)]);
        while out.is_empty() {
            out = link.step_link(Vec::new());
        }
        out[0].recv_ts_ms.unwrap() - out[0].send_ts_ms
    }

    /// Measured loss fraction of `n` draws, and the stationary loss from
    /// iterating the two-state transition matrix to convergence.
    pub fn gilbert_rates(p_gb: f64, p_bg: f64, loss_in_bad: f64, n: usize, seed: u64) -> (f64, f64) {
        let model = LossModel::Gilbert { p_good_to_bad: p_gb, p_bad_to_good: p_bg, loss_in_bad };
        let mut chain = LossChain::new(seed);
        let lost = (0..n).filter(|_| sample_loss(&model, &mut chain)).count();
        let (mut good, mut bad) = (1.0, 0.0);
        for _ in 0..200_000 {
            let g = good * (1.0 - p_gb) + bad * p_bg;
            let b = good * p_gb + bad * (1.0 - p_bg);
            (good, bad) = (g, b);
        }
        (lost as f64 / n as f64, bad * loss_in_bad)
    }

    /// Constant-rate overload of a drop-tail link: measured byte drop
    /// fraction and the fluid-model prediction
    /// `(offered - served - queue limit) / offered`.
    pub fn overload_drop(capacity_bps: f64, size: u32, every_ms: u64, secs: u64) -> (f64, f64) {
        let mut link = LinkState::new(constant_profile(capacity_bps, 10.0, LossModel::None), 1);
        let ticks = secs * 1000;
        for t in 0..ticks {
            let arrivals = if t % every_ms == 0 { vec![packet(t, size)] } else { Vec::new() };
            link.step_link(arrivals);
        }
        let s = link.stats();
        let offered = s.sent_bytes as f64;
        let served = capacity_bps / 8000.0 * ticks as f64;
        let queue = capacity_bps / 8000.0 * 300.0;
        (s.dropped_bytes as f64 / offered, (offered - served - queue) / offered)
    }
}
