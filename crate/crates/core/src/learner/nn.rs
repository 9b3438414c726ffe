//! Minimal batch neural-network machinery with hand-written backprop.
//!
//! Every network keeps its parameters in one flat `Vec<f64>`; layers hold
//! offsets into it. Gradients use the same layout, which keeps the optimizer,
//! checkpointing and finite-difference checks trivial.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::mixture::{GaussianMixture, SIGMA_FLOOR};

/// Affine layer `y = x W + b` with `W` stored row-major as `input x output`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub input: usize,
    pub output: usize,
    pub offset: usize,
}

impl Dense {
    fn len(&self) -> usize {
        self.input * self.output + self.output
    }

    fn w<'a>(&self, p: &'a [f64]) -> ArrayView2<'a, f64> {
        ArrayView2::from_shape((self.input, self.output), &p[self.offset..self.offset + self.input * self.output])
            .expect("layout")
    }

    fn b<'a>(&self, p: &'a [f64]) -> ArrayView1<'a, f64> {
        let s = self.offset + self.input * self.output;
        ArrayView1::from(&p[s..s + self.output])
    }

    fn grads<'a>(&self, g: &'a mut [f64]) -> (ArrayViewMut2<'a, f64>, ArrayViewMut1<'a, f64>) {
        let (w, rest) = g[self.offset..self.offset + self.len()].split_at_mut(self.input * self.output);
        (
            ArrayViewMut2::from_shape((self.input, self.output), w).expect("layout"),
            ArrayViewMut1::from(rest),
        )
    }

    fn forward(&self, p: &[f64], x: &ArrayView2<f64>) -> Array2<f64> {
        let mut y = Array2::zeros((x.nrows(), self.output));
        general_mat_mul(1.0, x, &self.w(p), 0.0, &mut y);
        y += &self.b(p);
        y
    }

    /// Accumulates parameter gradients and returns the input gradient.
    fn backward(&self, p: &[f64], x: &ArrayView2<f64>, dy: &Array2<f64>, g: &mut [f64], need_dx: bool) -> Option<Array2<f64>> {
        {
            let (mut gw, mut gb) = self.grads(g);
            general_mat_mul(1.0, &x.t(), dy, 1.0, &mut gw);
            gb += &dy.sum_axis(Axis(0));
        }
        need_dx.then(|| {
            let mut dx = Array2::zeros((dy.nrows(), self.input));
            general_mat_mul(1.0, dy, &self.w(p).t(), 0.0, &mut dx);
            dx
        })
    }

    fn init(&self, p: &mut [f64], rng: &mut ChaCha8Rng, gain: f64) {
        let bound = gain * (6.0 / (self.input + self.output) as f64).sqrt();
        for v in &mut p[self.offset..self.offset + self.input * self.output] {
            *v = rng.random_range(-bound..bound);
        }
        for v in &mut p[self.offset + self.input * self.output..self.offset + self.len()] {
            *v = 0.0;
        }
    }
}

/// Dropout applied during training passes.
pub struct DropoutCtx<'a> {
    pub rate: f64,
    pub rng: &'a mut ChaCha8Rng,
}

/// Stack of tanh dense layers followed by a linear output layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub hidden: Vec<Dense>,
    pub out: Dense,
}

pub struct MlpCache {
    inputs: Vec<Array2<f64>>,
    acts: Vec<Array2<f64>>,
    masks: Vec<Option<Array2<f64>>>,
    last_in: Array2<f64>,
}

impl Mlp {
    fn new(input: usize, widths: &[usize], output: usize, offset: &mut usize) -> Self {
        let mut hidden = Vec::with_capacity(widths.len());
        let mut prev = input;
        for &w in widths {
            let d = Dense { input: prev, output: w, offset: *offset };
            *offset += d.len();
            hidden.push(d);
            prev = w;
        }
        let out = Dense { input: prev, output, offset: *offset };
        *offset += out.len();
        Self { hidden, out }
    }

    fn init(&self, p: &mut [f64], rng: &mut ChaCha8Rng) {
        for d in &self.hidden {
            d.init(p, rng, 1.0);
        }
        self.out.init(p, rng, 0.1);
    }

    fn forward(&self, p: &[f64], x: Array2<f64>, mut dropout: Option<&mut DropoutCtx>) -> (Array2<f64>, MlpCache) {
        let mut inputs = Vec::with_capacity(self.hidden.len());
        let mut acts = Vec::with_capacity(self.hidden.len());
        let mut masks = Vec::with_capacity(self.hidden.len());
        let mut h = x;
        for d in &self.hidden {
            let mut a = d.forward(p, &h.view());
            a.mapv_inplace(f64::tanh);
            let mask = match dropout.as_deref_mut() {
                Some(ctx) if ctx.rate > 0.0 => {
                    let keep = 1.0 - ctx.rate;
                    let m = Array2::from_shape_fn(a.raw_dim(), |_| {
                        if ctx.rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 }
                    });
                    Some(m)
                }
                _ => None,
            };
            let next = match &mask {
                Some(m) => &a * m,
                None => a.clone(),
            };
            inputs.push(h);
            acts.push(a);
            masks.push(mask);
            h = next;
        }
        let y = self.out.forward(p, &h.view());
        (y, MlpCache { inputs, acts, masks, last_in: h })
    }

    fn backward(&self, p: &[f64], cache: &MlpCache, dy: &Array2<f64>, g: &mut [f64], need_dx: bool) -> Option<Array2<f64>> {
        let mut dh = self
            .out
            .backward(p, &cache.last_in.view(), dy, g, !self.hidden.is_empty() || need_dx)?;
        for (k, d) in self.hidden.iter().enumerate().rev() {
            if let Some(m) = &cache.masks[k] {
                dh *= m;
            }
            let a = &cache.acts[k];
            dh.zip_mut_with(a, |g, &t| *g *= 1.0 - t * t);
            let want = k > 0 || need_dx;
            match d.backward(p, &cache.inputs[k].view(), &dh, g, want) {
                Some(dx) => dh = dx,
                None => return None,
            }
        }
        Some(dh)
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Single-layer gated recurrent cell (LSTM) unrolled over a window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lstm {
    pub input: usize,
    pub hidden: usize,
    pub offset: usize,
}

struct LstmStep {
    h_prev: Array2<f64>,
    c_prev: Array2<f64>,
    gates: Array2<f64>,
    tanh_c: Array2<f64>,
}

pub struct LstmCache {
    inputs: Vec<Array2<f64>>,
    steps: Vec<LstmStep>,
}

impl Lstm {
    fn len(&self) -> usize {
        let g = 4 * self.hidden;
        self.input * g + self.hidden * g + g
    }

    fn views<'a>(&self, p: &'a [f64]) -> (ArrayView2<'a, f64>, ArrayView2<'a, f64>, ArrayView1<'a, f64>) {
        let g = 4 * self.hidden;
        let s = &p[self.offset..self.offset + self.len()];
        let (wx, rest) = s.split_at(self.input * g);
        let (wh, b) = rest.split_at(self.hidden * g);
        (
            ArrayView2::from_shape((self.input, g), wx).expect("layout"),
            ArrayView2::from_shape((self.hidden, g), wh).expect("layout"),
            ArrayView1::from(b),
        )
    }

    fn init(&self, p: &mut [f64], rng: &mut ChaCha8Rng) {
        let g = 4 * self.hidden;
        let bound = (1.0 / self.hidden as f64).sqrt();
        let s = &mut p[self.offset..self.offset + self.len()];
        let (w, b) = s.split_at_mut((self.input + self.hidden) * g);
        for v in w {
            *v = rng.random_range(-bound..bound);
        }
        for (k, v) in b.iter_mut().enumerate() {
            // forget gate starts open
            *v = if (self.hidden..2 * self.hidden).contains(&k) { 1.0 } else { 0.0 };
        }
    }

    fn forward(&self, p: &[f64], xs: Vec<Array2<f64>>) -> (Array2<f64>, LstmCache) {
        let hsz = self.hidden;
        let batch = xs.first().map_or(0, |x| x.nrows());
        let (wx, wh, b) = self.views(p);
        let mut h: Array2<f64> = Array2::zeros((batch, hsz));
        let mut c: Array2<f64> = Array2::zeros((batch, hsz));
        let mut steps = Vec::with_capacity(xs.len());
        for x in &xs {
            let mut z = Array2::zeros((batch, 4 * hsz));
            general_mat_mul(1.0, &x.view(), &wx, 0.0, &mut z);
            general_mat_mul(1.0, &h.view(), &wh, 1.0, &mut z);
            z += &b;
            for mut row in z.rows_mut() {
                for (k, v) in row.iter_mut().enumerate() {
                    *v = if (2 * hsz..3 * hsz).contains(&k) { v.tanh() } else { sigmoid(*v) };
                }
            }
            let mut c_new = Array2::zeros((batch, hsz));
            let mut h_new = Array2::zeros((batch, hsz));
            let mut tanh_c = Array2::zeros((batch, hsz));
            for r in 0..batch {
                for k in 0..hsz {
                    let (i, f, g, o) = (z[[r, k]], z[[r, hsz + k]], z[[r, 2 * hsz + k]], z[[r, 3 * hsz + k]]);
                    let cn = f * c[[r, k]] + i * g;
                    let tc = cn.tanh();
                    c_new[[r, k]] = cn;
                    tanh_c[[r, k]] = tc;
                    h_new[[r, k]] = o * tc;
                }
            }
            steps.push(LstmStep {
                h_prev: std::mem::replace(&mut h, h_new),
                c_prev: std::mem::replace(&mut c, c_new),
                gates: z,
                tanh_c,
            });
        }
        (h, LstmCache { inputs: xs, steps })
    }

    /// Backprop through time from the gradient of the final hidden state.
    fn backward(&self, p: &[f64], cache: &LstmCache, dh_last: &Array2<f64>, g: &mut [f64]) {
        let hsz = self.hidden;
        let gsz = 4 * hsz;
        let (_, wh, _) = self.views(p);
        let mut dh = dh_last.clone();
        let mut dc: Array2<f64> = Array2::zeros(dh.raw_dim());
        let s = &mut g[self.offset..self.offset + self.len()];
        let (gwx, rest) = s.split_at_mut(self.input * gsz);
        let (gwh, gb) = rest.split_at_mut(hsz * gsz);
        let mut gwx = ArrayViewMut2::from_shape((self.input, gsz), gwx).expect("layout");
        let mut gwh = ArrayViewMut2::from_shape((hsz, gsz), gwh).expect("layout");
        let mut gb = ArrayViewMut1::from(gb);
        for (x, st) in cache.inputs.iter().zip(&cache.steps).rev() {
            let batch = dh.nrows();
            let mut dz = Array2::zeros((batch, gsz));
            for r in 0..batch {
                for k in 0..hsz {
                    let (i, f, gg, o) = (
                        st.gates[[r, k]],
                        st.gates[[r, hsz + k]],
                        st.gates[[r, 2 * hsz + k]],
                        st.gates[[r, 3 * hsz + k]],
                    );
                    let tc = st.tanh_c[[r, k]];
                    let dhv = dh[[r, k]];
                    let dcv = dc[[r, k]] + dhv * o * (1.0 - tc * tc);
                    dz[[r, k]] = dcv * gg * i * (1.0 - i);
                    dz[[r, hsz + k]] = dcv * st.c_prev[[r, k]] * f * (1.0 - f);
                    dz[[r, 2 * hsz + k]] = dcv * i * (1.0 - gg * gg);
                    dz[[r, 3 * hsz + k]] = dhv * tc * o * (1.0 - o);
                    dc[[r, k]] = dcv * f;
                }
            }
            general_mat_mul(1.0, &x.t(), &dz, 1.0, &mut gwx);
            general_mat_mul(1.0, &st.h_prev.t(), &dz, 1.0, &mut gwh);
            gb += &dz.sum_axis(Axis(0));
            let mut dh_prev = Array2::zeros((batch, hsz));
            general_mat_mul(1.0, &dz, &wh.t(), 0.0, &mut dh_prev);
            dh = dh_prev;
        }
    }
}

/// How the head turns raw outputs into component means.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum MeanMode {
    /// `tanh(raw)`, bounded to (-1, 1).
    Tanh,
    /// `offset + scale * raw`.
    Affine { scale: f64, offset: f64 },
}

/// Gaussian-mixture output head: softmax weights, bounded or affine means,
/// softplus standard deviations above the floor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub components: usize,
    pub mean: MeanMode,
    pub std_scale: f64,
    /// Pins every std to the floor (scalar-return mode).
    pub pinned_std: bool,
}

impl HeadSpec {
    pub fn raw_dim(&self) -> usize {
        3 * self.components
    }
}

/// Batched mixture parameters, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureBatch {
    pub weights: Array2<f64>,
    pub means: Array2<f64>,
    pub stds: Array2<f64>,
    raw: Array2<f64>,
}

impl MixtureBatch {
    /// Batch of fixed mixtures, e.g. for evaluating losses on known values.
    pub fn from_mixtures(zs: &[GaussianMixture]) -> Self {
        let n = zs.first().map_or(0, |z| z.len());
        let mut out = Self {
            weights: Array2::zeros((zs.len(), n)),
            means: Array2::zeros((zs.len(), n)),
            stds: Array2::zeros((zs.len(), n)),
            raw: Array2::zeros((zs.len(), 3 * n)),
        };
        for (r, z) in zs.iter().enumerate() {
            assert_eq!(z.len(), n, "mixtures in a batch share a component count");
            for (k, (w, m, s)) in z.components().enumerate() {
                out.weights[[r, k]] = w;
                out.means[[r, k]] = m;
                out.stds[[r, k]] = s;
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.weights.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.nrows() == 0
    }

    pub fn components(&self) -> usize {
        self.weights.ncols()
    }

    pub fn mixture(&self, row: usize) -> GaussianMixture {
        let w: Vec<f64> = self.weights.row(row).to_vec();
        let s: f64 = w.iter().sum();
        GaussianMixture::new(
            w.iter().map(|x| x / s).collect(),
            self.means.row(row).to_vec(),
            self.stds.row(row).to_vec(),
        )
        .expect("head emits valid mixtures")
    }

    pub fn mixtures(&self) -> Vec<GaussianMixture> {
        (0..self.len()).map(|r| self.mixture(r)).collect()
    }

    pub fn row_mean(&self, row: usize) -> f64 {
        self.weights.row(row).dot(&self.means.row(row))
    }

    pub fn all_finite(&self) -> bool {
        self.weights.iter().chain(self.means.iter()).chain(self.stds.iter()).all(|v| v.is_finite())
    }
}

/// Upstream gradient of a loss with respect to a head's outputs. Weight
/// gradients are given directly on the softmax logits.
pub struct HeadGrad {
    pub d_logits: Array2<f64>,
    pub d_means: Array2<f64>,
    pub d_stds: Array2<f64>,
}

impl HeadGrad {
    pub fn zeros(batch: usize, n: usize) -> Self {
        Self {
            d_logits: Array2::zeros((batch, n)),
            d_means: Array2::zeros((batch, n)),
            d_stds: Array2::zeros((batch, n)),
        }
    }

    /// Converts a gradient on the mixture weights into one on the logits.
    pub fn from_weight_grad(weights: &Array2<f64>, d_weights: &Array2<f64>, d_means: Array2<f64>, d_stds: Array2<f64>) -> Self {
        let mut d_logits = Array2::zeros(weights.raw_dim());
        for r in 0..weights.nrows() {
            let dot: f64 = weights.row(r).dot(&d_weights.row(r));
            for k in 0..weights.ncols() {
                d_logits[[r, k]] = weights[[r, k]] * (d_weights[[r, k]] - dot);
            }
        }
        Self { d_logits, d_means, d_stds }
    }
}

fn head_forward(spec: &HeadSpec, raw: Array2<f64>) -> MixtureBatch {
    let n = spec.components;
    let b = raw.nrows();
    let mut weights = Array2::zeros((b, n));
    let mut means = Array2::zeros((b, n));
    let mut stds = Array2::zeros((b, n));
    for r in 0..b {
        let row = raw.row(r);
        let max = (0..n).map(|k| row[k]).fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for k in 0..n {
            let e = (row[k] - max).exp();
            weights[[r, k]] = e;
            z += e;
        }
        for k in 0..n {
            weights[[r, k]] /= z;
            let m = row[n + k];
            means[[r, k]] = match spec.mean {
                MeanMode::Tanh => m.tanh(),
                MeanMode::Affine { scale, offset } => offset + scale * m,
            };
            stds[[r, k]] = if spec.pinned_std {
                SIGMA_FLOOR
            } else {
                spec.std_scale * softplus(row[2 * n + k]) + SIGMA_FLOOR
            };
        }
    }
    MixtureBatch { weights, means, stds, raw }
}

fn head_backward(spec: &HeadSpec, out: &MixtureBatch, grad: &HeadGrad) -> Array2<f64> {
    let n = spec.components;
    let b = out.len();
    let mut d = Array2::zeros((b, 3 * n));
    for r in 0..b {
        for k in 0..n {
            d[[r, k]] = grad.d_logits[[r, k]];
            d[[r, n + k]] = match spec.mean {
                MeanMode::Tanh => {
                    let t = out.means[[r, k]];
                    grad.d_means[[r, k]] * (1.0 - t * t)
                }
                MeanMode::Affine { scale, .. } => grad.d_means[[r, k]] * scale,
            };
            d[[r, 2 * n + k]] = if spec.pinned_std {
                0.0
            } else {
                grad.d_stds[[r, k]] * spec.std_scale * sigmoid(out.raw[[r, 2 * n + k]])
            };
        }
    }
    d
}

/// Shape of one mixture-density network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub dropout: f64,
    /// Width of the recurrent cell ahead of the dense stack, if any.
    pub recurrent_width: Option<usize>,
    pub head: HeadSpec,
}

/// Network input: a flat batch, or a window of batches for recurrent nets.
#[derive(Debug, Clone)]
pub enum NetInput {
    Flat(Array2<f64>),
    Sequence(Vec<Array2<f64>>),
}

impl NetInput {
    pub fn batch_len(&self) -> usize {
        match self {
            NetInput::Flat(x) => x.nrows(),
            NetInput::Sequence(xs) => xs.first().map_or(0, |x| x.nrows()),
        }
    }
}

pub struct ForwardCache {
    lstm: Option<LstmCache>,
    mlp: MlpCache,
    pub out: MixtureBatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureNetwork {
    pub spec: NetworkSpec,
    lstm: Option<Lstm>,
    mlp: Mlp,
    n_params: usize,
}

impl MixtureNetwork {
    pub fn new(spec: NetworkSpec) -> Self {
        let mut offset = 0;
        let lstm = spec.recurrent_width.map(|h| {
            let l = Lstm { input: spec.input_dim, hidden: h, offset: 0 };
            offset += l.len();
            l
        });
        let mlp_in = spec.recurrent_width.unwrap_or(spec.input_dim);
        let widths = vec![spec.hidden_width; spec.hidden_layers];
        let mlp = Mlp::new(mlp_in, &widths, spec.head.raw_dim(), &mut offset);
        Self { spec, lstm, mlp, n_params: offset }
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn init_params(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = vec![0.0; self.n_params];
        if let Some(l) = &self.lstm {
            l.init(&mut p, &mut rng);
        }
        self.mlp.init(&mut p, &mut rng);
        if let MeanMode::Affine { .. } = self.spec.head.mean {
            // return heads start at the offset exactly, so early advantages are zero
            let (d, n) = (&self.mlp.out, self.spec.head.components);
            for i in 0..d.input {
                for j in n..2 * n {
                    p[d.offset + i * d.output + j] = 0.0;
                }
            }
        }
        p
    }

    pub fn is_recurrent(&self) -> bool {
        self.lstm.is_some()
    }

    /// Named tensors in parameter order: `(name, shape, offset)`.
    pub fn tensor_layout(&self) -> Vec<(String, Vec<usize>, usize)> {
        let mut out = Vec::new();
        if let Some(l) = &self.lstm {
            let g = 4 * l.hidden;
            out.push(("lstm.w_input".into(), vec![l.input, g], l.offset));
            out.push(("lstm.w_hidden".into(), vec![l.hidden, g], l.offset + l.input * g));
            out.push(("lstm.bias".into(), vec![g], l.offset + (l.input + l.hidden) * g));
        }
        let dense = |name: String, d: &Dense, out: &mut Vec<(String, Vec<usize>, usize)>| {
            out.push((format!("{name}.weight"), vec![d.input, d.output], d.offset));
            out.push((format!("{name}.bias"), vec![d.output], d.offset + d.input * d.output));
        };
        for (k, d) in self.mlp.hidden.iter().enumerate() {
            dense(format!("dense{k}"), d, &mut out);
        }
        dense("head".into(), &self.mlp.out, &mut out);
        out
    }

    pub fn forward(&self, params: &[f64], input: NetInput, dropout: Option<&mut DropoutCtx>) -> ForwardCache {
        debug_assert_eq!(params.len(), self.n_params);
        let (x, lstm) = match (input, &self.lstm) {
            (NetInput::Sequence(xs), Some(l)) => {
                let (h, c) = l.forward(params, xs);
                (h, Some(c))
            }
            (NetInput::Flat(x), None) => (x, None),
            (NetInput::Sequence(mut xs), None) => (xs.pop().expect("non-empty window"), None),
            (NetInput::Flat(x), Some(l)) => {
                let (h, c) = l.forward(params, vec![x]);
                (h, Some(c))
            }
        };
        let (raw, mlp) = self.mlp.forward(params, x, dropout);
        let out = head_forward(&self.spec.head, raw);
        ForwardCache { lstm, mlp, out }
    }

    /// Inference-mode forward (no dropout).
    pub fn predict(&self, params: &[f64], input: NetInput) -> MixtureBatch {
        self.forward(params, input, None).out
    }

    /// Accumulates parameter gradients into `grad`.
    pub fn backward(&self, params: &[f64], cache: &ForwardCache, upstream: &HeadGrad, grad: &mut [f64]) {
        let d_raw = head_backward(&self.spec.head, &cache.out, upstream);
        let need_dx = self.lstm.is_some();
        let dx = self.mlp.backward(params, &cache.mlp, &d_raw, grad, need_dx);
        if let (Some(l), Some(lc), Some(dx)) = (&self.lstm, &cache.lstm, dx) {
            l.backward(params, lc, &dx, grad);
        }
    }
}

/// Adam optimizer state for one flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params.iter_mut().zip(grad).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let mh = *m / bc1;
            let vh = *v / bc2;
            *p -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(recurrent: Option<usize>, mean: MeanMode) -> NetworkSpec {
        NetworkSpec {
            input_dim: 4,
            hidden_layers: 2,
            hidden_width: 5,
            dropout: 0.0,
            recurrent_width: recurrent,
            head: HeadSpec { components: 3, mean, std_scale: 1.0, pinned_std: false },
        }
    }

    fn input(rng: &mut ChaCha8Rng, recurrent: bool, batch: usize) -> NetInput {
        let mut x = || Array2::from_shape_fn((batch, 4), |_| rng.random_range(-1.0..1.0));
        if recurrent {
            NetInput::Sequence((0..4).map(|_| x()).collect())
        } else {
            NetInput::Flat(x())
        }
    }

    /// Scalar probe loss touching every head output.
    fn probe(out: &MixtureBatch) -> (f64, HeadGrad) {
        let b = out.len();
        let n = out.components();
        let mut loss = 0.0;
        let mut dw = Array2::zeros((b, n));
        let mut dm = Array2::zeros((b, n));
        let mut ds = Array2::zeros((b, n));
        for r in 0..b {
            for k in 0..n {
                let c = 1.0 + k as f64 * 0.7 + r as f64 * 0.3;
                loss += c * out.weights[[r, k]] * out.means[[r, k]] + 0.5 * out.stds[[r, k]] * out.stds[[r, k]];
                dw[[r, k]] = c * out.means[[r, k]];
                dm[[r, k]] = c * out.weights[[r, k]];
                ds[[r, k]] = out.stds[[r, k]];
            }
        }
        let g = HeadGrad::from_weight_grad(&out.weights, &dw, dm, ds);
        (loss, g)
    }

    fn check(net: &MixtureNetwork, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = net.init_params(seed);
        let x = input(&mut rng, net.is_recurrent(), 3);
        let cache = net.forward(&p, x.clone(), None);
        let (_, up) = probe(&cache.out);
        let mut g = vec![0.0; net.n_params()];
        net.backward(&p, &cache, &up, &mut g);
        let h = 1e-6;
        let mut num = vec![0.0; p.len()];
        for i in 0..p.len() {
            let mut q = p.clone();
            q[i] += h;
            let lp = probe(&net.predict(&q, x.clone())).0;
            q[i] -= 2.0 * h;
            let lm = probe(&net.predict(&q, x.clone())).0;
            num[i] = (lp - lm) / (2.0 * h);
        }
        let diff: f64 = g.iter().zip(&num).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let scale: f64 = num.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
        assert!(diff / scale < 1e-6, "relative gradient error {}", diff / scale);
    }

    #[test]
    fn dense_stack_gradients() {
        check(&MixtureNetwork::new(spec(None, MeanMode::Tanh)), 1);
        check(&MixtureNetwork::new(spec(None, MeanMode::Affine { scale: 3.0, offset: 1.0 })), 2);
    }

    #[test]
    fn recurrent_gradients() {
        check(&MixtureNetwork::new(spec(Some(6), MeanMode::Tanh)), 3);
    }

    #[test]
    fn head_outputs_valid_mixtures() {
        let net = MixtureNetwork::new(spec(Some(6), MeanMode::Tanh));
        let p = net.init_params(9);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = net.predict(&p, input(&mut rng, true, 50));
        for r in 0..out.len() {
            let z = out.mixture(r);
            assert!(z.means().iter().all(|m| m.abs() < 1.0));
        }
    }

    #[test]
    fn dropout_only_when_requested() {
        let mut s = spec(None, MeanMode::Tanh);
        s.dropout = 0.5;
        let net = MixtureNetwork::new(s);
        let p = net.init_params(4);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = input(&mut rng, false, 8);
        let a = net.predict(&p, x.clone());
        let b = net.predict(&p, x.clone());
        assert_eq!(a, b);
        let mut drng = ChaCha8Rng::seed_from_u64(5);
        let c = net
            .forward(&p, x, Some(&mut DropoutCtx { rate: 0.5, rng: &mut drng }))
            .out;
        assert_ne!(a, c);
    }

    #[test]
    fn adam_moves_against_gradient() {
        let mut p = vec![1.0, -1.0];
        let mut opt = Adam::new(2, 0.1);
        opt.step(&mut p, &[2.0, -3.0]);
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] + 0.9).abs() < 1e-6);
    }
}
