//! Soft Actor-Critic with explicit value and target-value networks.
//!
//! Networks: policy φ (state → mean and log-std per action), value ψ and its
//! Polyak-averaged copy ψ̄, and twin soft-Q θ₁, θ₂ over `[state, action]`.
//! Every step after warmup runs, in order: value regression onto
//! `min(Q₁,Q₂)(s,ã) − α·log π(ã|s)`, Q regression onto `r + discount·V̄(s')`,
//! a reparameterised policy step on `α·log π − min(Q₁,Q₂)`, then the target
//! update.

use std::collections::VecDeque;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DMatrixView};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CHECKPOINT_FORMAT: &str = "roi-adapt-policy/1";

#[derive(Debug, Error)]
pub enum SacError {
    #[error("non-finite {loss} loss at step {step}; batch: {dump}")]
    NonFinite { step: usize, loss: &'static str, dump: String },
    #[error("invalid hyperparameters: {0}")]
    HyperParams(String),
    #[error("environment: {0}")]
    Env(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

/// Fully connected network with a linear output layer.
///
/// Parameters live in one flat vector: for each layer the weight matrix in
/// row-major `out × in` order followed by the bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    activation: Activation,
    params: Vec<f64>,
}

/// Forward activations kept for the backward pass.
pub struct MlpCache {
    inputs: Vec<DMatrix<f64>>,
    pre: Vec<DMatrix<f64>>,
}

impl Mlp {
    /// Uniform `±1/√fan_in` initialisation.
    pub fn new<R: Rng>(sizes: &[usize], activation: Activation, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2 && sizes.iter().all(|&s| s > 0), "bad layer sizes {sizes:?}");
        let n: usize = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        let mut params = Vec::with_capacity(n);
        for w in sizes.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            for _ in 0..w[0] * w[1] + w[1] {
                params.push(rng.random_range(-bound..bound));
            }
        }
        Mlp { sizes: sizes.to_vec(), activation, params }
    }

    pub fn from_params(sizes: Vec<usize>, activation: Activation, params: Vec<f64>) -> Result<Self, SacError> {
        let n: usize = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        if sizes.len() < 2 || params.len() != n {
            return Err(SacError::Checkpoint(format!("{} parameters for layer sizes {sizes:?}", params.len())));
        }
        Ok(Mlp { sizes, activation, params })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    fn layer_offsets(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let mut off = 0;
        self.sizes.windows(2).map(move |w| {
            let o = off;
            off += w[0] * w[1] + w[1];
            (o, w[0], w[1])
        })
    }

    /// Batched forward pass; rows of `x` are samples.
    pub fn forward(&self, x: &DMatrix<f64>) -> (DMatrix<f64>, MlpCache) {
        assert_eq!(x.ncols(), self.input_dim());
        let n_layers = self.sizes.len() - 1;
        let mut inputs = Vec::with_capacity(n_layers);
        let mut pre = Vec::with_capacity(n_layers);
        let mut h = x.clone();
        for (l, (off, nin, nout)) in self.layer_offsets().enumerate() {
            let wt = DMatrixView::from_slice(&self.params[off..off + nin * nout], nin, nout);
            let mut z = &h * wt;
            let b = &self.params[off + nin * nout..off + nin * nout + nout];
            for (j, mut col) in z.column_iter_mut().enumerate() {
                col.add_scalar_mut(b[j]);
            }
            inputs.push(h);
            h = if l + 1 < n_layers {
                match self.activation {
                    Activation::Tanh => z.map(f64::tanh),
                    Activation::Relu => z.map(|v| v.max(0.0)),
                }
            } else {
                z.clone()
            };
            pre.push(z);
        }
        (h, MlpCache { inputs, pre })
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.forward(x).0
    }

    /// Backpropagates `d_out = ∂L/∂output`, returning the parameter gradient
    /// and `∂L/∂input`.
    pub fn backward(&self, cache: &MlpCache, d_out: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
        let mut grad = vec![0.0; self.params.len()];
        let layers: Vec<_> = self.layer_offsets().collect();
        let mut delta = d_out.clone();
        for l in (0..layers.len()).rev() {
            let (off, nin, nout) = layers[l];
            let x = &cache.inputs[l];
            let gw = x.transpose() * &delta;
            grad[off..off + nin * nout].copy_from_slice(gw.as_slice());
            for (j, col) in delta.column_iter().enumerate() {
                grad[off + nin * nout + j] = col.sum();
            }
            let wt = DMatrixView::from_slice(&self.params[off..off + nin * nout], nin, nout);
            let dx = &delta * wt.transpose();
            if l > 0 {
                delta = match self.activation {
                    Activation::Tanh => dx.zip_map(x, |d, h| d * (1.0 - h * h)),
                    Activation::Relu => dx.zip_map(&cache.pre[l - 1], |d, z| if z > 0.0 { d } else { 0.0 }),
                };
            } else {
                delta = dx;
            }
        }
        (grad, delta)
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
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
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SacHyperParams {
    pub lr_v: f64,
    pub lr_q: f64,
    pub lr_pi: f64,
    pub discount: f64,
    pub tau: f64,
    pub alpha: f64,
    pub batch: usize,
    pub buffer_capacity: usize,
    pub hidden: Vec<usize>,
    pub log_std_min: f64,
    pub log_std_max: f64,
    pub seed: u64,
    pub total_steps: usize,
    pub warmup: usize,
    /// Gradient passes per environment step after warmup.
    pub gradient_steps: usize,
    /// Also roll out the deterministic policy once per episode.
    pub greedy_eval: bool,
}

impl Default for SacHyperParams {
    fn default() -> Self {
        SacHyperParams {
            lr_v: 0.002,
            lr_q: 0.002,
            lr_pi: 0.002,
            discount: 0.99,
            tau: 0.005,
            alpha: 0.2,
            batch: 256,
            buffer_capacity: 100_000,
            hidden: vec![64, 64],
            log_std_min: -20.0,
            log_std_max: 2.0,
            seed: 0,
            total_steps: 20_000,
            warmup: 1_000,
            gradient_steps: 1,
            greedy_eval: true,
        }
    }
}

impl SacHyperParams {
    pub fn validate(&self) -> Result<(), SacError> {
        let bad = |m: &str| Err(SacError::HyperParams(m.to_string()));
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return bad("discount must be in (0, 1]");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must be in (0, 1]");
        }
        if !(self.alpha >= 0.0) {
            return bad("alpha must be non-negative");
        }
        if self.batch == 0 || self.buffer_capacity < self.batch {
            return bad("need 0 < batch <= buffer_capacity");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden sizes must be non-empty and positive");
        }
        if !(self.log_std_min < self.log_std_max) {
            return bad("log_std_min must be below log_std_max");
        }
        if [self.lr_v, self.lr_q, self.lr_pi].iter().any(|l| !(*l > 0.0)) {
            return bad("learning rates must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub r: f64,
    pub s_next: Vec<f64>,
    pub done: bool,
}

/// Fixed-capacity FIFO replay memory with uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer { capacity, items: VecDeque::with_capacity(capacity.min(1 << 16)) }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.items[i]
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    /// Indices drawn uniformly with replacement.
    pub fn sample_indices<R: Rng>(&self, rng: &mut R, n: usize) -> Vec<usize> {
        (0..n).map(|_| rng.random_range(0..self.items.len())).collect()
    }

    pub fn batch(&self, idx: &[usize]) -> Batch {
        Batch::from_transitions(idx.iter().map(|&i| &self.items[i]))
    }
}

/// Row-per-sample minibatch.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub s: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub r: Vec<f64>,
    pub s_next: DMatrix<f64>,
    pub done: Vec<bool>,
}

impl Batch {
    pub fn from_transitions<'a>(ts: impl Iterator<Item = &'a Transition>) -> Batch {
        let ts: Vec<&Transition> = ts.collect();
        let (n, sd, ad) = (ts.len(), ts[0].s.len(), ts[0].a.len());
        Batch {
            s: DMatrix::from_fn(n, sd, |i, j| ts[i].s[j]),
            a: DMatrix::from_fn(n, ad, |i, j| ts[i].a[j]),
            r: ts.iter().map(|t| t.r).collect(),
            s_next: DMatrix::from_fn(n, sd, |i, j| ts[i].s_next[j]),
            done: ts.iter().map(|t| t.done).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    fn dump(&self) -> String {
        let mut out = String::new();
        for i in 0..self.len() {
            out.push_str(&format!(
                "[s={:?} a={:?} r={} s'={:?} done={}] ",
                self.s.row(i).iter().collect::<Vec<_>>(),
                self.a.row(i).iter().collect::<Vec<_>>(),
                self.r[i],
                self.s_next.row(i).iter().collect::<Vec<_>>(),
                self.done[i]
            ));
        }
        out
    }
}

fn hcat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    m.columns_mut(0, a.ncols()).copy_from(a);
    m.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    m
}

/// `log(1 − tanh²(u))`, stable for large `|u|`.
fn log_one_minus_tanh2(u: f64) -> f64 {
    2.0 * (std::f64::consts::LN_2 - u - softplus(-2.0 * u))
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// Squashed Gaussian policy output for a batch.
#[derive(Debug, Clone)]
pub struct PolicySample {
    /// Actions in `(-1, 1)`, one row per sample.
    pub a: DMatrix<f64>,
    pub log_prob: Vec<f64>,
    /// Pre-squash mean.
    pub mu: DMatrix<f64>,
    log_std: DMatrix<f64>,
    clamped: DMatrix<bool>,
    eps: DMatrix<f64>,
}

/// Samples `a = tanh(μ + σ·ε)` with the tanh-corrected log density, or
/// `tanh(μ)` when `deterministic` (log-prob then uses `ε = 0`).
pub fn sample_action(
    policy: &Mlp,
    s: &DMatrix<f64>,
    eps: &DMatrix<f64>,
    deterministic: bool,
    log_std_bounds: (f64, f64),
) -> PolicySample {
    sample_with_cache(policy, s, eps, deterministic, log_std_bounds).0
}

fn sample_with_cache(
    policy: &Mlp,
    s: &DMatrix<f64>,
    eps: &DMatrix<f64>,
    deterministic: bool,
    (lo, hi): (f64, f64),
) -> (PolicySample, MlpCache) {
    let (out, cache) = policy.forward(s);
    let ad = out.ncols() / 2;
    let n = out.nrows();
    let mu = out.columns(0, ad).into_owned();
    let raw = out.columns(ad, ad);
    let clamped = raw.map(|v| v < lo || v > hi);
    let log_std = raw.map(|v| v.clamp(lo, hi));
    let eps = if deterministic { DMatrix::zeros(n, ad) } else { eps.clone() };
    let u = DMatrix::from_fn(n, ad, |i, j| mu[(i, j)] + log_std[(i, j)].exp() * eps[(i, j)]);
    let a = u.map(f64::tanh);
    let log_prob = (0..n)
        .map(|i| {
            (0..ad)
                .map(|j| -0.5 * eps[(i, j)].powi(2) - log_std[(i, j)] - HALF_LN_2PI - log_one_minus_tanh2(u[(i, j)]))
                .sum()
        })
        .collect();
    (PolicySample { a, log_prob, mu, log_std, clamped, eps }, cache)
}

/// `min(Q₁, Q₂)(s, a) − α·log π(a|s)` for a fresh sample `a ~ π(s)`.
pub fn soft_value_target(q1: &Mlp, q2: &Mlp, policy: &Mlp, s: &DMatrix<f64>, eps: &DMatrix<f64>, alpha: f64, log_std_bounds: (f64, f64)) -> Vec<f64> {
    let ps = sample_action(policy, s, eps, false, log_std_bounds);
    let sa = hcat(s, &ps.a);
    let (v1, v2) = (q1.predict(&sa), q2.predict(&sa));
    (0..s.nrows()).map(|i| v1[(i, 0)].min(v2[(i, 0)]) - alpha * ps.log_prob[i]).collect()
}

/// `½·mean[(f(x) − y)²]` and its parameter gradient for a scalar-output net.
pub fn regression_loss_grad(net: &Mlp, x: &DMatrix<f64>, y: &[f64]) -> (f64, Vec<f64>) {
    let (out, cache) = net.forward(x);
    let n = y.len() as f64;
    let resid = DMatrix::from_fn(y.len(), 1, |i, _| out[(i, 0)] - y[i]);
    let loss = 0.5 * resid.iter().map(|r| r * r).sum::<f64>() / n;
    let (g, _) = net.backward(&cache, &(resid / n));
    (loss, g)
}

/// Bellman targets `r + discount·(1 − done)·V̄(s')`.
pub fn q_targets(target_v: &Mlp, batch: &Batch, discount: f64) -> Vec<f64> {
    let v = target_v.predict(&batch.s_next);
    (0..batch.len())
        .map(|i| batch.r[i] + if batch.done[i] { 0.0 } else { discount * v[(i, 0)] })
        .collect()
}

/// Reparameterised policy objective `mean[α·log π(a|s) − min(Q₁,Q₂)(s,a)]`
/// and its gradient with respect to the policy parameters.
pub fn policy_loss_grad(
    policy: &Mlp,
    q1: &Mlp,
    q2: &Mlp,
    s: &DMatrix<f64>,
    eps: &DMatrix<f64>,
    alpha: f64,
    log_std_bounds: (f64, f64),
) -> (f64, Vec<f64>) {
    let (ps, cache) = sample_with_cache(policy, s, eps, false, log_std_bounds);
    let n = s.nrows();
    let ad = ps.a.ncols();
    let sd = s.ncols();
    let sa = hcat(s, &ps.a);
    let (o1, c1) = q1.forward(&sa);
    let (o2, c2) = q2.forward(&sa);
    let pick1: Vec<bool> = (0..n).map(|i| o1[(i, 0)] <= o2[(i, 0)]).collect();
    let sel = |w: bool| DMatrix::from_fn(n, 1, |i, _| if pick1[i] == w { 1.0 } else { 0.0 });
    let (_, dx1) = q1.backward(&c1, &sel(true));
    let (_, dx2) = q2.backward(&c2, &sel(false));
    let mut loss = 0.0;
    let mut d_out = DMatrix::zeros(n, 2 * ad);
    for i in 0..n {
        let qmin = o1[(i, 0)].min(o2[(i, 0)]);
        loss += alpha * ps.log_prob[i] - qmin;
        for j in 0..ad {
            let a = ps.a[(i, j)];
            let sigma_eps = ps.log_std[(i, j)].exp() * ps.eps[(i, j)];
            let dq_da = dx1[(i, sd + j)] + dx2[(i, sd + j)];
            let dq_du = dq_da * (1.0 - a * a);
            // ∂logπ/∂u = 2·tanh(u); ∂u/∂μ = 1; ∂u/∂logσ = σε
            let dlp_dmu = 2.0 * a;
            let dlp_dls = -1.0 + 2.0 * a * sigma_eps;
            d_out[(i, j)] = (alpha * dlp_dmu - dq_du) / n as f64;
            d_out[(i, ad + j)] = if ps.clamped[(i, j)] {
                0.0
            } else {
                (alpha * dlp_dls - dq_du * sigma_eps) / n as f64
            };
        }
    }
    let (g, _) = policy.backward(&cache, &d_out);
    (loss / n as f64, g)
}

/// `target ← τ·online + (1 − τ)·target`.
pub fn soft_update_target(target: &mut Mlp, online: &Mlp, tau: f64) {
    for (t, o) in target.params.iter_mut().zip(&online.params) {
        *t = tau * o + (1.0 - tau) * *t;
    }
}

/// One gradient step of `net` toward regression targets; returns the pre-step loss.
pub fn update_regression(net: &mut Mlp, opt: &mut Adam, x: &DMatrix<f64>, y: &[f64]) -> f64 {
    let (loss, g) = regression_loss_grad(net, x, y);
    opt.step(&mut net.params, &g);
    loss
}

/// Losses before the step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Losses {
    pub value: f64,
    pub q1: f64,
    pub q2: f64,
    pub policy: f64,
}

/// Full agent state.
#[derive(Debug, Clone)]
pub struct Sac {
    pub hp: SacHyperParams,
    pub policy: Mlp,
    pub v: Mlp,
    pub v_target: Mlp,
    pub q1: Mlp,
    pub q2: Mlp,
    opt_pi: Adam,
    opt_v: Adam,
    opt_q1: Adam,
    opt_q2: Adam,
    rng: ChaCha8Rng,
    state_dim: usize,
    action_dim: usize,
}

impl Sac {
    pub fn new(state_dim: usize, action_dim: usize, hp: SacHyperParams) -> Result<Self, SacError> {
        hp.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
        let dims = |i: usize, o: usize| {
            let mut d = vec![i];
            d.extend(&hp.hidden);
            d.push(o);
            d
        };
        let policy = Mlp::new(&dims(state_dim, 2 * action_dim), Activation::Tanh, &mut rng);
        let v = Mlp::new(&dims(state_dim, 1), Activation::Tanh, &mut rng);
        let q1 = Mlp::new(&dims(state_dim + action_dim, 1), Activation::Tanh, &mut rng);
        let q2 = Mlp::new(&dims(state_dim + action_dim, 1), Activation::Tanh, &mut rng);
        let v_target = v.clone();
        Ok(Sac {
            opt_pi: Adam::new(policy.params.len(), hp.lr_pi),
            opt_v: Adam::new(v.params.len(), hp.lr_v),
            opt_q1: Adam::new(q1.params.len(), hp.lr_q),
            opt_q2: Adam::new(q2.params.len(), hp.lr_q),
            policy,
            v,
            v_target,
            q1,
            q2,
            rng,
            state_dim,
            action_dim,
            hp,
        })
    }

    fn log_std_bounds(&self) -> (f64, f64) {
        (self.hp.log_std_min, self.hp.log_std_max)
    }

    fn noise(&mut self, n: usize) -> DMatrix<f64> {
        let ad = self.action_dim;
        DMatrix::from_fn(n, ad, |_, _| StandardNormal.sample(&mut self.rng))
    }

    /// Draws an action for one state.
    pub fn act(&mut self, s: &[f64], deterministic: bool) -> Vec<f64> {
        let eps = self.noise(1);
        let x = DMatrix::from_row_slice(1, s.len(), s);
        sample_action(&self.policy, &x, &eps, deterministic, self.log_std_bounds()).a.row(0).iter().copied().collect()
    }

    /// One pass of value, Q, policy and target updates.
    pub fn update(&mut self, batch: &Batch, step: usize) -> Result<Losses, SacError> {
        let bounds = self.log_std_bounds();
        let n = batch.len();
        let eps_v = self.noise(n);
        let v_targets = soft_value_target(&self.q1, &self.q2, &self.policy, &batch.s, &eps_v, self.hp.alpha, bounds);
        let y = q_targets(&self.v_target, batch, self.hp.discount);
        let sa = hcat(&batch.s, &batch.a);

        let value = update_regression(&mut self.v, &mut self.opt_v, &batch.s, &v_targets);
        check(value, "value", step, batch)?;
        let q1 = update_regression(&mut self.q1, &mut self.opt_q1, &sa, &y);
        check(q1, "q1", step, batch)?;
        let q2 = update_regression(&mut self.q2, &mut self.opt_q2, &sa, &y);
        check(q2, "q2", step, batch)?;

        let eps_pi = self.noise(n);
        let (policy, g) = policy_loss_grad(&self.policy, &self.q1, &self.q2, &batch.s, &eps_pi, self.hp.alpha, bounds);
        check(policy, "policy", step, batch)?;
        self.opt_pi.step(&mut self.policy.params, &g);

        soft_update_target(&mut self.v_target, &self.v, self.hp.tau);
        Ok(Losses { value, q1, q2, policy })
    }

    pub fn trained_policy(&self, state_bounds: Vec<(f64, f64)>) -> TrainedPolicy {
        TrainedPolicy {
            format: CHECKPOINT_FORMAT.to_string(),
            state_dim: self.state_dim,
            action_dim: self.action_dim,
            net: self.policy.clone(),
            hp: self.hp.clone(),
            seed: self.hp.seed,
            state_bounds,
        }
    }
}

fn check(loss: f64, name: &'static str, step: usize, batch: &Batch) -> Result<(), SacError> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(SacError::NonFinite { step, loss: name, dump: batch.dump() })
    }
}

/// Policy snapshot written to disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedPolicy {
    pub format: String,
    pub state_dim: usize,
    pub action_dim: usize,
    pub net: Mlp,
    pub hp: SacHyperParams,
    pub seed: u64,
    /// Min-max bounds the state was normalised with.
    pub state_bounds: Vec<(f64, f64)>,
}

impl TrainedPolicy {
    /// Deterministic action `tanh(μ(s))`.
    pub fn act(&self, s: &[f64]) -> Vec<f64> {
        let x = DMatrix::from_row_slice(1, s.len(), s);
        let eps = DMatrix::zeros(1, self.action_dim);
        sample_action(&self.net, &x, &eps, true, (self.hp.log_std_min, self.hp.log_std_max))
            .a
            .row(0)
            .iter()
            .copied()
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<(), SacError> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, SacError> {
        let p: TrainedPolicy = serde_json::from_slice(&std::fs::read(path)?)?;
        if p.format != CHECKPOINT_FORMAT {
            return Err(SacError::Checkpoint(format!("unsupported format '{}'", p.format)));
        }
        let net = Mlp::from_params(p.net.sizes.clone(), p.net.activation, p.net.params.clone())?;
        if net.input_dim() != p.state_dim || net.output_dim() != 2 * p.action_dim {
            return Err(SacError::Checkpoint("layer sizes disagree with state/action dims".into()));
        }
        Ok(p)
    }
}

pub struct EnvStep {
    pub next_state: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

/// Episodic environment with actions in `[-1, 1]`.
pub trait Environment {
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    /// Starts episode number `episode`.
    fn reset(&mut self, episode: usize) -> Result<Vec<f64>, String>;
    fn step(&mut self, action: &[f64]) -> Result<EnvStep, String>;
}

/// One-dimensional bandit-like task: reward `−(a − 0.3)²`, ten steps per
/// episode, state is the step fraction.
#[derive(Debug, Clone, Default)]
pub struct ToyEnv {
    t: usize,
}

impl ToyEnv {
    pub const TARGET: f64 = 0.3;
    pub const LEN: usize = 10;
}

impl Environment for ToyEnv {
    fn state_dim(&self) -> usize {
        1
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn reset(&mut self, _episode: usize) -> Result<Vec<f64>, String> {
        self.t = 0;
        Ok(vec![0.0])
    }

    fn step(&mut self, action: &[f64]) -> Result<EnvStep, String> {
        if self.t >= Self::LEN {
            return Err("episode finished".into());
        }
        self.t += 1;
        Ok(EnvStep {
            next_state: vec![self.t as f64 / Self::LEN as f64],
            reward: -(action[0] - Self::TARGET).powi(2),
            done: self.t == Self::LEN,
        })
    }
}

/// One learning-curve row per finished episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    pub episode: usize,
    /// Return of the behaviour (sampling) policy.
    pub reward: f64,
    /// Return of the deterministic policy on the same episode index, if evaluated.
    pub greedy_reward: Option<f64>,
}

pub fn write_curve_csv<W: Write>(curve: &[CurvePoint], header_comment: Option<&str>, mut w: W) -> Result<(), SacError> {
    if let Some(c) = header_comment {
        writeln!(w, "# {c}")?;
    }
    let mut cw = csv::Writer::from_writer(w);
    for p in curve {
        cw.serialize(p)?;
    }
    cw.flush()?;
    Ok(())
}

pub struct TrainOutcome {
    pub agent: Sac,
    pub curve: Vec<CurvePoint>,
    pub steps: usize,
}

/// Runs one episode of the deterministic policy and returns its return.
pub fn rollout<E: Environment>(env: &mut E, episode: usize, mut policy: impl FnMut(&[f64]) -> Vec<f64>) -> Result<f64, SacError> {
    let mut s = env.reset(episode).map_err(SacError::Env)?;
    let mut total = 0.0;
    loop {
        let a = policy(&s);
        let st = env.step(&a).map_err(SacError::Env)?;
        total += st.reward;
        s = st.next_state;
        if st.done {
            return Ok(total);
        }
    }
}

/// Trains for `hp.total_steps` environment steps. Fully determined by
/// `hp.seed` and the environment.
pub fn train<E: Environment + Clone>(env: &mut E, hp: &SacHyperParams) -> Result<TrainOutcome, SacError> {
    let mut agent = Sac::new(env.state_dim(), env.action_dim(), hp.clone())?;
    let mut eval_env = env.clone();
    let mut buffer = ReplayBuffer::new(hp.buffer_capacity);
    let mut episode = 0;
    let mut s = env.reset(episode).map_err(SacError::Env)?;
    let mut ep_return = 0.0;
    let mut curve = Vec::new();
    for step in 0..hp.total_steps {
        let a: Vec<f64> = if step < hp.warmup {
            (0..env.action_dim()).map(|_| agent.rng.random_range(-1.0..=1.0)).collect()
        } else {
            agent.act(&s, false)
        };
        let st = env.step(&a).map_err(SacError::Env)?;
        ep_return += st.reward;
        buffer.push(Transition { s: s.clone(), a, r: st.reward, s_next: st.next_state.clone(), done: st.done });
        s = st.next_state;

        if step >= hp.warmup && buffer.len() >= hp.batch {
            for _ in 0..hp.gradient_steps {
                let idx = buffer.sample_indices(&mut agent.rng, hp.batch);
                let batch = buffer.batch(&idx);
                agent.update(&batch, step)?;
            }
        }

        if st.done {
            let greedy_reward = if hp.greedy_eval {
                let pol = agent.policy.clone();
                let bounds = agent.log_std_bounds();
                let ad = agent.action_dim;
                Some(rollout(&mut eval_env, episode, |x| {
                    let xs = DMatrix::from_row_slice(1, x.len(), x);
                    sample_action(&pol, &xs, &DMatrix::zeros(1, ad), true, bounds).a.row(0).iter().copied().collect()
                })?)
            } else {
                None
            };
            curve.push(CurvePoint { step: step + 1, episode, reward: ep_return, greedy_reward });
            episode += 1;
            ep_return = 0.0;
            s = env.reset(episode).map_err(SacError::Env)?;
        }
    }
    Ok(TrainOutcome { agent, curve, steps: hp.total_steps })
}

/// Trailing moving average over `window` points (shorter at the start).
pub fn smooth(values: &[f64], window: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    for i in 0..values.len() {
        acc += values[i];
        if i >= window {
            acc -= values[i - window];
        }
        out.push(acc / (i + 1).min(window) as f64);
    }
    out
}

/// Worst relative mismatch between analytic and central-difference gradients
/// for each loss, on freshly initialised `s→8→8→heads` networks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheck {
    pub value: f64,
    pub q1: f64,
    pub q2: f64,
    pub policy: f64,
}

impl GradCheck {
    pub fn worst(&self) -> f64 {
        self.value.max(self.q1).max(self.q2).max(self.policy)
    }
}

/// Relative error `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

pub const FD_STEP: f64 = 1e-6;
pub const FD_FLOOR: f64 = 1e-6;

fn fd_worst(params: &[f64], analytic: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let mut p = params.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + FD_STEP;
        let up = f(&p);
        p[i] = orig - FD_STEP;
        let down = f(&p);
        p[i] = orig;
        worst = worst.max(relative_error(analytic[i], (up - down) / (2.0 * FD_STEP), FD_FLOOR));
    }
    worst
}

/// Compares every analytic gradient with central finite differences.
pub fn gradient_check(seed: u64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (sd, ad, n) = (3, 3, 16);
    let policy = Mlp::new(&[sd, 8, 8, 2 * ad], Activation::Tanh, &mut rng);
    let v = Mlp::new(&[sd, 8, 8, 1], Activation::Tanh, &mut rng);
    let q1 = Mlp::new(&[sd + ad, 8, 8, 1], Activation::Tanh, &mut rng);
    let q2 = Mlp::new(&[sd + ad, 8, 8, 1], Activation::Tanh, &mut rng);
    let s = DMatrix::from_fn(n, sd, |_, _| rng.random_range(0.0..1.0));
    let a = DMatrix::from_fn(n, ad, |_, _| rng.random_range(-1.0..1.0));
    let eps = DMatrix::from_fn(n, ad, |_, _| StandardNormal.sample(&mut rng));
    let y: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let bounds = (-20.0, 2.0);
    let alpha = 0.2;
    let sa = hcat(&s, &a);

    let reg = |net: &Mlp, x: &DMatrix<f64>| {
        let (_, g) = regression_loss_grad(net, x, &y);
        fd_worst(&net.params, &g, |p| {
            let m = Mlp { params: p.to_vec(), ..net.clone() };
            regression_loss_grad(&m, x, &y).0
        })
    };
    let (_, gp) = policy_loss_grad(&policy, &q1, &q2, &s, &eps, alpha, bounds);
    let pol = fd_worst(&policy.params, &gp, |p| {
        let m = Mlp { params: p.to_vec(), ..policy.clone() };
        policy_loss_grad(&m, &q1, &q2, &s, &eps, alpha, bounds).0
    });
    GradCheck { value: reg(&v, &s), q1: reg(&q1, &sa), q2: reg(&q2, &sa), policy: pol }
}
