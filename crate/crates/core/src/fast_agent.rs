//! Soft actor-critic for the continuous reactive-power devices.
//!
//! The policy is a tanh-squashed diagonal Gaussian; two critics and their
//! Polyak-averaged targets estimate soft Q-values.

use std::io::{Read, Write};
use std::f64::consts::{LN_2, PI};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::nn::{polyak, read_networks, softplus, write_networks, Activation, Adam, AdamConfig, Mlp, NnError};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
/// Sampled actions stay this far inside `(-1, 1)`, so tanh can be inverted.
pub const ACTION_EDGE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FastAgentConfig {
    pub hidden: Vec<usize>,
    pub gamma: f64,
    pub alpha: f64,
    pub polyak: f64,
    pub batch_size: usize,
    pub adam: AdamConfig,
}

impl Default for FastAgentConfig {
    fn default() -> Self {
        Self {
            hidden: vec![128, 128],
            gamma: 0.99,
            alpha: 0.05,
            polyak: 0.995,
            batch_size: 128,
            adam: AdamConfig::default(),
        }
    }
}

/// Squashed Gaussian policy `a = tanh(mu + sigma * xi)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPolicy {
    net: Mlp,
    action_dim: usize,
}

/// Per-row quantities of a reparameterized draw.
struct Draw {
    tape: crate::nn::Tape,
    /// Pre-squash sample, `n x d`.
    u: Vec<f64>,
    sigma: Vec<f64>,
    /// Whether the raw log-std sat inside the clamp (gradient passes).
    live: Vec<bool>,
    actions: Vec<f64>,
    log_prob: Vec<f64>,
}

/// `log(1 - tanh(u)^2)` computed without cancellation.
pub fn log_one_minus_tanh_sq(u: f64) -> f64 {
    2.0 * (LN_2 - u - softplus(-2.0 * u))
}

impl GaussianPolicy {
    pub fn new<R: Rng + ?Sized>(state_dim: usize, action_dim: usize, hidden: &[usize], rng: &mut R) -> Self {
        let mut sizes = vec![state_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(2 * action_dim);
        Self {
            net: Mlp::new(&sizes, Activation::Relu, Activation::Identity, rng),
            action_dim,
        }
    }

    pub fn from_net(net: Mlp) -> Result<Self, NnError> {
        if net.output_dim() % 2 != 0 {
            return Err(NnError::Shape("policy head must output mean and log-std pairs".into()));
        }
        Ok(Self {
            action_dim: net.output_dim() / 2,
            net,
        })
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }
    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }
    pub fn state_dim(&self) -> usize {
        self.net.input_dim()
    }
    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    /// Means and clamped log-stds, each `n x d`.
    pub fn mean_log_std(&self, states: &[f64], n: usize) -> Result<(Vec<f64>, Vec<f64>), NnError> {
        let out = self.net.predict(states, n)?;
        Ok(self.split(&out))
    }

    fn split(&self, out: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let d = self.action_dim;
        let mut mu = Vec::with_capacity(out.len() / 2);
        let mut ls = Vec::with_capacity(out.len() / 2);
        for row in out.chunks_exact(2 * d) {
            mu.extend_from_slice(&row[..d]);
            ls.extend(row[d..].iter().map(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX)));
        }
        (mu, ls)
    }

    fn draw(&self, states: &[f64], n: usize, xi: &[f64]) -> Result<Draw, NnError> {
        let d = self.action_dim;
        if xi.len() != n * d {
            return Err(NnError::Shape(format!("{} noise values for {n} rows of {d}", xi.len())));
        }
        let tape = self.net.forward(states, n)?;
        let out = tape.output();
        let mut u = vec![0.0; n * d];
        let mut sigma = vec![0.0; n * d];
        let mut live = vec![false; n * d];
        let mut actions = vec![0.0; n * d];
        let mut log_prob = vec![0.0; n];
        for r in 0..n {
            let mut lp = 0.0;
            for j in 0..d {
                let raw = out[r * 2 * d + d + j];
                let ls = raw.clamp(LOG_STD_MIN, LOG_STD_MAX);
                let k = r * d + j;
                live[k] = (LOG_STD_MIN..=LOG_STD_MAX).contains(&raw);
                sigma[k] = ls.exp();
                u[k] = out[r * 2 * d + j] + sigma[k] * xi[k];
                actions[k] = u[k].tanh().clamp(-1.0 + ACTION_EDGE, 1.0 - ACTION_EDGE);
                lp += -0.5 * xi[k] * xi[k] - ls - 0.5 * (2.0 * PI).ln() - log_one_minus_tanh_sq(u[k]);
            }
            log_prob[r] = lp;
        }
        Ok(Draw {
            tape,
            u,
            sigma,
            live,
            actions,
            log_prob,
        })
    }

    /// Reparameterized actions and their log-densities for given noise.
    pub fn sample_with_noise(&self, states: &[f64], n: usize, xi: &[f64]) -> Result<(Vec<f64>, Vec<f64>), NnError> {
        let d = self.draw(states, n, xi)?;
        Ok((d.actions, d.log_prob))
    }

    pub fn sample<R: Rng + ?Sized>(&self, states: &[f64], n: usize, rng: &mut R) -> Result<(Vec<f64>, Vec<f64>), NnError> {
        let xi: Vec<f64> = (0..n * self.action_dim).map(|_| rng.sample(StandardNormal)).collect();
        self.sample_with_noise(states, n, &xi)
    }

    /// `tanh(mu)`.
    pub fn greedy(&self, states: &[f64], n: usize) -> Result<Vec<f64>, NnError> {
        let (mu, _) = self.mean_log_std(states, n)?;
        Ok(mu.into_iter().map(f64::tanh).collect())
    }

    /// Log-density of given actions under the current parameters.
    pub fn log_density(&self, states: &[f64], actions: &[f64], n: usize) -> Result<Vec<f64>, NnError> {
        let d = self.action_dim;
        if actions.len() != n * d {
            return Err(NnError::Shape(format!("{} actions for {n} rows of {d}", actions.len())));
        }
        let (mu, ls) = self.mean_log_std(states, n)?;
        let mut out = vec![0.0; n];
        for r in 0..n {
            let mut lp = 0.0;
            for j in 0..d {
                let k = r * d + j;
                let u = actions[k].clamp(-1.0 + ACTION_EDGE, 1.0 - ACTION_EDGE).atanh();
                let z = (u - mu[k]) / ls[k].exp();
                lp += -0.5 * z * z - ls[k] - 0.5 * (2.0 * PI).ln() - log_one_minus_tanh_sq(u);
            }
            out[r] = lp;
        }
        Ok(out)
    }
}

/// Minibatch of fast transitions, row-major.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FastBatch {
    pub n: usize,
    pub states: Vec<f64>,
    pub actions: Vec<f64>,
    pub rewards: Vec<f64>,
    pub next_states: Vec<f64>,
    pub dones: Vec<bool>,
}

/// Standard-normal draws consumed by one update.
#[derive(Debug, Clone, PartialEq)]
pub struct FastNoise {
    /// Target-action noise at `s'`.
    pub next: Vec<f64>,
    /// Policy-loss noise at `s`.
    pub current: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FastLosses {
    pub critic: f64,
    pub policy: f64,
    /// Mean of `-log pi` over the policy-loss draws.
    pub entropy: f64,
}

#[derive(Debug, Clone)]
pub struct FastAgent {
    cfg: FastAgentConfig,
    policy: GaussianPolicy,
    critics: [Mlp; 2],
    targets: [Mlp; 2],
    opt_policy: Adam,
    opt_critics: [Adam; 2],
}

impl FastAgent {
    pub fn new<R: Rng + ?Sized>(state_dim: usize, action_dim: usize, cfg: FastAgentConfig, rng: &mut R) -> Self {
        let policy = GaussianPolicy::new(state_dim, action_dim, &cfg.hidden, rng);
        let mut sizes = vec![state_dim + action_dim];
        sizes.extend_from_slice(&cfg.hidden);
        sizes.push(1);
        let critics = [
            Mlp::new(&sizes, Activation::Relu, Activation::Identity, rng),
            Mlp::new(&sizes, Activation::Relu, Activation::Identity, rng),
        ];
        let n_q = critics[0].n_params();
        Self {
            opt_policy: Adam::new(cfg.adam, policy.net().n_params()),
            opt_critics: [Adam::new(cfg.adam, n_q), Adam::new(cfg.adam, n_q)],
            targets: critics.clone(),
            critics,
            policy,
            cfg,
        }
    }

    pub fn config(&self) -> &FastAgentConfig {
        &self.cfg
    }
    pub fn policy(&self) -> &GaussianPolicy {
        &self.policy
    }
    pub fn policy_mut(&mut self) -> &mut GaussianPolicy {
        &mut self.policy
    }
    pub fn critics(&self) -> &[Mlp; 2] {
        &self.critics
    }
    pub fn critics_mut(&mut self) -> &mut [Mlp; 2] {
        &mut self.critics
    }
    pub fn targets(&self) -> &[Mlp; 2] {
        &self.targets
    }

    /// Copies the online critics into the targets.
    pub fn sync_targets(&mut self) {
        self.targets = self.critics.clone();
    }

    /// Action for one state: a sample when exploring, `tanh(mu)` otherwise.
    pub fn act<R: Rng + ?Sized>(&self, state: &[f64], explore: bool, rng: &mut R) -> Result<Vec<f64>, NnError> {
        if explore {
            Ok(self.policy.sample(state, 1, rng)?.0)
        } else {
            self.policy.greedy(state, 1)
        }
    }

    pub fn q_values(critic: &Mlp, states: &[f64], actions: &[f64], n: usize) -> Result<Vec<f64>, NnError> {
        critic.predict(&concat_rows(states, actions, n), n)
    }

    /// Bellman targets `r + gamma (1 - d) (min Q_targ(s', a') - alpha log pi(a'|s'))`.
    pub fn critic_targets(&self, batch: &FastBatch, next_noise: &[f64]) -> Result<Vec<f64>, NnError> {
        let n = batch.n;
        let (a2, lp2) = self.policy.sample_with_noise(&batch.next_states, n, next_noise)?;
        let q1 = Self::q_values(&self.targets[0], &batch.next_states, &a2, n)?;
        let q2 = Self::q_values(&self.targets[1], &batch.next_states, &a2, n)?;
        Ok((0..n)
            .map(|i| {
                let cont = if batch.dones[i] { 0.0 } else { 1.0 };
                batch.rewards[i] + self.cfg.gamma * cont * (q1[i].min(q2[i]) - self.cfg.alpha * lp2[i])
            })
            .collect())
    }

    /// Critic loss `0.5 (MSE_1 + MSE_2)` and its gradients per critic.
    pub fn critic_loss(&self, batch: &FastBatch, targets: &[f64]) -> Result<(f64, [Vec<f64>; 2]), NnError> {
        let n = batch.n;
        let x = concat_rows(&batch.states, &batch.actions, n);
        let mut loss = 0.0;
        let mut grads: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
        for (c, critic) in self.critics.iter().enumerate() {
            let tape = critic.forward(&x, n)?;
            let diff: Vec<f64> = tape.output().iter().zip(targets).map(|(q, y)| q - y).collect();
            loss += 0.5 * diff.iter().map(|d| d * d).sum::<f64>() / n as f64;
            let dq: Vec<f64> = diff.iter().map(|d| d / n as f64).collect();
            grads[c] = critic.backward(&tape, &dq)?.params;
        }
        Ok((loss, grads))
    }

    /// Policy loss `mean(alpha log pi - min Q)` with its gradient and the
    /// entropy estimate.
    pub fn policy_loss(&self, states: &[f64], n: usize, xi: &[f64]) -> Result<(f64, Vec<f64>, f64), NnError> {
        let d = self.policy.action_dim();
        let alpha = self.cfg.alpha;
        let draw = self.policy.draw(states, n, xi)?;
        let x = concat_rows(states, &draw.actions, n);
        let t1 = self.critics[0].forward(&x, n)?;
        let t2 = self.critics[1].forward(&x, n)?;
        let (q1, q2) = (t1.output(), t2.output());
        let mut loss = 0.0;
        let mut d1 = vec![0.0; n];
        let mut d2 = vec![0.0; n];
        for i in 0..n {
            let q = q1[i].min(q2[i]);
            loss += alpha * draw.log_prob[i] - q;
            if q1[i] <= q2[i] {
                d1[i] = -1.0 / n as f64;
            } else {
                d2[i] = -1.0 / n as f64;
            }
        }
        let sd = self.policy.state_dim();
        let g1 = self.critics[0].backward(&t1, &d1)?.input;
        let g2 = self.critics[1].backward(&t2, &d2)?.input;
        let mut dout = vec![0.0; n * 2 * d];
        for i in 0..n {
            for j in 0..d {
                let k = i * d + j;
                let dq_da = g1[i * (sd + d) + sd + j] + g2[i * (sd + d) + sd + j];
                let t = draw.u[k].tanh();
                let da_du = 1.0 - t * t;
                let s_xi = draw.sigma[k] * xi[k];
                let dl_dmu = alpha * 2.0 * t / n as f64 + dq_da * da_du;
                let dl_dls = alpha * (-1.0 + 2.0 * t * s_xi) / n as f64 + dq_da * da_du * s_xi;
                dout[i * 2 * d + j] = dl_dmu;
                dout[i * 2 * d + d + j] = if draw.live[k] { dl_dls } else { 0.0 };
            }
        }
        let grads = self.policy.net().backward(&draw.tape, &dout)?.params;
        let entropy = -draw.log_prob.iter().sum::<f64>() / n as f64;
        Ok((loss / n as f64, grads, entropy))
    }

    /// One gradient step on both critics, then the policy, then the targets.
    pub fn update_with_noise(&mut self, batch: &FastBatch, noise: &FastNoise) -> Result<FastLosses, NnError> {
        if batch.n == 0 {
            return Err(NnError::EmptyTape);
        }
        let y = self.critic_targets(batch, &noise.next)?;
        let (critic, [g1, g2]) = self.critic_loss(batch, &y)?;
        if !critic.is_finite() {
            return Err(NnError::NonFinite("critic loss"));
        }
        self.opt_critics[0].step(self.critics[0].params_mut(), &g1)?;
        self.opt_critics[1].step(self.critics[1].params_mut(), &g2)?;
        let (policy, gp, entropy) = self.policy_loss(&batch.states, batch.n, &noise.current)?;
        if !policy.is_finite() {
            return Err(NnError::NonFinite("policy loss"));
        }
        self.opt_policy.step(self.policy.net_mut().params_mut(), &gp)?;
        for c in 0..2 {
            polyak(self.targets[c].params_mut(), self.critics[c].params(), self.cfg.polyak);
        }
        Ok(FastLosses { critic, policy, entropy })
    }

    pub fn update<R: Rng + ?Sized>(&mut self, batch: &FastBatch, rng: &mut R) -> Result<FastLosses, NnError> {
        let m = batch.n * self.policy.action_dim();
        let noise = FastNoise {
            next: (0..m).map(|_| rng.sample(StandardNormal)).collect(),
            current: (0..m).map(|_| rng.sample(StandardNormal)).collect(),
        };
        self.update_with_noise(batch, &noise)
    }

    /// Saves policy, critics and targets. Optimizer moments are not kept.
    pub fn save<W: Write>(&self, out: W) -> Result<(), NnError> {
        write_networks(
            out,
            &[self.policy.net(), &self.critics[0], &self.critics[1], &self.targets[0], &self.targets[1]],
        )
    }

    /// Restores networks saved by [`FastAgent::save`]; shapes must match.
    pub fn load<R: Read>(&mut self, input: R) -> Result<(), NnError> {
        let nets = read_networks(input)?;
        let current = [self.policy.net(), &self.critics[0], &self.critics[1], &self.targets[0], &self.targets[1]];
        if nets.len() != 5 || nets.iter().zip(current).any(|(a, b)| a.sizes() != b.sizes()) {
            return Err(NnError::Checkpoint("fast agent checkpoint does not match this network layout".into()));
        }
        let mut it = nets.into_iter();
        *self.policy.net_mut() = it.next().unwrap();
        self.critics = [it.next().unwrap(), it.next().unwrap()];
        self.targets = [it.next().unwrap(), it.next().unwrap()];
        Ok(())
    }
}

fn concat_rows(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let (da, db) = (a.len() / n.max(1), b.len() / n.max(1));
    let mut x = Vec::with_capacity(a.len() + b.len());
    for i in 0..n {
        x.extend_from_slice(&a[i * da..(i + 1) * da]);
        x.extend_from_slice(&b[i * db..(i + 1) * db]);
    }
    x
}
