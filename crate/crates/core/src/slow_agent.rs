//! Multi-discrete soft actor-critic for the tap-changing devices.
//!
//! The joint action space is the product of per-device tap sets. The policy
//! factorizes into one softmax head per device, and the critic mixes per-device
//! Q-tables with nonnegative weights, so the soft state value is a sum of
//! per-device terms and never needs the joint action space.

use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{
    log_softmax, polyak, read_networks, sigmoid, softplus, write_networks, Activation, Adam, AdamConfig, Mlp,
    NnError, Tape,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SlowAgentConfig {
    pub trunk: Vec<usize>,
    pub head_hidden: Vec<usize>,
    pub gamma: f64,
    pub alpha: f64,
    pub polyak: f64,
    pub batch_size: usize,
    pub adam: AdamConfig,
}

impl Default for SlowAgentConfig {
    fn default() -> Self {
        Self {
            trunk: vec![128],
            head_hidden: vec![128],
            gamma: 0.95,
            alpha: 0.05,
            polyak: 0.99,
            batch_size: 128,
            adam: AdamConfig::default(),
        }
    }
}

/// A shared ReLU trunk feeding independent heads.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiHeadNet {
    trunk: Mlp,
    heads: Vec<Mlp>,
}

#[derive(Debug, Clone)]
pub struct MultiTape {
    trunk: Tape,
    heads: Vec<Tape>,
}

impl MultiTape {
    pub fn head_output(&self, h: usize) -> &[f64] {
        self.heads[h].output()
    }
}

impl MultiHeadNet {
    pub fn new<R: Rng + ?Sized>(
        input: usize,
        trunk: &[usize],
        head_hidden: &[usize],
        outputs: &[usize],
        rng: &mut R,
    ) -> Self {
        let mut sizes = vec![input];
        sizes.extend_from_slice(trunk);
        let trunk_net = Mlp::new(&sizes, Activation::Relu, Activation::Relu, rng);
        let width = *sizes.last().unwrap();
        let heads = outputs
            .iter()
            .map(|&m| {
                let mut s = vec![width];
                s.extend_from_slice(head_hidden);
                s.push(m);
                Mlp::new(&s, Activation::Relu, Activation::Identity, rng)
            })
            .collect();
        Self { trunk: trunk_net, heads }
    }

    pub fn networks(&self) -> impl Iterator<Item = &Mlp> {
        std::iter::once(&self.trunk).chain(&self.heads)
    }

    pub fn networks_mut(&mut self) -> impl Iterator<Item = &mut Mlp> {
        std::iter::once(&mut self.trunk).chain(&mut self.heads)
    }

    pub fn n_params(&self) -> usize {
        self.networks().map(Mlp::n_params).sum()
    }

    pub fn input_dim(&self) -> usize {
        self.trunk.input_dim()
    }

    pub fn forward(&self, x: &[f64], n: usize) -> Result<MultiTape, NnError> {
        let trunk = self.trunk.forward(x, n)?;
        let heads = self
            .heads
            .iter()
            .map(|h| h.forward(trunk.output(), n))
            .collect::<Result<_, _>>()?;
        Ok(MultiTape { trunk, heads })
    }

    /// Parameter gradients per network, trunk first.
    pub fn backward(&self, tape: &MultiTape, douts: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, NnError> {
        let mut grads = Vec::with_capacity(self.heads.len() + 1);
        let mut dtrunk = vec![0.0; tape.trunk.output().len()];
        for ((head, t), d) in self.heads.iter().zip(&tape.heads).zip(douts) {
            let g = head.backward(t, d)?;
            for (a, b) in dtrunk.iter_mut().zip(&g.input) {
                *a += b;
            }
            grads.push(g.params);
        }
        grads.insert(0, self.trunk.backward(&tape.trunk, &dtrunk)?.params);
        Ok(grads)
    }

    fn optimizers(&self, cfg: AdamConfig) -> Vec<Adam> {
        self.networks().map(|n| Adam::new(cfg, n.n_params())).collect()
    }

    fn step(&mut self, opts: &mut [Adam], grads: &[Vec<f64>]) -> Result<(), NnError> {
        if grads.iter().flatten().any(|g| !g.is_finite()) {
            return Err(NnError::NonFinite("gradient"));
        }
        for ((net, opt), g) in self.networks_mut().zip(opts.iter_mut()).zip(grads) {
            opt.step(net.params_mut(), g)?;
        }
        Ok(())
    }

    fn polyak_from(&mut self, online: &MultiHeadNet, rho: f64) {
        for (t, o) in self.networks_mut().zip(online.networks()) {
            polyak(t.params_mut(), o.params(), rho);
        }
    }

    fn from_networks(nets: Vec<Mlp>) -> Self {
        let mut it = nets.into_iter();
        let trunk = it.next().expect("trunk network");
        Self {
            trunk,
            heads: it.collect(),
        }
    }
}

/// Per-device categorical policy.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiHeadPolicy {
    net: MultiHeadNet,
    dims: Vec<usize>,
}

/// Log-probabilities per head, each `n x m_i`.
pub type HeadLogProbs = Vec<Vec<f64>>;

impl MultiHeadPolicy {
    pub fn new<R: Rng + ?Sized>(state_dim: usize, dims: &[usize], cfg: &SlowAgentConfig, rng: &mut R) -> Self {
        Self {
            net: MultiHeadNet::new(state_dim, &cfg.trunk, &cfg.head_hidden, dims, rng),
            dims: dims.to_vec(),
        }
    }

    pub fn net(&self) -> &MultiHeadNet {
        &self.net
    }
    pub fn net_mut(&mut self) -> &mut MultiHeadNet {
        &mut self.net
    }
    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    fn log_probs_from(&self, tape: &MultiTape, n: usize) -> HeadLogProbs {
        self.dims
            .iter()
            .enumerate()
            .map(|(h, &m)| {
                let z = tape.head_output(h);
                (0..n).flat_map(|r| log_softmax(&z[r * m..(r + 1) * m])).collect()
            })
            .collect()
    }

    pub fn log_probs(&self, states: &[f64], n: usize) -> Result<HeadLogProbs, NnError> {
        let tape = self.net.forward(states, n)?;
        Ok(self.log_probs_from(&tape, n))
    }

    /// One draw per row; returns `n x n_heads` tap indices.
    pub fn sample<R: Rng + ?Sized>(&self, states: &[f64], n: usize, rng: &mut R) -> Result<Vec<usize>, NnError> {
        let lp = self.log_probs(states, n)?;
        let mut out = vec![0; n * self.dims.len()];
        for r in 0..n {
            for (h, &m) in self.dims.iter().enumerate() {
                out[r * self.dims.len() + h] = sample_categorical(&lp[h][r * m..(r + 1) * m], rng);
            }
        }
        Ok(out)
    }

    pub fn greedy(&self, states: &[f64], n: usize) -> Result<Vec<usize>, NnError> {
        let lp = self.log_probs(states, n)?;
        let mut out = vec![0; n * self.dims.len()];
        for r in 0..n {
            for (h, &m) in self.dims.iter().enumerate() {
                let row = &lp[h][r * m..(r + 1) * m];
                out[r * self.dims.len() + h] = (0..m).fold(0, |b, j| if row[j] > row[b] { j } else { b });
            }
        }
        Ok(out)
    }
}

/// Inverse-CDF draw from log-probabilities.
pub fn sample_categorical<R: Rng + ?Sized>(log_probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (j, lp) in log_probs.iter().enumerate() {
        acc += lp.exp();
        if u < acc {
            return j;
        }
    }
    log_probs.len() - 1
}

/// Per-device Q-tables plus a mixing head producing `c_0` and raw weights.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingCritic {
    net: MultiHeadNet,
    dims: Vec<usize>,
}

/// Critic outputs for a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedValues {
    /// Per-device Q-tables, each `n x m_i`.
    pub tables: Vec<Vec<f64>>,
    /// `n` offsets `c_0`.
    pub c0: Vec<f64>,
    /// Nonnegative weights, `n x n_heads`.
    pub weights: Vec<f64>,
    /// Raw (pre-softplus) weights, `n x n_heads`.
    pub raw: Vec<f64>,
}

impl MixingCritic {
    pub fn new<R: Rng + ?Sized>(state_dim: usize, dims: &[usize], cfg: &SlowAgentConfig, rng: &mut R) -> Self {
        let mut outputs = dims.to_vec();
        outputs.push(dims.len() + 1);
        Self {
            net: MultiHeadNet::new(state_dim, &cfg.trunk, &cfg.head_hidden, &outputs, rng),
            dims: dims.to_vec(),
        }
    }

    pub fn net(&self) -> &MultiHeadNet {
        &self.net
    }
    pub fn net_mut(&mut self) -> &mut MultiHeadNet {
        &mut self.net
    }

    fn values_from(&self, tape: &MultiTape, n: usize) -> MixedValues {
        let k = self.dims.len();
        let tables = (0..k).map(|h| tape.head_output(h).to_vec()).collect();
        let mix = tape.head_output(k);
        let mut c0 = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n * k);
        let mut raw = Vec::with_capacity(n * k);
        for row in mix.chunks_exact(k + 1) {
            c0.push(row[0]);
            raw.extend_from_slice(&row[1..]);
            weights.extend(row[1..].iter().map(|&v| softplus(v)));
        }
        MixedValues { tables, c0, weights, raw }
    }

    pub fn values(&self, states: &[f64], n: usize) -> Result<MixedValues, NnError> {
        let tape = self.net.forward(states, n)?;
        Ok(self.values_from(&tape, n))
    }
}

/// `c_0 + sum_i c_i Q_i[a_i]` per row.
pub fn joint_q(v: &MixedValues, dims: &[usize], actions: &[usize]) -> Vec<f64> {
    let k = dims.len();
    (0..v.c0.len())
        .map(|r| {
            v.c0[r]
                + (0..k)
                    .map(|h| v.weights[r * k + h] * v.tables[h][r * dims[h] + actions[r * k + h]])
                    .sum::<f64>()
        })
        .collect()
}

/// Soft value `c_0 + sum_i pi_i^T (c_i Q_i - alpha log pi_i)` per row.
pub fn state_value(v: &MixedValues, log_probs: &HeadLogProbs, dims: &[usize], alpha: f64) -> Vec<f64> {
    let k = dims.len();
    (0..v.c0.len())
        .map(|r| {
            let mut total = v.c0[r];
            for (h, &m) in dims.iter().enumerate() {
                let c = v.weights[r * k + h];
                for j in 0..m {
                    let lp = log_probs[h][r * m + j];
                    total += lp.exp() * (c * v.tables[h][r * m + j] - alpha * lp);
                }
            }
            total
        })
        .collect()
}

/// Minibatch of slow transitions.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SlowBatch {
    pub n: usize,
    pub states: Vec<f64>,
    /// `n x n_heads` tap indices.
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub next_states: Vec<f64>,
    pub dones: Vec<bool>,
    /// Off-policy correction weight per transition.
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SlowLosses {
    pub critic: f64,
    pub policy: f64,
    /// Mean per-row sum of head entropies.
    pub entropy: f64,
}

#[derive(Debug, Clone)]
pub struct SlowAgent {
    cfg: SlowAgentConfig,
    dims: Vec<usize>,
    policy: MultiHeadPolicy,
    critic: MixingCritic,
    target: MixingCritic,
    opt_policy: Vec<Adam>,
    opt_critic: Vec<Adam>,
}

impl SlowAgent {
    pub fn new<R: Rng + ?Sized>(state_dim: usize, dims: &[usize], cfg: SlowAgentConfig, rng: &mut R) -> Self {
        let policy = MultiHeadPolicy::new(state_dim, dims, &cfg, rng);
        let critic = MixingCritic::new(state_dim, dims, &cfg, rng);
        Self {
            opt_policy: policy.net().optimizers(cfg.adam),
            opt_critic: critic.net().optimizers(cfg.adam),
            target: critic.clone(),
            dims: dims.to_vec(),
            policy,
            critic,
            cfg,
        }
    }

    pub fn config(&self) -> &SlowAgentConfig {
        &self.cfg
    }
    pub fn dims(&self) -> &[usize] {
        &self.dims
    }
    pub fn policy(&self) -> &MultiHeadPolicy {
        &self.policy
    }
    pub fn policy_mut(&mut self) -> &mut MultiHeadPolicy {
        &mut self.policy
    }
    pub fn critic(&self) -> &MixingCritic {
        &self.critic
    }
    pub fn critic_mut(&mut self) -> &mut MixingCritic {
        &mut self.critic
    }
    pub fn target(&self) -> &MixingCritic {
        &self.target
    }

    pub fn sync_target(&mut self) {
        self.target = self.critic.clone();
    }

    pub fn act<R: Rng + ?Sized>(&self, state: &[f64], explore: bool, rng: &mut R) -> Result<Vec<usize>, NnError> {
        if explore {
            self.policy.sample(state, 1, rng)
        } else {
            self.policy.greedy(state, 1)
        }
    }

    /// `r + gamma (1 - d) V_target(s')`, with the target critic and the current policy.
    pub fn critic_targets(&self, batch: &SlowBatch) -> Result<Vec<f64>, NnError> {
        let v = self.target.values(&batch.next_states, batch.n)?;
        let lp = self.policy.log_probs(&batch.next_states, batch.n)?;
        let value = state_value(&v, &lp, &self.dims, self.cfg.alpha);
        Ok((0..batch.n)
            .map(|i| batch.rewards[i] + if batch.dones[i] { 0.0 } else { self.cfg.gamma * value[i] })
            .collect())
    }

    /// `mean((w y - Q(s, a))^2)` and its gradients.
    pub fn critic_loss(&self, batch: &SlowBatch, targets: &[f64]) -> Result<(f64, Vec<Vec<f64>>), NnError> {
        let n = batch.n;
        let k = self.dims.len();
        let tape = self.critic.net.forward(&batch.states, n)?;
        let v = self.critic.values_from(&tape, n);
        let q = joint_q(&v, &self.dims, &batch.actions);
        let mut douts: Vec<Vec<f64>> = self.dims.iter().map(|&m| vec![0.0; n * m]).collect();
        douts.push(vec![0.0; n * (k + 1)]);
        let mut loss = 0.0;
        for r in 0..n {
            let err = q[r] - batch.weights[r] * targets[r];
            loss += err * err;
            let dq = 2.0 * err / n as f64;
            douts[k][r * (k + 1)] = dq;
            for h in 0..k {
                let a = batch.actions[r * k + h];
                let m = self.dims[h];
                douts[h][r * m + a] = dq * v.weights[r * k + h];
                douts[k][r * (k + 1) + 1 + h] = dq * v.tables[h][r * m + a] * sigmoid(v.raw[r * k + h]);
            }
        }
        let grads = self.critic.net.backward(&tape, &douts)?;
        Ok((loss / n as f64, grads))
    }

    /// `-mean V(s)` under the current critic, with gradients for the policy.
    pub fn policy_loss(&self, states: &[f64], n: usize) -> Result<(f64, Vec<Vec<f64>>, f64), NnError> {
        let k = self.dims.len();
        let alpha = self.cfg.alpha;
        let v = self.critic.values(states, n)?;
        let tape = self.policy.net.forward(states, n)?;
        let lp = self.policy.log_probs_from(&tape, n);
        let value = state_value(&v, &lp, &self.dims, alpha);
        let mut douts = Vec::with_capacity(k);
        let mut entropy = 0.0;
        for (h, &m) in self.dims.iter().enumerate() {
            let mut d = vec![0.0; n * m];
            for r in 0..n {
                let c = v.weights[r * k + h];
                let row = &lp[h][r * m..(r + 1) * m];
                let g: Vec<f64> = (0..m).map(|j| c * v.tables[h][r * m + j] - alpha * (row[j] + 1.0)).collect();
                let mean: f64 = (0..m).map(|j| row[j].exp() * g[j]).sum();
                for j in 0..m {
                    d[r * m + j] = -row[j].exp() * (g[j] - mean) / n as f64;
                    entropy -= row[j].exp() * row[j];
                }
            }
            douts.push(d);
        }
        let grads = self.policy.net.backward(&tape, &douts)?;
        Ok((-value.iter().sum::<f64>() / n as f64, grads, entropy / n as f64))
    }

    /// Critic step, policy step, then target averaging.
    pub fn update(&mut self, batch: &SlowBatch) -> Result<SlowLosses, NnError> {
        if batch.n == 0 {
            return Err(NnError::EmptyTape);
        }
        let y = self.critic_targets(batch)?;
        let (critic, gc) = self.critic_loss(batch, &y)?;
        if !critic.is_finite() {
            return Err(NnError::NonFinite("critic loss"));
        }
        self.critic.net.step(&mut self.opt_critic, &gc)?;
        let (policy, gp, entropy) = self.policy_loss(&batch.states, batch.n)?;
        if !policy.is_finite() {
            return Err(NnError::NonFinite("policy loss"));
        }
        self.policy.net.step(&mut self.opt_policy, &gp)?;
        self.target.net.polyak_from(&self.critic.net, self.cfg.polyak);
        Ok(SlowLosses { critic, policy, entropy })
    }

    /// Saves policy, critic and target networks.
    pub fn save<W: Write>(&self, out: W) -> Result<(), NnError> {
        let nets: Vec<&Mlp> = self
            .policy
            .net
            .networks()
            .chain(self.critic.net.networks())
            .chain(self.target.net.networks())
            .collect();
        write_networks(out, &nets)
    }

    pub fn load<R: Read>(&mut self, input: R) -> Result<(), NnError> {
        let nets = read_networks(input)?;
        let current: Vec<&Mlp> = self
            .policy
            .net
            .networks()
            .chain(self.critic.net.networks())
            .chain(self.target.net.networks())
            .collect();
        if nets.len() != current.len() || nets.iter().zip(&current).any(|(a, b)| a.sizes() != b.sizes()) {
            return Err(NnError::Checkpoint("slow agent checkpoint does not match this network layout".into()));
        }
        let p = self.dims.len() + 1;
        let c = self.dims.len() + 2;
        let mut nets = nets;
        let target = nets.split_off(p + c);
        let critic = nets.split_off(p);
        self.policy.net = MultiHeadNet::from_networks(nets);
        self.critic.net = MultiHeadNet::from_networks(critic);
        self.target.net = MultiHeadNet::from_networks(target);
        Ok(())
    }
}
