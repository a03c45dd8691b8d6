#![allow(dead_code)]

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use vvc_core::nn::{Activation, Mlp};
use vvc_core::grid::{GridOperatingPoint, NetworkModel};
use vvc_core::fast_agent::{FastAgent, FastAgentConfig, FastBatch};
use vvc_core::slow_agent::{SlowAgent, SlowAgentConfig, SlowBatch};

pub const FD_STEP: f64 = 1e-5;

/// Cases whose ReLU pre-activations come this close to zero are redrawn:
/// central differences straddling a kink measure the kink, not the gradient.
pub const KINK_MARGIN: f64 = 1e-3;

/// Whether every ReLU pre-activation of `net` on `x` is clear of the kink.
pub fn clear_of_kinks(net: &Mlp, x: &[f64], n: usize) -> bool {
    let tape = net.forward(x, n).unwrap();
    net.activations()
        .iter()
        .enumerate()
        .filter(|(_, a)| **a == Activation::Relu)
        .all(|(l, _)| tape.pre_activations(l).iter().all(|z| z.abs() > KINK_MARGIN))
}

fn multi_head_clear(nets: Vec<&Mlp>, x: &[f64], n: usize) -> bool {
    let trunk = nets[0];
    let hidden = trunk.predict(x, n).unwrap();
    clear_of_kinks(trunk, x, n) && nets[1..].iter().all(|h| clear_of_kinks(h, &hidden, n))
}

/// `||a - b|| / max(||a||, ||b||)`, or the absolute norm when both vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale < 1e-10 {
        norm(&diff)
    } else {
        norm(&diff) / scale
    }
}

/// Central differences of `f` around `params`.
pub fn central_diff(params: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = params.to_vec();
    (0..p.len())
        .map(|i| {
            let p0 = p[i];
            p[i] = p0 + FD_STEP;
            let up = f(&p);
            p[i] = p0 - FD_STEP;
            let down = f(&p);
            p[i] = p0;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

pub fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

pub fn uniforms(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

pub fn small_fast_agent(rng: &mut ChaCha8Rng, sd: usize, ad: usize) -> FastAgent {
    let cfg = FastAgentConfig {
        hidden: vec![rng.gen_range(3..7), rng.gen_range(3..7)],
        alpha: rng.gen_range(0.01..0.5),
        ..FastAgentConfig::default()
    };
    FastAgent::new(sd, ad, cfg, rng)
}

pub fn random_fast_batch(rng: &mut ChaCha8Rng, n: usize, sd: usize, ad: usize) -> FastBatch {
    FastBatch {
        n,
        states: uniforms(rng, n * sd, -1.0, 1.0),
        actions: uniforms(rng, n * ad, -0.95, 0.95),
        rewards: uniforms(rng, n, -2.0, 1.0),
        next_states: uniforms(rng, n * sd, -1.0, 1.0),
        dones: (0..n).map(|_| rng.gen_bool(0.3)).collect(),
    }
}

pub fn small_slow_agent(rng: &mut ChaCha8Rng, sd: usize, dims: &[usize]) -> SlowAgent {
    let cfg = SlowAgentConfig {
        trunk: vec![rng.gen_range(3..7)],
        head_hidden: vec![rng.gen_range(3..7)],
        alpha: rng.gen_range(0.01..0.5),
        ..SlowAgentConfig::default()
    };
    SlowAgent::new(sd, dims, cfg, rng)
}

pub fn random_slow_batch(rng: &mut ChaCha8Rng, n: usize, sd: usize, dims: &[usize]) -> SlowBatch {
    SlowBatch {
        n,
        states: uniforms(rng, n * sd, -1.0, 1.0),
        actions: (0..n).flat_map(|_| dims.iter().map(|&m| rng.gen_range(0..m)).collect::<Vec<_>>()).collect(),
        rewards: uniforms(rng, n, -2.0, 1.0),
        next_states: uniforms(rng, n * sd, -1.0, 1.0),
        dones: (0..n).map(|_| rng.gen_bool(0.3)).collect(),
        weights: uniforms(rng, n, 0.1, 10.0),
    }
}

/// Relative error of the fast critic-loss gradient for one random case.
pub fn fast_critic_trial(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (agent, batch) = loop {
        let (sd, ad, n) = (rng.gen_range(1..5), rng.gen_range(1..4), rng.gen_range(1..6));
        let agent = small_fast_agent(&mut rng, sd, ad);
        let batch = random_fast_batch(&mut rng, n, sd, ad);
        let x = concat(&batch.states, sd, &batch.actions, ad, n);
        if agent.critics().iter().all(|c| clear_of_kinks(c, &x, n)) {
            break (agent, batch);
        }
    };
    let (n, ad) = (batch.n, agent.policy().action_dim());
    let y = agent.critic_targets(&batch, &normals(&mut rng, n * ad)).unwrap();
    let (_, grads) = agent.critic_loss(&batch, &y).unwrap();
    let mut worst: f64 = 0.0;
    for c in 0..2 {
        let fd = central_diff(agent.critics()[c].params(), |p| {
            let mut a = agent.clone();
            a.critics_mut()[c].params_mut().copy_from_slice(p);
            a.critic_loss(&batch, &y).unwrap().0
        });
        worst = worst.max(rel_err(&grads[c], &fd));
    }
    worst
}

/// Relative error of the fast policy-loss gradient for one random case.
pub fn fast_policy_trial(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (agent, states, xi, n) = loop {
        let (sd, ad, n) = (rng.gen_range(1..5), rng.gen_range(1..4), rng.gen_range(1..6));
        let agent = small_fast_agent(&mut rng, sd, ad);
        let states = uniforms(&mut rng, n * sd, -1.0, 1.0);
        let xi = normals(&mut rng, n * ad);
        let (actions, _) = agent.policy().sample_with_noise(&states, n, &xi).unwrap();
        let x = concat(&states, sd, &actions, ad, n);
        if clear_of_kinks(agent.policy().net(), &states, n)
            && agent.critics().iter().all(|c| clear_of_kinks(c, &x, n))
        {
            break (agent, states, xi, n);
        }
    };
    let (_, grads, _) = agent.policy_loss(&states, n, &xi).unwrap();
    let fd = central_diff(agent.policy().net().params(), |p| {
        let mut a = agent.clone();
        a.policy_mut().net_mut().params_mut().copy_from_slice(p);
        a.policy_loss(&states, n, &xi).unwrap().0
    });
    rel_err(&grads, &fd)
}

fn flat_params(nets: Vec<&vvc_core::nn::Mlp>) -> Vec<f64> {
    nets.into_iter().flat_map(|n| n.params().iter().copied()).collect()
}

fn load_params<'a>(nets: impl Iterator<Item = &'a mut vvc_core::nn::Mlp>, p: &[f64]) {
    let mut off = 0;
    for net in nets {
        let n = net.n_params();
        net.params_mut().copy_from_slice(&p[off..off + n]);
        off += n;
    }
}

fn concat(a: &[f64], da: usize, b: &[f64], db: usize, n: usize) -> Vec<f64> {
    (0..n)
        .flat_map(|i| a[i * da..(i + 1) * da].iter().chain(&b[i * db..(i + 1) * db]).copied())
        .collect()
}

pub fn random_dims(rng: &mut ChaCha8Rng) -> Vec<usize> {
    (0..rng.gen_range(1..4)).map(|_| rng.gen_range(2..6)).collect()
}

/// Relative error of the mixing-critic loss gradient for one random case.
pub fn slow_critic_trial(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (agent, batch) = loop {
        let dims = random_dims(&mut rng);
        let (sd, n) = (rng.gen_range(1..5), rng.gen_range(1..6));
        let agent = small_slow_agent(&mut rng, sd, &dims);
        let batch = random_slow_batch(&mut rng, n, sd, &dims);
        if multi_head_clear(agent.critic().net().networks().collect(), &batch.states, n) {
            break (agent, batch);
        }
    };
    let y = agent.critic_targets(&batch).unwrap();
    let (_, grads) = agent.critic_loss(&batch, &y).unwrap();
    let analytic: Vec<f64> = grads.concat();
    let p0 = flat_params(agent.critic().net().networks().collect());
    let fd = central_diff(&p0, |p| {
        let mut a = agent.clone();
        load_params(a.critic_mut().net_mut().networks_mut(), p);
        a.critic_loss(&batch, &y).unwrap().0
    });
    rel_err(&analytic, &fd)
}

/// Relative error of the multi-head policy-loss gradient for one random case.
pub fn slow_policy_trial(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (agent, states, n) = loop {
        let dims = random_dims(&mut rng);
        let (sd, n) = (rng.gen_range(1..5), rng.gen_range(1..6));
        let agent = small_slow_agent(&mut rng, sd, &dims);
        let states = uniforms(&mut rng, n * sd, -1.0, 1.0);
        if multi_head_clear(agent.policy().net().networks().collect(), &states, n) {
            break (agent, states, n);
        }
    };
    let (_, grads, _) = agent.policy_loss(&states, n).unwrap();
    let analytic: Vec<f64> = grads.concat();
    let p0 = flat_params(agent.policy().net().networks().collect());
    let fd = central_diff(&p0, |p| {
        let mut a = agent.clone();
        load_params(a.policy_mut().net_mut().networks_mut(), p);
        a.policy_loss(&states, n).unwrap().0
    });
    rel_err(&analytic, &fd)
}

/// Soft value by enumerating every joint action.
pub fn enumerated_value(agent: &SlowAgent, state: &[f64]) -> f64 {
    let dims = agent.dims().to_vec();
    let v = agent.critic().values(state, 1).unwrap();
    let lp = agent.policy().log_probs(state, 1).unwrap();
    let alpha = agent.config().alpha;
    let total: usize = dims.iter().product();
    let mut sum = 0.0;
    for mut code in 0..total {
        let mut action = Vec::with_capacity(dims.len());
        for &m in &dims {
            action.push(code % m);
            code /= m;
        }
        let log_joint: f64 = action.iter().enumerate().map(|(h, &a)| lp[h][a]).sum();
        let q = vvc_core::slow_agent::joint_q(&v, &dims, &action)[0];
        sum += log_joint.exp() * (q - alpha * log_joint);
    }
    sum
}

/// Nodal admittance matrix with each OLTC as an ideal ratio at the upstream
/// end of its branch.
pub fn admittance(net: &NetworkModel, oltc_taps: &[usize]) -> Vec<Vec<Complex64>> {
    let n = net.n_buses();
    let mut y = vec![vec![Complex64::new(0.0, 0.0); n]; n];
    for (b, br) in net.branches().iter().enumerate() {
        let down = net.branch_downstream(b);
        let up = net.parent(down).expect("branch has an upstream bus");
        let t = net
            .oltcs()
            .iter()
            .position(|o| o.branch == b)
            .map_or(1.0, |i| net.oltcs()[i].ratio(oltc_taps[i]));
        let ys = Complex64::new(br.r_pu, br.x_pu).inv();
        y[up][up] += ys * t * t;
        y[down][down] += ys;
        y[up][down] -= ys * t;
        y[down][up] -= ys * t;
    }
    y
}

/// Net specified injections per bus in p.u.
pub fn injections(net: &NetworkModel, op: &GridOperatingPoint) -> Vec<Complex64> {
    let base = net.base_mva();
    let mut s: Vec<Complex64> = net
        .buses()
        .iter()
        .zip(&op.load_scale)
        .map(|(b, k)| Complex64::new(-b.load_p_mw * k, -b.load_q_mvar * k) / base)
        .collect();
    for (cb, &tap) in net.cbs().iter().zip(&op.cb_taps) {
        s[cb.bus] += Complex64::new(0.0, cb.reactive_mvar(tap) / base);
    }
    for (i, dg) in net.dgs().iter().enumerate() {
        s[dg.bus] += Complex64::new(op.dg_active[i], op.dg_reactive[i]) / base;
    }
    for (svc, &q) in net.svcs().iter().zip(&op.svc_reactive) {
        s[svc.bus] += Complex64::new(0.0, q / base);
    }
    s
}

/// Gauss-Seidel solution of the nodal equations. Returns complex voltages.
pub fn gauss_seidel(net: &NetworkModel, op: &GridOperatingPoint) -> Vec<Complex64> {
    let y = admittance(net, &op.oltc_taps);
    let s = injections(net, op);
    let n = net.n_buses();
    let slack = net.slack();
    let mut v = vec![Complex64::new(net.slack_voltage(), 0.0); n];
    for _ in 0..200_000 {
        let mut change: f64 = 0.0;
        for i in (0..n).filter(|&i| i != slack) {
            let mut acc = (s[i] / v[i]).conj();
            for j in (0..n).filter(|&j| j != i) {
                acc -= y[i][j] * v[j];
            }
            let new = acc / y[i][i];
            change = change.max((new - v[i]).norm());
            v[i] = new;
        }
        if change < 1e-14 {
            return v;
        }
    }
    panic!("Gauss-Seidel did not converge");
}

/// Active loss implied by a voltage vector: the sum of all injections.
pub fn loss_from_voltages(net: &NetworkModel, v: &[Complex64], oltc_taps: &[usize]) -> f64 {
    let y = admittance(net, oltc_taps);
    let mut total = 0.0;
    for i in 0..v.len() {
        let cur: Complex64 = (0..v.len()).map(|j| y[i][j] * v[j]).sum();
        total += (v[i] * cur.conj()).re;
    }
    total * net.base_mva()
}

/// A random feasible operating point.
pub fn random_operating_point(net: &NetworkModel, rng: &mut ChaCha8Rng) -> GridOperatingPoint {
    let mut op = GridOperatingPoint::neutral(net);
    for (t, o) in op.oltc_taps.iter_mut().zip(net.oltcs()) {
        *t = rng.gen_range(0..o.taps);
    }
    for (t, c) in op.cb_taps.iter_mut().zip(net.cbs()) {
        *t = rng.gen_range(0..c.taps);
    }
    for (i, dg) in net.dgs().iter().enumerate() {
        let p = rng.gen_range(0.0..dg.p_max_mw);
        op.dg_active[i] = p;
        let bound = dg.q_bound_at(p);
        op.dg_reactive[i] = rng.gen_range(-bound..=bound);
    }
    for (q, svc) in op.svc_reactive.iter_mut().zip(net.svcs()) {
        *q = rng.gen_range(svc.q_min_mvar..=svc.q_max_mvar);
    }
    for s in &mut op.load_scale {
        *s = rng.gen_range(0.3..1.3);
    }
    op
}
