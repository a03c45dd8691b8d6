mod common;

use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vvc_core::nn::AdamConfig;
use vvc_core::slow_agent::{
    joint_q, sample_categorical, state_value, MixedValues, SlowAgent, SlowAgentConfig, SlowBatch,
};

#[test]
fn constant_offset_dominates_when_weights_vanish() {
    let v = MixedValues {
        tables: vec![vec![4.0, -2.0, 9.0]],
        c0: vec![1.0],
        weights: vec![vvc_core::nn::softplus(-1000.0)],
        raw: vec![-1000.0],
    };
    for a in 0..3 {
        assert_eq!(joint_q(&v, &[3], &[a]), vec![1.0]);
    }
}

#[test]
fn uniform_heads_with_zero_tables_score_their_entropy() {
    let dims = [3, 5, 2];
    let v = MixedValues {
        tables: dims.iter().map(|&m| vec![0.0; m]).collect(),
        c0: vec![0.0],
        weights: vec![1.0; 3],
        raw: vec![0.0; 3],
    };
    let lp = dims.iter().map(|&m| vec![-(m as f64).ln(); m]).collect();
    let alpha = 0.07;
    let expect: f64 = alpha * dims.iter().map(|&m| (m as f64).ln()).sum::<f64>();
    assert!((state_value(&v, &lp, &dims, alpha)[0] - expect).abs() < 1e-14);
}

#[test]
fn zero_temperature_value_is_policy_weighted_mixture() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let agent = small_slow_agent(&mut rng, 4, &[3, 2]);
    let s = uniforms(&mut rng, 4, -1.0, 1.0);
    let v = agent.critic().values(&s, 1).unwrap();
    let lp = agent.policy().log_probs(&s, 1).unwrap();
    let mut expect = v.c0[0];
    for (h, &m) in [3usize, 2].iter().enumerate() {
        for j in 0..m {
            expect += lp[h][j].exp() * v.weights[h] * v.tables[h][j];
        }
    }
    assert!((state_value(&v, &lp, &[3, 2], 0.0)[0] - expect).abs() < 1e-12);
}

#[test]
fn closed_form_value_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for dims in [vec![3, 3], vec![5, 5, 5], vec![2, 4], vec![11, 11]] {
        for _ in 0..10 {
            let agent = small_slow_agent(&mut rng, 3, &dims);
            let s = uniforms(&mut rng, 3, -2.0, 2.0);
            let v = agent.critic().values(&s, 1).unwrap();
            let lp = agent.policy().log_probs(&s, 1).unwrap();
            let closed = state_value(&v, &lp, &dims, agent.config().alpha)[0];
            let brute = enumerated_value(&agent, &s);
            assert!((closed - brute).abs() < 1e-10, "{dims:?}: {closed} vs {brute}");
        }
    }
}

#[test]
fn heads_are_normalized_and_factorize() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let agent = small_slow_agent(&mut rng, 3, &[4, 2, 3]);
    let s = uniforms(&mut rng, 6, -1.0, 1.0);
    let lp = agent.policy().log_probs(&s, 2).unwrap();
    for (h, &m) in [4usize, 2, 3].iter().enumerate() {
        for r in 0..2 {
            let row = &lp[h][r * m..(r + 1) * m];
            assert!(row.iter().all(|l| l.exp() > 0.0));
            assert!((row.iter().map(|l| l.exp()).sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }
    let a = [1, 0, 2];
    let joint: f64 = lp[0][a[0]].exp() * lp[1][a[1]].exp() * lp[2][a[2]].exp();
    let log_sum = lp[0][a[0]] + lp[1][a[1]] + lp[2][a[2]];
    assert!((joint.ln() - log_sum).abs() < 1e-14);
}

#[test]
fn unit_weights_reduce_to_the_uncorrected_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let agent = small_slow_agent(&mut rng, 3, &[3, 2]);
    let mut batch = random_slow_batch(&mut rng, 6, 3, &[3, 2]);
    batch.weights = vec![1.0; 6];
    let y = agent.critic_targets(&batch).unwrap();
    let (loss, _) = agent.critic_loss(&batch, &y).unwrap();
    let v = agent.critic().values(&batch.states, 6).unwrap();
    let q = joint_q(&v, &[3, 2], &batch.actions);
    let mut plain = 0.0;
    for i in 0..6 {
        let e = q[i] - y[i];
        plain += e * e;
    }
    assert_eq!(loss.to_bits(), (plain / 6.0).to_bits());
}

#[test]
fn critic_loss_matches_hand_evaluation() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let agent = small_slow_agent(&mut rng, 2, &[3, 2]);
    let batch = SlowBatch {
        n: 1,
        states: vec![0.3, -0.2],
        actions: vec![2, 1],
        rewards: vec![-4.0],
        next_states: vec![0.1, 0.5],
        dones: vec![false],
        weights: vec![0.4],
    };
    let gamma = agent.config().gamma;
    let alpha = agent.config().alpha;
    // Target value from the target critic and the current policy.
    let vt = agent.target().values(&batch.next_states, 1).unwrap();
    let lp = agent.policy().log_probs(&batch.next_states, 1).unwrap();
    let mut v_next = vt.c0[0];
    for (h, &m) in [3usize, 2].iter().enumerate() {
        for j in 0..m {
            let p = lp[h][j].exp();
            v_next += p * (vt.weights[h] * vt.tables[h][j] - alpha * lp[h][j]);
        }
    }
    let y = -4.0 + gamma * v_next;
    let v = agent.critic().values(&batch.states, 1).unwrap();
    let q = v.c0[0] + v.weights[0] * v.tables[0][2] + v.weights[1] * v.tables[1][1];
    let got_y = agent.critic_targets(&batch).unwrap();
    assert!((got_y[0] - y).abs() < 1e-12);
    let (loss, _) = agent.critic_loss(&batch, &got_y).unwrap();
    assert!((loss - (0.4 * y - q).powi(2)).abs() < 1e-12);
}

#[test]
fn uniform_policy_loss_is_minus_its_value() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut agent = small_slow_agent(&mut rng, 2, &[3, 4]);
    // Zero the last layer of every policy head so the logits are all zero.
    for net in agent.policy_mut().net_mut().networks_mut().skip(1) {
        let sizes = net.sizes().to_vec();
        let (n_in, n_out) = (sizes[sizes.len() - 2], sizes[sizes.len() - 1]);
        let len = net.n_params();
        net.params_mut()[len - (n_in + 1) * n_out..].iter_mut().for_each(|p| *p = 0.0);
    }
    let s = [0.5, -0.5];
    let (loss, _, entropy) = agent.policy_loss(&s, 1).unwrap();
    let v = agent.critic().values(&s, 1).unwrap();
    let lp = vec![vec![-(3f64).ln(); 3], vec![-(4f64).ln(); 4]];
    let value = state_value(&v, &lp, &[3, 4], agent.config().alpha)[0];
    assert!((loss + value).abs() < 1e-12);
    assert!((entropy - (12f64).ln()).abs() < 1e-12);
}

#[test]
fn loss_gradients_match_finite_differences() {
    for seed in 0..25 {
        let c = slow_critic_trial(seed);
        let p = slow_policy_trial(seed);
        assert!(c < 1e-4 && p < 1e-4, "seed {seed}: critic {c}, policy {p}");
    }
}

fn toy_agent(seed: u64, alpha: f64, dims: &[usize]) -> SlowAgent {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = SlowAgentConfig {
        trunk: vec![16],
        head_hidden: vec![16],
        alpha,
        adam: AdamConfig {
            lr: 3e-3,
            ..AdamConfig::default()
        },
        ..SlowAgentConfig::default()
    };
    SlowAgent::new(1, dims, cfg, &mut rng)
}

/// One-step bandit batch covering every joint action once.
fn bandit_batch(dims: &[usize], reward: impl Fn(&[usize]) -> f64) -> SlowBatch {
    let total: usize = dims.iter().product();
    let mut batch = SlowBatch::default();
    for mut code in 0..total {
        let mut a = Vec::new();
        for &m in dims {
            a.push(code % m);
            code /= m;
        }
        batch.rewards.push(reward(&a));
        batch.actions.extend(a);
        batch.states.push(0.0);
        batch.next_states.push(0.0);
        batch.dones.push(true);
        batch.weights.push(1.0);
    }
    batch.n = total;
    batch
}

#[test]
fn bandit_policy_concentrates_on_the_best_taps() {
    let dims = [3, 4];
    let (t0, t1) = ([0.0, 1.0, 0.2], [0.5, -1.0, 0.0, 1.5]);
    let batch = bandit_batch(&dims, |a| t0[a[0]] + t1[a[1]]);
    let mut agent = toy_agent(7, 0.01, &dims);
    for _ in 0..1500 {
        agent.update(&batch).unwrap();
    }
    assert_eq!(agent.policy().greedy(&[0.0], 1).unwrap(), vec![1, 3]);
    let lp = agent.policy().log_probs(&[0.0], 1).unwrap();
    assert!(lp[0][1].exp() > 0.9 && lp[1][3].exp() > 0.9);
}

#[test]
fn mixing_critic_matches_a_flattened_table() {
    let dims = [3, 3];
    let table = |a: &[usize]| [0.3, -0.7, 1.1][a[0]] + [2.0, -0.4, 0.6][a[1]] - 0.5;
    let batch = bandit_batch(&dims, table);
    let mut agent = toy_agent(8, 0.05, &dims);
    for _ in 0..2000 {
        agent.update(&batch).unwrap();
    }
    let v = agent.critic().values(&vec![0.0; 9], 9).unwrap();
    let q = joint_q(&v, &dims, &batch.actions);
    for (i, q) in q.iter().enumerate() {
        assert!((q - batch.rewards[i]).abs() < 0.05, "joint action {i}: {q} vs {}", batch.rewards[i]);
    }
}

#[test]
fn forced_head_always_draws_its_tap() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let lp = [f64::NEG_INFINITY, 0.0, f64::NEG_INFINITY];
    assert!((0..1000).all(|_| sample_categorical(&lp, &mut rng) == 1));
}

#[test]
fn draw_frequencies_match_head_probabilities() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let agent = small_slow_agent(&mut rng, 2, &[3, 5]);
    let s = [0.4, 0.9];
    let lp = agent.policy().log_probs(&s, 1).unwrap();
    let n = 100_000;
    let states: Vec<f64> = s.iter().copied().cycle().take(2 * n).collect();
    let draws = agent.policy().sample(&states, n, &mut rng).unwrap();
    for (h, &m) in [3usize, 5].iter().enumerate() {
        let mut counts = vec![0usize; m];
        for r in 0..n {
            counts[draws[r * 2 + h]] += 1;
        }
        for j in 0..m {
            let p = lp[h][j].exp();
            let sigma = (n as f64 * p * (1.0 - p)).sqrt();
            assert!((counts[j] as f64 - n as f64 * p).abs() <= 3.0 * sigma, "head {h} tap {j}");
        }
    }
    let again = agent.policy().sample(&states[..20], 10, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let twice = agent.policy().sample(&states[..20], 10, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert_eq!(again, twice);
}

#[test]
fn critic_size_grows_linearly_in_total_taps() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let count = |dims: &[usize], rng: &mut ChaCha8Rng| {
        SlowAgent::new(10, dims, SlowAgentConfig::default(), rng).critic().net().n_params()
    };
    let (a, b, c) = (count(&[3, 3], &mut rng), count(&[5, 3], &mut rng), count(&[7, 3], &mut rng));
    assert_eq!(b - a, c - b);
    // Each extra tap adds one output unit fed by the head's hidden layer.
    assert_eq!(b - a, 2 * (128 + 1));
    let many = count(&[11, 11, 11], &mut rng);
    let flat_outputs = 11 * 11 * 11;
    assert!(many < flat_outputs * 129 + 128 * 129);
}

#[test]
fn checkpoint_round_trip_restores_every_network() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut agent = small_slow_agent(&mut rng, 3, &[3, 2]);
    let batch = random_slow_batch(&mut rng, 8, 3, &[3, 2]);
    agent.update(&batch).unwrap();
    let mut buf = Vec::new();
    agent.save(&mut buf).unwrap();
    let mut other = SlowAgent::new(3, &[3, 2], agent.config().clone(), &mut rng);
    other.load(buf.as_slice()).unwrap();
    assert_eq!(other.policy(), agent.policy());
    assert_eq!(other.critic(), agent.critic());
    assert_eq!(other.target(), agent.target());
    let s: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
    assert_eq!(other.act(&s, false, &mut rng).unwrap(), agent.act(&s, false, &mut rng).unwrap());
}
