use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vvc_core::nn::{polyak, read_networks, write_networks, Activation, Adam, AdamConfig, Mlp, NnError};

/// Plain-loop forward pass, independent of the GEMM path.
fn forward_loops(net: &Mlp, x: &[f64], batch: usize) -> Vec<f64> {
    let sizes = net.sizes();
    let p = net.params();
    let mut a = x.to_vec();
    let mut off = 0;
    for (l, act) in net.activations().iter().enumerate() {
        let (ni, no) = (sizes[l], sizes[l + 1]);
        let mut z = vec![0.0; batch * no];
        for r in 0..batch {
            for j in 0..no {
                let mut s = p[off + ni * no + j];
                for i in 0..ni {
                    s += a[r * ni + i] * p[off + i * no + j];
                }
                z[r * no + j] = match act {
                    Activation::Relu => s.max(0.0),
                    Activation::Identity => s,
                };
            }
        }
        off += (ni + 1) * no;
        a = z;
    }
    a
}

fn random_net(rng: &mut ChaCha8Rng) -> Mlp {
    let depth = rng.gen_range(1..4);
    let mut sizes = vec![rng.gen_range(1..7)];
    for _ in 0..depth {
        sizes.push(rng.gen_range(1..9));
    }
    Mlp::new(&sizes, Activation::Relu, Activation::Identity, rng)
}

/// Loss = sum(out * w) so the upstream gradient is `w`.
fn loss(net: &Mlp, x: &[f64], batch: usize, w: &[f64]) -> f64 {
    net.predict(x, batch).unwrap().iter().zip(w).map(|(o, w)| o * w).sum()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

#[test]
fn forward_matches_plain_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let net = random_net(&mut rng);
        let batch = rng.gen_range(1..6);
        let x: Vec<f64> = (0..batch * net.input_dim()).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let fast = net.predict(&x, batch).unwrap();
        let slow = forward_loops(&net, &x, batch);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }
}

#[test]
fn backward_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let h = 1e-5;
    for _ in 0..100 {
        let mut net = random_net(&mut rng);
        let batch = rng.gen_range(1..5);
        let x: Vec<f64> = (0..batch * net.input_dim()).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let w: Vec<f64> = (0..batch * net.output_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let tape = net.forward(&x, batch).unwrap();
        let g = net.backward(&tape, &w).unwrap();
        let mut fd = vec![0.0; net.n_params()];
        for i in 0..net.n_params() {
            let p0 = net.params()[i];
            net.params_mut()[i] = p0 + h;
            let up = loss(&net, &x, batch, &w);
            net.params_mut()[i] = p0 - h;
            let down = loss(&net, &x, batch, &w);
            net.params_mut()[i] = p0;
            fd[i] = (up - down) / (2.0 * h);
        }
        assert!(rel_err(&g.params, &fd) < 1e-4, "param gradient off by {}", rel_err(&g.params, &fd));
        let mut fdx = vec![0.0; x.len()];
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            fdx[i] = (loss(&net, &xp, batch, &w) - loss(&net, &xm, batch, &w)) / (2.0 * h);
        }
        assert!(rel_err(&g.input, &fdx) < 1e-4);
    }
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let a = random_net(&mut rng);
    let b = Mlp::new(&[5, 3], Activation::Identity, Activation::Relu, &mut rng);
    let mut buf = Vec::new();
    write_networks(&mut buf, &[&a, &b]).unwrap();
    let back = read_networks(buf.as_slice()).unwrap();
    assert_eq!(back.len(), 2);
    for (orig, got) in [&a, &b].iter().zip(&back) {
        assert_eq!(orig.sizes(), got.sizes());
        assert_eq!(orig.activations(), got.activations());
        let bits = |n: &Mlp| n.params().iter().map(|p| p.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(orig), bits(got));
    }
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let net = random_net(&mut rng);
    let mut buf = Vec::new();
    write_networks(&mut buf, &[&net]).unwrap();
    let mut bad = buf.clone();
    bad[0] = b'X';
    assert!(matches!(read_networks(bad.as_slice()), Err(NnError::Checkpoint(_))));
    assert!(read_networks(&buf[..buf.len() - 3]).is_err());
}

#[test]
fn adam_fits_a_linear_model() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let mut net = Mlp::new(&[2, 1], Activation::Identity, Activation::Identity, &mut rng);
    let mut opt = Adam::new(AdamConfig { lr: 1e-2, ..AdamConfig::default() }, net.n_params());
    let xs: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let ys: Vec<f64> = xs.chunks(2).map(|x| 3.0 * x[0] - 2.0 * x[1] + 0.5).collect();
    for _ in 0..3000 {
        let tape = net.forward(&xs, 32).unwrap();
        let d: Vec<f64> = tape.output().iter().zip(&ys).map(|(o, y)| 2.0 * (o - y) / 32.0).collect();
        let g = net.backward(&tape, &d).unwrap();
        opt.step(net.params_mut(), &g.params).unwrap();
    }
    let p = net.params();
    assert!((p[0] - 3.0).abs() < 1e-3 && (p[1] + 2.0).abs() < 1e-3 && (p[2] - 0.5).abs() < 1e-3, "{p:?}");
}

proptest! {
    #[test]
    fn polyak_stays_between_target_and_online(t in -10.0f64..10.0, o in -10.0f64..10.0, rho in 0.0f64..1.0) {
        let mut v = [t];
        polyak(&mut v, &[o], rho);
        prop_assert!(v[0] >= t.min(o) - 1e-12 && v[0] <= t.max(o) + 1e-12);
    }

    #[test]
    fn relu_output_layer_is_nonnegative(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Mlp::new(&[3, 4, 2], Activation::Relu, Activation::Relu, &mut rng);
        let x: Vec<f64> = (0..6).map(|_| rng.gen_range(-5.0..5.0)).collect();
        prop_assert!(net.predict(&x, 2).unwrap().iter().all(|v| *v >= 0.0));
    }
}
