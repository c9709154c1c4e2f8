use epinn::netcore::{init_mlp, input_jet, JetOrder, Mlp};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Straightforward re-evaluation: explicit loops over weight matrices.
fn naive_forward(m: &Mlp, x: &[f64]) -> Vec<f64> {
    let sizes = m.layer_sizes();
    let mut a: Vec<f64> = (0..x.len())
        .map(|i| (x[i] - m.input_shift()[i]) / m.input_scale()[i])
        .collect();
    for l in 0..m.n_layers() {
        let w = m.weights(l);
        let b = m.biases(l);
        let mut next = Vec::new();
        for j in 0..sizes[l + 1] {
            let mut s = b[j];
            for i in 0..sizes[l] {
                s += w[j * sizes[l] + i] * a[i];
            }
            next.push(if l + 1 < m.n_layers() { s.tanh() } else { s });
        }
        a = next;
    }
    a
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

fn random_net(seed: u64, sizes: &[usize]) -> Mlp {
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
    let d = sizes[0];
    let shift: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let scale: Vec<f64> = (0..d).map(|_| rng.random_range(0.5..3.0)).collect();
    init_mlp(sizes, seed)
        .unwrap()
        .with_input_normalization(&shift, &scale)
        .unwrap()
}

#[test]
fn forward_matches_naive_reevaluation() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for seed in 0..10 {
        let m = random_net(seed, &[3, 7, 5, 2]);
        let x: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
        let fast = m.forward(&x).unwrap();
        let slow = naive_forward(&m, &x);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-13);
        }
        // the batch path agrees with forward bit for bit
        let batch = m.jet_batch(&x, JetOrder::Value).unwrap();
        for (o, v) in fast.iter().enumerate() {
            assert_eq!(batch.value(0, o), *v);
        }
    }
}

#[test]
fn forward_is_pure() {
    let m = init_mlp(&[2, 16, 16, 4], 2).unwrap();
    let a = m.forward(&[0.1, 0.2]).unwrap();
    let b = m.forward(&[0.1, 0.2]).unwrap();
    assert_eq!(a, b);
}

#[test]
fn input_jet_matches_central_differences() {
    let h = 1e-4;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for seed in 0..20 {
        let m = random_net(seed, &[2, 16, 16, 1]);
        let x: Vec<f64> = (0..2).map(|_| rng.random_range(-1.5..1.5)).collect();
        let jet = input_jet(&m, &x, 0).unwrap();
        for i in 0..2 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let fp = naive_forward(&m, &xp)[0];
            let fm = naive_forward(&m, &xm)[0];
            let f0 = naive_forward(&m, &x)[0];
            let g_fd = (fp - fm) / (2.0 * h);
            let h_fd = (fp - 2.0 * f0 + fm) / (h * h);
            assert!(rel_err(jet.grad[i], g_fd) <= 1e-4, "grad {} vs {}", jet.grad[i], g_fd);
            assert!(
                rel_err(jet.hess_diag[i], h_fd) <= 1e-4,
                "hess {} vs {}",
                jet.hess_diag[i],
                h_fd
            );
        }
    }
}

/// L = 1/2 sum_{p,c,o} r_{pco} * out_{pco}^2 over every jet channel.
fn channel_loss(m: &Mlp, xs: &[f64], r: &[f64]) -> f64 {
    let b = m.jet_batch(xs, JetOrder::Second).unwrap();
    let mut s = 0.0;
    for p in 0..b.n_points() {
        for c in 0..b.channels() {
            for o in 0..b.out_dim() {
                let idx = b.index(p, c, o);
                let v = match c {
                    0 => b.value(p, o),
                    c if c <= b.in_dim() => b.grad(p, o, c - 1),
                    c => b.hess(p, o, c - 1 - b.in_dim()),
                };
                s += 0.5 * r[idx] * v * v;
            }
        }
    }
    s
}

#[test]
fn weight_gradient_matches_central_differences() {
    let h = 1e-6;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed * 31 + 7);
        let mut m = random_net(seed, &[2, 6, 5, 3]);
        let xs: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let batch = m.jet_batch(&xs, JetOrder::Second).unwrap();
        let r: Vec<f64> = (0..batch.output_len()).map(|_| rng.random_range(0.1..1.0)).collect();
        let mut adj = vec![0.0; batch.output_len()];
        for p in 0..batch.n_points() {
            for c in 0..batch.channels() {
                for o in 0..batch.out_dim() {
                    let idx = batch.index(p, c, o);
                    let v = match c {
                        0 => batch.value(p, o),
                        c if c <= batch.in_dim() => batch.grad(p, o, c - 1),
                        c => batch.hess(p, o, c - 1 - batch.in_dim()),
                    };
                    adj[idx] = r[idx] * v;
                }
            }
        }
        let mut grad = vec![0.0; m.n_params()];
        m.jet_backward(&batch, &adj, &mut grad).unwrap();

        let p0 = m.params();
        for k in 0..p0.len() {
            let mut p = p0.clone();
            p[k] += h;
            m.set_params(&p).unwrap();
            let lp = channel_loss(&m, &xs, &r);
            p[k] -= 2.0 * h;
            m.set_params(&p).unwrap();
            let lm = channel_loss(&m, &xs, &r);
            m.set_params(&p0).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            assert!(
                rel_err(grad[k], fd) <= 1e-4,
                "seed {seed} param {k}: analytic {} vs fd {}",
                grad[k],
                fd
            );
        }
    }
}
