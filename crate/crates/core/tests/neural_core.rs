//! Layer behaviour against straightforward oracles, and gradient checks for
//! each tape operation in isolation.

mod support;

use patchrnn::nn::{
    bilstm_forward, lstm_step, softmax_cross_entropy, Grads, LstmParams, ParamStore, Tape, Tensor,
};
use rand::Rng;
use support::gradcheck::{check, layers, project, random_lstm, random_tensor, rng, TOL};

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// The four LSTM equations written out with plain loops.
fn oracle_step(p: &LstmParams, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = h.len();
    let (w, u, b) = (p.w.data(), p.u.data(), p.b.data());
    let pre = |row: usize| {
        let mut s = b[row];
        for (k, xv) in x.iter().enumerate() {
            s += w[row * x.len() + k] * xv;
        }
        for (k, hv) in h.iter().enumerate() {
            s += u[row * n + k] * hv;
        }
        s
    };
    let mut h_new = vec![0.0; n];
    let mut c_new = vec![0.0; n];
    for j in 0..n {
        let i = sig(pre(j));
        let f = sig(pre(n + j));
        let g = pre(2 * n + j).tanh();
        let o = sig(pre(3 * n + j));
        c_new[j] = f * c[j] + i * g;
        h_new[j] = o * c_new[j].tanh();
    }
    (h_new, c_new)
}

fn oracle_run(p: &LstmParams, seq: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = p.hidden();
    let (mut h, mut c) = (vec![0.0; n], vec![0.0; n]);
    seq.iter()
        .map(|x| {
            (h, c) = oracle_step(p, x, &h, &c);
            h.clone()
        })
        .collect()
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

#[test]
fn lstm_step_matches_oracle() {
    let p = random_lstm(42, 4, 3);
    let mut r = rng(43);
    let x: Vec<f64> = (0..4).map(|_| r.random_range(-1.0..1.0)).collect();
    let h: Vec<f64> = (0..3).map(|_| r.random_range(-1.0..1.0)).collect();
    let c: Vec<f64> = (0..3).map(|_| r.random_range(-1.0..1.0)).collect();
    let (h1, c1) = lstm_step(&p, &x, &h, &c).unwrap();
    let (h2, c2) = oracle_step(&p, &x, &h, &c);
    assert!(close(&h1, &h2, 1e-12) && close(&c1, &c2, 1e-12));
}

#[test]
fn bilstm_single_step_is_both_directions_concatenated() {
    let (f, b) = (random_lstm(1, 3, 2), random_lstm(2, 3, 2));
    let x = vec![0.3, -0.4, 0.9];
    let out = bilstm_forward(&f, &b, &Tensor::new(vec![1, 3], x.clone()).unwrap(), 1).unwrap();
    let (hf, _) = oracle_step(&f, &x, &[0.0; 2], &[0.0; 2]);
    let (hb, _) = oracle_step(&b, &x, &[0.0; 2], &[0.0; 2]);
    assert!(close(out.outputs.data(), &[hf, hb].concat(), 1e-12));
}

#[test]
fn zero_weights_constant_input_give_zero_outputs() {
    let p = LstmParams::zeros(2, 3);
    let seq = Tensor::new(vec![4, 2], vec![0.7; 8]).unwrap();
    let out = bilstm_forward(&p, &p, &seq, 4).unwrap();
    assert!(out.outputs.data().iter().all(|&v| v == 0.0));
}

#[test]
fn backward_direction_is_forward_over_the_reversed_sequence() {
    let (f, b) = (random_lstm(5, 3, 4), random_lstm(6, 3, 4));
    let mut r = rng(7);
    let seq: Vec<Vec<f64>> = (0..5)
        .map(|_| (0..3).map(|_| r.random_range(-1.0..1.0)).collect())
        .collect();
    let t = Tensor::new(vec![5, 3], seq.concat()).unwrap();
    let out = bilstm_forward(&f, &b, &t, 5).unwrap();

    let rev: Vec<Vec<f64>> = seq.iter().rev().cloned().collect();
    let bwd_oracle = oracle_run(&b, &rev);
    let fwd_oracle = oracle_run(&f, &seq);
    // backward output at the last step is the reversed run's first output
    assert!(close(&out.outputs.row(4)[4..], &bwd_oracle[0], 1e-12));
    for step in 0..5 {
        assert!(close(&out.outputs.row(step)[..4], &fwd_oracle[step], 1e-12));
        assert!(close(
            &out.outputs.row(step)[4..],
            &bwd_oracle[4 - step],
            1e-12
        ));
    }
    assert!(close(&out.forward_final.0, &fwd_oracle[4], 1e-12));
    assert!(close(&out.backward_final.0, &bwd_oracle[4], 1e-12));
}

#[test]
fn masked_positions_do_not_touch_the_state() {
    let (f, b) = (random_lstm(8, 2, 3), random_lstm(9, 2, 3));
    let mut r = rng(10);
    let data: Vec<f64> = (0..12).map(|_| r.random_range(-1.0..1.0)).collect();
    let long = Tensor::new(vec![6, 2], data.clone()).unwrap();
    let short = Tensor::new(vec![3, 2], data[..6].to_vec()).unwrap();
    let a = bilstm_forward(&f, &b, &long, 3).unwrap();
    let c = bilstm_forward(&f, &b, &short, 3).unwrap();
    assert_eq!(&a.outputs.data()[..18], c.outputs.data());
    assert!(a.outputs.data()[18..].iter().all(|&v| v == 0.0));
    assert_eq!(a.forward_final, c.forward_final);
    assert_eq!(a.backward_final, c.backward_final);
    let empty = bilstm_forward(&f, &b, &long, 0).unwrap();
    assert!(empty.outputs.data().iter().all(|&v| v == 0.0));
    assert_eq!(empty.forward_final.0, vec![0.0; 3]);
}

fn linear_on_tape(w: Tensor, b: Tensor, x: Tensor) -> Vec<f64> {
    let mut store = ParamStore::new();
    let (wi, bi) = (store.add("w", w), store.add("b", b));
    let mut tape = Tape::new(&store);
    let (wv, bv) = (tape.param(wi), tape.param(bi));
    let xv = tape.input(x).unwrap();
    let y = tape.linear(xv, wv, bv).unwrap();
    tape.value(y).data().to_vec()
}

#[test]
fn fully_connected_contract() {
    let x = Tensor::new(vec![2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.0, -1.5]).unwrap();
    let mut eye = Tensor::zeros(&[3, 3]);
    for i in 0..3 {
        eye.data_mut()[i * 3 + i] = 1.0;
    }
    assert_eq!(
        linear_on_tape(eye, Tensor::zeros(&[3]), x.clone()),
        x.data()
    );

    let b = Tensor::new(vec![2], vec![0.25, -4.0]).unwrap();
    assert_eq!(
        linear_on_tape(Tensor::zeros(&[2, 3]), b, x.clone()),
        [0.25, -4.0, 0.25, -4.0]
    );

    let mut r = rng(11);
    let (w, b) = (
        random_tensor(&mut r, &[4, 3], 1.0),
        random_tensor(&mut r, &[4], 1.0),
    );
    let got = linear_on_tape(w.clone(), b.clone(), x.clone());
    for n in 0..2 {
        for o in 0..4 {
            let mut s = b.data()[o];
            for i in 0..3 {
                s += w.data()[o * 3 + i] * x.data()[n * 3 + i];
            }
            assert!((got[n * 4 + o] - s).abs() < 1e-12);
        }
    }
}

#[test]
fn relu_clamps_negatives() {
    let store = ParamStore::new();
    let mut tape = Tape::new(&store);
    let x = tape
        .input(Tensor::new(vec![4], vec![-1.0, 0.0, 2.5, -0.0]).unwrap())
        .unwrap();
    let y = tape.relu(x).unwrap();
    assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.5, 0.0]);
}

#[test]
fn softmax_cross_entropy_matches_explicit_oracle() {
    let mut r = rng(12);
    let logits: Vec<f64> = (0..16).map(|_| r.random_range(-5.0..5.0)).collect();
    let labels: Vec<usize> = (0..8).map(|_| r.random_range(0..2)).collect();
    let (loss, probs) = softmax_cross_entropy(&logits, 2, &labels).unwrap();
    let mut want = 0.0;
    for n in 0..8 {
        let (a, b) = (logits[2 * n].exp(), logits[2 * n + 1].exp());
        let p = [a / (a + b), b / (a + b)];
        assert!((probs[2 * n] - p[0]).abs() < 1e-10 && (probs[2 * n + 1] - p[1]).abs() < 1e-10);
        assert!((probs[2 * n] + probs[2 * n + 1] - 1.0).abs() < 1e-9);
        want -= p[labels[n]].ln();
    }
    assert!((loss - want / 8.0).abs() < 1e-10);
}

#[test]
fn large_inputs_stay_finite() {
    let p = random_lstm(13, 2, 2);
    let seq = Tensor::new(vec![3, 2], vec![1e3, -1e3, 1e3, 1e3, -1e3, -1e3]).unwrap();
    let out = bilstm_forward(&p, &p, &seq, 3).unwrap();
    assert!(out.outputs.all_finite());
    let (loss, probs) = softmax_cross_entropy(&[1e3, -1e3, -1e3, 1e3], 2, &[1, 1]).unwrap();
    assert!(loss.is_finite() && probs.iter().all(|p| p.is_finite()));
}

// ---- gradient checks ----

const SEEDS: std::ops::Range<u64> = 0..10;

#[test]
fn linear_relu_gradients() {
    for seed in SEEDS {
        let e = layers::linear_relu(seed);
        assert!(e < TOL, "seed {seed}: {e}");
    }
}

#[test]
fn concat_and_gather_gradients() {
    for seed in SEEDS {
        let e = layers::concat_gather(seed);
        assert!(e < TOL, "seed {seed}: {e}");
    }
}

#[test]
fn masked_lstm_gradients_both_directions() {
    for seed in SEEDS {
        for reverse in [false, true] {
            let e = layers::masked_lstm(seed, reverse);
            assert!(e < TOL, "seed {seed} reverse {reverse}: {e}");
        }
    }
}

#[test]
fn weighted_cross_entropy_gradients() {
    for seed in SEEDS {
        let e = layers::weighted_cross_entropy(seed);
        assert!(e < TOL, "seed {seed}: {e}");
    }
}

#[test]
fn shared_weights_accumulate_both_branches() {
    for seed in SEEDS {
        let mut r = rng(seed);
        let mut store = ParamStore::new();
        let w = store.add("w", random_tensor(&mut r, &[3, 4], 1.0));
        let b = store.add("b", random_tensor(&mut r, &[3], 1.0));
        let xa = random_tensor(&mut r, &[2, 4], 1.0);
        let xb = random_tensor(&mut r, &[2, 4], 1.0);

        let branch = |s: &ParamStore, x: &Tensor, use_w: bool| -> Grads {
            let mut t = Tape::new(s);
            let (wv, bv) = (t.param(w), t.param(b));
            let xv = t.input(x.clone()).unwrap();
            let y = t.linear(xv, wv, bv).unwrap();
            let a = t.relu(y).unwrap();
            let loss = project(&mut t, a, seed + if use_w { 1 } else { 2 });
            t.backward(loss).unwrap()
        };
        let ga = branch(&store, &xa, true);
        let gb = branch(&store, &xb, false);

        let e = check(&store, seed, |t| {
            let (wv, bv) = (t.param(w), t.param(b));
            let (va, vb) = (t.input(xa.clone()).unwrap(), t.input(xb.clone()).unwrap());
            let ya = t.linear(va, wv, bv).unwrap();
            let yb = t.linear(vb, wv, bv).unwrap();
            let (aa, ab) = (t.relu(ya).unwrap(), t.relu(yb).unwrap());
            let la = project(t, aa, seed + 1);
            let lb = project(t, ab, seed + 2);
            t.add(la, lb).unwrap()
        });
        assert!(e < TOL, "seed {seed}: {e}");

        let mut t = Tape::new(&store);
        let (wv, bv) = (t.param(w), t.param(b));
        let (va, vb) = (t.input(xa.clone()).unwrap(), t.input(xb.clone()).unwrap());
        let ya = t.linear(va, wv, bv).unwrap();
        let yb = t.linear(vb, wv, bv).unwrap();
        let (aa, ab) = (t.relu(ya).unwrap(), t.relu(yb).unwrap());
        let la = project(&mut t, aa, seed + 1);
        let lb = project(&mut t, ab, seed + 2);
        let total = t.add(la, lb).unwrap();
        let g = t.backward(total).unwrap();
        for id in [w, b] {
            let sum: Vec<f64> = ga
                .get(id)
                .iter()
                .zip(gb.get(id))
                .map(|(x, y)| x + y)
                .collect();
            assert!(close(g.get(id), &sum, 1e-12));
        }
    }
}
