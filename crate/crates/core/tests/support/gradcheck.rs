use patchrnn::nn::{Grads, LstmParams, ParamStore, SeqLayout, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-5;
pub const TOL: f64 = 1e-4;
// keeps the ratio meaningful where both gradients are ~0
pub const FLOOR: f64 = 1e-6;

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FLOOR)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-scale..scale)).collect(),
    )
    .unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Worst relative error between analytic gradients and central differences.
/// `coords` limits the number of checked coordinates per tensor (all when None).
pub fn max_rel_error<F>(store: &ParamStore, coords: Option<usize>, seed: u64, f: F) -> f64
where
    F: Fn(&ParamStore) -> (f64, Grads),
{
    let (_, grads) = f(store);
    let mut pick = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let mut worst: f64 = 0.0;
    let mut probe = store.clone();
    for (id, p) in store.iter() {
        if !p.trainable {
            continue;
        }
        let n = p.value.len();
        let idx: Vec<usize> = match coords {
            Some(k) if k < n => (0..k).map(|_| pick.random_range(0..n)).collect(),
            _ => (0..n).collect(),
        };
        for i in idx {
            let orig = p.value.data()[i];
            probe.get_mut(id).value.data_mut()[i] = orig + H;
            let up = f(&probe).0;
            probe.get_mut(id).value.data_mut()[i] = orig - H;
            let down = f(&probe).0;
            probe.get_mut(id).value.data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * H);
            let analytic = grads.get(id)[i];
            let e = rel_err(analytic, numeric);
            if e > worst {
                worst = e;
            }
        }
    }
    worst
}

pub fn random_lstm(seed: u64, input: usize, hidden: usize) -> LstmParams {
    let mut r = rng(seed);
    LstmParams {
        w: random_tensor(&mut r, &[4 * hidden, input], 0.8),
        u: random_tensor(&mut r, &[4 * hidden, hidden], 0.8),
        b: random_tensor(&mut r, &[4 * hidden], 0.5),
    }
}

/// Projects `out` onto a fixed random direction so every output coordinate
/// contributes to a scalar loss.
pub fn project(tape: &mut Tape, out: Var, seed: u64) -> Var {
    let shape = tape.value(out).shape().to_vec();
    let dir = random_tensor(&mut rng(seed), &shape, 1.0);
    let d = tape.input(dir).unwrap();
    let prod = tape.mul(out, d).unwrap();
    tape.sum(prod).unwrap()
}

/// Every coordinate of every parameter of a graph built by `build`.
pub fn check<F>(store: &ParamStore, seed: u64, build: F) -> f64
where
    F: Fn(&mut Tape) -> Var,
{
    max_rel_error(store, None, seed, |s| {
        let mut tape = Tape::new(s);
        let loss = build(&mut tape);
        (tape.value(loss).data()[0], tape.backward(loss).unwrap())
    })
}

/// One small graph per tape operation; each returns the worst relative error.
pub mod layers {
    use super::*;

    pub fn linear_relu(seed: u64) -> f64 {
        let mut r = rng(seed);
        let mut store = ParamStore::new();
        let x = store.add("x", random_tensor(&mut r, &[3, 5], 1.0));
        let w = store.add("w", random_tensor(&mut r, &[4, 5], 1.0));
        let b = store.add("b", random_tensor(&mut r, &[4], 1.0));
        check(&store, seed, |t| {
            let (xv, wv, bv) = (t.param(x), t.param(w), t.param(b));
            let y = t.linear(xv, wv, bv).unwrap();
            let a = t.relu(y).unwrap();
            project(t, a, seed + 100)
        })
    }

    pub fn concat_gather(seed: u64) -> f64 {
        let mut r = rng(seed);
        let mut store = ParamStore::new();
        let table = store.add("table", random_tensor(&mut r, &[6, 3], 1.0));
        let other = store.add("other", random_tensor(&mut r, &[4, 2], 1.0));
        check(&store, seed, |t| {
            let tv = t.param(table);
            let g = t
                .gather_rows(tv, vec![Some(2), None, Some(2), Some(5)])
                .unwrap();
            let ov = t.param(other);
            let c = t.concat_cols(&[g, ov]).unwrap();
            project(t, c, seed + 200)
        })
    }

    pub fn masked_lstm(seed: u64, reverse: bool) -> f64 {
        let mut r = rng(seed);
        let (input, hidden, steps) = (3, 4, 5);
        let layout = SeqLayout::new(steps, vec![5, 2, 0]).unwrap();
        let mut store = ParamStore::new();
        let x = store.add("x", random_tensor(&mut r, &[layout.rows(), input], 1.0));
        let p = random_lstm(seed + 300, input, hidden);
        let (w, u, b) = (
            store.add("w", p.w),
            store.add("u", p.u),
            store.add("b", p.b),
        );
        check(&store, seed, |t| {
            let (xv, wv, uv, bv) = (t.param(x), t.param(w), t.param(u), t.param(b));
            let out = t.lstm(xv, wv, uv, bv, &layout, reverse).unwrap();
            project(t, out, seed + 400)
        })
    }

    pub fn weighted_cross_entropy(seed: u64) -> f64 {
        let mut r = rng(seed);
        let mut store = ParamStore::new();
        let logits = store.add("logits", random_tensor(&mut r, &[6, 2], 3.0));
        let labels: Vec<usize> = (0..6).map(|i| i % 2).collect();
        check(&store, seed, |t| {
            let l = t.param(logits);
            t.softmax_cross_entropy(l, &labels, Some(&[0.7, 1.9]))
                .unwrap()
        })
    }
}
