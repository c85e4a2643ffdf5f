use rand::Rng;

use super::{gemm, mismatch, NnError, Result, Tensor};

/// Weights of one LSTM direction. Gate blocks are stacked in the order
/// input, forget, candidate, output.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    /// 4h × input
    pub w: Tensor,
    /// 4h × h
    pub u: Tensor,
    /// 4h
    pub b: Tensor,
}

impl LstmParams {
    pub fn zeros(input_dim: usize, hidden: usize) -> LstmParams {
        LstmParams {
            w: Tensor::zeros(&[4 * hidden, input_dim]),
            u: Tensor::zeros(&[4 * hidden, hidden]),
            b: Tensor::zeros(&[4 * hidden]),
        }
    }

    /// Uniform fan-in weights, zero biases, forget-gate bias 1.
    pub fn init<R: Rng>(rng: &mut R, input_dim: usize, hidden: usize) -> LstmParams {
        let w = Tensor::uniform_fan_in(rng, &[4 * hidden, input_dim], input_dim);
        let u = Tensor::uniform_fan_in(rng, &[4 * hidden, hidden], hidden);
        let mut b = Tensor::zeros(&[4 * hidden]);
        b.data_mut()[hidden..2 * hidden].fill(1.0);
        LstmParams { w, u, b }
    }

    pub fn hidden(&self) -> usize {
        self.u.cols()
    }

    pub fn input_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn parameter_count(&self) -> usize {
        self.w.len() + self.u.len() + self.b.len()
    }

    fn check(&self) -> Result<()> {
        let h = self.hidden();
        if self.u.shape() != [4 * h, h] || self.w.rows() != 4 * h || self.b.shape() != [4 * h] {
            return Err(mismatch(format!(
                "lstm params w {:?} u {:?} b {:?}",
                self.w.shape(),
                self.u.shape(),
                self.b.shape()
            )));
        }
        Ok(())
    }
}

/// Time-major batch layout: row `t * batch + b` holds step `t` of sequence `b`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeqLayout {
    pub steps: usize,
    pub batch: usize,
    pub lengths: Vec<usize>,
}

impl SeqLayout {
    pub fn new(steps: usize, lengths: Vec<usize>) -> Result<SeqLayout> {
        if let Some(&length) = lengths.iter().find(|&&l| l > steps) {
            return Err(NnError::LengthExceedsSequence { length, steps });
        }
        Ok(SeqLayout {
            steps,
            batch: lengths.len(),
            lengths,
        })
    }

    pub fn rows(&self) -> usize {
        self.steps * self.batch
    }

    fn order(&self, reverse: bool) -> Box<dyn Iterator<Item = usize>> {
        if reverse {
            Box::new((0..self.steps).rev())
        } else {
            Box::new(0..self.steps)
        }
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

/// Gate activations in place over one row of pre-activations, then the new
/// cell and hidden state.
fn cell(pre: &mut [f64], c_prev: &[f64], c: &mut [f64], tanh_c: &mut [f64], h: &mut [f64]) {
    let n = c_prev.len();
    for j in 0..n {
        let i = sigmoid(pre[j]);
        let f = sigmoid(pre[n + j]);
        let g = pre[2 * n + j].tanh();
        let o = sigmoid(pre[3 * n + j]);
        pre[j] = i;
        pre[n + j] = f;
        pre[2 * n + j] = g;
        pre[3 * n + j] = o;
        c[j] = f * c_prev[j] + i * g;
        tanh_c[j] = c[j].tanh();
        h[j] = o * tanh_c[j];
    }
}

/// One LSTM step for a single input vector.
pub fn lstm_step(
    p: &LstmParams,
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    p.check()?;
    let h = p.hidden();
    if x.len() != p.input_dim() || h_prev.len() != h || c_prev.len() != h {
        return Err(mismatch(format!(
            "lstm_step x {} h {} c {} for params {}→{}",
            x.len(),
            h_prev.len(),
            c_prev.len(),
            p.input_dim(),
            h
        )));
    }
    let mut pre = p.b.data().to_vec();
    gemm(1, x.len(), 4 * h, x, false, p.w.data(), true, &mut pre, 1.0);
    gemm(1, h, 4 * h, h_prev, false, p.u.data(), true, &mut pre, 1.0);
    let mut c = vec![0.0; h];
    let mut tanh_c = vec![0.0; h];
    let mut h_new = vec![0.0; h];
    cell(&mut pre, c_prev, &mut c, &mut tanh_c, &mut h_new);
    Ok((h_new, c))
}

/// Everything the backward pass needs from a sequence forward.
#[derive(Debug, Clone)]
pub(crate) struct LstmCache {
    /// post-activation gates, rows × 4h
    gates: Vec<f64>,
    c: Vec<f64>,
    c_prev: Vec<f64>,
    h_prev: Vec<f64>,
    tanh_c: Vec<f64>,
}

pub(crate) struct SeqGrads {
    pub dx: Option<Vec<f64>>,
    pub dw: Vec<f64>,
    pub du: Vec<f64>,
    pub db: Vec<f64>,
}

/// Masked sequence forward. Steps at or beyond a sequence's valid length
/// leave its state untouched and emit zeros. Returns rows × h outputs.
#[allow(clippy::too_many_arguments)]
pub(crate) fn seq_forward(
    x: &[f64],
    input_dim: usize,
    w: &[f64],
    u: &[f64],
    b: &[f64],
    hidden: usize,
    layout: &SeqLayout,
    reverse: bool,
) -> (Vec<f64>, LstmCache) {
    let (rows, bsz, h4) = (layout.rows(), layout.batch, 4 * hidden);
    let mut pre_all = vec![0.0; rows * h4];
    gemm(rows, input_dim, h4, x, false, w, true, &mut pre_all, 0.0);
    for row in pre_all.chunks_exact_mut(h4) {
        row.iter_mut().zip(b).for_each(|(v, bb)| *v += bb);
    }

    let mut cache = LstmCache {
        gates: vec![0.0; rows * h4],
        c: vec![0.0; rows * hidden],
        c_prev: vec![0.0; rows * hidden],
        h_prev: vec![0.0; rows * hidden],
        tanh_c: vec![0.0; rows * hidden],
    };
    let mut out = vec![0.0; rows * hidden];
    let mut h_state = vec![0.0; bsz * hidden];
    let mut c_state = vec![0.0; bsz * hidden];
    let mut rec = vec![0.0; bsz * h4];

    for t in layout.order(reverse) {
        gemm(bsz, hidden, h4, &h_state, false, u, true, &mut rec, 0.0);
        for s in 0..bsz {
            if t >= layout.lengths[s] {
                continue;
            }
            let r = t * bsz + s;
            let (hs, ht) = (s * hidden, r * hidden);
            let gates = &mut cache.gates[r * h4..(r + 1) * h4];
            for ((g, p), q) in gates
                .iter_mut()
                .zip(&pre_all[r * h4..(r + 1) * h4])
                .zip(&rec[s * h4..(s + 1) * h4])
            {
                *g = p + q;
            }
            cache.c_prev[ht..ht + hidden].copy_from_slice(&c_state[hs..hs + hidden]);
            cache.h_prev[ht..ht + hidden].copy_from_slice(&h_state[hs..hs + hidden]);
            cell(
                gates,
                &cache.c_prev[ht..ht + hidden],
                &mut cache.c[ht..ht + hidden],
                &mut cache.tanh_c[ht..ht + hidden],
                &mut out[ht..ht + hidden],
            );
            h_state[hs..hs + hidden].copy_from_slice(&out[ht..ht + hidden]);
            c_state[hs..hs + hidden].copy_from_slice(&cache.c[ht..ht + hidden]);
        }
    }
    (out, cache)
}

/// Backpropagation through time for [`seq_forward`].
#[allow(clippy::too_many_arguments)]
pub(crate) fn seq_backward(
    dout: &[f64],
    x: &[f64],
    input_dim: usize,
    w: &[f64],
    u: &[f64],
    hidden: usize,
    layout: &SeqLayout,
    reverse: bool,
    cache: &LstmCache,
    need_dx: bool,
) -> SeqGrads {
    let (rows, bsz, h4) = (layout.rows(), layout.batch, 4 * hidden);
    let mut dg = vec![0.0; rows * h4];
    let mut du = vec![0.0; h4 * hidden];
    let mut dh = vec![0.0; bsz * hidden];
    let mut dc = vec![0.0; bsz * hidden];
    let mut dh_prev = vec![0.0; bsz * hidden];

    for t in layout.order(!reverse) {
        let block = t * bsz;
        let mut any = false;
        for s in 0..bsz {
            if t >= layout.lengths[s] {
                continue;
            }
            any = true;
            let r = block + s;
            let gates = &cache.gates[r * h4..(r + 1) * h4];
            let d = &mut dg[r * h4..(r + 1) * h4];
            for j in 0..hidden {
                let (i, f, g, o) = (
                    gates[j],
                    gates[hidden + j],
                    gates[2 * hidden + j],
                    gates[3 * hidden + j],
                );
                let k = r * hidden + j;
                let tc = cache.tanh_c[k];
                let dh_t = dh[s * hidden + j] + dout[k];
                let dc_t = dc[s * hidden + j] + dh_t * o * (1.0 - tc * tc);
                d[j] = dc_t * g * i * (1.0 - i);
                d[hidden + j] = dc_t * cache.c_prev[k] * f * (1.0 - f);
                d[2 * hidden + j] = dc_t * i * (1.0 - g * g);
                d[3 * hidden + j] = dh_t * tc * o * (1.0 - o);
                dc[s * hidden + j] = dc_t * f;
            }
        }
        if !any {
            continue;
        }
        let dg_t = &dg[block * h4..(block + bsz) * h4];
        gemm(bsz, h4, hidden, dg_t, false, u, false, &mut dh_prev, 0.0);
        gemm(
            h4,
            bsz,
            hidden,
            dg_t,
            true,
            &cache.h_prev[block * hidden..(block + bsz) * hidden],
            false,
            &mut du,
            1.0,
        );
        for s in 0..bsz {
            if t < layout.lengths[s] {
                dh[s * hidden..(s + 1) * hidden]
                    .copy_from_slice(&dh_prev[s * hidden..(s + 1) * hidden]);
            }
        }
    }

    let dx = need_dx.then(|| {
        let mut dx = vec![0.0; rows * input_dim];
        gemm(rows, h4, input_dim, &dg, false, w, false, &mut dx, 0.0);
        dx
    });
    let mut dw = vec![0.0; h4 * input_dim];
    gemm(h4, rows, input_dim, &dg, true, x, false, &mut dw, 0.0);
    let mut db = vec![0.0; h4];
    for row in dg.chunks_exact(h4) {
        db.iter_mut().zip(row).for_each(|(a, b)| *a += b);
    }
    SeqGrads { dx, dw, du, db }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiLstmOutput {
    /// T × 2h, forward half first. Rows at or beyond the valid length are zero.
    pub outputs: Tensor,
    /// (h, c) after the last valid step of the forward direction.
    pub forward_final: (Vec<f64>, Vec<f64>),
    /// (h, c) after the backward direction reaches position 0.
    pub backward_final: (Vec<f64>, Vec<f64>),
}

/// Bidirectional LSTM over one sequence (T × input) with `length` valid steps.
pub fn bilstm_forward(
    fwd: &LstmParams,
    bwd: &LstmParams,
    sequence: &Tensor,
    length: usize,
) -> Result<BiLstmOutput> {
    fwd.check()?;
    bwd.check()?;
    let steps = sequence.rows();
    if steps == 0 {
        return Err(mismatch("bilstm_forward needs at least one step"));
    }
    let input_dim = sequence.cols();
    if fwd.input_dim() != input_dim || bwd.input_dim() != input_dim || fwd.hidden() != bwd.hidden()
    {
        return Err(mismatch(format!(
            "bilstm over {input_dim}-dim input with params {}/{}",
            fwd.input_dim(),
            bwd.input_dim()
        )));
    }
    let layout = SeqLayout::new(steps, vec![length])?;
    let h = fwd.hidden();
    let run = |p: &LstmParams, reverse| {
        seq_forward(
            sequence.data(),
            input_dim,
            p.w.data(),
            p.u.data(),
            p.b.data(),
            h,
            &layout,
            reverse,
        )
    };
    let (out_f, cache_f) = run(fwd, false);
    let (out_b, cache_b) = run(bwd, true);

    let mut outputs = Vec::with_capacity(steps * 2 * h);
    for t in 0..steps {
        outputs.extend_from_slice(&out_f[t * h..(t + 1) * h]);
        outputs.extend_from_slice(&out_b[t * h..(t + 1) * h]);
    }
    let state_at = |out: &[f64], cache: &LstmCache, t: Option<usize>| match t {
        Some(t) => (
            out[t * h..(t + 1) * h].to_vec(),
            cache.c[t * h..(t + 1) * h].to_vec(),
        ),
        None => (vec![0.0; h], vec![0.0; h]),
    };
    let last = length.checked_sub(1);
    Ok(BiLstmOutput {
        outputs: Tensor::new(vec![steps, 2 * h], outputs)?,
        forward_final: state_at(&out_f, &cache_f, last),
        backward_final: state_at(&out_b, &cache_b, last.map(|_| 0)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_zero_state() {
        let p = LstmParams::zeros(4, 3);
        let (h, c) = lstm_step(&p, &[1.0, -2.0, 3.0, 0.5], &[0.0; 3], &[0.0; 3]).unwrap();
        assert_eq!(h, vec![0.0; 3]);
        assert_eq!(c, vec![0.0; 3]);
    }

    #[test]
    fn zero_weights_carry_half_the_cell() {
        let p = LstmParams::zeros(2, 3);
        let c_prev = [1.0, -2.0, 0.25];
        let (h, c) = lstm_step(&p, &[0.3, 0.7], &[0.0; 3], &c_prev).unwrap();
        for j in 0..3 {
            assert_eq!(c[j], 0.5 * c_prev[j]);
            assert_eq!(h[j], 0.5 * (0.5 * c_prev[j]).tanh());
        }
    }

    #[test]
    fn step_rejects_bad_dims() {
        let p = LstmParams::zeros(2, 3);
        assert!(lstm_step(&p, &[0.0; 3], &[0.0; 3], &[0.0; 3]).is_err());
    }

    #[test]
    fn init_sets_forget_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = LstmParams::init(&mut rng, 5, 2);
        assert_eq!(p.b.data(), &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(p.w.data().iter().all(|v| v.abs() < 1.0 / 5f64.sqrt()));
        assert_eq!(p.parameter_count(), 4 * 2 * (5 + 2 + 1));
    }

    #[test]
    fn length_beyond_steps_is_an_error() {
        let p = LstmParams::zeros(1, 1);
        let seq = Tensor::zeros(&[2, 1]);
        assert!(matches!(
            bilstm_forward(&p, &p, &seq, 3),
            Err(NnError::LengthExceedsSequence {
                length: 3,
                steps: 2
            })
        ));
    }
}
