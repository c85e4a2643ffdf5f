use super::lstm::{seq_backward, seq_forward, LstmCache, SeqLayout};
use super::{gemm, mismatch, Grads, NnError, ParamId, ParamStore, Result, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

struct LstmOp {
    x: Var,
    w: Var,
    u: Var,
    b: Var,
    hidden: usize,
    layout: SeqLayout,
    reverse: bool,
    cache: LstmCache,
}

struct CeOp {
    logits: Var,
    labels: Vec<usize>,
    weights: Vec<f64>,
    probs: Vec<f64>,
}

enum Op {
    Input,
    Param(ParamId),
    Linear { x: Var, w: Var, b: Var },
    Relu(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Sum(Var),
    ConcatCols(Vec<Var>),
    GatherRows { src: Var, rows: Vec<Option<usize>> },
    Lstm(Box<LstmOp>),
    SoftmaxCe(Box<CeOp>),
}

struct Node {
    op: Op,
    // empty for parameters, which are read from the store
    value: Tensor,
    requires_grad: bool,
}

/// Records a forward computation so it can be differentiated once.
pub struct Tape<'a> {
    store: &'a ParamStore,
    nodes: Vec<Node>,
}

/// Numerically stable softmax of one row.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Mean cross-entropy over `labels.len()` rows of `classes` logits, and the
/// row-major probabilities.
pub fn softmax_cross_entropy(
    logits: &[f64],
    classes: usize,
    labels: &[usize],
) -> Result<(f64, Vec<f64>)> {
    let (loss, probs) = ce_forward(logits, classes, labels, &vec![1.0; classes])?;
    Ok((loss, probs))
}

fn ce_forward(
    logits: &[f64],
    classes: usize,
    labels: &[usize],
    weights: &[f64],
) -> Result<(f64, Vec<f64>)> {
    if classes == 0 || logits.len() != labels.len() * classes {
        return Err(mismatch(format!(
            "{} logits for {} labels of {classes} classes",
            logits.len(),
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(mismatch(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    let mut probs = Vec::with_capacity(logits.len());
    let (mut total, mut norm) = (0.0, 0.0);
    for (row, &y) in logits.chunks_exact(classes).zip(labels) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        total += weights[y] * (lse - row[y]);
        norm += weights[y];
        probs.extend(row.iter().map(|z| (z - lse).exp()));
    }
    let loss = if norm > 0.0 { total / norm } else { 0.0 };
    Ok((loss, probs))
}

impl<'a> Tape<'a> {
    pub fn new(store: &'a ParamStore) -> Tape<'a> {
        Tape {
            store,
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match self.nodes[v.0].op {
            Op::Param(id) => self.store.value(id),
            _ => &self.nodes[v.0].value,
        }
    }

    fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool, what: &str) -> Result<Var> {
        if !value.all_finite() {
            return Err(NnError::NonFinite(what.to_string()));
        }
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn input(&mut self, value: Tensor) -> Result<Var> {
        self.push(Op::Input, value, false, "input")
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let requires_grad = self.store.get(id).trainable;
        self.nodes.push(Node {
            op: Op::Param(id),
            value: Tensor::zeros(&[0]),
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// `x·Wᵀ + b` for x: n × in, W: out × in, b: out.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let (n, inp, out) = (xv.rows(), xv.cols(), wv.rows());
        if wv.cols() != inp || bv.len() != out {
            return Err(mismatch(format!(
                "linear x {:?} w {:?} b {:?}",
                xv.shape(),
                wv.shape(),
                bv.shape()
            )));
        }
        let mut y = Vec::with_capacity(n * out);
        for _ in 0..n {
            y.extend_from_slice(bv.data());
        }
        gemm(n, inp, out, xv.data(), false, wv.data(), true, &mut y, 1.0);
        let rg = self.requires_grad(x) || self.requires_grad(w) || self.requires_grad(b);
        self.push(
            Op::Linear { x, w, b },
            Tensor::new(vec![n, out], y)?,
            rg,
            "linear",
        )
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let y = Tensor::new(
            xv.shape().to_vec(),
            xv.data().iter().map(|v| v.max(0.0)).collect(),
        )?;
        let rg = self.requires_grad(x);
        self.push(Op::Relu(x), y, rg, "relu")
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(mismatch(format!(
                "{what} of {:?} and {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let (av, bv) = (self.value(a), self.value(b));
        let y = Tensor::new(
            av.shape().to_vec(),
            av.data()
                .iter()
                .zip(bv.data())
                .map(|(x, y)| x + y)
                .collect(),
        )?;
        let rg = self.requires_grad(a) || self.requires_grad(b);
        self.push(Op::Add(a, b), y, rg, "add")
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let (av, bv) = (self.value(a), self.value(b));
        let y = Tensor::new(
            av.shape().to_vec(),
            av.data()
                .iter()
                .zip(bv.data())
                .map(|(x, y)| x * y)
                .collect(),
        )?;
        let rg = self.requires_grad(a) || self.requires_grad(b);
        self.push(Op::Mul(a, b), y, rg, "mul")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        let rg = self.requires_grad(x);
        self.push(Op::Sum(x), Tensor::scalar(s), rg, "sum")
    }

    /// Concatenate 2-D values with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(mismatch("concat of nothing"));
        };
        let rows = self.value(first).rows();
        if let Some(bad) = parts.iter().find(|&&p| self.value(p).rows() != rows) {
            return Err(mismatch(format!(
                "concat rows {} vs {}",
                rows,
                self.value(*bad).rows()
            )));
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut y = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                y.extend_from_slice(self.value(p).row(r));
            }
        }
        let rg = parts.iter().any(|&p| self.requires_grad(p));
        self.push(
            Op::ConcatCols(parts.to_vec()),
            Tensor::new(vec![rows, total], y)?,
            rg,
            "concat",
        )
    }

    /// Pick rows of a 2-D value; `None` yields a zero row.
    pub fn gather_rows(&mut self, src: Var, rows: Vec<Option<usize>>) -> Result<Var> {
        let sv = self.value(src);
        let (n, c) = (sv.rows(), sv.cols());
        if let Some(bad) = rows.iter().flatten().find(|&&r| r >= n) {
            return Err(mismatch(format!("row {bad} out of {n}")));
        }
        let mut y = vec![0.0; rows.len() * c];
        for (i, r) in rows.iter().enumerate() {
            if let Some(r) = *r {
                y[i * c..(i + 1) * c].copy_from_slice(sv.row(r));
            }
        }
        let rg = self.requires_grad(src);
        let value = Tensor::new(vec![rows.len(), c], y)?;
        self.push(Op::GatherRows { src, rows }, value, rg, "gather")
    }

    /// One LSTM direction over a time-major batch `x` (steps·batch × in).
    /// Output rows hold the hidden state at each valid step and zero elsewhere.
    pub fn lstm(
        &mut self,
        x: Var,
        w: Var,
        u: Var,
        b: Var,
        layout: &SeqLayout,
        reverse: bool,
    ) -> Result<Var> {
        let (xv, wv, uv, bv) = (self.value(x), self.value(w), self.value(u), self.value(b));
        let hidden = uv.cols();
        let h4 = 4 * hidden;
        if xv.rows() != layout.rows()
            || wv.shape() != [h4, xv.cols()]
            || uv.shape() != [h4, hidden]
            || bv.shape() != [h4]
        {
            return Err(mismatch(format!(
                "lstm x {:?} ({} rows expected) w {:?} u {:?} b {:?}",
                xv.shape(),
                layout.rows(),
                wv.shape(),
                uv.shape(),
                bv.shape()
            )));
        }
        let (out, cache) = seq_forward(
            xv.data(),
            xv.cols(),
            wv.data(),
            uv.data(),
            bv.data(),
            hidden,
            layout,
            reverse,
        );
        let rg = [x, w, u, b].iter().any(|&v| self.requires_grad(v));
        let value = Tensor::new(vec![layout.rows(), hidden], out)?;
        let op = Op::Lstm(Box::new(LstmOp {
            x,
            w,
            u,
            b,
            hidden,
            layout: layout.clone(),
            reverse,
            cache,
        }));
        self.push(op, value, rg, "lstm")
    }

    /// Mean (optionally class-weighted) cross-entropy of softmax(logits).
    pub fn softmax_cross_entropy(
        &mut self,
        logits: Var,
        labels: &[usize],
        weights: Option<&[f64]>,
    ) -> Result<Var> {
        let lv = self.value(logits);
        let classes = lv.cols();
        let weights = match weights {
            Some(w) if w.len() == classes => w.to_vec(),
            Some(w) => {
                return Err(mismatch(format!(
                    "{} class weights for {classes} classes",
                    w.len()
                )))
            }
            None => vec![1.0; classes],
        };
        if lv.rows() != labels.len() {
            return Err(mismatch(format!(
                "{} logit rows for {} labels",
                lv.rows(),
                labels.len()
            )));
        }
        let (loss, probs) = ce_forward(lv.data(), classes, labels, &weights)?;
        let rg = self.requires_grad(logits);
        let op = Op::SoftmaxCe(Box::new(CeOp {
            logits,
            labels: labels.to_vec(),
            weights,
            probs,
        }));
        self.push(op, Tensor::scalar(loss), rg, "softmax cross-entropy")
    }

    /// Row-major probabilities computed by a cross-entropy node.
    pub fn probabilities(&self, loss: Var) -> Option<&[f64]> {
        match &self.nodes[loss.0].op {
            Op::SoftmaxCe(ce) => Some(&ce.probs),
            _ => None,
        }
    }

    /// Reverse-mode gradients of a scalar with respect to every trainable
    /// parameter that was read on this tape.
    pub fn backward(&self, loss: Var) -> Result<Grads> {
        if self.value(loss).len() != 1 {
            return Err(mismatch(format!(
                "backward from non-scalar {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads = Grads::zeros_like(self.store);
        let mut adj: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Input => {}
                Op::Param(id) => {
                    grads
                        .get_mut(*id)
                        .iter_mut()
                        .zip(&g)
                        .for_each(|(a, b)| *a += b);
                }
                Op::Linear { x, w, b } => {
                    let (xv, wv) = (self.value(*x), self.value(*w));
                    let (n, inp, out) = (xv.rows(), xv.cols(), wv.rows());
                    if self.requires_grad(*x) {
                        gemm(
                            n,
                            out,
                            inp,
                            &g,
                            false,
                            wv.data(),
                            false,
                            self.slot(&mut adj, *x),
                            1.0,
                        );
                    }
                    if self.requires_grad(*w) {
                        gemm(
                            out,
                            n,
                            inp,
                            &g,
                            true,
                            xv.data(),
                            false,
                            self.slot(&mut adj, *w),
                            1.0,
                        );
                    }
                    if self.requires_grad(*b) {
                        let db = self.slot(&mut adj, *b);
                        for row in g.chunks_exact(out) {
                            db.iter_mut().zip(row).for_each(|(a, v)| *a += v);
                        }
                    }
                }
                Op::Relu(x) => {
                    let xv = self.value(*x).data();
                    let dx = self.slot(&mut adj, *x);
                    for ((d, &v), gv) in dx.iter_mut().zip(xv).zip(&g) {
                        if v > 0.0 {
                            *d += gv;
                        }
                    }
                }
                Op::Add(a, b) => {
                    for v in [*a, *b] {
                        if self.requires_grad(v) {
                            self.slot(&mut adj, v)
                                .iter_mut()
                                .zip(&g)
                                .for_each(|(d, gv)| *d += gv);
                        }
                    }
                }
                Op::Mul(a, b) => {
                    for (v, other) in [(*a, *b), (*b, *a)] {
                        if self.requires_grad(v) {
                            let ov = self.value(other).data();
                            let d = self.slot(&mut adj, v);
                            for ((d, gv), o) in d.iter_mut().zip(&g).zip(ov) {
                                *d += gv * o;
                            }
                        }
                    }
                }
                Op::Sum(x) => {
                    self.slot(&mut adj, *x).iter_mut().for_each(|d| *d += g[0]);
                }
                Op::ConcatCols(parts) => {
                    let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
                    let mut offset = 0;
                    for &p in parts {
                        let c = self.value(p).cols();
                        if self.requires_grad(p) {
                            let d = self.slot(&mut adj, p);
                            for (r, drow) in d.chunks_exact_mut(c).enumerate() {
                                let src = &g[r * total + offset..r * total + offset + c];
                                drow.iter_mut().zip(src).for_each(|(a, b)| *a += b);
                            }
                        }
                        offset += c;
                    }
                }
                Op::GatherRows { src, rows } => {
                    let c = self.value(*src).cols();
                    let d = self.slot(&mut adj, *src);
                    for (i, r) in rows.iter().enumerate() {
                        if let Some(r) = *r {
                            let drow = &mut d[r * c..(r + 1) * c];
                            drow.iter_mut()
                                .zip(&g[i * c..(i + 1) * c])
                                .for_each(|(a, b)| *a += b);
                        }
                    }
                }
                Op::Lstm(op) => {
                    let xv = self.value(op.x);
                    let sg = seq_backward(
                        &g,
                        xv.data(),
                        xv.cols(),
                        self.value(op.w).data(),
                        self.value(op.u).data(),
                        op.hidden,
                        &op.layout,
                        op.reverse,
                        &op.cache,
                        self.requires_grad(op.x),
                    );
                    if let Some(dx) = sg.dx {
                        accumulate(self.slot(&mut adj, op.x), &dx);
                    }
                    for (v, d) in [(op.w, &sg.dw), (op.u, &sg.du), (op.b, &sg.db)] {
                        if self.requires_grad(v) {
                            accumulate(self.slot(&mut adj, v), d);
                        }
                    }
                }
                Op::SoftmaxCe(ce) => {
                    let classes = self.value(ce.logits).cols();
                    let norm: f64 = ce.labels.iter().map(|&y| ce.weights[y]).sum();
                    if norm > 0.0 {
                        let d = self.slot(&mut adj, ce.logits);
                        for (r, &y) in ce.labels.iter().enumerate() {
                            let scale = g[0] * ce.weights[y] / norm;
                            for k in 0..classes {
                                let target = if k == y { 1.0 } else { 0.0 };
                                d[r * classes + k] += scale * (ce.probs[r * classes + k] - target);
                            }
                        }
                    }
                }
            }
        }
        if !grads.all_finite() {
            return Err(NnError::NonFinite("backward".into()));
        }
        Ok(grads)
    }

    fn slot<'g>(&self, adj: &'g mut [Option<Vec<f64>>], v: Var) -> &'g mut Vec<f64> {
        let n = self.value(v).len();
        adj[v.0].get_or_insert_with(|| vec![0.0; n])
    }
}

fn accumulate(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(a, b)| *a += b);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_gradient_is_exact() {
        let mut store = ParamStore::new();
        let x = store.add(
            "x",
            Tensor::new(vec![4], vec![1.5, -2.0, 0.25, 3.0]).unwrap(),
        );
        let mut tape = Tape::new(&store);
        let v = tape.param(x);
        let sq = tape.mul(v, v).unwrap();
        let s = tape.sum(sq).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x), &[3.0, -4.0, 0.5, 6.0]);
    }

    #[test]
    fn softmax_symmetric_and_stable() {
        let (loss, p) = softmax_cross_entropy(&[0.0, 0.0], 2, &[1]).unwrap();
        assert_eq!(p, vec![0.5, 0.5]);
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
        let (loss, p) = softmax_cross_entropy(&[1000.0, 0.0], 2, &[0]).unwrap();
        assert!(loss.is_finite() && loss.abs() < 1e-300);
        assert!(p.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn softmax_shift_invariant() {
        let z = [0.3, -1.7, 2.2];
        let a = softmax(&z);
        let b = softmax(&z.map(|v| v + 123.456));
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn frozen_params_get_no_gradient() {
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::scalar(2.0));
        store.set_trainable(a, false);
        let mut tape = Tape::new(&store);
        let v = tape.param(a);
        let s = tape.sum(v).unwrap();
        assert_eq!(tape.backward(s).unwrap().get(a), &[0.0]);
    }

    #[test]
    fn non_finite_forward_is_an_error() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let a = tape.input(Tensor::scalar(f64::MAX)).unwrap();
        assert!(matches!(tape.add(a, a), Err(NnError::NonFinite(_))));
    }
}
