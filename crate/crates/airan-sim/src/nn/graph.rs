//! Recorded-tape reverse-mode differentiation over a fixed op set.
//!
//! A [`Graph`] is a single forward recording: values are computed eagerly as
//! ops are added, and [`Graph::backward`] walks the tape in reverse to fill
//! gradients. The op set is deliberately small — dense layers, an LSTM cell
//! step, layer norm, elementwise math and reductions — which covers every
//! network in this crate without a general graph compiler.
//!
//! Recurrent weights are bound once per graph and reused across timesteps,
//! so gradient accumulation at the leaf implements backpropagation through
//! time for free.

use super::params::{ParamId, ParamStore};
use super::tensor::{matmul_nn_acc, matmul_nt, matmul_tn_acc, Tensor};
use crate::{Error, Result, Scalar};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op<S: Scalar> {
    Leaf,
    Dense { x: Var, w: Var, b: Var },
    LstmStep { x: Var, hc: Var, wx: Var, wh: Var, b: Var, hidden: usize, gates: Tensor<S>, tanh_c: Tensor<S> },
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Tensor<S>, inv_std: Vec<S> },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    MinElem { a: Var, b: Var },
    Neg { x: Var },
    AddScalar { x: Var },
    MulScalar { x: Var, c: S },
    Tanh { x: Var },
    Sigmoid { x: Var },
    Relu { x: Var },
    Exp { x: Var },
    Ln { x: Var },
    Square { x: Var },
    Clamp { x: Var, lo: S, hi: S },
    SumAll { x: Var },
    MeanAll { x: Var },
    SumCols { x: Var },
    ConcatCols { a: Var, b: Var },
    SliceCols { x: Var, start: usize, end: usize },
}

struct Node<S: Scalar> {
    value: Tensor<S>,
    needs_grad: bool,
    op: Op<S>,
}

/// One recorded forward pass plus (after `backward`) its gradients.
pub struct Graph<S: Scalar> {
    nodes: Vec<Node<S>>,
    grads: Vec<Option<Tensor<S>>>,
    param_leaves: Vec<(Var, usize, ParamId)>,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), grads: Vec::new(), param_leaves: Vec::new() }
    }

    fn push(&mut self, value: Tensor<S>, needs_grad: bool, op: Op<S>) -> Var {
        self.nodes.push(Node { value, needs_grad, op });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    /// Gradient of the last `backward` target with respect to `v`.
    /// `None` if the node did not participate or backward was not run.
    pub fn grad(&self, v: Var) -> Option<&Tensor<S>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Constant input (no gradient tracked).
    pub fn constant(&mut self, t: Tensor<S>) -> Var {
        self.push(t, false, Op::Leaf)
    }

    /// Bind a parameter from `store` as a differentiable leaf. `group` tags
    /// which store the leaf belongs to when several stores feed one graph.
    pub fn param(&mut self, store: &ParamStore<S>, group: usize, id: ParamId) -> Var {
        let v = self.push(store.value(id).clone(), true, Op::Leaf);
        self.param_leaves.push((v, group, id));
        v
    }

    /// Bind a parameter as a frozen constant (no gradient computed through
    /// its weight-update path; gradients still flow through activations).
    pub fn frozen_param(&mut self, store: &ParamStore<S>, id: ParamId) -> Var {
        self.push(store.value(id).clone(), false, Op::Leaf)
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let t = self.value(v);
        (t.rows(), t.cols())
    }

    /// `y = x · wᵀ + b` with `x: (B, I)`, `w: (O, I)`, `b: (O)`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (bn, i) = self.dims(x);
        let (o, wi) = self.dims(w);
        let (br, bc) = self.dims(b);
        if i != wi || br != 1 || bc != o {
            return Err(Error::Shape(format!(
                "dense: x ({bn}x{i}) w ({o}x{wi}) b ({br}x{bc})"
            )));
        }
        let mut y = Tensor::zeros(vec![bn, o]);
        matmul_nt(self.value(x), self.value(w), &mut y);
        {
            let bv = self.value(b).values().to_vec();
            for r in 0..bn {
                let row = &mut y.values_mut()[r * o..(r + 1) * o];
                for (yo, &bo) in row.iter_mut().zip(&bv) {
                    *yo += bo;
                }
            }
        }
        let ng = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(y, ng, Op::Dense { x, w, b }))
    }

    /// One LSTM cell step. `x: (B, I)`, `hc: (B, 2H)` laid out `[h | c]`,
    /// `wx: (4H, I)`, `wh: (4H, H)`, `b: (4H)` with gate order `i f g o`.
    /// Output is `(B, 2H)` laid out `[h' | c']`.
    pub fn lstm_step(&mut self, x: Var, hc: Var, wx: Var, wh: Var, b: Var) -> Result<Var> {
        let (bn, i) = self.dims(x);
        let (hb, hc2) = self.dims(hc);
        let hidden = hc2 / 2;
        let (g4, wxi) = self.dims(wx);
        let (g4h, whh) = self.dims(wh);
        let (_, bc) = self.dims(b);
        if hb != bn || hc2 != 2 * hidden || g4 != 4 * hidden || wxi != i || g4h != 4 * hidden
            || whh != hidden || bc != 4 * hidden
        {
            return Err(Error::Shape(format!(
                "lstm_step: x ({bn}x{i}) hc ({hb}x{hc2}) wx ({g4}x{wxi}) wh ({g4h}x{whh}) b ({bc})"
            )));
        }

        // pre-activations = x·wxᵀ + h_prev·whᵀ + b
        let mut pre = Tensor::zeros(vec![bn, 4 * hidden]);
        matmul_nt(self.value(x), self.value(wx), &mut pre);
        let h_prev = {
            let hcv = self.value(hc);
            let mut h = Tensor::zeros(vec![bn, hidden]);
            for r in 0..bn {
                let src = &hcv.row_slice(r)[..hidden];
                h.values_mut()[r * hidden..(r + 1) * hidden].copy_from_slice(src);
            }
            h
        };
        matmul_nt(&h_prev, self.value(wh), &mut pre);
        {
            let bv = self.value(b).values().to_vec();
            for r in 0..bn {
                let row = &mut pre.values_mut()[r * 4 * hidden..(r + 1) * 4 * hidden];
                for (p, &bo) in row.iter_mut().zip(&bv) {
                    *p += bo;
                }
            }
        }

        // activate gates in place: i f o -> sigmoid, g -> tanh
        let mut gates = pre;
        for r in 0..bn {
            let row = &mut gates.values_mut()[r * 4 * hidden..(r + 1) * 4 * hidden];
            for (k, v) in row.iter_mut().enumerate() {
                let gate = k / hidden;
                *v = if gate == 2 { v.tanh() } else { sigmoid(*v) };
            }
        }

        let mut out = Tensor::zeros(vec![bn, 2 * hidden]);
        let mut tanh_c = Tensor::zeros(vec![bn, hidden]);
        {
            let hcv = self.value(hc);
            for r in 0..bn {
                let grow = gates.row_slice(r);
                let c_prev = &hcv.row_slice(r)[hidden..];
                for j in 0..hidden {
                    let (ig, fg, gg, og) =
                        (grow[j], grow[hidden + j], grow[2 * hidden + j], grow[3 * hidden + j]);
                    let c_new = fg * c_prev[j] + ig * gg;
                    let th = c_new.tanh();
                    let base = r * 2 * hidden;
                    out.values_mut()[base + j] = og * th;
                    out.values_mut()[base + hidden + j] = c_new;
                    tanh_c.values_mut()[r * hidden + j] = th;
                }
            }
        }

        let ng = self.needs(x) || self.needs(hc) || self.needs(wx) || self.needs(wh) || self.needs(b);
        Ok(self.push(out, ng, Op::LstmStep { x, hc, wx, wh, b, hidden, gates, tanh_c }))
    }

    /// Layer normalization along the feature (column) axis with affine
    /// `gain`/`bias` of shape `(D)`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (bn, d) = self.dims(x);
        let (_, gc) = self.dims(gain);
        let (_, bc) = self.dims(bias);
        if d == 0 || gc != d || bc != d {
            return Err(Error::Shape(format!("layer_norm: x ({bn}x{d}) gain ({gc}) bias ({bc})")));
        }
        let epss = S::c(eps);
        let dn = S::c(d as f64);
        let mut xhat = Tensor::zeros(vec![bn, d]);
        let mut inv_std = vec![S::zero(); bn];
        let mut y = Tensor::zeros(vec![bn, d]);
        {
            let xv = self.value(x);
            let gv = self.value(gain).values().to_vec();
            let bv = self.value(bias).values().to_vec();
            for r in 0..bn {
                let row = xv.row_slice(r);
                let mean = row.iter().fold(S::zero(), |a, &v| a + v) / dn;
                let var = row.iter().fold(S::zero(), |a, &v| a + (v - mean) * (v - mean)) / dn;
                let inv = (var + epss).sqrt().recip();
                inv_std[r] = inv;
                for j in 0..d {
                    let xh = (row[j] - mean) * inv;
                    xhat.values_mut()[r * d + j] = xh;
                    y.values_mut()[r * d + j] = gv[j] * xh + bv[j];
                }
            }
        }
        let ng = self.needs(x) || self.needs(gain) || self.needs(bias);
        Ok(self.push(y, ng, Op::LayerNorm { x, gain, bias, xhat, inv_std }))
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &str,
        f: impl Fn(S, S) -> S,
        op: Op<S>,
    ) -> Result<Var> {
        let (ar, ac) = self.dims(a);
        let (br, bc) = self.dims(b);
        if ar != br || ac != bc {
            return Err(Error::Shape(format!("{name}: ({ar}x{ac}) vs ({br}x{bc})")));
        }
        let values = self
            .value(a)
            .values()
            .iter()
            .zip(self.value(b).values())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let t = Tensor::new(vec![ar, ac], values)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(t, ng, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul { a, b })
    }

    /// Elementwise minimum; the gradient follows the smaller operand
    /// (ties go to `a`).
    pub fn min_elem(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "min_elem", |x, y| if x <= y { x } else { y }, Op::MinElem { a, b })
    }

    fn unary(&mut self, x: Var, f: impl Fn(S) -> S, op: Op<S>) -> Var {
        let t = self.value(x).map(f);
        let ng = self.needs(x);
        self.push(t, ng, op)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.unary(x, |v| -v, Op::Neg { x })
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let cs = S::c(c);
        self.unary(x, |v| v + cs, Op::AddScalar { x })
    }

    pub fn mul_scalar(&mut self, x: Var, c: f64) -> Var {
        let cs = S::c(c);
        self.unary(x, |v| v * cs, Op::MulScalar { x, c: cs })
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.tanh(), Op::Tanh { x })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid { x })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| if v > S::zero() { v } else { S::zero() }, Op::Relu { x })
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.exp(), Op::Exp { x })
    }

    pub fn ln(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.ln(), Op::Ln { x })
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, Op::Square { x })
    }

    /// Clamp to `[lo, hi]`; gradient is identity inside the interval and
    /// zero where the input was clipped.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let (l, h) = (S::c(lo), S::c(hi));
        self.unary(
            x,
            |v| {
                if v < l {
                    l
                } else if v > h {
                    h
                } else {
                    v
                }
            },
            Op::Clamp { x, lo: l, hi: h },
        )
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).values().iter().fold(S::zero(), |a, &v| a + v);
        let ng = self.needs(x);
        self.push(Tensor::scalar(s), ng, Op::SumAll { x })
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let n = self.value(x).len();
        let s = self.value(x).values().iter().fold(S::zero(), |a, &v| a + v) / S::c(n as f64);
        let ng = self.needs(x);
        self.push(Tensor::scalar(s), ng, Op::MeanAll { x })
    }

    /// Row-wise sum: `(B, D) -> (B, 1)`.
    pub fn sum_cols(&mut self, x: Var) -> Var {
        let (bn, d) = self.dims(x);
        let mut t = Tensor::zeros(vec![bn, 1]);
        for r in 0..bn {
            t.values_mut()[r] = self.value(x).row_slice(r).iter().fold(S::zero(), |a, &v| a + v);
        }
        let _ = d;
        let ng = self.needs(x);
        self.push(t, ng, Op::SumCols { x })
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ar, ac) = self.dims(a);
        let (br, bc) = self.dims(b);
        if ar != br {
            return Err(Error::Shape(format!("concat_cols: {ar} vs {br} rows")));
        }
        let mut t = Tensor::zeros(vec![ar, ac + bc]);
        for r in 0..ar {
            let dst = &mut t.values_mut()[r * (ac + bc)..(r + 1) * (ac + bc)];
            dst[..ac].copy_from_slice(self.value(a).row_slice(r));
            dst[ac..].copy_from_slice(self.value(b).row_slice(r));
        }
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(t, ng, Op::ConcatCols { a, b }))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (bn, d) = self.dims(x);
        if start >= end || end > d {
            return Err(Error::Shape(format!("slice_cols {start}..{end} of {d}")));
        }
        let w = end - start;
        let mut t = Tensor::zeros(vec![bn, w]);
        for r in 0..bn {
            t.values_mut()[r * w..(r + 1) * w]
                .copy_from_slice(&self.value(x).row_slice(r)[start..end]);
        }
        let ng = self.needs(x);
        Ok(self.push(t, ng, Op::SliceCols { x, start, end }))
    }

    /// Mean squared error between two same-shape nodes, as a scalar node.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let d = self.sub(pred, target)?;
        let sq = self.square(d);
        Ok(self.mean_all(sq))
    }

    fn acc_grad(&mut self, v: Var, delta: Tensor<S>) {
        match &mut self.grads[v.0] {
            Some(g) => g.axpy(&delta, S::one()),
            slot @ None => *slot = Some(delta),
        }
    }

    /// Reverse pass from a scalar node. Fills gradients for every
    /// participating node; parameter leaves can then be flushed into their
    /// stores with [`Graph::apply_grads`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Shape(format!(
                "backward target must be scalar, got {:?}",
                self.value(loss).shape()
            )));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(Tensor::full(self.value(loss).shape().to_vec(), S::one()));

        for id in (0..self.nodes.len()).rev() {
            if matches!(self.nodes[id].op, Op::Leaf) {
                continue;
            }
            if !self.nodes[id].needs_grad {
                self.grads[id] = None;
                continue;
            }
            let Some(gy) = self.grads[id].take() else { continue };
            self.backprop_node(id, gy);
        }
        Ok(())
    }

    fn backprop_node(&mut self, id: usize, gy: Tensor<S>) {
        // Ops are matched by value patterns copied out first so the borrow
        // checker allows mutating self.grads.
        enum Step<S: Scalar> {
            Into(Var, Tensor<S>),
        }
        let mut steps: Vec<Step<S>> = Vec::with_capacity(3);

        match &self.nodes[id].op {
            Op::Leaf => unreachable!(),
            Op::Dense { x, w, b } => {
                let (x, w, b) = (*x, *w, *b);
                if self.needs(x) {
                    let mut dx = Tensor::zeros(vec![self.dims(x).0, self.dims(x).1]);
                    matmul_nn_acc(&gy, self.value(w), &mut dx);
                    steps.push(Step::Into(x, dx));
                }
                if self.needs(w) {
                    let mut dw = Tensor::zeros(vec![self.dims(w).0, self.dims(w).1]);
                    matmul_tn_acc(&gy, self.value(x), &mut dw);
                    steps.push(Step::Into(w, dw));
                }
                if self.needs(b) {
                    let o = self.dims(b).1;
                    let mut db = Tensor::zeros(self.value(b).shape().to_vec());
                    for r in 0..gy.rows() {
                        let row = gy.row_slice(r);
                        for (dbj, &g) in db.values_mut().iter_mut().zip(row.iter().take(o)) {
                            *dbj += g;
                        }
                    }
                    steps.push(Step::Into(b, db));
                }
            }
            Op::LstmStep { x, hc, wx, wh, b, hidden, gates, tanh_c } => {
                let (x, hc, wx, wh, b, h) = (*x, *hc, *wx, *wh, *b, *hidden);
                let bn = gy.rows();
                // split incoming grad into dh' and external dc'
                let mut dpre = Tensor::zeros(vec![bn, 4 * h]);
                let mut dhc_prev = Tensor::zeros(vec![bn, 2 * h]);
                {
                    let hcv = self.value(hc);
                    for r in 0..bn {
                        let grow = gates.row_slice(r);
                        let throw = tanh_c.row_slice(r);
                        let gyrow = gy.row_slice(r);
                        let c_prev = &hcv.row_slice(r)[h..];
                        for j in 0..h {
                            let (ig, fg, gg, og) =
                                (grow[j], grow[h + j], grow[2 * h + j], grow[3 * h + j]);
                            let th = throw[j];
                            let dh = gyrow[j];
                            let dc_ext = gyrow[h + j];
                            let dc = dc_ext + dh * og * (S::one() - th * th);
                            let d_o = dh * th;
                            let d_f = dc * c_prev[j];
                            let d_i = dc * gg;
                            let d_g = dc * ig;
                            let prow = &mut dpre.values_mut()[r * 4 * h..(r + 1) * 4 * h];
                            prow[j] = d_i * ig * (S::one() - ig);
                            prow[h + j] = d_f * fg * (S::one() - fg);
                            prow[2 * h + j] = d_g * (S::one() - gg * gg);
                            prow[3 * h + j] = d_o * og * (S::one() - og);
                            dhc_prev.values_mut()[r * 2 * h + h + j] = dc * fg;
                        }
                    }
                }
                // h_prev view, needed for dwh and dh_prev
                let h_prev = {
                    let hcv = self.value(hc);
                    let mut hp = Tensor::zeros(vec![bn, h]);
                    for r in 0..bn {
                        hp.values_mut()[r * h..(r + 1) * h]
                            .copy_from_slice(&hcv.row_slice(r)[..h]);
                    }
                    hp
                };
                if self.needs(hc) {
                    let mut dh_prev = Tensor::zeros(vec![bn, h]);
                    matmul_nn_acc(&dpre, self.value(wh), &mut dh_prev);
                    for r in 0..bn {
                        for j in 0..h {
                            dhc_prev.values_mut()[r * 2 * h + j] = dh_prev.values()[r * h + j];
                        }
                    }
                    steps.push(Step::Into(hc, dhc_prev));
                }
                if self.needs(x) {
                    let (xr, xc) = self.dims(x);
                    let mut dx = Tensor::zeros(vec![xr, xc]);
                    matmul_nn_acc(&dpre, self.value(wx), &mut dx);
                    steps.push(Step::Into(x, dx));
                }
                if self.needs(wx) {
                    let mut dwx = Tensor::zeros(vec![4 * h, self.dims(x).1]);
                    matmul_tn_acc(&dpre, self.value(x), &mut dwx);
                    steps.push(Step::Into(wx, dwx));
                }
                if self.needs(wh) {
                    let mut dwh = Tensor::zeros(vec![4 * h, h]);
                    matmul_tn_acc(&dpre, &h_prev, &mut dwh);
                    steps.push(Step::Into(wh, dwh));
                }
                if self.needs(b) {
                    let mut db = Tensor::zeros(self.value(b).shape().to_vec());
                    for r in 0..bn {
                        let row = dpre.row_slice(r);
                        for (dbj, &g) in db.values_mut().iter_mut().zip(row) {
                            *dbj += g;
                        }
                    }
                    steps.push(Step::Into(b, db));
                }
            }
            Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                let (x, gain, bias) = (*x, *gain, *bias);
                let (bn, d) = (gy.rows(), gy.cols());
                let dn = S::c(d as f64);
                if self.needs(x) {
                    let gv = self.value(gain).values().to_vec();
                    let mut dx = Tensor::zeros(vec![bn, d]);
                    for r in 0..bn {
                        let gyrow = gy.row_slice(r);
                        let xhrow = xhat.row_slice(r);
                        let mut m1 = S::zero();
                        let mut m2 = S::zero();
                        for j in 0..d {
                            let dxh = gyrow[j] * gv[j];
                            m1 += dxh;
                            m2 += dxh * xhrow[j];
                        }
                        m1 /= dn;
                        m2 /= dn;
                        let inv = inv_std[r];
                        let drow = &mut dx.values_mut()[r * d..(r + 1) * d];
                        for j in 0..d {
                            let dxh = gyrow[j] * gv[j];
                            drow[j] = inv * (dxh - m1 - xhrow[j] * m2);
                        }
                    }
                    steps.push(Step::Into(x, dx));
                }
                if self.needs(gain) {
                    let mut dg = Tensor::zeros(self.value(gain).shape().to_vec());
                    for r in 0..bn {
                        let gyrow = gy.row_slice(r);
                        let xhrow = xhat.row_slice(r);
                        for j in 0..d {
                            dg.values_mut()[j] += gyrow[j] * xhrow[j];
                        }
                    }
                    steps.push(Step::Into(gain, dg));
                }
                if self.needs(bias) {
                    let mut db = Tensor::zeros(self.value(bias).shape().to_vec());
                    for r in 0..bn {
                        let gyrow = gy.row_slice(r);
                        for j in 0..d {
                            db.values_mut()[j] += gyrow[j];
                        }
                    }
                    steps.push(Step::Into(bias, db));
                }
            }
            Op::Add { a, b } => {
                let (a, b) = (*a, *b);
                if self.needs(a) {
                    steps.push(Step::Into(a, reshape_like(&gy, self.value(a))));
                }
                if self.needs(b) {
                    steps.push(Step::Into(b, reshape_like(&gy, self.value(b))));
                }
            }
            Op::Sub { a, b } => {
                let (a, b) = (*a, *b);
                if self.needs(a) {
                    steps.push(Step::Into(a, reshape_like(&gy, self.value(a))));
                }
                if self.needs(b) {
                    let mut g = reshape_like(&gy, self.value(b));
                    g.values_mut().iter_mut().for_each(|v| *v = -*v);
                    steps.push(Step::Into(b, g));
                }
            }
            Op::Mul { a, b } => {
                let (a, b) = (*a, *b);
                if self.needs(a) {
                    let mut g = reshape_like(&gy, self.value(a));
                    for (gi, &bv) in g.values_mut().iter_mut().zip(self.value(b).values()) {
                        *gi *= bv;
                    }
                    steps.push(Step::Into(a, g));
                }
                if self.needs(b) {
                    let mut g = reshape_like(&gy, self.value(b));
                    for (gi, &av) in g.values_mut().iter_mut().zip(self.value(a).values()) {
                        *gi *= av;
                    }
                    steps.push(Step::Into(b, g));
                }
            }
            Op::MinElem { a, b } => {
                let (a, b) = (*a, *b);
                let av = self.value(a).values().to_vec();
                let bv = self.value(b).values().to_vec();
                if self.needs(a) {
                    let mut g = reshape_like(&gy, self.value(a));
                    for ((gi, &x), &y) in g.values_mut().iter_mut().zip(&av).zip(&bv) {
                        if x > y {
                            *gi = S::zero();
                        }
                    }
                    steps.push(Step::Into(a, g));
                }
                if self.needs(b) {
                    let mut g = reshape_like(&gy, self.value(b));
                    for ((gi, &x), &y) in g.values_mut().iter_mut().zip(&av).zip(&bv) {
                        if x <= y {
                            *gi = S::zero();
                        }
                    }
                    steps.push(Step::Into(b, g));
                }
            }
            Op::Neg { x } => {
                let x = *x;
                let mut g = reshape_like(&gy, self.value(x));
                g.values_mut().iter_mut().for_each(|v| *v = -*v);
                steps.push(Step::Into(x, g));
            }
            Op::AddScalar { x } => {
                let x = *x;
                steps.push(Step::Into(x, reshape_like(&gy, self.value(x))));
            }
            Op::MulScalar { x, c } => {
                let (x, c) = (*x, *c);
                let mut g = reshape_like(&gy, self.value(x));
                g.values_mut().iter_mut().for_each(|v| *v = *v * c);
                steps.push(Step::Into(x, g));
            }
            Op::Tanh { x } => {
                let x = *x;
                let y = self.nodes[id].value.values().to_vec();
                let mut g = reshape_like(&gy, self.value(x));
                for (gi, &yv) in g.values_mut().iter_mut().zip(&y) {
                    *gi = *gi * (S::one() - yv * yv);
                }
                steps.push(Step::Into(x, g));
            }
            Op::Sigmoid { x } => {
                let x = *x;
                let y = self.nodes[id].value.values().to_vec();
                let mut g = reshape_like(&gy, self.value(x));
                for (gi, &yv) in g.values_mut().iter_mut().zip(&y) {
                    *gi = *gi * yv * (S::one() - yv);
                }
                steps.push(Step::Into(x, g));
            }
            Op::Relu { x } => {
                let x = *x;
                let xv = self.value(x).values().to_vec();
                let mut g = reshape_like(&gy, self.value(x));
                for (gi, &v) in g.values_mut().iter_mut().zip(&xv) {
                    if v <= S::zero() {
                        *gi = S::zero();
                    }
                }
                steps.push(Step::Into(x, g));
            }
            Op::Exp { x } => {
                let x = *x;
                let y = self.nodes[id].value.values().to_vec();
                let mut g = reshape_like(&gy, self.value(x));
                for (gi, &yv) in g.values_mut().iter_mut().zip(&y) {
                    *gi = *gi * yv;
                }
                steps.push(Step::Into(x, g));
            }
            Op::Ln { x } => {
                let x = *x;
                let xv = self.value(x).values().to_vec();
                let mut g = reshape_like(&gy, self.value(x));
                for (gi, &v) in g.values_mut().iter_mut().zip(&xv) {
                    *gi = *gi / v;
                }
                steps.push(Step::Into(x, g));
            }
            Op::Square { x } => {
                let x = *x;
                let xv = self.value(x).values().to_vec();
                let two = S::c(2.0);
                let mut g = reshape_like(&gy, self.value(x));
                for (gi, &v) in g.values_mut().iter_mut().zip(&xv) {
                    *gi = *gi * two * v;
                }
                steps.push(Step::Into(x, g));
            }
            Op::Clamp { x, lo, hi } => {
                let (x, lo, hi) = (*x, *lo, *hi);
                let xv = self.value(x).values().to_vec();
                let mut g = reshape_like(&gy, self.value(x));
                for (gi, &v) in g.values_mut().iter_mut().zip(&xv) {
                    if v < lo || v > hi {
                        *gi = S::zero();
                    }
                }
                steps.push(Step::Into(x, g));
            }
            Op::SumAll { x } => {
                let x = *x;
                let s = gy.item();
                steps.push(Step::Into(x, Tensor::full(self.value(x).shape().to_vec(), s)));
            }
            Op::MeanAll { x } => {
                let x = *x;
                let n = self.value(x).len();
                let s = gy.item() / S::c(n as f64);
                steps.push(Step::Into(x, Tensor::full(self.value(x).shape().to_vec(), s)));
            }
            Op::SumCols { x } => {
                let x = *x;
                let (bn, d) = self.dims(x);
                let mut g = Tensor::zeros(vec![bn, d]);
                for r in 0..bn {
                    let gv = gy.values()[r];
                    g.values_mut()[r * d..(r + 1) * d].iter_mut().for_each(|v| *v = gv);
                }
                steps.push(Step::Into(x, g));
            }
            Op::ConcatCols { a, b } => {
                let (a, b) = (*a, *b);
                let (bn, ac) = self.dims(a);
                let (_, bc) = self.dims(b);
                if self.needs(a) {
                    let mut ga = Tensor::zeros(vec![bn, ac]);
                    for r in 0..bn {
                        ga.values_mut()[r * ac..(r + 1) * ac]
                            .copy_from_slice(&gy.row_slice(r)[..ac]);
                    }
                    steps.push(Step::Into(a, ga));
                }
                if self.needs(b) {
                    let mut gb = Tensor::zeros(vec![bn, bc]);
                    for r in 0..bn {
                        gb.values_mut()[r * bc..(r + 1) * bc]
                            .copy_from_slice(&gy.row_slice(r)[ac..]);
                    }
                    steps.push(Step::Into(b, gb));
                }
            }
            Op::SliceCols { x, start, end } => {
                let (x, start, end) = (*x, *start, *end);
                let (bn, d) = self.dims(x);
                let w = end - start;
                let mut g = Tensor::zeros(vec![bn, d]);
                for r in 0..bn {
                    g.values_mut()[r * d + start..r * d + end]
                        .copy_from_slice(&gy.row_slice(r)[..w]);
                }
                steps.push(Step::Into(x, g));
            }
        }

        for step in steps {
            let Step::Into(v, delta) = step;
            self.acc_grad(v, delta);
        }
    }

    /// Flush accumulated gradients of this graph's parameter leaves into
    /// their store. Only leaves tagged with `group` are flushed.
    pub fn apply_grads(&self, store: &mut ParamStore<S>, group: usize) {
        for &(v, g, id) in &self.param_leaves {
            if g != group {
                continue;
            }
            if let Some(grad) = self.grad(v) {
                store.accumulate_grad(id, grad);
            }
        }
    }
}

#[inline]
fn sigmoid<S: Scalar>(x: S) -> S {
    (S::one() + (-x).exp()).recip()
}

/// Gradients keep the dims of the forward value; shapes may differ in rank
/// (e.g. `[n]` vs `[1, n]`), so re-label with the target's shape.
fn reshape_like<S: Scalar>(g: &Tensor<S>, like: &Tensor<S>) -> Tensor<S> {
    debug_assert_eq!(g.len(), like.len());
    let mut out = Tensor::zeros(like.shape().to_vec());
    out.values_mut().copy_from_slice(g.values());
    out
}
