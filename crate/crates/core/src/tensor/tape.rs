//! Define-by-run gradient tape.
//!
//! Every operation appends a node holding its output value; node inputs
//! always precede the node, so a reverse sweep over the node list is a valid
//! reverse topological order.

use super::{matmul_into, matmul_nt_into, matmul_tn_into, Tensor};
use crate::error::{Error, Result};
use crate::special;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Unary {
    Sigmoid,
    Softplus,
    Exp,
    Log,
    Relu,
    LnGamma,
    LogSigmoid,
    LogNormCdf,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
    LogAddExp,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Binary(Binary, Var, Var),
    Unary(Unary, Var),
    AddScalar(Var),
    MulScalar(Var, f64),
    Clamp(Var, f64, f64),
    Matmul(Var, Var),
    GraphMix(Var, Var),
    AddBias(Var, Var),
    Conv1d { input: Var, kernel: Var, bias: Var },
    Reshape(Var),
    SliceLast { x: Var, start: usize },
    Sum(Var),
    Mean(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Append-only record of tensor operations.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar seed with respect to every node that can reach it.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `v`, or `None` if `v` does not influence the seed or is a
    /// constant.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A differentiable input (parameter or variable of interest).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, true)
    }

    /// An input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push_raw(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::Numeric(format!("non-finite value produced by {op:?}")));
        }
        let needs = inputs.iter().any(|&v| self.needs(v));
        Ok(self.push_raw(value, op, needs))
    }

    // ---- elementwise binary -------------------------------------------------

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Div, a, b)
    }

    /// Elementwise `ln(exp(a) + exp(b))`.
    pub fn log_add_exp(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::LogAddExp, a, b)
    }

    fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let shape = broadcast_shape(av, bv)?;
        let n: usize = shape.iter().product();
        let (ad, bd) = (av.data(), bv.data());
        let pick = |d: &[f64], i: usize| if d.len() == 1 { d[0] } else { d[i] };
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let (x, y) = (pick(ad, i), pick(bd, i));
            out.push(match kind {
                Binary::Add => x + y,
                Binary::Sub => x - y,
                Binary::Mul => x * y,
                Binary::Div => {
                    if y == 0.0 {
                        return Err(Error::Domain("division by zero".into()));
                    }
                    x / y
                }
                Binary::LogAddExp => special::log_add_exp(x, y),
            });
        }
        let value = Tensor::new(shape, out)?;
        self.push(value, Op::Binary(kind, a, b), &[a, b])
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let value = self.value(a).map(|x| x + c);
        self.push(value, Op::AddScalar(a), &[a])
    }

    pub fn mul_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let value = self.value(a).map(|x| x * c);
        self.push(value, Op::MulScalar(a, c), &[a])
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.mul_scalar(a, -1.0)
    }

    /// Elementwise clamp to `[lo, hi]`. Gradient passes through inside the
    /// interval and is zero outside it.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        let value = self.value(a).map(|x| x.clamp(lo, hi));
        self.push(value, Op::Clamp(a, lo, hi), &[a])
    }

    // ---- elementwise unary --------------------------------------------------

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Sigmoid, a)
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Softplus, a)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Exp, a)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Log, a)
    }

    /// Rectifier; the derivative at exactly zero is taken as zero.
    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Relu, a)
    }

    /// Elementwise `ln Γ(x)`, backward via digamma.
    pub fn ln_gamma(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::LnGamma, a)
    }

    /// `ln σ(x) = -softplus(-x)`.
    pub fn log_sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::LogSigmoid, a)
    }

    /// `ln Φ(x)` for the standard normal CDF.
    pub fn log_norm_cdf(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::LogNormCdf, a)
    }

    fn unary(&mut self, kind: Unary, a: Var) -> Result<Var> {
        let av = self.value(a);
        if matches!(kind, Unary::Log | Unary::LnGamma) {
            if let Some(bad) = av.data().iter().find(|&&x| !(x > 0.0)) {
                let name = if kind == Unary::Log { "log" } else { "lgamma" };
                return Err(Error::Domain(format!("{name} of non-positive value {bad}")));
            }
        }
        let f: fn(f64) -> f64 = match kind {
            Unary::Sigmoid => sigmoid,
            Unary::Softplus => softplus,
            Unary::Exp => f64::exp,
            Unary::Log => f64::ln,
            Unary::Relu => |x| if x > 0.0 { x } else { 0.0 },
            Unary::LnGamma => special::ln_gamma_unchecked,
            Unary::LogSigmoid => |x| -softplus(-x),
            Unary::LogNormCdf => special::norm_log_cdf,
        };
        let value = av.map(f);
        self.push(value, Op::Unary(kind, a), &[a])
    }

    // ---- linear algebra -----------------------------------------------------

    /// `[m×k] · [k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2()?;
        let (k2, n) = self.value(b).dims2()?;
        if k != k2 {
            return Err(Error::Dimension(format!(
                "matmul inner dimensions differ: [{m}x{k}] x [{k2}x{n}]"
            )));
        }
        let mut out = vec![0.0; m * n];
        matmul_into(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let value = Tensor::new(vec![m, n], out)?;
        self.push(value, Op::Matmul(a, b), &[a, b])
    }

    /// Left-multiplies every batch slice of `h` (`[B×V×w]`) by `m` (`[V×V]`).
    pub fn graph_mix(&mut self, m: Var, h: Var) -> Result<Var> {
        let (r, c) = self.value(m).dims2()?;
        let (batch, v, w) = self.value(h).dims3()?;
        if r != c || c != v {
            return Err(Error::Dimension(format!(
                "graph_mix needs a [{v}x{v}] operator, got [{r}x{c}]"
            )));
        }
        let md = self.value(m).data();
        let hd = self.value(h).data();
        let mut out = vec![0.0; batch * v * w];
        let slab = v * w;
        for b in 0..batch {
            matmul_into(
                md,
                &hd[b * slab..(b + 1) * slab],
                &mut out[b * slab..(b + 1) * slab],
                v,
                v,
                w,
            );
        }
        let value = Tensor::new(vec![batch, v, w], out)?;
        self.push(value, Op::GraphMix(m, h), &[m, h])
    }

    /// Adds a `[C]` bias along the last axis of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let xs = self.value(x).shape();
        let c = *xs.last().expect("non-empty shape");
        if self.value(bias).shape() != [c] {
            return Err(Error::Dimension(format!(
                "bias shape {:?} does not match last axis {c}",
                self.value(bias).shape()
            )));
        }
        let bd = self.value(bias).data().to_vec();
        let mut value = self.value(x).clone();
        for row in value.data_mut().chunks_mut(c) {
            for (o, b) in row.iter_mut().zip(&bd) {
                *o += b;
            }
        }
        self.push(value, Op::AddBias(x, bias), &[x, bias])
    }

    /// Valid (unpadded, stride 1) cross-correlation of a shared kernel along
    /// the last axis of a `[B×V×w]` tensor, plus a scalar bias.
    pub fn conv1d(&mut self, input: Var, kernel: Var, bias: Var) -> Result<Var> {
        let (b, v, w) = self.value(input).dims3()?;
        let ks = self.value(kernel).shape();
        if ks.len() != 1 {
            return Err(Error::Dimension(format!("kernel must be rank 1, got {ks:?}")));
        }
        let kw = ks[0];
        if kw > w {
            return Err(Error::Dimension(format!("kernel width {kw} exceeds input width {w}")));
        }
        if !self.value(bias).is_scalar() {
            return Err(Error::Dimension("conv1d bias must be a scalar".into()));
        }
        let wo = w - kw + 1;
        let kd = self.value(kernel).data();
        let bv = self.value(bias).data()[0];
        let id = self.value(input).data();
        let mut out = vec![0.0; b * v * wo];
        for (row_in, row_out) in id.chunks(w).zip(out.chunks_mut(wo)) {
            for (t, o) in row_out.iter_mut().enumerate() {
                let acc: f64 = kd.iter().zip(&row_in[t..t + kw]).map(|(k, x)| k * x).sum();
                *o = acc + bv;
            }
        }
        let value = Tensor::new(vec![b, v, wo], out)?;
        self.push(value, Op::Conv1d { input, kernel, bias }, &[input, kernel, bias])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).reshape(shape)?;
        self.push(value, Op::Reshape(a), &[a])
    }

    /// `x[..., start..start + len]`.
    pub fn slice_last(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let c = *xs.last().expect("non-empty shape");
        if len == 0 || start + len > c {
            return Err(Error::Dimension(format!(
                "slice {start}..{} out of range for last axis {c}",
                start + len
            )));
        }
        let data: Vec<f64> = self
            .value(x)
            .data()
            .chunks(c)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        let mut shape = xs;
        *shape.last_mut().expect("non-empty") = len;
        let value = Tensor::new(shape, data)?;
        self.push(value, Op::SliceLast { x, start }, &[x])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(a).sum());
        self.push(value, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let value = Tensor::scalar(t.sum() / t.numel() as f64);
        self.push(value, Op::Mean(a), &[a])
    }

    // ---- reverse sweep ------------------------------------------------------

    /// Reverse-mode sweep from a scalar `seed`.
    pub fn backward(&self, seed: Var) -> Result<Gradients> {
        let seed_value = self.value(seed);
        if !seed_value.is_scalar() {
            return Err(Error::Contract(format!(
                "backward seed must be scalar, got shape {:?}",
                seed_value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[seed.0] = Some(Tensor::ones(seed_value.shape()));

        for i in (0..=seed.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if self.nodes[i].needs_grad {
                self.propagate(i, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let out = node.value.data();
        let gd = g.data();
        match node.op {
            Op::Leaf => {}
            Op::Binary(kind, a, b) => {
                let ad = self.value(a).data();
                let bd = self.value(b).data();
                let pick = |d: &[f64], j: usize| if d.len() == 1 { d[0] } else { d[j] };
                let da = |j: usize| -> f64 {
                    let (x, y) = (pick(ad, j), pick(bd, j));
                    match kind {
                        Binary::Add | Binary::Sub => 1.0,
                        Binary::Mul => y,
                        Binary::Div => 1.0 / y,
                        Binary::LogAddExp => (x - out[j]).exp(),
                    }
                };
                let db = |j: usize| -> f64 {
                    let (x, y) = (pick(ad, j), pick(bd, j));
                    match kind {
                        Binary::Add => 1.0,
                        Binary::Sub => -1.0,
                        Binary::Mul => x,
                        Binary::Div => -x / (y * y),
                        Binary::LogAddExp => (y - out[j]).exp(),
                    }
                };
                if self.needs(a) {
                    let buf = self.grad_buf(grads, a);
                    accumulate_broadcast(buf, gd, da);
                }
                if self.needs(b) {
                    let buf = self.grad_buf(grads, b);
                    accumulate_broadcast(buf, gd, db);
                }
            }
            Op::Unary(kind, a) => {
                if !self.needs(a) {
                    return;
                }
                let xd = self.value(a).data().to_vec();
                let buf = self.grad_buf(grads, a);
                for j in 0..buf.len() {
                    let (x, y) = (xd[j], out[j]);
                    let d = match kind {
                        Unary::Sigmoid => y * (1.0 - y),
                        Unary::Softplus => sigmoid(x),
                        Unary::Exp => y,
                        Unary::Log => 1.0 / x,
                        Unary::Relu => {
                            if x > 0.0 {
                                1.0
                            } else {
                                0.0
                            }
                        }
                        Unary::LnGamma => special::digamma_unchecked(x),
                        Unary::LogSigmoid => sigmoid(-x),
                        Unary::LogNormCdf => special::norm_mills_inverse(x),
                    };
                    buf[j] += gd[j] * d;
                }
            }
            Op::AddScalar(a) => {
                if self.needs(a) {
                    add_into(self.grad_buf(grads, a), gd, 1.0);
                }
            }
            Op::MulScalar(a, c) => {
                if self.needs(a) {
                    add_into(self.grad_buf(grads, a), gd, c);
                }
            }
            Op::Clamp(a, lo, hi) => {
                if !self.needs(a) {
                    return;
                }
                let xd = self.value(a).data().to_vec();
                let buf = self.grad_buf(grads, a);
                for j in 0..buf.len() {
                    if xd[j] >= lo && xd[j] <= hi {
                        buf[j] += gd[j];
                    }
                }
            }
            Op::Matmul(a, b) => {
                let (m, k) = self.value(a).dims2().expect("recorded shape");
                let n = g.shape()[1];
                let ad = self.value(a).data().to_vec();
                let bd = self.value(b).data().to_vec();
                if self.needs(a) {
                    // dA = G · Bᵀ
                    matmul_nt_into(gd, &bd, self.grad_buf(grads, a), m, n, k);
                }
                if self.needs(b) {
                    // dB = Aᵀ · G
                    matmul_tn_into(&ad, gd, self.grad_buf(grads, b), k, m, n);
                }
            }
            Op::GraphMix(m, h) => {
                let (batch, v, w) = self.value(h).dims3().expect("recorded shape");
                let slab = v * w;
                let md = self.value(m).data().to_vec();
                if self.needs(h) {
                    let buf = self.grad_buf(grads, h);
                    for b in 0..batch {
                        matmul_tn_into(
                            &md,
                            &gd[b * slab..(b + 1) * slab],
                            &mut buf[b * slab..(b + 1) * slab],
                            v,
                            v,
                            w,
                        );
                    }
                }
                if self.needs(m) {
                    let hd = self.value(h).data().to_vec();
                    let buf = self.grad_buf(grads, m);
                    for b in 0..batch {
                        matmul_nt_into(
                            &gd[b * slab..(b + 1) * slab],
                            &hd[b * slab..(b + 1) * slab],
                            buf,
                            v,
                            w,
                            v,
                        );
                    }
                }
            }
            Op::AddBias(x, bias) => {
                if self.needs(x) {
                    add_into(self.grad_buf(grads, x), gd, 1.0);
                }
                if self.needs(bias) {
                    let buf = self.grad_buf(grads, bias);
                    let c = buf.len();
                    for row in gd.chunks(c) {
                        for (o, gv) in buf.iter_mut().zip(row) {
                            *o += gv;
                        }
                    }
                }
            }
            Op::Conv1d { input, kernel, bias } => {
                let w = *self.value(input).shape().last().expect("rank 3");
                let wo = *g.shape().last().expect("rank 3");
                let kd = self.value(kernel).data().to_vec();
                let kw = kd.len();
                if self.needs(input) {
                    let buf = self.grad_buf(grads, input);
                    for (row_g, row_d) in gd.chunks(wo).zip(buf.chunks_mut(w)) {
                        for (t, &gv) in row_g.iter().enumerate() {
                            for (j, &kv) in kd.iter().enumerate() {
                                row_d[t + j] += gv * kv;
                            }
                        }
                    }
                }
                if self.needs(kernel) {
                    let id = self.value(input).data().to_vec();
                    let buf = self.grad_buf(grads, kernel);
                    for (row_g, row_in) in gd.chunks(wo).zip(id.chunks(w)) {
                        for (t, &gv) in row_g.iter().enumerate() {
                            for j in 0..kw {
                                buf[j] += gv * row_in[t + j];
                            }
                        }
                    }
                }
                if self.needs(bias) {
                    self.grad_buf(grads, bias)[0] += gd.iter().sum::<f64>();
                }
            }
            Op::Reshape(a) => {
                if self.needs(a) {
                    add_into(self.grad_buf(grads, a), gd, 1.0);
                }
            }
            Op::SliceLast { x, start } => {
                if !self.needs(x) {
                    return;
                }
                let c = *self.value(x).shape().last().expect("non-empty");
                let len = *g.shape().last().expect("non-empty");
                let buf = self.grad_buf(grads, x);
                for (row_d, row_g) in buf.chunks_mut(c).zip(gd.chunks(len)) {
                    for (o, gv) in row_d[start..start + len].iter_mut().zip(row_g) {
                        *o += gv;
                    }
                }
            }
            Op::Sum(a) => {
                if self.needs(a) {
                    let gv = gd[0];
                    self.grad_buf(grads, a).iter_mut().for_each(|o| *o += gv);
                }
            }
            Op::Mean(a) => {
                if self.needs(a) {
                    let gv = gd[0] / self.value(a).numel() as f64;
                    self.grad_buf(grads, a).iter_mut().for_each(|o| *o += gv);
                }
            }
        }
    }

    fn grad_buf<'g>(&self, grads: &'g mut [Option<Tensor>], v: Var) -> &'g mut [f64] {
        grads[v.0]
            .get_or_insert_with(|| Tensor::zeros(self.value(v).shape()))
            .data_mut()
    }
}

fn broadcast_shape(a: &Tensor, b: &Tensor) -> Result<Vec<usize>> {
    if a.shape() == b.shape() || b.is_scalar() {
        Ok(a.shape().to_vec())
    } else if a.is_scalar() {
        Ok(b.shape().to_vec())
    } else {
        Err(Error::Dimension(format!(
            "elementwise shapes differ: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )))
    }
}

/// Accumulates `g[j] * d(j)` into `buf`, summing when `buf` is a broadcast scalar.
fn accumulate_broadcast(buf: &mut [f64], g: &[f64], d: impl Fn(usize) -> f64) {
    if buf.len() == g.len() {
        for (j, o) in buf.iter_mut().enumerate() {
            *o += g[j] * d(j);
        }
    } else {
        buf[0] += (0..g.len()).map(|j| g[j] * d(j)).sum::<f64>();
    }
}

fn add_into(buf: &mut [f64], g: &[f64], c: f64) {
    for (o, gv) in buf.iter_mut().zip(g) {
        *o += c * gv;
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}
