//! Spatial and temporal representation layers.
//!
//! The spatial branch stacks diffusion graph convolutions,
//! `H' = σ(Σ_{k=1..K} T_k(W_f) H Θ_f^k + T_k(W_b) H Θ_b^k + b)`, where
//! `T_k` are Chebyshev polynomials of the transition matrices. The temporal
//! branch stacks valid 1-D convolutions along the time axis followed by a
//! dense projection to the parameter channels. Both branches read the same
//! `[B×V×T]` input.

use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{chebyshev_sequence, OdGraph};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Linear,
}

impl Activation {
    fn apply(self, tape: &mut Tape, x: Var) -> Result<Var> {
        match self {
            Activation::Relu => tape.relu(x),
            Activation::Sigmoid => tape.sigmoid(x),
            Activation::Linear => Ok(x),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Linear => "linear",
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "relu" => Ok(Activation::Relu),
            "sigmoid" => Ok(Activation::Sigmoid),
            "linear" => Ok(Activation::Linear),
            other => Err(Error::Config(format!("unknown activation {other:?}"))),
        }
    }
}

/// Uniform Glorot initialisation in `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(shape, |_| rng.random_range(-limit..=limit))
}

/// Chebyshev terms `T_0..T_K` of the forward and backward transitions.
#[derive(Clone, Debug)]
pub struct GraphSupports {
    forward: Vec<Tensor>,
    backward: Vec<Tensor>,
}

impl GraphSupports {
    pub fn new(graph: &OdGraph, steps: usize) -> Result<Self> {
        Self::from_transitions(graph.forward_transition(), graph.backward_transition(), steps)
    }

    pub fn from_transitions(forward: &Tensor, backward: &Tensor, steps: usize) -> Result<Self> {
        Ok(Self {
            forward: chebyshev_sequence(forward, steps)?,
            backward: chebyshev_sequence(backward, steps)?,
        })
    }

    /// Builds supports from explicit sequences (each `T_0..T_K`).
    pub fn from_sequences(forward: Vec<Tensor>, backward: Vec<Tensor>) -> Self {
        Self { forward, backward }
    }

    pub fn steps(&self) -> usize {
        self.forward.len().min(self.backward.len()).saturating_sub(1)
    }

    pub fn num_nodes(&self) -> usize {
        self.forward[0].shape()[0]
    }

    /// Records the matrices as constants on `tape`.
    pub fn register(&self, tape: &mut Tape) -> SupportVars {
        let shared = self.forward == self.backward;
        let forward: Vec<Var> = self.forward.iter().map(|t| tape.constant(t.clone())).collect();
        let backward = if shared {
            forward.clone()
        } else {
            self.backward.iter().map(|t| tape.constant(t.clone())).collect()
        };
        SupportVars { forward, backward }
    }
}

/// Tape handles for [`GraphSupports`]. When the forward and backward
/// sequences are identical both lists hold the same vars.
#[derive(Clone, Debug)]
pub struct SupportVars {
    forward: Vec<Var>,
    backward: Vec<Var>,
}

/// One diffusion graph convolution layer.
#[derive(Clone, Debug, PartialEq)]
pub struct DgcnLayer {
    theta_forward: Vec<Tensor>,
    theta_backward: Vec<Tensor>,
    bias: Tensor,
    activation: Activation,
}

impl DgcnLayer {
    pub fn init<R: Rng + ?Sized>(
        rng: &mut R,
        steps: usize,
        in_width: usize,
        out_width: usize,
        activation: Activation,
    ) -> Self {
        let mut mk = || glorot(rng, &[in_width, out_width], in_width, out_width);
        let theta_forward = (0..steps).map(|_| mk()).collect();
        let theta_backward = (0..steps).map(|_| mk()).collect();
        Self {
            theta_forward,
            theta_backward,
            bias: Tensor::zeros(&[out_width]),
            activation,
        }
    }

    pub fn from_weights(
        theta_forward: Vec<Tensor>,
        theta_backward: Vec<Tensor>,
        bias: Tensor,
        activation: Activation,
    ) -> Result<Self> {
        if theta_forward.is_empty() || theta_forward.len() != theta_backward.len() {
            return Err(Error::Config(
                "need matching, non-empty forward and backward weight lists".into(),
            ));
        }
        let shape = theta_forward[0].shape().to_vec();
        if shape.len() != 2 || theta_forward.iter().chain(&theta_backward).any(|t| t.shape() != shape) {
            return Err(Error::Config(
                "all diffusion weights must share one [in×out] shape".into(),
            ));
        }
        if bias.shape() != [shape[1]] {
            return Err(Error::Config(format!(
                "bias shape {:?} does not match out width {}",
                bias.shape(),
                shape[1]
            )));
        }
        Ok(Self {
            theta_forward,
            theta_backward,
            bias,
            activation,
        })
    }

    pub fn steps(&self) -> usize {
        self.theta_forward.len()
    }

    pub fn in_width(&self) -> usize {
        self.theta_forward[0].shape()[0]
    }

    pub fn out_width(&self) -> usize {
        self.theta_forward[0].shape()[1]
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.theta_forward
            .iter()
            .chain(&self.theta_backward)
            .chain(std::iter::once(&self.bias))
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.theta_forward
            .iter_mut()
            .chain(self.theta_backward.iter_mut())
            .chain(std::iter::once(&mut self.bias))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        2 * self.steps() + 1
    }

    /// `h` is `[B×V×in]`; `params` are this layer's vars in [`params`](Self::params) order.
    pub fn forward(&self, tape: &mut Tape, params: &[Var], supports: &SupportVars, h: Var) -> Result<Var> {
        let k = self.steps();
        if supports.forward.len() < k + 1 || supports.backward.len() < k + 1 {
            return Err(Error::Contract(format!(
                "layer uses K={k} diffusion steps but supports hold {} terms",
                supports.forward.len().min(supports.backward.len())
            )));
        }
        if params.len() != self.param_count() {
            return Err(Error::Contract("wrong number of layer parameters".into()));
        }
        let (b, v, w) = tape.value(h).dims3()?;
        if w != self.in_width() {
            return Err(Error::Dimension(format!(
                "layer expects width {}, input has {w}",
                self.in_width()
            )));
        }
        let out = self.out_width();
        let (theta_f, rest) = params.split_at(k);
        let (theta_b, bias) = rest.split_at(k);
        let flat = tape.reshape(h, &[b * v, w])?;

        let mut acc: Option<Var> = None;
        let mut push = |tape: &mut Tape, term: Var| -> Result<()> {
            acc = Some(match acc {
                Some(a) => tape.add(a, term)?,
                None => term,
            });
            Ok(())
        };
        for step in 1..=k {
            let (sf, sb) = (supports.forward[step], supports.backward[step]);
            if out < w {
                // Project first, then diffuse the narrower tensor.
                for (s, theta) in [(sf, theta_f[step - 1]), (sb, theta_b[step - 1])] {
                    let proj = tape.matmul(flat, theta)?;
                    let proj = tape.reshape(proj, &[b, v, out])?;
                    let term = tape.graph_mix(s, proj)?;
                    push(tape, term)?;
                }
            } else {
                let mixed_f = tape.graph_mix(sf, h)?;
                let mixed_b = if sf == sb { mixed_f } else { tape.graph_mix(sb, h)? };
                for (m, theta) in [(mixed_f, theta_f[step - 1]), (mixed_b, theta_b[step - 1])] {
                    let m = tape.reshape(m, &[b * v, w])?;
                    let term = tape.matmul(m, theta)?;
                    let term = tape.reshape(term, &[b, v, out])?;
                    push(tape, term)?;
                }
            }
        }
        let summed = acc.expect("K >= 1");
        let biased = tape.add_bias(summed, bias[0])?;
        self.activation.apply(tape, biased)
    }
}

/// One temporal convolution layer: `f(Γ * H + b)` with a kernel shared by
/// every node and batch element.
#[derive(Clone, Debug, PartialEq)]
pub struct TcnLayer {
    kernel: Tensor,
    bias: Tensor,
    activation: Activation,
}

impl TcnLayer {
    pub fn init<R: Rng + ?Sized>(rng: &mut R, kernel_width: usize, activation: Activation) -> Self {
        Self {
            kernel: glorot(rng, &[kernel_width], kernel_width, 1).map(f64::abs),
            bias: Tensor::scalar(0.0),
            activation,
        }
    }

    pub fn from_weights(kernel: Vec<f64>, bias: f64, activation: Activation) -> Result<Self> {
        if kernel.is_empty() {
            return Err(Error::Config("kernel must have width >= 1".into()));
        }
        Ok(Self {
            kernel: Tensor::new(vec![kernel.len()], kernel)?,
            bias: Tensor::scalar(bias),
            activation,
        })
    }

    pub fn kernel_width(&self) -> usize {
        self.kernel.numel()
    }

    /// Output time width for an input of width `w`, if the kernel fits.
    pub fn out_width(&self, w: usize) -> Option<usize> {
        (self.kernel_width() <= w).then(|| w - self.kernel_width() + 1)
    }

    pub fn params(&self) -> Vec<&Tensor> {
        vec![&self.kernel, &self.bias]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.kernel, &mut self.bias]
    }

    pub fn forward(&self, tape: &mut Tape, params: &[Var], h: Var) -> Result<Var> {
        let y = tape.conv1d(h, params[0], params[1])?;
        self.activation.apply(tape, y)
    }
}

/// Dense map over the last axis with a bias.
#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    weight: Tensor,
    bias: Tensor,
}

impl Projection {
    pub fn init<R: Rng + ?Sized>(rng: &mut R, in_width: usize, out_width: usize) -> Self {
        Self {
            weight: glorot(rng, &[in_width, out_width], in_width, out_width),
            bias: Tensor::zeros(&[out_width]),
        }
    }

    pub fn from_weights(weight: Tensor, bias: Tensor) -> Result<Self> {
        let (_, out) = weight.dims2().map_err(|e| Error::Config(e.to_string()))?;
        if bias.shape() != [out] {
            return Err(Error::Config("projection bias does not match output width".into()));
        }
        Ok(Self { weight, bias })
    }

    pub fn in_width(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn out_width(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn params(&self) -> Vec<&Tensor> {
        vec![&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weight, &mut self.bias]
    }

    pub fn forward(&self, tape: &mut Tape, params: &[Var], h: Var) -> Result<Var> {
        let (b, v, w) = tape.value(h).dims3()?;
        let flat = tape.reshape(h, &[b * v, w])?;
        let y = tape.matmul(flat, params[0])?;
        let y = tape.reshape(y, &[b, v, self.out_width()])?;
        tape.add_bias(y, params[1])
    }
}

/// Widths and kernels of the two-branch encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderSpec {
    /// Input history length `T`.
    pub t_window: usize,
    /// Width of both branch outputs (`parameter channels × horizon`).
    pub out_width: usize,
    /// Diffusion steps `K`.
    pub diffusion_steps: usize,
    /// Hidden widths between DGCN layers; `n` entries give `n + 1` layers.
    pub dgcn_hidden: Vec<usize>,
    /// One kernel width per TCN layer.
    pub tcn_kernels: Vec<usize>,
}

impl EncoderSpec {
    /// Default TCN kernels: three layers whose widths shrink `t_window` down to 1.
    pub fn default_kernels(t_window: usize) -> Vec<usize> {
        let total = t_window.saturating_sub(1);
        let base = total / 3;
        let extra = total % 3;
        (0..3).map(|i| 1 + base + usize::from(i < extra)).collect()
    }

    pub fn validate(&self) -> Result<usize> {
        if self.t_window == 0 || self.out_width == 0 {
            return Err(Error::Config("t_window and output width must be >= 1".into()));
        }
        if self.diffusion_steps == 0 {
            return Err(Error::Config("diffusion_steps must be >= 1".into()));
        }
        if self.dgcn_hidden.contains(&0) {
            return Err(Error::Config("DGCN hidden widths must be >= 1".into()));
        }
        if self.tcn_kernels.is_empty() || self.tcn_kernels.contains(&0) {
            return Err(Error::Config("need at least one TCN kernel, each of width >= 1".into()));
        }
        let mut w = self.t_window;
        for (i, &k) in self.tcn_kernels.iter().enumerate() {
            if k > w {
                return Err(Error::Config(format!(
                    "TCN layer {i}: kernel width {k} exceeds time width {w}"
                )));
            }
            w = w - k + 1;
        }
        Ok(w)
    }
}

/// Spatial (DGCN) and temporal (TCN + projection) branches.
#[derive(Clone, Debug, PartialEq)]
pub struct SpatioTemporalEncoder {
    dgcn: Vec<DgcnLayer>,
    tcn: Vec<TcnLayer>,
    projection: Projection,
}

impl SpatioTemporalEncoder {
    /// Glorot-initialised encoder; ReLU on hidden layers, linear on the last
    /// layer of each branch. The last DGCN layer starts at zero so the fused
    /// pre-activations start at zero instead of deep in the link tails, and
    /// TCN kernels start nonnegative so the single-channel ReLU stack is not
    /// dead on nonnegative demand (a dead temporal branch would pin z at 0).
    pub fn init<R: Rng + ?Sized>(rng: &mut R, spec: &EncoderSpec) -> Result<Self> {
        let tcn_out = spec.validate()?;
        let mut widths = vec![spec.t_window];
        widths.extend(&spec.dgcn_hidden);
        widths.push(spec.out_width);
        let last = widths.len() - 2;
        let mut dgcn: Vec<DgcnLayer> = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i == last {
                    Activation::Linear
                } else {
                    Activation::Relu
                };
                DgcnLayer::init(rng, spec.diffusion_steps, w[0], w[1], act)
            })
            .collect();
        let n_tcn = spec.tcn_kernels.len();
        let tcn = spec
            .tcn_kernels
            .iter()
            .enumerate()
            .map(|(i, &k)| {
                let act = if i + 1 == n_tcn {
                    Activation::Linear
                } else {
                    Activation::Relu
                };
                TcnLayer::init(rng, k, act)
            })
            .collect();
        let projection = Projection::init(rng, tcn_out, spec.out_width);
        if let Some(last) = dgcn.last_mut() {
            for w in last.params_mut() {
                w.data_mut().fill(0.0);
            }
        }
        Ok(Self { dgcn, tcn, projection })
    }

    /// Assembles explicit layers, checking that widths chain for an input
    /// history of `t_window`.
    pub fn from_layers(
        t_window: usize,
        dgcn: Vec<DgcnLayer>,
        tcn: Vec<TcnLayer>,
        projection: Projection,
    ) -> Result<Self> {
        if dgcn.is_empty() || tcn.is_empty() {
            return Err(Error::Config("each branch needs at least one layer".into()));
        }
        let mut w = t_window;
        for (i, layer) in dgcn.iter().enumerate() {
            if layer.in_width() != w {
                return Err(Error::Config(format!(
                    "DGCN layer {i} expects width {}, previous width is {w}",
                    layer.in_width()
                )));
            }
            w = layer.out_width();
        }
        let spatial_out = w;
        let mut w = t_window;
        for (i, layer) in tcn.iter().enumerate() {
            w = layer.out_width(w).ok_or_else(|| {
                Error::Config(format!(
                    "TCN layer {i}: kernel width {} exceeds time width {w}",
                    layer.kernel_width()
                ))
            })?;
        }
        if projection.in_width() != w {
            return Err(Error::Config(format!(
                "projection expects width {}, temporal branch yields {w}",
                projection.in_width()
            )));
        }
        if projection.out_width() != spatial_out {
            return Err(Error::Config(format!(
                "branch widths differ: spatial {spatial_out}, temporal {}",
                projection.out_width()
            )));
        }
        Ok(Self { dgcn, tcn, projection })
    }

    pub fn t_window(&self) -> usize {
        self.dgcn[0].in_width()
    }

    pub fn out_width(&self) -> usize {
        self.projection.out_width()
    }

    pub fn diffusion_steps(&self) -> usize {
        self.dgcn.iter().map(DgcnLayer::steps).max().unwrap_or(0)
    }

    pub fn dgcn_layers(&self) -> &[DgcnLayer] {
        &self.dgcn
    }

    pub fn tcn_layers(&self) -> &[TcnLayer] {
        &self.tcn
    }

    /// All weights in a fixed order: DGCN layers, TCN layers, projection.
    pub fn params(&self) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = self.dgcn.iter().flat_map(DgcnLayer::params).collect();
        out.extend(self.tcn.iter().flat_map(TcnLayer::params));
        out.extend(self.projection.params());
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = self.dgcn.iter_mut().flat_map(DgcnLayer::params_mut).collect();
        out.extend(self.tcn.iter_mut().flat_map(TcnLayer::params_mut));
        out.extend(self.projection.params_mut());
        out
    }

    /// Registers every weight as a differentiable leaf.
    pub fn register(&self, tape: &mut Tape) -> Vec<Var> {
        self.params().into_iter().map(|t| tape.leaf(t.clone())).collect()
    }

    /// Runs both branches on `x` (`[B×V×T]`), returning `(H_s, H_t)`.
    pub fn forward(&self, tape: &mut Tape, params: &[Var], supports: &SupportVars, x: Var) -> Result<(Var, Var)> {
        let expected = self.params().len();
        if params.len() != expected {
            return Err(Error::Contract(format!(
                "encoder has {expected} weights, got {} vars",
                params.len()
            )));
        }
        let mut offset = 0;
        let mut spatial = x;
        for layer in &self.dgcn {
            let n = layer.param_count();
            spatial = layer.forward(tape, &params[offset..offset + n], supports, spatial)?;
            offset += n;
        }
        let mut temporal = x;
        for layer in &self.tcn {
            temporal = layer.forward(tape, &params[offset..offset + 2], temporal)?;
            offset += 2;
        }
        let temporal = self.projection.forward(tape, &params[offset..offset + 2], temporal)?;
        Ok((spatial, temporal))
    }
}
