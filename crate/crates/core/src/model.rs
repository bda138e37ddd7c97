//! The full forecaster: encoder branches, Hadamard fusion, probability head,
//! training, prediction and checkpoints.

use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::{read_exact, read_u32, read_u64, split, DemandTensor};
use crate::encoders::{EncoderSpec, GraphSupports, SpatioTemporalEncoder, SupportVars};
use crate::error::{Error, Result};
use crate::graph::OdGraph;
use crate::heads::{head_nll, link, DistParamSet, HeadKind, LikelihoodForm};
use crate::tensor::{Tape, Tensor, Var};

const CKPT_MAGIC: &[u8; 4] = b"STZ1";
const CKPT_VERSION: u32 = 1;

/// Elementwise map applied to demand histories before the encoder. Targets
/// and the likelihood always see raw counts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InputTransform {
    Identity,
    /// `ln(1 + x)`: keeps the fused pre-activations of large counts out of
    /// the flat tails of the link functions.
    Log1p,
}

impl InputTransform {
    pub fn apply(self, x: &Tensor) -> Tensor {
        match self {
            InputTransform::Identity => x.clone(),
            InputTransform::Log1p => x.map(f64::ln_1p),
        }
    }
}

impl fmt::Display for InputTransform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InputTransform::Identity => "identity",
            InputTransform::Log1p => "log1p",
        })
    }
}

impl FromStr for InputTransform {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(InputTransform::Identity),
            "log1p" => Ok(InputTransform::Log1p),
            other => Err(Error::Config(format!(
                "unknown input_transform {other:?} (expected identity or log1p)"
            ))),
        }
    }
}

/// Every knob of a model and its training run.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub head: HeadKind,
    pub t_window: usize,
    pub k_horizon: usize,
    pub diffusion_steps: usize,
    pub dgcn_hidden: Vec<usize>,
    /// `None` picks three kernels that shrink `t_window` to 1.
    pub tcn_kernels: Option<Vec<usize>>,
    pub input_transform: InputTransform,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    /// Caps the optimiser steps per epoch; 0 means every training window.
    pub max_batches_per_epoch: usize,
    pub seed: u64,
    pub paper_approx_ll: bool,
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            head: HeadKind::Zinb,
            t_window: 8,
            k_horizon: 2,
            diffusion_steps: 3,
            dgcn_hidden: vec![32, 32],
            tcn_kernels: None,
            input_transform: InputTransform::Log1p,
            batch_size: 32,
            learning_rate: 1e-3,
            max_epochs: 200,
            patience: 10,
            max_batches_per_epoch: 0,
            seed: 0,
            paper_approx_ll: false,
            train_frac: 0.7,
            val_frac: 0.1,
            test_frac: 0.2,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|s| parse_value(key, s.trim())).collect()
}

fn join(list: &[usize]) -> String {
    list.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

impl ModelConfig {
    pub fn likelihood_form(&self) -> LikelihoodForm {
        if self.paper_approx_ll {
            LikelihoodForm::PaperApprox
        } else {
            LikelihoodForm::Exact
        }
    }

    pub fn kernels(&self) -> Vec<usize> {
        self.tcn_kernels
            .clone()
            .unwrap_or_else(|| EncoderSpec::default_kernels(self.t_window))
    }

    pub fn encoder_spec(&self) -> EncoderSpec {
        EncoderSpec {
            t_window: self.t_window,
            out_width: self.head.param_count() * self.k_horizon,
            diffusion_steps: self.diffusion_steps,
            dgcn_hidden: self.dgcn_hidden.clone(),
            tcn_kernels: self.kernels(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_window == 0 || self.k_horizon == 0 {
            return Err(Error::Config("t_window and k_horizon must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        let fr = [self.train_frac, self.val_frac, self.test_frac];
        if fr.iter().any(|&f| !(f > 0.0)) || (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split fractions must be positive and sum to 1, got {fr:?}"
            )));
        }
        self.encoder_spec().validate().map(|_| ())
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {raw:?}", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: duplicate key {key}", lineno + 1)));
            }
            match key {
                "head" => c.head = value.parse()?,
                "t_window" => c.t_window = parse_value(key, value)?,
                "k_horizon" => c.k_horizon = parse_value(key, value)?,
                "diffusion_steps" => c.diffusion_steps = parse_value(key, value)?,
                "dgcn_hidden" => c.dgcn_hidden = parse_list(key, value)?,
                "tcn_kernels" => c.tcn_kernels = Some(parse_list(key, value)?),
                "input_transform" => c.input_transform = value.parse()?,
                "batch_size" => c.batch_size = parse_value(key, value)?,
                "learning_rate" => c.learning_rate = parse_value(key, value)?,
                "max_epochs" => c.max_epochs = parse_value(key, value)?,
                "patience" => c.patience = parse_value(key, value)?,
                "max_batches_per_epoch" => c.max_batches_per_epoch = parse_value(key, value)?,
                "seed" => c.seed = parse_value(key, value)?,
                "paper_approx_ll" => c.paper_approx_ll = parse_value(key, value)?,
                "train_frac" => c.train_frac = parse_value(key, value)?,
                "val_frac" => c.val_frac = parse_value(key, value)?,
                "test_frac" => c.test_frac = parse_value(key, value)?,
                _ => return Err(Error::Config(format!("line {}: unknown key {key:?}", lineno + 1))),
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Serialises every field; `parse(to_text())` round-trips.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "head = {}", self.head);
        let _ = writeln!(s, "t_window = {}", self.t_window);
        let _ = writeln!(s, "k_horizon = {}", self.k_horizon);
        let _ = writeln!(s, "diffusion_steps = {}", self.diffusion_steps);
        let _ = writeln!(s, "dgcn_hidden = {}", join(&self.dgcn_hidden));
        let _ = writeln!(s, "tcn_kernels = {}", join(&self.kernels()));
        let _ = writeln!(s, "input_transform = {}", self.input_transform);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "learning_rate = {:?}", self.learning_rate);
        let _ = writeln!(s, "max_epochs = {}", self.max_epochs);
        let _ = writeln!(s, "patience = {}", self.patience);
        let _ = writeln!(s, "max_batches_per_epoch = {}", self.max_batches_per_epoch);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "paper_approx_ll = {}", self.paper_approx_ll);
        let _ = writeln!(s, "train_frac = {:?}", self.train_frac);
        let _ = writeln!(s, "val_frac = {:?}", self.val_frac);
        let _ = writeln!(s, "test_frac = {:?}", self.test_frac);
        s
    }

    pub fn split_fractions(&self) -> (f64, f64, f64) {
        (self.train_frac, self.val_frac, self.test_frac)
    }
}

/// Adaptive moment estimation over a fixed list of parameter tensors.
#[derive(Clone, Debug)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(learning_rate: f64, sizes: &[usize]) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// One update; `grads[i]` of `None` means a zero gradient.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Option<&Tensor>]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powf(self.t as f64);
        let bc2 = 1.0 - self.beta2.powf(self.t as f64);
        for (i, p) in params.iter_mut().enumerate() {
            let Some(g) = grads[i] else { continue };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                let gj = g.data()[j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let mh = m[j] / bc1;
                let vh = v[j] / bc2;
                *w -= self.learning_rate * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

/// Elementwise product of the two branch embeddings followed by the head's
/// link functions. Both inputs are `[.., P·k]`.
pub fn fuse(head: HeadKind, spatial: &Tensor, temporal: &Tensor, k: usize) -> Result<DistParamSet> {
    if spatial.shape() != temporal.shape() {
        return Err(Error::Contract(format!(
            "branch shapes differ: {:?} vs {:?}",
            spatial.shape(),
            temporal.shape()
        )));
    }
    let data = spatial.data().iter().zip(temporal.data()).map(|(a, b)| a * b).collect();
    let z = Tensor::new(spatial.shape().to_vec(), data)?;
    DistParamSet::from_preactivation(head, &z, k)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_nll: f64,
    pub val_nll: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_nll: f64,
    pub stopped_early: bool,
}

/// Point estimates, 10%/90% bounds and (ZINB only) π for every entry of a
/// `[B×V×k]` forecast.
#[derive(Clone, Debug, PartialEq)]
pub struct ForecastBundle {
    pub head: HeadKind,
    pub shape: Vec<usize>,
    pub mean: Vec<f64>,
    pub median: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub pi: Option<Vec<f64>>,
}

impl ForecastBundle {
    pub fn from_params(params: &DistParamSet) -> Result<Self> {
        let (mean, median) = params.point_estimates();
        Ok(Self {
            head: params.head(),
            shape: params.shape().to_vec(),
            mean,
            median,
            lower: params.quantile(0.1)?,
            upper: params.quantile(0.9)?,
            pi: params.pi().map(<[f64]>::to_vec),
        })
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    /// Concatenates bundles along the batch axis.
    pub fn concat(parts: Vec<ForecastBundle>) -> Result<Self> {
        let mut iter = parts.into_iter();
        let mut out = iter
            .next()
            .ok_or_else(|| Error::Contract("nothing to concatenate".into()))?;
        for part in iter {
            if part.head != out.head || part.shape[1..] != out.shape[1..] {
                return Err(Error::Contract("bundles disagree on head or shape".into()));
            }
            out.shape[0] += part.shape[0];
            out.mean.extend(part.mean);
            out.median.extend(part.median);
            out.lower.extend(part.lower);
            out.upper.extend(part.upper);
            if let (Some(a), Some(b)) = (out.pi.as_mut(), part.pi) {
                a.extend(b);
            }
        }
        Ok(out)
    }
}

/// A configured encoder plus training state.
#[derive(Clone, Debug, PartialEq)]
pub struct Forecaster {
    config: ModelConfig,
    encoder: SpatioTemporalEncoder,
    step: u64,
    best_val: f64,
}

struct Pass {
    loss: Option<Var>,
    z: Var,
    weights: Vec<Var>,
}

impl Forecaster {
    /// Freshly initialised, untrained model.
    pub fn new(mut config: ModelConfig) -> Result<Self> {
        config.validate()?;
        config.tcn_kernels = Some(config.kernels());
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let encoder = SpatioTemporalEncoder::init(&mut rng, &config.encoder_spec())?;
        Ok(Self {
            config,
            encoder,
            step: 0,
            best_val: f64::INFINITY,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn encoder(&self) -> &SpatioTemporalEncoder {
        &self.encoder
    }

    pub fn encoder_mut(&mut self) -> &mut SpatioTemporalEncoder {
        &mut self.encoder
    }

    pub fn head(&self) -> HeadKind {
        self.config.head
    }

    /// Optimiser steps taken so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn best_val_nll(&self) -> f64 {
        self.best_val
    }

    pub fn is_trained(&self) -> bool {
        self.step > 0
    }

    pub fn supports(&self, graph: &OdGraph) -> Result<GraphSupports> {
        GraphSupports::new(graph, self.config.diffusion_steps)
    }

    fn check_input(&self, supports: &GraphSupports, x: &Tensor) -> Result<()> {
        let (_, v, t) = x.dims3()?;
        if v != supports.num_nodes() {
            return Err(Error::Contract(format!(
                "input has {v} nodes, graph has {}",
                supports.num_nodes()
            )));
        }
        if t != self.config.t_window {
            return Err(Error::Contract(format!(
                "input history {t} != t_window {}",
                self.config.t_window
            )));
        }
        if x.data().iter().any(|&c| !(c >= 0.0)) {
            return Err(Error::Domain("demand input must be non-negative".into()));
        }
        Ok(())
    }

    /// Records one forward pass (and the loss, when `y` is given) on `tape`.
    fn record(&self, tape: &mut Tape, supports: &SupportVars, x: Tensor, y: Option<&Tensor>) -> Result<Pass> {
        let weights = self.encoder.register(tape);
        let xv = tape.constant(self.config.input_transform.apply(&x));
        let (hs, ht) = self.encoder.forward(tape, &weights, supports, xv)?;
        let z = tape.mul(hs, ht)?;
        let loss = match y {
            None => None,
            Some(y) => {
                let params = link(tape, self.config.head, z, self.config.k_horizon)?;
                Some(head_nll(
                    tape,
                    self.config.head,
                    &params,
                    y,
                    self.config.likelihood_form(),
                )?)
            }
        };
        Ok(Pass { loss, z, weights })
    }

    /// Forward pass with precomputed supports.
    pub fn forward_with(&self, supports: &GraphSupports, x: &Tensor) -> Result<DistParamSet> {
        self.check_input(supports, x)?;
        let mut tape = Tape::new();
        let sv = supports.register(&mut tape);
        let pass = self.record(&mut tape, &sv, x.clone(), None)?;
        DistParamSet::from_preactivation(self.config.head, tape.value(pass.z), self.config.k_horizon)
    }

    /// `[B×V×t_window]` history to a `[B×V×k]` parameter set.
    pub fn forward(&self, x: &Tensor, graph: &OdGraph) -> Result<DistParamSet> {
        self.forward_with(&self.supports(graph)?, x)
    }

    /// Branch embeddings `(H_s, H_t)` before fusion.
    pub fn embeddings(&self, supports: &GraphSupports, x: &Tensor) -> Result<(Tensor, Tensor)> {
        self.check_input(supports, x)?;
        let mut tape = Tape::new();
        let sv = supports.register(&mut tape);
        let weights = self.encoder.register(&mut tape);
        let xv = tape.constant(self.config.input_transform.apply(x));
        let (hs, ht) = self.encoder.forward(&mut tape, &weights, &sv, xv)?;
        Ok((tape.value(hs).clone(), tape.value(ht).clone()))
    }

    /// Mean loss on one batch and its gradient for every encoder weight, in
    /// [`SpatioTemporalEncoder::params`] order.
    pub fn loss_and_grad(&self, supports: &GraphSupports, x: &Tensor, y: &Tensor) -> Result<(f64, Vec<Tensor>)> {
        self.check_input(supports, x)?;
        let mut tape = Tape::new();
        let sv = supports.register(&mut tape);
        let pass = self.record(&mut tape, &sv, x.clone(), Some(y))?;
        let loss = pass.loss.expect("targets given");
        let grads = tape.backward(loss)?;
        let value = tape.value(loss).item()?;
        let g = pass
            .weights
            .iter()
            .map(|&w| grads.get(w).cloned().unwrap_or_else(|| Tensor::zeros(tape.shape(w))))
            .collect();
        Ok((value, g))
    }

    /// Mean loss on one batch without gradients.
    pub fn loss(&self, supports: &GraphSupports, x: &Tensor, y: &Tensor) -> Result<f64> {
        self.check_input(supports, x)?;
        let mut tape = Tape::new();
        let sv = supports.register(&mut tape);
        let pass = self.record(&mut tape, &sv, x.clone(), Some(y))?;
        tape.value(pass.loss.expect("targets given")).item()
    }

    /// Mean NLL over every window starting at `starts`.
    pub fn mean_nll(&self, supports: &GraphSupports, demand: &DemandTensor, starts: &[usize]) -> Result<f64> {
        let (t, k) = (self.config.t_window, self.config.k_horizon);
        let mut total = 0.0;
        for chunk in starts.chunks(self.config.batch_size.max(64)) {
            let (x, y) = demand.batch(chunk, t, k)?;
            total += self.loss(supports, &x, &y)? * chunk.len() as f64;
        }
        Ok(total / starts.len() as f64)
    }

    /// Trains a fresh model from `config` on the training span of `demand`,
    /// early-stopping on validation NLL and returning the best weights.
    pub fn train(config: ModelConfig, demand: &DemandTensor, graph: &OdGraph) -> Result<(Self, TrainingLog)> {
        let mut model = Self::new(config)?;
        let log = model.fit(demand, graph)?;
        Ok((model, log))
    }

    /// Continues optimisation of this model's weights.
    pub fn fit(&mut self, demand: &DemandTensor, graph: &OdGraph) -> Result<TrainingLog> {
        if demand.num_nodes() != graph.num_nodes() {
            return Err(Error::Contract(format!(
                "demand has {} nodes, graph has {}",
                demand.num_nodes(),
                graph.num_nodes()
            )));
        }
        let cfg = self.config.clone();
        let supports = self.supports(graph)?;
        let ranges = split(demand.num_windows(), cfg.split_fractions())?;
        let [train, val, _] = ranges.windows(cfg.t_window, cfg.k_horizon)?;

        let sizes: Vec<usize> = self.encoder.params().iter().map(|p| p.numel()).collect();
        let mut adam = Adam::new(cfg.learning_rate, &sizes);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9E37_79B9_7F4A_7C15);
        let mut order = train.clone();
        let mut log = TrainingLog {
            best_val_nll: f64::INFINITY,
            ..TrainingLog::default()
        };
        let mut best = self.encoder.clone();
        let mut stale = 0;

        for epoch in 1..=cfg.max_epochs {
            order.shuffle(&mut rng);
            let mut batches: Vec<&[usize]> = order.chunks(cfg.batch_size).collect();
            if cfg.max_batches_per_epoch > 0 {
                batches.truncate(cfg.max_batches_per_epoch);
            }
            let (mut sum, mut count) = (0.0, 0usize);
            for (bi, chunk) in batches.iter().enumerate() {
                let (x, y) = demand.batch(chunk, cfg.t_window, cfg.k_horizon)?;
                let diag = |e: Error| match e {
                    Error::Numeric(m) => Error::Numeric(format!(
                        "epoch {epoch}, batch {bi} (windows starting {:?}): {m}",
                        &chunk[..chunk.len().min(4)]
                    )),
                    other => other,
                };
                let (loss, grads) = self.loss_and_grad(&supports, &x, &y).map_err(diag)?;
                if !loss.is_finite() {
                    return Err(diag(Error::Numeric(format!("loss is {loss}"))));
                }
                let grad_refs: Vec<Option<&Tensor>> = grads.iter().map(Some).collect();
                adam.step(&mut self.encoder.params_mut(), &grad_refs);
                self.step += 1;
                sum += loss * chunk.len() as f64;
                count += chunk.len();
            }
            let val_nll = self.mean_nll(&supports, demand, &val)?;
            log.epochs.push(EpochRecord {
                epoch,
                train_nll: sum / count as f64,
                val_nll,
            });
            if val_nll < log.best_val_nll {
                log.best_val_nll = val_nll;
                log.best_epoch = epoch;
                best = self.encoder.clone();
                stale = 0;
            } else {
                stale += 1;
                if stale >= cfg.patience {
                    log.stopped_early = true;
                    break;
                }
            }
        }
        if log.best_epoch > 0 {
            self.encoder = best;
            self.best_val = log.best_val_nll;
        }
        Ok(log)
    }

    /// Forecast bundle for `[B×V×t_window]` history.
    pub fn predict(&self, history: &Tensor, graph: &OdGraph) -> Result<ForecastBundle> {
        self.predict_with(&self.supports(graph)?, history)
    }

    pub fn predict_with(&self, supports: &GraphSupports, history: &Tensor) -> Result<ForecastBundle> {
        if !self.is_trained() {
            return Err(Error::State("model has not been trained or loaded".into()));
        }
        ForecastBundle::from_params(&self.forward_with(supports, history)?)
    }

    /// Forecasts for every window start, with the matching ground truth.
    pub fn predict_windows(
        &self,
        supports: &GraphSupports,
        demand: &DemandTensor,
        starts: &[usize],
    ) -> Result<(ForecastBundle, Vec<f64>)> {
        let (t, k) = (self.config.t_window, self.config.k_horizon);
        let mut parts = Vec::new();
        let mut truth = Vec::new();
        for chunk in starts.chunks(self.config.batch_size.max(64)) {
            let (x, y) = demand.batch(chunk, t, k)?;
            parts.push(self.predict_with(supports, &x)?);
            truth.extend_from_slice(y.data());
        }
        Ok((ForecastBundle::concat(parts)?, truth))
    }

    // ---- checkpoints --------------------------------------------------------

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(CKPT_MAGIC);
        buf.extend_from_slice(&CKPT_VERSION.to_le_bytes());
        let cfg = self.config.to_text();
        buf.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
        buf.extend_from_slice(cfg.as_bytes());
        buf.extend_from_slice(&self.step.to_le_bytes());
        buf.extend_from_slice(&self.best_val.to_le_bytes());
        let params = self.encoder.params();
        buf.extend_from_slice(&(params.len() as u32).to_le_bytes());
        for p in params {
            buf.extend_from_slice(&(p.rank() as u32).to_le_bytes());
            for &d in p.shape() {
                buf.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &x in p.data() {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic)?;
        if &magic != CKPT_MAGIC {
            return Err(Error::Format(format!("not a checkpoint: magic {magic:?}")));
        }
        let version = read_u32(&mut r)?;
        if version != CKPT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let len = read_u32(&mut r)? as usize;
        if r.len() < len {
            return Err(Error::Format("truncated config blob".into()));
        }
        let (blob, rest) = r.split_at(len);
        r = rest;
        let text = std::str::from_utf8(blob).map_err(|_| Error::Format("config blob is not UTF-8".into()))?;
        let config = ModelConfig::parse(text).map_err(|e| Error::Format(format!("embedded config: {e}")))?;
        let step = read_u64(&mut r)?;
        let mut b = [0u8; 8];
        read_exact(&mut r, &mut b)?;
        let best_val = f64::from_le_bytes(b);

        let mut model = Self::new(config)?;
        let count = read_u32(&mut r)? as usize;
        let mut params = model.encoder.params_mut();
        if count != params.len() {
            return Err(Error::Format(format!(
                "checkpoint holds {count} tensors, config implies {}",
                params.len()
            )));
        }
        for (i, p) in params.iter_mut().enumerate() {
            let rank = read_u32(&mut r)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(read_u64(&mut r)? as usize);
            }
            if shape != p.shape() {
                return Err(Error::Format(format!(
                    "tensor {i}: shape {shape:?}, expected {:?}",
                    p.shape()
                )));
            }
            for x in p.data_mut() {
                read_exact(&mut r, &mut b)?;
                *x = f64::from_le_bytes(b);
            }
        }
        if !r.is_empty() {
            return Err(Error::Format(format!("{} trailing bytes", r.len())));
        }
        model.step = step;
        model.best_val = best_val;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}
