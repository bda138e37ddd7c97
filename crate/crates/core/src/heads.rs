//! Probability layers: zero-inflated negative binomial, negative binomial,
//! Gaussian and zero-truncated normal.
//!
//! Scalar densities, moments, quantiles and samplers live on [`Dist`];
//! [`DistParamSet`] holds one distribution per (batch, node, step) entry; the
//! `*_nll` functions record the same log-likelihoods on a [`Tape`] for
//! training.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal, Poisson};
use statrs::function::beta::beta_reg;

use crate::error::{Error, Result};
use crate::special::{ln_gamma_unchecked, log_add_exp, norm_cdf, norm_log_cdf, norm_mills_inverse, norm_quantile};
use crate::tensor::{Tape, Tensor, Var};

/// Log-probabilities below this are floored inside losses.
pub const LOG_PROB_FLOOR: f64 = -745.0;

/// Lower bound added to softplus outputs for `n` and `σ`.
pub const POSITIVE_EPS: f64 = 1e-6;

/// `p` is clamped to `[P_EPS, 1 - P_EPS]`.
pub const P_EPS: f64 = 1e-6;

/// `π` is clamped to `[PI_EPS, 1 - PI_EPS]` so both `ln π` and `ln(1 - π)` stay finite.
pub const PI_EPS: f64 = 1e-12;

/// Upper tail mass at which discrete CDF scans stop.
const CDF_TAIL: f64 = 1e-12;

/// Discrete CDFs and quantiles sum the pmf exactly up to this count and
/// switch to the closed form `I_p(n, y+1)` beyond it.
const SCAN_LIMIT: u64 = 4096;

const HALF_LN_TWO_PI: f64 = 0.918_938_533_204_672_8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum HeadKind {
    Zinb,
    Nb,
    Gaussian,
    TruncNormal,
}

impl HeadKind {
    pub const ALL: [HeadKind; 4] = [HeadKind::Zinb, HeadKind::Nb, HeadKind::Gaussian, HeadKind::TruncNormal];

    /// Parameter channels per entry: 3 for ZINB, 2 otherwise.
    pub fn param_count(self) -> usize {
        match self {
            HeadKind::Zinb => 3,
            _ => 2,
        }
    }

    pub fn is_discrete(self) -> bool {
        matches!(self, HeadKind::Zinb | HeadKind::Nb)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            HeadKind::Zinb => "zinb",
            HeadKind::Nb => "nb",
            HeadKind::Gaussian => "gaussian",
            HeadKind::TruncNormal => "truncnormal",
        }
    }
}

impl fmt::Display for HeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "zinb" => Ok(HeadKind::Zinb),
            "nb" => Ok(HeadKind::Nb),
            "gaussian" => Ok(HeadKind::Gaussian),
            "truncnormal" => Ok(HeadKind::TruncNormal),
            other => Err(Error::Config(format!(
                "unknown head {other:?}; expected zinb, nb, gaussian or truncnormal"
            ))),
        }
    }
}

/// Which ZINB log-likelihood the loss uses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum LikelihoodForm {
    /// Log of the mixture pmf itself.
    #[default]
    Exact,
    /// The two-branch approximation
    /// `ln π + ln((1-π)pⁿ)` for zeros and
    /// `ln(1-π) + ln Γ(n+y) - ln Γ(y+1) - ln Γ(n) + n ln p + y ln(1-π)` otherwise.
    PaperApprox,
}

// ---- scalar log-densities -----------------------------------------------

fn check_nb(n: f64, p: f64) -> Result<()> {
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::Domain(format!("NB requires n > 0, got {n}")));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("NB requires 0 < p < 1, got {p}")));
    }
    Ok(())
}

fn check_count(y: i64) -> Result<()> {
    if y < 0 {
        Err(Error::Domain(format!("counts must be non-negative, got {y}")))
    } else {
        Ok(())
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        Err(Error::Domain(format!("sigma must be positive, got {sigma}")))
    } else {
        Ok(())
    }
}

/// `ln f_NB(y; n, p) = ln Γ(y+n) - ln Γ(y+1) - ln Γ(n) + n ln p + y ln(1-p)`.
pub fn nb_log_pmf(y: i64, n: f64, p: f64) -> Result<f64> {
    check_count(y)?;
    check_nb(n, p)?;
    Ok(nb_log_pmf_unchecked(y as f64, n, p))
}

fn nb_log_pmf_unchecked(y: f64, n: f64, p: f64) -> f64 {
    ln_gamma_unchecked(y + n) - ln_gamma_unchecked(y + 1.0) - ln_gamma_unchecked(n) + n * p.ln() + y * (-p).ln_1p()
}

/// Log of the zero-inflated NB pmf. `π` may be 0 or 1; impossible outcomes
/// return `-inf`.
pub fn zinb_log_pmf(y: i64, pi: f64, n: f64, p: f64) -> Result<f64> {
    check_count(y)?;
    check_nb(n, p)?;
    if !(0.0..=1.0).contains(&pi) {
        return Err(Error::Domain(format!("ZINB requires 0 <= pi <= 1, got {pi}")));
    }
    Ok(zinb_log_pmf_unchecked(y as f64, pi, n, p))
}

fn zinb_log_pmf_unchecked(y: f64, pi: f64, n: f64, p: f64) -> f64 {
    let log_keep = (-pi).ln_1p();
    if y == 0.0 {
        log_add_exp(pi.ln(), log_keep + nb_log_pmf_unchecked(0.0, n, p))
    } else {
        log_keep + nb_log_pmf_unchecked(y, n, p)
    }
}

/// The approximate two-branch ZINB log-likelihood (see [`LikelihoodForm::PaperApprox`]).
pub fn zinb_log_likelihood_approx(y: i64, pi: f64, n: f64, p: f64) -> Result<f64> {
    check_count(y)?;
    check_nb(n, p)?;
    if !(pi > 0.0 && pi < 1.0) {
        return Err(Error::Domain(format!("approximate ZINB needs 0 < pi < 1, got {pi}")));
    }
    Ok(zinb_approx_unchecked(y as f64, pi, n, p))
}

fn zinb_approx_unchecked(y: f64, pi: f64, n: f64, p: f64) -> f64 {
    let log_keep = (-pi).ln_1p();
    if y == 0.0 {
        pi.ln() + log_keep + n * p.ln()
    } else {
        log_keep + ln_gamma_unchecked(n + y) - ln_gamma_unchecked(y + 1.0) - ln_gamma_unchecked(n)
            + n * p.ln()
            + y * log_keep
    }
}

pub fn gaussian_log_pdf(y: f64, mu: f64, sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    let z = (y - mu) / sigma;
    Ok(-sigma.ln() - HALF_LN_TWO_PI - 0.5 * z * z)
}

/// Normal density truncated to `[0, ∞)`; `-inf` for `y < 0`.
pub fn truncnormal_log_pdf(y: f64, mu: f64, sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    if y < 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(gaussian_log_pdf(y, mu, sigma)? - norm_log_cdf(mu / sigma))
}

// ---- single-entry distributions -----------------------------------------

/// One predictive distribution.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Dist {
    Zinb { pi: f64, n: f64, p: f64 },
    Nb { n: f64, p: f64 },
    Gaussian { mu: f64, sigma: f64 },
    TruncNormal { mu: f64, sigma: f64 },
}

impl Dist {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Dist::Zinb { pi, n, p } => {
                if !(0.0..=1.0).contains(&pi) {
                    return Err(Error::Domain(format!("pi must lie in [0, 1], got {pi}")));
                }
                check_nb(n, p)
            }
            Dist::Nb { n, p } => check_nb(n, p),
            Dist::Gaussian { mu, sigma } | Dist::TruncNormal { mu, sigma } => {
                if !mu.is_finite() {
                    return Err(Error::Domain(format!("mu must be finite, got {mu}")));
                }
                check_sigma(sigma)
            }
        }
    }

    pub fn head(&self) -> HeadKind {
        match self {
            Dist::Zinb { .. } => HeadKind::Zinb,
            Dist::Nb { .. } => HeadKind::Nb,
            Dist::Gaussian { .. } => HeadKind::Gaussian,
            Dist::TruncNormal { .. } => HeadKind::TruncNormal,
        }
    }

    /// Log pmf (discrete heads, at `y.round()`) or log pdf (continuous heads).
    pub fn log_prob(&self, y: f64) -> f64 {
        match *self {
            Dist::Zinb { pi, n, p } => {
                if y < 0.0 {
                    f64::NEG_INFINITY
                } else {
                    zinb_log_pmf_unchecked(y.round(), pi, n, p)
                }
            }
            Dist::Nb { n, p } => {
                if y < 0.0 {
                    f64::NEG_INFINITY
                } else {
                    nb_log_pmf_unchecked(y.round(), n, p)
                }
            }
            Dist::Gaussian { mu, sigma } => {
                let z = (y - mu) / sigma;
                -sigma.ln() - HALF_LN_TWO_PI - 0.5 * z * z
            }
            Dist::TruncNormal { mu, sigma } => {
                if y < 0.0 {
                    f64::NEG_INFINITY
                } else {
                    let z = (y - mu) / sigma;
                    -sigma.ln() - HALF_LN_TWO_PI - 0.5 * z * z - norm_log_cdf(mu / sigma)
                }
            }
        }
    }

    /// Probability mass at integer `y` for the discrete heads.
    fn pmf(&self, y: u64) -> f64 {
        self.log_prob(y as f64).exp()
    }

    /// `P(Y <= y)` of the discrete heads through the regularized incomplete
    /// beta function.
    fn closed_cdf(&self, y: u64) -> f64 {
        let nb = |n: f64, p: f64| beta_reg(n, y as f64 + 1.0, p);
        match *self {
            Dist::Zinb { pi, n, p } => pi + (1.0 - pi) * nb(n, p),
            Dist::Nb { n, p } => nb(n, p),
            _ => unreachable!("continuous heads have closed-form CDFs"),
        }
    }

    /// `P(Y <= y)`. Discrete heads sum the pmf upward from zero.
    pub fn cdf(&self, y: f64) -> f64 {
        match *self {
            Dist::Zinb { .. } | Dist::Nb { .. } => {
                if y < 0.0 {
                    return 0.0;
                }
                let top = y.floor() as u64;
                if top > SCAN_LIMIT {
                    return self.closed_cdf(top);
                }
                let mut acc = 0.0;
                for j in 0..=top {
                    acc += self.pmf(j);
                    if acc > 1.0 - CDF_TAIL {
                        break;
                    }
                }
                acc.min(1.0)
            }
            Dist::Gaussian { mu, sigma } => norm_cdf((y - mu) / sigma),
            Dist::TruncNormal { mu, sigma } => {
                if y < 0.0 {
                    return 0.0;
                }
                // Upper-tail form avoids cancellation when μ ≪ 0.
                let log_surv = norm_log_cdf((mu - y) / sigma) - norm_log_cdf(mu / sigma);
                (1.0 - log_surv.exp()).clamp(0.0, 1.0)
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Dist::Zinb { pi, n, p } => (1.0 - pi) * n * (1.0 - p) / p,
            Dist::Nb { n, p } => n * (1.0 - p) / p,
            Dist::Gaussian { mu, .. } => mu,
            Dist::TruncNormal { mu, sigma } => mu + sigma * norm_mills_inverse(mu / sigma),
        }
    }

    pub fn median(&self) -> f64 {
        match self {
            Dist::Gaussian { mu, .. } => *mu,
            _ => self.quantile(0.5),
        }
    }

    /// Smallest integer `y` with `CDF(y) >= q` for discrete heads; the
    /// inverse CDF for continuous heads. `q` must lie in (0, 1).
    pub fn quantile(&self, q: f64) -> f64 {
        match *self {
            Dist::Zinb { .. } | Dist::Nb { .. } => {
                let mut acc = 0.0;
                for y in 0..=SCAN_LIMIT {
                    acc += self.pmf(y);
                    if acc >= q || acc > 1.0 - CDF_TAIL {
                        return y as f64;
                    }
                }
                // Wide support: bracket by doubling, then bisect.
                let (mut lo, mut hi) = (SCAN_LIMIT, 2 * SCAN_LIMIT);
                while self.closed_cdf(hi) < q && hi < 1 << 52 {
                    lo = hi;
                    hi *= 2;
                }
                while hi - lo > 1 {
                    let mid = lo + (hi - lo) / 2;
                    if self.closed_cdf(mid) >= q {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                hi as f64
            }
            Dist::Gaussian { mu, sigma } => mu + sigma * norm_quantile(q),
            Dist::TruncNormal { mu, sigma } => truncnormal_quantile(mu, sigma, q),
        }
    }

    /// One draw: zero with probability π, otherwise NB via a Gamma-Poisson
    /// mixture; normal draws for the continuous heads.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Dist::Zinb { pi, n, p } => {
                if rng.random::<f64>() < pi {
                    0.0
                } else {
                    sample_nb(rng, n, p)
                }
            }
            Dist::Nb { n, p } => sample_nb(rng, n, p),
            Dist::Gaussian { mu, sigma } => Normal::new(mu, sigma).expect("validated sigma").sample(rng),
            Dist::TruncNormal { mu, sigma } => {
                let u: f64 = rng.random();
                truncnormal_quantile(mu, sigma, u.max(f64::MIN_POSITIVE))
            }
        }
    }
}

/// Solves `P(Y > x) = (1 - q) · P(Y > 0)` through the upper tail.
fn truncnormal_quantile(mu: f64, sigma: f64, q: f64) -> f64 {
    let r = mu / sigma;
    let y = if r < -30.0 {
        // Deep truncation: density ∝ exp(-a·w - w²/2) for w = y/σ >= 0, a = -r.
        let a = -r;
        let t = -(1.0 - q).ln();
        let mut w = t / (0.5 * a + (0.25 * a * a + 0.5 * t).sqrt());
        // Newton on ln P(W > w) = -t.
        let base = norm_log_cdf(r);
        for _ in 0..4 {
            let g = norm_log_cdf(r - w) - base + t;
            w = (w + g / norm_mills_inverse(r - w)).max(0.0);
        }
        sigma * w
    } else {
        mu - sigma * norm_quantile((1.0 - q) * norm_cdf(r))
    };
    y.max(0.0)
}

fn sample_nb<R: Rng + ?Sized>(rng: &mut R, n: f64, p: f64) -> f64 {
    let scale = (1.0 - p) / p;
    let lambda: f64 = Gamma::new(n, scale).expect("validated NB").sample(rng);
    if lambda <= 0.0 {
        return 0.0;
    }
    Poisson::new(lambda).map_or(lambda.round(), |d| d.sample(rng))
}

// ---- parameter sets ------------------------------------------------------

/// Distribution parameters for every entry of a `[.., k]` forecast.
#[derive(Clone, Debug, PartialEq)]
pub struct DistParamSet {
    head: HeadKind,
    shape: Vec<usize>,
    /// One vector per parameter channel: (π, n, p), (n, p) or (μ, σ).
    channels: Vec<Vec<f64>>,
}

impl DistParamSet {
    pub fn new(head: HeadKind, shape: Vec<usize>, channels: Vec<Vec<f64>>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if channels.len() != head.param_count() || channels.iter().any(|c| c.len() != len) {
            return Err(Error::Contract(format!(
                "{head} needs {} channels of {len} values",
                head.param_count()
            )));
        }
        let set = Self { head, shape, channels };
        for i in 0..len {
            set.entry(i).validate()?;
        }
        Ok(set)
    }

    /// Applies link functions to pre-activations laid out as
    /// `[.., channel * k + step]` on the last axis.
    pub fn from_preactivation(head: HeadKind, z: &Tensor, k: usize) -> Result<Self> {
        let last = *z.shape().last().expect("non-empty shape");
        let pc = head.param_count();
        if last != pc * k {
            return Err(Error::Contract(format!(
                "{head} with horizon {k} needs last axis {}, got {last}",
                pc * k
            )));
        }
        let rows = z.numel() / last;
        let mut channels = vec![Vec::with_capacity(rows * k); pc];
        for row in z.data().chunks(last) {
            for (c, ch) in channels.iter_mut().enumerate() {
                ch.extend(row[c * k..(c + 1) * k].iter().map(|&x| link_scalar(head, c, x)));
            }
        }
        let mut shape = z.shape().to_vec();
        *shape.last_mut().expect("non-empty") = k;
        Self::new(head, shape, channels)
    }

    pub fn head(&self) -> HeadKind {
        self.head
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.channels[c]
    }

    /// Zero-inflation probabilities, for the ZINB head only.
    pub fn pi(&self) -> Option<&[f64]> {
        (self.head == HeadKind::Zinb).then(|| self.channels[0].as_slice())
    }

    pub fn entry(&self, i: usize) -> Dist {
        let c = &self.channels;
        match self.head {
            HeadKind::Zinb => Dist::Zinb {
                pi: c[0][i],
                n: c[1][i],
                p: c[2][i],
            },
            HeadKind::Nb => Dist::Nb { n: c[0][i], p: c[1][i] },
            HeadKind::Gaussian => Dist::Gaussian {
                mu: c[0][i],
                sigma: c[1][i],
            },
            HeadKind::TruncNormal => Dist::TruncNormal {
                mu: c[0][i],
                sigma: c[1][i],
            },
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = Dist> + '_ {
        (0..self.len()).map(|i| self.entry(i))
    }

    /// (mean, median) per entry.
    pub fn point_estimates(&self) -> (Vec<f64>, Vec<f64>) {
        self.iter().map(|d| (d.mean(), d.median())).unzip()
    }

    pub fn quantile(&self, q: f64) -> Result<Vec<f64>> {
        if !(q > 0.0 && q < 1.0) {
            return Err(Error::Contract(format!("quantile level must be in (0, 1), got {q}")));
        }
        Ok(self.iter().map(|d| d.quantile(q)).collect())
    }

    /// One draw per entry, deterministic under `seed`.
    pub fn sample(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.iter().map(|d| d.sample(&mut rng)).collect()
    }

    /// Mean negative log-likelihood of `y` (one value per entry), with each
    /// log-probability floored at [`LOG_PROB_FLOOR`].
    pub fn nll(&self, y: &[f64], form: LikelihoodForm) -> Result<f64> {
        if y.len() != self.len() {
            return Err(Error::Contract(format!(
                "{} targets for {} parameter entries",
                y.len(),
                self.len()
            )));
        }
        let total: f64 = self
            .iter()
            .zip(y)
            .map(|(d, &yv)| {
                let ll = match (d, form) {
                    (Dist::Zinb { pi, n, p }, LikelihoodForm::PaperApprox) => zinb_approx_unchecked(yv, pi, n, p),
                    _ => d.log_prob(yv),
                };
                -ll.max(LOG_PROB_FLOOR)
            })
            .sum();
        Ok(total / y.len() as f64)
    }
}

/// Scalar link for channel `c` of `head`.
pub fn link_scalar(head: HeadKind, c: usize, x: f64) -> f64 {
    use crate::tensor::{sigmoid, softplus};
    match (head, c) {
        (HeadKind::Zinb, 0) => sigmoid(x).clamp(PI_EPS, 1.0 - PI_EPS),
        (HeadKind::Zinb, 1) | (HeadKind::Nb, 0) => softplus(x) + POSITIVE_EPS,
        (HeadKind::Zinb, 2) | (HeadKind::Nb, 1) => sigmoid(x).clamp(P_EPS, 1.0 - P_EPS),
        (HeadKind::Gaussian | HeadKind::TruncNormal, 0) => x,
        (HeadKind::Gaussian | HeadKind::TruncNormal, 1) => softplus(x) + POSITIVE_EPS,
        _ => unreachable!("channel {c} out of range for {head}"),
    }
}

// ---- tape losses ----------------------------------------------------------

/// Slices `z` (`[.., P·k]`) into parameter channels and applies the link
/// functions on the tape. Returns one `[.., k]` var per channel.
pub fn link(tape: &mut Tape, head: HeadKind, z: Var, k: usize) -> Result<Vec<Var>> {
    let last = *tape.shape(z).last().expect("non-empty shape");
    if last != head.param_count() * k {
        return Err(Error::Contract(format!(
            "{head} with horizon {k} needs last axis {}, got {last}",
            head.param_count() * k
        )));
    }
    let mut out = Vec::with_capacity(head.param_count());
    for c in 0..head.param_count() {
        let raw = tape.slice_last(z, c * k, k)?;
        let v = match (head, c) {
            (HeadKind::Zinb, 0) => {
                let s = tape.sigmoid(raw)?;
                tape.clamp(s, PI_EPS, 1.0 - PI_EPS)?
            }
            (HeadKind::Zinb, 2) | (HeadKind::Nb, 1) => {
                let s = tape.sigmoid(raw)?;
                tape.clamp(s, P_EPS, 1.0 - P_EPS)?
            }
            // Gaussian / truncated-normal location.
            (HeadKind::Gaussian | HeadKind::TruncNormal, 0) => raw,
            // n for the count heads, σ for the continuous ones.
            _ => {
                let s = tape.softplus(raw)?;
                tape.add_scalar(s, POSITIVE_EPS)?
            }
        };
        out.push(v);
    }
    Ok(out)
}

struct Targets {
    y: Var,
    ln_gamma_y1: Var,
    zero_mask: Var,
    pos_mask: Var,
}

fn targets(tape: &mut Tape, like: Var, y: &Tensor) -> Result<Targets> {
    if tape.shape(like) != y.shape() {
        return Err(Error::Contract(format!(
            "target shape {:?} does not match parameter shape {:?}",
            y.shape(),
            tape.shape(like)
        )));
    }
    if let Some(bad) = y.data().iter().find(|&&v| v < 0.0 || v.fract() != 0.0) {
        return Err(Error::Domain(format!(
            "targets must be non-negative integers, got {bad}"
        )));
    }
    let lg = y.map(|v| ln_gamma_unchecked(v + 1.0));
    let zero = y.map(|v| if v == 0.0 { 1.0 } else { 0.0 });
    let pos = y.map(|v| if v > 0.0 { 1.0 } else { 0.0 });
    Ok(Targets {
        y: tape.constant(y.clone()),
        ln_gamma_y1: tape.constant(lg),
        zero_mask: tape.constant(zero),
        pos_mask: tape.constant(pos),
    })
}

fn one_minus(tape: &mut Tape, x: Var) -> Result<Var> {
    let neg = tape.neg(x)?;
    tape.add_scalar(neg, 1.0)
}

/// `-mean(max(ll, floor))`.
fn floored_nll(tape: &mut Tape, ll: Var) -> Result<Var> {
    let floored = tape.clamp(ll, LOG_PROB_FLOOR, f64::INFINITY)?;
    let m = tape.mean(floored)?;
    tape.neg(m)
}

/// NB log-pmf terms `ln Γ(n+y) - ln Γ(y+1) - ln Γ(n) + n ln p` (without the
/// `y ln(1-p)` term) and `n ln p`.
fn nb_core(tape: &mut Tape, n: Var, p: Var, t: &Targets) -> Result<(Var, Var)> {
    let ny = tape.add(n, t.y)?;
    let lg_ny = tape.ln_gamma(ny)?;
    let lg_n = tape.ln_gamma(n)?;
    let log_p = tape.log(p)?;
    let n_log_p = tape.mul(n, log_p)?;
    let a = tape.sub(lg_ny, t.ln_gamma_y1)?;
    let b = tape.sub(a, lg_n)?;
    let core = tape.add(b, n_log_p)?;
    Ok((core, n_log_p))
}

/// Mean ZINB negative log-likelihood over all entries, zeros and positives
/// scored by their own branch.
pub fn zinb_nll(tape: &mut Tape, pi: Var, n: Var, p: Var, y: &Tensor, form: LikelihoodForm) -> Result<Var> {
    let t = targets(tape, pi, y)?;
    let log_pi = tape.log(pi)?;
    let keep = one_minus(tape, pi)?;
    let log_keep = tape.log(keep)?;
    let (core, n_log_p) = nb_core(tape, n, p, &t)?;

    let (ll_zero, ll_pos) = match form {
        LikelihoodForm::Exact => {
            let nb_zero = tape.add(log_keep, n_log_p)?;
            let ll_zero = tape.log_add_exp(log_pi, nb_zero)?;
            let q = one_minus(tape, p)?;
            let log_q = tape.log(q)?;
            let y_log_q = tape.mul(t.y, log_q)?;
            let nb = tape.add(core, y_log_q)?;
            (ll_zero, tape.add(log_keep, nb)?)
        }
        LikelihoodForm::PaperApprox => {
            let a = tape.add(log_pi, log_keep)?;
            let ll_zero = tape.add(a, n_log_p)?;
            let y_log_keep = tape.mul(t.y, log_keep)?;
            let b = tape.add(log_keep, core)?;
            (ll_zero, tape.add(b, y_log_keep)?)
        }
    };
    let z = tape.mul(t.zero_mask, ll_zero)?;
    let q = tape.mul(t.pos_mask, ll_pos)?;
    let ll = tape.add(z, q)?;
    floored_nll(tape, ll)
}

pub fn nb_nll(tape: &mut Tape, n: Var, p: Var, y: &Tensor) -> Result<Var> {
    let t = targets(tape, n, y)?;
    let (core, _) = nb_core(tape, n, p, &t)?;
    let q = one_minus(tape, p)?;
    let log_q = tape.log(q)?;
    let y_log_q = tape.mul(t.y, log_q)?;
    let ll = tape.add(core, y_log_q)?;
    floored_nll(tape, ll)
}

fn gaussian_ll(tape: &mut Tape, mu: Var, sigma: Var, y: Var) -> Result<Var> {
    let diff = tape.sub(y, mu)?;
    let z = tape.div(diff, sigma)?;
    let z2 = tape.mul(z, z)?;
    let half = tape.mul_scalar(z2, -0.5)?;
    let log_sigma = tape.log(sigma)?;
    let a = tape.sub(half, log_sigma)?;
    tape.add_scalar(a, -HALF_LN_TWO_PI)
}

pub fn gaussian_nll(tape: &mut Tape, mu: Var, sigma: Var, y: &Tensor) -> Result<Var> {
    let t = targets(tape, mu, y)?;
    let ll = gaussian_ll(tape, mu, sigma, t.y)?;
    floored_nll(tape, ll)
}

/// Normal likelihood renormalised by `1 - Φ(-μ/σ) = Φ(μ/σ)`.
pub fn truncnormal_nll(tape: &mut Tape, mu: Var, sigma: Var, y: &Tensor) -> Result<Var> {
    let t = targets(tape, mu, y)?;
    let ll = gaussian_ll(tape, mu, sigma, t.y)?;
    let ratio = tape.div(mu, sigma)?;
    let log_mass = tape.log_norm_cdf(ratio)?;
    let trunc = tape.sub(ll, log_mass)?;
    floored_nll(tape, trunc)
}

/// Dispatches on `head`; `params` are the post-link channels from [`link`].
pub fn head_nll(tape: &mut Tape, head: HeadKind, params: &[Var], y: &Tensor, form: LikelihoodForm) -> Result<Var> {
    if params.len() != head.param_count() {
        return Err(Error::Contract(format!(
            "{head} expects {} parameter channels, got {}",
            head.param_count(),
            params.len()
        )));
    }
    match head {
        HeadKind::Zinb => zinb_nll(tape, params[0], params[1], params[2], y, form),
        HeadKind::Nb => nb_nll(tape, params[0], params[1], y),
        HeadKind::Gaussian => gaussian_nll(tape, params[0], params[1], y),
        HeadKind::TruncNormal => truncnormal_nll(tape, params[0], params[1], y),
    }
}
