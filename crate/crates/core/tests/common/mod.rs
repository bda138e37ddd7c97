//! Finite-difference drivers and independently coded oracles shared by the
//! integration suites and the acceptance run.
#![allow(dead_code)]

use std::collections::HashMap;

use odcast::encoders::GraphSupports;
use odcast::graph::{OdGraph, Zone};
use odcast::heads::{self, HeadKind, LikelihoodForm};
use odcast::model::{Forecaster, ModelConfig};
use odcast::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub type Rng8 = ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

pub fn counts(rng: &mut ChaCha8Rng, shape: &[usize], zero_prob: f64, max: u32) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            if rng.random::<f64>() < zero_prob {
                0.0
            } else {
                f64::from(rng.random_range(1..=max))
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

pub type Build = dyn Fn(&mut Tape, &[Var]) -> odcast::Result<Var>;

/// Reduces a tensor output to `Σ out ⊙ w` with fixed, uneven weights so the
/// upstream gradient is not uniform.
fn scalarise(tape: &mut Tape, out: Var) -> Var {
    let shape = tape.shape(out).to_vec();
    let w = Tensor::from_fn(&shape, |i| 0.5 + ((i * 7 + 3) % 11) as f64 / 11.0);
    let wv = tape.constant(w);
    let prod = tape.mul(out, wv).unwrap();
    tape.sum(prod).unwrap()
}

fn eval(build: &Build, inputs: &[Tensor]) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = build(&mut tape, &vars).unwrap();
    let s = scalarise(&mut tape, out);
    tape.value(s).item().unwrap()
}

/// Largest relative error between tape gradients and central differences
/// over every element of every input.
pub fn op_gradient_error(build: &Build, inputs: &[Tensor]) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = build(&mut tape, &vars).unwrap();
    let s = scalarise(&mut tape, out);
    let grads = tape.backward(s).unwrap();
    let mut worst: f64 = 0.0;
    let mut work = inputs.to_vec();
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads
            .get(*v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[i].shape()));
        for j in 0..inputs[i].numel() {
            let orig = inputs[i].data()[j];
            work[i].data_mut()[j] = orig + FD_STEP;
            let up = eval(build, &work);
            work[i].data_mut()[j] = orig - FD_STEP;
            let down = eval(build, &work);
            work[i].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic.data()[j], numeric));
        }
    }
    worst
}

/// Every differentiable tape operation with inputs placed away from kinks
/// and domain edges.
pub fn op_cases() -> Vec<(&'static str, Box<Build>, Vec<Tensor>)> {
    let mut r = rng(11);
    let a = uniform(&mut r, &[3, 4], -1.5, 1.5);
    let b = uniform(&mut r, &[3, 4], -1.5, 1.5);
    let pos = uniform(&mut r, &[3, 4], 0.3, 4.0);
    let s = Tensor::scalar(0.7);
    let away_from_zero = a.map(|x| if x.abs() < 0.1 { x + 0.3 } else { x });
    let m1 = uniform(&mut r, &[3, 5], -1.0, 1.0);
    let m2 = uniform(&mut r, &[5, 2], -1.0, 1.0);
    let mix = uniform(&mut r, &[4, 4], -1.0, 1.0);
    let h = uniform(&mut r, &[2, 4, 3], -1.0, 1.0);
    let bias = uniform(&mut r, &[3], -1.0, 1.0);
    let seq = uniform(&mut r, &[2, 3, 7], -1.0, 1.0);
    let kernel = uniform(&mut r, &[3], -1.0, 1.0);
    let kb = Tensor::scalar(0.2);
    let clampable = Tensor::from_fn(&[6], |i| [-2.0, -0.5, 0.1, 0.6, 1.4, 3.0][i]);
    vec![
        (
            "add",
            Box::new(|t: &mut Tape, v: &[Var]| t.add(v[0], v[1])),
            vec![a.clone(), b.clone()],
        ),
        (
            "sub",
            Box::new(|t: &mut Tape, v: &[Var]| t.sub(v[0], v[1])),
            vec![a.clone(), b.clone()],
        ),
        (
            "mul",
            Box::new(|t: &mut Tape, v: &[Var]| t.mul(v[0], v[1])),
            vec![a.clone(), b.clone()],
        ),
        (
            "div",
            Box::new(|t: &mut Tape, v: &[Var]| t.div(v[0], v[1])),
            vec![a.clone(), pos.clone()],
        ),
        (
            "mul_scalar_broadcast",
            Box::new(|t: &mut Tape, v: &[Var]| t.mul(v[0], v[1])),
            vec![a.clone(), s.clone()],
        ),
        (
            "div_scalar_broadcast",
            Box::new(|t: &mut Tape, v: &[Var]| t.div(v[1], v[0])),
            vec![pos.clone(), s.clone()],
        ),
        (
            "log_add_exp",
            Box::new(|t: &mut Tape, v: &[Var]| t.log_add_exp(v[0], v[1])),
            vec![a.clone(), b.clone()],
        ),
        (
            "add_scalar",
            Box::new(|t: &mut Tape, v: &[Var]| t.add_scalar(v[0], 1.3)),
            vec![a.clone()],
        ),
        (
            "mul_scalar",
            Box::new(|t: &mut Tape, v: &[Var]| t.mul_scalar(v[0], -2.1)),
            vec![a.clone()],
        ),
        ("neg", Box::new(|t: &mut Tape, v: &[Var]| t.neg(v[0])), vec![a.clone()]),
        (
            "clamp",
            Box::new(|t: &mut Tape, v: &[Var]| t.clamp(v[0], 0.0, 1.0)),
            vec![clampable],
        ),
        (
            "sigmoid",
            Box::new(|t: &mut Tape, v: &[Var]| t.sigmoid(v[0])),
            vec![a.clone()],
        ),
        (
            "softplus",
            Box::new(|t: &mut Tape, v: &[Var]| t.softplus(v[0])),
            vec![a.clone()],
        ),
        ("exp", Box::new(|t: &mut Tape, v: &[Var]| t.exp(v[0])), vec![a.clone()]),
        (
            "log",
            Box::new(|t: &mut Tape, v: &[Var]| t.log(v[0])),
            vec![pos.clone()],
        ),
        (
            "relu",
            Box::new(|t: &mut Tape, v: &[Var]| t.relu(v[0])),
            vec![away_from_zero],
        ),
        (
            "ln_gamma",
            Box::new(|t: &mut Tape, v: &[Var]| t.ln_gamma(v[0])),
            vec![pos.clone()],
        ),
        (
            "log_sigmoid",
            Box::new(|t: &mut Tape, v: &[Var]| t.log_sigmoid(v[0])),
            vec![a.map(|x| 4.0 * x)],
        ),
        (
            "log_norm_cdf",
            Box::new(|t: &mut Tape, v: &[Var]| t.log_norm_cdf(v[0])),
            vec![a.map(|x| 4.0 * x - 3.0)],
        ),
        (
            "matmul",
            Box::new(|t: &mut Tape, v: &[Var]| t.matmul(v[0], v[1])),
            vec![m1, m2],
        ),
        (
            "graph_mix",
            Box::new(|t: &mut Tape, v: &[Var]| t.graph_mix(v[0], v[1])),
            vec![mix, h.clone()],
        ),
        (
            "add_bias",
            Box::new(|t: &mut Tape, v: &[Var]| t.add_bias(v[0], v[1])),
            vec![h.clone(), bias],
        ),
        (
            "conv1d",
            Box::new(|t: &mut Tape, v: &[Var]| t.conv1d(v[0], v[1], v[2])),
            vec![seq.clone(), kernel, kb],
        ),
        (
            "reshape",
            Box::new(|t: &mut Tape, v: &[Var]| {
                let r = t.reshape(v[0], &[4, 3])?;
                let w = t.constant(Tensor::from_fn(&[4, 3], |i| i as f64));
                t.mul(r, w)
            }),
            vec![a.clone()],
        ),
        (
            "slice_last",
            Box::new(|t: &mut Tape, v: &[Var]| t.slice_last(v[0], 2, 3)),
            vec![seq],
        ),
        (
            "sum",
            Box::new(|t: &mut Tape, v: &[Var]| {
                let sq = t.mul(v[0], v[0])?;
                t.sum(sq)
            }),
            vec![a.clone()],
        ),
        (
            "mean",
            Box::new(|t: &mut Tape, v: &[Var]| {
                let e = t.exp(v[0])?;
                t.mean(e)
            }),
            vec![a],
        ),
    ]
}

/// Gradient errors of each head NLL with respect to its post-link
/// parameters at `points` random in-domain entries.
pub fn head_gradient_error(head: HeadKind, form: LikelihoodForm, points: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let y = counts(&mut r, &[points], 0.4, 12);
    let params: Vec<Tensor> = match head {
        HeadKind::Zinb => vec![
            uniform(&mut r, &[points], 0.05, 0.95),
            uniform(&mut r, &[points], 0.2, 20.0),
            uniform(&mut r, &[points], 0.05, 0.95),
        ],
        HeadKind::Nb => vec![
            uniform(&mut r, &[points], 0.2, 20.0),
            uniform(&mut r, &[points], 0.05, 0.95),
        ],
        HeadKind::Gaussian | HeadKind::TruncNormal => {
            vec![
                uniform(&mut r, &[points], -3.0, 8.0),
                uniform(&mut r, &[points], 0.3, 5.0),
            ]
        }
    };
    let build = move |t: &mut Tape, v: &[Var]| heads::head_nll(t, head, v, &y, form);
    op_gradient_error(&build, &params)
}

/// A `m × m` O-D graph over zones a few kilometres apart.
pub fn small_graph(m: usize) -> OdGraph {
    let zones: Vec<Zone> = (0..m)
        .map(|i| {
            Zone::new(
                format!("z{i}"),
                41.85 + 0.021 * i as f64,
                -87.65 + 0.017 * (i * i) as f64,
            )
            .unwrap()
        })
        .collect();
    OdGraph::new(zones.clone(), zones).unwrap()
}

/// Largest relative error over every encoder weight of the full training
/// loss on a 4-node graph with `t_window = 8`, `k = 2`.
pub fn end_to_end_gradient_error(head: HeadKind, form: LikelihoodForm, seed: u64) -> f64 {
    let graph = small_graph(2);
    let config = ModelConfig {
        head,
        t_window: 8,
        k_horizon: 2,
        paper_approx_ll: form == LikelihoodForm::PaperApprox,
        seed,
        ..ModelConfig::default()
    };
    let mut model = Forecaster::new(config).unwrap();
    // The default init zeroes the last DGCN layer and biases; redraw every
    // weight so each parameter has a generic gradient.
    let mut r = rng(seed + 100);
    for p in model.encoder_mut().params_mut() {
        for x in p.data_mut() {
            *x = r.random_range(-0.5..0.5);
        }
    }
    let supports = GraphSupports::new(&graph, 3).unwrap();
    let x = counts(&mut r, &[2, 4, 8], 0.5, 5);
    let y = counts(&mut r, &[2, 4, 2], 0.5, 5);
    let (_, grads) = model.loss_and_grad(&supports, &x, &y).unwrap();
    let mut worst: f64 = 0.0;
    for (pi, g) in grads.iter().enumerate() {
        for j in 0..g.numel() {
            let orig = model.encoder().params()[pi].data()[j];
            model.encoder_mut().params_mut()[pi].data_mut()[j] = orig + FD_STEP;
            let up = model.loss(&supports, &x, &y).unwrap();
            model.encoder_mut().params_mut()[pi].data_mut()[j] = orig - FD_STEP;
            let down = model.loss(&supports, &x, &y).unwrap();
            model.encoder_mut().params_mut()[pi].data_mut()[j] = orig;
            worst = worst.max(rel_err(g.data()[j], (up - down) / (2.0 * FD_STEP)));
        }
    }
    worst
}

// ---- distribution oracles -----------------------------------------------------

/// NB pmf by the ratio recurrence `f(y) = f(y-1) · (y-1+n)/y · (1-p)`.
pub fn nb_pmf_table(n: f64, p: f64, upto: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(upto + 1);
    let mut f = p.powf(n);
    out.push(f);
    for y in 1..=upto {
        f *= (y as f64 - 1.0 + n) / y as f64 * (1.0 - p);
        out.push(f);
    }
    out
}

pub fn zinb_pmf_table(pi: f64, n: f64, p: f64, upto: usize) -> Vec<f64> {
    let mut t: Vec<f64> = nb_pmf_table(n, p, upto).into_iter().map(|f| (1.0 - pi) * f).collect();
    t[0] += pi;
    t
}

/// Smallest y with cumulative mass >= q.
pub fn quantile_by_cumsum(table: &[f64], q: f64) -> usize {
    let mut acc = 0.0;
    for (y, f) in table.iter().enumerate() {
        acc += f;
        if acc >= q {
            return y;
        }
    }
    table.len() - 1
}

/// Composite Simpson rule.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, intervals: usize) -> f64 {
    let n = intervals + intervals % 2;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let x = a + i as f64 * h;
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
    }
    s * h / 3.0
}

// ---- graph oracles -----------------------------------------------------------

/// Great-circle distance via the atan2 form of the haversine formula.
pub fn haversine_oracle(lat1: f64, lng1: f64, lat2: f64, lng2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dp = p2 - p1;
    let dl = (lng2 - lng1).to_radians();
    let a = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * 6371.0 * a.sqrt().atan2((1.0 - a).sqrt())
}

/// Elementwise quadratic-mean inverse-distance adjacency.
pub fn adjacency_oracle(origins: &[Zone], destinations: &[Zone]) -> Vec<Vec<f64>> {
    let u = destinations.len();
    let n = origins.len() * u;
    let mut a = vec![vec![0.0; n]; n];
    for (i, row) in a.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            let (oi, di) = (&origins[i / u], &destinations[i % u]);
            let (oj, dj) = (&origins[j / u], &destinations[j % u]);
            let d_o = haversine_oracle(oi.lat, oi.lng, oj.lat, oj.lng).max(0.1);
            let d_d = haversine_oracle(di.lat, di.lng, dj.lat, dj.lng).max(0.1);
            *cell = ((d_o.powi(-2) + d_d.powi(-2)) / 2.0).sqrt();
        }
    }
    a
}

pub fn matmul_naive(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let m = b[0].len();
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            for (k, bk) in b.iter().enumerate() {
                out[i][j] += a[i][k] * bk[j];
            }
        }
    }
    out
}

pub fn to_rows(t: &Tensor) -> Vec<Vec<f64>> {
    let c = t.shape()[1];
    t.data().chunks(c).map(<[f64]>::to_vec).collect()
}

// ---- metric oracles ----------------------------------------------------------

pub fn mae_oracle(p: &[f64], t: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..p.len() {
        s += if p[i] > t[i] { p[i] - t[i] } else { t[i] - p[i] };
    }
    s / p.len() as f64
}

pub fn mpiw_oracle(l: &[f64], u: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..l.len() {
        s += u[i] - l[i];
    }
    s / l.len() as f64
}

pub fn kl_oracle(p: &[f64], t: &[f64]) -> f64 {
    let eps = 0.00001;
    let mut s = 0.0;
    for i in 0..p.len() {
        s += p[i] * ((p[i] + eps).ln() - (t[i] + eps).ln());
    }
    s / p.len() as f64
}

pub fn tzr_oracle(p: &[i64], t: &[i64]) -> Option<f64> {
    let idx: Vec<usize> = (0..t.len()).filter(|&i| t[i] == 0).collect();
    if idx.is_empty() {
        return None;
    }
    Some(idx.iter().filter(|&&i| p[i] == 0).count() as f64 / idx.len() as f64)
}

/// Support-weighted F1 from an explicit confusion matrix.
pub fn f1_oracle(p: &[i64], t: &[i64]) -> f64 {
    let mut confusion: HashMap<(i64, i64), usize> = HashMap::new();
    for i in 0..p.len() {
        *confusion.entry((t[i], p[i])).or_default() += 1;
    }
    let mut classes: Vec<i64> = t.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let mut total = 0.0;
    for &c in &classes {
        let tp = *confusion.get(&(c, c)).unwrap_or(&0) as f64;
        let col: usize = confusion.iter().filter(|((_, pp), _)| *pp == c).map(|(_, n)| n).sum();
        let row: usize = confusion.iter().filter(|((tt, _), _)| *tt == c).map(|(_, n)| n).sum();
        let prec = if col > 0 { tp / col as f64 } else { 0.0 };
        let rec = tp / row as f64;
        let f1 = if prec + rec > 0.0 {
            2.0 * prec * rec / (prec + rec)
        } else {
            0.0
        };
        total += f1 * row as f64;
    }
    total / t.len() as f64
}

/// Group-by-slot mean, with the node mean for unseen slots.
pub fn ha_oracle(series: &[f64], slots: &[usize], slot: usize) -> f64 {
    let vals: Vec<f64> = series
        .iter()
        .zip(slots)
        .filter(|(_, &s)| s == slot)
        .map(|(&v, _)| v)
        .collect();
    if vals.is_empty() {
        series.iter().sum::<f64>() / series.len() as f64
    } else {
        vals.iter().sum::<f64>() / vals.len() as f64
    }
}

// ---- command line -------------------------------------------------------------

/// Exit code, stdout and stderr of one `odcast` run inside `dir`.
pub fn run_cli(dir: &std::path::Path, args: &[&str]) -> (i32, String, String) {
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_odcast"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

/// A config small enough for CLI tests to finish in seconds.
pub const QUICK_CONFIG: &str = "head = zinb
t_window = 8
k_horizon = 2
dgcn_hidden = 8
max_epochs = 3
patience = 3
learning_rate = 0.01
";
