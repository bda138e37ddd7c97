mod common;

use common::*;
use odcast::encoders::{
    Activation, DgcnLayer, EncoderSpec, GraphSupports, Projection, SpatioTemporalEncoder, TcnLayer,
};
use odcast::graph::{chebyshev_sequence, OdGraph, Zone};
use odcast::{Error, Tape, Tensor, Var};

fn relu(x: f64) -> f64 {
    x.max(0.0)
}

/// Triple loop over k, neighbours and input features.
#[allow(clippy::too_many_arguments)]
fn dgcn_oracle(
    x: &Tensor,
    tf: &[Tensor],
    tb: &[Tensor],
    theta_f: &[Tensor],
    theta_b: &[Tensor],
    bias: &[f64],
    act: fn(f64) -> f64,
) -> Vec<f64> {
    let (b, v, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let out = bias.len();
    let mut y = vec![0.0; b * v * out];
    for bi in 0..b {
        for node in 0..v {
            for o in 0..out {
                let mut acc = bias[o];
                for k in 1..=theta_f.len() {
                    for u in 0..v {
                        for i in 0..w {
                            let xv = x.get(&[bi, u, i]);
                            acc += tf[k].get(&[node, u]) * xv * theta_f[k - 1].get(&[i, o]);
                            acc += tb[k].get(&[node, u]) * xv * theta_b[k - 1].get(&[i, o]);
                        }
                    }
                }
                y[(bi * v + node) * out + o] = act(acc);
            }
        }
    }
    y
}

fn run_layer(layer: &DgcnLayer, supports: &GraphSupports, x: &Tensor) -> Tensor {
    let mut tape = Tape::new();
    let sv = supports.register(&mut tape);
    let params: Vec<Var> = layer.params().into_iter().map(|t| tape.leaf(t.clone())).collect();
    let xv = tape.constant(x.clone());
    let y = layer.forward(&mut tape, &params, &sv, xv).unwrap();
    tape.value(y).clone()
}

fn run_encoder(enc: &SpatioTemporalEncoder, supports: &GraphSupports, x: &Tensor) -> (Tensor, Tensor) {
    let mut tape = Tape::new();
    let sv = supports.register(&mut tape);
    let params = enc.register(&mut tape);
    let xv = tape.constant(x.clone());
    let (s, t) = enc.forward(&mut tape, &params, &sv, xv).unwrap();
    (tape.value(s).clone(), tape.value(t).clone())
}

fn directed_transitions(r: &mut common::Rng8, v: usize) -> (Tensor, Tensor) {
    let a = uniform(r, &[v, v], 0.1, 2.0);
    let (wf, wb, _) = odcast::graph::transition_matrices(&a).unwrap();
    (wf, wb)
}

#[test]
fn dgcn_matches_brute_force_on_three_nodes() {
    let mut r = rng(1);
    let (wf, wb) = directed_transitions(&mut r, 3);
    let k = 2;
    let tf = chebyshev_sequence(&wf, k).unwrap();
    let tb = chebyshev_sequence(&wb, k).unwrap();
    let supports = GraphSupports::from_transitions(&wf, &wb, k).unwrap();
    // Both orderings: out < in projects first, out >= in diffuses first.
    for (w, out, act, f) in [
        (5, 2, Activation::Relu, relu as fn(f64) -> f64),
        (2, 4, Activation::Linear, (|x| x) as fn(f64) -> f64),
        (3, 3, Activation::Relu, relu as fn(f64) -> f64),
    ] {
        let theta_f: Vec<Tensor> = (0..k).map(|_| uniform(&mut r, &[w, out], -1.0, 1.0)).collect();
        let theta_b: Vec<Tensor> = (0..k).map(|_| uniform(&mut r, &[w, out], -1.0, 1.0)).collect();
        let bias = uniform(&mut r, &[out], -0.5, 0.5);
        let layer = DgcnLayer::from_weights(theta_f.clone(), theta_b.clone(), bias.clone(), act).unwrap();
        let x = uniform(&mut r, &[2, 3, w], -2.0, 2.0);
        let got = run_layer(&layer, &supports, &x);
        assert_eq!(got.shape(), &[2, 3, out]);
        let oracle = dgcn_oracle(&x, &tf, &tb, &theta_f, &theta_b, bias.data(), f);
        for (a, b) in got.data().iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }
}

#[test]
fn dgcn_commutes_with_node_swap_on_symmetric_graph() {
    let zones = vec![
        Zone::new("a", 41.0, -87.0).unwrap(),
        Zone::new("b", 41.02, -87.01).unwrap(),
    ];
    // Origins {a}, destinations {a, b}: the two nodes are interchangeable.
    let g = OdGraph::new(zones[..1].to_vec(), zones.clone()).unwrap();
    let supports = GraphSupports::new(&g, 2).unwrap();
    let mut r = rng(2);
    let layer = DgcnLayer::init(&mut r, 2, 4, 3, Activation::Relu);
    let x = uniform(&mut r, &[1, 2, 4], -1.0, 1.0);
    let mut swapped = x.clone();
    for i in 0..4 {
        swapped.set(&[0, 0, i], x.get(&[0, 1, i]));
        swapped.set(&[0, 1, i], x.get(&[0, 0, i]));
    }
    let y = run_layer(&layer, &supports, &x);
    let ys = run_layer(&layer, &supports, &swapped);
    for o in 0..3 {
        assert!((y.get(&[0, 0, o]) - ys.get(&[0, 1, o])).abs() < 1e-14);
        assert!((y.get(&[0, 1, o]) - ys.get(&[0, 0, o])).abs() < 1e-14);
    }
}

#[test]
fn single_node_graph_reduces_to_dense_layer() {
    let g = OdGraph::new(
        vec![Zone::new("a", 0.0, 0.0).unwrap()],
        vec![Zone::new("a", 0.0, 0.0).unwrap()],
    )
    .unwrap();
    let supports = GraphSupports::new(&g, 3).unwrap();
    let mut r = rng(3);
    let layer = DgcnLayer::init(&mut r, 3, 6, 4, Activation::Relu);
    let x = uniform(&mut r, &[3, 1, 6], -1.0, 1.0);
    let got = run_layer(&layer, &supports, &x);
    let p = layer.params();
    for b in 0..3 {
        for o in 0..4 {
            let mut acc = 0.0;
            for k in 0..3 {
                for i in 0..6 {
                    acc += x.get(&[b, 0, i]) * (p[k].get(&[i, o]) + p[3 + k].get(&[i, o]));
                }
            }
            assert!((got.get(&[b, 0, o]) - relu(acc)).abs() < 1e-12);
        }
    }
}

#[test]
fn tcn_matches_sliding_window() {
    let mut r = rng(4);
    for kw in [1, 2, 3, 5] {
        let kernel = uniform(&mut r, &[kw], -1.0, 1.0).into_data();
        let layer = TcnLayer::from_weights(kernel.clone(), 0.3, Activation::Linear).unwrap();
        let x = uniform(&mut r, &[2, 3, 7], -2.0, 2.0);
        let mut tape = Tape::new();
        let params: Vec<Var> = layer.params().into_iter().map(|t| tape.leaf(t.clone())).collect();
        let xv = tape.constant(x.clone());
        let y = layer.forward(&mut tape, &params, xv).unwrap();
        let y = tape.value(y);
        assert_eq!(y.shape(), &[2, 3, 8 - kw]);
        assert_eq!(layer.out_width(7), Some(8 - kw));
        for b in 0..2 {
            for v in 0..3 {
                for j in 0..8 - kw {
                    let oracle: f64 = 0.3 + (0..kw).map(|s| kernel[s] * x.get(&[b, v, j + s])).sum::<f64>();
                    assert!((y.get(&[b, v, j]) - oracle).abs() < 1e-13);
                }
            }
        }
    }
    let ones = TcnLayer::from_weights(vec![1.0, 1.0], 1.0, Activation::Linear).unwrap();
    let mut tape = Tape::new();
    let params: Vec<Var> = ones.params().into_iter().map(|t| tape.leaf(t.clone())).collect();
    let xv = tape.constant(Tensor::ones(&[1, 1, 4]));
    let y = ones.forward(&mut tape, &params, xv).unwrap();
    assert_eq!(tape.value(y).data(), &[3.0, 3.0, 3.0]);
}

#[test]
fn tcn_kernel_wider_than_input_is_rejected() {
    let layer = TcnLayer::from_weights(vec![1.0; 5], 0.0, Activation::Linear).unwrap();
    assert_eq!(layer.out_width(4), None);
    let mut tape = Tape::new();
    let params: Vec<Var> = layer.params().into_iter().map(|t| tape.leaf(t.clone())).collect();
    let xv = tape.constant(Tensor::ones(&[1, 1, 4]));
    assert!(matches!(
        layer.forward(&mut tape, &params, xv),
        Err(Error::Dimension(_))
    ));

    let dgcn = vec![DgcnLayer::init(&mut rng(0), 1, 4, 2, Activation::Linear)];
    let proj = Projection::init(&mut rng(0), 1, 2);
    assert!(matches!(
        SpatioTemporalEncoder::from_layers(4, dgcn, vec![layer], proj),
        Err(Error::Config(_))
    ));
}

#[test]
fn identity_layers_pass_input_through_both_branches() {
    let t = 5;
    let half = Tensor::eye(t).map(|x| 0.5 * x);
    let dgcn =
        DgcnLayer::from_weights(vec![half.clone()], vec![half], Tensor::zeros(&[t]), Activation::Linear).unwrap();
    let tcn = TcnLayer::from_weights(vec![1.0], 0.0, Activation::Linear).unwrap();
    let proj = Projection::from_weights(Tensor::eye(t), Tensor::zeros(&[t])).unwrap();
    let enc = SpatioTemporalEncoder::from_layers(t, vec![dgcn], vec![tcn], proj).unwrap();
    let supports = GraphSupports::from_transitions(&Tensor::eye(3), &Tensor::eye(3), 1).unwrap();
    let x = uniform(&mut rng(5), &[2, 3, t], -3.0, 3.0);
    let (hs, ht) = run_encoder(&enc, &supports, &x);
    assert_eq!(hs, x);
    assert_eq!(ht, x);
}

#[test]
fn encoder_widths_and_determinism() {
    let g = small_graph(3);
    let supports = GraphSupports::new(&g, 3).unwrap();
    let spec = EncoderSpec {
        t_window: 8,
        out_width: 6,
        diffusion_steps: 3,
        dgcn_hidden: vec![16, 8],
        tcn_kernels: EncoderSpec::default_kernels(8),
    };
    let enc = SpatioTemporalEncoder::init(&mut rng(6), &spec).unwrap();
    assert_eq!(enc, SpatioTemporalEncoder::init(&mut rng(6), &spec).unwrap());
    // Widths strictly shrink through the temporal stack.
    let mut w = 8;
    for layer in enc.tcn_layers() {
        let next = layer.out_width(w).unwrap();
        assert!(next < w || layer.kernel_width() == 1);
        w = next;
    }
    let x = uniform(&mut rng(7), &[4, 9, 8], 0.0, 5.0);
    let (a, b) = run_encoder(&enc, &supports, &x);
    let (c, d) = run_encoder(&enc, &supports, &x);
    assert_eq!(a.shape(), &[4, 9, 6]);
    assert_eq!(b.shape(), &[4, 9, 6]);
    assert_eq!(a, c);
    assert_eq!(b, d);
    assert!(a.is_finite() && b.is_finite());
}

#[test]
fn mismatched_layer_widths_fail_at_build_time() {
    let mut r = rng(8);
    let dgcn = vec![
        DgcnLayer::init(&mut r, 2, 8, 4, Activation::Relu),
        DgcnLayer::init(&mut r, 2, 5, 3, Activation::Linear),
    ];
    let tcn = vec![TcnLayer::init(&mut r, 3, Activation::Linear)];
    let proj = Projection::init(&mut r, 6, 3);
    assert!(matches!(
        SpatioTemporalEncoder::from_layers(8, dgcn, tcn, proj),
        Err(Error::Config(_))
    ));
    let dgcn = vec![DgcnLayer::init(&mut r, 2, 8, 4, Activation::Linear)];
    let tcn = vec![TcnLayer::init(&mut r, 3, Activation::Linear)];
    let proj = Projection::init(&mut r, 6, 3);
    assert!(matches!(
        SpatioTemporalEncoder::from_layers(8, dgcn, tcn, proj),
        Err(Error::Config(_))
    ));
}
