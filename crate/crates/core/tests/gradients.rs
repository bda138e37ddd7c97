mod common;

use common::*;
use odcast::heads::{HeadKind, LikelihoodForm};

#[test]
fn every_tape_op_matches_central_differences() {
    for (name, build, inputs) in op_cases() {
        let err = op_gradient_error(&*build, &inputs);
        assert!(err < 1e-5, "{name}: max relative error {err:e}");
    }
}

#[test]
fn head_nll_gradients_at_fifty_points() {
    for head in HeadKind::ALL {
        let err = head_gradient_error(head, LikelihoodForm::Exact, 50, 3);
        assert!(err < 1e-5, "{head}: max relative error {err:e}");
    }
    let err = head_gradient_error(HeadKind::Zinb, LikelihoodForm::PaperApprox, 50, 4);
    assert!(err < 1e-5, "approximate zinb: {err:e}");
}

#[test]
fn full_loss_gradient_for_every_weight() {
    for head in HeadKind::ALL {
        let err = end_to_end_gradient_error(head, LikelihoodForm::Exact, 7);
        assert!(err < 1e-4, "{head}: max relative error {err:e}");
    }
}

#[test]
fn full_loss_gradient_with_approximate_likelihood() {
    let err = end_to_end_gradient_error(HeadKind::Zinb, LikelihoodForm::PaperApprox, 8);
    assert!(err < 1e-4, "max relative error {err:e}");
}
