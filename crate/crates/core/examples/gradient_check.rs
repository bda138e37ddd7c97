//! Reverse-mode gradients of a small ZINB loss, checked against central
//! finite differences.

use odcast::heads::{head_nll, link, HeadKind, LikelihoodForm};
use odcast::{Tape, Tensor};

fn loss(z: &Tensor, y: &Tensor) -> odcast::Result<f64> {
    let mut tape = Tape::new();
    let zv = tape.constant(z.clone());
    let params = link(&mut tape, HeadKind::Zinb, zv, 2)?;
    let nll = head_nll(&mut tape, HeadKind::Zinb, &params, y, LikelihoodForm::Exact)?;
    Ok(tape.value(nll).data()[0])
}

fn main() -> odcast::Result<()> {
    // One batch, two O-D pairs, horizon 2: pre-activations for (π, n, p).
    let z = Tensor::new(
        vec![1, 2, 6],
        vec![0.3, -0.2, 1.1, 0.4, -0.5, 0.2, -1.0, 0.8, 0.1, 2.0, 0.6, -0.3],
    )?;
    let y = Tensor::new(vec![1, 2, 2], vec![0.0, 3.0, 1.0, 0.0])?;

    let mut tape = Tape::new();
    let zv = tape.leaf(z.clone());
    let params = link(&mut tape, HeadKind::Zinb, zv, 2)?;
    let nll = head_nll(&mut tape, HeadKind::Zinb, &params, &y, LikelihoodForm::Exact)?;
    let grads = tape.backward(nll)?;
    let analytic = grads.get(zv).expect("leaf gradient");

    println!("loss {:.6}", tape.value(nll).data()[0]);
    println!("{:>3} {:>14} {:>14} {:>10}", "i", "tape", "central diff", "rel err");
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..z.numel() {
        let mut up = z.clone();
        up.data_mut()[i] += h;
        let mut down = z.clone();
        down.data_mut()[i] -= h;
        let fd = (loss(&up, &y)? - loss(&down, &y)?) / (2.0 * h);
        let g = analytic.data()[i];
        let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-8);
        worst = worst.max(rel);
        println!("{i:>3} {g:>14.8} {fd:>14.8} {rel:>10.2e}");
    }
    println!("max relative error {worst:.2e}");
    Ok(())
}
