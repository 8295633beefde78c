//! Reverse-mode gradients checked against central finite differences.

use stif::autodiff::{Axis, Tape, Tensor};

/// `sum(softmax_rows(x W) * target)` as a function of `W`.
fn forward(tape: &mut Tape, x: &Tensor, w: &Tensor, target: &Tensor) -> stif::Result<(f64, Option<Tensor>)> {
    let xv = tape.constant(x.clone());
    let wv = tape.param(w.clone());
    let h = tape.matmul(xv, wv)?;
    let p = tape.softmax(h, Axis::Cols, None)?;
    let t = tape.constant(target.clone());
    let m = tape.mul(p, t)?;
    let s = tape.sum(m)?;
    tape.backward(s)?;
    Ok((tape.value(s).item(), tape.grad(wv)))
}

fn main() -> stif::Result<()> {
    let x = Tensor::matrix(3, 4, (0..12).map(|i| (i as f64 * 0.37).sin()).collect())?;
    let w = Tensor::matrix(4, 5, (0..20).map(|i| (i as f64 * 0.11).cos() * 0.5).collect())?;
    let target = Tensor::matrix(3, 5, (0..15).map(|i| ((i * 7) % 5) as f64).collect())?;

    let (_, grad) = forward(&mut Tape::new(), &x, &w, &target)?;
    let grad = grad.expect("W requires a gradient");

    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    for k in 0..w.len() {
        let mut plus = w.clone();
        let mut minus = w.clone();
        plus.data_mut()[k] += eps;
        minus.data_mut()[k] -= eps;
        let fd = (forward(&mut Tape::new(), &x, &plus, &target)?.0 - forward(&mut Tape::new(), &x, &minus, &target)?.0) / (2.0 * eps);
        let an = grad.data()[k];
        let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    println!("{} weights, worst relative error {worst:.2e}", w.len());
    Ok(())
}
