// Gradients, Hessian-vector products and a parameter update on the tape.

use sympgan::autodiff::{AdamConfig, AdamState, Tape, Tensor};

pub fn run() -> sympgan::Result<()> {
    let tape = Tape::new();
    let x = tape.var(Tensor::row(&[0.3, -1.2, 0.8]));
    let w = tape.param(Tensor::from_rows(&[vec![0.5], vec![-0.4], vec![1.1]]));
    let f = x.matmul(w).tanh().square().sum();
    let g = tape.grad(f, &[x])?[0];
    println!("f = {:.6}", f.item());
    println!("df/dx = {:?}", g.value().data());

    let v = tape.constant(Tensor::row(&[1.0, 0.0, 0.0]));
    let hv = tape.grad(g.mul(v).sum(), &[x])?[0];
    println!("H v = {:?}", hv.value().data());

    let grads = tape.param_grad(f)?;
    let mut weights = w.value();
    let mut adam = AdamState::new(AdamConfig::with_lr(1e-2));
    adam.step(vec![&mut weights], &grads, &["w".to_string()])?;
    println!("w after one Adam step = {:?}", weights.data());
    Ok(())
}

#[allow(dead_code)]
fn main() -> sympgan::Result<()> {
    run()
}
