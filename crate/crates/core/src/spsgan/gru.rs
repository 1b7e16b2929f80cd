use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Parameters, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Gated recurrent unit over a sequence of per-frame inputs followed by a
/// linear head on the final hidden state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GruParams {
    pub name: String,
    /// Input weights for the update, reset and candidate gates, `[in, H]`.
    pub w: [Tensor; 3],
    /// Recurrent weights, `[H, H]`.
    pub u: [Tensor; 3],
    /// Gate biases, `[1, H]`.
    pub b: [Tensor; 3],
    /// `[H, 1]`
    pub head_w: Tensor,
    /// `[1, 1]`
    pub head_b: Tensor,
}

impl GruParams {
    pub fn init(name: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let mut uniform = |rows: usize, cols: usize| {
            let limit = 1.0 / (hidden as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
            Tensor::from_matrix(rows, cols, (0..rows * cols).map(|_| dist.sample(rng)).collect())
        };
        let w = [uniform(input, hidden), uniform(input, hidden), uniform(input, hidden)];
        let u = [uniform(hidden, hidden), uniform(hidden, hidden), uniform(hidden, hidden)];
        let head_w = uniform(hidden, 1);
        Self {
            name: name.to_string(),
            w,
            u,
            b: [Tensor::zeros(1, hidden), Tensor::zeros(1, hidden), Tensor::zeros(1, hidden)],
            head_w,
            head_b: Tensor::zeros(1, 1),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w[0].rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w[0].cols()
    }

    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> BoundGru<'t> {
        let leaf = |t: &Tensor| {
            if trainable {
                tape.param(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        BoundGru {
            w: [leaf(&self.w[0]), leaf(&self.w[1]), leaf(&self.w[2])],
            u: [leaf(&self.u[0]), leaf(&self.u[1]), leaf(&self.u[2])],
            b: [leaf(&self.b[0]), leaf(&self.b[1]), leaf(&self.b[2])],
            head_w: leaf(&self.head_w),
            head_b: leaf(&self.head_b),
            input: self.input_dim(),
            hidden: self.hidden_dim(),
        }
    }

    /// Logits for a batch of sequences.
    pub fn score(&self, frames: &[Tensor]) -> Result<Tensor> {
        let tape = Tape::new();
        let d = self.bind(&tape, false);
        let xs: Vec<Var> = frames.iter().map(|f| tape.constant(f.clone())).collect();
        let out = d.forward(&xs)?;
        tape.check()?;
        Ok(out.value())
    }
}

impl Parameters for GruParams {
    fn param_tensors(&self) -> Vec<&Tensor> {
        let mut v: Vec<&Tensor> = self.w.iter().chain(&self.u).chain(&self.b).collect();
        v.push(&self.head_w);
        v.push(&self.head_b);
        v
    }

    fn param_tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v: Vec<&mut Tensor> = self.w.iter_mut().chain(self.u.iter_mut()).chain(self.b.iter_mut()).collect();
        v.push(&mut self.head_w);
        v.push(&mut self.head_b);
        v
    }

    fn param_names(&self) -> Vec<String> {
        let mut v = Vec::new();
        for kind in ["w", "u", "b"] {
            for gate in ["update", "reset", "candidate"] {
                v.push(format!("{}.{kind}_{gate}", self.name));
            }
        }
        v.push(format!("{}.head_w", self.name));
        v.push(format!("{}.head_b", self.name));
        v
    }
}

pub struct BoundGru<'t> {
    w: [Var<'t>; 3],
    u: [Var<'t>; 3],
    b: [Var<'t>; 3],
    head_w: Var<'t>,
    head_b: Var<'t>,
    input: usize,
    hidden: usize,
}

impl<'t> BoundGru<'t> {
    /// `frames[t]` is `[B, in]`; returns logits `[B, 1]`.
    pub fn forward(&self, frames: &[Var<'t>]) -> Result<Var<'t>> {
        let first = frames
            .first()
            .ok_or_else(|| Error::shape("gru", "empty sequence"))?;
        let batch = first.dims().0;
        for f in frames {
            if f.dims() != (batch, self.input) {
                return Err(Error::shape(
                    "gru",
                    format!("frame {:?}, expected ({batch}, {})", f.dims(), self.input),
                ));
            }
        }
        let tape = first.tape();
        let mut h = tape.constant(Tensor::zeros(batch, self.hidden));
        for &x in frames {
            let z = x.matmul(self.w[0]).add(h.matmul(self.u[0])).add_row(self.b[0]).sigmoid();
            let r = x.matmul(self.w[1]).add(h.matmul(self.u[1])).add_row(self.b[1]).sigmoid();
            let n = x
                .matmul(self.w[2])
                .add(r.mul(h).matmul(self.u[2]))
                .add_row(self.b[2])
                .tanh();
            // h' = n + z (h - n)
            h = n.add(z.mul(h.sub(n)));
        }
        Ok(h.matmul(self.head_w).add_row(self.head_b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn frames(rng: &mut ChaCha8Rng, batch: usize, t: usize, d: usize) -> Vec<Tensor> {
        (0..t)
            .map(|_| Tensor::from_matrix(batch, d, (0..batch * d).map(|_| rng.random_range(-1.0..1.0)).collect()))
            .collect()
    }

    #[test]
    fn scores_commute_with_batch_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = GruParams::init("d", 4, 6, &mut rng);
        let xs = frames(&mut rng, 5, 7, 4);
        let perm = [3usize, 0, 4, 1, 2];
        let permuted: Vec<Tensor> = xs.iter().map(|x| x.select_rows(&perm)).collect();
        let a = d.score(&xs).unwrap();
        let b = d.score(&permuted).unwrap();
        for (i, &j) in perm.iter().enumerate() {
            assert_eq!(b.get(i, 0), a.get(j, 0));
        }
        assert!(a.is_finite());
    }

    #[test]
    fn single_step_matches_hand_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let d = GruParams::init("d", 2, 1, &mut rng);
        let x = [0.3, -0.7];
        let dot = |w: &Tensor| w.get(0, 0) * x[0] + w.get(1, 0) * x[1];
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        // h0 = 0, so the recurrent terms and the reset gate drop out
        let z = sig(dot(&d.w[0]));
        let n = dot(&d.w[2]).tanh();
        let h = (1.0 - z) * n;
        let expected = h * d.head_w.get(0, 0);
        let got = d.score(&[Tensor::row(&x)]).unwrap().item();
        assert!((got - expected).abs() < 1e-14);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = GruParams::init("d", 3, 4, &mut rng);
        let xs = frames(&mut rng, 2, 4, 3);
        let loss = |p: &GruParams| p.score(&xs).unwrap().sum();
        let tape = Tape::new();
        let bound = d.bind(&tape, true);
        let vars: Vec<Var> = xs.iter().map(|x| tape.constant(x.clone())).collect();
        let out = bound.forward(&vars).unwrap().sum();
        let grads = tape.param_grad(out).unwrap();
        let eps = 1e-6;
        for (k, grad) in grads.iter().enumerate() {
            let mut a = d.clone();
            let mut b = d.clone();
            a.param_tensors_mut()[k].data_mut()[0] += eps;
            b.param_tensors_mut()[k].data_mut()[0] -= eps;
            let fd = (loss(&a) - loss(&b)) / (2.0 * eps);
            let g = grad.data()[0];
            assert!((g - fd).abs() < 1e-6 * (1.0 + fd.abs()), "param {k}: {g} vs {fd}");
        }
    }

    #[test]
    fn rejects_bad_frames() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = GruParams::init("d", 3, 4, &mut rng);
        assert!(d.score(&[]).is_err());
        assert!(d.score(&[Tensor::zeros(2, 5)]).is_err());
    }
}
