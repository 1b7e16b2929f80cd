//! Hamiltonian neural networks: a learned scalar energy whose input
//! gradients define the dynamics, the supervised derivative-matching
//! baseline, and differentiable leapfrog rollouts shared with the GAN.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{
    checkpoint, Activation, AdamConfig, AdamState, BoundMlp, Layer, MlpParams, Parameters, Tape, Tensor, Var,
};
use crate::dataset::{Dataset, Minibatches};
use crate::error::{Error, Result};
use crate::integrators::{generalized_leapfrog_step, IntegratorConfig};
use crate::systems::{analytic_vector_field, PhaseState, SystemKind};

pub const HNN_FORMAT: &str = "hnn";

/// Scalar `H(q, p, condition)` as an MLP over `[q, p, condition]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HnnModel {
    pub mlp: MlpParams,
    pub dof: usize,
    pub cond_dim: usize,
}

impl HnnModel {
    pub fn new(
        name: &str,
        dof: usize,
        cond_dim: usize,
        hidden: &[usize],
        activation: Activation,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut sizes = vec![2 * dof + cond_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        Self {
            mlp: MlpParams::init(name, &sizes, activation, Activation::Identity, rng),
            dof,
            cond_dim,
        }
    }

    pub fn from_mlp(mlp: MlpParams, dof: usize, cond_dim: usize) -> Result<Self> {
        mlp.validate()?;
        if mlp.input_dim() != 2 * dof + cond_dim || mlp.output_dim() != 1 {
            return Err(Error::shape(
                "HnnModel",
                format!(
                    "network maps {} -> {}, expected {} -> 1",
                    mlp.input_dim(),
                    mlp.output_dim(),
                    2 * dof + cond_dim
                ),
            ));
        }
        Ok(Self { mlp, dof, cond_dim })
    }

    fn check(&self, state: &PhaseState, cond: &[f64]) -> Result<()> {
        if state.dim() != self.dof || cond.len() != self.cond_dim {
            return Err(Error::shape(
                "hnn",
                format!(
                    "state dim {} / condition {} vs model {} / {}",
                    state.dim(),
                    cond.len(),
                    self.dof,
                    self.cond_dim
                ),
            ));
        }
        Ok(())
    }

    /// Learned energy at one state.
    pub fn energy(&self, state: &PhaseState, cond: &[f64]) -> Result<f64> {
        self.check(state, cond)?;
        let mut x = state.to_flat();
        x.extend_from_slice(cond);
        Ok(self.mlp.forward(&Tensor::row(&x))?.item())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, HNN_FORMAT, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        checkpoint::load(path, HNN_FORMAT)
    }
}

/// `H` for a batch: `q`, `p` are `[B, d]`, `cond` is `[B, c]`; returns `[B, 1]`.
pub fn hamiltonian_var<'t>(net: &BoundMlp<'t>, q: Var<'t>, p: Var<'t>, cond: Option<Var<'t>>) -> Result<Var<'t>> {
    let x = match cond {
        Some(c) if c.dims().1 > 0 => Var::concat_cols(&[q, p, c]),
        _ => Var::concat_cols(&[q, p]),
    };
    net.forward(x)
}

/// `(dH/dq, dH/dp)` for a batch, recorded on the tape so it can be
/// differentiated again.
pub fn energy_gradient<'t>(
    net: &BoundMlp<'t>,
    q: Var<'t>,
    p: Var<'t>,
    cond: Option<Var<'t>>,
) -> Result<(Var<'t>, Var<'t>)> {
    let tape = q.tape();
    // Fresh nodes make these partial derivatives even when p was computed
    // from q.
    let leaf = |v: Var<'t>| if v.requires_grad() { v.offset(0.0) } else { tape.var(v.value()) };
    let (q, p) = (leaf(q), leaf(p));
    let h = hamiltonian_var(net, q, p, cond)?.sum();
    let g = tape.grad(h, &[q, p])?;
    Ok((g[0], g[1]))
}

/// `(dq/dt, dp/dt) = (dH/dp, -dH/dq)` at one state.
pub fn hnn_vector_field(model: &HnnModel, state: &PhaseState, cond: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let (dq, dp) = plain_gradient(model, &state.q, &state.p, cond)?;
    Ok((dp, dq.into_iter().map(|v| -v).collect()))
}

/// `(dH/dq, dH/dp)` on a scratch tape.
fn plain_gradient(model: &HnnModel, q: &[f64], p: &[f64], cond: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    model.check(&PhaseState::new(q.to_vec(), p.to_vec()), cond)?;
    let tape = Tape::new();
    let net = model.mlp.bind(&tape, false);
    let qv = tape.var(Tensor::row(q));
    let pv = tape.var(Tensor::row(p));
    let c = tape.constant(Tensor::row(cond));
    let h = hamiltonian_var(&net, qv, pv, Some(c))?;
    let g = tape.gradients(h, &[qv, pv])?;
    Ok((g[0].data().to_vec(), g[1].data().to_vec()))
}

/// Supervised training pairs: states with the true time derivatives.
#[derive(Clone, Debug)]
pub struct HnnSamples {
    pub q: Tensor,
    pub p: Tensor,
    pub qdot: Tensor,
    pub pdot: Tensor,
    pub cond: Tensor,
    /// States `unroll` frames later, for multi-step training.
    pub q_next: Option<Tensor>,
    pub p_next: Option<Tensor>,
    pub unroll: usize,
}

impl HnnSamples {
    /// Every frame of every `kind` record, with targets from the analytic
    /// vector field. With `multi_system` the dataset condition vector is
    /// appended; otherwise the condition is empty.
    pub fn from_dataset(ds: &Dataset, kind: SystemKind, multi_system: bool, unroll: usize) -> Result<Self> {
        let mut rows: [Vec<Vec<f64>>; 7] = Default::default();
        for r in ds.records_of(kind) {
            let cond = if multi_system { ds.condition(r) } else { Vec::new() };
            let last = r.states.len().saturating_sub(unroll);
            for (t, s) in r.states.iter().enumerate().take(last) {
                let (qd, pd) = analytic_vector_field(kind, &r.params, s)?;
                rows[0].push(s.q.clone());
                rows[1].push(s.p.clone());
                rows[2].push(qd);
                rows[3].push(pd);
                rows[4].push(cond.clone());
                if unroll > 0 {
                    rows[5].push(r.states[t + unroll].q.clone());
                    rows[6].push(r.states[t + unroll].p.clone());
                }
            }
        }
        if rows[0].is_empty() {
            return Err(Error::Config(format!("dataset has no {kind} records")));
        }
        let cond_dim = rows[4][0].len();
        let n = rows[0].len();
        let t = |v: &Vec<Vec<f64>>| Tensor::from_rows(v);
        Ok(Self {
            q: t(&rows[0]),
            p: t(&rows[1]),
            qdot: t(&rows[2]),
            pdot: t(&rows[3]),
            cond: if cond_dim == 0 { Tensor::zeros(n, 0) } else { t(&rows[4]) },
            q_next: (unroll > 0).then(|| t(&rows[5])),
            p_next: (unroll > 0).then(|| t(&rows[6])),
            unroll,
        })
    }

    pub fn len(&self) -> usize {
        self.q.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dof(&self) -> usize {
        self.q.cols()
    }

    pub fn cond_dim(&self) -> usize {
        self.cond.cols()
    }

    fn rows(&self, idx: &[usize]) -> Self {
        let sel = |t: &Tensor| t.select_rows(idx);
        Self {
            q: sel(&self.q),
            p: sel(&self.p),
            qdot: sel(&self.qdot),
            pdot: sel(&self.pdot),
            cond: if self.cond.cols() == 0 { Tensor::zeros(idx.len(), 0) } else { sel(&self.cond) },
            q_next: self.q_next.as_ref().map(sel),
            p_next: self.p_next.as_ref().map(sel),
            unroll: self.unroll,
        }
    }
}

/// Mean over the batch of `|dH/dp - qdot| + |dH/dq + pdot|`.
pub fn hnn_loss_var<'t>(net: &BoundMlp<'t>, tape: &'t Tape, batch: &HnnSamples) -> Result<Var<'t>> {
    let q = tape.var(batch.q.clone());
    let p = tape.var(batch.p.clone());
    let c = tape.constant(batch.cond.clone());
    let (dq, dp) = energy_gradient(net, q, p, Some(c))?;
    let rq = dp.sub(tape.constant(batch.qdot.clone())).row_norms();
    let rp = dq.add(tape.constant(batch.pdot.clone())).row_norms();
    Ok(rq.add(rp).mean())
}

/// Multi-step objective: mean squared phase-space error after `unroll`
/// leapfrog frames.
fn unroll_loss_var<'t>(net: &BoundMlp<'t>, tape: &'t Tape, batch: &HnnSamples, cfg: &IntegratorConfig) -> Result<Var<'t>> {
    let q0 = tape.var(batch.q.clone());
    let p0 = tape.var(batch.p.clone());
    let c = tape.constant(batch.cond.clone());
    let roll = rollout_var(net, q0, p0, Some(c), &IntegratorConfig { frames: batch.unroll + 1, ..*cfg })?;
    let (qn, pn) = (roll.q[batch.unroll], roll.p[batch.unroll]);
    let tq = tape.constant(batch.q_next.clone().expect("multi-step targets"));
    let tp = tape.constant(batch.p_next.clone().expect("multi-step targets"));
    Ok(qn.sub(tq).square().mean().add(pn.sub(tp).square().mean()))
}

pub fn hnn_loss(model: &HnnModel, samples: &HnnSamples) -> Result<f64> {
    let tape = Tape::new();
    let net = model.mlp.bind(&tape, false);
    let loss = hnn_loss_var(&net, &tape, samples)?;
    tape.check()?;
    Ok(loss.item())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HnnConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub steps: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// 0 for single-step derivative matching, otherwise leapfrog frames
    /// unrolled per sample.
    pub unroll: usize,
    pub integrator: IntegratorConfig,
    pub checkpoint_every: usize,
}

impl Default for HnnConfig {
    fn default() -> Self {
        Self {
            hidden: vec![100, 100],
            activation: Activation::Tanh,
            steps: 2000,
            batch_size: 128,
            adam: AdamConfig::with_lr(1e-3),
            seed: 0,
            unroll: 0,
            integrator: IntegratorConfig::default(),
            checkpoint_every: 500,
        }
    }
}

#[derive(Clone, Debug)]
pub struct HnnTraining {
    pub model: HnnModel,
    /// `(step, loss)` per update.
    pub history: Vec<(usize, f64)>,
}

/// Adam training. A non-finite loss or gradient aborts the run; the last
/// finite model is written to `checkpoint` (when given) before returning the
/// error.
pub fn train_hnn(samples: &HnnSamples, config: &HnnConfig, checkpoint: Option<&Path>) -> Result<HnnTraining> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = HnnModel::new(
        "hnn",
        samples.dof(),
        samples.cond_dim(),
        &config.hidden,
        config.activation,
        &mut rng,
    );
    let mut history = Vec::with_capacity(config.steps);
    if config.steps == 0 {
        return Ok(HnnTraining { model, history });
    }
    let batch_size = config.batch_size.min(samples.len());
    let mut batches = Minibatches::new(samples.len(), batch_size, config.seed.wrapping_add(1))?;
    let mut adam = AdamState::new(config.adam);
    let names = model.mlp.param_names();
    for step in 0..config.steps {
        let batch = samples.rows(&batches.next().expect("endless batches"));
        let tape = Tape::new();
        let net = model.mlp.bind(&tape, true);
        let outcome = (|| {
            let loss = if config.unroll > 0 {
                unroll_loss_var(&net, &tape, &batch, &config.integrator)?
            } else {
                hnn_loss_var(&net, &tape, &batch)?
            };
            let grads = tape.param_grad(loss)?;
            Ok::<_, Error>((loss.item(), grads))
        })();
        let step_result = outcome.and_then(|(loss, grads)| {
            adam.step(model.mlp.param_tensors_mut(), &grads, &names)?;
            Ok(loss)
        });
        match step_result {
            Ok(loss) => history.push((step, loss)),
            Err(e) if e.is_numerical() => {
                if let Some(path) = checkpoint {
                    model.save(path)?;
                }
                return Err(Error::Diverged {
                    step,
                    reason: e.to_string(),
                });
            }
            Err(e) => return Err(e),
        }
        if let Some(path) = checkpoint {
            if config.checkpoint_every > 0 && (step + 1) % config.checkpoint_every == 0 {
                model.save(path)?;
            }
        }
        if step % 200 == 0 {
            log::info!("hnn step {step}: loss {:.4e}", history.last().map_or(f64::NAN, |h| h.1));
        }
    }
    if let Some(path) = checkpoint {
        model.save(path)?;
    }
    Ok(HnnTraining { model, history })
}

/// Differentiable rollout: states at every frame and `dH/dq` at each of them.
pub struct LatentRollout<'t> {
    pub q: Vec<Var<'t>>,
    pub p: Vec<Var<'t>>,
    pub dhdq: Vec<Var<'t>>,
}

/// Integrates `(q0, p0)` for `config.frames` frames with the generalized
/// leapfrog on the learned energy, `config.substeps` steps per frame.
pub fn rollout_var<'t>(
    net: &BoundMlp<'t>,
    q0: Var<'t>,
    p0: Var<'t>,
    cond: Option<Var<'t>>,
    config: &IntegratorConfig,
) -> Result<LatentRollout<'t>> {
    config.validate()?;
    let h = config.dt / config.substeps as f64;
    let grad = |q: &Var<'t>, p: &Var<'t>| energy_gradient(net, *q, *p, cond);
    let mut out = LatentRollout {
        q: vec![q0],
        p: vec![p0],
        dhdq: Vec::with_capacity(config.frames),
    };
    let (mut q, mut p) = (q0, p0);
    for _ in 1..config.frames {
        for s in 0..config.substeps {
            let (qn, pn, dq0) = generalized_leapfrog_step(grad, &q, &p, h)?;
            if s == 0 {
                out.dhdq.push(dq0);
            }
            q = qn;
            p = pn;
        }
        out.q.push(q);
        out.p.push(p);
    }
    out.dhdq.push(grad(&q, &p)?.0);
    Ok(out)
}

/// Plain rollout result. A non-finite state ends the rollout early.
#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    pub states: Vec<PhaseState>,
    pub nan_at: Option<usize>,
}

pub fn rollout(model: &HnnModel, state0: &PhaseState, cond: &[f64], config: &IntegratorConfig) -> Result<Rollout> {
    config.validate()?;
    model.check(state0, cond)?;
    let h = config.dt / config.substeps as f64;
    let grad = |q: &Vec<f64>, p: &Vec<f64>| plain_gradient(model, q, p, cond);
    let mut states = vec![state0.clone()];
    let (mut q, mut p) = (state0.q.clone(), state0.p.clone());
    for frame in 1..config.frames {
        for _ in 0..config.substeps {
            let (qn, pn, _) = generalized_leapfrog_step(grad, &q, &p, h)?;
            q = qn;
            p = pn;
        }
        let s = PhaseState::new(q.clone(), p.clone());
        if !s.is_finite() {
            return Ok(Rollout {
                states,
                nan_at: Some(frame),
            });
        }
        states.push(s);
    }
    Ok(Rollout { states, nan_at: None })
}

/// Exact network for `H = sum_i (a_i q_i^2 + b_i p_i^2) / 2`, independent of
/// the condition.
pub fn quadratic_hnn(a: &[f64], b: &[f64], cond_dim: usize) -> HnnModel {
    let d = a.len();
    assert_eq!(b.len(), d, "a and b must have equal length");
    let n = 2 * d;
    let mut w = Tensor::zeros(n + cond_dim, n);
    for i in 0..n {
        w.set(i, i, 1.0);
    }
    let readout: Vec<f64> = a.iter().chain(b).map(|v| 0.5 * v).collect();
    let layers = vec![
        Layer {
            weight: w,
            bias: Tensor::zeros(1, n),
            activation: Activation::Square,
        },
        Layer {
            weight: Tensor::column(&readout),
            bias: Tensor::zeros(1, 1),
            activation: Activation::Identity,
        },
    ];
    HnnModel::from_mlp(MlpParams::from_layers("hnn", layers).expect("consistent layers"), d, cond_dim)
        .expect("consistent dims")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{default_spec, Dataset};
    use crate::integrators::simulate;
    use crate::systems::SystemParams;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn free_particle_field() {
        let m = quadratic_hnn(&[0.0], &[1.0], 0);
        let (qd, pd) = hnn_vector_field(&m, &PhaseState::new(vec![0.3], vec![-1.7]), &[]).unwrap();
        assert_eq!(qd, vec![-1.7]);
        assert_eq!(pd, vec![-0.0]);
    }

    #[test]
    fn field_matches_finite_differences() {
        let m = HnnModel::new("h", 2, 3, &[16, 16], Activation::Tanh, &mut rng(2));
        let s = PhaseState::new(vec![0.3, -0.2], vec![0.5, 0.1]);
        let c = [0.2, 0.0, 1.0];
        let (qd, pd) = hnn_vector_field(&m, &s, &c).unwrap();
        let eps = 1e-6;
        let e = |s: &PhaseState| m.energy(s, &c).unwrap();
        for i in 0..2 {
            let mut a = s.clone();
            let mut b = s.clone();
            a.p[i] += eps;
            b.p[i] -= eps;
            let fd = (e(&a) - e(&b)) / (2.0 * eps);
            assert!((fd - qd[i]).abs() / fd.abs().max(1e-3) < 1e-5);
            let mut a = s.clone();
            let mut b = s.clone();
            a.q[i] += eps;
            b.q[i] -= eps;
            let fd = -(e(&a) - e(&b)) / (2.0 * eps);
            assert!((fd - pd[i]).abs() / fd.abs().max(1e-3) < 1e-5);
        }
    }

    #[test]
    fn field_is_divergence_free_for_quadratic_model() {
        let m = quadratic_hnn(&[2.0, 0.7], &[1.5, 3.0], 0);
        let s = PhaseState::new(vec![0.3, -0.2], vec![0.5, 0.1]);
        let eps = 1e-5;
        let mut div = 0.0;
        for i in 0..2 {
            let mut a = s.clone();
            let mut b = s.clone();
            a.q[i] += eps;
            b.q[i] -= eps;
            let f = |s: &PhaseState| hnn_vector_field(&m, s, &[]).unwrap();
            div += (f(&a).0[i] - f(&b).0[i]) / (2.0 * eps);
            let mut a = s.clone();
            let mut b = s.clone();
            a.p[i] += eps;
            b.p[i] -= eps;
            div += (f(&a).1[i] - f(&b).1[i]) / (2.0 * eps);
        }
        assert!(div.abs() < 1e-8);
    }

    fn spring_samples(n: usize) -> HnnSamples {
        let ds = Dataset::generate(&default_spec(&[SystemKind::MassSpring], n, 3)).unwrap();
        HnnSamples::from_dataset(&ds, SystemKind::MassSpring, false, 0).unwrap()
    }

    #[test]
    fn exact_model_has_zero_loss() {
        // H = p^2 / (2 m) + k q^2 / 2 with m = 0.5, k = 2
        let m = quadratic_hnn(&[2.0], &[2.0], 0);
        let loss = hnn_loss(&m, &spring_samples(4)).unwrap();
        assert!(loss < 1e-10, "{loss}");
    }

    #[test]
    fn zero_model_loss_is_mean_target_norm() {
        let m = quadratic_hnn(&[0.0], &[0.0], 0);
        let s = spring_samples(3);
        let mut expected = 0.0;
        for i in 0..s.len() {
            expected += s.qdot.get(i, 0).abs() + s.pdot.get(i, 0).abs();
        }
        expected /= s.len() as f64;
        let loss = hnn_loss(&m, &s).unwrap();
        assert!((loss - expected).abs() < 1e-12);
    }

    #[test]
    fn zero_steps_returns_initial_model() {
        let s = spring_samples(2);
        let cfg = HnnConfig {
            steps: 0,
            ..Default::default()
        };
        let out = train_hnn(&s, &cfg, None).unwrap();
        assert!(out.history.is_empty());
        let init = HnnModel::new("hnn", 1, 0, &cfg.hidden, cfg.activation, &mut rng(cfg.seed));
        assert_eq!(out.model, init);
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let s = spring_samples(8);
        let cfg = HnnConfig {
            hidden: vec![32, 32],
            steps: 150,
            batch_size: 64,
            ..Default::default()
        };
        let a = train_hnn(&s, &cfg, None).unwrap();
        let b = train_hnn(&s, &cfg, None).unwrap();
        assert_eq!(a.model, b.model);
        let head: f64 = a.history[..10].iter().map(|h| h.1).sum();
        let tail: f64 = a.history[140..].iter().map(|h| h.1).sum();
        assert!(tail < 0.5 * head, "{head} -> {tail}");
        assert!(a.history.iter().all(|h| h.1 >= 0.0));
    }

    #[test]
    fn multi_step_mode_trains() {
        let ds = Dataset::generate(&default_spec(&[SystemKind::MassSpring], 4, 1)).unwrap();
        let s = HnnSamples::from_dataset(&ds, SystemKind::MassSpring, false, 4).unwrap();
        assert_eq!(s.len(), 4 * 26);
        let cfg = HnnConfig {
            hidden: vec![16],
            steps: 5,
            batch_size: 32,
            unroll: 4,
            ..Default::default()
        };
        let out = train_hnn(&s, &cfg, None).unwrap();
        assert_eq!(out.history.len(), 5);
    }

    #[test]
    fn divergence_aborts_with_checkpoint() {
        let s = spring_samples(2);
        let cfg = HnnConfig {
            hidden: vec![8],
            steps: 10,
            batch_size: 16,
            adam: AdamConfig::with_lr(f64::INFINITY),
            ..Default::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("hnn.json");
        let err = train_hnn(&s, &cfg, Some(&path)).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }), "{err}");
        assert!(path.exists());
    }

    #[test]
    fn zero_field_rollout_is_constant() {
        let m = quadratic_hnn(&[0.0, 0.0], &[0.0, 0.0], 0);
        let s0 = PhaseState::new(vec![0.1, 0.2], vec![0.3, 0.4]);
        let r = rollout(&m, &s0, &[], &IntegratorConfig::default()).unwrap();
        assert_eq!(r.states.len(), 30);
        assert!(r.states.iter().all(|s| s == &s0));
    }

    #[test]
    fn harmonic_rollout_matches_cosine() {
        let m = quadratic_hnn(&[2.0], &[2.0], 0);
        let r = rollout(&m, &PhaseState::new(vec![1.0], vec![0.0]), &[], &IntegratorConfig::default()).unwrap();
        for (t, s) in r.states.iter().enumerate() {
            assert!((s.q[0] - (2.0 * 0.05 * t as f64).cos()).abs() < 1e-3);
        }
    }

    #[test]
    fn exact_model_rollout_tracks_simulator() {
        let kind = SystemKind::MassSpring;
        let m = quadratic_hnn(&[2.0], &[2.0], 0);
        let s0 = PhaseState::new(vec![0.4], vec![-0.6]);
        let cfg = IntegratorConfig::default();
        let truth = simulate(kind, &SystemParams::defaults(kind), &s0, &cfg).unwrap();
        let r = rollout(&m, &s0, &[], &cfg).unwrap();
        for (a, b) in r.states.iter().zip(&truth) {
            assert!((a.q[0] - b.q[0]).abs() < 2e-3 && (a.p[0] - b.p[0]).abs() < 2e-3);
        }
    }

    #[test]
    fn rollout_gradient_matches_finite_differences() {
        let m = HnnModel::new("h", 1, 0, &[8], Activation::Tanh, &mut rng(5));
        let cfg = IntegratorConfig {
            frames: 5,
            ..Default::default()
        };
        let final_norm = |mlp: &MlpParams| {
            let tape = Tape::new();
            let net = mlp.bind(&tape, true);
            let q0 = tape.constant(Tensor::row(&[0.5]));
            let p0 = tape.constant(Tensor::row(&[-0.3]));
            let r = rollout_var(&net, q0, p0, None, &cfg).unwrap();
            let out = r.q[4].square().add(r.p[4].square()).sum();
            (out.item(), tape.param_grad(out).unwrap())
        };
        let (_, grads) = final_norm(&m.mlp);
        let eps = 1e-6;
        for (pi, idx) in [(0usize, 3usize), (1, 2), (2, 5)] {
            let mut a = m.mlp.clone();
            let mut b = m.mlp.clone();
            a.param_tensors_mut()[pi].data_mut()[idx] += eps;
            b.param_tensors_mut()[pi].data_mut()[idx] -= eps;
            let fd = (final_norm(&a).0 - final_norm(&b).0) / (2.0 * eps);
            let g = grads[pi].data()[idx];
            assert!((g - fd).abs() / fd.abs().max(1e-4) < 1e-3, "{g} vs {fd}");
        }
    }

    #[test]
    fn taped_rollout_of_constants_matches_plain_rollout() {
        let m = HnnModel::new("h", 2, 0, &[8], Activation::Tanh, &mut rng(4));
        let s0 = PhaseState::new(vec![0.2, -0.1], vec![0.4, 0.3]);
        let cfg = IntegratorConfig {
            frames: 6,
            ..Default::default()
        };
        let plain = rollout(&m, &s0, &[], &cfg).unwrap();
        let tape = Tape::new();
        let net = m.mlp.bind(&tape, false);
        let q0 = tape.constant(Tensor::row(&s0.q));
        let p0 = tape.constant(Tensor::row(&s0.p));
        let r = rollout_var(&net, q0, p0, None, &cfg).unwrap();
        for t in 0..6 {
            assert_eq!(r.q[t].value().data(), &plain.states[t].q[..]);
            assert_eq!(r.p[t].value().data(), &plain.states[t].p[..]);
        }
        assert_ne!(plain.states[5], s0);
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = HnnModel::new("h", 2, 0, &[4], Activation::Tanh, &mut rng(0));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.json");
        m.save(&path).unwrap();
        assert_eq!(HnnModel::load(&path).unwrap(), m);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let m = quadratic_hnn(&[1.0], &[1.0], 0);
        assert!(hnn_vector_field(&m, &PhaseState::new(vec![0.0; 2], vec![0.0; 2]), &[]).is_err());
    }
}
