//! Conditional trajectory GAN with a learned-Hamiltonian latent motion model.
//!
//! A configuration-space map turns motion noise and the condition into a
//! latent initial state, the learned Hamiltonian carries it forward with the
//! leapfrog scheme, each latent frame is concatenated with a per-trajectory
//! content vector and decoded to masked particle coordinates, and a recurrent
//! discriminator scores whole sequences.

mod gru;
mod train;

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use gru::{BoundGru, GruParams};
pub use train::{train_spsgan, GanCheckpoint, GanHistory, GanStep, TrainControl};

use crate::autodiff::{softplus, Activation, BoundMlp, MlpParams, Tape, Tensor, Var};
use crate::dataset::{coordinate_mask, Dataset, CONDITION_DIM};
use crate::error::{Error, Result};
use crate::hnn::{rollout_var, HnnModel};
use crate::integrators::IntegratorConfig;
use crate::systems::{PhaseState, SystemKind, SystemParams, D_OUT};

pub const GAN_FORMAT: &str = "spsgan";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GanConfig {
    pub d_lat: usize,
    pub d_cont: usize,
    pub d_out: usize,
    pub cond_dim: usize,
    /// Width of the motion noise; 1 gives the scalar-noise variant.
    pub motion_noise_dim: usize,
    pub frames: usize,
    /// Latent time step per frame.
    pub dt: f64,
    pub substeps: usize,
    pub lambda_cyclic: f64,
    pub lr_generator: f64,
    pub lr_discriminator: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Generator updates.
    pub iterations: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Discriminator updates per generator update.
    pub d_steps: usize,
    /// Weight of the squared input-gradient penalty on real sequences; 0
    /// disables it.
    #[serde(default)]
    pub r1_gamma: f64,
    pub map_hidden: Vec<usize>,
    pub hnn_hidden: Vec<usize>,
    pub hnn_activation: Activation,
    pub generator_hidden: usize,
    pub discriminator_hidden: usize,
    pub checkpoint_every: usize,
}

impl Default for GanConfig {
    fn default() -> Self {
        let d_lat = 20;
        Self {
            d_lat,
            d_cont: 50,
            d_out: D_OUT,
            cond_dim: CONDITION_DIM,
            motion_noise_dim: 2 * d_lat,
            frames: 30,
            dt: 0.05,
            substeps: 1,
            lambda_cyclic: 0.1,
            lr_generator: 5e-5,
            lr_discriminator: 5e-5,
            beta1: 0.3,
            beta2: 0.999,
            iterations: 50_000,
            batch_size: 128,
            seed: 0,
            d_steps: 1,
            r1_gamma: 0.0,
            map_hidden: vec![100, 100],
            hnn_hidden: vec![100, 100],
            hnn_activation: Activation::Tanh,
            generator_hidden: 512,
            discriminator_hidden: 64,
            checkpoint_every: 1000,
        }
    }
}

impl GanConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.lambda_cyclic >= 0.0) {
            return bad("lambda_cyclic must be non-negative");
        }
        if !(self.r1_gamma >= 0.0) {
            return bad("r1_gamma must be non-negative");
        }
        if self.frames < 2 {
            return bad("frames must be at least 2");
        }
        if self.d_lat == 0 || self.d_out == 0 || self.motion_noise_dim == 0 {
            return bad("d_lat, d_out and motion_noise_dim must be positive");
        }
        if self.batch_size == 0 || self.d_steps == 0 {
            return bad("batch_size and d_steps must be positive");
        }
        if !(self.lr_generator > 0.0 && self.lr_discriminator > 0.0) {
            return bad("learning rates must be positive");
        }
        self.integrator().validate()
    }

    pub fn integrator(&self) -> IntegratorConfig {
        IntegratorConfig {
            dt: self.dt,
            frames: self.frames,
            substeps: self.substeps,
            ..IntegratorConfig::default()
        }
    }
}

/// Every network of the model plus its configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpsGan {
    pub config: GanConfig,
    /// `[motion noise, condition] -> (q0, p0)`
    pub map: MlpParams,
    pub hamiltonian: HnnModel,
    /// `[q, p, content] -> particle coordinates`
    pub generator: MlpParams,
    pub discriminator: GruParams,
}

impl SpsGan {
    pub fn new(config: GanConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let mut map_sizes = vec![c.motion_noise_dim + c.cond_dim];
        map_sizes.extend_from_slice(&c.map_hidden);
        map_sizes.push(2 * c.d_lat);
        let map = MlpParams::init("map", &map_sizes, Activation::Relu, Activation::Identity, rng);
        let hamiltonian = HnnModel::new("hamiltonian", c.d_lat, c.cond_dim, &c.hnn_hidden, c.hnn_activation, rng);
        let generator = MlpParams::init(
            "generator",
            &[2 * c.d_lat + c.d_cont, c.generator_hidden, 2 * c.d_out],
            Activation::Softplus,
            Activation::Identity,
            rng,
        );
        let discriminator = GruParams::init("discriminator", 2 * c.d_out + c.cond_dim, c.discriminator_hidden, rng);
        Ok(Self {
            config,
            map,
            hamiltonian,
            generator,
            discriminator,
        })
    }

    /// Model part of a training checkpoint.
    pub fn load(path: &Path) -> Result<Self> {
        Ok(GanCheckpoint::load(path)?.model)
    }

    pub fn bind_generator<'t>(&self, tape: &'t Tape, trainable: bool) -> GeneratorNets<'t> {
        GeneratorNets {
            map: self.map.bind(tape, trainable),
            hamiltonian: self.hamiltonian.mlp.bind(tape, trainable),
            generator: self.generator.bind(tape, trainable),
        }
    }

    /// Samples `cond.rows()` trajectories without recording gradients.
    pub fn sample(&self, cond: &Tensor, mask: &Tensor, rng: &mut ChaCha8Rng) -> Result<Generated> {
        let tape = Tape::new();
        let nets = self.bind_generator(&tape, false);
        let noise = Noise::sample(&self.config, cond.rows(), rng);
        let latent = sample_latent_trajectory(&nets, &tape, &noise, tape.constant(cond.clone()), &self.config)?;
        let frames = generate_trajectory(&nets.generator, &latent, tape.constant(mask.clone()))?;
        tape.check()?;
        let b = cond.rows();
        let mut out = Generated {
            frames: vec![Vec::with_capacity(frames.len() * 2 * self.config.d_out); b],
            latents: vec![Vec::with_capacity(frames.len()); b],
            momentum_rates: vec![Vec::with_capacity(frames.len()); b],
        };
        for (t, frame) in frames.iter().enumerate() {
            let f = frame.value();
            let (q, p, g) = (latent.q[t].value(), latent.p[t].value(), latent.dhdq[t].value());
            for i in 0..b {
                out.frames[i].extend_from_slice(f.row_slice(i));
                out.latents[i].push(PhaseState::new(q.row_slice(i).to_vec(), p.row_slice(i).to_vec()));
                out.momentum_rates[i].push(g.row_slice(i).iter().map(|v| -v).collect::<Vec<f64>>());
            }
        }
        Ok(out)
    }
}

/// Generator-side networks bound to one tape.
pub struct GeneratorNets<'t> {
    pub map: BoundMlp<'t>,
    pub hamiltonian: BoundMlp<'t>,
    pub generator: BoundMlp<'t>,
}

/// Motion and content noise for one batch.
#[derive(Clone, Debug)]
pub struct Noise {
    /// `[B, motion_noise_dim]`
    pub motion: Tensor,
    /// `[B, d_cont]`
    pub content: Tensor,
}

impl Noise {
    pub fn sample(config: &GanConfig, batch: usize, rng: &mut impl Rng) -> Self {
        let mut normal = |rows: usize, cols: usize| {
            Tensor::from_matrix(rows, cols, (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect())
        };
        let motion = normal(batch, config.motion_noise_dim);
        let content = normal(batch, config.d_cont);
        Self { motion, content }
    }
}

/// Latent rollout with the content vector that is tiled across its frames.
pub struct LatentTrajectory<'t> {
    pub q: Vec<Var<'t>>,
    pub p: Vec<Var<'t>>,
    /// `dH/dq` at each frame.
    pub dhdq: Vec<Var<'t>>,
    pub content: Var<'t>,
    pub cond: Var<'t>,
}

impl<'t> LatentTrajectory<'t> {
    /// Decoder input `[q_t, p_t, content]` for frame `t`.
    pub fn entry(&self, t: usize) -> Var<'t> {
        Var::concat_cols(&[self.q[t], self.p[t], self.content])
    }
}

/// `z0 = f(motion, cond)` followed by the leapfrog rollout of the learned
/// Hamiltonian.
pub fn sample_latent_trajectory<'t>(
    nets: &GeneratorNets<'t>,
    tape: &'t Tape,
    noise: &Noise,
    cond: Var<'t>,
    config: &GanConfig,
) -> Result<LatentTrajectory<'t>> {
    let motion = tape.constant(noise.motion.clone());
    let input = if cond.dims().1 > 0 { Var::concat_cols(&[motion, cond]) } else { motion };
    let z0 = nets.map.forward(input)?;
    let d = config.d_lat;
    let q0 = z0.slice_cols(0, d);
    let p0 = z0.slice_cols(d, d);
    let roll = rollout_var(&nets.hamiltonian, q0, p0, Some(cond), &config.integrator())?;
    Ok(LatentTrajectory {
        q: roll.q,
        p: roll.p,
        dhdq: roll.dhdq,
        content: tape.constant(noise.content.clone()),
        cond,
    })
}

/// Decodes every latent frame and applies the coordinate mask `[B, 2 d_out]`.
pub fn generate_trajectory<'t>(
    generator: &BoundMlp<'t>,
    latent: &LatentTrajectory<'t>,
    mask: Var<'t>,
) -> Result<Vec<Var<'t>>> {
    let mut frames = Vec::with_capacity(latent.q.len());
    for t in 0..latent.q.len() {
        let x = generator.forward(latent.entry(t))?;
        if x.dims() != mask.dims() {
            return Err(Error::shape(
                "generate_trajectory",
                format!("decoded {:?} vs mask {:?}", x.dims(), mask.dims()),
            ));
        }
        frames.push(x.mul(mask));
    }
    Ok(frames)
}

/// `lambda * mean over frames and batch of sum_i |dp_i/dt|`.
pub fn cyclic_loss<'t>(dhdq: &[Var<'t>], lambda: f64) -> Var<'t> {
    let (b, _) = dhdq[0].dims();
    let total = dhdq
        .iter()
        .map(|g| g.abs().sum())
        .reduce(|a, c| a.add(c))
        .expect("at least one frame");
    total.scale(lambda / (b * dhdq.len()) as f64)
}

/// Discriminator inputs: each frame `[B, 2 d_out]` with the condition appended.
pub fn discriminator_inputs<'t>(frames: &[Var<'t>], cond: Var<'t>) -> Vec<Var<'t>> {
    frames
        .iter()
        .map(|&f| if cond.dims().1 > 0 { Var::concat_cols(&[f, cond]) } else { f })
        .collect()
}

/// Binary cross-entropy on logits: real sequences labelled 1, generated 0.
pub fn discriminator_loss<'t>(real_logits: Var<'t>, fake_logits: Var<'t>) -> Var<'t> {
    real_logits.neg().softplus().mean().add(fake_logits.softplus().mean())
}

/// Non-saturating generator objective `-log D(fake)`.
pub fn generator_adversarial_loss(fake_logits: Var<'_>) -> Var<'_> {
    fake_logits.neg().softplus().mean()
}

/// Both objectives from logits, for inspection without a tape.
pub fn gan_losses(real_logits: &[f64], fake_logits: &[f64], cyclic: f64) -> (f64, f64) {
    let mean = |v: &[f64], f: &dyn Fn(f64) -> f64| v.iter().map(|&x| f(x)).sum::<f64>() / v.len() as f64;
    let d = mean(real_logits, &|x| softplus(-x)) + mean(fake_logits, &softplus);
    let g = mean(fake_logits, &|x| softplus(-x)) + cyclic;
    (g, d)
}

/// Generated batch: flat frames, latent states and `dp/dt` per frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Generated {
    pub frames: Vec<Vec<f64>>,
    pub latents: Vec<Vec<PhaseState>>,
    pub momentum_rates: Vec<Vec<Vec<f64>>>,
}

/// One generated trajectory with the condition it was sampled under.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratedTrajectory {
    pub system: SystemKind,
    pub params: SystemParams,
    pub frames: Vec<f64>,
}

/// Generated trajectories as written to disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratedSet {
    pub dt: f64,
    pub d_out: usize,
    pub frames: usize,
    pub trajectories: Vec<GeneratedTrajectory>,
}

impl GeneratedSet {
    /// `per_system` samples for every system of `ds`, conditioned on the
    /// dataset's records in order (cycling when there are fewer records).
    pub fn sample(model: &SpsGan, ds: &Dataset, per_system: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut trajectories = Vec::new();
        for entry in &ds.manifest.systems {
            let records: Vec<_> = ds.records_of(entry.kind).collect();
            if records.is_empty() || per_system == 0 {
                continue;
            }
            let chosen: Vec<_> = (0..per_system).map(|i| records[i % records.len()]).collect();
            let cond = Tensor::from_rows(&chosen.iter().map(|r| ds.condition(r)).collect::<Vec<_>>());
            let mask = mask_tensor(&chosen.iter().map(|r| r.mask.clone()).collect::<Vec<_>>());
            let g = model.sample(&cond, &mask, &mut rng)?;
            for (r, frames) in chosen.iter().zip(g.frames) {
                trajectories.push(GeneratedTrajectory {
                    system: r.kind,
                    params: r.params,
                    frames,
                });
            }
        }
        Ok(Self {
            dt: ds.manifest.dt,
            d_out: model.config.d_out,
            frames: model.config.frames,
            trajectories,
        })
    }

    pub fn of(&self, kind: SystemKind) -> impl Iterator<Item = &GeneratedTrajectory> {
        self.trajectories.iter().filter(move |t| t.system == kind)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

/// Coordinate masks `[B, 2 d_out]` for per-particle masks.
pub fn mask_tensor(masks: &[Vec<f64>]) -> Tensor {
    Tensor::from_rows(&masks.iter().map(|m| coordinate_mask(m)).collect::<Vec<_>>())
}
