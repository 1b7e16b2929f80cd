use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    cyclic_loss, discriminator_inputs, discriminator_loss, generate_trajectory, generator_adversarial_loss,
    sample_latent_trajectory, GanConfig, Noise, SpsGan, GAN_FORMAT,
};
use crate::autodiff::{checkpoint, AdamConfig, AdamState, Parameters, Tape, Tensor, Var};
use crate::dataset::{Batch, Dataset};
use crate::error::{Error, Result};

/// Consecutive near-zero discriminator losses that trigger a collapse warning.
const COLLAPSE_WINDOW: usize = 500;
const COLLAPSE_LOSS: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GanStep {
    pub step: usize,
    pub d_loss: f64,
    pub g_loss: f64,
    pub cyclic: f64,
    /// Mean `|dp_i/dt|` per latent coordinate over the generator batch.
    pub mean_pdot: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GanHistory {
    pub steps: Vec<GanStep>,
    pub collapse_warnings: usize,
}

impl GanHistory {
    /// CSV `step,d_loss,g_loss,cyclic,mean_pdot_1..`.
    pub fn write_csv(&self, path: &Path, d_lat: usize) -> Result<()> {
        let mut out = std::io::BufWriter::new(fs::File::create(path)?);
        let mut header = vec!["step".to_string(), "d_loss".into(), "g_loss".into(), "cyclic".into()];
        header.extend((1..=d_lat).map(|i| format!("mean_pdot_{i}")));
        writeln!(out, "{}", header.join(","))?;
        for s in &self.steps {
            let mut line = format!("{},{},{},{}", s.step, s.d_loss, s.g_loss, s.cyclic);
            for v in &s.mean_pdot {
                line.push(',');
                line.push_str(&v.to_string());
            }
            writeln!(out, "{line}")?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Model plus optimizer state; everything needed to resume a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GanCheckpoint {
    pub model: SpsGan,
    pub adam_generator: AdamState,
    pub adam_discriminator: AdamState,
    /// Next generator iteration.
    pub step: usize,
}

impl GanCheckpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, GAN_FORMAT, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        checkpoint::load(path, GAN_FORMAT)
    }
}

/// Checkpointing and interruption hooks for [`train_spsgan`].
#[derive(Default)]
pub struct TrainControl<'a> {
    pub checkpoint: Option<PathBuf>,
    /// Checked between iterations; when set the run checkpoints and stops.
    pub stop: Option<&'a AtomicBool>,
    /// Continue from this state instead of a fresh initialization.
    pub resume: Option<GanCheckpoint>,
}

fn iteration_rng(seed: u64, step: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step as u64 + 1);
    rng
}

fn adam(config: &GanConfig, lr: f64) -> AdamState {
    AdamState::new(AdamConfig {
        lr,
        beta1: config.beta1,
        beta2: config.beta2,
        ..AdamConfig::default()
    })
}

fn real_batch(ds: &Dataset, batch_size: usize, rng: &mut ChaCha8Rng) -> Batch {
    let idx = index::sample(rng, ds.len(), batch_size).into_vec();
    ds.batch(&idx)
}

fn frame_slices<'t>(frames: Var<'t>, t: usize, width: usize) -> Vec<Var<'t>> {
    (0..t).map(|i| frames.slice_cols(i * width, width)).collect()
}

fn discriminator_step(
    model: &mut SpsGan,
    opt: &mut AdamState,
    real: &Batch,
    fake: &[Tensor],
) -> Result<f64> {
    let c = &model.config;
    let tape = Tape::new();
    let d = model.discriminator.bind(&tape, true);
    let cond = tape.constant(real.condition.clone());
    let real_input = if c.r1_gamma > 0.0 {
        tape.var(real.frames.clone())
    } else {
        tape.constant(real.frames.clone())
    };
    let real_frames = frame_slices(real_input, c.frames, 2 * c.d_out);
    let fake_frames: Vec<Var> = fake.iter().map(|f| tape.constant(f.clone())).collect();
    let lr = d.forward(&discriminator_inputs(&real_frames, cond))?;
    let lf = d.forward(&discriminator_inputs(&fake_frames, cond))?;
    let mut loss = discriminator_loss(lr, lf);
    if c.r1_gamma > 0.0 {
        let g = tape.grad(lr.sum(), &[real_input])?[0];
        let penalty = g.square().sum().scale(0.5 * c.r1_gamma / real.frames.rows() as f64);
        loss = loss.add(penalty);
    }
    let grads = tape.param_grad(loss)?;
    let names = model.discriminator.param_names();
    opt.step(model.discriminator.param_tensors_mut(), &grads, &names)?;
    Ok(loss.item())
}

fn generator_params(model: &mut SpsGan) -> Vec<&mut Tensor> {
    let mut v = model.map.param_tensors_mut();
    v.extend(model.hamiltonian.mlp.param_tensors_mut());
    v.extend(model.generator.param_tensors_mut());
    v
}

fn generator_names(model: &SpsGan) -> Vec<String> {
    let mut v = model.map.param_names();
    v.extend(model.hamiltonian.mlp.param_names());
    v.extend(model.generator.param_names());
    v
}

/// One iteration: `d_steps` discriminator updates on detached samples, then
/// one generator update against the refreshed discriminator.
fn iteration(
    model: &mut SpsGan,
    opt_g: &mut AdamState,
    opt_d: &mut AdamState,
    ds: &Dataset,
    step: usize,
) -> Result<GanStep> {
    let config = model.config.clone();
    let mut rng = iteration_rng(config.seed, step);
    let batch_size = config.batch_size.min(ds.len());
    let real = real_batch(ds, batch_size, &mut rng);

    let tape = Tape::new();
    let nets = model.bind_generator(&tape, true);
    let noise = Noise::sample(&config, batch_size, &mut rng);
    let cond = tape.constant(real.condition.clone());
    let latent = sample_latent_trajectory(&nets, &tape, &noise, cond, &config)?;
    let fake = generate_trajectory(&nets.generator, &latent, tape.constant(real.mask.clone()))?;
    tape.check()?;

    let fake_values: Vec<Tensor> = fake.iter().map(Var::value).collect();
    let mut d_loss = discriminator_step(model, opt_d, &real, &fake_values)?;
    for _ in 1..config.d_steps {
        let real = real_batch(ds, batch_size, &mut rng);
        let extra = model.sample(&real.condition, &real.mask, &mut rng)?;
        let frames: Vec<Tensor> = (0..config.frames)
            .map(|t| {
                let w = 2 * config.d_out;
                Tensor::from_rows(&extra.frames.iter().map(|f| f[t * w..(t + 1) * w].to_vec()).collect::<Vec<_>>())
            })
            .collect();
        d_loss = discriminator_step(model, opt_d, &real, &frames)?;
    }

    let d = model.discriminator.bind(&tape, false);
    let logits = d.forward(&discriminator_inputs(&fake, cond))?;
    let cyc = cyclic_loss(&latent.dhdq, config.lambda_cyclic);
    let loss = generator_adversarial_loss(logits).add(cyc);
    let mut mean_pdot = vec![0.0; config.d_lat];
    for g in &latent.dhdq {
        g.with_value(|v| {
            for r in 0..v.rows() {
                for (m, x) in mean_pdot.iter_mut().zip(v.row_slice(r)) {
                    *m += x.abs();
                }
            }
        });
    }
    let denom = (latent.dhdq.len() * batch_size) as f64;
    mean_pdot.iter_mut().for_each(|m| *m /= denom);
    let grads = tape.param_grad(loss)?;
    let names = generator_names(model);
    opt_g.step(generator_params(model), &grads, &names)?;
    Ok(GanStep {
        step,
        d_loss,
        g_loss: loss.item(),
        cyclic: cyc.item(),
        mean_pdot,
    })
}

/// Alternating adversarial training. Deterministic given the dataset and
/// configuration: iteration `k` draws all of its randomness from a stream
/// derived from `(seed, k)`, so resumed runs continue identically.
pub fn train_spsgan(ds: &Dataset, config: &GanConfig, control: TrainControl) -> Result<(SpsGan, GanHistory)> {
    config.validate()?;
    if ds.is_empty() {
        return Err(Error::Config("empty dataset".into()));
    }
    if ds.manifest.frames != config.frames || ds.manifest.d_out != config.d_out {
        return Err(Error::Config(format!(
            "dataset has {} frames / d_out {}; model expects {} / {}",
            ds.manifest.frames, ds.manifest.d_out, config.frames, config.d_out
        )));
    }
    let mut state = match control.resume {
        Some(mut ck) => {
            let same = GanConfig {
                iterations: config.iterations,
                ..ck.model.config.clone()
            };
            if &same != config {
                return Err(Error::Config("resumed checkpoint was trained with a different configuration".into()));
            }
            ck.model.config = same;
            ck
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            GanCheckpoint {
                model: SpsGan::new(config.clone(), &mut rng)?,
                adam_generator: adam(config, config.lr_generator),
                adam_discriminator: adam(config, config.lr_discriminator),
                step: 0,
            }
        }
    };
    let mut history = GanHistory::default();
    let mut low_d = 0;
    let save = |s: &GanCheckpoint| -> Result<()> {
        match &control.checkpoint {
            Some(path) => s.save(path),
            None => Ok(()),
        }
    };
    while state.step < config.iterations {
        if control.stop.is_some_and(|f| f.load(Ordering::Relaxed)) {
            log::warn!("interrupted at iteration {}", state.step);
            break;
        }
        let last_good = state.clone();
        let GanCheckpoint {
            model,
            adam_generator,
            adam_discriminator,
            step,
        } = &mut state;
        match iteration(model, adam_generator, adam_discriminator, ds, *step) {
            Ok(s) => {
                low_d = if s.d_loss < COLLAPSE_LOSS { low_d + 1 } else { 0 };
                if low_d == COLLAPSE_WINDOW {
                    log::warn!("discriminator loss below {COLLAPSE_LOSS} for {COLLAPSE_WINDOW} iterations");
                    history.collapse_warnings += 1;
                    low_d = 0;
                }
                if s.step % 100 == 0 {
                    log::info!(
                        "iteration {}: d {:.4} g {:.4} cyclic {:.4e}",
                        s.step,
                        s.d_loss,
                        s.g_loss,
                        s.cyclic
                    );
                }
                history.steps.push(s);
                *step += 1;
            }
            Err(e) if e.is_numerical() => {
                save(&last_good)?;
                return Err(Error::Diverged {
                    step: last_good.step,
                    reason: e.to_string(),
                });
            }
            Err(e) => return Err(e),
        }
        if config.checkpoint_every > 0 && state.step % config.checkpoint_every == 0 {
            save(&state)?;
        }
    }
    save(&state)?;
    Ok((state.model, history))
}
