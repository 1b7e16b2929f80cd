//! Command-line pipeline: simulate, build datasets, train, generate,
//! evaluate and analyze. Every command writes its artifacts into a run
//! directory together with a provenance file from which it can be replayed.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{keys, RunConfig};
use crate::dataset::{load_dataset, write_frames_csv, Dataset};
use crate::error::{Error, Result};
use crate::eval::{evaluate_system, write_drift_csv, write_mse_table, energy_drift, EvalReport, Frames, Scored};
use crate::hnn::{rollout, train_hnn, HnnModel, HnnSamples};
use crate::integrators::{simulate, IntegratorConfig};
use crate::spsgan::{train_spsgan, GanCheckpoint, GeneratedSet, SpsGan, TrainControl};
use crate::symmetry::{analyze, probe, write_latent_csv};
use crate::systems::{hamiltonian, sample_initial_condition, to_cartesian_padded, PhaseState, SystemKind, SystemParams};

/// Environment variable naming the default run directory.
pub const OUT_ENV: &str = "SYMPGAN_OUT";

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_MISSING: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;
pub const EXIT_OTHER: i32 = 1;

#[derive(Debug, Parser)]
#[command(name = "sympgan", version, about = "Learned-Hamiltonian trajectory GAN pipeline")]
pub struct Cli {
    /// Run directory holding every artifact.
    #[arg(long, global = true, env = OUT_ENV, default_value = "runs/default")]
    pub run: PathBuf,
    /// Flat `section.key = value` config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Config override, repeatable; wins over the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Shortcut for `--set run.seed=N`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one trajectory with RK45 and write it as CSV.
    Simulate {
        /// mass-spring, pendulum, double-pendulum, two-body or three-body.
        system: String,
        /// Initial angle of every pendulum arm, at rest.
        #[arg(long, allow_hyphen_values = true)]
        theta0: Option<f64>,
        /// Initial generalized coordinates, comma-separated.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        q: Option<Vec<f64>>,
        /// Initial momenta, comma-separated.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        p: Option<Vec<f64>>,
    },
    /// Generate a dataset into `<run>/dataset`.
    Dataset,
    /// Train a supervised Hamiltonian network per system.
    TrainHnn {
        /// Dataset directory; defaults to `<run>/dataset`
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Train the trajectory GAN.
    TrainGan {
        /// Dataset directory; defaults to `<run>/dataset`
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Continue from `<run>/gan.json`.
        #[arg(long)]
        resume: bool,
        /// Train once per listed cyclic penalty instead.
        #[arg(long, value_delimiter = ',')]
        sweep_lambda: Option<Vec<f64>>,
    },
    /// Sample trajectories conditioned on the dataset's records.
    Generate {
        /// GAN checkpoint; defaults to `<run>/gan.json`
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Dataset directory; defaults to `<run>/dataset`
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Score generated trajectories: prediction MSE, energy drift, oracles.
    Eval {
        /// GAN checkpoint; defaults to `<run>/gan.json`
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Dataset directory; defaults to `<run>/dataset`
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Also score `<run>/hnn-<system>.json` rollouts.
        #[arg(long)]
        with_hnn: bool,
        /// Directory holding the `hnn-<system>.json` models; implies `--with-hnn`.
        #[arg(long)]
        hnn_dir: Option<PathBuf>,
    },
    /// Latent dimension diagnostics per system.
    Analyze {
        /// GAN checkpoint; defaults to `<run>/gan.json`
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Dataset directory; defaults to `<run>/dataset`
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Rerun a command from its provenance file.
    Replay {
        provenance: PathBuf,
        /// Write into this run directory instead of the recorded one.
        #[arg(long)]
        into: Option<PathBuf>,
    },
    /// List every config key with its default.
    Keys,
}

/// A command with every input path resolved.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Invocation {
    Simulate {
        system: String,
        theta0: Option<f64>,
        q: Option<Vec<f64>>,
        p: Option<Vec<f64>>,
    },
    Dataset,
    TrainHnn {
        dataset: PathBuf,
    },
    TrainGan {
        dataset: PathBuf,
        /// Starting checkpoint; a snapshot of it is recorded after training.
        resume_from: Option<PathBuf>,
        sweep_lambda: Option<Vec<f64>>,
    },
    Generate {
        checkpoint: PathBuf,
        dataset: PathBuf,
    },
    Eval {
        checkpoint: PathBuf,
        dataset: PathBuf,
        hnn_dir: Option<PathBuf>,
    },
    Analyze {
        checkpoint: PathBuf,
        dataset: PathBuf,
    },
}

impl Invocation {
    pub fn name(&self) -> &'static str {
        match self {
            Invocation::Simulate { .. } => "simulate",
            Invocation::Dataset => "dataset",
            Invocation::TrainHnn { .. } => "train-hnn",
            Invocation::TrainGan { .. } => "train-gan",
            Invocation::Generate { .. } => "generate",
            Invocation::Eval { .. } => "eval",
            Invocation::Analyze { .. } => "analyze",
        }
    }
}

/// Everything needed to rerun a command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub version: String,
    pub run: PathBuf,
    pub invocation: Invocation,
    pub config: BTreeMap<String, String>,
}

impl Provenance {
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

/// Artifact locations inside a run directory.
pub struct RunDir(pub PathBuf);

impl RunDir {
    pub fn dataset(&self) -> PathBuf {
        self.0.join("dataset")
    }
    pub fn gan(&self) -> PathBuf {
        self.0.join("gan.json")
    }
    pub fn hnn(&self, kind: SystemKind) -> PathBuf {
        self.0.join(format!("hnn-{kind}.json"))
    }
    pub fn generated(&self) -> PathBuf {
        self.0.join("generated.json")
    }
    pub fn provenance(&self, command: &str) -> PathBuf {
        self.0.join("provenance").join(format!("{command}.json"))
    }
}

/// Maps an error to the process exit code.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::MissingArtifact(_) | Error::NoManifest(_) => EXIT_MISSING,
        Error::Config(_) => EXIT_USAGE,
        e if e.is_numerical() => EXIT_NUMERICAL,
        _ => EXIT_OTHER,
    }
}

fn absolute(p: PathBuf) -> PathBuf {
    std::path::absolute(&p).unwrap_or(p)
}

fn resolve(cli: Cli) -> Result<Option<(Invocation, RunConfig, PathBuf)>> {
    let mut overrides = cli.overrides;
    if let Some(seed) = cli.seed {
        overrides.push(format!("run.seed={seed}"));
    }
    let run = absolute(cli.run);
    let dirs = RunDir(run.clone());
    let or = |p: Option<PathBuf>, d: PathBuf| absolute(p.unwrap_or(d));
    let inv = match cli.command {
        Command::Keys => {
            let mut out = std::io::stdout().lock();
            for k in keys() {
                if writeln!(out, "{} = {}    # {}", k.key, k.default, k.help).is_err() {
                    break;
                }
            }
            return Ok(None);
        }
        Command::Replay { provenance, into } => {
            let prov = Provenance::load(&provenance)?;
            let cfg = RunConfig::from_entries(&prov.config)?;
            return Ok(Some((prov.invocation, cfg, into.map(absolute).unwrap_or(prov.run))));
        }
        Command::Simulate { system, theta0, q, p } => Invocation::Simulate { system, theta0, q, p },
        Command::Dataset => Invocation::Dataset,
        Command::TrainHnn { dataset } => Invocation::TrainHnn {
            dataset: or(dataset, dirs.dataset()),
        },
        Command::TrainGan {
            dataset,
            resume,
            sweep_lambda,
        } => {
            if resume && sweep_lambda.is_some() {
                return Err(Error::Config("--resume cannot be combined with --sweep-lambda".into()));
            }
            Invocation::TrainGan {
                dataset: or(dataset, dirs.dataset()),
                resume_from: resume.then(|| dirs.gan()),
                sweep_lambda,
            }
        }
        Command::Generate { checkpoint, dataset } => Invocation::Generate {
            checkpoint: or(checkpoint, dirs.gan()),
            dataset: or(dataset, dirs.dataset()),
        },
        Command::Eval {
            checkpoint,
            dataset,
            with_hnn,
            hnn_dir,
        } => Invocation::Eval {
            checkpoint: or(checkpoint, dirs.gan()),
            dataset: or(dataset, dirs.dataset()),
            hnn_dir: hnn_dir.map(absolute).or_else(|| with_hnn.then(|| run.clone())),
        },
        Command::Analyze { checkpoint, dataset } => Invocation::Analyze {
            checkpoint: or(checkpoint, dirs.gan()),
            dataset: or(dataset, dirs.dataset()),
        },
    };
    let cfg = RunConfig::resolve(cli.config.as_deref(), &overrides)?;
    Ok(Some((inv, cfg, run)))
}

/// Runs a resolved command and writes its provenance file.
pub fn execute(inv: &Invocation, cfg: &RunConfig, run: &Path) -> Result<()> {
    let dirs = RunDir(run.to_path_buf());
    fs::create_dir_all(run)?;
    let mut recorded = inv.clone();
    match inv {
        Invocation::Simulate { system, theta0, q, p } => cmd_simulate(&dirs, cfg, system, *theta0, q, p)?,
        Invocation::Dataset => cmd_dataset(&dirs, cfg)?,
        Invocation::TrainHnn { dataset } => cmd_train_hnn(&dirs, cfg, dataset)?,
        Invocation::TrainGan {
            dataset,
            resume_from,
            sweep_lambda,
        } => {
            let snapshot = cmd_train_gan(&dirs, cfg, dataset, resume_from.as_deref(), sweep_lambda.as_deref())?;
            recorded = Invocation::TrainGan {
                dataset: dataset.clone(),
                resume_from: snapshot,
                sweep_lambda: sweep_lambda.clone(),
            };
        }
        Invocation::Generate { checkpoint, dataset } => cmd_generate(&dirs, cfg, checkpoint, dataset)?,
        Invocation::Eval {
            checkpoint,
            dataset,
            hnn_dir,
        } => cmd_eval(&dirs, cfg, checkpoint, dataset, hnn_dir.as_deref())?,
        Invocation::Analyze { checkpoint, dataset } => cmd_analyze(&dirs, cfg, checkpoint, dataset)?,
    }
    let prov = Provenance {
        version: env!("CARGO_PKG_VERSION").to_string(),
        run: run.to_path_buf(),
        invocation: recorded,
        config: cfg.entries().clone(),
    };
    let path = dirs.provenance(inv.name());
    fs::create_dir_all(path.parent().expect("provenance has a parent"))?;
    fs::write(&path, serde_json::to_string_pretty(&prov)? + "\n")?;
    Ok(())
}

fn cmd_simulate(
    dirs: &RunDir,
    cfg: &RunConfig,
    system: &str,
    theta0: Option<f64>,
    q: &Option<Vec<f64>>,
    p: &Option<Vec<f64>>,
) -> Result<()> {
    let kind: SystemKind = system.parse()?;
    let params = SystemParams::defaults(kind);
    let dof = kind.dof();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed()?);
    let mut s0 = sample_initial_condition(kind, &params, &mut rng);
    if let Some(t) = theta0 {
        if !matches!(kind, SystemKind::Pendulum | SystemKind::DoublePendulum) {
            return Err(Error::Config(format!("--theta0 applies to pendulums, not {kind}")));
        }
        s0 = PhaseState::new(vec![t; dof], vec![0.0; dof]);
    }
    for (name, given, slot) in [("q", q, &mut s0.q), ("p", p, &mut s0.p)] {
        if let Some(v) = given {
            if v.len() != dof {
                return Err(Error::Config(format!("--{name} needs {dof} values for {kind}")));
            }
            *slot = v.clone();
        }
    }
    let integ = cfg.integrator()?;
    let d_out: usize = cfg.get("dataset.d_out")?;
    let states = simulate(kind, &params, &s0, &integ)?;
    let frames: Vec<f64> = states
        .iter()
        .flat_map(|s| to_cartesian_padded(kind, &params, s, d_out).xy)
        .collect();
    let path = dirs.0.join(format!("simulate-{kind}.csv"));
    write_frames_csv(&frames, d_out, integ.dt, &path)?;
    let e0 = hamiltonian(kind, &params, &states[0])?;
    let e1 = hamiltonian(kind, &params, states.last().expect("frames >= 2"))?;
    println!("wrote {}", path.display());
    println!("final energy drift {:.3e} (relative)", (e1 - e0) / e0.abs().max(1e-300));
    Ok(())
}

fn cmd_dataset(dirs: &RunDir, cfg: &RunConfig) -> Result<()> {
    let spec = cfg.dataset_spec()?;
    let ds = Dataset::generate(&spec)?;
    ds.save(&dirs.dataset())?;
    println!("wrote {} trajectories to {}", ds.len(), dirs.dataset().display());
    Ok(())
}

fn needs_condition(ds: &Dataset) -> bool {
    let b = &ds.manifest.param_ranges;
    ds.manifest.systems.len() > 1 || b.min.iter().zip(&b.max).any(|(lo, hi)| lo != hi)
}

fn cmd_train_hnn(dirs: &RunDir, cfg: &RunConfig, dataset: &Path) -> Result<()> {
    let ds = load_dataset(dataset)?;
    let kinds: Vec<SystemKind> = match cfg.hnn_system()? {
        Some(k) => vec![k],
        None => ds.manifest.systems.iter().map(|e| e.kind).collect(),
    };
    let mut integ = cfg.integrator()?;
    integ.dt = ds.manifest.dt;
    integ.frames = ds.manifest.frames;
    let hcfg = cfg.hnn_config(integ)?;
    let multi = needs_condition(&ds);
    for kind in kinds {
        let samples = HnnSamples::from_dataset(&ds, kind, multi, hcfg.unroll)?;
        let path = dirs.hnn(kind);
        let out = train_hnn(&samples, &hcfg, Some(&path))?;
        let hist = dirs.0.join(format!("hnn-{kind}_history.csv"));
        let mut text = String::from("step,loss\n");
        for (s, l) in &out.history {
            text.push_str(&format!("{s},{l}\n"));
        }
        fs::write(&hist, text)?;
        let last = out.history.last().map_or(f64::NAN, |h| h.1);
        println!("{kind}: final loss {last:.4e}, wrote {}", path.display());
    }
    Ok(())
}

fn train_one(
    ds: &Dataset,
    cfg: &RunConfig,
    checkpoint: &Path,
    resume: Option<GanCheckpoint>,
    lambda: Option<f64>,
) -> Result<()> {
    let kinds: Vec<SystemKind> = ds.manifest.systems.iter().map(|e| e.kind).collect();
    let mut gcfg = cfg.gan_config(&kinds, ds.manifest.frames, ds.manifest.d_out)?;
    if let Some(l) = lambda {
        gcfg.lambda_cyclic = l;
        gcfg.validate()?;
    }
    let stop = Arc::new(AtomicBool::new(false));
    for sig in [signal_hook::consts::SIGINT, signal_hook::consts::SIGTERM] {
        signal_hook::flag::register(sig, Arc::clone(&stop))?;
    }
    let start = resume.as_ref().map_or(0, |c| c.step);
    let control = TrainControl {
        checkpoint: Some(checkpoint.to_path_buf()),
        stop: Some(&stop),
        resume,
    };
    let (model, history) = train_spsgan(ds, &gcfg, control)?;
    let stem = checkpoint.with_extension("");
    let hist = if start == 0 {
        PathBuf::from(format!("{}_history.csv", stem.display()))
    } else {
        PathBuf::from(format!("{}_history-from-{start}.csv", stem.display()))
    };
    history.write_csv(&hist, model.config.d_lat)?;
    if let Some(last) = history.steps.last() {
        println!(
            "iteration {}: d {:.4} g {:.4} cyclic {:.4e}; wrote {}",
            last.step,
            last.d_loss,
            last.g_loss,
            last.cyclic,
            checkpoint.display()
        );
    }
    if history.collapse_warnings > 0 {
        println!("{} mode-collapse warnings", history.collapse_warnings);
    }
    Ok(())
}

/// Returns the snapshot of the starting checkpoint when resuming.
fn cmd_train_gan(
    dirs: &RunDir,
    cfg: &RunConfig,
    dataset: &Path,
    resume_from: Option<&Path>,
    sweep: Option<&[f64]>,
) -> Result<Option<PathBuf>> {
    let ds = load_dataset(dataset)?;
    if let Some(lambdas) = sweep {
        for &l in lambdas {
            let path = dirs.0.join(format!("gan-lambda-{l}.json"));
            train_one(&ds, cfg, &path, None, Some(l))?;
        }
        return Ok(None);
    }
    let (resume, snapshot) = match resume_from {
        Some(p) if p.exists() => {
            let ck = GanCheckpoint::load(p)?;
            let snapshot = dirs.0.join(format!("gan-from-{}.json", ck.step));
            if absolute(p.to_path_buf()) != snapshot {
                fs::copy(p, &snapshot)?;
            }
            (Some(ck), Some(snapshot))
        }
        Some(p) => {
            log::warn!("no checkpoint at {}; training from scratch", p.display());
            (None, None)
        }
        None => (None, None),
    };
    train_one(&ds, cfg, &dirs.gan(), resume, None)?;
    Ok(snapshot)
}

fn cmd_generate(dirs: &RunDir, cfg: &RunConfig, checkpoint: &Path, dataset: &Path) -> Result<()> {
    let model = SpsGan::load(checkpoint)?;
    let ds = load_dataset(dataset)?;
    let set = GeneratedSet::sample(&model, &ds, cfg.get("eval.samples")?, cfg.get("eval.seed")?)?;
    set.save(&dirs.generated())?;
    if let Some(first) = set.trajectories.first() {
        let path = dirs.0.join("generated-first.csv");
        write_frames_csv(&first.frames, set.d_out, set.dt, &path)?;
    }
    println!("wrote {} trajectories to {}", set.trajectories.len(), dirs.generated().display());
    Ok(())
}

/// HNN predictions from the true initial states of the dataset's records.
fn hnn_predictions(model: &HnnModel, ds: &Dataset, kind: SystemKind, n: usize, multi: bool) -> Result<Vec<(Vec<f64>, SystemParams)>> {
    let integ = IntegratorConfig {
        dt: ds.manifest.dt,
        frames: ds.manifest.frames,
        ..IntegratorConfig::default()
    };
    let mut out = Vec::new();
    for r in ds.records_of(kind).take(n) {
        let cond = if multi { ds.condition(r) } else { Vec::new() };
        let roll = rollout(model, &r.states[0], &cond, &integ)?;
        let frames = if roll.nan_at.is_some() {
            vec![f64::NAN; r.frames.len()]
        } else {
            roll.states
                .iter()
                .flat_map(|s| to_cartesian_padded(kind, &r.params, s, r.d_out()).xy)
                .collect()
        };
        out.push((frames, r.params));
    }
    Ok(out)
}

fn cmd_eval(dirs: &RunDir, cfg: &RunConfig, checkpoint: &Path, dataset: &Path, hnn_dir: Option<&Path>) -> Result<()> {
    let model = SpsGan::load(checkpoint)?;
    let ds = load_dataset(dataset)?;
    let n: usize = cfg.get("eval.samples")?;
    let gate: f64 = cfg.get("eval.drift_gate")?;
    let set = GeneratedSet::sample(&model, &ds, n, cfg.get("eval.seed")?)?;
    let mut gan = EvalReport::default();
    let mut hnn = EvalReport::default();
    let mut drifts = Vec::new();
    for entry in &ds.manifest.systems {
        let kind = entry.kind;
        let items: Vec<Scored> = set
            .of(kind)
            .map(|t| Scored {
                frames: &t.frames,
                params: t.params,
            })
            .collect();
        for it in &items {
            if let Ok(d) = Frames::new(it.frames, set.d_out, set.dt).and_then(|f| energy_drift(&f, kind, &it.params)) {
                drifts.push(d);
            }
        }
        let e = evaluate_system(kind, &items, set.d_out, set.dt, gate)?;
        println!(
            "{kind}: mse {} | {:.1}% within {gate}% drift | {} failures",
            e.mse.map_or("n/a".into(), |m| format!("{m:.4e}")),
            100.0 * e.drift_within_gate,
            e.failures
        );
        gan.systems.push(e);
        if let Some(dir) = hnn_dir {
            let model = HnnModel::load(&RunDir(dir.to_path_buf()).hnn(kind))?;
            let preds = hnn_predictions(&model, &ds, kind, n, model.cond_dim > 0)?;
            let items: Vec<Scored> = preds.iter().map(|(f, p)| Scored { frames: f, params: *p }).collect();
            let e = evaluate_system(kind, &items, ds.manifest.d_out, ds.manifest.dt, gate)?;
            println!("{kind} (hnn): mse {}", e.mse.map_or("n/a".into(), |m| format!("{m:.4e}")));
            hnn.systems.push(e);
        }
    }
    gan.save(&dirs.0.join("eval.json"))?;
    write_drift_csv(&dirs.0.join("drift.csv"), &drifts, set.dt)?;
    let mut rows = vec![("sps-gan", &gan)];
    if hnn_dir.is_some() {
        hnn.save(&dirs.0.join("eval-hnn.json"))?;
        rows.push(("hnn", &hnn));
    }
    write_mse_table(&dirs.0.join("mse_table.csv"), &rows)?;
    println!("wrote {}", dirs.0.join("eval.json").display());
    Ok(())
}

fn cmd_analyze(dirs: &RunDir, cfg: &RunConfig, checkpoint: &Path, dataset: &Path) -> Result<()> {
    let model = SpsGan::load(checkpoint)?;
    let ds = load_dataset(dataset)?;
    let n: usize = cfg.get("analyze.samples")?;
    let seed: u64 = cfg.get("eval.seed")?;
    let dcfg = cfg.dimension_config()?;
    for entry in &ds.manifest.systems {
        let kind = entry.kind;
        let record = ds
            .records_of(kind)
            .next()
            .ok_or_else(|| Error::Config(format!("dataset has no {kind} records")))?;
        let cond = ds.condition(record);
        let report = analyze(&model, &cond, &record.mask, n, seed, &dcfg)?;
        report.save(&dirs.0.join(format!("analysis-{kind}.json")))?;
        let latents = probe(&model, &cond, &record.mask, n, seed)?.latents;
        write_latent_csv(&latents, &dirs.0.join(format!("latents-{kind}.csv")))?;
        println!(
            "{kind}: dimension {} (PCA {} at {:.0}% variance)",
            report.dimension,
            report.pca_dimension,
            100.0 * report.variance_threshold
        );
    }
    Ok(())
}

/// Parses arguments, runs the command and returns the exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let outcome = resolve(cli).and_then(|r| match r {
        Some((inv, cfg, run)) => execute(&inv, &cfg, &run),
        None => Ok(()),
    });
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
