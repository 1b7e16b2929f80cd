//! Flat `section.key = value` run configuration. Every key has a default;
//! a config file overrides defaults and command-line overrides win over
//! both. Unknown keys are rejected.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::autodiff::{AdamConfig, Activation};
use crate::dataset::{DatasetSpec, ParamRange, SystemSpec, DEFAULT_COUNT};
use crate::error::{Error, Result};
use crate::eval::DRIFT_GATE_PERCENT;
use crate::hnn::HnnConfig;
use crate::integrators::IntegratorConfig;
use crate::spsgan::GanConfig;
use crate::symmetry::DimensionConfig;
use crate::systems::{SystemKind, SystemParams, D_OUT};

/// Key, default value and description.
pub struct KeySpec {
    pub key: &'static str,
    pub default: String,
    pub help: &'static str,
}

fn list<T: Display>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

/// Every recognised key.
pub fn keys() -> Vec<KeySpec> {
    let g = GanConfig::default();
    let h = HnnConfig::default();
    let i = IntegratorConfig::default();
    let d = DimensionConfig::default();
    let k = |key, default: String, help| KeySpec { key, default, help };
    vec![
        k("run.seed", "0".into(), "global seed"),
        k("dataset.systems", "pendulum".into(), "comma-separated system kinds"),
        k("dataset.count", DEFAULT_COUNT.to_string(), "trajectories per system"),
        k("dataset.frames", i.frames.to_string(), "frames per trajectory"),
        k("dataset.dt", i.dt.to_string(), "frame spacing"),
        k("dataset.d_out", D_OUT.to_string(), "particle slots per frame"),
        k("dataset.vary", String::new(), "parameter ranges `name:lo:hi,...` applied to every system"),
        k("dataset.rtol", i.rtol.to_string(), "RK45 relative tolerance"),
        k("dataset.atol", i.atol.to_string(), "RK45 absolute tolerance"),
        k("hnn.system", String::new(), "system to fit; empty means every system with a condition input"),
        k("hnn.hidden", list(&h.hidden), "hidden layer widths"),
        k("hnn.activation", h.activation.to_string(), "hidden activation"),
        k("hnn.steps", h.steps.to_string(), "Adam updates"),
        k("hnn.batch_size", h.batch_size.to_string(), "samples per update"),
        k("hnn.lr", h.adam.lr.to_string(), "learning rate"),
        k("hnn.unroll", h.unroll.to_string(), "leapfrog frames unrolled per sample; 0 matches derivatives"),
        k("hnn.checkpoint_every", h.checkpoint_every.to_string(), "updates between checkpoints"),
        k("gan.d_lat", g.d_lat.to_string(), "latent coordinates"),
        k("gan.d_cont", g.d_cont.to_string(), "content vector width"),
        k("gan.motion_noise_dim", g.motion_noise_dim.to_string(), "motion noise width; 1 is the scalar variant"),
        k("gan.dt", g.dt.to_string(), "latent time step per frame"),
        k("gan.substeps", g.substeps.to_string(), "leapfrog steps per frame"),
        k("gan.lambda_cyclic", g.lambda_cyclic.to_string(), "cyclic coordinate penalty"),
        k("gan.lr_generator", g.lr_generator.to_string(), "generator learning rate"),
        k("gan.lr_discriminator", g.lr_discriminator.to_string(), "discriminator learning rate"),
        k("gan.beta1", g.beta1.to_string(), "Adam beta1"),
        k("gan.beta2", g.beta2.to_string(), "Adam beta2"),
        k("gan.iterations", g.iterations.to_string(), "generator updates"),
        k("gan.batch_size", String::new(), "batch size; empty picks 160 for three-body, else 128"),
        k("gan.d_steps", g.d_steps.to_string(), "discriminator updates per generator update"),
        k("gan.r1_gamma", g.r1_gamma.to_string(), "real-data gradient penalty weight"),
        k("gan.map_hidden", list(&g.map_hidden), "configuration-space map widths"),
        k("gan.hnn_hidden", list(&g.hnn_hidden), "latent Hamiltonian widths"),
        k("gan.hnn_activation", g.hnn_activation.to_string(), "latent Hamiltonian activation"),
        k("gan.generator_hidden", g.generator_hidden.to_string(), "decoder width"),
        k("gan.discriminator_hidden", g.discriminator_hidden.to_string(), "discriminator GRU width"),
        k("gan.checkpoint_every", g.checkpoint_every.to_string(), "iterations between checkpoints"),
        k("eval.samples", "256".into(), "generated trajectories per system"),
        k("eval.seed", "1".into(), "sampling seed for generation and evaluation"),
        k("eval.drift_gate", DRIFT_GATE_PERCENT.to_string(), "percent drift gate"),
        k("analyze.samples", "256".into(), "probe trajectories per system"),
        k("analyze.variance_threshold", d.variance_threshold.to_string(), "PCA variance fraction"),
        k("analyze.relative_activity", d.relative_activity.to_string(), "activity threshold relative to the maximum"),
        k("analyze.absolute_activity", String::new(), "absolute activity threshold; overrides the relative one"),
    ]
}

/// Effective configuration: every key mapped to its value.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            values: keys().into_iter().map(|k| (k.key.to_string(), k.default)).collect(),
        }
    }
}

impl RunConfig {
    /// Defaults, then `file`, then `overrides`.
    pub fn resolve(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut cfg = Self::default();
        if let Some(path) = file {
            if !path.exists() {
                return Err(Error::MissingArtifact(path.to_path_buf()));
            }
            cfg.apply_text(&fs::read_to_string(path)?)?;
        }
        for o in overrides {
            let (k, v) = split_pair(o)?;
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = split_pair(line).map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.to_string();
                Ok(())
            }
            None => Err(Error::Config(format!("unknown config key `{key}`"))),
        }
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("undeclared key {key}"))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: Display,
    {
        let v = self.raw(key);
        v.parse()
            .map_err(|e| Error::Config(format!("`{key} = {v}`: {e}")))
    }

    fn optional<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        if self.raw(key).is_empty() {
            Ok(None)
        } else {
            self.get(key).map(Some)
        }
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>>
    where
        T::Err: Display,
    {
        self.raw(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|e| Error::Config(format!("`{key}` entry `{s}`: {e}"))))
            .collect()
    }

    /// All keys and values, sorted.
    pub fn entries(&self) -> &BTreeMap<String, String> {
        &self.values
    }

    pub fn to_text(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn from_entries(entries: &BTreeMap<String, String>) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, v) in entries {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn seed(&self) -> Result<u64> {
        self.get("run.seed")
    }

    pub fn systems(&self) -> Result<Vec<SystemKind>> {
        let kinds: Vec<SystemKind> = self.list("dataset.systems")?;
        if kinds.is_empty() {
            return Err(Error::Config("dataset.systems is empty".into()));
        }
        Ok(kinds)
    }

    pub fn integrator(&self) -> Result<IntegratorConfig> {
        let c = IntegratorConfig {
            dt: self.get("dataset.dt")?,
            frames: self.get("dataset.frames")?,
            rtol: self.get("dataset.rtol")?,
            atol: self.get("dataset.atol")?,
            substeps: 1,
        };
        c.validate()?;
        Ok(c)
    }

    fn vary(&self) -> Result<Vec<ParamRange>> {
        self.raw("dataset.vary")
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                let parts: Vec<&str> = s.split(':').collect();
                let [name, lo, hi] = parts[..] else {
                    return Err(Error::Config(format!("`dataset.vary` entry `{s}` is not name:lo:hi")));
                };
                let num = |v: &str| {
                    v.parse::<f64>()
                        .map_err(|e| Error::Config(format!("`dataset.vary` entry `{s}`: {e}")))
                };
                Ok(ParamRange {
                    name: name.to_string(),
                    lo: num(lo)?,
                    hi: num(hi)?,
                })
            })
            .collect()
    }

    pub fn dataset_spec(&self) -> Result<DatasetSpec> {
        let count: usize = self.get("dataset.count")?;
        let vary = self.vary()?;
        let systems = self
            .systems()?
            .into_iter()
            .map(|kind| SystemSpec {
                kind,
                count,
                params: SystemParams::defaults(kind),
                vary: vary.clone(),
            })
            .collect();
        let mut spec = DatasetSpec::new(systems, self.seed()?);
        spec.integrator = self.integrator()?;
        spec.d_out = self.get("dataset.d_out")?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn hnn_system(&self) -> Result<Option<SystemKind>> {
        self.optional("hnn.system")
    }

    pub fn hnn_config(&self, integrator: IntegratorConfig) -> Result<HnnConfig> {
        Ok(HnnConfig {
            hidden: self.list("hnn.hidden")?,
            activation: self.get::<Activation>("hnn.activation")?,
            steps: self.get("hnn.steps")?,
            batch_size: self.get("hnn.batch_size")?,
            adam: AdamConfig::with_lr(self.get("hnn.lr")?),
            seed: self.seed()?,
            unroll: self.get("hnn.unroll")?,
            integrator,
            checkpoint_every: self.get("hnn.checkpoint_every")?,
        })
    }

    /// GAN settings for a dataset of `kinds` with the given frame layout.
    pub fn gan_config(&self, kinds: &[SystemKind], frames: usize, d_out: usize) -> Result<GanConfig> {
        let batch_size = match self.optional("gan.batch_size")? {
            Some(b) => b,
            None => kinds
                .iter()
                .map(|&k| crate::dataset::default_batch_size(k))
                .max()
                .unwrap_or(128),
        };
        let c = GanConfig {
            d_lat: self.get("gan.d_lat")?,
            d_cont: self.get("gan.d_cont")?,
            d_out,
            motion_noise_dim: self.get("gan.motion_noise_dim")?,
            frames,
            dt: self.get("gan.dt")?,
            substeps: self.get("gan.substeps")?,
            lambda_cyclic: self.get("gan.lambda_cyclic")?,
            lr_generator: self.get("gan.lr_generator")?,
            lr_discriminator: self.get("gan.lr_discriminator")?,
            beta1: self.get("gan.beta1")?,
            beta2: self.get("gan.beta2")?,
            iterations: self.get("gan.iterations")?,
            batch_size,
            seed: self.seed()?,
            d_steps: self.get("gan.d_steps")?,
            r1_gamma: self.get("gan.r1_gamma")?,
            map_hidden: self.list("gan.map_hidden")?,
            hnn_hidden: self.list("gan.hnn_hidden")?,
            hnn_activation: self.get("gan.hnn_activation")?,
            generator_hidden: self.get("gan.generator_hidden")?,
            discriminator_hidden: self.get("gan.discriminator_hidden")?,
            checkpoint_every: self.get("gan.checkpoint_every")?,
            ..GanConfig::default()
        };
        c.validate()?;
        Ok(c)
    }

    pub fn dimension_config(&self) -> Result<DimensionConfig> {
        Ok(DimensionConfig {
            variance_threshold: self.get("analyze.variance_threshold")?,
            relative_activity: self.get("analyze.relative_activity")?,
            absolute_activity: self.optional("analyze.absolute_activity")?,
        })
    }
}

fn split_pair(s: &str) -> Result<(&str, &str)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("expected `key = value`, got `{s}`")))?;
    Ok((k.trim(), v.trim()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_build_every_config() {
        let c = RunConfig::default();
        let spec = c.dataset_spec().unwrap();
        assert_eq!(spec.systems.len(), 1);
        assert_eq!(spec.integrator, IntegratorConfig::default());
        let g = c.gan_config(&[SystemKind::ThreeBody], 30, 10).unwrap();
        assert_eq!(g.batch_size, 160);
        assert_eq!(
            GanConfig {
                batch_size: 128,
                ..g
            },
            GanConfig::default()
        );
        assert_eq!(c.hnn_config(IntegratorConfig::default()).unwrap(), HnnConfig::default());
        assert_eq!(c.dimension_config().unwrap(), DimensionConfig::default());
    }

    #[test]
    fn overrides_win_over_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        fs::write(&path, "# comment\ngan.lambda_cyclic = 0.5\nrun.seed = 3 # trailing\n").unwrap();
        let c = RunConfig::resolve(Some(&path), &["gan.lambda_cyclic=0.25".into()]).unwrap();
        assert_eq!(c.get::<f64>("gan.lambda_cyclic").unwrap(), 0.25);
        assert_eq!(c.seed().unwrap(), 3);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(RunConfig::resolve(None, &["gan.nonsense=1".into()]).is_err());
        assert!(RunConfig::resolve(None, &["no-equals".into()]).is_err());
        let c = RunConfig::resolve(None, &["gan.d_lat=abc".into()]).unwrap();
        assert!(c.gan_config(&[SystemKind::Pendulum], 30, 10).is_err());
        let c = RunConfig::resolve(None, &["dataset.systems=quadruple-pendulum".into()]).unwrap();
        assert!(c.systems().is_err());
        let missing = Path::new("/nonexistent/run.cfg");
        assert!(matches!(RunConfig::resolve(Some(missing), &[]), Err(Error::MissingArtifact(_))));
    }

    #[test]
    fn text_round_trips() {
        let c = RunConfig::resolve(None, &["dataset.vary=m1:0.5:1.5,k:1:3".into()]).unwrap();
        let mut back = RunConfig::default();
        back.apply_text(&c.to_text()).unwrap();
        assert_eq!(back, c);
        let spec = back.dataset_spec().unwrap();
        assert_eq!(spec.systems[0].vary.len(), 2);
        assert_eq!(RunConfig::from_entries(c.entries()).unwrap(), c);
    }
}
