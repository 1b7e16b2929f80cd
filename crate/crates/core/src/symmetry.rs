//! Latent-space diagnostics: per-coordinate momentum activity, which the
//! cyclic penalty drives to zero for ignorable coordinates, and the linear
//! dimension of the latent motion.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::dataset::condition_vector;
use crate::dataset::ParamBounds;
use crate::error::{Error, Result};
use crate::hnn::{hnn_vector_field, rollout, HnnModel};
use crate::integrators::IntegratorConfig;
use crate::spsgan::{mask_tensor, Generated, SpsGan};
use crate::systems::{PhaseState, SystemKind, SystemParams};

/// Minimum number of trajectories accepted by [`estimate_dimension`].
pub const MIN_TRAJECTORIES: usize = 100;

/// Total variance below this counts as a degenerate latent set.
const DEGENERATE_VARIANCE: f64 = 1e-24;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DimensionConfig {
    /// Fraction of variance the PCA dimension must explain.
    pub variance_threshold: f64,
    /// Activity threshold as a fraction of the largest coordinate activity.
    pub relative_activity: f64,
    /// Absolute activity threshold; overrides the relative one when set.
    pub absolute_activity: Option<f64>,
}

impl Default for DimensionConfig {
    fn default() -> Self {
        Self {
            variance_threshold: 0.95,
            relative_activity: 0.05,
            absolute_activity: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DimensionReport {
    /// Mean `|dp_i/dt|` per latent coordinate.
    pub activity: Vec<f64>,
    pub activity_threshold: f64,
    /// Number of coordinates whose activity exceeds the threshold.
    pub active_count: usize,
    /// PCA variances of the latent states, descending.
    pub spectrum: Vec<f64>,
    pub total_variance: f64,
    pub pca_dimension: usize,
    pub variance_threshold: f64,
    /// Headline latent dimension; equals `active_count`.
    pub dimension: usize,
    pub degenerate: bool,
}

impl DimensionReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }
}

/// Mean absolute value of each coordinate of `rates[sample][t][i]`.
pub fn mean_abs_rates(rates: &[Vec<Vec<f64>>]) -> Vec<f64> {
    let Some(d) = rates.iter().flatten().next().map(Vec::len) else {
        return Vec::new();
    };
    let mut acc = vec![0.0; d];
    let mut n = 0usize;
    for r in rates.iter().flatten() {
        for (a, v) in acc.iter_mut().zip(r) {
            *a += v.abs();
        }
        n += 1;
    }
    acc.iter_mut().for_each(|a| *a /= n as f64);
    acc
}

/// Per-coordinate momentum activity of the trained model on `n_samples`
/// rollouts under one condition.
pub fn momentum_activity(model: &SpsGan, cond: &[f64], mask: &[f64], n_samples: usize, seed: u64) -> Result<Vec<f64>> {
    Ok(mean_abs_rates(&probe(model, cond, mask, n_samples, seed)?.momentum_rates))
}

/// Momentum activity of a standalone learned Hamiltonian rolled out from
/// the given initial states.
pub fn hnn_momentum_activity(
    model: &HnnModel,
    initial: &[PhaseState],
    cond: &[f64],
    config: &IntegratorConfig,
) -> Result<Vec<f64>> {
    let mut rates = Vec::with_capacity(initial.len());
    for s0 in initial {
        let roll = rollout(model, s0, cond, config)?;
        let mut series = Vec::with_capacity(roll.states.len());
        for s in &roll.states {
            series.push(hnn_vector_field(model, s, cond)?.1);
        }
        rates.push(series);
    }
    Ok(mean_abs_rates(&rates))
}

/// Deterministic batch of generated trajectories for one condition.
pub fn probe(model: &SpsGan, cond: &[f64], mask: &[f64], n_samples: usize, seed: u64) -> Result<Generated> {
    if n_samples == 0 {
        return Err(Error::Config("n_samples must be positive".into()));
    }
    let conds = Tensor::from_rows(&vec![cond.to_vec(); n_samples]);
    let masks = mask_tensor(&vec![mask.to_vec(); n_samples]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    model.sample(&conds, &masks, &mut rng)
}

/// Condition and particle mask for a single system instance.
pub fn system_condition(kind: SystemKind, params: &SystemParams, bounds: &ParamBounds, d_out: usize) -> (Vec<f64>, Vec<f64>) {
    (condition_vector(kind, params, bounds), kind.mask(d_out))
}

/// PCA variances of a point cloud, descending.
pub fn pca_spectrum(points: &[Vec<f64>]) -> Vec<f64> {
    let Some(d) = points.first().map(Vec::len) else {
        return Vec::new();
    };
    let n = points.len() as f64;
    let mut mean = vec![0.0; d];
    for p in points {
        for (m, v) in mean.iter_mut().zip(p) {
            *m += v / n;
        }
    }
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for p in points {
        let c: Vec<f64> = p.iter().zip(&mean).map(|(v, m)| v - m).collect();
        for i in 0..d {
            for j in i..d {
                cov[(i, j)] += c[i] * c[j] / n;
            }
        }
    }
    for i in 0..d {
        for j in 0..i {
            cov[(i, j)] = cov[(j, i)];
        }
    }
    let mut spectrum: Vec<f64> = SymmetricEigen::new(cov).eigenvalues.iter().map(|v| v.max(0.0)).collect();
    spectrum.sort_by(|a, b| b.total_cmp(a));
    spectrum
}

/// Both dimension estimators over latent trajectories `latents[sample][t]`
/// with momentum rates `rates[sample][t][i]`.
pub fn estimate_dimension(
    latents: &[Vec<PhaseState>],
    rates: &[Vec<Vec<f64>>],
    config: &DimensionConfig,
) -> Result<DimensionReport> {
    if latents.len() < MIN_TRAJECTORIES {
        return Err(Error::Config(format!(
            "dimension estimation needs at least {MIN_TRAJECTORIES} trajectories, got {}",
            latents.len()
        )));
    }
    if rates.len() != latents.len() {
        return Err(Error::shape(
            "estimate_dimension",
            format!("{} rate series for {} trajectories", rates.len(), latents.len()),
        ));
    }
    let points: Vec<Vec<f64>> = latents.iter().flatten().map(PhaseState::to_flat).collect();
    let spectrum = pca_spectrum(&points);
    let total_variance: f64 = spectrum.iter().sum();
    let activity = mean_abs_rates(rates);
    let max_activity = activity.iter().fold(0.0f64, |m, v| m.max(*v));
    let activity_threshold = config
        .absolute_activity
        .unwrap_or(config.relative_activity * max_activity);
    let degenerate = total_variance <= DEGENERATE_VARIANCE || max_activity == 0.0;
    if degenerate {
        log::warn!("degenerate latent trajectories; reporting dimension 0");
    }
    let active_count = if degenerate {
        0
    } else {
        activity.iter().filter(|&&a| a > activity_threshold).count()
    };
    let pca_dimension = if total_variance <= DEGENERATE_VARIANCE {
        0
    } else {
        let mut acc = 0.0;
        let mut k = 0;
        for v in &spectrum {
            acc += v;
            k += 1;
            if acc >= config.variance_threshold * total_variance {
                break;
            }
        }
        k
    };
    Ok(DimensionReport {
        activity,
        activity_threshold,
        active_count,
        spectrum,
        total_variance,
        pca_dimension,
        variance_threshold: config.variance_threshold,
        dimension: active_count,
        degenerate,
    })
}

/// Dimension report for a trained model under one condition.
pub fn analyze(
    model: &SpsGan,
    cond: &[f64],
    mask: &[f64],
    n_samples: usize,
    seed: u64,
    config: &DimensionConfig,
) -> Result<DimensionReport> {
    let g = probe(model, cond, mask, n_samples, seed)?;
    estimate_dimension(&g.latents, &g.momentum_rates, config)
}

/// Writes latent states as CSV `sample,t,q_1..q_d,p_1..p_d`.
pub fn write_latent_csv(latents: &[Vec<PhaseState>], path: &Path) -> Result<()> {
    let d = latents
        .iter()
        .flatten()
        .next()
        .map_or(0, |s| s.q.len());
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    let mut header = vec!["sample".to_string(), "t".to_string()];
    header.extend((1..=d).map(|i| format!("q_{i}")));
    header.extend((1..=d).map(|i| format!("p_{i}")));
    writeln!(out, "{}", header.join(","))?;
    for (i, traj) in latents.iter().enumerate() {
        for (t, s) in traj.iter().enumerate() {
            let mut line = format!("{i},{t}");
            for v in s.q.iter().chain(&s.p) {
                line.push(',');
                line.push_str(&v.to_string());
            }
            writeln!(out, "{line}")?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Samples `n_samples` latent trajectories and writes them as CSV.
pub fn export_latent_csv(model: &SpsGan, cond: &[f64], mask: &[f64], n_samples: usize, seed: u64, path: &Path) -> Result<()> {
    write_latent_csv(&probe(model, cond, mask, n_samples, seed)?.latents, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hnn::quadratic_hnn;
    use crate::spsgan::GanConfig;
    use rand::Rng;
    use rand_distr::StandardNormal;
    use std::f64::consts::TAU;

    fn circle_latents(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<PhaseState>> {
        // points on a circle in the (q_1, p_1) plane of a d + d latent space
        (0..n)
            .map(|_| {
                let a0 = rng.random_range(0.0..TAU);
                (0..30)
                    .map(|t| {
                        let a = a0 + 0.05 * t as f64;
                        let mut q = vec![0.0; d];
                        let mut p = vec![0.0; d];
                        q[0] = a.cos();
                        p[0] = a.sin();
                        PhaseState::new(q, p)
                    })
                    .collect()
            })
            .collect()
    }

    fn rates_on(latents: &[Vec<PhaseState>], f: impl Fn(&PhaseState) -> Vec<f64>) -> Vec<Vec<Vec<f64>>> {
        latents.iter().map(|tr| tr.iter().map(&f).collect()).collect()
    }

    #[test]
    fn circle_has_pca_dimension_two_and_one_active_coordinate() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let latents = circle_latents(120, 20, &mut rng);
        // harmonic motion in (q_1, p_1): dp_1/dt = -q_1
        let rates = rates_on(&latents, |s| {
            let mut r = vec![0.0; 20];
            r[0] = -s.q[0];
            r
        });
        let rep = estimate_dimension(&latents, &rates, &DimensionConfig::default()).unwrap();
        assert_eq!(rep.pca_dimension, 2);
        assert_eq!(rep.dimension, 1);
        assert_eq!(rep.spectrum.len(), 40);
        assert!(rep.spectrum.windows(2).all(|w| w[0] >= w[1]));
        assert!(rep.spectrum.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn gaussian_latents_fill_the_space() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = 4;
        let latents: Vec<Vec<PhaseState>> = (0..200)
            .map(|_| {
                (0..30)
                    .map(|_| {
                        let mut v = || (0..d).map(|_| rng.sample(StandardNormal)).collect::<Vec<f64>>();
                        PhaseState::new(v(), v())
                    })
                    .collect()
            })
            .collect();
        let rates = rates_on(&latents, |s| s.q.clone());
        let rep = estimate_dimension(&latents, &rates, &DimensionConfig::default()).unwrap();
        assert!(rep.pca_dimension >= 2 * d - 1, "{}", rep.pca_dimension);
        assert_eq!(rep.dimension, d);
        let total: f64 = rep.spectrum.iter().sum();
        assert!((total - rep.total_variance).abs() < 1e-12);
    }

    #[test]
    fn constant_latents_have_dimension_zero() {
        let latents = vec![vec![PhaseState::new(vec![0.3; 3], vec![-1.0; 3]); 30]; 100];
        let rates = rates_on(&latents, |_| vec![0.0; 3]);
        let rep = estimate_dimension(&latents, &rates, &DimensionConfig::default()).unwrap();
        assert!(rep.degenerate);
        assert_eq!(rep.dimension, 0);
        assert_eq!(rep.pca_dimension, 0);
    }

    #[test]
    fn too_few_trajectories_are_rejected() {
        let latents = vec![vec![PhaseState::new(vec![0.0], vec![0.0]); 3]; 10];
        let rates = rates_on(&latents, |_| vec![0.0]);
        assert!(estimate_dimension(&latents, &rates, &DimensionConfig::default()).is_err());
    }

    #[test]
    fn spectrum_is_rotation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = 6;
        let points: Vec<Vec<f64>> = (0..500)
            .map(|_| (0..d).map(|i| rng.sample::<f64, _>(StandardNormal) * (i + 1) as f64).collect())
            .collect();
        let a = DMatrix::<f64>::from_fn(d, d, |_, _| rng.sample(StandardNormal));
        let q = a.qr().q();
        let rotated: Vec<Vec<f64>> = points
            .iter()
            .map(|p| (&q * nalgebra::DVector::from_column_slice(p)).iter().copied().collect())
            .collect();
        let s1 = pca_spectrum(&points);
        let s2 = pca_spectrum(&rotated);
        for (x, y) in s1.iter().zip(&s2) {
            assert!((x - y).abs() < 1e-10, "{x} vs {y}");
        }
    }

    #[test]
    fn cyclic_hamiltonian_has_zero_activity() {
        // H = (p_1^2 + p_2^2) / 2 is independent of q
        let model = quadratic_hnn(&[0.0, 0.0], &[1.0, 1.0], 0);
        let init = vec![PhaseState::new(vec![0.2, -0.4], vec![1.0, 0.5])];
        let act = hnn_momentum_activity(&model, &init, &[], &IntegratorConfig::default()).unwrap();
        assert_eq!(act, vec![0.0, 0.0]);
    }

    #[test]
    fn quadratic_in_first_coordinate_concentrates_activity() {
        let model = quadratic_hnn(&[1.0, 0.0, 0.0], &[1.0, 1.0, 1.0], 0);
        let init = vec![PhaseState::new(vec![0.5, 0.5, 0.5], vec![0.1, 0.2, 0.3])];
        let act = hnn_momentum_activity(&model, &init, &[], &IntegratorConfig::default()).unwrap();
        assert!(act[0] > 0.1);
        assert_eq!(&act[1..], &[0.0, 0.0]);
    }

    fn tiny_model() -> SpsGan {
        let config = GanConfig {
            d_lat: 3,
            d_cont: 2,
            d_out: 4,
            motion_noise_dim: 6,
            frames: 30,
            map_hidden: vec![8],
            hnn_hidden: vec![8],
            generator_hidden: 8,
            discriminator_hidden: 4,
            ..GanConfig::default()
        };
        SpsGan::new(config, &mut ChaCha8Rng::seed_from_u64(0)).unwrap()
    }

    #[test]
    fn latent_csv_shape_and_reproducibility() {
        let model = tiny_model();
        let cond = vec![0.0; model.config.cond_dim];
        let mask = SystemKind::Pendulum.mask(4);
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
        export_latent_csv(&model, &cond, &mask, 2, 7, &a).unwrap();
        export_latent_csv(&model, &cond, &mask, 2, 7, &b).unwrap();
        let text = fs::read_to_string(&a).unwrap();
        assert_eq!(text, fs::read_to_string(&b).unwrap());
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 61);
        assert_eq!(lines.iter().filter(|l| l.starts_with("sample")).count(), 1);
        assert_eq!(lines[0].split(',').count(), 2 + 6);
        assert!(lines[1..].iter().all(|l| l.split(',').count() == 8));
    }

    #[test]
    fn trained_shape_activities_are_nonnegative() {
        let model = tiny_model();
        let cond = vec![0.0; model.config.cond_dim];
        let act = momentum_activity(&model, &cond, &SystemKind::Pendulum.mask(4), 4, 1).unwrap();
        assert_eq!(act.len(), 3);
        assert!(act.iter().all(|&a| a >= 0.0));
        let rep = analyze(&model, &cond, &SystemKind::Pendulum.mask(4), 100, 1, &DimensionConfig::default()).unwrap();
        assert!(rep.dimension <= 3);
        let back: DimensionReport = serde_json::from_str(&rep.to_json().unwrap()).unwrap();
        assert_eq!(back, rep);
    }
}
