//! Time integration: adaptive Dormand-Prince RK45 for reference data,
//! leapfrog for Hamiltonian rollouts, explicit Euler as a drift baseline.

use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::systems::{analytic_vector_field, PhaseState, SystemKind, SystemParams};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    /// Output spacing in seconds.
    pub dt: f64,
    /// Number of output frames, including the initial state.
    pub frames: usize,
    pub rtol: f64,
    pub atol: f64,
    /// Leapfrog substeps per output frame.
    pub substeps: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            dt: 0.05,
            frames: 30,
            rtol: 1e-9,
            atol: 1e-9,
            substeps: 1,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if self.frames < 2 {
            return Err(Error::Config(format!("need at least 2 frames, got {}", self.frames)));
        }
        if self.substeps == 0 {
            return Err(Error::Config("substeps must be at least 1".into()));
        }
        if !(self.rtol > 0.0 && self.atol > 0.0) {
            return Err(Error::Config("tolerances must be positive".into()));
        }
        Ok(())
    }
}

// Dormand-Prince 5(4) tableau.
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
// fifth-order weights minus embedded fourth-order weights
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

const MAX_STEPS_PER_FRAME: usize = 100_000;

/// Integrates `dy/dt = field(y)` and returns the states at `0, dt, ...,
/// (frames - 1) dt`. Steps are clipped so every output time is hit exactly.
pub fn rk45_integrate<F>(mut field: F, y0: &[f64], config: &IntegratorConfig) -> Result<Vec<Vec<f64>>>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    config.validate()?;
    let n = y0.len();
    let mut out = Vec::with_capacity(config.frames);
    out.push(y0.to_vec());
    let mut y = y0.to_vec();
    let mut t = 0.0;
    let mut k1 = field(&y)?;
    let mut h = initial_step(&y, &k1, config);
    let mut k: [Vec<f64>; 7] = Default::default();
    let mut stage = vec![0.0; n];

    for frame in 1..config.frames {
        let t_end = frame as f64 * config.dt;
        let mut steps = 0;
        while t < t_end {
            steps += 1;
            if steps > MAX_STEPS_PER_FRAME {
                return Err(Error::StepUnderflow { t });
            }
            let remaining = t_end - t;
            let last = h >= remaining;
            let step = if last { remaining } else { h };
            if step < 1e-14 * t_end.max(1.0) {
                return Err(Error::StepUnderflow { t });
            }
            k[0].clone_from(&k1);
            for s in 1..7 {
                for i in 0..n {
                    let mut acc = 0.0;
                    for (j, kj) in k.iter().enumerate().take(s) {
                        acc += A[s][j] * kj[i];
                    }
                    stage[i] = y[i] + step * acc;
                }
                k[s] = field(&stage)?;
            }
            // stage 7 is evaluated at the fifth-order solution
            let y_new = stage.clone();
            let mut err = 0.0;
            for i in 0..n {
                let mut e = 0.0;
                for s in 0..7 {
                    e += E[s] * k[s][i];
                }
                let scale = config.atol + config.rtol * y[i].abs().max(y_new[i].abs());
                err += (step * e / scale).powi(2);
            }
            let err = (err / n.max(1) as f64).sqrt();
            if err <= 1.0 {
                t = if last { t_end } else { t + step };
                y = y_new;
                k1 = k[6].clone();
            }
            let factor = if err == 0.0 {
                5.0
            } else {
                (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
            };
            if !(err <= 1.0 && last) {
                h = step * factor;
            }
            if !h.is_finite() {
                return Err(Error::StepUnderflow { t });
            }
        }
        out.push(y.clone());
    }
    Ok(out)
}

fn initial_step(y: &[f64], f0: &[f64], config: &IntegratorConfig) -> f64 {
    let scale = |i: usize| config.atol + config.rtol * y[i].abs();
    let n = y.len().max(1) as f64;
    let d0 = (y.iter().enumerate().map(|(i, v)| (v / scale(i)).powi(2)).sum::<f64>() / n).sqrt();
    let d1 = (f0.iter().enumerate().map(|(i, v)| (v / scale(i)).powi(2)).sum::<f64>() / n).sqrt();
    let h = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    h.min(config.dt)
}

/// Reference trajectory of a benchmark system.
pub fn simulate(
    kind: SystemKind,
    params: &SystemParams,
    initial: &PhaseState,
    config: &IntegratorConfig,
) -> Result<Vec<PhaseState>> {
    let field = |y: &[f64]| -> Result<Vec<f64>> {
        let (dq, dp) = analytic_vector_field(kind, params, &PhaseState::from_flat(y))?;
        Ok([dq, dp].concat())
    };
    let ys = rk45_integrate(field, &initial.to_flat(), config)?;
    Ok(ys.iter().map(|y| PhaseState::from_flat(y)).collect())
}

/// Vector arithmetic needed by the leapfrog schemes, so they run both on
/// plain arrays and on tape variables.
pub trait PhaseVector: Clone {
    /// `self + a * x`
    fn axpy(&self, a: f64, x: &Self) -> Self;
}

impl PhaseVector for Vec<f64> {
    fn axpy(&self, a: f64, x: &Self) -> Self {
        self.iter().zip(x).map(|(s, v)| s + a * v).collect()
    }
}

impl<'t> PhaseVector for Var<'t> {
    fn axpy(&self, a: f64, x: &Self) -> Self {
        self.add(x.scale(a))
    }
}

/// Kick-drift-kick leapfrog for `H = T(p) + V(q)`.
pub fn leapfrog_step<V: PhaseVector>(
    dt_dp: impl Fn(&V) -> V,
    dv_dq: impl Fn(&V) -> V,
    q: &V,
    p: &V,
    dt: f64,
) -> (V, V) {
    let p_half = p.axpy(-0.5 * dt, &dv_dq(q));
    let q_next = q.axpy(dt, &dt_dp(&p_half));
    let p_next = p_half.axpy(-0.5 * dt, &dv_dq(&q_next));
    (q_next, p_next)
}

/// One step of the generalized leapfrog for a Hamiltonian that is not
/// necessarily separable.
///
/// `grad(q, p)` returns `(dH/dq, dH/dp)`. The implicit half-kick and drift of
/// the generalized Stormer-Verlet scheme are each resolved with a single
/// explicit correction, giving three gradient evaluations per step. For a
/// separable `H` the result matches [`leapfrog_step`] up to rounding.
///
/// Also returns `dH/dq` at the starting state.
pub fn generalized_leapfrog_step<V, G>(mut grad: G, q: &V, p: &V, dt: f64) -> Result<(V, V, V)>
where
    V: PhaseVector,
    G: FnMut(&V, &V) -> Result<(V, V)>,
{
    let (dq0, _) = grad(q, p)?;
    let p_pred = p.axpy(-0.5 * dt, &dq0);
    let (dq1, dp1) = grad(q, &p_pred)?;
    let p_half = p.axpy(-0.5 * dt, &dq1);
    let q_pred = q.axpy(dt, &dp1);
    let (dq2, dp2) = grad(&q_pred, &p_half)?;
    let q_next = q.axpy(0.5 * dt, &dp1).axpy(0.5 * dt, &dp2);
    let p_next = p_half.axpy(-0.5 * dt, &dq2);
    Ok((q_next, p_next, dq0))
}

/// Explicit Euler step on a flat state.
pub fn euler_step<F>(mut field: F, y: &[f64], dt: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let f = field(y)?;
    Ok(y.iter().zip(&f).map(|(a, b)| a + dt * b).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::hamiltonian;

    fn oscillator(y: &[f64]) -> Result<Vec<f64>> {
        // m = 0.5, k = 2
        Ok(vec![y[1] / 0.5, -2.0 * y[0]])
    }

    #[test]
    fn rk45_matches_closed_form_oscillator() {
        let cfg = IntegratorConfig::default();
        let ys = rk45_integrate(oscillator, &[1.0, 0.0], &cfg).unwrap();
        assert_eq!(ys.len(), 30);
        // omega = sqrt(k/m) = 2
        for (i, y) in ys.iter().enumerate() {
            let t = i as f64 * cfg.dt;
            assert!((y[0] - (2.0 * t).cos()).abs() < 1e-6, "frame {i}");
        }
    }

    #[test]
    fn rk45_zero_field_is_constant() {
        let ys = rk45_integrate(|y| Ok(vec![0.0; y.len()]), &[0.3, -1.0], &IntegratorConfig::default()).unwrap();
        assert!(ys.iter().all(|y| y == &vec![0.3, -1.0]));
    }

    #[test]
    fn small_angle_pendulum_period() {
        let kind = SystemKind::Pendulum;
        let prm = SystemParams::defaults(kind);
        let cfg = IntegratorConfig {
            dt: 0.01,
            frames: 600,
            ..Default::default()
        };
        let traj = simulate(kind, &prm, &PhaseState::new(vec![0.01], vec![0.0]), &cfg).unwrap();
        // first downward zero crossing happens at a quarter period
        let theta: Vec<f64> = traj.iter().map(|s| s.q[0]).collect();
        let i = theta.windows(2).position(|w| w[0] > 0.0 && w[1] <= 0.0).unwrap();
        let frac = theta[i] / (theta[i] - theta[i + 1]);
        let quarter = (i as f64 + frac) * cfg.dt;
        let expected = 2.0 * std::f64::consts::PI * (prm.length / prm.gravity).sqrt();
        assert!((4.0 * quarter - expected).abs() / expected < 0.01);
    }

    #[test]
    fn rk45_conserves_energy_on_all_systems() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for kind in SystemKind::ALL {
            let prm = SystemParams::defaults(kind);
            let s0 = crate::systems::sample_initial_condition(kind, &prm, &mut rng);
            let traj = simulate(kind, &prm, &s0, &IntegratorConfig::default()).unwrap();
            let e0 = hamiltonian(kind, &prm, &s0).unwrap();
            for s in &traj {
                let e = hamiltonian(kind, &prm, s).unwrap();
                assert!(((e - e0) / e0).abs() < 1e-6, "{kind}: {e} vs {e0}");
            }
        }
    }

    #[test]
    fn rk45_reports_collisions() {
        let kind = SystemKind::TwoBody;
        let prm = SystemParams::defaults(kind);
        // head-on fall from rest
        let s = PhaseState::new(vec![0.5, 0.0, -0.5, 0.0], vec![0.0; 4]);
        let cfg = IntegratorConfig {
            frames: 200,
            ..Default::default()
        };
        assert!(simulate(kind, &prm, &s, &cfg).is_err());
    }

    #[test]
    fn leapfrog_one_step_by_hand() {
        // H = p^2 / (2 * 0.5) + 0.5 * 2 q^2, from (1, 0)
        let dt = 0.05;
        let p_half = 0.0 - 0.5 * dt * (2.0 * 1.0);
        let q1 = 1.0 + dt * (p_half / 0.5);
        let p1 = p_half - 0.5 * dt * (2.0 * q1);
        let (q, p) = leapfrog_step(
            |p: &Vec<f64>| vec![p[0] / 0.5],
            |q: &Vec<f64>| vec![2.0 * q[0]],
            &vec![1.0],
            &vec![0.0],
            dt,
        );
        assert_eq!(q[0], q1);
        assert_eq!(p[0], p1);
    }

    #[test]
    fn leapfrog_zero_gradients_do_nothing() {
        let z = |v: &Vec<f64>| vec![0.0; v.len()];
        let (q, p) = leapfrog_step(z, z, &vec![0.4, 1.0], &vec![-2.0, 3.0], 0.05);
        assert_eq!(q, vec![0.4, 1.0]);
        assert_eq!(p, vec![-2.0, 3.0]);
    }

    #[test]
    fn leapfrog_is_time_reversible() {
        let dtp = |p: &Vec<f64>| vec![p[0] / 0.5];
        let dvq = |q: &Vec<f64>| vec![3.0 * q[0].sin()];
        let (q1, p1) = leapfrog_step(dtp, dvq, &vec![1.2], &vec![0.3], 0.05);
        let (q0, p0) = leapfrog_step(dtp, dvq, &q1, &p1, -0.05);
        assert!((q0[0] - 1.2).abs() < 1e-12 && (p0[0] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn generalized_leapfrog_reduces_to_leapfrog_when_separable() {
        let grad = |q: &Vec<f64>, p: &Vec<f64>| Ok((vec![3.0 * q[0].sin()], vec![p[0] / 0.5]));
        let (q, p, dq0) = generalized_leapfrog_step(grad, &vec![1.2], &vec![0.3], 0.05).unwrap();
        let (q2, p2) = leapfrog_step(
            |p: &Vec<f64>| vec![p[0] / 0.5],
            |q: &Vec<f64>| vec![3.0 * q[0].sin()],
            &vec![1.2],
            &vec![0.3],
            0.05,
        );
        assert!((q[0] - q2[0]).abs() < 1e-15 && (p[0] - p2[0]).abs() < 1e-15);
        assert_eq!(dq0, vec![3.0 * 1.2f64.sin()]);
    }

    #[test]
    fn generalized_leapfrog_is_second_order_on_nonseparable_h() {
        // H = (q^2 + p^2)(1 + q p / 4) / 2, integrated to t = 1
        let grad = |q: &Vec<f64>, p: &Vec<f64>| {
            let (q, p) = (q[0], p[0]);
            let r = q * q + p * p;
            let f = 1.0 + q * p / 4.0;
            Ok((vec![q * f + r * p / 8.0], vec![p * f + r * q / 8.0]))
        };
        let run = |n: usize| {
            let dt = 1.0 / n as f64;
            let (mut q, mut p) = (vec![0.8], vec![0.1]);
            for _ in 0..n {
                let (a, b, _) = generalized_leapfrog_step(grad, &q, &p, dt).unwrap();
                q = a;
                p = b;
            }
            (q[0], p[0])
        };
        let reference = run(1 << 14);
        let err = |n| {
            let (q, p) = run(n);
            (q - reference.0).hypot(p - reference.1)
        };
        let ratio = err(50) / err(100);
        assert!(ratio > 3.5 && ratio < 4.5, "ratio {ratio}");
    }

    #[test]
    fn euler_single_step() {
        let y = euler_step(|y| Ok(vec![y[1], 0.0]), &[0.0, 1.0], 0.05).unwrap();
        assert_eq!(y, vec![0.05, 1.0]);
        let y = euler_step(|y| Ok(vec![0.0; y.len()]), &[0.2, 0.1], 0.05).unwrap();
        assert_eq!(y, vec![0.2, 0.1]);
    }

    #[test]
    fn config_validation() {
        assert!(IntegratorConfig { dt: 0.0, ..Default::default() }.validate().is_err());
        assert!(IntegratorConfig { frames: 1, ..Default::default() }.validate().is_err());
    }
}
