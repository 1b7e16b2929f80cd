//! Trajectory-level evaluation: prediction error against the true dynamics,
//! energy drift from finite-difference momenta, and reduction oracles for
//! the two- and three-body systems.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrators::{simulate, IntegratorConfig};
use crate::systems::{
    generalized_coordinates, hamiltonian, is_angle, momenta_from_velocities, to_cartesian_padded, unwrap_angles,
    CartesianFrame, PhaseState, SystemKind, SystemParams,
};

/// Energies below this magnitude switch drift reporting to absolute units.
pub const ENERGY_FLOOR: f64 = 1e-12;

/// Default pass gate on the maximum percent drift of one trajectory.
pub const DRIFT_GATE_PERCENT: f64 = 5.0;

/// Relative pendulum radius error tolerated before a projection warning.
const RADIUS_TOLERANCE: f64 = 0.05;

/// Triangle side spread above which the homographic oracle is not applied.
const SHAPE_LIMIT: f64 = 0.10;

/// Frames of one trajectory, row-major `[frame][particle][coordinate]`.
#[derive(Clone, Copy, Debug)]
pub struct Frames<'a> {
    pub data: &'a [f64],
    pub d_out: usize,
    pub dt: f64,
}

impl<'a> Frames<'a> {
    pub fn new(data: &'a [f64], d_out: usize, dt: f64) -> Result<Self> {
        if d_out == 0 || !data.len().is_multiple_of(2 * d_out) {
            return Err(Error::shape(
                "frames",
                format!("{} values do not split into frames of width {}", data.len(), 2 * d_out),
            ));
        }
        if !(dt > 0.0) {
            return Err(Error::Config(format!("dt must be positive, got {dt}")));
        }
        Ok(Self { data, d_out, dt })
    }

    pub fn len(&self) -> usize {
        self.data.len() / (2 * self.d_out)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn frame(&self, t: usize) -> CartesianFrame {
        let w = 2 * self.d_out;
        CartesianFrame {
            xy: self.data[t * w..(t + 1) * w].to_vec(),
            active: self.d_out,
        }
    }

    pub fn position(&self, t: usize, particle: usize) -> (f64, f64) {
        let i = t * 2 * self.d_out + 2 * particle;
        (self.data[i], self.data[i + 1])
    }

    fn need(&self, frames: usize, particles: usize, op: &'static str) -> Result<()> {
        if self.len() < frames {
            return Err(Error::shape(op, format!("needs at least {frames} frames, got {}", self.len())));
        }
        if particles > self.d_out {
            return Err(Error::shape(op, format!("needs {particles} particle slots, got {}", self.d_out)));
        }
        Ok(())
    }
}

/// Mean squared difference over all entries.
pub fn mse(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::shape("mse", format!("lengths {} and {}", a.len(), b.len())));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64)
}

/// First derivative with second-order central differences and second-order
/// one-sided endpoints.
pub fn derivative2(f: &[f64], dt: f64) -> Vec<f64> {
    let n = f.len();
    assert!(n >= 3, "need at least 3 samples");
    (0..n)
        .map(|i| match i {
            0 => (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * dt),
            i if i == n - 1 => (3.0 * f[i] - 4.0 * f[i - 1] + f[i - 2]) / (2.0 * dt),
            i => (f[i + 1] - f[i - 1]) / (2.0 * dt),
        })
        .collect()
}

/// Weights of the `m`-th derivative at 0 from samples at integer `offsets`
/// (Fornberg's recursion).
fn stencil_weights(offsets: &[f64], m: usize) -> Vec<f64> {
    let n = offsets.len();
    let mut c = vec![vec![0.0; m + 1]; n];
    c[0][0] = 1.0;
    let mut c1 = 1.0;
    let mut c4 = offsets[0];
    for i in 1..n {
        let mn = i.min(m);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = offsets[i];
        for j in 0..i {
            let c3 = offsets[i] - offsets[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.into_iter().map(|row| row[m]).collect()
}

/// First derivative of uniformly spaced samples with `accuracy`-order
/// stencils of `accuracy + 1` points, centered where possible and shifted
/// inward at the ends.
pub fn derivative(f: &[f64], dt: f64, accuracy: usize) -> Vec<f64> {
    let n = f.len();
    let w = accuracy + 1;
    assert!(accuracy.is_multiple_of(2) && accuracy > 0, "accuracy must be even and positive");
    assert!(n >= w, "need at least {w} samples");
    (0..n)
        .map(|i| {
            let start = i.saturating_sub(accuracy / 2).min(n - w);
            let offsets: Vec<f64> = (start..start + w).map(|k| k as f64 - i as f64).collect();
            let weights = stencil_weights(&offsets, 1);
            weights.iter().zip(&f[start..start + w]).map(|(a, b)| a * b).sum::<f64>() / dt
        })
        .collect()
}

/// First derivative with fourth-order stencils throughout.
pub fn derivative4(f: &[f64], dt: f64) -> Vec<f64> {
    derivative(f, dt, 4)
}

/// Second derivative with the fourth-order central stencil at interior
/// points `2..n-2`.
pub fn second_derivative4(f: &[f64], dt: f64) -> Vec<f64> {
    (2..f.len().saturating_sub(2))
        .map(|i| (-f[i + 2] + 16.0 * f[i + 1] - 30.0 * f[i] + 16.0 * f[i - 1] - f[i - 2]) / (12.0 * dt * dt))
        .collect()
}

/// Generalized coordinates per frame, angles unwrapped along time.
fn coordinate_series(kind: SystemKind, frames: &Frames) -> Vec<Vec<f64>> {
    let qs: Vec<Vec<f64>> = (0..frames.len())
        .map(|t| generalized_coordinates(kind, &frames.frame(t)))
        .collect();
    let dof = kind.dof();
    let mut cols: Vec<Vec<f64>> = (0..dof).map(|i| qs.iter().map(|q| q[i]).collect()).collect();
    for (i, c) in cols.iter_mut().enumerate() {
        if is_angle(kind, i) {
            unwrap_angles(c);
        }
    }
    cols
}

fn radius_error(kind: SystemKind, params: &SystemParams, frame: &CartesianFrame) -> f64 {
    let l = params.length;
    let rel = |x: f64, y: f64| ((x.hypot(y) - l) / l).abs();
    match kind {
        SystemKind::Pendulum => {
            let (x, y) = frame.position(0);
            rel(x, y)
        }
        SystemKind::DoublePendulum => {
            let (x1, y1) = frame.position(0);
            let (x2, y2) = frame.position(1);
            rel(x1, y1).max(rel(x2 - x1, y2 - y1))
        }
        _ => 0.0,
    }
}

/// Energy drift series of one trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyDrift {
    /// `100 (E_t - E_0) / |E_0|`, or `E_t - E_0` when `absolute`.
    pub drift: Vec<f64>,
    pub energy: Vec<f64>,
    /// Set when `|E_0|` is below [`ENERGY_FLOOR`].
    pub absolute: bool,
}

impl EnergyDrift {
    pub fn max_abs(&self) -> f64 {
        self.drift.iter().fold(0.0, |m, d| m.max(d.abs()))
    }
}

/// Energy along a trajectory with momenta from central differences of the
/// recovered generalized coordinates.
pub fn energy_drift(frames: &Frames, kind: SystemKind, params: &SystemParams) -> Result<EnergyDrift> {
    frames.need(3, kind.particles(), "energy_drift")?;
    let cols = coordinate_series(kind, frames);
    let vels: Vec<Vec<f64>> = cols.iter().map(|c| derivative2(c, frames.dt)).collect();
    let mut energy = Vec::with_capacity(frames.len());
    for t in 0..frames.len() {
        let q: Vec<f64> = cols.iter().map(|c| c[t]).collect();
        let qdot: Vec<f64> = vels.iter().map(|v| v[t]).collect();
        let p = momenta_from_velocities(kind, params, &q, &qdot);
        energy.push(hamiltonian(kind, params, &PhaseState::new(q, p))?);
    }
    let e0 = energy[0];
    let absolute = e0.abs() < ENERGY_FLOOR;
    if absolute {
        log::warn!("|E0| = {e0:e} below {ENERGY_FLOOR:e}; reporting absolute drift");
    }
    let drift = energy
        .iter()
        .map(|e| if absolute { e - e0 } else { 100.0 * (e - e0) / e0.abs() })
        .collect();
    Ok(EnergyDrift {
        drift,
        energy,
        absolute,
    })
}

/// Prediction error of one trajectory against the true dynamics started
/// from its first frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMse {
    pub mse: f64,
    /// Reconstructed initial phase state.
    pub initial: PhaseState,
    /// Reference trajectory in the layout of the input.
    pub reference: Vec<f64>,
    /// Whether frames had to be projected onto the pendulum constraint.
    pub projected: bool,
}

fn generalized_at(kind: SystemKind, params: &SystemParams, s: &PhaseState, d_out: usize, near: &[f64]) -> Vec<f64> {
    let mut q = generalized_coordinates(kind, &to_cartesian_padded(kind, params, s, d_out));
    for (i, v) in q.iter_mut().enumerate() {
        if is_angle(kind, i) {
            let mut pair = [near[i], *v];
            unwrap_angles(&mut pair);
            *v = pair[1];
        }
    }
    q
}

/// Newton refinement of `p0` so that one simulated frame lands on `q1`.
fn shoot(kind: SystemKind, params: &SystemParams, q0: &[f64], p0: Vec<f64>, q1: &[f64], dt: f64, d_out: usize) -> Vec<f64> {
    let cfg = IntegratorConfig {
        dt,
        frames: 2,
        ..IntegratorConfig::default()
    };
    let residual = |p: &[f64]| -> Option<Vec<f64>> {
        let s0 = PhaseState::new(q0.to_vec(), p.to_vec());
        let states = simulate(kind, params, &s0, &cfg).ok()?;
        let q = generalized_at(kind, params, &states[1], d_out, q1);
        Some(q.iter().zip(q1).map(|(a, b)| a - b).collect())
    };
    let norm = |r: &[f64]| r.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut p = p0;
    let Some(mut r) = residual(&p) else { return p };
    let n = p.len();
    for _ in 0..30 {
        if norm(&r) < 1e-13 {
            break;
        }
        let mut jac = nalgebra::DMatrix::zeros(n, n);
        for j in 0..n {
            let h = 1e-6 * (1.0 + p[j].abs());
            let mut pp = p.clone();
            pp[j] += h;
            let mut pm = p.clone();
            pm[j] -= h;
            let (Some(rp), Some(rm)) = (residual(&pp), residual(&pm)) else { return p };
            for i in 0..n {
                jac[(i, j)] = (rp[i] - rm[i]) / (2.0 * h);
            }
        }
        let Some(step) = jac.lu().solve(&nalgebra::DVector::from_column_slice(&r)) else { break };
        let cand: Vec<f64> = p.iter().zip(step.iter()).map(|(a, d)| a - d).collect();
        match residual(&cand) {
            Some(rc) if norm(&rc) < norm(&r) => {
                p = cand;
                r = rc;
            }
            _ => break,
        }
    }
    p
}

/// Reconstructs an initial state from the first two frames, simulates the
/// true system for as many frames and returns the mean squared error over
/// the active particle coordinates.
///
/// Positions come from frame 0; the initial momentum starts from the forward
/// difference of frames 0 and 1 and is refined by shooting so that the
/// simulated first step reproduces frame 1.
pub fn trajectory_mse(frames: &Frames, kind: SystemKind, params: &SystemParams) -> Result<TrajectoryMse> {
    frames.need(2, kind.particles(), "trajectory_mse")?;
    if !frames.data.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidState("non-finite generated frames".into()));
    }
    let f0 = frames.frame(0);
    let f1 = frames.frame(1);
    let projected = radius_error(kind, params, &f0).max(radius_error(kind, params, &f1)) > RADIUS_TOLERANCE;
    if projected {
        log::debug!("{kind}: frames off the constraint circle, projecting onto it");
    }
    let q0 = generalized_coordinates(kind, &f0);
    let mut q1 = generalized_coordinates(kind, &f1);
    for (i, v) in q1.iter_mut().enumerate() {
        if is_angle(kind, i) {
            let mut pair = [q0[i], *v];
            unwrap_angles(&mut pair);
            *v = pair[1];
        }
    }
    let qdot: Vec<f64> = q0.iter().zip(&q1).map(|(a, b)| (b - a) / frames.dt).collect();
    let p_guess = momenta_from_velocities(kind, params, &q0, &qdot);
    let p0 = shoot(kind, params, &q0, p_guess, &q1, frames.dt, frames.d_out);
    let initial = PhaseState::new(q0, p0);
    let cfg = IntegratorConfig {
        dt: frames.dt,
        frames: frames.len(),
        ..IntegratorConfig::default()
    };
    let states = simulate(kind, params, &initial, &cfg)?;
    let mut reference = Vec::with_capacity(frames.data.len());
    for s in &states {
        reference.extend(to_cartesian_padded(kind, params, s, frames.d_out).xy);
    }
    let active = 2 * kind.particles();
    let w = 2 * frames.d_out;
    let pick = |v: &[f64]| -> Vec<f64> { v.chunks(w).flat_map(|row| row[..active].to_vec()).collect() };
    let mse = mse(&pick(frames.data), &pick(&reference))?;
    Ok(TrajectoryMse {
        mse,
        initial,
        reference,
        projected,
    })
}

/// Radial-equation residuals of a two-body trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadialResidual {
    /// `|rdot^2 - (2/mu)(E - V_eff(r))|` per frame; `None` for excluded frames.
    pub residual: Vec<Option<f64>>,
    pub reduced_mass: f64,
    pub energy: f64,
    pub angular_momentum: f64,
    /// `max_t |L_t - L| / |L|`.
    pub angular_momentum_variation: f64,
}

impl RadialResidual {
    pub fn max(&self) -> f64 {
        self.residual.iter().flatten().fold(0.0, |m, r| m.max(*r))
    }
}

/// Frames whose separation falls below this are excluded from the oracles.
const NEAR_COLLISION: f64 = 1e-3;

/// Checks the reduced radial equation of the relative motion, with `E` and
/// `L` averaged over frames and velocities from sixth-order differences.
pub fn two_body_radial_residual(frames: &Frames, params: &SystemParams) -> Result<RadialResidual> {
    frames.need(7, 2, "two_body_radial_residual")?;
    let (m1, m2) = (params.masses[0], params.masses[1]);
    let mu = m1 * m2 / (m1 + m2);
    let n = frames.len();
    let (mut rx, mut ry) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for t in 0..n {
        let (x1, y1) = frames.position(t, 0);
        let (x2, y2) = frames.position(t, 1);
        rx.push(x1 - x2);
        ry.push(y1 - y2);
    }
    let (vx, vy) = (derivative(&rx, frames.dt, 6), derivative(&ry, frames.dt, 6));
    let potential = |r: f64| -params.grav_const * m1 * m2 / r;
    let r: Vec<f64> = rx.iter().zip(&ry).map(|(x, y)| x.hypot(*y)).collect();
    let ok: Vec<bool> = r.iter().map(|&d| d > NEAR_COLLISION).collect();
    let kept = ok.iter().filter(|&&k| k).count();
    if kept == 0 {
        return Err(Error::InvalidState("every frame is a near collision".into()));
    }
    let (mut e_sum, mut l_sum) = (0.0, 0.0);
    let mut ls = vec![0.0; n];
    for t in 0..n {
        ls[t] = mu * (rx[t] * vy[t] - ry[t] * vx[t]);
        if ok[t] {
            e_sum += 0.5 * mu * (vx[t] * vx[t] + vy[t] * vy[t]) + potential(r[t]);
            l_sum += ls[t];
        }
    }
    let (energy, l) = (e_sum / kept as f64, l_sum / kept as f64);
    let scale = l.abs().max(ENERGY_FLOOR);
    let angular_momentum_variation = (0..n)
        .filter(|&t| ok[t])
        .fold(0.0, |m: f64, t| m.max((ls[t] - l).abs() / scale));
    let residual = (0..n)
        .map(|t| {
            ok[t].then(|| {
                let rdot = (rx[t] * vx[t] + ry[t] * vy[t]) / r[t];
                let v_eff = l * l / (2.0 * mu * r[t] * r[t]) + potential(r[t]);
                (rdot * rdot - 2.0 / mu * (energy - v_eff)).abs()
            })
        })
        .collect();
    Ok(RadialResidual {
        residual,
        reduced_mass: mu,
        energy,
        angular_momentum: l,
        angular_momentum_variation,
    })
}

/// Oracle outcome for a three-body trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Homographic {
    /// Residuals of `r'' = -lambda / r^2 + omega^2 / r^3` at interior frames
    /// `2..T-2`.
    Residual {
        residual: Vec<f64>,
        scale: Vec<f64>,
        omega: f64,
        lambda: f64,
        shape_deviation: f64,
    },
    /// The triangle left the equilateral family; only its shape spread is
    /// reported.
    ShapeDeviation { shape_deviation: Vec<f64> },
}

impl Homographic {
    pub fn max_residual(&self) -> Option<f64> {
        match self {
            Homographic::Residual { residual, .. } => Some(residual.iter().fold(0.0, |m, r| m.max(*r))),
            Homographic::ShapeDeviation { .. } => None,
        }
    }
}

/// `(max side - min side) / mean side` of each frame's triangle.
pub fn triangle_shape_deviation(frames: &Frames) -> Result<Vec<f64>> {
    frames.need(1, 3, "triangle_shape_deviation")?;
    Ok((0..frames.len())
        .map(|t| {
            let p: Vec<(f64, f64)> = (0..3).map(|i| frames.position(t, i)).collect();
            let side = |a: usize, b: usize| (p[a].0 - p[b].0).hypot(p[a].1 - p[b].1);
            let s = [side(0, 1), side(1, 2), side(2, 0)];
            let mean = s.iter().sum::<f64>() / 3.0;
            let (lo, hi) = s.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            if mean > 0.0 { (hi - lo) / mean } else { f64::INFINITY }
        })
        .collect())
}

/// Checks the reduced scale equation of homographic three-body motion. The
/// scale `r` is the mean distance of the bodies from their center of mass;
/// `lambda` follows from the gravitational forces of each frame and `omega`
/// is `r^2` times the rotation rate, averaged over frames.
pub fn three_body_homographic_residual(frames: &Frames, params: &SystemParams) -> Result<Homographic> {
    frames.need(5, 3, "three_body_homographic_residual")?;
    let shape = triangle_shape_deviation(frames)?;
    let worst = shape.iter().fold(0.0f64, |m, v| m.max(*v));
    if !(worst <= SHAPE_LIMIT) {
        log::warn!("triangle shape spread {worst:.3} exceeds {SHAPE_LIMIT}; reporting shape deviation");
        return Ok(Homographic::ShapeDeviation { shape_deviation: shape });
    }
    let m = &params.masses;
    let total: f64 = m.iter().sum();
    let n = frames.len();
    let mut scale = Vec::with_capacity(n);
    let mut phase = Vec::with_capacity(n);
    let mut lambdas = Vec::with_capacity(n);
    for t in 0..n {
        let p: Vec<(f64, f64)> = (0..3).map(|i| frames.position(t, i)).collect();
        let cx = (0..3).map(|i| m[i] * p[i].0).sum::<f64>() / total;
        let cy = (0..3).map(|i| m[i] * p[i].1).sum::<f64>() / total;
        let rel: Vec<(f64, f64)> = p.iter().map(|&(x, y)| (x - cx, y - cy)).collect();
        let r = rel.iter().map(|&(x, y)| x.hypot(y)).sum::<f64>() / 3.0;
        // homographic motion has accelerations -lambda q_j / r^3 about the
        // center of mass; project the true forces onto that form
        let (mut work, mut inertia) = (0.0, 0.0);
        for i in 0..3 {
            let (mut fx, mut fy) = (0.0, 0.0);
            for j in 0..3 {
                if i != j {
                    let (dx, dy) = (p[j].0 - p[i].0, p[j].1 - p[i].1);
                    let d3 = dx.hypot(dy).powi(3);
                    fx += params.grav_const * m[i] * m[j] * dx / d3;
                    fy += params.grav_const * m[i] * m[j] * dy / d3;
                }
            }
            work += rel[i].0 * fx + rel[i].1 * fy;
            inertia += m[i] * (rel[i].0.powi(2) + rel[i].1.powi(2));
        }
        lambdas.push(-r.powi(3) * work / inertia);
        scale.push(r);
        phase.push(rel[0].1.atan2(rel[0].0));
    }
    unwrap_angles(&mut phase);
    let rate = derivative4(&phase, frames.dt);
    let omega = scale.iter().zip(&rate).map(|(r, w)| r * r * w).sum::<f64>() / n as f64;
    let lambda = lambdas.iter().sum::<f64>() / n as f64;
    let accel = second_derivative4(&scale, frames.dt);
    let residual = accel
        .iter()
        .enumerate()
        .map(|(k, a)| {
            let r = scale[k + 2];
            (a + lambda / (r * r) - omega * omega / r.powi(3)).abs()
        })
        .collect();
    Ok(Homographic::Residual {
        residual,
        scale,
        omega,
        lambda,
        shape_deviation: worst,
    })
}

/// Aggregate metrics for a set of trajectories of one system.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemEval {
    pub system: SystemKind,
    pub trajectories: usize,
    /// Trajectories that could not be scored (non-finite or unsimulable).
    pub failures: usize,
    /// Mean prediction MSE over scored trajectories.
    pub mse: Option<f64>,
    pub mse_std: Option<f64>,
    /// Maximum `|drift|` of each scored trajectory.
    pub max_abs_drift: Vec<f64>,
    /// Trajectories whose drift is reported in absolute units.
    pub drift_absolute: usize,
    /// Trajectories projected onto the pendulum constraint before scoring.
    pub projected: usize,
    /// Fraction of all trajectories with maximum drift within the gate.
    pub drift_within_gate: f64,
    pub drift_gate_percent: f64,
    pub radial_residual_max: Option<f64>,
    pub angular_momentum_variation: Option<f64>,
    pub homographic_residual_max: Option<f64>,
    pub shape_deviation_max: Option<f64>,
}

/// Evaluation output for one or more systems.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub systems: Vec<SystemEval>,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn system(&self, kind: SystemKind) -> Option<&SystemEval> {
        self.systems.iter().find(|s| s.system == kind)
    }
}

/// One trajectory to score: flat frames plus the parameters it was
/// generated under.
#[derive(Clone, Debug)]
pub struct Scored<'a> {
    pub frames: &'a [f64],
    pub params: SystemParams,
}

/// Scores every trajectory and aggregates. Trajectories that fail the MSE
/// protocol are counted as failures and excluded from the averages.
pub fn evaluate_system(kind: SystemKind, items: &[Scored], d_out: usize, dt: f64, gate: f64) -> Result<SystemEval> {
    let mut mses = Vec::new();
    let mut drifts = Vec::new();
    let mut absolute = 0;
    let mut within = 0;
    let mut failures = 0;
    let mut projected = 0;
    let mut radial: Option<(f64, f64)> = None;
    let mut homographic: Option<f64> = None;
    let mut shape: Option<f64> = None;
    let fold_max = |acc: Option<f64>, v: f64| Some(acc.map_or(v, |a: f64| a.max(v)));
    for item in items {
        let frames = Frames::new(item.frames, d_out, dt)?;
        let scored = trajectory_mse(&frames, kind, &item.params).and_then(|m| {
            let d = energy_drift(&frames, kind, &item.params)?;
            Ok((m, d))
        });
        let (m, d) = match scored {
            Ok(v) if v.0.mse.is_finite() && v.1.max_abs().is_finite() => v,
            Ok(_) => {
                failures += 1;
                continue;
            }
            Err(e) => {
                log::debug!("{kind}: trajectory not scored: {e}");
                failures += 1;
                continue;
            }
        };
        mses.push(m.mse);
        projected += usize::from(m.projected);
        let worst = d.max_abs();
        if d.absolute {
            absolute += 1;
        } else if worst <= gate {
            within += 1;
        }
        drifts.push(worst);
        match kind {
            SystemKind::TwoBody => {
                if let Ok(r) = two_body_radial_residual(&frames, &item.params) {
                    let (a, b) = radial.unwrap_or((0.0, 0.0));
                    radial = Some((a.max(r.max()), b.max(r.angular_momentum_variation)));
                }
            }
            SystemKind::ThreeBody => match three_body_homographic_residual(&frames, &item.params)? {
                h @ Homographic::Residual { shape_deviation, .. } => {
                    homographic = fold_max(homographic, h.max_residual().unwrap_or(0.0));
                    shape = fold_max(shape, shape_deviation);
                }
                Homographic::ShapeDeviation { shape_deviation } => {
                    shape = fold_max(shape, shape_deviation.iter().fold(0.0, |m, v| m.max(*v)));
                }
            },
            _ => {}
        }
    }
    if projected > 0 {
        log::warn!("{kind}: {projected} trajectories off the constraint circle were projected onto it");
    }
    let (mse, mse_std) = if mses.is_empty() {
        (None, None)
    } else {
        let mean = mses.iter().sum::<f64>() / mses.len() as f64;
        let var = mses.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / mses.len() as f64;
        (Some(mean), Some(var.sqrt()))
    };
    Ok(SystemEval {
        system: kind,
        trajectories: items.len(),
        failures,
        mse,
        mse_std,
        max_abs_drift: drifts,
        drift_absolute: absolute,
        projected,
        drift_within_gate: if items.is_empty() { 0.0 } else { within as f64 / items.len() as f64 },
        drift_gate_percent: gate,
        radial_residual_max: radial.map(|r| r.0),
        angular_momentum_variation: radial.map(|r| r.1),
        homographic_residual_max: homographic,
        shape_deviation_max: shape,
    })
}

/// Writes an MSE table with one row per model and one column per system.
pub fn write_mse_table(path: &Path, rows: &[(&str, &EvalReport)]) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    let header: Vec<&str> = std::iter::once("model")
        .chain(SystemKind::ALL.iter().map(|k| k.name()))
        .collect();
    writeln!(out, "{}", header.join(","))?;
    for (name, report) in rows {
        let mut line = name.to_string();
        for kind in SystemKind::ALL {
            line.push(',');
            if let Some(m) = report.system(kind).and_then(|s| s.mse) {
                line.push_str(&format!("{m:e}"));
            }
        }
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

/// Writes per-frame drift series as CSV `trajectory,t,drift`.
pub fn write_drift_csv(path: &Path, series: &[EnergyDrift], dt: f64) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(out, "trajectory,t,drift")?;
    for (i, s) in series.iter().enumerate() {
        for (t, d) in s.drift.iter().enumerate() {
            writeln!(out, "{i},{},{d}", t as f64 * dt)?;
        }
    }
    out.flush()?;
    Ok(())
}
