//! The five benchmark mechanical systems: closed-form Hamiltonians, their
//! exact vector fields, initial-condition samplers and Cartesian projections.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Number of particle slots in every Cartesian frame.
pub const D_OUT: usize = 10;

/// Separations below this abort a trajectory.
pub const COLLISION_DISTANCE: f64 = 1e-6;

/// Magnitude of the velocity perturbation added to n-body initial conditions.
pub const NBODY_PERTURBATION: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SystemKind {
    MassSpring,
    Pendulum,
    DoublePendulum,
    TwoBody,
    ThreeBody,
}

impl SystemKind {
    pub const ALL: [SystemKind; 5] = [
        SystemKind::MassSpring,
        SystemKind::Pendulum,
        SystemKind::DoublePendulum,
        SystemKind::TwoBody,
        SystemKind::ThreeBody,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SystemKind::MassSpring => "mass-spring",
            SystemKind::Pendulum => "pendulum",
            SystemKind::DoublePendulum => "double-pendulum",
            SystemKind::TwoBody => "two-body",
            SystemKind::ThreeBody => "three-body",
        }
    }

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&k| k == self).unwrap()
    }

    /// Generalized-coordinate dimension.
    pub fn dof(self) -> usize {
        match self {
            SystemKind::MassSpring | SystemKind::Pendulum => 1,
            SystemKind::DoublePendulum => 2,
            SystemKind::TwoBody => 4,
            SystemKind::ThreeBody => 6,
        }
    }

    pub fn particles(self) -> usize {
        match self {
            SystemKind::MassSpring | SystemKind::Pendulum => 1,
            SystemKind::DoublePendulum | SystemKind::TwoBody => 2,
            SystemKind::ThreeBody => 3,
        }
    }

    pub fn is_nbody(self) -> bool {
        matches!(self, SystemKind::TwoBody | SystemKind::ThreeBody)
    }

    /// Per-particle activity mask over `d_out` slots.
    pub fn mask(self, d_out: usize) -> Vec<f64> {
        (0..d_out)
            .map(|i| if i < self.particles() { 1.0 } else { 0.0 })
            .collect()
    }
}

impl fmt::Display for SystemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SystemKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('_', "-");
        Self::ALL
            .into_iter()
            .find(|k| k.name() == norm)
            .ok_or_else(|| {
                let names: Vec<_> = Self::ALL.iter().map(|k| k.name()).collect();
                Error::Config(format!("unknown system `{s}`; expected one of {}", names.join(", ")))
            })
    }
}

/// Physical parameters of one system instance. Fields a system does not use
/// keep their defaults.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    pub masses: [f64; 3],
    pub length: f64,
    pub spring_k: f64,
    pub gravity: f64,
    pub grav_const: f64,
    pub damping: f64,
}

/// Names of the entries of [`SystemParams::to_vec`].
pub const PARAM_NAMES: [&str; 8] = ["m1", "m2", "m3", "length", "k", "g", "G", "c"];

impl SystemParams {
    pub fn defaults(kind: SystemKind) -> Self {
        let m = match kind {
            SystemKind::MassSpring | SystemKind::Pendulum => 0.5,
            _ => 1.0,
        };
        Self {
            masses: [m; 3],
            length: 1.0,
            spring_k: 2.0,
            gravity: 3.0,
            grav_const: 1.0,
            damping: 0.0,
        }
    }

    pub fn mass(&self) -> f64 {
        self.masses[0]
    }

    pub fn to_vec(&self) -> Vec<f64> {
        vec![
            self.masses[0],
            self.masses[1],
            self.masses[2],
            self.length,
            self.spring_k,
            self.gravity,
            self.grav_const,
            self.damping,
        ]
    }

    pub fn from_vec(v: &[f64]) -> Result<Self> {
        if v.len() != PARAM_NAMES.len() {
            return Err(Error::shape("SystemParams::from_vec", format!("{} values", v.len())));
        }
        Ok(Self {
            masses: [v[0], v[1], v[2]],
            length: v[3],
            spring_k: v[4],
            gravity: v[5],
            grav_const: v[6],
            damping: v[7],
        })
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        PARAM_NAMES.iter().position(|&n| n == name).map(|i| self.to_vec()[i])
    }

    pub fn set(&mut self, name: &str, value: f64) -> Result<()> {
        let i = PARAM_NAMES
            .iter()
            .position(|&n| n == name)
            .ok_or_else(|| Error::Config(format!("unknown parameter `{name}`")))?;
        let mut v = self.to_vec();
        v[i] = value;
        *self = Self::from_vec(&v)?;
        Ok(())
    }

    pub fn validate(&self, kind: SystemKind) -> Result<()> {
        if self.to_vec().iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("non-finite system parameter".into()));
        }
        if self.masses[..kind.particles()].iter().any(|&m| m <= 0.0) {
            return Err(Error::Config(format!("{kind}: masses must be positive")));
        }
        if matches!(kind, SystemKind::Pendulum | SystemKind::DoublePendulum) && self.length <= 0.0 {
            return Err(Error::Config(format!("{kind}: length must be positive")));
        }
        if self.damping != 0.0 {
            return Err(Error::Config("only undamped systems are supported".into()));
        }
        Ok(())
    }
}

/// Generalized positions and conjugate momenta.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseState {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
}

impl PhaseState {
    pub fn new(q: Vec<f64>, p: Vec<f64>) -> Self {
        assert_eq!(q.len(), p.len(), "q and p must have equal length");
        Self { q, p }
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    /// `[q, p]` concatenated.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = self.q.clone();
        v.extend_from_slice(&self.p);
        v
    }

    pub fn from_flat(v: &[f64]) -> Self {
        let d = v.len() / 2;
        Self::new(v[..d].to_vec(), v[d..].to_vec())
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(&self.p).all(|v| v.is_finite())
    }
}

/// Particle positions `[x1, y1, ..., x_dout, y_dout]`; inactive slots are zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CartesianFrame {
    pub xy: Vec<f64>,
    pub active: usize,
}

impl CartesianFrame {
    pub fn position(&self, i: usize) -> (f64, f64) {
        (self.xy[2 * i], self.xy[2 * i + 1])
    }

    pub fn from_positions(positions: &[(f64, f64)], d_out: usize) -> Self {
        assert!(positions.len() <= d_out, "more particles than slots");
        let mut xy = vec![0.0; 2 * d_out];
        for (i, &(x, y)) in positions.iter().enumerate() {
            xy[2 * i] = x;
            xy[2 * i + 1] = y;
        }
        Self {
            xy,
            active: positions.len(),
        }
    }
}

fn check_state(kind: SystemKind, state: &PhaseState) -> Result<()> {
    if state.q.len() != kind.dof() || state.p.len() != kind.dof() {
        return Err(Error::InvalidState(format!(
            "{kind} needs {} coordinates, got q:{} p:{}",
            kind.dof(),
            state.q.len(),
            state.p.len()
        )));
    }
    if !state.is_finite() {
        return Err(Error::InvalidState("non-finite phase state".into()));
    }
    Ok(())
}

fn check_separations(q: &[f64]) -> Result<()> {
    let n = q.len() / 2;
    for i in 0..n {
        for j in i + 1..n {
            let d = (q[2 * i] - q[2 * j]).hypot(q[2 * i + 1] - q[2 * j + 1]);
            if d < COLLISION_DISTANCE {
                return Err(Error::Collision { i, j, separation: d });
            }
        }
    }
    Ok(())
}

/// Total energy.
pub fn hamiltonian(kind: SystemKind, params: &SystemParams, state: &PhaseState) -> Result<f64> {
    check_state(kind, state)?;
    let (q, p) = (&state.q, &state.p);
    let m = params.mass();
    let e = match kind {
        SystemKind::MassSpring => p[0] * p[0] / (2.0 * m) + 0.5 * params.spring_k * q[0] * q[0],
        SystemKind::Pendulum => {
            let l = params.length;
            p[0] * p[0] / (2.0 * m * l * l) + m * params.gravity * l * (1.0 - q[0].cos())
        }
        SystemKind::DoublePendulum => {
            let l = params.length;
            let d = q[0] - q[1];
            let kin = (p[0] * p[0] + 2.0 * p[1] * p[1] - 2.0 * p[0] * p[1] * d.cos())
                / (1.0 + d.sin().powi(2))
                / (2.0 * m * l * l);
            kin + m * params.gravity * l * (3.0 - 2.0 * q[0].cos() - q[1].cos())
        }
        SystemKind::TwoBody | SystemKind::ThreeBody => {
            check_separations(q)?;
            let n = kind.particles();
            let mut e = 0.0;
            for i in 0..n {
                let mi = params.masses[i];
                e += (p[2 * i].powi(2) + p[2 * i + 1].powi(2)) / (2.0 * mi);
                for j in i + 1..n {
                    let r = (q[2 * i] - q[2 * j]).hypot(q[2 * i + 1] - q[2 * j + 1]);
                    e -= params.grav_const * mi * params.masses[j] / r;
                }
            }
            e
        }
    };
    Ok(e)
}

/// Exact `(dq/dt, dp/dt)` from hand-derived gradients of [`hamiltonian`].
pub fn analytic_vector_field(
    kind: SystemKind,
    params: &SystemParams,
    state: &PhaseState,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_state(kind, state)?;
    let (q, p) = (&state.q, &state.p);
    let m = params.mass();
    Ok(match kind {
        SystemKind::MassSpring => (vec![p[0] / m], vec![-params.spring_k * q[0]]),
        SystemKind::Pendulum => {
            let l = params.length;
            (
                vec![p[0] / (m * l * l)],
                vec![-m * params.gravity * l * q[0].sin()],
            )
        }
        SystemKind::DoublePendulum => {
            let l = params.length;
            let ml2 = m * l * l;
            let d = q[0] - q[1];
            let (s, c) = d.sin_cos();
            let a = p[0] * p[0] + 2.0 * p[1] * p[1] - 2.0 * p[0] * p[1] * c;
            let b = 1.0 + s * s;
            let dq1 = (p[0] - p[1] * c) / (ml2 * b);
            let dq2 = (2.0 * p[1] - p[0] * c) / (ml2 * b);
            // derivative of the kinetic term with respect to q1 - q2
            let dk_dd = (2.0 * p[0] * p[1] * s * b - a * 2.0 * s * c) / (2.0 * ml2 * b * b);
            let mgl = m * params.gravity * l;
            (
                vec![dq1, dq2],
                vec![-(dk_dd + 2.0 * mgl * q[0].sin()), -(-dk_dd + mgl * q[1].sin())],
            )
        }
        SystemKind::TwoBody | SystemKind::ThreeBody => {
            check_separations(q)?;
            let n = kind.particles();
            let mut dq = vec![0.0; 2 * n];
            let mut dp = vec![0.0; 2 * n];
            for i in 0..n {
                let mi = params.masses[i];
                dq[2 * i] = p[2 * i] / mi;
                dq[2 * i + 1] = p[2 * i + 1] / mi;
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let dx = q[2 * j] - q[2 * i];
                    let dy = q[2 * j + 1] - q[2 * i + 1];
                    let r = dx.hypot(dy);
                    let f = params.grav_const * mi * params.masses[j] / (r * r * r);
                    dp[2 * i] += f * dx;
                    dp[2 * i + 1] += f * dy;
                }
            }
            (dq, dp)
        }
    })
}

/// [`hamiltonian`] built from tape primitives, for `[1, dof]` row vectors.
pub fn hamiltonian_graph<'t>(
    kind: SystemKind,
    params: &SystemParams,
    q: Var<'t>,
    p: Var<'t>,
) -> Var<'t> {
    let m = params.mass();
    match kind {
        SystemKind::MassSpring => p.square().scale(0.5 / m) + q.square().scale(0.5 * params.spring_k),
        SystemKind::Pendulum => {
            let l = params.length;
            let mgl = m * params.gravity * l;
            p.square().scale(0.5 / (m * l * l)) + q.cos().scale(-mgl).offset(mgl)
        }
        SystemKind::DoublePendulum => {
            let l = params.length;
            let (q1, q2, p1, p2) = (q.col(0), q.col(1), p.col(0), p.col(1));
            let d = q1 - q2;
            let num = p1.square() + p2.square().scale(2.0) - (p1 * p2 * d.cos()).scale(2.0);
            let den = d.sin().square().offset(1.0);
            let kin = num.div(den).scale(0.5 / (m * l * l));
            let mgl = m * params.gravity * l;
            let pot = (q1.cos().scale(-2.0 * mgl) - q2.cos().scale(mgl)).offset(3.0 * mgl);
            kin + pot
        }
        SystemKind::TwoBody | SystemKind::ThreeBody => {
            let n = kind.particles();
            let mut terms = Vec::new();
            for i in 0..n {
                let mi = params.masses[i];
                terms.push(p.slice_cols(2 * i, 2).square().sum().scale(0.5 / mi));
                for j in i + 1..n {
                    let diff = q.slice_cols(2 * i, 2) - q.slice_cols(2 * j, 2);
                    let r = diff.square().sum().sqrt();
                    terms.push(r.recip().scale(-params.grav_const * mi * params.masses[j]));
                }
            }
            terms.into_iter().reduce(|a, b| a + b).expect("at least one term")
        }
    }
}

/// Vector field obtained by differentiating [`hamiltonian_graph`].
pub fn autodiff_vector_field(
    kind: SystemKind,
    params: &SystemParams,
    state: &PhaseState,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_state(kind, state)?;
    let tape = Tape::new();
    let q = tape.var(Tensor::row(&state.q));
    let p = tape.var(Tensor::row(&state.p));
    let h = hamiltonian_graph(kind, params, q, p);
    let g = tape.gradients(h, &[q, p])?;
    let dq = g[1].data().to_vec();
    let dp = g[0].data().iter().map(|v| -v).collect();
    Ok((dq, dp))
}

fn annulus(rng: &mut impl Rng, r_min: f64, r_max: f64) -> (f64, f64) {
    let r = rng.random_range(r_min..=r_max);
    let a = rng.random_range(0.0..TAU);
    (r * a.cos(), r * a.sin())
}

fn rotate((x, y): (f64, f64), angle: f64) -> (f64, f64) {
    let (s, c) = angle.sin_cos();
    (c * x - s * y, s * x + c * y)
}

/// Radius bounds of the initial-condition samplers.
pub fn sampler_bounds(kind: SystemKind) -> (f64, f64) {
    match kind {
        SystemKind::MassSpring => (0.1, 1.0),
        SystemKind::Pendulum => (1.3, 2.3),
        SystemKind::DoublePendulum => (0.5, 1.3),
        SystemKind::TwoBody => (0.5, 1.5),
        SystemKind::ThreeBody => (0.9, 1.2),
    }
}

/// Draws an initial condition.
///
/// One-degree-of-freedom systems sample `(q, p)` uniformly in radius and
/// angle on an annulus; the double pendulum does so per bob. The n-body
/// systems place bodies symmetrically on a circle with tangential circular
/// speeds, then add a velocity perturbation of fixed magnitude that is rotated
/// along with each body, keeping the total momentum at zero and the
/// configuration homographic.
pub fn sample_initial_condition(kind: SystemKind, params: &SystemParams, rng: &mut impl Rng) -> PhaseState {
    let (r_min, r_max) = sampler_bounds(kind);
    match kind {
        SystemKind::MassSpring | SystemKind::Pendulum => {
            let (q, p) = annulus(rng, r_min, r_max);
            PhaseState::new(vec![q], vec![p])
        }
        SystemKind::DoublePendulum => {
            let (q1, p1) = annulus(rng, r_min, r_max);
            let (q2, p2) = annulus(rng, r_min, r_max);
            PhaseState::new(vec![q1, q2], vec![p1, p2])
        }
        SystemKind::TwoBody | SystemKind::ThreeBody => {
            let n = kind.particles();
            let r = rng.random_range(r_min..=r_max);
            let phase = rng.random_range(0.0..TAU);
            let pert_angle = rng.random_range(0.0..TAU);
            let pert = (NBODY_PERTURBATION * pert_angle.cos(), NBODY_PERTURBATION * pert_angle.sin());
            let m = params.mass();
            let g = params.grav_const;
            // circular speed: two bodies at distance 2r, or an equilateral
            // triangle with circumradius r
            let speed = if n == 2 {
                (g * m / (4.0 * r)).sqrt()
            } else {
                (g * m / (3f64.sqrt() * r)).sqrt()
            };
            let mut q = Vec::with_capacity(2 * n);
            let mut p = Vec::with_capacity(2 * n);
            for i in 0..n {
                let turn = TAU * i as f64 / n as f64;
                let a = phase + turn;
                q.push(r * a.cos());
                q.push(r * a.sin());
                let (dx, dy) = rotate(pert, turn);
                let vx = -speed * a.sin() + dx;
                let vy = speed * a.cos() + dy;
                p.push(params.masses[i] * vx);
                p.push(params.masses[i] * vy);
            }
            PhaseState::new(q, p)
        }
    }
}

/// Particle positions in the plane.
pub fn particle_positions(kind: SystemKind, params: &SystemParams, state: &PhaseState) -> Vec<(f64, f64)> {
    let q = &state.q;
    let l = params.length;
    match kind {
        SystemKind::MassSpring => vec![(q[0], 0.0)],
        SystemKind::Pendulum => vec![(l * q[0].sin(), -l * q[0].cos())],
        SystemKind::DoublePendulum => {
            let b1 = (l * q[0].sin(), -l * q[0].cos());
            let b2 = (b1.0 + l * q[1].sin(), b1.1 - l * q[1].cos());
            vec![b1, b2]
        }
        SystemKind::TwoBody | SystemKind::ThreeBody => {
            (0..kind.particles()).map(|i| (q[2 * i], q[2 * i + 1])).collect()
        }
    }
}

pub fn to_cartesian(kind: SystemKind, params: &SystemParams, state: &PhaseState) -> CartesianFrame {
    to_cartesian_padded(kind, params, state, D_OUT)
}

pub fn to_cartesian_padded(
    kind: SystemKind,
    params: &SystemParams,
    state: &PhaseState,
    d_out: usize,
) -> CartesianFrame {
    CartesianFrame::from_positions(&particle_positions(kind, params, state), d_out)
}

/// Generalized coordinates recovered from particle positions. Angles are
/// returned in `(-pi, pi]`; callers unwrap along a trajectory.
pub fn generalized_coordinates(kind: SystemKind, frame: &CartesianFrame) -> Vec<f64> {
    match kind {
        SystemKind::MassSpring => vec![frame.xy[0]],
        SystemKind::Pendulum => vec![frame.xy[0].atan2(-frame.xy[1])],
        SystemKind::DoublePendulum => {
            let (x1, y1) = frame.position(0);
            let (x2, y2) = frame.position(1);
            vec![x1.atan2(-y1), (x2 - x1).atan2(-(y2 - y1))]
        }
        SystemKind::TwoBody | SystemKind::ThreeBody => frame.xy[..2 * kind.particles()].to_vec(),
    }
}

/// Conjugate momenta from generalized velocities.
pub fn momenta_from_velocities(kind: SystemKind, params: &SystemParams, q: &[f64], qdot: &[f64]) -> Vec<f64> {
    let m = params.mass();
    let l = params.length;
    match kind {
        SystemKind::MassSpring => vec![m * qdot[0]],
        SystemKind::Pendulum => vec![m * l * l * qdot[0]],
        SystemKind::DoublePendulum => {
            let c = (q[0] - q[1]).cos();
            let ml2 = m * l * l;
            vec![ml2 * (2.0 * qdot[0] + qdot[1] * c), ml2 * (qdot[1] + qdot[0] * c)]
        }
        SystemKind::TwoBody | SystemKind::ThreeBody => (0..qdot.len())
            .map(|i| params.masses[i / 2] * qdot[i])
            .collect(),
    }
}

/// Removes `2 pi` jumps from a sequence of angles.
pub fn unwrap_angles(angles: &mut [f64]) {
    for i in 1..angles.len() {
        let mut d = angles[i] - angles[i - 1];
        while d > PI {
            d -= TAU;
        }
        while d < -PI {
            d += TAU;
        }
        angles[i] = angles[i - 1] + d;
    }
}

/// Whether generalized coordinate `i` of `kind` is an angle.
pub fn is_angle(kind: SystemKind, _i: usize) -> bool {
    matches!(kind, SystemKind::Pendulum | SystemKind::DoublePendulum)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn defaults(kind: SystemKind) -> SystemParams {
        SystemParams::defaults(kind)
    }

    #[test]
    fn mass_spring_energy_at_unit_displacement() {
        let k = SystemKind::MassSpring;
        let e = hamiltonian(k, &defaults(k), &PhaseState::new(vec![1.0], vec![0.0])).unwrap();
        assert_eq!(e, 1.0);
    }

    #[test]
    fn pendulum_at_rest_has_zero_energy() {
        let k = SystemKind::Pendulum;
        let e = hamiltonian(k, &defaults(k), &PhaseState::new(vec![0.0], vec![0.0])).unwrap();
        assert_eq!(e, 0.0);
        let (dq, dp) = analytic_vector_field(k, &defaults(k), &PhaseState::new(vec![0.0], vec![0.0])).unwrap();
        assert_eq!((dq[0], dp[0]), (0.0, 0.0));
    }

    #[test]
    fn two_body_circular_orbit_energy_by_direct_sum() {
        let k = SystemKind::TwoBody;
        let prm = defaults(k);
        // bodies at (+-1/2, 0), separation 1, tangential speed for a circular orbit
        let v = (prm.grav_const * prm.mass() / (4.0 * 0.5)).sqrt();
        let s = PhaseState::new(vec![0.5, 0.0, -0.5, 0.0], vec![0.0, v, 0.0, -v]);
        let kinetic = 2.0 * 0.5 * prm.mass() * v * v;
        let potential = -prm.grav_const * prm.mass() * prm.mass() / 1.0;
        let e = hamiltonian(k, &prm, &s).unwrap();
        assert!((e - (kinetic + potential)).abs() < 1e-15);
        // virial theorem for a circular orbit: E = V / 2
        assert!((e - potential / 2.0).abs() < 1e-15);
    }

    #[test]
    fn mass_spring_field_by_hand() {
        let k = SystemKind::MassSpring;
        let (dq, dp) = analytic_vector_field(k, &defaults(k), &PhaseState::new(vec![1.0], vec![0.0])).unwrap();
        assert_eq!(dq, vec![0.0]);
        assert_eq!(dp, vec![-2.0]);
    }

    #[test]
    fn collision_is_an_error() {
        let k = SystemKind::TwoBody;
        let s = PhaseState::new(vec![0.3, 0.3, 0.3, 0.3], vec![0.0; 4]);
        assert!(matches!(hamiltonian(k, &defaults(k), &s), Err(Error::Collision { .. })));
        assert!(analytic_vector_field(k, &defaults(k), &s).is_err());
    }

    #[test]
    fn wrong_dimension_is_rejected() {
        let k = SystemKind::DoublePendulum;
        assert!(hamiltonian(k, &defaults(k), &PhaseState::new(vec![0.0], vec![0.0])).is_err());
    }

    #[test]
    fn cartesian_projections() {
        let p = SystemKind::Pendulum;
        let f = to_cartesian(p, &defaults(p), &PhaseState::new(vec![0.0], vec![0.0]));
        assert_eq!(f.position(0), (0.0, -1.0));
        let f = to_cartesian(p, &defaults(p), &PhaseState::new(vec![PI / 2.0], vec![0.0]));
        assert!((f.position(0).0 - 1.0).abs() < 1e-15 && f.position(0).1.abs() < 1e-15);
        let d = SystemKind::DoublePendulum;
        let f = to_cartesian(d, &defaults(d), &PhaseState::new(vec![0.0, 0.0], vec![0.0, 0.0]));
        assert_eq!(f.position(0), (0.0, -1.0));
        assert_eq!(f.position(1), (0.0, -2.0));
        assert!(f.xy[4..].iter().all(|&v| v == 0.0));
        assert_eq!(f.xy.len(), 2 * D_OUT);
    }

    #[test]
    fn mass_spring_projects_onto_x_axis() {
        let k = SystemKind::MassSpring;
        let f = to_cartesian(k, &defaults(k), &PhaseState::new(vec![0.7], vec![3.0]));
        assert_eq!(&f.xy[..2], &[0.7, 0.0]);
        assert_eq!(f.active, 1);
    }

    #[test]
    fn double_pendulum_energy_is_even() {
        let k = SystemKind::DoublePendulum;
        let prm = defaults(k);
        let s = PhaseState::new(vec![0.4, -1.1], vec![0.7, 0.2]);
        let flipped = PhaseState::new(vec![-0.4, 1.1], vec![-0.7, -0.2]);
        let a = hamiltonian(k, &prm, &s).unwrap();
        let b = hamiltonian(k, &prm, &flipped).unwrap();
        assert!((a - b).abs() < 1e-14);
    }

    #[test]
    fn coordinate_recovery_inverts_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for kind in SystemKind::ALL {
            let prm = defaults(kind);
            let s = sample_initial_condition(kind, &prm, &mut rng);
            let f = to_cartesian(kind, &prm, &s);
            let q = generalized_coordinates(kind, &f);
            for (a, b) in q.iter().zip(&s.q) {
                assert!((a - b).abs() < 1e-12, "{kind}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn momenta_match_hamilton_velocity_relation() {
        // dq/dt = dH/dp must invert momenta_from_velocities
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for kind in SystemKind::ALL {
            let prm = defaults(kind);
            let s = sample_initial_condition(kind, &prm, &mut rng);
            let (qdot, _) = analytic_vector_field(kind, &prm, &s).unwrap();
            let p = momenta_from_velocities(kind, &prm, &s.q, &qdot);
            for (a, b) in p.iter().zip(&s.p) {
                assert!((a - b).abs() < 1e-12, "{kind}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn unwrap_removes_jumps() {
        let mut a = vec![3.0, -3.0, -2.9];
        unwrap_angles(&mut a);
        assert!((a[1] - (TAU - 3.0)).abs() < 1e-12);
        assert!(a.windows(2).all(|w| (w[1] - w[0]).abs() < 1.0));
    }

    #[test]
    fn parse_system_names() {
        assert_eq!("double-pendulum".parse::<SystemKind>().unwrap(), SystemKind::DoublePendulum);
        assert_eq!("three_body".parse::<SystemKind>().unwrap(), SystemKind::ThreeBody);
        let err = "quadruple-pendulum".parse::<SystemKind>().unwrap_err().to_string();
        assert!(err.contains("mass-spring") && err.contains("three-body"));
    }

    #[test]
    fn masks_mark_active_particles() {
        assert_eq!(SystemKind::MassSpring.mask(10), vec![1., 0., 0., 0., 0., 0., 0., 0., 0., 0.]);
        assert_eq!(SystemKind::ThreeBody.mask(10).iter().sum::<f64>(), 3.0);
    }
}
