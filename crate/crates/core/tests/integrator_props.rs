use proptest::prelude::*;
use sympgan::integrators::{
    euler_step, generalized_leapfrog_step, leapfrog_step, rk45_integrate, simulate, IntegratorConfig,
};
use sympgan::systems::{analytic_vector_field, hamiltonian, PhaseState, SystemKind, SystemParams};

fn pendulum_step(q: f64, p: f64, dt: f64) -> (f64, f64) {
    let (m, l, g) = (0.5, 1.0, 3.0);
    let (qn, pn) = leapfrog_step(
        |p: &Vec<f64>| vec![p[0] / (m * l * l)],
        |q: &Vec<f64>| vec![m * g * l * q[0].sin()],
        &vec![q],
        &vec![p],
        dt,
    );
    (qn[0], pn[0])
}

fn pendulum_energy(q: f64, p: f64) -> f64 {
    p * p / (2.0 * 0.5) + 0.5 * 3.0 * (1.0 - q.cos())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn leapfrog_reverses_under_momentum_flip(q in -2.0f64..2.0, p in -2.0f64..2.0, dt in 0.001f64..0.2) {
        let (mut a, mut b) = (q, p);
        for _ in 0..50 {
            (a, b) = pendulum_step(a, b, dt);
        }
        b = -b;
        for _ in 0..50 {
            (a, b) = pendulum_step(a, b, dt);
        }
        prop_assert!((a - q).abs() < 1e-10 && (-b - p).abs() < 1e-10);
    }

    #[test]
    fn leapfrog_preserves_phase_area(q in -2.0f64..2.0, p in -2.0f64..2.0, dt in 0.001f64..0.2) {
        let h = 1e-6;
        let f = |a: f64, b: f64| pendulum_step(a, b, dt);
        let (dqq, dpq) = {
            let (x, y) = f(q + h, p);
            let (u, v) = f(q - h, p);
            ((x - u) / (2.0 * h), (y - v) / (2.0 * h))
        };
        let (dqp, dpp) = {
            let (x, y) = f(q, p + h);
            let (u, v) = f(q, p - h);
            ((x - u) / (2.0 * h), (y - v) / (2.0 * h))
        };
        let det = dqq * dpp - dqp * dpq;
        prop_assert!((det - 1.0).abs() < 1e-7, "det = {det}");
    }

    #[test]
    fn leapfrog_energy_error_stays_bounded(q in -2.0f64..2.0, p in -1.5f64..1.5) {
        let dt = 0.05;
        let e0 = pendulum_energy(q, p);
        let (mut a, mut b) = (q, p);
        let mut worst: f64 = 0.0;
        for _ in 0..2000 {
            (a, b) = pendulum_step(a, b, dt);
            worst = worst.max((pendulum_energy(a, b) - e0).abs());
        }
        prop_assert!(worst < 0.01 * e0.max(0.1), "worst {worst} e0 {e0}");
    }

    #[test]
    fn generalized_leapfrog_matches_leapfrog_on_separable_h(
        q in -2.0f64..2.0, p in -2.0f64..2.0, dt in 0.001f64..0.2
    ) {
        let (m, l, g) = (0.5, 1.0, 3.0);
        let (qn, pn, _) = generalized_leapfrog_step(
            |q: &Vec<f64>, p: &Vec<f64>| Ok((vec![m * g * l * q[0].sin()], vec![p[0] / (m * l * l)])),
            &vec![q],
            &vec![p],
            dt,
        )
        .unwrap();
        let (a, b) = pendulum_step(q, p, dt);
        prop_assert!((qn[0] - a).abs() <= 1e-14 * (1.0 + a.abs()) && (pn[0] - b).abs() <= 1e-14 * (1.0 + b.abs()));
    }

    #[test]
    fn rk45_matches_closed_form_oscillator(
        q0 in -1.0f64..1.0, p0 in -1.0f64..1.0, k in 0.5f64..4.0, m in 0.2f64..2.0
    ) {
        let cfg = IntegratorConfig { frames: 40, ..Default::default() };
        let ys = rk45_integrate(|y| Ok(vec![y[1] / m, -k * y[0]]), &[q0, p0], &cfg).unwrap();
        let w = (k / m).sqrt();
        for (i, y) in ys.iter().enumerate() {
            let t = i as f64 * cfg.dt;
            let q = q0 * (w * t).cos() + p0 / (m * w) * (w * t).sin();
            prop_assert!((y[0] - q).abs() < 1e-7, "t {t}: {} vs {q}", y[0]);
        }
    }

    #[test]
    fn simulated_pendulum_conserves_energy(q in -2.3f64..2.3, p in -1.0f64..1.0) {
        let params = SystemParams::defaults(SystemKind::Pendulum);
        let s0 = PhaseState::new(vec![q], vec![p]);
        let traj = simulate(SystemKind::Pendulum, &params, &s0, &IntegratorConfig::default()).unwrap();
        let e0 = hamiltonian(SystemKind::Pendulum, &params, &s0).unwrap();
        for s in &traj {
            let e = hamiltonian(SystemKind::Pendulum, &params, s).unwrap();
            prop_assert!((e - e0).abs() <= 1e-6 * e0.abs().max(1e-3));
        }
    }
}

#[test]
fn euler_drifts_where_leapfrog_does_not() {
    let params = SystemParams::defaults(SystemKind::MassSpring);
    let field = |y: &[f64]| {
        let (dq, dp) = analytic_vector_field(SystemKind::MassSpring, &params, &PhaseState::from_flat(y)).unwrap();
        Ok([dq, dp].concat())
    };
    let e = |y: &[f64]| hamiltonian(SystemKind::MassSpring, &params, &PhaseState::from_flat(y)).unwrap();
    let y0 = vec![1.0, 0.0];
    let mut y = y0.clone();
    let (mut q, mut p) = (vec![1.0], vec![0.0]);
    for _ in 0..1000 {
        y = euler_step(field, &y, 0.05).unwrap();
        (q, p) = leapfrog_step(
            |p: &Vec<f64>| vec![p[0] / params.masses[0]],
            |q: &Vec<f64>| vec![params.spring_k * q[0]],
            &q,
            &p,
            0.05,
        );
    }
    let euler_drift = (e(&y) - e(&y0)).abs() / e(&y0);
    let leap_drift = (e(&[q[0], p[0]]) - e(&y0)).abs() / e(&y0);
    assert!(euler_drift > 1.0, "{euler_drift}");
    assert!(leap_drift < 0.01, "{leap_drift}");
}
