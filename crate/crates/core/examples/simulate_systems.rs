// Reference trajectories of every benchmark system and leapfrog vs Euler on a
// mass-spring.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sympgan::integrators::{euler_step, leapfrog_step, simulate, IntegratorConfig};
use sympgan::systems::{analytic_vector_field, hamiltonian, sample_initial_condition, PhaseState, SystemKind, SystemParams};

pub fn run() -> sympgan::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let config = IntegratorConfig::default();
    for kind in SystemKind::ALL {
        let params = SystemParams::defaults(kind);
        let start = sample_initial_condition(kind, &params, &mut rng);
        let states = simulate(kind, &params, &start, &config)?;
        let e0 = hamiltonian(kind, &params, &states[0])?;
        let e1 = hamiltonian(kind, &params, states.last().unwrap())?;
        println!("{kind}: {} frames, relative energy change {:.2e}", states.len(), ((e1 - e0) / e0).abs());
    }

    let kind = SystemKind::MassSpring;
    let params = SystemParams::defaults(kind);
    let (m, k) = (params.mass(), params.get("k").expect("mass-spring has k"));
    let energy = |q: f64, p: f64| hamiltonian(kind, &params, &PhaseState::new(vec![q], vec![p]));
    let e0 = energy(1.0, 0.0)?;
    let (mut q, mut p) = (vec![1.0], vec![0.0]);
    let mut y = vec![1.0, 0.0];
    for _ in 0..1000 {
        (q, p) = leapfrog_step(|p: &Vec<f64>| vec![p[0] / m], |q: &Vec<f64>| vec![k * q[0]], &q, &p, 0.05);
        y = euler_step(
            |y: &[f64]| {
                let (dq, dp) = analytic_vector_field(kind, &params, &PhaseState::from_flat(y))?;
                Ok([dq, dp].concat())
            },
            &y,
            0.05,
        )?;
    }
    println!("after 1000 steps: leapfrog energy error {:.2e}, euler {:.2e}", (energy(q[0], p[0])? / e0 - 1.0).abs(), (energy(y[0], y[1])? / e0 - 1.0).abs());
    Ok(())
}

#[allow(dead_code)]
fn main() -> sympgan::Result<()> {
    run()
}
