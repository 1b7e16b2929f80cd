// Fits a Hamiltonian network to pendulum data and rolls it out against the
// reference trajectory.

use sympgan::dataset::{default_spec, Dataset};
use sympgan::hnn::{rollout, train_hnn, HnnConfig, HnnSamples};
use sympgan::systems::{hamiltonian, SystemKind};

pub fn run() -> sympgan::Result<()> {
    let kind = SystemKind::Pendulum;
    let ds = Dataset::generate(&default_spec(&[kind], 64, 1))?;
    let samples = HnnSamples::from_dataset(&ds, kind, false, 0)?;
    let config = HnnConfig {
        hidden: vec![32, 32],
        steps: 300,
        ..HnnConfig::default()
    };
    let fit = train_hnn(&samples, &config, None)?;
    let (first, last) = (fit.history[0].1, fit.history.last().unwrap().1);
    println!("loss {first:.3e} -> {last:.3e}");

    let record = ds.records_of(kind).next().expect("records exist");
    let path = rollout(&fit.model, &record.states[0], &[], &config.integrator)?;
    let err: f64 = path
        .states
        .iter()
        .zip(&record.states)
        .map(|(a, b)| (a.q[0] - b.q[0]).powi(2))
        .sum::<f64>()
        / path.states.len() as f64;
    let e0 = hamiltonian(kind, &record.params, &path.states[0])?;
    let e1 = hamiltonian(kind, &record.params, path.states.last().unwrap())?;
    println!("angle mse over {} frames {err:.3e}, true energy change {:.2e}", path.states.len(), (e1 - e0).abs());
    Ok(())
}

#[allow(dead_code)]
fn main() -> sympgan::Result<()> {
    run()
}
