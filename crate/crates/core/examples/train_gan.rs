// Trains a small conditional generator on two systems with checkpointing,
// resumes it and samples trajectories.

use sympgan::dataset::{default_spec, Dataset};
use sympgan::spsgan::{train_spsgan, GanCheckpoint, GanConfig, GeneratedSet, TrainControl};
use sympgan::systems::SystemKind;

pub fn run() -> sympgan::Result<()> {
    let ds = Dataset::generate(&default_spec(&[SystemKind::MassSpring, SystemKind::Pendulum], 32, 0))?;
    let config = GanConfig {
        d_lat: 4,
        map_hidden: vec![32],
        hnn_hidden: vec![32],
        generator_hidden: 32,
        discriminator_hidden: 16,
        batch_size: 16,
        iterations: 10,
        ..GanConfig::default()
    };
    let checkpoint = std::env::temp_dir().join(format!("sympgan-gan-{}.json", std::process::id()));
    let control = TrainControl {
        checkpoint: Some(checkpoint.clone()),
        ..TrainControl::default()
    };
    let (_, history) = train_spsgan(&ds, &config, control)?;
    let resumed = TrainControl {
        resume: Some(GanCheckpoint::load(&checkpoint)?),
        ..TrainControl::default()
    };
    let (model, more) = train_spsgan(&ds, &GanConfig { iterations: 20, ..config }, resumed)?;
    for s in history.steps.iter().chain(&more.steps).step_by(5) {
        println!("step {:>3}: d {:.4} g {:.4}", s.step, s.d_loss, s.g_loss);
    }
    let set = GeneratedSet::sample(&model, &ds, 4, 0)?;
    println!("sampled {} trajectories of {} frames", set.trajectories.len(), set.frames);
    std::fs::remove_file(&checkpoint)?;
    Ok(())
}

#[allow(dead_code)]
fn main() -> sympgan::Result<()> {
    run()
}
