// Generates a small multi-system dataset, saves it and loads it back.

use sympgan::dataset::{default_spec, generate_dataset, load_dataset};
use sympgan::systems::SystemKind;

pub fn run() -> sympgan::Result<()> {
    let dir = std::env::temp_dir().join(format!("sympgan-dataset-{}", std::process::id()));
    let spec = default_spec(&[SystemKind::Pendulum, SystemKind::TwoBody], 32, 7);
    let ds = generate_dataset(&spec, &dir)?;
    let back = load_dataset(&dir)?;
    assert_eq!(ds.records, back.records);
    for entry in &ds.manifest.systems {
        let r = ds.records_of(entry.kind).next().expect("records exist");
        println!("{}: {} trajectories, condition {:?}", entry.kind, ds.records_of(entry.kind).count(), ds.condition(r));
    }
    println!("{} frames of {} particle slots at dt {}", ds.manifest.frames, ds.manifest.d_out, ds.manifest.dt);
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}

#[allow(dead_code)]
fn main() -> sympgan::Result<()> {
    run()
}
