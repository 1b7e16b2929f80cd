// Scores reference trajectories with the physics oracles: energy drift,
// shooting MSE and the orbit residuals of the n-body systems.

use sympgan::dataset::{default_spec, Dataset};
use sympgan::eval::{evaluate_system, three_body_homographic_residual, two_body_radial_residual, Frames, Scored};
use sympgan::systems::SystemKind;

pub fn run() -> sympgan::Result<()> {
    let ds = Dataset::generate(&default_spec(&SystemKind::ALL, 8, 3))?;
    let (d_out, dt) = (ds.manifest.d_out, ds.manifest.dt);
    for kind in SystemKind::ALL {
        let items: Vec<Scored> = ds
            .records_of(kind)
            .map(|r| Scored {
                frames: &r.frames,
                params: r.params,
            })
            .collect();
        let e = evaluate_system(kind, &items, d_out, dt, 5.0)?;
        println!("{kind}: mse {:?}, {:.0}% within 5% drift", e.mse, 100.0 * e.drift_within_gate);
    }
    let r = ds.records_of(SystemKind::TwoBody).next().expect("records exist");
    let residual = two_body_radial_residual(&Frames::new(&r.frames, d_out, dt)?, &r.params)?;
    println!("two-body radial residual {:.2e}", residual.max());
    let r = ds.records_of(SystemKind::ThreeBody).next().expect("records exist");
    let homographic = three_body_homographic_residual(&Frames::new(&r.frames, d_out, dt)?, &r.params)?;
    println!("three-body homographic check {:?}", homographic.max_residual());
    Ok(())
}

#[allow(dead_code)]
fn main() -> sympgan::Result<()> {
    run()
}
