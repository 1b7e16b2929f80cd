// Estimates the latent dimension a generator uses for one system from its
// momentum activity and the PCA spectrum of its latent states.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sympgan::dataset::{default_spec, Dataset};
use sympgan::spsgan::{GanConfig, SpsGan};
use sympgan::symmetry::{analyze, system_condition, DimensionConfig};
use sympgan::systems::{SystemKind, SystemParams};

pub fn run() -> sympgan::Result<()> {
    let ds = Dataset::generate(&default_spec(&[SystemKind::TwoBody], 4, 0))?;
    let config = GanConfig {
        d_lat: 6,
        ..GanConfig::default()
    };
    let model = SpsGan::new(config, &mut ChaCha8Rng::seed_from_u64(0))?;
    let kind = SystemKind::TwoBody;
    let (cond, mask) = system_condition(kind, &SystemParams::defaults(kind), &ds.manifest.param_ranges, ds.manifest.d_out);
    let report = analyze(&model, &cond, &mask, 128, 1, &DimensionConfig::default())?;
    println!("activity {:?}", report.activity);
    println!("active coordinates {} of {}, pca dimension {}", report.dimension, report.activity.len(), report.pca_dimension);
    Ok(())
}

#[allow(dead_code)]
fn main() -> sympgan::Result<()> {
    run()
}
