use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sympgan::dataset::{
    condition_vector, Dataset, DatasetSpec, ParamRange, SystemSpec, CONDITION_DIM, ENERGY_TOLERANCE,
};
use sympgan::systems::{hamiltonian, sample_initial_condition, sampler_bounds, SystemKind, SystemParams};

fn kind() -> impl Strategy<Value = SystemKind> {
    prop::sample::select(SystemKind::ALL.to_vec())
}

fn small_spec(kind: SystemKind, count: usize, seed: u64) -> DatasetSpec {
    let mut spec = DatasetSpec::new(vec![SystemSpec::constant(kind, count)], seed);
    spec.integrator.frames = 12;
    spec
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn initial_conditions_respect_sampler_radius(kind in kind(), seed in any::<u64>()) {
        let params = SystemParams::defaults(kind);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (lo, hi) = sampler_bounds(kind);
        let s = sample_initial_condition(kind, &params, &mut rng);
        prop_assert_eq!(s.dim(), kind.dof());
        match kind {
            SystemKind::MassSpring | SystemKind::Pendulum | SystemKind::DoublePendulum => {
                for i in 0..s.dim() {
                    let r = s.q[i].hypot(s.p[i]);
                    prop_assert!(r >= lo - 1e-12 && r <= hi + 1e-12, "r = {r}");
                }
            }
            SystemKind::TwoBody | SystemKind::ThreeBody => {
                let n = kind.particles();
                let px: f64 = s.p.iter().step_by(2).sum();
                let py: f64 = s.p.iter().skip(1).step_by(2).sum();
                prop_assert!(px.abs() < 1e-12 && py.abs() < 1e-12);
                for i in 0..n {
                    let r = s.q[2 * i].hypot(s.q[2 * i + 1]);
                    prop_assert!(r >= lo - 1e-12 && r <= hi + 1e-12, "r = {r}");
                }
            }
        }
    }

    #[test]
    fn condition_vectors_are_one_hot_and_normalized(kind in kind(), m in 0.2f64..2.0) {
        let mut sys = SystemSpec::constant(kind, 1);
        sys.vary = vec![ParamRange { name: "m1".into(), lo: 0.2, hi: 2.0 }];
        let spec = DatasetSpec::new(vec![sys], 0);
        let mut params = SystemParams::defaults(kind);
        params.masses[0] = m;
        let c = condition_vector(kind, &params, &spec.param_ranges());
        prop_assert_eq!(c.len(), CONDITION_DIM);
        let n = SystemKind::ALL.len();
        prop_assert_eq!(c[..n].iter().sum::<f64>(), 1.0);
        prop_assert_eq!(c[kind.index()], 1.0);
        prop_assert!(c[n..].iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn generation_is_deterministic_and_energy_consistent(kind in kind(), seed in any::<u64>()) {
        let spec = small_spec(kind, 3, seed);
        let a = Dataset::generate(&spec).unwrap();
        let b = Dataset::generate(&spec).unwrap();
        prop_assert_eq!(&a, &b);
        for r in &a.records {
            let e0 = hamiltonian(kind, &r.params, &r.states[0]).unwrap();
            for s in &r.states {
                let e = hamiltonian(kind, &r.params, s).unwrap();
                prop_assert!((e - e0).abs() <= ENERGY_TOLERANCE * e0.abs().max(1.0));
            }
        }
    }
}

#[test]
fn save_load_round_trip_preserves_every_bit() {
    let dir = tempfile::tempdir().unwrap();
    let spec = small_spec(SystemKind::DoublePendulum, 4, 9);
    let ds = Dataset::generate(&spec).unwrap();
    ds.save(dir.path()).unwrap();
    let back = Dataset::load(dir.path()).unwrap();
    assert_eq!(ds, back);
}

#[test]
fn different_seeds_give_different_data() {
    let a = Dataset::generate(&small_spec(SystemKind::Pendulum, 2, 1)).unwrap();
    let b = Dataset::generate(&small_spec(SystemKind::Pendulum, 2, 2)).unwrap();
    assert_ne!(a.records[0].frames, b.records[0].frames);
}
