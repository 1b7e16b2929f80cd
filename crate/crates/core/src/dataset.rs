//! Trajectory datasets: generation, binary persistence, CSV export and
//! conditioned minibatches.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::integrators::{simulate, IntegratorConfig};
use crate::systems::{
    hamiltonian, sample_initial_condition, to_cartesian_padded, PhaseState, SystemKind, SystemParams, D_OUT,
    PARAM_NAMES,
};

pub const DATASET_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
/// One-hot system label followed by the normalized physical parameters.
pub const CONDITION_DIM: usize = SystemKind::ALL.len() + PARAM_NAMES.len();
/// Trajectories per system when a spec does not say otherwise.
pub const DEFAULT_COUNT: usize = 5000;
/// Relative energy tolerance every stored trajectory must meet.
pub const ENERGY_TOLERANCE: f64 = 1e-5;

/// Uniformly varied physical parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamRange {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    pub kind: SystemKind,
    pub count: usize,
    pub params: SystemParams,
    #[serde(default)]
    pub vary: Vec<ParamRange>,
}

impl SystemSpec {
    pub fn constant(kind: SystemKind, count: usize) -> Self {
        Self {
            kind,
            count,
            params: SystemParams::defaults(kind),
            vary: Vec::new(),
        }
    }

    fn sample_params(&self, rng: &mut impl Rng) -> Result<SystemParams> {
        let mut params = self.params;
        for r in &self.vary {
            let v = if r.lo == r.hi { r.lo } else { rng.random_range(r.lo..=r.hi) };
            params.set(&r.name, v)?;
        }
        Ok(params)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub systems: Vec<SystemSpec>,
    pub seed: u64,
    pub integrator: IntegratorConfig,
    pub d_out: usize,
    /// Resampling attempts per trajectory after a rejected simulation.
    pub max_retries: usize,
}

impl DatasetSpec {
    pub fn new(systems: Vec<SystemSpec>, seed: u64) -> Self {
        Self {
            systems,
            seed,
            integrator: IntegratorConfig::default(),
            d_out: D_OUT,
            max_retries: 20,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.systems.is_empty() || self.systems.iter().all(|s| s.count == 0) {
            return Err(Error::Config("dataset spec has no trajectories".into()));
        }
        self.integrator.validate()?;
        for s in &self.systems {
            if s.kind.particles() > self.d_out {
                return Err(Error::Config(format!("{} needs more than d_out = {} slots", s.kind, self.d_out)));
            }
            s.params.validate(s.kind)?;
            for r in &s.vary {
                if !(r.lo <= r.hi) {
                    return Err(Error::Config(format!("empty range for `{}`", r.name)));
                }
                let mut p = s.params;
                p.set(&r.name, r.lo)?;
                p.validate(s.kind)?;
            }
        }
        Ok(())
    }

    /// Per-parameter bounds over every system in the spec.
    pub fn param_ranges(&self) -> ParamBounds {
        let n = PARAM_NAMES.len();
        let mut min = vec![f64::INFINITY; n];
        let mut max = vec![f64::NEG_INFINITY; n];
        for s in &self.systems {
            let base = s.params.to_vec();
            for i in 0..n {
                let (lo, hi) = s
                    .vary
                    .iter()
                    .find(|r| r.name == PARAM_NAMES[i])
                    .map_or((base[i], base[i]), |r| (r.lo, r.hi));
                min[i] = min[i].min(lo);
                max[i] = max[i].max(hi);
            }
        }
        ParamBounds { min, max }
    }
}

/// Min-max bounds used to normalize the physical-parameter part of a
/// condition vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamBounds {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl ParamBounds {
    pub fn single(params: &SystemParams) -> Self {
        Self {
            min: params.to_vec(),
            max: params.to_vec(),
        }
    }
}

/// One-hot label concatenated with min-max normalized parameters. A
/// parameter with an empty range maps to 0.
pub fn condition_vector(kind: SystemKind, params: &SystemParams, bounds: &ParamBounds) -> Vec<f64> {
    let mut c = vec![0.0; CONDITION_DIM];
    c[kind.index()] = 1.0;
    for (i, v) in params.to_vec().into_iter().enumerate() {
        let span = bounds.max[i] - bounds.min[i];
        c[SystemKind::ALL.len() + i] = if span > 0.0 { (v - bounds.min[i]) / span } else { 0.0 };
    }
    c
}

pub fn default_batch_size(kind: SystemKind) -> usize {
    match kind {
        SystemKind::ThreeBody => 160,
        _ => 128,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRecord {
    pub kind: SystemKind,
    pub params: SystemParams,
    pub dt: f64,
    /// Row-major `[frame][particle][coordinate]`, `T * 2 * d_out` values.
    pub frames: Vec<f64>,
    /// Per-particle activity, length `d_out`.
    pub mask: Vec<f64>,
    /// Phase-space states at each frame.
    pub states: Vec<PhaseState>,
    pub seed: u64,
}

impl TrajectoryRecord {
    pub fn frame_count(&self) -> usize {
        self.states.len()
    }

    pub fn d_out(&self) -> usize {
        self.mask.len()
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        let w = 2 * self.d_out();
        &self.frames[t * w..(t + 1) * w]
    }

    /// Simulates one trajectory from its own seed, resampling rejected
    /// attempts.
    fn simulate(spec: &SystemSpec, cfg: &DatasetSpec, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut last_err = None;
        for _ in 0..=cfg.max_retries {
            let params = spec.sample_params(&mut rng)?;
            let s0 = sample_initial_condition(spec.kind, &params, &mut rng);
            match simulate(spec.kind, &params, &s0, &cfg.integrator).and_then(|states| {
                energy_gate(spec.kind, &params, &states)?;
                Ok(states)
            }) {
                Ok(states) => {
                    let mut frames = Vec::with_capacity(states.len() * 2 * cfg.d_out);
                    for s in &states {
                        frames.extend(to_cartesian_padded(spec.kind, &params, s, cfg.d_out).xy);
                    }
                    return Ok(Self {
                        kind: spec.kind,
                        params,
                        dt: cfg.integrator.dt,
                        frames,
                        mask: spec.kind.mask(cfg.d_out),
                        states,
                        seed,
                    });
                }
                Err(e) => {
                    log::debug!("{}: rejected trajectory ({e}), resampling", spec.kind);
                    last_err = Some(e);
                }
            }
        }
        Err(last_err.unwrap_or_else(|| Error::InvalidState("no attempts".into())))
    }
}

fn energy_gate(kind: SystemKind, params: &SystemParams, states: &[PhaseState]) -> Result<()> {
    let e0 = hamiltonian(kind, params, &states[0])?;
    let scale = e0.abs().max(1e-12);
    for (t, s) in states.iter().enumerate() {
        let e = hamiltonian(kind, params, s)?;
        if (e - e0).abs() / scale > ENERGY_TOLERANCE {
            return Err(Error::Diverged {
                step: t,
                reason: format!("energy drift {:.3e} above tolerance", (e - e0) / scale),
            });
        }
    }
    Ok(())
}

/// Seed of trajectory `index` of system `kind`, derived with a splitmix64
/// mix of the global seed and the stream id.
pub fn trajectory_seed(seed: u64, kind: SystemKind, index: usize) -> u64 {
    let stream = ((kind.index() as u64) << 40) | index as u64;
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub kind: SystemKind,
    pub count: usize,
    pub frames_sha256: String,
    pub phase_sha256: String,
    pub params_sha256: String,
    pub seeds: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub seed: u64,
    pub frames: usize,
    pub dt: f64,
    pub d_out: usize,
    pub param_ranges: ParamBounds,
    pub systems: Vec<ManifestEntry>,
    pub spec: DatasetSpec,
}

impl DatasetManifest {
    pub fn count(&self, kind: SystemKind) -> usize {
        self.systems.iter().filter(|e| e.kind == kind).map(|e| e.count).sum()
    }

    pub fn total(&self) -> usize {
        self.systems.iter().map(|e| e.count).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub records: Vec<TrajectoryRecord>,
}

impl Dataset {
    /// Simulates every trajectory of `spec`.
    pub fn generate(spec: &DatasetSpec) -> Result<Self> {
        spec.validate()?;
        let mut records = Vec::new();
        let mut entries: Vec<ManifestEntry> = Vec::new();
        for s in &spec.systems {
            let offset = entries.iter().filter(|e| e.kind == s.kind).map(|e| e.count).sum::<usize>();
            let mut seeds = Vec::with_capacity(s.count);
            for i in 0..s.count {
                let seed = trajectory_seed(spec.seed, s.kind, offset + i);
                records.push(TrajectoryRecord::simulate(s, spec, seed)?);
                seeds.push(seed);
            }
            entries.push(ManifestEntry {
                kind: s.kind,
                count: s.count,
                frames_sha256: String::new(),
                phase_sha256: String::new(),
                params_sha256: String::new(),
                seeds,
            });
        }
        let manifest = DatasetManifest {
            version: DATASET_VERSION,
            seed: spec.seed,
            frames: spec.integrator.frames,
            dt: spec.integrator.dt,
            d_out: spec.d_out,
            param_ranges: spec.param_ranges(),
            systems: merge_entries(entries),
            spec: spec.clone(),
        };
        let mut ds = Self { manifest, records };
        ds.records.sort_by_key(|r| r.kind.index());
        ds.refresh_checksums();
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records_of(&self, kind: SystemKind) -> impl Iterator<Item = &TrajectoryRecord> {
        self.records.iter().filter(move |r| r.kind == kind)
    }

    pub fn condition(&self, record: &TrajectoryRecord) -> Vec<f64> {
        condition_vector(record.kind, &record.params, &self.manifest.param_ranges)
    }

    fn blobs(&self, kind: SystemKind) -> [Vec<u8>; 3] {
        let mut frames = Vec::new();
        let mut phase = Vec::new();
        let mut params = Vec::new();
        for r in self.records_of(kind) {
            push_f64s(&mut frames, &r.frames);
            for s in &r.states {
                push_f64s(&mut phase, &s.q);
                push_f64s(&mut phase, &s.p);
            }
            push_f64s(&mut params, &r.params.to_vec());
        }
        [frames, phase, params]
    }

    fn refresh_checksums(&mut self) {
        let sums: Vec<_> = self
            .manifest
            .systems
            .iter()
            .map(|e| self.blobs(e.kind).map(|b| sha256_hex(&b)))
            .collect();
        for (e, [f, p, x]) in self.manifest.systems.iter_mut().zip(sums) {
            e.frames_sha256 = f;
            e.phase_sha256 = p;
            e.params_sha256 = x;
        }
    }

    /// Writes `manifest.json` and the per-system binary arrays.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for e in &self.manifest.systems {
            let [frames, phase, params] = self.blobs(e.kind);
            let names = file_names(e.kind);
            fs::write(dir.join(&names[0]), frames)?;
            fs::write(dir.join(&names[1]), phase)?;
            fs::write(dir.join(&names[2]), params)?;
        }
        fs::write(dir.join(MANIFEST_FILE), serde_json::to_vec_pretty(&self.manifest)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join(MANIFEST_FILE);
        if !manifest_path.exists() {
            return Err(Error::NoManifest(dir.to_path_buf()));
        }
        let manifest: DatasetManifest = serde_json::from_slice(&fs::read(&manifest_path)?)?;
        if manifest.version != DATASET_VERSION {
            return Err(Error::Version {
                found: manifest.version,
                expected: DATASET_VERSION,
            });
        }
        let (t, d_out) = (manifest.frames, manifest.d_out);
        let mut records = Vec::with_capacity(manifest.total());
        for e in &manifest.systems {
            let names = file_names(e.kind);
            let expected = [&e.frames_sha256, &e.phase_sha256, &e.params_sha256];
            let mut blobs = Vec::with_capacity(3);
            for (name, sum) in names.iter().zip(expected) {
                let path = dir.join(name);
                if !path.exists() {
                    return Err(Error::MissingArtifact(path));
                }
                let bytes = fs::read(&path)?;
                let found = sha256_hex(&bytes);
                if &found != sum {
                    return Err(Error::Checksum {
                        file: path.display().to_string(),
                        expected: sum.clone(),
                        found,
                    });
                }
                blobs.push(read_f64s(&bytes));
            }
            let dof = e.kind.dof();
            let (fw, pw, xw) = (t * 2 * d_out, t * 2 * dof, PARAM_NAMES.len());
            if blobs[0].len() != e.count * fw || blobs[1].len() != e.count * pw || blobs[2].len() != e.count * xw {
                return Err(Error::shape("load_dataset", format!("{}: array sizes disagree with manifest", e.kind)));
            }
            for i in 0..e.count {
                let phase = &blobs[1][i * pw..(i + 1) * pw];
                let states = phase
                    .chunks(2 * dof)
                    .map(|c| PhaseState::new(c[..dof].to_vec(), c[dof..].to_vec()))
                    .collect();
                records.push(TrajectoryRecord {
                    kind: e.kind,
                    params: SystemParams::from_vec(&blobs[2][i * xw..(i + 1) * xw])?,
                    dt: manifest.dt,
                    frames: blobs[0][i * fw..(i + 1) * fw].to_vec(),
                    mask: e.kind.mask(d_out),
                    states,
                    seed: e.seeds[i],
                });
            }
        }
        Ok(Self { manifest, records })
    }

    /// Gathers the records at `indices` into batch tensors.
    pub fn batch(&self, indices: &[usize]) -> Batch {
        let recs: Vec<&TrajectoryRecord> = indices.iter().map(|&i| &self.records[i]).collect();
        Batch::from_records(&recs, &self.manifest.param_ranges)
    }
}

fn merge_entries(entries: Vec<ManifestEntry>) -> Vec<ManifestEntry> {
    let mut out: Vec<ManifestEntry> = Vec::new();
    for kind in SystemKind::ALL {
        let mut seeds = Vec::new();
        for e in entries.iter().filter(|e| e.kind == kind) {
            seeds.extend(&e.seeds);
        }
        if !seeds.is_empty() {
            out.push(ManifestEntry {
                kind,
                count: seeds.len(),
                frames_sha256: String::new(),
                phase_sha256: String::new(),
                params_sha256: String::new(),
                seeds,
            });
        }
    }
    out
}

fn file_names(kind: SystemKind) -> [String; 3] {
    [
        format!("{}.bin", kind.name()),
        format!("{}.phase.bin", kind.name()),
        format!("{}.params.bin", kind.name()),
    ]
}

fn push_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn read_f64s(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect()
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Generates a dataset and writes it to `dir`.
pub fn generate_dataset(spec: &DatasetSpec, dir: &Path) -> Result<Dataset> {
    let ds = Dataset::generate(spec)?;
    ds.save(dir)?;
    Ok(ds)
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    Dataset::load(dir)
}

/// Writes one record as CSV with header `t,x1,y1,...`.
pub fn export_csv(record: &TrajectoryRecord, path: &Path) -> Result<()> {
    write_frames_csv(&record.frames, record.d_out(), record.dt, path)
}

/// Shared CSV writer for flat `[frame][particle][coordinate]` arrays.
pub fn write_frames_csv(frames: &[f64], d_out: usize, dt: f64, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    let mut header = vec!["t".to_string()];
    for i in 1..=d_out {
        header.push(format!("x{i}"));
        header.push(format!("y{i}"));
    }
    writeln!(out, "{}", header.join(","))?;
    for (t, row) in frames.chunks(2 * d_out).enumerate() {
        let mut line = format!("{}", t as f64 * dt);
        for v in row {
            line.push(',');
            line.push_str(&v.to_string());
        }
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

/// Batch tensors: one row per trajectory.
#[derive(Clone, Debug)]
pub struct Batch {
    /// `[B, T * 2 * d_out]`
    pub frames: Tensor,
    /// `[B, 2 * d_out]`, the particle mask repeated for x and y.
    pub mask: Tensor,
    /// `[B, CONDITION_DIM]`
    pub condition: Tensor,
    pub kinds: Vec<SystemKind>,
}

impl Batch {
    pub fn from_records(records: &[&TrajectoryRecord], bounds: &ParamBounds) -> Self {
        let frames: Vec<Vec<f64>> = records.iter().map(|r| r.frames.clone()).collect();
        let mask: Vec<Vec<f64>> = records.iter().map(|r| coordinate_mask(&r.mask)).collect();
        let cond: Vec<Vec<f64>> = records
            .iter()
            .map(|r| condition_vector(r.kind, &r.params, bounds))
            .collect();
        Self {
            frames: Tensor::from_rows(&frames),
            mask: Tensor::from_rows(&mask),
            condition: Tensor::from_rows(&cond),
            kinds: records.iter().map(|r| r.kind).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }
}

/// Expands a per-particle mask to per-coordinate `[m1, m1, m2, m2, ...]`.
pub fn coordinate_mask(mask: &[f64]) -> Vec<f64> {
    mask.iter().flat_map(|&m| [m, m]).collect()
}

/// Endless stream of shuffled index batches. Each epoch is a fresh
/// permutation split into full batches; a trailing partial batch is dropped.
pub struct Minibatches {
    order: Vec<usize>,
    batch_size: usize,
    cursor: usize,
    rng: ChaCha8Rng,
    pub epoch: usize,
}

impl Minibatches {
    pub fn new(n_records: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size == 0 || batch_size > n_records {
            return Err(Error::Config(format!(
                "batch size {batch_size} must be in 1..={n_records}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..n_records).collect();
        order.shuffle(&mut rng);
        Ok(Self {
            order,
            batch_size,
            cursor: 0,
            rng,
            epoch: 0,
        })
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.order.len() / self.batch_size
    }
}

impl Iterator for Minibatches {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.cursor + self.batch_size > self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
            self.epoch += 1;
        }
        let b = self.order[self.cursor..self.cursor + self.batch_size].to_vec();
        self.cursor += self.batch_size;
        Some(b)
    }
}

/// Standard per-system generation spec with default parameters.
pub fn default_spec(kinds: &[SystemKind], count: usize, seed: u64) -> DatasetSpec {
    DatasetSpec::new(kinds.iter().map(|&k| SystemSpec::constant(k, count)).collect(), seed)
}

pub fn manifest_path(dir: &Path) -> PathBuf {
    dir.join(MANIFEST_FILE)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(kind: SystemKind, n: usize, seed: u64) -> Dataset {
        Dataset::generate(&default_spec(&[kind], n, seed)).unwrap()
    }

    #[test]
    fn regeneration_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let spec = default_spec(&[SystemKind::Pendulum], 100, 7);
        generate_dataset(&spec, &dir.path().join("a")).unwrap();
        generate_dataset(&spec, &dir.path().join("b")).unwrap();
        for f in ["manifest.json", "pendulum.bin", "pendulum.phase.bin", "pendulum.params.bin"] {
            let a = fs::read(dir.path().join("a").join(f)).unwrap();
            let b = fs::read(dir.path().join("b").join(f)).unwrap();
            assert_eq!(a, b, "{f}");
        }
    }

    #[test]
    fn masks_and_padding() {
        let ms = small(SystemKind::MassSpring, 2, 1);
        assert_eq!(ms.records[0].mask, vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let tb = small(SystemKind::ThreeBody, 3, 1);
        for r in &tb.records {
            assert_eq!(r.mask.iter().filter(|&&m| m == 1.0).count(), 3);
            for t in 0..r.frame_count() {
                assert!(r.frame(t)[6..].iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn frames_vanish_outside_mask() {
        for kind in SystemKind::ALL {
            let ds = small(kind, 3, 4);
            for r in &ds.records {
                let cm = coordinate_mask(&r.mask);
                for t in 0..r.frame_count() {
                    for (v, m) in r.frame(t).iter().zip(&cm) {
                        assert_eq!(v * (1.0 - m), 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn save_load_round_trip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let spec = DatasetSpec::new(
            vec![
                SystemSpec::constant(SystemKind::TwoBody, 4),
                SystemSpec::constant(SystemKind::DoublePendulum, 3),
            ],
            3,
        );
        let ds = generate_dataset(&spec, dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(ds, back);
        assert_eq!(back.manifest.count(SystemKind::TwoBody), 4);

        let path = dir.path().join("two-body.bin");
        let mut bytes = fs::read(&path).unwrap();
        bytes[17] ^= 1;
        fs::write(&path, bytes).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Checksum { .. })));
    }

    #[test]
    fn empty_directory_has_no_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_dataset(dir.path()).unwrap_err();
        assert!(matches!(err, Error::NoManifest(_)));
        assert!(err.to_string().contains("manifest"));
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate_dataset(&default_spec(&[SystemKind::MassSpring], 2, 0), dir.path()).unwrap();
        let mut m = ds.manifest.clone();
        m.version = 99;
        fs::write(manifest_path(dir.path()), serde_json::to_vec(&m).unwrap()).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Version { found: 99, .. })));
    }

    #[test]
    fn minibatches_cover_each_epoch_disjointly() {
        let mut mb = Minibatches::new(256, 128, 5).unwrap();
        assert_eq!(mb.batches_per_epoch(), 2);
        let mut seen: Vec<usize> = mb.next().unwrap();
        seen.extend(mb.next().unwrap());
        seen.sort();
        assert_eq!(seen, (0..256).collect::<Vec<_>>());
        let a: Vec<_> = Minibatches::new(256, 128, 5).unwrap().take(6).collect();
        let b: Vec<_> = Minibatches::new(256, 128, 5).unwrap().take(6).collect();
        assert_eq!(a, b);
        assert!(Minibatches::new(10, 11, 0).is_err());
    }

    #[test]
    fn batch_conditions_follow_record_kinds() {
        let spec = DatasetSpec::new(
            vec![
                SystemSpec::constant(SystemKind::MassSpring, 5),
                SystemSpec::constant(SystemKind::Pendulum, 5),
            ],
            2,
        );
        let ds = Dataset::generate(&spec).unwrap();
        let mut mb = Minibatches::new(ds.len(), 4, 9).unwrap();
        for _ in 0..5 {
            let idx = mb.next().unwrap();
            let b = ds.batch(&idx);
            for (row, &i) in idx.iter().enumerate() {
                let k = ds.records[i].kind;
                assert_eq!(b.kinds[row], k);
                assert_eq!(b.condition.get(row, k.index()), 1.0);
                assert_eq!(b.condition.row_slice(row)[..5].iter().sum::<f64>(), 1.0);
            }
        }
    }

    #[test]
    fn condition_normalization() {
        let mut spec = SystemSpec::constant(SystemKind::MassSpring, 1);
        spec.vary.push(ParamRange {
            name: "m1".into(),
            lo: 0.5,
            hi: 1.5,
        });
        let ds = DatasetSpec::new(vec![spec], 0);
        let bounds = ds.param_ranges();
        let mut p = SystemParams::defaults(SystemKind::MassSpring);
        p.masses[0] = 1.0;
        let c = condition_vector(SystemKind::MassSpring, &p, &bounds);
        assert_eq!(c.len(), CONDITION_DIM);
        assert_eq!(c[0], 1.0);
        assert_eq!(c[5], 0.5);
        assert!(c[6..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn varied_parameters_stay_in_range() {
        let mut spec = SystemSpec::constant(SystemKind::Pendulum, 20);
        spec.vary.push(ParamRange {
            name: "length".into(),
            lo: 0.8,
            hi: 1.2,
        });
        let ds = Dataset::generate(&DatasetSpec::new(vec![spec], 1)).unwrap();
        assert!(ds.records.iter().all(|r| (0.8..=1.2).contains(&r.params.length)));
        assert!(ds.records.iter().any(|r| r.params.length != ds.records[0].params.length));
    }

    #[test]
    fn csv_export_shape() {
        let dir = tempfile::tempdir().unwrap();
        let ds = small(SystemKind::Pendulum, 1, 0);
        let path = dir.path().join("p.csv");
        export_csv(&ds.records[0], &path).unwrap();
        let text = fs::read_to_string(path).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 31);
        assert!(lines[0].starts_with("t,x1,y1,x2,y2"));
        assert!(lines[0].ends_with("x10,y10"));
        assert_eq!(lines[1].split(',').count(), 21);
    }

    #[test]
    fn empty_spec_is_rejected() {
        assert!(Dataset::generate(&DatasetSpec::new(vec![], 0)).is_err());
    }
}
