//! Class-conditional synthetic feature maps, quantized into ground-truth
//! token maps, with a checksummed on-disk format.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{GrnError, Result};
use crate::hbq::{bound_features, pack_indices, quantize, BitPlanes, MAX_ROUNDS};
use crate::numerics::{Rng, Tensor};
use crate::refine::TokenMap;
use crate::trainer::Variant;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Deterministic,
    Bumps,
    Gradients,
    /// Bumps and gradients over a ladder of complexity levels: the field
    /// fades and the noise grows from a noise-free rung to `noise_sigma`.
    Mixed,
}

/// Number of rungs of the mixed-family noise ladder.
pub const NOISE_LEVELS: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub n_classes: usize,
    pub maps_per_class: usize,
    /// `[1 + T, H/16, W/16, C]`.
    pub grid: Vec<usize>,
    pub rounds: u8,
    #[serde(default)]
    pub noise_sigma: f64,
    pub family: Family,
    #[serde(default)]
    pub seed: u64,
}

impl DatasetSpec {
    /// Desk-scale default grid: one frame of 8x8 positions, 4 channels, 2 rounds.
    pub fn desk(family: Family, n_classes: usize, maps_per_class: usize, noise_sigma: f64, seed: u64) -> Self {
        Self {
            n_classes,
            maps_per_class,
            grid: vec![1, 8, 8, 4],
            rounds: 2,
            noise_sigma,
            family,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes == 0 || self.maps_per_class == 0 {
            return Err(GrnError::config("data.n_classes and data.maps_per_class must be positive"));
        }
        if self.grid.len() != 4 || self.grid.iter().any(|&d| d == 0) {
            return Err(GrnError::config(format!(
                "data.grid must be four positive extents [1+T, H, W, C], got {:?}",
                self.grid
            )));
        }
        if self.rounds == 0 || self.rounds > MAX_ROUNDS {
            return Err(GrnError::config(format!(
                "data.rounds must lie in 1..={MAX_ROUNDS}, got {}",
                self.rounds
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(GrnError::config(format!(
                "data.noise_sigma must be finite and >= 0, got {}",
                self.noise_sigma
            )));
        }
        if self.family == Family::Deterministic && self.noise_sigma != 0.0 {
            return Err(GrnError::config(format!(
                "data.family = deterministic requires data.noise_sigma = 0, got {}",
                self.noise_sigma
            )));
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        self.grid[3]
    }

    pub fn n_pos(&self) -> usize {
        self.grid[..3].iter().product()
    }

    /// Noise scale applied to `class`.
    pub fn class_noise(&self, class: usize) -> f64 {
        match self.family {
            Family::Deterministic => 0.0,
            Family::Bumps | Family::Gradients => self.noise_sigma,
            Family::Mixed => self.noise_sigma * rung(class),
        }
    }

    /// Gain on the class field; only the mixed family fades it.
    pub fn class_signal(&self, class: usize) -> f64 {
        match self.family {
            Family::Mixed => 1.0 - MIXED_FADE * rung(class),
            _ => 1.0,
        }
    }
}

/// Rung of the mixed-family noise ladder; 0 is noise-free.
pub fn noise_level(class: usize) -> usize {
    class % NOISE_LEVELS
}

/// Field attenuation at the top rung of the mixed family.
pub const MIXED_FADE: f64 = 1.0;

fn rung(class: usize) -> f64 {
    noise_level(class) as f64 / (NOISE_LEVELS - 1) as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Shape {
    Bumps,
    Gradients,
}

fn class_shape(spec: &DatasetSpec, class: usize) -> Shape {
    match spec.family {
        Family::Deterministic | Family::Bumps => Shape::Bumps,
        Family::Gradients => Shape::Gradients,
        Family::Mixed if (class / NOISE_LEVELS) % 2 == 0 => Shape::Bumps,
        Family::Mixed => Shape::Gradients,
    }
}

const BUMPS: usize = 3;

/// Noise-free pre-tanh field parameters of one class.
#[derive(Clone, Debug)]
struct ClassField {
    shape: Shape,
    // bumps: (center t, y, x), width, per-channel amplitude
    bumps: Vec<([f64; 3], f64, Vec<f64>)>,
    // gradients: per-channel (slope t, slope y, slope x)
    slopes: Vec<[f64; 3]>,
    offsets: Vec<f64>,
}

fn class_field(spec: &DatasetSpec, class: usize, attempt: u64) -> ClassField {
    let mut rng = Rng::new(spec.seed).derive(STREAM_CLASS).derive(class as u64).derive(attempt);
    let c = spec.channels();
    let g = &spec.grid;
    let signed = |rng: &mut Rng, lo: f64, hi: f64| {
        let m = lo + (hi - lo) * rng.next_f64();
        if rng.bernoulli(0.5) {
            m
        } else {
            -m
        }
    };
    let bumps = (0..BUMPS)
        .map(|_| {
            let center = [
                rng.next_f64() * (g[0] - 1) as f64,
                rng.next_f64() * (g[1] - 1) as f64,
                rng.next_f64() * (g[2] - 1) as f64,
            ];
            let width = 0.8 + 0.25 * rng.next_f64() * g[1].max(g[2]) as f64;
            let amps = (0..c).map(|_| signed(&mut rng, 0.6, 1.6)).collect();
            (center, width, amps)
        })
        .collect();
    let slopes = (0..c)
        .map(|_| [signed(&mut rng, 0.0, 1.0), signed(&mut rng, 0.5, 2.0), signed(&mut rng, 0.5, 2.0)])
        .collect();
    let offsets = (0..c).map(|_| signed(&mut rng, 0.0, 0.4)).collect();
    ClassField {
        shape: class_shape(spec, class),
        bumps,
        slopes,
        offsets,
    }
}

/// Evaluates the field with a per-map gain and center shift.
fn eval_field(f: &ClassField, spec: &DatasetSpec, gain: f64, shift: [f64; 3]) -> Vec<f64> {
    let g = &spec.grid;
    let c = g[3];
    let mut out = Vec::with_capacity(g.iter().product());
    for t in 0..g[0] {
        for y in 0..g[1] {
            for x in 0..g[2] {
                let p = [t as f64 - shift[0], y as f64 - shift[1], x as f64 - shift[2]];
                for ch in 0..c {
                    let v = match f.shape {
                        Shape::Bumps => f
                            .bumps
                            .iter()
                            .map(|(ctr, w, amps)| {
                                let d2: f64 = (0..3).map(|i| (p[i] - ctr[i]).powi(2)).sum();
                                amps[ch] * (-d2 / (2.0 * w * w)).exp()
                            })
                            .sum::<f64>(),
                        Shape::Gradients => (0..3)
                            .map(|i| f.slopes[ch][i] * (p[i] / g[i].max(2) as f64 - 0.5))
                            .sum::<f64>(),
                    };
                    out.push(gain * (v + f.offsets[ch]));
                }
            }
        }
    }
    out
}

const STREAM_CLASS: u64 = 11;
const STREAM_RECORD: u64 = 12;
const STREAM_AUDIT: u64 = 13;

/// One bounded feature map of `class`. `rng` supplies the per-map noise: a
/// global gain and sub-cell shift of the class field (structural) plus
/// independent per-element Gaussian noise, both scaled by the class noise.
pub fn generate_feature_map(class: usize, spec: &DatasetSpec, rng: &mut Rng) -> Result<Tensor<f64>> {
    spec.validate()?;
    if class >= spec.n_classes {
        return Err(GrnError::param(format!("class {class} outside {} classes", spec.n_classes)));
    }
    let field = class_field(spec, class, class_attempt(spec, class)?);
    Ok(sample_from_field(&field, spec, class, rng))
}

fn sample_from_field(field: &ClassField, spec: &DatasetSpec, class: usize, rng: &mut Rng) -> Tensor<f64> {
    let sigma = spec.class_noise(class);
    let signal = spec.class_signal(class);
    let mut values = if sigma > 0.0 {
        let gain = signal * (1.0 + 0.3 * sigma * rng.normal());
        let shift = [0.0, 0.5 * sigma * rng.normal(), 0.5 * sigma * rng.normal()];
        let mut v = eval_field(field, spec, gain, shift);
        let smooth = smooth_noise(&spec.grid, rng);
        for (x, s) in v.iter_mut().zip(smooth) {
            *x += sigma * (SMOOTH_SHARE * s + WHITE_SHARE * rng.normal());
        }
        v
    } else {
        eval_field(field, spec, signal, [0.0; 3])
    };
    values.iter_mut().for_each(|v| *v = v.clamp(-20.0, 20.0));
    let raw = Tensor::new(spec.grid.clone(), values).expect("finite field");
    bound_features(&raw)
}

/// Split of the unit-variance noise between a spatially smooth component and
/// independent per-element noise (squares sum to one).
pub const SMOOTH_SHARE: f64 = 0.95;
pub const WHITE_SHARE: f64 = 0.312_249_9;
/// Correlation length of the smooth component, in grid cells.
pub const SMOOTH_WIDTH: f64 = 1.2;

/// Unit-variance Gaussian field, independent per channel, blurred over the
/// three position axes with a separable Gaussian kernel.
fn smooth_noise(grid: &[usize], rng: &mut Rng) -> Vec<f64> {
    let radius = (3.0 * SMOOTH_WIDTH).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|d| (-(d * d) as f64 / (2.0 * SMOOTH_WIDTH * SMOOTH_WIDTH)).exp())
        .collect();
    let norm1 = kernel.iter().map(|k| k * k).sum::<f64>().sqrt();
    let mut v: Vec<f64> = (0..grid.iter().product::<usize>()).map(|_| rng.normal()).collect();
    let strides = [grid[1] * grid[2] * grid[3], grid[2] * grid[3], grid[3]];
    for axis in 0..3 {
        if grid[axis] == 1 {
            continue;
        }
        let src = v.clone();
        for (i, out) in v.iter_mut().enumerate() {
            let pos = (i / strides[axis] % grid[axis]) as isize;
            let mut acc = 0.0;
            for (j, k) in kernel.iter().enumerate() {
                let q = pos + j as isize - radius;
                if (0..grid[axis] as isize).contains(&q) {
                    acc += k * src[(i as isize + (q - pos) * strides[axis] as isize) as usize];
                }
            }
            *out = acc / norm1;
        }
    }
    v
}

/// Minimum fraction of index tokens in which class prototypes must differ.
pub const MIN_CLASS_DISTANCE: f64 = 0.10;
const MAX_ATTEMPTS: u64 = 64;

fn prototype(spec: &DatasetSpec, class: usize, attempt: u64) -> Vec<u16> {
    let field = class_field(spec, class, attempt);
    let noiseless = DatasetSpec {
        noise_sigma: 0.0,
        family: match spec.family {
            Family::Mixed => Family::Bumps,
            f => f,
        },
        ..spec.clone()
    };
    let f = sample_from_field(&field, &noiseless, class, &mut Rng::new(0));
    let planes = quantize(&f, spec.rounds).expect("bounded field");
    pack_indices(&planes).values().to_vec()
}

fn distance(a: &[u16], b: &[u16]) -> f64 {
    a.iter().zip(b).filter(|(x, y)| x != y).count() as f64 / a.len() as f64
}

/// Resolves, for every class, the first field draw whose prototype is at
/// least [`MIN_CLASS_DISTANCE`] away from all earlier classes.
fn class_attempts(spec: &DatasetSpec) -> Result<Vec<u64>> {
    let mut protos: Vec<Vec<u16>> = Vec::with_capacity(spec.n_classes);
    let mut attempts = Vec::with_capacity(spec.n_classes);
    for class in 0..spec.n_classes {
        let found = (0..MAX_ATTEMPTS).find_map(|a| {
            let p = prototype(spec, class, a);
            protos
                .iter()
                .all(|q| distance(&p, q) >= MIN_CLASS_DISTANCE)
                .then_some((a, p))
        });
        let (a, p) = found.ok_or_else(|| {
            GrnError::config(format!(
                "could not make class {class} differ from earlier classes in {MIN_CLASS_DISTANCE} of tokens; \
                 enlarge data.grid or reduce data.n_classes"
            ))
        })?;
        attempts.push(a);
        protos.push(p);
    }
    Ok(attempts)
}

fn class_attempt(spec: &DatasetSpec, class: usize) -> Result<u64> {
    Ok(class_attempts(spec)?[class])
}

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub class: usize,
    pub index: usize,
    pub planes: BitPlanes,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub records: Vec<Record>,
    /// Per-class mean normalized token-marginal entropy.
    pub class_entropy: Vec<f64>,
}

/// Draws used per class by the entropy audit.
pub const AUDIT_DRAWS: usize = 64;
/// Required entropy spread across classes of a mixed dataset.
pub const MIN_ENTROPY_SPREAD: f64 = 0.3;

pub fn build_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let attempts = class_attempts(spec)?;
    let fields: Vec<ClassField> = (0..spec.n_classes).map(|c| class_field(spec, c, attempts[c])).collect();
    let base = Rng::new(spec.seed).derive(STREAM_RECORD);
    let jobs: Vec<(usize, usize)> = (0..spec.n_classes)
        .flat_map(|c| (0..spec.maps_per_class).map(move |i| (c, i)))
        .collect();
    let records = jobs
        .par_iter()
        .map(|&(class, index)| {
            let mut rng = base.derive(class as u64).derive(index as u64);
            let f = sample_from_field(&fields[class], spec, class, &mut rng);
            Ok(Record {
                class,
                index,
                planes: quantize(&f, spec.rounds)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let audit = Rng::new(spec.seed).derive(STREAM_AUDIT);
    let class_entropy = (0..spec.n_classes)
        .into_par_iter()
        .map(|c| {
            let mut rng = audit.derive(c as u64);
            let maps: Vec<Vec<u16>> = (0..AUDIT_DRAWS)
                .map(|_| {
                    let f = sample_from_field(&fields[c], spec, c, &mut rng);
                    pack_indices(&quantize(&f, spec.rounds).expect("bounded")).values().to_vec()
                })
                .collect();
            marginal_entropy(&maps, 1 << spec.rounds)
        })
        .collect::<Vec<f64>>();
    if spec.family == Family::Mixed && spec.n_classes > 1 {
        let lo = class_entropy.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = class_entropy.iter().cloned().fold(0.0, f64::max);
        if hi - lo < MIN_ENTROPY_SPREAD {
            return Err(GrnError::config(format!(
                "mixed dataset class entropies span only {:.3} (< {MIN_ENTROPY_SPREAD}); raise data.noise_sigma",
                hi - lo
            )));
        }
    }
    Ok(Dataset {
        spec: spec.clone(),
        records,
        class_entropy,
    })
}

/// Mean over token slots of the normalized entropy of the empirical
/// distribution of that slot across `maps`.
pub fn marginal_entropy(maps: &[Vec<u16>], k: usize) -> f64 {
    let n = maps[0].len();
    let mut counts = vec![0usize; k];
    let mut total = 0.0;
    for slot in 0..n {
        counts.iter_mut().for_each(|c| *c = 0);
        for m in maps {
            counts[m[slot] as usize] += 1;
        }
        let h: f64 = counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / maps.len() as f64;
                -p * p.log2()
            })
            .sum();
        total += h / (k as f64).log2();
    }
    total / n as f64
}

impl Dataset {
    /// `(class, Y_gt)` pairs in the given variant's token layout.
    pub fn token_maps(&self, variant: Variant) -> Vec<(usize, TokenMap)> {
        self.records
            .iter()
            .map(|r| (r.class, TokenMap::from_planes(&r.planes, variant.layout())))
            .collect()
    }

    pub fn class_records(&self, class: usize) -> impl Iterator<Item = &Record> {
        self.records.iter().filter(move |r| r.class == class)
    }
}

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Manifest {
    schema_version: u32,
    spec: DatasetSpec,
    class_entropy: Vec<f64>,
    records: Vec<ManifestRecord>,
}

#[derive(Serialize, Deserialize)]
struct ManifestRecord {
    file: String,
    class: usize,
    index: usize,
    sha256: String,
}

fn record_name(class: usize, index: usize) -> String {
    format!("records/{class}_{index}.hbq")
}

pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    let rec_dir = dir.join("records");
    fs::create_dir_all(&rec_dir).map_err(|e| GrnError::io(&rec_dir, e))?;
    let mut records = Vec::with_capacity(ds.records.len());
    for r in &ds.records {
        let bytes = r.planes.to_bytes();
        let file = record_name(r.class, r.index);
        let path = dir.join(&file);
        fs::write(&path, &bytes).map_err(|e| GrnError::io(&path, e))?;
        records.push(ManifestRecord {
            file,
            class: r.class,
            index: r.index,
            sha256: hex::encode(Sha256::digest(&bytes)),
        });
    }
    let manifest = Manifest {
        schema_version: MANIFEST_VERSION,
        spec: ds.spec.clone(),
        class_entropy: ds.class_entropy.clone(),
        records,
    };
    let path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| GrnError::config(e.to_string()))?;
    fs::write(&path, json + "\n").map_err(|e| GrnError::io(&path, e))
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| GrnError::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| {
        GrnError::format(line_col_offset(&text, e.line(), e.column()), format!("manifest: {e}"))
    })?;
    if manifest.schema_version != MANIFEST_VERSION {
        return Err(GrnError::config(format!(
            "manifest schema_version {} unsupported (expected {MANIFEST_VERSION})",
            manifest.schema_version
        )));
    }
    manifest.spec.validate()?;
    let mut seen = BTreeMap::new();
    let mut records = Vec::with_capacity(manifest.records.len());
    for m in &manifest.records {
        let path = dir.join(&m.file);
        let bytes = fs::read(&path).map_err(|e| GrnError::io(&path, e))?;
        let digest = hex::encode(Sha256::digest(&bytes));
        if digest != m.sha256 {
            return Err(GrnError::Format {
                offset: 0,
                msg: format!("checksum mismatch for {}: manifest {} vs file {digest}", m.file, m.sha256),
            });
        }
        let planes = BitPlanes::from_bytes(&bytes).map_err(|e| match e {
            GrnError::Format { offset, msg } => GrnError::Format {
                offset,
                msg: format!("{}: {msg}", m.file),
            },
            other => other,
        })?;
        if planes.shape() != manifest.spec.grid.as_slice() || planes.rounds() != manifest.spec.rounds {
            return Err(GrnError::param(format!(
                "{} has shape {:?} x {} rounds, manifest says {:?} x {}",
                m.file,
                planes.shape(),
                planes.rounds(),
                manifest.spec.grid,
                manifest.spec.rounds
            )));
        }
        if m.class >= manifest.spec.n_classes || seen.insert((m.class, m.index), ()).is_some() {
            return Err(GrnError::param(format!("invalid or duplicate record {}", m.file)));
        }
        records.push(Record {
            class: m.class,
            index: m.index,
            planes,
        });
    }
    if records.len() != manifest.spec.n_classes * manifest.spec.maps_per_class {
        return Err(GrnError::param(format!(
            "manifest lists {} records, spec implies {}",
            records.len(),
            manifest.spec.n_classes * manifest.spec.maps_per_class
        )));
    }
    Ok(Dataset {
        spec: manifest.spec,
        records,
        class_entropy: manifest.class_entropy,
    })
}

fn line_col_offset(text: &str, line: usize, col: usize) -> usize {
    text.split_inclusive('\n').take(line.saturating_sub(1)).map(str::len).sum::<usize>() + col.saturating_sub(1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hbq::{flatten_bits, unflatten_bits, unpack_indices};

    fn det(n: usize) -> DatasetSpec {
        DatasetSpec::desk(Family::Deterministic, n, 1, 0.0, 3)
    }

    #[test]
    fn deterministic_maps_repeat() {
        let mut spec = det(4);
        spec.maps_per_class = 3;
        let mut rng = Rng::new(1);
        let a = generate_feature_map(2, &spec, &mut rng).unwrap();
        let b = generate_feature_map(2, &spec, &mut rng).unwrap();
        assert_eq!(a, b);
        assert!(a.data().iter().all(|v| v.abs() < 1.0));
        let ds = build_dataset(&spec).unwrap();
        assert_eq!(ds.records.len(), 12);
        let first: Vec<_> = ds.class_records(1).map(|r| r.planes.clone()).collect();
        assert!(first.windows(2).all(|w| w[0] == w[1]));
        assert!(ds.class_entropy.iter().all(|&h| h == 0.0));
    }

    #[test]
    fn build_counts_and_reproducible() {
        let spec = det(10);
        let a = build_dataset(&spec).unwrap();
        assert_eq!(a.records.len(), 10);
        assert_eq!(a, build_dataset(&spec).unwrap());
        let mut other = spec.clone();
        other.seed += 1;
        assert_ne!(a, build_dataset(&other).unwrap());
    }

    #[test]
    fn classes_are_distinct_at_four_rounds() {
        for family in [Family::Deterministic, Family::Gradients] {
            let mut spec = DatasetSpec::desk(family, 10, 1, 0.0, 9);
            spec.rounds = 4;
            let protos: Vec<Vec<u16>> = build_dataset(&spec)
                .unwrap()
                .records
                .iter()
                .map(|r| pack_indices(&r.planes).values().to_vec())
                .collect();
            for i in 0..protos.len() {
                for j in 0..i {
                    assert!(distance(&protos[i], &protos[j]) >= MIN_CLASS_DISTANCE);
                }
            }
        }
    }

    #[test]
    fn mixed_family_spans_entropy() {
        let spec = DatasetSpec::desk(Family::Mixed, 10, 4, 1.0, 5);
        let ds = build_dataset(&spec).unwrap();
        for c in 0..10 {
            if noise_level(c) == 0 {
                assert_eq!(ds.class_entropy[c], 0.0);
            }
        }
        let hi = ds.class_entropy.iter().cloned().fold(0.0, f64::max);
        assert!(hi >= MIN_ENTROPY_SPREAD);
        let mut weak = spec.clone();
        weak.noise_sigma = 0.0;
        assert!(build_dataset(&weak).is_err());
    }

    #[test]
    fn records_round_trip_through_views() {
        let mut spec = DatasetSpec::desk(Family::Bumps, 3, 2, 0.5, 1);
        spec.grid = vec![2, 4, 4, 3];
        let ds = build_dataset(&spec).unwrap();
        for r in &ds.records {
            let q = &r.planes;
            assert_eq!(&unpack_indices(&pack_indices(q), q.rounds()).unwrap(), q);
            assert_eq!(&unflatten_bits(&flatten_bits(q), 3, q.rounds()).unwrap(), q);
        }
    }

    #[test]
    fn save_load_and_corruption() {
        let spec = DatasetSpec::desk(Family::Mixed, 5, 2, 1.0, 2);
        let ds = build_dataset(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        assert_eq!(load_dataset(dir.path()).unwrap(), ds);

        let rec = dir.path().join("records/3_1.hbq");
        let bytes = fs::read(&rec).unwrap();
        fs::write(&rec, &bytes[..bytes.len() - 2]).unwrap();
        let err = load_dataset(dir.path()).unwrap_err();
        assert!(err.to_string().contains("checksum"), "{err}");

        // Truncation with a matching checksum surfaces the parse offset.
        let cut = &bytes[..bytes.len() - 2];
        let man = dir.path().join("manifest.json");
        let text = fs::read_to_string(&man).unwrap();
        let fixed = text.replace(&hex::encode(Sha256::digest(&bytes)), &hex::encode(Sha256::digest(cut)));
        fs::write(&man, fixed).unwrap();
        match load_dataset(dir.path()) {
            Err(GrnError::Format { offset, msg }) => {
                assert!(offset > 0 && msg.contains("3_1.hbq"), "{offset} {msg}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn spec_validation() {
        let mut s = det(2);
        s.noise_sigma = 0.1;
        let msg = s.validate().unwrap_err().to_string();
        assert!(msg.contains("data.family") && msg.contains("data.noise_sigma"));
        let mut s = det(2);
        s.grid = vec![8, 8, 4];
        assert!(s.validate().is_err());
    }
}
