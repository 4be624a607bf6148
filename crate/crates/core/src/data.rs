//! Synthetic routing instances, oracle labeling, and dataset files.
//!
//! Samples are generated independently per index from seeds derived off the
//! dataset seed, so generation parallelizes across samples and still yields
//! byte-identical datasets for any worker count.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{encode_features, FeatureMap, GridError, Net, PathMask, RoutingGrid, Tile};
use crate::oracle;
use crate::par;
use crate::util::rng_from;

const TAG_SAMPLE: u64 = 0x5a;
const TAG_RESOLUTION: u64 = 0x52;
/// Per-sample regeneration budget before synthesis gives up.
const MAX_ATTEMPTS: u64 = 512;
/// Bound on obstacle redraws inside one instance attempt.
const MAX_OBSTACLE_REDRAWS: usize = 64;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("synthesis failed: {0}")]
    Synthesis(String),
    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Instance generator knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    /// Inclusive pin-count range.
    pub pin_min: usize,
    pub pin_max: usize,
    /// Probability that a tile becomes a zero-capacity obstacle.
    pub obstacle_density: f64,
    pub cap_default: u32,
    /// Declared feature-scaling maximum; must dominate `cap_default`.
    pub cap_max: u32,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            pin_min: 2,
            pin_max: 5,
            obstacle_density: 0.1,
            cap_default: 2,
            cap_max: 2,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.pin_min == 0 || self.pin_min > self.pin_max {
            return Err(DataError::InvalidParams(format!(
                "pin range [{}, {}] is empty or zero-based",
                self.pin_min, self.pin_max
            )));
        }
        if !(0.0..1.0).contains(&self.obstacle_density) {
            return Err(DataError::InvalidParams(format!(
                "obstacle density {} outside [0, 1)",
                self.obstacle_density
            )));
        }
        if self.cap_default == 0 || self.cap_max < self.cap_default {
            return Err(DataError::InvalidParams(format!(
                "capacities (default {}, max {}) must be positive and ordered",
                self.cap_default, self.cap_max
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DatasetKind {
    /// Labels are oracle routes.
    Routed,
    /// Labels contain exactly the pin tiles.
    RouteFree,
}

/// One training pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: FeatureMap,
    pub label: PathMask,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub resolution: usize,
    pub kind: DatasetKind,
    pub samples: Vec<Sample>,
    pub seed: u64,
    pub params: SynthParams,
}

/// Draws one routing instance: uniform default capacities, obstacle tiles
/// zeroed in both directions, pins placed uniformly over capacity-positive
/// tiles. Pin sets are redrawn until they are either all-distinct or all
/// identical. Deterministic for a given generator state.
pub fn synth_instance(
    n: usize,
    params: &SynthParams,
    rng: &mut ChaCha8Rng,
) -> Result<(RoutingGrid, Net), DataError> {
    params.validate()?;
    if n < 4 {
        return Err(DataError::InvalidParams(format!(
            "resolution {n} below minimum 4"
        )));
    }
    for _ in 0..MAX_OBSTACLE_REDRAWS {
        let mut grid = RoutingGrid::uniform(n, params.cap_default, params.cap_default);
        for row in 0..n {
            for col in 0..n {
                if rng.gen::<f64>() < params.obstacle_density {
                    grid.set_caps(row, col, 0, 0);
                }
            }
        }
        let free: Vec<Tile> = (0..n)
            .flat_map(|r| (0..n).map(move |c| (r, c)))
            .filter(|&(r, c)| grid.tile_free(r, c))
            .collect();
        let k = rng.gen_range(params.pin_min..=params.pin_max);
        if free.len() < k {
            continue;
        }
        for _ in 0..MAX_OBSTACLE_REDRAWS {
            let pins: Vec<Tile> = (0..k).map(|_| free[rng.gen_range(0..free.len())]).collect();
            let all_same = pins.iter().all(|&p| p == pins[0]);
            let mut sorted = pins.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if all_same || sorted.len() == k {
                let net = Net::new("n0", pins, n)?;
                return Ok((grid, net));
            }
        }
    }
    Err(DataError::Synthesis(format!(
        "could not place pins on a {n}x{n} grid at density {}",
        params.obstacle_density
    )))
}

fn generate_sample(
    n: usize,
    params: &SynthParams,
    seed: u64,
    index: usize,
    kind: DatasetKind,
) -> Result<Sample, DataError> {
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = rng_from(seed, &[TAG_SAMPLE, index as u64, attempt]);
        let (grid, net) = synth_instance(n, params, &mut rng)?;
        if net.is_trivial() {
            continue;
        }
        let label = match kind {
            DatasetKind::Routed => {
                let routed = oracle::route_net(&grid, &net);
                if !routed.is_routed() {
                    continue;
                }
                routed.mask
            }
            DatasetKind::RouteFree => PathMask::from_tiles(n, net.unique_pin_tiles()),
        };
        let features = encode_features(&grid, &net, params.cap_max)?;
        return Ok(Sample { features, label });
    }
    Err(DataError::Synthesis(format!(
        "sample {index}: no feasible instance after {MAX_ATTEMPTS} attempts"
    )))
}

/// Builds a dataset of exactly `count` samples. Trivial instances are always
/// regenerated; for the routed kind, infeasible instances are too.
pub fn build_dataset(
    n: usize,
    count: usize,
    params: &SynthParams,
    seed: u64,
    kind: DatasetKind,
) -> Result<Dataset, DataError> {
    params.validate()?;
    if count == 0 {
        return Err(DataError::InvalidParams("sample count must be positive".into()));
    }
    if kind == DatasetKind::Routed && params.pin_min < 2 {
        return Err(DataError::InvalidParams(
            "routed datasets need at least two pins per net".into(),
        ));
    }
    let results = par::map_collect(count, |i| generate_sample(n, params, seed, i, kind));
    let samples = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(Dataset {
        resolution: n,
        kind,
        samples,
        seed,
        params: *params,
    })
}

/// Independent datasets per resolution, with per-resolution seeds derived
/// from the master seed. Resolutions must be strictly increasing
/// power-of-two multiples of the first entry.
pub fn multi_resolution_suite(
    resolutions: &[usize],
    counts: &[usize],
    params: &SynthParams,
    seed: u64,
    kind: DatasetKind,
) -> Result<Vec<Dataset>, DataError> {
    if resolutions.is_empty() || resolutions.len() != counts.len() {
        return Err(DataError::InvalidParams(
            "resolutions and counts must be non-empty lists of equal length".into(),
        ));
    }
    let base = resolutions[0];
    if !base.is_power_of_two() || base < 4 {
        return Err(DataError::InvalidParams(format!(
            "base resolution {base} is not a power of two >= 4"
        )));
    }
    for w in resolutions.windows(2) {
        if w[1] <= w[0] {
            return Err(DataError::InvalidParams(
                "resolutions must be strictly increasing".into(),
            ));
        }
    }
    for &r in resolutions {
        if r % base != 0 || !(r / base).is_power_of_two() {
            return Err(DataError::InvalidParams(format!(
                "resolution {r} is not a power-of-two multiple of {base}"
            )));
        }
    }
    resolutions
        .iter()
        .zip(counts)
        .map(|(&r, &c)| build_dataset(r, c, params, derive_resolution_seed(seed, r), kind))
        .collect()
}

/// Seed used for the dataset at one resolution of a suite.
pub fn derive_resolution_seed(master: u64, resolution: usize) -> u64 {
    crate::util::derive_seed(master, &[TAG_RESOLUTION, resolution as u64])
}

// --- dataset file format ---------------------------------------------------
//
// magic "PVAE", then little-endian fields:
//   u32 version (= 1)
//   u32 n, u32 count, u32 kind (0 routed, 1 route-free)
//   u64 seed
//   u32 pin_min, u32 pin_max, f64 obstacle_density, u32 cap_default, u32 cap_max
// payload:
//   features  count * n * n * 3 f32
//   labels    count * n * n u8
// A sidecar `<file>.json` duplicates the header for tooling.

const MAGIC: &[u8; 4] = b"PVAE";
const VERSION: u32 = 1;

/// Header mirror written to the JSON sidecar.
#[derive(Debug, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub magic: String,
    pub version: u32,
    pub resolution: usize,
    pub count: usize,
    pub kind: DatasetKind,
    pub seed: u64,
    pub params: SynthParams,
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<(), DataError> {
    let n = ds.resolution;
    let count = ds.samples.len();
    let mut buf = Vec::with_capacity(52 + count * n * n * 13);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(n as u32).to_le_bytes());
    buf.extend_from_slice(&(count as u32).to_le_bytes());
    buf.extend_from_slice(&(matches!(ds.kind, DatasetKind::RouteFree) as u32).to_le_bytes());
    buf.extend_from_slice(&ds.seed.to_le_bytes());
    buf.extend_from_slice(&(ds.params.pin_min as u32).to_le_bytes());
    buf.extend_from_slice(&(ds.params.pin_max as u32).to_le_bytes());
    buf.extend_from_slice(&ds.params.obstacle_density.to_le_bytes());
    buf.extend_from_slice(&ds.params.cap_default.to_le_bytes());
    buf.extend_from_slice(&ds.params.cap_max.to_le_bytes());
    for s in &ds.samples {
        for &v in s.features.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    for s in &ds.samples {
        buf.extend_from_slice(s.label.as_bytes());
    }
    crate::util::write_atomic(path, &buf)?;
    let manifest = DatasetManifest {
        magic: "PVAE".into(),
        version: VERSION,
        resolution: n,
        count,
        kind: ds.kind,
        seed: ds.seed,
        params: ds.params,
    };
    let sidecar = sidecar_path(path);
    let json = serde_json::to_vec_pretty(&manifest)
        .map_err(|e| DataError::Synthesis(format!("manifest serialization: {e}")))?;
    crate::util::write_atomic(&sidecar, &json)?;
    Ok(())
}

pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".json");
    path.with_file_name(name)
}

pub fn load_dataset(path: &Path) -> Result<Dataset, DataError> {
    let data = fs::read(path)?;
    let mut pos = 0usize;
    let fail = |pos: usize, msg: String| DataError::Format {
        offset: pos as u64,
        msg,
    };
    let take = |pos: &mut usize, k: usize| -> Result<&[u8], DataError> {
        if *pos + k > data.len() {
            return Err(fail(
                *pos,
                format!("unexpected end of file (wanted {k} more bytes)"),
            ));
        }
        let out = &data[*pos..*pos + k];
        *pos += k;
        Ok(out)
    };
    let magic = take(&mut pos, 4)?;
    if magic != MAGIC {
        return Err(fail(0, format!("bad magic {magic:?}, expected {MAGIC:?}")));
    }
    let rd_u32 = |pos: &mut usize| -> Result<u32, DataError> {
        let b = take(pos, 4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    };
    let version = rd_u32(&mut pos)?;
    if version != VERSION {
        return Err(fail(4, format!("unsupported version {version}")));
    }
    let n = rd_u32(&mut pos)? as usize;
    let count = rd_u32(&mut pos)? as usize;
    let kind_tag = rd_u32(&mut pos)?;
    let kind = match kind_tag {
        0 => DatasetKind::Routed,
        1 => DatasetKind::RouteFree,
        other => return Err(fail(16, format!("unknown dataset kind {other}"))),
    };
    if n == 0 || n > 4096 || count == 0 || count > 10_000_000 {
        return Err(fail(8, format!("implausible header: n={n}, count={count}")));
    }
    let seed = {
        let b = take(&mut pos, 8)?;
        u64::from_le_bytes(b.try_into().unwrap())
    };
    let pin_min = rd_u32(&mut pos)? as usize;
    let pin_max = rd_u32(&mut pos)? as usize;
    let obstacle_density = {
        let b = take(&mut pos, 8)?;
        f64::from_le_bytes(b.try_into().unwrap())
    };
    let cap_default = rd_u32(&mut pos)?;
    let cap_max = rd_u32(&mut pos)?;
    let params = SynthParams {
        pin_min,
        pin_max,
        obstacle_density,
        cap_default,
        cap_max,
    };
    let feat_len = n * n * 3;
    let mut samples = Vec::with_capacity(count);
    let mut features = Vec::with_capacity(count);
    for _ in 0..count {
        let bytes = take(&mut pos, feat_len * 4)?;
        let mut values = Vec::with_capacity(feat_len);
        for chunk in bytes.chunks_exact(4) {
            values.push(f32::from_le_bytes(chunk.try_into().unwrap()));
        }
        features.push(FeatureMap::from_raw(n, values)?);
    }
    for fm in features {
        let bytes = take(&mut pos, n * n)?;
        let label = PathMask::from_raw(n, bytes.to_vec())?;
        samples.push(Sample {
            features: fm,
            label,
        });
    }
    // Labels follow all feature blocks; reorder pairing accordingly.
    if pos != data.len() {
        return Err(fail(pos, "trailing bytes after dataset payload".into()));
    }
    Ok(Dataset {
        resolution: n,
        kind,
        samples,
        seed,
        params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval;

    #[test]
    fn synth_no_obstacles_uniform_grid() {
        let params = SynthParams {
            pin_min: 2,
            pin_max: 2,
            obstacle_density: 0.0,
            ..SynthParams::default()
        };
        let mut rng = rng_from(5, &[1]);
        let (grid, net) = synth_instance(8, &params, &mut rng).unwrap();
        for r in 0..8 {
            for c in 0..8 {
                assert_eq!(grid.h_cap(r, c), 2);
                assert_eq!(grid.v_cap(r, c), 2);
            }
        }
        assert_eq!(net.pins().len(), 2);
    }

    #[test]
    fn synth_density_mean_over_seeds() {
        let params = SynthParams {
            obstacle_density: 0.3,
            ..SynthParams::default()
        };
        let mut total = 0usize;
        let runs = 200;
        for s in 0..runs {
            let mut rng = rng_from(400 + s, &[2]);
            let (grid, _) = synth_instance(16, &params, &mut rng).unwrap();
            total += (0..16)
                .flat_map(|r| (0..16).map(move |c| (r, c)))
                .filter(|&(r, c)| !grid.tile_free(r, c))
                .count();
        }
        let mean = total as f64 / runs as f64;
        // E = 256 * 0.3 = 76.8, sd of the mean ~ 0.52; allow 4 sigma.
        assert!((mean - 76.8).abs() < 2.1, "mean obstacle count {mean}");
    }

    #[test]
    fn synth_same_seed_same_instance() {
        let params = SynthParams::default();
        let mut a = rng_from(9, &[7]);
        let mut b = rng_from(9, &[7]);
        let (ga, na) = synth_instance(8, &params, &mut a).unwrap();
        let (gb, nb) = synth_instance(8, &params, &mut b).unwrap();
        assert_eq!(ga, gb);
        assert_eq!(na, nb);
    }

    #[test]
    fn route_free_labels_are_exactly_the_pins() {
        let ds = build_dataset(8, 20, &SynthParams::default(), 3, DatasetKind::RouteFree).unwrap();
        for s in &ds.samples {
            let pins = (0..8)
                .flat_map(|r| (0..8).map(move |c| (r, c)))
                .filter(|&(r, c)| s.features.at(r, c, 2) == 1.0)
                .count();
            assert_eq!(s.label.popcount(), pins);
        }
    }

    #[test]
    fn routed_labels_pass_connectivity_and_legality() {
        let ds = build_dataset(8, 100, &SynthParams::default(), 11, DatasetKind::Routed).unwrap();
        assert_eq!(ds.samples.len(), 100);
        for s in &ds.samples {
            // Rebuild the instance grid and net from the features.
            let mut grid = RoutingGrid::uniform(8, 0, 0);
            let mut pins = Vec::new();
            for r in 0..8 {
                for c in 0..8 {
                    let v = (s.features.at(r, c, 0) * ds.params.cap_max as f32).round() as u32;
                    let h = (s.features.at(r, c, 1) * ds.params.cap_max as f32).round() as u32;
                    grid.set_caps(r, c, h, v);
                    if s.features.at(r, c, 2) == 1.0 {
                        pins.push((r, c));
                    }
                }
            }
            let net = Net::new("x", pins, 8).unwrap();
            assert!(eval::check_connectivity(&s.label, &net));
            assert!(eval::check_legality(&s.label, &grid));
            // Sparsity: routes stay well under the full grid.
            assert!(s.label.popcount() <= 4 * 8);
        }
    }

    #[test]
    fn dataset_bytes_are_seed_deterministic() {
        let a = build_dataset(8, 16, &SynthParams::default(), 21, DatasetKind::Routed).unwrap();
        let b = build_dataset(8, 16, &SynthParams::default(), 21, DatasetKind::Routed).unwrap();
        assert_eq!(a, b);
        let c = build_dataset(8, 16, &SynthParams::default(), 22, DatasetKind::Routed).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn parallel_and_sequential_builds_agree() {
        let par_ds = build_dataset(8, 24, &SynthParams::default(), 8, DatasetKind::Routed).unwrap();
        let seq_ds = crate::par::run_sequential(|| {
            build_dataset(8, 24, &SynthParams::default(), 8, DatasetKind::Routed).unwrap()
        });
        assert_eq!(par_ds, seq_ds);
    }

    #[test]
    fn route_free_is_subset_of_routed_label() {
        let params = SynthParams::default();
        let mut checked = 0;
        for i in 0..40 {
            let mut rng = rng_from(100 + i, &[4]);
            let (grid, net) = synth_instance(8, &params, &mut rng).unwrap();
            if net.is_trivial() {
                continue;
            }
            let routed = oracle::route_net(&grid, &net);
            if !routed.is_routed() {
                continue;
            }
            for (r, c) in net.unique_pin_tiles() {
                assert!(routed.mask.get(r, c));
            }
            checked += 1;
        }
        assert!(checked > 10);
    }

    #[test]
    fn suite_validates_ladder_and_derives_distinct_seeds() {
        let params = SynthParams::default();
        let suite =
            multi_resolution_suite(&[8, 16], &[4, 4], &params, 5, DatasetKind::Routed).unwrap();
        assert_eq!(suite.len(), 2);
        assert_ne!(suite[0].seed, suite[1].seed);
        assert!(multi_resolution_suite(&[16, 8], &[4, 4], &params, 5, DatasetKind::Routed).is_err());
        assert!(multi_resolution_suite(&[8, 24], &[4, 4], &params, 5, DatasetKind::Routed).is_err());
        let single =
            multi_resolution_suite(&[8], &[4], &params, 5, DatasetKind::Routed).unwrap();
        assert_eq!(single.len(), 1);
    }

    #[test]
    fn save_load_round_trip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.pvae");
        let ds = build_dataset(8, 6, &SynthParams::default(), 2, DatasetKind::Routed).unwrap();
        save_dataset(&ds, &path).unwrap();
        let loaded = load_dataset(&path).unwrap();
        assert_eq!(ds, loaded);
        assert!(sidecar_path(&path).exists());

        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(
            load_dataset(&path),
            Err(DataError::Format { .. })
        ));
        let mut foreign = bytes.clone();
        foreign[..4].copy_from_slice(b"XVAE");
        fs::write(&path, &foreign).unwrap();
        match load_dataset(&path) {
            Err(DataError::Format { offset: 0, msg }) => assert!(msg.contains("PVAE")),
            other => panic!("expected magic failure, got {other:?}"),
        }
    }
}
