//! Dataset directory layout:
//!
//! * `manifest.json`   – counts, geometry, dtype, provenance
//! * `conditions.bin`  – `n_samples × 9` f32 little-endian, row-major
//! * `responses.bin`   – `n_samples × 1680` f32 little-endian, row-major
//! * `groups.json`     – group id → sample indices
//!
//! Statistics live next to it in `stats.json`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    ConditioningVector, Dataset, DatasetStats, Response, SynthProfile, COND_DIM, HEIGHT, PIXELS,
    WIDTH,
};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
const DTYPE: &str = "f32le";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    version: u32,
    n_samples: usize,
    n_groups: usize,
    height: usize,
    width: usize,
    cond_dim: usize,
    dtype: String,
    seed: Option<u64>,
    profile: Option<SynthProfile>,
}

fn write_f32s(path: &Path, values: impl Iterator<Item = f32>) -> Result<()> {
    let bytes: Vec<u8> = values.flat_map(f32::to_le_bytes).collect();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_f32s(path: &Path, expected_values: usize) -> Result<Vec<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let expected = (expected_values * 4) as u64;
    if bytes.len() as u64 != expected {
        return Err(Error::SizeMismatch {
            file: path.to_path_buf(),
            expected,
            found: bytes.len() as u64,
        });
    }
    let values: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!(
            "{} value {i}",
            path.display()
        )));
    }
    Ok(values)
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Malformed {
        file: path.to_path_buf(),
        reason: e.to_string(),
    })
}

pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = Manifest {
        version: FORMAT_VERSION,
        n_samples: dataset.len(),
        n_groups: dataset.n_groups(),
        height: HEIGHT,
        width: WIDTH,
        cond_dim: COND_DIM,
        dtype: DTYPE.into(),
        seed: dataset.seed(),
        profile: dataset.profile().cloned(),
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    write_f32s(
        &dir.join("conditions.bin"),
        dataset.samples().iter().flat_map(|s| s.condition.to_array()),
    )?;
    write_f32s(
        &dir.join("responses.bin"),
        dataset
            .samples()
            .iter()
            .flat_map(|s| s.response.pixels().iter().copied()),
    )?;
    let groups: BTreeMap<usize, &Vec<usize>> = dataset.groups().iter().enumerate().collect();
    write_json(&dir.join("groups.json"), &groups)
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest_path = dir.join("manifest.json");
    let manifest: Manifest = read_json(&manifest_path)?;
    if manifest.version != FORMAT_VERSION {
        return Err(Error::Malformed {
            file: manifest_path,
            reason: format!("unsupported version {}", manifest.version),
        });
    }
    if manifest.dtype != DTYPE {
        return Err(Error::Malformed {
            file: manifest_path,
            reason: format!("unsupported dtype {:?}", manifest.dtype),
        });
    }
    if (manifest.height, manifest.width, manifest.cond_dim) != (HEIGHT, WIDTH, COND_DIM) {
        return Err(Error::Shape(format!(
            "manifest declares {}×{} responses with {} conditions, expected {HEIGHT}×{WIDTH} with {COND_DIM}",
            manifest.height, manifest.width, manifest.cond_dim
        )));
    }
    let n = manifest.n_samples;
    let conds = read_f32s(&dir.join("conditions.bin"), n * COND_DIM)?;
    let pixels = read_f32s(&dir.join("responses.bin"), n * PIXELS)?;

    let conditions = conds
        .chunks_exact(COND_DIM)
        .map(|c| ConditioningVector::from_array(c.try_into().expect("chunk of COND_DIM")))
        .collect::<Result<Vec<_>>>()?;
    let responses = pixels
        .chunks_exact(PIXELS)
        .map(|p| Response::new(p.to_vec()))
        .collect::<Result<Vec<_>>>()?;

    let groups_path = dir.join("groups.json");
    let table: BTreeMap<usize, Vec<usize>> = read_json(&groups_path)?;
    if table.len() != manifest.n_groups || table.keys().enumerate().any(|(i, &g)| i != g) {
        return Err(Error::Malformed {
            file: groups_path,
            reason: format!(
                "expected group ids 0..{}, found {} entries",
                manifest.n_groups,
                table.len()
            ),
        });
    }
    let groups = table.into_values().collect();
    Ok(Dataset::with_groups(conditions, responses, groups)?
        .with_provenance(manifest.seed, manifest.profile))
}

pub fn save_stats(stats: &DatasetStats, path: &Path) -> Result<()> {
    write_json(path, stats)
}

pub fn load_stats(path: &Path) -> Result<DatasetStats> {
    read_json(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{compute_stats, synth_dataset};

    fn sample_dir() -> (tempfile::TempDir, Dataset) {
        let dir = tempfile::tempdir().unwrap();
        let ds = synth_dataset(5, 3, 2, &SynthProfile::default()).unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        (dir, ds)
    }

    #[test]
    fn round_trip() {
        let (dir, ds) = sample_dir();
        assert_eq!(load_dataset(dir.path()).unwrap(), ds);
        let bytes = fs::metadata(dir.path().join("responses.bin")).unwrap().len();
        assert_eq!(bytes, (6 * PIXELS * 4) as u64);
    }

    #[test]
    fn truncated_payload() {
        let (dir, _) = sample_dir();
        let path = dir.path().join("responses.bin");
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(
            load_dataset(dir.path()),
            Err(Error::SizeMismatch { .. })
        ));
    }

    #[test]
    fn wrong_height() {
        let (dir, _) = sample_dir();
        let path = dir.path().join("manifest.json");
        let text = fs::read_to_string(&path).unwrap();
        fs::write(&path, text.replace("\"height\": 56", "\"height\": 28")).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Shape(_))));
    }

    #[test]
    fn malformed_manifest() {
        let (dir, _) = sample_dir();
        fs::write(dir.path().join("manifest.json"), "{\"version\": 1").unwrap();
        assert!(matches!(
            load_dataset(dir.path()),
            Err(Error::Malformed { .. })
        ));
    }

    #[test]
    fn non_finite_payload() {
        let (dir, _) = sample_dir();
        let path = dir.path().join("responses.bin");
        let mut bytes = fs::read(&path).unwrap();
        bytes[8..12].copy_from_slice(&f32::NAN.to_le_bytes());
        fs::write(&path, bytes).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::NonFinite(_))));
    }

    #[test]
    fn stats_round_trip() {
        let (dir, ds) = sample_dir();
        let stats = compute_stats(&ds).unwrap();
        let path = dir.path().join("stats.json");
        save_stats(&stats, &path).unwrap();
        assert_eq!(load_stats(&path).unwrap(), stats);
    }
}
