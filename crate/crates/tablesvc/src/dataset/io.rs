//! Dataset directory IO.
//!
//! A dataset directory holds exactly three files:
//!
//! * `manifest.json` — dims, label mode, fps, frame count, seed digest.
//! * `features.bin` — little-endian `f32`, row-major, one fixed-length
//!   record per frame: backbone grid (h*w*c), encoder tokens (t*d), region
//!   features (r*d), encoded table info (r*(k+a+4) region rows as
//!   `[category | amount | box]`, then p progress entries, then elapsed
//!   seconds).
//! * `labels.csv` — header `episode,frame,refill,trash,dessert,lost`, one
//!   row per frame in record order, flags as `0`/`1`.
//!
//! Loading re-validates every invariant; a blob whose byte length
//! disagrees with the manifest is a [`DatasetError::ManifestMismatch`].

use std::fs;
use std::path::Path;

use super::{
    Dataset, DatasetError, DatasetManifest, FeatureBundle, RegionInfo, ServiceLabel, TableInfo,
};

fn io_err(path: &Path, source: std::io::Error) -> DatasetError {
    DatasetError::IoFailure {
        path: path.to_path_buf(),
        source,
    }
}

/// Write `manifest.json`, `features.bin`, and `labels.csv` under `dir`,
/// creating the directory if needed.
pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<(), DatasetError> {
    dataset.validate()?;
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;

    let manifest_path = dir.join("manifest.json");
    let manifest_json = serde_json::to_string_pretty(&dataset.manifest)
        .expect("manifest serialization cannot fail");
    fs::write(&manifest_path, manifest_json.as_bytes()).map_err(|e| io_err(&manifest_path, e))?;

    let dims = &dataset.manifest.dims;
    let per_frame = dims.floats_per_frame();
    let mut blob: Vec<u8> = Vec::with_capacity(dataset.len() * per_frame * 4);
    for (bundle, _) in &dataset.frames {
        let mut row: Vec<f32> = Vec::with_capacity(per_frame);
        row.extend_from_slice(&bundle.backbone_grid);
        row.extend_from_slice(&bundle.encoder_tokens);
        row.extend_from_slice(&bundle.region_features);
        for region in &bundle.table_info.regions {
            row.extend_from_slice(&region.category_probs);
            row.extend_from_slice(&region.amount_probs);
            row.extend_from_slice(&region.box_cxcywh);
        }
        row.extend_from_slice(&bundle.table_info.progress_probs);
        row.push(bundle.table_info.elapsed_s);
        debug_assert_eq!(row.len(), per_frame);
        for v in row {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let blob_path = dir.join("features.bin");
    fs::write(&blob_path, &blob).map_err(|e| io_err(&blob_path, e))?;

    let mut csv = String::from("episode,frame,refill,trash,dessert,lost\n");
    for (bundle, label) in &dataset.frames {
        let f = label.flags();
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            bundle.episode_id,
            bundle.frame_id,
            f[0] as u8,
            f[1] as u8,
            f[2] as u8,
            f[3] as u8
        ));
    }
    let csv_path = dir.join("labels.csv");
    fs::write(&csv_path, csv.as_bytes()).map_err(|e| io_err(&csv_path, e))?;
    Ok(())
}

/// Read a dataset directory written by [`save_dataset`] and re-validate it.
pub fn load_dataset(dir: &Path) -> Result<Dataset, DatasetError> {
    let manifest_path = dir.join("manifest.json");
    let manifest_text = fs::read_to_string(&manifest_path).map_err(|e| io_err(&manifest_path, e))?;
    let manifest: DatasetManifest =
        serde_json::from_str(&manifest_text).map_err(|e| DatasetError::ManifestParse {
            path: manifest_path.clone(),
            source: e,
        })?;

    let dims = manifest.dims;
    let per_frame = dims.floats_per_frame();
    let blob_path = dir.join("features.bin");
    let blob = fs::read(&blob_path).map_err(|e| io_err(&blob_path, e))?;
    let expected_bytes = manifest.frame_count * per_frame * 4;
    if blob.len() != expected_bytes {
        return Err(DatasetError::ManifestMismatch {
            detail: format!(
                "features.bin is {} bytes but manifest implies {} ({} frames x {} floats x 4)",
                blob.len(),
                expected_bytes,
                manifest.frame_count,
                per_frame
            ),
        });
    }

    let csv_path = dir.join("labels.csv");
    let csv = fs::read_to_string(&csv_path).map_err(|e| io_err(&csv_path, e))?;
    let mut rows: Vec<(u32, u32, ServiceLabel)> = Vec::with_capacity(manifest.frame_count);
    for (lineno, line) in csv.lines().enumerate() {
        if lineno == 0 {
            if line != "episode,frame,refill,trash,dessert,lost" {
                return Err(DatasetError::ManifestMismatch {
                    detail: format!("labels.csv has unexpected header `{line}`"),
                });
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(DatasetError::ManifestMismatch {
                detail: format!("labels.csv line {} has {} fields, expected 6", lineno + 1, fields.len()),
            });
        }
        let parse_u32 = |s: &str, what: &str| -> Result<u32, DatasetError> {
            s.parse().map_err(|_| DatasetError::ManifestMismatch {
                detail: format!("labels.csv line {}: bad {what} `{s}`", lineno + 1),
            })
        };
        let parse_flag = |s: &str, what: &str| -> Result<bool, DatasetError> {
            match s {
                "0" => Ok(false),
                "1" => Ok(true),
                _ => Err(DatasetError::ManifestMismatch {
                    detail: format!("labels.csv line {}: bad {what} flag `{s}`", lineno + 1),
                }),
            }
        };
        rows.push((
            parse_u32(fields[0], "episode")?,
            parse_u32(fields[1], "frame")?,
            ServiceLabel {
                refill: parse_flag(fields[2], "refill")?,
                trash: parse_flag(fields[3], "trash")?,
                dessert: parse_flag(fields[4], "dessert")?,
                lost: parse_flag(fields[5], "lost")?,
            },
        ));
    }
    if rows.len() != manifest.frame_count {
        return Err(DatasetError::ManifestMismatch {
            detail: format!(
                "labels.csv has {} rows but manifest says {} frames",
                rows.len(),
                manifest.frame_count
            ),
        });
    }

    let mut frames: Vec<(FeatureBundle, ServiceLabel)> = Vec::with_capacity(manifest.frame_count);
    let read_f32 = |floats: &mut Vec<f32>, bytes: &[u8]| {
        for chunk in bytes.chunks_exact(4) {
            floats.push(f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]));
        }
    };
    for (fi, (episode_id, frame_id, label)) in rows.into_iter().enumerate() {
        let offset = fi * per_frame * 4;
        let mut floats: Vec<f32> = Vec::with_capacity(per_frame);
        read_f32(&mut floats, &blob[offset..offset + per_frame * 4]);
        let mut cursor = 0usize;
        let mut take = |n: usize| -> Vec<f32> {
            let out = floats[cursor..cursor + n].to_vec();
            cursor += n;
            out
        };
        let backbone_grid = take(dims.h * dims.w * dims.c);
        let encoder_tokens = take(dims.t * dims.d);
        let region_features = take(dims.r * dims.d);
        let mut regions = Vec::with_capacity(dims.r);
        for _ in 0..dims.r {
            let category_probs = take(dims.k);
            let amount_probs = take(dims.a);
            let b = take(4);
            regions.push(RegionInfo {
                category_probs,
                amount_probs,
                box_cxcywh: [b[0], b[1], b[2], b[3]],
            });
        }
        let progress_probs = take(dims.p);
        let elapsed_s = take(1)[0];
        debug_assert_eq!(cursor, per_frame);
        frames.push((
            FeatureBundle {
                episode_id,
                frame_id,
                elapsed_s,
                backbone_grid,
                encoder_tokens,
                region_features,
                table_info: TableInfo {
                    regions,
                    progress_probs,
                    elapsed_s,
                },
            },
            label,
        ));
    }

    Dataset::new(manifest, frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthworld::{build_benchmark, WorldConfig};
    use std::fs;

    fn sample() -> Dataset {
        let mut config = WorldConfig::balanced();
        config.duration_s = 30;
        let (train, _) = build_benchmark(&config, 3, 5).unwrap();
        train
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let ds = sample();
        let dir = tempfile::tempdir().unwrap();
        let first = dir.path().join("first");
        let second = dir.path().join("second");
        save_dataset(&ds, &first).unwrap();
        let loaded = load_dataset(&first).unwrap();
        assert_eq!(loaded, ds);
        save_dataset(&loaded, &second).unwrap();
        for name in ["manifest.json", "features.bin", "labels.csv"] {
            let a = fs::read(first.join(name)).unwrap();
            let b = fs::read(second.join(name)).unwrap();
            assert_eq!(a, b, "{name} differs after round trip");
        }
    }

    #[test]
    fn truncated_blob_is_manifest_mismatch() {
        let ds = sample();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        let blob_path = dir.path().join("features.bin");
        let mut blob = fs::read(&blob_path).unwrap();
        blob.truncate(blob.len() - 4);
        fs::write(&blob_path, &blob).unwrap();
        assert!(matches!(
            load_dataset(dir.path()),
            Err(DatasetError::ManifestMismatch { .. })
        ));
    }

    #[test]
    fn scaled_simplex_is_invariant_violation() {
        let ds = sample();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        // Double every float in the first frame's first category simplex.
        let dims = ds.manifest.dims;
        let blob_path = dir.path().join("features.bin");
        let mut blob = fs::read(&blob_path).unwrap();
        let cat_offset =
            (dims.h * dims.w * dims.c + dims.t * dims.d + dims.r * dims.d) * 4;
        for i in 0..dims.k {
            let at = cat_offset + i * 4;
            let v = f32::from_le_bytes([blob[at], blob[at + 1], blob[at + 2], blob[at + 3]]);
            blob[at..at + 4].copy_from_slice(&(v * 2.0).to_le_bytes());
        }
        fs::write(&blob_path, &blob).unwrap();
        assert!(matches!(
            load_dataset(dir.path()),
            Err(DatasetError::InvariantViolation { .. })
        ));
    }

    #[test]
    fn missing_directory_is_io_failure() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope");
        assert!(matches!(
            load_dataset(&missing),
            Err(DatasetError::IoFailure { .. })
        ));
    }
}
