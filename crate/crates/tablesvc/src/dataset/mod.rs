//! Domain types, the dataset container, deterministic splitting, and
//! bit-exact dataset file IO.
//!
//! Feature values are stored as `f32` (the on-disk precision) so that a
//! saved dataset reloads to the identical in-memory representation and
//! re-saves byte-for-byte. All computation downstream promotes to `f64`;
//! probability simplexes are renormalized to sum exactly 1 at that
//! boundary (see [`renormalized`]).

mod io;

pub use io::{load_dataset, save_dataset};

use std::collections::BTreeMap;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Accepted deviation of a stored simplex sum from 1.
pub const SIMPLEX_FILE_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("io failure at {path}: {source}")]
    IoFailure {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest parse error at {path}: {source}")]
    ManifestParse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("manifest mismatch: {detail}")]
    ManifestMismatch { detail: String },
    #[error("invariant violation: {detail}")]
    InvariantViolation { detail: String },
    #[error("invalid split fraction {0} (must be in (0, 1])")]
    InvalidFraction(f64),
}

/// Whether service labels are independent flags or a single exclusive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LabelMode {
    #[default]
    MultiLabel,
    Exclusive,
}

/// Feature dimensions shared by every bundle in a dataset.
///
/// `h`×`w` backbone grid of `c`-dim cells, `t` encoder tokens and `r`
/// region features of dim `d`, and the symbolic vocabulary sizes:
/// `k` object categories, `a` amount bins, `p` progress states.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestDims {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub t: usize,
    pub r: usize,
    pub d: usize,
    pub k: usize,
    pub a: usize,
    pub p: usize,
}

impl ManifestDims {
    /// Desk-scale defaults; the source material never fixes these.
    pub fn desk_default() -> Self {
        ManifestDims {
            h: 4,
            w: 4,
            c: 8,
            t: 8,
            r: 8,
            d: 16,
            k: 12,
            a: 5,
            p: 3,
        }
    }

    /// Floats per frame in `features.bin`.
    pub fn floats_per_frame(&self) -> usize {
        self.h * self.w * self.c
            + self.t * self.d
            + self.r * self.d
            + self.r * (self.k + self.a + 4)
            + self.p
            + 1
    }

    /// Dim of one encoded table-info region vector: `[category | amount | box]`.
    pub fn region_encoding_dim(&self) -> usize {
        self.k + self.a + 4
    }
}

/// The four service alarm flags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ServiceLabel {
    pub refill: bool,
    pub trash: bool,
    pub dessert: bool,
    pub lost: bool,
}

/// Number of service classes (refill, trash, dessert, lost).
pub const SERVICE_CLASSES: usize = 4;

/// Class names in canonical order.
pub const SERVICE_CLASS_NAMES: [&str; SERVICE_CLASSES] = ["refill", "trash", "dessert", "lost"];

impl ServiceLabel {
    pub fn none() -> Self {
        ServiceLabel::default()
    }

    pub fn flags(&self) -> [bool; SERVICE_CLASSES] {
        [self.refill, self.trash, self.dessert, self.lost]
    }

    pub fn from_flags(flags: [bool; SERVICE_CLASSES]) -> Self {
        ServiceLabel {
            refill: flags[0],
            trash: flags[1],
            dessert: flags[2],
            lost: flags[3],
        }
    }

    pub fn any(&self) -> bool {
        self.refill || self.trash || self.dessert || self.lost
    }

    /// Collapse to at most one flag using the fixed priority
    /// lost > dessert > refill > trash.
    pub fn to_exclusive(&self) -> ServiceLabel {
        let mut out = ServiceLabel::none();
        if self.lost {
            out.lost = true;
        } else if self.dessert {
            out.dessert = true;
        } else if self.refill {
            out.refill = true;
        } else if self.trash {
            out.trash = true;
        }
        out
    }

    /// Exclusive class index in `[refill, trash, dessert, lost, none]` order.
    /// The trailing "none" class is the all-clear outcome.
    pub fn exclusive_class(&self) -> usize {
        let e = self.to_exclusive();
        if e.refill {
            0
        } else if e.trash {
            1
        } else if e.dessert {
            2
        } else if e.lost {
            3
        } else {
            SERVICE_CLASSES
        }
    }
}

/// One recognized table region: category and amount distributions plus a
/// normalized (cx, cy, w, h) box.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionInfo {
    pub category_probs: Vec<f32>,
    pub amount_probs: Vec<f32>,
    pub box_cxcywh: [f32; 4],
}

/// Symbolic recognition outputs for one frame: per-region category/amount,
/// the meal-progress distribution, and elapsed eating time.
#[derive(Debug, Clone, PartialEq)]
pub struct TableInfo {
    pub regions: Vec<RegionInfo>,
    pub progress_probs: Vec<f32>,
    pub elapsed_s: f32,
}

/// One frame's simulated recognition outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBundle {
    pub episode_id: u32,
    pub frame_id: u32,
    pub elapsed_s: f32,
    /// Flat h*w*c, row-major cells of c-dim vectors.
    pub backbone_grid: Vec<f32>,
    /// Flat t*d.
    pub encoder_tokens: Vec<f32>,
    /// Flat r*d.
    pub region_features: Vec<f32>,
    pub table_info: TableInfo,
}

/// Quantize a nonnegative weight vector to the stored f32 precision after
/// normalizing it to unit sum in f64. Generated simplexes pass through this
/// so that the in-memory values match the file bytes exactly.
pub fn quantize_simplex(raw: &[f64]) -> Vec<f32> {
    let sum: f64 = raw.iter().sum();
    if sum <= 0.0 || !sum.is_finite() {
        // degenerate input: fall back to uniform
        let u = 1.0 / raw.len().max(1) as f64;
        return raw.iter().map(|_| u as f32).collect();
    }
    raw.iter().map(|&v| (v / sum) as f32).collect()
}

/// Promote a stored simplex to f64 and renormalize to sum exactly 1.
pub fn renormalized(probs: &[f32]) -> Vec<f64> {
    let sum: f64 = probs.iter().map(|&v| v as f64).sum();
    if sum <= 0.0 || !sum.is_finite() {
        let u = 1.0 / probs.len().max(1) as f64;
        return probs.iter().map(|_| u).collect();
    }
    probs.iter().map(|&v| v as f64 / sum).collect()
}

fn check_simplex(probs: &[f32], expected_len: usize, what: &str) -> Result<(), DatasetError> {
    if probs.len() != expected_len {
        return Err(DatasetError::InvariantViolation {
            detail: format!("{what}: expected {expected_len} entries, got {}", probs.len()),
        });
    }
    let mut sum = 0.0f64;
    for &v in probs {
        if !v.is_finite() || v < 0.0 {
            return Err(DatasetError::InvariantViolation {
                detail: format!("{what}: non-finite or negative entry {v}"),
            });
        }
        sum += v as f64;
    }
    if (sum - 1.0).abs() > SIMPLEX_FILE_TOLERANCE {
        return Err(DatasetError::InvariantViolation {
            detail: format!("{what}: sums to {sum}, off by more than {SIMPLEX_FILE_TOLERANCE}"),
        });
    }
    Ok(())
}

fn check_finite(values: &[f32], what: &str) -> Result<(), DatasetError> {
    for (i, &v) in values.iter().enumerate() {
        if !v.is_finite() {
            return Err(DatasetError::InvariantViolation {
                detail: format!("{what}[{i}] is not finite"),
            });
        }
    }
    Ok(())
}

/// Dataset-level metadata, mirrored in `manifest.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub dims: ManifestDims,
    pub label_mode: LabelMode,
    pub fps: u32,
    pub frame_count: usize,
    pub seed_digest: String,
}

/// Ordered frames plus the manifest they conform to.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub frames: Vec<(FeatureBundle, ServiceLabel)>,
}

impl Dataset {
    /// Construct and validate in one step.
    pub fn new(
        manifest: DatasetManifest,
        frames: Vec<(FeatureBundle, ServiceLabel)>,
    ) -> Result<Self, DatasetError> {
        let ds = Dataset { manifest, frames };
        ds.validate()?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Per-class fraction of frames carrying each service flag.
    pub fn label_frequencies(&self) -> [f64; SERVICE_CLASSES] {
        let mut counts = [0usize; SERVICE_CLASSES];
        for (_, label) in &self.frames {
            for (c, on) in label.flags().iter().enumerate() {
                if *on {
                    counts[c] += 1;
                }
            }
        }
        let n = self.frames.len().max(1) as f64;
        [
            counts[0] as f64 / n,
            counts[1] as f64 / n,
            counts[2] as f64 / n,
            counts[3] as f64 / n,
        ]
    }

    /// Check every type invariant: dim conformance, finiteness, simplex
    /// sums, box ranges, label-mode exclusivity, and elapsed monotonicity
    /// per episode.
    pub fn validate(&self) -> Result<(), DatasetError> {
        let dims = &self.manifest.dims;
        if self.manifest.frame_count != self.frames.len() {
            return Err(DatasetError::ManifestMismatch {
                detail: format!(
                    "manifest frame_count {} != {} frames",
                    self.manifest.frame_count,
                    self.frames.len()
                ),
            });
        }
        for (idx, (bundle, label)) in self.frames.iter().enumerate() {
            let ctx = format!("frame {idx}");
            if bundle.backbone_grid.len() != dims.h * dims.w * dims.c {
                return Err(DatasetError::InvariantViolation {
                    detail: format!("{ctx}: backbone_grid length != h*w*c"),
                });
            }
            if bundle.encoder_tokens.len() != dims.t * dims.d {
                return Err(DatasetError::InvariantViolation {
                    detail: format!("{ctx}: encoder_tokens length != t*d"),
                });
            }
            if bundle.region_features.len() != dims.r * dims.d {
                return Err(DatasetError::InvariantViolation {
                    detail: format!("{ctx}: region_features length != r*d"),
                });
            }
            check_finite(&bundle.backbone_grid, &format!("{ctx}: backbone_grid"))?;
            check_finite(&bundle.encoder_tokens, &format!("{ctx}: encoder_tokens"))?;
            check_finite(&bundle.region_features, &format!("{ctx}: region_features"))?;
            if !bundle.elapsed_s.is_finite() || bundle.elapsed_s < 0.0 {
                return Err(DatasetError::InvariantViolation {
                    detail: format!("{ctx}: elapsed_s {} invalid", bundle.elapsed_s),
                });
            }
            let info = &bundle.table_info;
            if info.regions.len() != dims.r {
                return Err(DatasetError::InvariantViolation {
                    detail: format!(
                        "{ctx}: table_info has {} regions, manifest says {}",
                        info.regions.len(),
                        dims.r
                    ),
                });
            }
            check_simplex(&info.progress_probs, dims.p, &format!("{ctx}: progress_probs"))?;
            if info.elapsed_s != bundle.elapsed_s {
                return Err(DatasetError::InvariantViolation {
                    detail: format!("{ctx}: table_info elapsed_s does not mirror bundle"),
                });
            }
            for (ri, region) in info.regions.iter().enumerate() {
                check_simplex(
                    &region.category_probs,
                    dims.k,
                    &format!("{ctx}: region {ri} category_probs"),
                )?;
                check_simplex(
                    &region.amount_probs,
                    dims.a,
                    &format!("{ctx}: region {ri} amount_probs"),
                )?;
                for &b in &region.box_cxcywh {
                    if !(0.0..=1.0).contains(&b) {
                        return Err(DatasetError::InvariantViolation {
                            detail: format!("{ctx}: region {ri} box coordinate {b} outside [0,1]"),
                        });
                    }
                }
            }
            if self.manifest.label_mode == LabelMode::Exclusive {
                let set = label.flags().iter().filter(|&&f| f).count();
                if set > 1 {
                    return Err(DatasetError::InvariantViolation {
                        detail: format!("{ctx}: {set} flags set in exclusive mode"),
                    });
                }
            }
        }
        // elapsed_s non-decreasing with frame_id within each episode
        let mut per_episode: BTreeMap<u32, Vec<(u32, f32)>> = BTreeMap::new();
        for (bundle, _) in &self.frames {
            per_episode
                .entry(bundle.episode_id)
                .or_default()
                .push((bundle.frame_id, bundle.elapsed_s));
        }
        for (ep, mut frames) in per_episode {
            frames.sort_by_key(|&(fid, _)| fid);
            for pair in frames.windows(2) {
                if pair[1].1 < pair[0].1 {
                    return Err(DatasetError::InvariantViolation {
                        detail: format!(
                            "episode {ep}: elapsed_s decreases between frames {} and {}",
                            pair[0].0, pair[1].0
                        ),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Seeded shuffle-then-split. The train side receives
/// `round(train_fraction * N)` frames; together the two sides partition the
/// input exactly.
pub fn split_dataset(
    dataset: &Dataset,
    train_fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset), DatasetError> {
    if dataset.is_empty() {
        return Err(DatasetError::EmptyDataset);
    }
    if !(train_fraction > 0.0 && train_fraction <= 1.0) {
        return Err(DatasetError::InvalidFraction(train_fraction));
    }
    let n = dataset.len();
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);
    let train_n = ((train_fraction * n as f64).round() as usize).min(n);

    let take = |ids: &[usize]| -> Vec<(FeatureBundle, ServiceLabel)> {
        ids.iter().map(|&i| dataset.frames[i].clone()).collect()
    };
    let train_frames = take(&indices[..train_n]);
    let eval_frames = take(&indices[train_n..]);
    let mk = |frames: Vec<(FeatureBundle, ServiceLabel)>| Dataset {
        manifest: DatasetManifest {
            frame_count: frames.len(),
            ..dataset.manifest.clone()
        },
        frames,
    };
    Ok((mk(train_frames), mk(eval_frames)))
}
