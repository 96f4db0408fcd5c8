//! Model checkpoint IO.
//!
//! Layout: a magic line, one line of JSON metadata (signature, dims, label
//! mode via the signature, seed, and parameter shapes), one empty line,
//! then a little-endian f32 blob holding head weights, bias, attention
//! params (map order, `a` entries then `b`), and the projection matrix.
//! Parameters are stored at f32 precision, so save → load → save
//! reproduces the file byte for byte.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::aggregation::AttentionParams;
use crate::dataset::ManifestDims;

use super::{HeadParams, LearnerError, ModelSignature, Projection};

const MAGIC: &str = "tablesvc-checkpoint v1";

/// What a checkpoint records besides raw parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub signature: ModelSignature,
    pub dims: ManifestDims,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct ProjectionShape {
    in_dim: usize,
    out_dim: usize,
    frozen: bool,
}

#[derive(Serialize, Deserialize)]
struct Header {
    meta: CheckpointMeta,
    in_dim: usize,
    out_dim: usize,
    attention: Vec<(String, usize)>,
    projection: Option<ProjectionShape>,
}

fn io_err(path: &Path, source: std::io::Error) -> LearnerError {
    LearnerError::IoFailure {
        path: path.to_path_buf(),
        source,
    }
}

/// Write params and metadata to `path`.
pub fn save_checkpoint(
    path: &Path,
    params: &HeadParams,
    meta: &CheckpointMeta,
) -> Result<(), LearnerError> {
    let header = Header {
        meta: meta.clone(),
        in_dim: params.in_dim,
        out_dim: params.out_dim,
        attention: params
            .attention
            .iter()
            .map(|(k, v)| (k.clone(), v.a.len()))
            .collect(),
        projection: params.projection.as_ref().map(|p| ProjectionShape {
            in_dim: p.in_dim,
            out_dim: p.out_dim,
            frozen: p.frozen,
        }),
    };
    let mut bytes = Vec::new();
    bytes.extend_from_slice(MAGIC.as_bytes());
    bytes.push(b'\n');
    bytes.extend_from_slice(
        serde_json::to_string(&header)
            .expect("header serializes")
            .as_bytes(),
    );
    bytes.push(b'\n');
    bytes.push(b'\n');
    let mut push = |v: f64| bytes.extend_from_slice(&(v as f32).to_le_bytes());
    for &w in &params.weights {
        push(w);
    }
    for &b in &params.bias {
        push(b);
    }
    for att in params.attention.values() {
        for &a in &att.a {
            push(a);
        }
        push(att.b);
    }
    if let Some(p) = &params.projection {
        for &m in &p.matrix {
            push(m);
        }
    }
    fs::write(path, &bytes).map_err(|e| io_err(path, e))
}

/// Read a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<(HeadParams, CheckpointMeta), LearnerError> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    let bad = |detail: String| LearnerError::CheckpointFormat { detail };

    let mut lines = bytes.splitn(3, |&b| b == b'\n');
    let magic = lines.next().unwrap_or(&[]);
    if magic != MAGIC.as_bytes() {
        return Err(bad(format!(
            "bad magic line `{}`",
            String::from_utf8_lossy(magic)
        )));
    }
    let header_line = lines.next().ok_or_else(|| bad("missing header".into()))?;
    let rest = lines.next().ok_or_else(|| bad("missing blob".into()))?;
    if rest.first() != Some(&b'\n') {
        return Err(bad("missing separator line".into()));
    }
    let blob = &rest[1..];
    let header: Header = serde_json::from_slice(header_line)
        .map_err(|e| bad(format!("header parse error: {e}")))?;

    let att_total: usize = header.attention.iter().map(|(_, d)| d + 1).sum();
    let proj_total = header
        .projection
        .as_ref()
        .map(|p| p.in_dim * p.out_dim)
        .unwrap_or(0);
    let total = header.in_dim * header.out_dim + header.out_dim + att_total + proj_total;
    if blob.len() != total * 4 {
        return Err(bad(format!(
            "blob is {} bytes, header implies {}",
            blob.len(),
            total * 4
        )));
    }
    let mut floats = blob
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64);
    let mut take = |n: usize| -> Vec<f64> { floats.by_ref().take(n).collect() };
    let weights = take(header.in_dim * header.out_dim);
    let bias = take(header.out_dim);
    let mut attention = std::collections::BTreeMap::new();
    for (name, dim) in &header.attention {
        let a = take(*dim);
        let b = take(1)[0];
        attention.insert(name.clone(), AttentionParams { a, b });
    }
    let projection = header.projection.as_ref().map(|p| Projection {
        matrix: take(p.in_dim * p.out_dim),
        in_dim: p.in_dim,
        out_dim: p.out_dim,
        frozen: p.frozen,
    });
    for v in weights.iter().chain(bias.iter()) {
        if !v.is_finite() {
            return Err(bad("non-finite parameter in blob".into()));
        }
    }
    Ok((
        HeadParams {
            weights,
            bias,
            in_dim: header.in_dim,
            out_dim: header.out_dim,
            attention,
            projection,
        },
        header.meta,
    ))
}

#[cfg(test)]
mod tests {
    use super::super::{init_for_signature, FeatureSource, SourceSpec, TemporalSpec};
    use super::*;
    use crate::aggregation::AggregatorKind;
    use crate::dataset::LabelMode;

    fn sample() -> (HeadParams, CheckpointMeta) {
        let dims = ManifestDims::desk_default();
        let signature = ModelSignature::service(
            vec![
                SourceSpec {
                    source: FeatureSource::Backbone,
                    aggregator: AggregatorKind::Avg,
                },
                SourceSpec {
                    source: FeatureSource::TableInfo,
                    aggregator: AggregatorKind::Attention,
                },
            ],
            Some(TemporalSpec {
                window: 5,
                mode: AggregatorKind::Attention,
            }),
            Some(16),
            LabelMode::MultiLabel,
        );
        let params = init_for_signature(&signature, &dims, 77, true).unwrap();
        (
            params,
            CheckpointMeta {
                signature,
                dims,
                seed: 77,
            },
        )
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let (params, meta) = sample();
        let dir = tempfile::tempdir().unwrap();
        let first = dir.path().join("model.ckpt");
        let second = dir.path().join("model2.ckpt");
        save_checkpoint(&first, &params, &meta).unwrap();
        let (loaded, loaded_meta) = load_checkpoint(&first).unwrap();
        assert_eq!(loaded_meta, meta);
        save_checkpoint(&second, &loaded, &loaded_meta).unwrap();
        assert_eq!(
            std::fs::read(&first).unwrap(),
            std::fs::read(&second).unwrap()
        );
        // f32 storage: loaded params match to f32 precision
        for (a, b) in params.weights.iter().zip(loaded.weights.iter()) {
            assert_eq!(*a as f32, *b as f32);
        }
        assert_eq!(
            params.projection.as_ref().unwrap().frozen,
            loaded.projection.as_ref().unwrap().frozen
        );
    }

    #[test]
    fn truncated_blob_rejected() {
        let (params, meta) = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &params, &meta).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 2);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(LearnerError::CheckpointFormat { .. })
        ));
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        std::fs::write(&path, b"not a checkpoint\n{}\n\n").unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(LearnerError::CheckpointFormat { .. })
        ));
    }
}
