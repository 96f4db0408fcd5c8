//! Pooling and simple-attention aggregators.
//!
//! Each operator collapses a variable-size collection of equal-dim vectors
//! into one fixed-size vector: arithmetic-mean pooling, coordinate-wise max
//! pooling, and a single-linear-functional attention (score = a·f + b,
//! softmax over scores, weighted sum). A temporal variant applies the same
//! aggregators over a short window of consecutive frame vectors, and
//! `encode_table_info` turns symbolic recognition outputs into vectors the
//! aggregators accept.
//!
//! All operators are pure. Weighted reductions run in a fixed sequential
//! order so results are bitwise reproducible.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{renormalized, ManifestDims, TableInfo};

/// Seconds of elapsed eating time that normalize to 1.0.
pub const TIME_NORMALIZER_S: f64 = 1800.0;
/// Upper clamp for normalized elapsed time.
pub const TIME_CLAMP: f64 = 2.0;

#[derive(Debug, Error, PartialEq)]
pub enum AggregationError {
    #[error("dim mismatch: expected {expected}, element {index} has {got}")]
    DimMismatch {
        expected: usize,
        index: usize,
        got: usize,
    },
    #[error("empty input")]
    EmptyInput,
    #[error("empty temporal window")]
    EmptyWindow,
    #[error("attention mode requires attention params")]
    MissingParams,
}

/// Parameters of the simple attention: per-element score weights `a` and a
/// scalar bias `b`, scoring each element as `a·f + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionParams {
    pub a: Vec<f64>,
    pub b: f64,
}

impl AttentionParams {
    /// Zero-initialized params of the given dim (uniform attention).
    pub fn zeros(dim: usize) -> Self {
        AttentionParams {
            a: vec![0.0; dim],
            b: 0.0,
        }
    }
}

/// Which aggregator collapses a collection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AggregatorKind {
    Avg,
    Max,
    Attention,
}

impl AggregatorKind {
    pub fn name(&self) -> &'static str {
        match self {
            AggregatorKind::Avg => "avg",
            AggregatorKind::Max => "max",
            AggregatorKind::Attention => "attention",
        }
    }
}

fn check_ragged(elements: &[Vec<f64>]) -> Result<usize, AggregationError> {
    let expected = elements[0].len();
    for (index, e) in elements.iter().enumerate() {
        if e.len() != expected {
            return Err(AggregationError::DimMismatch {
                expected,
                index,
                got: e.len(),
            });
        }
    }
    Ok(expected)
}

/// Arithmetic mean of the elements. An empty collection yields a zero
/// vector of `dim_if_empty` entries together with `was_empty = true`; this
/// is a legitimate case (tables can have zero regions), not an error.
pub fn average_pool(
    elements: &[Vec<f64>],
    dim_if_empty: usize,
) -> Result<(Vec<f64>, bool), AggregationError> {
    if elements.is_empty() {
        return Ok((vec![0.0; dim_if_empty], true));
    }
    let dim = check_ragged(elements)?;
    let mut out = vec![0.0f64; dim];
    for e in elements {
        for (o, &v) in out.iter_mut().zip(e.iter()) {
            *o += v;
        }
    }
    let n = elements.len() as f64;
    for o in &mut out {
        *o /= n;
    }
    Ok((out, false))
}

/// Coordinate-wise maximum. Errors on empty input: the reals have no
/// neutral element for max.
pub fn max_pool(elements: &[Vec<f64>]) -> Result<Vec<f64>, AggregationError> {
    if elements.is_empty() {
        return Err(AggregationError::EmptyInput);
    }
    let dim = check_ragged(elements)?;
    let mut out = vec![f64::NEG_INFINITY; dim];
    for e in elements {
        for (o, &v) in out.iter_mut().zip(e.iter()) {
            if v > *o {
                *o = v;
            }
        }
    }
    Ok(out)
}

/// Softmax with max-subtraction for numerical stability.
pub fn stable_softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|&s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

/// Score each element as `a·f + b`, softmax the scores, and return the
/// weighted sum plus the weights themselves for inspection.
pub fn simple_attention(
    elements: &[Vec<f64>],
    params: &AttentionParams,
) -> Result<(Vec<f64>, Vec<f64>), AggregationError> {
    if elements.is_empty() {
        return Err(AggregationError::EmptyInput);
    }
    let dim = check_ragged(elements)?;
    if params.a.len() != dim {
        return Err(AggregationError::DimMismatch {
            expected: dim,
            index: 0,
            got: params.a.len(),
        });
    }
    let scores: Vec<f64> = elements
        .iter()
        .map(|e| {
            let dot: f64 = params.a.iter().zip(e.iter()).map(|(&a, &f)| a * f).sum();
            dot + params.b
        })
        .collect();
    let weights = stable_softmax(&scores);
    let mut out = vec![0.0f64; dim];
    for (w, e) in weights.iter().zip(elements.iter()) {
        for (o, &v) in out.iter_mut().zip(e.iter()) {
            *o += w * v;
        }
    }
    Ok((out, weights))
}

/// Concatenate the parts in declared order. The order is part of the model
/// signature; callers record it in training configs.
pub fn combine_features(parts: &[Vec<f64>]) -> Vec<f64> {
    let mut out = Vec::with_capacity(parts.iter().map(Vec::len).sum());
    for p in parts {
        out.extend_from_slice(p);
    }
    out
}

/// Aggregate an ordered window of consecutive frame vectors. Windows
/// shorter than the nominal width (episode starts) aggregate over whatever
/// frames exist.
pub fn temporal_aggregate(
    window: &[Vec<f64>],
    mode: AggregatorKind,
    params: Option<&AttentionParams>,
) -> Result<Vec<f64>, AggregationError> {
    if window.is_empty() {
        return Err(AggregationError::EmptyWindow);
    }
    match mode {
        AggregatorKind::Avg => Ok(average_pool(window, 0)?.0),
        AggregatorKind::Max => max_pool(window),
        AggregatorKind::Attention => {
            let params = params.ok_or(AggregationError::MissingParams)?;
            Ok(simple_attention(window, params)?.0)
        }
    }
}

/// Encode symbolic table info into aggregator-ready vectors: one
/// `[category_probs | amount_probs | box]` vector per region (dim K+A+4),
/// plus a global `[progress_probs | normalized elapsed]` vector (dim P+1)
/// to concatenate after aggregation. Elapsed time is scaled by 1/1800 s
/// and clamped at 2.0. Stored simplexes are renormalized on the way in.
pub fn encode_table_info(info: &TableInfo, dims: &ManifestDims) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut region_vectors = Vec::with_capacity(info.regions.len());
    for region in &info.regions {
        let mut v = Vec::with_capacity(dims.region_encoding_dim());
        v.extend(renormalized(&region.category_probs));
        v.extend(renormalized(&region.amount_probs));
        v.extend(region.box_cxcywh.iter().map(|&b| b as f64));
        region_vectors.push(v);
    }
    let mut global = Vec::with_capacity(dims.p + 1);
    global.extend(renormalized(&info.progress_probs));
    global.push((info.elapsed_s as f64 / TIME_NORMALIZER_S).min(TIME_CLAMP));
    (region_vectors, global)
}
