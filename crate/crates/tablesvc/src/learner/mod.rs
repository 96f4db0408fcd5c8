//! Trainable classifier heads.
//!
//! A model is a declared signature: which feature sources feed the head,
//! how each is aggregated (avg / max / simple attention), an optional
//! temporal window over consecutive frames, an optional linear projection
//! (the frozen-vs-trainable "backbone" analogue), and a final affine map
//! to class scores. Multi-label mode applies per-class sigmoids; exclusive
//! mode applies a softmax over classes (the four service classes plus an
//! explicit all-clear class).
//!
//! Everything is f64, from-scratch, and deterministic: plain SGD, seeded
//! shuffles, sequential reductions. Analytic gradients are verified
//! against central differences in [`gradient_check`].

mod checkpoint;
mod gradcheck;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
pub use gradcheck::{gradient_check, gradient_check_report, GradCheckReport};
pub use train::{
    auto_class_weights, predict, train, train_encoded, EpochStats, PredictedFrame,
    ScheduleSegment, TrainConfig,
};

use std::collections::BTreeMap;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregation::{
    average_pool, combine_features, encode_table_info, max_pool, simple_attention, stable_softmax,
    AggregatorKind, AttentionParams,
};
use crate::dataset::{Dataset, FeatureBundle, LabelMode, ManifestDims, SERVICE_CLASSES};

#[derive(Debug, Error)]
pub enum LearnerError {
    #[error("invalid dim: {detail}")]
    InvalidDim { detail: String },
    #[error("dim mismatch: {detail}")]
    DimMismatch { detail: String },
    #[error("invalid label: {detail}")]
    InvalidLabel { detail: String },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("loss diverged to a non-finite value at epoch {epoch}")]
    DivergedLoss { epoch: usize },
    #[error("invalid config: {detail}")]
    InvalidConfig { detail: String },
    #[error("io failure at {path}: {source}")]
    IoFailure {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad checkpoint: {detail}")]
    CheckpointFormat { detail: String },
    #[error(transparent)]
    Aggregation(#[from] crate::aggregation::AggregationError),
}

/// Which block of the feature bundle feeds the head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureSource {
    Backbone,
    Encoder,
    Regions,
    TableInfo,
}

impl FeatureSource {
    pub fn name(&self) -> &'static str {
        match self {
            FeatureSource::Backbone => "backbone",
            FeatureSource::Encoder => "encoder",
            FeatureSource::Regions => "regions",
            FeatureSource::TableInfo => "table-info",
        }
    }

    /// Dim of one element of this source.
    pub fn element_dim(&self, dims: &ManifestDims) -> usize {
        match self {
            FeatureSource::Backbone => dims.c,
            FeatureSource::Encoder => dims.d,
            FeatureSource::Regions => dims.d,
            FeatureSource::TableInfo => dims.region_encoding_dim(),
        }
    }

    /// Dim this source contributes to the combined vector (aggregate plus
    /// any global tail).
    pub fn combined_dim(&self, dims: &ManifestDims) -> usize {
        match self {
            FeatureSource::TableInfo => dims.region_encoding_dim() + dims.p + 1,
            other => other.element_dim(dims),
        }
    }
}

/// One declared source and its aggregator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub source: FeatureSource,
    pub aggregator: AggregatorKind,
}

/// Temporal aggregation over the last `window` frames of the episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemporalSpec {
    pub window: usize,
    pub mode: AggregatorKind,
}

/// Attention map key for the temporal aggregator.
pub const TEMPORAL_KEY: &str = "temporal";

/// The full model declaration. Source order is the concatenation order and
/// is part of the signature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSignature {
    pub sources: Vec<SourceSpec>,
    pub temporal: Option<TemporalSpec>,
    /// Project the (temporal-aggregated) combined vector to this dim
    /// before the head.
    pub projection_dim: Option<usize>,
    pub out_classes: usize,
    pub label_mode: LabelMode,
}

impl ModelSignature {
    /// Service-head signature: 4 independent classes in multi-label mode,
    /// 4 service classes plus an all-clear class in exclusive mode.
    pub fn service(
        sources: Vec<SourceSpec>,
        temporal: Option<TemporalSpec>,
        projection_dim: Option<usize>,
        label_mode: LabelMode,
    ) -> Self {
        let out_classes = match label_mode {
            LabelMode::MultiLabel => SERVICE_CLASSES,
            LabelMode::Exclusive => SERVICE_CLASSES + 1,
        };
        ModelSignature {
            sources,
            temporal,
            projection_dim,
            out_classes,
            label_mode,
        }
    }

    pub fn combined_dim(&self, dims: &ManifestDims) -> usize {
        self.sources.iter().map(|s| s.source.combined_dim(dims)).sum()
    }

    pub fn head_in_dim(&self, dims: &ManifestDims) -> usize {
        self.projection_dim.unwrap_or_else(|| self.combined_dim(dims))
    }

    fn validate(&self, dims: &ManifestDims) -> Result<(), LearnerError> {
        if self.sources.is_empty() {
            return Err(LearnerError::InvalidConfig {
                detail: "signature declares no sources".into(),
            });
        }
        if self.out_classes == 0 {
            return Err(LearnerError::InvalidDim {
                detail: "out_classes must be ≥ 1".into(),
            });
        }
        if let Some(t) = &self.temporal {
            if t.window == 0 {
                return Err(LearnerError::InvalidConfig {
                    detail: "temporal window must be ≥ 1".into(),
                });
            }
        }
        if let Some(p) = self.projection_dim {
            if p == 0 {
                return Err(LearnerError::InvalidDim {
                    detail: "projection_dim must be ≥ 1".into(),
                });
            }
        }
        if self.combined_dim(dims) == 0 {
            return Err(LearnerError::InvalidDim {
                detail: "combined input dim is 0".into(),
            });
        }
        Ok(())
    }
}

/// Optional linear projection applied before the head.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    /// Row-major out_dim×in_dim.
    pub matrix: Vec<f64>,
    pub in_dim: usize,
    pub out_dim: usize,
    pub frozen: bool,
}

/// All trainable (and frozen) parameters of one head.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    /// Row-major out×in.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub in_dim: usize,
    pub out_dim: usize,
    /// Attention params per attended source name, plus "temporal".
    pub attention: BTreeMap<String, AttentionParams>,
    pub projection: Option<Projection>,
}

/// Bare affine head with seeded uniform weights in [−1/√in, 1/√in] and
/// zero bias.
pub fn init_params(in_dim: usize, out_dim: usize, seed: u64) -> Result<HeadParams, LearnerError> {
    if in_dim == 0 || out_dim == 0 {
        return Err(LearnerError::InvalidDim {
            detail: format!("dims must be ≥ 1, got in={in_dim} out={out_dim}"),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bound = 1.0 / (in_dim as f64).sqrt();
    let weights = (0..in_dim * out_dim)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    Ok(HeadParams {
        weights,
        bias: vec![0.0; out_dim],
        in_dim,
        out_dim,
        attention: BTreeMap::new(),
        projection: None,
    })
}

/// Initialize every parameter a signature calls for: the head itself,
/// zero-initialized attention (so attention starts as average pooling),
/// and a seeded random projection when requested.
pub fn init_for_signature(
    signature: &ModelSignature,
    dims: &ManifestDims,
    seed: u64,
    frozen_projection: bool,
) -> Result<HeadParams, LearnerError> {
    signature.validate(dims)?;
    let combined = signature.combined_dim(dims);
    let head_in = signature.head_in_dim(dims);
    let mut params = init_params(head_in, signature.out_classes, seed)?;
    for spec in &signature.sources {
        if spec.aggregator == AggregatorKind::Attention {
            params.attention.insert(
                spec.source.name().to_string(),
                AttentionParams::zeros(spec.source.element_dim(dims)),
            );
        }
    }
    if let Some(t) = &signature.temporal {
        if t.mode == AggregatorKind::Attention {
            params
                .attention
                .insert(TEMPORAL_KEY.to_string(), AttentionParams::zeros(combined));
        }
    }
    if let Some(proj_dim) = signature.projection_dim {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x9e3779b97f4a7c15));
        let bound = 1.0 / (combined as f64).sqrt();
        let matrix = (0..proj_dim * combined)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        params.projection = Some(Projection {
            matrix,
            in_dim: combined,
            out_dim: proj_dim,
            frozen: frozen_projection,
        });
    }
    Ok(params)
}

/// Classification target for one frame.
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    /// Per-class flags (multi-label).
    Multi(Vec<bool>),
    /// True class index (exclusive).
    Exclusive(usize),
}

/// Pre-extracted, parameter-independent inputs of one source for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceElements {
    pub elements: Vec<Vec<f64>>,
    /// Appended to the aggregate untouched (table-info global vector).
    pub tail: Vec<f64>,
}

/// One frame of one temporal window.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameInputs {
    /// One entry per declared source, in signature order.
    pub per_source: Vec<SourceElements>,
}

/// One training/eval example: the (≤ window) most recent frames of its
/// episode, oldest first, current frame last, plus the target.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedFrame {
    pub window: Vec<FrameInputs>,
    pub target: Target,
    pub episode_id: u32,
    pub frame_id: u32,
}

fn chunk_f32(values: &[f32], dim: usize) -> Vec<Vec<f64>> {
    values
        .chunks_exact(dim)
        .map(|c| c.iter().map(|&v| v as f64).collect())
        .collect()
}

/// Extract one source's element list (and tail) from a bundle.
pub fn extract_source(
    bundle: &FeatureBundle,
    source: FeatureSource,
    dims: &ManifestDims,
) -> SourceElements {
    match source {
        FeatureSource::Backbone => SourceElements {
            elements: chunk_f32(&bundle.backbone_grid, dims.c),
            tail: Vec::new(),
        },
        FeatureSource::Encoder => SourceElements {
            elements: chunk_f32(&bundle.encoder_tokens, dims.d),
            tail: Vec::new(),
        },
        FeatureSource::Regions => SourceElements {
            elements: chunk_f32(&bundle.region_features, dims.d),
            tail: Vec::new(),
        },
        FeatureSource::TableInfo => {
            let (elements, tail) = encode_table_info(&bundle.table_info, dims);
            SourceElements { elements, tail }
        }
    }
}

/// Turn a dataset into training examples under a signature: extract the
/// declared sources, build temporal windows per episode over the frames
/// present (windows never cross episodes), and attach targets according
/// to the signature's label mode.
pub fn encode_dataset(
    dataset: &Dataset,
    signature: &ModelSignature,
) -> Result<Vec<EncodedFrame>, LearnerError> {
    signature.validate(&dataset.manifest.dims)?;
    if dataset.is_empty() {
        return Err(LearnerError::EmptyDataset);
    }
    let dims = &dataset.manifest.dims;
    let window = signature.temporal.map(|t| t.window).unwrap_or(1);

    // Per-frame inputs, in dataset order.
    let inputs: Vec<FrameInputs> = dataset
        .frames
        .iter()
        .map(|(bundle, _)| FrameInputs {
            per_source: signature
                .sources
                .iter()
                .map(|s| extract_source(bundle, s.source, dims))
                .collect(),
        })
        .collect();

    // Episode-wise frame order for window construction.
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.sort_by_key(|&i| {
        let b = &dataset.frames[i].0;
        (b.episode_id, b.frame_id, i)
    });
    let mut prev_in_episode: Vec<Vec<usize>> = vec![Vec::new(); dataset.len()];
    let mut run: Vec<usize> = Vec::new();
    let mut run_episode: Option<u32> = None;
    for &i in &order {
        let ep = dataset.frames[i].0.episode_id;
        if run_episode != Some(ep) {
            run.clear();
            run_episode = Some(ep);
        }
        run.push(i);
        let start = run.len().saturating_sub(window);
        prev_in_episode[i] = run[start..].to_vec();
    }

    let mut out = Vec::with_capacity(dataset.len());
    for (i, (bundle, label)) in dataset.frames.iter().enumerate() {
        let target = match signature.label_mode {
            LabelMode::MultiLabel => Target::Multi(label.flags().to_vec()),
            LabelMode::Exclusive => Target::Exclusive(label.exclusive_class()),
        };
        validate_target(&target, signature.out_classes)?;
        let window_inputs = prev_in_episode[i]
            .iter()
            .map(|&j| inputs[j].clone())
            .collect();
        out.push(EncodedFrame {
            window: window_inputs,
            target,
            episode_id: bundle.episode_id,
            frame_id: bundle.frame_id,
        });
    }
    Ok(out)
}

fn validate_target(target: &Target, out_classes: usize) -> Result<(), LearnerError> {
    match target {
        Target::Multi(flags) => {
            if flags.len() != out_classes {
                return Err(LearnerError::InvalidLabel {
                    detail: format!(
                        "multi-label target has {} flags, head has {out_classes} classes",
                        flags.len()
                    ),
                });
            }
        }
        Target::Exclusive(class) => {
            if *class >= out_classes {
                return Err(LearnerError::InvalidLabel {
                    detail: format!("class {class} out of range for {out_classes} classes"),
                });
            }
        }
    }
    Ok(())
}

/// Forward pass output: raw class scores and mode-mapped probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub scores: Vec<f64>,
    pub probs: Vec<f64>,
}

fn matvec(matrix: &[f64], in_dim: usize, x: &[f64]) -> Vec<f64> {
    let rows = matrix.len() / in_dim;
    let mut out = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = &matrix[r * in_dim..(r + 1) * in_dim];
        let mut acc = 0.0;
        for (w, v) in row.iter().zip(x.iter()) {
            acc += w * v;
        }
        out.push(acc);
    }
    out
}

/// `matrix^T · y` for a row-major out×in matrix.
fn matvec_t(matrix: &[f64], in_dim: usize, y: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; in_dim];
    for (r, yr) in y.iter().enumerate() {
        let row = &matrix[r * in_dim..(r + 1) * in_dim];
        for (o, w) in out.iter_mut().zip(row.iter()) {
            *o += w * yr;
        }
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Map raw scores to probabilities for the mode: softmax simplex in
/// exclusive mode, independent sigmoids in multi-label mode.
pub fn scores_to_probs(scores: &[f64], mode: LabelMode) -> Vec<f64> {
    match mode {
        LabelMode::Exclusive => stable_softmax(scores),
        LabelMode::MultiLabel => scores.iter().map(|&s| sigmoid(s)).collect(),
    }
}

fn aggregate_source(
    spec: &SourceSpec,
    inputs: &SourceElements,
    params: &HeadParams,
) -> Result<(Vec<f64>, Option<Vec<f64>>), LearnerError> {
    let dim_if_empty = inputs.elements.first().map(|e| e.len()).unwrap_or(0);
    let (agg, weights) = match spec.aggregator {
        AggregatorKind::Avg => (average_pool(&inputs.elements, dim_if_empty)?.0, None),
        AggregatorKind::Max => (max_pool(&inputs.elements)?, None),
        AggregatorKind::Attention => {
            let att = params.attention.get(spec.source.name()).ok_or_else(|| {
                LearnerError::DimMismatch {
                    detail: format!("no attention params for source {}", spec.source.name()),
                }
            })?;
            let (agg, w) = simple_attention(&inputs.elements, att)?;
            (agg, Some(w))
        }
    };
    Ok((agg, weights))
}

/// Combined per-frame vector under the current params.
fn frame_vector(
    signature: &ModelSignature,
    frame: &FrameInputs,
    params: &HeadParams,
) -> Result<Vec<f64>, LearnerError> {
    if frame.per_source.len() != signature.sources.len() {
        return Err(LearnerError::DimMismatch {
            detail: format!(
                "frame carries {} sources, signature declares {}",
                frame.per_source.len(),
                signature.sources.len()
            ),
        });
    }
    let mut parts = Vec::with_capacity(signature.sources.len() * 2);
    for (spec, inputs) in signature.sources.iter().zip(frame.per_source.iter()) {
        let (agg, _) = aggregate_source(spec, inputs, params)?;
        parts.push(agg);
        if !inputs.tail.is_empty() {
            parts.push(inputs.tail.clone());
        }
    }
    Ok(combine_features(&parts))
}

/// The head input vector for one example: per-frame source aggregation and
/// combination, temporal aggregation over the window, then the optional
/// projection.
pub fn head_input(
    signature: &ModelSignature,
    example: &EncodedFrame,
    params: &HeadParams,
) -> Result<Vec<f64>, LearnerError> {
    if example.window.is_empty() {
        return Err(LearnerError::DimMismatch {
            detail: "example has an empty temporal window".into(),
        });
    }
    let frames: Vec<Vec<f64>> = example
        .window
        .iter()
        .map(|f| frame_vector(signature, f, params))
        .collect::<Result<_, _>>()?;
    let combined = match &signature.temporal {
        None => frames.into_iter().next_back().expect("non-empty window"),
        Some(t) => {
            let att = params.attention.get(TEMPORAL_KEY);
            if t.mode == AggregatorKind::Attention && att.is_none() {
                return Err(LearnerError::DimMismatch {
                    detail: "temporal attention params missing".into(),
                });
            }
            crate::aggregation::temporal_aggregate(&frames, t.mode, att)?
        }
    };
    let v = match &params.projection {
        Some(p) => {
            if combined.len() != p.in_dim {
                return Err(LearnerError::DimMismatch {
                    detail: format!(
                        "projection expects {} inputs, combined vector has {}",
                        p.in_dim,
                        combined.len()
                    ),
                });
            }
            matvec(&p.matrix, p.in_dim, &combined)
        }
        None => combined,
    };
    if v.len() != params.in_dim {
        return Err(LearnerError::DimMismatch {
            detail: format!(
                "head expects {} inputs, got {}",
                params.in_dim,
                v.len()
            ),
        });
    }
    Ok(v)
}

/// Full forward pass for one example.
pub fn forward(
    params: &HeadParams,
    signature: &ModelSignature,
    example: &EncodedFrame,
) -> Result<Forward, LearnerError> {
    let v = head_input(signature, example, params)?;
    let mut scores = matvec(&params.weights, params.in_dim, &v);
    for (s, b) in scores.iter_mut().zip(params.bias.iter()) {
        *s += b;
    }
    let probs = scores_to_probs(&scores, signature.label_mode);
    Ok(Forward { scores, probs })
}

const PROB_CLAMP: f64 = 1e-7;

/// Cross-entropy loss for one example: −ln p[true] in exclusive mode, the
/// mean over classes of (positively weighted) binary cross-entropy in
/// multi-label mode. Probabilities are clamped to [1e-7, 1−1e-7] before
/// the log.
pub fn task_loss(
    probs: &[f64],
    target: &Target,
    mode: LabelMode,
    class_weights: Option<&[f64]>,
) -> Result<f64, LearnerError> {
    validate_target(target, probs.len())?;
    match (mode, target) {
        (LabelMode::Exclusive, Target::Exclusive(class)) => {
            let p = probs[*class].clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            Ok(-p.ln())
        }
        (LabelMode::MultiLabel, Target::Multi(flags)) => {
            if let Some(w) = class_weights {
                if w.len() != flags.len() {
                    return Err(LearnerError::InvalidLabel {
                        detail: format!(
                            "{} class weights for {} classes",
                            w.len(),
                            flags.len()
                        ),
                    });
                }
            }
            let k = flags.len() as f64;
            let mut total = 0.0;
            for (c, (&p, &y)) in probs.iter().zip(flags.iter()).enumerate() {
                let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
                let w = class_weights.map(|w| w[c]).unwrap_or(1.0);
                total += if y { -w * p.ln() } else { -(1.0 - p).ln() };
            }
            Ok(total / k)
        }
        _ => Err(LearnerError::InvalidLabel {
            detail: "target kind does not match label mode".into(),
        }),
    }
}

/// The four loss terms of the recognition model's combined objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultitaskLossParts {
    pub loss_c: f64,
    pub loss_bb: f64,
    pub loss_a: f64,
    pub loss_prog: f64,
}

/// Exact unweighted sum of the four parts.
pub fn combine_multitask_loss(parts: &MultitaskLossParts) -> Result<f64, LearnerError> {
    for (name, v) in [
        ("loss_c", parts.loss_c),
        ("loss_bb", parts.loss_bb),
        ("loss_a", parts.loss_a),
        ("loss_prog", parts.loss_prog),
    ] {
        if !v.is_finite() || v < 0.0 {
            return Err(LearnerError::NonFinite(match name {
                "loss_c" => "loss_c",
                "loss_bb" => "loss_bb",
                "loss_a" => "loss_a",
                _ => "loss_prog",
            }));
        }
    }
    Ok(parts.loss_c + parts.loss_bb + parts.loss_a + parts.loss_prog)
}

/// Gradients mirroring [`HeadParams`]. A frozen projection's gradient is
/// identically zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub attention: BTreeMap<String, AttentionParams>,
    pub projection: Vec<f64>,
}

impl Grads {
    fn zeros_like(params: &HeadParams) -> Grads {
        Grads {
            weights: vec![0.0; params.weights.len()],
            bias: vec![0.0; params.bias.len()],
            attention: params
                .attention
                .iter()
                .map(|(k, v)| (k.clone(), AttentionParams::zeros(v.a.len())))
                .collect(),
            projection: vec![
                0.0;
                params.projection.as_ref().map(|p| p.matrix.len()).unwrap_or(0)
            ],
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self
            .weights
            .iter_mut()
            .chain(self.bias.iter_mut())
            .chain(self.projection.iter_mut())
        {
            *g *= factor;
        }
        for att in self.attention.values_mut() {
            for g in att.a.iter_mut() {
                *g *= factor;
            }
            att.b *= factor;
        }
    }
}

/// dL/dscores for one example.
fn score_gradient(
    probs: &[f64],
    target: &Target,
    mode: LabelMode,
    class_weights: Option<&[f64]>,
) -> Vec<f64> {
    match (mode, target) {
        (LabelMode::Exclusive, Target::Exclusive(class)) => {
            // softmax + CE: p − one_hot(y)
            probs
                .iter()
                .enumerate()
                .map(|(c, &p)| if c == *class { p - 1.0 } else { p })
                .collect()
        }
        (LabelMode::MultiLabel, Target::Multi(flags)) => {
            let k = flags.len() as f64;
            probs
                .iter()
                .zip(flags.iter())
                .enumerate()
                .map(|(c, (&p, &y))| {
                    let w = class_weights.map(|w| w[c]).unwrap_or(1.0);
                    if y {
                        -w * (1.0 - p) / k
                    } else {
                        p / k
                    }
                })
                .collect()
        }
        _ => unreachable!("targets validated before gradient"),
    }
}

/// Backward pass through a softmax-attention aggregation.
/// Given dL/d(output) and the forward weights, accumulates dL/da, dL/db
/// and returns dL/d(element_j) for each element.
fn attention_backward(
    elements: &[Vec<f64>],
    weights: &[f64],
    att: &AttentionParams,
    d_out: &[f64],
    d_att: &mut AttentionParams,
) -> Vec<Vec<f64>> {
    let g: Vec<f64> = elements
        .iter()
        .map(|e| e.iter().zip(d_out.iter()).map(|(&x, &d)| x * d).sum())
        .collect();
    let weighted_mean: f64 = weights.iter().zip(g.iter()).map(|(&w, &gj)| w * gj).sum();
    let d_scores: Vec<f64> = weights
        .iter()
        .zip(g.iter())
        .map(|(&w, &gj)| w * (gj - weighted_mean))
        .collect();
    for (ds, e) in d_scores.iter().zip(elements.iter()) {
        for (da, &x) in d_att.a.iter_mut().zip(e.iter()) {
            *da += ds * x;
        }
        d_att.b += ds;
    }
    weights
        .iter()
        .zip(d_scores.iter())
        .map(|(&w, &ds)| {
            d_out
                .iter()
                .zip(att.a.iter())
                .map(|(&d, &a)| w * d + ds * a)
                .collect()
        })
        .collect()
}

/// Loss and hard-prediction accuracy of one batch, measured during the
/// gradient pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchStats {
    /// Mean task loss over the batch.
    pub loss: f64,
    /// Correct hard predictions: per (frame, class) in multi-label mode,
    /// per frame in exclusive mode.
    pub correct: usize,
    pub total: usize,
}

/// Mean analytic gradient of the task loss over a batch.
pub fn grad(
    params: &HeadParams,
    signature: &ModelSignature,
    batch: &[EncodedFrame],
    class_weights: Option<&[f64]>,
) -> Result<Grads, LearnerError> {
    Ok(grad_with_stats(params, signature, batch, class_weights)?.0)
}

/// Mean gradient plus the batch's loss/accuracy (the forward results are
/// shared, so training gets both for one pass).
pub fn grad_with_stats(
    params: &HeadParams,
    signature: &ModelSignature,
    batch: &[EncodedFrame],
    class_weights: Option<&[f64]>,
) -> Result<(Grads, BatchStats), LearnerError> {
    if batch.is_empty() {
        return Err(LearnerError::EmptyDataset);
    }
    let mut grads = Grads::zeros_like(params);
    let mut loss_sum = 0.0f64;
    let mut correct = 0usize;
    let mut total = 0usize;
    for example in batch {
        let (loss, c, t) =
            accumulate_example(params, signature, example, class_weights, &mut grads)?;
        loss_sum += loss;
        correct += c;
        total += t;
    }
    grads.scale(1.0 / batch.len() as f64);
    if let Some(p) = &params.projection {
        if p.frozen {
            for g in grads.projection.iter_mut() {
                *g = 0.0;
            }
        }
    }
    Ok((
        grads,
        BatchStats {
            loss: loss_sum / batch.len() as f64,
            correct,
            total,
        },
    ))
}

fn accumulate_example(
    params: &HeadParams,
    signature: &ModelSignature,
    example: &EncodedFrame,
    class_weights: Option<&[f64]>,
    grads: &mut Grads,
) -> Result<(f64, usize, usize), LearnerError> {
    if example.window.is_empty() {
        return Err(LearnerError::DimMismatch {
            detail: "example has an empty temporal window".into(),
        });
    }
    // Forward with caches.
    let mut frame_vecs: Vec<Vec<f64>> = Vec::with_capacity(example.window.len());
    let mut frame_caches: Vec<Vec<Option<Vec<f64>>>> = Vec::with_capacity(example.window.len());
    for frame in &example.window {
        if frame.per_source.len() != signature.sources.len() {
            return Err(LearnerError::DimMismatch {
                detail: "frame/source count mismatch".into(),
            });
        }
        let mut parts = Vec::new();
        let mut caches = Vec::with_capacity(signature.sources.len());
        for (spec, inputs) in signature.sources.iter().zip(frame.per_source.iter()) {
            let (agg, weights) = aggregate_source(spec, inputs, params)?;
            parts.push(agg);
            if !inputs.tail.is_empty() {
                parts.push(inputs.tail.clone());
            }
            caches.push(weights);
        }
        frame_vecs.push(combine_features(&parts));
        frame_caches.push(caches);
    }
    let temporal_att = params.attention.get(TEMPORAL_KEY);
    let (combined, temporal_weights): (Vec<f64>, Option<Vec<f64>>) = match &signature.temporal {
        None => (frame_vecs.last().expect("non-empty").clone(), None),
        Some(t) => match t.mode {
            AggregatorKind::Avg => (average_pool(&frame_vecs, 0)?.0, None),
            AggregatorKind::Max => (max_pool(&frame_vecs)?, None),
            AggregatorKind::Attention => {
                let att = temporal_att.ok_or_else(|| LearnerError::DimMismatch {
                    detail: "temporal attention params missing".into(),
                })?;
                let (agg, w) = simple_attention(&frame_vecs, att)?;
                (agg, Some(w))
            }
        },
    };
    let v = match &params.projection {
        Some(p) => matvec(&p.matrix, p.in_dim, &combined),
        None => combined.clone(),
    };
    if v.len() != params.in_dim {
        return Err(LearnerError::DimMismatch {
            detail: format!("head expects {} inputs, got {}", params.in_dim, v.len()),
        });
    }
    let mut scores = matvec(&params.weights, params.in_dim, &v);
    for (s, b) in scores.iter_mut().zip(params.bias.iter()) {
        *s += b;
    }
    let probs = scores_to_probs(&scores, signature.label_mode);
    validate_target(&example.target, signature.out_classes)?;
    let loss = task_loss(&probs, &example.target, signature.label_mode, class_weights)?;
    let (correct, total) = match &example.target {
        Target::Multi(flags) => {
            let hits = probs
                .iter()
                .zip(flags.iter())
                .filter(|(&p, &y)| (p >= 0.5) == y)
                .count();
            (hits, flags.len())
        }
        Target::Exclusive(class) => {
            let mut best = 0usize;
            for (c, &p) in probs.iter().enumerate() {
                if p > probs[best] {
                    best = c;
                }
            }
            ((best == *class) as usize, 1)
        }
    };
    let d_scores = score_gradient(&probs, &example.target, signature.label_mode, class_weights);

    // Head.
    for (c, &ds) in d_scores.iter().enumerate() {
        grads.bias[c] += ds;
        let row = &mut grads.weights[c * params.in_dim..(c + 1) * params.in_dim];
        for (gw, &x) in row.iter_mut().zip(v.iter()) {
            *gw += ds * x;
        }
    }
    let mut d_v = matvec_t(&params.weights, params.in_dim, &d_scores);

    // Projection.
    let d_combined = match &params.projection {
        Some(p) => {
            for (r, dv) in d_v.iter().enumerate() {
                let row = &mut grads.projection[r * p.in_dim..(r + 1) * p.in_dim];
                for (gp, &x) in row.iter_mut().zip(combined.iter()) {
                    *gp += dv * x;
                }
            }
            matvec_t(&p.matrix, p.in_dim, &d_v)
        }
        None => std::mem::take(&mut d_v),
    };

    // Temporal.
    let d_frames: Vec<Vec<f64>> = match &signature.temporal {
        None => {
            let mut d = vec![vec![0.0; d_combined.len()]; frame_vecs.len()];
            *d.last_mut().expect("non-empty") = d_combined;
            d
        }
        Some(t) => match t.mode {
            AggregatorKind::Avg => {
                let scale = 1.0 / frame_vecs.len() as f64;
                frame_vecs
                    .iter()
                    .map(|_| d_combined.iter().map(|&d| d * scale).collect())
                    .collect()
            }
            AggregatorKind::Max => {
                let mut d = vec![vec![0.0; d_combined.len()]; frame_vecs.len()];
                for c in 0..d_combined.len() {
                    let mut best = 0;
                    for (j, fv) in frame_vecs.iter().enumerate() {
                        if fv[c] > frame_vecs[best][c] {
                            best = j;
                        }
                    }
                    d[best][c] = d_combined[c];
                }
                d
            }
            AggregatorKind::Attention => {
                let att = temporal_att.expect("checked in forward");
                let weights = temporal_weights.expect("cached in forward");
                let d_att = grads
                    .attention
                    .get_mut(TEMPORAL_KEY)
                    .expect("grads mirror params");
                attention_backward(&frame_vecs, &weights, att, &d_combined, d_att)
            }
        },
    };

    // Per-frame source aggregations.
    for ((frame, caches), d_frame) in example
        .window
        .iter()
        .zip(frame_caches.iter())
        .zip(d_frames.iter())
    {
        let mut offset = 0usize;
        for ((spec, inputs), cache) in signature
            .sources
            .iter()
            .zip(frame.per_source.iter())
            .zip(caches.iter())
        {
            let agg_dim = inputs.elements.first().map(|e| e.len()).unwrap_or(0);
            let d_agg = &d_frame[offset..offset + agg_dim];
            offset += agg_dim + inputs.tail.len();
            if spec.aggregator == AggregatorKind::Attention && !inputs.elements.is_empty() {
                let att = params
                    .attention
                    .get(spec.source.name())
                    .expect("checked in forward");
                let weights = cache.as_ref().expect("attention caches weights");
                let d_att = grads
                    .attention
                    .get_mut(spec.source.name())
                    .expect("grads mirror params");
                // Element gradients are discarded: elements are inputs.
                let _ = attention_backward(&inputs.elements, weights, att, d_agg, d_att);
            }
        }
    }
    Ok((loss, correct, total))
}

/// Mean task loss of a batch under the current params.
pub fn batch_loss(
    params: &HeadParams,
    signature: &ModelSignature,
    batch: &[EncodedFrame],
    class_weights: Option<&[f64]>,
) -> Result<f64, LearnerError> {
    if batch.is_empty() {
        return Err(LearnerError::EmptyDataset);
    }
    let mut total = 0.0;
    for example in batch {
        let fwd = forward(params, signature, example)?;
        total += task_loss(
            &fwd.probs,
            &example.target,
            signature.label_mode,
            class_weights,
        )?;
    }
    Ok(total / batch.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_frame_example(x: Vec<f64>, target: Target) -> EncodedFrame {
        EncodedFrame {
            window: vec![FrameInputs {
                per_source: vec![SourceElements {
                    elements: vec![x],
                    tail: Vec::new(),
                }],
            }],
            target,
            episode_id: 0,
            frame_id: 0,
        }
    }

    fn bare_signature(out_classes: usize, label_mode: LabelMode) -> ModelSignature {
        ModelSignature {
            sources: vec![SourceSpec {
                source: FeatureSource::Backbone,
                aggregator: AggregatorKind::Avg,
            }],
            temporal: None,
            projection_dim: None,
            out_classes,
            label_mode,
        }
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let a = init_params(4, 4, 99).unwrap();
        let b = init_params(4, 4, 99).unwrap();
        assert_eq!(a, b);
        for &w in &a.weights {
            assert!(w.abs() <= 0.5);
        }
        assert!(a.bias.iter().all(|&b| b == 0.0));
        assert!(init_params(0, 4, 1).is_err());
    }

    #[test]
    fn forward_zero_params_exclusive_is_uniform() {
        let sig = bare_signature(4, LabelMode::Exclusive);
        let mut params = init_params(2, 4, 0).unwrap();
        params.weights.iter_mut().for_each(|w| *w = 0.0);
        let ex = single_frame_example(vec![3.0, -1.0], Target::Exclusive(2));
        let fwd = forward(&params, &sig, &ex).unwrap();
        for &p in &fwd.probs {
            assert!((p - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_zero_params_multilabel_is_half() {
        let sig = bare_signature(4, LabelMode::MultiLabel);
        let mut params = init_params(2, 4, 0).unwrap();
        params.weights.iter_mut().for_each(|w| *w = 0.0);
        let ex = single_frame_example(vec![3.0, -1.0], Target::Multi(vec![true; 4]));
        let fwd = forward(&params, &sig, &ex).unwrap();
        for &p in &fwd.probs {
            assert!((p - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_identity_matches_softmax() {
        let sig = bare_signature(2, LabelMode::Exclusive);
        let mut params = init_params(2, 2, 0).unwrap();
        params.weights = vec![1.0, 0.0, 0.0, 1.0];
        params.bias = vec![0.0, 0.0];
        let ex = single_frame_example(vec![2.0, 0.0], Target::Exclusive(0));
        let fwd = forward(&params, &sig, &ex).unwrap();
        assert!((fwd.probs[0] - 0.8807970779778823).abs() < 1e-10);
        assert!((fwd.probs[1] - 0.11920292202211755).abs() < 1e-10);
    }

    #[test]
    fn exclusive_probs_form_simplex_and_shift_invariant_argmax() {
        let scores = vec![1.5, -2.0, 0.25, 3.0];
        let probs = scores_to_probs(&scores, LabelMode::Exclusive);
        let sum: f64 = probs.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
        let shifted: Vec<f64> = scores.iter().map(|s| s + 123.456).collect();
        let probs2 = scores_to_probs(&shifted, LabelMode::Exclusive);
        let argmax = |v: &[f64]| {
            v.iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0
        };
        assert_eq!(argmax(&probs), argmax(&probs2));
    }

    #[test]
    fn task_loss_matches_hand_values() {
        // uniform 4-class, any true class → ln 4
        let l = task_loss(
            &[0.25; 4],
            &Target::Exclusive(1),
            LabelMode::Exclusive,
            None,
        )
        .unwrap();
        assert!((l - 1.3862943611198906).abs() < 1e-12);
        // one class at 0.5 with label 1, the rest exact up to the clamp:
        // three terms sit at a clamped probability, each costing −ln(1−ε)
        let l = task_loss(
            &[0.5, 1.0, 0.0, 0.0],
            &Target::Multi(vec![true, true, false, false]),
            LabelMode::MultiLabel,
            None,
        )
        .unwrap();
        let expected = (2.0f64.ln() + 3.0 * (1.0 - PROB_CLAMP).ln().abs()) / 4.0;
        assert!((l - expected).abs() < 1e-9, "{l} vs {expected}");
        // perfect exclusive prediction → tiny clamped loss
        let l = task_loss(&[1.0, 0.0], &Target::Exclusive(0), LabelMode::Exclusive, None).unwrap();
        assert!(l <= 1.1e-7);
    }

    #[test]
    fn multitask_loss_is_exact_sum() {
        let total = combine_multitask_loss(&MultitaskLossParts {
            loss_c: 1.0,
            loss_bb: 2.0,
            loss_a: 3.0,
            loss_prog: 4.0,
        })
        .unwrap();
        assert_eq!(total, 10.0);
        let zero = combine_multitask_loss(&MultitaskLossParts {
            loss_c: 0.0,
            loss_bb: 0.0,
            loss_a: 0.0,
            loss_prog: 0.0,
        })
        .unwrap();
        assert_eq!(zero, 0.0);
        // permutation of dyadic-exact values gives the same total
        let perm = combine_multitask_loss(&MultitaskLossParts {
            loss_c: 4.0,
            loss_bb: 3.0,
            loss_a: 2.0,
            loss_prog: 1.0,
        })
        .unwrap();
        assert_eq!(total, perm);
        assert!(combine_multitask_loss(&MultitaskLossParts {
            loss_c: f64::NAN,
            loss_bb: 0.0,
            loss_a: 0.0,
            loss_prog: 0.0,
        })
        .is_err());
    }

    #[test]
    fn zero_input_batch_gradient_is_p_minus_y_on_bias() {
        let sig = bare_signature(4, LabelMode::Exclusive);
        let mut params = init_params(3, 4, 0).unwrap();
        params.weights.iter_mut().for_each(|w| *w = 0.0);
        let batch = vec![single_frame_example(vec![0.0; 3], Target::Exclusive(2))];
        let g = grad(&params, &sig, &batch, None).unwrap();
        assert!(g.weights.iter().all(|&w| w == 0.0));
        for (c, &gb) in g.bias.iter().enumerate() {
            let expected = if c == 2 { 0.25 - 1.0 } else { 0.25 };
            assert!((gb - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn frozen_projection_gradient_is_zero() {
        let dims = ManifestDims::desk_default();
        let sig = ModelSignature::service(
            vec![SourceSpec {
                source: FeatureSource::TableInfo,
                aggregator: AggregatorKind::Attention,
            }],
            None,
            Some(8),
            LabelMode::MultiLabel,
        );
        let params = init_for_signature(&sig, &dims, 5, true).unwrap();
        let mut config = crate::synthworld::WorldConfig::balanced();
        config.duration_s = 12;
        let (train, _) = crate::synthworld::build_benchmark(&config, 2, 4).unwrap();
        let encoded = encode_dataset(&train, &sig).unwrap();
        let g = grad(&params, &sig, &encoded[..6.min(encoded.len())].to_vec().as_slice(), None).unwrap();
        assert!(!g.projection.is_empty());
        assert!(g.projection.iter().all(|&v| v == 0.0));
    }
}
