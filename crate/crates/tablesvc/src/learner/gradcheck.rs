//! Central-difference verification of the analytic gradients.

use super::{batch_loss, grad, EncodedFrame, Grads, HeadParams, LearnerError, ModelSignature};

/// Indexable view over every trainable coordinate: head weights, bias,
/// attention params (in map order, `a` entries then `b`), and the
/// projection when present and unfrozen. Frozen projections receive no
/// gradient, so they are not perturbed.
fn trainable_count(params: &HeadParams) -> usize {
    let att: usize = params.attention.values().map(|a| a.a.len() + 1).sum();
    let proj = params
        .projection
        .as_ref()
        .filter(|p| !p.frozen)
        .map(|p| p.matrix.len())
        .unwrap_or(0);
    params.weights.len() + params.bias.len() + att + proj
}

fn coord_mut(params: &mut HeadParams, mut idx: usize) -> &mut f64 {
    if idx < params.weights.len() {
        return &mut params.weights[idx];
    }
    idx -= params.weights.len();
    if idx < params.bias.len() {
        return &mut params.bias[idx];
    }
    idx -= params.bias.len();
    for att in params.attention.values_mut() {
        if idx < att.a.len() {
            return &mut att.a[idx];
        }
        idx -= att.a.len();
        if idx == 0 {
            return &mut att.b;
        }
        idx -= 1;
    }
    let proj = params
        .projection
        .as_mut()
        .filter(|p| !p.frozen)
        .expect("index within trainable range");
    &mut proj.matrix[idx]
}

/// Human-readable name of one trainable coordinate, matching the indexing
/// of [`coord_mut`].
fn coord_path(params: &HeadParams, mut idx: usize) -> String {
    if idx < params.weights.len() {
        return format!("weights[{}][{}]", idx / params.in_dim, idx % params.in_dim);
    }
    idx -= params.weights.len();
    if idx < params.bias.len() {
        return format!("bias[{idx}]");
    }
    idx -= params.bias.len();
    for (key, att) in &params.attention {
        if idx < att.a.len() {
            return format!("attention[{key}].a[{idx}]");
        }
        idx -= att.a.len();
        if idx == 0 {
            return format!("attention[{key}].b");
        }
        idx -= 1;
    }
    let proj = params
        .projection
        .as_ref()
        .filter(|p| !p.frozen)
        .expect("index within trainable range");
    format!("projection[{}][{}]", idx / proj.in_dim, idx % proj.in_dim)
}

fn analytic_coord(params: &HeadParams, grads: &Grads, mut idx: usize) -> f64 {
    if idx < grads.weights.len() {
        return grads.weights[idx];
    }
    idx -= grads.weights.len();
    if idx < grads.bias.len() {
        return grads.bias[idx];
    }
    idx -= grads.bias.len();
    for att in grads.attention.values() {
        if idx < att.a.len() {
            return att.a[idx];
        }
        idx -= att.a.len();
        if idx == 0 {
            return att.b;
        }
        idx -= 1;
    }
    debug_assert!(
        params.projection.as_ref().map(|p| !p.frozen).unwrap_or(false),
        "projection coordinates only exist when unfrozen"
    );
    grads.projection[idx]
}

/// Outcome of one gradient check: the worst coordinate and its error.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Name of the coordinate with the largest relative error, e.g.
    /// `attention[table-info].a[3]`.
    pub worst_path: String,
}

/// Compare the analytic batch gradient against central differences
/// (L(θ+ε) − L(θ−ε)) / 2ε coordinate by coordinate and return the maximum
/// relative error |g_a − g_n| / max(|g_a|, |g_n|, 1e-8) over all trainable
/// parameters.
pub fn gradient_check(
    params: &HeadParams,
    signature: &ModelSignature,
    batch: &[EncodedFrame],
    class_weights: Option<&[f64]>,
    epsilon: f64,
) -> Result<f64, LearnerError> {
    gradient_check_report(params, signature, batch, class_weights, epsilon, 0.0)
        .map(|r| r.max_rel_err)
}

/// [`gradient_check`] with the worst coordinate's name attached.
/// `analytic_offset` is a fault-injection hook: it is added to every
/// analytic coordinate before comparison, so any non-zero value must make
/// the check fail. Pass 0.0 for a real check.
pub fn gradient_check_report(
    params: &HeadParams,
    signature: &ModelSignature,
    batch: &[EncodedFrame],
    class_weights: Option<&[f64]>,
    epsilon: f64,
    analytic_offset: f64,
) -> Result<GradCheckReport, LearnerError> {
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(LearnerError::InvalidConfig {
            detail: format!("epsilon must be in [1e-7, 1e-3], got {epsilon}"),
        });
    }
    if batch.is_empty() {
        return Err(LearnerError::EmptyDataset);
    }
    let grads = grad(params, signature, batch, class_weights)?;
    let mut max_rel = 0.0f64;
    let mut worst = 0usize;
    for idx in 0..trainable_count(params) {
        let mut plus = params.clone();
        *coord_mut(&mut plus, idx) += epsilon;
        let l_plus = batch_loss(&plus, signature, batch, class_weights)?;
        let mut minus = params.clone();
        *coord_mut(&mut minus, idx) -= epsilon;
        let l_minus = batch_loss(&minus, signature, batch, class_weights)?;
        let numeric = (l_plus - l_minus) / (2.0 * epsilon);
        let analytic = analytic_coord(params, &grads, idx) + analytic_offset;
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
        if rel > max_rel {
            max_rel = rel;
            worst = idx;
        }
    }
    Ok(GradCheckReport {
        max_rel_err: max_rel,
        worst_path: coord_path(params, worst),
    })
}
