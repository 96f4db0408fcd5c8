//! Evaluation: confusion counts, per-class / macro F1, per-class / macro
//! ROC AUC, and report assembly.
//!
//! F1 and AUC are macro-averaged (unweighted over classes) so the rare
//! classes carry as much weight as the common ones. AUC uses the rank-sum
//! (Mann–Whitney) formulation with mid-ranks for ties; a quadratic
//! pairwise reference implementation is kept public for verification. A
//! class with no positives (or no negatives) has undefined AUC and is
//! excluded from the macro.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, SERVICE_CLASSES, SERVICE_CLASS_NAMES};
use crate::learner::{
    encode_dataset, predict, HeadParams, LearnerError, ModelSignature,
};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("length mismatch: {detail}")]
    LengthMismatch { detail: String },
    #[error("degenerate labels: need at least one positive and one negative")]
    DegenerateLabels,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("io failure at {path}: {source}")]
    IoFailure {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Learner(#[from] LearnerError),
}

/// Binary confusion counts of one class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClassCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl ClassCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

/// Per-class binary confusion counts from per-frame flag rows. Exclusive
/// predictions arrive as one-hot rows, which makes these exactly the
/// one-vs-rest counts.
pub fn confusion_counts(
    true_labels: &[Vec<bool>],
    predicted_labels: &[Vec<bool>],
) -> Result<Vec<ClassCounts>, MetricsError> {
    if true_labels.len() != predicted_labels.len() {
        return Err(MetricsError::LengthMismatch {
            detail: format!(
                "{} true rows vs {} predicted rows",
                true_labels.len(),
                predicted_labels.len()
            ),
        });
    }
    let classes = true_labels.first().map(Vec::len).unwrap_or(0);
    let mut counts = vec![ClassCounts::default(); classes];
    for (i, (t, p)) in true_labels.iter().zip(predicted_labels.iter()).enumerate() {
        if t.len() != classes || p.len() != classes {
            return Err(MetricsError::LengthMismatch {
                detail: format!("row {i} has ragged class count"),
            });
        }
        for (c, (&yt, &yp)) in t.iter().zip(p.iter()).enumerate() {
            match (yt, yp) {
                (true, true) => counts[c].tp += 1,
                (false, true) => counts[c].fp += 1,
                (true, false) => counts[c].fn_ += 1,
                (false, false) => counts[c].tn += 1,
            }
        }
    }
    Ok(counts)
}

/// Precision, recall, and F1 of one class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassF1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Per-class F1 plus the unweighted macro mean. Zero denominators yield 0
/// by convention.
pub fn f1_scores(counts: &[ClassCounts]) -> (Vec<ClassF1>, f64) {
    let per_class: Vec<ClassF1> = counts
        .iter()
        .map(|c| {
            let precision = ratio(c.tp, c.tp + c.fp);
            let recall = ratio(c.tp, c.tp + c.fn_);
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassF1 {
                precision,
                recall,
                f1,
            }
        })
        .collect();
    let macro_f1 = if per_class.is_empty() {
        0.0
    } else {
        per_class.iter().map(|c| c.f1).sum::<f64>() / per_class.len() as f64
    };
    (per_class, macro_f1)
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Rank-sum ROC AUC with mid-ranks for ties: the fraction of
/// (positive, negative) pairs ranked correctly, ties counting one half.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64, MetricsError> {
    if scores.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            detail: format!("{} scores vs {} labels", scores.len(), labels.len()),
        });
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricsError::DegenerateLabels);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| {
        scores[i]
            .partial_cmp(&scores[j])
            .expect("scores must be comparable")
    });
    // average rank (1-based) per tie group
    let mut rank_pos_sum = 0.0f64;
    let mut i = 0usize;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            if labels[idx] {
                rank_pos_sum += avg_rank;
            }
        }
        i = j + 1;
    }
    let u = rank_pos_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Quadratic reference AUC: counts concordant (positive, negative) pairs
/// directly, ties as one half. Kept public so the rank-sum implementation
/// can be verified against it.
pub fn pairwise_roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64, MetricsError> {
    if scores.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            detail: format!("{} scores vs {} labels", scores.len(), labels.len()),
        });
    }
    let mut wins = 0u64;
    let mut ties = 0u64;
    let mut pairs = 0u64;
    for (i, (&si, &li)) in scores.iter().zip(labels.iter()).enumerate() {
        if !li {
            continue;
        }
        for (_, (&sj, &lj)) in scores.iter().zip(labels.iter()).enumerate().filter(|&(j, _)| j != i)
        {
            if lj {
                continue;
            }
            pairs += 1;
            if si > sj {
                wins += 1;
            } else if si == sj {
                ties += 1;
            }
        }
    }
    if pairs == 0 {
        return Err(MetricsError::DegenerateLabels);
    }
    Ok((wins as f64 + ties as f64 * 0.5) / pairs as f64)
}

/// Everything measured for one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class: String,
    pub counts: ClassCounts,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// `None` when the class has no positives or no negatives.
    pub auc: Option<f64>,
    /// Positive frames of this class.
    pub support: usize,
}

/// Full evaluation of one model on one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_class: Vec<ClassReport>,
    pub macro_f1: f64,
    /// Mean over classes with defined AUC; `None` if every class is
    /// degenerate.
    pub macro_auc: Option<f64>,
    pub frames: usize,
}

/// Build a report from per-frame flags and per-class scores.
pub fn report_from_predictions(
    true_flags: &[Vec<bool>],
    predicted_flags: &[Vec<bool>],
    class_scores: &[Vec<f64>],
    class_names: &[&str],
) -> Result<MetricsReport, MetricsError> {
    if true_flags.is_empty() {
        return Err(MetricsError::EmptyDataset);
    }
    if class_scores.len() != true_flags.len() {
        return Err(MetricsError::LengthMismatch {
            detail: format!(
                "{} score rows vs {} label rows",
                class_scores.len(),
                true_flags.len()
            ),
        });
    }
    let counts = confusion_counts(true_flags, predicted_flags)?;
    if counts.len() != class_names.len() {
        return Err(MetricsError::LengthMismatch {
            detail: format!(
                "{} classes vs {} class names",
                counts.len(),
                class_names.len()
            ),
        });
    }
    let (f1s, macro_f1) = f1_scores(&counts);
    let mut per_class = Vec::with_capacity(counts.len());
    let mut defined_aucs = Vec::new();
    for (c, name) in class_names.iter().enumerate() {
        let labels: Vec<bool> = true_flags.iter().map(|row| row[c]).collect();
        let scores: Vec<f64> = class_scores.iter().map(|row| row[c]).collect();
        let auc = match roc_auc(&scores, &labels) {
            Ok(v) => {
                defined_aucs.push(v);
                Some(v)
            }
            Err(MetricsError::DegenerateLabels) => None,
            Err(e) => return Err(e),
        };
        per_class.push(ClassReport {
            class: (*name).to_string(),
            counts: counts[c],
            precision: f1s[c].precision,
            recall: f1s[c].recall,
            f1: f1s[c].f1,
            auc,
            support: labels.iter().filter(|&&l| l).count(),
        });
    }
    let macro_auc = if defined_aucs.is_empty() {
        None
    } else {
        Some(defined_aucs.iter().sum::<f64>() / defined_aucs.len() as f64)
    };
    Ok(MetricsReport {
        per_class,
        macro_f1,
        macro_auc,
        frames: true_flags.len(),
    })
}

/// Train-free evaluation entry point: predict the dataset under the
/// signature and score the four service classes one-vs-rest.
pub fn evaluate(
    params: &HeadParams,
    signature: &ModelSignature,
    dataset: &Dataset,
    thresholds: Option<&[f64]>,
) -> Result<MetricsReport, MetricsError> {
    if dataset.is_empty() {
        return Err(MetricsError::EmptyDataset);
    }
    let encoded = encode_dataset(dataset, signature)?;
    let preds = predict(params, signature, &encoded, thresholds)?;
    let true_flags: Vec<Vec<bool>> = dataset
        .frames
        .iter()
        .map(|(_, label)| label.flags().to_vec())
        .collect();
    // Only the four service classes are scored; an exclusive head's extra
    // all-clear class is implied by the service flags all being off.
    let predicted_flags: Vec<Vec<bool>> = preds
        .iter()
        .map(|p| p.hard[..SERVICE_CLASSES].to_vec())
        .collect();
    let class_scores: Vec<Vec<f64>> = preds
        .iter()
        .map(|p| p.probs[..SERVICE_CLASSES].to_vec())
        .collect();
    report_from_predictions(
        &true_flags,
        &predicted_flags,
        &class_scores,
        &SERVICE_CLASS_NAMES,
    )
}

/// Write `report.json` (the full report, pretty-printed).
pub fn write_report_json(path: &Path, report: &MetricsReport) -> Result<(), MetricsError> {
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    fs::write(path, json.as_bytes()).map_err(|e| MetricsError::IoFailure {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Write `report.csv`: one row per class plus a macro row. Undefined AUC
/// is written as `NA`.
pub fn write_report_csv(path: &Path, report: &MetricsReport) -> Result<(), MetricsError> {
    let mut csv = String::from("class,tp,fp,fn,tn,precision,recall,f1,auc\n");
    let fmt_auc = |auc: Option<f64>| auc.map(|v| format!("{v:.6}")).unwrap_or_else(|| "NA".into());
    for c in &report.per_class {
        csv.push_str(&format!(
            "{},{},{},{},{},{:.6},{:.6},{:.6},{}\n",
            c.class,
            c.counts.tp,
            c.counts.fp,
            c.counts.fn_,
            c.counts.tn,
            c.precision,
            c.recall,
            c.f1,
            fmt_auc(c.auc),
        ));
    }
    csv.push_str(&format!(
        "macro,,,,,,,{:.6},{}\n",
        report.macro_f1,
        fmt_auc(report.macro_auc)
    ));
    fs::write(path, csv.as_bytes()).map_err(|e| MetricsError::IoFailure {
        path: path.to_path_buf(),
        source: e,
    })
}
