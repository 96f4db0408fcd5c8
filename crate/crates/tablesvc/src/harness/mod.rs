//! Experiment harness: config files, dataset plumbing, ablation drivers,
//! and result-table emission.
//!
//! Each command is deterministic per (config, seeds): rerunning an
//! invocation reproduces its CSV/JSON artifacts byte for byte. Independent
//! (cell, seed) training runs execute in parallel, but rows are always
//! ordered by the declared grid order, never by completion order.

mod format;

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregation::AggregatorKind;
use crate::dataset::{
    load_dataset, save_dataset, Dataset, DatasetError, LabelMode, ManifestDims, SERVICE_CLASSES,
    SERVICE_CLASS_NAMES,
};
use crate::learner::{
    auto_class_weights, encode_dataset, gradient_check_report, head_input, init_for_signature,
    load_checkpoint, predict, save_checkpoint, train, train_encoded, CheckpointMeta, EncodedFrame,
    FeatureSource, LearnerError, ModelSignature, ScheduleSegment, SourceSpec,
    TemporalSpec, TrainConfig,
};
use crate::metrics::{
    evaluate, report_from_predictions, write_report_csv, write_report_json, MetricsError,
    MetricsReport,
};
use crate::selection::{
    select_diversity, select_random, select_uncertainty, SelectionDiagnostics, SelectionError,
    SelectionResult,
};
use crate::synthworld::{build_benchmark, SynthError, WorldConfig};

use format::{csv_pm_opt, fmt_pm, fmt_pm_opt, mean_std, mean_std_defined, render_table};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("bad config: {detail}")]
    Config { detail: String },
    #[error("io failure at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

fn config_err(detail: impl Into<String>) -> HarnessError {
    HarnessError::Config {
        detail: detail.into(),
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), HarnessError> {
    fs::write(path, contents).map_err(io_err(path))
}

/// Temporal table rows: a single frame, or a 5-frame window collapsed by
/// one of the aggregators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TemporalMode {
    Image,
    Max,
    Avg,
    Attention,
}

impl TemporalMode {
    pub fn name(&self) -> &'static str {
        match self {
            TemporalMode::Image => "image",
            TemporalMode::Max => "max",
            TemporalMode::Avg => "avg",
            TemporalMode::Attention => "attention",
        }
    }

    fn to_spec(self, window: usize) -> Option<TemporalSpec> {
        let mode = match self {
            TemporalMode::Image => return None,
            TemporalMode::Max => AggregatorKind::Max,
            TemporalMode::Avg => AggregatorKind::Avg,
            TemporalMode::Attention => AggregatorKind::Attention,
        };
        Some(TemporalSpec { window, mode })
    }
}

/// Selection table rows: the full training set or one of the subset
/// strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionRow {
    All,
    Random,
    Uncertainty,
    Diversity,
}

impl SelectionRow {
    pub fn name(&self) -> &'static str {
        match self {
            SelectionRow::All => "all",
            SelectionRow::Random => "random",
            SelectionRow::Uncertainty => "uncertainty",
            SelectionRow::Diversity => "diversity",
        }
    }
}

/// One experiment description, read from JSON. Every field has a default,
/// so a config file only has to name what it changes; a file containing a
/// bare world config (no `world` key) is accepted and wrapped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub world: WorldConfig,
    /// Episodes to generate when no `data_dir` is given.
    pub episodes: u32,
    /// Generator seed for the benchmark datasets.
    pub dataset_seed: u64,
    /// Pre-generated dataset directory (with `train/` and `test/`);
    /// overrides in-memory generation.
    pub data_dir: Option<PathBuf>,
    /// Input sources of the feature ablation grid.
    pub grid_sources: Vec<FeatureSource>,
    /// Aggregators of the feature ablation grid.
    pub grid_aggregators: Vec<AggregatorKind>,
    /// Candidates combined with the backbone+avg default in the
    /// combination ablation.
    pub combinations: Vec<SourceSpec>,
    pub temporal_modes: Vec<TemporalMode>,
    pub temporal_window: usize,
    pub selection_rows: Vec<SelectionRow>,
    /// Label budgets as fractions of the training pool.
    pub budgets: Vec<f64>,
    /// Fraction of the pool labeled up front to train the uncertainty
    /// scout model.
    pub warm_fraction: f64,
    /// Learning-rate schedule; `None` means the service default
    /// (1e-2 × 40, 1e-3 × 40, 1e-5 × 20).
    pub schedule: Option<Vec<ScheduleSegment>>,
    pub batch_size: usize,
    pub seeds: Vec<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            world: WorldConfig::cafeteria(),
            episodes: 9,
            dataset_seed: 7,
            data_dir: None,
            grid_sources: vec![
                FeatureSource::Backbone,
                FeatureSource::Encoder,
                FeatureSource::Regions,
                FeatureSource::TableInfo,
            ],
            grid_aggregators: vec![AggregatorKind::Avg, AggregatorKind::Attention],
            combinations: vec![
                SourceSpec {
                    source: FeatureSource::Encoder,
                    aggregator: AggregatorKind::Avg,
                },
                SourceSpec {
                    source: FeatureSource::Regions,
                    aggregator: AggregatorKind::Avg,
                },
                SourceSpec {
                    source: FeatureSource::TableInfo,
                    aggregator: AggregatorKind::Avg,
                },
                SourceSpec {
                    source: FeatureSource::TableInfo,
                    aggregator: AggregatorKind::Attention,
                },
            ],
            temporal_modes: vec![
                TemporalMode::Image,
                TemporalMode::Max,
                TemporalMode::Avg,
                TemporalMode::Attention,
            ],
            temporal_window: 5,
            selection_rows: vec![
                SelectionRow::All,
                SelectionRow::Random,
                SelectionRow::Uncertainty,
                SelectionRow::Diversity,
            ],
            budgets: vec![0.10, 0.25, 0.50],
            warm_fraction: 0.10,
            schedule: None,
            batch_size: 32,
            seeds: vec![1, 2, 3, 4, 5],
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<ExperimentConfig, HarnessError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        let cfg = Self::from_value(value)
            .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn from_value(value: serde_json::Value) -> Result<ExperimentConfig, serde_json::Error> {
        if value.get("world").is_some() {
            serde_json::from_value(value)
        } else {
            Ok(ExperimentConfig {
                world: serde_json::from_value(value)?,
                ..ExperimentConfig::default()
            })
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.world.validate()?;
        if self.seeds.is_empty() {
            return Err(config_err("seeds must be non-empty"));
        }
        if self.episodes < 2 && self.data_dir.is_none() {
            return Err(config_err("episodes must be ≥ 2 to split train/test"));
        }
        if self.grid_sources.is_empty() || self.grid_aggregators.is_empty() {
            return Err(config_err("feature grid must name ≥ 1 source and ≥ 1 aggregator"));
        }
        if self.temporal_modes.is_empty() {
            return Err(config_err("temporal_modes must be non-empty"));
        }
        if self.temporal_window < 1 {
            return Err(config_err("temporal_window must be ≥ 1"));
        }
        if self.selection_rows.is_empty() || self.budgets.is_empty() {
            return Err(config_err("selection needs ≥ 1 row kind and ≥ 1 budget"));
        }
        for &b in &self.budgets {
            if !(b > 0.0 && b <= 1.0) {
                return Err(config_err(format!("budget {b} outside (0, 1]")));
            }
        }
        if !(0.0..1.0).contains(&self.warm_fraction) {
            return Err(config_err(format!(
                "warm_fraction {} outside [0, 1)",
                self.warm_fraction
            )));
        }
        if self.batch_size == 0 {
            return Err(config_err("batch_size must be ≥ 1"));
        }
        if let Some(schedule) = &self.schedule {
            if schedule.is_empty() {
                return Err(config_err("schedule override must be non-empty"));
            }
        }
        Ok(())
    }

    /// Trainer settings for one run: the configured schedule (or the
    /// service default) stamped with this run's label mode and seed.
    fn train_config(&self, label_mode: LabelMode, seed: u64) -> TrainConfig {
        let mut tc = TrainConfig::service_default(label_mode, seed);
        if let Some(schedule) = &self.schedule {
            tc.schedule = schedule.clone();
        }
        tc.batch_size = self.batch_size;
        tc
    }

    /// The benchmark pair: loaded from `data_dir` when set, generated
    /// otherwise.
    fn datasets(&self) -> Result<(Dataset, Dataset), HarnessError> {
        match &self.data_dir {
            Some(dir) => Ok((
                load_dataset(&dir.join("train"))?,
                load_dataset(&dir.join("test"))?,
            )),
            None => Ok(build_benchmark(&self.world, self.episodes, self.dataset_seed)?),
        }
    }
}

/// Load a world config file: either a bare `WorldConfig` or an experiment
/// file with a `world` key.
pub fn load_world_config(path: &Path) -> Result<WorldConfig, HarnessError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    if let Some(world) = value.get_mut("world") {
        value = world.take();
    }
    let world: WorldConfig = serde_json::from_value(value)
        .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    world.validate()?;
    Ok(world)
}

/// The default single-source model: backbone features, average pooling.
pub fn baseline_sources() -> Vec<SourceSpec> {
    vec![SourceSpec {
        source: FeatureSource::Backbone,
        aggregator: AggregatorKind::Avg,
    }]
}

/// The winning combination: backbone+avg concatenated with
/// table-info+attention.
pub fn winning_sources() -> Vec<SourceSpec> {
    vec![
        SourceSpec {
            source: FeatureSource::Backbone,
            aggregator: AggregatorKind::Avg,
        },
        SourceSpec {
            source: FeatureSource::TableInfo,
            aggregator: AggregatorKind::Attention,
        },
    ]
}

fn spec_label(spec: &SourceSpec) -> String {
    format!("{}:{}", spec.source.name(), spec.aggregator.name())
}

fn sources_label(sources: &[SourceSpec]) -> String {
    sources.iter().map(spec_label).collect::<Vec<_>>().join(" + ")
}

/// What a command hands back to the CLI layer: human-readable text plus
/// the artifact paths it wrote.
#[derive(Debug, Clone)]
pub struct CommandOutput {
    pub text: String,
    pub files: Vec<PathBuf>,
}

impl CommandOutput {
    fn new(mut text: String, files: Vec<PathBuf>) -> CommandOutput {
        if !text.ends_with('\n') {
            text.push('\n');
        }
        for f in &files {
            text.push_str(&format!("wrote {}\n", f.display()));
        }
        CommandOutput { text, files }
    }
}

// ---------------------------------------------------------------------------
// synth / train / eval
// ---------------------------------------------------------------------------

/// Generate the benchmark pair, save both splits under `out`, and report
/// per-class label frequencies.
pub fn cmd_synth(
    world: &WorldConfig,
    episodes: u32,
    seed: u64,
    out: &Path,
) -> Result<CommandOutput, HarnessError> {
    let (train_set, test_set) = build_benchmark(world, episodes, seed)?;
    fs::create_dir_all(out).map_err(io_err(out))?;
    let train_dir = out.join("train");
    let test_dir = out.join("test");
    save_dataset(&train_set, &train_dir)?;
    save_dataset(&test_set, &test_dir)?;

    let world_path = out.join("worldconfig.json");
    let world_json = serde_json::to_string_pretty(world).expect("world config serializes");
    write_file(&world_path, world_json.as_bytes())?;

    let mut csv = String::from("split,frames,refill,trash,dessert,lost\n");
    let mut rows = Vec::new();
    for (name, ds) in [("train", &train_set), ("test", &test_set)] {
        let freq = ds.label_frequencies();
        csv.push_str(&format!(
            "{name},{},{:.6},{:.6},{:.6},{:.6}\n",
            ds.len(),
            freq[0],
            freq[1],
            freq[2],
            freq[3]
        ));
        let mut row = vec![name.to_string(), ds.len().to_string()];
        row.extend(freq.iter().map(|f| format!("{f:.3}")));
        rows.push(row);
    }
    let freq_path = out.join("frequencies.csv");
    write_file(&freq_path, csv.as_bytes())?;

    let text = render_table(
        &["split", "frames", "refill", "trash", "dessert", "lost"],
        &rows,
    );
    Ok(CommandOutput::new(
        text,
        vec![train_dir, test_dir, world_path, freq_path],
    ))
}

/// A dataset path may be a dataset directory itself or a synth output
/// directory holding the named split.
fn resolve_dataset_dir(path: &Path, split: &str) -> PathBuf {
    if path.join("manifest.json").is_file() {
        path.to_path_buf()
    } else {
        path.join(split)
    }
}

/// Train the winning combined model on a dataset and save a checkpoint.
pub fn cmd_train(
    cfg: &ExperimentConfig,
    data: &Path,
    out: &Path,
) -> Result<CommandOutput, HarnessError> {
    let train_set = load_dataset(&resolve_dataset_dir(data, "train"))?;
    let label_mode = train_set.manifest.label_mode;
    let signature = ModelSignature::service(winning_sources(), None, None, label_mode);
    let seed = cfg.seeds[0];
    let tc = cfg.train_config(label_mode, seed);
    let (params, history) = train(&train_set, &signature, &tc)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    save_checkpoint(
        out,
        &params,
        &CheckpointMeta {
            signature: signature.clone(),
            dims: train_set.manifest.dims,
            seed,
        },
    )?;
    let first = history.first().expect("≥ 1 epoch");
    let last = history.last().expect("≥ 1 epoch");
    let text = format!(
        "trained {} on {} frames, seed {seed}, {} epochs\n\
         loss {:.4} → {:.4}, final train accuracy {:.3}\n",
        sources_label(&signature.sources),
        train_set.len(),
        history.len(),
        first.mean_loss,
        last.mean_loss,
        last.train_accuracy,
    );
    Ok(CommandOutput::new(text, vec![out.to_path_buf()]))
}

/// Evaluate a checkpoint on a dataset; write `report.json` and
/// `report.csv` under `out`.
pub fn cmd_eval(data: &Path, model: &Path, out: &Path) -> Result<CommandOutput, HarnessError> {
    let dataset = load_dataset(&resolve_dataset_dir(data, "test"))?;
    let (params, meta) = load_checkpoint(model)?;
    if meta.dims != dataset.manifest.dims {
        return Err(config_err(format!(
            "checkpoint dims {:?} do not match dataset dims {:?}",
            meta.dims, dataset.manifest.dims
        )));
    }
    if meta.signature.label_mode != dataset.manifest.label_mode {
        return Err(config_err(
            "checkpoint label mode does not match dataset label mode",
        ));
    }
    let report = evaluate(&params, &meta.signature, &dataset, None)?;
    fs::create_dir_all(out).map_err(io_err(out))?;
    let json_path = out.join("report.json");
    let csv_path = out.join("report.csv");
    write_report_json(&json_path, &report)?;
    write_report_csv(&csv_path, &report)?;
    Ok(CommandOutput::new(
        render_report(&report),
        vec![json_path, csv_path],
    ))
}

fn render_report(report: &MetricsReport) -> String {
    let fmt_auc = |auc: Option<f64>| auc.map(|v| format!("{v:.3}")).unwrap_or_else(|| "NA".into());
    let mut rows: Vec<Vec<String>> = report
        .per_class
        .iter()
        .map(|c| {
            vec![
                c.class.clone(),
                c.support.to_string(),
                format!("{:.3}", c.precision),
                format!("{:.3}", c.recall),
                format!("{:.3}", c.f1),
                fmt_auc(c.auc),
            ]
        })
        .collect();
    rows.push(vec![
        "macro".into(),
        report.frames.to_string(),
        String::new(),
        String::new(),
        format!("{:.3}", report.macro_f1),
        fmt_auc(report.macro_auc),
    ]);
    render_table(
        &["class", "support", "precision", "recall", "f1", "roc"],
        &rows,
    )
}

// ---------------------------------------------------------------------------
// grid ablations (features / combo / temporal)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
struct RunStats {
    f1: f64,
    auc: Option<f64>,
}

/// Train under `signature` with this seed and score the test split.
fn run_cell(
    train_set: &Dataset,
    test_set: &Dataset,
    signature: &ModelSignature,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<RunStats, HarnessError> {
    let tc = cfg.train_config(signature.label_mode, seed);
    let (params, _) = train(train_set, signature, &tc)?;
    let report = evaluate(&params, signature, test_set, None)?;
    Ok(RunStats {
        f1: report.macro_f1,
        auc: report.macro_auc,
    })
}

#[derive(Debug, Clone)]
struct RowSummary {
    labels: Vec<String>,
    seeds: usize,
    f1: (f64, f64),
    auc: Option<(f64, f64)>,
}

fn summarize(labels: Vec<String>, cells: &[RunStats]) -> RowSummary {
    let f1s: Vec<f64> = cells.iter().map(|c| c.f1).collect();
    let aucs: Vec<Option<f64>> = cells.iter().map(|c| c.auc).collect();
    RowSummary {
        labels,
        seeds: cells.len(),
        f1: mean_std(&f1s),
        auc: mean_std_defined(&aucs),
    }
}

/// Run a list of (labels, signature) rows over every seed, in parallel,
/// and aggregate per row in declared order.
fn run_grid(
    rows: &[(Vec<String>, ModelSignature)],
    train_set: &Dataset,
    test_set: &Dataset,
    cfg: &ExperimentConfig,
) -> Result<Vec<RowSummary>, HarnessError> {
    let jobs: Vec<(usize, u64)> = rows
        .iter()
        .enumerate()
        .flat_map(|(r, _)| cfg.seeds.iter().map(move |&s| (r, s)))
        .collect();
    let results: Vec<Result<RunStats, HarnessError>> = jobs
        .par_iter()
        .map(|&(r, seed)| run_cell(train_set, test_set, &rows[r].1, cfg, seed))
        .collect();
    let mut cells = Vec::with_capacity(results.len());
    for r in results {
        cells.push(r?);
    }
    Ok(cells
        .chunks(cfg.seeds.len())
        .zip(rows.iter())
        .map(|(chunk, (labels, _))| summarize(labels.clone(), chunk))
        .collect())
}

/// CSV + aligned text table from summaries. `label_headers` name the
/// leading label columns.
fn emit_rows(
    label_headers: &[&str],
    summaries: &[RowSummary],
    out_csv: &Path,
) -> Result<String, HarnessError> {
    let mut csv = String::new();
    csv.push_str(&label_headers.join(","));
    csv.push_str(",seeds,f1_mean,f1_std,roc_mean,roc_std\n");
    for s in summaries {
        csv.push_str(&format!(
            "{},{},{:.6},{:.6},{}\n",
            s.labels.join(","),
            s.seeds,
            s.f1.0,
            s.f1.1,
            csv_pm_opt(s.auc)
        ));
    }
    write_file(out_csv, csv.as_bytes())?;

    let mut headers: Vec<&str> = label_headers.to_vec();
    headers.extend_from_slice(&["seeds", "f1", "roc"]);
    let rows: Vec<Vec<String>> = summaries
        .iter()
        .map(|s| {
            let mut row = s.labels.clone();
            row.push(s.seeds.to_string());
            row.push(fmt_pm(s.f1));
            row.push(fmt_pm_opt(s.auc));
            row
        })
        .collect();
    Ok(render_table(&headers, &rows))
}

/// Table 3/4 analogue: one head per (input source, aggregator) cell.
pub fn cmd_ablate_features(
    cfg: &ExperimentConfig,
    out: &Path,
) -> Result<CommandOutput, HarnessError> {
    cfg.validate()?;
    let (train_set, test_set) = cfg.datasets()?;
    let label_mode = train_set.manifest.label_mode;
    let rows: Vec<(Vec<String>, ModelSignature)> = cfg
        .grid_sources
        .iter()
        .flat_map(|&source| {
            cfg.grid_aggregators.iter().map(move |&aggregator| {
                let spec = SourceSpec { source, aggregator };
                (
                    vec![source.name().to_string(), aggregator.name().to_string()],
                    ModelSignature::service(vec![spec], None, None, label_mode),
                )
            })
        })
        .collect();
    let summaries = run_grid(&rows, &train_set, &test_set, cfg)?;
    fs::create_dir_all(out).map_err(io_err(out))?;
    let csv_path = out.join("features.csv");
    let text = emit_rows(&["input", "aggregator"], &summaries, &csv_path)?;
    Ok(CommandOutput::new(text, vec![csv_path]))
}

/// Table 5 analogue: the backbone+avg default concatenated with each
/// candidate. The winning pair (⊕ table-info+attention) is always present;
/// an empty candidate list degenerates to the baseline alone.
pub fn cmd_ablate_combo(
    cfg: &ExperimentConfig,
    out: &Path,
) -> Result<CommandOutput, HarnessError> {
    cfg.validate()?;
    let (train_set, test_set) = cfg.datasets()?;
    let label_mode = train_set.manifest.label_mode;
    let baseline = baseline_sources();
    let mut candidates = cfg.combinations.clone();
    let winning = winning_sources()[1];
    if !candidates.is_empty() && !candidates.contains(&winning) {
        candidates.push(winning);
    }
    let rows: Vec<(Vec<String>, ModelSignature)> = if candidates.is_empty() {
        vec![(
            vec![sources_label(&baseline)],
            ModelSignature::service(baseline.clone(), None, None, label_mode),
        )]
    } else {
        candidates
            .iter()
            .map(|&candidate| {
                let mut sources = baseline.clone();
                sources.push(candidate);
                (
                    vec![sources_label(&sources)],
                    ModelSignature::service(sources, None, None, label_mode),
                )
            })
            .collect()
    };
    let summaries = run_grid(&rows, &train_set, &test_set, cfg)?;
    fs::create_dir_all(out).map_err(io_err(out))?;
    let csv_path = out.join("combo.csv");
    let text = emit_rows(&["combination"], &summaries, &csv_path)?;
    Ok(CommandOutput::new(text, vec![csv_path]))
}

/// Table 6 analogue: the winning combined model on a single frame vs a
/// W-frame window under max/avg/attention temporal aggregation.
pub fn cmd_ablate_temporal(
    cfg: &ExperimentConfig,
    out: &Path,
) -> Result<CommandOutput, HarnessError> {
    cfg.validate()?;
    let (train_set, test_set) = cfg.datasets()?;
    let label_mode = train_set.manifest.label_mode;
    let rows: Vec<(Vec<String>, ModelSignature)> = cfg
        .temporal_modes
        .iter()
        .map(|&mode| {
            let spec = mode.to_spec(cfg.temporal_window);
            let window = spec.map(|t| t.window).unwrap_or(1);
            (
                vec![mode.name().to_string(), window.to_string()],
                ModelSignature::service(winning_sources(), spec, None, label_mode),
            )
        })
        .collect();
    let summaries = run_grid(&rows, &train_set, &test_set, cfg)?;
    fs::create_dir_all(out).map_err(io_err(out))?;
    let csv_path = out.join("temporal.csv");
    let text = emit_rows(&["temporal", "window"], &summaries, &csv_path)?;
    Ok(CommandOutput::new(text, vec![csv_path]))
}

// ---------------------------------------------------------------------------
// selection ablation
// ---------------------------------------------------------------------------

/// Mixes a run seed with stream tags so the warm set, the random
/// selection, and the scout init never share a stream.
fn sub_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed
        ^ a.wrapping_mul(0x9e37_79b9_7f4a_7c15)
        ^ b.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Train on an already-encoded subset (auto class weights from the subset
/// in multi-label mode) and score the encoded test split.
fn train_eval_encoded(
    subset: &[EncodedFrame],
    signature: &ModelSignature,
    dims: &ManifestDims,
    cfg: &ExperimentConfig,
    seed: u64,
    encoded_test: &[EncodedFrame],
    test_flags: &[Vec<bool>],
) -> Result<RunStats, HarnessError> {
    let mut tc = cfg.train_config(signature.label_mode, seed);
    if tc.class_weights.is_none() && signature.label_mode == LabelMode::MultiLabel {
        tc.class_weights = Some(auto_class_weights(subset, signature.out_classes));
    }
    let params = init_for_signature(signature, dims, seed, tc.frozen_projection)?;
    let (trained, _) = train_encoded(subset, signature, params, &tc)?;
    let preds = predict(&trained, signature, encoded_test, None)?;
    let pred_flags: Vec<Vec<bool>> = preds
        .iter()
        .map(|p| p.hard[..SERVICE_CLASSES].to_vec())
        .collect();
    let scores: Vec<Vec<f64>> = preds
        .iter()
        .map(|p| p.probs[..SERVICE_CLASSES].to_vec())
        .collect();
    let report = report_from_predictions(test_flags, &pred_flags, &scores, &SERVICE_CLASS_NAMES)?;
    Ok(RunStats {
        f1: report.macro_f1,
        auc: report.macro_auc,
    })
}

/// Pick `extra` frames by scout-model entropy: label a random warm set,
/// train a quick head on it, and take the highest-entropy remainder.
fn uncertainty_selection(
    pool: &[EncodedFrame],
    signature: &ModelSignature,
    dims: &ManifestDims,
    cfg: &ExperimentConfig,
    warm_n: usize,
    n_budget: usize,
    seed: u64,
    budget_idx: u64,
) -> Result<SelectionResult, HarnessError> {
    let n = pool.len();
    let warm = select_random(n, warm_n, sub_seed(seed, budget_idx, 1))?;
    if warm_n == n_budget {
        return Ok(SelectionResult {
            diagnostics: SelectionDiagnostics::None,
            ..warm
        });
    }
    let warm_set: BTreeSet<usize> = warm.chosen.iter().copied().collect();
    let warm_frames: Vec<EncodedFrame> = warm.chosen.iter().map(|&i| pool[i].clone()).collect();

    let mut scout_tc = TrainConfig::base_head(signature.label_mode, sub_seed(seed, budget_idx, 3));
    scout_tc.batch_size = cfg.batch_size;
    if signature.label_mode == LabelMode::MultiLabel {
        scout_tc.class_weights = Some(auto_class_weights(&warm_frames, signature.out_classes));
    }
    let scout_init =
        init_for_signature(signature, dims, scout_tc.seed, scout_tc.frozen_projection)?;
    let (scout, _) = train_encoded(&warm_frames, signature, scout_init, &scout_tc)?;

    let remainder: Vec<usize> = (0..n).filter(|i| !warm_set.contains(i)).collect();
    let remainder_frames: Vec<EncodedFrame> = remainder.iter().map(|&i| pool[i].clone()).collect();
    let preds = predict(&scout, signature, &remainder_frames, None)?;
    let probs: Vec<Vec<f64>> = preds.into_iter().map(|p| p.probs).collect();
    let extra = select_uncertainty(&probs, n_budget - warm_n, signature.label_mode)?;

    let mut chosen = warm.chosen;
    chosen.extend(extra.chosen.iter().map(|&i| remainder[i]));
    Ok(SelectionResult {
        method: extra.method,
        budget: n_budget,
        chosen,
        diagnostics: extra.diagnostics,
    })
}

#[derive(Serialize)]
struct SelectionTraceRow {
    method: String,
    budget_fraction: f64,
    seed: u64,
    selected: usize,
    chosen: Vec<usize>,
    diagnostics: SelectionDiagnostics,
}

/// Table 7 analogue: retrain the combined head on subsets chosen by each
/// strategy at each budget; the `all` row uses the full pool (budget
/// 100%). Writes `selection.csv` plus a `selection.json` trace of the
/// chosen indices.
pub fn cmd_ablate_selection(
    cfg: &ExperimentConfig,
    out: &Path,
    budget_override: Option<f64>,
) -> Result<CommandOutput, HarnessError> {
    cfg.validate()?;
    let budgets: Vec<f64> = match budget_override {
        Some(b) => {
            if !(b > 0.0 && b <= 1.0) {
                return Err(config_err(format!("budget {b} outside (0, 1]")));
            }
            vec![b]
        }
        None => cfg.budgets.clone(),
    };
    let (train_set, test_set) = cfg.datasets()?;
    let label_mode = train_set.manifest.label_mode;
    let dims = train_set.manifest.dims;
    let signature = ModelSignature::service(winning_sources(), None, None, label_mode);

    let pool = encode_dataset(&train_set, &signature)?;
    let encoded_test = encode_dataset(&test_set, &signature)?;
    let test_flags: Vec<Vec<bool>> = test_set
        .frames
        .iter()
        .map(|(_, label)| label.flags().to_vec())
        .collect();
    let n = pool.len();

    // Parameter-free pool features for the k-center strategy: attention
    // initialized at zero is exactly average pooling, so these vectors do
    // not depend on any seed.
    let probe = init_for_signature(&signature, &dims, 0, true)?;
    let pool_features: Vec<Vec<f64>> = pool
        .iter()
        .map(|f| head_input(&signature, f, &probe))
        .collect::<Result<_, _>>()?;

    let budget_sizes: Vec<usize> = budgets
        .iter()
        .map(|&b| (((b * n as f64).round() as usize).max(1)).min(n))
        .collect();
    let warm_sizes: Vec<usize> = budget_sizes
        .iter()
        .map(|&nb| ((cfg.warm_fraction * n as f64).round() as usize).clamp(1, nb))
        .collect();

    // Diversity is deterministic given the pool: compute once per budget.
    let diversity_per_budget: Vec<SelectionResult> = budget_sizes
        .iter()
        .map(|&nb| select_diversity(&pool_features, nb))
        .collect::<Result<_, _>>()?;

    let needs_all = cfg.selection_rows.contains(&SelectionRow::All);

    // One seed's cells: per budget, per declared row, the run stats plus
    // the selection trace for subset strategies.
    type SeedCells = Vec<(RunStats, Option<SelectionResult>)>;
    let per_seed: Vec<Result<SeedCells, HarnessError>> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let all_stats = if needs_all {
                Some(train_eval_encoded(
                    &pool,
                    &signature,
                    &dims,
                    cfg,
                    seed,
                    &encoded_test,
                    &test_flags,
                )?)
            } else {
                None
            };
            let mut cells: SeedCells = Vec::new();
            for (bi, (&n_budget, &warm_n)) in
                budget_sizes.iter().zip(warm_sizes.iter()).enumerate()
            {
                for row in &cfg.selection_rows {
                    let (stats, trace) = match row {
                        SelectionRow::All => (all_stats.expect("computed when needed"), None),
                        SelectionRow::Random => {
                            let sel = select_random(n, n_budget, sub_seed(seed, bi as u64, 2))?;
                            let subset: Vec<EncodedFrame> =
                                sel.chosen.iter().map(|&i| pool[i].clone()).collect();
                            (
                                train_eval_encoded(
                                    &subset,
                                    &signature,
                                    &dims,
                                    cfg,
                                    seed,
                                    &encoded_test,
                                    &test_flags,
                                )?,
                                Some(sel),
                            )
                        }
                        SelectionRow::Diversity => {
                            let sel = diversity_per_budget[bi].clone();
                            let subset: Vec<EncodedFrame> =
                                sel.chosen.iter().map(|&i| pool[i].clone()).collect();
                            (
                                train_eval_encoded(
                                    &subset,
                                    &signature,
                                    &dims,
                                    cfg,
                                    seed,
                                    &encoded_test,
                                    &test_flags,
                                )?,
                                Some(sel),
                            )
                        }
                        SelectionRow::Uncertainty => {
                            let sel = uncertainty_selection(
                                &pool, &signature, &dims, cfg, warm_n, n_budget, seed, bi as u64,
                            )?;
                            let subset: Vec<EncodedFrame> =
                                sel.chosen.iter().map(|&i| pool[i].clone()).collect();
                            (
                                train_eval_encoded(
                                    &subset,
                                    &signature,
                                    &dims,
                                    cfg,
                                    seed,
                                    &encoded_test,
                                    &test_flags,
                                )?,
                                Some(sel),
                            )
                        }
                    };
                    cells.push((stats, trace));
                }
            }
            Ok(cells)
        })
        .collect();
    let mut seed_cells: Vec<SeedCells> = Vec::with_capacity(per_seed.len());
    for r in per_seed {
        seed_cells.push(r?);
    }

    // Aggregate row-major: budgets × rows, over seeds.
    let mut summaries = Vec::new();
    let mut trace_rows: Vec<SelectionTraceRow> = Vec::new();
    for (bi, &budget) in budgets.iter().enumerate() {
        for (ri, row) in cfg.selection_rows.iter().enumerate() {
            let cell_idx = bi * cfg.selection_rows.len() + ri;
            let stats: Vec<RunStats> = seed_cells.iter().map(|s| s[cell_idx].0).collect();
            let (fraction, selected) = match row {
                SelectionRow::All => (1.0, n),
                _ => (budget, budget_sizes[bi]),
            };
            let labels = vec![
                row.name().to_string(),
                format!("{fraction:.6}"),
                selected.to_string(),
            ];
            summaries.push(summarize(labels, &stats));
            for (&seed, cells) in cfg.seeds.iter().zip(seed_cells.iter()) {
                if let Some(sel) = &cells[cell_idx].1 {
                    trace_rows.push(SelectionTraceRow {
                        method: row.name().to_string(),
                        budget_fraction: budget,
                        seed,
                        selected: sel.chosen.len(),
                        chosen: sel.chosen.clone(),
                        diagnostics: sel.diagnostics.clone(),
                    });
                }
            }
        }
    }

    fs::create_dir_all(out).map_err(io_err(out))?;
    let csv_path = out.join("selection.csv");
    let text = emit_rows(&["method", "budget", "selected"], &summaries, &csv_path)?;
    let json_path = out.join("selection.json");
    let trace = serde_json::json!({ "rows": trace_rows });
    write_file(
        &json_path,
        serde_json::to_string_pretty(&trace)
            .expect("trace serializes")
            .as_bytes(),
    )?;
    Ok(CommandOutput::new(text, vec![csv_path, json_path]))
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

/// Outcome of the 20-configuration gradient check.
#[derive(Debug, Clone)]
pub struct GradcheckOutcome {
    pub passed: bool,
    pub max_rel_err: f64,
    pub worst_config: usize,
    pub worst_path: String,
    pub text: String,
}

pub const GRADCHECK_CONFIGS: usize = 20;
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

/// The model template cycle used by [`cmd_gradcheck`]; exposed so tests
/// can reproduce individual configurations.
pub fn gradcheck_signature(template: usize, label_mode: LabelMode) -> ModelSignature {
    let spec = |source, aggregator| SourceSpec { source, aggregator };
    match template {
        0 => ModelSignature::service(
            vec![spec(FeatureSource::Backbone, AggregatorKind::Avg)],
            None,
            None,
            label_mode,
        ),
        1 => ModelSignature::service(
            vec![spec(FeatureSource::TableInfo, AggregatorKind::Attention)],
            None,
            None,
            label_mode,
        ),
        2 => ModelSignature::service(
            vec![
                spec(FeatureSource::Backbone, AggregatorKind::Max),
                spec(FeatureSource::TableInfo, AggregatorKind::Attention),
            ],
            Some(TemporalSpec {
                window: 3,
                mode: AggregatorKind::Avg,
            }),
            Some(8),
            label_mode,
        ),
        3 => ModelSignature::service(
            vec![
                spec(FeatureSource::Encoder, AggregatorKind::Attention),
                spec(FeatureSource::Regions, AggregatorKind::Max),
            ],
            Some(TemporalSpec {
                window: 2,
                mode: AggregatorKind::Attention,
            }),
            None,
            label_mode,
        ),
        _ => ModelSignature::service(
            winning_sources(),
            Some(TemporalSpec {
                window: 3,
                mode: AggregatorKind::Attention,
            }),
            Some(6),
            label_mode,
        ),
    }
}

/// Check analytic gradients against central differences over
/// [`GRADCHECK_CONFIGS`] seeded model/batch configurations. `corrupt`
/// injects a constant offset into the analytic gradient, which must make
/// the check fail (negative-control hook for the exit-code contract).
pub fn cmd_gradcheck(seed: u64, corrupt: bool) -> Result<GradcheckOutcome, HarnessError> {
    let offset = if corrupt { 2e-2 } else { 0.0 };
    let mut text = String::new();
    let mut max_rel_err = 0.0f64;
    let mut worst_config = 0usize;
    let mut worst_path = String::new();
    for i in 0..GRADCHECK_CONFIGS {
        let label_mode = if i % 2 == 0 {
            LabelMode::MultiLabel
        } else {
            LabelMode::Exclusive
        };
        let signature = gradcheck_signature(i % 5, label_mode);
        let mut world = crate::synthworld::WorldConfig::balanced();
        world.duration_s = 12;
        world.label_mode = label_mode;
        let (train_set, _) = build_benchmark(&world, 2, seed.wrapping_add(100 + i as u64))?;
        let encoded = encode_dataset(&train_set, &signature)?;
        let batch = &encoded[3..7.min(encoded.len())];
        let mut params = init_for_signature(
            &signature,
            &train_set.manifest.dims,
            seed.wrapping_add(1000 + i as u64),
            false,
        )?;
        // nudge attention off zero so the softmax paths are non-trivial
        for (k, att) in params.attention.values_mut().enumerate() {
            for (j, a) in att.a.iter_mut().enumerate() {
                *a = 0.04 * (k as f64 + 1.0) * ((j % 5) as f64 - 2.0);
            }
            att.b = 0.05 * (k as f64 + 1.0);
        }
        let weights = [1.0, 4.0, 2.5, 10.0];
        let class_weights = match label_mode {
            LabelMode::MultiLabel => Some(&weights[..]),
            LabelMode::Exclusive => None,
        };
        // ε = 1e-4: large enough that central-difference cancellation noise
        // (which scales as 1/ε) stays well under the tolerance on
        // small-gradient coordinates, small enough that truncation (ε²)
        // is negligible.
        let report =
            gradient_check_report(&params, &signature, batch, class_weights, 1e-4, offset)?;
        text.push_str(&format!(
            "config {i:2}  {:<9}  {:<55}  max rel err {:.3e}  ({})\n",
            match label_mode {
                LabelMode::MultiLabel => "multi",
                LabelMode::Exclusive => "exclusive",
            },
            signature_label(&signature),
            report.max_rel_err,
            report.worst_path,
        ));
        if report.max_rel_err > max_rel_err {
            max_rel_err = report.max_rel_err;
            worst_config = i;
            worst_path = report.worst_path;
        }
    }
    let passed = max_rel_err < GRADCHECK_TOLERANCE;
    text.push_str(&format!(
        "gradcheck {}: max relative error {max_rel_err:.3e} over {GRADCHECK_CONFIGS} \
         configurations (tolerance {GRADCHECK_TOLERANCE:.0e}), worst at config \
         {worst_config}, parameter {worst_path}\n",
        if passed { "PASS" } else { "FAIL" },
    ));
    Ok(GradcheckOutcome {
        passed,
        max_rel_err,
        worst_config,
        worst_path,
        text,
    })
}

fn signature_label(signature: &ModelSignature) -> String {
    let mut label = sources_label(&signature.sources);
    if let Some(t) = &signature.temporal {
        label.push_str(&format!(" @{}{}", t.mode.name(), t.window));
    }
    if let Some(p) = signature.projection_dim {
        label.push_str(&format!(" proj{p}"));
    }
    label
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn tiny_config() -> ExperimentConfig {
        let mut world = WorldConfig::balanced();
        world.duration_s = 30;
        ExperimentConfig {
            world,
            episodes: 3,
            dataset_seed: 5,
            schedule: Some(vec![ScheduleSegment {
                learning_rate: 1e-2,
                epochs: 3,
            }]),
            seeds: vec![1, 2],
            budgets: vec![0.5],
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn config_file_round_trips_and_wraps_bare_world() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("experiment.json");
        let cfg = tiny_config();
        std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
        let loaded = ExperimentConfig::load(&path).unwrap();
        assert_eq!(loaded, cfg);

        // a bare world config is wrapped with defaults
        let world_path = dir.path().join("world.json");
        std::fs::write(
            &world_path,
            serde_json::to_string_pretty(&WorldConfig::balanced()).unwrap(),
        )
        .unwrap();
        let wrapped = ExperimentConfig::load(&world_path).unwrap();
        assert_eq!(wrapped.world, WorldConfig::balanced());
        assert_eq!(wrapped.seeds, ExperimentConfig::default().seeds);

        // invalid json is a config error
        std::fs::write(&world_path, b"{not json").unwrap();
        assert!(matches!(
            ExperimentConfig::load(&world_path),
            Err(HarnessError::Config { .. })
        ));
    }

    #[test]
    fn config_validation_rejects_bad_fields() {
        let mut cfg = tiny_config();
        cfg.seeds.clear();
        assert!(cfg.validate().is_err());
        let mut cfg = tiny_config();
        cfg.budgets = vec![1.5];
        assert!(cfg.validate().is_err());
        let mut cfg = tiny_config();
        cfg.warm_fraction = 1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn synth_writes_identical_bytes_on_rerun() {
        let dir = tempdir().unwrap();
        let mut world = WorldConfig::balanced();
        world.duration_s = 20;
        let out_a = dir.path().join("a");
        let out_b = dir.path().join("b");
        cmd_synth(&world, 3, 11, &out_a).unwrap();
        cmd_synth(&world, 3, 11, &out_b).unwrap();
        for rel in [
            "train/manifest.json",
            "train/features.bin",
            "train/labels.csv",
            "test/manifest.json",
            "test/features.bin",
            "test/labels.csv",
            "frequencies.csv",
            "worldconfig.json",
        ] {
            let a = std::fs::read(out_a.join(rel)).unwrap();
            let b = std::fs::read(out_b.join(rel)).unwrap();
            assert_eq!(a, b, "{rel} differs between reruns");
        }
    }

    #[test]
    fn train_then_eval_produces_reports() {
        let dir = tempdir().unwrap();
        let cfg = tiny_config();
        let data = dir.path().join("data");
        cmd_synth(&cfg.world, 3, 5, &data).unwrap();
        let ckpt = dir.path().join("model.ckpt");
        let out = cmd_train(&cfg, &data, &ckpt).unwrap();
        assert!(ckpt.is_file());
        assert!(out.text.contains("trained"));
        let eval_dir = dir.path().join("eval");
        let out = cmd_eval(&data, &ckpt, &eval_dir).unwrap();
        assert!(eval_dir.join("report.json").is_file());
        assert!(eval_dir.join("report.csv").is_file());
        assert!(out.text.contains("macro"));
    }

    #[test]
    fn ablate_features_emits_grid_rows_deterministically() {
        let dir = tempdir().unwrap();
        let mut cfg = tiny_config();
        cfg.grid_sources = vec![FeatureSource::Backbone, FeatureSource::TableInfo];
        cfg.grid_aggregators = vec![AggregatorKind::Avg];
        let out_a = dir.path().join("a");
        let out_b = dir.path().join("b");
        cmd_ablate_features(&cfg, &out_a).unwrap();
        cmd_ablate_features(&cfg, &out_b).unwrap();
        let a = std::fs::read_to_string(out_a.join("features.csv")).unwrap();
        let b = std::fs::read_to_string(out_b.join("features.csv")).unwrap();
        assert_eq!(a, b);
        let lines: Vec<&str> = a.lines().collect();
        assert_eq!(
            lines[0],
            "input,aggregator,seeds,f1_mean,f1_std,roc_mean,roc_std"
        );
        assert_eq!(lines.len(), 3); // header + 2 sources × 1 aggregator
        assert!(lines[1].starts_with("backbone,avg,2,"));
        assert!(lines[2].starts_with("table-info,avg,2,"));
    }

    #[test]
    fn ablate_combo_includes_winning_pair_and_handles_empty() {
        let dir = tempdir().unwrap();
        let mut cfg = tiny_config();
        cfg.combinations = vec![SourceSpec {
            source: FeatureSource::Encoder,
            aggregator: AggregatorKind::Avg,
        }];
        cmd_ablate_combo(&cfg, dir.path()).unwrap();
        let csv = std::fs::read_to_string(dir.path().join("combo.csv")).unwrap();
        assert!(csv.contains("backbone:avg + encoder:avg"));
        assert!(csv.contains("backbone:avg + table-info:attention"));

        cfg.combinations.clear();
        let empty_dir = dir.path().join("empty");
        cmd_ablate_combo(&cfg, &empty_dir).unwrap();
        let csv = std::fs::read_to_string(empty_dir.join("combo.csv")).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 2); // header + baseline only
        assert!(lines[1].starts_with("backbone:avg,"));
    }

    #[test]
    fn ablate_temporal_emits_declared_rows() {
        let dir = tempdir().unwrap();
        let mut cfg = tiny_config();
        cfg.temporal_modes = vec![TemporalMode::Image, TemporalMode::Avg];
        cfg.temporal_window = 3;
        cmd_ablate_temporal(&cfg, dir.path()).unwrap();
        let csv = std::fs::read_to_string(dir.path().join("temporal.csv")).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("image,1,"));
        assert!(lines[2].starts_with("avg,3,"));
    }

    #[test]
    fn ablate_selection_rows_and_budget_override() {
        let dir = tempdir().unwrap();
        let cfg = tiny_config();
        cmd_ablate_selection(&cfg, dir.path(), None).unwrap();
        let csv = std::fs::read_to_string(dir.path().join("selection.csv")).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        // 1 budget × 4 methods + header
        assert_eq!(lines.len(), 5);
        assert_eq!(
            lines[0],
            "method,budget,selected,seeds,f1_mean,f1_std,roc_mean,roc_std"
        );
        assert!(lines[1].starts_with("all,1.000000,"));
        assert!(lines[2].starts_with("random,0.500000,"));
        assert!(lines[3].starts_with("uncertainty,0.500000,"));
        assert!(lines[4].starts_with("diversity,0.500000,"));
        assert!(dir.path().join("selection.json").is_file());

        let o_dir = dir.path().join("override");
        cmd_ablate_selection(&cfg, &o_dir, Some(0.25)).unwrap();
        let csv = std::fs::read_to_string(o_dir.join("selection.csv")).unwrap();
        assert!(csv.lines().nth(2).unwrap().starts_with("random,0.250000,"));
        assert!(matches!(
            cmd_ablate_selection(&cfg, &o_dir, Some(0.0)),
            Err(HarnessError::Config { .. })
        ));
    }

    #[test]
    fn gradcheck_passes_clean_and_fails_corrupted() {
        let clean = cmd_gradcheck(0, false).unwrap();
        assert!(
            clean.passed,
            "max {} at config {} ({})",
            clean.max_rel_err, clean.worst_config, clean.worst_path
        );
        assert!(clean.text.contains("PASS"));
        assert!(!clean.worst_path.is_empty());
        let corrupted = cmd_gradcheck(0, true).unwrap();
        assert!(!corrupted.passed);
        assert!(corrupted.text.contains("FAIL"));
    }
}
