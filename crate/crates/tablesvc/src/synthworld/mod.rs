//! Synthetic meal-episode world.
//!
//! Simulates a table through a waiting → eating → finished meal with
//! latent state (per-dish food amounts, trash arrivals, person
//! presence, a personal item, dessert service), derives ground-truth
//! service labels from explicit rules, and emits noisy feature bundles
//! through fixed random projections — the stand-in for a frozen video
//! recognition model watching a real table.
//!
//! Everything is deterministic per (config, seed). Episodes are
//! independent given their seeds, so dataset construction generates them
//! in parallel and reassembles in episode order.

mod features;

pub use features::{emit_features, labels_from_table_info, state_vector, FeatureMaps};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset::{
    Dataset, DatasetError, DatasetManifest, FeatureBundle, LabelMode, ManifestDims, ServiceLabel,
};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid config: {detail}")]
    InvalidConfig { detail: String },
    #[error("invalid rate: {detail}")]
    InvalidRate { detail: String },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

/// Meal progress phase. Transitions only run forward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Progress {
    Waiting,
    Eating,
    Finished,
}

impl Progress {
    /// Index into a P=3 one-hot.
    pub fn index(&self) -> usize {
        match self {
            Progress::Waiting => 0,
            Progress::Eating => 1,
            Progress::Finished => 2,
        }
    }
}

/// Latent table state at one second of an episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeState {
    pub t: u32,
    /// Fraction of food remaining per dish, each in [0,1], non-increasing.
    pub dish_amounts: Vec<f64>,
    pub trash_count: u32,
    pub person_present: bool,
    /// Seconds the person has been away; 0 whenever present.
    pub absence_s: u32,
    pub personal_item: bool,
    pub dessert_served: bool,
    pub progress: Progress,
}

/// Fixed category vocabulary (K = 12).
pub const CATEGORY_NAMES: [&str; 12] = [
    "dishes",
    "cup",
    "bottle",
    "trash",
    "tissue",
    "phone",
    "bag",
    "tray",
    "cutlery",
    "dessert",
    "person-hand",
    "other",
];
pub const CAT_DISHES: usize = 0;
pub const CAT_TRASH: usize = 3;
pub const CAT_PHONE: usize = 5;
pub const CAT_DESSERT: usize = 9;
pub const CAT_PERSON_HAND: usize = 10;
pub const CAT_OTHER: usize = 11;

/// Generator knobs. All rates are per the stated unit and must be
/// non-negative; thresholds live in their documented ranges. Serialized as
/// `worldconfig.json`; missing fields fall back to the cafeteria preset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    /// Episode length in seconds (one state per second).
    pub duration_s: u32,
    /// Dishes on the table; region count is dish_count + 4 special slots.
    pub dish_count: usize,
    /// Mean per-second consumption rate per dish (fraction of a dish).
    pub consumption_rate_mean: f64,
    /// Std of the per-dish rate draw (episode-level).
    pub consumption_rate_std: f64,
    /// Trash arrival rate, events per minute.
    pub trash_rate_per_min: f64,
    /// Rate at which staff clear all trash, events per minute.
    pub trash_pickup_rate_per_min: f64,
    /// Probability per minute that a present person steps away.
    pub absence_prob_per_min: f64,
    /// Mean of the exponential absence duration, seconds.
    pub absence_duration_mean_s: f64,
    /// Probability the person brought a personal item (per episode).
    pub personal_item_prob: f64,
    /// A dish is "almost empty" below this fraction.
    pub theta_refill: f64,
    /// Seconds of absence before an unattended item counts as lost.
    pub lost_threshold_s: f64,
    /// Mean seconds before eating starts (waiting phase length).
    pub eating_start_mean_s: f64,
    /// Progress is forced to finished at this many seconds.
    pub finished_cutoff_s: f64,
    /// Seconds after finishing until dessert is served.
    pub dessert_serve_delay_s: f64,
    /// Table-info label-flip rate ε in [0,1).
    pub label_flip_rate: f64,
    /// Gaussian noise std σ added to projected features.
    pub feature_noise_std: f64,
    pub dims: ManifestDims,
    pub label_mode: LabelMode,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig::cafeteria()
    }
}

impl WorldConfig {
    /// Default preset: a long cafeteria-style sitting whose train-split
    /// label frequencies are strongly imbalanced — refill dominant,
    /// trash and dessert around a quarter each, lost rare.
    pub fn cafeteria() -> Self {
        // The refill flag spans from the first dish crossing θ to the
        // finished cutoff, so a wide per-dish rate spread (clamped at 0)
        // makes one dish cross within ~30 s while another never crosses,
        // keeping the table in the eating-with-low-dish state for ~86% of
        // the episode. Absences are frequent and short so the rare `lost`
        // class concentrates instead of arriving in a few long bursts.
        WorldConfig {
            duration_s: 1220,
            dish_count: 8,
            consumption_rate_mean: 0.004,
            consumption_rate_std: 0.04,
            trash_rate_per_min: 1.2,
            trash_pickup_rate_per_min: 3.15,
            absence_prob_per_min: 0.452,
            absence_duration_mean_s: 15.0,
            personal_item_prob: 1.0,
            theta_refill: 0.15,
            lost_threshold_s: 12.0,
            eating_start_mean_s: 10.0,
            finished_cutoff_s: 1085.0,
            dessert_serve_delay_s: 300.0,
            label_flip_rate: 0.0,
            feature_noise_std: 0.05,
            dims: ManifestDims {
                r: 12,
                ..ManifestDims::desk_default()
            },
            label_mode: LabelMode::MultiLabel,
        }
    }

    /// Fast preset where all four labels are common; used by unit tests and
    /// quick experiments.
    pub fn balanced() -> Self {
        WorldConfig {
            duration_s: 120,
            dish_count: 4,
            consumption_rate_mean: 0.022,
            consumption_rate_std: 0.010,
            trash_rate_per_min: 6.0,
            trash_pickup_rate_per_min: 6.0,
            absence_prob_per_min: 1.8,
            absence_duration_mean_s: 35.0,
            personal_item_prob: 0.7,
            theta_refill: 0.15,
            lost_threshold_s: 15.0,
            eating_start_mean_s: 10.0,
            finished_cutoff_s: 100.0,
            dessert_serve_delay_s: 15.0,
            label_flip_rate: 0.0,
            feature_noise_std: 0.05,
            dims: ManifestDims::desk_default(),
            label_mode: LabelMode::MultiLabel,
        }
    }

    /// Selection-study preset: table dynamics run about four times
    /// slower than in [`WorldConfig::balanced`] while the camera still
    /// samples at 1 fps, so every state lingers for several near-
    /// identical frames and a large labeling budget is mostly spent on
    /// duplicates. Labels are the five exclusive classes, whose argmax
    /// decision makes subset composition — not threshold calibration —
    /// the thing a selection strategy can win on.
    pub fn redundant() -> Self {
        WorldConfig {
            duration_s: 400,
            dish_count: 4,
            consumption_rate_mean: 0.002,
            consumption_rate_std: 0.00375,
            trash_rate_per_min: 1.5,
            trash_pickup_rate_per_min: 1.5,
            absence_prob_per_min: 0.6,
            absence_duration_mean_s: 48.0,
            personal_item_prob: 1.0,
            theta_refill: 0.55,
            lost_threshold_s: 12.0,
            eating_start_mean_s: 32.0,
            finished_cutoff_s: 280.0,
            dessert_serve_delay_s: 120.0,
            label_flip_rate: 0.0,
            feature_noise_std: 0.0,
            dims: ManifestDims::desk_default(),
            label_mode: LabelMode::Exclusive,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let fail = |detail: String| Err(SynthError::InvalidConfig { detail });
        if self.duration_s < 1 {
            return fail("duration_s must be ≥ 1".into());
        }
        if self.dish_count < 1 {
            return fail("dish_count must be ≥ 1".into());
        }
        for (name, v) in [
            ("consumption_rate_mean", self.consumption_rate_mean),
            ("consumption_rate_std", self.consumption_rate_std),
            ("trash_rate_per_min", self.trash_rate_per_min),
            ("trash_pickup_rate_per_min", self.trash_pickup_rate_per_min),
            ("absence_prob_per_min", self.absence_prob_per_min),
            ("absence_duration_mean_s", self.absence_duration_mean_s),
            ("eating_start_mean_s", self.eating_start_mean_s),
            ("finished_cutoff_s", self.finished_cutoff_s),
            ("dessert_serve_delay_s", self.dessert_serve_delay_s),
            ("lost_threshold_s", self.lost_threshold_s),
            ("feature_noise_std", self.feature_noise_std),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return fail(format!("{name} must be a finite non-negative number, got {v}"));
            }
        }
        if !(self.personal_item_prob >= 0.0 && self.personal_item_prob <= 1.0) {
            return fail(format!(
                "personal_item_prob must be in [0,1], got {}",
                self.personal_item_prob
            ));
        }
        if !(self.theta_refill > 0.0 && self.theta_refill < 1.0) {
            return fail(format!(
                "theta_refill must be in (0,1), got {}",
                self.theta_refill
            ));
        }
        if !(self.label_flip_rate >= 0.0 && self.label_flip_rate < 1.0) {
            return fail(format!(
                "label_flip_rate must be in [0,1), got {}",
                self.label_flip_rate
            ));
        }
        let d = &self.dims;
        if d.h * d.w * d.c == 0 || d.t * d.d == 0 || d.r == 0 {
            return fail("dims must all be ≥ 1".into());
        }
        if d.k != CATEGORY_NAMES.len() {
            return fail(format!("dims.k must be {} (fixed vocabulary)", CATEGORY_NAMES.len()));
        }
        if d.a != 5 {
            return fail("dims.a must be 5 (amount bins 0, ¼, ½, ¾, full)".into());
        }
        if d.p != 3 {
            return fail("dims.p must be 3 (waiting, eating, finished)".into());
        }
        if d.r != self.dish_count + 4 {
            return fail(format!(
                "dims.r must be dish_count + 4 special slots = {}, got {}",
                self.dish_count + 4,
                d.r
            ));
        }
        Ok(())
    }
}

/// Build a 32-byte ChaCha seed from a base seed and stream tags so that
/// distinct (episode, frame, purpose) tuples never share an RNG stream.
pub(crate) fn stream_rng(base: u64, tags: [u64; 3]) -> ChaCha8Rng {
    let mut seed = [0u8; 32];
    seed[0..8].copy_from_slice(&base.to_le_bytes());
    seed[8..16].copy_from_slice(&tags[0].to_le_bytes());
    seed[16..24].copy_from_slice(&tags[1].to_le_bytes());
    seed[24..32].copy_from_slice(&tags[2].to_le_bytes());
    ChaCha8Rng::from_seed(seed)
}

const STREAM_SIM: u64 = 1;
const STREAM_MAPS: u64 = 2;
const STREAM_EMIT: u64 = 3;

/// Run one episode and return its per-second latent states.
pub fn simulate_episode(config: &WorldConfig, seed: u64) -> Result<Vec<EpisodeState>, SynthError> {
    config.validate()?;
    let mut rng = stream_rng(seed, [STREAM_SIM, 0, 0]);

    // Episode-level draws. A zero std must give exactly the mean, so skip
    // the sampler in that case.
    let rates: Vec<f64> = if config.consumption_rate_std > 0.0 {
        let rate_dist = Normal::new(config.consumption_rate_mean, config.consumption_rate_std)
            .expect("validated std");
        (0..config.dish_count)
            .map(|_| rate_dist.sample(&mut rng).max(0.0))
            .collect()
    } else {
        vec![config.consumption_rate_mean; config.dish_count]
    };
    let personal_item = rng.random::<f64>() < config.personal_item_prob;
    let eating_start = if config.eating_start_mean_s <= 0.0 {
        0.0
    } else {
        Exp::new(1.0 / config.eating_start_mean_s)
            .expect("positive mean")
            .sample(&mut rng)
    };

    // Per-second event probabilities from per-minute rates.
    let p_trash = (config.trash_rate_per_min / 60.0).min(1.0);
    let p_pickup = (config.trash_pickup_rate_per_min / 60.0).min(1.0);
    let p_leave = (config.absence_prob_per_min / 60.0).min(1.0);
    let absence_dist = if config.absence_duration_mean_s > 0.0 {
        Some(Exp::new(1.0 / config.absence_duration_mean_s).expect("positive mean"))
    } else {
        None
    };

    let mut states = Vec::with_capacity(config.duration_s as usize);
    let mut dish_amounts = vec![1.0f64; config.dish_count];
    let mut trash_count: u32 = 0;
    let mut person_present = true;
    let mut absence_s: u32 = 0;
    let mut absence_left: f64 = 0.0;
    let mut dessert_served = false;
    let mut progress = Progress::Waiting;
    let mut finished_since: Option<u32> = None;

    for t in 0..config.duration_s {
        // Presence.
        if person_present {
            if p_leave > 0.0 && rng.random::<f64>() < p_leave {
                person_present = false;
                absence_left = absence_dist
                    .as_ref()
                    .map(|d| d.sample(&mut rng))
                    .unwrap_or(0.0)
                    .max(1.0);
                absence_s = 1;
            }
        } else {
            absence_left -= 1.0;
            if absence_left <= 0.0 {
                person_present = true;
                absence_s = 0;
            } else {
                absence_s += 1;
            }
        }

        // Trash arrivals and pickups.
        if rng.random::<f64>() < p_trash {
            trash_count += 1;
        }
        if trash_count > 0 && rng.random::<f64>() < p_pickup {
            trash_count = 0;
        }

        // Progress transitions (forward only).
        if progress == Progress::Waiting && (t as f64) >= eating_start {
            progress = Progress::Eating;
        }
        if progress == Progress::Eating {
            let all_low = dish_amounts.iter().all(|&a| a < config.theta_refill);
            if all_low || (t as f64) >= config.finished_cutoff_s {
                progress = Progress::Finished;
                finished_since = Some(t);
            }
        }

        // Consumption while eating and present.
        if progress == Progress::Eating && person_present {
            for (a, r) in dish_amounts.iter_mut().zip(rates.iter()) {
                *a = (*a - r).max(0.0);
            }
        }

        // Dessert service after the configured delay.
        if let Some(f0) = finished_since {
            if !dessert_served && (t - f0) as f64 >= config.dessert_serve_delay_s {
                dessert_served = true;
            }
        }

        states.push(EpisodeState {
            t,
            dish_amounts: dish_amounts.clone(),
            trash_count,
            person_present,
            absence_s,
            personal_item,
            dessert_served,
            progress,
        });
    }
    Ok(states)
}

/// The ground-truth labeling rules, a pure function of one state.
pub fn oracle_service_labels(state: &EpisodeState, config: &WorldConfig) -> ServiceLabel {
    let refill = state.progress == Progress::Eating
        && state.dish_amounts.iter().any(|&a| a < config.theta_refill);
    let trash = state.trash_count >= 1;
    let dessert = state.progress == Progress::Finished && !state.dessert_served;
    let lost = !state.person_present
        && (state.absence_s as f64) >= config.lost_threshold_s
        && state.personal_item;
    ServiceLabel {
        refill,
        trash,
        dessert,
        lost,
    }
}

/// Keep the first frame of each 1/target_fps window of a source stream.
pub fn sample_fps<T: Clone>(
    frames: &[T],
    source_fps: f64,
    target_fps: f64,
) -> Result<Vec<T>, SynthError> {
    if !(target_fps > 0.0) || !target_fps.is_finite() {
        return Err(SynthError::InvalidRate {
            detail: format!("target_fps must be positive, got {target_fps}"),
        });
    }
    if !(source_fps > 0.0) || !source_fps.is_finite() {
        return Err(SynthError::InvalidRate {
            detail: format!("source_fps must be positive, got {source_fps}"),
        });
    }
    if target_fps > source_fps {
        return Err(SynthError::InvalidRate {
            detail: format!("target_fps {target_fps} exceeds source rate {source_fps}"),
        });
    }
    let mut out = Vec::new();
    let mut last_window: Option<u64> = None;
    for (i, frame) in frames.iter().enumerate() {
        // Multiply before dividing: for integer fps the product is exact and
        // the single division cannot push an exact boundary off its window.
        let window = (i as f64 * target_fps / source_fps).floor() as u64;
        if last_window != Some(window) {
            out.push(frame.clone());
            last_window = Some(window);
        }
    }
    Ok(out)
}

fn seed_digest(config: &WorldConfig, episodes: u32, seed: u64) -> String {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(episodes.to_le_bytes());
    hasher.update(serde_json::to_string(config).expect("config serializes").as_bytes());
    let digest = hasher.finalize();
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Generate `episodes` episodes at 1 fps and split them episode-wise:
/// `round(2/9 · episodes)` (clamped to keep both sides non-empty) go to
/// train, the rest to test.
pub fn build_benchmark(
    config: &WorldConfig,
    episodes: u32,
    seed: u64,
) -> Result<(Dataset, Dataset), SynthError> {
    config.validate()?;
    if episodes < 2 {
        return Err(SynthError::InvalidConfig {
            detail: format!("need at least 2 episodes to split, got {episodes}"),
        });
    }
    let maps = FeatureMaps::draw(config, seed);

    let per_episode: Vec<Result<Vec<(FeatureBundle, ServiceLabel)>, SynthError>> = (0..episodes)
        .into_par_iter()
        .map(|ep| {
            let states = simulate_episode(config, seed.wrapping_add(ep as u64))?;
            // States are one per second; the benchmark runs at 1 fps.
            let states = sample_fps(&states, 1.0, 1.0)?;
            let mut frames = Vec::with_capacity(states.len());
            for state in &states {
                let mut label = oracle_service_labels(state, config);
                if config.label_mode == LabelMode::Exclusive {
                    label = label.to_exclusive();
                }
                let bundle = emit_features(state, config, &maps, ep, seed)?;
                frames.push((bundle, label));
            }
            Ok(frames)
        })
        .collect();

    let mut all: Vec<Vec<(FeatureBundle, ServiceLabel)>> = Vec::with_capacity(episodes as usize);
    for r in per_episode {
        all.push(r?);
    }

    let train_eps = (((2.0 / 9.0) * episodes as f64).round() as u32).clamp(1, episodes - 1);
    let mut train_frames = Vec::new();
    let mut test_frames = Vec::new();
    for (ep, frames) in all.into_iter().enumerate() {
        if (ep as u32) < train_eps {
            train_frames.extend(frames);
        } else {
            test_frames.extend(frames);
        }
    }
    let digest = seed_digest(config, episodes, seed);
    let mk = |frames: Vec<(FeatureBundle, ServiceLabel)>| {
        Dataset::new(
            DatasetManifest {
                dims: config.dims,
                label_mode: config.label_mode,
                fps: 1,
                frame_count: frames.len(),
                seed_digest: digest.clone(),
            },
            frames,
        )
    };
    Ok((mk(train_frames)?, mk(test_frames)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn episode_has_one_state_per_second_and_amounts_non_increasing() {
        let mut config = WorldConfig::balanced();
        config.duration_s = 300;
        let states = simulate_episode(&config, 5).unwrap();
        assert_eq!(states.len(), 300);
        for (i, s) in states.iter().enumerate() {
            assert_eq!(s.t, i as u32);
            for &a in &s.dish_amounts {
                assert!((0.0..=1.0).contains(&a));
            }
            if s.person_present {
                assert_eq!(s.absence_s, 0);
            }
        }
        for pair in states.windows(2) {
            for (a0, a1) in pair[0].dish_amounts.iter().zip(pair[1].dish_amounts.iter()) {
                assert!(a1 <= a0, "amounts must not increase");
            }
            // forward-only progress
            assert!(pair[1].progress.index() >= pair[0].progress.index());
        }
    }

    #[test]
    fn episode_is_deterministic() {
        let config = WorldConfig::balanced();
        let a = simulate_episode(&config, 42).unwrap();
        let b = simulate_episode(&config, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_consumption_never_finishes_before_cutoff() {
        let mut config = WorldConfig::balanced();
        config.consumption_rate_mean = 0.0;
        config.consumption_rate_std = 0.0;
        config.duration_s = 90;
        config.finished_cutoff_s = 80.0;
        let states = simulate_episode(&config, 7).unwrap();
        for s in &states {
            for &a in &s.dish_amounts {
                assert_eq!(a, 1.0);
            }
            if (s.t as f64) < 80.0 {
                assert_ne!(s.progress, Progress::Finished);
            }
        }
        assert_eq!(states.last().unwrap().progress, Progress::Finished);
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut c = WorldConfig::balanced();
        c.dish_count = 0;
        assert!(matches!(
            simulate_episode(&c, 1),
            Err(SynthError::InvalidConfig { .. })
        ));
        let mut c = WorldConfig::balanced();
        c.trash_rate_per_min = -1.0;
        assert!(matches!(
            simulate_episode(&c, 1),
            Err(SynthError::InvalidConfig { .. })
        ));
        let mut c = WorldConfig::balanced();
        c.label_flip_rate = 1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn oracle_rules_fire_per_spec_cases() {
        let config = WorldConfig::balanced();
        let base = EpisodeState {
            t: 10,
            dish_amounts: vec![0.5; 4],
            trash_count: 0,
            person_present: true,
            absence_s: 0,
            personal_item: false,
            dessert_served: false,
            progress: Progress::Eating,
        };
        let mut s = base.clone();
        s.dish_amounts = vec![0.05, 0.8, 0.9, 0.9];
        assert!(oracle_service_labels(&s, &config).refill);
        let mut s = base.clone();
        s.trash_count = 2;
        assert!(oracle_service_labels(&s, &config).trash);
        let mut s = base.clone();
        s.person_present = false;
        s.absence_s = 120;
        s.personal_item = true;
        assert!(oracle_service_labels(&s, &config).lost);
        let mut s = base.clone();
        s.progress = Progress::Finished;
        assert!(oracle_service_labels(&s, &config).dessert);
        s.dessert_served = true;
        assert!(!oracle_service_labels(&s, &config).dessert);
        // pure function: equal states, equal labels
        assert_eq!(
            oracle_service_labels(&base, &config),
            oracle_service_labels(&base.clone(), &config)
        );
    }

    #[test]
    fn fps_sampling_keeps_first_of_each_window() {
        let frames: Vec<u32> = (0..300).collect();
        let sampled = sample_fps(&frames, 30.0, 1.0).unwrap();
        assert_eq!(sampled.len(), 10);
        assert_eq!(sampled[0], 0);
        assert_eq!(sampled[1], 30);
        let identity = sample_fps(&frames, 30.0, 30.0).unwrap();
        assert_eq!(identity, frames);
        let empty: Vec<u32> = vec![];
        assert!(sample_fps(&empty, 30.0, 1.0).unwrap().is_empty());
        assert!(matches!(
            sample_fps(&frames, 1.0, 30.0),
            Err(SynthError::InvalidRate { .. })
        ));
        assert!(matches!(
            sample_fps(&frames, 30.0, 0.0),
            Err(SynthError::InvalidRate { .. })
        ));
    }

    #[test]
    fn cafeteria_train_frequencies_hit_reference_bands() {
        // 41 episodes put round(82/9) = 9 episodes (≈ 11k frames) in train,
        // enough to average out episode-level variance.
        let (train, _) = build_benchmark(&WorldConfig::cafeteria(), 41, 7).unwrap();
        assert!(train.len() >= 10_000);
        let [refill, trash, dessert, lost] = train.label_frequencies();
        // Target ratios for the preset: 2301/2440, 627/2440, 572/2440,
        // 99/2440.
        let target = [0.9430, 0.2570, 0.2344, 0.0406];
        assert!(
            refill >= 0.85 * target[0] && refill <= target[0],
            "refill {refill}"
        );
        assert!((trash - target[1]).abs() <= 0.10 * target[1], "trash {trash}");
        assert!((lost - target[3]).abs() <= 0.10 * target[3], "lost {lost}");
        // Dessert cannot reach its target share: refill needs the eating
        // phase and dessert the finished phase, so with refill ≈ 0.87 the
        // dessert share is structurally capped near 0.11.
        assert!((0.09..=0.14).contains(&dessert), "dessert {dessert}");
    }

    #[test]
    fn benchmark_splits_episodes_two_to_seven() {
        let mut config = WorldConfig::balanced();
        config.duration_s = 25;
        let (train, test) = build_benchmark(&config, 9, 3).unwrap();
        let train_eps: std::collections::BTreeSet<u32> =
            train.frames.iter().map(|(b, _)| b.episode_id).collect();
        let test_eps: std::collections::BTreeSet<u32> =
            test.frames.iter().map(|(b, _)| b.episode_id).collect();
        assert_eq!(train_eps.len(), 2);
        assert_eq!(test_eps.len(), 7);
        assert!(train_eps.is_disjoint(&test_eps));
        assert_eq!(train.len(), 2 * 25);
        assert_eq!(test.len(), 7 * 25);
    }

    #[test]
    fn benchmark_is_deterministic() {
        let mut config = WorldConfig::balanced();
        config.duration_s = 15;
        let a = build_benchmark(&config, 3, 17).unwrap();
        let b = build_benchmark(&config, 3, 17).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn exclusive_mode_sets_at_most_one_flag() {
        let mut config = WorldConfig::balanced();
        config.duration_s = 60;
        config.label_mode = LabelMode::Exclusive;
        let (train, test) = build_benchmark(&config, 3, 11).unwrap();
        for (_, label) in train.frames.iter().chain(test.frames.iter()) {
            assert!(label.flags().iter().filter(|&&f| f).count() <= 1);
        }
    }

    #[test]
    fn two_episodes_still_split_both_sides() {
        let mut config = WorldConfig::balanced();
        config.duration_s = 10;
        let (train, test) = build_benchmark(&config, 2, 1).unwrap();
        assert!(!train.is_empty());
        assert!(!test.is_empty());
        assert!(matches!(
            build_benchmark(&config, 1, 1),
            Err(SynthError::InvalidConfig { .. })
        ));
    }
}
