//! Feature emission: latent state → noisy FeatureBundle.
//!
//! Dense features (backbone grid, encoder tokens, region features) are
//! fixed random linear projections of a canonical state vector plus
//! Gaussian noise — informative but imperfect, like a frozen recognition
//! backbone. Symbolic table info is emitted as one-hot distributions that
//! match ground truth except for seeded label flips at rate ε.
//!
//! With ε = 0 the emitted table info determines the service labels
//! exactly; [`labels_from_table_info`] is the reference decision rule used
//! to audit that recoverability.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{
    stream_rng, EpisodeState, Progress, SynthError, WorldConfig, CAT_DESSERT, CAT_DISHES,
    CAT_OTHER, CAT_PERSON_HAND, CAT_PHONE, CAT_TRASH, STREAM_EMIT, STREAM_MAPS,
};
use crate::dataset::{
    quantize_simplex, FeatureBundle, RegionInfo, ServiceLabel, TableInfo,
};

/// Canonical numeric encoding of an episode state: a constant bias, the
/// per-dish amounts, the per-dish "below refill threshold" indicators, then
/// trash, presence, absence, item, dessert, progress one-hot, and
/// normalized time. Dimension is `2 * dish_count + 12`.
pub fn state_vector(state: &EpisodeState, config: &WorldConfig) -> Vec<f64> {
    let mut v = Vec::with_capacity(2 * state.dish_amounts.len() + 12);
    v.push(1.0);
    v.extend_from_slice(&state.dish_amounts);
    for &a in &state.dish_amounts {
        v.push(if a < config.theta_refill { 1.0 } else { 0.0 });
    }
    v.push((state.trash_count.min(5)) as f64 / 5.0);
    v.push(if state.trash_count >= 1 { 1.0 } else { 0.0 });
    v.push(if state.person_present { 1.0 } else { 0.0 });
    v.push((state.absence_s as f64 / config.lost_threshold_s.max(1.0)).min(2.0));
    v.push(if (state.absence_s as f64) >= config.lost_threshold_s {
        1.0
    } else {
        0.0
    });
    v.push(if state.personal_item { 1.0 } else { 0.0 });
    v.push(if state.dessert_served { 1.0 } else { 0.0 });
    for p in 0..3 {
        v.push(if state.progress.index() == p { 1.0 } else { 0.0 });
    }
    v.push(state.t as f64 / config.duration_s.max(1) as f64);
    v
}

/// Fixed random projections from the state vector into each dense feature
/// block. Drawn once per dataset from the generator seed; reusing the same
/// maps across frames is what makes the features a consistent "backbone".
#[derive(Debug, Clone)]
pub struct FeatureMaps {
    state_dim: usize,
    backbone: Vec<f64>,
    encoder: Vec<f64>,
    region: Vec<f64>,
}

impl FeatureMaps {
    /// Draw the three projection matrices with entries uniform in
    /// [−1/√S, 1/√S] where S is the state-vector dim.
    pub fn draw(config: &WorldConfig, seed: u64) -> FeatureMaps {
        let state_dim = 2 * config.dish_count + 12;
        let bound = 1.0 / (state_dim as f64).sqrt();
        let mut rng = stream_rng(seed, [STREAM_MAPS, 0, 0]);
        let dims = &config.dims;
        let mut draw = |rows: usize| -> Vec<f64> {
            (0..rows * state_dim)
                .map(|_| rng.random_range(-bound..=bound))
                .collect()
        };
        FeatureMaps {
            state_dim,
            backbone: draw(dims.h * dims.w * dims.c),
            encoder: draw(dims.t * dims.d),
            region: draw(dims.r * dims.d),
        }
    }

    fn project(&self, matrix: &[f64], s: &[f64], noise_std: f64, rng: &mut impl Rng) -> Vec<f32> {
        debug_assert_eq!(s.len(), self.state_dim);
        let rows = matrix.len() / self.state_dim;
        let normal = Normal::new(0.0, noise_std.max(0.0)).expect("validated std");
        let mut out = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &matrix[r * self.state_dim..(r + 1) * self.state_dim];
            let mut acc = 0.0f64;
            for (w, x) in row.iter().zip(s.iter()) {
                acc += w * x;
            }
            if noise_std > 0.0 {
                acc += normal.sample(rng);
            }
            out.push(acc as f32);
        }
        out
    }
}

/// Quantize a food amount in [0,1] into the A = 5 bins. Bin 0 means
/// "almost empty" and is aligned with the refill threshold so that the bin
/// alone decides the refill rule; the remaining mass splits the
/// [θ, 1] range into four equal bins (¼, ½, ¾, full).
pub fn amount_bin(amount: f64, theta_refill: f64) -> usize {
    if amount < theta_refill {
        0
    } else {
        let span = (1.0 - theta_refill).max(f64::MIN_POSITIVE);
        1 + (((amount - theta_refill) / span) * 4.0).floor().min(3.0) as usize
    }
}

/// Ground-truth one-hot, flipped with probability ε to a random wrong
/// class carrying 0.8 mass with the rest spread uniformly.
fn noisy_onehot(true_idx: usize, len: usize, epsilon: f64, rng: &mut impl Rng) -> Vec<f32> {
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        let mut wrong = rng.random_range(0..len - 1);
        if wrong >= true_idx {
            wrong += 1;
        }
        let spread = 0.2 / (len - 1) as f64;
        let probs: Vec<f64> = (0..len)
            .map(|i| if i == wrong { 0.8 } else { spread })
            .collect();
        quantize_simplex(&probs)
    } else {
        let mut probs = vec![0.0f32; len];
        probs[true_idx] = 1.0;
        probs
    }
}

/// Ground-truth (category, amount-bin) pair for each of the R region
/// slots: one slot per dish, then trash, person, personal-item, and
/// dessert slots. Non-food slots report the "full" bin so that bin 0 is a
/// dedicated almost-empty-food channel rather than a catch-all for empty
/// slots.
fn region_truth(state: &EpisodeState, config: &WorldConfig) -> Vec<(usize, usize)> {
    let mut slots = Vec::with_capacity(config.dish_count + 4);
    for &a in &state.dish_amounts {
        slots.push((CAT_DISHES, amount_bin(a, config.theta_refill)));
    }
    // Trash slot: trash category only while trash is on the table.
    slots.push(if state.trash_count >= 1 {
        (CAT_TRASH, state.trash_count.min(4) as usize)
    } else {
        (CAT_OTHER, 4)
    });
    // Person slot: a person-hand region persists through short absences and
    // disappears once the absence passes the lost threshold.
    let person_visible =
        state.person_present || (state.absence_s as f64) < config.lost_threshold_s;
    slots.push(if person_visible {
        (CAT_PERSON_HAND, 4)
    } else {
        (CAT_OTHER, 4)
    });
    // Personal-item slot.
    slots.push(if state.personal_item {
        (CAT_PHONE, 4)
    } else {
        (CAT_OTHER, 4)
    });
    // Dessert slot appears once dessert has been served.
    slots.push(if state.dessert_served {
        (CAT_DESSERT, 4)
    } else {
        (CAT_OTHER, 4)
    });
    slots
}

fn slot_box(slot: usize, r: usize, dish_count: usize) -> [f32; 4] {
    let cx = (slot + 1) as f32 / (r + 1) as f32;
    let cy = if slot < dish_count {
        0.35
    } else {
        match slot - dish_count {
            0 => 0.55, // trash
            1 => 0.75, // person
            2 => 0.15, // personal item
            _ => 0.85, // dessert
        }
    };
    [cx, cy, 0.12, 0.12]
}

/// Emit one frame's FeatureBundle from a latent state. Deterministic per
/// (state, episode, seed); `maps` must come from [`FeatureMaps::draw`]
/// with the same dataset seed for features to be consistent across frames.
pub fn emit_features(
    state: &EpisodeState,
    config: &WorldConfig,
    maps: &FeatureMaps,
    episode_id: u32,
    seed: u64,
) -> Result<FeatureBundle, SynthError> {
    config.validate()?;
    let mut rng = stream_rng(seed, [STREAM_EMIT, episode_id as u64, state.t as u64]);
    let s = state_vector(state, config);
    let sigma = config.feature_noise_std;
    let backbone_grid = maps.project(&maps.backbone, &s, sigma, &mut rng);
    let encoder_tokens = maps.project(&maps.encoder, &s, sigma, &mut rng);
    let region_features = maps.project(&maps.region, &s, sigma, &mut rng);

    let dims = &config.dims;
    let eps = config.label_flip_rate;
    let truth = region_truth(state, config);
    debug_assert_eq!(truth.len(), dims.r);
    let mut regions = Vec::with_capacity(dims.r);
    for (slot, &(cat, bin)) in truth.iter().enumerate() {
        regions.push(RegionInfo {
            category_probs: noisy_onehot(cat, dims.k, eps, &mut rng),
            amount_probs: noisy_onehot(bin, dims.a, eps, &mut rng),
            box_cxcywh: slot_box(slot, dims.r, config.dish_count),
        });
    }
    let progress_probs = noisy_onehot(state.progress.index(), dims.p, eps, &mut rng);
    let elapsed_s = state.t as f32;
    Ok(FeatureBundle {
        episode_id,
        frame_id: state.t,
        elapsed_s,
        backbone_grid,
        encoder_tokens,
        region_features,
        table_info: TableInfo {
            regions,
            progress_probs,
            elapsed_s,
        },
    })
}

fn argmax(probs: &[f32]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

/// Reference decision rule that reads only the symbolic table info. With
/// ε = 0 it reproduces the oracle labels exactly; tests use it to audit
/// that the labels stay recoverable from emitted features.
pub fn labels_from_table_info(info: &TableInfo) -> ServiceLabel {
    let progress = argmax(&info.progress_probs);
    let cat_of = |r: &RegionInfo| argmax(&r.category_probs);
    let has_cat = |c: usize| info.regions.iter().any(|r| cat_of(r) == c);
    let empty_dish = info
        .regions
        .iter()
        .any(|r| cat_of(r) == CAT_DISHES && argmax(&r.amount_probs) == 0);
    ServiceLabel {
        refill: progress == Progress::Eating.index() && empty_dish,
        trash: has_cat(CAT_TRASH),
        dessert: progress == Progress::Finished.index() && !has_cat(CAT_DESSERT),
        lost: !has_cat(CAT_PERSON_HAND) && has_cat(CAT_PHONE),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthworld::{oracle_service_labels, simulate_episode};

    fn clean_config() -> WorldConfig {
        let mut config = WorldConfig::balanced();
        config.label_flip_rate = 0.0;
        config.feature_noise_std = 0.0;
        config
    }

    #[test]
    fn zero_noise_table_info_is_exact_truth() {
        let config = clean_config();
        let maps = FeatureMaps::draw(&config, 9);
        let states = simulate_episode(&config, 9).unwrap();
        for state in &states {
            let bundle = emit_features(state, &config, &maps, 0, 9).unwrap();
            let truth = region_truth(state, &config);
            for (region, &(cat, bin)) in bundle.table_info.regions.iter().zip(truth.iter()) {
                assert_eq!(region.category_probs[cat], 1.0);
                assert_eq!(region.category_probs.iter().sum::<f32>(), 1.0);
                assert_eq!(region.amount_probs[bin], 1.0);
            }
            assert_eq!(
                bundle.table_info.progress_probs[state.progress.index()],
                1.0
            );
        }
    }

    #[test]
    fn emission_is_deterministic() {
        let mut config = WorldConfig::balanced();
        config.label_flip_rate = 0.2;
        let maps = FeatureMaps::draw(&config, 5);
        let states = simulate_episode(&config, 5).unwrap();
        let a = emit_features(&states[40], &config, &maps, 2, 5).unwrap();
        let b = emit_features(&states[40], &config, &maps, 2, 5).unwrap();
        assert_eq!(a, b);
        // different frame seed stream → different noise
        let c = emit_features(&states[40], &config, &maps, 3, 5).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn measured_flip_rate_matches_epsilon() {
        let mut config = WorldConfig::balanced();
        config.label_flip_rate = 0.1;
        config.duration_s = 120;
        let maps = FeatureMaps::draw(&config, 31);
        let mut flips = 0usize;
        let mut total = 0usize;
        for ep in 0..12 {
            let states = simulate_episode(&config, 31 + ep as u64).unwrap();
            for state in &states {
                let bundle = emit_features(state, &config, &maps, ep, 31).unwrap();
                let truth = region_truth(state, &config);
                for (region, &(cat, _)) in bundle.table_info.regions.iter().zip(truth.iter()) {
                    total += 1;
                    if argmax(&region.category_probs) != cat {
                        flips += 1;
                    }
                }
            }
        }
        assert!(total >= 10_000, "need a large sample, got {total}");
        let rate = flips as f64 / total as f64;
        assert!(
            (rate - 0.1).abs() <= 0.01,
            "flip rate {rate} outside 0.1 ± 0.01 over {total} regions"
        );
    }

    #[test]
    fn labels_recoverable_from_clean_table_info() {
        let config = clean_config();
        let maps = FeatureMaps::draw(&config, 77);
        for ep in 0..6u32 {
            let states = simulate_episode(&config, 1000 + ep as u64).unwrap();
            for state in &states {
                let bundle = emit_features(state, &config, &maps, ep, 77).unwrap();
                assert_eq!(
                    labels_from_table_info(&bundle.table_info),
                    oracle_service_labels(state, &config),
                    "t={} state={state:?}",
                    state.t
                );
            }
        }
    }

    #[test]
    fn amount_bins_align_with_refill_threshold() {
        let theta = 0.15;
        assert_eq!(amount_bin(0.0, theta), 0);
        assert_eq!(amount_bin(0.1499, theta), 0);
        assert_eq!(amount_bin(0.15, theta), 1);
        assert_eq!(amount_bin(0.5, theta), 2);
        assert_eq!(amount_bin(0.9, theta), 4);
        assert_eq!(amount_bin(1.0, theta), 4);
    }

    #[test]
    fn flipped_simplex_puts_point_eight_on_wrong_class() {
        let mut rng = stream_rng(3, [9, 9, 9]);
        // epsilon = 1 always flips
        for _ in 0..50 {
            let probs = noisy_onehot(4, 12, 0.9999999, &mut rng);
            let max_idx = argmax(&probs);
            assert_ne!(max_idx, 4);
            assert!((probs[max_idx] - 0.8).abs() < 1e-6);
            let sum: f64 = probs.iter().map(|&p| p as f64).sum();
            assert!((sum - 1.0).abs() < 1e-6);
        }
    }
}
