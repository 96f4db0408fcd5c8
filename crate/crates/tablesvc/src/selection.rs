//! Active-learning data selection: random, uncertainty (entropy), and
//! diversity (k-center greedy) strategies, plus a brute-force k-center
//! oracle for auditing the greedy's 2-approximation guarantee.
//!
//! All strategies are deterministic: random selection is seeded, and every
//! tie breaks toward the lowest index.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::LabelMode;

#[derive(Debug, Error, PartialEq)]
pub enum SelectionError {
    #[error("budget {budget} invalid for pool of {pool_size} (need 1 ≤ budget ≤ pool size)")]
    BudgetExceedsPool { budget: usize, pool_size: usize },
    #[error("invalid probabilities at frame {index}: {detail}")]
    InvalidProbabilities { index: usize, detail: String },
    #[error("instance too large for exhaustive search: {detail}")]
    TooLarge { detail: String },
    #[error("centers must be non-empty")]
    EmptyCenters,
}

/// Which selection strategy produced a result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionMethod {
    Random,
    Uncertainty,
    Diversity,
}

impl SelectionMethod {
    pub fn name(&self) -> &'static str {
        match self {
            SelectionMethod::Random => "random",
            SelectionMethod::Uncertainty => "uncertainty",
            SelectionMethod::Diversity => "diversity",
        }
    }
}

/// Strategy-specific diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum SelectionDiagnostics {
    None,
    /// Max over the pool of the distance to the nearest chosen center.
    Diversity { coverage_radius: f64 },
    /// Entropy statistics of the chosen frames.
    Uncertainty { mean: f64, min: f64, max: f64 },
}

/// An ordered selection of pool indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub method: SelectionMethod,
    pub budget: usize,
    pub chosen: Vec<usize>,
    pub diagnostics: SelectionDiagnostics,
}

fn check_budget(budget: usize, pool_size: usize) -> Result<(), SelectionError> {
    if budget == 0 || budget > pool_size {
        return Err(SelectionError::BudgetExceedsPool { budget, pool_size });
    }
    Ok(())
}

/// Seeded uniform sample without replacement.
pub fn select_random(
    pool_size: usize,
    budget: usize,
    seed: u64,
) -> Result<SelectionResult, SelectionError> {
    check_budget(budget, pool_size)?;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let chosen = rand::seq::index::sample(&mut rng, pool_size, budget).into_vec();
    Ok(SelectionResult {
        method: SelectionMethod::Random,
        budget,
        chosen,
        diagnostics: SelectionDiagnostics::None,
    })
}

/// Entropy of one frame's predicted probabilities: Shannon entropy of the
/// class distribution in exclusive mode, mean per-class binary entropy in
/// multi-label mode. Terms are summed in sorted order, making the score
/// exactly invariant under permuting the class order.
pub fn uncertainty_score(probs: &[f64], mode: LabelMode) -> Result<f64, SelectionError> {
    let bad = |detail: String| SelectionError::InvalidProbabilities { index: 0, detail };
    if probs.is_empty() {
        return Err(bad("empty probability vector".into()));
    }
    for &p in probs {
        if !p.is_finite() || !(0.0..=1.0).contains(&p) {
            return Err(bad(format!("probability {p} outside [0,1]")));
        }
    }
    let mut terms: Vec<f64> = match mode {
        LabelMode::Exclusive => {
            let sum: f64 = probs.iter().sum();
            if (sum - 1.0).abs() > 1e-6 {
                return Err(bad(format!("exclusive distribution sums to {sum}")));
            }
            probs
                .iter()
                .map(|&p| if p > 0.0 { -p * p.ln() } else { 0.0 })
                .collect()
        }
        LabelMode::MultiLabel => {
            let k = probs.len() as f64;
            probs
                .iter()
                .map(|&p| {
                    let h = |q: f64| if q > 0.0 { -q * q.ln() } else { 0.0 };
                    (h(p) + h(1.0 - p)) / k
                })
                .collect()
        }
    };
    terms.sort_by(|a, b| a.partial_cmp(b).expect("finite terms"));
    Ok(terms.iter().sum())
}

/// Pick the `budget` frames the model is least sure about (highest
/// entropy), ties toward the lower index.
pub fn select_uncertainty(
    pool_probabilities: &[Vec<f64>],
    budget: usize,
    mode: LabelMode,
) -> Result<SelectionResult, SelectionError> {
    check_budget(budget, pool_probabilities.len())?;
    let mut scores = Vec::with_capacity(pool_probabilities.len());
    for (index, probs) in pool_probabilities.iter().enumerate() {
        let score = uncertainty_score(probs, mode).map_err(|e| match e {
            SelectionError::InvalidProbabilities { detail, .. } => {
                SelectionError::InvalidProbabilities { index, detail }
            }
            other => other,
        })?;
        scores.push(score);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| {
        scores[j]
            .partial_cmp(&scores[i])
            .expect("scores validated finite")
            .then(i.cmp(&j))
    });
    let chosen: Vec<usize> = order[..budget].to_vec();
    let chosen_scores: Vec<f64> = chosen.iter().map(|&i| scores[i]).collect();
    let mean = chosen_scores.iter().sum::<f64>() / chosen_scores.len() as f64;
    let min = chosen_scores.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = chosen_scores
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(SelectionResult {
        method: SelectionMethod::Uncertainty,
        budget,
        chosen,
        diagnostics: SelectionDiagnostics::Uncertainty { mean, min, max },
    })
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum()
}

/// k-center greedy over Euclidean distance. The first center is the point
/// farthest from the pool centroid; each further center is the point
/// farthest from its nearest chosen center. Ties break toward the lowest
/// index.
pub fn select_diversity(
    pool_features: &[Vec<f64>],
    budget: usize,
) -> Result<SelectionResult, SelectionError> {
    let n = pool_features.len();
    check_budget(budget, n)?;
    let dim = pool_features[0].len();
    assert!(
        pool_features.iter().all(|f| f.len() == dim),
        "pool features must share one dim"
    );

    let mut centroid = vec![0.0f64; dim];
    for f in pool_features {
        for (c, &v) in centroid.iter_mut().zip(f.iter()) {
            *c += v;
        }
    }
    for c in &mut centroid {
        *c /= n as f64;
    }

    let argmax_lowest = |scores: &[f64]| -> usize {
        let mut best = 0usize;
        for (i, &s) in scores.iter().enumerate() {
            if s > scores[best] {
                best = i;
            }
        }
        best
    };

    let centroid_d2: Vec<f64> = pool_features.iter().map(|f| dist2(f, &centroid)).collect();
    let first = argmax_lowest(&centroid_d2);
    let mut chosen = vec![first];
    // nearest-center squared distance per pool point
    let mut nearest_d2: Vec<f64> = pool_features
        .iter()
        .map(|f| dist2(f, &pool_features[first]))
        .collect();
    while chosen.len() < budget {
        let next = argmax_lowest(&nearest_d2);
        chosen.push(next);
        for (nd, f) in nearest_d2.iter_mut().zip(pool_features.iter()) {
            let d = dist2(f, &pool_features[next]);
            if d < *nd {
                *nd = d;
            }
        }
    }
    let radius = nearest_d2.iter().cloned().fold(0.0f64, f64::max).sqrt();
    Ok(SelectionResult {
        method: SelectionMethod::Diversity,
        budget,
        chosen,
        diagnostics: SelectionDiagnostics::Diversity {
            coverage_radius: radius,
        },
    })
}

/// Max over the pool of the distance to the nearest center.
pub fn coverage_radius(
    pool_features: &[Vec<f64>],
    centers: &[Vec<f64>],
) -> Result<f64, SelectionError> {
    if centers.is_empty() {
        return Err(SelectionError::EmptyCenters);
    }
    let mut worst = 0.0f64;
    for f in pool_features {
        let nearest = centers
            .iter()
            .map(|c| dist2(f, c))
            .fold(f64::INFINITY, f64::min);
        if nearest > worst {
            worst = nearest;
        }
    }
    Ok(worst.sqrt())
}

/// Exhaustive k-center: minimal coverage radius over all C(N,k) center
/// subsets, N ≤ 12 and k ≤ 4. Returns the radius and the lexicographically
/// first optimal subset.
pub fn brute_force_kcenter(
    pool_features: &[Vec<f64>],
    k: usize,
) -> Result<(f64, Vec<usize>), SelectionError> {
    let n = pool_features.len();
    if n > 12 || k > 4 {
        return Err(SelectionError::TooLarge {
            detail: format!("N={n} (max 12), k={k} (max 4)"),
        });
    }
    check_budget(k, n)?;
    let mut best_radius = f64::INFINITY;
    let mut best_set: Vec<usize> = Vec::new();
    let mut subset: Vec<usize> = Vec::with_capacity(k);
    fn recurse(
        pool: &[Vec<f64>],
        k: usize,
        start: usize,
        subset: &mut Vec<usize>,
        best_radius: &mut f64,
        best_set: &mut Vec<usize>,
    ) {
        if subset.len() == k {
            let centers: Vec<Vec<f64>> = subset.iter().map(|&i| pool[i].clone()).collect();
            let r = coverage_radius(pool, &centers).expect("non-empty centers");
            if r < *best_radius {
                *best_radius = r;
                *best_set = subset.clone();
            }
            return;
        }
        for i in start..pool.len() {
            subset.push(i);
            recurse(pool, k, i + 1, subset, best_radius, best_set);
            subset.pop();
        }
    }
    recurse(
        pool_features,
        k,
        0,
        &mut subset,
        &mut best_radius,
        &mut best_set,
    );
    Ok((best_radius, best_set))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn points_1d(values: &[f64]) -> Vec<Vec<f64>> {
        values.iter().map(|&v| vec![v]).collect()
    }

    #[test]
    fn random_selection_contract() {
        let all = select_random(5, 5, 3).unwrap();
        let mut sorted = all.chosen.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![0, 1, 2, 3, 4]);
        let a = select_random(100, 10, 9).unwrap();
        let b = select_random(100, 10, 9).unwrap();
        assert_eq!(a, b);
        assert!(matches!(
            select_random(10, 0, 1),
            Err(SelectionError::BudgetExceedsPool { .. })
        ));
        assert!(matches!(
            select_random(10, 11, 1),
            Err(SelectionError::BudgetExceedsPool { .. })
        ));
    }

    #[test]
    fn uncertainty_prefers_uniform_and_breaks_ties_low() {
        let pool = vec![vec![0.5, 0.5], vec![0.9, 0.1]];
        let r = select_uncertainty(&pool, 1, LabelMode::Exclusive).unwrap();
        assert_eq!(r.chosen, vec![0]);
        // identical probabilities → lowest indices first
        let pool = vec![vec![0.3, 0.7]; 6];
        let r = select_uncertainty(&pool, 3, LabelMode::MultiLabel).unwrap();
        assert_eq!(r.chosen, vec![0, 1, 2]);
        // one-hot has zero entropy, never chosen before a mixed frame
        let pool = vec![vec![1.0, 0.0], vec![0.6, 0.4]];
        let r = select_uncertainty(&pool, 1, LabelMode::Exclusive).unwrap();
        assert_eq!(r.chosen, vec![1]);
    }

    #[test]
    fn uncertainty_rejects_bad_probabilities() {
        assert!(matches!(
            select_uncertainty(&[vec![0.9, 0.9]], 1, LabelMode::Exclusive),
            Err(SelectionError::InvalidProbabilities { .. })
        ));
        assert!(matches!(
            select_uncertainty(&[vec![-0.1, 1.1]], 1, LabelMode::MultiLabel),
            Err(SelectionError::InvalidProbabilities { .. })
        ));
    }

    #[test]
    fn diversity_hand_example() {
        // centroid 3.25; farthest = 10; then farthest-from-{10} = 0;
        // radius attained at point 2.
        let pool = points_1d(&[0.0, 1.0, 2.0, 10.0]);
        let r = select_diversity(&pool, 2).unwrap();
        assert_eq!(r.chosen, vec![3, 0]);
        match r.diagnostics {
            SelectionDiagnostics::Diversity { coverage_radius } => {
                assert!((coverage_radius - 2.0).abs() < 1e-12);
            }
            _ => panic!("wrong diagnostics kind"),
        }
    }

    #[test]
    fn diversity_budget_n_and_duplicates() {
        let pool = points_1d(&[0.0, 1.0, 2.0, 10.0]);
        let r = select_diversity(&pool, 4).unwrap();
        assert_eq!(r.chosen.len(), 4);
        match r.diagnostics {
            SelectionDiagnostics::Diversity { coverage_radius } => {
                assert_eq!(coverage_radius, 0.0);
            }
            _ => panic!("wrong diagnostics kind"),
        }
        // duplicated pool: radius equals the deduplicated pool's radius
        let dup = points_1d(&[0.0, 0.0, 1.0, 1.0, 2.0, 2.0, 10.0, 10.0]);
        let r2 = select_diversity(&dup, 2).unwrap();
        let base = select_diversity(&pool, 2).unwrap();
        let radius = |r: &SelectionResult| match r.diagnostics {
            SelectionDiagnostics::Diversity { coverage_radius } => coverage_radius,
            _ => unreachable!(),
        };
        assert!((radius(&r2) - radius(&base)).abs() < 1e-12);
    }

    #[test]
    fn coverage_radius_hand_values() {
        let pool = points_1d(&[0.0, 1.0, 2.0, 10.0]);
        assert_eq!(coverage_radius(&pool, &pool).unwrap(), 0.0);
        let centers = points_1d(&[0.0, 10.0]);
        assert!((coverage_radius(&pool, &centers).unwrap() - 2.0).abs() < 1e-12);
        let sym = points_1d(&[-1.0, 1.0]);
        let center = points_1d(&[0.0]);
        assert!((coverage_radius(&sym, &center).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(
            coverage_radius(&pool, &[]).unwrap_err(),
            SelectionError::EmptyCenters
        );
    }

    #[test]
    fn brute_force_hand_example() {
        let pool = points_1d(&[0.0, 1.0, 2.0, 10.0]);
        let (radius, centers) = brute_force_kcenter(&pool, 2).unwrap();
        assert!((radius - 1.0).abs() < 1e-12);
        assert_eq!(centers, vec![1, 3]);
        let (r_all, _) = brute_force_kcenter(&pool, 4).unwrap();
        assert_eq!(r_all, 0.0);
        let same = points_1d(&[3.0; 5]);
        let (r_same, _) = brute_force_kcenter(&same, 2).unwrap();
        assert_eq!(r_same, 0.0);
        assert!(matches!(
            brute_force_kcenter(&points_1d(&[0.0; 13]), 2),
            Err(SelectionError::TooLarge { .. })
        ));
    }

    #[test]
    fn greedy_is_within_twice_optimal_on_100_seeded_pools() {
        let mut rng = ChaCha8Rng::seed_from_u64(424242);
        for case in 0..100 {
            let n = rng.random_range(4..=12usize);
            let k = rng.random_range(1..=4usize).min(n);
            let dim = rng.random_range(1..=3usize);
            let pool: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..dim).map(|_| rng.random_range(-5.0..5.0)).collect())
                .collect();
            let greedy = select_diversity(&pool, k).unwrap();
            let greedy_radius = match greedy.diagnostics {
                SelectionDiagnostics::Diversity { coverage_radius } => coverage_radius,
                _ => unreachable!(),
            };
            let (optimal, _) = brute_force_kcenter(&pool, k).unwrap();
            assert!(
                greedy_radius <= 2.0 * optimal + 1e-12,
                "case {case}: greedy {greedy_radius} > 2 × optimal {optimal}"
            );
        }
    }

    proptest! {
        #[test]
        fn prop_selection_indices_unique_and_in_bounds(
            n in 1usize..40,
            budget_frac in 0.01f64..1.0,
            seed in 0u64..1000,
        ) {
            let budget = ((n as f64 * budget_frac).ceil() as usize).clamp(1, n);
            let r = select_random(n, budget, seed).unwrap();
            prop_assert_eq!(r.chosen.len(), budget);
            let mut sorted = r.chosen.clone();
            sorted.sort_unstable();
            sorted.dedup();
            prop_assert_eq!(sorted.len(), budget);
            prop_assert!(r.chosen.iter().all(|&i| i < n));
        }

        #[test]
        fn prop_diversity_scale_equivariant(
            pool in prop::collection::vec(
                prop::collection::vec(-8.0f64..8.0, 2..=2), 2..15),
            k_frac in 0.1f64..1.0,
            scale_pow in 1i32..4,
        ) {
            // power-of-two scaling is exact in binary floating point, so
            // every distance comparison is preserved bit for bit
            let c = f64::powi(2.0, scale_pow);
            let k = ((pool.len() as f64 * k_frac).ceil() as usize).clamp(1, pool.len());
            let scaled: Vec<Vec<f64>> = pool
                .iter()
                .map(|p| p.iter().map(|&v| v * c).collect())
                .collect();
            let a = select_diversity(&pool, k).unwrap();
            let b = select_diversity(&scaled, k).unwrap();
            prop_assert_eq!(a.chosen, b.chosen);
        }

        #[test]
        fn prop_uncertainty_class_permutation_invariant(
            probs in prop::collection::vec(
                prop::collection::vec(0.0f64..1.0, 4..=4), 2..12),
            rot in 1usize..4,
        ) {
            let permuted: Vec<Vec<f64>> = probs
                .iter()
                .map(|p| {
                    let mut q = p.clone();
                    q.rotate_left(rot);
                    q
                })
                .collect();
            let budget = probs.len() / 2 + 1;
            let a = select_uncertainty(&probs, budget, LabelMode::MultiLabel).unwrap();
            let b = select_uncertainty(&permuted, budget, LabelMode::MultiLabel).unwrap();
            prop_assert_eq!(a.chosen, b.chosen);
        }
    }
}
