//! Randomized invariant checks across the public API. Statistical
//! behaviour (regret curves, estimator error) lives in `acceptance.rs`;
//! everything here must hold for every input, not just on average.

use proptest::prelude::*;
use rank_ucr::glm::{
    self, AugFeature, Bound, CovMatrix, GlmFamily, InteractionLog, ItemParams,
};
use rank_ucr::matching::{self, WeightMatrix};
use rank_ucr::policy::Slate;
use rank_ucr::rewards::{self, AggregationSpec};
use rank_ucr::simenv::{self, Context};

const DIM_CAP: usize = 4;

fn feature(raw: &[f64], dim: usize) -> AugFeature {
    AugFeature::new(raw[0], &raw[1..dim])
}

/// Covariance built from rank-1 updates, the only way the policies ever
/// grow one.
fn cov_from(feats: &[Vec<f64>], dim: usize) -> CovMatrix {
    let mut v = CovMatrix::zeros(dim);
    for f in feats {
        v.add_outer(&feature(f, dim)).unwrap();
    }
    v
}

fn raw_vec() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0..1.0f64, DIM_CAP)
}

proptest! {
    // ---- confidence bounds -------------------------------------------

    #[test]
    fn optimistic_bounds_bracket_the_plugin_mean(
        dim in 2usize..=DIM_CAP,
        theta in prop::collection::vec(-3.0..3.0f64, DIM_CAP),
        feats in prop::collection::vec(raw_vec(), 8),
        query in raw_vec(),
        xi in 0.0..4.0f64,
        logistic in any::<bool>(),
    ) {
        let family = if logistic {
            GlmFamily::Logistic
        } else {
            GlmFamily::Linear { noise_scale: 0.3 }
        };
        let params = ItemParams::new(theta[0], theta[1..dim].to_vec());
        let v = cov_from(&feats, dim);
        let z = feature(&query, dim);
        // eight random rank-1 terms can still be singular; skip those
        let mid = glm::mean(&family, &params, &z).unwrap();
        let lo = glm::confidence_mean(&family, &params, &v, &z, xi, Bound::Lower);
        let hi = glm::confidence_mean(&family, &params, &v, &z, xi, Bound::Upper);
        prop_assume!(lo.is_ok() && hi.is_ok());
        let (lo, hi) = (lo.unwrap(), hi.unwrap());
        prop_assert!(lo <= mid + 1e-12, "lower {lo} above mean {mid}");
        prop_assert!(hi >= mid - 1e-12, "upper {hi} below mean {mid}");
        if xi == 0.0 {
            prop_assert_eq!(lo, hi);
        }
    }

    #[test]
    fn adding_an_observation_never_widens_confidence(
        dim in 2usize..=DIM_CAP,
        feats in prop::collection::vec(raw_vec(), 8),
        extra in raw_vec(),
        query in raw_vec(),
    ) {
        let mut v = cov_from(&feats, dim);
        let z = feature(&query, dim);
        let before = glm::mahalanobis_width(&v, &z);
        prop_assume!(before.is_ok());
        let before = before.unwrap();
        v.add_outer(&feature(&extra, dim)).unwrap();
        let after = glm::mahalanobis_width(&v, &z).unwrap();
        prop_assert!(
            after <= before + 1e-9,
            "width grew from {before} to {after}"
        );
    }

    #[test]
    fn logistic_means_stay_clamped_inside_the_open_unit_interval(
        dim in 2usize..=DIM_CAP,
        theta in prop::collection::vec(-1e3..1e3f64, DIM_CAP),
        query in raw_vec(),
    ) {
        let params = ItemParams::new(theta[0], theta[1..dim].to_vec());
        let z = feature(&query, dim);
        let m = glm::mean(&GlmFamily::Logistic, &params, &z).unwrap();
        prop_assert!((1e-12..=1.0 - 1e-12).contains(&m), "mean {m} escaped the clamp");
    }

    // ---- maximum-likelihood fitting ----------------------------------

    #[test]
    fn logistic_fit_zeroes_the_score(
        entries in prop::collection::vec(
            (0usize..4, prop::collection::vec(-0.5..0.5f64, 2), any::<bool>()),
            10..17,
        ),
    ) {
        let mut log = InteractionLog::new();
        for (p, ctx, y) in &entries {
            let z = AugFeature::new(glm::rescaled_position(*p, 4), ctx);
            log.push(z, f64::from(*y));
        }
        // separable logs have no maximizer and are rejected upstream
        let fit = glm::fit_mle(&GlmFamily::Logistic, &log, 0.0);
        prop_assume!(fit.is_ok());
        let theta = fit.unwrap();
        let mut score = [0.0; 3];
        for (z, y) in log.entries() {
            let resid = y - glm::sigmoid(theta.dot(z));
            for (i, s) in score.iter_mut().enumerate() {
                *s += resid * z.vector()[i];
            }
        }
        for s in score {
            prop_assert!(s.abs() <= 1e-6, "score component {s} too large");
        }
    }

    // ---- assignment solving ------------------------------------------

    #[test]
    fn solver_matches_the_exhaustive_oracle(
        n in 1usize..=6,
        k_pick in any::<prop::sample::Index>(),
        weights in prop::collection::vec(-10.0..10.0f64, 36),
    ) {
        let k = k_pick.index(n) + 1;
        let w = WeightMatrix::new(n, k, weights[..n * k].to_vec()).unwrap();
        let fast = matching::solve(&w).unwrap();
        let slow = matching::brute_force(&w).unwrap();
        prop_assert_eq!(&fast.items, &slow.items);
        prop_assert!(
            (fast.total - slow.total).abs() <= 1e-9 * (1.0 + slow.total.abs()),
            "totals diverge: {} vs {}",
            fast.total,
            slow.total
        );
    }

    #[test]
    fn constant_weight_shifts_move_the_total_by_k_times_the_shift(
        n in 1usize..=6,
        k_pick in any::<prop::sample::Index>(),
        weights in prop::collection::vec(-10.0..10.0f64, 36),
        shift in -5.0..5.0f64,
    ) {
        let k = k_pick.index(n) + 1;
        let base = WeightMatrix::new(n, k, weights[..n * k].to_vec()).unwrap();
        let moved = WeightMatrix::new(
            n,
            k,
            weights[..n * k].iter().map(|v| v + shift).collect(),
        )
        .unwrap();
        let t0 = matching::solve(&base).unwrap().total;
        let t1 = matching::solve(&moved).unwrap().total;
        let want = t0 + shift * k as f64;
        prop_assert!(
            (t1 - want).abs() <= 1e-9 * (1.0 + want.abs()),
            "shifted total {t1}, expected {want}"
        );
    }

    #[test]
    fn relabeling_items_leaves_the_optimal_total_unchanged(
        n in 2usize..=6,
        k_pick in any::<prop::sample::Index>(),
        weights in prop::collection::vec(-10.0..10.0f64, 36),
        perm in Just((0usize..6).collect::<Vec<_>>()).prop_shuffle(),
    ) {
        let k = k_pick.index(n) + 1;
        let w = WeightMatrix::new(n, k, weights[..n * k].to_vec()).unwrap();
        let perm: Vec<usize> = perm.into_iter().filter(|&i| i < n).collect();
        let relabeled =
            WeightMatrix::from_fn(n, k, |item, pos| Ok(w.get(perm[item], pos))).unwrap();
        let t0 = matching::solve(&w).unwrap().total;
        let t1 = matching::solve(&relabeled).unwrap().total;
        prop_assert!(
            (t1 - t0).abs() <= 1e-9 * (1.0 + t0.abs()),
            "permuted total {t1} vs {t0}"
        );
    }

    // ---- reward aggregation ------------------------------------------

    #[test]
    fn click_through_aggregate_equals_one_minus_the_miss_product(
        mus in prop::collection::vec(0.0..=0.999_999f64, 1..=8),
    ) {
        let items: Vec<usize> = (0..mus.len()).collect();
        let got = rewards::aggregate(&AggregationSpec::ClickThrough, &items, &mus).unwrap();
        let direct = 1.0 - mus.iter().map(|m| 1.0 - m).product::<f64>();
        prop_assert!(
            (got - direct).abs() <= 1e-12,
            "log-space {got} vs direct {direct}"
        );
    }

    #[test]
    fn aggregates_are_monotone_in_every_item_mean(
        which in 0usize..3,
        prices in prop::collection::vec(0.1..5.0f64, 8),
        mus in prop::collection::vec(0.0..=0.9f64, 1..=8),
        bump_at in any::<prop::sample::Index>(),
        bump in 1e-6..0.09f64,
    ) {
        let spec = match which {
            0 => AggregationSpec::Additive,
            1 => AggregationSpec::Revenue {
                prices: prices[..mus.len()].to_vec(),
            },
            _ => AggregationSpec::ClickThrough,
        };
        let items: Vec<usize> = (0..mus.len()).collect();
        let lo = rewards::aggregate(&spec, &items, &mus).unwrap();
        let mut raised = mus.clone();
        let at = bump_at.index(raised.len());
        raised[at] += bump;
        let hi = rewards::aggregate(&spec, &items, &raised).unwrap();
        prop_assert!(hi >= lo - 1e-12, "aggregate fell from {lo} to {hi}");
    }

    // ---- environment and feature geometry ----------------------------

    #[test]
    fn augmented_features_stay_inside_the_unit_ball(
        coords in prop::collection::vec(-1.0..1.0f64, 1..=6),
        k in 1usize..=6,
        p_pick in any::<prop::sample::Index>(),
    ) {
        let norm = coords.iter().map(|c| c * c).sum::<f64>().sqrt();
        let coords: Vec<f64> = if norm > 1.0 {
            coords.iter().map(|c| c / norm).collect()
        } else {
            coords
        };
        let ctx = Context::new(coords);
        let z = ctx.augmented(p_pick.index(k), k);
        let zn = z.vector().norm();
        prop_assert!(zn <= 1.0 + 1e-12, "augmented norm {zn} exceeds 1");
    }

    #[test]
    fn no_slate_beats_the_reported_optimum(
        seed in any::<u64>(),
        n in 2usize..=5,
        k_pick in any::<prop::sample::Index>(),
        d in 1usize..=3,
        coords in prop::collection::vec(-0.6..0.6f64, 3),
        order in Just((0usize..5).collect::<Vec<_>>()).prop_shuffle(),
    ) {
        let k = k_pick.index(n) + 1;
        let env = simenv::generate_environment(
            seed,
            n,
            k,
            d,
            GlmFamily::Logistic,
            AggregationSpec::ClickThrough,
        )
        .unwrap();
        let ctx = Context::new(coords[..d].to_vec());
        let picked: Vec<usize> = order.into_iter().filter(|&i| i < n).take(k).collect();
        let candidate = Slate::new(picked, n).unwrap();
        let (opt_slate, opt_value) = rewards::optimal_slate(&env, env.spec(), &ctx).unwrap();
        let cand_value =
            rewards::expected_list_reward(&env, env.spec(), &ctx, &candidate).unwrap();
        let opt_check =
            rewards::expected_list_reward(&env, env.spec(), &ctx, &opt_slate).unwrap();
        prop_assert!(
            (opt_check - opt_value).abs() <= 1e-12 * (1.0 + opt_value.abs()),
            "reported optimum {opt_value} disagrees with rescoring {opt_check}"
        );
        prop_assert!(
            cand_value <= opt_value + 1e-9,
            "candidate {cand_value} beats optimum {opt_value}"
        );
        let regret = rewards::instant_regret(&env, env.spec(), &ctx, &candidate).unwrap();
        prop_assert!(regret >= -1e-9, "negative regret {regret}");
    }
}
