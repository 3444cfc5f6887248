//! Invariants checked on randomly generated inputs.

use attlab::dataset::{compose_sample, derive_indicators, summarize, ObservationTable};
use attlab::estimators::{balance_weights, estimate, hajek_weights, BalanceMethod, EstimatorOptions, EstimatorTag};
use attlab::matching::{match_knn, Metric};
use attlab::overlap::{greedy_match, trim_crump, trim_dehejia, trim_threshold, PropensityFit, PropensityMethod, TrimReport};
use nalgebra::DMatrix;
use proptest::prelude::*;

const DETERMINISTIC: [EstimatorTag; 6] = [
    EstimatorTag::DiffInMeans,
    EstimatorTag::Ols,
    EstimatorTag::OlsInteract,
    EstimatorTag::Matching,
    EstimatorTag::Cbps,
    EstimatorTag::Entropy,
];

fn table(x: Vec<f64>, p: usize, w: Vec<u8>, y: Vec<f64>) -> ObservationTable {
    let n = w.len();
    let names = (0..p).map(|j| format!("x{j}")).collect();
    ObservationTable::from_parts(names, DMatrix::from_row_slice(n, p, &x), w, y).unwrap()
}

/// Samples with 4 to 9 treated and 8 to 20 controls over two covariates.
fn sample() -> impl Strategy<Value = ObservationTable> {
    (4usize..10, 8usize..21).prop_flat_map(|(n1, n0)| {
        let n = n1 + n0;
        (
            prop::collection::vec(-50i32..50, n * 2),
            prop::collection::vec(-1000i32..1000, n),
        )
            .prop_map(move |(x, y)| {
                let w = (0..n).map(|i| (i < n1) as u8).collect();
                table(x.into_iter().map(f64::from).collect(), 2, w, y.into_iter().map(f64::from).collect())
            })
    })
}

fn scores_and_arms() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    prop::collection::vec((0.001f64..0.999, any::<bool>()), 4..40).prop_map(|v| {
        let mut w: Vec<u8> = v.iter().map(|p| p.1 as u8).collect();
        w[0] = 1;
        w[1] = 0;
        (v.iter().map(|p| p.0).collect(), w)
    })
}

fn partitions(r: &TrimReport, w: &[u8]) -> bool {
    let mut all: Vec<usize> = r
        .retained_treated
        .iter()
        .chain(&r.retained_control)
        .chain(&r.dropped_treated)
        .chain(&r.dropped_control)
        .copied()
        .collect();
    all.sort_unstable();
    all == (0..w.len()).collect::<Vec<_>>()
        && r.retained_treated.iter().chain(&r.dropped_treated).all(|&i| w[i] == 1)
        && r.retained_control.iter().chain(&r.dropped_control).all(|&i| w[i] == 0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matching_is_invariant_to_power_of_two_rescaling(s in sample(), k in 1usize..4, e in -6i32..7) {
        let c = 2f64.powi(e);
        let xt = s.x().select_rows(&s.treated_indices());
        let xc = s.x().select_rows(&s.control_indices());
        let a = match_knn(&xt, &xc, k, Metric::NormalizedEuclidean).unwrap();
        let b = match_knn(&(xt * c), &(xc * c), k, Metric::NormalizedEuclidean).unwrap();
        for (u, v) in a.units.iter().zip(&b.units) {
            prop_assert_eq!(&u.controls, &v.controls);
        }
    }

    #[test]
    fn matching_with_replacement_succeeds_whenever_controls_suffice(s in sample(), k in 1usize..9) {
        let xt = s.x().select_rows(&s.treated_indices());
        let xc = s.x().select_rows(&s.control_indices());
        for m in [Metric::NormalizedEuclidean, Metric::Mahalanobis] {
            let r = match_knn(&xt, &xc, k, m);
            prop_assert!(r.is_ok(), "{:?}", r.err());
            prop_assert!(r.unwrap().units.iter().all(|u| u.controls.len() == k));
        }
    }

    #[test]
    fn shifting_outcomes_leaves_estimates_unchanged(s in sample(), shift in -5000i32..5000) {
        let y: Vec<f64> = s.y().iter().map(|v| v + f64::from(shift)).collect();
        let moved = s.with_outcome("y", y).unwrap();
        let o = EstimatorOptions::default();
        for tag in DETERMINISTIC {
            if let (Ok(a), Ok(b)) = (estimate(&s, tag, &o), estimate(&moved, tag, &o)) {
                let tol = 1e-7 * (1.0 + a.se + f64::from(shift).abs());
                prop_assert!((a.point - b.point).abs() <= tol, "{tag}: {} vs {}", a.point, b.point);
                prop_assert!((a.se - b.se).abs() <= tol, "{tag} se: {} vs {}", a.se, b.se);
            }
        }
    }

    #[test]
    fn scaling_outcomes_scales_points_and_errors(s in sample(), lambda in 0.01f64..100.0) {
        let y: Vec<f64> = s.y().iter().map(|v| v * lambda).collect();
        let scaled = s.with_outcome("y", y).unwrap();
        let o = EstimatorOptions::default();
        for tag in DETERMINISTIC {
            if let (Ok(a), Ok(b)) = (estimate(&s, tag, &o), estimate(&scaled, tag, &o)) {
                let tol = 1e-8 * lambda * (1.0 + a.point.abs() + a.se);
                prop_assert!((a.point * lambda - b.point).abs() <= tol, "{tag}: {} vs {}", a.point * lambda, b.point);
                prop_assert!((a.se * lambda - b.se).abs() <= tol, "{tag} se");
            }
        }
    }

    #[test]
    fn hajek_weights_are_a_distribution(scores in prop::collection::vec(0.0001f64..0.9999, 1..50)) {
        let w = hajek_weights(&scores).unwrap();
        prop_assert!((w.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(w.as_slice().iter().all(|&v| v > 0.0));
    }

    #[test]
    fn balance_weights_sum_to_one_and_balance(s in sample()) {
        for m in [BalanceMethod::Entropy, BalanceMethod::Cbps] {
            if let Ok((w, d)) = balance_weights(&s, m, None, false) {
                prop_assert!((w.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-12);
                prop_assert!(d.get("max_imbalance").unwrap() <= 1e-6);
            }
        }
    }

    #[test]
    fn trim_rules_partition_their_input((scores, w) in scores_and_arms()) {
        let fit = PropensityFit::from_scores(scores, w.clone(), PropensityMethod::Logit).unwrap();
        for r in [trim_crump(&fit), trim_dehejia(&fit), trim_threshold(&fit, 0.2, 0.7)].into_iter().flatten() {
            prop_assert!(partitions(&r, &w));
        }
    }

    #[test]
    fn widening_the_threshold_window_keeps_retained_units(
        (scores, w) in scores_and_arms(),
        lo in 0.0f64..0.4,
        hi in 0.6f64..1.0,
        widen in 0.0f64..0.2,
    ) {
        let fit = PropensityFit::from_scores(scores, w, PropensityMethod::Logit).unwrap();
        if let Ok(narrow) = trim_threshold(&fit, lo, hi) {
            let wide = trim_threshold(&fit, (lo - widen).max(0.0), (hi + widen).min(1.0)).unwrap();
            let kept = wide.retained();
            prop_assert!(narrow.retained().iter().all(|i| kept.contains(i)));
        }
    }

    #[test]
    fn greedy_matching_uses_each_control_once(
        t in prop::collection::vec(0.0f64..1.0, 1..10),
        extra in prop::collection::vec(0.0f64..1.0, 0..10),
    ) {
        let treated: Vec<(usize, f64)> = t.iter().copied().enumerate().collect();
        let controls: Vec<(usize, f64)> = t.iter().chain(&extra).copied().enumerate().map(|(i, e)| (100 + i, e)).collect();
        let pairs = greedy_match(&treated, &controls).unwrap();
        prop_assert_eq!(pairs.len(), treated.len());
        let mut used: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        used.sort_unstable();
        used.dedup();
        prop_assert_eq!(used.len(), treated.len());
    }

    #[test]
    fn composed_samples_keep_arm_counts(n1 in 1usize..20, n0 in 1usize..30) {
        let a = table(vec![1.0; n1], 1, vec![1; n1], vec![0.0; n1]);
        let b = table(vec![2.0; n0], 1, vec![0; n0], vec![0.0; n0]);
        let stats = summarize(&compose_sample(&a, &b).unwrap()).unwrap();
        prop_assert_eq!((stats.n_treated, stats.n_control), (n1, n0));
    }

    #[test]
    fn indicators_flag_zero_earnings(re in prop::collection::vec(prop_oneof![Just(0.0), 0.01f64..50_000.0], 2..30)) {
        let n = re.len();
        let x: Vec<f64> = re.iter().flat_map(|&v| [v, v * 0.5]).collect();
        let t = ObservationTable::from_parts(vec!["re74".into(), "re75".into()], DMatrix::from_row_slice(n, 2, &x), vec![0; n], vec![0.0; n]).unwrap();
        let d = derive_indicators(&t);
        let (u74, u75) = (d.covariate("u74").unwrap(), d.covariate("u75").unwrap());
        for i in 0..n {
            prop_assert_eq!(u74[i], f64::from(u8::from(re[i] == 0.0)));
            prop_assert_eq!(u75[i], f64::from(u8::from(re[i] * 0.5 == 0.0)));
        }
        prop_assert_eq!(derive_indicators(&d), d);
    }
}
