use std::collections::BTreeMap;

use proptest::prelude::*;

use robustfl::defense::{
    angle_filter, loss_filter, robust_aggregate_updates, AggregatorSpec, FilterSpec,
};
use robustfl::ParamVector;

fn updates_from(vs: Vec<Vec<f64>>) -> BTreeMap<usize, ParamVector> {
    vs.into_iter()
        .enumerate()
        .map(|(i, v)| (i, ParamVector::new(v)))
        .collect()
}

proptest! {
    #[test]
    fn angle_filter_at_zero_is_the_halfspace_test(
        grad in prop::collection::vec(-3.0f64..3.0, 4).prop_filter("nondegenerate", |g| g.iter().any(|v| v.abs() > 1e-3)),
        deltas in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 4), 1..15),
    ) {
        let g = ParamVector::new(grad);
        let neg = g.scale(-1.0);
        let updates = updates_from(deltas);
        let report = angle_filter(&updates, &g, 0.0).unwrap();
        let expected: Vec<usize> = updates
            .iter()
            .filter(|(_, d)| d.norm() >= 1e-12 && d.dot(&neg).unwrap() >= 0.0)
            .map(|(&i, _)| i)
            .collect();
        prop_assert_eq!(report.accepted, expected);
    }

    #[test]
    fn loss_filter_keeps_the_top_scores(
        deltas in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 3), 1..26),
        theta in 0.01f64..0.99,
        rho in 0.0f64..2.0,
    ) {
        let g = ParamVector::new(vec![0.5, -1.0, 0.25]);
        let updates = updates_from(deltas);
        let report = loss_filter(&updates, &g, rho, theta).unwrap();
        let n = updates.len();
        prop_assert_eq!(report.accepted.len(), n - (theta * n as f64).floor() as usize);
        let worst_kept = report.accepted.iter().map(|i| report.scores[i]).fold(f64::INFINITY, f64::min);
        for (i, s) in &report.scores {
            if !report.accepted.contains(i) {
                prop_assert!(*s <= worst_kept);
            }
        }
    }

    #[test]
    fn aggregate_step_never_exceeds_tau(
        deltas in prop::collection::vec(prop::collection::vec(-50.0f64..50.0, 3), 1..10),
        tau in 0.01f64..10.0,
    ) {
        let x_t = ParamVector::new(vec![1.0, 2.0, 3.0]);
        let updates = updates_from(deltas);
        let g = ParamVector::new(vec![1.0, 0.0, 0.0]);
        for filter in [FilterSpec::None, FilterSpec::Angle { alpha: 0.0 }, FilterSpec::Loss { rho: 0.1, theta: 0.5 }] {
            let (x_bar, _) = robust_aggregate_updates(&x_t, &updates, &g, &filter, &AggregatorSpec::default(), tau).unwrap();
            prop_assert!(x_bar.distance(&x_t).unwrap() <= tau * (1.0 + 1e-12));
        }
    }
}

#[test]
fn loss_filter_cardinality_table() {
    let g = ParamVector::new(vec![1.0]);
    for n in 1..=25usize {
        let updates = updates_from((0..n).map(|i| vec![i as f64 * 0.1 - 1.0]).collect());
        for (theta, rejected) in [(0.1, n / 10), (0.5, n / 2), (0.9, (9 * n) / 10)] {
            let r = loss_filter(&updates, &g, 0.1, theta).unwrap();
            assert_eq!(r.accepted.len(), n - rejected, "n={n} theta={theta}");
        }
    }
}

#[test]
fn loss_filter_ties_reject_lower_ids_first() {
    let updates = updates_from(vec![vec![1.0]; 4]);
    let r = loss_filter(&updates, &ParamVector::new(vec![-1.0]), 0.0, 0.5).unwrap();
    assert_eq!(r.accepted, vec![2, 3]);
}

#[test]
fn degenerate_gradient_falls_back_to_no_filter() {
    let x_t = ParamVector::new(vec![0.0, 0.0]);
    let updates = updates_from(vec![vec![0.1, 0.0], vec![0.0, 0.1]]);
    let (x_bar, report) = robust_aggregate_updates(
        &x_t,
        &updates,
        &ParamVector::new(vec![0.0, 0.0]),
        &FilterSpec::Angle { alpha: 0.0 },
        &AggregatorSpec::average(),
        1.0,
    )
    .unwrap();
    assert!(report.degenerate_fallback);
    assert_eq!(report.accepted, vec![0, 1]);
    assert!((x_bar[0] - 0.05).abs() < 1e-15 && (x_bar[1] - 0.05).abs() < 1e-15);
}

#[test]
fn empty_acceptance_keeps_the_model() {
    let x_t = ParamVector::new(vec![0.3, -0.2]);
    let updates = updates_from(vec![vec![1.0, 0.0], vec![2.0, 0.0]]);
    let (x_bar, report) = robust_aggregate_updates(
        &x_t,
        &updates,
        &ParamVector::new(vec![1.0, 0.0]),
        &FilterSpec::Angle { alpha: 0.5 },
        &AggregatorSpec::default(),
        1.0,
    )
    .unwrap();
    assert!(report.empty_acceptance);
    assert_eq!(x_bar, x_t);
}
