mod common;

use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::Rng;

use common::brute_geomed_2d;
use robustfl::defense::{
    average, geomed_objective, geometric_median, geometric_median_traced, robust_aggregate,
    AggregatorSpec, FilterSpec, GeoMedMode,
};
use robustfl::seed::{stream, Stream};
use robustfl::ParamVector;

fn pv(v: &[f64]) -> ParamVector {
    ParamVector::new(v.to_vec())
}

#[test]
fn reference_mode_reaches_the_oracle_in_2d() {
    let spec = AggregatorSpec::default();
    for case in 0..30u64 {
        let mut rng = stream(case, Stream::Init, &[2]);
        let n = rng.random_range(3..=7);
        let pts: Vec<[f64; 2]> = (0..n)
            .map(|_| [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)])
            .collect();
        let vecs: Vec<ParamVector> = pts.iter().map(|p| pv(p)).collect();
        let refs: Vec<&ParamVector> = vecs.iter().collect();
        let trace = geometric_median_traced(&refs, &spec, GeoMedMode::Reference).unwrap();
        let got = geomed_objective(&trace.median, &refs).unwrap();
        assert!(got <= brute_geomed_2d(&pts) * (1.0 + 1e-6), "case {case}");
        assert!(trace.objectives.windows(2).all(|w| w[1] <= w[0]));
    }
}

#[test]
fn collinear_median_is_the_middle_point() {
    let pts = [pv(&[0.0, 0.0]), pv(&[1.0, 0.0]), pv(&[10.0, 0.0])];
    let refs: Vec<&ParamVector> = pts.iter().collect();
    let z = geometric_median(&refs, &AggregatorSpec::default(), GeoMedMode::Reference).unwrap();
    assert!(z.distance(&pts[1]).unwrap() < 1e-6);
}

#[test]
fn online_mode_respects_the_iteration_budget() {
    let mut rng = stream(9, Stream::Init, &[]);
    let pts: Vec<ParamVector> = (0..9)
        .map(|_| pv(&[rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]))
        .collect();
    let refs: Vec<&ParamVector> = pts.iter().collect();
    let trace =
        geometric_median_traced(&refs, &AggregatorSpec::default(), GeoMedMode::Online).unwrap();
    assert!(trace.iterations() <= 4);
}

#[test]
fn single_point_and_duplicates() {
    let p = pv(&[1.5, -2.0, 3.0]);
    let z = geometric_median(&[&p], &AggregatorSpec::default(), GeoMedMode::Reference).unwrap();
    assert_eq!(z, p);
    let z = geometric_median(
        &[&p, &p, &p],
        &AggregatorSpec::default(),
        GeoMedMode::Reference,
    )
    .unwrap();
    assert_eq!(z, p);
}

#[test]
fn breakdown_against_far_outliers() {
    for k in 1..=4usize {
        for r in [1e3, 1e6, 1e9] {
            let mut rng = stream(k as u64, Stream::Init, &[r as u64]);
            let mut pts = Vec::new();
            for _ in 0..10 {
                let (a, rad): (f64, f64) = (
                    rng.random_range(0.0..std::f64::consts::TAU),
                    rng.random_range(0.0..1.0),
                );
                pts.push(pv(&[rad * a.cos(), rad * a.sin()]));
            }
            let honest: Vec<&ParamVector> = pts.iter().collect();
            let honest_mean = average(&honest, &[1.0; 10]).unwrap();
            for _ in 0..k {
                pts.push(pv(&[r, 0.0]));
            }
            let refs: Vec<&ParamVector> = pts.iter().collect();
            let z =
                geometric_median(&refs, &AggregatorSpec::default(), GeoMedMode::Reference).unwrap();
            assert!(z.distance(&honest_mean).unwrap() <= 10.0, "k={k} R={r}");
            let avg = average(&refs, &vec![1.0; refs.len()]).unwrap();
            assert!(avg.norm() >= r * k as f64 / 14.0 * 0.9);
        }
    }
}

#[test]
fn robust_aggregate_with_outliers_stays_near_honest_models() {
    let x_t = pv(&[0.0, 0.0]);
    let mut models = BTreeMap::new();
    for i in 0..6 {
        models.insert(i, pv(&[0.1 * i as f64, 0.1]));
    }
    for i in 6..10 {
        models.insert(i, pv(&[1e6, -1e6]));
    }
    let agg = AggregatorSpec {
        weiszfeld_max_iters: 10_000,
        weiszfeld_rel_tol: 1e-12,
        ..AggregatorSpec::default()
    };
    let grad = pv(&[-1.0, 0.0]);
    let (x_bar, report) =
        robust_aggregate(&x_t, &models, &grad, &FilterSpec::None, &agg, 1.0).unwrap();
    assert!(x_bar.norm() <= 1.0);
    assert!(
        x_bar.as_slice()[1] > 0.0,
        "pulled toward the outliers: {x_bar:?}"
    );
    assert_eq!(report.accepted.len(), 10);

    let (x_avg, _) = robust_aggregate(
        &x_t,
        &models,
        &grad,
        &FilterSpec::None,
        &AggregatorSpec::average(),
        1.0,
    )
    .unwrap();
    assert!(x_avg.as_slice()[1] < 0.0);
}

#[test]
fn aggregate_step_is_clipped_to_tau() {
    let x_t = pv(&[1.0, 1.0]);
    let models = BTreeMap::from([(0, pv(&[11.0, 1.0])), (1, pv(&[11.0, 1.0]))]);
    for tau in [0.1, 1.0, 5.0] {
        let (x_bar, _) = robust_aggregate(
            &x_t,
            &models,
            &pv(&[-1.0, 0.0]),
            &FilterSpec::None,
            &AggregatorSpec::default(),
            tau,
        )
        .unwrap();
        assert!(x_bar.distance(&x_t).unwrap() <= tau * (1.0 + 1e-12));
    }
}

proptest! {
    #[test]
    fn weiszfeld_objective_never_increases(
        pts in prop::collection::vec(prop::collection::vec(-100.0f64..100.0, 3), 2..9)
    ) {
        let vecs: Vec<ParamVector> = pts.into_iter().map(ParamVector::new).collect();
        let refs: Vec<&ParamVector> = vecs.iter().collect();
        let trace = geometric_median_traced(&refs, &AggregatorSpec::default(), GeoMedMode::Reference).unwrap();
        prop_assert!(trace.objectives.windows(2).all(|w| w[1] <= w[0]));
        let mean = average(&refs, &vec![1.0; refs.len()]).unwrap();
        prop_assert!(geomed_objective(&trace.median, &refs).unwrap() <= geomed_objective(&mean, &refs).unwrap() + 1e-6);
    }

    #[test]
    fn geomed_is_translation_equivariant(
        pts in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 2), 3..7),
        shift in prop::collection::vec(-10.0f64..10.0, 2),
    ) {
        let vecs: Vec<ParamVector> = pts.into_iter().map(ParamVector::new).collect();
        let s = ParamVector::new(shift);
        let moved: Vec<ParamVector> = vecs.iter().map(|v| v.add(&s).unwrap()).collect();
        let spec = AggregatorSpec::default();
        let a = geometric_median(&vecs.iter().collect::<Vec<_>>(), &spec, GeoMedMode::Reference).unwrap();
        let b = geometric_median(&moved.iter().collect::<Vec<_>>(), &spec, GeoMedMode::Reference).unwrap();
        prop_assert!(a.add(&s).unwrap().distance(&b).unwrap() < 1e-4);
    }
}
