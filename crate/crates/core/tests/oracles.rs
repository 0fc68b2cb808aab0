//! Inference checked against values computed outside this crate: exhaustive
//! enumeration for small binary models and closed forms for linear-Gaussian
//! ones.

mod common;

use causal_twin::data::PhysicalClass;
use causal_twin::inference::{
    backdoor_effect, counterfactual, find_adjustment_set, frontdoor_effect, interventional_mean,
    simulate_do, AdjustmentKind, CounterfactualQuery, Exogenous, Identification, Outcome,
};
use causal_twin::{CausalGraph, Edge, Intervention, TimeSeriesFrame, VariableMeta};
use common::*;

#[test]
fn simulated_intervention_matches_enumeration() {
    let scm = backdoor_model();
    let history = [0.0; 3];
    for (x, truth) in [(1.0, BACKDOOR_DO1), (0.0, BACKDOOR_DO0)] {
        let e = interventional_mean(&scm, &Intervention::single(1, x), 2, &history, 1, SAMPLES, 7).unwrap();
        assert!((e.mean - truth).abs() < TOL, "do(X={x}): {} vs {truth}", e.mean);
    }
    let scm = frontdoor_model();
    for (x, truth) in [(1.0, FRONTDOOR_DO1), (0.0, FRONTDOOR_DO0)] {
        let e = interventional_mean(&scm, &Intervention::single(1, x), 3, &[0.0; 4], 1, SAMPLES, 7).unwrap();
        assert!((e.mean - truth).abs() < TOL, "do(X={x}): {} vs {truth}", e.mean);
    }
}

#[test]
fn pseudo_random_intervention_within_sampling_error() {
    let scm = backdoor_model();
    let n = 200_000;
    let tr = simulate_do(
        &scm,
        &Intervention::single(1, 1.0),
        &[0.0; 3],
        &Exogenous::Sampled { samples: n, seed: 11 },
        1,
    )
    .unwrap();
    let mean = tr.iter().map(|t| t.value(0, 2)).sum::<f64>() / n as f64;
    let se = (BACKDOOR_DO1 * (1.0 - BACKDOOR_DO1) / n as f64).sqrt();
    assert!((mean - BACKDOOR_DO1).abs() < 4.0 * se, "{mean} vs {BACKDOOR_DO1} (se {se})");
}

#[test]
fn backdoor_adjustment_matches_enumeration() {
    let data = backdoor_data(SAMPLES);
    for (x, truth) in [(1.0, BACKDOOR_DO1), (0.0, BACKDOOR_DO0)] {
        let est = backdoor_effect(&data, 1, x, 2, &[0]).unwrap();
        assert!((est.value - truth).abs() < TOL, "do(X={x}): {} vs {truth}", est.value);
        assert_eq!(est.empty_strata, 0);
    }
    // Without adjustment the estimate is the confounded conditional.
    let naive = backdoor_effect(&data, 1, 1.0, 2, &[]).unwrap();
    assert!((naive.value - BACKDOOR_NAIVE1).abs() < TOL, "{}", naive.value);
    assert!((naive.value - BACKDOOR_DO1).abs() > 10.0 * TOL);
}

#[test]
fn frontdoor_adjustment_matches_enumeration() {
    let data = frontdoor_data(SAMPLES);
    for (x, truth) in [(1.0, FRONTDOOR_DO1), (0.0, FRONTDOOR_DO0)] {
        let est = frontdoor_effect(&data, 1, x, 3, &[2]).unwrap();
        assert!((est.value - truth).abs() < TOL, "do(X={x}): {} vs {truth}", est.value);
    }
}

#[test]
fn identification_picks_the_matching_criterion() {
    let g = CausalGraph::new(
        vec!["Z".into(), "X".into(), "Y".into()],
        1,
        0.05,
        vec![Edge::new(0, 0, 1), Edge::new(0, 0, 2), Edge::new(1, 0, 2)],
    )
    .unwrap();
    match find_adjustment_set(&g, &[], 1, 2).unwrap() {
        Identification::Identified(s) => {
            assert_eq!(s.kind, AdjustmentKind::Backdoor);
            assert_eq!(s.variables, vec![0]);
        }
        other => panic!("{other:?}"),
    }
    let g = CausalGraph::new(
        vec!["X".into(), "M".into(), "Y".into()],
        1,
        0.05,
        vec![Edge::new(0, 0, 1), Edge::new(1, 0, 2)],
    )
    .unwrap();
    match find_adjustment_set(&g, &[(0, 2)], 0, 2).unwrap() {
        Identification::Identified(s) => {
            assert_eq!(s.kind, AdjustmentKind::Frontdoor);
            assert_eq!(s.variables, vec![1]);
        }
        other => panic!("{other:?}"),
    }
    let g = CausalGraph::new(vec!["X".into(), "Y".into()], 1, 0.05, vec![Edge::new(0, 0, 1)]).unwrap();
    assert_eq!(find_adjustment_set(&g, &[(0, 1)], 0, 1).unwrap(), Identification::NotIdentifiable);
}

#[test]
fn linear_gaussian_counterfactual_closed_form() {
    let (scm, a, b, st) = linear_gaussian();
    let obs = vec![
        -1.2, 2.5, //
        -0.7, 3.9, //
        -1.4, 1.8, //
        -0.9, 3.3, //
        -1.1, 2.2, //
        -0.6, 4.1,
    ];
    let rows = obs.len() / 2;
    let (from, x_new) = (2, 0.4);
    let q = CounterfactualQuery {
        evidence: evidence(obs.clone()),
        intervention: Intervention::single(0, x_new),
        from,
        outcome: Outcome::Variable(1),
        at: None,
    };
    let r = counterfactual(&scm, &q, 16, 0).unwrap();
    assert!(r.deterministic);

    // Abducted noise is unchanged, so the counterfactual differs from the
    // evidence by the propagated shift in standard units.
    let mut dz = 0.0;
    for t in from..rows {
        let dx = (x_new - obs[2 * t]) / st[0].std;
        dz = a * dz + b * dx;
        let y_cf = obs[2 * t + 1] + st[1].std * dz;
        assert!((r.trajectory[2 * t + 1] - y_cf).abs() < 1e-9, "row {t}");
        assert!((r.trajectory[2 * t] - x_new).abs() < 1e-12);
    }
    let y_last = obs[2 * (rows - 1) + 1] + st[1].std * dz;
    assert!((r.point - y_last).abs() < 1e-9);
    assert!((r.mean - y_last).abs() < 1e-9);
    for t in 0..from {
        assert_eq!(&r.trajectory[2 * t..2 * t + 2], &obs[2 * t..2 * t + 2]);
    }
}

#[test]
fn factual_intervention_reproduces_evidence() {
    let (scm, ..) = linear_gaussian();
    let obs = vec![0.3, 1.0, -2.0, 5.5, 0.1, -0.4, 1.7, 2.9];
    let q = CounterfactualQuery {
        evidence: evidence(obs.clone()),
        intervention: Intervention::single(0, obs[6]),
        from: 3,
        outcome: Outcome::Variable(1),
        at: None,
    };
    let r = counterfactual(&scm, &q, 16, 0).unwrap();
    assert_eq!(r.trajectory, obs);
    assert_eq!(r.point, obs[7]);

    let scm = frontdoor_model();
    let rows = [[1.0, 1.0, 0.0, 1.0], [0.0, 0.0, 1.0, 1.0], [1.0, 0.0, 0.0, 0.0]];
    let values: Vec<f64> = rows.iter().flatten().copied().collect();
    let meta = ["U", "X", "M", "Y"]
        .iter()
        .map(|s| VariableMeta::binary(*s, PhysicalClass::Pump, 1))
        .collect();
    let ev = TimeSeriesFrame::new(meta, vec![0, 1, 2], values.clone(), None).unwrap();
    let q = CounterfactualQuery {
        evidence: ev,
        intervention: Intervention::single(1, 0.0),
        from: 2,
        outcome: Outcome::Variable(3),
        at: None,
    };
    let r = counterfactual(&scm, &q, 256, 3).unwrap();
    assert_eq!(r.trajectory, values);
    assert!(r.deterministic);
    assert_eq!((r.point, r.mean), (0.0, 0.0));
}
