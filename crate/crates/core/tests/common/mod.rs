//! Small models and data shared by the oracle and acceptance targets.
#![allow(dead_code)]

use causal_twin::data::PhysicalClass;
use causal_twin::qmc;
use causal_twin::scm::{EquationForm, FitFlags, Standardization, StructuralEquation};
use causal_twin::{CausalGraph, Edge, Scm, TimeSeriesFrame, VariableKind, VariableMeta};

/// Exact interventional probabilities from enumeration over every joint
/// assignment of the binary variables.
pub const BACKDOOR_DO1: f64 = 0.716309251830974;
pub const BACKDOOR_DO0: f64 = 0.373044525970175;
pub const BACKDOOR_NAIVE1: f64 = 0.737627900880326;
pub const FRONTDOOR_DO1: f64 = 0.727701317341921;
pub const FRONTDOOR_DO0: f64 = 0.612261998570251;

pub const SAMPLES: usize = 1_000_000;
pub const TOL: f64 = 1e-3;

pub fn logistic(target: usize, parents: Vec<(usize, usize)>, intercept: f64, linear: Vec<f64>) -> StructuralEquation {
    StructuralEquation {
        target,
        parents,
        form: EquationForm::Logistic { intercept, linear },
        flags: FitFlags::default(),
    }
}

pub fn binary_scm(names: &[&str], edges: Vec<Edge>, equations: Vec<StructuralEquation>) -> Scm {
    let n = names.len();
    let g = CausalGraph::new(names.iter().map(|s| s.to_string()).collect(), 1, 0.05, edges).unwrap();
    Scm::from_parts(
        g,
        vec![VariableKind::BinaryActuator; n],
        vec![Standardization { mean: 0.0, std: 1.0 }; n],
        equations,
    )
    .unwrap()
}

/// Z → X, Z → Y, X → Y.
pub fn backdoor_model() -> Scm {
    binary_scm(
        &["Z", "X", "Y"],
        vec![Edge::new(0, 0, 1), Edge::new(0, 0, 2), Edge::new(1, 0, 2)],
        vec![
            logistic(0, vec![], 0.3, vec![]),
            logistic(1, vec![(0, 0)], -0.5, vec![1.2]),
            logistic(2, vec![(0, 0), (1, 0)], -1.0, vec![0.8, 1.5]),
        ],
    )
}

/// U → X, U → Y, X → M → Y with `U` unobserved by the estimators.
pub fn frontdoor_model() -> Scm {
    binary_scm(
        &["U", "X", "M", "Y"],
        vec![Edge::new(0, 0, 1), Edge::new(0, 0, 3), Edge::new(1, 0, 2), Edge::new(2, 0, 3)],
        vec![
            logistic(0, vec![], -0.2, vec![]),
            logistic(1, vec![(0, 0)], -0.7, vec![1.6]),
            logistic(2, vec![(1, 0)], -1.1, vec![2.0]),
            logistic(3, vec![(0, 0), (2, 0)], -0.4, vec![1.4, 1.3]),
        ],
    )
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Observational rows drawn with a low-discrepancy sequence, evaluated in
/// topological order straight from the coefficients.
pub fn observational(names: &[&str], rows: usize, draw: impl Fn(&[f64], &mut [f64])) -> TimeSeriesFrame {
    let n = names.len();
    let mut u = vec![0.0; n];
    let mut values = vec![0.0; rows * n];
    for i in 0..rows {
        qmc::halton(i as u64, &mut u);
        draw(&u, &mut values[i * n..(i + 1) * n]);
    }
    let meta = names.iter().map(|s| VariableMeta::binary(*s, PhysicalClass::Pump, 1)).collect();
    TimeSeriesFrame::new(meta, (0..rows as i64).collect(), values, None).unwrap()
}

pub fn bit(u: f64, p: f64) -> f64 {
    f64::from(u8::from(u < p))
}

pub fn backdoor_data(rows: usize) -> TimeSeriesFrame {
    observational(&["Z", "X", "Y"], rows, |u, r| {
        r[0] = bit(u[0], sigmoid(0.3));
        r[1] = bit(u[1], sigmoid(-0.5 + 1.2 * r[0]));
        r[2] = bit(u[2], sigmoid(-1.0 + 0.8 * r[0] + 1.5 * r[1]));
    })
}

pub fn frontdoor_data(rows: usize) -> TimeSeriesFrame {
    observational(&["U", "X", "M", "Y"], rows, |u, r| {
        r[0] = bit(u[0], sigmoid(-0.2));
        r[1] = bit(u[1], sigmoid(-0.7 + 1.6 * r[0]));
        r[2] = bit(u[2], sigmoid(-1.1 + 2.0 * r[1]));
        r[3] = bit(u[3], sigmoid(-0.4 + 1.4 * r[0] + 1.3 * r[2]));
    })
}

/// `X_t` exogenous, `Y_t = a Y_{t-1} + b X_t + e` in standard units, with
/// non-trivial standardization on both variables.
pub fn linear_gaussian() -> (Scm, f64, f64, [Standardization; 2]) {
    let (a, b) = (0.6, 0.9);
    let st = [
        Standardization { mean: -1.0, std: 0.5 },
        Standardization { mean: 3.0, std: 2.0 },
    ];
    let g = CausalGraph::new(
        vec!["X".into(), "Y".into()],
        1,
        0.05,
        vec![Edge::new(0, 0, 1), Edge::new(1, 1, 1)],
    )
    .unwrap();
    let gauss = |target, parents, linear, sigma| StructuralEquation {
        target,
        parents,
        form: EquationForm::GaussianAdditive {
            intercept: 0.0,
            linear,
            quadratic: 0.0,
            sigma,
        },
        flags: FitFlags::default(),
    };
    let scm = Scm::from_parts(
        g,
        vec![VariableKind::ContinuousSensor; 2],
        st.to_vec(),
        vec![gauss(0, vec![], vec![], 1.0), gauss(1, vec![(0, 0), (1, 1)], vec![b, a], 0.3)],
    )
    .unwrap();
    (scm, a, b, st)
}

pub fn evidence(values: Vec<f64>) -> TimeSeriesFrame {
    let rows = values.len() / 2;
    let meta = vec![
        VariableMeta::continuous("X", PhysicalClass::Flow, 1),
        VariableMeta::continuous("Y", PhysicalClass::Level, 1),
    ];
    TimeSeriesFrame::new(meta, (0..rows as i64).collect(), values, None).unwrap()
}

/// Largest gap between the counterfactual trajectory of the
/// linear-Gaussian model and the closed-form propagation of the shift.
pub fn linear_gaussian_cf_error() -> f64 {
    use causal_twin::inference::{counterfactual, CounterfactualQuery, Outcome};
    let (scm, a, b, st) = linear_gaussian();
    let obs = vec![-1.2, 2.5, -0.7, 3.9, -1.4, 1.8, -0.9, 3.3, -1.1, 2.2, -0.6, 4.1];
    let (from, x_new) = (2, 0.4);
    let q = CounterfactualQuery {
        evidence: evidence(obs.clone()),
        intervention: causal_twin::Intervention::single(0, x_new),
        from,
        outcome: Outcome::Variable(1),
        at: None,
    };
    let r = counterfactual(&scm, &q, 16, 0).unwrap();
    let mut dz = 0.0;
    let mut worst = (r.point - r.trajectory[r.trajectory.len() - 1]).abs();
    for t in 0..obs.len() / 2 {
        let y_cf = if t < from {
            obs[2 * t + 1]
        } else {
            dz = a * dz + b * (x_new - obs[2 * t]) / st[0].std;
            obs[2 * t + 1] + st[1].std * dz
        };
        worst = worst.max((r.trajectory[2 * t + 1] - y_cf).abs());
    }
    worst
}

/// Intervening with the observed values must return the evidence bit for
/// bit, for both a continuous and a binary model.
pub fn factual_consistency_holds() -> bool {
    use causal_twin::inference::{counterfactual, CounterfactualQuery, Outcome};
    let (scm, ..) = linear_gaussian();
    let obs = vec![0.3, 1.0, -2.0, 5.5, 0.1, -0.4, 1.7, 2.9];
    let q = CounterfactualQuery {
        evidence: evidence(obs.clone()),
        intervention: causal_twin::Intervention::single(0, obs[6]),
        from: 3,
        outcome: Outcome::Variable(1),
        at: None,
    };
    let continuous = counterfactual(&scm, &q, 16, 0).unwrap().trajectory == obs;

    let values = vec![1.0, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0];
    let meta = ["U", "X", "M", "Y"]
        .iter()
        .map(|s| VariableMeta::binary(*s, PhysicalClass::Pump, 1))
        .collect();
    let q = CounterfactualQuery {
        evidence: TimeSeriesFrame::new(meta, vec![0, 1, 2], values.clone(), None).unwrap(),
        intervention: causal_twin::Intervention::single(1, 0.0),
        from: 2,
        outcome: Outcome::Variable(3),
        at: None,
    };
    let binary = counterfactual(&frontdoor_model(), &q, 256, 3).unwrap().trajectory == values;
    continuous && binary
}
