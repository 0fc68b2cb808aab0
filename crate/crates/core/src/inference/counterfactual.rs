//! Three-step counterfactuals: abduction, action, prediction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::simulate::{abduct, Engine};
use super::{InferenceError, Intervention};
use crate::data::TimeSeriesFrame;
use crate::scm::Scm;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    /// Value of the variable.
    Variable(usize),
    /// Indicator that the variable exceeds the threshold.
    Above { var: usize, threshold: f64 },
}

impl Outcome {
    fn eval(&self, row: &[f64]) -> f64 {
        match *self {
            Outcome::Variable(v) => row[v],
            Outcome::Above { var, threshold } => f64::from(u8::from(row[var] > threshold)),
        }
    }

    fn var(&self) -> usize {
        match *self {
            Outcome::Variable(v) | Outcome::Above { var: v, .. } => v,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CounterfactualQuery {
    /// Observed window; the first `max_lag` rows serve as history.
    pub evidence: TimeSeriesFrame,
    pub intervention: Intervention,
    /// First row at which the intervention applies.
    pub from: usize,
    pub outcome: Outcome,
    /// Row at which the outcome is read; the last row when `None`.
    pub at: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualResult {
    /// Outcome under midpoint latents for binary variables.
    pub point: f64,
    /// Outcome averaged over the binary latents consistent with evidence.
    pub mean: f64,
    pub std_error: f64,
    pub samples: usize,
    /// No binary mechanism was re-evaluated, so `point` is exact.
    pub deterministic: bool,
    /// Counterfactual window under midpoint latents, row-major.
    pub trajectory: Vec<f64>,
}

/// Latent interval of every binary cell implied by the evidence: `[0, p)`
/// for an observed 1 and `[p, 1)` for an observed 0.
pub(crate) fn latent_bounds(scm: &Scm, evidence: &[f64], t_len: usize) -> Vec<(f64, f64)> {
    let n = scm.n_vars();
    let lag = scm.max_lag();
    let mut out = vec![(0.0, 1.0); t_len * n];
    for t in lag..t_len {
        for var in (0..n).filter(|&v| scm.is_binary(v)) {
            let p = scm.structural_mean(var, |q, l| evidence[(t - l) * n + q]);
            out[t * n + var] = if evidence[t * n + var] >= 0.5 { (0.0, p) } else { (p, 1.0) };
        }
    }
    out
}

pub fn counterfactual(
    scm: &Scm,
    query: &CounterfactualQuery,
    samples: usize,
    seed: u64,
) -> Result<CounterfactualResult, InferenceError> {
    query.intervention.validate(scm)?;
    let ev = &query.evidence;
    scm.check_frame(ev)?;
    let n = scm.n_vars();
    let lag = scm.max_lag();
    let t_len = ev.len();
    if t_len <= lag {
        return Err(InferenceError::BadHistory { needed: lag + 1, n });
    }
    if query.outcome.var() >= n {
        return Err(InferenceError::GraphHashMismatch(query.outcome.var()));
    }
    for t in 0..t_len {
        for var in 0..n {
            if ev.value(t, var).is_nan() {
                return Err(InferenceError::MissingEvidence { row: t, var });
            }
        }
    }
    let at = query.at.unwrap_or(t_len - 1).min(t_len - 1);
    let from = query.from.max(lag);
    let factual = ev.values();
    let noise = abduct(scm, ev)?;
    let engine = Engine::new(scm);

    let mut recomputed_binary = false;
    let mut point_buf = factual.to_vec();
    engine.run(&mut point_buf, lag, t_len, &noise, Some(factual), |t, var, natural, _| {
        let v = if t >= from {
            query.intervention.get(var).unwrap_or(natural)
        } else {
            natural
        };
        if scm.is_binary(var) && query.intervention.get(var).is_none() && v != factual[t * n + var] {
            recomputed_binary = true;
        }
        v
    });
    let point = query.outcome.eval(&point_buf[at * n..(at + 1) * n]);

    // a binary mechanism whose parents moved can flip for other latents in
    // the consistent interval even when the midpoint does not
    let parents_moved = binary_parents_moved(scm, &point_buf, factual, lag, t_len);
    if !(recomputed_binary || parents_moved) || samples == 0 {
        return Ok(CounterfactualResult {
            point,
            mean: point,
            std_error: 0.0,
            samples: 0,
            deterministic: true,
            trajectory: point_buf,
        });
    }

    let bounds = latent_bounds(scm, factual, t_len);
    let draws: Vec<f64> = (0..samples)
        .into_par_iter()
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(s as u64);
            let mut nz = noise.clone();
            for t in lag..t_len {
                for var in (0..n).filter(|&v| scm.is_binary(v)) {
                    let (lo, hi) = bounds[t * n + var];
                    nz[t * n + var] = lo + (hi - lo) * rng.random::<f64>();
                }
            }
            let mut buf = factual.to_vec();
            engine.run(&mut buf, lag, t_len, &nz, Some(factual), |t, var, natural, _| {
                if t >= from {
                    query.intervention.get(var).unwrap_or(natural)
                } else {
                    natural
                }
            });
            query.outcome.eval(&buf[at * n..(at + 1) * n])
        })
        .collect();
    let m = samples as f64;
    let mean = draws.iter().sum::<f64>() / m;
    let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / m;
    Ok(CounterfactualResult {
        point,
        mean,
        std_error: (var / m).sqrt(),
        samples,
        deterministic: false,
        trajectory: point_buf,
    })
}

fn binary_parents_moved(scm: &Scm, cf: &[f64], factual: &[f64], lag: usize, t_len: usize) -> bool {
    let n = scm.n_vars();
    (lag..t_len).any(|t| {
        (0..n).filter(|&v| scm.is_binary(v)).any(|v| {
            scm.equation(v)
                .parents
                .iter()
                .any(|&(p, l)| cf[(t - l) * n + p].to_bits() != factual[(t - l) * n + p].to_bits())
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{PhysicalClass, VariableKind, VariableMeta};
    use crate::graph::{CausalGraph, Edge};
    use crate::scm::{EquationForm, FitFlags, Standardization, StructuralEquation};

    fn gauss(target: usize, parents: Vec<(usize, usize)>, lin: Vec<f64>) -> StructuralEquation {
        StructuralEquation {
            target,
            parents,
            form: EquationForm::GaussianAdditive {
                intercept: 0.0,
                linear: lin,
                quadratic: 0.0,
                sigma: 1.0,
            },
            flags: FitFlags::default(),
        }
    }

    /// X → Y (β = 0.7) → Z (β = −1.3), plus lagged self-dependence on X.
    fn chain() -> Scm {
        let g = CausalGraph::new(
            vec!["X".into(), "Y".into(), "Z".into()],
            1,
            0.05,
            vec![Edge::new(0, 1, 0), Edge::new(0, 0, 1), Edge::new(1, 0, 2)],
        )
        .unwrap();
        Scm::from_parts(
            g,
            vec![VariableKind::ContinuousSensor; 3],
            vec![Standardization { mean: 0.0, std: 1.0 }; 3],
            vec![
                gauss(0, vec![(0, 1)], vec![0.5]),
                gauss(1, vec![(0, 0)], vec![0.7]),
                gauss(2, vec![(1, 0)], vec![-1.3]),
            ],
        )
        .unwrap()
    }

    fn evidence() -> TimeSeriesFrame {
        let meta = ["X", "Y", "Z"]
            .iter()
            .map(|s| VariableMeta::continuous(*s, PhysicalClass::Other, 1))
            .collect();
        let v = vec![0.3, 1.1, -0.4, 0.9, 0.2, 0.55, -0.6, 0.8, -1.7];
        TimeSeriesFrame::new(meta, vec![0, 1, 2], v, None).unwrap()
    }

    #[test]
    fn factual_intervention_reproduces_evidence_exactly() {
        let ev = evidence();
        let q = CounterfactualQuery {
            intervention: Intervention::single(0, ev.value(2, 0)),
            evidence: ev.clone(),
            from: 2,
            outcome: Outcome::Variable(2),
            at: None,
        };
        let r = counterfactual(&chain(), &q, 0, 0).unwrap();
        assert_eq!(r.trajectory, ev.values());
        assert!(r.deterministic);
    }

    #[test]
    fn linear_counterfactual_closed_form() {
        let ev = evidence();
        let (x, y) = (ev.value(2, 0), ev.value(2, 1));
        let x_new = 2.5;
        let q = CounterfactualQuery {
            intervention: Intervention::single(0, x_new),
            evidence: ev,
            from: 2,
            outcome: Outcome::Variable(1),
            at: None,
        };
        let r = counterfactual(&chain(), &q, 0, 0).unwrap();
        assert!((r.point - (y + 0.7 * (x_new - x))).abs() < 1e-9);
    }
}
