//! Structure and model validation: SHD, constraint and temporal
//! compliance, forward-chaining CV and interventional error.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{augment, TimeSeriesFrame, VariableMeta};
use crate::discovery::{ConstraintCatalog, Verdict};
use crate::graph::CausalGraph;
use crate::inference::{simulate_do, Exogenous, InferenceError, Intervention};
use crate::scm::{self, Scm, ScmError};
use crate::stats;
use crate::synth::NaturalExperiment;

#[derive(Debug, Error)]
pub enum ValidateError {
    #[error("graphs have different variables ({truth} vs {discovered})")]
    NodeUniverseMismatch { truth: usize, discovered: usize },
    #[error("series too short: {len} rows for {folds} folds")]
    SeriesTooShort { len: usize, folds: usize },
    #[error("at least two folds are required")]
    TooFewFolds,
    #[error("no natural experiments")]
    NoExperiments,
    #[error(transparent)]
    Scm(#[from] ScmError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
}

/// Lag-0 edges are compared as unordered pairs plus an orientation; lagged
/// edges are compared as directed `(src, lag, dst)` triples.
fn skeleton(g: &CausalGraph) -> BTreeMap<(usize, usize, usize), Option<bool>> {
    g.edges()
        .iter()
        .map(|e| {
            if e.src_lag == 0 {
                let (a, b) = (e.src.min(e.dst), e.src.max(e.dst));
                ((a, 0, b), Some(e.src < e.dst))
            } else {
                ((e.src, e.src_lag, e.dst), None)
            }
        })
        .collect()
}

/// Unnormalised structural Hamming distance: skeleton symmetric difference
/// plus orientation mismatches on shared lag-0 pairs.
pub fn shd_raw(truth: &CausalGraph, discovered: &CausalGraph) -> Result<usize, ValidateError> {
    if truth.n_vars() != discovered.n_vars() {
        return Err(ValidateError::NodeUniverseMismatch {
            truth: truth.n_vars(),
            discovered: discovered.n_vars(),
        });
    }
    let a = skeleton(truth);
    let b = skeleton(discovered);
    let ka: BTreeSet<_> = a.keys().collect();
    let kb: BTreeSet<_> = b.keys().collect();
    let sym = ka.symmetric_difference(&kb).count();
    let flips = ka.intersection(&kb).filter(|k| a[**k] != b[**k]).count();
    Ok(sym + flips)
}

/// SHD divided by `|E_true| + |E_disc|` (0 when both are empty).
pub fn shd(truth: &CausalGraph, discovered: &CausalGraph) -> Result<f64, ValidateError> {
    let raw = shd_raw(truth, discovered)?;
    let denom = truth.n_edges() + discovered.n_edges();
    Ok(if denom == 0 { 0.0 } else { raw as f64 / denom as f64 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Compliance {
    pub value: f64,
    pub compliant: usize,
    pub judged: usize,
    /// Nothing could be judged; `value` is reported as 1.
    pub vacuous: bool,
}

impl Compliance {
    fn new(compliant: usize, judged: usize) -> Self {
        Self {
            value: if judged == 0 { 1.0 } else { compliant as f64 / judged as f64 },
            compliant,
            judged,
            vacuous: judged == 0,
        }
    }
}

/// Fraction of edges the catalog allows among those it has an opinion on.
pub fn pcc(discovered: &CausalGraph, meta: &[VariableMeta], catalog: &ConstraintCatalog) -> Compliance {
    let (mut ok, mut judged) = (0, 0);
    for e in discovered.edges() {
        let (s, d) = (&meta[e.src], &meta[e.dst]);
        match catalog.verdict(&s.name, s.physical_class, &d.name, d.physical_class, e.src_lag) {
            Verdict::Unmentioned => {}
            Verdict::Allowed => {
                ok += 1;
                judged += 1;
            }
            Verdict::Violates => judged += 1,
        }
    }
    Compliance::new(ok, judged)
}

/// Lag in `[-max_lag, max_lag]` maximising `|corr(x(t − k), y(t))|`; ties
/// go to the smallest `|k|`, then the positive side.
pub fn peak_cross_correlation_lag(x: &[f64], y: &[f64], max_lag: usize) -> i64 {
    let t_len = x.len().min(y.len());
    let corr_at = |k: i64| {
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for t in 0..t_len as i64 {
            let s = t - k;
            if s < 0 || s >= t_len as i64 {
                continue;
            }
            let (a, b) = (x[s as usize], y[t as usize]);
            if !a.is_nan() && !b.is_nan() {
                xs.push(a);
                ys.push(b);
            }
        }
        let r = stats::correlation(&xs, &ys);
        if r.is_nan() { 0.0 } else { r.abs() }
    };
    let mut best = (0i64, corr_at(0));
    for d in 1..=max_lag as i64 {
        for k in [d, -d] {
            let c = corr_at(k);
            if c > best.1 + 1e-12 {
                best = (k, c);
            }
        }
    }
    best.0
}

/// Fraction of cross-variable edges whose cause does not lag its effect in
/// cross-correlation.
pub fn tcc(discovered: &CausalGraph, frame: &TimeSeriesFrame) -> Compliance {
    let max_lag = discovered.max_lag().max(1);
    let edges: Vec<_> = discovered.edges().iter().filter(|e| e.src != e.dst).collect();
    let ok = edges
        .par_iter()
        .filter(|e| peak_cross_correlation_lag(&frame.column(e.src), &frame.column(e.dst), max_lag) >= 0)
        .count();
    Compliance::new(ok, edges.len())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: usize,
    /// Per-variable mean squared error averaged over folds (raw units).
    pub mse: Vec<f64>,
    /// Per-variable `1 − MSE / Var` averaged over folds.
    pub r2: Vec<f64>,
    /// Mean R² over continuous variables that have parents.
    pub aggregate_r2: f64,
    /// Mean over folds of the squared error in standard units, pooled over
    /// the same variables.
    pub cv_score: f64,
}

/// Forward-chaining cross-validation: the frame is cut into `folds + 1`
/// contiguous blocks; fold `k` fits on blocks `0..=k` and tests on block
/// `k + 1`.
pub fn cv_score(
    frame: &TimeSeriesFrame,
    graph: &CausalGraph,
    folds: usize,
) -> Result<CvReport, ValidateError> {
    if folds < 2 {
        return Err(ValidateError::TooFewFolds);
    }
    let n = frame.n_vars();
    let lag = graph.max_lag();
    let block = frame.len() / (folds + 1);
    if block <= lag + 10 {
        return Err(ValidateError::SeriesTooShort {
            len: frame.len(),
            folds,
        });
    }
    let scored: Vec<usize> = (0..n)
        .filter(|&v| !frame.meta()[v].is_binary() && !graph.parents(v).is_empty())
        .collect();
    let per_fold: Vec<(Vec<f64>, Vec<f64>, f64)> = (0..folds)
        .into_par_iter()
        .map(|k| -> Result<_, ValidateError> {
            let train = frame.slice(0, block * (k + 1));
            let test_start = block * (k + 1);
            let test_end = if k + 1 == folds { frame.len() } else { block * (k + 2) };
            // the test block keeps `lag` rows of history in front
            let test = frame.slice(test_start - lag, test_end);
            let model = scm::fit(&augment(&train, lag)?, frame.meta(), graph)?;
            let resid = model.residuals(&test)?;
            let mut mse = vec![f64::NAN; n];
            let mut r2 = vec![f64::NAN; n];
            let mut pooled = 0.0;
            for v in 0..n {
                let (mut sse, mut cnt) = (0.0, 0usize);
                let mut ys = Vec::new();
                for t in lag..test.len() {
                    let e = resid[t * n + v];
                    if e.is_nan() {
                        continue;
                    }
                    let y = test.value(t, v);
                    let err = if model.is_binary(v) {
                        // residual is a latent; score the probability instead
                        let p = model.structural_mean(v, |p, l| test.value(t - l, p));
                        y - p
                    } else {
                        e
                    };
                    sse += err * err;
                    cnt += 1;
                    ys.push(y);
                }
                if cnt == 0 {
                    continue;
                }
                mse[v] = sse / cnt as f64;
                let var = stats::variance(&ys);
                r2[v] = if var > 0.0 { 1.0 - mse[v] / var } else { f64::NAN };
            }
            for &v in &scored {
                let sd = model.standardization()[v].std;
                pooled += mse[v] / (sd * sd);
            }
            pooled /= scored.len().max(1) as f64;
            Ok((mse, r2, pooled))
        })
        .collect::<Result<_, _>>()?;
    let avg = |get: &dyn Fn(&(Vec<f64>, Vec<f64>, f64)) -> f64| {
        let xs: Vec<f64> = per_fold.iter().map(get).filter(|x| !x.is_nan()).collect();
        if xs.is_empty() { f64::NAN } else { stats::mean(&xs) }
    };
    let mse: Vec<f64> = (0..n).map(|v| avg(&|f| f.0[v])).collect();
    let r2: Vec<f64> = (0..n).map(|v| avg(&|f| f.1[v])).collect();
    let agg: Vec<f64> = scored.iter().map(|&v| r2[v]).filter(|x| !x.is_nan()).collect();
    Ok(CvReport {
        folds,
        mse,
        r2,
        aggregate_r2: if agg.is_empty() { f64::NAN } else { stats::mean(&agg) },
        cv_score: avg(&|f| f.2),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutcome {
    pub observed: f64,
    pub predicted: f64,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionReport {
    pub experiments: Vec<ExperimentOutcome>,
    /// Mean absolute error between observed and predicted probabilities.
    pub mean_error: f64,
    /// `1 − mean_error`.
    pub accuracy: f64,
}

/// Compares the observed frequency of each experiment's outcome event with
/// the model's `P(outcome > threshold | do(var = value))` over the same
/// window, simulated from the rows just before it.
pub fn intervention_error(
    scm: &Scm,
    frame: &TimeSeriesFrame,
    experiments: &[NaturalExperiment],
    samples: usize,
    seed: u64,
) -> Result<InterventionReport, ValidateError> {
    if experiments.is_empty() {
        return Err(ValidateError::NoExperiments);
    }
    let n = scm.n_vars();
    let lag = scm.max_lag();
    let outcomes: Vec<ExperimentOutcome> = experiments
        .par_iter()
        .enumerate()
        .map(|(i, e)| -> Result<_, ValidateError> {
            let horizon = e.end - e.start;
            let observed = (e.start..e.end)
                .filter(|&t| frame.value(t, e.outcome) > e.threshold)
                .count() as f64
                / horizon as f64;
            let history = frame.values()[(e.start - lag) * n..e.start * n].to_vec();
            let iv = Intervention::single(e.var, e.value);
            let paths = simulate_do(
                scm,
                &iv,
                &history,
                &Exogenous::Sampled {
                    samples: samples.max(1),
                    seed: seed.wrapping_add(i as u64),
                },
                horizon,
            )?;
            let hits: usize = paths
                .iter()
                .map(|p| (0..horizon).filter(|&t| p.value(t, e.outcome) > e.threshold).count())
                .sum();
            let predicted = hits as f64 / (horizon * paths.len()) as f64;
            Ok(ExperimentOutcome {
                observed,
                predicted,
                error: (observed - predicted).abs(),
            })
        })
        .collect::<Result<_, _>>()?;
    let mean_error = outcomes.iter().map(|o| o.error).sum::<f64>() / outcomes.len() as f64;
    Ok(InterventionReport {
        experiments: outcomes,
        mean_error,
        accuracy: 1.0 - mean_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Edge;

    fn g(edges: &[(usize, usize, usize)]) -> CausalGraph {
        CausalGraph::new(
            (0..4).map(|i| format!("V{i}")).collect(),
            2,
            0.05,
            edges.iter().map(|&(s, l, d)| Edge::new(s, l, d)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn shd_basics() {
        let t = g(&[(0, 0, 1), (1, 1, 2)]);
        assert_eq!(shd(&t, &t).unwrap(), 0.0);
        assert_eq!(shd(&t, &g(&[])).unwrap(), 1.0);
        // reversal counts once
        assert_eq!(shd_raw(&t, &g(&[(1, 0, 0), (1, 1, 2)])).unwrap(), 1);
        // a lag change is a missing plus an extra edge
        assert_eq!(shd_raw(&t, &g(&[(0, 0, 1), (1, 2, 2)])).unwrap(), 2);
    }

    #[test]
    fn peak_lag_sign() {
        let x: Vec<f64> = (0..500).map(|i| ((i * 7919) % 101) as f64).collect();
        let mut y = vec![0.0; 500];
        for t in 2..500 {
            y[t] = x[t - 2];
        }
        assert_eq!(peak_cross_correlation_lag(&x, &y, 5), 2);
        assert_eq!(peak_cross_correlation_lag(&y, &x, 5), -2);
    }
}
