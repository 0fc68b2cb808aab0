//! Structural causal model estimation and evaluation.
//!
//! Continuous variables follow `V = α + Σ β·pa + γ·Σ pa² + U` with Gaussian
//! `U`; binary actuators follow a logistic model. Both are fitted in
//! standardised coordinates, so coefficients are per standard deviation.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{AugmentedFrame, TimeSeriesFrame, VariableKind, VariableMeta};
use crate::graph::{CausalGraph, GraphError};
use crate::stats;

#[derive(Debug, Error)]
pub enum ScmError {
    #[error("variable {target}: {rows} usable rows, need at least {needed}")]
    InsufficientData {
        target: usize,
        rows: usize,
        needed: usize,
    },
    #[error("variable {target}: missing value for parent {parent}@{lag}")]
    MissingParentValue {
        target: usize,
        parent: usize,
        lag: usize,
    },
    #[error("expected {expected} parent values, got {got}")]
    ParentArity { expected: usize, got: usize },
    #[error("graph fingerprint mismatch: model built for {expected}, got {found}")]
    GraphHashMismatch { expected: String, found: String },
    #[error("metadata lists {meta} variables but the graph has {graph}")]
    MetaMismatch { meta: usize, graph: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Affine map to standard units, `z = (v − mean) / std`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: f64,
    pub std: f64,
}

impl Standardization {
    pub fn to_z(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn from_z(&self, z: f64) -> f64 {
        self.mean + self.std * z
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EquationForm {
    GaussianAdditive {
        intercept: f64,
        linear: Vec<f64>,
        quadratic: f64,
        /// Noise standard deviation in the target's standard units.
        sigma: f64,
    },
    Logistic {
        intercept: f64,
        linear: Vec<f64>,
    },
}

/// Conditions raised while fitting one equation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitFlags {
    /// Logistic fit hit (quasi-)separation and was refitted with a ridge.
    pub separation: bool,
    /// Parents with no variation in the training window (β fixed at 0).
    pub constant_parents: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuralEquation {
    pub target: usize,
    pub parents: Vec<(usize, usize)>,
    pub form: EquationForm,
    #[serde(default)]
    pub flags: FitFlags,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Prediction {
    Gaussian { mean: f64, std: f64 },
    Bernoulli { p: f64 },
}

impl Prediction {
    /// Expected value of the variable.
    pub fn mean(&self) -> f64 {
        match *self {
            Prediction::Gaussian { mean, .. } => mean,
            Prediction::Bernoulli { p } => p,
        }
    }
}

pub const RIDGE_PENALTY: f64 = 1e-4;
const IRLS_TOL: f64 = 1e-8;
const IRLS_MAX_ITER: usize = 100;
/// Coefficients beyond this (per standard unit) indicate separation.
const SEPARATION_BOUND: f64 = 25.0;
/// Floor on σ in standard units so every Gaussian equation stays proper.
const SIGMA_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scm {
    graph: CausalGraph,
    kinds: Vec<VariableKind>,
    standardization: Vec<Standardization>,
    equations: Vec<StructuralEquation>,
    graph_hash: String,
}

impl Scm {
    /// Assembles a model from explicit parts (used by generators and tests).
    pub fn from_parts(
        graph: CausalGraph,
        kinds: Vec<VariableKind>,
        standardization: Vec<Standardization>,
        equations: Vec<StructuralEquation>,
    ) -> Result<Self, ScmError> {
        let n = graph.n_vars();
        if kinds.len() != n || standardization.len() != n || equations.len() != n {
            return Err(ScmError::MetaMismatch {
                meta: kinds.len().min(standardization.len()).min(equations.len()),
                graph: n,
            });
        }
        for (i, eq) in equations.iter().enumerate() {
            let expected = graph.parents(i);
            if eq.target != i || eq.parents != expected {
                return Err(ScmError::GraphHashMismatch {
                    expected: format!("parents {expected:?} for {i}"),
                    found: format!("{:?}", eq.parents),
                });
            }
        }
        let graph_hash = graph.fingerprint();
        Ok(Self {
            graph,
            kinds,
            standardization,
            equations,
            graph_hash,
        })
    }

    pub fn graph(&self) -> &CausalGraph {
        &self.graph
    }

    pub fn n_vars(&self) -> usize {
        self.graph.n_vars()
    }

    pub fn max_lag(&self) -> usize {
        self.graph.max_lag()
    }

    pub fn equations(&self) -> &[StructuralEquation] {
        &self.equations
    }

    pub fn equation(&self, var: usize) -> &StructuralEquation {
        &self.equations[var]
    }

    pub fn standardization(&self) -> &[Standardization] {
        &self.standardization
    }

    pub fn is_binary(&self, var: usize) -> bool {
        self.kinds[var] == VariableKind::BinaryActuator
    }

    pub fn kinds(&self) -> &[VariableKind] {
        &self.kinds
    }

    pub fn graph_hash(&self) -> &str {
        &self.graph_hash
    }

    /// Noise standard deviation in raw units (0 for binary variables).
    pub fn sigma(&self, var: usize) -> f64 {
        match &self.equations[var].form {
            EquationForm::GaussianAdditive { sigma, .. } => sigma * self.standardization[var].std,
            EquationForm::Logistic { .. } => 0.0,
        }
    }

    /// Linear predictor in standard units, reading raw parent values through
    /// `value(var, lag)`.
    #[inline]
    pub(crate) fn linear_predictor(&self, var: usize, value: impl Fn(usize, usize) -> f64) -> f64 {
        let eq = &self.equations[var];
        match &eq.form {
            EquationForm::GaussianAdditive {
                intercept,
                linear,
                quadratic,
                ..
            } => {
                let mut acc = *intercept;
                let mut sq = 0.0;
                for (&(p, l), &b) in eq.parents.iter().zip(linear) {
                    let z = self.standardization[p].to_z(value(p, l));
                    acc += b * z;
                    sq += z * z;
                }
                acc + quadratic * sq
            }
            EquationForm::Logistic { intercept, linear } => {
                let mut acc = *intercept;
                for (&(p, l), &b) in eq.parents.iter().zip(linear) {
                    acc += b * self.standardization[p].to_z(value(p, l));
                }
                acc
            }
        }
    }

    /// Raw-unit mean (continuous) or P(V = 1) (binary).
    #[inline]
    pub(crate) fn structural_mean(&self, var: usize, value: impl Fn(usize, usize) -> f64) -> f64 {
        let eta = self.linear_predictor(var, value);
        if self.is_binary(var) {
            stats::sigmoid(eta)
        } else {
            self.standardization[var].from_z(eta)
        }
    }

    /// Evaluates the equation of `target` at raw parent values given in
    /// the equation's parent order.
    pub fn predict(&self, target: usize, parent_values: &[f64]) -> Result<Prediction, ScmError> {
        let eq = &self.equations[target];
        if parent_values.len() != eq.parents.len() {
            return Err(ScmError::ParentArity {
                expected: eq.parents.len(),
                got: parent_values.len(),
            });
        }
        if let Some(k) = parent_values.iter().position(|v| v.is_nan()) {
            return Err(ScmError::MissingParentValue {
                target,
                parent: eq.parents[k].0,
                lag: eq.parents[k].1,
            });
        }
        let lookup = |p: usize, l: usize| {
            let k = eq.parents.iter().position(|&x| x == (p, l)).expect("own parent");
            parent_values[k]
        };
        let m = self.structural_mean(target, lookup);
        Ok(if self.is_binary(target) {
            Prediction::Bernoulli { p: m }
        } else {
            Prediction::Gaussian {
                mean: m,
                std: self.sigma(target),
            }
        })
    }

    /// Per-variable residuals on a frame, row-major `T × n`. Rows before the
    /// model's max lag, and cells whose parents are missing, hold NaN.
    ///
    /// Binary residuals are latent uniforms under the convention `A = 1` iff
    /// `u < p`: the midpoint `p/2` for an observed 1 and `(1 + p)/2` for an
    /// observed 0.
    pub fn residuals(&self, frame: &TimeSeriesFrame) -> Result<Vec<f64>, ScmError> {
        self.check_frame(frame)?;
        let n = self.n_vars();
        let t_len = frame.len();
        let lag = self.max_lag();
        let mut out = vec![f64::NAN; t_len * n];
        for t in lag..t_len {
            for var in 0..n {
                let v = frame.value(t, var);
                if v.is_nan() {
                    continue;
                }
                let missing = self.equations[var]
                    .parents
                    .iter()
                    .any(|&(p, l)| frame.value(t - l, p).is_nan());
                if missing {
                    continue;
                }
                let m = self.structural_mean(var, |p, l| frame.value(t - l, p));
                out[t * n + var] = if self.is_binary(var) {
                    binary_latent(v, m)
                } else {
                    v - m
                };
            }
        }
        Ok(out)
    }

    pub(crate) fn check_frame(&self, frame: &TimeSeriesFrame) -> Result<(), ScmError> {
        if frame.n_vars() != self.n_vars() {
            return Err(ScmError::MetaMismatch {
                meta: frame.n_vars(),
                graph: self.n_vars(),
            });
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, ScmError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Parses a model and checks the stored fingerprint against its graph.
    pub fn from_json(s: &str) -> Result<Self, ScmError> {
        let raw: Scm = serde_json::from_str(s)?;
        let graph = CausalGraph::new(
            raw.graph.names().to_vec(),
            raw.graph.max_lag(),
            raw.graph.alpha(),
            raw.graph.edges().to_vec(),
        )?;
        let found = graph.fingerprint();
        if found != raw.graph_hash {
            return Err(ScmError::GraphHashMismatch {
                expected: raw.graph_hash,
                found,
            });
        }
        Self::from_parts(graph, raw.kinds, raw.standardization, raw.equations)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ScmError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScmError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Latent uniform consistent with a binary outcome under `A = 1` iff `u < p`.
pub fn binary_latent(outcome: f64, p: f64) -> f64 {
    if outcome >= 0.5 {
        p / 2.0
    } else {
        (1.0 + p) / 2.0
    }
}

/// Fits one equation per variable on the valid rows of `train`.
pub fn fit(
    train: &AugmentedFrame,
    meta: &[VariableMeta],
    graph: &CausalGraph,
) -> Result<Scm, ScmError> {
    let n = graph.n_vars();
    if meta.len() != n || train.n_vars() != n {
        return Err(ScmError::MetaMismatch {
            meta: meta.len(),
            graph: n,
        });
    }
    let rows: Vec<usize> = (0..train.rows()).filter(|&r| train.row_valid()[r]).collect();
    let standardization: Vec<Standardization> = (0..n)
        .map(|v| {
            let col = train.column(v, 0);
            let xs: Vec<f64> = rows.iter().map(|&r| col[r]).collect();
            let sd = stats::std_dev(&xs);
            Standardization {
                mean: stats::mean(&xs),
                std: if sd > 0.0 { sd } else { 1.0 },
            }
        })
        .collect();

    let equations = (0..n)
        .into_par_iter()
        .map(|target| {
            let parents = graph.parents(target);
            let needed = 10 * (parents.len() + 2);
            if rows.len() < needed {
                return Err(ScmError::InsufficientData {
                    target,
                    rows: rows.len(),
                    needed,
                });
            }
            let zcol = |v: usize, l: usize| -> Vec<f64> {
                let c = train.column(v, l);
                let s = standardization[v];
                rows.iter().map(|&r| s.to_z(c[r])).collect()
            };
            let mut flags = FitFlags::default();
            let mut cols = Vec::new();
            for &(p, l) in &parents {
                let z = zcol(p, l);
                if stats::variance(&z) <= 1e-24 {
                    // a constant parent carries no information
                    flags.constant_parents.push((p, l));
                } else {
                    cols.push(z);
                }
            }
            let form = if meta[target].is_binary() {
                let col = train.column(target, 0);
                let y: Vec<f64> = rows.iter().map(|&r| col[r]).collect();
                let (beta, sep) = fit_logistic(&cols, &y);
                flags.separation = sep;
                let mut linear = vec![0.0; parents.len()];
                let mut k = 1;
                for (pi, &(p, l)) in parents.iter().enumerate() {
                    if !flags.constant_parents.contains(&(p, l)) {
                        linear[pi] = beta[k];
                        k += 1;
                    }
                }
                EquationForm::Logistic {
                    intercept: beta[0],
                    linear,
                }
            } else {
                let y = zcol(target, 0);
                let (intercept, lin, quadratic, sigma) = fit_gaussian(&cols, &y);
                let mut linear = vec![0.0; parents.len()];
                let mut k = 0;
                for (pi, &(p, l)) in parents.iter().enumerate() {
                    if !flags.constant_parents.contains(&(p, l)) {
                        linear[pi] = lin[k];
                        k += 1;
                    }
                }
                EquationForm::GaussianAdditive {
                    intercept,
                    linear,
                    quadratic,
                    sigma,
                }
            };
            Ok(StructuralEquation {
                target,
                parents,
                form,
                flags,
            })
        })
        .collect::<Result<Vec<_>, ScmError>>()?;

    Scm::from_parts(
        graph.clone(),
        meta.iter().map(|m| m.kind).collect(),
        standardization,
        equations,
    )
}

/// Least squares on `[1, x_1..x_p, Σ x_j²]`; returns `(α, β, γ, σ_mle)`.
/// The quadratic column is left out when every parent is two-valued,
/// since `x²` is then affine in `x`.
fn fit_gaussian(cols: &[Vec<f64>], y: &[f64]) -> (f64, Vec<f64>, f64, f64) {
    let t = y.len();
    let p = cols.len();
    let with_quad = cols.iter().any(|c| more_than_two_levels(c));
    let width = 1 + p + usize::from(with_quad);
    let mut x = DMatrix::from_element(t, width, 1.0);
    for (j, c) in cols.iter().enumerate() {
        x.set_column(j + 1, &DVector::from_column_slice(c));
    }
    if with_quad {
        let sq = DVector::from_iterator(t, (0..t).map(|r| cols.iter().map(|c| c[r] * c[r]).sum()));
        x.set_column(p + 1, &sq);
    }
    let yv = DVector::from_column_slice(y);
    let b = stats::least_squares(&x, &yv).expect("non-empty design");
    let resid = &yv - &x * &b;
    let sigma = (resid.norm_squared() / t as f64).sqrt().max(SIGMA_FLOOR);
    let linear = b.rows(1, p).iter().copied().collect();
    let quadratic = if with_quad { b[p + 1] } else { 0.0 };
    (b[0], linear, quadratic, sigma)
}

fn more_than_two_levels(c: &[f64]) -> bool {
    let Some(&a) = c.first() else { return false };
    let Some(&b) = c.iter().find(|&&x| x != a) else { return false };
    c.iter().any(|&x| x != a && x != b)
}

/// IRLS for a logistic model with intercept. Falls back to a ridge
/// penalty when the unpenalised fit diverges; the flag reports that.
fn fit_logistic(cols: &[Vec<f64>], y: &[f64]) -> (Vec<f64>, bool) {
    let t = y.len();
    let width = cols.len() + 1;
    let mut x = DMatrix::from_element(t, width, 1.0);
    for (j, c) in cols.iter().enumerate() {
        x.set_column(j + 1, &DVector::from_column_slice(c));
    }
    let yv = DVector::from_column_slice(y);
    if let Some(beta) = irls(&x, &yv, 0.0) {
        if beta.iter().all(|b| b.abs() < SEPARATION_BOUND) {
            return (beta.iter().copied().collect(), false);
        }
    }
    let beta = irls(&x, &yv, RIDGE_PENALTY).unwrap_or_else(|| DVector::zeros(width));
    (beta.iter().copied().collect(), true)
}

fn irls(x: &DMatrix<f64>, y: &DVector<f64>, ridge: f64) -> Option<DVector<f64>> {
    let (t, w) = x.shape();
    let mut beta = DVector::zeros(w);
    for _ in 0..IRLS_MAX_ITER {
        let eta = x * &beta;
        let mut grad = DVector::zeros(w);
        let mut hess = DMatrix::zeros(w, w);
        for r in 0..t {
            let p = stats::sigmoid(eta[r]);
            let wt = (p * (1.0 - p)).max(1e-12);
            let row = x.row(r);
            for a in 0..w {
                grad[a] += row[a] * (y[r] - p);
                for b in a..w {
                    hess[(a, b)] += wt * row[a] * row[b];
                }
            }
        }
        for a in 0..w {
            for b in 0..a {
                hess[(a, b)] = hess[(b, a)];
            }
            hess[(a, a)] += ridge;
            grad[a] -= ridge * beta[a];
        }
        let step = hess.cholesky()?.solve(&grad);
        beta += &step;
        if !beta.iter().all(|b| b.is_finite()) {
            return None;
        }
        if step.amax() < IRLS_TOL {
            return Some(beta);
        }
        if ridge == 0.0 && beta.amax() > 4.0 * SEPARATION_BOUND {
            return None;
        }
    }
    (ridge > 0.0).then_some(beta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{augment, PhysicalClass};
    use crate::graph::Edge;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn frame(meta: Vec<VariableMeta>, rows: Vec<Vec<f64>>) -> TimeSeriesFrame {
        let t = rows.len() as i64;
        TimeSeriesFrame::new(meta, (0..t).collect(), rows.concat(), None).unwrap()
    }

    #[test]
    fn parentless_gaussian_is_sample_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let xs: Vec<f64> = (0..1000).map(|_| 3.0 + 2.0 * rng.sample::<f64, _>(StandardNormal)).collect();
        let meta = vec![VariableMeta::continuous("X", PhysicalClass::Other, 1)];
        let f = frame(meta.clone(), xs.iter().map(|&x| vec![x]).collect());
        let aug = augment(&f, 1).unwrap();
        let g = CausalGraph::empty(vec!["X".into()], 1);
        let scm = fit(&aug, &meta, &g).unwrap();
        let used = &xs[1..];
        match scm.predict(0, &[]).unwrap() {
            Prediction::Gaussian { mean, std } => {
                assert!((mean - stats::mean(used)).abs() < 1e-12);
                assert!((std - stats::std_dev(used)).abs() < 1e-12);
            }
            _ => panic!(),
        }
    }

    #[test]
    fn logistic_at_zero_is_half() {
        let g = CausalGraph::empty(vec!["A".into()], 1);
        let scm = Scm::from_parts(
            g,
            vec![VariableKind::BinaryActuator],
            vec![Standardization { mean: 0.0, std: 1.0 }],
            vec![StructuralEquation {
                target: 0,
                parents: vec![],
                form: EquationForm::Logistic {
                    intercept: 0.0,
                    linear: vec![],
                },
                flags: FitFlags::default(),
            }],
        )
        .unwrap();
        assert_eq!(scm.predict(0, &[]).unwrap(), Prediction::Bernoulli { p: 0.5 });
    }

    #[test]
    fn midpoint_latent_inside_interval() {
        let u = binary_latent(1.0, 0.8);
        assert!((u - 0.4).abs() < 1e-15 && u < 0.8);
        let u = binary_latent(0.0, 0.8);
        assert!((u - 0.9).abs() < 1e-15 && u >= 0.8);
    }

    #[test]
    fn two_valued_parent_fits_exactly_without_quadratic() {
        let x: Vec<f64> = (0..1000).map(|i| if (i * 7919) % 13 < 6 { -1.02 } else { 0.98 }).collect();
        let y: Vec<f64> = x.iter().map(|v| 0.3 + 1.7 * v).collect();
        let (a, b, q, sigma) = fit_gaussian(&[x], &y);
        assert_eq!(q, 0.0);
        assert!((a - 0.3).abs() < 1e-12 && (b[0] - 1.7).abs() < 1e-12);
        assert_eq!(sigma, SIGMA_FLOOR);
    }

    #[test]
    fn separation_falls_back_to_ridge() {
        let meta = vec![
            VariableMeta::continuous("X", PhysicalClass::Other, 1),
            VariableMeta::binary("A", PhysicalClass::Pump, 1),
        ];
        let rows: Vec<Vec<f64>> = (0..400)
            .map(|i| {
                let x = (i % 20) as f64;
                vec![x, if x >= 10.0 { 1.0 } else { 0.0 }]
            })
            .collect();
        let f = frame(meta.clone(), rows);
        let aug = augment(&f, 1).unwrap();
        let g = CausalGraph::new(vec!["X".into(), "A".into()], 1, 0.05, vec![Edge::new(0, 0, 1)]).unwrap();
        let scm = fit(&aug, &meta, &g).unwrap();
        assert!(scm.equation(1).flags.separation);
        let p_hi = scm.predict(1, &[15.0]).unwrap().mean();
        let p_lo = scm.predict(1, &[3.0]).unwrap().mean();
        assert!(p_hi > 0.99 && p_lo < 0.01);
    }

    #[test]
    fn constant_parent_gets_zero_coefficient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let meta = vec![
            VariableMeta::continuous("C", PhysicalClass::Other, 1),
            VariableMeta::continuous("Y", PhysicalClass::Other, 1),
        ];
        let rows: Vec<Vec<f64>> = (0..500)
            .map(|_| vec![7.0, rng.sample::<f64, _>(StandardNormal)])
            .collect();
        let f = frame(meta.clone(), rows);
        let aug = augment(&f, 1).unwrap();
        let g = CausalGraph::new(vec!["C".into(), "Y".into()], 1, 0.05, vec![Edge::new(0, 1, 1)]).unwrap();
        let scm = fit(&aug, &meta, &g).unwrap();
        assert_eq!(scm.equation(1).flags.constant_parents, vec![(0, 1)]);
        match &scm.equation(1).form {
            EquationForm::GaussianAdditive { linear, .. } => assert_eq!(linear[0], 0.0),
            _ => panic!(),
        }
    }

    #[test]
    fn insufficient_rows_rejected() {
        let meta = vec![VariableMeta::continuous("X", PhysicalClass::Other, 1)];
        let f = frame(meta.clone(), (0..12).map(|i| vec![i as f64]).collect());
        let aug = augment(&f, 1).unwrap();
        let g = CausalGraph::empty(vec!["X".into()], 1);
        assert!(matches!(
            fit(&aug, &meta, &g),
            Err(ScmError::InsufficientData { .. })
        ));
    }
}
