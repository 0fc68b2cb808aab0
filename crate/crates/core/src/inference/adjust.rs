//! Backdoor and frontdoor adjustment estimators on observational data.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::InferenceError;
use crate::data::TimeSeriesFrame;
use crate::stats;

/// Variables with at most this many distinct values are stratified exactly.
const MAX_LEVELS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdjustedEstimate {
    pub value: f64,
    pub std_error: f64,
    /// Strata without support for the treatment value; their mass was
    /// redistributed over the rest.
    pub empty_strata: usize,
}

/// Rows where every listed column is observed.
fn complete_rows(data: &TimeSeriesFrame, vars: &[usize]) -> Vec<usize> {
    (0..data.len())
        .filter(|&t| vars.iter().all(|&v| !data.value(t, v).is_nan()))
        .collect()
}

fn is_discrete(data: &TimeSeriesFrame, var: usize, rows: &[usize]) -> bool {
    let mut levels = std::collections::BTreeSet::new();
    for &t in rows {
        levels.insert(data.value(t, var).to_bits());
        if levels.len() > MAX_LEVELS {
            return false;
        }
    }
    true
}

fn key(data: &TimeSeriesFrame, t: usize, vars: &[usize]) -> Vec<u64> {
    vars.iter().map(|&v| data.value(t, v).to_bits()).collect()
}

fn check_vars(data: &TimeSeriesFrame, vars: &[usize]) -> Result<(), InferenceError> {
    match vars.iter().find(|&&v| v >= data.n_vars()) {
        Some(&v) => Err(InferenceError::GraphHashMismatch(v)),
        None => Ok(()),
    }
}

/// `Σ_z E[Y | x, z] P(z)`. Discrete treatment and adjustment variables
/// are stratified exactly; otherwise a linear regression of the outcome on
/// treatment and adjustment set is averaged over the empirical `z`.
pub fn backdoor_effect(
    data: &TimeSeriesFrame,
    treatment: usize,
    x: f64,
    outcome: usize,
    adjustment: &[usize],
) -> Result<AdjustedEstimate, InferenceError> {
    if adjustment.contains(&treatment) || adjustment.contains(&outcome) || treatment == outcome {
        return Err(InferenceError::InvalidAdjustment(
            "adjustment set overlaps treatment or outcome".into(),
        ));
    }
    let mut vars = vec![treatment, outcome];
    vars.extend_from_slice(adjustment);
    check_vars(data, &vars)?;
    let rows = complete_rows(data, &vars);
    if rows.is_empty() {
        return Err(InferenceError::EmptyStratum);
    }
    let discrete = is_discrete(data, treatment, &rows)
        && adjustment.iter().all(|&z| is_discrete(data, z, &rows));
    if discrete {
        stratified_backdoor(data, treatment, x, outcome, adjustment, &rows)
    } else {
        regression_backdoor(data, treatment, x, outcome, adjustment, &rows)
    }
}

#[derive(Default, Clone, Copy)]
struct Moments {
    n: f64,
    sum: f64,
    sum_sq: f64,
}

impl Moments {
    fn push(&mut self, y: f64) {
        self.n += 1.0;
        self.sum += y;
        self.sum_sq += y * y;
    }

    fn mean(&self) -> f64 {
        self.sum / self.n
    }

    fn var(&self) -> f64 {
        (self.sum_sq / self.n - self.mean().powi(2)).max(0.0)
    }
}

fn stratified_backdoor(
    data: &TimeSeriesFrame,
    treatment: usize,
    x: f64,
    outcome: usize,
    z: &[usize],
    rows: &[usize],
) -> Result<AdjustedEstimate, InferenceError> {
    let mut pz: BTreeMap<Vec<u64>, f64> = BTreeMap::new();
    let mut cond: BTreeMap<Vec<u64>, Moments> = BTreeMap::new();
    for &t in rows {
        let k = key(data, t, z);
        *pz.entry(k.clone()).or_default() += 1.0;
        if data.value(t, treatment) == x {
            cond.entry(k).or_default().push(data.value(t, outcome));
        }
    }
    let total = rows.len() as f64;
    let (mut value, mut mass, mut var, mut empty) = (0.0, 0.0, 0.0, 0);
    for (k, count) in &pz {
        let w = count / total;
        match cond.get(k) {
            Some(m) => {
                value += w * m.mean();
                var += w * w * m.var() / m.n;
                mass += w;
            }
            None => empty += 1,
        }
    }
    if mass == 0.0 {
        return Err(InferenceError::EmptyStratum);
    }
    Ok(AdjustedEstimate {
        value: value / mass,
        std_error: var.sqrt() / mass,
        empty_strata: empty,
    })
}

fn regression_backdoor(
    data: &TimeSeriesFrame,
    treatment: usize,
    x: f64,
    outcome: usize,
    z: &[usize],
    rows: &[usize],
) -> Result<AdjustedEstimate, InferenceError> {
    let n = rows.len();
    let w = 2 + z.len();
    let mut design = DMatrix::from_element(n, w, 1.0);
    let mut y = DVector::zeros(n);
    for (r, &t) in rows.iter().enumerate() {
        design[(r, 1)] = data.value(t, treatment);
        for (j, &v) in z.iter().enumerate() {
            design[(r, 2 + j)] = data.value(t, v);
        }
        y[r] = data.value(t, outcome);
    }
    let b = stats::least_squares(&design, &y).ok_or(InferenceError::EmptyStratum)?;
    let resid = &y - &design * &b;
    let sigma2 = resid.norm_squared() / (n.saturating_sub(w).max(1)) as f64;
    // prediction at X = x averaged over the empirical z equals evaluating
    // the linear model at the mean adjustment row
    let mut x0 = DVector::from_element(w, 1.0);
    x0[1] = x;
    for j in 0..z.len() {
        x0[2 + j] = design.column(2 + j).mean();
    }
    let value = x0.dot(&b);
    let xtx = design.transpose() * &design;
    let se = xtx
        .try_inverse()
        .map(|inv| (x0.dot(&(inv * &x0)) * sigma2).max(0.0).sqrt())
        .unwrap_or(f64::NAN);
    Ok(AdjustedEstimate {
        value,
        std_error: se,
        empty_strata: 0,
    })
}

/// `Σ_m P(m | x) Σ_x' E[Y | x', m] P(x')` for discrete treatment and
/// mediators.
pub fn frontdoor_effect(
    data: &TimeSeriesFrame,
    treatment: usize,
    x: f64,
    outcome: usize,
    mediators: &[usize],
) -> Result<AdjustedEstimate, InferenceError> {
    if mediators.is_empty() || mediators.contains(&treatment) || mediators.contains(&outcome) {
        return Err(InferenceError::InvalidAdjustment(
            "mediators must be non-empty and exclude treatment and outcome".into(),
        ));
    }
    let mut vars = vec![treatment, outcome];
    vars.extend_from_slice(mediators);
    check_vars(data, &vars)?;
    let rows = complete_rows(data, &vars);
    if rows.is_empty() {
        return Err(InferenceError::EmptyStratum);
    }
    if !is_discrete(data, treatment, &rows) || !mediators.iter().all(|&m| is_discrete(data, m, &rows)) {
        return Err(InferenceError::InvalidAdjustment(
            "frontdoor adjustment needs discrete treatment and mediators".into(),
        ));
    }
    let total = rows.len() as f64;
    let mut px: BTreeMap<u64, f64> = BTreeMap::new();
    let mut pm_given_x: BTreeMap<Vec<u64>, f64> = BTreeMap::new();
    let mut n_x = 0.0;
    let mut y_xm: BTreeMap<(u64, Vec<u64>), Moments> = BTreeMap::new();
    for &t in &rows {
        let xv = data.value(t, treatment);
        let m = key(data, t, mediators);
        *px.entry(xv.to_bits()).or_default() += 1.0;
        if xv == x {
            n_x += 1.0;
            *pm_given_x.entry(m.clone()).or_default() += 1.0;
        }
        y_xm.entry((xv.to_bits(), m)).or_default().push(data.value(t, outcome));
    }
    if n_x == 0.0 {
        return Err(InferenceError::EmptyStratum);
    }
    let (mut value, mut mass, mut var, mut empty) = (0.0, 0.0, 0.0, 0);
    for (m, c) in &pm_given_x {
        let pm = c / n_x;
        let (mut inner, mut inner_mass, mut inner_var) = (0.0, 0.0, 0.0);
        for (&xb, &cx) in &px {
            let w = cx / total;
            match y_xm.get(&(xb, m.clone())) {
                Some(mo) => {
                    inner += w * mo.mean();
                    inner_var += w * w * mo.var() / mo.n;
                    inner_mass += w;
                }
                None => empty += 1,
            }
        }
        if inner_mass > 0.0 {
            value += pm * inner / inner_mass;
            var += pm * pm * inner_var / (inner_mass * inner_mass);
            mass += pm;
        }
    }
    if mass == 0.0 {
        return Err(InferenceError::EmptyStratum);
    }
    Ok(AdjustedEstimate {
        value: value / mass,
        std_error: var.sqrt() / mass,
        empty_strata: empty,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{PhysicalClass, VariableMeta};

    fn frame(rows: Vec<[f64; 3]>) -> TimeSeriesFrame {
        let meta = (0..3)
            .map(|i| VariableMeta::continuous(format!("V{i}"), PhysicalClass::Other, 1))
            .collect();
        let t = rows.len() as i64;
        let v: Vec<f64> = rows.iter().flatten().copied().collect();
        TimeSeriesFrame::new(meta, (0..t).collect(), v, None).unwrap()
    }

    #[test]
    fn empty_set_is_conditional_mean() {
        let f = frame(vec![[1.0, 2.0, 0.0], [1.0, 4.0, 0.0], [0.0, 10.0, 0.0]]);
        let e = backdoor_effect(&f, 0, 1.0, 1, &[]).unwrap();
        assert!((e.value - 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_stratum_is_renormalised() {
        // z=1 never sees x=1
        let f = frame(vec![
            [1.0, 2.0, 0.0],
            [0.0, 5.0, 0.0],
            [0.0, 7.0, 1.0],
            [0.0, 9.0, 1.0],
        ]);
        let e = backdoor_effect(&f, 0, 1.0, 1, &[2]).unwrap();
        assert_eq!(e.empty_strata, 1);
        assert!((e.value - 2.0).abs() < 1e-12);
    }

    #[test]
    fn mediator_equal_to_treatment_rejected() {
        let f = frame(vec![[1.0, 2.0, 0.0]]);
        assert!(matches!(
            frontdoor_effect(&f, 0, 1.0, 1, &[0]),
            Err(InferenceError::InvalidAdjustment(_))
        ));
    }
}
