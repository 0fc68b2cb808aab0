//! Lagged partial-correlation conditional-independence tests.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::DiscoveryError;
use crate::data::AugmentedFrame;
use crate::stats;

/// A `(variable, lag)` node of the augmented variable set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Node {
    pub var: usize,
    pub lag: usize,
}

impl Node {
    pub fn new(var: usize, lag: usize) -> Self {
        Self { var, lag }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CiOutcome {
    pub independent: bool,
    pub p_value: f64,
    pub partial_correlation: f64,
    /// Conditioners dropped because they were collinear with the rest.
    pub dropped: Vec<Node>,
    pub samples: usize,
}

/// Tests `i ⊥ j | conditioning` by residualising both on the conditioning
/// set (least squares with intercept) and applying Fisher's z to the
/// correlation of the residuals. Independent iff `p ≥ alpha`.
pub fn ci_test(
    aug: &AugmentedFrame,
    i: Node,
    j: Node,
    conditioning: &[Node],
    alpha: f64,
) -> Result<CiOutcome, DiscoveryError> {
    let rows: Vec<usize> = (0..aug.rows()).filter(|&r| aug.row_valid()[r]).collect();
    let n = rows.len();
    if n <= conditioning.len() + 3 {
        return Err(DiscoveryError::InsufficientSamples {
            samples: n,
            conditioning: conditioning.len(),
        });
    }
    let gather = |node: Node| -> DVector<f64> {
        let col = aug.column(node.var, node.lag);
        DVector::from_iterator(n, rows.iter().map(|&r| col[r]))
    };
    let yi = gather(i);
    let yj = gather(j);

    let mut cond: Vec<Node> = conditioning.to_vec();
    let mut dropped = Vec::new();
    let x = loop {
        let mut x = DMatrix::from_element(n, cond.len() + 1, 1.0);
        for (c, &node) in cond.iter().enumerate() {
            x.set_column(c + 1, &gather(node));
        }
        if stats::rank(&x) == x.ncols() || cond.is_empty() {
            break x;
        }
        dropped.push(cond.pop().expect("non-empty"));
    };
    let resid = |y: &DVector<f64>| -> Vec<f64> {
        let b = stats::least_squares(&x, y).expect("rows present");
        (y - &x * b).iter().copied().collect()
    };
    let ri = resid(&yi);
    let rj = resid(&yj);
    let rho = stats::correlation(&ri, &rj);
    let p = stats::fisher_z_p_value(rho, n, cond.len());
    Ok(CiOutcome {
        independent: p >= alpha,
        p_value: p,
        partial_correlation: rho,
        dropped,
        samples: n,
    })
}

/// Covariance of a fixed set of augmented columns over the valid rows.
/// Partial correlations of any subset follow from matrix inversion, which
/// equals residualisation on the same rows.
#[derive(Debug, Clone)]
pub struct LocalCovariance {
    cov: DMatrix<f64>,
    samples: usize,
}

impl LocalCovariance {
    pub fn new(aug: &AugmentedFrame, nodes: &[Node]) -> Self {
        let rows: Vec<usize> = (0..aug.rows()).filter(|&r| aug.row_valid()[r]).collect();
        let n = rows.len();
        let k = nodes.len();
        let cols: Vec<Vec<f64>> = nodes
            .iter()
            .map(|nd| {
                let c = aug.column(nd.var, nd.lag);
                rows.iter().map(|&r| c[r]).collect()
            })
            .collect();
        let means: Vec<f64> = cols.iter().map(|c| stats::mean(c)).collect();
        let mut cov = DMatrix::zeros(k, k);
        for a in 0..k {
            for b in a..k {
                let mut s = 0.0;
                for r in 0..n {
                    s += (cols[a][r] - means[a]) * (cols[b][r] - means[b]);
                }
                let v = if n > 0 { s / n as f64 } else { 0.0 };
                cov[(a, b)] = v;
                cov[(b, a)] = v;
            }
        }
        Self { cov, samples: n }
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    /// Partial correlation of local indices `a`, `b` given `cond`. Collinear
    /// conditioners are dropped from the end; the number kept is returned.
    pub fn partial_correlation(&self, a: usize, b: usize, cond: &[usize]) -> (f64, usize) {
        let mut kept = cond.len();
        loop {
            let idx: Vec<usize> = [a, b].into_iter().chain(cond[..kept].iter().copied()).collect();
            let sub = DMatrix::from_fn(idx.len(), idx.len(), |r, c| self.cov[(idx[r], idx[c])]);
            let scale = sub.diagonal().max().max(f64::MIN_POSITIVE);
            if let Some(chol) = sub.clone().cholesky() {
                let cond_ok = chol.l().diagonal().iter().all(|d| d * d > 1e-12 * scale);
                if cond_ok {
                    let p = chol.inverse();
                    let denom = (p[(0, 0)] * p[(1, 1)]).sqrt();
                    let rho = if denom > 0.0 { -p[(0, 1)] / denom } else { 0.0 };
                    return (rho.clamp(-1.0, 1.0), kept);
                }
            }
            if kept == 0 {
                // a or b itself is degenerate
                return (0.0, 0);
            }
            kept -= 1;
        }
    }

    /// p-value of `a ⊥ b | cond`.
    pub fn p_value(&self, a: usize, b: usize, cond: &[usize]) -> f64 {
        let (rho, kept) = self.partial_correlation(a, b, cond);
        stats::fisher_z_p_value(rho, self.samples, kept)
    }
}
