//! Interventional and counterfactual queries over a fitted [`Scm`].

pub mod adjust;
pub mod counterfactual;
pub mod identify;
pub mod simulate;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use adjust::{backdoor_effect, frontdoor_effect, AdjustedEstimate};
pub use counterfactual::{counterfactual, CounterfactualQuery, CounterfactualResult, Outcome};
pub use identify::{find_adjustment_set, AdjustmentKind, AdjustmentSet, Identification};
pub use simulate::{
    abduct, interventional_mean, simulate_do, Engine, Estimate, Exogenous, Trajectory,
};

use crate::scm::{Scm, ScmError};

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("intervention references variable {0}, absent from the model")]
    GraphHashMismatch(usize),
    #[error("variable {0} assigned more than once")]
    DuplicateAssignment(usize),
    #[error("binary variable {var} cannot be set to {value}")]
    NonBinaryAssignment { var: usize, value: f64 },
    #[error("horizon must be at least 1")]
    EmptyHorizon,
    #[error("initial history must hold {needed} rows of {n} values")]
    BadHistory { needed: usize, n: usize },
    #[error("evidence is missing {var} at row {row}")]
    MissingEvidence { row: usize, var: usize },
    #[error("invalid adjustment set: {0}")]
    InvalidAdjustment(String),
    #[error("no usable stratum for the requested treatment value")]
    EmptyStratum,
    #[error("effect is not identifiable from the declared graph")]
    NotIdentifiable,
    #[error(transparent)]
    Scm(#[from] ScmError),
}

/// Structural replacement `do(V = v)` for a set of variables.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Intervention {
    assignments: Vec<(usize, f64)>,
}

impl Intervention {
    pub fn new(mut assignments: Vec<(usize, f64)>) -> Result<Self, InferenceError> {
        assignments.sort_by_key(|a| a.0);
        for w in assignments.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(InferenceError::DuplicateAssignment(w[0].0));
            }
        }
        Ok(Self { assignments })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn single(var: usize, value: f64) -> Self {
        Self {
            assignments: vec![(var, value)],
        }
    }

    pub fn assignments(&self) -> &[(usize, f64)] {
        &self.assignments
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }

    pub fn get(&self, var: usize) -> Option<f64> {
        self.assignments
            .binary_search_by_key(&var, |a| a.0)
            .ok()
            .map(|i| self.assignments[i].1)
    }

    /// Checks every assignment against the model.
    pub fn validate(&self, scm: &Scm) -> Result<(), InferenceError> {
        for &(var, value) in &self.assignments {
            if var >= scm.n_vars() {
                return Err(InferenceError::GraphHashMismatch(var));
            }
            if scm.is_binary(var) && value != 0.0 && value != 1.0 {
                return Err(InferenceError::NonBinaryAssignment { var, value });
            }
        }
        Ok(())
    }
}
