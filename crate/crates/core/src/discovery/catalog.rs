//! Domain-knowledge constraints used to orient and filter edges.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DiscoveryError;
use crate::data::PhysicalClass;

/// Variable-level exclusion. `lag: None` forbids the pair at every lag.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForbiddenPair {
    pub src: String,
    pub dst: String,
    #[serde(default)]
    pub lag: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControlEdge {
    pub controller: String,
    pub actuators: Vec<String>,
}

/// How a catalog judges one directed edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    /// The catalog says nothing about this pair.
    Unmentioned,
    Allowed,
    Violates,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConstraintCatalog {
    /// Directed class pairs allowed at lag 0, e.g. `[flow, level]`.
    #[serde(default)]
    pub class_precedence: Vec<(PhysicalClass, PhysicalClass)>,
    #[serde(default)]
    pub forbidden_pairs: Vec<ForbiddenPair>,
    #[serde(default)]
    pub control_edges: Vec<ControlEdge>,
}

impl ConstraintCatalog {
    /// Rejects a class precedence relation that contains a cycle.
    pub fn validate(&self) -> Result<(), DiscoveryError> {
        let classes: BTreeSet<PhysicalClass> = self
            .class_precedence
            .iter()
            .flat_map(|&(a, b)| [a, b])
            .collect();
        let mut remaining: Vec<(PhysicalClass, PhysicalClass)> = self.class_precedence.clone();
        let mut alive = classes;
        loop {
            let sources: Vec<PhysicalClass> = alive
                .iter()
                .copied()
                .filter(|c| !remaining.iter().any(|&(_, b)| b == *c))
                .collect();
            if sources.is_empty() {
                break;
            }
            for s in &sources {
                alive.remove(s);
            }
            remaining.retain(|(a, _)| !sources.contains(a));
        }
        if remaining.is_empty() {
            Ok(())
        } else {
            Err(DiscoveryError::CyclicPrecedence)
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DiscoveryError> {
        let c: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        c.validate()?;
        Ok(c)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DiscoveryError> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn precedes(&self, a: PhysicalClass, b: PhysicalClass) -> bool {
        self.class_precedence.contains(&(a, b))
    }

    pub fn is_forbidden(&self, src: &str, dst: &str, lag: usize) -> bool {
        self.forbidden_pairs
            .iter()
            .any(|f| f.src == src && f.dst == dst && f.lag.is_none_or(|l| l == lag))
    }

    pub fn is_control(&self, src: &str, dst: &str) -> bool {
        self.control_edges
            .iter()
            .any(|c| c.controller == src && c.actuators.iter().any(|a| a == dst))
    }

    /// Judges `src(t − lag) → dst(t)`.
    ///
    /// Forbidden pairs always violate and declared control edges are always
    /// allowed. Otherwise a class pair listed in the precedence relation is
    /// allowed at any lag; its reverse is allowed only with a positive lag
    /// (feedback through the process takes time). Pairs of the same variable
    /// and class pairs the catalog never lists are unmentioned.
    pub fn verdict(
        &self,
        src: &str,
        src_class: PhysicalClass,
        dst: &str,
        dst_class: PhysicalClass,
        lag: usize,
    ) -> Verdict {
        if src == dst {
            return Verdict::Unmentioned;
        }
        if self.is_forbidden(src, dst, lag) {
            return Verdict::Violates;
        }
        if self.is_control(src, dst) {
            return Verdict::Allowed;
        }
        if self.is_control(dst, src) && lag == 0 {
            return Verdict::Violates;
        }
        if self.precedes(src_class, dst_class) {
            Verdict::Allowed
        } else if self.precedes(dst_class, src_class) {
            if lag > 0 {
                Verdict::Allowed
            } else {
                Verdict::Violates
            }
        } else {
            Verdict::Unmentioned
        }
    }
}
