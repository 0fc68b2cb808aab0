//! Graphical identification: backdoor and frontdoor adjustment sets.
//!
//! Works on the summary graph (lags collapsed, self-dependence dropped).
//! Declared unobserved confounding `a ↔ b` becomes an explicit latent
//! parent of both ends.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::InferenceError;
use crate::graph::CausalGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdjustmentKind {
    Backdoor,
    Frontdoor,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdjustmentSet {
    pub kind: AdjustmentKind,
    pub variables: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Identification {
    Identified(AdjustmentSet),
    NotIdentifiable,
}

/// Largest frontdoor set tried.
const MAX_FRONTDOOR: usize = 4;

/// Directed graph over observed variables plus latents.
#[derive(Debug, Clone)]
pub struct Dag {
    observed: usize,
    children: Vec<BTreeSet<usize>>,
    parents: Vec<BTreeSet<usize>>,
}

impl Dag {
    pub fn from_graph(graph: &CausalGraph, bidirected: &[(usize, usize)]) -> Self {
        let n = graph.n_vars();
        let total = n + bidirected.len();
        let mut dag = Self {
            observed: n,
            children: vec![BTreeSet::new(); total],
            parents: vec![BTreeSet::new(); total],
        };
        for e in graph.edges().iter().filter(|e| e.src != e.dst) {
            dag.add(e.src, e.dst);
        }
        for (k, &(a, b)) in bidirected.iter().enumerate() {
            dag.add(n + k, a);
            dag.add(n + k, b);
        }
        dag
    }

    fn add(&mut self, a: usize, b: usize) {
        self.children[a].insert(b);
        self.parents[b].insert(a);
    }

    fn len(&self) -> usize {
        self.children.len()
    }

    pub fn is_acyclic(&self) -> bool {
        let mut indeg: Vec<usize> = self.parents.iter().map(|p| p.len()).collect();
        let mut stack: Vec<usize> = (0..self.len()).filter(|&v| indeg[v] == 0).collect();
        let mut seen = 0;
        while let Some(v) = stack.pop() {
            seen += 1;
            for &c in &self.children[v] {
                indeg[c] -= 1;
                if indeg[c] == 0 {
                    stack.push(c);
                }
            }
        }
        seen == self.len()
    }

    fn reach(&self, from: &[usize], adj: &[BTreeSet<usize>], skip: &BTreeSet<usize>) -> BTreeSet<usize> {
        let mut seen: BTreeSet<usize> = BTreeSet::new();
        let mut stack: Vec<usize> = from.to_vec();
        while let Some(v) = stack.pop() {
            if skip.contains(&v) || !seen.insert(v) {
                continue;
            }
            stack.extend(adj[v].iter().copied());
        }
        seen
    }

    /// Descendants of `v`, including `v`.
    pub fn descendants(&self, v: usize) -> BTreeSet<usize> {
        self.reach(&[v], &self.children, &BTreeSet::new())
    }

    /// Copy without the edges leaving any node of `nodes`.
    fn cut_outgoing(&self, nodes: &[usize]) -> Self {
        let mut g = self.clone();
        for &v in nodes {
            for c in std::mem::take(&mut g.children[v]) {
                g.parents[c].remove(&v);
            }
        }
        g
    }

    /// `xs ⊥ ys | zs` via the moralised ancestral graph.
    pub fn d_separated(&self, xs: &[usize], ys: &[usize], zs: &[usize]) -> bool {
        let all: Vec<usize> = xs.iter().chain(ys).chain(zs).copied().collect();
        let anc = self.reach(&all, &self.parents, &BTreeSet::new());
        let mut und: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); self.len()];
        for &v in &anc {
            let ps: Vec<usize> = self.parents[v].iter().copied().filter(|p| anc.contains(p)).collect();
            for &p in &ps {
                und[v].insert(p);
                und[p].insert(v);
            }
            for i in 0..ps.len() {
                for j in i + 1..ps.len() {
                    und[ps[i]].insert(ps[j]);
                    und[ps[j]].insert(ps[i]);
                }
            }
        }
        let blocked: BTreeSet<usize> = zs.iter().copied().collect();
        let reached = self.reach(xs, &und, &blocked);
        !ys.iter().any(|y| reached.contains(y))
    }

    /// Backdoor criterion for `z` relative to `(x, y)`.
    pub fn satisfies_backdoor(&self, x: usize, y: usize, z: &[usize]) -> bool {
        let desc = self.descendants(x);
        if z.iter().any(|v| desc.contains(v)) {
            return false;
        }
        self.cut_outgoing(&[x]).d_separated(&[x], &[y], z)
    }

    /// Frontdoor criterion for mediators `m` relative to `(x, y)`.
    pub fn satisfies_frontdoor(&self, x: usize, y: usize, m: &[usize]) -> bool {
        if m.is_empty() || m.contains(&x) || m.contains(&y) {
            return false;
        }
        let skip: BTreeSet<usize> = m.iter().copied().collect();
        let direct = self.reach(&[x], &self.children, &skip);
        if direct.contains(&y) {
            return false;
        }
        if !self.cut_outgoing(&[x]).d_separated(&[x], m, &[]) {
            return false;
        }
        self.cut_outgoing(m).d_separated(m, &[y], &[x])
    }

    fn observed_parents(&self, v: usize) -> Vec<usize> {
        self.parents[v].iter().copied().filter(|&p| p < self.observed).collect()
    }
}

/// Canonical backdoor set (observed parents of the treatment) when valid,
/// otherwise the smallest frontdoor set found, otherwise not identifiable.
pub fn find_adjustment_set(
    graph: &CausalGraph,
    bidirected: &[(usize, usize)],
    treatment: usize,
    outcome: usize,
) -> Result<Identification, InferenceError> {
    let n = graph.n_vars();
    if treatment == outcome {
        return Err(InferenceError::InvalidAdjustment(
            "treatment and outcome coincide".into(),
        ));
    }
    for v in [treatment, outcome] {
        if v >= n {
            return Err(InferenceError::GraphHashMismatch(v));
        }
    }
    let dag = Dag::from_graph(graph, bidirected);
    if !dag.is_acyclic() {
        return Ok(Identification::NotIdentifiable);
    }
    let z = dag.observed_parents(treatment);
    if dag.satisfies_backdoor(treatment, outcome, &z) {
        return Ok(Identification::Identified(AdjustmentSet {
            kind: AdjustmentKind::Backdoor,
            variables: z,
        }));
    }
    let desc = dag.descendants(treatment);
    let pool: Vec<usize> = (0..n)
        .filter(|&v| v != treatment && v != outcome && desc.contains(&v))
        .collect();
    for size in 1..=MAX_FRONTDOOR.min(pool.len()) {
        let mut found = None;
        for_each_subset(&pool, size, &mut |m| {
            if found.is_none() && dag.satisfies_frontdoor(treatment, outcome, m) {
                found = Some(m.to_vec());
            }
        });
        if let Some(m) = found {
            return Ok(Identification::Identified(AdjustmentSet {
                kind: AdjustmentKind::Frontdoor,
                variables: m,
            }));
        }
    }
    Ok(Identification::NotIdentifiable)
}

fn for_each_subset(items: &[usize], size: usize, f: &mut dyn FnMut(&[usize])) {
    fn rec(items: &[usize], size: usize, start: usize, cur: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
        if cur.len() == size {
            f(cur);
            return;
        }
        for i in start..items.len() {
            cur.push(items[i]);
            rec(items, size, i + 1, cur, f);
            cur.pop();
        }
    }
    rec(items, size, 0, &mut Vec::new(), f);
}
