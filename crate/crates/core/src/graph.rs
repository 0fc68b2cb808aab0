//! Lag-annotated causal graph over `(variable, lag)` nodes.
//!
//! Every edge points into a variable at lag 0. Lagged edges are oriented
//! past → present by construction; the contemporaneous sub-graph must stay
//! acyclic.

use std::collections::{BTreeSet, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("edge {src}@{lag} -> {dst} references an unknown variable")]
    UnknownVariable { src: usize, lag: usize, dst: usize },
    #[error("self-loop at lag 0 on variable {0}")]
    SelfLoop(usize),
    #[error("lag {lag} exceeds max lag {max_lag}")]
    LagTooLarge { lag: usize, max_lag: usize },
    #[error("duplicate edge {src}@{lag} -> {dst}")]
    DuplicateEdge { src: usize, lag: usize, dst: usize },
    #[error("contemporaneous edges contain a cycle")]
    Cycle,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Which rule fixed the direction of an edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrientationSource {
    Temporal,
    Physical,
    ControlLogic,
    CIStatistics,
}

/// `src(t − src_lag) → dst(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub src: usize,
    pub src_lag: usize,
    pub dst: usize,
    /// Time-delay mutual information (nats) measured during discovery.
    pub strength: f64,
    pub orientation_source: OrientationSource,
}

impl Edge {
    pub fn new(src: usize, src_lag: usize, dst: usize) -> Self {
        Self {
            src,
            src_lag,
            dst,
            strength: 0.0,
            orientation_source: if src_lag > 0 {
                OrientationSource::Temporal
            } else {
                OrientationSource::CIStatistics
            },
        }
    }

    pub fn key(&self) -> (usize, usize, usize) {
        (self.src, self.src_lag, self.dst)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalGraph {
    nodes: Vec<String>,
    max_lag: usize,
    alpha: f64,
    edges: Vec<Edge>,
}

impl CausalGraph {
    /// Validates invariants and stores edges in canonical `(dst, src, lag)`
    /// order.
    pub fn new(
        nodes: Vec<String>,
        max_lag: usize,
        alpha: f64,
        mut edges: Vec<Edge>,
    ) -> Result<Self, GraphError> {
        let n = nodes.len();
        let mut seen = BTreeSet::new();
        for e in &edges {
            if e.src >= n || e.dst >= n {
                return Err(GraphError::UnknownVariable {
                    src: e.src,
                    lag: e.src_lag,
                    dst: e.dst,
                });
            }
            if e.src_lag == 0 && e.src == e.dst {
                return Err(GraphError::SelfLoop(e.src));
            }
            if e.src_lag > max_lag {
                return Err(GraphError::LagTooLarge {
                    lag: e.src_lag,
                    max_lag,
                });
            }
            if !seen.insert(e.key()) {
                return Err(GraphError::DuplicateEdge {
                    src: e.src,
                    lag: e.src_lag,
                    dst: e.dst,
                });
            }
        }
        for e in edges.iter_mut() {
            if e.src_lag > 0 {
                e.orientation_source = OrientationSource::Temporal;
            }
        }
        edges.sort_by_key(|e| (e.dst, e.src, e.src_lag));
        let g = Self {
            nodes,
            max_lag,
            alpha,
            edges,
        };
        if g.contemporaneous_order().is_none() {
            return Err(GraphError::Cycle);
        }
        Ok(g)
    }

    pub fn empty(nodes: Vec<String>, max_lag: usize) -> Self {
        Self {
            nodes,
            max_lag,
            alpha: 0.05,
            edges: Vec::new(),
        }
    }

    pub fn n_vars(&self) -> usize {
        self.nodes.len()
    }

    pub fn names(&self) -> &[String] {
        &self.nodes
    }

    pub fn max_lag(&self) -> usize {
        self.max_lag
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// Edges between distinct variables (lagged self-dependence excluded).
    pub fn cross_edges(&self) -> usize {
        self.edges.iter().filter(|e| e.src != e.dst).count()
    }

    pub fn contains(&self, src: usize, lag: usize, dst: usize) -> bool {
        self.edges
            .binary_search_by_key(&(dst, src, lag), |e| (e.dst, e.src, e.src_lag))
            .is_ok()
    }

    /// Parents of `dst` as `(variable, lag)`, in canonical order.
    pub fn parents(&self, dst: usize) -> Vec<(usize, usize)> {
        let lo = self.edges.partition_point(|e| e.dst < dst);
        let hi = self.edges.partition_point(|e| e.dst <= dst);
        self.edges[lo..hi].iter().map(|e| (e.src, e.src_lag)).collect()
    }

    /// Largest lag actually used by an edge.
    pub fn used_lag(&self) -> usize {
        self.edges.iter().map(|e| e.src_lag).max().unwrap_or(0)
    }

    /// Topological order of the variables under lag-0 edges, or `None` when
    /// they form a cycle. Ties broken by variable index.
    pub fn contemporaneous_order(&self) -> Option<Vec<usize>> {
        let n = self.n_vars();
        let mut indeg = vec![0usize; n];
        let mut children = vec![Vec::new(); n];
        for e in self.edges.iter().filter(|e| e.src_lag == 0) {
            indeg[e.dst] += 1;
            children[e.src].push(e.dst);
        }
        let mut ready: BTreeSet<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(&v) = ready.iter().next() {
            ready.remove(&v);
            order.push(v);
            for &c in &children[v] {
                indeg[c] -= 1;
                if indeg[c] == 0 {
                    ready.insert(c);
                }
            }
        }
        (order.len() == n).then_some(order)
    }

    /// Summary graph adjacency (lags collapsed, self-dependence dropped).
    pub fn summary_children(&self) -> Vec<Vec<usize>> {
        let mut ch: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); self.n_vars()];
        for e in self.edges.iter().filter(|e| e.src != e.dst) {
            ch[e.src].insert(e.dst);
        }
        ch.into_iter().map(|s| s.into_iter().collect()).collect()
    }

    fn summary_parents(&self) -> Vec<Vec<usize>> {
        let mut pa: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); self.n_vars()];
        for e in self.edges.iter().filter(|e| e.src != e.dst) {
            pa[e.dst].insert(e.src);
        }
        pa.into_iter().map(|s| s.into_iter().collect()).collect()
    }

    /// Variables reachable from `var` in the summary graph, excluding itself.
    pub fn descendants(&self, var: usize) -> BTreeSet<usize> {
        reach(&self.summary_children(), var)
    }

    /// Variables that reach `var` in the summary graph, excluding itself.
    pub fn ancestors(&self, var: usize) -> BTreeSet<usize> {
        reach(&self.summary_parents(), var)
    }

    /// Centrality weights `(|desc| + |anc|) / (2n)` for every variable.
    pub fn centrality_weights(&self) -> Vec<f64> {
        let n = self.n_vars();
        let ch = self.summary_children();
        let pa = self.summary_parents();
        (0..n)
            .map(|i| {
                let d = reach(&ch, i).len();
                let a = reach(&pa, i).len();
                (d + a) as f64 / (2.0 * n as f64)
            })
            .collect()
    }

    /// Edge density against the undirected pair count `n(n−1)/2`.
    pub fn density(&self) -> f64 {
        let n = self.n_vars() as f64;
        if n < 2.0 {
            return 0.0;
        }
        self.cross_edges() as f64 / (n * (n - 1.0) / 2.0)
    }

    /// Structural fingerprint: SHA-256 over variable names and edge keys.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for name in &self.nodes {
            h.update(name.as_bytes());
            h.update([0u8]);
        }
        h.update((self.max_lag as u64).to_le_bytes());
        for e in &self.edges {
            for x in [e.src, e.src_lag, e.dst] {
                h.update((x as u64).to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn to_json(&self) -> Result<String, GraphError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self, GraphError> {
        let raw: CausalGraph = serde_json::from_str(s)?;
        Self::new(raw.nodes, raw.max_lag, raw.alpha, raw.edges)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), GraphError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GraphError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

fn reach(adj: &[Vec<usize>], start: usize) -> BTreeSet<usize> {
    let mut seen = BTreeSet::new();
    let mut queue: VecDeque<usize> = adj[start].iter().copied().collect();
    while let Some(v) = queue.pop_front() {
        if v != start && seen.insert(v) {
            queue.extend(adj[v].iter().copied());
        }
    }
    seen
}
