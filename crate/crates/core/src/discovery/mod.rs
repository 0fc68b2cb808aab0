//! Two-phase causal discovery: TDMI candidate filtering, then local PC with
//! constraint-based orientation.

pub mod catalog;
pub mod ci;
pub mod tdmi;

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use catalog::{ConstraintCatalog, ControlEdge, ForbiddenPair, Verdict};
pub use ci::{ci_test, CiOutcome, LocalCovariance, Node};
pub use tdmi::{equal_frequency_bins, mutual_information, tdmi, BinnedSeries, MiEstimate};

use crate::data::{AugmentedFrame, VariableMeta};
use crate::graph::{CausalGraph, Edge, GraphError, OrientationSource};
use crate::stats;

#[derive(Debug, Error)]
pub enum DiscoveryError {
    #[error("series too short: {len} aligned samples, need more than {needed}")]
    SeriesTooShort { len: usize, needed: usize },
    #[error("{samples} samples cannot support {conditioning} conditioners")]
    InsufficientSamples { samples: usize, conditioning: usize },
    #[error("class precedence relation contains a cycle")]
    CyclicPrecedence,
    #[error("metadata lists {meta} variables but the frame has {frame}")]
    MetaMismatch { meta: usize, frame: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// How the TDMI threshold δ is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaPolicy {
    /// Fixed threshold in nats.
    Absolute(f64),
    /// Quantile of TDMI against shuffled copies of the target.
    Surrogate { shuffles: usize, quantile: f64 },
}

impl Default for DeltaPolicy {
    fn default() -> Self {
        DeltaPolicy::Surrogate {
            shuffles: 40,
            quantile: 0.95,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub var: usize,
    pub lag: usize,
    pub tdmi: f64,
}

impl Candidate {
    pub fn node(&self) -> Node {
        Node::new(self.var, self.lag)
    }
}

/// Phase I output for one target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParentSet {
    pub target: usize,
    /// Sorted by (TDMI desc, variable asc, lag asc); at most `k` entries.
    pub candidates: Vec<Candidate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryConfig {
    pub k: usize,
    pub alpha: f64,
    pub bins: usize,
    pub delta: DeltaPolicy,
    pub seed: u64,
}

impl Default for DiscoveryConfig {
    fn default() -> Self {
        Self {
            k: 10,
            alpha: 0.05,
            bins: 16,
            delta: DeltaPolicy::default(),
            seed: 0,
        }
    }
}

/// Bookkeeping from one discovery run.
#[derive(Debug, Clone, Default)]
pub struct DiscoveryStats {
    pub parent_sets: Vec<ParentSet>,
    /// Surviving neighbours of each target after local PC.
    pub local_parents: Vec<Vec<Candidate>>,
    /// CI tests run per target.
    pub ci_tests: Vec<usize>,
    pub dropped_conditioners: usize,
    pub cycles_broken: usize,
}

/// Binned augmented columns, invalid rows coded missing.
struct BinnedFrame {
    max_lag: usize,
    cols: Vec<BinnedSeries>,
    valid: usize,
}

impl BinnedFrame {
    fn new(aug: &AugmentedFrame, bins: usize) -> Self {
        let valid = aug.row_valid();
        let cols = aug
            .columns()
            .par_iter()
            .map(|&(v, l)| {
                let masked: Vec<f64> = aug
                    .column(v, l)
                    .iter()
                    .zip(valid)
                    .map(|(&x, &ok)| if ok { x } else { f64::NAN })
                    .collect();
                equal_frequency_bins(&masked, bins)
            })
            .collect();
        Self {
            max_lag: aug.max_lag(),
            cols,
            valid: aug.valid_rows(),
        }
    }

    fn col(&self, var: usize, lag: usize) -> &BinnedSeries {
        &self.cols[var * (self.max_lag + 1) + lag]
    }
}

/// Phase I for one target: the strongest lag of every source, kept when its
/// TDMI exceeds δ, ranked and capped at `k`.
pub fn select_candidates(
    aug: &AugmentedFrame,
    target: usize,
    k: usize,
    delta: DeltaPolicy,
    bins: usize,
    seed: u64,
) -> Result<ParentSet, DiscoveryError> {
    let binned = BinnedFrame::new(aug, bins);
    select_from_binned(&binned, aug.n_vars(), target, k, delta, bins, seed)
}

fn select_from_binned(
    b: &BinnedFrame,
    n_vars: usize,
    target: usize,
    k: usize,
    delta: DeltaPolicy,
    bins: usize,
    seed: u64,
) -> Result<ParentSet, DiscoveryError> {
    if k == 0 {
        return Err(DiscoveryError::InvalidConfig("k must be at least 1".into()));
    }
    if b.valid <= bins * bins {
        return Err(DiscoveryError::SeriesTooShort {
            len: b.valid,
            needed: bins * bins,
        });
    }
    let y = b.col(target, 0);
    let mut best: Vec<Candidate> = Vec::new();
    for var in 0..n_vars {
        let mut top: Option<Candidate> = None;
        let first_lag = usize::from(var == target);
        for lag in first_lag..=b.max_lag {
            let x = b.col(var, lag);
            let mi = tdmi::mi_codes(&x.codes, x.n_bins, &y.codes, y.n_bins);
            if top.is_none_or(|t| mi > t.tdmi) {
                top = Some(Candidate { var, lag, tdmi: mi });
            }
        }
        best.extend(top);
    }

    let thresholds: BTreeMap<usize, f64> = match delta {
        DeltaPolicy::Absolute(d) => best.iter().map(|c| (b.col(c.var, c.lag).n_bins, d)).collect(),
        DeltaPolicy::Surrogate { shuffles, quantile } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (target as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let mut by_card: BTreeMap<usize, &BinnedSeries> = BTreeMap::new();
            for c in &best {
                let x = b.col(c.var, c.lag);
                by_card.entry(x.n_bins).or_insert(x);
            }
            let mut shuffled = y.codes.clone();
            let mut out = BTreeMap::new();
            for (card, x) in by_card {
                let mut draws = Vec::with_capacity(shuffles);
                for _ in 0..shuffles {
                    shuffled.shuffle(&mut rng);
                    draws.push(tdmi::mi_codes(&x.codes, x.n_bins, &shuffled, y.n_bins));
                }
                out.insert(card, stats::quantile(&draws, quantile));
            }
            out
        }
    };
    best.retain(|c| c.tdmi > thresholds[&b.col(c.var, c.lag).n_bins]);
    best.sort_by(|a, c| {
        c.tdmi
            .total_cmp(&a.tdmi)
            .then(a.var.cmp(&c.var))
            .then(a.lag.cmp(&c.lag))
    });
    best.truncate(k);
    Ok(ParentSet {
        target,
        candidates: best,
    })
}

/// Local PC-stable skeleton pruning of `target` against its candidates.
/// Returns surviving candidates, the CI-test count and dropped conditioners.
fn local_pc(
    aug: &AugmentedFrame,
    ps: &ParentSet,
    alpha: f64,
) -> (Vec<Candidate>, usize, usize) {
    let mut nodes = vec![Node::new(ps.target, 0)];
    nodes.extend(ps.candidates.iter().map(|c| c.node()));
    let lc = LocalCovariance::new(aug, &nodes);
    let m = ps.candidates.len();
    // local indices 1..=m are candidates, 0 is the target
    let mut adj: Vec<usize> = (1..=m).collect();
    let mut tests = 0;
    let mut dropped = 0;
    let mut level = 0;
    while adj.len() > level {
        let snapshot = adj.clone();
        let mut removed = BTreeSet::new();
        for &c in &snapshot {
            let others: Vec<usize> = snapshot.iter().copied().filter(|&o| o != c).collect();
            if others.len() < level {
                continue;
            }
            for subset in combinations(&others, level) {
                tests += 1;
                let (rho, kept) = lc.partial_correlation(0, c, &subset);
                dropped += subset.len() - kept;
                let p = stats::fisher_z_p_value(rho, lc.samples(), kept);
                if p >= alpha {
                    removed.insert(c);
                    break;
                }
            }
        }
        adj.retain(|c| !removed.contains(c));
        level += 1;
    }
    let kept = adj.iter().map(|&i| ps.candidates[i - 1]).collect();
    (kept, tests, dropped)
}

fn combinations(items: &[usize], size: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(size);
    fn rec(items: &[usize], size: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == size {
            out.push(cur.clone());
            return;
        }
        for i in start..items.len() {
            if items.len() - i < size - cur.len() {
                break;
            }
            cur.push(items[i]);
            rec(items, size, i + 1, cur, out);
            cur.pop();
        }
    }
    rec(items, size, 0, &mut cur, &mut out);
    out
}

/// Full discovery returning only the graph.
pub fn discover(
    aug: &AugmentedFrame,
    meta: &[VariableMeta],
    catalog: &ConstraintCatalog,
    cfg: &DiscoveryConfig,
) -> Result<CausalGraph, DiscoveryError> {
    discover_with_stats(aug, meta, catalog, cfg).map(|(g, _)| g)
}

pub fn discover_with_stats(
    aug: &AugmentedFrame,
    meta: &[VariableMeta],
    catalog: &ConstraintCatalog,
    cfg: &DiscoveryConfig,
) -> Result<(CausalGraph, DiscoveryStats), DiscoveryError> {
    let n = aug.n_vars();
    if meta.len() != n {
        return Err(DiscoveryError::MetaMismatch {
            meta: meta.len(),
            frame: n,
        });
    }
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(DiscoveryError::InvalidConfig(format!("alpha {} outside (0, 1)", cfg.alpha)));
    }
    catalog.validate()?;
    let binned = BinnedFrame::new(aug, cfg.bins);

    let per_target: Vec<(ParentSet, Vec<Candidate>, usize, usize)> = (0..n)
        .into_par_iter()
        .map(|t| {
            let ps = select_from_binned(&binned, n, t, cfg.k, cfg.delta, cfg.bins, cfg.seed)?;
            let (kept, tests, dropped) = local_pc(aug, &ps, cfg.alpha);
            Ok((ps, kept, tests, dropped))
        })
        .collect::<Result<_, DiscoveryError>>()?;

    let mut stats_out = DiscoveryStats::default();
    let mut lagged: BTreeMap<(usize, usize, usize), f64> = BTreeMap::new();
    // unordered lag-0 pairs (lo, hi) with their strongest TDMI
    let mut contemporaneous: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for (ps, kept, tests, dropped) in per_target {
        let t = ps.target;
        for c in &kept {
            if c.lag > 0 {
                lagged.insert((c.var, c.lag, t), c.tdmi);
            } else {
                let key = (c.var.min(t), c.var.max(t));
                let e = contemporaneous.entry(key).or_insert(0.0);
                *e = e.max(c.tdmi);
            }
        }
        stats_out.ci_tests.push(tests);
        stats_out.dropped_conditioners += dropped;
        stats_out.parent_sets.push(ps);
        stats_out.local_parents.push(kept);
    }

    let name = |i: usize| meta[i].name.as_str();
    let class = |i: usize| meta[i].physical_class;
    let mut edges: Vec<Edge> = Vec::new();
    for (&(src, lag, dst), &mi) in &lagged {
        if catalog.verdict(name(src), class(src), name(dst), class(dst), lag) == Verdict::Violates {
            continue;
        }
        edges.push(Edge {
            src,
            src_lag: lag,
            dst,
            strength: mi,
            orientation_source: OrientationSource::Temporal,
        });
    }

    let adjacent0: BTreeSet<(usize, usize)> = contemporaneous.keys().copied().collect();
    let is_adj0 = |a: usize, b: usize| adjacent0.contains(&(a.min(b), a.max(b)));
    let lc_cache = |nodes: &[Node]| LocalCovariance::new(aug, nodes);
    for (&(a, b), &mi) in &contemporaneous {
        let ab_forbidden = catalog.is_forbidden(name(a), name(b), 0);
        let ba_forbidden = catalog.is_forbidden(name(b), name(a), 0);
        let oriented = if ab_forbidden && ba_forbidden {
            None
        } else if ab_forbidden {
            Some((b, a, OrientationSource::Physical))
        } else if ba_forbidden {
            Some((a, b, OrientationSource::Physical))
        } else if catalog.precedes(class(a), class(b)) && !catalog.precedes(class(b), class(a)) {
            Some((a, b, OrientationSource::Physical))
        } else if catalog.precedes(class(b), class(a)) && !catalog.precedes(class(a), class(b)) {
            Some((b, a, OrientationSource::Physical))
        } else if catalog.is_control(name(a), name(b)) {
            Some((a, b, OrientationSource::ControlLogic))
        } else if catalog.is_control(name(b), name(a)) {
            Some((b, a, OrientationSource::ControlLogic))
        } else {
            let (s, d) = collider_orientation(a, b, n, &is_adj0, cfg.alpha, &lc_cache)
                .unwrap_or_else(|| {
                    if (meta[a].stage, a) <= (meta[b].stage, b) {
                        (a, b)
                    } else {
                        (b, a)
                    }
                });
            Some((s, d, OrientationSource::CIStatistics))
        };
        if let Some((src, dst, source)) = oriented {
            edges.push(Edge {
                src,
                src_lag: 0,
                dst,
                strength: mi,
                orientation_source: source,
            });
        }
    }

    stats_out.cycles_broken = break_cycles(n, &mut edges);
    let graph = CausalGraph::new(
        meta.iter().map(|m| m.name.clone()).collect(),
        aug.max_lag(),
        cfg.alpha,
        edges,
    )?;
    Ok((graph, stats_out))
}

/// Looks for an unshielded collider `a → b ← c` (or `b → a ← c`) among
/// lag-0 neighbours: `c` independent of one endpoint marginally but
/// dependent once the other endpoint is conditioned on.
fn collider_orientation(
    a: usize,
    b: usize,
    n: usize,
    is_adj0: &dyn Fn(usize, usize) -> bool,
    alpha: f64,
    lc: &dyn Fn(&[Node]) -> LocalCovariance,
) -> Option<(usize, usize)> {
    for (x, y) in [(a, b), (b, a)] {
        // candidate collider at y: x → y ← c with c not adjacent to x
        for c in 0..n {
            if c == x || c == y || !is_adj0(c, y) || is_adj0(c, x) {
                continue;
            }
            let cov = lc(&[Node::new(x, 0), Node::new(c, 0), Node::new(y, 0)]);
            let marginal = cov.p_value(0, 1, &[]);
            let given = cov.p_value(0, 1, &[2]);
            if marginal >= alpha && given < alpha {
                return Some((x, y));
            }
        }
    }
    None
}

/// Deletes the weakest edge of each remaining lag-0 cycle. Returns the
/// number of deletions.
fn break_cycles(n: usize, edges: &mut Vec<Edge>) -> usize {
    let mut removed = 0;
    while let Some(cycle) = find_cycle(n, edges) {
        let weakest = cycle
            .iter()
            .copied()
            .min_by(|&i, &j| {
                edges[i]
                    .strength
                    .total_cmp(&edges[j].strength)
                    .then(edges[i].key().cmp(&edges[j].key()))
            })
            .expect("cycle is non-empty");
        edges.remove(weakest);
        removed += 1;
    }
    removed
}

/// Indices of edges on some lag-0 cycle.
fn find_cycle(n: usize, edges: &[Edge]) -> Option<Vec<usize>> {
    let mut out: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for (i, e) in edges.iter().enumerate().filter(|(_, e)| e.src_lag == 0) {
        out[e.src].push((e.dst, i));
    }
    // 0 = unvisited, 1 = on stack, 2 = done
    let mut state = vec![0u8; n];
    let mut via: Vec<Option<usize>> = vec![None; n];
    for root in 0..n {
        if state[root] != 0 {
            continue;
        }
        let mut stack = vec![(root, 0usize)];
        state[root] = 1;
        while let Some(&mut (v, ref mut next)) = stack.last_mut() {
            if *next < out[v].len() {
                let (w, ei) = out[v][*next];
                *next += 1;
                match state[w] {
                    0 => {
                        state[w] = 1;
                        via[w] = Some(ei);
                        stack.push((w, 0));
                    }
                    1 => {
                        let mut cyc = vec![ei];
                        let mut u = v;
                        while u != w {
                            let e = via[u].expect("on stack");
                            cyc.push(e);
                            u = edges[e].src;
                        }
                        return Some(cyc);
                    }
                    _ => {}
                }
            } else {
                state[v] = 2;
                stack.pop();
            }
        }
    }
    None
}
