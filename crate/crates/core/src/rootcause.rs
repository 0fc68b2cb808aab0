//! Root-cause ranking by interventional causal effect and Shapley values.
//!
//! Both quantities replay a short window after the alarm with noise
//! abducted from the observation, so paired runs differ only through the
//! intervention.
//!
//! The causal effect of `V_i` is the change in mean MCAI between
//! `do(V_i = anomalous)` and `do(V_i = normal)`. The Shapley value function
//! toggles candidates at the level of their exogenous terms: members of a
//! coalition keep the abducted (anomalous) noise, the others get the
//! median noise. A variable that merely follows an anomalous parent then
//! earns no credit of its own.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::TimeSeriesFrame;
use crate::detect::DetectorState;
use crate::inference::{abduct, Engine, InferenceError};
use crate::stats;

#[derive(Debug, Error)]
pub enum RootCauseError {
    #[error("only {available} rows before the event for a {needed}-row normal window")]
    InsufficientNormalWindow { available: usize, needed: usize },
    #[error("Shapley budget {0} is below the minimum of 10 permutations")]
    BudgetTooSmall(usize),
    #[error("no candidate variables")]
    NoCandidates,
    #[error("ground truth has {truth} entries for {rankings} rankings")]
    MissingGroundTruth { truth: usize, rankings: usize },
    #[error("alarm row {row} outside a frame of {len} rows")]
    BadEvent { row: usize, len: usize },
    #[error("event window has a missing value at row {row}, variable {var}")]
    MissingEvidence { row: usize, var: usize },
    #[error(transparent)]
    Inference(#[from] InferenceError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RootCauseConfig {
    /// Steps after the alarm over which MCAI is averaged.
    pub horizon: usize,
    /// Length of the trailing window whose median defines normal values.
    pub normal_window: usize,
    pub max_candidates: usize,
    /// Exact Shapley enumeration up to this many candidates.
    pub exact_limit: usize,
    /// Permutations for Monte Carlo Shapley.
    pub budget: usize,
    pub seed: u64,
    /// Candidates kept by score when nothing exceeds its baseline.
    pub fallback_top: usize,
}

impl Default for RootCauseConfig {
    fn default() -> Self {
        Self {
            horizon: 5,
            normal_window: 300,
            max_candidates: 15,
            exact_limit: 12,
            budget: 2000,
            seed: 0,
            fallback_top: 5,
        }
    }
}

/// An alarm to explain.
#[derive(Debug, Clone, Copy)]
pub struct AlarmContext<'a> {
    pub frame: &'a TimeSeriesFrame,
    /// Row of the alarm being explained.
    pub alarm_row: usize,
    /// Row where the anomalous episode began; the normal window ends here.
    pub onset_row: usize,
}

impl<'a> AlarmContext<'a> {
    pub fn new(frame: &'a TimeSeriesFrame, alarm_row: usize) -> Self {
        Self {
            frame,
            alarm_row,
            onset_row: alarm_row,
        }
    }
}

/// Replay machinery for one alarm.
struct EventSim<'a> {
    det: &'a DetectorState,
    engine: Engine<'a>,
    n: usize,
    lag: usize,
    /// Rows of the window: `lag` history rows then the horizon.
    rows: usize,
    evidence: Vec<f64>,
    noise: Vec<f64>,
    normal_values: Vec<f64>,
}

impl<'a> EventSim<'a> {
    fn new(det: &'a DetectorState, ctx: &AlarmContext, cfg: &RootCauseConfig) -> Result<Self, RootCauseError> {
        let scm = det.scm();
        let frame = ctx.frame;
        let n = scm.n_vars();
        let lag = scm.max_lag();
        if ctx.alarm_row >= frame.len() || ctx.alarm_row < lag {
            return Err(RootCauseError::BadEvent {
                row: ctx.alarm_row,
                len: frame.len(),
            });
        }
        let onset = ctx.onset_row.min(ctx.alarm_row);
        let needed = (cfg.normal_window / 10).max(10);
        let lo = onset.saturating_sub(cfg.normal_window);
        if onset - lo < needed {
            return Err(RootCauseError::InsufficientNormalWindow {
                available: onset - lo,
                needed,
            });
        }
        let normal_values: Vec<f64> = (0..n)
            .map(|v| {
                let xs: Vec<f64> = (lo..onset).map(|t| frame.value(t, v)).filter(|x| !x.is_nan()).collect();
                stats::median(&xs)
            })
            .collect();
        let start = ctx.alarm_row - lag;
        let end = (ctx.alarm_row + cfg.horizon.max(1)).min(frame.len());
        let window = frame.slice(start, end);
        for t in 0..window.len() {
            for v in 0..n {
                if window.value(t, v).is_nan() {
                    return Err(RootCauseError::MissingEvidence { row: start + t, var: v });
                }
            }
        }
        let noise = abduct(scm, &window)?;
        Ok(Self {
            det,
            engine: Engine::new(scm),
            n,
            lag,
            rows: window.len(),
            evidence: window.values().to_vec(),
            noise,
            normal_values,
        })
    }

    fn mean_mcai(&self, buf: &[f64]) -> f64 {
        let h = self.rows - self.lag;
        (self.lag..self.rows).map(|t| self.det.row_mcai(buf, t)).sum::<f64>() / h as f64
    }

    /// Mean MCAI with `var` forced to its anomalous (observed) or normal
    /// value over the horizon.
    fn forced(&self, var: usize, anomalous: bool) -> f64 {
        let mut buf = self.evidence.clone();
        let n = self.n;
        let ev = &self.evidence;
        let normal = self.normal_values[var];
        self.engine
            .run(&mut buf, self.lag, self.rows, &self.noise, Some(ev), |t, v, natural, _| {
                if v == var {
                    if anomalous {
                        ev[t * n + v]
                    } else {
                        normal
                    }
                } else {
                    natural
                }
            });
        self.mean_mcai(&buf)
    }

    /// Coalition value: candidates with `mask` bit set keep abducted noise,
    /// the other candidates get median noise.
    fn coalition(&self, candidates: &[usize], mask: u64) -> f64 {
        let scm = self.det.scm();
        let n = self.n;
        let mut nz = self.noise.clone();
        for (k, &c) in candidates.iter().enumerate() {
            if mask >> k & 1 == 0 {
                let quiet = if scm.is_binary(c) { 0.5 } else { 0.0 };
                for t in self.lag..self.rows {
                    nz[t * n + c] = quiet;
                }
            }
        }
        // no factual shortcut: the quieted noise must take effect even
        // where parents are unchanged
        let mut buf = self.evidence.clone();
        self.engine.run(&mut buf, self.lag, self.rows, &nz, None, |_, _, natural, _| natural);
        self.mean_mcai(&buf)
    }
}

/// `E[MCAI | do(V = anomalous)] − E[MCAI | do(V = normal)]` over the event
/// horizon.
pub fn causal_effect(
    det: &DetectorState,
    ctx: &AlarmContext,
    var: usize,
    cfg: &RootCauseConfig,
) -> Result<f64, RootCauseError> {
    let sim = EventSim::new(det, ctx, cfg)?;
    if var >= sim.n {
        return Err(InferenceError::GraphHashMismatch(var).into());
    }
    Ok(sim.forced(var, true) - sim.forced(var, false))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapleyResult {
    pub phi: Vec<f64>,
    pub exact: bool,
    pub permutations: usize,
    pub f_empty: f64,
    pub f_full: f64,
    /// max f − min f over evaluated coalitions.
    pub value_range: f64,
    /// Relative rescaling applied to restore efficiency.
    pub efficiency_correction: f64,
    /// Correction exceeded 5%.
    pub correction_flag: bool,
}

/// Shapley values of `candidates` for the coalition value function.
pub fn shapley(
    det: &DetectorState,
    ctx: &AlarmContext,
    candidates: &[usize],
    cfg: &RootCauseConfig,
) -> Result<ShapleyResult, RootCauseError> {
    if candidates.is_empty() {
        return Err(RootCauseError::NoCandidates);
    }
    let sim = EventSim::new(det, ctx, cfg)?;
    if let Some(&bad) = candidates.iter().find(|&&c| c >= sim.n) {
        return Err(InferenceError::GraphHashMismatch(bad).into());
    }
    Ok(if candidates.len() <= cfg.exact_limit.min(20) {
        exact_shapley(|m| sim.coalition(candidates, m), candidates.len())
    } else {
        if cfg.budget < 10 {
            return Err(RootCauseError::BudgetTooSmall(cfg.budget));
        }
        sampled_shapley(|m| sim.coalition(candidates, m), candidates.len(), cfg.budget, cfg.seed)
    })
}

/// Exact Shapley values from all `2^m` coalition values.
pub fn exact_shapley(f: impl Fn(u64) -> f64 + Sync, m: usize) -> ShapleyResult {
    let values: Vec<f64> = (0..1u64 << m).into_par_iter().map(&f).collect();
    // w(s) = s!(m−s−1)!/m!
    let mut w = vec![0.0; m];
    for (s, ws) in w.iter_mut().enumerate() {
        *ws = 1.0 / (m as f64 * binom(m - 1, s));
    }
    let mut phi = vec![0.0; m];
    for mask in 0..1u64 << m {
        let size = mask.count_ones() as usize;
        for (i, p) in phi.iter_mut().enumerate() {
            if mask >> i & 1 == 0 {
                *p += w[size] * (values[(mask | 1 << i) as usize] - values[mask as usize]);
            }
        }
    }
    let (lo, hi) = values.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    ShapleyResult {
        phi,
        exact: true,
        permutations: 0,
        f_empty: values[0],
        f_full: values[(1u64 << m) as usize - 1],
        value_range: hi - lo,
        efficiency_correction: 0.0,
        correction_flag: false,
    }
}

fn binom(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Permutation-sampling Shapley estimate with `budget` permutations.
pub fn sampled_shapley(f: impl Fn(u64) -> f64 + Sync, m: usize, budget: usize, seed: u64) -> ShapleyResult {
    let f_empty = f(0);
    let f_full = f((1u64 << m) - 1);
    let partial: Vec<(Vec<f64>, f64, f64)> = (0..budget)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            let mut order: Vec<usize> = (0..m).collect();
            order.shuffle(&mut rng);
            let mut phi = vec![0.0; m];
            let mut mask = 0u64;
            let mut prev = f_empty;
            let (mut lo, mut hi) = (f_empty, f_empty);
            for &i in &order {
                mask |= 1 << i;
                let v = if mask == (1u64 << m) - 1 { f_full } else { f(mask) };
                phi[i] += v - prev;
                lo = lo.min(v);
                hi = hi.max(v);
                prev = v;
            }
            (phi, lo, hi)
        })
        .collect();
    let mut phi = vec![0.0; m];
    let (mut lo, mut hi) = (f_empty.min(f_full), f_empty.max(f_full));
    for (p, l, h) in &partial {
        for i in 0..m {
            phi[i] += p[i];
        }
        lo = lo.min(*l);
        hi = hi.max(*h);
    }
    for p in phi.iter_mut() {
        *p /= budget as f64;
    }
    let total: f64 = phi.iter().sum();
    let target = f_full - f_empty;
    let mut correction = 0.0;
    if total.abs() > 0.0 && (total - target).abs() > 0.0 {
        let scale = target / total;
        correction = (scale - 1.0).abs();
        for p in phi.iter_mut() {
            *p *= scale;
        }
    }
    ShapleyResult {
        phi,
        exact: false,
        permutations: budget,
        f_empty,
        f_full,
        value_range: hi - lo,
        efficiency_correction: correction,
        correction_flag: correction > 0.05,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankEntry {
    pub var: usize,
    pub causal_effect: f64,
    pub shapley: f64,
    /// 1-based position in the ranking.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RootCauseRanking {
    pub alarm_t: i64,
    pub entries: Vec<RankEntry>,
    pub exact: bool,
    pub permutations: usize,
    pub seed: u64,
    /// Candidates came from the top-score fallback.
    pub fallback: bool,
    pub efficiency_correction: f64,
    pub elapsed_ms: f64,
}

impl RootCauseRanking {
    /// 1-based rank of `var`, if it was a candidate.
    pub fn rank_of(&self, var: usize) -> Option<usize> {
        self.entries.iter().find(|e| e.var == var).map(|e| e.rank)
    }
}

/// Per-variable `q`-quantile of scores over an attack-free frame.
pub fn normal_score_baseline(det: &mut DetectorState, normal: &TimeSeriesFrame, q: f64) -> Vec<f64> {
    let n = det.scm().n_vars();
    let m = det.score_matrix(normal);
    (0..n)
        .map(|v| {
            let col: Vec<f64> = (0..normal.len()).map(|t| m[t * n + v]).filter(|x| !x.is_nan()).collect();
            stats::quantile(&col, q)
        })
        .collect()
}

/// Candidates for an alarm: variables whose peak score over the horizon
/// exceeds their normal baseline, strongest exceedance first, capped. The
/// flag reports the top-score fallback.
pub fn select_root_candidates(
    det: &DetectorState,
    ctx: &AlarmContext,
    baseline: &[f64],
    cfg: &RootCauseConfig,
) -> (Vec<usize>, bool) {
    let scm = det.scm();
    let n = scm.n_vars();
    let lag = scm.max_lag();
    let frame = ctx.frame;
    let end = (ctx.alarm_row + cfg.horizon.max(1)).min(frame.len());
    let values = frame.values();
    let mut peak = vec![0.0f64; n];
    let mut det_scores = vec![0.0; n];
    for t in ctx.alarm_row.max(lag)..end {
        det.row_scores(values, t, &mut det_scores);
        for v in 0..n {
            if det_scores[v].is_finite() {
                peak[v] = peak[v].max(det_scores[v]);
            }
        }
    }
    let mut over: Vec<(usize, f64)> = (0..n)
        .filter(|&v| peak[v] > baseline[v])
        .map(|v| (v, peak[v] / baseline[v].max(1e-12)))
        .collect();
    let fallback = over.is_empty();
    if fallback {
        over = (0..n).map(|v| (v, peak[v])).collect();
    }
    over.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    over.truncate(if fallback { cfg.fallback_top } else { cfg.max_candidates });
    let mut c: Vec<usize> = over.into_iter().map(|(v, _)| v).collect();
    c.sort_unstable();
    (c, fallback)
}

/// Ranks candidate root causes of an alarm by Shapley value, then causal
/// effect, then variable index.
pub fn rank_roots(
    det: &DetectorState,
    ctx: &AlarmContext,
    baseline: &[f64],
    cfg: &RootCauseConfig,
) -> Result<RootCauseRanking, RootCauseError> {
    let started = Instant::now();
    let (candidates, fallback) = select_root_candidates(det, ctx, baseline, cfg);
    if candidates.is_empty() {
        return Err(RootCauseError::NoCandidates);
    }
    let sim = EventSim::new(det, ctx, cfg)?;
    let sh = if candidates.len() <= cfg.exact_limit.min(20) {
        exact_shapley(|m| sim.coalition(&candidates, m), candidates.len())
    } else {
        if cfg.budget < 10 {
            return Err(RootCauseError::BudgetTooSmall(cfg.budget));
        }
        sampled_shapley(|m| sim.coalition(&candidates, m), candidates.len(), cfg.budget, cfg.seed)
    };
    let ce: Vec<f64> = candidates
        .par_iter()
        .map(|&v| sim.forced(v, true) - sim.forced(v, false))
        .collect();
    let mut entries: Vec<RankEntry> = candidates
        .iter()
        .enumerate()
        .map(|(k, &v)| RankEntry {
            var: v,
            causal_effect: ce[k],
            shapley: sh.phi[k],
            rank: 0,
        })
        .collect();
    entries.sort_by(|a, b| {
        b.shapley
            .total_cmp(&a.shapley)
            .then(b.causal_effect.total_cmp(&a.causal_effect))
            .then(a.var.cmp(&b.var))
    });
    for (i, e) in entries.iter_mut().enumerate() {
        e.rank = i + 1;
    }
    Ok(RootCauseRanking {
        alarm_t: ctx.frame.timestamps()[ctx.alarm_row],
        entries,
        exact: sh.exact,
        permutations: sh.permutations,
        seed: cfg.seed,
        fallback,
        efficiency_correction: sh.efficiency_correction,
        elapsed_ms: started.elapsed().as_secs_f64() * 1e3,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttributionMetrics {
    pub top1: f64,
    pub top3: f64,
    pub top5: f64,
    pub mrr: f64,
    pub mean_time_ms: f64,
    pub events: usize,
}

/// Top-k hit rates and mean reciprocal rank against the true roots of
/// each event. An event with several roots is scored by its best-ranked
/// one. A root missing from the ranking contributes reciprocal rank 0.
pub fn attribution_metrics(
    rankings: &[RootCauseRanking],
    truth: &[Vec<usize>],
) -> Result<AttributionMetrics, RootCauseError> {
    if rankings.len() != truth.len() || rankings.is_empty() {
        return Err(RootCauseError::MissingGroundTruth {
            truth: truth.len(),
            rankings: rankings.len(),
        });
    }
    let m = rankings.len() as f64;
    let ranks: Vec<Option<usize>> = rankings
        .iter()
        .zip(truth)
        .map(|(r, t)| t.iter().filter_map(|&v| r.rank_of(v)).min())
        .collect();
    let hit = |k: usize| ranks.iter().filter(|r| r.is_some_and(|x| x <= k)).count() as f64 / m;
    Ok(AttributionMetrics {
        top1: hit(1),
        top3: hit(3),
        top5: hit(5),
        mrr: ranks.iter().map(|r| r.map_or(0.0, |x| 1.0 / x as f64)).sum::<f64>() / m,
        mean_time_ms: rankings.iter().map(|r| r.elapsed_ms).sum::<f64>() / m,
        events: rankings.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ranking(order: &[usize]) -> RootCauseRanking {
        RootCauseRanking {
            alarm_t: 0,
            entries: order
                .iter()
                .enumerate()
                .map(|(i, &v)| RankEntry {
                    var: v,
                    causal_effect: 0.0,
                    shapley: 0.0,
                    rank: i + 1,
                })
                .collect(),
            exact: true,
            permutations: 0,
            seed: 0,
            fallback: false,
            efficiency_correction: 0.0,
            elapsed_ms: 1.0,
        }
    }

    #[test]
    fn metrics_definitions() {
        let r = vec![ranking(&[3, 1, 2]), ranking(&[5, 4])];
        let m = attribution_metrics(&r, &[vec![3], vec![5]]).unwrap();
        assert_eq!((m.top1, m.mrr), (1.0, 1.0));
        let m = attribution_metrics(&r, &[vec![1], vec![4, 2]]).unwrap();
        assert_eq!((m.top1, m.top3, m.mrr), (0.0, 1.0, 0.5));
        assert!(attribution_metrics(&r, &[vec![1]]).is_err());
    }

    #[test]
    fn exact_shapley_on_additive_game() {
        // f(S) = Σ_{i∈S} w_i + 2·[0,1 ∈ S]
        let w = [1.0, 2.0, 0.5];
        let f = |m: u64| {
            let mut v: f64 = (0..3).filter(|i| m >> i & 1 == 1).map(|i| w[i]).sum();
            if m & 3 == 3 {
                v += 2.0;
            }
            v
        };
        let r = exact_shapley(f, 3);
        assert!((r.phi[0] - 2.0).abs() < 1e-12);
        assert!((r.phi[1] - 3.0).abs() < 1e-12);
        assert!((r.phi[2] - 0.5).abs() < 1e-12);
        assert!((r.phi.iter().sum::<f64>() - (r.f_full - r.f_empty)).abs() < 1e-12);
    }

    #[test]
    fn sampled_matches_exact_within_two_percent() {
        let f = |m: u64| {
            let s = m.count_ones() as f64;
            (m & 1) as f64 * 3.0 + s * s * 0.4 + ((m >> 2) & 1) as f64 * ((m >> 4) & 1) as f64
        };
        let ex = exact_shapley(f, 5);
        let mc = sampled_shapley(f, 5, 2000, 7);
        for i in 0..5 {
            assert!((ex.phi[i] - mc.phi[i]).abs() <= 0.02 * ex.value_range);
        }
    }
}
