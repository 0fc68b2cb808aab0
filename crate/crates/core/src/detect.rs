//! Streaming causal anomaly scoring.
//!
//! Each step compares every variable with its structural prediction given
//! the observed parents, aggregates the scores into the centrality-weighted
//! MCAI, and raises an alarm when MCAI exceeds the calibrated threshold.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Label, TimeSeriesFrame};
use crate::scm::Scm;
use crate::stats;

#[derive(Debug, Error)]
pub enum DetectError {
    #[error("detector buffer holds {seen} of {needed} warm-up rows")]
    ColdStart { seen: usize, needed: usize },
    #[error("observation has {got} values, model has {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("threshold policy needs attack labels")]
    NoLabels,
    #[error("no scored steps to calibrate on")]
    NothingToCalibrate,
}

/// Floor on the probability of an observed binary outcome.
pub const BINARY_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdPolicy {
    /// Threshold maximising point-wise F1 on labelled validation data.
    MaxF1,
    /// `q`-quantile of MCAI over attack-free validation steps, taken at
    /// its 95% upper confidence bound.
    Quantile(f64),
}

impl Default for ThresholdPolicy {
    fn default() -> Self {
        ThresholdPolicy::Quantile(0.995)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepScore {
    pub t: i64,
    pub scores: Vec<f64>,
    pub mcai: f64,
    pub alarm: bool,
    pub latency_us: f64,
}

/// Summary of one step without the per-variable vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepView {
    pub t: i64,
    pub mcai: f64,
    pub alarm: bool,
    pub latency_us: f64,
}

/// Fixed-size latency histogram: 1 µs buckets up to 10 ms plus overflow.
#[derive(Debug, Clone)]
pub struct LatencyHistogram {
    buckets: Vec<u64>,
    count: u64,
    sum_us: f64,
    max_us: f64,
}

const LATENCY_BUCKETS: usize = 10_000;

impl Default for LatencyHistogram {
    fn default() -> Self {
        Self {
            buckets: vec![0; LATENCY_BUCKETS + 1],
            count: 0,
            sum_us: 0.0,
            max_us: 0.0,
        }
    }
}

impl LatencyHistogram {
    pub fn record(&mut self, us: f64) {
        let b = (us.max(0.0) as usize).min(LATENCY_BUCKETS);
        self.buckets[b] += 1;
        self.count += 1;
        self.sum_us += us;
        self.max_us = self.max_us.max(us);
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    /// Upper edge of the bucket holding the `q`-quantile, in µs.
    pub fn quantile(&self, q: f64) -> f64 {
        if self.count == 0 {
            return 0.0;
        }
        let target = (q.clamp(0.0, 1.0) * self.count as f64).ceil().max(1.0) as u64;
        let mut acc = 0;
        for (b, &c) in self.buckets.iter().enumerate() {
            acc += c;
            if acc >= target {
                return if b == LATENCY_BUCKETS { self.max_us } else { (b + 1) as f64 };
            }
        }
        self.max_us
    }

    pub fn summary(&self) -> LatencySummary {
        LatencySummary {
            steps: self.count,
            mean_us: if self.count > 0 { self.sum_us / self.count as f64 } else { 0.0 },
            p50_us: self.quantile(0.5),
            p99_us: self.quantile(0.99),
            max_us: self.max_us,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub steps: u64,
    pub mean_us: f64,
    pub p50_us: f64,
    pub p99_us: f64,
    pub max_us: f64,
}

/// Streaming detector. Memory is fixed at construction.
#[derive(Debug, Clone)]
pub struct DetectorState {
    scm: Scm,
    weights: Vec<f64>,
    threshold: f64,
    n: usize,
    depth: usize,
    ring: Vec<f64>,
    head: usize,
    seen: usize,
    scores: Vec<f64>,
    z_eps: f64,
    latency: LatencyHistogram,
}

impl DetectorState {
    pub fn new(scm: Scm) -> Self {
        let n = scm.n_vars();
        let depth = scm.max_lag() + 1;
        let weights = scm.graph().centrality_weights();
        Self {
            scm,
            weights,
            threshold: f64::INFINITY,
            n,
            depth,
            ring: vec![f64::NAN; depth * n],
            head: 0,
            seen: 0,
            scores: vec![0.0; n],
            z_eps: stats::normal_quantile(1.0 - BINARY_EPS / 2.0),
            latency: LatencyHistogram::default(),
        }
    }

    pub fn scm(&self) -> &Scm {
        &self.scm
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn set_threshold(&mut self, theta: f64) {
        self.threshold = theta;
    }

    pub fn latency(&self) -> &LatencyHistogram {
        &self.latency
    }

    /// Per-variable scores of the last scored step.
    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    /// Forgets buffered history (keeps threshold and latency record).
    pub fn reset(&mut self) {
        self.ring.fill(f64::NAN);
        self.head = 0;
        self.seen = 0;
    }

    /// Score of one variable given its observed value and the model
    /// prediction from observed parents.
    #[inline]
    pub fn variable_score(&self, var: usize, v: f64, pred: f64) -> f64 {
        if self.scm.is_binary(var) {
            let p_obs = if v >= 0.5 { pred } else { 1.0 - pred };
            let surprise = -p_obs.max(BINARY_EPS).ln() / -BINARY_EPS.ln();
            surprise * self.z_eps
        } else {
            (v - pred).abs() / self.scm.sigma(var)
        }
    }

    /// Pushes one observation and scores it once `max_lag` rows are
    /// buffered. Missing cells (and cells with a missing parent) score 0.
    pub fn step(&mut self, t: i64, obs: &[f64]) -> Result<StepView, DetectError> {
        if obs.len() != self.n {
            return Err(DetectError::DimensionMismatch {
                expected: self.n,
                got: obs.len(),
            });
        }
        let start = Instant::now();
        let n = self.n;
        let depth = self.depth;
        self.ring[self.head * n..(self.head + 1) * n].copy_from_slice(obs);
        let head = self.head;
        self.head = (self.head + 1) % depth;
        let warm = self.seen >= depth - 1;
        self.seen = (self.seen + 1).min(depth);
        if !warm {
            return Err(DetectError::ColdStart {
                seen: self.seen,
                needed: depth - 1,
            });
        }
        let ring = &self.ring;
        let at = |p: usize, l: usize| ring[((head + depth - l) % depth) * n + p];
        let mut mcai = 0.0;
        for var in 0..n {
            let v = obs[var];
            let missing = v.is_nan()
                || self
                    .scm
                    .equation(var)
                    .parents
                    .iter()
                    .any(|&(p, l)| at(p, l).is_nan());
            let s = if missing {
                0.0
            } else {
                let pred = self.scm.structural_mean(var, at);
                self.variable_score(var, v, pred)
            };
            self.scores[var] = s;
            mcai += self.weights[var] * s;
        }
        let latency_us = start.elapsed().as_secs_f64() * 1e6;
        self.latency.record(latency_us);
        Ok(StepView {
            t,
            mcai,
            alarm: mcai > self.threshold,
            latency_us,
        })
    }

    /// Per-variable scores of row `t` of a row-major buffer whose earlier
    /// rows hold the lagged parents. Missing values give NaN.
    pub fn row_scores(&self, buf: &[f64], t: usize, out: &mut [f64]) {
        let n = self.n;
        let at = |p: usize, l: usize| buf[(t - l) * n + p];
        for (var, o) in out.iter_mut().enumerate().take(n) {
            let v = buf[t * n + var];
            let pred = self.scm.structural_mean(var, at);
            *o = self.variable_score(var, v, pred);
        }
    }

    /// MCAI of row `t` of a row-major buffer whose earlier rows hold the
    /// lagged parents. Used to score simulated trajectories.
    pub fn row_mcai(&self, buf: &[f64], t: usize) -> f64 {
        let n = self.n;
        let at = |p: usize, l: usize| buf[(t - l) * n + p];
        let mut mcai = 0.0;
        for var in 0..n {
            if self.weights[var] == 0.0 {
                continue;
            }
            let v = buf[t * n + var];
            let pred = self.scm.structural_mean(var, at);
            let s = self.variable_score(var, v, pred);
            if s.is_finite() {
                mcai += self.weights[var] * s;
            }
        }
        mcai
    }

    /// [`step`](Self::step) returning an owned record.
    pub fn score_step(&mut self, t: i64, obs: &[f64]) -> Result<StepScore, DetectError> {
        let v = self.step(t, obs)?;
        Ok(StepScore {
            t: v.t,
            scores: self.scores.clone(),
            mcai: v.mcai,
            alarm: v.alarm,
            latency_us: v.latency_us,
        })
    }

    /// MCAI for every row of `frame` from a fresh buffer; warm-up rows are
    /// NaN.
    pub fn mcai_series(&mut self, frame: &TimeSeriesFrame) -> Vec<f64> {
        self.reset();
        let out = (0..frame.len())
            .map(|t| match self.step(frame.timestamps()[t], frame.row(t)) {
                Ok(v) => v.mcai,
                Err(_) => f64::NAN,
            })
            .collect();
        self.reset();
        out
    }

    /// Per-variable scores for every row of `frame` (row-major, warm-up NaN).
    pub fn score_matrix(&mut self, frame: &TimeSeriesFrame) -> Vec<f64> {
        self.reset();
        let n = self.n;
        let mut out = vec![f64::NAN; frame.len() * n];
        for t in 0..frame.len() {
            if self.step(frame.timestamps()[t], frame.row(t)).is_ok() {
                out[t * n..(t + 1) * n].copy_from_slice(&self.scores);
            }
        }
        self.reset();
        out
    }

    /// Sets and returns the threshold chosen by `policy` on `validation`.
    pub fn calibrate_threshold(
        &mut self,
        validation: &TimeSeriesFrame,
        policy: ThresholdPolicy,
    ) -> Result<f64, DetectError> {
        let mcai = self.mcai_series(validation);
        let theta = match policy {
            ThresholdPolicy::Quantile(q) => {
                let normal: Vec<f64> = mcai
                    .iter()
                    .enumerate()
                    .filter(|&(t, m)| {
                        !m.is_nan() && validation.labels().is_none_or(|l| !l[t].is_attack())
                    })
                    .map(|(_, &m)| m)
                    .collect();
                if normal.is_empty() {
                    return Err(DetectError::NothingToCalibrate);
                }
                quantile_upper_bound(&normal, q, self.depth)
            }
            ThresholdPolicy::MaxF1 => {
                let labels = validation.labels().ok_or(DetectError::NoLabels)?;
                let pairs: Vec<(f64, bool)> = mcai
                    .iter()
                    .zip(labels)
                    .filter(|(m, _)| !m.is_nan())
                    .map(|(&m, l)| (m, l.is_attack()))
                    .collect();
                if pairs.is_empty() {
                    return Err(DetectError::NothingToCalibrate);
                }
                max_f1_threshold(&pairs)
            }
        };
        self.threshold = theta;
        Ok(theta)
    }

    /// Scores a whole frame from a fresh buffer.
    pub fn run_stream(&mut self, frame: &TimeSeriesFrame) -> StreamReport {
        self.reset();
        self.latency = LatencyHistogram::default();
        let mut steps = Vec::with_capacity(frame.len());
        for t in 0..frame.len() {
            if let Ok(s) = self.score_step(frame.timestamps()[t], frame.row(t)) {
                steps.push(s);
            }
        }
        let events = merge_alarms(&steps);
        StreamReport {
            steps,
            events,
            latency: self.latency.summary(),
        }
    }
}

/// Order statistic bounding the `q`-quantile of `series` from above with
/// 95% confidence, so the alarm rate on fresh normal data stays at or
/// below `1 − q` despite calibration noise.
///
/// Exceedances of a lagged score come in bursts, which inflates the
/// variance of their count. The binomial bound is widened by the mean
/// burst size, with bursts split by gaps longer than `gap` steps.
pub fn quantile_upper_bound(series: &[f64], q: f64, gap: usize) -> f64 {
    let mut sorted = series.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let point = stats::quantile_sorted(&sorted, q);
    let (mut exceed, mut bursts, mut last) = (0usize, 0usize, None::<usize>);
    for (t, _) in series.iter().enumerate().filter(|(_, &x)| x > point) {
        exceed += 1;
        if last.is_none_or(|l| t - l > gap) {
            bursts += 1;
        }
        last = Some(t);
    }
    let inflation = if bursts > 0 { exceed as f64 / bursts as f64 } else { 1.0 };
    let rank = (n * q + 1.645 * (n * q * (1.0 - q) * inflation).sqrt()).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Threshold with the best point-wise F1 among midpoints between
/// consecutive distinct MCAI values (alarm iff MCAI > θ).
fn max_f1_threshold(pairs: &[(f64, bool)]) -> f64 {
    let mut v: Vec<(f64, bool)> = pairs.to_vec();
    v.sort_by(|a, b| a.0.total_cmp(&b.0));
    let positives = v.iter().filter(|p| p.1).count() as f64;
    // sweeping upward: everything above the cut alarms
    let mut tp = positives;
    let mut fp = (v.len() as f64) - positives;
    let f1 = |tp: f64, fp: f64| {
        if tp == 0.0 {
            0.0
        } else {
            2.0 * tp / (2.0 * tp + fp + (positives - tp))
        }
    };
    let mut best = (f1(tp, fp), v[0].0 - 1.0);
    let mut i = 0;
    while i < v.len() {
        let x = v[i].0;
        while i < v.len() && v[i].0 == x {
            if v[i].1 {
                tp -= 1.0;
            } else {
                fp -= 1.0;
            }
            i += 1;
        }
        let cut = if i < v.len() { 0.5 * (x + v[i].0) } else { x };
        let score = f1(tp, fp);
        if score > best.0 {
            best = (score, cut);
        }
    }
    best.1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlarmEvent {
    pub onset: i64,
    pub end: i64,
    pub steps: usize,
    pub peak_mcai: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamReport {
    pub steps: Vec<StepScore>,
    pub events: Vec<AlarmEvent>,
    pub latency: LatencySummary,
}

/// Merges runs of consecutive alarm steps into events.
pub fn merge_alarms(steps: &[StepScore]) -> Vec<AlarmEvent> {
    let mut out: Vec<AlarmEvent> = Vec::new();
    let mut open = false;
    for s in steps {
        if s.alarm {
            if open {
                let e = out.last_mut().expect("open event");
                e.end = s.t;
                e.steps += 1;
                e.peak_mcai = e.peak_mcai.max(s.mcai);
            } else {
                out.push(AlarmEvent {
                    onset: s.t,
                    end: s.t,
                    steps: 1,
                    peak_mcai: s.mcai,
                });
            }
        }
        open = s.alarm;
    }
    out
}

/// Moving z-score baseline: per variable `|v − mean| / std` over the
/// preceding `window` samples, max over variables. Rows before the window
/// fills score 0.
pub fn zscore_baseline(frame: &TimeSeriesFrame, window: usize) -> Vec<f64> {
    let window = window.max(10);
    let n = frame.n_vars();
    let t_len = frame.len();
    let mut out = vec![0.0; t_len];
    for var in 0..n {
        let col = frame.column(var);
        let shift = col.iter().copied().find(|v| !v.is_nan()).unwrap_or(0.0);
        let (mut s, mut s2, mut cnt) = (0.0f64, 0.0f64, 0.0f64);
        for t in 0..t_len {
            if t >= window {
                let v = col[t];
                if cnt >= 2.0 && !v.is_nan() {
                    let m = s / cnt;
                    let var_w = (s2 / cnt - m * m).max(0.0);
                    let sd = var_w.sqrt();
                    let z = if sd > 1e-12 * (1.0 + m.abs()) {
                        ((v - shift) - m).abs() / sd
                    } else {
                        0.0
                    };
                    out[t] = f64::max(out[t], z);
                }
                let old = col[t - window];
                if !old.is_nan() {
                    s -= old - shift;
                    s2 -= (old - shift).powi(2);
                    cnt -= 1.0;
                }
            }
            let v = col[t];
            if !v.is_nan() {
                s += v - shift;
                s2 += (v - shift).powi(2);
                cnt += 1.0;
            }
        }
    }
    out
}

/// Detection quality against labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// F1 after point adjustment: a detected attack segment counts every
    /// one of its steps as detected.
    pub f1_point_adjusted: f64,
    pub precision_point_adjusted: f64,
    pub recall_point_adjusted: f64,
    pub auc: f64,
    pub false_alarm_rate: f64,
}

fn prf(tp: f64, fp: f64, fn_: f64) -> (f64, f64, f64) {
    let p = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
    let r = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
    let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    (p, r, f)
}

/// Point-wise and point-adjusted metrics for `mcai > theta` against
/// labels. Steps with NaN score are ignored.
pub fn detection_metrics(mcai: &[f64], labels: &[Label], theta: f64) -> DetectionMetrics {
    let idx: Vec<usize> = (0..mcai.len().min(labels.len()))
        .filter(|&t| !mcai[t].is_nan())
        .collect();
    let alarm = |t: usize| mcai[t] > theta;
    let (mut tp, mut fp, mut fn_, mut normal) = (0.0, 0.0, 0.0, 0.0);
    for &t in &idx {
        match (labels[t].is_attack(), alarm(t)) {
            (true, true) => tp += 1.0,
            (true, false) => fn_ += 1.0,
            (false, true) => fp += 1.0,
            (false, false) => {}
        }
        if !labels[t].is_attack() {
            normal += 1.0;
        }
    }
    let (precision, recall, f1) = prf(tp, fp, fn_);

    // point adjustment over contiguous segments of the same attack label
    let (mut atp, mut afn) = (0.0, 0.0);
    let mut k = 0;
    while k < idx.len() {
        let t = idx[k];
        if !labels[t].is_attack() {
            k += 1;
            continue;
        }
        let mut j = k;
        let mut hit = false;
        while j < idx.len() && labels[idx[j]] == labels[t] && (j == k || idx[j] == idx[j - 1] + 1) {
            hit |= alarm(idx[j]);
            j += 1;
        }
        let len = (j - k) as f64;
        if hit {
            atp += len;
        } else {
            afn += len;
        }
        k = j;
    }
    let (pa_p, pa_r, pa_f) = prf(atp, fp, afn);
    let scores: Vec<f64> = idx.iter().map(|&t| mcai[t]).collect();
    let truth: Vec<bool> = idx.iter().map(|&t| labels[t].is_attack()).collect();
    DetectionMetrics {
        precision,
        recall,
        f1,
        f1_point_adjusted: pa_f,
        precision_point_adjusted: pa_p,
        recall_point_adjusted: pa_r,
        auc: roc_auc(&scores, &truth),
        false_alarm_rate: if normal > 0.0 { fp / normal } else { 0.0 },
    }
}

/// Share of attack-free steps that alarm, where a step is attack-free
/// when no attacked row falls within `guard` rows before it. With `guard`
/// equal to the model's largest lag this excludes steps whose lagged
/// parents still carry injected values.
pub fn attack_free_alarm_rate(mcai: &[f64], labels: &[Label], theta: f64, guard: usize) -> f64 {
    let mut last_attack: Option<usize> = None;
    let (mut alarms, mut steps) = (0usize, 0usize);
    for t in 0..mcai.len().min(labels.len()) {
        if labels[t].is_attack() {
            last_attack = Some(t);
            continue;
        }
        if mcai[t].is_nan() || last_attack.is_some_and(|a| t - a <= guard) {
            continue;
        }
        steps += 1;
        alarms += usize::from(mcai[t] > theta);
    }
    if steps == 0 {
        0.0
    } else {
        alarms as f64 / steps as f64
    }
}

/// Area under the ROC curve via the rank statistic (ties averaged).
pub fn roc_auc(scores: &[f64], truth: &[bool]) -> f64 {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = r;
        }
        i = j + 1;
    }
    let pos = truth.iter().filter(|&&b| b).count() as f64;
    let neg = truth.len() as f64 - pos;
    if pos == 0.0 || neg == 0.0 {
        return f64::NAN;
    }
    let sum: f64 = ranks.iter().zip(truth).filter(|(_, &b)| b).map(|(r, _)| r).sum();
    (sum - pos * (pos + 1.0) / 2.0) / (pos * neg)
}

/// First alarm index at or after `onset` and before `end`, if any.
pub fn first_alarm(mcai: &[f64], theta: f64, onset: usize, end: usize) -> Option<usize> {
    (onset..end.min(mcai.len())).find(|&t| mcai[t] > theta)
}
