//! Counterfactual evaluation of defensive actions against recorded attacks.
//!
//! Each attacked episode is abducted under a model, then replayed with the
//! defense switched in from its trigger row. Cells whose parents are
//! untouched keep their recorded values, so a defense that changes nothing
//! reproduces the episode bit for bit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, TimeSeriesFrame};
use crate::detect::DetectorState;
use crate::inference::counterfactual::latent_bounds;
use crate::inference::{abduct, Engine, InferenceError, Intervention};
use crate::scm::Scm;
use crate::stats;
use crate::synth::{AttackSuite, AttackTemplate};

#[derive(Debug, Error)]
pub enum DefenseError {
    #[error("no attacks to evaluate")]
    NoAttacks,
    #[error("defense `{name}` is invalid: {reason}")]
    InvalidDefense { name: String, reason: String },
    #[error("attack window {onset}..{end} does not fit an episode of {len} rows")]
    BadEpisode { onset: usize, end: usize, len: usize },
    #[error("model and detector disagree on the variable count ({model} vs {detector})")]
    DimensionMismatch { model: usize, detector: usize },
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Relative operational cost of a defense.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cost {
    Low,
    Medium,
    High,
}

impl Cost {
    pub fn units(self) -> f64 {
        match self {
            Cost::Low => 1.0,
            Cost::Medium => 2.0,
            Cost::High => 3.0,
        }
    }
}

/// When a defense switches in. It stays active once triggered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trigger {
    /// `delay` rows after the detector's first alarm.
    Alarm { delay: usize },
    /// From the first row where one variable's score exceeds `threshold`.
    VariableScore { var: usize, threshold: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    NoOp,
    /// Replace any value whose score against its model prediction exceeds
    /// `threshold` by that prediction. `vars` restricts the guarded set.
    ClampAnomalous {
        threshold: f64,
        vars: Option<Vec<usize>>,
    },
    /// Hold variables at fixed values.
    Force(Intervention),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefenseSpec {
    pub name: String,
    pub trigger: Trigger,
    pub action: Action,
    pub cost: Cost,
}

impl DefenseSpec {
    pub fn no_op() -> Self {
        Self {
            name: "no-op".into(),
            trigger: Trigger::Alarm { delay: 1 },
            action: Action::NoOp,
            cost: Cost::Low,
        }
    }

    /// Clamp every variable scoring above `threshold`, from the step after
    /// the first alarm.
    pub fn detector_clamp(threshold: f64) -> Self {
        Self {
            name: format!("detector-clamp-{threshold}"),
            trigger: Trigger::Alarm { delay: 1 },
            action: Action::ClampAnomalous {
                threshold,
                vars: None,
            },
            cost: Cost::Medium,
        }
    }

    fn validate(&self, n: usize) -> Result<(), DefenseError> {
        let bad = |reason: String| DefenseError::InvalidDefense {
            name: self.name.clone(),
            reason,
        };
        if let Trigger::VariableScore { var, threshold } = self.trigger {
            if var >= n {
                return Err(bad(format!("trigger variable {var} out of range")));
            }
            if threshold.is_nan() {
                return Err(bad("trigger threshold is NaN".into()));
            }
        }
        match &self.action {
            Action::ClampAnomalous { threshold, vars } => {
                if threshold.is_nan() || *threshold < 0.0 {
                    return Err(bad(format!("clamp threshold {threshold}")));
                }
                if let Some(v) = vars.as_ref().and_then(|v| v.iter().find(|&&v| v >= n)) {
                    return Err(bad(format!("clamp variable {v} out of range")));
                }
            }
            Action::Force(iv) => {
                if let Some(&(v, _)) = iv.assignments().iter().find(|&&(v, _)| v >= n) {
                    return Err(bad(format!("forced variable {v} out of range")));
                }
            }
            Action::NoOp => {}
        }
        Ok(())
    }
}

/// Default portfolio: no-op, detector clamps at two thresholds and a
/// shutdown of every binary actuator.
pub fn standard_portfolio(scm: &Scm) -> Vec<DefenseSpec> {
    let actuators: Vec<(usize, f64)> = (0..scm.n_vars())
        .filter(|&v| scm.is_binary(v))
        .map(|v| (v, 0.0))
        .collect();
    let mut out = vec![DefenseSpec::no_op(), DefenseSpec::detector_clamp(3.0)];
    let mut loose = DefenseSpec::detector_clamp(6.0);
    loose.cost = Cost::Low;
    out.push(loose);
    if let Ok(iv) = Intervention::new(actuators) {
        if !iv.is_empty() {
            out.push(DefenseSpec {
                name: "actuator-shutdown".into(),
                trigger: Trigger::Alarm { delay: 1 },
                action: Action::Force(iv),
                cost: Cost::High,
            });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DefenseConfig {
    /// Normal rows kept before each attack.
    pub pre: usize,
    /// Rows kept after each attack.
    pub post: usize,
    /// Monte Carlo draws of binary latents for the blocked probability;
    /// 0 skips it.
    pub samples: usize,
    pub seed: u64,
}

impl Default for DefenseConfig {
    fn default() -> Self {
        Self {
            pre: 100,
            post: 0,
            samples: 64,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefenseOutcome {
    pub attack_id: u32,
    /// Episode row from which the defense acts.
    pub active_from: Option<usize>,
    pub factual_success: bool,
    pub defended_success: bool,
    pub prevented: bool,
    /// Share of latent draws consistent with the evidence in which the
    /// defended attack fails. NaN when not sampled.
    pub blocked_probability: f64,
}

impl DefenseOutcome {
    pub fn no_trigger(&self) -> bool {
        self.active_from.is_none()
    }
}

/// First episode row at which `spec` is active, judged on the recorded
/// data.
pub fn activation_row(det: &DetectorState, frame: &TimeSeriesFrame, spec: &DefenseSpec) -> Option<usize> {
    let scm = det.scm();
    let n = scm.n_vars();
    let values = frame.values();
    let lag = scm.max_lag();
    match spec.trigger {
        Trigger::Alarm { delay } => (lag..frame.len())
            .find(|&t| det.row_mcai(values, t) > det.threshold())
            .map(|t| t + delay)
            .filter(|&t| t < frame.len()),
        Trigger::VariableScore { var, threshold } => (lag..frame.len()).find(|&t| {
            let pred = scm.structural_mean(var, |p, l| values[(t - l) * n + p]);
            det.variable_score(var, values[t * n + var], pred) > threshold
        }),
    }
}

/// Replays `frame` under `model` with the defense acting from
/// `active_from`. `noise` is the abducted noise of `frame` under `model`.
fn defended_replay(
    det: &DetectorState,
    model: &Scm,
    frame: &TimeSeriesFrame,
    noise: &[f64],
    spec: &DefenseSpec,
    active_from: usize,
) -> Vec<f64> {
    let factual = frame.values();
    let mut buf = factual.to_vec();
    let n = model.n_vars();
    let start = active_from.max(model.max_lag());
    if start >= frame.len() || matches!(spec.action, Action::NoOp) {
        return buf;
    }
    let guarded: Vec<bool> = match &spec.action {
        Action::ClampAnomalous { vars: Some(vs), .. } => {
            let mut g = vec![false; n];
            for &v in vs {
                g[v] = true;
            }
            g
        }
        _ => vec![true; n],
    };
    let scorer = det.scm();
    Engine::new(model).run(&mut buf, start, frame.len(), noise, Some(factual), |t, var, natural, buf| {
        match &spec.action {
            Action::NoOp => natural,
            Action::Force(iv) => iv.get(var).unwrap_or(natural),
            Action::ClampAnomalous { threshold, .. } => {
                if !guarded[var] {
                    return natural;
                }
                let pred = scorer.structural_mean(var, |p, l| buf[(t - l) * n + p]);
                if det.variable_score(var, natural, pred) > *threshold {
                    if scorer.is_binary(var) {
                        if pred >= 0.5 {
                            1.0
                        } else {
                            0.0
                        }
                    } else {
                        pred
                    }
                } else {
                    natural
                }
            }
        }
    });
    buf
}

/// Counterfactual episode under `spec`, replayed with the detector's own
/// model.
pub fn defend_episode(
    det: &DetectorState,
    frame: &TimeSeriesFrame,
    spec: &DefenseSpec,
) -> Result<TimeSeriesFrame, DefenseError> {
    defend_episode_with(det, det.scm(), frame, spec)
}

/// As [`defend_episode`] but with the replay driven by `model`, e.g. the
/// true plant, while the detector still decides what to clamp.
pub fn defend_episode_with(
    det: &DetectorState,
    model: &Scm,
    frame: &TimeSeriesFrame,
    spec: &DefenseSpec,
) -> Result<TimeSeriesFrame, DefenseError> {
    check_dims(det, model)?;
    spec.validate(model.n_vars())?;
    let noise = abduct(model, frame)?;
    let values = match activation_row(det, frame, spec) {
        Some(a) => defended_replay(det, model, frame, &noise, spec, a),
        None => frame.values().to_vec(),
    };
    Ok(TimeSeriesFrame::new(
        frame.meta().to_vec(),
        frame.timestamps().to_vec(),
        values,
        frame.labels().map(|l| l.to_vec()),
    )?)
}

fn check_dims(det: &DetectorState, model: &Scm) -> Result<(), DefenseError> {
    if det.scm().n_vars() != model.n_vars() {
        return Err(DefenseError::DimensionMismatch {
            model: model.n_vars(),
            detector: det.scm().n_vars(),
        });
    }
    Ok(())
}

/// Evaluates one defense on one attacked episode. `attack` rows are local
/// to `frame`.
pub fn evaluate_episode(
    det: &DetectorState,
    model: &Scm,
    frame: &TimeSeriesFrame,
    attack: &AttackTemplate,
    spec: &DefenseSpec,
    cfg: &DefenseConfig,
) -> Result<DefenseOutcome, DefenseError> {
    check_dims(det, model)?;
    let n = model.n_vars();
    spec.validate(n)?;
    if attack.end() > frame.len() || attack.onset < model.max_lag() {
        return Err(DefenseError::BadEpisode {
            onset: attack.onset,
            end: attack.end(),
            len: frame.len(),
        });
    }
    let succeeds = |v: &[f64]| attack.success.holds(v, n, attack.onset, attack.end());
    let factual_success = succeeds(frame.values());
    let active_from = activation_row(det, frame, spec);
    let noise = abduct(model, frame)?;
    let defended = match active_from {
        Some(a) => defended_replay(det, model, frame, &noise, spec, a),
        None => frame.values().to_vec(),
    };
    let defended_success = succeeds(&defended);

    let blocked_probability = match active_from {
        _ if cfg.samples == 0 => f64::NAN,
        None => f64::from(u8::from(!factual_success)),
        Some(a) => {
            let bounds = latent_bounds(model, frame.values(), frame.len());
            let binary: Vec<usize> = (0..frame.len() * n).filter(|&k| model.is_binary(k % n)).collect();
            let blocked = (0..cfg.samples)
                .into_par_iter()
                .filter(|&s| {
                    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ u64::from(attack.id) << 32);
                    rng.set_stream(s as u64);
                    let mut draw = noise.clone();
                    for &k in &binary {
                        let (lo, hi) = bounds[k];
                        draw[k] = lo + (hi - lo) * rng.random::<f64>();
                    }
                    !succeeds(&defended_replay(det, model, frame, &draw, spec, a))
                })
                .count();
            blocked as f64 / cfg.samples as f64
        }
    };
    Ok(DefenseOutcome {
        attack_id: attack.id,
        active_from,
        factual_success,
        defended_success,
        prevented: factual_success && !defended_success,
        blocked_probability,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefenseReport {
    pub name: String,
    pub cost: Cost,
    pub episodes: usize,
    pub factual_successes: usize,
    pub defended_successes: usize,
    pub prevented: usize,
    /// Success-rate reduction `1 − defended / factual`.
    pub srr: f64,
    /// Wilson interval on the share of factual successes prevented.
    pub srr_interval: (f64, f64),
    /// SRR in percent per cost unit.
    pub roi: f64,
    pub no_trigger: usize,
    pub mean_blocked_probability: f64,
    pub outcomes: Vec<DefenseOutcome>,
}

/// Evaluates every defense on every attack of `suite` and ranks them by
/// ROI, best first.
pub fn evaluate_portfolio(
    det: &DetectorState,
    suite: &AttackSuite,
    specs: &[DefenseSpec],
    cfg: &DefenseConfig,
) -> Result<Vec<DefenseReport>, DefenseError> {
    evaluate_portfolio_with(det, det.scm(), suite, specs, cfg)
}

pub fn evaluate_portfolio_with(
    det: &DetectorState,
    model: &Scm,
    suite: &AttackSuite,
    specs: &[DefenseSpec],
    cfg: &DefenseConfig,
) -> Result<Vec<DefenseReport>, DefenseError> {
    if suite.attacks.is_empty() {
        return Err(DefenseError::NoAttacks);
    }
    let pre = cfg.pre.max(model.max_lag());
    let episodes: Vec<_> = (0..suite.attacks.len()).map(|i| suite.episode(i, pre, cfg.post)).collect();
    let mut reports = Vec::with_capacity(specs.len());
    for spec in specs {
        let outcomes = episodes
            .par_iter()
            .map(|e| evaluate_episode(det, model, &e.frame, &e.attack, spec, cfg))
            .collect::<Result<Vec<_>, _>>()?;
        reports.push(summarise(spec, outcomes));
    }
    reports.sort_by(|a, b| b.roi.total_cmp(&a.roi).then(a.name.cmp(&b.name)));
    Ok(reports)
}

fn summarise(spec: &DefenseSpec, outcomes: Vec<DefenseOutcome>) -> DefenseReport {
    let factual = outcomes.iter().filter(|o| o.factual_success).count();
    let defended = outcomes.iter().filter(|o| o.defended_success).count();
    let prevented = outcomes.iter().filter(|o| o.prevented).count();
    let srr = if factual > 0 {
        1.0 - defended as f64 / factual as f64
    } else {
        0.0
    };
    let sampled: Vec<f64> = outcomes
        .iter()
        .map(|o| o.blocked_probability)
        .filter(|p| !p.is_nan())
        .collect();
    DefenseReport {
        name: spec.name.clone(),
        cost: spec.cost,
        episodes: outcomes.len(),
        factual_successes: factual,
        defended_successes: defended,
        prevented,
        srr,
        srr_interval: stats::wilson_interval(factual.saturating_sub(defended), factual),
        roi: srr * 100.0 / spec.cost.units(),
        no_trigger: outcomes.iter().filter(|o| o.no_trigger()).count(),
        mean_blocked_probability: if sampled.is_empty() {
            f64::NAN
        } else {
            stats::mean(&sampled)
        },
        outcomes,
    }
}

/// Share of episodes where replaying the defense under `fitted` and under
/// `truth` agree on whether the attack still succeeds.
pub fn counterfactual_agreement(
    det: &DetectorState,
    fitted: &Scm,
    truth: &Scm,
    suite: &AttackSuite,
    spec: &DefenseSpec,
    cfg: &DefenseConfig,
) -> Result<f64, DefenseError> {
    if suite.attacks.is_empty() {
        return Err(DefenseError::NoAttacks);
    }
    let cfg = DefenseConfig { samples: 0, ..*cfg };
    let pre = cfg.pre.max(fitted.max_lag()).max(truth.max_lag());
    let agree = (0..suite.attacks.len())
        .into_par_iter()
        .map(|i| -> Result<bool, DefenseError> {
            let e = suite.episode(i, pre, cfg.post);
            let a = evaluate_episode(det, fitted, &e.frame, &e.attack, spec, &cfg)?;
            let b = evaluate_episode(det, truth, &e.frame, &e.attack, spec, &cfg)?;
            Ok(a.defended_success == b.defended_success)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(agree.iter().filter(|&&x| x).count() as f64 / agree.len() as f64)
}
