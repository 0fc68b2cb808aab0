//! Attack templates and their causal injection into generated frames.
//!
//! An attack perturbs the targeted variables after their mechanism is
//! evaluated; everything downstream is recomputed from the truth SCM with
//! the noise abducted from the clean frame, so consequences propagate
//! causally and rows before the onset stay bit-identical.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{PlantTemplate, SynthError};
use crate::data::{Label, PhysicalClass, TimeSeriesFrame};
use crate::inference::{abduct, Engine};
use crate::scm::Scm;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    /// One sensor reading offset by a step change.
    SinglePoint,
    /// Several sensors offset in turn, each starting `delay` rows later.
    MultiPoint,
    /// Additive drift growing slower than 1σ per step, then held.
    StealthyRamp,
    /// A fault in a process mechanism developing over a few rows.
    PhysicalProcess,
    /// Man-in-the-middle bias on every sensor of one stage.
    NetworkLevel,
}

impl AttackKind {
    pub const ALL: [AttackKind; 5] = [
        AttackKind::SinglePoint,
        AttackKind::MultiPoint,
        AttackKind::StealthyRamp,
        AttackKind::PhysicalProcess,
        AttackKind::NetworkLevel,
    ];
}

/// Attack succeeds when `var` spends at least `min_steps` rows of the
/// attack window outside `[lower, upper]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuccessPredicate {
    pub var: usize,
    pub lower: f64,
    pub upper: f64,
    pub min_steps: usize,
}

impl SuccessPredicate {
    /// Evaluates the predicate on rows `start..end` of a row-major buffer.
    pub fn holds(&self, values: &[f64], n: usize, start: usize, end: usize) -> bool {
        let outside = (start..end)
            .filter(|&t| {
                let v = values[t * n + self.var];
                v < self.lower || v > self.upper
            })
            .count();
        outside >= self.min_steps
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackTemplate {
    pub id: u32,
    pub kind: AttackKind,
    pub targets: Vec<usize>,
    pub onset: usize,
    /// Rows each target stays under attack.
    pub duration: usize,
    /// Rows between the onsets of consecutive targets.
    pub delay: usize,
    /// Final offset in marginal standard deviations of the target.
    pub magnitude: f64,
    /// Rows over which the offset grows linearly; 0 for a step change.
    pub ramp_steps: usize,
    pub success: SuccessPredicate,
}

impl AttackTemplate {
    /// First row after the attack.
    pub fn end(&self) -> usize {
        self.onset + self.delay * self.targets.len().saturating_sub(1) + self.duration
    }

    /// Offset of the `k`-th target at row `t`, in marginal standard
    /// deviations.
    pub fn offset(&self, k: usize, t: usize) -> f64 {
        let start = self.onset + k * self.delay;
        if t < start || t >= start + self.duration {
            return 0.0;
        }
        if self.ramp_steps == 0 {
            self.magnitude
        } else {
            self.magnitude * ((t - start + 1) as f64 / self.ramp_steps as f64).min(1.0)
        }
    }

    /// Copy with every row index moved by `-by`.
    pub fn shifted(&self, by: usize) -> Self {
        Self {
            onset: self.onset - by,
            ..self.clone()
        }
    }
}

/// Re-simulates `frame` under `hook(t, var, natural)` from row `from` on,
/// reusing the noise abducted from the frame.
pub(crate) fn replay_from(
    scm: &Scm,
    frame: &TimeSeriesFrame,
    from: usize,
    hook: impl Fn(usize, usize, f64) -> f64,
) -> Result<TimeSeriesFrame, SynthError> {
    let noise = abduct(scm, frame).map_err(|e| SynthError::Invalid(e.to_string()))?;
    let factual = frame.values();
    let mut buf = factual.to_vec();
    let from = from.max(scm.max_lag());
    Engine::new(scm).run(&mut buf, from, frame.len(), &noise, Some(factual), |t, v, natural, _| {
        hook(t, v, natural)
    });
    Ok(TimeSeriesFrame::new(
        frame.meta().to_vec(),
        frame.timestamps().to_vec(),
        buf,
        frame.labels().map(|l| l.to_vec()),
    )?)
}

pub(crate) fn replay(
    scm: &Scm,
    frame: &TimeSeriesFrame,
    hook: impl Fn(usize, usize, f64) -> f64,
) -> Result<TimeSeriesFrame, SynthError> {
    replay_from(scm, frame, 0, hook)
}

/// Injects `attack` into `frame` using the truth model `scm` and labels
/// the attack window.
pub fn inject_attack(
    frame: &TimeSeriesFrame,
    scm: &Scm,
    attack: &AttackTemplate,
) -> Result<TimeSeriesFrame, SynthError> {
    let n = scm.n_vars();
    if let Some(&bad) = attack.targets.iter().find(|&&v| v >= n) {
        return Err(SynthError::TargetMissing(bad));
    }
    if attack.success.var >= n {
        return Err(SynthError::TargetMissing(attack.success.var));
    }
    let end = attack.end();
    if end > frame.len() || attack.targets.is_empty() || attack.duration == 0 {
        return Err(SynthError::OutsideHorizon {
            onset: attack.onset,
            end,
            horizon: frame.len(),
        });
    }
    let scale: Vec<f64> = scm.standardization().iter().map(|s| s.std).collect();
    let mut out = replay_from(scm, frame, attack.onset, |t, var, natural| {
        match attack.targets.iter().position(|&v| v == var) {
            Some(k) if !scm.is_binary(var) => natural + attack.offset(k, t) * scale[var],
            _ => natural,
        }
    })?;
    let mut labels = frame
        .labels()
        .map(|l| l.to_vec())
        .unwrap_or_else(|| vec![Label::Normal; frame.len()]);
    for l in &mut labels[attack.onset..end] {
        *l = Label::Attack(attack.id);
    }
    out.set_labels(labels)?;
    Ok(out)
}

/// A labelled test frame with its attack manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSuite {
    pub frame: TimeSeriesFrame,
    pub attacks: Vec<AttackTemplate>,
}

/// One attack cut out of a suite with surrounding normal rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub frame: TimeSeriesFrame,
    /// Attack with row indices local to `frame`.
    pub attack: AttackTemplate,
}

impl AttackSuite {
    /// Rows `[onset − pre, end + post)` around attack `i`.
    pub fn episode(&self, i: usize, pre: usize, post: usize) -> Episode {
        let a = &self.attacks[i];
        let start = a.onset.saturating_sub(pre);
        let end = (a.end() + post).min(self.frame.len());
        Episode {
            frame: self.frame.slice(start, end),
            attack: a.shifted(start),
        }
    }

    /// Rows under attack.
    pub fn attack_rows(&self) -> usize {
        self.attacks.iter().map(|a| a.end() - a.onset).sum()
    }
}

/// Normal rows before each attack.
pub const SUITE_GAP: usize = 400;
/// Rows a consequence must spend outside its band for the attack to count
/// as successful.
pub const SUCCESS_STEPS: usize = 60;
/// Inter-target delay of multi-point attacks.
pub const MULTI_POINT_DELAY: usize = 45;

/// Episode counts per kind in the standard suite.
pub const SUITE_COUNTS: [(AttackKind, usize); 5] = [
    (AttackKind::SinglePoint, 18),
    (AttackKind::MultiPoint, 12),
    (AttackKind::StealthyRamp, 6),
    (AttackKind::PhysicalProcess, 3),
    (AttackKind::NetworkLevel, 2),
];

/// Builds the standard 41-episode suite on a fresh frame of `plant`.
///
/// Targets are continuous process variables with at least one parent and
/// centrality ≥ 0.2. Each attack's consequence is the first continuous
/// child of its first target (the target itself when it has none), with
/// the plant's safe band.
pub fn attack_suite(plant: &PlantTemplate, seed: u64) -> Result<AttackSuite, SynthError> {
    let scm = &plant.scm;
    let graph = scm.graph();
    let weights = graph.centrality_weights();
    let pool: Vec<usize> = (0..plant.n_vars())
        .filter(|&v| {
            !scm.is_binary(v)
                && !graph.parents(v).is_empty()
                && weights[v] >= 0.2
                && matches!(
                    plant.meta[v].physical_class,
                    PhysicalClass::Flow | PhysicalClass::Level | PhysicalClass::Controller
                )
        })
        .collect();
    if pool.len() < 3 {
        return Err(SynthError::Invalid("plant has too few attackable variables".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA77A_C4);
    let mut kinds: Vec<AttackKind> = SUITE_COUNTS
        .iter()
        .flat_map(|&(k, c)| std::iter::repeat_n(k, c))
        .collect();
    kinds.shuffle(&mut rng);

    let children = graph.summary_children();
    let consequence = |v: usize| {
        let mut kids: Vec<(usize, usize)> = graph
            .edges()
            .iter()
            .filter(|e| e.src == v && e.dst != v && !scm.is_binary(e.dst))
            .map(|e| (e.src_lag, e.dst))
            .collect();
        // prefer children that lead further downstream
        kids.sort_by_key(|&(lag, d)| (children[d].is_empty(), lag, d));
        kids.first().map_or(v, |k| k.1)
    };
    let sign = |rng: &mut ChaCha8Rng| if rng.random::<bool>() { 1.0 } else { -1.0 };

    let mut attacks = Vec::with_capacity(kinds.len());
    let mut cursor = SUITE_GAP;
    for (i, &kind) in kinds.iter().enumerate() {
        let first = pool[rng.random_range(0..pool.len())];
        let (targets, duration, delay, magnitude, ramp_steps) = match kind {
            AttackKind::SinglePoint => (
                vec![first],
                rng.random_range(120..=300),
                0,
                sign(&mut rng) * rng.random_range(7.0..10.0),
                0,
            ),
            AttackKind::MultiPoint => {
                let k = rng.random_range(2..=3);
                let mut t: Vec<usize> = pool.choose_multiple(&mut rng, k).copied().collect();
                t.sort_unstable();
                (
                    t,
                    rng.random_range(150..=250),
                    MULTI_POINT_DELAY,
                    sign(&mut rng) * rng.random_range(7.0..10.0),
                    0,
                )
            }
            AttackKind::StealthyRamp => (vec![first], 450, 0, sign(&mut rng) * 6.0, 300),
            AttackKind::PhysicalProcess => {
                let levels: Vec<usize> = pool
                    .iter()
                    .copied()
                    .filter(|&v| plant.meta[v].physical_class == PhysicalClass::Level)
                    .collect();
                let v = levels.choose(&mut rng).copied().unwrap_or(first);
                (
                    vec![v],
                    rng.random_range(200..=300),
                    0,
                    sign(&mut rng) * rng.random_range(7.0..10.0),
                    20,
                )
            }
            AttackKind::NetworkLevel => {
                let stage = plant.meta[first].stage;
                let t: Vec<usize> = (0..plant.n_vars())
                    .filter(|&v| plant.meta[v].stage == stage && !scm.is_binary(v) && !graph.parents(v).is_empty())
                    .collect();
                (t, rng.random_range(150..=250), 0, sign(&mut rng) * rng.random_range(6.0..8.0), 0)
            }
        };
        let cons = consequence(targets[0]);
        let (lower, upper) = plant.safe_band(cons);
        let a = AttackTemplate {
            id: i as u32 + 1,
            kind,
            targets,
            onset: cursor,
            duration,
            delay,
            magnitude,
            ramp_steps,
            success: SuccessPredicate {
                var: cons,
                lower,
                upper,
                min_steps: SUCCESS_STEPS,
            },
        };
        cursor = a.end() + SUITE_GAP;
        attacks.push(a);
    }
    let horizon = cursor + 100;
    let clean = plant.generate(horizon, seed)?;
    let mut frame = clean;
    frame.set_labels(vec![Label::Normal; horizon])?;
    for a in &attacks {
        frame = inject_attack(&frame, scm, a)?;
    }
    Ok(AttackSuite { frame, attacks })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plant() -> PlantTemplate {
        PlantTemplate::swat51(11)
    }

    fn single(target: usize, magnitude: f64, ramp: usize) -> AttackTemplate {
        AttackTemplate {
            id: 1,
            kind: AttackKind::SinglePoint,
            targets: vec![target],
            onset: 100,
            duration: 300,
            delay: 0,
            magnitude,
            ramp_steps: ramp,
            success: SuccessPredicate {
                var: target,
                lower: f64::MIN,
                upper: f64::MAX,
                min_steps: 1,
            },
        }
    }

    #[test]
    fn zero_magnitude_changes_only_labels() {
        let p = plant();
        let f = p.generate(600, 1).unwrap();
        let out = inject_attack(&f, &p.scm, &single(1, 0.0, 0)).unwrap();
        assert!(out.values().iter().zip(f.values()).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(out.labels().unwrap()[150], Label::Attack(1));
        assert_eq!(out.labels().unwrap()[99], Label::Normal);
    }

    #[test]
    fn pre_onset_rows_untouched() {
        let p = plant();
        let f = p.generate(600, 2).unwrap();
        let out = inject_attack(&f, &p.scm, &single(1, 8.0, 0)).unwrap();
        let n = p.n_vars();
        assert_eq!(&out.values()[..100 * n], &f.values()[..100 * n]);
        assert_ne!(out.value(150, 1), f.value(150, 1));
    }

    #[test]
    fn stealthy_ramp_arithmetic() {
        let a = single(1, 6.0, 300);
        let steps: Vec<f64> = (100..400).map(|t| a.offset(0, t)).collect();
        let max_step = steps.windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max);
        assert!(max_step < 1.0);
        assert!(steps.last().unwrap() > &5.0);
    }

    #[test]
    fn multi_point_onsets_staggered() {
        let mut a = single(1, 5.0, 0);
        a.targets = vec![1, 9];
        a.delay = MULTI_POINT_DELAY;
        assert_eq!(a.offset(1, 100 + 44), 0.0);
        assert_eq!(a.offset(1, 100 + 45), 5.0);
    }

    #[test]
    fn suite_has_41_episodes_with_counts() {
        let s = attack_suite(&plant(), 3).unwrap();
        assert_eq!(s.attacks.len(), 41);
        for (k, c) in SUITE_COUNTS {
            assert_eq!(s.attacks.iter().filter(|a| a.kind == k).count(), c);
        }
        let labelled = s.frame.labels().unwrap().iter().filter(|l| l.is_attack()).count();
        assert_eq!(labelled, s.attack_rows());
    }

    #[test]
    fn missing_target_rejected() {
        let p = plant();
        let f = p.generate(600, 1).unwrap();
        assert!(matches!(
            inject_attack(&f, &p.scm, &single(99, 1.0, 0)),
            Err(SynthError::TargetMissing(99))
        ));
    }
}
