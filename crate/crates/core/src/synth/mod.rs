//! Ground-truth synthetic plants, attack injection and the Simpson demo.
//!
//! A plant is a staged water-treatment flavoured SCM. Each stage has an
//! inflow, a tank level, a controller output, a pump and a valve, an
//! outflow, a pump pressure and a chemical analyzer; the outflow of one
//! stage feeds the next with a short delay. Equations are linear in
//! standard units with unit marginal variance, so noise σ fixes each
//! variable's explainable share directly.

pub mod attack;
pub mod simpson;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{PhysicalClass, TimeSeriesFrame, VariableMeta};
use crate::discovery::{ConstraintCatalog, ControlEdge, ForbiddenPair};
use crate::graph::{CausalGraph, Edge, GraphError};
use crate::inference::Engine;
use crate::scm::{EquationForm, FitFlags, Scm, ScmError, Standardization, StructuralEquation};

pub use attack::{
    attack_suite, inject_attack, AttackKind, AttackSuite, AttackTemplate, Episode, SuccessPredicate,
};
pub use simpson::{generate_simpson, SimpsonData, SimpsonVariant};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("template is unstable: spectral radius {0:.3} ≥ 1")]
    UnstableTemplate(f64),
    #[error("unknown template `{0}`")]
    UnknownTemplate(String),
    #[error("attack target {0} is not a variable of the plant")]
    TargetMissing(usize),
    #[error("attack window [{onset}, {end}) exceeds the horizon {horizon}")]
    OutsideHorizon { onset: usize, end: usize, horizon: usize },
    #[error("invalid generator setting: {0}")]
    Invalid(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Scm(#[from] ScmError),
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
}

/// Rows simulated and discarded before the first returned row.
const BURN_IN: usize = 200;
/// Variables per stage before optional isolated analyzers.
const STAGE_CORE: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantTemplate {
    pub name: String,
    pub stages: usize,
    pub meta: Vec<VariableMeta>,
    /// Ground-truth model; equations in standard units.
    pub scm: Scm,
    pub catalog: ConstraintCatalog,
    /// Sampling period of generated frames.
    pub period: i64,
    pub seed: u64,
}

/// Knobs that change a named template.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PlantOptions {
    /// Fixed noise σ (standard units) for every variable with parents;
    /// drawn per variable when `None`.
    pub noise: Option<f64>,
}

impl PlantTemplate {
    /// Looks a template up by name (`swat51`, `wadi123`, `hai78`).
    pub fn named(name: &str, seed: u64, opts: PlantOptions) -> Result<Self, SynthError> {
        match name {
            "swat51" => Self::staged("swat51", 6, 3, seed, opts),
            "wadi123" => Self::staged("wadi123", 15, 3, seed, opts),
            "hai78" => Self::staged("hai78", 9, 6, seed, opts),
            _ => Err(SynthError::UnknownTemplate(name.into())),
        }
    }

    pub fn swat51(seed: u64) -> Self {
        Self::staged("swat51", 6, 3, seed, PlantOptions::default()).expect("built-in template is valid")
    }

    /// `stages` process stages; the first `isolated` stages also carry an
    /// analyzer with no causal links.
    pub fn staged(
        name: &str,
        stages: usize,
        isolated: usize,
        seed: u64,
        opts: PlantOptions,
    ) -> Result<Self, SynthError> {
        if stages == 0 || isolated > stages {
            return Err(SynthError::Invalid(format!("{stages} stages, {isolated} isolated")));
        }
        if opts.noise.is_some_and(|s| !(0.0..1.0).contains(&s)) {
            return Err(SynthError::Invalid("noise σ must lie in [0, 1)".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut meta = Vec::new();
        let mut stdz = Vec::new();
        // (src, lag, dst, coefficient)
        let mut links: Vec<(usize, usize, usize, f64)> = Vec::new();
        let mut noise = Vec::new();
        let mut logistic = Vec::new();
        let mut catalog = ConstraintCatalog {
            class_precedence: vec![
                (PhysicalClass::Level, PhysicalClass::Controller),
                (PhysicalClass::Controller, PhysicalClass::Flow),
                (PhysicalClass::Level, PhysicalClass::Flow),
                (PhysicalClass::Pump, PhysicalClass::Pressure),
                (PhysicalClass::Flow, PhysicalClass::ChemicalAnalyzer),
            ],
            ..Default::default()
        };
        let mut prev_out: Option<usize> = None;
        let draw_sigma = |rng: &mut ChaCha8Rng| opts.noise.unwrap_or_else(|| rng.random_range(0.2..0.3));
        for s in 1..=stages {
            let base = meta.len();
            let (fit1, lit, plc, pump, valve, fit2, pit, ait) =
                (base, base + 1, base + 2, base + 3, base + 4, base + 5, base + 6, base + 7);
            let jitter = |rng: &mut ChaCha8Rng, m: f64, sd: f64| Standardization {
                mean: m * rng.random_range(0.9..1.1),
                std: sd * rng.random_range(0.9..1.1),
            };
            let push = |meta: &mut Vec<VariableMeta>, m: VariableMeta| meta.push(m);
            let st = s as u8;
            push(&mut meta, VariableMeta::continuous(format!("FIT{s}01"), PhysicalClass::Flow, st));
            stdz.push(jitter(&mut rng, 2.5, 0.25));
            push(&mut meta, VariableMeta::continuous(format!("LIT{s}01"), PhysicalClass::Level, st));
            stdz.push(jitter(&mut rng, 800.0, 40.0));
            push(&mut meta, VariableMeta::continuous(format!("PLC{s}"), PhysicalClass::Controller, st));
            stdz.push(jitter(&mut rng, 50.0, 8.0));
            push(&mut meta, VariableMeta::binary(format!("P{s}01"), PhysicalClass::Pump, st));
            stdz.push(Standardization { mean: 0.5, std: 0.5 });
            push(&mut meta, VariableMeta::binary(format!("MV{s}01"), PhysicalClass::Valve, st));
            stdz.push(Standardization { mean: 0.5, std: 0.5 });
            push(&mut meta, VariableMeta::continuous(format!("FIT{s}02"), PhysicalClass::Flow, st));
            stdz.push(jitter(&mut rng, 2.5, 0.25));
            push(&mut meta, VariableMeta::continuous(format!("PIT{s}01"), PhysicalClass::Pressure, st));
            stdz.push(jitter(&mut rng, 1.2, 0.05));
            push(&mut meta, VariableMeta::continuous(format!("AIT{s}01"), PhysicalClass::ChemicalAnalyzer, st));
            stdz.push(jitter(&mut rng, 7.0, 0.1));

            let gaussian = |rng: &mut ChaCha8Rng, links: &mut Vec<_>, src, lag, dst| {
                let sigma: f64 = draw_sigma(rng);
                links.push((src, lag, dst, (1.0 - sigma * sigma).sqrt()));
                sigma
            };
            let mut sig = vec![0.0; STAGE_CORE];
            sig[0] = match prev_out {
                Some(p) => {
                    let lag = rng.random_range(1..=2);
                    gaussian(&mut rng, &mut links, p, lag, fit1)
                }
                None => 1.0,
            };
            sig[1] = gaussian(&mut rng, &mut links, fit1, 1, lit);
            sig[2] = gaussian(&mut rng, &mut links, lit, 0, plc);
            sig[5] = gaussian(&mut rng, &mut links, plc, 0, fit2);
            sig[6] = gaussian(&mut rng, &mut links, pump, 0, pit);
            sig[7] = gaussian(&mut rng, &mut links, fit1, 2, ait);
            let slope_p: f64 = rng.random_range(3.0..5.0);
            let slope_v: f64 = -rng.random_range(3.0..5.0);
            links.push((plc, 0, pump, slope_p));
            links.push((plc, 1, valve, slope_v));
            noise.extend_from_slice(&sig);
            logistic.extend([false, false, false, true, true, false, false, false]);
            catalog.control_edges.push(ControlEdge {
                controller: format!("PLC{s}"),
                actuators: vec![format!("P{s}01"), format!("MV{s}01")],
            });
            catalog.forbidden_pairs.push(ForbiddenPair {
                src: format!("AIT{s}01"),
                dst: format!("FIT{s}01"),
                lag: None,
            });
            if s <= isolated {
                meta.push(VariableMeta::continuous(format!("AIT{s}02"), PhysicalClass::ChemicalAnalyzer, st));
                stdz.push(jitter(&mut rng, 250.0, 5.0));
                noise.push(1.0);
                logistic.push(false);
            }
            prev_out = Some(fit2);
        }
        let n = meta.len();
        let names: Vec<String> = meta.iter().map(|m| m.name.clone()).collect();
        let max_lag = links.iter().map(|l| l.1).max().unwrap_or(1).max(1);
        let edges = links.iter().map(|&(s, l, d, _)| Edge::new(s, l, d)).collect();
        let graph = CausalGraph::new(names, max_lag, 0.05, edges)?;
        let equations = (0..n)
            .map(|v| {
                let parents = graph.parents(v);
                let linear: Vec<f64> = parents
                    .iter()
                    .map(|&(p, l)| {
                        links
                            .iter()
                            .find(|x| x.0 == p && x.1 == l && x.2 == v)
                            .map(|x| x.3)
                            .expect("edge has a coefficient")
                    })
                    .collect();
                let form = if logistic[v] {
                    EquationForm::Logistic { intercept: 0.0, linear }
                } else {
                    EquationForm::GaussianAdditive {
                        intercept: 0.0,
                        linear,
                        quadratic: 0.0,
                        sigma: noise[v],
                    }
                };
                StructuralEquation {
                    target: v,
                    parents,
                    form,
                    flags: FitFlags::default(),
                }
            })
            .collect();
        let kinds = meta.iter().map(|m| m.kind).collect();
        let scm = Scm::from_parts(graph, kinds, stdz, equations)?;
        let radius = spectral_radius(&scm);
        if radius >= 1.0 {
            return Err(SynthError::UnstableTemplate(radius));
        }
        Ok(Self {
            name: name.into(),
            stages,
            meta,
            scm,
            catalog,
            period: 1,
            seed,
        })
    }

    pub fn n_vars(&self) -> usize {
        self.meta.len()
    }

    pub fn truth_graph(&self) -> &CausalGraph {
        self.scm.graph()
    }

    /// Safe band `mean ± 3σ` of a variable in raw units.
    pub fn safe_band(&self, var: usize) -> (f64, f64) {
        let s = self.scm.standardization()[var];
        (s.mean - 3.0 * s.std, s.mean + 3.0 * s.std)
    }

    /// Ancestral sampling of `horizon` rows; labels all normal.
    pub fn generate(&self, horizon: usize, seed: u64) -> Result<TimeSeriesFrame, SynthError> {
        let scm = &self.scm;
        let n = scm.n_vars();
        let lag = scm.max_lag();
        let total = lag + BURN_IN + horizon;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut noise = vec![0.0; total * n];
        for t in lag..total {
            for v in 0..n {
                noise[t * n + v] = if scm.is_binary(v) {
                    rng.random::<f64>()
                } else {
                    scm.sigma(v) * rng.sample::<f64, _>(StandardNormal)
                };
            }
        }
        let mut buf = vec![0.0; total * n];
        for t in 0..lag {
            for v in 0..n {
                buf[t * n + v] = scm.standardization()[v].mean;
                if scm.is_binary(v) {
                    buf[t * n + v] = 0.0;
                }
            }
        }
        Engine::new(scm).run(&mut buf, lag, total, &noise, None, |_, _, natural, _| natural);
        let skip = lag + BURN_IN;
        let values = buf[skip * n..].to_vec();
        let timestamps = (0..horizon as i64).map(|t| t * self.period).collect();
        Ok(TimeSeriesFrame::new(self.meta.clone(), timestamps, values, None)?)
    }
}

/// Spectral radius of the linearised lag dynamics of a model. Logistic
/// slopes are bounded by their steepest point.
pub fn spectral_radius(scm: &Scm) -> f64 {
    let n = scm.n_vars();
    let lags = scm.max_lag();
    let mut a = vec![DMatrix::<f64>::zeros(n, n); lags + 1];
    for eq in scm.equations() {
        let (linear, gain) = match &eq.form {
            EquationForm::GaussianAdditive { linear, .. } => (linear, 1.0),
            // dE[z]/dη of a 0/1 variable with std 0.5 is at most 2 · 1/4
            EquationForm::Logistic { linear, .. } => (linear, 0.5),
        };
        for (&(p, l), &b) in eq.parents.iter().zip(linear) {
            a[l][(eq.target, p)] += gain * b;
        }
    }
    let inv = (DMatrix::identity(n, n) - &a[0])
        .try_inverse()
        .unwrap_or_else(|| DMatrix::identity(n, n));
    if lags == 0 {
        return 0.0;
    }
    let dim = n * lags;
    let mut comp = DMatrix::<f64>::zeros(dim, dim);
    for l in 1..=lags {
        let block = &inv * &a[l];
        comp.view_mut((0, (l - 1) * n), (n, n)).copy_from(&block);
    }
    for k in 1..lags {
        comp.view_mut((k * n, (k - 1) * n), (n, n)).fill_with_identity();
    }
    // Gelfand's formula on A^(2^k); exact zero for feed-forward plants
    let mut log_scale = 0.0;
    for _ in 0..10 {
        let norm = comp.norm();
        if norm == 0.0 {
            return 0.0;
        }
        comp /= norm;
        log_scale = 2.0 * (log_scale + norm.ln());
        comp = &comp * &comp;
    }
    let norm = comp.norm();
    if norm == 0.0 {
        return 0.0;
    }
    ((log_scale + norm.ln()) / 1024.0).exp()
}

/// A scheduled actuator toggle: `var` forced to `value` over rows
/// `start..end`, with the outcome event `outcome > threshold`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaturalExperiment {
    pub var: usize,
    pub value: f64,
    pub start: usize,
    pub end: usize,
    pub outcome: usize,
    pub threshold: f64,
}

/// Generates a normal frame containing `count` scheduled pump toggles of
/// `window` rows each. The outcome of a toggle is the pump's pressure
/// reading exceeding its median.
pub fn generate_experiments(
    plant: &PlantTemplate,
    count: usize,
    window: usize,
    seed: u64,
) -> Result<(TimeSeriesFrame, Vec<NaturalExperiment>), SynthError> {
    let scm = &plant.scm;
    let gap = window * 2 + 50;
    let horizon = gap * (count + 1);
    let clean = plant.generate(horizon, seed)?;
    let pumps: Vec<usize> = (0..plant.n_vars())
        .filter(|&v| plant.meta[v].physical_class == PhysicalClass::Pump)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_70661E);
    let mut experiments = Vec::with_capacity(count);
    for k in 0..count {
        let var = pumps[k % pumps.len()];
        let outcome = scm
            .graph()
            .summary_children()[var]
            .iter()
            .copied()
            .find(|&c| !scm.is_binary(c))
            .ok_or_else(|| SynthError::Invalid(format!("pump {var} drives no sensor")))?;
        let start = gap * (k + 1) - window;
        experiments.push(NaturalExperiment {
            var,
            value: f64::from(u8::from(rng.random::<bool>())),
            start,
            end: start + window,
            outcome,
            threshold: scm.standardization()[outcome].mean,
        });
    }
    let frame = attack::replay(scm, &clean, |t, var, natural| {
        experiments
            .iter()
            .find(|e| e.var == var && (e.start..e.end).contains(&t))
            .map_or(natural, |e| e.value)
    })?;
    Ok((frame, experiments))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn swat51_shape() {
        let p = PlantTemplate::swat51(1);
        assert_eq!(p.n_vars(), 51);
        assert_eq!(p.truth_graph().n_edges(), 47);
        assert!(p.catalog.validate().is_ok());
    }

    #[test]
    fn other_sizes() {
        let w = PlantTemplate::named("wadi123", 0, PlantOptions::default()).unwrap();
        let h = PlantTemplate::named("hai78", 0, PlantOptions::default()).unwrap();
        assert_eq!((w.n_vars(), h.n_vars()), (123, 78));
        assert!(PlantTemplate::named("nope", 0, PlantOptions::default()).is_err());
    }

    #[test]
    fn feed_forward_plant_is_stable() {
        let r = spectral_radius(&PlantTemplate::swat51(3).scm);
        assert!(r < 1e-6, "{r}");
    }

    #[test]
    fn ar1_radius_is_its_coefficient() {
        let g = CausalGraph::new(vec!["X".into()], 1, 0.05, vec![Edge::new(0, 1, 0)]).unwrap();
        let eq = StructuralEquation {
            target: 0,
            parents: vec![(0, 1)],
            form: EquationForm::GaussianAdditive {
                intercept: 0.0,
                linear: vec![0.5],
                quadratic: 0.0,
                sigma: 1.0,
            },
            flags: FitFlags::default(),
        };
        let scm = Scm::from_parts(
            g,
            vec![crate::data::VariableKind::ContinuousSensor],
            vec![Standardization { mean: 0.0, std: 1.0 }],
            vec![eq],
        )
        .unwrap();
        assert!((spectral_radius(&scm) - 0.5).abs() < 1e-9);
    }

    #[test]
    fn same_seed_same_frame() {
        let p = PlantTemplate::swat51(5);
        let a = p.generate(300, 9).unwrap();
        let b = p.generate(300, 9).unwrap();
        assert!(a.values().iter().zip(b.values()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn standardised_marginals_are_unit() {
        let p = PlantTemplate::swat51(2);
        let f = p.generate(20_000, 4).unwrap();
        for v in (0..p.n_vars()).filter(|&v| !p.scm.is_binary(v)) {
            let s = p.scm.standardization()[v];
            let z: Vec<f64> = f.column(v).iter().map(|x| s.to_z(*x)).collect();
            let sd = crate::stats::std_dev(&z);
            assert!((sd - 1.0).abs() < 0.08, "{}: {sd}", p.meta[v].name);
        }
    }
}
