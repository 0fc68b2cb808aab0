//! Causal digital twin engine for industrial control time series.
//!
//! The pipeline learns a lagged causal graph from plant telemetry
//! ([`discovery`]), fits structural equations on it ([`scm`]), answers
//! interventional and counterfactual queries ([`inference`]), scores
//! mechanism violations online ([`detect`]), attributes alarms to root
//! causes ([`rootcause`]) and replays attacks under candidate defenses
//! ([`defense`]). [`synth`] generates plants with known ground truth and
//! [`validate`] and [`eval`] score every stage against it.

pub mod config;
pub mod data;
pub mod defense;
pub mod detect;
pub mod discovery;
pub mod eval;
pub mod graph;
pub mod inference;
pub mod qmc;
pub mod rootcause;
pub mod scm;
pub mod stats;
pub mod synth;
pub mod validate;

pub use config::PipelineConfig;
pub use data::{augment, AugmentedFrame, DatasetSchema, Label, PhysicalClass, TimeSeriesFrame, VariableKind, VariableMeta};
pub use defense::{DefenseReport, DefenseSpec};
pub use detect::{DetectorState, ThresholdPolicy};
pub use discovery::{discover, ConstraintCatalog, DiscoveryConfig};
pub use graph::{CausalGraph, Edge};
pub use inference::{Engine, Intervention};
pub use rootcause::{rank_roots, RootCauseConfig, RootCauseRanking};
pub use scm::{fit, Scm};
pub use synth::{AttackSuite, AttackTemplate, PlantTemplate};
