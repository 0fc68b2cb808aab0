//! Subcommand implementations. Stages talk only through files in the
//! output directory.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;

use anyhow::{anyhow, Context as _};
use causal_twin::config::{ConfigError, PipelineConfig};
use causal_twin::data::{ingest_csv, DatasetSchema, TimeSeriesFrame};
use causal_twin::detect::{merge_alarms, DetectError, DetectionMetrics, DetectorState};
use causal_twin::discovery::{discover_with_stats, ConstraintCatalog};
use causal_twin::inference::{counterfactual, CounterfactualQuery, Intervention, Outcome};
use causal_twin::rootcause::{normal_score_baseline, rank_roots, AlarmContext};
use causal_twin::synth::{attack_suite, AttackTemplate, PlantOptions, PlantTemplate, SynthError};
use causal_twin::{augment, eval, CausalGraph, Scm};
use serde::Serialize;
use serde_json::json;

use crate::artifact::{check_names, read_json, sha256_file, short, write_json, DetectorArtifact};
use crate::{
    Common, DataArgs, DetectArgs, DiscoverArgs, EvalArgs, ExplainArgs, FitArgs, ReportFormat, SynthArgs, WhatifArgs,
};

#[derive(Debug)]
pub enum CliError {
    /// Bad invocation or configuration; exit code 2.
    Usage(String),
    /// Failure while running a stage; exit code 1.
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Runtime(e.into())
    }
}

type CmdResult = Result<(), CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

pub struct Context {
    pub config: PipelineConfig,
}

impl Context {
    pub fn new(common: &Common) -> Result<Self, CliError> {
        let mut config = match &common.config {
            Some(p) => PipelineConfig::load(p).map_err(|e| match e {
                ConfigError::Io(err) => usage(format!("cannot read config {}: {err}", p.display())),
                other => usage(other.to_string()),
            })?,
            None => PipelineConfig::default(),
        };
        if let Some(s) = common.seed {
            config.seed = s;
        }
        if let Some(o) = &common.out {
            config.out_dir = o.clone();
        }
        Ok(Self { config })
    }

    fn out(&self, name: &str) -> PathBuf {
        self.config.out_dir.join(name)
    }

    fn ensure_out(&self) -> anyhow::Result<()> {
        fs::create_dir_all(&self.config.out_dir)
            .with_context(|| format!("creating {}", self.config.out_dir.display()))
    }

    fn input(&self, given: &Option<PathBuf>, fallback: Option<&PathBuf>, default: &str) -> PathBuf {
        given.clone().or_else(|| fallback.cloned()).unwrap_or_else(|| self.out(default))
    }

    fn schema(&self, d: &DataArgs) -> anyhow::Result<DatasetSchema> {
        let path = self.input(&d.schema, self.config.schema.as_ref(), "schema.json");
        DatasetSchema::load(&path).with_context(|| format!("loading schema {}", path.display()))
    }

    fn frame(&self, d: &DataArgs, default: &str) -> anyhow::Result<(DatasetSchema, TimeSeriesFrame)> {
        let schema = self.schema(d)?;
        let path = self.input(&d.data, self.config.data.as_ref(), default);
        let frame = ingest_csv(&path, &schema).with_context(|| format!("loading data {}", path.display()))?;
        Ok((schema, frame))
    }

    /// Loads a model, returning it with the SHA-256 of its file.
    fn scm(&self, given: &Option<PathBuf>) -> anyhow::Result<(Scm, String)> {
        let path = self.input(given, None, "scm.json");
        let scm = Scm::load(&path).with_context(|| format!("loading model {}", path.display()))?;
        Ok((scm, sha256_file(&path)?))
    }
}

fn names(schema: &DatasetSchema) -> Vec<String> {
    schema.variables.iter().map(|m| m.name.clone()).collect()
}

pub fn synth(ctx: &Context, a: &SynthArgs) -> CmdResult {
    let cfg = &ctx.config;
    let template = a.template.as_deref().unwrap_or(&cfg.template);
    if let Some(s) = a.attacks.as_deref().filter(|&s| s != "suite-v1") {
        return Err(usage(format!("unknown attack manifest `{s}` (expected suite-v1)")));
    }
    let plant = PlantTemplate::named(template, cfg.seed, PlantOptions::default()).map_err(|e| match e {
        SynthError::UnknownTemplate(_) => usage(format!("{e} (expected swat51, wadi123 or hai78)")),
        other => CliError::Runtime(other.into()),
    })?;
    ctx.ensure_out()?;
    let schema = DatasetSchema::new(plant.meta.clone()).with_labels("label");
    let mut files = BTreeMap::new();
    let mut record = |name: &str| -> anyhow::Result<()> {
        files.insert(name.to_string(), sha256_file(&ctx.out(name))?);
        Ok(())
    };
    schema.save(ctx.out("schema.json"))?;
    record("schema.json")?;
    plant.catalog.save(ctx.out("catalog.json"))?;
    record("catalog.json")?;
    plant.truth_graph().save(ctx.out("truth_graph.json"))?;
    record("truth_graph.json")?;
    plant
        .generate(cfg.train_rows, cfg.seed.wrapping_add(100))?
        .save_csv(ctx.out("train.csv"), &schema)?;
    record("train.csv")?;
    plant
        .generate(cfg.validation_rows, cfg.seed.wrapping_add(200))?
        .save_csv(ctx.out("validation.csv"), &schema)?;
    record("validation.csv")?;
    let mut attacks = 0;
    if a.attacks.is_some() {
        let suite = attack_suite(&plant, cfg.seed)?;
        suite.frame.save_csv(ctx.out("test.csv"), &schema)?;
        record("test.csv")?;
        write_json(&ctx.out("attacks.json"), &AttackManifest::new(&plant, &suite.attacks))?;
        record("attacks.json")?;
        attacks = suite.attacks.len();
    }
    write_json(
        &ctx.out("bundle.json"),
        &json!({
            "template": template,
            "seed": cfg.seed,
            "variables": plant.n_vars(),
            "truth_edges": plant.truth_graph().n_edges(),
            "attacks": attacks,
            "files": files,
        }),
    )?;
    println!(
        "synthesised {template} (seed {}): {} variables, {} true edges, {attacks} attacks -> {}",
        cfg.seed,
        plant.n_vars(),
        plant.truth_graph().n_edges(),
        cfg.out_dir.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct AttackManifest<'a> {
    variables: Vec<&'a str>,
    attacks: &'a [AttackTemplate],
}

impl<'a> AttackManifest<'a> {
    fn new(plant: &'a PlantTemplate, attacks: &'a [AttackTemplate]) -> Self {
        Self {
            variables: plant.meta.iter().map(|m| m.name.as_str()).collect(),
            attacks,
        }
    }
}

pub fn discover(ctx: &Context, a: &DiscoverArgs) -> CmdResult {
    let cfg = &ctx.config;
    let (_, frame) = ctx.frame(&a.data, "train.csv")?;
    let catalog = match a.catalog.as_ref().or(cfg.catalog.as_ref()) {
        Some(p) => ConstraintCatalog::load(p).with_context(|| format!("loading catalog {}", p.display()))?,
        None => ConstraintCatalog::default(),
    };
    let aug = augment(&frame, cfg.tau)?;
    let (graph, stats) = discover_with_stats(&aug, frame.meta(), &catalog, &cfg.discovery())?;
    ctx.ensure_out()?;
    graph.save(ctx.out("graph.json"))?;
    println!(
        "discovered {} edges over {} variables (lag ≤ {}), {} lag-0 cycles broken; fingerprint {}",
        graph.n_edges(),
        graph.n_vars(),
        cfg.tau,
        stats.cycles_broken,
        short(&graph.fingerprint())
    );
    Ok(())
}

pub fn fit(ctx: &Context, a: &FitArgs) -> CmdResult {
    let cfg = &ctx.config;
    let (schema, frame) = ctx.frame(&a.data, "train.csv")?;
    let gpath = ctx.input(&a.graph, None, "graph.json");
    let graph = CausalGraph::load(&gpath).with_context(|| format!("loading graph {}", gpath.display()))?;
    check_names(&names(&schema), graph.names())?;
    let aug = augment(&frame, cfg.tau.max(graph.max_lag()))?;
    let scm = causal_twin::fit(&aug, frame.meta(), &graph)?;
    ctx.ensure_out()?;
    scm.save(ctx.out("scm.json"))?;
    println!(
        "fitted {} equations on graph {}; model {}",
        scm.n_vars(),
        short(scm.graph_hash()),
        short(&sha256_file(&ctx.out("scm.json"))?)
    );
    Ok(())
}

#[derive(Serialize)]
struct StreamLine<'a> {
    t: i64,
    mcai: Option<f64>,
    alarm: bool,
    top: Option<&'a str>,
}

/// Writes one JSON line; `false` once the reader has gone away.
fn emit(out: &mut impl Write, line: &StreamLine) -> Result<bool, CliError> {
    let mut buf = serde_json::to_vec(line)?;
    buf.push(b'\n');
    match out.write_all(&buf) {
        Ok(()) => Ok(true),
        Err(e) if e.kind() == io::ErrorKind::BrokenPipe => Ok(false),
        Err(e) => Err(e.into()),
    }
}

pub fn detect(ctx: &Context, a: &DetectArgs) -> CmdResult {
    let cfg = &ctx.config;
    let (scm, scm_sha) = ctx.scm(&a.scm)?;
    let (schema, frame) = ctx.frame(&a.data, "test.csv")?;
    check_names(&names(&schema), scm.graph().names())?;
    let vpath = ctx.input(&a.validation, None, "validation.csv");
    let validation = ingest_csv(&vpath, &schema).with_context(|| format!("loading data {}", vpath.display()))?;

    let mut det = DetectorState::new(scm);
    let policy = cfg.threshold();
    let threshold = det.calibrate_threshold(&validation, policy)?;
    let baseline = normal_score_baseline(&mut det, &validation, cfg.threshold_quantile);
    let artifact = DetectorArtifact {
        scm_sha256: scm_sha.clone(),
        graph_hash: det.scm().graph_hash().to_string(),
        policy,
        threshold,
        baseline,
    };
    ctx.ensure_out()?;
    write_json(&ctx.out("detector.json"), &artifact)?;

    det.reset();
    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    let mut steps = Vec::with_capacity(frame.len());
    let mut mcai = vec![f64::NAN; frame.len()];
    for t in 0..frame.len() {
        let ts = frame.timestamps()[t];
        match det.score_step(ts, frame.row(t)) {
            Ok(s) => {
                mcai[t] = s.mcai;
                if a.stream {
                    let top = s
                        .scores
                        .iter()
                        .zip(det.weights())
                        .enumerate()
                        .max_by(|x, y| (x.1 .0 * x.1 .1).total_cmp(&(y.1 .0 * y.1 .1)))
                        .map(|(v, _)| det.scm().graph().names()[v].as_str());
                    let line = StreamLine {
                        t: ts,
                        mcai: Some(s.mcai),
                        alarm: s.mcai > threshold,
                        top,
                    };
                    if !emit(&mut out, &line)? {
                        return Ok(());
                    }
                }
                steps.push(s);
            }
            Err(DetectError::ColdStart { .. }) => {
                if a.stream {
                    let line = StreamLine {
                        t: ts,
                        mcai: None,
                        alarm: false,
                        top: None,
                    };
                    if !emit(&mut out, &line)? {
                        return Ok(());
                    }
                }
            }
            Err(e) => return Err(e.into()),
        }
    }
    if let Err(e) = out.flush() {
        if e.kind() == io::ErrorKind::BrokenPipe {
            return Ok(());
        }
        return Err(e.into());
    }
    drop(out);

    let events = merge_alarms(&steps);
    let metrics: Option<DetectionMetrics> = frame
        .labels()
        .filter(|l| l.iter().any(|x| x.is_attack()))
        .map(|l| causal_twin::detect::detection_metrics(&mcai, l, threshold));
    let latency = det.latency().summary();
    write_json(
        &ctx.out("detection.json"),
        &json!({
            "scm_sha256": scm_sha,
            "threshold": threshold,
            "rows": frame.len(),
            "alarm_steps": steps.iter().filter(|s| s.mcai > threshold).count(),
            "events": events,
            "metrics": metrics,
        }),
    )?;
    if !a.stream {
        println!("threshold {threshold:.4}  alarm events {}", events.len());
        if let Some(m) = metrics {
            println!("Precision  Recall  F1-Score    AUC  FA rate");
            println!(
                "{:>9.3} {:>7.3} {:>9.3} {:>6.3} {:>8.4}",
                m.precision, m.recall, m.f1, m.auc, m.false_alarm_rate
            );
        }
        println!("latency mean {:.2}µs p99 {:.2}µs", latency.mean_us, latency.p99_us);
    }
    Ok(())
}

pub fn explain(ctx: &Context, a: &ExplainArgs) -> CmdResult {
    let (scm, scm_sha) = ctx.scm(&a.scm)?;
    let dpath = ctx.input(&a.detector, None, "detector.json");
    let artifact: DetectorArtifact = read_json(&dpath)?;
    artifact.check(&scm, &scm_sha)?;
    let (schema, frame) = ctx.frame(&a.data, "test.csv")?;
    check_names(&names(&schema), scm.graph().names())?;
    let mut det = DetectorState::new(scm);
    det.set_threshold(artifact.threshold);
    let lag = det.scm().max_lag();
    let row = match a.row {
        Some(r) if r < lag || r >= frame.len() => {
            return Err(usage(format!("row {r} outside {lag}..{}", frame.len())));
        }
        Some(r) => r,
        // the first alarm with a full normal window behind it
        None => (lag + ctx.config.normal_window..frame.len())
            .find(|&t| det.row_mcai(frame.values(), t) > artifact.threshold)
            .ok_or_else(|| anyhow!("no alarm in the data; pass --row to explain a specific step"))?,
    };
    let actx = AlarmContext {
        frame: &frame,
        alarm_row: row,
        onset_row: a.onset.unwrap_or(row).min(row),
    };
    let ranking = rank_roots(&det, &actx, &artifact.baseline, &ctx.config.root_cause())?;
    let var_names = det.scm().graph().names();
    ctx.ensure_out()?;
    write_json(
        &ctx.out("explain.json"),
        &json!({
            "scm_sha256": scm_sha,
            "row": row,
            "ranking": ranking,
            "names": ranking.entries.iter().map(|e| &var_names[e.var]).collect::<Vec<_>>(),
        }),
    )?;
    println!(
        "alarm at row {row} (t = {}); {} candidates, {} Shapley",
        ranking.alarm_t,
        ranking.entries.len(),
        if ranking.exact { "exact" } else { "sampled" }
    );
    println!("rank  variable          Shapley  causal effect");
    for e in &ranking.entries {
        println!("{:>4}  {:<15} {:>9.4} {:>14.4}", e.rank, var_names[e.var], e.shapley, e.causal_effect);
    }
    Ok(())
}

pub fn whatif(ctx: &Context, a: &WhatifArgs) -> CmdResult {
    let (scm, scm_sha) = ctx.scm(&a.scm)?;
    let (schema, frame) = ctx.frame(&a.data, "test.csv")?;
    let var_names = names(&schema);
    check_names(&var_names, scm.graph().names())?;
    let index = |name: &str| {
        var_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| usage(format!("unknown variable `{name}`")))
    };
    let mut assignments = Vec::new();
    for s in &a.set {
        let (name, value) = s
            .split_once('=')
            .ok_or_else(|| usage(format!("--set expects NAME=VALUE, got `{s}`")))?;
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|_| usage(format!("bad value in `{s}`")))?;
        assignments.push((index(name.trim())?, value));
    }
    let outcome_var = index(&a.outcome)?;
    let lag = scm.max_lag();
    let to = a.to.unwrap_or(a.from + 60).min(frame.len());
    if a.from < lag || a.from >= to {
        return Err(usage(format!("window {}..{to} needs at least {lag} rows of history", a.from)));
    }
    let intervention = Intervention::new(assignments).map_err(|e| usage(e.to_string()))?;
    let outcome = match a.above {
        Some(threshold) => Outcome::Above {
            var: outcome_var,
            threshold,
        },
        None => Outcome::Variable(outcome_var),
    };
    let query = CounterfactualQuery {
        evidence: frame.slice(a.from - lag, to),
        intervention,
        from: lag,
        outcome,
        at: None,
    };
    let result = counterfactual(&scm, &query, a.samples, ctx.config.seed)?;
    let factual = frame.value(to - 1, outcome_var);
    let factual = match a.above {
        Some(th) => f64::from(u8::from(factual > th)),
        None => factual,
    };
    ctx.ensure_out()?;
    write_json(
        &ctx.out("whatif.json"),
        &json!({
            "scm_sha256": scm_sha,
            "from": a.from,
            "to": to,
            "outcome": a.outcome,
            "factual": factual,
            "point": result.point,
            "mean": result.mean,
            "std_error": result.std_error,
            "samples": result.samples,
            "deterministic": result.deterministic,
        }),
    )?;
    println!(
        "{} at row {}: factual {factual:.4}, counterfactual {:.4} (mean {:.4} ± {:.4}{})",
        a.outcome,
        to - 1,
        result.point,
        result.mean,
        result.std_error,
        if result.deterministic { ", exact" } else { "" }
    );
    Ok(())
}

pub fn eval(ctx: &Context, a: &EvalArgs) -> CmdResult {
    let mut cfg = ctx.config.clone();
    if let Some(t) = &a.template {
        cfg.template = t.clone();
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let report = eval::evaluate(&cfg).map_err(|e| match e {
        eval::EvalError::Synth(SynthError::UnknownTemplate(t)) => usage(format!("unknown template `{t}`")),
        other => CliError::Runtime(other.into()),
    })?;
    ctx.ensure_out()?;
    write_json(&ctx.out("eval.json"), &report)?;
    match a.report {
        ReportFormat::Tables => print!("{}", report.render_tables()),
        ReportFormat::Json => println!("{}", serde_json::to_string_pretty(&report)?),
    }
    Ok(())
}
