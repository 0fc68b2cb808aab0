//! Data model, CSV ingestion, temporal augmentation and splitting.
//!
//! Values are stored row-major (`T × n`). A missing cell is stored as `NaN`
//! and is never replaced by zero; [`fill_missing`] is the only place that
//! writes over a missing cell.

use std::collections::HashSet;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("timestamps are not strictly increasing with a constant period (row {row})")]
    NonMonotoneTimestamps { row: usize },
    #[error("actuator `{variable}` has non-binary value `{value}` at row {row}")]
    NonBinaryActuatorValue {
        variable: String,
        value: String,
        row: usize,
    },
    #[error("series too short: {len} rows, need more than {needed}")]
    SeriesTooShort { len: usize, needed: usize },
    #[error("split ranges overlap or are out of order")]
    OverlappingRanges,
    #[error("split range [{start}, {end}) lies outside the frame span")]
    RangeOutsideFrame { start: i64, end: i64 },
    #[error("invalid frame: {0}")]
    InvalidFrame(String),
    #[error("parse error at row {row}: {msg}")]
    Parse { row: usize, msg: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariableKind {
    ContinuousSensor,
    BinaryActuator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhysicalClass {
    Flow,
    Level,
    Pressure,
    ChemicalAnalyzer,
    Pump,
    Valve,
    Controller,
    Other,
}

impl fmt::Display for PhysicalClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            PhysicalClass::Flow => "flow",
            PhysicalClass::Level => "level",
            PhysicalClass::Pressure => "pressure",
            PhysicalClass::ChemicalAnalyzer => "chemical_analyzer",
            PhysicalClass::Pump => "pump",
            PhysicalClass::Valve => "valve",
            PhysicalClass::Controller => "controller",
            PhysicalClass::Other => "other",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableMeta {
    pub name: String,
    pub kind: VariableKind,
    pub physical_class: PhysicalClass,
    /// 1-based process stage.
    pub stage: u8,
    /// Raw cell values mapped to 1 for a binary actuator (e.g. `"2"` for an
    /// open three-state valve).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub active_states: Vec<String>,
    /// Raw cell values mapped to 0.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inactive_states: Vec<String>,
}

impl VariableMeta {
    pub fn continuous(name: impl Into<String>, class: PhysicalClass, stage: u8) -> Self {
        Self {
            name: name.into(),
            kind: VariableKind::ContinuousSensor,
            physical_class: class,
            stage,
            active_states: Vec::new(),
            inactive_states: Vec::new(),
        }
    }

    pub fn binary(name: impl Into<String>, class: PhysicalClass, stage: u8) -> Self {
        Self {
            kind: VariableKind::BinaryActuator,
            ..Self::continuous(name, class, stage)
        }
    }

    pub fn is_binary(&self) -> bool {
        self.kind == VariableKind::BinaryActuator
    }

    fn coerce_binary(&self, raw: &str) -> Option<f64> {
        let t = raw.trim();
        if self.active_states.iter().any(|s| s.eq_ignore_ascii_case(t)) {
            return Some(1.0);
        }
        if self.inactive_states.iter().any(|s| s.eq_ignore_ascii_case(t)) {
            return Some(0.0);
        }
        match t.to_ascii_lowercase().as_str() {
            "1" | "1.0" | "true" | "open" | "on" => Some(1.0),
            "0" | "0.0" | "false" | "closed" | "off" => Some(0.0),
            _ => None,
        }
    }
}

/// Per-step ground-truth label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Normal,
    Attack(u32),
}

impl Label {
    pub fn is_attack(self) -> bool {
        matches!(self, Label::Attack(_))
    }

    fn parse(raw: &str) -> Option<Label> {
        let t = raw.trim();
        let lower = t.to_ascii_lowercase();
        if lower.is_empty() || lower == "normal" || lower == "0" {
            return Some(Label::Normal);
        }
        if lower == "attack" || lower == "a" {
            return Some(Label::Attack(1));
        }
        if let Ok(id) = lower.parse::<u32>() {
            return Some(Label::Attack(id));
        }
        let id = lower
            .strip_prefix("attack:")
            .or_else(|| lower.strip_prefix('a'))?;
        id.parse::<u32>().ok().map(Label::Attack)
    }

    fn render(self) -> String {
        match self {
            Label::Normal => "normal".into(),
            Label::Attack(id) => format!("attack:{id}"),
        }
    }
}

/// Declares the variables of a dataset and how its CSV file is laid out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSchema {
    pub variables: Vec<VariableMeta>,
    #[serde(default = "default_ts_column")]
    pub timestamp_column: String,
    #[serde(default)]
    pub label_column: Option<String>,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
}

fn default_ts_column() -> String {
    "t".into()
}

fn default_delimiter() -> char {
    ','
}

impl DatasetSchema {
    pub fn new(variables: Vec<VariableMeta>) -> Self {
        Self {
            variables,
            timestamp_column: default_ts_column(),
            label_column: None,
            delimiter: default_delimiter(),
        }
    }

    pub fn with_labels(mut self, column: impl Into<String>) -> Self {
        self.label_column = Some(column.into());
        self
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DataError> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Aligned fixed-rate multivariate samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeriesFrame {
    meta: Vec<VariableMeta>,
    timestamps: Vec<i64>,
    period: i64,
    values: Vec<f64>,
    labels: Option<Vec<Label>>,
}

impl TimeSeriesFrame {
    /// Builds a frame from row-major values, validating every invariant.
    /// `NaN` marks a missing cell.
    pub fn new(
        meta: Vec<VariableMeta>,
        timestamps: Vec<i64>,
        values: Vec<f64>,
        labels: Option<Vec<Label>>,
    ) -> Result<Self, DataError> {
        let n = meta.len();
        let mut names = HashSet::new();
        for m in &meta {
            if !names.insert(m.name.as_str()) {
                return Err(DataError::SchemaMismatch(format!(
                    "duplicate variable `{}`",
                    m.name
                )));
            }
        }
        if values.len() != timestamps.len() * n {
            return Err(DataError::InvalidFrame(format!(
                "{} values for {} rows × {} columns",
                values.len(),
                timestamps.len(),
                n
            )));
        }
        if let Some(l) = &labels {
            if l.len() != timestamps.len() {
                return Err(DataError::InvalidFrame("label length mismatch".into()));
            }
        }
        let period = check_timestamps(&timestamps)?;
        for (row, chunk) in values.chunks(n.max(1)).enumerate().take(timestamps.len()) {
            for (m, &v) in meta.iter().zip(chunk) {
                if m.is_binary() && !v.is_nan() && v != 0.0 && v != 1.0 {
                    return Err(DataError::NonBinaryActuatorValue {
                        variable: m.name.clone(),
                        value: v.to_string(),
                        row,
                    });
                }
            }
        }
        Ok(Self {
            meta,
            timestamps,
            period,
            values,
            labels,
        })
    }

    /// An empty frame over the given variables.
    pub fn empty(meta: Vec<VariableMeta>, period: i64) -> Self {
        Self {
            meta,
            timestamps: Vec::new(),
            period,
            values: Vec::new(),
            labels: None,
        }
    }

    pub fn meta(&self) -> &[VariableMeta] {
        &self.meta
    }

    pub fn n_vars(&self) -> usize {
        self.meta.len()
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn timestamps(&self) -> &[i64] {
        &self.timestamps
    }

    pub fn period(&self) -> i64 {
        self.period
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn labels(&self) -> Option<&[Label]> {
        self.labels.as_deref()
    }

    pub fn set_labels(&mut self, labels: Vec<Label>) -> Result<(), DataError> {
        if labels.len() != self.len() {
            return Err(DataError::InvalidFrame("label length mismatch".into()));
        }
        self.labels = Some(labels);
        Ok(())
    }

    pub fn value(&self, t: usize, var: usize) -> f64 {
        self.values[t * self.meta.len() + var]
    }

    pub fn row(&self, t: usize) -> &[f64] {
        let n = self.meta.len();
        &self.values[t * n..(t + 1) * n]
    }

    pub fn column(&self, var: usize) -> Vec<f64> {
        (0..self.len()).map(|t| self.value(t, var)).collect()
    }

    pub fn is_missing(&self, t: usize, var: usize) -> bool {
        self.value(t, var).is_nan()
    }

    pub fn missing_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_nan()).count()
    }

    pub fn var_index(&self, name: &str) -> Option<usize> {
        self.meta.iter().position(|m| m.name == name)
    }

    /// Mutable access used by generators and attack injection. Binary
    /// invariants are the caller's responsibility.
    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Rows `[start, end)` as a new frame.
    pub fn slice(&self, start: usize, end: usize) -> TimeSeriesFrame {
        let n = self.meta.len();
        let end = end.min(self.len());
        let start = start.min(end);
        TimeSeriesFrame {
            meta: self.meta.clone(),
            timestamps: self.timestamps[start..end].to_vec(),
            period: self.period,
            values: self.values[start * n..end * n].to_vec(),
            labels: self.labels.as_ref().map(|l| l[start..end].to_vec()),
        }
    }

    /// Appends `other` after this frame. Timestamps must continue the
    /// sampling grid.
    pub fn concat(&self, other: &TimeSeriesFrame) -> Result<TimeSeriesFrame, DataError> {
        if self.meta != other.meta {
            return Err(DataError::SchemaMismatch("frames have different variables".into()));
        }
        let mut ts = self.timestamps.clone();
        ts.extend_from_slice(&other.timestamps);
        let mut values = self.values.clone();
        values.extend_from_slice(&other.values);
        let labels = match (&self.labels, &other.labels) {
            (None, None) => None,
            (a, b) => {
                let mut l = a.clone().unwrap_or_else(|| vec![Label::Normal; self.len()]);
                l.extend(b.clone().unwrap_or_else(|| vec![Label::Normal; other.len()]));
                Some(l)
            }
        };
        TimeSeriesFrame::new(self.meta.clone(), ts, values, labels)
    }

    /// Writes the frame in the ingestion CSV layout.
    pub fn write_csv<W: Write>(&self, writer: W, schema: &DatasetSchema) -> Result<(), DataError> {
        let mut w = csv::WriterBuilder::new()
            .delimiter(schema.delimiter as u8)
            .from_writer(writer);
        let mut header = vec![schema.timestamp_column.clone()];
        header.extend(self.meta.iter().map(|m| m.name.clone()));
        if let Some(lc) = &schema.label_column {
            header.push(lc.clone());
        }
        w.write_record(&header)?;
        let mut rec = Vec::with_capacity(header.len());
        for t in 0..self.len() {
            rec.clear();
            rec.push(self.timestamps[t].to_string());
            for &v in self.row(t) {
                rec.push(if v.is_nan() { String::new() } else { v.to_string() });
            }
            if schema.label_column.is_some() {
                let l = self.labels.as_ref().map_or(Label::Normal, |l| l[t]);
                rec.push(l.render());
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>, schema: &DatasetSchema) -> Result<(), DataError> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv(f, schema)
    }
}

fn check_timestamps(ts: &[i64]) -> Result<i64, DataError> {
    if ts.len() < 2 {
        return Ok(1);
    }
    let period = ts[1] - ts[0];
    if period <= 0 {
        return Err(DataError::NonMonotoneTimestamps { row: 1 });
    }
    for (i, w) in ts.windows(2).enumerate() {
        if w[1] - w[0] != period {
            return Err(DataError::NonMonotoneTimestamps { row: i + 1 });
        }
    }
    Ok(period)
}

/// Reads a CSV file declared by `schema`.
pub fn ingest_csv(path: impl AsRef<Path>, schema: &DatasetSchema) -> Result<TimeSeriesFrame, DataError> {
    let f = std::fs::File::open(path)?;
    read_csv(std::io::BufReader::new(f), schema)
}

/// Parses CSV from any reader; see [`ingest_csv`].
pub fn read_csv<R: Read>(reader: R, schema: &DatasetSchema) -> Result<TimeSeriesFrame, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter as u8)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    let find = |name: &str| header.iter().position(|h| h == name);

    let ts_col = find(&schema.timestamp_column).ok_or_else(|| {
        DataError::SchemaMismatch(format!("missing timestamp column `{}`", schema.timestamp_column))
    })?;
    let mut var_cols = Vec::with_capacity(schema.variables.len());
    for m in &schema.variables {
        let c = find(&m.name)
            .ok_or_else(|| DataError::SchemaMismatch(format!("missing column `{}`", m.name)))?;
        var_cols.push(c);
    }
    let label_col = match &schema.label_column {
        Some(lc) => Some(
            find(lc).ok_or_else(|| DataError::SchemaMismatch(format!("missing label column `{lc}`")))?,
        ),
        None => None,
    };
    let expected = 1 + var_cols.len() + usize::from(label_col.is_some());
    if header.len() != expected {
        let known: HashSet<usize> = std::iter::once(ts_col)
            .chain(var_cols.iter().copied())
            .chain(label_col)
            .collect();
        let extra: Vec<&str> = header
            .iter()
            .enumerate()
            .filter(|(i, _)| !known.contains(i))
            .map(|(_, h)| h)
            .collect();
        return Err(DataError::SchemaMismatch(format!("undeclared columns {extra:?}")));
    }

    let n = schema.variables.len();
    let mut timestamps = Vec::new();
    let mut values = Vec::new();
    let mut labels = label_col.map(|_| Vec::new());
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let ts: i64 = rec[ts_col].parse().map_err(|_| DataError::Parse {
            row,
            msg: format!("bad timestamp `{}`", &rec[ts_col]),
        })?;
        if let Some(&last) = timestamps.last() {
            if ts <= last {
                return Err(DataError::NonMonotoneTimestamps { row });
            }
        }
        timestamps.push(ts);
        for (m, &c) in schema.variables.iter().zip(&var_cols) {
            let raw = &rec[c];
            values.push(parse_cell(m, raw, row)?);
        }
        if let (Some(l), Some(c)) = (labels.as_mut(), label_col) {
            let lab = Label::parse(&rec[c]).ok_or_else(|| DataError::Parse {
                row,
                msg: format!("bad label `{}`", &rec[c]),
            })?;
            l.push(lab);
        }
    }
    debug_assert_eq!(values.len(), timestamps.len() * n);
    TimeSeriesFrame::new(schema.variables.clone(), timestamps, values, labels)
}

fn parse_cell(meta: &VariableMeta, raw: &str, row: usize) -> Result<f64, DataError> {
    let t = raw.trim();
    if t.is_empty() || t.eq_ignore_ascii_case("na") || t.eq_ignore_ascii_case("nan") {
        return Ok(f64::NAN);
    }
    if meta.is_binary() {
        return meta.coerce_binary(t).ok_or_else(|| DataError::NonBinaryActuatorValue {
            variable: meta.name.clone(),
            value: t.to_string(),
            row,
        });
    }
    t.parse::<f64>().map_err(|_| DataError::Parse {
        row,
        msg: format!("bad value `{t}` for `{}`", meta.name),
    })
}

/// Lag-augmented view: column `(i, ℓ)` at row `r` holds `V_i(r + τ − ℓ)`.
///
/// Stored column-major; columns ordered variable-major, lag-minor.
#[derive(Debug, Clone)]
pub struct AugmentedFrame {
    max_lag: usize,
    n_vars: usize,
    rows: usize,
    data: Vec<f64>,
    row_valid: Vec<bool>,
    timestamps: Vec<i64>,
}

impl AugmentedFrame {
    pub fn max_lag(&self) -> usize {
        self.max_lag
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn n_columns(&self) -> usize {
        self.n_vars * (self.max_lag + 1)
    }

    pub fn column_index(&self, var: usize, lag: usize) -> usize {
        var * (self.max_lag + 1) + lag
    }

    /// `(variable, lag)` for every column, in storage order.
    pub fn columns(&self) -> Vec<(usize, usize)> {
        (0..self.n_vars)
            .flat_map(|v| (0..=self.max_lag).map(move |l| (v, l)))
            .collect()
    }

    pub fn column(&self, var: usize, lag: usize) -> &[f64] {
        let c = self.column_index(var, lag);
        &self.data[c * self.rows..(c + 1) * self.rows]
    }

    /// Row `r` is usable for estimation iff none of its cells is missing.
    pub fn row_valid(&self) -> &[bool] {
        &self.row_valid
    }

    pub fn valid_rows(&self) -> usize {
        self.row_valid.iter().filter(|v| **v).count()
    }

    pub fn timestamps(&self) -> &[i64] {
        &self.timestamps
    }
}

/// Builds the lag-augmented frame, dropping the first `max_lag` rows.
pub fn augment(frame: &TimeSeriesFrame, max_lag: usize) -> Result<AugmentedFrame, DataError> {
    if max_lag < 1 {
        return Err(DataError::InvalidFrame("max_lag must be at least 1".into()));
    }
    let t_len = frame.len();
    if t_len <= max_lag {
        return Err(DataError::SeriesTooShort {
            len: t_len,
            needed: max_lag,
        });
    }
    let n = frame.n_vars();
    let rows = t_len - max_lag;
    let mut data = Vec::with_capacity(rows * n * (max_lag + 1));
    for var in 0..n {
        for lag in 0..=max_lag {
            data.extend((0..rows).map(|r| frame.value(r + max_lag - lag, var)));
        }
    }
    // A row is valid when every base row it reads from is fully observed.
    let base_ok: Vec<bool> = (0..t_len)
        .map(|t| frame.row(t).iter().all(|v| !v.is_nan()))
        .collect();
    let row_valid = (0..rows)
        .map(|r| base_ok[r..=r + max_lag].iter().all(|&ok| ok))
        .collect();
    Ok(AugmentedFrame {
        max_lag,
        n_vars: n,
        rows,
        data,
        row_valid,
        timestamps: frame.timestamps()[max_lag..].to_vec(),
    })
}

/// Half-open timestamp interval `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeRange {
    pub start: i64,
    pub end: i64,
}

impl TimeRange {
    pub fn new(start: i64, end: i64) -> Self {
        Self { start, end }
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn contains(&self, t: i64) -> bool {
        t >= self.start && t < self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: TimeRange,
    pub validation: TimeRange,
    pub test: TimeRange,
}

/// Train / validation / test frames.
#[derive(Debug, Clone)]
pub struct Split {
    pub train: TimeSeriesFrame,
    pub validation: TimeSeriesFrame,
    pub test: TimeSeriesFrame,
}

pub fn split(frame: &TimeSeriesFrame, spec: &SplitSpec) -> Result<Split, DataError> {
    let ranges = [spec.train, spec.validation, spec.test];
    if ranges.iter().any(|r| r.end < r.start) {
        return Err(DataError::OverlappingRanges);
    }
    let nonempty: Vec<&TimeRange> = ranges.iter().filter(|r| !r.is_empty()).collect();
    for w in nonempty.windows(2) {
        if w[1].start < w[0].end {
            return Err(DataError::OverlappingRanges);
        }
    }
    if let (Some(&first), Some(&last)) = (frame.timestamps().first(), frame.timestamps().last()) {
        for r in &nonempty {
            if r.start < first || r.end > last + frame.period() {
                return Err(DataError::RangeOutsideFrame {
                    start: r.start,
                    end: r.end,
                });
            }
        }
    }
    let take = |r: &TimeRange| {
        let ts = frame.timestamps();
        let start = ts.partition_point(|&t| t < r.start);
        let end = ts.partition_point(|&t| t < r.end);
        if r.is_empty() {
            frame.slice(start, start)
        } else {
            frame.slice(start, end)
        }
    };
    Ok(Split {
        train: take(&spec.train),
        validation: take(&spec.validation),
        test: take(&spec.test),
    })
}

/// Forward-fills runs of at most `max_gap` missing cells; longer runs stay
/// flagged (`NaN`). Leading gaps have no previous value and stay flagged.
pub fn fill_missing(frame: &TimeSeriesFrame, max_gap: usize) -> TimeSeriesFrame {
    let mut out = frame.clone();
    let n = frame.n_vars();
    let t_len = frame.len();
    let vals = out.values_mut();
    for var in 0..n {
        let mut t = 0;
        while t < t_len {
            if !vals[t * n + var].is_nan() {
                t += 1;
                continue;
            }
            let start = t;
            while t < t_len && vals[t * n + var].is_nan() {
                t += 1;
            }
            let gap = t - start;
            if start > 0 && gap <= max_gap {
                let fill = vals[(start - 1) * n + var];
                for s in start..t {
                    vals[s * n + var] = fill;
                }
            }
        }
    }
    out
}
