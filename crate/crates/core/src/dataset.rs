//! Data model, validation, and CSV ingestion for LBRC samples.
//!
//! An observation is the quadruple (entry, time, status, covariates): the
//! truncation time `A` from onset to enrollment, the observed event or
//! censoring time `Z` measured from onset, the event indicator, and a vector
//! of mixed-type baseline covariates. The residual time `Z - A` is stored
//! alongside. Covariate kinds are declared by a sidecar JSON schema rather
//! than inferred, so downstream covariate transformations are unambiguous.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance used when checking `residual == time - entry`.
pub const RESIDUAL_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("schema parse error: {0}")]
    SchemaParse(#[from] serde_json::Error),
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("row {row}: malformed value in column `{column}`: {detail}")]
    MalformedRow {
        row: usize,
        column: String,
        detail: String,
    },
    #[error("row {row}: time {time} precedes entry {entry}")]
    TruncationOrder { row: usize, entry: f64, time: f64 },
    #[error("row {row}: status {status} outside {{0,1}}")]
    BadStatus { row: usize, status: String },
    #[error("row {row}: unknown level `{value}` for covariate `{column}`")]
    UnknownLevel {
        row: usize,
        column: String,
        value: String,
    },
    #[error("schema/column mismatch: {0}")]
    SchemaMismatch(String),
    #[error("row {row}: non-positive time {time}")]
    NonPositiveTime { row: usize, time: f64 },
    #[error("record {record}: {reason}")]
    InvalidRecord { record: usize, reason: String },
    #[error("case weights invalid: {0}")]
    InvalidWeights(String),
}

/// How a covariate is typed for transformation and splitting.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CovariateKind {
    Numeric,
    Ordered { levels: Vec<String> },
    Categorical { levels: Vec<String> },
}

impl CovariateKind {
    pub fn levels(&self) -> Option<&[String]> {
        match self {
            CovariateKind::Numeric => None,
            CovariateKind::Ordered { levels } | CovariateKind::Categorical { levels } => {
                Some(levels)
            }
        }
    }

    pub fn n_levels(&self) -> Option<usize> {
        self.levels().map(<[String]>::len)
    }

    fn check(&self, name: &str) -> Result<(), DataError> {
        if let Some(levels) = self.levels() {
            if levels.is_empty() {
                return Err(DataError::InvalidSchema(format!(
                    "covariate `{name}` has an empty level list"
                )));
            }
            for (i, l) in levels.iter().enumerate() {
                if levels[..i].contains(l) {
                    return Err(DataError::InvalidSchema(format!(
                        "covariate `{name}` has duplicate level `{l}`"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// One declared covariate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldDef {
    pub name: String,
    #[serde(flatten)]
    pub kind: CovariateKind,
}

/// Ordered list of covariate declarations; the JSON sidecar format is an
/// array of `{ "name": ..., "kind": "numeric"|"ordered"|"categorical",
/// "levels": [...] }` objects.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Schema {
    pub fields: Vec<FieldDef>,
}

impl Schema {
    pub fn new(fields: Vec<FieldDef>) -> Result<Self, DataError> {
        for f in &fields {
            f.kind.check(&f.name)?;
        }
        Ok(Schema { fields })
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self, DataError> {
        let reader = BufReader::new(File::open(path)?);
        let schema: Schema = serde_json::from_reader(reader)?;
        Schema::new(schema.fields)
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<(), DataError> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut w, self)?;
        w.flush()?;
        Ok(())
    }
}

/// A single covariate value; `Level` indexes into the declared level list.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CovValue {
    Numeric(f64),
    Level(u32),
}

impl CovValue {
    /// Numeric view used by covariate transformations: identity for numeric
    /// values, 1-based rank for levels.
    pub fn rank_value(self) -> f64 {
        match self {
            CovValue::Numeric(v) => v,
            CovValue::Level(l) => f64::from(l) + 1.0,
        }
    }
}

/// One subject's observed data.
#[derive(Debug, Clone, PartialEq)]
pub struct LbrcRecord {
    /// Truncation time (onset to enrollment), `>= 0`.
    pub entry: f64,
    /// Observed event or censoring time measured from onset, `> 0`.
    pub time: f64,
    /// Event indicator, 0 or 1.
    pub status: u8,
    /// Residual time `time - entry`.
    pub residual: f64,
    pub covariates: Vec<CovValue>,
}

impl LbrcRecord {
    pub fn new(entry: f64, time: f64, status: u8, covariates: Vec<CovValue>) -> Self {
        LbrcRecord {
            entry,
            time,
            status,
            residual: time - entry,
            covariates,
        }
    }
}

/// A column of covariate values stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub enum Column {
    Numeric(Vec<f64>),
    Level(Vec<u32>),
}

impl Column {
    pub fn value(&self, i: usize) -> CovValue {
        match self {
            Column::Numeric(v) => CovValue::Numeric(v[i]),
            Column::Level(v) => CovValue::Level(v[i]),
        }
    }
}

/// A reported invariant violation; see [`Dataset::validate`].
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub record: usize,
    pub reason: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "record {}: {}", self.record, self.reason)
    }
}

/// The observed sample: response columns plus covariate columns conforming
/// to a [`Schema`].
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    schema: Schema,
    entry: Vec<f64>,
    time: Vec<f64>,
    status: Vec<u8>,
    residual: Vec<f64>,
    columns: Vec<Column>,
}

impl Dataset {
    /// Build a dataset and reject it if any record violates the type
    /// invariants.
    pub fn new(records: Vec<LbrcRecord>, schema: Schema) -> Result<Self, DataError> {
        let ds = Self::new_unvalidated(records, schema)?;
        if let Some(v) = ds.validate().into_iter().next() {
            return Err(DataError::InvalidRecord {
                record: v.record,
                reason: v.reason,
            });
        }
        Ok(ds)
    }

    /// Build a dataset without checking record invariants. Structural
    /// conformance (covariate count and value/kind agreement) is still
    /// required; use [`Dataset::validate`] to report value-level violations.
    pub fn new_unvalidated(records: Vec<LbrcRecord>, schema: Schema) -> Result<Self, DataError> {
        let m = schema.len();
        let n = records.len();
        let mut entry = Vec::with_capacity(n);
        let mut time = Vec::with_capacity(n);
        let mut status = Vec::with_capacity(n);
        let mut residual = Vec::with_capacity(n);
        let mut columns: Vec<Column> = schema
            .fields
            .iter()
            .map(|f| match f.kind {
                CovariateKind::Numeric => Column::Numeric(Vec::with_capacity(n)),
                _ => Column::Level(Vec::with_capacity(n)),
            })
            .collect();
        for (i, r) in records.into_iter().enumerate() {
            if r.covariates.len() != m {
                return Err(DataError::SchemaMismatch(format!(
                    "record {i} has {} covariates, schema declares {m}",
                    r.covariates.len()
                )));
            }
            for (j, (v, col)) in r.covariates.iter().zip(columns.iter_mut()).enumerate() {
                match (v, col) {
                    (CovValue::Numeric(x), Column::Numeric(c)) => c.push(*x),
                    (CovValue::Level(l), Column::Level(c)) => c.push(*l),
                    _ => {
                        return Err(DataError::SchemaMismatch(format!(
                            "record {i}, covariate `{}`: value does not match declared kind",
                            schema.fields[j].name
                        )))
                    }
                }
            }
            entry.push(r.entry);
            time.push(r.time);
            status.push(r.status);
            residual.push(r.residual);
        }
        Ok(Dataset {
            schema,
            entry,
            time,
            status,
            residual,
            columns,
        })
    }

    pub fn n(&self) -> usize {
        self.time.len()
    }

    pub fn m(&self) -> usize {
        self.schema.len()
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn entry(&self) -> &[f64] {
        &self.entry
    }

    pub fn time(&self) -> &[f64] {
        &self.time
    }

    pub fn status(&self) -> &[u8] {
        &self.status
    }

    pub fn residual(&self) -> &[f64] {
        &self.residual
    }

    pub fn column(&self, j: usize) -> &Column {
        &self.columns[j]
    }

    pub fn is_event(&self, i: usize) -> bool {
        self.status[i] == 1
    }

    pub fn record(&self, i: usize) -> LbrcRecord {
        LbrcRecord {
            entry: self.entry[i],
            time: self.time[i],
            status: self.status[i],
            residual: self.residual[i],
            covariates: (0..self.m()).map(|j| self.columns[j].value(i)).collect(),
        }
    }

    /// Covariates of record `i` as an owned row, e.g. for prediction APIs.
    pub fn covariate_row(&self, i: usize) -> Vec<CovValue> {
        (0..self.m()).map(|j| self.columns[j].value(i)).collect()
    }

    /// Report every record-level invariant violation, one entry per
    /// violating record. Returns an empty list iff the dataset is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        for i in 0..self.n() {
            let mut reasons: Vec<String> = Vec::new();
            if !self.entry[i].is_finite() || self.entry[i] < 0.0 {
                reasons.push(format!("entry {} is negative or non-finite", self.entry[i]));
            }
            if !self.time[i].is_finite() || self.time[i] <= 0.0 {
                reasons.push(format!("time {} is non-positive or non-finite", self.time[i]));
            }
            if self.time[i] < self.entry[i] {
                reasons.push(format!(
                    "time {} precedes entry {}",
                    self.time[i], self.entry[i]
                ));
            }
            if self.status[i] > 1 {
                reasons.push(format!("status {} outside {{0,1}}", self.status[i]));
            }
            if (self.residual[i] - (self.time[i] - self.entry[i])).abs() > RESIDUAL_TOL {
                reasons.push(format!(
                    "residual {} differs from time - entry = {}",
                    self.residual[i],
                    self.time[i] - self.entry[i]
                ));
            }
            for (j, f) in self.schema.fields.iter().enumerate() {
                if let (Column::Level(col), Some(n_levels)) =
                    (&self.columns[j], f.kind.n_levels())
                {
                    if col[i] as usize >= n_levels {
                        reasons.push(format!(
                            "covariate `{}` level index {} out of range",
                            f.name, col[i]
                        ));
                    }
                }
            }
            if !reasons.is_empty() {
                out.push(Violation {
                    record: i,
                    reason: reasons.join("; "),
                });
            }
        }
        out
    }

    /// Read a dataset from `entry,time,status,<covariates...>` CSV, typed by
    /// the sidecar schema. Rows are kept in file order.
    pub fn load_csv(
        path: impl AsRef<Path>,
        schema_path: impl AsRef<Path>,
    ) -> Result<Self, DataError> {
        let schema = Schema::load_json(schema_path)?;
        Self::load_csv_with_schema(path, schema)
    }

    pub fn load_csv_with_schema(
        path: impl AsRef<Path>,
        schema: Schema,
    ) -> Result<Self, DataError> {
        let mut reader = csv::Reader::from_path(path)?;
        let headers = reader.headers()?.clone();
        let expected: Vec<&str> = ["entry", "time", "status"]
            .into_iter()
            .chain(schema.fields.iter().map(|f| f.name.as_str()))
            .collect();
        let got: Vec<&str> = headers.iter().collect();
        if got != expected {
            return Err(DataError::SchemaMismatch(format!(
                "header {:?} does not match expected {:?}",
                got, expected
            )));
        }

        let parse_f64 = |row: usize, column: &str, s: &str| -> Result<f64, DataError> {
            s.trim()
                .parse::<f64>()
                .map_err(|e| DataError::MalformedRow {
                    row,
                    column: column.to_string(),
                    detail: e.to_string(),
                })
        };

        let mut records = Vec::new();
        for (idx, row) in reader.records().enumerate() {
            let row_no = idx + 1; // 1-based data row, header excluded
            let row = row?;
            if row.len() != expected.len() {
                return Err(DataError::MalformedRow {
                    row: row_no,
                    column: String::new(),
                    detail: format!("expected {} fields, found {}", expected.len(), row.len()),
                });
            }
            let entry = parse_f64(row_no, "entry", &row[0])?;
            let time = parse_f64(row_no, "time", &row[1])?;
            let status_raw = row[2].trim();
            let status = match status_raw {
                "0" => 0u8,
                "1" => 1u8,
                other => {
                    return Err(DataError::BadStatus {
                        row: row_no,
                        status: other.to_string(),
                    })
                }
            };
            if time <= 0.0 {
                return Err(DataError::NonPositiveTime { row: row_no, time });
            }
            if time < entry {
                return Err(DataError::TruncationOrder {
                    row: row_no,
                    entry,
                    time,
                });
            }
            if entry < 0.0 || !entry.is_finite() || !time.is_finite() {
                return Err(DataError::MalformedRow {
                    row: row_no,
                    column: "entry".to_string(),
                    detail: "entry/time must be finite with entry >= 0".to_string(),
                });
            }
            let mut covariates = Vec::with_capacity(schema.len());
            for (j, f) in schema.fields.iter().enumerate() {
                let raw = row[3 + j].trim();
                match &f.kind {
                    CovariateKind::Numeric => {
                        covariates.push(CovValue::Numeric(parse_f64(row_no, &f.name, raw)?));
                    }
                    CovariateKind::Ordered { levels } | CovariateKind::Categorical { levels } => {
                        match levels.iter().position(|l| l == raw) {
                            Some(pos) => covariates.push(CovValue::Level(pos as u32)),
                            None => {
                                return Err(DataError::UnknownLevel {
                                    row: row_no,
                                    column: f.name.clone(),
                                    value: raw.to_string(),
                                })
                            }
                        }
                    }
                }
            }
            records.push(LbrcRecord::new(entry, time, status, covariates));
        }
        Dataset::new(records, schema)
    }

    /// Write the dataset in the `entry,time,status,<covariates...>` format
    /// read by [`Dataset::load_csv`]. Float formatting round-trips exactly.
    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<(), DataError> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = vec!["entry".into(), "time".into(), "status".into()];
        header.extend(self.schema.fields.iter().map(|f| f.name.clone()));
        w.write_record(&header)?;
        for i in 0..self.n() {
            let mut row: Vec<String> = vec![
                format_f64(self.entry[i]),
                format_f64(self.time[i]),
                self.status[i].to_string(),
            ];
            for (j, f) in self.schema.fields.iter().enumerate() {
                row.push(match (&self.columns[j], f.kind.levels()) {
                    (Column::Numeric(c), _) => format_f64(c[i]),
                    (Column::Level(c), Some(levels)) => levels[c[i] as usize].clone(),
                    (Column::Level(c), None) => c[i].to_string(),
                });
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn format_f64(v: f64) -> String {
    // `{}` on f64 prints the shortest representation that parses back
    // to the same bits, which is what the round-trip contract needs.
    format!("{v}")
}

/// Non-negative case weights of length `n`. Integer-valued during tree
/// construction (node memberships, bootstrap multiplicities); fractional
/// values arise as forest prediction weights.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseWeights(Vec<f64>);

impl CaseWeights {
    pub fn unit(n: usize) -> Self {
        CaseWeights(vec![1.0; n])
    }

    pub fn new(w: Vec<f64>) -> Result<Self, DataError> {
        if let Some(bad) = w.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(DataError::InvalidWeights(format!(
                "weight {bad} is negative or non-finite"
            )));
        }
        Ok(CaseWeights(w))
    }

    pub fn from_counts(counts: &[u32]) -> Self {
        CaseWeights(counts.iter().map(|c| f64::from(*c)).collect())
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// Indices with strictly positive weight.
    pub fn support(&self) -> Vec<usize> {
        (0..self.0.len()).filter(|i| self.0[*i] > 0.0).collect()
    }
}

impl std::ops::Deref for CaseWeights {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}
