//! Typed tabular data: column schema, CSV ingestion and persistence,
//! stratified sample splitting and pseudo start-date assignment.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{weighted::WeightedIndex, Distribution};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Unordered columns store their levels in a 64-bit mask inside trees.
pub const MAX_UNORDERED_LEVELS: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ColumnKind {
    Continuous,
    Ordered { levels: Vec<String> },
    Unordered { levels: Vec<String> },
}

impl ColumnKind {
    pub fn levels(&self) -> Option<&[String]> {
        match self {
            ColumnKind::Continuous => None,
            ColumnKind::Ordered { levels } | ColumnKind::Unordered { levels } => Some(levels),
        }
    }

    pub fn is_unordered(&self) -> bool {
        matches!(self, ColumnKind::Unordered { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Confounder,
    Heterogeneity,
    Outcome,
    Treatment,
    Id,
    Priority,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
    #[serde(default)]
    pub roles: BTreeSet<Role>,
}

impl ColumnSpec {
    pub fn new(name: impl Into<String>, kind: ColumnKind, roles: &[Role]) -> Self {
        ColumnSpec {
            name: name.into(),
            kind,
            roles: roles.iter().copied().collect(),
        }
    }

    pub fn has_role(&self, role: Role) -> bool {
        self.roles.contains(&role)
    }

    /// Confounders and heterogeneity variables both enter the forest.
    pub fn is_covariate(&self) -> bool {
        self.has_role(Role::Confounder) || self.has_role(Role::Heterogeneity)
    }
}

/// The JSON sidecar describing a CSV file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub columns: Vec<ColumnSpec>,
}

impl Schema {
    pub fn new(columns: Vec<ColumnSpec>) -> Result<Self> {
        let s = Schema { columns };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for c in &self.columns {
            if !seen.insert(c.name.as_str()) {
                return Err(Error::Schema {
                    column: c.name.clone(),
                    reason: "duplicate column name".into(),
                });
            }
            if let Some(levels) = c.kind.levels() {
                if levels.is_empty() {
                    return Err(Error::Schema {
                        column: c.name.clone(),
                        reason: "categorical column without levels".into(),
                    });
                }
                let distinct: BTreeSet<_> = levels.iter().collect();
                if distinct.len() != levels.len() {
                    return Err(Error::Schema {
                        column: c.name.clone(),
                        reason: "duplicate level".into(),
                    });
                }
                if c.kind.is_unordered() && levels.len() > MAX_UNORDERED_LEVELS {
                    return Err(Error::Schema {
                        column: c.name.clone(),
                        reason: format!(
                            "{} levels declared, at most {MAX_UNORDERED_LEVELS} allowed",
                            levels.len()
                        ),
                    });
                }
            }
            if c.has_role(Role::Outcome) && c.kind != ColumnKind::Continuous {
                return Err(Error::Schema {
                    column: c.name.clone(),
                    reason: "outcome columns must be continuous".into(),
                });
            }
        }
        let treatments = self
            .columns
            .iter()
            .filter(|c| c.has_role(Role::Treatment))
            .count();
        if treatments != 1 {
            return Err(Error::Schema {
                column: "<treatment>".into(),
                reason: format!("exactly one treatment column required, found {treatments}"),
            });
        }
        if !self.columns.iter().any(|c| c.has_role(Role::Outcome)) {
            return Err(Error::Schema {
                column: "<outcome>".into(),
                reason: "at least one outcome column required".into(),
            });
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let s: Schema = serde_json::from_str(&text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn treatment_index(&self) -> usize {
        self.columns
            .iter()
            .position(|c| c.has_role(Role::Treatment))
            .expect("validated schema has a treatment column")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ColumnData {
    Real(Vec<f64>),
    /// Index into the column's declared level list.
    Level(Vec<u32>),
}

impl ColumnData {
    fn len(&self) -> usize {
        match self {
            ColumnData::Real(v) => v.len(),
            ColumnData::Level(v) => v.len(),
        }
    }

    /// Numeric view: reals as-is, levels as their code.
    pub fn value(&self, row: usize) -> f64 {
        match self {
            ColumnData::Real(v) => v[row],
            ColumnData::Level(v) => v[row] as f64,
        }
    }

    fn select(&self, rows: &[usize]) -> ColumnData {
        match self {
            ColumnData::Real(v) => ColumnData::Real(rows.iter().map(|&r| v[r]).collect()),
            ColumnData::Level(v) => ColumnData::Level(rows.iter().map(|&r| v[r]).collect()),
        }
    }
}

/// Rows removed during ingestion.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadReport {
    pub dropped_rows: usize,
    pub dropped_row_indices: Vec<usize>,
}

impl std::fmt::Display for LoadReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let noun = if self.dropped_rows == 1 { "row" } else { "rows" };
        write!(f, "{} {noun} dropped for missing values", self.dropped_rows)
    }
}

/// Immutable columnar table with a single treatment column whose labels
/// are `0..n_arms`. Arm 0 is the control arm.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    schema: Schema,
    columns: Vec<ColumnData>,
    treatment: Vec<usize>,
    n_arms: usize,
}

fn is_missing(cell: &str) -> bool {
    matches!(cell.trim(), "" | "NA" | "NaN" | "nan" | "." | "null")
}

impl Dataset {
    /// Builds a dataset from in-memory columns. Every arm `0..=max label`
    /// must be present.
    pub fn from_columns(schema: Schema, columns: Vec<ColumnData>) -> Result<Self> {
        schema.validate()?;
        if columns.len() != schema.columns.len() {
            return Err(Error::Data(format!(
                "{} columns supplied for a schema of {}",
                columns.len(),
                schema.columns.len()
            )));
        }
        let n = columns.first().map_or(0, ColumnData::len);
        for (spec, col) in schema.columns.iter().zip(&columns) {
            if col.len() != n {
                return Err(Error::Schema {
                    column: spec.name.clone(),
                    reason: format!("length {} differs from {n}", col.len()),
                });
            }
            match (&spec.kind, col) {
                (ColumnKind::Continuous, ColumnData::Real(_)) => {}
                (ColumnKind::Continuous, ColumnData::Level(_)) => {
                    return Err(Error::Schema {
                        column: spec.name.clone(),
                        reason: "continuous column given level codes".into(),
                    })
                }
                (k, ColumnData::Level(codes)) => {
                    let nl = k.levels().map_or(0, <[String]>::len);
                    if let Some(row) = codes.iter().position(|&c| c as usize >= nl) {
                        return Err(Error::UndeclaredLevel {
                            column: spec.name.clone(),
                            row,
                            value: codes[row].to_string(),
                        });
                    }
                }
                (_, ColumnData::Real(_)) => {
                    return Err(Error::Schema {
                        column: spec.name.clone(),
                        reason: "categorical column given real values".into(),
                    })
                }
            }
        }
        let ti = schema.treatment_index();
        let treatment = treatment_labels(&schema.columns[ti].name, &columns[ti])?;
        let n_arms = treatment.iter().max().map_or(0, |m| m + 1);
        let mut counts = vec![0usize; n_arms];
        for &t in &treatment {
            counts[t] += 1;
        }
        if let Some(d) = counts.iter().position(|&c| c == 0) {
            return Err(Error::Data(format!(
                "treatment labels must be contiguous from 0; arm {d} has no rows"
            )));
        }
        Ok(Dataset {
            schema,
            columns,
            treatment,
            n_arms,
        })
    }

    /// Reads a CSV file whose header carries exactly the schema's column
    /// names. Rows with a missing cell are dropped and counted.
    pub fn load(path: &Path, schema: &Schema) -> Result<(Self, LoadReport)> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(file, schema)
    }

    pub fn from_reader<R: std::io::Read>(reader: R, schema: &Schema) -> Result<(Self, LoadReport)> {
        schema.validate()?;
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
        for h in &header {
            if schema.index_of(h).is_none() {
                return Err(Error::Schema {
                    column: h.clone(),
                    reason: "column in file but not in schema".into(),
                });
            }
        }
        let mut positions = Vec::with_capacity(schema.columns.len());
        for c in &schema.columns {
            match header.iter().position(|h| h == &c.name) {
                Some(p) => positions.push(p),
                None => {
                    return Err(Error::Schema {
                        column: c.name.clone(),
                        reason: "column in schema but not in file header".into(),
                    })
                }
            }
        }
        let lookups: Vec<Option<HashMap<&str, u32>>> = schema
            .columns
            .iter()
            .map(|c| {
                c.kind.levels().map(|ls| {
                    ls.iter()
                        .enumerate()
                        .map(|(i, l)| (l.as_str(), i as u32))
                        .collect()
                })
            })
            .collect();
        let mut columns: Vec<ColumnData> = schema
            .columns
            .iter()
            .map(|c| match c.kind {
                ColumnKind::Continuous => ColumnData::Real(Vec::new()),
                _ => ColumnData::Level(Vec::new()),
            })
            .collect();
        let mut report = LoadReport::default();
        for (row, record) in rdr.records().enumerate() {
            let record = record?;
            let cells: Vec<&str> = positions.iter().map(|&p| record.get(p).unwrap_or("")).collect();
            if cells.iter().any(|c| is_missing(c)) {
                report.dropped_rows += 1;
                report.dropped_row_indices.push(row);
                continue;
            }
            for (ci, cell) in cells.iter().enumerate() {
                let cell = cell.trim();
                match (&mut columns[ci], &lookups[ci]) {
                    (ColumnData::Real(v), _) => {
                        let x: f64 = cell.parse().map_err(|_| {
                            Error::Data(format!(
                                "column `{}`, row {row}: `{cell}` is not a number",
                                schema.columns[ci].name
                            ))
                        })?;
                        v.push(x);
                    }
                    (ColumnData::Level(v), Some(map)) => match map.get(cell) {
                        Some(&code) => v.push(code),
                        None => {
                            return Err(Error::UndeclaredLevel {
                                column: schema.columns[ci].name.clone(),
                                row,
                                value: cell.to_string(),
                            })
                        }
                    },
                    (ColumnData::Level(_), None) => unreachable!("level column without lookup"),
                }
            }
        }
        let data = Dataset::from_columns(schema.clone(), columns)?;
        Ok((data, report))
    }

    /// Writes the CSV and its schema sidecar. Reals use the shortest
    /// representation that parses back to the same bits.
    pub fn save(&self, csv_path: &Path, schema_path: &Path) -> Result<()> {
        let file = std::fs::File::create(csv_path).map_err(|e| Error::io(csv_path, e))?;
        self.write_csv(file)?;
        self.schema.save(schema_path)
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(self.schema.columns.iter().map(|c| c.name.as_str()))?;
        let mut record: Vec<String> = Vec::with_capacity(self.columns.len());
        for row in 0..self.n_rows() {
            record.clear();
            for (spec, col) in self.schema.columns.iter().zip(&self.columns) {
                record.push(match col {
                    ColumnData::Real(v) => format!("{}", v[row]),
                    ColumnData::Level(v) => {
                        spec.kind.levels().expect("level column")[v[row] as usize].clone()
                    }
                });
            }
            w.write_record(&record)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.treatment.len()
    }

    /// Number of treatment arms including control.
    pub fn n_arms(&self) -> usize {
        self.n_arms
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn treatment(&self) -> &[usize] {
        &self.treatment
    }

    pub fn arm_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.n_arms];
        for &t in &self.treatment {
            counts[t] += 1;
        }
        counts
    }

    pub fn column(&self, name: &str) -> Option<(&ColumnSpec, &ColumnData)> {
        self.schema
            .index_of(name)
            .map(|i| (&self.schema.columns[i], &self.columns[i]))
    }

    pub fn require_column(&self, name: &str) -> Result<(&ColumnSpec, &ColumnData)> {
        self.column(name).ok_or_else(|| Error::Schema {
            column: name.to_string(),
            reason: "no such column".into(),
        })
    }

    /// Values of a continuous column.
    pub fn real(&self, name: &str) -> Result<&[f64]> {
        match self.require_column(name)? {
            (_, ColumnData::Real(v)) => Ok(v),
            (spec, _) => Err(Error::Schema {
                column: spec.name.clone(),
                reason: "expected a continuous column".into(),
            }),
        }
    }

    pub fn outcome_names(&self) -> Vec<String> {
        self.schema
            .columns
            .iter()
            .filter(|c| c.has_role(Role::Outcome))
            .map(|c| c.name.clone())
            .collect()
    }

    pub fn covariate_names(&self) -> Vec<String> {
        self.schema
            .columns
            .iter()
            .filter(|c| c.is_covariate())
            .map(|c| c.name.clone())
            .collect()
    }

    pub fn names_with_role(&self, role: Role) -> Vec<String> {
        self.schema
            .columns
            .iter()
            .filter(|c| c.has_role(role))
            .map(|c| c.name.clone())
            .collect()
    }

    /// Row subset in the given order. The arm count of `self` is kept, so
    /// a subset may lack some arms.
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            columns: self.columns.iter().map(|c| c.select(rows)).collect(),
            treatment: rows.iter().map(|&r| self.treatment[r]).collect(),
            n_arms: self.n_arms,
        }
    }

    /// Keeps only rows whose arm is in `arms` and relabels those arms to
    /// `0..arms.len()` in ascending order of the original label.
    pub fn restrict_arms(&self, arms: &[usize]) -> Result<(Dataset, Vec<usize>)> {
        let mut keep: Vec<usize> = arms.to_vec();
        keep.sort_unstable();
        keep.dedup();
        if keep.iter().any(|&a| a >= self.n_arms) {
            return Err(Error::Config(format!("arm list {arms:?} exceeds {} arms", self.n_arms)));
        }
        let relabel: HashMap<usize, usize> = keep.iter().enumerate().map(|(i, &a)| (a, i)).collect();
        let rows: Vec<usize> = (0..self.n_rows())
            .filter(|&r| relabel.contains_key(&self.treatment[r]))
            .collect();
        let mut out = self.select_rows(&rows);
        let ti = out.schema.treatment_index();
        out.treatment = out.treatment.iter().map(|t| relabel[t]).collect();
        out.columns[ti] = ColumnData::Real(out.treatment.iter().map(|&t| t as f64).collect());
        out.n_arms = keep.len();
        Ok((out, keep))
    }

    /// Drops covariate role from the named columns so the forest no longer
    /// sees them.
    pub fn without_covariates(&self, names: &[String]) -> Result<Dataset> {
        let mut out = self.clone();
        for name in names {
            let i = out.schema.index_of(name).ok_or_else(|| Error::Schema {
                column: name.clone(),
                reason: "no such column".into(),
            })?;
            let roles = &mut out.schema.columns[i].roles;
            roles.remove(&Role::Confounder);
            roles.remove(&Role::Heterogeneity);
        }
        Ok(out)
    }

    /// Replaces the role set of covariates: those listed keep their roles,
    /// other covariates lose confounder/heterogeneity roles.
    pub fn keep_covariates(&self, names: &[String]) -> Result<Dataset> {
        for name in names {
            self.require_column(name)?;
        }
        let drop: Vec<String> = self
            .covariate_names()
            .into_iter()
            .filter(|c| !names.contains(c))
            .collect();
        self.without_covariates(&drop)
    }

    /// Adds or replaces a column.
    pub fn with_column(&self, spec: ColumnSpec, data: ColumnData) -> Result<Dataset> {
        let mut columns = self.schema.columns.clone();
        let mut values = self.columns.clone();
        match self.schema.index_of(&spec.name) {
            Some(i) => {
                columns[i] = spec;
                values[i] = data;
            }
            None => {
                columns.push(spec);
                values.push(data);
            }
        }
        let mut out = Dataset::from_columns(Schema { columns }, values)?;
        out.n_arms = out.n_arms.max(self.n_arms);
        Ok(out)
    }

    /// Dense row-major matrix of the named covariates (all covariates when
    /// `names` is `None`).
    pub fn features(&self, names: Option<&[String]>) -> Result<FeatureMatrix> {
        let names: Vec<String> = match names {
            Some(ns) => ns.to_vec(),
            None => self.covariate_names(),
        };
        let mut specs = Vec::with_capacity(names.len());
        let mut cols = Vec::with_capacity(names.len());
        for name in &names {
            let (spec, data) = self.require_column(name)?;
            specs.push(spec.clone());
            cols.push(data);
        }
        let n = self.n_rows();
        let p = cols.len();
        let mut values = vec![0.0; n * p];
        for (j, col) in cols.iter().enumerate() {
            for i in 0..n {
                values[i * p + j] = col.value(i);
            }
        }
        Ok(FeatureMatrix {
            schema: FeatureSchema::from_specs(&specs),
            n,
            values,
        })
    }

    /// Content hash of schema plus values.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.schema).expect("schema serializes"));
        for col in &self.columns {
            match col {
                ColumnData::Real(v) => v.iter().for_each(|x| h.update(x.to_le_bytes())),
                ColumnData::Level(v) => v.iter().for_each(|x| h.update(x.to_le_bytes())),
            }
        }
        hex::encode(h.finalize())
    }
}

fn treatment_labels(name: &str, col: &ColumnData) -> Result<Vec<usize>> {
    match col {
        ColumnData::Real(v) => v
            .iter()
            .enumerate()
            .map(|(row, &x)| {
                if x >= 0.0 && x.fract() == 0.0 && x < u32::MAX as f64 {
                    Ok(x as usize)
                } else {
                    Err(Error::Data(format!(
                        "column `{name}`, row {row}: treatment `{x}` is not a non-negative integer"
                    )))
                }
            })
            .collect(),
        ColumnData::Level(v) => Ok(v.iter().map(|&c| c as usize).collect()),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FeatureKind {
    Continuous,
    Ordered { levels: Vec<String> },
    Unordered { levels: Vec<String> },
}

impl FeatureKind {
    pub fn is_unordered(&self) -> bool {
        matches!(self, FeatureKind::Unordered { .. })
    }

    pub fn levels(&self) -> Option<&[String]> {
        match self {
            FeatureKind::Continuous => None,
            FeatureKind::Ordered { levels } | FeatureKind::Unordered { levels } => Some(levels),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub names: Vec<String>,
    pub kinds: Vec<FeatureKind>,
}

impl FeatureSchema {
    fn from_specs(specs: &[ColumnSpec]) -> Self {
        FeatureSchema {
            names: specs.iter().map(|s| s.name.clone()).collect(),
            kinds: specs
                .iter()
                .map(|s| match &s.kind {
                    ColumnKind::Continuous => FeatureKind::Continuous,
                    ColumnKind::Ordered { levels } => FeatureKind::Ordered {
                        levels: levels.clone(),
                    },
                    ColumnKind::Unordered { levels } => FeatureKind::Unordered {
                        levels: levels.clone(),
                    },
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(
            serde_json::to_vec(self).expect("feature schema serializes"),
        ))
    }
}

/// Row-major covariate matrix; categorical values are their level codes.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub schema: FeatureSchema,
    pub n: usize,
    pub values: Vec<f64>,
}

impl FeatureMatrix {
    pub fn p(&self) -> usize {
        self.schema.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.p();
        &self.values[i * p..(i + 1) * p]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.p() + j]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, j)).collect()
    }

    pub fn set_column(&mut self, j: usize, col: &[f64]) {
        let p = self.p();
        for (i, &v) in col.iter().enumerate() {
            self.values[i * p + j] = v;
        }
    }

    pub fn select_rows(&self, rows: &[usize]) -> FeatureMatrix {
        let p = self.p();
        let mut values = Vec::with_capacity(rows.len() * p);
        for &r in rows {
            values.extend_from_slice(self.row(r));
        }
        FeatureMatrix {
            schema: self.schema.clone(),
            n: rows.len(),
            values,
        }
    }
}

/// Disjoint row-index sets produced by [`split_samples`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleSplit {
    pub train: Vec<usize>,
    pub predict: Vec<usize>,
    pub feature_select: Vec<usize>,
    pub seed: u64,
}

/// Stratified random split into train / predict / feature-selection parts.
///
/// Part sizes are the largest-remainder rounding of `n * fraction`. Within a
/// part, each arm receives the floor or ceiling of its proportional share,
/// chosen so that arm totals and part totals both add up exactly.
pub fn split_samples(data: &Dataset, fractions: (f64, f64, f64), seed: u64) -> Result<SampleSplit> {
    let fr = [fractions.0, fractions.1, fractions.2];
    if fr.iter().any(|f| !f.is_finite() || *f < 0.0) || fr[0] <= 0.0 {
        return Err(Error::Config(format!(
            "split fractions must be non-negative with a positive training share, got {fr:?}"
        )));
    }
    let total: f64 = fr.iter().sum();
    if total > 1.0 + 1e-12 {
        return Err(Error::Config(format!("split fractions sum to {total} > 1")));
    }
    let n = data.n_rows();
    let counts = data.arm_counts();
    let active_parts = fr.iter().filter(|f| **f > 0.0).count();
    for (arm, &c) in counts.iter().enumerate() {
        if c < active_parts {
            return Err(Error::Data(format!(
                "arm {arm} has {c} rows, fewer than the {active_parts} sample parts"
            )));
        }
    }

    // Part sizes including the unused remainder as a fourth part.
    let rest = 1.0 - total;
    let shares = [fr[0], fr[1], fr[2], if rest < 1e-9 { 0.0 } else { rest }];
    let sizes = largest_remainder(n, &shares);
    let table = controlled_rounding(&counts, &sizes, n);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_arm: Vec<Vec<usize>> = vec![Vec::new(); data.n_arms()];
    for (r, &t) in data.treatment().iter().enumerate() {
        by_arm[t].push(r);
    }
    let mut parts: [Vec<usize>; 4] = Default::default();
    for (arm, rows) in by_arm.iter_mut().enumerate() {
        rows.shuffle(&mut rng);
        let mut start = 0;
        for (p, part) in parts.iter_mut().enumerate() {
            let k = table[arm][p];
            part.extend_from_slice(&rows[start..start + k]);
            start += k;
        }
    }
    for part in parts.iter_mut() {
        part.sort_unstable();
    }
    let [train, predict, feature_select, _] = parts;
    Ok(SampleSplit {
        train,
        predict,
        feature_select,
        seed,
    })
}

fn largest_remainder(n: usize, shares: &[f64]) -> Vec<usize> {
    let total: f64 = shares.iter().sum();
    let exact: Vec<f64> = shares.iter().map(|s| n as f64 * s / total).collect();
    let mut sizes: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut left = n - sizes.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        if shares[i] > 0.0 {
            sizes[i] += 1;
            left -= 1;
        }
    }
    sizes
}

/// Integer table with the given row sums (arms) and column sums (parts)
/// whose cells are floor or ceiling of `row * col / n`. Found as a max flow
/// over the fractional remainders.
fn controlled_rounding(rows: &[usize], cols: &[usize], n: usize) -> Vec<Vec<usize>> {
    let nr = rows.len();
    let nc = cols.len();
    let mut table = vec![vec![0usize; nc]; nr];
    let mut frac = vec![vec![false; nc]; nr];
    for d in 0..nr {
        for p in 0..nc {
            let num = rows[d] * cols[p];
            table[d][p] = num / n.max(1);
            frac[d][p] = n > 0 && num % n != 0;
        }
    }
    let mut row_need: Vec<usize> = (0..nr)
        .map(|d| rows[d] - table[d].iter().sum::<usize>())
        .collect();
    let mut col_need: Vec<usize> = (0..nc)
        .map(|p| cols[p] - (0..nr).map(|d| table[d][p]).sum::<usize>())
        .collect();
    // flow[d][p] = 1 when cell (d, p) is rounded up
    let mut flow = vec![vec![false; nc]; nr];
    loop {
        // BFS from any arm with unmet need to any part with spare need,
        // alternating forward (unused fractional cell) and backward (used cell).
        let mut prev_col: Vec<Option<usize>> = vec![None; nc];
        let mut prev_row: Vec<Option<usize>> = vec![None; nr];
        let mut seen_row = vec![false; nr];
        let mut queue: std::collections::VecDeque<usize> = (0..nr).filter(|&d| row_need[d] > 0).collect();
        for &d in &queue {
            seen_row[d] = true;
        }
        let mut target = None;
        while let Some(d) = queue.pop_front() {
            for p in 0..nc {
                if frac[d][p] && !flow[d][p] && prev_col[p].is_none() {
                    prev_col[p] = Some(d);
                    if col_need[p] > 0 {
                        target = Some(p);
                        break;
                    }
                    for d2 in 0..nr {
                        if flow[d2][p] && !seen_row[d2] {
                            seen_row[d2] = true;
                            prev_row[d2] = Some(p);
                            queue.push_back(d2);
                        }
                    }
                }
            }
            if target.is_some() {
                break;
            }
        }
        let Some(mut p) = target else { break };
        col_need[p] -= 1;
        loop {
            let d = prev_col[p].expect("path");
            flow[d][p] = true;
            match prev_row[d] {
                Some(p_back) => {
                    flow[d][p_back] = false;
                    p = p_back;
                }
                None => {
                    row_need[d] -= 1;
                    break;
                }
            }
        }
    }
    debug_assert!(row_need.iter().all(|&r| r == 0), "rounding left arm remainder");
    for d in 0..nr {
        for p in 0..nc {
            if flow[d][p] {
                table[d][p] += 1;
            }
        }
    }
    table
}

/// Empirical distribution of programme start dates (in days).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalDistribution {
    pub values: Vec<f64>,
    pub weights: Vec<f64>,
}

impl EmpiricalDistribution {
    /// Every observation gets equal mass; duplicates are kept as-is.
    pub fn from_observations(values: &[f64]) -> Self {
        EmpiricalDistribution {
            values: values.to_vec(),
            weights: vec![1.0; values.len()],
        }
    }

    pub fn from_weighted(pairs: &[(f64, f64)]) -> Self {
        EmpiricalDistribution {
            values: pairs.iter().map(|p| p.0).collect(),
            weights: pairs.iter().map(|p| p.1).collect(),
        }
    }
}

/// Draws a pseudo programme start for every control-arm row i.i.d. from
/// the participants' empirical start distribution. Other rows keep their
/// recorded start.
pub fn assign_pseudo_starts(
    data: &Dataset,
    start_column: &str,
    distribution: &EmpiricalDistribution,
    seed: u64,
) -> Result<Dataset> {
    if distribution.values.is_empty() {
        return Err(Error::Data("empty programme start distribution".into()));
    }
    let index = WeightedIndex::new(&distribution.weights)
        .map_err(|e| Error::Data(format!("invalid start distribution weights: {e}")))?;
    let (spec, _) = data.require_column(start_column)?;
    let spec = spec.clone();
    let mut starts = data.real(start_column)?.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (row, &arm) in data.treatment().iter().enumerate() {
        if arm == 0 {
            starts[row] = distribution.values[index.sample(&mut rng)];
        }
    }
    data.with_column(spec, ColumnData::Real(starts))
}
