//! Unit-level observation tables: ingestion of the public NSW / CPS / PSID
//! files, zero-earnings indicators, sample composition and descriptive
//! statistics.
//!
//! Files are delimiter-separated text with a header row. Comma, tab and
//! semicolon delimiters are detected from the header; anything else is read
//! as whitespace-separated columns (the layout of the original distribution).

use std::fmt;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Earnings columns and the zero-earnings indicator each one implies.
pub const INDICATOR_PAIRS: [(&str, &str); 2] = [("u74", "re74"), ("u75", "re75")];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Covariate,
    Treatment,
    Outcome,
    PlaceboOutcome,
    Id,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub role: Role,
    /// Dollar amounts; negative cells are rejected.
    #[serde(default)]
    pub nonnegative: bool,
    /// Name of the earnings column this indicator is computed from. Derived
    /// columns need not be present in the file.
    #[serde(default)]
    pub derived_from: Option<String>,
}

impl ColumnSpec {
    fn new(name: &str, role: Role) -> Self {
        Self {
            name: name.to_string(),
            role,
            nonnegative: false,
            derived_from: None,
        }
    }

    fn earnings(name: &str, role: Role) -> Self {
        Self {
            nonnegative: true,
            ..Self::new(name, role)
        }
    }

    fn indicator(name: &str, from: &str) -> Self {
        Self {
            derived_from: Some(from.to_string()),
            ..Self::new(name, Role::Covariate)
        }
    }
}

/// Column layout of an input file plus the covariates dropped in placebo mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateSchema {
    pub columns: Vec<ColumnSpec>,
    pub placebo_excluded: Vec<String>,
}

impl CovariateSchema {
    pub fn new(columns: Vec<ColumnSpec>, placebo_excluded: Vec<String>) -> Result<Self> {
        let schema = Self {
            columns,
            placebo_excluded,
        };
        schema.validate()?;
        Ok(schema)
    }

    /// The ten-covariate layout of the Dehejia-Wahba subsample files.
    pub fn ldw() -> Self {
        Self {
            columns: vec![
                ColumnSpec::new("treat", Role::Treatment),
                ColumnSpec::new("age", Role::Covariate),
                ColumnSpec::new("education", Role::Covariate),
                ColumnSpec::new("black", Role::Covariate),
                ColumnSpec::new("hispanic", Role::Covariate),
                ColumnSpec::new("married", Role::Covariate),
                ColumnSpec::new("nodegree", Role::Covariate),
                ColumnSpec::earnings("re74", Role::Covariate),
                ColumnSpec::earnings("re75", Role::Covariate),
                ColumnSpec::earnings("re78", Role::Outcome),
                ColumnSpec::indicator("u74", "re74"),
                ColumnSpec::indicator("u75", "re75"),
            ],
            placebo_excluded: vec!["re75".into(), "u75".into()],
        }
    }

    /// The original male-sample layout, which has no 1974 earnings.
    pub fn lalonde_original() -> Self {
        let mut schema = Self::ldw();
        schema
            .columns
            .retain(|c| c.name != "re74" && c.name != "u74");
        schema
    }

    pub fn validate(&self) -> Result<()> {
        let count = |role: Role| self.columns.iter().filter(|c| c.role == role).count();
        if count(Role::Treatment) != 1 {
            return Err(Error::Schema(format!(
                "expected exactly one treatment column, found {}",
                count(Role::Treatment)
            )));
        }
        if count(Role::Outcome) != 1 {
            return Err(Error::Schema(format!(
                "expected exactly one outcome column, found {}",
                count(Role::Outcome)
            )));
        }
        let covariates = self.covariate_names();
        for name in &self.placebo_excluded {
            if !covariates.contains(name) {
                return Err(Error::Schema(format!(
                    "placebo-excluded column `{name}` is not a covariate"
                )));
            }
        }
        for c in &self.columns {
            if let Some(src) = &c.derived_from {
                if !self.columns.iter().any(|o| &o.name == src) {
                    return Err(Error::Schema(format!(
                        "indicator `{}` derives from unknown column `{src}`",
                        c.name
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn covariate_names(&self) -> Vec<String> {
        self.columns
            .iter()
            .filter(|c| c.role == Role::Covariate)
            .map(|c| c.name.clone())
            .collect()
    }

    fn single(&self, role: Role) -> &ColumnSpec {
        self.columns
            .iter()
            .find(|c| c.role == role)
            .expect("validated schema")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceTag {
    ExperimentalTreated,
    ExperimentalControl,
    Cps,
    Psid,
    Synthetic,
    External,
}

impl SourceTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            SourceTag::ExperimentalTreated => "experimental-treated",
            SourceTag::ExperimentalControl => "experimental-control",
            SourceTag::Cps => "cps",
            SourceTag::Psid => "psid",
            SourceTag::Synthetic => "synthetic",
            SourceTag::External => "external",
        }
    }
}

impl fmt::Display for SourceTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Row identity: the source file plus the row's position within it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RowKey {
    pub source: SourceTag,
    pub index: usize,
}

impl fmt::Display for RowKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.source, self.index)
    }
}

/// Immutable unit-level data: covariates, binary treatment and outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationTable {
    covariates: Vec<String>,
    x: DMatrix<f64>,
    w: Vec<u8>,
    y: Vec<f64>,
    outcome: String,
    keys: Vec<RowKey>,
    absent_indicators: Vec<String>,
}

impl ObservationTable {
    pub fn new(
        covariates: Vec<String>,
        x: DMatrix<f64>,
        w: Vec<u8>,
        y: Vec<f64>,
        outcome: impl Into<String>,
        keys: Vec<RowKey>,
    ) -> Result<Self> {
        let n = w.len();
        if x.nrows() != n || y.len() != n || keys.len() != n {
            return Err(Error::Argument(format!(
                "row count mismatch: x {} rows, w {}, y {}, keys {}",
                x.nrows(),
                n,
                y.len(),
                keys.len()
            )));
        }
        if x.ncols() != covariates.len() {
            return Err(Error::Argument(format!(
                "{} covariate names for {} columns",
                covariates.len(),
                x.ncols()
            )));
        }
        if let Some(i) = w.iter().position(|&v| v > 1) {
            return Err(Error::Domain(format!("treatment at row {i} is not 0/1")));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite value in table".into()));
        }
        Ok(Self {
            covariates,
            x,
            w,
            y,
            outcome: outcome.into(),
            keys,
            absent_indicators: Vec::new(),
        })
    }

    /// Builds a synthetic table with positional keys.
    pub fn from_parts(
        covariates: Vec<String>,
        x: DMatrix<f64>,
        w: Vec<u8>,
        y: Vec<f64>,
    ) -> Result<Self> {
        let keys = (0..w.len())
            .map(|index| RowKey {
                source: SourceTag::Synthetic,
                index,
            })
            .collect();
        Self::new(covariates, x, w, y, "y", keys)
    }

    pub fn n(&self) -> usize {
        self.w.len()
    }

    pub fn p(&self) -> usize {
        self.covariates.len()
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariates
    }

    pub fn outcome_name(&self) -> &str {
        &self.outcome
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn w(&self) -> &[u8] {
        &self.w
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn keys(&self) -> &[RowKey] {
        &self.keys
    }

    /// Earnings-based indicators that could not be created because their
    /// source column is missing.
    pub fn absent_indicators(&self) -> &[String] {
        &self.absent_indicators
    }

    pub fn n_treated(&self) -> usize {
        self.w.iter().filter(|&&v| v == 1).count()
    }

    pub fn n_control(&self) -> usize {
        self.n() - self.n_treated()
    }

    pub fn treated_indices(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.w[i] == 1).collect()
    }

    pub fn control_indices(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.w[i] == 0).collect()
    }

    pub fn covariate_index(&self, name: &str) -> Option<usize> {
        self.covariates.iter().position(|c| c == name)
    }

    pub fn covariate(&self, name: &str) -> Option<Vec<f64>> {
        self.covariate_index(name)
            .map(|j| self.x.column(j).iter().copied().collect())
    }

    /// Rows at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let p = self.p();
        let x = DMatrix::from_fn(indices.len(), p, |r, c| self.x[(indices[r], c)]);
        Self {
            covariates: self.covariates.clone(),
            x,
            w: indices.iter().map(|&i| self.w[i]).collect(),
            y: indices.iter().map(|&i| self.y[i]).collect(),
            outcome: self.outcome.clone(),
            keys: indices.iter().map(|&i| self.keys[i]).collect(),
            absent_indicators: self.absent_indicators.clone(),
        }
    }

    /// Same rows, keeping only the named covariates (in the given order).
    pub fn select_covariates(&self, names: &[String]) -> Result<Self> {
        let idx = names
            .iter()
            .map(|n| {
                self.covariate_index(n)
                    .ok_or_else(|| Error::Schema(format!("unknown covariate `{n}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        let x = DMatrix::from_fn(self.n(), idx.len(), |r, c| self.x[(r, idx[c])]);
        Ok(Self {
            covariates: names.to_vec(),
            x,
            ..self.clone()
        })
    }

    /// Replaces the outcome vector.
    pub fn with_outcome(&self, name: impl Into<String>, y: Vec<f64>) -> Result<Self> {
        if y.len() != self.n() {
            return Err(Error::Argument("outcome length mismatch".into()));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite outcome".into()));
        }
        Ok(Self {
            outcome: name.into(),
            y,
            ..self.clone()
        })
    }

    /// Same covariates and outcome with treatment relabelled.
    pub fn with_treatment(&self, w: Vec<u8>) -> Result<Self> {
        if w.len() != self.n() || w.iter().any(|&v| v > 1) {
            return Err(Error::Argument("treatment must be a 0/1 vector of length n".into()));
        }
        Ok(Self { w, ..self.clone() })
    }

    /// Stacks two tables with identical covariate and outcome layout.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        schema_compatible(self, other)?;
        let (n1, n2, p) = (self.n(), other.n(), self.p());
        let x = DMatrix::from_fn(n1 + n2, p, |r, c| {
            if r < n1 {
                self.x[(r, c)]
            } else {
                other.x[(r - n1, c)]
            }
        });
        let mut absent = self.absent_indicators.clone();
        for a in &other.absent_indicators {
            if !absent.contains(a) {
                absent.push(a.clone());
            }
        }
        Ok(Self {
            covariates: self.covariates.clone(),
            x,
            w: self.w.iter().chain(&other.w).copied().collect(),
            y: self.y.iter().chain(&other.y).copied().collect(),
            outcome: self.outcome.clone(),
            keys: self.keys.iter().chain(&other.keys).copied().collect(),
            absent_indicators: absent,
        })
    }

    fn append_covariate(&mut self, name: &str, values: Vec<f64>) {
        let n = self.n();
        let p = self.p();
        let old = std::mem::replace(&mut self.x, DMatrix::zeros(0, 0));
        let mut x = old.resize_horizontally(p + 1, 0.0);
        for (i, v) in values.into_iter().enumerate().take(n) {
            x[(i, p)] = v;
        }
        self.x = x;
        self.covariates.push(name.to_string());
    }
}

fn schema_compatible(a: &ObservationTable, b: &ObservationTable) -> Result<()> {
    let mut differing: Vec<String> = a
        .covariates
        .iter()
        .filter(|c| !b.covariates.contains(c))
        .chain(b.covariates.iter().filter(|c| !a.covariates.contains(c)))
        .cloned()
        .collect();
    if differing.is_empty() && a.covariates != b.covariates {
        differing.push("<column order>".into());
    }
    if a.outcome != b.outcome {
        differing.push(format!("outcome {} vs {}", a.outcome, b.outcome));
    }
    if differing.is_empty() {
        Ok(())
    } else {
        Err(Error::Schema(format!(
            "incompatible tables, differing columns: {}",
            differing.join(", ")
        )))
    }
}

fn detect_delimiter(header: &str) -> Option<u8> {
    [b',', b'\t', b';']
        .into_iter()
        .find(|&d| header.as_bytes().contains(&d))
}

fn read_records(path: &Path) -> Result<(Vec<String>, Vec<(usize, Vec<String>)>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, header_line) = lines
        .next()
        .ok_or_else(|| Error::Schema(format!("{} is empty", path.display())))?;

    match detect_delimiter(header_line) {
        Some(delim) => {
            let mut reader = csv::ReaderBuilder::new()
                .delimiter(delim)
                .trim(csv::Trim::All)
                .has_headers(true)
                .from_reader(text.as_bytes());
            let header = reader
                .headers()
                .map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?
                .iter()
                .map(|s| s.to_string())
                .collect::<Vec<_>>();
            let mut rows = Vec::new();
            for (i, rec) in reader.records().enumerate() {
                let rec = rec.map_err(|e| Error::Parse {
                    path: path.to_path_buf(),
                    row: i + 1,
                    column: "<record>".into(),
                    message: e.to_string(),
                })?;
                if rec.iter().all(|c| c.is_empty()) {
                    continue;
                }
                rows.push((i + 1, rec.iter().map(|s| s.to_string()).collect()));
            }
            Ok((header, rows))
        }
        None => {
            let header = header_line.split_whitespace().map(str::to_string).collect();
            let rows = lines
                .enumerate()
                .map(|(i, (_, l))| (i + 1, l.split_whitespace().map(str::to_string).collect()))
                .collect();
            Ok((header, rows))
        }
    }
}

/// Reads a delimiter-separated file into a table, enforcing the schema's
/// invariants and deriving the zero-earnings indicators it lists.
pub fn load_table(
    path: impl AsRef<Path>,
    schema: &CovariateSchema,
    source: SourceTag,
) -> Result<ObservationTable> {
    let path = path.as_ref();
    schema.validate()?;
    let (header, rows) = read_records(path)?;
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::MissingColumn {
                path: path.to_path_buf(),
                column: name.to_string(),
            })
    };

    let file_columns: Vec<&ColumnSpec> = schema
        .columns
        .iter()
        .filter(|c| c.derived_from.is_none() && c.role != Role::Id)
        .collect();
    let positions = file_columns
        .iter()
        .map(|c| find(&c.name))
        .collect::<Result<Vec<_>>>()?;

    let n = rows.len();
    let mut values = vec![Vec::with_capacity(n); file_columns.len()];
    for (row_no, cells) in &rows {
        if cells.len() != header.len() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                row: *row_no,
                column: "<record>".into(),
                message: format!("expected {} cells, found {}", header.len(), cells.len()),
            });
        }
        for (k, (spec, &pos)) in file_columns.iter().zip(&positions).enumerate() {
            let cell = &cells[pos];
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                row: *row_no,
                column: spec.name.clone(),
                message: format!("cannot parse `{cell}` as a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    row: *row_no,
                    column: spec.name.clone(),
                    message: "missing or non-finite value".into(),
                });
            }
            if spec.nonnegative && v < 0.0 {
                return Err(Error::Domain(format!(
                    "{}: row {row_no}, column `{}` is negative ({v})",
                    path.display(),
                    spec.name
                )));
            }
            values[k].push(v);
        }
    }

    let treat_spec = schema.single(Role::Treatment);
    let outcome_spec = schema.single(Role::Outcome);
    let column_of = |name: &str| {
        file_columns
            .iter()
            .position(|c| c.name == name)
            .map(|k| &values[k])
    };
    let treat = column_of(&treat_spec.name).expect("treatment column read");
    let mut w = Vec::with_capacity(n);
    for (i, &t) in treat.iter().enumerate() {
        if t != 0.0 && t != 1.0 {
            return Err(Error::Domain(format!(
                "{}: row {}, treatment value {t} is not 0/1",
                path.display(),
                rows[i].0
            )));
        }
        w.push(t as u8);
    }
    let y = column_of(&outcome_spec.name).expect("outcome column read").clone();

    let read_covariates: Vec<String> = file_columns
        .iter()
        .filter(|c| c.role == Role::Covariate)
        .map(|c| c.name.clone())
        .collect();
    let x = DMatrix::from_fn(n, read_covariates.len(), |r, c| {
        column_of(&read_covariates[c]).expect("covariate read")[r]
    });
    let keys = (0..n).map(|index| RowKey { source, index }).collect();
    let table = ObservationTable::new(read_covariates, x, w, y, &outcome_spec.name, keys)?;
    let table = derive_indicators(&table);

    // Put covariates in schema order.
    let ordered: Vec<String> = schema
        .covariate_names()
        .into_iter()
        .filter(|c| table.covariate_index(c).is_some())
        .collect();
    table.select_covariates(&ordered)
}

/// Appends (or recomputes) `u74`/`u75` from `re74`/`re75`. Idempotent; an
/// indicator whose earnings column is absent is skipped and recorded.
pub fn derive_indicators(table: &ObservationTable) -> ObservationTable {
    let mut out = table.clone();
    for (indicator, earnings) in INDICATOR_PAIRS {
        let Some(src) = out.covariate(earnings) else {
            if !out.absent_indicators.iter().any(|a| a == indicator) {
                out.absent_indicators.push(indicator.to_string());
            }
            continue;
        };
        let values: Vec<f64> = src
            .iter()
            .map(|&v| if v == 0.0 { 1.0 } else { 0.0 })
            .collect();
        match out.covariate_index(indicator) {
            Some(j) => {
                for (i, v) in values.into_iter().enumerate() {
                    out.x[(i, j)] = v;
                }
            }
            None => out.append_covariate(indicator, values),
        }
    }
    out
}

/// Concatenates an all-treated table and an all-control table.
pub fn compose_sample(
    treated: &ObservationTable,
    controls: &ObservationTable,
) -> Result<ObservationTable> {
    if treated.n() == 0 || controls.n() == 0 {
        return Err(Error::Degenerate(format!(
            "cannot compose a sample from {} treated and {} control rows",
            treated.n(),
            controls.n()
        )));
    }
    if treated.w.iter().any(|&v| v != 1) {
        return Err(Error::Domain("treated table contains W=0 rows".into()));
    }
    if controls.w.iter().any(|&v| v != 0) {
        return Err(Error::Domain("control table contains W=1 rows".into()));
    }
    treated.concat(controls)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmStat {
    /// `None` for an empty arm.
    pub mean: Option<f64>,
    /// `None` when the arm has fewer than two rows.
    pub sd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub name: String,
    pub treated: ArmStat,
    pub control: ArmStat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptiveStats {
    pub n_treated: usize,
    pub n_control: usize,
    pub columns: Vec<ColumnStats>,
}

impl DescriptiveStats {
    pub fn column(&self, name: &str) -> Option<&ColumnStats> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn to_delimited(&self, sep: char) -> String {
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "NA".into());
        let mut out = format!(
            "column{sep}treated_mean{sep}treated_sd{sep}control_mean{sep}control_sd\n"
        );
        for c in &self.columns {
            out.push_str(&format!(
                "{}{sep}{}{sep}{}{sep}{}{sep}{}\n",
                c.name,
                fmt(c.treated.mean),
                fmt(c.treated.sd),
                fmt(c.control.mean),
                fmt(c.control.sd)
            ));
        }
        out.push_str(&format!(
            "n{sep}{}{sep}NA{sep}{}{sep}NA\n",
            self.n_treated, self.n_control
        ));
        out
    }
}

pub(crate) fn mean_sd(values: &[f64]) -> ArmStat {
    let n = values.len();
    if n == 0 {
        return ArmStat {
            mean: None,
            sd: None,
        };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let sd = (n > 1).then(|| {
        let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
        (ss / (n - 1) as f64).sqrt()
    });
    ArmStat {
        mean: Some(mean),
        sd,
    }
}

/// Arm-wise means and (n-1) standard deviations of every covariate and the outcome.
pub fn summarize(table: &ObservationTable) -> Result<DescriptiveStats> {
    if table.n() == 0 {
        return Err(Error::Degenerate("cannot summarize an empty table".into()));
    }
    let treated = table.treated_indices();
    let control = table.control_indices();
    let stats_for = |col: &dyn Fn(usize) -> f64| ColumnStatsPair {
        treated: mean_sd(&treated.iter().map(|&i| col(i)).collect::<Vec<_>>()),
        control: mean_sd(&control.iter().map(|&i| col(i)).collect::<Vec<_>>()),
    };
    let mut columns = Vec::with_capacity(table.p() + 1);
    for (j, name) in table.covariates.iter().enumerate() {
        let pair = stats_for(&|i| table.x[(i, j)]);
        columns.push(ColumnStats {
            name: name.clone(),
            treated: pair.treated,
            control: pair.control,
        });
    }
    let pair = stats_for(&|i| table.y[i]);
    columns.push(ColumnStats {
        name: table.outcome.clone(),
        treated: pair.treated,
        control: pair.control,
    });
    Ok(DescriptiveStats {
        n_treated: treated.len(),
        n_control: control.len(),
        columns,
    })
}

struct ColumnStatsPair {
    treated: ArmStat,
    control: ArmStat,
}

/// Absolute standardized mean difference per covariate:
/// |mean_t - mean_c| / sqrt((sd_t^2 + sd_c^2) / 2).
pub fn standardized_mean_differences(table: &ObservationTable) -> Vec<(String, f64)> {
    let treated = table.treated_indices();
    let control = table.control_indices();
    table
        .covariates
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let t = mean_sd(&treated.iter().map(|&i| table.x[(i, j)]).collect::<Vec<_>>());
            let c = mean_sd(&control.iter().map(|&i| table.x[(i, j)]).collect::<Vec<_>>());
            let diff = (t.mean.unwrap_or(0.0) - c.mean.unwrap_or(0.0)).abs();
            let pooled = ((t.sd.unwrap_or(0.0).powi(2) + c.sd.unwrap_or(0.0).powi(2)) / 2.0).sqrt();
            let smd = if pooled > 0.0 { diff / pooled } else if diff == 0.0 { 0.0 } else { f64::INFINITY };
            (name.clone(), smd)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_file(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    const HEADER: &str = "treat,age,education,black,hispanic,married,nodegree,re74,re75,re78\n";

    #[test]
    fn loads_and_derives_indicators() {
        let f = write_file(&format!(
            "{HEADER}1,30,10,1,0,0,1,0,1532,5000\n1,25,12,0,1,1,0,100,0,0\n"
        ));
        let t = load_table(f.path(), &CovariateSchema::ldw(), SourceTag::ExperimentalTreated)
            .unwrap();
        assert_eq!(t.n(), 2);
        assert_eq!(t.p(), 10);
        assert_eq!(t.covariate("u75").unwrap(), vec![0.0, 1.0]);
        assert_eq!(t.covariate("u74").unwrap(), vec![1.0, 0.0]);
        assert_eq!(t.covariate_names().last().unwrap(), "u75");
        assert_eq!(t.keys()[1].to_string(), "experimental-treated:1");
    }

    #[test]
    fn whitespace_files_are_accepted() {
        let f = write_file(
            "treat  age education black hispanic married nodegree re74 re75 re78\n\
             0  23  10  1  0  0  1  0  0  0\n",
        );
        let t = load_table(f.path(), &CovariateSchema::ldw(), SourceTag::Psid).unwrap();
        assert_eq!(t.n(), 1);
        assert_eq!(t.n_control(), 1);
    }

    #[test]
    fn negative_earnings_is_a_domain_error() {
        let f = write_file(&format!("{HEADER}1,30,10,1,0,0,1,0,-5,5000\n"));
        let err = load_table(f.path(), &CovariateSchema::ldw(), SourceTag::External).unwrap_err();
        assert!(matches!(err, Error::Domain(_)), "{err}");
    }

    #[test]
    fn missing_column_is_named() {
        let f = write_file("treat,age,education,black,hispanic,married,nodegree,re74,re78\n1,1,1,1,1,1,1,1,1\n");
        match load_table(f.path(), &CovariateSchema::ldw(), SourceTag::External) {
            Err(Error::MissingColumn { column, .. }) => assert_eq!(column, "re75"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_cell_is_addressed() {
        let f = write_file(&format!("{HEADER}1,30,10,1,0,0,1,0,0,5000\n1,abc,10,1,0,0,1,0,0,5000\n"));
        match load_table(f.path(), &CovariateSchema::ldw(), SourceTag::External) {
            Err(Error::Parse { row, column, .. }) => {
                assert_eq!(row, 2);
                assert_eq!(column, "age");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn original_schema_has_no_re74() {
        let f = write_file("treat,age,education,black,hispanic,married,nodegree,re75,re78\n0,1,1,1,1,1,1,0,1\n");
        let t = load_table(f.path(), &CovariateSchema::lalonde_original(), SourceTag::External)
            .unwrap();
        assert_eq!(t.p(), 8);
        assert!(t.covariate_index("u74").is_none());
        assert_eq!(t.covariate("u75").unwrap(), vec![1.0]);
    }

    #[test]
    fn indicator_definition_and_idempotence() {
        let x = DMatrix::from_row_slice(3, 1, &[0.0, 1532.0, 0.0]);
        let t = ObservationTable::from_parts(vec!["re75".into()], x, vec![1, 0, 0], vec![0.0; 3])
            .unwrap();
        let once = derive_indicators(&t);
        assert_eq!(once.covariate("u75").unwrap(), vec![1.0, 0.0, 1.0]);
        assert_eq!(derive_indicators(&once), once);
        assert_eq!(once.absent_indicators(), &["u74".to_string()]);
    }

    #[test]
    fn compose_rejects_empty_and_mismatched() {
        let t = ObservationTable::from_parts(vec!["a".into()], DMatrix::zeros(1, 1), vec![1], vec![1.0])
            .unwrap();
        let empty = t.subset(&[]).with_treatment(vec![]).unwrap();
        assert!(matches!(compose_sample(&t, &empty), Err(Error::Degenerate(_))));
        let other = ObservationTable::from_parts(vec!["b".into()], DMatrix::zeros(1, 1), vec![0], vec![1.0])
            .unwrap();
        match compose_sample(&t, &other) {
            Err(Error::Schema(msg)) => assert!(msg.contains('a') && msg.contains('b')),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn summarize_uses_n_minus_one_and_marks_singletons() {
        let x = DMatrix::from_row_slice(4, 1, &[1.0, 2.0, 3.0, 5.0]);
        let t = ObservationTable::from_parts(vec!["a".into()], x, vec![1, 0, 0, 0], vec![7.0; 4])
            .unwrap();
        let s = summarize(&t).unwrap();
        assert_eq!((s.n_treated, s.n_control), (1, 3));
        let a = s.column("a").unwrap();
        assert_eq!(a.treated.sd, None);
        // {2, 3, 5}: sum of squares 14/3 over 2 degrees of freedom.
        assert!((a.control.sd.unwrap() - (7.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(s.column("y").unwrap().control.sd, Some(0.0));
        assert!(s.to_delimited('\t').contains("NA"));
    }
}
