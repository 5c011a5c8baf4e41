//! Observation tables: CSV ingestion, serialization and binary splits.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Whether the outcome column holds severity labels or accident counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Severity,
    Frequency,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    /// Category codes indexing into `labels`.
    Severity { labels: Vec<String>, codes: Vec<usize> },
    Frequency { counts: Vec<u64> },
}

impl Outcome {
    pub fn len(&self) -> usize {
        match self {
            Outcome::Severity { codes, .. } => codes.len(),
            Outcome::Frequency { counts } => counts.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn mode(&self) -> Mode {
        match self {
            Outcome::Severity { .. } => Mode::Severity,
            Outcome::Frequency { .. } => Mode::Frequency,
        }
    }

    fn select(&self, rows: &[usize]) -> Outcome {
        match self {
            Outcome::Severity { labels, codes } => Outcome::Severity {
                labels: labels.clone(),
                codes: rows.iter().map(|&r| codes[r]).collect(),
            },
            Outcome::Frequency { counts } => Outcome::Frequency {
                counts: rows.iter().map(|&r| counts[r]).collect(),
            },
        }
    }
}

/// Named numeric columns plus one outcome column, one row per accident or
/// per road segment (and period).
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationTable {
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
    outcome_name: String,
    outcome: Outcome,
    /// Stable row identity. Survives splits so that simulation draws stay
    /// attached to the same observation.
    row_ids: Vec<usize>,
    dropped_rows: usize,
}

/// Options for [`load_csv`].
#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub mode: Mode,
    pub outcome_column: String,
    /// Declared outcome set. When absent, labels are collected in order of
    /// first appearance.
    pub outcome_labels: Option<Vec<String>>,
    /// Restrict ingestion (and the missing-value check) to these columns.
    pub columns: Option<Vec<String>>,
}

impl LoadOptions {
    pub fn new(mode: Mode, outcome_column: impl Into<String>) -> Self {
        LoadOptions {
            mode,
            outcome_column: outcome_column.into(),
            outcome_labels: None,
            columns: None,
        }
    }

    pub fn labels(mut self, labels: Vec<String>) -> Self {
        self.outcome_labels = Some(labels);
        self
    }

    pub fn columns(mut self, columns: Vec<String>) -> Self {
        self.columns = Some(columns);
        self
    }
}

fn is_missing(cell: &str) -> bool {
    matches!(
        cell.trim(),
        "" | "NA" | "na" | "N/A" | "NaN" | "nan" | "null" | "NULL"
    )
}

/// Read a table from an RFC-4180 CSV file with a header row.
///
/// Rows with a missing value in any ingested column are dropped; the count is
/// kept in [`ObservationTable::dropped_rows`].
pub fn load_csv(path: impl AsRef<Path>, opts: &LoadOptions) -> Result<ObservationTable> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_csv(file, opts)
}

pub fn read_csv<R: std::io::Read>(reader: R, opts: &LoadOptions) -> Result<ObservationTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let outcome_idx = headers
        .iter()
        .position(|h| *h == opts.outcome_column)
        .ok_or_else(|| Error::MissingColumn(opts.outcome_column.clone()))?;

    let numeric: Vec<usize> = match &opts.columns {
        Some(wanted) => {
            let mut idx = Vec::with_capacity(wanted.len());
            for w in wanted {
                if *w == opts.outcome_column || idx.iter().any(|&i: &usize| headers[i] == *w) {
                    continue;
                }
                let i = headers
                    .iter()
                    .position(|h| h == w)
                    .ok_or_else(|| Error::MissingColumn(w.clone()))?;
                idx.push(i);
            }
            idx
        }
        None => (0..headers.len()).filter(|&i| i != outcome_idx).collect(),
    };

    let mut labels: Vec<String> = opts.outcome_labels.clone().unwrap_or_default();
    let mut label_index: HashMap<String, usize> = labels
        .iter()
        .enumerate()
        .map(|(i, l)| (l.clone(), i))
        .collect();
    let fixed_labels = opts.outcome_labels.is_some();

    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); numeric.len()];
    let mut codes = Vec::new();
    let mut counts = Vec::new();
    let mut dropped = 0usize;
    let mut values = vec![0.0; numeric.len()];

    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        let row_no = row + 1;
        let mut complete = true;
        for (slot, &ci) in numeric.iter().enumerate() {
            let cell = record.get(ci).unwrap_or("");
            if is_missing(cell) {
                complete = false;
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| Error::NonNumeric {
                column: headers[ci].clone(),
                value: cell.to_string(),
                row: row_no,
            })?;
            if !v.is_finite() {
                complete = false;
            }
            values[slot] = v;
        }
        let raw = record.get(outcome_idx).unwrap_or("");
        if is_missing(raw) {
            complete = false;
        }
        if !complete {
            dropped += 1;
            continue;
        }
        match opts.mode {
            Mode::Severity => {
                let code = match label_index.get(raw) {
                    Some(&c) => c,
                    None if !fixed_labels => {
                        labels.push(raw.to_string());
                        label_index.insert(raw.to_string(), labels.len() - 1);
                        labels.len() - 1
                    }
                    None => {
                        return Err(Error::UnknownOutcome {
                            label: raw.to_string(),
                            row: row_no,
                        })
                    }
                };
                codes.push(code);
            }
            Mode::Frequency => {
                let v: f64 = raw.parse().map_err(|_| Error::NonNumeric {
                    column: opts.outcome_column.clone(),
                    value: raw.to_string(),
                    row: row_no,
                })?;
                counts.push(parse_count(v, row_no)?);
            }
        }
        for (col, &v) in columns.iter_mut().zip(&values) {
            col.push(v);
        }
    }

    let outcome = match opts.mode {
        Mode::Severity => Outcome::Severity { labels, codes },
        Mode::Frequency => Outcome::Frequency { counts },
    };
    let n = outcome.len();
    if n == 0 {
        return Err(Error::EmptyData);
    }
    log::debug!("loaded {n} rows, dropped {dropped}");
    Ok(ObservationTable {
        names: numeric.iter().map(|&i| headers[i].clone()).collect(),
        columns,
        outcome_name: opts.outcome_column.clone(),
        outcome,
        row_ids: (0..n).collect(),
        dropped_rows: dropped,
    })
}

fn parse_count(v: f64, row: usize) -> Result<u64> {
    if v < 0.0 {
        return Err(Error::NegativeCount { value: v, row });
    }
    if v.fract() != 0.0 || !v.is_finite() {
        return Err(Error::NonIntegerCount { value: v, row });
    }
    Ok(v as u64)
}

impl ObservationTable {
    /// Assemble a table from in-memory columns.
    pub fn new(
        columns: Vec<(String, Vec<f64>)>,
        outcome_name: impl Into<String>,
        outcome: Outcome,
    ) -> Result<Self> {
        let n = outcome.len();
        let mut names = Vec::with_capacity(columns.len());
        let mut data = Vec::with_capacity(columns.len());
        for (name, col) in columns {
            if col.len() != n {
                return Err(Error::Dimension {
                    expected: n,
                    got: col.len(),
                });
            }
            if let Some(bad) = col.iter().find(|v| !v.is_finite()) {
                return Err(Error::Domain(format!("column `{name}` holds {bad}")));
            }
            if names.contains(&name) {
                return Err(Error::Config(format!("duplicate column `{name}`")));
            }
            names.push(name);
            data.push(col);
        }
        if let Outcome::Severity { labels, codes } = &outcome {
            if let Some(&c) = codes.iter().find(|&&c| c >= labels.len()) {
                return Err(Error::Domain(format!("outcome code {c} out of range")));
            }
        }
        Ok(ObservationTable {
            names,
            columns: data,
            outcome_name: outcome_name.into(),
            outcome,
            row_ids: (0..n).collect(),
            dropped_rows: 0,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.outcome.len()
    }

    pub fn dropped_rows(&self) -> usize {
        self.dropped_rows
    }

    pub fn column_names(&self) -> &[String] {
        &self.names
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.columns[i].as_slice())
    }

    pub fn outcome(&self) -> &Outcome {
        &self.outcome
    }

    pub fn outcome_name(&self) -> &str {
        &self.outcome_name
    }

    pub fn mode(&self) -> Mode {
        self.outcome.mode()
    }

    pub fn row_ids(&self) -> &[usize] {
        &self.row_ids
    }

    /// Copy of the table with one column's values replaced.
    pub fn with_column(&self, name: &str, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.n_rows() {
            return Err(Error::Dimension {
                expected: self.n_rows(),
                got: values.len(),
            });
        }
        let mut out = self.clone();
        match out.names.iter().position(|n| n == name) {
            Some(i) => out.columns[i] = values,
            None => {
                out.names.push(name.to_string());
                out.columns.push(values);
            }
        }
        Ok(out)
    }

    /// Copy of the table with a new outcome vector (same rows).
    pub fn with_outcome(&self, outcome: Outcome) -> Result<Self> {
        if outcome.len() != self.n_rows() {
            return Err(Error::Dimension {
                expected: self.n_rows(),
                got: outcome.len(),
            });
        }
        let mut out = self.clone();
        out.outcome = outcome;
        Ok(out)
    }

    /// Copy of the given rows, in the given order. Rows keep their ids, so
    /// simulation draws follow them.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        if let Some(&r) = rows.iter().find(|&&r| r >= self.n_rows()) {
            return Err(Error::Domain(format!("row {r} out of range")));
        }
        Ok(self.select(rows))
    }

    fn select(&self, rows: &[usize]) -> Self {
        ObservationTable {
            names: self.names.clone(),
            columns: self
                .columns
                .iter()
                .map(|c| rows.iter().map(|&r| c[r]).collect())
                .collect(),
            outcome_name: self.outcome_name.clone(),
            outcome: self.outcome.select(rows),
            row_ids: rows.iter().map(|&r| self.row_ids[r]).collect(),
            dropped_rows: 0,
        }
    }

    /// Split rows by a 0/1 flag column into (flag = 1, flag = 0).
    pub fn split_by_flag(&self, flag_column: &str) -> Result<(Self, Self)> {
        let flag = self
            .column(flag_column)
            .ok_or_else(|| Error::MissingColumn(flag_column.to_string()))?;
        let mut ones = Vec::new();
        let mut zeros = Vec::new();
        for (i, &v) in flag.iter().enumerate() {
            if v == 1.0 {
                ones.push(i);
            } else if v == 0.0 {
                zeros.push(i);
            } else {
                return Err(Error::NonBinaryFlag {
                    column: flag_column.to_string(),
                    value: v,
                });
            }
        }
        Ok((self.select(&ones), self.select(&zeros)))
    }

    /// Write the table as CSV: numeric columns in table order, then the
    /// outcome column. Numbers use the shortest representation that reads
    /// back to the same `f64`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<&str> = self.names.iter().map(String::as_str).collect();
        header.push(&self.outcome_name);
        w.write_record(&header)?;
        let mut record: Vec<String> = Vec::with_capacity(header.len());
        for r in 0..self.n_rows() {
            record.clear();
            record.extend(self.columns.iter().map(|c| format!("{}", c[r])));
            record.push(match &self.outcome {
                Outcome::Severity { labels, codes } => labels[codes[r]].clone(),
                Outcome::Frequency { counts } => counts[r].to_string(),
            });
            w.write_record(&record)?;
        }
        w.flush().map_err(|source| Error::Io {
            path: "<csv writer>".into(),
            source,
        })?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}
