//! Dataset files: CSV rows preceded by a one-line `#`-prefixed JSON header.
//!
//! Row layout is node-major features (`n_buses × feature_names.len()`)
//! followed by one column per entry of `label_names`. Label columns are named
//! `channel[i]`, e.g. `pi[0]`, `binding[17]`.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::CaseError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub case_name: String,
    pub n_buses: usize,
    pub n_lines: usize,
    pub feature_names: Vec<String>,
    pub label_names: Vec<String>,
    pub seed: u64,
    /// Case branch index of every line column (`binding[l]` refers to
    /// `line_branches[l]`). Empty means "all live branches in case order".
    #[serde(default)]
    pub line_branches: Vec<usize>,
    /// Branches taken out of service before generation.
    #[serde(default)]
    pub outaged_branches: Vec<usize>,
    /// Draws rejected as infeasible or unconverged during generation.
    #[serde(default)]
    pub rejected: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

impl DatasetHeader {
    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn row_width(&self) -> usize {
        self.n_buses * self.n_features() + self.label_names.len()
    }

    /// Column range (relative to the label block) of a label channel.
    pub fn label_range(&self, channel: &str) -> Option<Range<usize>> {
        let prefix = format!("{channel}[");
        let start = self.label_names.iter().position(|n| n.starts_with(&prefix))?;
        let len = self.label_names[start..]
            .iter()
            .take_while(|n| n.starts_with(&prefix))
            .count();
        Some(start..start + len)
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|n| n == name)
    }

    fn column_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.row_width());
        for node in 0..self.n_buses {
            for f in &self.feature_names {
                names.push(format!("{f}[{node}]"));
            }
        }
        names.extend(self.label_names.iter().cloned());
        names
    }
}

/// Column names for a per-index channel: `name[0]..name[len-1]`.
pub fn channel_names(name: &str, len: usize) -> Vec<String> {
    (0..len).map(|i| format!("{name}[{i}]")).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetFile {
    pub header: DatasetHeader,
    pub rows: Vec<Vec<f64>>,
}

impl DatasetFile {
    pub fn new(header: DatasetHeader) -> Self {
        DatasetFile { header, rows: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Node-major feature block of a row.
    pub fn features(&self, row: usize) -> &[f64] {
        &self.rows[row][..self.header.n_buses * self.header.n_features()]
    }

    pub fn labels(&self, row: usize) -> &[f64] {
        &self.rows[row][self.header.n_buses * self.header.n_features()..]
    }

    pub fn label_channel(&self, row: usize, channel: &str) -> Option<&[f64]> {
        let r = self.header.label_range(channel)?;
        Some(&self.labels(row)[r])
    }

    pub fn validate(&self) -> Result<(), CaseError> {
        let width = self.header.row_width();
        for (i, row) in self.rows.iter().enumerate() {
            if row.len() != width {
                return Err(CaseError::HeaderMismatch(format!(
                    "row {i} has {} values, header implies {width}",
                    row.len()
                )));
            }
            if let Some(c) = row.iter().position(|v| !v.is_finite()) {
                return Err(CaseError::NonFiniteValue { row: i, column: c });
            }
        }
        Ok(())
    }

    /// Write to any sink; the byte stream is a pure function of `self`.
    pub fn write_to(&self, mut out: impl Write) -> Result<(), CaseError> {
        self.validate()?;
        let json = serde_json::to_string(&self.header)?;
        writeln!(out, "# {json}")?;
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        w.write_record(self.header.column_names())?;
        let mut buf = Vec::with_capacity(self.header.row_width());
        for row in &self.rows {
            buf.clear();
            buf.extend(row.iter().map(|v| format!("{v:?}")));
            w.write_record(&buf)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from(input: impl std::io::Read) -> Result<Self, CaseError> {
        let mut reader = BufReader::new(input);
        let mut first = String::new();
        reader.read_line(&mut first)?;
        let json = first
            .trim_end()
            .strip_prefix('#')
            .ok_or_else(|| CaseError::HeaderMismatch("missing '#' JSON header line".into()))?;
        let header: DatasetHeader = serde_json::from_str(json.trim())?;
        let width = header.row_width();

        let mut r = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .from_reader(reader);
        let names = r.headers()?.clone();
        let expected = header.column_names();
        if names.len() != expected.len() || names.iter().zip(&expected).any(|(a, b)| a != b) {
            return Err(CaseError::HeaderMismatch(format!(
                "column names do not match header ({} columns, expected {})",
                names.len(),
                expected.len()
            )));
        }
        let mut rows = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            if rec.len() != width {
                return Err(CaseError::HeaderMismatch(format!(
                    "row {i} has {} values, header implies {width}",
                    rec.len()
                )));
            }
            let mut row = Vec::with_capacity(width);
            for (c, field) in rec.iter().enumerate() {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| CaseError::NonFiniteValue { row: i, column: c })?;
                if !v.is_finite() {
                    return Err(CaseError::NonFiniteValue { row: i, column: c });
                }
                row.push(v);
            }
            rows.push(row);
        }
        Ok(DatasetFile { header, rows })
    }
}

pub fn write_dataset(path: impl AsRef<Path>, data: &DatasetFile) -> Result<(), CaseError> {
    let mut bytes = Vec::new();
    data.write_to(&mut bytes)?;
    super::write_atomic(path.as_ref(), &bytes)
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<DatasetFile, CaseError> {
    DatasetFile::read_from(fs::File::open(path)?)
}
