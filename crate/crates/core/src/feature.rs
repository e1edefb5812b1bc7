//! Feature vectors and the embedding file formats.
//!
//! Two line-oriented formats are accepted:
//!
//! * NDJSON, one object per line: `{"id": "a", "day": 3, "label": 1, "vec": [0.1, 0.2]}`.
//!   `day` and `label` are optional.
//! * CSV with header `id[,day][,label],v0,v1,...,v{d-1}`.
//!
//! All vectors in a file must share the same dimension and ids must be unique.

use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::fmt_g17;

/// One item's feature representation.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub id: String,
    /// Batch (day) index, when the item belongs to a stream.
    pub day: Option<u32>,
    /// Ground truth: `true` for out-of-distribution.
    pub label: Option<bool>,
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn new(id: impl Into<String>, values: Vec<f64>) -> Self {
        Self {
            id: id.into(),
            day: None,
            label: None,
            values,
        }
    }

    pub fn with_day(mut self, day: u32) -> Self {
        self.day = Some(day);
        self
    }

    pub fn with_label(mut self, ood: bool) -> Self {
        self.label = Some(ood);
        self
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// The distance metric used to score items against a baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    #[serde(rename = "cosine")]
    CosineSimilarity,
    Mahalanobis,
}

impl MetricKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::CosineSimilarity => "cosine",
            MetricKind::Mahalanobis => "mahalanobis",
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cosine" | "cs" => Ok(MetricKind::CosineSimilarity),
            "mahalanobis" | "md" => Ok(MetricKind::Mahalanobis),
            other => Err(Error::InvalidArgument(format!("unknown metric {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataFormat {
    Ndjson,
    Csv,
}

impl DataFormat {
    /// Guesses the format from a file extension; anything but `.csv` is NDJSON.
    pub fn from_path(path: &std::path::Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => DataFormat::Csv,
            _ => DataFormat::Ndjson,
        }
    }
}

impl FromStr for DataFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ndjson" | "jsonl" => Ok(DataFormat::Ndjson),
            "csv" => Ok(DataFormat::Csv),
            other => Err(Error::InvalidArgument(format!("unknown format {other:?}"))),
        }
    }
}

#[derive(Deserialize)]
struct NdjsonRow {
    id: String,
    #[serde(default)]
    day: Option<u32>,
    #[serde(default)]
    label: Option<u8>,
    vec: Vec<f64>,
}

/// Checks shared-dimension, finiteness and id-uniqueness as rows arrive.
struct RowValidator {
    dim: Option<usize>,
    ids: HashSet<String>,
}

impl RowValidator {
    fn new() -> Self {
        Self {
            dim: None,
            ids: HashSet::new(),
        }
    }

    fn accept(&mut self, line: usize, v: &FeatureVector) -> Result<()> {
        if v.values.is_empty() {
            return Err(Error::MalformedRow {
                line,
                reason: "empty vector".into(),
            });
        }
        match self.dim {
            None => self.dim = Some(v.dim()),
            Some(d) if d != v.dim() => {
                return Err(Error::DimensionMismatch {
                    line,
                    expected: d,
                    found: v.dim(),
                })
            }
            _ => {}
        }
        if v.values.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteValue { line });
        }
        if !self.ids.insert(v.id.clone()) {
            return Err(Error::DuplicateId {
                line,
                id: v.id.clone(),
            });
        }
        Ok(())
    }
}

fn parse_label(line: usize, raw: u8) -> Result<bool> {
    match raw {
        0 => Ok(false),
        1 => Ok(true),
        other => Err(Error::MalformedRow {
            line,
            reason: format!("label must be 0 or 1, got {other}"),
        }),
    }
}

/// Reads a whole dataset, returning vectors in file order.
pub fn parse_dataset<R: BufRead>(source: R, format: DataFormat) -> Result<Vec<FeatureVector>> {
    match format {
        DataFormat::Ndjson => parse_ndjson(source),
        DataFormat::Csv => parse_csv(source),
    }
}

fn parse_ndjson<R: BufRead>(source: R) -> Result<Vec<FeatureVector>> {
    let mut out = Vec::new();
    let mut validator = RowValidator::new();
    for (idx, line) in source.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::MalformedRow {
            line: lineno,
            reason: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let row: NdjsonRow = serde_json::from_str(&line).map_err(|e| Error::MalformedRow {
            line: lineno,
            reason: e.to_string(),
        })?;
        let label = row.label.map(|l| parse_label(lineno, l)).transpose()?;
        let v = FeatureVector {
            id: row.id,
            day: row.day,
            label,
            values: row.vec,
        };
        validator.accept(lineno, &v)?;
        out.push(v);
    }
    Ok(out)
}

fn parse_csv<R: BufRead>(source: R) -> Result<Vec<FeatureVector>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let header = reader
        .headers()
        .map_err(|e| Error::MalformedRow {
            line: 1,
            reason: e.to_string(),
        })?
        .clone();
    let layout = CsvLayout::from_header(&header)?;

    let mut out = Vec::new();
    let mut validator = RowValidator::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::MalformedRow {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            reason: e.to_string(),
        })?;
        let lineno = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let malformed = |reason: String| Error::MalformedRow {
            line: lineno,
            reason,
        };
        let field = |i: usize| record.get(i).unwrap_or("");
        let day = match layout.day {
            Some(i) => Some(
                field(i)
                    .parse::<u32>()
                    .map_err(|e| malformed(format!("day: {e}")))?,
            ),
            None => None,
        };
        let label = match layout.label {
            Some(i) => {
                let raw = field(i)
                    .parse::<u8>()
                    .map_err(|e| malformed(format!("label: {e}")))?;
                Some(parse_label(lineno, raw)?)
            }
            None => None,
        };
        let values = (layout.first_value..record.len())
            .map(|i| {
                field(i)
                    .parse::<f64>()
                    .map_err(|e| malformed(format!("column {}: {e}", i + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        if values.len() != layout.dim {
            return Err(Error::DimensionMismatch {
                line: lineno,
                expected: layout.dim,
                found: values.len(),
            });
        }
        let v = FeatureVector {
            id: field(0).to_string(),
            day,
            label,
            values,
        };
        validator.accept(lineno, &v)?;
        out.push(v);
    }
    Ok(out)
}

struct CsvLayout {
    day: Option<usize>,
    label: Option<usize>,
    first_value: usize,
    dim: usize,
}

impl CsvLayout {
    fn from_header(header: &csv::StringRecord) -> Result<Self> {
        let bad = |reason: String| Error::MalformedRow { line: 1, reason };
        if header.get(0) != Some("id") {
            return Err(bad("header must start with `id`".into()));
        }
        let mut col = 1;
        let mut day = None;
        let mut label = None;
        if header.get(col) == Some("day") {
            day = Some(col);
            col += 1;
        }
        if header.get(col) == Some("label") {
            label = Some(col);
            col += 1;
        }
        let first_value = col;
        for (j, name) in header.iter().skip(first_value).enumerate() {
            if name != format!("v{j}") {
                return Err(bad(format!("expected column `v{j}`, found `{name}`")));
            }
        }
        let dim = header.len() - first_value;
        if dim == 0 {
            return Err(bad("no value columns".into()));
        }
        Ok(Self {
            day,
            label,
            first_value,
            dim,
        })
    }
}

/// Writes vectors as NDJSON in the same schema [`parse_dataset`] reads.
pub fn write_ndjson<W: Write>(mut out: W, items: &[FeatureVector]) -> Result<()> {
    for v in items {
        let mut obj = serde_json::Map::new();
        obj.insert("id".into(), v.id.clone().into());
        if let Some(day) = v.day {
            obj.insert("day".into(), day.into());
        }
        if let Some(label) = v.label {
            obj.insert("label".into(), u8::from(label).into());
        }
        obj.insert("vec".into(), v.values.clone().into());
        serde_json::to_writer(&mut out, &obj)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Writes vectors as CSV. `day`/`label` columns are emitted when the first
/// item carries them.
pub fn write_csv<W: Write>(mut out: W, items: &[FeatureVector]) -> Result<()> {
    let Some(first) = items.first() else {
        return Ok(());
    };
    let with_day = first.day.is_some();
    let with_label = first.label.is_some();
    let mut header = vec!["id".to_string()];
    if with_day {
        header.push("day".into());
    }
    if with_label {
        header.push("label".into());
    }
    header.extend((0..first.dim()).map(|j| format!("v{j}")));
    writeln!(out, "{}", header.join(","))?;
    for v in items {
        let mut row = vec![csv_escape(&v.id)];
        if with_day {
            row.push(v.day.map(|d| d.to_string()).unwrap_or_default());
        }
        if with_label {
            row.push(v.label.map(|l| u8::from(l).to_string()).unwrap_or_default());
        }
        row.extend(v.values.iter().map(|&x| fmt_g17(x)));
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

pub(crate) fn csv_escape(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
