// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::Mode;
use crate::error::{ReportError, Result};

/// One metric from one repetition at one sweep point. Failed runs leave a
/// single row with metric `error` and the diagnostic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub point: usize,
    pub params: String,
    pub rep: usize,
    pub seed: u64,
    pub metric: String,
    pub value: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub point: usize,
    pub params: String,
    pub metric: String,
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (0 with fewer than two values).
    pub std: f64,
    /// Baseline mean over this mean, for the mode's primary metric.
    pub speedup: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    Csv,
    JsonLines,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "csv" => Ok(Format::Csv),
            "json-lines" | "jsonl" => Ok(Format::JsonLines),
            _ => Err(format!("unknown format `{s}` (expected csv or json-lines)")),
        }
    }
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::JsonLines => "jsonl",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub mode: Mode,
    pub baseline_point: usize,
    pub rows: Vec<Row>,
    pub summary: Vec<Summary>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, 0.0);
    }
    let mean = xs.iter().sum::<f64>() / n;
    let std = if xs.len() < 2 {
        0.0
    } else {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    (mean, std)
}

impl ResultTable {
    /// Sorts rows by (point, rep, metric) and recomputes the summaries.
    pub fn new(mode: Mode, baseline_point: usize, mut rows: Vec<Row>) -> Self {
        rows.sort_by(|a, b| (a.point, a.rep, &a.metric).cmp(&(b.point, b.rep, &b.metric)));
        let mut groups: BTreeMap<(usize, &str), (&str, Vec<f64>)> = BTreeMap::new();
        for r in &rows {
            if let Some(v) = r.value {
                groups.entry((r.point, &r.metric)).or_insert((&r.params, Vec::new())).1.push(v);
            }
        }
        let (primary, speedup) = mode.primary_metric();
        let base = groups.get(&(baseline_point, primary)).map(|(_, xs)| mean_std(xs).0);
        let summary = groups
            .iter()
            .map(|(&(point, metric), (params, xs))| {
                let (mean, std) = mean_std(xs);
                Summary {
                    point,
                    params: params.to_string(),
                    metric: metric.to_string(),
                    n: xs.len(),
                    mean,
                    std,
                    speedup: match base {
                        Some(b) if speedup && metric == primary => Some(b / mean),
                        _ => None,
                    },
                }
            })
            .collect();
        Self {
            mode,
            baseline_point,
            rows,
            summary,
        }
    }

    pub fn values(&self, point: usize, metric: &str) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.point == point && r.metric == metric)
            .filter_map(|r| r.value)
            .collect()
    }

    pub fn summary_for(&self, point: usize, metric: &str) -> Option<&Summary> {
        self.summary.iter().find(|s| s.point == point && s.metric == metric)
    }

    pub fn errors(&self) -> impl Iterator<Item = &Row> {
        self.rows.iter().filter(|r| r.error.is_some())
    }

    pub fn write_rows<W: Write>(&self, out: W, format: Format) -> Result<()> {
        write_records(out, format, &self.rows)
    }

    pub fn write_summary<W: Write>(&self, out: W, format: Format) -> Result<()> {
        write_records(out, format, &self.summary)
    }

    /// Rows and summaries in one buffer, for byte-level comparisons.
    pub fn to_bytes(&self, format: Format) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_rows(&mut buf, format)?;
        self.write_summary(&mut buf, format)?;
        Ok(buf)
    }

    /// Reads rows back from CSV or JSON lines and rebuilds the summaries.
    pub fn read_rows(text: &str, format: Format, mode: Mode, baseline_point: usize) -> Result<Self> {
        let rows: Vec<Row> = match format {
            Format::Csv => csv::Reader::from_reader(text.as_bytes())
                .deserialize()
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| ReportError::Table(e.to_string()))?,
            Format::JsonLines => text
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(serde_json::from_str)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| ReportError::Table(e.to_string()))?,
        };
        Ok(Self::new(mode, baseline_point, rows))
    }
}

fn write_records<W: Write, T: Serialize>(mut out: W, format: Format, records: &[T]) -> Result<()> {
    let ser = |e: &dyn std::fmt::Display| ReportError::Serialize(e.to_string());
    match format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(out);
            for r in records {
                w.serialize(r).map_err(|e| ser(&e))?;
            }
            w.flush().map_err(|e| ser(&e))?;
        }
        Format::JsonLines => {
            for r in records {
                serde_json::to_writer(&mut out, r).map_err(|e| ser(&e))?;
                out.write_all(b"\n").map_err(|e| ser(&e))?;
            }
        }
    }
    Ok(())
}
