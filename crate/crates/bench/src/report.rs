use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::BenchError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Metric {
    #[serde(rename = "RET")]
    Ret,
    #[serde(rename = "RLT")]
    Rlt,
    #[serde(rename = "RMU")]
    Rmu,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Ret => "RET",
            Metric::Rlt => "RLT",
            Metric::Rmu => "RMU",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub samples: usize,
    pub mean: f64,
    pub median: f64,
    pub p95: f64,
    pub max: f64,
}

impl Summary {
    /// Nearest-rank percentiles over `values`.
    pub fn of(values: &[f64]) -> Summary {
        if values.is_empty() {
            return Summary { samples: 0, mean: f64::NAN, median: f64::NAN, p95: f64::NAN, max: f64::NAN };
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let rank = |p: f64| v[((p * v.len() as f64).ceil() as usize).clamp(1, v.len()) - 1];
        Summary {
            samples: v.len(),
            mean: v.iter().sum::<f64>() / v.len() as f64,
            median: rank(0.5),
            p95: rank(0.95),
            max: v[v.len() - 1],
        }
    }
}

/// One grid point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cell {
    pub rules: usize,
    /// Events per second per rule; 0 where the metric has no rate.
    pub rate: f64,
    pub summary: Summary,
    /// Free-form per-cell detail, e.g. per-rule time for RET.
    pub extra: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub metric: Metric,
    /// "ms" or "KB".
    pub unit: &'static str,
    /// What `extra` holds in each cell.
    pub extra_label: &'static str,
    pub clock: &'static str,
    pub cells: Vec<Cell>,
    pub csv_path: Option<PathBuf>,
}

pub const CSV_HEADER: [&str; 11] =
    ["metric", "rules", "rate_per_s", "samples", "mean", "median", "p95", "max", "unit", "extra", "clock"];

impl BenchReport {
    pub fn cell(&self, rules: usize, rate: f64) -> Option<&Cell> {
        self.cells.iter().find(|c| c.rules == rules && c.rate == rate)
    }

    /// Writes one row per cell under a header naming each column.
    pub fn write_csv(&mut self, path: &Path) -> Result<(), BenchError> {
        let mut w = csv::Writer::from_path(path).map_err(|e| BenchError::Io(e.to_string()))?;
        w.write_record(CSV_HEADER).map_err(|e| BenchError::Io(e.to_string()))?;
        for c in &self.cells {
            let extra = format!("{}={}", self.extra_label, c.extra);
            w.write_record([
                self.metric.name().to_string(),
                c.rules.to_string(),
                c.rate.to_string(),
                c.summary.samples.to_string(),
                format!("{:.6}", c.summary.mean),
                format!("{:.6}", c.summary.median),
                format!("{:.6}", c.summary.p95),
                format!("{:.6}", c.summary.max),
                self.unit.to_string(),
                extra,
                self.clock.to_string(),
            ])
            .map_err(|e| BenchError::Io(e.to_string()))?;
        }
        w.flush().map_err(|e| BenchError::Io(e.to_string()))?;
        self.csv_path = Some(path.to_path_buf());
        Ok(())
    }

    /// Human-readable table.
    pub fn render(&self) -> String {
        let mut out = format!(
            "{} ({}, clock: {})\n{:>6} {:>8} {:>8} {:>10} {:>10} {:>10} {:>12}\n",
            self.metric.name(),
            self.unit,
            self.clock,
            "rules",
            "rate/s",
            "samples",
            "mean",
            "median",
            "p95",
            self.extra_label
        );
        for c in &self.cells {
            out.push_str(&format!(
                "{:>6} {:>8} {:>8} {:>10.3} {:>10.3} {:>10.3} {:>12.4}\n",
                c.rules, c.rate, c.summary.samples, c.summary.mean, c.summary.median, c.summary.p95, c.extra
            ));
        }
        out
    }
}
