//! Multivariate price panels: ingestion, cleaning, normalization,
//! chronological splits, windowing and synthetic generation.

mod ingest;
mod preprocess;
mod synth;
mod window;

pub use ingest::{ingest_csv, ColumnMapping};
pub use preprocess::{preprocess, split, FilterConfig, NormalizationState};
pub use synth::{synthesize, PlantedTruth, ShiftMode, SynthConfig};
pub use window::{SplitTag, WindowGeometry, WindowedDataset};

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// How raw timestamps are interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeAxis {
    /// Integer tick counters.
    Ticks,
    /// ISO-8601 instants, stored as Unix milliseconds.
    Millis,
}

/// `N x T` price matrix with timestamps, symbols and a missing-cell mask.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesPanel {
    values: Vec<f64>,
    missing: Vec<bool>,
    timestamps: Vec<i64>,
    symbols: Vec<String>,
    axis: TimeAxis,
}

impl TimeSeriesPanel {
    /// `values[i]` is the series for `symbols[i]`; missing cells must be
    /// flagged in `missing` (their value is ignored).
    pub fn new(
        symbols: Vec<String>,
        timestamps: Vec<i64>,
        axis: TimeAxis,
        values: Vec<Vec<f64>>,
        missing: Vec<Vec<bool>>,
    ) -> Result<Self> {
        let (n, t) = (symbols.len(), timestamps.len());
        if n == 0 || t == 0 {
            return Err(Error::Config("panel needs at least one series and one timestamp".into()));
        }
        if timestamps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("timestamps must be strictly increasing".into()));
        }
        let mut seen = std::collections::HashSet::new();
        if !symbols.iter().all(|s| seen.insert(s)) {
            return Err(Error::Config("symbols must be distinct".into()));
        }
        if values.len() != n
            || missing.len() != n
            || values.iter().any(|r| r.len() != t)
            || missing.iter().any(|r| r.len() != t)
        {
            return Err(Error::shape("panel", format!("expected {n} rows of {t} cells")));
        }
        Ok(Self {
            values: values.concat(),
            missing: missing.concat(),
            timestamps,
            symbols,
            axis,
        })
    }

    /// Panel with every cell observed.
    pub fn dense(
        symbols: Vec<String>,
        timestamps: Vec<i64>,
        axis: TimeAxis,
        values: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let missing = values.iter().map(|r| vec![false; r.len()]).collect();
        Self::new(symbols, timestamps, axis, values, missing)
    }

    pub fn n_series(&self) -> usize {
        self.symbols.len()
    }

    pub fn n_times(&self) -> usize {
        self.timestamps.len()
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn timestamps(&self) -> &[i64] {
        &self.timestamps
    }

    pub fn axis(&self) -> TimeAxis {
        self.axis
    }

    pub fn value(&self, series: usize, time: usize) -> f64 {
        self.values[series * self.n_times() + time]
    }

    pub fn is_missing(&self, series: usize, time: usize) -> bool {
        self.missing[series * self.n_times() + time]
    }

    pub fn row(&self, series: usize) -> &[f64] {
        let t = self.n_times();
        &self.values[series * t..(series + 1) * t]
    }

    pub fn missing_row(&self, series: usize) -> &[bool] {
        let t = self.n_times();
        &self.missing[series * t..(series + 1) * t]
    }

    pub fn missing_count(&self) -> usize {
        self.missing.iter().filter(|&&m| m).count()
    }

    /// Columns `[start, start + len)` as an `N x len` tensor.
    pub fn window(&self, start: usize, len: usize) -> Tensor {
        let data = (0..self.n_series())
            .flat_map(|i| self.row(i)[start..start + len].iter().copied())
            .collect();
        Tensor::from_parts(vec![self.n_series(), len], data)
    }

    /// Contiguous column range as a new panel.
    pub fn columns(&self, start: usize, len: usize) -> Self {
        let t = self.n_times();
        let pick = |v: &[f64]| -> Vec<f64> {
            (0..self.n_series())
                .flat_map(|i| v[i * t + start..i * t + start + len].iter().copied())
                .collect()
        };
        let missing = (0..self.n_series())
            .flat_map(|i| self.missing[i * t + start..i * t + start + len].iter().copied())
            .collect();
        Self {
            values: pick(&self.values),
            missing,
            timestamps: self.timestamps[start..start + len].to_vec(),
            symbols: self.symbols.clone(),
            axis: self.axis,
        }
    }

    /// Keeps only the listed rows, in the given order.
    pub(crate) fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            values: rows.iter().flat_map(|&i| self.row(i).iter().copied()).collect(),
            missing: rows
                .iter()
                .flat_map(|&i| self.missing_row(i).iter().copied())
                .collect(),
            timestamps: self.timestamps.clone(),
            symbols: rows.iter().map(|&i| self.symbols[i].clone()).collect(),
            axis: self.axis,
        }
    }

    pub(crate) fn with_values(&self, rows: Vec<Vec<f64>>) -> Self {
        Self {
            values: rows.concat(),
            missing: vec![false; self.values.len()],
            timestamps: self.timestamps.clone(),
            symbols: self.symbols.clone(),
            axis: self.axis,
        }
    }

    /// Writes the panel as `timestamp,symbol,price` records, skipping
    /// missing cells.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(w, "timestamp,symbol,price").map_err(io)?;
        for (t, &ts) in self.timestamps.iter().enumerate() {
            let stamp = format_timestamp(ts, self.axis);
            for (i, sym) in self.symbols.iter().enumerate() {
                if !self.is_missing(i, t) {
                    writeln!(w, "{stamp},{sym},{}", self.value(i, t)).map_err(io)?;
                }
            }
        }
        w.flush().map_err(io)
    }
}

pub(crate) fn format_timestamp(ts: i64, axis: TimeAxis) -> String {
    match axis {
        TimeAxis::Ticks => ts.to_string(),
        TimeAxis::Millis => chrono::DateTime::from_timestamp_millis(ts)
            .map(|d| d.naive_utc().format("%Y-%m-%dT%H:%M:%S%.3f").to_string())
            .unwrap_or_else(|| ts.to_string()),
    }
}
