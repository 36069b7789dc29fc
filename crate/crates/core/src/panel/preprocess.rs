use serde::{Deserialize, Serialize};

use super::{TimeAxis, TimeSeriesPanel};
use crate::error::{Error, Result};

/// Cleaning thresholds. Durations are in seconds.
#[derive(Debug, Clone)]
pub struct FilterConfig {
    /// Rows missing more than this fraction of cells are dropped.
    pub max_missing_fraction: f64,
    /// Rows with no record in the first or last span of this length are
    /// dropped.
    pub edge_span_secs: f64,
    /// Rows with a missing run longer than this are dropped.
    pub max_gap_secs: f64,
    /// Duration of one tick when the panel uses integer ticks.
    pub seconds_per_tick: f64,
    /// Normalization statistics are fit on the first `fit_columns` columns
    /// (all columns when `None`).
    pub fit_columns: Option<usize>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            max_missing_fraction: 0.5,
            edge_span_secs: 5.0 * 86_400.0,
            max_gap_secs: 15.0 * 60.0,
            seconds_per_tick: 60.0,
            fit_columns: None,
        }
    }
}

/// Per-series z-score statistics, kept for inverse transforms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationState {
    pub symbols: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormalizationState {
    pub fn normalize(&self, series: usize, price: f64) -> f64 {
        (price - self.mean[series]) / self.std[series]
    }

    pub fn denormalize(&self, series: usize, z: f64) -> f64 {
        z * self.std[series] + self.mean[series]
    }

    /// Price-unit copy of a normalized panel with the same symbols.
    pub fn denormalize_panel(&self, panel: &TimeSeriesPanel) -> Result<TimeSeriesPanel> {
        if panel.symbols() != self.symbols.as_slice() {
            return Err(Error::Config("panel symbols differ from the normalization state".into()));
        }
        let rows = (0..panel.n_series())
            .map(|i| panel.row(i).iter().map(|&z| self.denormalize(i, z)).collect())
            .collect();
        Ok(panel.with_values(rows))
    }
}

fn seconds(panel: &TimeSeriesPanel, cfg: &FilterConfig) -> Vec<f64> {
    let unit = match panel.axis() {
        TimeAxis::Ticks => cfg.seconds_per_tick,
        TimeAxis::Millis => 1e-3,
    };
    panel.timestamps().iter().map(|&t| t as f64 * unit).collect()
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

fn drop_reason(
    missing: &[bool],
    secs: &[f64],
    delta: f64,
    cfg: &FilterConfig,
) -> Option<String> {
    let t = missing.len();
    let n_missing = missing.iter().filter(|&&m| m).count();
    if n_missing as f64 > cfg.max_missing_fraction * t as f64 {
        return Some(format!("{n_missing}/{t} cells missing"));
    }
    let (first, last) = (secs[0], secs[t - 1]);
    let head = (0..t).take_while(|&k| secs[k] - first < cfg.edge_span_secs);
    if head.clone().all(|k| missing[k]) {
        return Some("no records in the leading edge span".into());
    }
    let tail = (0..t).rev().take_while(|&k| last - secs[k] < cfg.edge_span_secs);
    if tail.clone().all(|k| missing[k]) {
        return Some("no records in the trailing edge span".into());
    }
    let mut run = 0usize;
    for &m in missing {
        run = if m { run + 1 } else { 0 };
        if run as f64 * delta > cfg.max_gap_secs {
            return Some(format!("missing run of {run} steps"));
        }
    }
    None
}

/// Drops sparse or gappy rows, mean-imputes the rest, drops constant rows
/// and z-scores each row.
pub fn preprocess(
    panel: &TimeSeriesPanel,
    cfg: &FilterConfig,
) -> Result<(TimeSeriesPanel, NormalizationState)> {
    let t = panel.n_times();
    let fit = cfg.fit_columns.unwrap_or(t).clamp(1, t);
    let secs = seconds(panel, cfg);
    let delta = median(secs.windows(2).map(|w| w[1] - w[0]).collect());

    let mut kept = Vec::new();
    let mut rows = Vec::new();
    let mut state = NormalizationState {
        symbols: Vec::new(),
        mean: Vec::new(),
        std: Vec::new(),
    };
    for i in 0..panel.n_series() {
        let sym = &panel.symbols()[i];
        let missing = panel.missing_row(i);
        if let Some(reason) = drop_reason(missing, &secs, delta, cfg) {
            log::warn!("dropping series {sym}: {reason}");
            continue;
        }
        let observed: Vec<f64> = (0..t).filter(|&k| !missing[k]).map(|k| panel.value(i, k)).collect();
        let fill = observed.iter().sum::<f64>() / observed.len() as f64;
        let row: Vec<f64> = (0..t)
            .map(|k| if missing[k] { fill } else { panel.value(i, k) })
            .collect();

        let mean = row[..fit].iter().sum::<f64>() / fit as f64;
        let var = if fit > 1 {
            row[..fit].iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (fit - 1) as f64
        } else {
            0.0
        };
        let std = var.sqrt();
        if !(std > 1e-12 * mean.abs().max(1.0)) {
            log::warn!("dropping series {sym}: constant over the fit window");
            continue;
        }
        kept.push(i);
        rows.push(row.iter().map(|v| (v - mean) / std).collect());
        state.symbols.push(sym.clone());
        state.mean.push(mean);
        state.std.push(std);
    }
    if kept.is_empty() {
        return Err(Error::EmptyPanel);
    }
    Ok((panel.select_rows(&kept).with_values(rows), state))
}

/// Chronological train/validation/test split. Validation and test lengths
/// are `floor(ratio * T)`; train takes the remainder.
pub fn split(panel: &TimeSeriesPanel, ratios: [f64; 3]) -> Result<[TimeSeriesPanel; 3]> {
    if ratios.iter().any(|r| !(r.is_finite() && *r >= 0.0))
        || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err(Error::Split(format!(
            "ratios {ratios:?} must be non-negative and sum to 1"
        )));
    }
    let t = panel.n_times();
    let part = |r: f64| (r * t as f64 + 1e-9).floor() as usize;
    let (val, test) = (part(ratios[1]), part(ratios[2]));
    let train = t.saturating_sub(val + test);
    for (name, len) in [("train", train), ("validation", val), ("test", test)] {
        if len == 0 {
            return Err(Error::Split(format!(
                "{name} split is empty for T = {t} and ratios {ratios:?}"
            )));
        }
    }
    Ok([
        panel.columns(0, train),
        panel.columns(train, val),
        panel.columns(train + val, test),
    ])
}
