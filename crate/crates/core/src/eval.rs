//! Forecast and classification metrics, the top-K long/short backtest and
//! report files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{format_timestamp, TimeSeriesPanel};
use crate::task::TaskId;

/// Mean absolute, root-mean-square and mean absolute percentage error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionMetrics {
    pub mae: f64,
    pub rmse: f64,
    /// Percent; terms with a zero truth value are skipped.
    pub mape: f64,
    /// Terms that entered the percentage error.
    pub mape_terms: usize,
}

pub fn regression_metrics(pred: &[f64], truth: &[f64]) -> Result<RegressionMetrics> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::shape(
            "regression metrics",
            format!("{} predictions vs {} truths", pred.len(), truth.len()),
        ));
    }
    let n = pred.len() as f64;
    let (mut abs, mut sq, mut pct, mut terms) = (0.0, 0.0, 0.0, 0usize);
    for (&p, &t) in pred.iter().zip(truth) {
        let e = p - t;
        abs += e.abs();
        sq += e * e;
        if t != 0.0 {
            pct += (e / t).abs();
            terms += 1;
        }
    }
    if terms < pred.len() {
        log::warn!("{} zero truth values skipped in MAPE", pred.len() - terms);
    }
    Ok(RegressionMetrics {
        mae: abs / n,
        rmse: (sq / n).sqrt(),
        mape: if terms > 0 { 100.0 * pct / terms as f64 } else { f64::NAN },
        mape_terms: terms,
    })
}

/// Confusion-matrix scores with class 1 as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
    pub f1: f64,
    /// Set when a ratio had a zero denominator and was reported as 0.
    pub degenerate: bool,
}

pub fn classification_metrics(pred: &[usize], truth: &[usize]) -> Result<ClassificationMetrics> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::shape(
            "classification metrics",
            format!("{} predictions vs {} truths", pred.len(), truth.len()),
        ));
    }
    if pred.iter().chain(truth).any(|&c| c > 1) {
        return Err(Error::Config("classification labels must be 0 or 1".into()));
    }
    let (mut tp, mut fp, mut fneg, mut tn) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &t) in pred.iter().zip(truth) {
        match (p, t) {
            (1, 1) => tp += 1,
            (1, 0) => fp += 1,
            (0, 1) => fneg += 1,
            _ => tn += 1,
        }
    }
    let mut degenerate = false;
    let mut ratio = |num: usize, den: usize| {
        if den == 0 {
            degenerate = true;
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fneg);
    let accuracy = (tp + tn) as f64 / pred.len() as f64;
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        degenerate = true;
        0.0
    };
    Ok(ClassificationMetrics {
        precision,
        recall,
        accuracy,
        f1,
        degenerate,
    })
}

/// Metrics of one task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TaskMetrics {
    Regression(RegressionMetrics),
    Classification(ClassificationMetrics),
}

impl TaskMetrics {
    fn entries(&self) -> Vec<(&'static str, f64)> {
        match self {
            TaskMetrics::Regression(m) => vec![
                ("mae", m.mae),
                ("rmse", m.rmse),
                ("mape", m.mape),
                ("mape_terms", m.mape_terms as f64),
            ],
            TaskMetrics::Classification(m) => vec![
                ("precision", m.precision),
                ("recall", m.recall),
                ("accuracy", m.accuracy),
                ("f1", m.f1),
                ("degenerate", f64::from(u8::from(m.degenerate))),
            ],
        }
    }
}

/// Named metric rows, keyed by a label such as a task name or a baseline.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rows: BTreeMap<String, TaskMetrics>,
}

impl MetricsReport {
    pub fn insert(&mut self, label: impl Into<String>, m: TaskMetrics) {
        self.rows.insert(label.into(), m);
    }

    pub fn task(&self, task: TaskId) -> Option<&TaskMetrics> {
        self.rows.get(task.name())
    }

    /// Writes `label,metric,value` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["label", "metric", "value"])?;
        for (label, m) in &self.rows {
            for (name, v) in m.entries() {
                w.write_record([label.as_str(), name, &v.to_string()])?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Parses a file written by [`MetricsReport::write_csv`].
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let mut raw: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
        for (k, rec) in r.records().enumerate() {
            let rec = rec?;
            let line = k + 2;
            let value: f64 = rec
                .get(2)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Parse { line, msg: "bad metric value".into() })?;
            raw.entry(rec[0].to_string()).or_default().insert(rec[1].to_string(), value);
        }
        let mut rows = BTreeMap::new();
        for (label, m) in raw {
            let get = |k: &str| {
                m.get(k)
                    .copied()
                    .ok_or_else(|| Error::Parse { line: 0, msg: format!("{label}: missing {k}") })
            };
            let metrics = if m.contains_key("mae") {
                TaskMetrics::Regression(RegressionMetrics {
                    mae: get("mae")?,
                    rmse: get("rmse")?,
                    mape: get("mape")?,
                    mape_terms: get("mape_terms")? as usize,
                })
            } else {
                TaskMetrics::Classification(ClassificationMetrics {
                    precision: get("precision")?,
                    recall: get("recall")?,
                    accuracy: get("accuracy")?,
                    f1: get("f1")?,
                    degenerate: get("degenerate")? != 0.0,
                })
            };
            rows.insert(label, metrics);
        }
        Ok(Self { rows })
    }
}

/// Top-K long/short strategy settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyConfig {
    pub top_k: usize,
    /// Holding period in ticks.
    pub horizon: usize,
    /// Minimum predicted relative move to open a position.
    pub open_threshold: f64,
    /// Charged once per round trip, as a fraction of entry notional.
    pub cost: f64,
    /// Ticks between rebalances.
    pub rebalance_every: usize,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        Self {
            top_k: 10,
            horizon: 2,
            open_threshold: 0.001,
            cost: 0.001,
            rebalance_every: 2,
        }
    }
}

impl StrategyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.top_k == 0 || self.horizon == 0 || self.rebalance_every == 0 {
            return Err(Error::Config("top_k, horizon and rebalance_every must be positive".into()));
        }
        if !(self.open_threshold >= 0.0) || !(self.cost >= 0.0) {
            return Err(Error::Config("threshold and cost must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Price forecasts made at one decision time.
#[derive(Debug, Clone, PartialEq)]
pub struct Forecast {
    /// Column of the last observed price; positions enter there.
    pub at: usize,
    /// Per-node predicted price `horizon` ticks after `at`.
    pub prices: Vec<f64>,
}

/// One closed position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub node: usize,
    /// `1` long, `-1` short.
    pub direction: i8,
    pub weight: f64,
    pub entry: f64,
    pub exit: f64,
    /// `direction * (exit / entry - 1)`.
    pub gross: f64,
}

/// Positions opened at one rebalance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rebalance {
    pub at: usize,
    pub timestamp: i64,
    pub positions: Vec<Position>,
    /// `sum weight * (gross - cost)`.
    pub period_return: f64,
}

/// Backtest outcome under additive accounting: every rebalance invests the
/// full unit budget split evenly across its positions and returns add up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestLedger {
    pub rebalances: Vec<Rebalance>,
    /// Running `long_pnl + short_pnl - costs` after each rebalance.
    pub cumulative_return: Vec<f64>,
    pub long_pnl: f64,
    pub short_pnl: f64,
    pub total_costs: f64,
    /// Rebalances skipped because the holding period ran past the data.
    pub skipped: usize,
}

impl BacktestLedger {
    pub fn final_return(&self) -> f64 {
        self.cumulative_return.last().copied().unwrap_or(0.0)
    }
}

/// Simulates the strategy over `forecasts` in time order. A rebalance at
/// column `at` ranks nodes by `|forecast / price[at] - 1|`, opens the top
/// `k` whose move exceeds the threshold (long for rises, short for falls)
/// and closes them at `at + horizon`. Forecasts closer than
/// `rebalance_every` to the previous rebalance are ignored.
pub fn backtest(forecasts: &[Forecast], prices: &TimeSeriesPanel, cfg: &StrategyConfig) -> Result<BacktestLedger> {
    cfg.validate()?;
    let n = prices.n_series();
    let mut ledger = BacktestLedger {
        rebalances: Vec::new(),
        cumulative_return: Vec::new(),
        long_pnl: 0.0,
        short_pnl: 0.0,
        total_costs: 0.0,
        skipped: 0,
    };
    let mut next_allowed = 0;
    for f in forecasts {
        if f.prices.len() != n {
            return Err(Error::shape("backtest", format!("{} forecasts for {n} nodes", f.prices.len())));
        }
        if f.at < next_allowed {
            continue;
        }
        next_allowed = f.at + cfg.rebalance_every;
        let exit_at = f.at + cfg.horizon;
        if exit_at >= prices.n_times() {
            log::info!("rebalance at column {} skipped: exit past the data", f.at);
            ledger.skipped += 1;
            continue;
        }
        let mut moves = Vec::new();
        for (i, &pred) in f.prices.iter().enumerate() {
            let entry = prices.value(i, f.at);
            if !(entry > 0.0) {
                return Err(Error::NonPositivePrice { index: f.at, value: entry });
            }
            let m = pred / entry - 1.0;
            if m.abs() > cfg.open_threshold {
                moves.push((i, m));
            }
        }
        moves.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()).then(a.0.cmp(&b.0)));
        moves.truncate(cfg.top_k);
        if moves.is_empty() {
            continue;
        }
        let weight = 1.0 / moves.len() as f64;
        let mut positions = Vec::with_capacity(moves.len());
        let (mut long, mut short) = (0.0, 0.0);
        for (i, m) in moves {
            let direction: i8 = if m > 0.0 { 1 } else { -1 };
            let (entry, exit) = (prices.value(i, f.at), prices.value(i, exit_at));
            let gross = f64::from(direction) * (exit / entry - 1.0);
            if direction > 0 {
                long += weight * gross;
            } else {
                short += weight * gross;
            }
            positions.push(Position {
                node: i,
                direction,
                weight,
                entry,
                exit,
                gross,
            });
        }
        // Weights sum to one, so the budget pays the round-trip cost once.
        let cost = cfg.cost;
        ledger.long_pnl += long;
        ledger.short_pnl += short;
        ledger.total_costs += cost;
        ledger
            .cumulative_return
            .push(ledger.long_pnl + ledger.short_pnl - ledger.total_costs);
        ledger.rebalances.push(Rebalance {
            at: f.at,
            timestamp: prices.timestamps()[f.at],
            positions,
            period_return: long + short - cost,
        });
    }
    Ok(ledger)
}

/// Writes one row per position; an empty ledger gives the header alone.
pub fn write_ledger_csv(path: &Path, ledger: &BacktestLedger, prices: &TimeSeriesPanel, cost: f64) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "timestamp", "symbol", "direction", "weight", "entry", "exit", "gross", "cost", "net",
    ])?;
    for r in &ledger.rebalances {
        let ts = format_timestamp(r.timestamp, prices.axis());
        for p in &r.positions {
            w.write_record([
                ts.clone(),
                prices.symbols()[p.node].clone(),
                p.direction.to_string(),
                p.weight.to_string(),
                p.entry.to_string(),
                p.exit.to_string(),
                p.gross.to_string(),
                cost.to_string(),
                (p.gross - cost).to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

const SVG_W: f64 = 640.0;
const SVG_H: f64 = 360.0;
const MARGIN: f64 = 40.0;

/// Line chart of a series as a single polyline; an empty series gives an
/// empty frame.
pub fn line_chart_svg(series: &[f64], title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_W}" height="{SVG_H}" viewBox="0 0 {SVG_W} {SVG_H}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{MARGIN}" y="24" font-family="sans-serif" font-size="14">{}</text>"#, escape(title));
    if !series.is_empty() {
        let lo = series.iter().copied().fold(0.0f64, f64::min);
        let hi = series.iter().copied().fold(0.0f64, f64::max);
        let span = if hi > lo { hi - lo } else { 1.0 };
        let (w, h) = (SVG_W - 2.0 * MARGIN, SVG_H - 2.0 * MARGIN);
        let step = if series.len() > 1 { w / (series.len() - 1) as f64 } else { 0.0 };
        let y = |v: f64| MARGIN + h * (hi - v) / span;
        let _ = writeln!(
            s,
            r##"<line x1="{MARGIN}" y1="{0:.3}" x2="{1:.3}" y2="{0:.3}" stroke="#999" stroke-dasharray="4 4"/>"##,
            y(0.0),
            SVG_W - MARGIN
        );
        let points: Vec<String> = series
            .iter()
            .enumerate()
            .map(|(k, &v)| format!("{:.3},{:.3}", MARGIN + step * k as f64, y(v)))
            .collect();
        let _ = writeln!(
            s,
            r##"<polyline fill="none" stroke="#1f77b4" stroke-width="1.5" points="{}"/>"##,
            points.join(" ")
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Nodes on a circle; an edge for every symmetrized weight above `1 / N`,
/// drawn with width proportional to the weight.
pub fn adjacency_svg(weights: &crate::autodiff::Tensor, symbols: &[String]) -> String {
    let n = weights.rows();
    let mut s = String::new();
    let size = 480.0;
    let (cx, cy, r) = (size / 2.0, size / 2.0, size / 2.0 - 60.0);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let pos: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let a = 2.0 * std::f64::consts::PI * i as f64 / n.max(1) as f64;
            (cx + r * a.cos(), cy + r * a.sin())
        })
        .collect();
    let cut = 1.0 / n.max(1) as f64;
    for i in 0..n {
        for j in i + 1..n {
            let w = 0.5 * (weights.at(i, j) + weights.at(j, i));
            if w > cut {
                let _ = writeln!(
                    s,
                    r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#d62728" stroke-opacity="0.6" stroke-width="{:.2}"/>"##,
                    pos[i].0,
                    pos[i].1,
                    pos[j].0,
                    pos[j].1,
                    1.0 + 8.0 * w
                );
            }
        }
    }
    for (i, (x, y)) in pos.iter().enumerate() {
        let _ = writeln!(s, r##"<circle cx="{x:.2}" cy="{y:.2}" r="6" fill="#1f77b4"/>"##);
        let label = symbols.get(i).map_or_else(|| i.to_string(), |v| escape(v));
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="11">{label}</text>"#,
            x + 8.0,
            y - 8.0
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Output locations of [`emit_report`].
#[derive(Debug, Clone)]
pub struct ReportPaths {
    pub metrics_csv: std::path::PathBuf,
    pub ledger_csv: std::path::PathBuf,
    pub returns_svg: std::path::PathBuf,
    pub adjacency_svg: std::path::PathBuf,
}

impl ReportPaths {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            metrics_csv: dir.join("metrics.csv"),
            ledger_csv: dir.join("ledger.csv"),
            returns_svg: dir.join("cumulative_return.svg"),
            adjacency_svg: dir.join("adjacency.svg"),
        }
    }

    pub fn all(&self) -> [&Path; 4] {
        [&self.metrics_csv, &self.ledger_csv, &self.returns_svg, &self.adjacency_svg]
    }
}

/// Writes the metrics CSV, ledger CSV, cumulative-return chart and
/// adjacency chart.
pub fn emit_report(
    metrics: &MetricsReport,
    ledger: &BacktestLedger,
    prices: &TimeSeriesPanel,
    strategy: &StrategyConfig,
    adjacency: &crate::autodiff::Tensor,
    paths: &ReportPaths,
) -> Result<()> {
    metrics.write_csv(&paths.metrics_csv)?;
    write_ledger_csv(&paths.ledger_csv, ledger, prices, strategy.cost)?;
    write_text(&paths.returns_svg, &line_chart_svg(&ledger.cumulative_return, "cumulative return"))?;
    write_text(&paths.adjacency_svg, &adjacency_svg(adjacency, prices.symbols()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::autodiff::Tensor;
    use crate::panel::TimeAxis;

    fn panel(rows: Vec<Vec<f64>>) -> TimeSeriesPanel {
        let t = rows[0].len();
        let symbols = (0..rows.len()).map(|i| format!("S{i}")).collect();
        TimeSeriesPanel::dense(symbols, (0..t as i64).collect(), TimeAxis::Ticks, rows).unwrap()
    }

    #[test]
    fn regression_examples() {
        let m = regression_metrics(&[1.0, 2.0], &[1.0, 2.0]).unwrap();
        assert_eq!((m.mae, m.rmse, m.mape), (0.0, 0.0, 0.0));
        assert!((regression_metrics(&[110.0], &[100.0]).unwrap().mape - 10.0).abs() < 1e-12);
        let m = regression_metrics(&[0.0, 0.0], &[3.0, 4.0]).unwrap();
        assert_eq!(m.mae, 3.5);
        assert!((m.rmse - 12.5f64.sqrt()).abs() < 1e-15);
        let m = regression_metrics(&[1.0, 1.0], &[0.0, 2.0]).unwrap();
        assert_eq!((m.mape, m.mape_terms), (50.0, 1));
        assert!(regression_metrics(&[1.0], &[]).is_err());
    }

    #[test]
    fn classification_examples() {
        let m = classification_metrics(&[1, 0, 1], &[1, 0, 1]).unwrap();
        assert_eq!((m.precision, m.recall, m.accuracy, m.f1), (1.0, 1.0, 1.0, 1.0));
        let m = classification_metrics(&[1, 1, 1, 1], &[1, 0, 1, 0]).unwrap();
        assert_eq!((m.precision, m.recall, m.accuracy), (0.5, 1.0, 0.5));
        assert!((m.f1 - 2.0 / 3.0).abs() < 1e-15);
        let m = classification_metrics(&[0, 0], &[1, 0]).unwrap();
        assert_eq!((m.precision, m.recall, m.degenerate), (0.0, 0.0, true));
        assert!(classification_metrics(&[0], &[0, 1]).is_err());
        assert!(classification_metrics(&[2], &[0]).is_err());
    }

    #[test]
    fn constant_prices_never_trade() {
        let p = panel(vec![vec![100.0; 20]; 3]);
        let f: Vec<Forecast> = (0..18)
            .map(|at| Forecast {
                at,
                prices: vec![100.0; 3],
            })
            .collect();
        let l = backtest(&f, &p, &StrategyConfig::default()).unwrap();
        assert!(l.rebalances.is_empty());
        assert_eq!(l.final_return(), 0.0);
    }

    #[test]
    fn one_percent_rise_nets_nine_bp() {
        let p = panel(vec![vec![100.0, 100.0, 100.5, 101.0, 101.0]]);
        let f = [Forecast {
            at: 1,
            prices: vec![101.0],
        }];
        let l = backtest(&f, &p, &StrategyConfig::default()).unwrap();
        assert_eq!(l.rebalances.len(), 1);
        assert!((l.rebalances[0].period_return - 0.009).abs() < 1e-15);
        assert!((l.final_return() - 0.009).abs() < 1e-15);
        assert_eq!(l.rebalances[0].positions[0].direction, 1);
    }

    #[test]
    fn top_k_and_shorts() {
        let p = panel(vec![
            vec![100.0, 100.0, 98.0],
            vec![100.0, 100.0, 103.0],
            vec![100.0, 100.0, 100.0],
        ]);
        let f = [Forecast {
            at: 0,
            prices: vec![97.0, 102.0, 100.05],
        }];
        let cfg = StrategyConfig {
            top_k: 1,
            cost: 0.0,
            ..StrategyConfig::default()
        };
        let l = backtest(&f, &p, &cfg).unwrap();
        let pos = &l.rebalances[0].positions;
        assert_eq!((pos.len(), pos[0].node, pos[0].direction), (1, 0, -1));
        assert!((l.short_pnl - 0.02).abs() < 1e-15);
        assert_eq!(l.long_pnl, 0.0);
        let l2 = backtest(&f, &p, &StrategyConfig { cost: 0.0, ..StrategyConfig::default() }).unwrap();
        assert_eq!(l2.rebalances[0].positions.len(), 2);
        assert_eq!(l2.rebalances[0].positions[0].weight, 0.5);
    }

    #[test]
    fn exits_past_the_data_are_skipped() {
        let p = panel(vec![vec![100.0, 100.0, 102.0]]);
        let f = [Forecast { at: 1, prices: vec![110.0] }];
        let l = backtest(&f, &p, &StrategyConfig::default()).unwrap();
        assert_eq!((l.rebalances.len(), l.skipped), (0, 1));
    }

    fn random_case(seed: u64) -> (TimeSeriesPanel, Vec<Forecast>) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let (n, t) = (5, 60);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let mut p = 100.0;
                (0..t)
                    .map(|_| {
                        p *= 1.0 + r.random_range(-0.01..0.01);
                        p
                    })
                    .collect()
            })
            .collect();
        let panel = panel(rows);
        let f = (0..t - 1)
            .map(|at| Forecast {
                at,
                prices: (0..n).map(|i| panel.value(i, at) * (1.0 + r.random_range(-0.02..0.02))).collect(),
            })
            .collect();
        (panel, f)
    }

    proptest! {
        #[test]
        fn accounting_identities(seed in 0u64..300) {
            let (p, f) = random_case(seed);
            let cfg = StrategyConfig { top_k: 3, ..StrategyConfig::default() };
            let l = backtest(&f, &p, &cfg).unwrap();
            prop_assert_eq!(l.final_return(), l.long_pnl + l.short_pnl - l.total_costs);
            let summed: f64 = l.rebalances.iter().map(|r| r.period_return).sum();
            prop_assert!((summed - l.final_return()).abs() < 1e-12);
            let doubled = backtest(&f, &p, &StrategyConfig { cost: 2.0 * cfg.cost, ..cfg.clone() }).unwrap();
            let drop = l.final_return() - doubled.final_return();
            prop_assert!((drop - l.rebalances.len() as f64 * cfg.cost).abs() < 1e-12);
        }

        #[test]
        fn perfect_foresight_without_cost_never_loses(seed in 0u64..300) {
            let (p, _) = random_case(seed);
            let cfg = StrategyConfig { cost: 0.0, top_k: 2, ..StrategyConfig::default() };
            let f: Vec<Forecast> = (0..p.n_times() - cfg.horizon)
                .map(|at| Forecast { at, prices: (0..p.n_series()).map(|i| p.value(i, at + cfg.horizon)).collect() })
                .collect();
            let l = backtest(&f, &p, &cfg).unwrap();
            prop_assert!(l.rebalances.iter().all(|r| r.period_return >= 0.0));
            prop_assert!(l.final_return() >= 0.0);
        }

        #[test]
        fn rmse_dominates_mae(v in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..20)) {
            let (p, t): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
            let m = regression_metrics(&p, &t).unwrap();
            prop_assert!(m.rmse >= m.mae - 1e-12 && m.mae >= 0.0);
        }
    }

    #[test]
    fn report_files() {
        let dir = tempfile::tempdir().unwrap();
        let paths = ReportPaths::in_dir(dir.path());
        let p = panel(vec![vec![100.0; 4], vec![50.0; 4]]);
        let empty = backtest(&[], &p, &StrategyConfig::default()).unwrap();
        let mut metrics = MetricsReport::default();
        metrics.insert("pf", TaskMetrics::Regression(regression_metrics(&[1.0, 2.5], &[1.5, 2.0]).unwrap()));
        metrics.insert("cpd", TaskMetrics::Classification(classification_metrics(&[1, 0], &[1, 1]).unwrap()));
        let adj = Tensor::from_rows(&[vec![0.3, 0.7], vec![0.6, 0.4]]).unwrap();
        emit_report(&metrics, &empty, &p, &StrategyConfig::default(), &adj, &paths).unwrap();
        let ledger = fs::read_to_string(&paths.ledger_csv).unwrap();
        assert_eq!(ledger.lines().count(), 1);
        assert_eq!(MetricsReport::read_csv(&paths.metrics_csv).unwrap(), metrics);
        let svg = fs::read_to_string(&paths.adjacency_svg).unwrap();
        assert_eq!(svg.matches("<line").count(), 1);
        assert_eq!(svg.matches("<circle").count(), 2);
    }

    #[test]
    fn two_point_chart_has_one_polyline() {
        let svg = line_chart_svg(&[0.0, 0.01], "r");
        assert_eq!(svg.matches("<polyline").count(), 1);
        let pts = svg.split("points=\"").nth(1).unwrap().split('"').next().unwrap();
        assert_eq!(pts.split(' ').count(), 2);
        assert_eq!(line_chart_svg(&[], "r").matches("<polyline").count(), 0);
    }
}
