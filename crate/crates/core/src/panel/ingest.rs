use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use chrono::{DateTime, NaiveDateTime};

use super::{TimeAxis, TimeSeriesPanel};
use crate::error::{Error, Result};

/// Names of the timestamp, symbol and price columns.
#[derive(Debug, Clone)]
pub struct ColumnMapping {
    pub timestamp: String,
    pub symbol: String,
    pub price: String,
}

impl Default for ColumnMapping {
    fn default() -> Self {
        Self {
            timestamp: "timestamp".into(),
            symbol: "symbol".into(),
            price: "price".into(),
        }
    }
}

fn parse_iso(s: &str) -> Option<i64> {
    if let Ok(d) = DateTime::parse_from_rfc3339(s) {
        return Some(d.timestamp_millis());
    }
    ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M"]
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
        .map(|d| d.and_utc().timestamp_millis())
}

/// Reads long-format `(timestamp, symbol, price)` records into a dense
/// symbols x timestamps panel. Cells with no record are flagged missing.
///
/// Timestamps are either all integer ticks or all ISO-8601; the kind is
/// decided by the first record.
pub fn ingest_csv(path: &Path, schema: &ColumnMapping) -> Result<TimeSeriesPanel> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Parse {
                line: 1,
                msg: format!("{other:?}"),
            },
        })?;
    let headers = reader.headers()?.clone();
    let column = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
            line: 1,
            msg: format!("missing column `{name}`"),
        })
    };
    let (ts_col, sym_col, px_col) = (
        column(&schema.timestamp)?,
        column(&schema.symbol)?,
        column(&schema.price)?,
    );

    let mut axis = None;
    let mut symbols: Vec<String> = Vec::new();
    let mut symbol_index: HashMap<String, usize> = HashMap::new();
    let mut cells: BTreeMap<i64, HashMap<usize, f64>> = BTreeMap::new();

    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            msg: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let bad = |msg: String| Error::Parse { line, msg };
        let field = |i: usize| record.get(i).ok_or_else(|| bad(format!("missing field {i}")));

        let raw_ts = field(ts_col)?;
        let kind = *axis.get_or_insert(if raw_ts.parse::<i64>().is_ok() {
            TimeAxis::Ticks
        } else {
            TimeAxis::Millis
        });
        let ts = match kind {
            TimeAxis::Ticks => raw_ts.parse::<i64>().ok(),
            TimeAxis::Millis => parse_iso(raw_ts),
        }
        .ok_or_else(|| bad(format!("unparsable timestamp `{raw_ts}` for {kind:?} axis")))?;

        let symbol = field(sym_col)?;
        if symbol.is_empty() {
            return Err(bad("empty symbol".into()));
        }
        let raw_px = field(px_col)?;
        let price: f64 = raw_px
            .parse()
            .ok()
            .filter(|p: &f64| p.is_finite())
            .ok_or_else(|| bad(format!("unparsable price `{raw_px}`")))?;

        let next = symbols.len();
        let idx = *symbol_index.entry(symbol.to_string()).or_insert_with(|| {
            symbols.push(symbol.to_string());
            next
        });
        if cells.entry(ts).or_default().insert(idx, price).is_some() {
            return Err(Error::DuplicateRecord {
                line,
                timestamp: raw_ts.to_string(),
                symbol: symbol.to_string(),
            });
        }
    }

    let timestamps: Vec<i64> = cells.keys().copied().collect();
    let mut values = vec![vec![0.0; timestamps.len()]; symbols.len()];
    let mut missing = vec![vec![true; timestamps.len()]; symbols.len()];
    for (t, row) in cells.values().enumerate() {
        for (&i, &p) in row {
            values[i][t] = p;
            missing[i][t] = false;
        }
    }
    TimeSeriesPanel::new(
        symbols,
        timestamps,
        axis.unwrap_or(TimeAxis::Ticks),
        values,
        missing,
    )
}
