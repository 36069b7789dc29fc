//! Run configuration and the end-to-end steps shared by the command line
//! and the acceptance tests: generate, prepare, train, evaluate, forecast.

use std::fmt::Display;
use std::str::FromStr;

use crate::attention::AdjacencyMatrix;
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::eval::{
    backtest, classification_metrics, regression_metrics, BacktestLedger, Forecast, MetricsReport,
    StrategyConfig, TaskMetrics,
};
use crate::model::TaskModel;
use crate::network::{NetworkConfig, StNetwork};
use crate::panel::{
    preprocess, split, synthesize, FilterConfig, NormalizationState, PlantedTruth, ShiftMode, SplitTag,
    SynthConfig, TimeSeriesPanel, WindowGeometry, WindowedDataset,
};
use crate::targets::{build_samples, Sample, Target, TargetConfig};
use crate::task::{parse_task_list, TaskId};
use crate::trainer::{train_from, ConsolidationState, Optimizer, TrainConfig, TrainReport};

/// Architecture sizes exposed in the run config.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchConfig {
    pub attn_dim: usize,
    pub channels: usize,
    pub feature_dim: usize,
    pub head_hidden: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        let n = NetworkConfig::new(1, 1, 1);
        Self {
            attn_dim: n.attn_dim,
            channels: n.channels,
            feature_dim: n.feature_dim,
            head_hidden: n.head_hidden,
        }
    }
}

/// Every setting of a run. One `seed` drives generation, initialization,
/// shuffling and view augmentation.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub geometry: WindowGeometry,
    /// Origin spacing on the test split.
    pub test_stride: usize,
    pub targets: TargetConfig,
    pub split: [f64; 3],
    pub strategy: StrategyConfig,
    pub synth: SynthConfig,
    pub arch: ArchConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let strategy = StrategyConfig::default();
        Self {
            train: TrainConfig::default(),
            geometry: WindowGeometry::default(),
            test_stride: 1,
            targets: TargetConfig::default(),
            split: [0.7, 0.2, 0.1],
            strategy,
            synth: SynthConfig::default(),
            arch: ArchConfig::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse `{value}`")))
}

fn parse_list<T: FromStr, const K: usize>(key: &str, value: &str) -> Result<[T; K]> {
    let items = value
        .split(',')
        .map(|v| parse(key, v))
        .collect::<Result<Vec<T>>>()?;
    items
        .try_into()
        .map_err(|_| Error::Config(format!("{key}: expected {K} comma-separated values")))
}

fn join<T: Display>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn mode_name(m: ShiftMode) -> &'static str {
    match m {
        ShiftMode::Up => "up",
        ShiftMode::Alternating => "alternating",
        ShiftMode::Random => "random",
    }
}

impl RunConfig {
    /// Names accepted by [`RunConfig::set`], in the order of
    /// [`RunConfig::to_text`].
    pub const KEYS: [&'static str; 44] = [
        "seed", "epochs", "lr", "decay", "decay_every", "lambda1", "lambda2", "tasks", "use_mi",
        "batch_size", "optimizer", "inner_steps", "patience", "temperature", "alpha", "beta",
        "view_scale", "view_jitter", "input_len", "horizon", "windows", "stride", "test_stride",
        "breakpoints", "eta", "split", "top_k", "open_threshold", "cost", "rebalance_every",
        "n_series", "n_times", "blocks", "within_corr", "noise", "ar_coef", "shift_size",
        "shift_spacing", "shift_mode", "max_shifts", "attn_dim", "channels", "feature_dim",
        "head_hidden",
    ];

    /// Parses `key = value` lines over the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: k + 1,
                msg: format!("expected `key = value`, got `{line}`"),
            })?;
            cfg.set(key.trim(), value.trim()).map_err(|e| Error::Parse {
                line: k + 1,
                msg: e.to_string(),
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.train;
        let g = &mut self.geometry;
        let s = &mut self.synth;
        match key {
            "seed" => {
                t.seed = parse(key, value)?;
                t.importance.view.seed = t.seed;
            }
            "epochs" => t.epochs = parse(key, value)?,
            "lr" => t.lr = parse(key, value)?,
            "decay" => t.lr_decay = parse(key, value)?,
            "decay_every" => t.decay_every = parse(key, value)?,
            "lambda1" => t.lambda_theta = parse(key, value)?,
            "lambda2" => t.lambda_head = parse(key, value)?,
            "tasks" => t.tasks = parse_task_list(value)?,
            "use_mi" => t.use_mi = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "optimizer" => t.optimizer = value.parse()?,
            "inner_steps" => t.inner_steps = parse(key, value)?,
            "patience" => {
                t.patience = match value {
                    "none" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "temperature" => t.importance.infonce.temperature = parse(key, value)?,
            "alpha" => t.importance.infonce.alpha = parse(key, value)?,
            "beta" => t.importance.infonce.beta = parse(key, value)?,
            "view_scale" => t.importance.view.scale_range = parse(key, value)?,
            "view_jitter" => t.importance.view.jitter_std = parse(key, value)?,
            "input_len" => g.input_len = parse(key, value)?,
            "horizon" => {
                g.horizon = parse(key, value)?;
                self.strategy.horizon = g.horizon;
            }
            "windows" => [g.gap_window, g.ma_window, g.cpd_window] = parse_list(key, value)?,
            "stride" => g.stride = parse(key, value)?,
            "test_stride" => self.test_stride = parse(key, value)?,
            "breakpoints" => self.targets.breakpoints = parse(key, value)?,
            "eta" => self.targets.eta = parse(key, value)?,
            "split" => self.split = parse_list(key, value)?,
            "top_k" => self.strategy.top_k = parse(key, value)?,
            "open_threshold" => self.strategy.open_threshold = parse(key, value)?,
            "cost" => self.strategy.cost = parse(key, value)?,
            "rebalance_every" => self.strategy.rebalance_every = parse(key, value)?,
            "n_series" => s.n_series = parse(key, value)?,
            "n_times" => s.n_times = parse(key, value)?,
            "blocks" => s.blocks = parse(key, value)?,
            "within_corr" => s.within_corr = parse(key, value)?,
            "noise" => s.noise = parse(key, value)?,
            "ar_coef" => s.ar_coef = parse(key, value)?,
            "shift_size" => s.shift_size = parse(key, value)?,
            "shift_spacing" => {
                let [lo, hi] = parse_list(key, value)?;
                s.shift_spacing = (lo, hi);
            }
            "shift_mode" => {
                s.shift_mode = match value.to_ascii_lowercase().as_str() {
                    "up" => ShiftMode::Up,
                    "alternating" => ShiftMode::Alternating,
                    "random" => ShiftMode::Random,
                    _ => return Err(Error::Config(format!("shift_mode: unknown mode `{value}`"))),
                }
            }
            "max_shifts" => {
                s.max_shifts = match value {
                    "none" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "attn_dim" => self.arch.attn_dim = parse(key, value)?,
            "channels" => self.arch.channels = parse(key, value)?,
            "feature_dim" => self.arch.feature_dim = parse(key, value)?,
            "head_hidden" => self.arch.head_hidden = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Every setting as `key = value` lines; parses back to `self`.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let g = &self.geometry;
        let s = &self.synth;
        let opt = |v: Option<usize>| v.map_or_else(|| "none".to_string(), |v| v.to_string());
        let optimizer = match t.optimizer {
            Optimizer::Sgd => "sgd",
            Optimizer::Adam => "adam",
        };
        let entries: Vec<(&str, String)> = vec![
            ("seed", t.seed.to_string()),
            ("epochs", t.epochs.to_string()),
            ("lr", t.lr.to_string()),
            ("decay", t.lr_decay.to_string()),
            ("decay_every", t.decay_every.to_string()),
            ("lambda1", t.lambda_theta.to_string()),
            ("lambda2", t.lambda_head.to_string()),
            ("tasks", join(&t.tasks)),
            ("use_mi", t.use_mi.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("optimizer", optimizer.to_string()),
            ("inner_steps", t.inner_steps.to_string()),
            ("patience", opt(t.patience)),
            ("temperature", t.importance.infonce.temperature.to_string()),
            ("alpha", t.importance.infonce.alpha.to_string()),
            ("beta", t.importance.infonce.beta.to_string()),
            ("view_scale", t.importance.view.scale_range.to_string()),
            ("view_jitter", t.importance.view.jitter_std.to_string()),
            ("input_len", g.input_len.to_string()),
            ("horizon", g.horizon.to_string()),
            ("windows", join(&[g.gap_window, g.ma_window, g.cpd_window])),
            ("stride", g.stride.to_string()),
            ("test_stride", self.test_stride.to_string()),
            ("breakpoints", self.targets.breakpoints.to_string()),
            ("eta", self.targets.eta.to_string()),
            ("split", join(&self.split)),
            ("top_k", self.strategy.top_k.to_string()),
            ("open_threshold", self.strategy.open_threshold.to_string()),
            ("cost", self.strategy.cost.to_string()),
            ("rebalance_every", self.strategy.rebalance_every.to_string()),
            ("n_series", s.n_series.to_string()),
            ("n_times", s.n_times.to_string()),
            ("blocks", s.blocks.to_string()),
            ("within_corr", s.within_corr.to_string()),
            ("noise", s.noise.to_string()),
            ("ar_coef", s.ar_coef.to_string()),
            ("shift_size", s.shift_size.to_string()),
            ("shift_spacing", join(&[s.shift_spacing.0, s.shift_spacing.1])),
            ("shift_mode", mode_name(s.shift_mode).to_string()),
            ("max_shifts", opt(s.max_shifts)),
            ("attn_dim", self.arch.attn_dim.to_string()),
            ("channels", self.arch.channels.to_string()),
            ("feature_dim", self.arch.feature_dim.to_string()),
            ("head_hidden", self.arch.head_hidden.to_string()),
        ];
        entries.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.strategy.validate()?;
        if self.geometry.stride == 0 || self.test_stride == 0 {
            return Err(Error::Config("strides must be positive".into()));
        }
        if self.strategy.horizon != self.geometry.horizon {
            return Err(Error::Config("the strategy holds positions for the forecast horizon".into()));
        }
        Ok(())
    }

    pub fn network_config(&self, n_nodes: usize) -> NetworkConfig {
        NetworkConfig {
            attn_dim: self.arch.attn_dim,
            channels: self.arch.channels,
            feature_dim: self.arch.feature_dim,
            head_hidden: self.arch.head_hidden,
            ..NetworkConfig::new(n_nodes, self.geometry.input_len, self.geometry.horizon)
        }
    }
}

/// Synthetic panel and its planted truth for `cfg`.
pub fn generate(cfg: &RunConfig) -> Result<(TimeSeriesPanel, PlantedTruth)> {
    synthesize(&cfg.synth, cfg.train.seed)
}

/// A cleaned, normalized and split panel with its samples.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub normalization: NormalizationState,
    /// Normalized train, validation and test panels.
    pub normalized: [TimeSeriesPanel; 3],
    /// Cleaned price-unit train, validation and test panels.
    pub prices: [TimeSeriesPanel; 3],
    pub samples: [Vec<Sample>; 3],
}

impl Prepared {
    pub fn train(&self) -> &[Sample] {
        &self.samples[0]
    }

    pub fn validation(&self) -> &[Sample] {
        &self.samples[1]
    }

    pub fn test(&self) -> &[Sample] {
        &self.samples[2]
    }
}

/// Cleans and normalizes `raw` with statistics from the training columns
/// only, splits it chronologically and builds samples for every task.
/// With `normalization`, those statistics are reused instead.
pub fn prepare(raw: &TimeSeriesPanel, cfg: &RunConfig, normalization: Option<&NormalizationState>) -> Result<Prepared> {
    let [train_cols, ..] = split(raw, cfg.split)?;
    let filter = FilterConfig {
        fit_columns: Some(train_cols.n_times()),
        ..FilterConfig::default()
    };
    let (mut normalized, mut state) = preprocess(raw, &filter)?;
    if let Some(given) = normalization {
        if given.symbols != state.symbols {
            return Err(Error::Config("checkpoint symbols differ from the cleaned panel".into()));
        }
        let prices = state.denormalize_panel(&normalized)?;
        state = given.clone();
        let rows = (0..prices.n_series())
            .map(|i| prices.row(i).iter().map(|&p| state.normalize(i, p)).collect())
            .collect();
        normalized = prices.with_values(rows);
    }
    let prices = state.denormalize_panel(&normalized)?;
    let parts = split(&normalized, cfg.split)?;
    let price_parts = split(&prices, cfg.split)?;
    let tags = [SplitTag::Train, SplitTag::Validation, SplitTag::Test];
    let mut samples: [Vec<Sample>; 3] = Default::default();
    for k in 0..3 {
        let geometry = WindowGeometry {
            stride: if k == 2 { cfg.test_stride } else { cfg.geometry.stride },
            ..cfg.geometry
        };
        let ds = WindowedDataset::new(&parts[k], geometry, tags[k])?;
        samples[k] = build_samples(&parts[k], &price_parts[k], &ds, &TaskId::ALL, &cfg.targets)?;
    }
    Ok(Prepared {
        normalization: state,
        normalized: parts,
        prices: price_parts,
        samples,
    })
}

/// Trains a fresh network, or continues from `resume`, and packs the result.
pub fn train_model(cfg: &RunConfig, data: &Prepared, resume: Option<Checkpoint>) -> Result<(Checkpoint, TrainReport)> {
    let n = data.normalization.symbols.len();
    let (mut net, state) = match resume {
        Some(c) => {
            if c.normalization != data.normalization {
                return Err(Error::Config("checkpoint normalization differs from the prepared data".into()));
            }
            (StNetwork::from_params(c.network, c.params)?, c.state)
        }
        None => (
            StNetwork::new(cfg.network_config(n), cfg.train.seed)?,
            ConsolidationState::new(cfg.train.lambda_theta, cfg.train.lambda_head),
        ),
    };
    let report = train_from(&mut net, data.train(), data.validation(), &cfg.train, state)?;
    let ckpt = Checkpoint {
        network: net.config.clone(),
        params: net.params().clone(),
        state: report.state.clone(),
        normalization: data.normalization.clone(),
    };
    Ok((ckpt, report))
}

/// Untrained network packed as a checkpoint.
pub fn initial_checkpoint(cfg: &RunConfig, data: &Prepared) -> Result<Checkpoint> {
    let net = StNetwork::new(cfg.network_config(data.normalization.symbols.len()), cfg.train.seed)?;
    Ok(Checkpoint {
        network: net.config.clone(),
        params: net.params().clone(),
        state: ConsolidationState::new(cfg.train.lambda_theta, cfg.train.lambda_head),
        normalization: data.normalization.clone(),
    })
}

/// Label of the persistence baseline row in [`evaluate`].
pub const PERSISTENCE: &str = "pf_persistence";

/// Test metrics for every task plus the persistence baseline. Price
/// forecasts are scored in price units; gap and moving-average targets in
/// normalized units; change points per node with class 1 positive.
pub fn evaluate<M: TaskModel + ?Sized>(model: &M, data: &Prepared) -> Result<MetricsReport> {
    let samples = data.test();
    let norm = &data.normalization;
    let mut report = MetricsReport::default();
    let (mut pf_pred, mut pf_last, mut pf_truth) = (Vec::new(), Vec::new(), Vec::new());
    let mut reg: [(Vec<f64>, Vec<f64>); 2] = Default::default();
    let (mut cls_pred, mut cls_truth) = (Vec::new(), Vec::new());
    for s in samples {
        let n = s.input.rows();
        let last = s.input.cols() - 1;
        for task in TaskId::ALL {
            let out = model.predict(task, &s.input)?;
            match (task, s.target(task)?) {
                (TaskId::Cpd, Target::Classes(c)) => {
                    for (i, &truth) in c.iter().enumerate() {
                        cls_pred.push(usize::from(out.at(i, 1) > out.at(i, 0)));
                        cls_truth.push(truth);
                    }
                }
                (TaskId::Pf, Target::Values(y)) => {
                    for i in 0..n {
                        for h in 0..y.cols() {
                            pf_pred.push(norm.denormalize(i, out.at(i, h)));
                            pf_last.push(norm.denormalize(i, s.input.at(i, last)));
                            pf_truth.push(norm.denormalize(i, y.at(i, h)));
                        }
                    }
                }
                (_, Target::Values(y)) => {
                    let k = usize::from(task == TaskId::Ma);
                    reg[k].0.extend_from_slice(out.data());
                    reg[k].1.extend_from_slice(y.data());
                }
                (_, Target::Classes(_)) => return Err(Error::Config(format!("{task} has class targets"))),
            }
        }
    }
    if samples.is_empty() {
        return Err(Error::Config("no test samples".into()));
    }
    report.insert(TaskId::Pf.name(), TaskMetrics::Regression(regression_metrics(&pf_pred, &pf_truth)?));
    report.insert(PERSISTENCE, TaskMetrics::Regression(regression_metrics(&pf_last, &pf_truth)?));
    report.insert(TaskId::Gap.name(), TaskMetrics::Regression(regression_metrics(&reg[0].0, &reg[0].1)?));
    report.insert(TaskId::Ma.name(), TaskMetrics::Regression(regression_metrics(&reg[1].0, &reg[1].1)?));
    report.insert(
        TaskId::Cpd.name(),
        TaskMetrics::Classification(classification_metrics(&cls_pred, &cls_truth)?),
    );
    Ok(report)
}

/// Price-unit forecasts `horizon` ticks past the last observed column of
/// every test window, indexed into the test price panel.
pub fn forecasts<M: TaskModel + ?Sized>(model: &M, data: &Prepared) -> Result<Vec<Forecast>> {
    let norm = &data.normalization;
    data.test()
        .iter()
        .map(|s| {
            let out = model.predict(TaskId::Pf, &s.input)?;
            let h = out.cols() - 1;
            Ok(Forecast {
                at: s.origin - 1,
                prices: (0..out.rows()).map(|i| norm.denormalize(i, out.at(i, h))).collect(),
            })
        })
        .collect()
}

/// Backtest of the model's forecasts over the test prices.
pub fn run_backtest<M: TaskModel + ?Sized>(model: &M, data: &Prepared, cfg: &RunConfig) -> Result<BacktestLedger> {
    backtest(&forecasts(model, data)?, &data.prices[2], &cfg.strategy)
}

/// Learned adjacency averaged over the test windows.
pub fn mean_adjacency(net: &StNetwork, data: &Prepared) -> Result<AdjacencyMatrix> {
    let items = data
        .test()
        .iter()
        .map(|s| net.attention()?.build_adjacency(&s.input))
        .collect::<Result<Vec<_>>>()?;
    AdjacencyMatrix::mean(&items)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_text_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.set("seed", "7").unwrap();
        cfg.set("tasks", "pf,gap").unwrap();
        cfg.set("lr", "0.0003").unwrap();
        cfg.set("windows", "10,30,50").unwrap();
        cfg.set("shift_mode", "up").unwrap();
        cfg.set("patience", "4").unwrap();
        let back = RunConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.train.importance.view.seed, 7);
        assert_eq!(RunConfig::parse(&RunConfig::default().to_text()).unwrap(), RunConfig::default());
        let text = cfg.to_text();
        let keys: Vec<&str> = text.lines().map(|l| l.split(" = ").next().unwrap()).collect();
        assert_eq!(keys, RunConfig::KEYS);
    }

    #[test]
    fn parse_reports_lines() {
        let err = RunConfig::parse("epochs = 3\n# note\n\nlr = fast\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 4, .. }), "{err}");
        assert!(RunConfig::parse("bogus = 1").is_err());
        assert!(RunConfig::parse("epochs 3").is_err());
        assert!(RunConfig::parse("tasks = gap").is_err());
        let cfg = RunConfig::parse("epochs = 3 # short\nuse_mi = false\nhorizon = 3").unwrap();
        assert_eq!((cfg.train.epochs, cfg.train.use_mi, cfg.strategy.horizon), (3, false, 3));
    }

    fn small() -> RunConfig {
        let mut cfg = RunConfig::default();
        for (k, v) in [
            ("n_series", "3"),
            ("n_times", "400"),
            ("blocks", "1"),
            ("shift_spacing", "40,60"),
            ("input_len", "12"),
            ("windows", "5,10,20"),
            ("stride", "10"),
            ("test_stride", "4"),
            ("channels", "4"),
            ("feature_dim", "6"),
            ("head_hidden", "5"),
            ("attn_dim", "4"),
            ("epochs", "1"),
            ("batch_size", "8"),
            ("split", "0.6,0.2,0.2"),
        ] {
            cfg.set(k, v).unwrap();
        }
        cfg
    }

    #[test]
    fn prepare_fits_on_training_columns() {
        let cfg = small();
        let (raw, _) = generate(&cfg).unwrap();
        let data = prepare(&raw, &cfg, None).unwrap();
        let train_len = data.normalized[0].n_times();
        assert_eq!(train_len, 240);
        for i in 0..3 {
            let mean = data.normalized[0].row(i).iter().sum::<f64>() / train_len as f64;
            assert!(mean.abs() < 1e-9);
            let back = data.normalization.denormalize(i, data.normalized[2].value(i, 0));
            assert!((back - raw.value(i, 320)).abs() < 1e-9 * raw.value(i, 320));
        }
        assert!(data.samples.iter().all(|s| !s.is_empty()));
        let again = prepare(&raw, &cfg, Some(&data.normalization)).unwrap();
        assert_eq!(again.samples, data.samples);
    }

    #[test]
    fn untrained_model_gives_finite_metrics() {
        let cfg = small();
        let (raw, _) = generate(&cfg).unwrap();
        let data = prepare(&raw, &cfg, None).unwrap();
        let ckpt = initial_checkpoint(&cfg, &data).unwrap();
        let net = StNetwork::from_params(ckpt.network, ckpt.params).unwrap();
        let report = evaluate(&net, &data).unwrap();
        for m in report.rows.values() {
            match m {
                TaskMetrics::Regression(r) => assert!(r.mae.is_finite() && r.rmse.is_finite()),
                TaskMetrics::Classification(c) => assert!(c.f1.is_finite()),
            }
        }
        // Anchored price head starts at the last observed value.
        assert_eq!(report.task(TaskId::Pf), report.rows.get(PERSISTENCE));
        let f = forecasts(&net, &data).unwrap();
        let p = &data.prices[2];
        assert!((f[0].prices[1] - p.value(1, f[0].at)).abs() < 1e-9 * p.value(1, f[0].at));
        let ledger = run_backtest(&net, &data, &cfg).unwrap();
        assert!(ledger.rebalances.is_empty());
        assert_eq!(mean_adjacency(&net, &data).unwrap().weights.rows(), 3);
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = small();
        let (raw, _) = generate(&cfg).unwrap();
        let data = prepare(&raw, &cfg, None).unwrap();
        let (a, ra) = train_model(&cfg, &data, None).unwrap();
        let (b, rb) = train_model(&cfg, &data, None).unwrap();
        assert_eq!(a.to_bytes().unwrap(), b.to_bytes().unwrap());
        assert_eq!(ra.log, rb.log);
        let (c, _) = train_model(&cfg, &data, Some(a.clone())).unwrap();
        assert_ne!(c.params, a.params);
    }
}
