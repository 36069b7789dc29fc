//! `factorgnn`: generate, train, eval, backtest, segment and report.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use factorgnn::checkpoint::Checkpoint;
use factorgnn::eval::{emit_report, write_ledger_csv, ReportPaths};
use factorgnn::network::StNetwork;
use factorgnn::panel::{ingest_csv, ColumnMapping, TimeSeriesPanel};
use factorgnn::pipeline::{
    evaluate, generate, initial_checkpoint, mean_adjacency, prepare, run_backtest, train_model, Prepared,
    RunConfig,
};
use factorgnn::targets::{label_change_points, segment_dp};
use factorgnn::trainer::write_log_csv;

use manifest::RunManifest;

#[derive(Parser)]
#[command(name = "factorgnn", version, about = "Continual graph-network factor prediction pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run config of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, created if absent.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Extra `key=value` overrides, applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args, Clone)]
struct Data {
    /// Price panel CSV with `timestamp,symbol,price` columns.
    #[arg(long)]
    input: PathBuf,
}

#[derive(Args, Clone)]
struct Model {
    /// Checkpoint written by `train`; an untrained model when omitted.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Writes a synthetic panel and its planted truth.
    Generate {
        #[command(flatten)]
        common: Common,
        /// Number of series.
        #[arg(long)]
        n: Option<usize>,
        /// Number of ticks.
        #[arg(long)]
        t: Option<usize>,
        /// Log-price noise scale.
        #[arg(long)]
        noise: Option<f64>,
    },
    /// Trains the network and writes a checkpoint and a training log.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: Data,
        /// Comma-separated task subset; `pf` is required.
        #[arg(long)]
        tasks: Option<String>,
        /// Importance from loss gradients instead of contrastive estimates.
        #[arg(long)]
        no_mi: bool,
        /// Overrides the configured epoch count.
        #[arg(long)]
        epochs: Option<usize>,
        /// Continues training from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Scores a checkpoint on the test split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: Data,
        #[command(flatten)]
        model: Model,
    },
    /// Runs the top-K long/short strategy on test-split forecasts.
    Backtest {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: Data,
        #[command(flatten)]
        model: Model,
    },
    /// Segments every raw price series and labels its change points.
    Segment {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: Data,
        /// Breakpoints per series.
        #[arg(long, default_value_t = 1)]
        k: usize,
    },
    /// Writes metrics, ledger and charts for a checkpoint.
    Report {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: Data,
        #[command(flatten)]
        model: Model,
    },
}

/// Bad flags or configuration; exits with code 2.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(e: impl std::fmt::Display) -> anyhow::Error {
    Usage(e.to_string()).into()
}

/// Defaults, then the config file, then `--set` and flag overrides.
fn resolve(common: &Common, flags: &[(&str, String)]) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            RunConfig::parse(&text).map_err(|e| usage(format!("{}: {e}", p.display())))?
        }
        None => RunConfig::default(),
    };
    let mut pairs: Vec<(String, String)> = Vec::new();
    for o in &common.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| usage(format!("--set expects KEY=VALUE, got `{o}`")))?;
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    if let Some(s) = common.seed {
        pairs.push(("seed".into(), s.to_string()));
    }
    pairs.extend(flags.iter().map(|(k, v)| (k.to_string(), v.clone())));
    for (k, v) in pairs {
        cfg.set(&k, &v).map_err(usage)?;
    }
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

fn start(cmd: &str, common: &Common, cfg: &RunConfig) -> Result<RunManifest> {
    fs::create_dir_all(&common.out).with_context(|| format!("creating {}", common.out.display()))?;
    Ok(RunManifest::new(
        cmd,
        common.config.as_deref(),
        cfg.train.seed,
        &cfg.to_text(),
        &common.out,
    ))
}

fn load_panel(data: &Data, manifest: &mut RunManifest) -> Result<TimeSeriesPanel> {
    manifest.add_input(&data.input)?;
    Ok(ingest_csv(&data.input, &ColumnMapping::default())?)
}

fn load_model(model: &Model, raw: &TimeSeriesPanel, cfg: &RunConfig, manifest: &mut RunManifest) -> Result<(StNetwork, Prepared)> {
    match &model.checkpoint {
        Some(path) => {
            manifest.add_input(path)?;
            let ckpt = Checkpoint::load(path)?;
            let data = prepare(raw, cfg, Some(&ckpt.normalization))?;
            if ckpt.network.input_len != cfg.geometry.input_len || ckpt.network.horizon != cfg.geometry.horizon {
                bail!(
                    "checkpoint expects input_len {} and horizon {}, config has {} and {}",
                    ckpt.network.input_len,
                    ckpt.network.horizon,
                    cfg.geometry.input_len,
                    cfg.geometry.horizon
                );
            }
            Ok((StNetwork::from_params(ckpt.network, ckpt.params)?, data))
        }
        None => {
            let data = prepare(raw, cfg, None)?;
            let ckpt = initial_checkpoint(cfg, &data)?;
            Ok((StNetwork::from_params(ckpt.network, ckpt.params)?, data))
        }
    }
}

#[derive(Serialize)]
struct BacktestSummary {
    rebalances: usize,
    positions: usize,
    skipped: usize,
    long_pnl: f64,
    short_pnl: f64,
    total_costs: f64,
    final_return: f64,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { common, n, t, noise } => {
            let mut flags = Vec::new();
            flags.extend(n.map(|v| ("n_series", v.to_string())));
            flags.extend(t.map(|v| ("n_times", v.to_string())));
            flags.extend(noise.map(|v| ("noise", v.to_string())));
            let cfg = resolve(&common, &flags)?;
            let m = start("generate", &common, &cfg)?;
            let (panel, truth) = generate(&cfg)?;
            let (panel_path, truth_path) = (common.out.join("panel.csv"), common.out.join("truth.json"));
            panel.write_csv(&panel_path)?;
            write_json(&truth_path, &truth)?;
            m.finish(&common.out, &[panel_path, truth_path])?;
        }
        Command::Train {
            common,
            data,
            tasks,
            no_mi,
            epochs,
            resume,
        } => {
            let mut flags = Vec::new();
            flags.extend(tasks.map(|v| ("tasks", v)));
            flags.extend(epochs.map(|v| ("epochs", v.to_string())));
            if no_mi {
                flags.push(("use_mi", "false".into()));
            }
            let cfg = resolve(&common, &flags)?;
            let mut m = start("train", &common, &cfg)?;
            let raw = load_panel(&data, &mut m)?;
            let resume = match &resume {
                Some(p) => {
                    m.add_input(p)?;
                    Some(Checkpoint::load(p)?)
                }
                None => None,
            };
            let prepared = prepare(&raw, &cfg, resume.as_ref().map(|c| &c.normalization))?;
            log::info!(
                "{} train, {} validation, {} test samples",
                prepared.train().len(),
                prepared.validation().len(),
                prepared.test().len()
            );
            let (ckpt, report) = train_model(&cfg, &prepared, resume)?;
            let (ckpt_path, log_path) = (common.out.join("model.ckpt"), common.out.join("train_log.csv"));
            ckpt.save(&ckpt_path)?;
            write_log_csv(&log_path, &report.log)?;
            m.finish(&common.out, &[ckpt_path, log_path])?;
        }
        Command::Eval { common, data, model } => {
            let cfg = resolve(&common, &[])?;
            let mut m = start("eval", &common, &cfg)?;
            let raw = load_panel(&data, &mut m)?;
            let (net, prepared) = load_model(&model, &raw, &cfg, &mut m)?;
            let metrics = evaluate(&net, &prepared)?;
            let path = common.out.join("metrics.csv");
            metrics.write_csv(&path)?;
            m.finish(&common.out, &[path])?;
        }
        Command::Backtest { common, data, model } => {
            let cfg = resolve(&common, &[])?;
            let mut m = start("backtest", &common, &cfg)?;
            let raw = load_panel(&data, &mut m)?;
            let (net, prepared) = load_model(&model, &raw, &cfg, &mut m)?;
            let ledger = run_backtest(&net, &prepared, &cfg)?;
            let (ledger_path, summary_path) = (common.out.join("ledger.csv"), common.out.join("backtest.json"));
            write_ledger_csv(&ledger_path, &ledger, &prepared.prices[2], cfg.strategy.cost)?;
            write_json(
                &summary_path,
                &BacktestSummary {
                    rebalances: ledger.rebalances.len(),
                    positions: ledger.rebalances.iter().map(|r| r.positions.len()).sum(),
                    skipped: ledger.skipped,
                    long_pnl: ledger.long_pnl,
                    short_pnl: ledger.short_pnl,
                    total_costs: ledger.total_costs,
                    final_return: ledger.final_return(),
                },
            )?;
            m.finish(&common.out, &[ledger_path, summary_path])?;
        }
        Command::Segment { common, data, k } => {
            let cfg = resolve(&common, &[])?;
            let mut m = start("segment", &common, &cfg)?;
            let raw = load_panel(&data, &mut m)?;
            if raw.missing_count() > 0 {
                bail!("segmentation needs a panel without missing cells");
            }
            let path = common.out.join("segments.csv");
            let mut w = csv::Writer::from_path(&path)?;
            w.write_record(["symbol", "breakpoint", "timestamp", "label", "segment_cost"])?;
            for (i, sym) in raw.symbols().iter().enumerate() {
                let seg = segment_dp(raw.row(i), k)?;
                let labels = label_change_points(raw.row(i), &seg, cfg.targets.eta)?;
                // Segment k + 1 starts at breakpoint k.
                for (k, (b, l)) in seg.breakpoints.iter().zip(&labels.labels).enumerate() {
                    w.write_record([
                        sym.clone(),
                        b.to_string(),
                        raw.timestamps()[*b].to_string(),
                        l.to_string(),
                        seg.segment_costs[k + 1].to_string(),
                    ])?;
                }
            }
            w.flush()?;
            drop(w);
            m.finish(&common.out, &[path])?;
        }
        Command::Report { common, data, model } => {
            let cfg = resolve(&common, &[])?;
            let mut m = start("report", &common, &cfg)?;
            let raw = load_panel(&data, &mut m)?;
            let (net, prepared) = load_model(&model, &raw, &cfg, &mut m)?;
            let metrics = evaluate(&net, &prepared)?;
            let ledger = run_backtest(&net, &prepared, &cfg)?;
            let adjacency = mean_adjacency(&net, &prepared)?;
            let paths = ReportPaths::in_dir(&common.out);
            emit_report(
                &metrics,
                &ledger,
                &prepared.prices[2],
                &cfg.strategy,
                &adjacency.weights,
                &paths,
            )?;
            let outputs: Vec<PathBuf> = paths.all().iter().map(|p| p.to_path_buf()).collect();
            m.finish(&common.out, &outputs)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<Usage>() => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
