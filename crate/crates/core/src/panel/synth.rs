use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{TimeAxis, TimeSeriesPanel};
use crate::error::{Error, Result};

/// Sign pattern of planted level shifts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShiftMode {
    /// Every shift moves the level up.
    Up,
    /// Shifts alternate up and down, starting with a random sign.
    Alternating,
    /// Independent random signs.
    Random,
}

/// Generator parameters for correlated price panels with planted shifts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_series: usize,
    pub n_times: usize,
    /// Series are split into this many contiguous, equally correlated blocks.
    pub blocks: usize,
    /// Correlation of noise increments within a block.
    pub within_corr: f64,
    /// Standard deviation of log-price noise increments.
    pub noise: f64,
    /// Mean-reversion coefficient of the log-price noise, in `[0, 1)`.
    pub ar_coef: f64,
    /// Relative size of each planted shift.
    pub shift_size: f64,
    /// Inclusive bounds on the spacing between consecutive shifts.
    pub shift_spacing: (usize, usize),
    pub shift_mode: ShiftMode,
    pub max_shifts: Option<usize>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_series: 20,
            n_times: 2_000,
            blocks: 4,
            within_corr: 0.6,
            noise: 0.002,
            ar_coef: 0.9,
            shift_size: 0.05,
            shift_spacing: (150, 250),
            shift_mode: ShiftMode::Alternating,
            max_shifts: None,
        }
    }
}

/// Ground truth of a synthetic panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedTruth {
    /// Correlation matrix of the noise increments.
    pub correlation: Vec<Vec<f64>>,
    /// Per series, the time indices where a new level starts.
    pub change_points: Vec<Vec<usize>>,
}

impl PlantedTruth {
    pub fn block_of(&self, i: usize, j: usize) -> bool {
        i != j && self.correlation[i][j] > 0.0
    }
}

/// Deterministic synthetic panel with integer-tick timestamps.
pub fn synthesize(cfg: &SynthConfig, seed: u64) -> Result<(TimeSeriesPanel, PlantedTruth)> {
    let (n, t) = (cfg.n_series, cfg.n_times);
    let (lo, hi) = cfg.shift_spacing;
    if n == 0 || t == 0 || cfg.blocks == 0 || lo == 0 || lo > hi {
        return Err(Error::Config(format!("invalid synthetic config {cfg:?}")));
    }
    if !(0.0..1.0).contains(&cfg.ar_coef) || !(0.0..1.0).contains(&cfg.within_corr) {
        return Err(Error::Config("ar_coef and within_corr must lie in [0, 1)".into()));
    }
    if !(cfg.noise >= 0.0 && cfg.shift_size > -1.0) {
        return Err(Error::Config("noise must be >= 0 and shift_size > -1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let block = |i: usize| i * cfg.blocks / n;
    let corr = DMatrix::from_fn(n, n, |i, j| match (i == j, block(i) == block(j)) {
        (true, _) => 1.0,
        (false, true) => cfg.within_corr,
        _ => 0.0,
    });
    let chol = corr
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Config("correlation matrix not positive definite".into()))?
        .unpack();

    let mut change_points = vec![Vec::new(); n];
    let step = (1.0 + cfg.shift_size).ln();
    let mut levels = vec![vec![0.0; t]; n];
    for (i, cps) in change_points.iter_mut().enumerate() {
        let mut sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let mut at = rng.random_range(lo..=hi);
        let mut level = 0.0;
        let mut last = 0;
        while at < t && cfg.max_shifts.is_none_or(|m| cps.len() < m) {
            levels[i][last..at].fill(level);
            let s = match cfg.shift_mode {
                ShiftMode::Up => 1.0,
                ShiftMode::Alternating => {
                    sign = -sign;
                    -sign
                }
                ShiftMode::Random => {
                    if rng.random_bool(0.5) {
                        1.0
                    } else {
                        -1.0
                    }
                }
            };
            level += s * step;
            cps.push(at);
            last = at;
            at += rng.random_range(lo..=hi);
        }
        levels[i][last..].fill(level);
    }

    let bases: Vec<f64> = (0..n).map(|_| rng.random_range(50.0..150.0)).collect();
    let stationary = (1.0 - cfg.ar_coef * cfg.ar_coef).sqrt();
    let mut state = vec![0.0; n];
    let mut values = vec![vec![0.0; t]; n];
    for k in 0..t {
        let z = nalgebra::DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
        let e = &chol * z;
        for i in 0..n {
            state[i] = if k == 0 {
                cfg.noise * e[i] / stationary
            } else {
                cfg.ar_coef * state[i] + cfg.noise * e[i]
            };
            values[i][k] = bases[i] * (levels[i][k] + state[i]).exp();
        }
    }

    let symbols = (0..n).map(|i| format!("S{i:03}")).collect();
    let panel = TimeSeriesPanel::dense(symbols, (0..t as i64).collect(), TimeAxis::Ticks, values)?;
    let correlation = (0..n).map(|i| (0..n).map(|j| corr[(i, j)]).collect()).collect();
    Ok((
        panel,
        PlantedTruth {
            correlation,
            change_points,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_panel() {
        let cfg = SynthConfig {
            n_series: 5,
            n_times: 300,
            ..SynthConfig::default()
        };
        let (a, ta) = synthesize(&cfg, 3).unwrap();
        let (b, tb) = synthesize(&cfg, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        let (c, _) = synthesize(&cfg, 4).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn noiseless_shift_is_the_only_jump() {
        let cfg = SynthConfig {
            n_series: 3,
            n_times: 200,
            noise: 0.0,
            shift_spacing: (80, 120),
            max_shifts: Some(1),
            ..SynthConfig::default()
        };
        let (p, truth) = synthesize(&cfg, 9).unwrap();
        for i in 0..3 {
            let cp = truth.change_points[i][0];
            let row = p.row(i);
            let jumps: Vec<usize> = (1..200).filter(|&k| row[k] != row[k - 1]).collect();
            assert_eq!(jumps, vec![cp]);
            let ratio = row[cp] / row[cp - 1];
            assert!((ratio - 1.05).abs() < 1e-12 || (ratio - 1.0 / 1.05).abs() < 1e-12);
        }
    }

    #[test]
    fn alternating_shifts_return_to_base() {
        let cfg = SynthConfig {
            n_series: 2,
            n_times: 1_000,
            noise: 0.0,
            shift_spacing: (100, 100),
            ..SynthConfig::default()
        };
        let (p, truth) = synthesize(&cfg, 1).unwrap();
        assert_eq!(truth.change_points[0], (1..10).map(|k| k * 100).collect::<Vec<_>>());
        assert!((p.value(0, 250) - p.value(0, 50)).abs() < 1e-9);
    }

    #[test]
    fn correlation_is_block_structured() {
        let cfg = SynthConfig {
            n_series: 8,
            n_times: 10,
            blocks: 2,
            ..SynthConfig::default()
        };
        let (_, truth) = synthesize(&cfg, 0).unwrap();
        assert!(truth.block_of(0, 3) && !truth.block_of(3, 4) && !truth.block_of(2, 2));
    }
}
