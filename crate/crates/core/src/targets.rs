//! Ground-truth targets: gap dispersion, moving averages, optimal L2
//! segmentation with threshold labels, and per-window task targets.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::panel::{TimeSeriesPanel, WindowedDataset};
use crate::task::TaskId;

/// `(max - min) / len` of a window.
pub fn gap_target(window: &[f64]) -> Result<f64> {
    if window.len() < 2 {
        return Err(Error::Config(format!("gap window length {} < 2", window.len())));
    }
    let (lo, hi) = window
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    Ok((hi - lo) / window.len() as f64)
}

/// Discrete density over the `2M + 1` taps `-M..=M`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaKernel {
    taps: Vec<f64>,
}

impl MaKernel {
    pub fn uniform(half_width: usize) -> Self {
        let n = 2 * half_width + 1;
        Self {
            taps: vec![1.0 / n as f64; n],
        }
    }

    /// `taps[i]` weighs offset `i - M`; taps must be nonnegative and sum to 1.
    pub fn new(taps: Vec<f64>) -> Result<Self> {
        if taps.len() % 2 == 0
            || taps.iter().any(|&h| !(h >= 0.0))
            || (taps.iter().sum::<f64>() - 1.0).abs() > 1e-12
        {
            return Err(Error::Config(
                "kernel needs an odd number of nonnegative taps summing to 1".into(),
            ));
        }
        Ok(Self { taps })
    }

    pub fn half_width(&self) -> usize {
        self.taps.len() / 2
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }
}

/// Centered moving average `sum_i h(i) x(t - i)` for `i` in `-M..=M`.
pub fn moving_average(series: &[f64], t: usize, kernel: &MaKernel) -> Result<f64> {
    let m = kernel.half_width();
    if t < m || t + m >= series.len() {
        return Err(Error::InsufficientHistory {
            needed: 2 * m + 1,
            available: series.len().min(t + m + 1).saturating_sub(t.saturating_sub(m)),
        });
    }
    Ok(kernel
        .taps
        .iter()
        .enumerate()
        .map(|(k, h)| h * series[t + m - k])
        .sum())
}

/// Mean of the `window` values ending at index `t` (inclusive).
pub fn trailing_average(series: &[f64], t: usize, window: usize) -> Result<f64> {
    if window == 0 || t + 1 < window || t >= series.len() {
        return Err(Error::InsufficientHistory {
            needed: window,
            available: (t + 1).min(series.len()),
        });
    }
    Ok(series[t + 1 - window..=t].iter().sum::<f64>() / window as f64)
}

/// Shortest admissible segment.
pub const MIN_SEGMENT: usize = 2;

/// Optimal piecewise-constant fit.
///
/// A breakpoint `b` starts a new segment at index `b`; segments are
/// `[0, b_1), [b_1, b_2), ..., [b_K, len)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segmentation {
    pub breakpoints: Vec<usize>,
    pub segment_costs: Vec<f64>,
    pub total_cost: f64,
}

/// Sum of squared deviations from the mean.
pub fn l2_cost(x: &[f64]) -> f64 {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    x.iter().map(|v| (v - mean).powi(2)).sum()
}

/// Relative tolerance under which two segmentations count as tied.
const TIE_TOL: f64 = 1e-10;

/// Exact `K`-breakpoint L2 segmentation by dynamic programming. Among
/// (near-)optimal segmentations the lexicographically smallest breakpoint
/// list wins.
pub fn segment_dp(series: &[f64], n_breakpoints: usize) -> Result<Segmentation> {
    let n = series.len();
    let k = n_breakpoints;
    if n < (k + 1) * MIN_SEGMENT {
        return Err(Error::InfeasibleSegmentation {
            breakpoints: k,
            len: n,
            min_len: MIN_SEGMENT,
        });
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let mut s1 = vec![0.0; n + 1];
    let mut s2 = vec![0.0; n + 1];
    for (i, &v) in series.iter().enumerate() {
        let c = v - mean;
        s1[i + 1] = s1[i] + c;
        s2[i + 1] = s2[i] + c * c;
    }
    let cost = |a: usize, b: usize| {
        let d = s1[b] - s1[a];
        (s2[b] - s2[a] - d * d / (b - a) as f64).max(0.0)
    };
    let tol = TIE_TOL * (1.0 + s2[n]);

    // best[j][s]: optimal cost of x[s..n) cut into j + 1 segments.
    let inf = f64::INFINITY;
    let mut best = vec![vec![inf; n + 1]; k + 1];
    for s in 0..=n - MIN_SEGMENT {
        best[0][s] = cost(s, n);
    }
    for j in 1..=k {
        for s in 0..=n.saturating_sub((j + 1) * MIN_SEGMENT) {
            let mut b_best = inf;
            for b in s + MIN_SEGMENT..=n - j * MIN_SEGMENT {
                b_best = b_best.min(cost(s, b) + best[j - 1][b]);
            }
            best[j][s] = b_best;
        }
    }

    let mut breakpoints = Vec::with_capacity(k);
    let mut s = 0;
    for j in (1..=k).rev() {
        let target = best[j][s];
        let b = (s + MIN_SEGMENT..=n - j * MIN_SEGMENT)
            .find(|&b| cost(s, b) + best[j - 1][b] <= target + tol)
            .expect("optimum is attained");
        breakpoints.push(b);
        s = b;
    }
    Ok(segmentation_from(series, breakpoints))
}

/// Costs of the segmentation induced by `breakpoints`.
pub fn segmentation_from(series: &[f64], breakpoints: Vec<usize>) -> Segmentation {
    let mut bounds = vec![0];
    bounds.extend(&breakpoints);
    bounds.push(series.len());
    let segment_costs: Vec<f64> = bounds.windows(2).map(|w| l2_cost(&series[w[0]..w[1]])).collect();
    let total_cost = segment_costs.iter().sum();
    Segmentation {
        breakpoints,
        segment_costs,
        total_cost,
    }
}

/// Threshold labels, one per breakpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpdLabels {
    pub labels: Vec<u8>,
    pub threshold: f64,
}

/// Label of a breakpoint `b`: the reference is the last value before the
/// change, `x[b - 1]`; the label is 1 when the maximum of `x[b - 1..end)`
/// exceeds the reference by more than `eta` times the reference, where `end`
/// closes the new segment.
pub fn label_change_points(series: &[f64], seg: &Segmentation, eta: f64) -> Result<CpdLabels> {
    if !(eta > 0.0) {
        return Err(Error::Config(format!("threshold must be positive, got {eta}")));
    }
    let mut labels = Vec::with_capacity(seg.breakpoints.len());
    for (k, &b) in seg.breakpoints.iter().enumerate() {
        let end = seg.breakpoints.get(k + 1).copied().unwrap_or(series.len());
        if b == 0 || end > series.len() || b >= end {
            return Err(Error::Config(format!("breakpoint {b} out of range")));
        }
        let reference = series[b - 1];
        if !(reference > 0.0) {
            return Err(Error::NonPositivePrice {
                index: b - 1,
                value: reference,
            });
        }
        let peak = series[b - 1..end].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        labels.push(u8::from(peak - reference > eta * reference));
    }
    Ok(CpdLabels {
        labels,
        threshold: eta,
    })
}

/// Settings for target construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetConfig {
    /// Breakpoints sought per change-point window.
    pub breakpoints: usize,
    pub eta: f64,
}

impl Default for TargetConfig {
    fn default() -> Self {
        Self {
            breakpoints: 1,
            eta: 0.02,
        }
    }
}

/// Per-sample supervision for one task.
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    /// One class index per node.
    Classes(Vec<usize>),
    /// `[N, width]` regression target.
    Values(Tensor),
}

/// One window with its targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub origin: usize,
    pub input: Tensor,
    pub targets: BTreeMap<TaskId, Target>,
}

impl Sample {
    pub fn target(&self, task: TaskId) -> Result<&Target> {
        self.targets
            .get(&task)
            .ok_or_else(|| Error::UnknownTask(format!("no {task} target for sample at {}", self.origin)))
    }
}

/// Task targets for every window of `dataset`. `normalized` feeds the
/// regression targets; change-point labels use raw `prices`. A sample is
/// labelled 1 for a node when any breakpoint in its window is labelled 1.
pub fn build_task_targets(
    normalized: &TimeSeriesPanel,
    prices: &TimeSeriesPanel,
    task: TaskId,
    dataset: &WindowedDataset,
    cfg: &TargetConfig,
) -> Result<Vec<Target>> {
    let g = dataset.geometry;
    let n = normalized.n_series();
    if prices.n_series() != n || prices.n_times() != normalized.n_times() {
        return Err(Error::shape("targets", "price and normalized panels differ"));
    }
    dataset
        .origins
        .iter()
        .map(|&t| {
            let per_node = |f: &dyn Fn(&[f64]) -> Result<f64>| -> Result<Tensor> {
                let vals = (0..n).map(|i| f(normalized.row(i))).collect::<Result<Vec<_>>>()?;
                Tensor::new(vec![n, 1], vals)
            };
            Ok(match task {
                TaskId::Pf => Target::Values(normalized.window(t, g.horizon)),
                TaskId::Gap => Target::Values(per_node(&|r| gap_target(&r[t..t + g.gap_window]))?),
                TaskId::Ma => Target::Values(per_node(&|r| trailing_average(r, t, g.ma_window))?),
                TaskId::Cpd => {
                    let classes = (0..n)
                        .map(|i| {
                            let w = &prices.row(i)[t..t + g.cpd_window];
                            let seg = segment_dp(w, cfg.breakpoints)?;
                            let labels = label_change_points(w, &seg, cfg.eta)?;
                            Ok(usize::from(labels.labels.contains(&1)))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    Target::Classes(classes)
                }
            })
        })
        .collect()
}

/// Inputs and targets of every window for the listed tasks.
pub fn build_samples(
    normalized: &TimeSeriesPanel,
    prices: &TimeSeriesPanel,
    dataset: &WindowedDataset,
    tasks: &[TaskId],
    cfg: &TargetConfig,
) -> Result<Vec<Sample>> {
    let mut per_task = tasks
        .iter()
        .map(|&task| Ok((task, build_task_targets(normalized, prices, task, dataset, cfg)?.into_iter())))
        .collect::<Result<Vec<_>>>()?;
    Ok((0..dataset.len())
        .map(|k| Sample {
            origin: dataset.origins[k],
            input: dataset.input(normalized, k),
            targets: per_task
                .iter_mut()
                .map(|(task, it)| (*task, it.next().expect("one target per window")))
                .collect(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::panel::{synthesize, ShiftMode, SplitTag, SynthConfig, TimeAxis, WindowGeometry};

    /// All segmentations in lexicographic order of their breakpoint lists.
    pub(crate) fn brute_force(x: &[f64], k: usize) -> Segmentation {
        fn rec(x: &[f64], start: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
            if left == 0 {
                if x.len() - start >= MIN_SEGMENT {
                    out.push(cur.clone());
                }
                return;
            }
            for b in start + MIN_SEGMENT..=x.len() {
                cur.push(b);
                rec(x, b, left - 1, cur, out);
                cur.pop();
            }
        }
        let mut all = Vec::new();
        rec(x, 0, k, &mut Vec::new(), &mut all);
        let scale = 1.0 + l2_cost(x);
        let mut best: Option<Segmentation> = None;
        for bps in all {
            let s = segmentation_from(x, bps);
            if best.as_ref().is_none_or(|b| s.total_cost < b.total_cost - TIE_TOL * scale) {
                best = Some(s);
            }
        }
        best.unwrap()
    }

    #[test]
    fn gap_examples() {
        assert_eq!(gap_target(&[2.0; 5]).unwrap(), 0.0);
        assert_eq!(gap_target(&[1.0, 3.0, 2.0, 5.0]).unwrap(), 1.0);
        assert!(gap_target(&[1.0]).is_err());
    }

    #[test]
    fn moving_average_examples() {
        let k = MaKernel::uniform(1);
        assert!((moving_average(&[1.0, 2.0, 3.0], 1, &k).unwrap() - 2.0).abs() < 1e-15);
        assert!((moving_average(&[4.5; 9], 4, &MaKernel::uniform(3)).unwrap() - 4.5).abs() < 1e-15);
        assert!(matches!(
            moving_average(&[1.0, 2.0, 3.0], 0, &k),
            Err(Error::InsufficientHistory { .. })
        ));
        assert!(MaKernel::new(vec![0.5, 0.6, -0.1]).is_err());
        let skew = MaKernel::new(vec![0.0, 0.0, 1.0]).unwrap(); // h(1) = 1
        assert_eq!(moving_average(&[1.0, 2.0, 3.0], 1, &skew).unwrap(), 1.0);
    }

    #[test]
    fn moving_average_matches_windowed_mean() {
        let mut r = ChaCha8Rng::seed_from_u64(0);
        let x: Vec<f64> = (0..30).map(|_| r.random_range(-5.0..5.0)).collect();
        let k = MaKernel::uniform(3);
        for t in 3..27 {
            let mut s = 0.0;
            for v in &x[t - 3..=t + 3] {
                s += v;
            }
            assert!((moving_average(&x, t, &k).unwrap() - s / 7.0).abs() < 1e-12);
        }
        assert!((trailing_average(&x, 6, 7).unwrap() - moving_average(&x, 3, &k).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn segmentation_examples() {
        let s = segment_dp(&[0.0, 0.0, 0.0, 10.0, 10.0, 10.0], 1).unwrap();
        assert_eq!(s.breakpoints, vec![3]);
        assert_eq!(s.total_cost, 0.0);
        let x = [1.0, 4.0, 2.0, 8.0];
        let s0 = segment_dp(&x, 0).unwrap();
        assert!(s0.breakpoints.is_empty());
        assert!((s0.total_cost - l2_cost(&x)).abs() < 1e-12);
        assert!(matches!(
            segment_dp(&x, 2),
            Err(Error::InfeasibleSegmentation { .. })
        ));
    }

    #[test]
    fn ties_break_to_earliest() {
        // Constant series: every split has cost 0.
        let s = segment_dp(&[3.0; 8], 2).unwrap();
        assert_eq!(s.breakpoints, vec![2, 4]);
    }

    #[test]
    fn minimum_length_can_make_an_extra_breakpoint_cost_more() {
        // K = 2 forces [0,10] [10,0] [0,10], 50 each; K = 1 splits 3 + 3 at
        // 200/3 each.
        let x = [0.0, 10.0, 10.0, 0.0, 0.0, 10.0];
        let one = segment_dp(&x, 1).unwrap().total_cost;
        let two = segment_dp(&x, 2).unwrap().total_cost;
        assert!((one - 400.0 / 3.0).abs() < 1e-9);
        assert!((two - 150.0).abs() < 1e-9);
    }

    #[test]
    fn labels_follow_threshold() {
        let seg = |b| segmentation_from(&[0.0; 4], vec![b]);
        let up = [100.0, 100.0, 103.0, 102.0];
        assert_eq!(label_change_points(&up, &seg(2), 0.02).unwrap().labels, vec![1]);
        let flat = [100.0, 100.0, 101.0, 100.5];
        assert_eq!(label_change_points(&flat, &seg(2), 0.02).unwrap().labels, vec![0]);
        let down = [100.0, 99.0, 98.0, 97.0];
        assert_eq!(label_change_points(&down, &seg(2), 1e-9).unwrap().labels, vec![0]);
        let neg = [1.0, -1.0, 2.0, 3.0];
        assert!(matches!(
            label_change_points(&neg, &seg(2), 0.02),
            Err(Error::NonPositivePrice { index: 1, .. })
        ));
    }

    #[test]
    fn window_targets() {
        let t = 200;
        let rows = vec![vec![1.5; t], (0..t).map(|k| k as f64).collect()];
        let p = TimeSeriesPanel::dense(vec!["a".into(), "b".into()], (0..t as i64).collect(), TimeAxis::Ticks, rows)
            .unwrap();
        let g = WindowGeometry {
            horizon: 1,
            ..WindowGeometry::default()
        };
        let ds = WindowedDataset::new(&p, g, SplitTag::Train).unwrap();
        let cfg = TargetConfig::default();
        let pf = build_task_targets(&p, &p, TaskId::Pf, &ds, &cfg).unwrap();
        let Target::Values(v) = &pf[0] else { panic!() };
        assert_eq!(v.shape(), &[2, 1]);
        assert_eq!(v.at(1, 0), ds.origins[0] as f64);
        let gap = build_task_targets(&p, &p, TaskId::Gap, &ds, &cfg).unwrap();
        let Target::Values(v) = &gap[3] else { panic!() };
        assert_eq!(v.at(0, 0), 0.0);
        assert_eq!(v.at(1, 0), 19.0 / 20.0);
        let ma = build_task_targets(&p, &p, TaskId::Ma, &ds, &cfg).unwrap();
        let Target::Values(v) = &ma[0] else { panic!() };
        assert_eq!(v.at(1, 0), ds.origins[0] as f64 - 19.5);
    }

    #[test]
    fn planted_up_shifts_are_labelled() {
        let cfg = SynthConfig {
            n_series: 4,
            n_times: 1_500,
            noise: 0.0005,
            shift_mode: ShiftMode::Alternating,
            ..SynthConfig::default()
        };
        let (panel, truth) = synthesize(&cfg, 11).unwrap();
        let g = WindowGeometry::default();
        let ds = WindowedDataset::new(&panel, g, SplitTag::Train).unwrap();
        let labels = build_task_targets(&panel, &panel, TaskId::Cpd, &ds, &TargetConfig::default()).unwrap();
        let (mut checked, mut agree) = (0, 0);
        for (k, &t) in ds.origins.iter().enumerate() {
            let Target::Classes(c) = &labels[k] else { panic!() };
            for i in 0..4 {
                let inside: Vec<usize> = truth.change_points[i]
                    .iter()
                    .copied()
                    .filter(|&cp| cp > t + 1 && cp < t + g.cpd_window - 1)
                    .collect();
                if let [cp] = inside[..] {
                    let up = panel.value(i, cp) > panel.value(i, cp - 1);
                    checked += 1;
                    agree += usize::from((c[i] == 1) == up);
                }
            }
        }
        assert!(checked > 100);
        assert_eq!(agree, checked);
    }

    proptest! {
        #[test]
        fn dp_matches_brute_force(
            x in prop::collection::vec(-10.0f64..10.0, 2..=12),
            k in 0usize..=3,
        ) {
            prop_assume!(x.len() >= (k + 1) * MIN_SEGMENT);
            let dp = segment_dp(&x, k).unwrap();
            let bf = brute_force(&x, k);
            prop_assert_eq!(&dp.breakpoints, &bf.breakpoints);
            prop_assert!((dp.total_cost - bf.total_cost).abs() < 1e-9);
            let sum: f64 = dp.segment_costs.iter().sum();
            prop_assert!((sum - dp.total_cost).abs() < 1e-9);
        }

        #[test]
        fn more_breakpoints_never_cost_more_with_room(
            x in prop::collection::vec(-10.0f64..10.0, 8..=12),
            k in 0usize..=2,
        ) {
            // Nonincreasing in K only while K + 1 breakpoints leave room for
            // a split of any segment: length >= 2 * MIN_SEGMENT * (K + 1).
            prop_assume!(x.len() >= 2 * MIN_SEGMENT * (k + 1));
            let a = segment_dp(&x, k).unwrap().total_cost;
            let b = segment_dp(&x, k + 1).unwrap().total_cost;
            prop_assert!(b <= a + 1e-9);
        }

        #[test]
        fn splitting_never_raises_cost(x in prop::collection::vec(-10.0f64..10.0, 8..=20), k in 1usize..=3) {
            let whole = l2_cost(&x);
            let c = segment_dp(&x, k).unwrap().total_cost;
            prop_assert!(c >= 0.0 && c <= whole + 1e-9);
        }

        #[test]
        fn ma_affine_and_gap_translation(
            x in prop::collection::vec(-10.0f64..10.0, 9..20),
            a in -3.0f64..3.0,
            b in -5.0f64..5.0,
        ) {
            let k = MaKernel::uniform(2);
            let y: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            let t = x.len() / 2;
            let lhs = moving_average(&y, t, &k).unwrap();
            let rhs = a * moving_average(&x, t, &k).unwrap() + b;
            prop_assert!((lhs - rhs).abs() < 1e-9);
            let shifted: Vec<f64> = x.iter().map(|v| v + b).collect();
            prop_assert!((gap_target(&shifted).unwrap() - gap_target(&x).unwrap()).abs() < 1e-12);
        }
    }
}
