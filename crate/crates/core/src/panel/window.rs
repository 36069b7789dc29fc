use serde::{Deserialize, Serialize};

use super::TimeSeriesPanel;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Validation,
    Test,
}

/// Window lengths shared by the inputs and every task target.
///
/// A sample with origin `t` sees columns `[t - input_len, t)`; targets look
/// at columns from `t` onward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowGeometry {
    pub input_len: usize,
    /// Number of future steps forecast.
    pub horizon: usize,
    pub gap_window: usize,
    pub ma_window: usize,
    pub cpd_window: usize,
    /// Distance between consecutive origins.
    pub stride: usize,
}

impl Default for WindowGeometry {
    fn default() -> Self {
        Self {
            input_len: 40,
            horizon: 2,
            gap_window: 20,
            ma_window: 40,
            cpd_window: 60,
            stride: 1,
        }
    }
}

impl WindowGeometry {
    /// Columns needed after the origin.
    pub fn lookahead(&self) -> usize {
        self.horizon.max(self.gap_window).max(self.cpd_window).max(1)
    }

    /// Columns needed before the origin.
    pub fn lookback(&self) -> usize {
        self.input_len.max(self.ma_window.saturating_sub(1))
    }

    /// Every origin usable on a panel of `len` columns.
    pub fn origins(&self, len: usize) -> Vec<usize> {
        let (back, ahead) = (self.lookback(), self.lookahead());
        if len < back + ahead {
            return Vec::new();
        }
        (back..=len - ahead).step_by(self.stride.max(1)).collect()
    }
}

/// Sample origins over one split; inputs are sliced from the panel on demand.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDataset {
    pub split: SplitTag,
    pub geometry: WindowGeometry,
    pub origins: Vec<usize>,
}

impl WindowedDataset {
    pub fn new(panel: &TimeSeriesPanel, geometry: WindowGeometry, split: SplitTag) -> Result<Self> {
        if geometry.input_len == 0 || geometry.horizon == 0 {
            return Err(Error::Config("input_len and horizon must be positive".into()));
        }
        let origins = geometry.origins(panel.n_times());
        if origins.is_empty() {
            return Err(Error::InsufficientHistory {
                needed: geometry.lookback() + geometry.lookahead(),
                available: panel.n_times(),
            });
        }
        Ok(Self {
            split,
            geometry,
            origins,
        })
    }

    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }

    /// `N x input_len` input of sample `k`.
    pub fn input(&self, panel: &TimeSeriesPanel, k: usize) -> Tensor {
        let len = self.geometry.input_len;
        panel.window(self.origins[k] - len, len)
    }
}
