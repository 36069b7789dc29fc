//! Real DFT as explicit linear maps. Lengths here are window sizes (tens of
//! samples), where a cached dense basis beats an FFT plan.

use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::rc::Rc;

pub(crate) struct DftBasis {
    len: usize,
    bins: usize,
    cos: Vec<f64>,
    sin: Vec<f64>,
    /// Hermitian completion weights: 1 for DC (and Nyquist), 2 otherwise.
    weight: Vec<f64>,
}

thread_local! {
    static CACHE: RefCell<HashMap<usize, Rc<DftBasis>>> = RefCell::new(HashMap::new());
}

pub(crate) fn basis(len: usize) -> Rc<DftBasis> {
    CACHE.with(|c| {
        Rc::clone(
            c.borrow_mut()
                .entry(len)
                .or_insert_with(|| Rc::new(DftBasis::new(len))),
        )
    })
}

impl DftBasis {
    fn new(len: usize) -> Self {
        let bins = len / 2 + 1;
        let mut cos = vec![0.0; bins * len];
        let mut sin = vec![0.0; bins * len];
        for k in 0..bins {
            for n in 0..len {
                // Reduce k*n mod len first so large products keep full precision.
                let phase = 2.0 * PI * ((k * n) % len) as f64 / len as f64;
                cos[k * len + n] = phase.cos();
                sin[k * len + n] = phase.sin();
            }
        }
        let weight = (0..bins)
            .map(|k| if k == 0 || 2 * k == len { 1.0 } else { 2.0 })
            .collect();
        Self {
            len,
            bins,
            cos,
            sin,
            weight,
        }
    }

    pub(crate) fn bins(&self) -> usize {
        self.bins
    }

    /// `X_k = sum_n x_n exp(-2 pi i k n / len)` for `k < bins`.
    pub(crate) fn forward(&self, x: &[f64], re: &mut [f64], im: &mut [f64]) {
        for k in 0..self.bins {
            let c = &self.cos[k * self.len..(k + 1) * self.len];
            let s = &self.sin[k * self.len..(k + 1) * self.len];
            re[k] = x.iter().zip(c).map(|(a, b)| a * b).sum();
            im[k] = -x.iter().zip(s).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    pub(crate) fn forward_adjoint(&self, g_re: &[f64], g_im: &[f64], gx: &mut [f64]) {
        for k in 0..self.bins {
            let c = &self.cos[k * self.len..(k + 1) * self.len];
            let s = &self.sin[k * self.len..(k + 1) * self.len];
            for n in 0..self.len {
                gx[n] += g_re[k] * c[n] - g_im[k] * s[n];
            }
        }
    }

    pub(crate) fn inverse(&self, re: &[f64], im: &[f64], x: &mut [f64]) {
        let inv = 1.0 / self.len as f64;
        x.iter_mut().for_each(|v| *v = 0.0);
        for k in 0..self.bins {
            let c = &self.cos[k * self.len..(k + 1) * self.len];
            let s = &self.sin[k * self.len..(k + 1) * self.len];
            let (a, b) = (self.weight[k] * inv * re[k], self.weight[k] * inv * im[k]);
            for n in 0..self.len {
                x[n] += a * c[n] - b * s[n];
            }
        }
    }

    pub(crate) fn inverse_adjoint(&self, gx: &[f64], g_re: &mut [f64], g_im: &mut [f64]) {
        let inv = 1.0 / self.len as f64;
        for k in 0..self.bins {
            let c = &self.cos[k * self.len..(k + 1) * self.len];
            let s = &self.sin[k * self.len..(k + 1) * self.len];
            let w = self.weight[k] * inv;
            g_re[k] += w * gx.iter().zip(c).map(|(a, b)| a * b).sum::<f64>();
            g_im[k] -= w * gx.iter().zip(s).map(|(a, b)| a * b).sum::<f64>();
        }
    }
}
