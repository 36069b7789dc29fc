//! Spatio-temporal feature extractor and the per-task heads.
//!
//! One sample is an `N x T` window. The adjacency is learned from the
//! window by self-attention, symmetrized, and turned into a normalized
//! Laplacian whose eigenvectors define the graph Fourier basis. Each of the
//! two blocks filters the window in that basis with per-mode gains and then
//! runs a frequency-domain convolution/GLU unit along time. Block outputs are
//! concatenated along time and mapped to an `N x F` feature map.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{attention_adjacency, AttentionParams, DEFAULT_ATTN_DIM};
use crate::autodiff::{Tensor, Var};
use crate::error::{Error, Result};
use crate::model::TaskModel;
use crate::params::{head_prefix, Bound, ParamStore};
use crate::task::TaskId;

pub const BLOCKS: usize = 2;

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub n_nodes: usize,
    pub input_len: usize,
    /// Forecast steps of the price head.
    pub horizon: usize,
    pub attn_dim: usize,
    /// Channels after the GLU in the temporal unit.
    pub channels: usize,
    pub kernel: usize,
    pub feature_dim: usize,
    pub head_hidden: usize,
    /// Residual connections around each block.
    pub residual: bool,
    /// Price and moving-average heads predict an offset from the last
    /// observed value.
    pub anchor: bool,
}

impl NetworkConfig {
    pub fn new(n_nodes: usize, input_len: usize, horizon: usize) -> Self {
        Self {
            n_nodes,
            input_len,
            horizon,
            attn_dim: DEFAULT_ATTN_DIM,
            channels: 64,
            kernel: 3,
            feature_dim: 64,
            head_hidden: 64,
            residual: true,
            anchor: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.n_nodes,
            self.input_len,
            self.horizon,
            self.attn_dim,
            self.channels,
            self.kernel,
            self.feature_dim,
            self.head_hidden,
        ];
        if dims.contains(&0) || self.kernel % 2 == 0 {
            return Err(Error::Config(format!(
                "network dimensions must be positive with an odd kernel: {self:?}"
            )));
        }
        Ok(())
    }

    pub fn head_width(&self, task: TaskId) -> usize {
        match task {
            TaskId::Cpd => 2,
            TaskId::Gap | TaskId::Ma => 1,
            TaskId::Pf => self.horizon,
        }
    }

    fn anchored(&self, task: TaskId) -> bool {
        self.anchor && matches!(task, TaskId::Pf | TaskId::Ma)
    }
}

/// Parameters of one block's temporal unit.
#[derive(Clone, Copy)]
pub struct TemporalParams<'t> {
    /// `[2c, 2, k]`: real/imaginary input channels to value and gate channels.
    pub conv_w: Var<'t>,
    pub conv_b: Var<'t>,
    /// `[2, c, 1]`: back to real/imaginary channels.
    pub proj_w: Var<'t>,
    pub proj_b: Var<'t>,
}

/// Orthonormal eigenbasis (columns) of the symmetric normalized Laplacian
/// of `(A + A^T) / 2`.
pub fn laplacian_basis<'t>(adjacency: Var<'t>) -> Result<Var<'t>> {
    let n = adjacency.shape()[0];
    let sym = adjacency.add(&adjacency.transpose()?)?.scale(0.5);
    let inv_sqrt_deg = sym.sum_rows().powf(-0.5);
    let normalized = sym.mul_rows(&inv_sqrt_deg)?.mul_cols(&inv_sqrt_deg)?;
    let laplacian = adjacency.tape().constant(Tensor::identity(n)).sub(&normalized)?;
    Ok(laplacian.sym_eigvecs()?.0)
}

/// `U diag(gains) U^T X`.
pub fn spectral_graph_conv<'t>(window: Var<'t>, basis: Var<'t>, gains: Var<'t>) -> Result<Var<'t>> {
    let spectrum = basis.transpose()?.matmul(&window)?;
    basis.matmul(&spectrum.mul_rows(&gains)?)
}

/// DFT along time, convolution over frequency, GLU, projection, inverse DFT.
pub fn temporal_unit<'t>(x: Var<'t>, p: TemporalParams<'t>) -> Result<Var<'t>> {
    let len = *x.shape().last().ok_or_else(|| Error::shape("temporal unit", "scalar input"))?;
    x.rdft()
        .conv1d(&p.conv_w, &p.conv_b)?
        .glu()?
        .conv1d(&p.proj_w, &p.proj_b)?
        .irdft(len)
}

/// The full model: feature extractor plus four heads.
#[derive(Debug, Clone)]
pub struct StNetwork {
    pub config: NetworkConfig,
    params: ParamStore,
}

fn xavier(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let len = shape.iter().product();
    Tensor::from_parts(shape.to_vec(), (0..len).map(|_| rng.random_range(-a..a)).collect())
}

impl StNetwork {
    /// Randomly initialized network; spectral gains start at 1 and anchored
    /// heads start with a zero output layer.
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = &config;
        let mut p = ParamStore::new();
        p.insert("theta.attn.q", xavier(&[c.input_len, c.attn_dim], c.input_len, c.attn_dim, &mut rng))?;
        p.insert("theta.attn.k", xavier(&[c.input_len, c.attn_dim], c.input_len, c.attn_dim, &mut rng))?;
        for b in 1..=BLOCKS {
            let pre = format!("theta.block{b}");
            p.insert(format!("{pre}.gain"), Tensor::full(&[c.n_nodes], 1.0))?;
            let conv = xavier(&[2 * c.channels, 2, c.kernel], 2 * c.kernel, 2 * c.channels, &mut rng);
            p.insert(format!("{pre}.conv.w"), conv)?;
            p.insert(format!("{pre}.conv.b"), Tensor::zeros(&[2 * c.channels]))?;
            p.insert(format!("{pre}.proj.w"), xavier(&[2, c.channels, 1], c.channels, 2, &mut rng))?;
            p.insert(format!("{pre}.proj.b"), Tensor::zeros(&[2]))?;
        }
        let fc_in = BLOCKS * c.input_len;
        p.insert("theta.fc.w", xavier(&[fc_in, c.feature_dim], fc_in, c.feature_dim, &mut rng))?;
        p.insert("theta.fc.b", Tensor::zeros(&[c.feature_dim]))?;
        for task in TaskId::ALL {
            let pre = head_prefix(task);
            let out = c.head_width(task);
            p.insert(
                format!("{pre}w1"),
                xavier(&[c.feature_dim, c.head_hidden], c.feature_dim, c.head_hidden, &mut rng),
            )?;
            p.insert(format!("{pre}b1"), Tensor::zeros(&[c.head_hidden]))?;
            let w2 = if c.anchored(task) {
                Tensor::zeros(&[c.head_hidden, out])
            } else {
                xavier(&[c.head_hidden, out], c.head_hidden, out, &mut rng)
            };
            p.insert(format!("{pre}w2"), w2)?;
            p.insert(format!("{pre}b2"), Tensor::zeros(&[out]))?;
        }
        Ok(Self { config, params: p })
    }

    /// Wraps an existing parameter store after checking it against the
    /// architecture.
    pub fn from_params(config: NetworkConfig, params: ParamStore) -> Result<Self> {
        let reference = Self::new(config.clone(), 0)?;
        reference.params.check_aligned(&params)?;
        Ok(Self { config, params })
    }

    fn temporal<'t>(p: &Bound<'t>, block: usize) -> Result<TemporalParams<'t>> {
        let pre = format!("theta.block{block}");
        Ok(TemporalParams {
            conv_w: p.get(&format!("{pre}.conv.w"))?,
            conv_b: p.get(&format!("{pre}.conv.b"))?,
            proj_w: p.get(&format!("{pre}.proj.w"))?,
            proj_b: p.get(&format!("{pre}.proj.b"))?,
        })
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        let want = [self.config.n_nodes, self.config.input_len];
        if input.shape() != want {
            return Err(Error::shape(
                "network input",
                format!("{:?}, expected {want:?}", input.shape()),
            ));
        }
        Ok(())
    }

    /// Current attention projections.
    pub fn attention(&self) -> Result<AttentionParams> {
        AttentionParams::new(
            self.params.get("theta.attn.q")?.clone(),
            self.params.get("theta.attn.k")?.clone(),
        )
    }

    /// Learned adjacency of one window.
    pub fn adjacency<'t>(&self, p: &Bound<'t>, window: Var<'t>) -> Result<Var<'t>> {
        attention_adjacency(window, p.get("theta.attn.q")?, p.get("theta.attn.k")?)
    }

    /// `N x F` feature map of a window variable.
    pub fn extract_features<'t>(&self, p: &Bound<'t>, window: Var<'t>) -> Result<Var<'t>> {
        let basis = laplacian_basis(self.adjacency(p, window)?)?;
        let mut h = window;
        let mut outputs = Vec::with_capacity(BLOCKS);
        for b in 1..=BLOCKS {
            let spatial = spectral_graph_conv(h, basis, p.get(&format!("theta.block{b}.gain"))?)?;
            let out = temporal_unit(spatial, Self::temporal(p, b)?)?;
            h = if self.config.residual { h.add(&out)? } else { out };
            outputs.push(h);
        }
        Var::concat(&outputs, 1)?
            .matmul(&p.get("theta.fc.w")?)?
            .add_row(&p.get("theta.fc.b")?)
    }

    /// Task output from a feature map; `last` holds each node's last
    /// observed value.
    pub fn apply_head<'t>(&self, p: &Bound<'t>, task: TaskId, z: Var<'t>, last: &[f64]) -> Result<Var<'t>> {
        let pre = head_prefix(task);
        let hidden = z
            .matmul(&p.get(&format!("{pre}w1"))?)?
            .add_row(&p.get(&format!("{pre}b1"))?)?
            .tanh();
        let out = hidden
            .matmul(&p.get(&format!("{pre}w2"))?)?
            .add_row(&p.get(&format!("{pre}b2"))?)?;
        if !self.config.anchored(task) {
            return Ok(out);
        }
        let width = self.config.head_width(task);
        let base = last.iter().flat_map(|&v| std::iter::repeat_n(v, width)).collect();
        out.add(&z.tape().constant(Tensor::new(vec![last.len(), width], base)?))
    }
}

impl TaskModel for StNetwork {
    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn features<'t>(&self, p: &Bound<'t>, input: &Tensor) -> Result<Var<'t>> {
        self.check_input(input)?;
        let tape = p.get("theta.fc.w")?.tape();
        self.extract_features(p, tape.constant(input.clone()))
    }

    fn head<'t>(&self, p: &Bound<'t>, task: TaskId, z: Var<'t>, input: &Tensor) -> Result<Var<'t>> {
        self.check_input(input)?;
        let t = input.cols();
        let last: Vec<f64> = (0..input.rows()).map(|i| input.at(i, t - 1)).collect();
        self.apply_head(p, task, z, &last)
    }
}
