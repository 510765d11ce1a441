//! Localized soft-binning histogram layer.
//!
//! For every input channel `k` and bin `b` the layer maps each feature value
//! `x` to a membership in `[0, 1]`:
//!
//! * RBF: `exp(-gamma_bk^2 (x - mu_bk)^2)`
//! * piecewise linear: `max(0, 1 - |gamma_bk| |x - mu_bk|)`
//!
//! and pools the memberships over a sliding `S x T` window. With
//! `normalize_count` the pooled value is the window mean (a local relative
//! frequency); without it the raw window sum. With `sum_to_one` each element's
//! `B` memberships are divided by their sum (plus [`SUM_TO_ONE_EPS`]) before
//! pooling.
//!
//! Output maps are laid out with channel index `k * B + b`, so all bins of
//! channel 0 come first.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{self, window_output_dims, ConvParams, Tensor};

/// Added to the per-element membership sum when `sum_to_one` is enabled.
pub const SUM_TO_ONE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Binning {
    Rbf,
    PiecewiseLinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum InitScheme {
    /// Centers at the midpoints of `B` equal sub-intervals of `[lo, hi]`,
    /// every width `B / (hi - lo)`.
    EquispacedOnRange { lo: f64, hi: f64 },
    /// Centers and widths i.i.d. uniform on `(-1/sqrt(BK), 1/sqrt(BK))`.
    UniformSymmetric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramConfig {
    pub bins: usize,
    /// Channels that are binned (after the optional reduction).
    pub channels: usize,
    pub window: (usize, usize),
    pub stride: (usize, usize),
    pub binning: Binning,
    pub normalize_count: bool,
    pub sum_to_one: bool,
    /// Input channel count of an optional learnable 1x1 convolution mapping
    /// the input to `channels` maps before binning.
    #[serde(default)]
    pub reduce_from: Option<usize>,
    pub init: InitScheme,
}

impl HistogramConfig {
    /// RBF layer with normalized counts, no constraint and equispaced bins on `[0, 1]`.
    pub fn rbf(bins: usize, channels: usize, window: (usize, usize), stride: (usize, usize)) -> Self {
        Self {
            bins,
            channels,
            window,
            stride,
            binning: Binning::Rbf,
            normalize_count: true,
            sum_to_one: false,
            reduce_from: None,
            init: InitScheme::EquispacedOnRange { lo: 0.0, hi: 1.0 },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.bins == 0 || self.channels == 0 {
            return Err(Error::InvalidArgument(format!(
                "histogram needs at least one bin and one channel (got B={}, K={})",
                self.bins, self.channels
            )));
        }
        let (s, t) = self.window;
        let (sh, sw) = self.stride;
        if s == 0 || t == 0 || sh == 0 || sw == 0 {
            return Err(Error::InvalidArgument(
                "histogram window and stride must be positive".into(),
            ));
        }
        if self.reduce_from == Some(0) {
            return Err(Error::InvalidArgument(
                "channel reduction needs at least one input channel".into(),
            ));
        }
        if let InitScheme::EquispacedOnRange { lo, hi } = self.init {
            if !(lo.is_finite() && hi.is_finite() && hi > lo) {
                return Err(Error::InvalidArgument(format!(
                    "equispaced init range [{lo}, {hi}] is empty"
                )));
            }
        }
        Ok(())
    }

    /// Channels expected on the layer input.
    pub fn input_channels(&self) -> usize {
        self.reduce_from.unwrap_or(self.channels)
    }

    pub fn output_channels(&self) -> usize {
        self.bins * self.channels
    }

    /// Spatial size `(R, C)` of the output maps for an `M x N` input.
    pub fn output_dims(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        window_output_dims("histogram", (height, width), self.window, self.stride)
    }

    fn count_scale(&self) -> f64 {
        if self.normalize_count {
            1.0 / (self.window.0 * self.window.1) as f64
        } else {
            1.0
        }
    }
}

/// Bin centers and widths, both `(B, K)` row-major (entry `b * K + k`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams")]
pub struct HistogramParams {
    bins: usize,
    channels: usize,
    centers: Vec<f64>,
    widths: Vec<f64>,
}

#[derive(Deserialize)]
struct RawParams {
    bins: usize,
    channels: usize,
    centers: Vec<f64>,
    widths: Vec<f64>,
}

impl TryFrom<RawParams> for HistogramParams {
    type Error = Error;

    fn try_from(raw: RawParams) -> Result<Self> {
        HistogramParams::new(raw.bins, raw.channels, raw.centers, raw.widths)
    }
}

impl HistogramParams {
    pub fn new(bins: usize, channels: usize, centers: Vec<f64>, widths: Vec<f64>) -> Result<Self> {
        let n = bins * channels;
        if n == 0 {
            return Err(Error::InvalidArgument("histogram params need B, K > 0".into()));
        }
        if centers.len() != n || widths.len() != n {
            return Err(Error::shape(
                "HistogramParams",
                format!(
                    "B*K = {n} but got {} centers and {} widths",
                    centers.len(),
                    widths.len()
                ),
            ));
        }
        if centers.iter().chain(&widths).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "histogram params must be finite".into(),
            ));
        }
        Ok(Self {
            bins,
            channels,
            centers,
            widths,
        })
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn widths(&self) -> &[f64] {
        &self.widths
    }

    pub fn centers_mut(&mut self) -> &mut [f64] {
        &mut self.centers
    }

    pub fn widths_mut(&mut self) -> &mut [f64] {
        &mut self.widths
    }

    pub fn centers_and_widths_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.centers, &mut self.widths)
    }

    #[inline]
    pub fn center(&self, b: usize, k: usize) -> f64 {
        self.centers[b * self.channels + k]
    }

    #[inline]
    pub fn width(&self, b: usize, k: usize) -> f64 {
        self.widths[b * self.channels + k]
    }

    pub fn param_count(&self) -> usize {
        self.centers.len() + self.widths.len()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    fn check_against(&self, cfg: &HistogramConfig) -> Result<()> {
        if self.bins != cfg.bins || self.channels != cfg.channels {
            return Err(Error::shape(
                "histogram",
                format!(
                    "params are {}x{} but config has B={}, K={}",
                    self.bins, self.channels, cfg.bins, cfg.channels
                ),
            ));
        }
        Ok(())
    }
}

/// Initial centers and widths per the configured scheme. `seed` only matters
/// for [`InitScheme::UniformSymmetric`].
pub fn init_params(cfg: &HistogramConfig, seed: u64) -> Result<HistogramParams> {
    cfg.validate()?;
    let (b_count, k_count) = (cfg.bins, cfg.channels);
    let (centers, widths) = match cfg.init {
        InitScheme::EquispacedOnRange { lo, hi } => {
            let step = (hi - lo) / b_count as f64;
            let centers = (0..b_count)
                .flat_map(|b| std::iter::repeat_n(lo + (b as f64 + 0.5) * step, k_count))
                .collect();
            let widths = vec![b_count as f64 / (hi - lo); b_count * k_count];
            (centers, widths)
        }
        InitScheme::UniformSymmetric => {
            let bound = 1.0 / ((b_count * k_count) as f64).sqrt();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut draw = || loop {
                let v = rng.gen_range(-bound..bound);
                if v != -bound {
                    break v;
                }
            };
            let centers = (0..b_count * k_count).map(|_| draw()).collect();
            let widths = (0..b_count * k_count).map(|_| draw()).collect();
            (centers, widths)
        }
    };
    HistogramParams::new(b_count, k_count, centers, widths)
}

/// Membership of `x` in a bin, without any normalization.
#[inline]
pub fn bin_response(binning: Binning, x: f64, center: f64, width: f64) -> f64 {
    let d = x - center;
    match binning {
        Binning::Rbf => (-(width * width) * (d * d)).exp(),
        Binning::PiecewiseLinear => (1.0 - width.abs() * d.abs()).max(0.0),
    }
}

/// `(response, d/d center, d/d width, d/d x)`. Hat-function kinks (peak,
/// support boundary, zero width) get a zero subgradient.
#[inline]
fn response_and_grads(binning: Binning, x: f64, center: f64, width: f64) -> [f64; 4] {
    let d = x - center;
    match binning {
        Binning::Rbf => {
            let g2 = width * width;
            let phi = (-g2 * (d * d)).exp();
            [phi, 2.0 * g2 * d * phi, -2.0 * width * d * d * phi, -2.0 * g2 * d * phi]
        }
        Binning::PiecewiseLinear => {
            let v = 1.0 - width.abs() * d.abs();
            if v <= 0.0 {
                return [0.0; 4];
            }
            let sd = sign_or_zero(d);
            let sw = sign_or_zero(width);
            let slope = width.abs() * sd;
            [v, slope, -sw * d.abs(), -slope]
        }
    }
}

#[inline]
fn sign_or_zero(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn check_input(x: &Tensor, p: &HistogramParams, cfg: &HistogramConfig) -> Result<(usize, usize)> {
    cfg.validate()?;
    p.check_against(cfg)?;
    if x.channels() != cfg.channels {
        return Err(Error::shape(
            "histogram",
            format!(
                "input has {} channels, layer bins {}",
                x.channels(),
                cfg.channels
            ),
        ));
    }
    cfg.output_dims(x.height(), x.width())
}

/// Binned output for an input that already has `K` channels.
pub fn bin_forward(x: &Tensor, p: &HistogramParams, cfg: &HistogramConfig) -> Result<Tensor> {
    let (rows, cols) = check_input(x, p, cfg)?;
    let [n_batch, k_count, h, w] = x.shape();
    let b_count = cfg.bins;
    let (s, t) = cfg.window;
    let (sh, sw) = cfg.stride;
    let scale = cfg.count_scale();

    let mut out = Tensor::zeros([n_batch, k_count * b_count, rows, cols]);
    let mut memberships = vec![0.0; b_count * h * w];
    let mut terms = Vec::with_capacity(s * t);
    for n in 0..n_batch {
        for k in 0..k_count {
            for i in 0..h {
                for j in 0..w {
                    let v = x.at(n, k, i, j);
                    let mut total = 0.0;
                    for b in 0..b_count {
                        let phi = bin_response(cfg.binning, v, p.center(b, k), p.width(b, k));
                        memberships[(b * h + i) * w + j] = phi;
                        total += phi;
                    }
                    if cfg.sum_to_one {
                        let denom = total + SUM_TO_ONE_EPS;
                        for b in 0..b_count {
                            memberships[(b * h + i) * w + j] /= denom;
                        }
                    }
                }
            }
            for b in 0..b_count {
                let plane = &memberships[b * h * w..(b + 1) * h * w];
                for r in 0..rows {
                    for c in 0..cols {
                        // summed in sorted order so any permutation of a
                        // window gives a bit-identical result
                        terms.clear();
                        for ds in 0..s {
                            let row = &plane[(r * sh + ds) * w..];
                            terms.extend_from_slice(&row[c * sw..c * sw + t]);
                        }
                        terms.sort_unstable_by(f64::total_cmp);
                        let acc: f64 = terms.iter().sum();
                        let o = out.index(n, k * b_count + b, r, c);
                        out.data_mut()[o] = acc * scale;
                    }
                }
            }
        }
    }
    out.debug_check_finite();
    Ok(out)
}

/// Gradients of a scalar loss w.r.t. centers, widths and the binned input.
#[derive(Debug, Clone, PartialEq)]
pub struct HistGrads {
    pub centers: Vec<f64>,
    pub widths: Vec<f64>,
    pub input: Tensor,
}

/// Backward pass of [`bin_forward`] given the upstream gradient of its output.
pub fn bin_backward(
    x: &Tensor,
    p: &HistogramParams,
    cfg: &HistogramConfig,
    upstream: &Tensor,
) -> Result<HistGrads> {
    let (rows, cols) = check_input(x, p, cfg)?;
    let [n_batch, k_count, h, w] = x.shape();
    let b_count = cfg.bins;
    let expected = [n_batch, k_count * b_count, rows, cols];
    if upstream.shape() != expected {
        return Err(Error::shape(
            "histogram backward",
            format!("upstream {:?}, expected {expected:?}", upstream.shape()),
        ));
    }
    let (s, t) = cfg.window;
    let (sh, sw) = cfg.stride;
    let scale = cfg.count_scale();

    let mut grad_centers = vec![0.0; b_count * k_count];
    let mut grad_widths = vec![0.0; b_count * k_count];
    let mut grad_input = Tensor::zeros(x.shape());
    // Upstream gradient reaching each element's membership in each bin,
    // summed over every window that covers the element.
    let mut acc = vec![0.0; b_count * h * w];
    let mut local = vec![[0.0; 4]; b_count];
    for n in 0..n_batch {
        for k in 0..k_count {
            acc.iter_mut().for_each(|v| *v = 0.0);
            for b in 0..b_count {
                let plane = &mut acc[b * h * w..(b + 1) * h * w];
                for r in 0..rows {
                    for c in 0..cols {
                        let g = upstream.at(n, k * b_count + b, r, c) * scale;
                        for ds in 0..s {
                            for dt in 0..t {
                                plane[(r * sh + ds) * w + c * sw + dt] += g;
                            }
                        }
                    }
                }
            }
            for i in 0..h {
                for j in 0..w {
                    let v = x.at(n, k, i, j);
                    let mut total = 0.0;
                    for (b, l) in local.iter_mut().enumerate() {
                        *l = response_and_grads(cfg.binning, v, p.center(b, k), p.width(b, k));
                        total += l[0];
                    }
                    let denom = total + SUM_TO_ONE_EPS;
                    // dL/d(membership) through the optional normalization
                    let weighted: f64 = if cfg.sum_to_one {
                        (0..b_count)
                            .map(|b| acc[(b * h + i) * w + j] * local[b][0] / denom)
                            .sum()
                    } else {
                        0.0
                    };
                    let mut dx = 0.0;
                    for (b, l) in local.iter().enumerate() {
                        let a = acc[(b * h + i) * w + j];
                        let d_phi = if cfg.sum_to_one { (a - weighted) / denom } else { a };
                        grad_centers[b * k_count + k] += d_phi * l[1];
                        grad_widths[b * k_count + k] += d_phi * l[2];
                        dx += d_phi * l[3];
                    }
                    let idx = grad_input.index(n, k, i, j);
                    grad_input.data_mut()[idx] = dx;
                }
            }
        }
    }
    Ok(HistGrads {
        centers: grad_centers,
        widths: grad_widths,
        input: grad_input,
    })
}

fn require(cfg: &HistogramConfig, binning: Binning) -> Result<()> {
    if cfg.binning != binning {
        return Err(Error::InvalidArgument(format!(
            "operation needs {binning:?} binning, config has {:?}",
            cfg.binning
        )));
    }
    Ok(())
}

pub fn rbf_bin_forward(x: &Tensor, p: &HistogramParams, cfg: &HistogramConfig) -> Result<Tensor> {
    require(cfg, Binning::Rbf)?;
    bin_forward(x, p, cfg)
}

pub fn linear_bin_forward(x: &Tensor, p: &HistogramParams, cfg: &HistogramConfig) -> Result<Tensor> {
    require(cfg, Binning::PiecewiseLinear)?;
    bin_forward(x, p, cfg)
}

pub fn rbf_grad_centers(
    x: &Tensor,
    p: &HistogramParams,
    cfg: &HistogramConfig,
    upstream: &Tensor,
) -> Result<Vec<f64>> {
    require(cfg, Binning::Rbf)?;
    Ok(bin_backward(x, p, cfg, upstream)?.centers)
}

pub fn rbf_grad_widths(
    x: &Tensor,
    p: &HistogramParams,
    cfg: &HistogramConfig,
    upstream: &Tensor,
) -> Result<Vec<f64>> {
    require(cfg, Binning::Rbf)?;
    Ok(bin_backward(x, p, cfg, upstream)?.widths)
}

pub fn rbf_grad_input(
    x: &Tensor,
    p: &HistogramParams,
    cfg: &HistogramConfig,
    upstream: &Tensor,
) -> Result<Tensor> {
    require(cfg, Binning::Rbf)?;
    Ok(bin_backward(x, p, cfg, upstream)?.input)
}

/// `(grad_centers, grad_widths, grad_input)` for the piecewise-linear variant.
pub fn linear_bin_backward(
    x: &Tensor,
    p: &HistogramParams,
    cfg: &HistogramConfig,
    upstream: &Tensor,
) -> Result<(Vec<f64>, Vec<f64>, Tensor)> {
    require(cfg, Binning::PiecewiseLinear)?;
    let g = bin_backward(x, p, cfg, upstream)?;
    Ok((g.centers, g.widths, g.input))
}

/// Same output as [`rbf_bin_forward`] (after the optional reduction) built
/// only from generic primitives: 1x1 convolutions for centering and scaling,
/// elementwise square / negate / exp, then average pooling.
pub fn forward_composed(
    x: &Tensor,
    p: &HistogramParams,
    reduce: Option<&ConvParams>,
    cfg: &HistogramConfig,
) -> Result<Tensor> {
    require(cfg, Binning::Rbf)?;
    cfg.validate()?;
    p.check_against(cfg)?;
    let reduced;
    let x = match (cfg.reduce_from, reduce) {
        (Some(_), Some(conv)) => {
            reduced = tensor::conv2d(x, conv)?;
            &reduced
        }
        (None, None) => x,
        _ => {
            return Err(Error::InvalidArgument(
                "reduction convolution must be given exactly when the config asks for one".into(),
            ))
        }
    };
    if x.channels() != cfg.channels {
        return Err(Error::shape(
            "forward_composed",
            format!("input has {} channels, layer bins {}", x.channels(), cfg.channels),
        ));
    }
    let (b_count, k_count) = (cfg.bins, cfg.channels);
    let maps = b_count * k_count;

    // Each output map k*B+b copies input channel k and subtracts mu_bk via the bias.
    let mut centering = ConvParams::zeros(maps, k_count, (1, 1), (1, 1));
    for k in 0..k_count {
        for b in 0..b_count {
            let o = k * b_count + b;
            centering.weights[o * k_count + k] = 1.0;
            centering.bias[o] = -p.center(b, k);
        }
    }
    // Per-map scale by gamma_bk, zero bias.
    let mut scaling = ConvParams::zeros(maps, maps, (1, 1), (1, 1));
    for k in 0..k_count {
        for b in 0..b_count {
            let o = k * b_count + b;
            scaling.weights[o * maps + o] = p.width(b, k);
        }
    }

    let centered = tensor::conv2d(x, &centering)?;
    let scaled = tensor::conv2d(&centered, &scaling)?;
    let mut memberships = scaled.map(|v| v * v).map(|v| -v).map(f64::exp);
    if cfg.sum_to_one {
        memberships = normalize_bin_groups(&memberships, b_count)?;
    }
    if cfg.normalize_count {
        tensor::avg_pool2d(&memberships, cfg.window, cfg.stride)
    } else {
        tensor::sum_pool2d(&memberships, cfg.window, cfg.stride)
    }
}

/// Divides each element's `bins` consecutive channel values by their sum.
fn normalize_bin_groups(x: &Tensor, bins: usize) -> Result<Tensor> {
    let [n, c, h, w] = x.shape();
    if c % bins != 0 {
        return Err(Error::shape(
            "normalize_bin_groups",
            format!("{c} channels not divisible into groups of {bins}"),
        ));
    }
    let mut out = x.clone();
    for ni in 0..n {
        for g in 0..c / bins {
            for i in 0..h {
                for j in 0..w {
                    let total: f64 =
                        (0..bins).map(|b| x.at(ni, g * bins + b, i, j)).sum::<f64>() + SUM_TO_ONE_EPS;
                    for b in 0..bins {
                        let idx = out.index(ni, g * bins + b, i, j);
                        out.data_mut()[idx] /= total;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// A histogram layer: configuration, bin parameters and the optional 1x1
/// channel-reduction convolution in front of the binning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramLayer {
    pub config: HistogramConfig,
    pub params: HistogramParams,
    pub reduce: Option<ConvParams>,
}

/// Intermediates kept by [`HistogramLayer::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct HistogramCache {
    input: Tensor,
    binned_input: Option<Tensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistogramLayerGrads {
    pub centers: Vec<f64>,
    pub widths: Vec<f64>,
    /// `(weights, bias)` of the reduction convolution, if present.
    pub reduce: Option<(Vec<f64>, Vec<f64>)>,
    pub input: Tensor,
}

impl HistogramLayer {
    /// Builds a layer with parameters from the config's init scheme; the
    /// reduction convolution (if any) gets uniform `+-1/sqrt(fan_in)` weights.
    pub fn new(config: HistogramConfig, seed: u64) -> Result<Self> {
        let params = init_params(&config, seed)?;
        let reduce = config.reduce_from.map(|c_in| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_0F11);
            ConvParams::uniform(config.channels, c_in, (1, 1), (1, 1), &mut rng)
        });
        Ok(Self {
            config,
            params,
            reduce,
        })
    }

    pub fn with_params(config: HistogramConfig, params: HistogramParams) -> Result<Self> {
        config.validate()?;
        params.check_against(&config)?;
        if config.reduce_from.is_some() {
            return Err(Error::InvalidArgument(
                "layer with channel reduction needs reduction weights; use HistogramLayer::new".into(),
            ));
        }
        Ok(Self {
            config,
            params,
            reduce: None,
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.param_count() + self.reduce.as_ref().map_or(0, ConvParams::param_count)
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, HistogramCache)> {
        if x.channels() != self.config.input_channels() {
            return Err(Error::shape(
                "HistogramLayer::forward",
                format!(
                    "input has {} channels, layer expects {}",
                    x.channels(),
                    self.config.input_channels()
                ),
            ));
        }
        let binned_input = match &self.reduce {
            Some(conv) => Some(tensor::conv2d(x, conv)?),
            None => None,
        };
        let out = bin_forward(binned_input.as_ref().unwrap_or(x), &self.params, &self.config)?;
        Ok((
            out,
            HistogramCache {
                input: x.clone(),
                binned_input,
            },
        ))
    }

    pub fn backward(&self, cache: &HistogramCache, upstream: &Tensor) -> Result<HistogramLayerGrads> {
        let binned = cache.binned_input.as_ref().unwrap_or(&cache.input);
        let g = bin_backward(binned, &self.params, &self.config, upstream)?;
        match &self.reduce {
            Some(conv) => {
                let (dx, dw, db) = tensor::conv2d_backward(&cache.input, conv, &g.input)?;
                Ok(HistogramLayerGrads {
                    centers: g.centers,
                    widths: g.widths,
                    reduce: Some((dw, db)),
                    input: dx,
                })
            }
            None => Ok(HistogramLayerGrads {
                centers: g.centers,
                widths: g.widths,
                reduce: None,
                input: g.input,
            }),
        }
    }

    /// [`forward_composed`] with this layer's parameters.
    pub fn forward_composed(&self, x: &Tensor) -> Result<Tensor> {
        forward_composed(x, &self.params, self.reduce.as_ref(), &self.config)
    }
}
