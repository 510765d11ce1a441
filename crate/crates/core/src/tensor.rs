//! Dense rank-4 tensors in row-major `(N, C, H, W)` order and the layer
//! primitives used by the histogram layer and the synthetic models.
//!
//! Every primitive is a pure function. Primitives that take part in training
//! come with a `*_backward` companion returning the gradients of a scalar loss
//! given the upstream gradient of the primitive's output.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: [usize; 4],
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: [usize; 4], data: Vec<f64>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if data.len() != len {
            return Err(Error::shape(
                "Tensor::new",
                format!("shape {shape:?} needs {len} values, got {}", data.len()),
            ));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "tensor entry {i} is not finite ({})",
                data[i]
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: [usize; 4]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: [usize; 4], value: f64) -> Self {
        Self {
            shape,
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_fn(shape: [usize; 4], mut f: impl FnMut([usize; 4]) -> f64) -> Self {
        let [n, c, h, w] = shape;
        let mut data = Vec::with_capacity(n * c * h * w);
        for i in 0..n {
            for j in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        data.push(f([i, j, y, x]));
                    }
                }
            }
        }
        Self { shape, data }
    }

    /// A `(N, F, 1, 1)` tensor viewed as an `N x F` matrix.
    pub fn from_rows(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new([rows, cols, 1, 1], data)
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn height(&self) -> usize {
        self.shape[2]
    }

    pub fn width(&self) -> usize {
        self.shape[3]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Features per sample when flattened to `(N, C*H*W)`.
    pub fn features(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        let [_, cs, hs, ws] = self.shape;
        ((n * cs + c) * hs + y) * ws + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.index(n, c, y, x)]
    }

    /// Row `n` of the flattened `(N, C*H*W)` view.
    pub fn row(&self, n: usize) -> &[f64] {
        let f = self.features();
        &self.data[n * f..(n + 1) * f]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, alpha: f64) -> Self {
        self.map(|v| alpha * v)
    }

    pub fn add(&self, other: &Tensor) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::shape(
                "add",
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        Ok(Self {
            shape: self.shape,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        })
    }

    /// Selects batch items by index, preserving order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let per = self.features();
        let mut data = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            data.extend_from_slice(&self.data[i * per..(i + 1) * per]);
        }
        Self {
            shape: [indices.len(), self.shape[1], self.shape[2], self.shape[3]],
            data,
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub(crate) fn debug_check_finite(&self) {
        debug_assert!(
            self.data.iter().all(|v| v.is_finite()),
            "non-finite value produced"
        );
    }
}

/// Weights `(out, in, kh, kw)` and bias `(out)` of a valid-padding convolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvParams {
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvParams {
    pub fn new(
        out_channels: usize,
        in_channels: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        weights: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        let p = Self {
            out_channels,
            in_channels,
            kernel,
            stride,
            weights,
            bias,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn zeros(
        out_channels: usize,
        in_channels: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
    ) -> Self {
        Self {
            out_channels,
            in_channels,
            kernel,
            stride,
            weights: vec![0.0; out_channels * in_channels * kernel.0 * kernel.1],
            bias: vec![0.0; out_channels],
        }
    }

    /// Uniform `+-1/sqrt(fan_in)` initialisation for weights and bias.
    pub fn uniform<R: Rng>(
        out_channels: usize,
        in_channels: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / ((in_channels * kernel.0 * kernel.1) as f64).sqrt();
        let mut p = Self::zeros(out_channels, in_channels, kernel, stride);
        p.weights
            .iter_mut()
            .chain(p.bias.iter_mut())
            .for_each(|v| *v = rng.gen_range(-bound..bound));
        p
    }

    pub fn validate(&self) -> Result<()> {
        let (kh, kw) = self.kernel;
        if kh == 0 || kw == 0 || self.stride.0 == 0 || self.stride.1 == 0 {
            return Err(Error::InvalidArgument(
                "convolution kernel and stride must be positive".into(),
            ));
        }
        let expected = self.out_channels * self.in_channels * kh * kw;
        if self.weights.len() != expected || self.bias.len() != self.out_channels {
            return Err(Error::shape(
                "ConvParams",
                format!(
                    "expected {expected} weights and {} biases, got {} and {}",
                    self.out_channels,
                    self.weights.len(),
                    self.bias.len()
                ),
            ));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    #[inline]
    fn w(&self, o: usize, i: usize, y: usize, x: usize) -> f64 {
        let (kh, kw) = self.kernel;
        self.weights[((o * self.in_channels + i) * kh + y) * kw + x]
    }
}

/// Dense layer weights `(out, in)` and bias `(out)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearParams {
    pub out_features: usize,
    pub in_features: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LinearParams {
    pub fn new(
        out_features: usize,
        in_features: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        if weights.len() != out_features * in_features || bias.len() != out_features {
            return Err(Error::shape(
                "LinearParams",
                format!(
                    "expected {}x{} weights and {out_features} biases, got {} and {}",
                    out_features,
                    in_features,
                    weights.len(),
                    bias.len()
                ),
            ));
        }
        Ok(Self {
            out_features,
            in_features,
            weights,
            bias,
        })
    }

    pub fn uniform<R: Rng>(out_features: usize, in_features: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (in_features as f64).sqrt();
        let mut gen = |n| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-bound..bound)).collect() };
        let weights = gen(out_features * in_features);
        let bias = gen(out_features);
        Self {
            out_features,
            in_features,
            weights,
            bias,
        }
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

fn out_dim(input: usize, window: usize, stride: usize) -> Option<usize> {
    (window >= 1 && stride >= 1 && window <= input).then(|| (input - window) / stride + 1)
}

/// Output spatial size of a valid window of size `window` moved by `stride`.
pub fn window_output_dims(
    op: &'static str,
    (h, w): (usize, usize),
    window: (usize, usize),
    stride: (usize, usize),
) -> Result<(usize, usize)> {
    match (
        out_dim(h, window.0, stride.0),
        out_dim(w, window.1, stride.1),
    ) {
        (Some(r), Some(c)) => Ok((r, c)),
        _ => Err(Error::shape(
            op,
            format!("window {window:?} with stride {stride:?} does not fit input {h}x{w}"),
        )),
    }
}

/// Valid cross-correlation plus bias.
pub fn conv2d(x: &Tensor, p: &ConvParams) -> Result<Tensor> {
    p.validate()?;
    if x.channels() != p.in_channels {
        return Err(Error::shape(
            "conv2d",
            format!(
                "input has {} channels, kernel expects {}",
                x.channels(),
                p.in_channels
            ),
        ));
    }
    let (oh, ow) = window_output_dims("conv2d", (x.height(), x.width()), p.kernel, p.stride)?;
    let (kh, kw) = p.kernel;
    let (sh, sw) = p.stride;
    let out = Tensor::from_fn([x.batch(), p.out_channels, oh, ow], |[n, o, r, c]| {
        let mut acc = p.bias[o];
        for i in 0..p.in_channels {
            for dy in 0..kh {
                for dx in 0..kw {
                    acc += p.w(o, i, dy, dx) * x.at(n, i, r * sh + dy, c * sw + dx);
                }
            }
        }
        acc
    });
    out.debug_check_finite();
    Ok(out)
}

/// Gradients of [`conv2d`]: `(d_input, d_weights, d_bias)`.
pub fn conv2d_backward(
    x: &Tensor,
    p: &ConvParams,
    grad_out: &Tensor,
) -> Result<(Tensor, Vec<f64>, Vec<f64>)> {
    let (oh, ow) = window_output_dims("conv2d_backward", (x.height(), x.width()), p.kernel, p.stride)?;
    let expected = [x.batch(), p.out_channels, oh, ow];
    if grad_out.shape() != expected || x.channels() != p.in_channels {
        return Err(Error::shape(
            "conv2d_backward",
            format!("upstream {:?}, expected {expected:?}", grad_out.shape()),
        ));
    }
    let (kh, kw) = p.kernel;
    let (sh, sw) = p.stride;
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = vec![0.0; p.weights.len()];
    let mut db = vec![0.0; p.bias.len()];
    for n in 0..x.batch() {
        for (o, db_o) in db.iter_mut().enumerate() {
            for r in 0..oh {
                for c in 0..ow {
                    let g = grad_out.at(n, o, r, c);
                    if g == 0.0 {
                        continue;
                    }
                    *db_o += g;
                    for i in 0..p.in_channels {
                        for dy in 0..kh {
                            for ddx in 0..kw {
                                let (y, xx) = (r * sh + dy, c * sw + ddx);
                                let wi = ((o * p.in_channels + i) * kh + dy) * kw + ddx;
                                dw[wi] += g * x.at(n, i, y, xx);
                                let xi = dx.index(n, i, y, xx);
                                dx.data[xi] += g * p.weights[wi];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok((dx, dw, db))
}

/// Window sums scaled by `scale`; shared by average and sum pooling.
fn pool_scaled(
    op: &'static str,
    x: &Tensor,
    window: (usize, usize),
    stride: (usize, usize),
    scale: f64,
) -> Result<Tensor> {
    let (oh, ow) = window_output_dims(op, (x.height(), x.width()), window, stride)?;
    let out = Tensor::from_fn([x.batch(), x.channels(), oh, ow], |[n, ch, r, c]| {
        let mut acc = 0.0;
        for dy in 0..window.0 {
            for dx in 0..window.1 {
                acc += x.at(n, ch, r * stride.0 + dy, c * stride.1 + dx);
            }
        }
        acc * scale
    });
    Ok(out)
}

fn pool_scaled_backward(
    op: &'static str,
    input_shape: [usize; 4],
    window: (usize, usize),
    stride: (usize, usize),
    scale: f64,
    grad_out: &Tensor,
) -> Result<Tensor> {
    let [n, ch, h, w] = input_shape;
    let (oh, ow) = window_output_dims(op, (h, w), window, stride)?;
    if grad_out.shape() != [n, ch, oh, ow] {
        return Err(Error::shape(
            op,
            format!("upstream {:?}, expected {:?}", grad_out.shape(), [n, ch, oh, ow]),
        ));
    }
    let mut dx = Tensor::zeros(input_shape);
    for b in 0..n {
        for k in 0..ch {
            for r in 0..oh {
                for c in 0..ow {
                    let g = grad_out.at(b, k, r, c) * scale;
                    for dy in 0..window.0 {
                        for ddx in 0..window.1 {
                            let i = dx.index(b, k, r * stride.0 + dy, c * stride.1 + ddx);
                            dx.data[i] += g;
                        }
                    }
                }
            }
        }
    }
    Ok(dx)
}

pub fn avg_pool2d(x: &Tensor, window: (usize, usize), stride: (usize, usize)) -> Result<Tensor> {
    let scale = 1.0 / (window.0 * window.1).max(1) as f64;
    pool_scaled("avg_pool2d", x, window, stride, scale)
}

pub fn avg_pool2d_backward(
    input_shape: [usize; 4],
    window: (usize, usize),
    stride: (usize, usize),
    grad_out: &Tensor,
) -> Result<Tensor> {
    let scale = 1.0 / (window.0 * window.1).max(1) as f64;
    pool_scaled_backward("avg_pool2d_backward", input_shape, window, stride, scale, grad_out)
}

/// Window sums without the `1/(S*T)` factor.
pub fn sum_pool2d(x: &Tensor, window: (usize, usize), stride: (usize, usize)) -> Result<Tensor> {
    pool_scaled("sum_pool2d", x, window, stride, 1.0)
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

/// Passes upstream gradient where the pre-activation was strictly positive.
pub fn relu_backward(pre: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    if pre.shape() != grad_out.shape() {
        return Err(Error::shape(
            "relu_backward",
            format!("{:?} vs {:?}", pre.shape(), grad_out.shape()),
        ));
    }
    let data = pre
        .data
        .iter()
        .zip(&grad_out.data)
        .map(|(&z, &g)| if z > 0.0 { g } else { 0.0 })
        .collect();
    Ok(Tensor {
        shape: pre.shape,
        data,
    })
}

pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = x.shape();
    if h == 0 || w == 0 {
        return Err(Error::shape("global_avg_pool", "empty spatial extent"));
    }
    let area = (h * w) as f64;
    let data = x
        .data
        .chunks(h * w)
        .map(|plane| plane.iter().sum::<f64>() / area)
        .collect();
    Ok(Tensor {
        shape: [n, c, 1, 1],
        data,
    })
}

pub fn global_avg_pool_backward(input_shape: [usize; 4], grad_out: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = input_shape;
    if grad_out.shape() != [n, c, 1, 1] {
        return Err(Error::shape(
            "global_avg_pool_backward",
            format!("upstream {:?}, expected {:?}", grad_out.shape(), [n, c, 1, 1]),
        ));
    }
    let area = (h * w) as f64;
    let data = grad_out
        .data
        .iter()
        .flat_map(|&g| std::iter::repeat_n(g / area, h * w))
        .collect();
    Ok(Tensor {
        shape: input_shape,
        data,
    })
}

/// Flattens both inputs to `(N, F)` and joins them feature-wise, `a` first.
pub fn concat_features(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.batch() != b.batch() {
        return Err(Error::shape(
            "concat_features",
            format!("batch sizes {} and {} differ", a.batch(), b.batch()),
        ));
    }
    let (fa, fb) = (a.features(), b.features());
    let mut data = Vec::with_capacity(a.batch() * (fa + fb));
    for n in 0..a.batch() {
        data.extend_from_slice(a.row(n));
        data.extend_from_slice(b.row(n));
    }
    Tensor::from_rows(a.batch(), fa + fb, data)
}

/// Splits a `(N, F_a + F_b)` gradient back into the two flattened parts.
pub fn split_features(grad: &Tensor, fa: usize) -> Result<(Tensor, Tensor)> {
    let f = grad.features();
    if fa > f {
        return Err(Error::shape(
            "split_features",
            format!("split at {fa} exceeds {f} features"),
        ));
    }
    let (mut left, mut right) = (Vec::new(), Vec::new());
    for n in 0..grad.batch() {
        let row = grad.row(n);
        left.extend_from_slice(&row[..fa]);
        right.extend_from_slice(&row[fa..]);
    }
    Ok((
        Tensor::from_rows(grad.batch(), fa, left)?,
        Tensor::from_rows(grad.batch(), f - fa, right)?,
    ))
}

/// `x W^T + b` on the flattened `(N, F)` view; output is `(N, out, 1, 1)`.
pub fn linear(x: &Tensor, p: &LinearParams) -> Result<Tensor> {
    if x.features() != p.in_features {
        return Err(Error::shape(
            "linear",
            format!(
                "input has {} features, layer expects {}",
                x.features(),
                p.in_features
            ),
        ));
    }
    let mut data = Vec::with_capacity(x.batch() * p.out_features);
    for n in 0..x.batch() {
        let row = x.row(n);
        for o in 0..p.out_features {
            let w = &p.weights[o * p.in_features..(o + 1) * p.in_features];
            data.push(p.bias[o] + w.iter().zip(row).map(|(a, b)| a * b).sum::<f64>());
        }
    }
    Tensor::from_rows(x.batch(), p.out_features, data)
}

/// Gradients of [`linear`]: `(d_input, d_weights, d_bias)`; `d_input` keeps the
/// input's shape.
pub fn linear_backward(
    x: &Tensor,
    p: &LinearParams,
    grad_out: &Tensor,
) -> Result<(Tensor, Vec<f64>, Vec<f64>)> {
    if grad_out.batch() != x.batch() || grad_out.features() != p.out_features {
        return Err(Error::shape(
            "linear_backward",
            format!(
                "upstream {:?}, expected ({}, {})",
                grad_out.shape(),
                x.batch(),
                p.out_features
            ),
        ));
    }
    let fi = p.in_features;
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = vec![0.0; p.weights.len()];
    let mut db = vec![0.0; p.bias.len()];
    for n in 0..x.batch() {
        let row = x.row(n);
        let g = grad_out.row(n);
        for o in 0..p.out_features {
            db[o] += g[o];
            for i in 0..fi {
                dw[o * fi + i] += g[o] * row[i];
                dx.data[n * fi + i] += g[o] * p.weights[o * fi + i];
            }
        }
    }
    Ok((dx, dw, db))
}

/// Mean cross-entropy of the softmax of `logits` against integer labels and
/// its gradient `(softmax - onehot) / N`.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (n, k) = (logits.batch(), logits.features());
    if labels.len() != n {
        return Err(Error::shape(
            "softmax_cross_entropy",
            format!("{n} logit rows but {} labels", labels.len()),
        ));
    }
    if n == 0 {
        return Err(Error::Empty("softmax_cross_entropy batch"));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::LabelOutOfRange { label, classes: k });
    }
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(n * k);
    for (i, &label) in labels.iter().enumerate() {
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|&z| (z - max).exp()).sum();
        let log_norm = max + sum.ln();
        loss += log_norm - row[label];
        for (j, &z) in row.iter().enumerate() {
            let p = (z - log_norm).exp();
            let onehot = if j == label { 1.0 } else { 0.0 };
            grad.push((p - onehot) / n as f64);
        }
    }
    Ok((loss / n as f64, Tensor::new(logits.shape(), grad)?))
}

/// Row-wise softmax probabilities of a `(N, K)` logit matrix.
pub fn softmax(logits: &Tensor) -> Tensor {
    let k = logits.features();
    let mut data = Vec::with_capacity(logits.len());
    for i in 0..logits.batch() {
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|&z| (z - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        data.extend(exps.iter().map(|e| e / sum));
    }
    debug_assert_eq!(data.len(), logits.batch() * k);
    Tensor {
        shape: logits.shape,
        data,
    }
}

pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    (0..logits.batch())
        .map(|i| {
            let row = logits.row(i);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(shape: [usize; 4], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    fn random(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn tensor_rejects_bad_length_and_non_finite() {
        assert!(Tensor::new([1, 1, 2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::new([1, 1, 1, 1], vec![f64::NAN]).is_err());
    }

    #[test]
    fn conv_zero_input_yields_bias() {
        let x = Tensor::zeros([1, 1, 3, 3]);
        let p = ConvParams::new(1, 1, (1, 1), (1, 1), vec![0.7], vec![-2.5]).unwrap();
        let y = conv2d(&x, &p).unwrap();
        assert!(y.data().iter().all(|&v| v == -2.5));
    }

    #[test]
    fn conv_identity_kernel() {
        let x = Tensor::from_fn([2, 1, 3, 4], |[n, _, y, x]| (n * 12 + y * 4 + x) as f64 * 0.5);
        let p = ConvParams::new(1, 1, (1, 1), (1, 1), vec![1.0], vec![0.0]).unwrap();
        assert_eq!(conv2d(&x, &p).unwrap(), x);
    }

    #[test]
    fn conv_all_ones_on_ramp() {
        let x = Tensor::from_fn([1, 1, 3, 3], |[_, _, y, x]| (y * 3 + x) as f64);
        let p = ConvParams::new(1, 1, (3, 3), (1, 1), vec![1.0; 9], vec![0.0]).unwrap();
        let y = conv2d(&x, &p).unwrap();
        assert_eq!(y.shape(), [1, 1, 1, 1]);
        assert_eq!(y.data()[0], 36.0);
    }

    #[test]
    fn conv_rejects_channel_mismatch_and_oversized_kernel() {
        let x = Tensor::zeros([1, 2, 3, 3]);
        let p = ConvParams::zeros(1, 1, (1, 1), (1, 1));
        assert!(matches!(conv2d(&x, &p), Err(Error::Shape { .. })));
        let x = Tensor::zeros([1, 1, 2, 2]);
        let p = ConvParams::zeros(1, 1, (3, 3), (1, 1));
        assert!(matches!(conv2d(&x, &p), Err(Error::Shape { .. })));
    }

    #[test]
    fn conv_output_dims_with_stride() {
        let x = Tensor::zeros([1, 1, 7, 6]);
        let p = ConvParams::zeros(2, 1, (3, 2), (2, 2));
        assert_eq!(conv2d(&x, &p).unwrap().shape(), [1, 2, 3, 3]);
    }

    #[test]
    fn conv_is_linear_without_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let a = random([2, 2, 5, 5], &mut rng);
            let b = random([2, 2, 5, 5], &mut rng);
            let mut p = ConvParams::uniform(3, 2, (3, 3), (1, 1), &mut rng);
            p.bias.iter_mut().for_each(|v| *v = 0.0);
            let (alpha, beta) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let mixed = a.scale(alpha).add(&b.scale(beta)).unwrap();
            let lhs = conv2d(&mixed, &p).unwrap();
            let rhs = conv2d(&a, &p)
                .unwrap()
                .scale(alpha)
                .add(&conv2d(&b, &p).unwrap().scale(beta))
                .unwrap();
            for (l, r) in lhs.data().iter().zip(rhs.data()) {
                assert!((l - r).abs() <= 1e-12 * l.abs().max(r.abs()).max(1.0));
            }
        }
    }

    #[test]
    fn avg_pool_basics() {
        let c = Tensor::filled([1, 2, 4, 4], 0.3);
        let y = avg_pool2d(&c, (2, 2), (1, 1)).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.3));

        let x = t([1, 1, 2, 2], &[0.0, 2.0, 4.0, 6.0]);
        assert_eq!(avg_pool2d(&x, (2, 2), (2, 2)).unwrap().data(), &[3.0]);

        let x = Tensor::from_fn([2, 3, 3, 4], |[n, c, y, x]| (n + 2 * c) as f64 + y as f64 * 0.1 - x as f64);
        let full = avg_pool2d(&x, (3, 4), (1, 1)).unwrap();
        let gap = global_avg_pool(&x).unwrap();
        assert!(full.max_abs_diff(&gap) < 1e-15);

        assert!(avg_pool2d(&x, (4, 4), (1, 1)).is_err());
    }

    #[test]
    fn avg_pool_output_within_input_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random([1, 2, 6, 6], &mut rng);
        let y = avg_pool2d(&x, (3, 2), (1, 2)).unwrap();
        assert!(y.min_value() >= x.min_value() && y.max_value() <= x.max_value());
    }

    #[test]
    fn relu_values() {
        let x = t([1, 1, 1, 3], &[-1.0, 0.0, 2.5]);
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.5]);
    }

    #[test]
    fn global_avg_pool_values() {
        let x = t([1, 2, 2, 2], &[1.0, 3.0, 5.0, 7.0, 2.0, 2.0, 2.0, 2.0]);
        assert_eq!(global_avg_pool(&x).unwrap().data(), &[4.0, 2.0]);
        let one = t([1, 2, 1, 1], &[0.25, -4.0]);
        assert_eq!(global_avg_pool(&one).unwrap(), one);
    }

    #[test]
    fn concat_shapes_and_order() {
        let a = Tensor::from_rows(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Tensor::from_rows(2, 3, vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]).unwrap();
        let ab = concat_features(&a, &b).unwrap();
        assert_eq!(ab.shape(), [2, 6, 1, 1]);
        assert_eq!(&ab.row(1)[..3], a.row(1));

        let empty = Tensor::from_rows(2, 0, vec![]).unwrap();
        assert_eq!(concat_features(&empty, &b).unwrap(), b);

        let c = Tensor::from_rows(3, 1, vec![0.0; 3]).unwrap();
        assert!(concat_features(&a, &c).is_err());

        let (l, r) = split_features(&ab, 3).unwrap();
        assert_eq!((l, r), (a, b));
    }

    #[test]
    fn linear_values() {
        let p = LinearParams::new(1, 2, vec![1.0, 2.0], vec![1.0]).unwrap();
        let x = Tensor::from_rows(1, 2, vec![3.0, 4.0]).unwrap();
        assert_eq!(linear(&x, &p).unwrap().data(), &[12.0]);

        let z = Tensor::from_rows(1, 2, vec![0.0, 0.0]).unwrap();
        let p = LinearParams::new(2, 2, vec![1.0, 0.0, 0.0, 1.0], vec![0.5, -0.5]).unwrap();
        assert_eq!(linear(&z, &p).unwrap().data(), &[0.5, -0.5]);
        let id = LinearParams::new(2, 2, vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0]).unwrap();
        assert_eq!(linear(&x, &id).unwrap().data(), x.data());

        let bad = Tensor::from_rows(1, 3, vec![0.0; 3]).unwrap();
        assert!(linear(&bad, &p).is_err());
    }

    #[test]
    fn cross_entropy_values() {
        for k in [2usize, 5, 9] {
            let logits = Tensor::from_rows(1, k, vec![0.3; k]).unwrap();
            let (loss, _) = softmax_cross_entropy(&logits, &[1]).unwrap();
            assert!((loss - (k as f64).ln()).abs() < 1e-12);
        }
        let logits = Tensor::from_rows(1, 3, vec![0.0, 0.0, 800.0]).unwrap();
        assert!(softmax_cross_entropy(&logits, &[2]).unwrap().0 < 1e-300);

        // -ln(e^3 / (e + e^2 + e^3)) evaluated directly
        let logits = Tensor::from_rows(1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        let (loss, _) = softmax_cross_entropy(&logits, &[2]).unwrap();
        let direct = -(3f64.exp() / (1f64.exp() + 2f64.exp() + 3f64.exp())).ln();
        assert!((direct - 0.40760596).abs() < 1e-8);
        assert!((loss - direct).abs() < 1e-14);

        assert!(matches!(
            softmax_cross_entropy(&logits, &[3]),
            Err(Error::LabelOutOfRange { label: 3, classes: 3 })
        ));
    }

    #[test]
    fn cross_entropy_grad_rows_sum_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let logits = Tensor::from_fn([8, 9, 1, 1], |_| rng.gen_range(-5.0..5.0));
        let labels: Vec<usize> = (0..8).map(|i| i % 9).collect();
        let (_, g) = softmax_cross_entropy(&logits, &labels).unwrap();
        for i in 0..8 {
            assert!(g.row(i).iter().sum::<f64>().abs() < 1e-12);
        }
    }

    // Central differences of a scalar functional against analytic gradients.
    fn check(analytic: &[f64], mut f: impl FnMut(usize, f64) -> f64, base: &[f64]) {
        let h = 1e-5;
        for (i, &a) in analytic.iter().enumerate() {
            let numeric = (f(i, base[i] + h) - f(i, base[i] - h)) / (2.0 * h);
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
            assert!(err <= 1e-6, "entry {i}: analytic {a} numeric {numeric}");
        }
    }

    fn weighted_sum(y: &Tensor, w: &Tensor) -> f64 {
        y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random([2, 2, 5, 4], &mut rng);
        let p = ConvParams::uniform(3, 2, (2, 3), (2, 1), &mut rng);
        let up = random(conv2d(&x, &p).unwrap().shape(), &mut rng);
        let (dx, dw, db) = conv2d_backward(&x, &p, &up).unwrap();
        check(
            dx.data(),
            |i, v| {
                let mut xx = x.clone();
                xx.data_mut()[i] = v;
                weighted_sum(&conv2d(&xx, &p).unwrap(), &up)
            },
            x.data(),
        );
        check(
            &dw,
            |i, v| {
                let mut pp = p.clone();
                pp.weights[i] = v;
                weighted_sum(&conv2d(&x, &pp).unwrap(), &up)
            },
            &p.weights,
        );
        check(
            &db,
            |i, v| {
                let mut pp = p.clone();
                pp.bias[i] = v;
                weighted_sum(&conv2d(&x, &pp).unwrap(), &up)
            },
            &p.bias,
        );
    }

    #[test]
    fn pooling_and_linear_backward_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random([2, 3, 5, 5], &mut rng);

        let up = random([2, 3, 2, 2], &mut rng);
        let dx = avg_pool2d_backward(x.shape(), (3, 2), (2, 3), &up).unwrap();
        check(
            dx.data(),
            |i, v| {
                let mut xx = x.clone();
                xx.data_mut()[i] = v;
                weighted_sum(&avg_pool2d(&xx, (3, 2), (2, 3)).unwrap(), &up)
            },
            x.data(),
        );

        let up = random([2, 3, 1, 1], &mut rng);
        let dx = global_avg_pool_backward(x.shape(), &up).unwrap();
        check(
            dx.data(),
            |i, v| {
                let mut xx = x.clone();
                xx.data_mut()[i] = v;
                weighted_sum(&global_avg_pool(&xx).unwrap(), &up)
            },
            x.data(),
        );

        let p = LinearParams::uniform(4, 75, &mut rng);
        let up = random([2, 4, 1, 1], &mut rng);
        let (dx, dw, _) = linear_backward(&x, &p, &up).unwrap();
        assert_eq!(dx.shape(), x.shape());
        check(
            dx.data(),
            |i, v| {
                let mut xx = x.clone();
                xx.data_mut()[i] = v;
                weighted_sum(&linear(&xx, &p).unwrap(), &up)
            },
            x.data(),
        );
        check(
            &dw,
            |i, v| {
                let mut pp = p.clone();
                pp.weights[i] = v;
                weighted_sum(&linear(&x, &pp).unwrap(), &up)
            },
            &p.weights,
        );
    }

    #[test]
    fn cross_entropy_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let logits = Tensor::from_fn([4, 5, 1, 1], |_| rng.gen_range(-3.0..3.0));
        let labels = [0, 4, 2, 2];
        let (_, g) = softmax_cross_entropy(&logits, &labels).unwrap();
        check(
            g.data(),
            |i, v| {
                let mut z = logits.clone();
                z.data_mut()[i] = v;
                softmax_cross_entropy(&z, &labels).unwrap().0
            },
            logits.data(),
        );
    }

    #[test]
    fn relu_backward_masks() {
        let pre = t([1, 1, 1, 3], &[-1.0, 0.0, 2.0]);
        let g = t([1, 1, 1, 3], &[5.0, 5.0, 5.0]);
        assert_eq!(relu_backward(&pre, &g).unwrap().data(), &[0.0, 0.0, 5.0]);
    }
}
