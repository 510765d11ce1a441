#![allow(dead_code)]

use histlayer::hist::{Binning, HistogramConfig, HistogramParams, InitScheme};
use histlayer::Tensor;
use rand::Rng;

pub const FD_STEP: f64 = 1e-5;
pub const REL_FLOOR: f64 = 1e-3;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

pub fn central_diff(f: impl Fn(&[f64]) -> f64, at: &[f64]) -> Vec<f64> {
    let mut buf = at.to_vec();
    (0..at.len())
        .map(|i| {
            buf[i] = at[i] + FD_STEP;
            let hi = f(&buf);
            buf[i] = at[i] - FD_STEP;
            let lo = f(&buf);
            buf[i] = at[i];
            (hi - lo) / (2.0 * FD_STEP)
        })
        .collect()
}

fn response(binning: Binning, x: f64, mu: f64, gamma: f64) -> f64 {
    match binning {
        Binning::Rbf => (-(gamma * gamma) * (x - mu) * (x - mu)).exp(),
        Binning::PiecewiseLinear => {
            let v = 1.0 - gamma.abs() * (x - mu).abs();
            if v > 0.0 {
                v
            } else {
                0.0
            }
        }
    }
}

/// Literal double sum over each window, one output cell at a time.
pub fn oracle_forward(x: &Tensor, p: &HistogramParams, cfg: &HistogramConfig) -> Tensor {
    let [n, k_count, h, w] = x.shape();
    let bins = cfg.bins;
    let (s, t) = cfg.window;
    let (sh, sw) = cfg.stride;
    let rows = (h - s) / sh + 1;
    let cols = (w - t) / sw + 1;
    Tensor::from_fn([n, k_count * bins, rows, cols], |[i, ch, r, c]| {
        let k = ch / bins;
        let b = ch % bins;
        let mut acc = 0.0;
        for ds in 0..s {
            for dt in 0..t {
                let v = x.at(i, k, r * sh + ds, c * sw + dt);
                let own = response(cfg.binning, v, p.center(b, k), p.width(b, k));
                if cfg.sum_to_one {
                    let total: f64 = (0..bins)
                        .map(|j| response(cfg.binning, v, p.center(j, k), p.width(j, k)))
                        .sum();
                    acc += own / (total + 1e-12);
                } else {
                    acc += own;
                }
            }
        }
        if cfg.normalize_count {
            acc / (s * t) as f64
        } else {
            acc
        }
    })
}

/// A small random layer problem plus random upstream weights.
pub struct Case {
    pub x: Tensor,
    pub params: HistogramParams,
    pub cfg: HistogramConfig,
    pub upstream: Tensor,
}

impl Case {
    /// `sum(upstream * f(x, params))`.
    pub fn loss(&self, y: &Tensor) -> f64 {
        y.data().iter().zip(self.upstream.data()).map(|(a, b)| a * b).sum()
    }
}

pub fn random_config<R: Rng>(
    rng: &mut R,
    bins: usize,
    binning: Binning,
    normalize_count: bool,
    sum_to_one: bool,
) -> (HistogramConfig, usize, usize) {
    let channels = rng.gen_range(1..=2);
    let window = (rng.gen_range(1..=3), rng.gen_range(1..=3));
    let stride = (rng.gen_range(1..=2), rng.gen_range(1..=2));
    let h = window.0 + rng.gen_range(0..=3);
    let w = window.1 + rng.gen_range(0..=3);
    let cfg = HistogramConfig {
        bins,
        channels,
        window,
        stride,
        binning,
        normalize_count,
        sum_to_one,
        reduce_from: None,
        init: InitScheme::EquispacedOnRange { lo: 0.0, hi: 1.0 },
    };
    (cfg, h, w)
}

/// True when every per-element quantity is far enough from a
/// non-differentiable point for a central difference to be meaningful.
fn smooth_enough(x: &Tensor, p: &HistogramParams, cfg: &HistogramConfig) -> bool {
    const MARGIN: f64 = 1e-4;
    for n in 0..x.batch() {
        for k in 0..cfg.channels {
            for i in 0..x.height() {
                for j in 0..x.width() {
                    let v = x.at(n, k, i, j);
                    let mut total = 0.0;
                    for b in 0..cfg.bins {
                        let (mu, g) = (p.center(b, k), p.width(b, k));
                        if cfg.binning == Binning::PiecewiseLinear {
                            let z = g.abs() * (v - mu).abs();
                            if (z - 1.0).abs() < MARGIN || (v - mu).abs() < MARGIN || g.abs() < MARGIN {
                                return false;
                            }
                        }
                        total += response(cfg.binning, v, mu, g);
                    }
                    if cfg.sum_to_one && total > 0.0 && total < 1e-2 {
                        return false;
                    }
                }
            }
        }
    }
    true
}

pub fn random_case<R: Rng>(
    rng: &mut R,
    bins: usize,
    binning: Binning,
    normalize_count: bool,
    sum_to_one: bool,
) -> Case {
    loop {
        let (cfg, h, w) = random_config(rng, bins, binning, normalize_count, sum_to_one);
        let batch = rng.gen_range(1..=2);
        let x = Tensor::from_fn([batch, cfg.channels, h, w], |_| rng.gen_range(0.0..1.0));
        let count = bins * cfg.channels;
        let centers = (0..count).map(|_| rng.gen_range(0.0..1.0)).collect();
        let widths = (0..count)
            .map(|_| {
                let g = rng.gen_range(0.5..4.0);
                if rng.gen_bool(0.5) {
                    g
                } else {
                    -g
                }
            })
            .collect();
        let params = HistogramParams::new(bins, cfg.channels, centers, widths).unwrap();
        if !smooth_enough(&x, &params, &cfg) {
            continue;
        }
        let (rows, cols) = cfg.output_dims(h, w).unwrap();
        let upstream = Tensor::from_fn([batch, count, rows, cols], |_| rng.gen_range(-1.0..1.0));
        return Case {
            x,
            params,
            cfg,
            upstream,
        };
    }
}

/// Largest relative error of the analytic layer gradients against central
/// differences of `case.loss(bin_forward(..))`, as `(centers, widths, input)`.
pub fn layer_gradient_errors(case: &Case) -> [f64; 3] {
    use histlayer::hist::{bin_backward, bin_forward};
    let g = bin_backward(&case.x, &case.params, &case.cfg, &case.upstream).unwrap();
    let (bins, k) = (case.params.bins(), case.params.channels());
    let with_params = |centers: &[f64], widths: &[f64]| {
        let p = HistogramParams::new(bins, k, centers.to_vec(), widths.to_vec()).unwrap();
        case.loss(&bin_forward(&case.x, &p, &case.cfg).unwrap())
    };
    let centers = case.params.centers();
    let widths = case.params.widths();
    let num_c = central_diff(|c| with_params(c, widths), centers);
    let num_w = central_diff(|w| with_params(centers, w), widths);
    let shape = case.x.shape();
    let num_x = central_diff(
        |d| {
            let x = Tensor::new(shape, d.to_vec()).unwrap();
            case.loss(&bin_forward(&x, &case.params, &case.cfg).unwrap())
        },
        case.x.data(),
    );
    let worst = |a: &[f64], n: &[f64]| a.iter().zip(n).map(|(a, n)| rel_err(*a, *n)).fold(0.0, f64::max);
    [
        worst(&g.centers, &num_c),
        worst(&g.widths, &num_w),
        worst(g.input.data(), &num_x),
    ]
}

/// Rotates every `(n, c)` plane by 90 degrees counter-clockwise.
pub fn rot90(x: &Tensor) -> Tensor {
    let [n, c, h, w] = x.shape();
    Tensor::from_fn([n, c, w, h], |[i, ch, y, xx]| x.at(i, ch, xx, w - 1 - y))
}
