//! The three small architectures of the synthetic texture experiments:
//!
//! * `ConvOnly`: 3x3 conv (1 -> 3) + ReLU, GAP, linear (3 -> classes)
//! * `HistOnly`: histogram layer (3 bins, 1 channel, 3x3 window), GAP,
//!   linear (3 -> classes)
//! * `Combination`: both branches, features concatenated (conv first),
//!   linear (6 -> classes)

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hist::{HistogramCache, HistogramConfig, HistogramLayer};
use crate::tensor::{self, ConvParams, LinearParams, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelVariant {
    ConvOnly,
    HistOnly,
    Combination,
}

impl ModelVariant {
    pub const ALL: [ModelVariant; 3] = [Self::ConvOnly, Self::HistOnly, Self::Combination];

    pub fn has_conv(self) -> bool {
        matches!(self, Self::ConvOnly | Self::Combination)
    }

    pub fn has_hist(self) -> bool {
        matches!(self, Self::HistOnly | Self::Combination)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::ConvOnly => "conv_only",
            Self::HistOnly => "hist_only",
            Self::Combination => "combination",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub variant: ModelVariant,
    /// Output maps of each feature extractor.
    pub feature_channels: usize,
    pub kernel: (usize, usize),
    pub num_classes: usize,
    pub histogram: HistogramConfig,
}

impl ModelSpec {
    /// The synthetic-experiment setup: 3 feature maps, 3x3 kernels and an
    /// RBF histogram with equispaced bins on `[0, 1]`, stride 1.
    pub fn synthetic(variant: ModelVariant, num_classes: usize) -> Self {
        Self {
            variant,
            feature_channels: 3,
            kernel: (3, 3),
            num_classes,
            histogram: HistogramConfig::rbf(3, 1, (3, 3), (1, 1)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.feature_channels == 0 {
            return Err(Error::InvalidArgument(
                "model needs at least one class and one feature map".into(),
            ));
        }
        if self.variant.has_hist() {
            self.histogram.validate()?;
            if self.histogram.input_channels() != 1 {
                return Err(Error::InvalidArgument(
                    "histogram branch consumes the single grayscale channel".into(),
                ));
            }
            if self.histogram.output_channels() != self.feature_channels {
                return Err(Error::InvalidArgument(format!(
                    "histogram produces {} maps, model expects {}",
                    self.histogram.output_channels(),
                    self.feature_channels
                )));
            }
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        let branches = usize::from(self.variant.has_conv()) + usize::from(self.variant.has_hist());
        branches * self.feature_channels
    }

    /// Parameter count implied by the architecture.
    pub fn expected_param_count(&self) -> usize {
        let (kh, kw) = self.kernel;
        let conv = if self.variant.has_conv() {
            self.feature_channels * (kh * kw + 1)
        } else {
            0
        };
        let hist = if self.variant.has_hist() {
            let h = &self.histogram;
            2 * h.bins * h.channels + h.reduce_from.map_or(0, |c| (c + 1) * h.channels)
        } else {
            0
        };
        conv + hist + (self.feature_dim() + 1) * self.num_classes
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    spec: ModelSpec,
    conv: Option<ConvParams>,
    hist: Option<HistogramLayer>,
    fc: LinearParams,
    /// Bumped on every parameter update; caches carry the version they saw.
    #[serde(skip)]
    version: u64,
}

/// Intermediates from [`Model::forward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    version: u64,
    input_shape: [usize; 4],
    input: Tensor,
    conv_pre: Option<Tensor>,
    hist: Option<(HistogramCache, [usize; 4])>,
    features: Tensor,
}

impl ForwardCache {
    /// Pre-FC features, `(N, d)`.
    pub fn features(&self) -> &Tensor {
        &self.features
    }
}

/// Parameter gradients in [`Model::param_groups`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub groups: Vec<(&'static str, Vec<f64>)>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.groups
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, v)| v.as_slice())
    }

    pub fn is_zero(&self) -> bool {
        self.groups.iter().all(|(_, v)| v.iter().all(|&g| g == 0.0))
    }
}

impl Model {
    /// Conv and linear layers get uniform `+-1/sqrt(fan_in)` weights from
    /// seed-derived streams, so two variants built with the same seed share
    /// their conv initialisation.
    pub fn build(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let conv = spec.variant.has_conv().then(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(1);
            ConvParams::uniform(spec.feature_channels, 1, spec.kernel, (1, 1), &mut rng)
        });
        let hist = if spec.variant.has_hist() {
            Some(HistogramLayer::new(spec.histogram.clone(), seed)?)
        } else {
            None
        };
        let fc = {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(2);
            LinearParams::uniform(spec.num_classes, spec.feature_dim(), &mut rng)
        };
        let model = Self {
            spec,
            conv,
            hist,
            fc,
            version: 0,
        };
        let (actual, expected) = (model.param_count(), model.spec.expected_param_count());
        if actual != expected {
            return Err(Error::InvalidArgument(format!(
                "constructed {actual} parameters, architecture implies {expected}"
            )));
        }
        Ok(model)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn conv(&self) -> Option<&ConvParams> {
        self.conv.as_ref()
    }

    pub fn hist(&self) -> Option<&HistogramLayer> {
        self.hist.as_ref()
    }

    pub fn fc(&self) -> &LinearParams {
        &self.fc
    }

    pub fn param_count(&self) -> usize {
        self.conv.as_ref().map_or(0, ConvParams::param_count)
            + self.hist.as_ref().map_or(0, HistogramLayer::param_count)
            + self.fc.param_count()
    }

    /// Named parameter groups in a fixed order.
    pub fn param_groups(&self) -> Vec<(&'static str, &[f64])> {
        let mut groups: Vec<(&'static str, &[f64])> = Vec::new();
        if let Some(conv) = &self.conv {
            groups.push(("conv.weight", &conv.weights));
            groups.push(("conv.bias", &conv.bias));
        }
        if let Some(hist) = &self.hist {
            groups.push(("hist.centers", hist.params.centers()));
            groups.push(("hist.widths", hist.params.widths()));
            if let Some(reduce) = &hist.reduce {
                groups.push(("hist.reduce.weight", &reduce.weights));
                groups.push(("hist.reduce.bias", &reduce.bias));
            }
        }
        groups.push(("fc.weight", &self.fc.weights));
        groups.push(("fc.bias", &self.fc.bias));
        groups
    }

    /// Mutable view of [`Model::param_groups`]. Invalidates outstanding caches.
    pub fn param_groups_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        self.version += 1;
        let mut groups: Vec<(&'static str, &mut [f64])> = Vec::new();
        if let Some(conv) = &mut self.conv {
            groups.push(("conv.weight", &mut conv.weights));
            groups.push(("conv.bias", &mut conv.bias));
        }
        if let Some(hist) = &mut self.hist {
            let HistogramLayer { params, reduce, .. } = hist;
            let (centers, widths) = params.centers_and_widths_mut();
            groups.push(("hist.centers", centers));
            groups.push(("hist.widths", widths));
            if let Some(reduce) = reduce {
                groups.push(("hist.reduce.weight", &mut reduce.weights));
                groups.push(("hist.reduce.bias", &mut reduce.bias));
            }
        }
        groups.push(("fc.weight", &mut self.fc.weights));
        groups.push(("fc.bias", &mut self.fc.bias));
        groups
    }

    /// Replaces every parameter from `(name, values)` pairs, e.g. a checkpoint.
    pub fn load_params(&mut self, groups: &[(String, Vec<f64>)]) -> Result<()> {
        let mut targets = self.param_groups_mut();
        if groups.len() != targets.len() {
            return Err(Error::shape(
                "load_params",
                format!("{} groups given, model has {}", groups.len(), targets.len()),
            ));
        }
        for ((name, dst), (src_name, src)) in targets.iter_mut().zip(groups) {
            if name != src_name || dst.len() != src.len() {
                return Err(Error::shape(
                    "load_params",
                    format!("group {src_name} ({}) does not match {name} ({})", src.len(), dst.len()),
                ));
            }
            dst.copy_from_slice(src);
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, ForwardCache)> {
        if x.channels() != 1 {
            return Err(Error::shape(
                "Model::forward",
                format!("expected grayscale (1 channel) input, got {}", x.channels()),
            ));
        }
        let mut parts = Vec::with_capacity(2);
        let conv_pre = match &self.conv {
            Some(conv) => {
                let pre = tensor::conv2d(x, conv)?;
                parts.push(tensor::global_avg_pool(&tensor::relu(&pre))?);
                Some(pre)
            }
            None => None,
        };
        let hist = match &self.hist {
            Some(layer) => {
                let (maps, cache) = layer.forward(x)?;
                parts.push(tensor::global_avg_pool(&maps)?);
                Some((cache, maps.shape()))
            }
            None => None,
        };
        let features = match parts.as_slice() {
            [only] => tensor::Tensor::from_rows(only.batch(), only.features(), only.data().to_vec())?,
            [a, b] => tensor::concat_features(a, b)?,
            _ => unreachable!("validated specs have one or two branches"),
        };
        let logits = tensor::linear(&features, &self.fc)?;
        Ok((
            logits,
            ForwardCache {
                version: self.version,
                input_shape: x.shape(),
                input: x.clone(),
                conv_pre,
                hist,
                features,
            },
        ))
    }

    /// Pre-FC feature vectors, `(N, d)`.
    pub fn features(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward(x)?.1.features)
    }

    pub fn backward(&self, cache: &ForwardCache, grad_logits: &Tensor) -> Result<Gradients> {
        if cache.version != self.version {
            return Err(Error::StaleCache {
                cache: cache.version,
                model: self.version,
            });
        }
        let (grad_features, fc_w, fc_b) = tensor::linear_backward(&cache.features, &self.fc, grad_logits)?;
        let c = self.spec.feature_channels;
        let (grad_conv_feat, grad_hist_feat) = match (self.conv.is_some(), self.hist.is_some()) {
            (true, true) => {
                let (a, b) = tensor::split_features(&grad_features, c)?;
                (Some(a), Some(b))
            }
            (true, false) => (Some(grad_features), None),
            (false, true) => (None, Some(grad_features)),
            (false, false) => unreachable!("validated specs have at least one branch"),
        };
        let n = cache.input_shape[0];

        let mut groups = Vec::new();
        if let (Some(conv), Some(pre), Some(g)) = (&self.conv, &cache.conv_pre, grad_conv_feat) {
            let g = Tensor::new([n, c, 1, 1], g.into_data())?;
            let g_act = tensor::global_avg_pool_backward(pre.shape(), &g)?;
            let g_pre = tensor::relu_backward(pre, &g_act)?;
            let (_, dw, db) = tensor::conv2d_backward(&cache.input, conv, &g_pre)?;
            groups.push(("conv.weight", dw));
            groups.push(("conv.bias", db));
        }
        if let (Some(layer), Some((hcache, maps_shape)), Some(g)) = (&self.hist, &cache.hist, grad_hist_feat) {
            let g = Tensor::new([n, c, 1, 1], g.into_data())?;
            let g_maps = tensor::global_avg_pool_backward(*maps_shape, &g)?;
            let hg = layer.backward(hcache, &g_maps)?;
            groups.push(("hist.centers", hg.centers));
            groups.push(("hist.widths", hg.widths));
            if let Some((dw, db)) = hg.reduce {
                groups.push(("hist.reduce.weight", dw));
                groups.push(("hist.reduce.bias", db));
            }
        }
        groups.push(("fc.weight", fc_w));
        groups.push(("fc.bias", fc_b));
        Ok(Gradients { groups })
    }

    /// Mean cross-entropy over the batch and its parameter gradients.
    pub fn loss_and_grads(&self, x: &Tensor, labels: &[usize]) -> Result<(f64, Gradients)> {
        let (logits, cache) = self.forward(x)?;
        let (loss, grad) = tensor::softmax_cross_entropy(&logits, labels)?;
        Ok((loss, self.backward(&cache, &grad)?))
    }

    pub fn loss(&self, x: &Tensor, labels: &[usize]) -> Result<f64> {
        let (logits, _) = self.forward(x)?;
        Ok(tensor::softmax_cross_entropy(&logits, labels)?.0)
    }

    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        Ok(tensor::argmax_rows(&self.forward(x)?.0))
    }
}
