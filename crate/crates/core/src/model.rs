//! Tiny convolutional classifier and its class activation maps.
//!
//! Layout: `conv3x3 -> relu`, then for every further block
//! `avgpool2 -> conv3x3 -> relu`, then global average pooling and one linear
//! layer. The post-ReLU output of the last block is the feature map stack
//! `f_k(x, y)` from which CAM and CAAM are taken.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{shape_err, Error, Result};
use crate::ops;
use crate::params::ParamSet;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct TinyCnnConfig {
    pub in_channels: usize,
    pub widths: Vec<usize>,
    pub num_classes: usize,
    pub input_size: usize,
}

impl Default for TinyCnnConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            widths: vec![8, 16, 16],
            num_classes: 4,
            input_size: 32,
        }
    }
}

impl TinyCnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::InvalidConfig("widths must be non-empty and positive".into()));
        }
        if self.in_channels == 0 || self.num_classes == 0 {
            return Err(Error::InvalidConfig("in_channels and num_classes must be positive".into()));
        }
        let factor = 1usize << (self.widths.len() - 1);
        if self.input_size == 0 || self.input_size % factor != 0 {
            return Err(Error::InvalidConfig(format!(
                "input_size {} not divisible by {factor}",
                self.input_size
            )));
        }
        Ok(())
    }

    /// Side length of the final feature maps.
    pub fn feature_size(&self) -> usize {
        self.input_size >> (self.widths.len() - 1)
    }

    pub fn feature_channels(&self) -> usize {
        *self.widths.last().expect("validated widths")
    }
}

pub fn conv_weight_name(block: usize) -> String {
    format!("conv{block}.weight")
}

pub fn conv_bias_name(block: usize) -> String {
    format!("conv{block}.bias")
}

pub const FC_WEIGHT: &str = "fc.weight";
pub const FC_BIAS: &str = "fc.bias";

/// Everything one forward pass yields for one image.
#[derive(Debug, Clone)]
pub struct ActivationBundle {
    /// `f_k(x, y)`: `[K, H', W']`, post-ReLU.
    pub feature_maps: Tensor,
    /// `F_k`: `[K]`.
    pub pooled: Tensor,
    /// `z`: `[num_classes]`.
    pub logits: Tensor,
    /// CAM for `label`: `[H', W']`.
    pub cam: Tensor,
    /// CAAM: `[H', W']`.
    pub caam: Tensor,
    pub label: usize,
    trace: Vec<BlockTrace>,
}

#[derive(Debug, Clone)]
struct BlockTrace {
    /// Shape before the 2×2 pool, when the block pools.
    pooled_from: Option<Vec<usize>>,
    conv_input: Tensor,
    pre_activation: Tensor,
}

impl ActivationBundle {
    /// Smallest `|x|` over every ReLU input, i.e. the distance of this pass
    /// from the nearest activation kink.
    pub fn min_abs_preactivation(&self) -> f64 {
        self.trace
            .iter()
            .flat_map(|t| t.pre_activation.data().iter())
            .fold(f64::INFINITY, |m, v| m.min(v.abs()))
    }
}

/// Upstream gradients of a scalar objective w.r.t. a bundle's outputs.
#[derive(Debug, Clone)]
pub struct BundleGrads {
    pub logits: Tensor,
    pub cam: Option<Tensor>,
    pub caam: Option<Tensor>,
}

/// `CAM(x, y) = Σ_k w_k f_k(x, y)`.
pub fn cam_extract(feature_maps: &Tensor, class_weights: &Tensor) -> Result<Tensor> {
    let s = feature_maps.shape();
    if s.len() != 3 {
        return Err(shape_err("cam_extract", &[0, 0, 0], s));
    }
    class_weights.expect_shape("cam_extract weights", &[s[0]])?;
    let plane = s[1] * s[2];
    let mut out = vec![0.0; plane];
    for (k, &wk) in class_weights.data().iter().enumerate() {
        for (o, f) in out.iter_mut().zip(feature_maps.channel(k)) {
            *o += wk * f;
        }
    }
    Tensor::new(&[s[1], s[2]], out)
}

/// `CAAM(x, y) = Σ_k f_k(x, y)`.
pub fn caam_extract(feature_maps: &Tensor) -> Result<Tensor> {
    let k = feature_maps.shape().first().copied().unwrap_or(0);
    cam_extract(feature_maps, &Tensor::full(&[k], 1.0))
}

/// Gradients of [`cam_extract`] w.r.t. the maps and the class weights.
pub fn cam_backward(
    feature_maps: &Tensor,
    class_weights: &Tensor,
    grad_cam: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let s = feature_maps.shape();
    grad_cam.expect_shape("cam_backward", &s[1..])?;
    let g = grad_cam.data();
    let mut gf = Vec::with_capacity(feature_maps.len());
    let mut gw = Vec::with_capacity(s[0]);
    for (k, &wk) in class_weights.data().iter().enumerate() {
        let fk = feature_maps.channel(k);
        gf.extend(g.iter().map(|gi| wk * gi));
        gw.push(fk.iter().zip(g).map(|(a, b)| a * b).sum());
    }
    Ok((Tensor::new(s, gf)?, Tensor::new(&[s[0]], gw)?))
}

#[derive(Debug, Clone)]
pub struct TinyCnn {
    config: TinyCnnConfig,
}

impl TinyCnn {
    pub fn new(config: TinyCnnConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &TinyCnnConfig {
        &self.config
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init_params(&self, rng: &mut impl Rng) -> ParamSet {
        let mut p = ParamSet::new();
        let mut c_in = self.config.in_channels;
        for (b, &c_out) in self.config.widths.iter().enumerate() {
            let limit = libm::sqrt(6.0 / ((c_in + c_out) * 9) as f64);
            let n = c_out * c_in * 9;
            let w = (0..n).map(|_| rng.random_range(-limit..limit)).collect();
            p.insert(conv_weight_name(b), Tensor::new(&[c_out, c_in, 3, 3], w).expect("sized"));
            p.insert(conv_bias_name(b), Tensor::zeros(&[c_out]));
            c_in = c_out;
        }
        let classes = self.config.num_classes;
        let limit = libm::sqrt(6.0 / (c_in + classes) as f64);
        let w = (0..classes * c_in).map(|_| rng.random_range(-limit..limit)).collect();
        p.insert(FC_WEIGHT, Tensor::new(&[classes, c_in], w).expect("sized"));
        p.insert(FC_BIAS, Tensor::zeros(&[classes]));
        p
    }

    /// Row `label` of the classifier weights.
    pub fn class_weights(&self, params: &ParamSet, label: usize) -> Result<Tensor> {
        let w = params.get(FC_WEIGHT)?;
        let k = self.config.feature_channels();
        w.expect_shape("fc.weight", &[self.config.num_classes, k])?;
        if label >= self.config.num_classes {
            return Err(Error::LabelOutOfRange {
                label,
                num_classes: self.config.num_classes,
            });
        }
        Tensor::new(&[k], w.data()[label * k..(label + 1) * k].to_vec())
    }

    pub fn forward(&self, params: &ParamSet, image: &Tensor, label: usize) -> Result<ActivationBundle> {
        let s = self.config.input_size;
        image.expect_shape("forward image", &[self.config.in_channels, s, s])?;
        // Pixels in [0,1] are mapped to [-1,1]; zero-mean inputs keep plain SGD well conditioned.
        let mut x = image.map(|v| 2.0 * v - 1.0);
        let mut trace = Vec::with_capacity(self.config.widths.len());
        for b in 0..self.config.widths.len() {
            let pooled_from = if b > 0 {
                let shape = x.shape().to_vec();
                x = ops::avg_pool2(&x)?;
                Some(shape)
            } else {
                None
            };
            let pre = ops::conv2d_forward(
                &x,
                params.get(&conv_weight_name(b))?,
                params.get(&conv_bias_name(b))?,
            )?;
            let next = ops::relu(&pre);
            trace.push(BlockTrace {
                pooled_from,
                conv_input: x,
                pre_activation: pre,
            });
            x = next;
        }
        let pooled = ops::global_avg_pool(&x)?;
        let logits = ops::linear(&pooled, params.get(FC_WEIGHT)?, params.get(FC_BIAS)?)?;
        let cam = cam_extract(&x, &self.class_weights(params, label)?)?;
        let caam = caam_extract(&x)?;
        Ok(ActivationBundle {
            feature_maps: x,
            pooled,
            logits,
            cam,
            caam,
            label,
            trace,
        })
    }

    /// Logits only, for prediction.
    pub fn logits(&self, params: &ParamSet, image: &Tensor) -> Result<Tensor> {
        Ok(self.forward(params, image, 0)?.logits)
    }

    pub fn predict(&self, params: &ParamSet, image: &Tensor) -> Result<usize> {
        Ok(argmax(self.logits(params, image)?.data()))
    }

    /// Parameter gradients given upstream gradients on the bundle outputs.
    pub fn backward(
        &self,
        params: &ParamSet,
        bundle: &ActivationBundle,
        upstream: &BundleGrads,
    ) -> Result<ParamSet> {
        let mut grads = params.zeros_like();
        let fc_w = params.get(FC_WEIGHT)?;
        let fc_b = params.get(FC_BIAS)?;
        let lin = ops::linear_backward(&bundle.pooled, fc_w, fc_b, &upstream.logits)?;
        let mut d_feat =
            ops::global_avg_pool_backward(bundle.feature_maps.shape(), &lin.features)?;
        let mut d_fc_w = lin.weights;
        if let Some(g_cam) = &upstream.cam {
            let w = self.class_weights(params, bundle.label)?;
            let (gf, gw) = cam_backward(&bundle.feature_maps, &w, g_cam)?;
            add_into(d_feat.data_mut(), gf.data());
            let k = w.len();
            let row = &mut d_fc_w.data_mut()[bundle.label * k..(bundle.label + 1) * k];
            add_into(row, gw.data());
        }
        if let Some(g_caam) = &upstream.caam {
            g_caam.expect_shape("caam grad", &bundle.feature_maps.shape()[1..])?;
            let plane = g_caam.len();
            for chunk in d_feat.data_mut().chunks_mut(plane) {
                add_into(chunk, g_caam.data());
            }
        }
        *grads.get_mut(FC_WEIGHT)? = d_fc_w;
        *grads.get_mut(FC_BIAS)? = lin.bias;

        let mut upstream_x = d_feat;
        for (b, t) in bundle.trace.iter().enumerate().rev() {
            let d_pre = ops::relu_backward(&t.pre_activation, &upstream_x)?;
            let kernel = params.get(&conv_weight_name(b))?;
            let bias = params.get(&conv_bias_name(b))?;
            if b == 0 {
                let (gk, gb) = ops::conv2d_backward_params(&t.conv_input, kernel, bias, &d_pre)?;
                *grads.get_mut(&conv_weight_name(b))? = gk;
                *grads.get_mut(&conv_bias_name(b))? = gb;
                break;
            }
            let conv = ops::conv2d_backward(&t.conv_input, kernel, bias, &d_pre)?;
            *grads.get_mut(&conv_weight_name(b))? = conv.kernel;
            *grads.get_mut(&conv_bias_name(b))? = conv.bias;
            upstream_x = match &t.pooled_from {
                Some(shape) => ops::avg_pool2_backward(shape, &conv.input)?,
                None => conv.input,
            };
        }
        Ok(grads)
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
