//! Plain layers with explicit backward passes: 3×3 convolution, ReLU, 2×2
//! average pooling, global average pooling and a dense head.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::FeatureMap;

/// 3×3 convolution, stride 1, zero padding 1.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv3x3 {
    pub in_channels: usize,
    pub out_channels: usize,
    /// `out × in × 3 × 3`
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv3x3 {
    pub fn zeros(in_channels: usize, out_channels: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            weight: vec![0.0; out_channels * in_channels * 9],
            bias: vec![0.0; out_channels],
        }
    }

    /// He-normal weights, zero bias.
    pub fn init<R: Rng>(in_channels: usize, out_channels: usize, rng: &mut R) -> Self {
        let mut conv = Self::zeros(in_channels, out_channels);
        let std = (2.0 / (in_channels * 9) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        conv.weight.iter_mut().for_each(|w| *w = normal.sample(rng));
        conv
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn forward(&self, x: &FeatureMap) -> FeatureMap {
        debug_assert_eq!(x.channels(), self.in_channels);
        let (h, w) = (x.height(), x.width());
        let mut out = FeatureMap::zeros(self.out_channels, h, w);
        for oc in 0..self.out_channels {
            let dst = out.channel_mut(oc);
            dst.iter_mut().for_each(|v| *v = self.bias[oc]);
            for ic in 0..self.in_channels {
                let src = x.channel(ic);
                let kernel = &self.weight[(oc * self.in_channels + ic) * 9..][..9];
                for (k, &wv) in kernel.iter().enumerate() {
                    if wv == 0.0 {
                        continue;
                    }
                    let (dy, dx) = (k / 3, k % 3);
                    let (x_lo, x_hi) = (1usize.saturating_sub(dx), (w + 1 - dx).min(w));
                    for y in 0..h {
                        let sy = y + dy;
                        if sy == 0 || sy > h {
                            continue;
                        }
                        let srow = &src[(sy - 1) * w..sy * w];
                        let drow = &mut dst[y * w..(y + 1) * w];
                        for xo in x_lo..x_hi {
                            drow[xo] += wv * srow[xo + dx - 1];
                        }
                    }
                }
            }
        }
        out
    }

    /// Accumulates parameter gradients into `grads` and returns `dL/dx` when asked.
    pub fn backward(
        &self,
        x: &FeatureMap,
        grad_out: &FeatureMap,
        grads: &mut Conv3x3,
        want_input: bool,
    ) -> Option<FeatureMap> {
        let (h, w) = (x.height(), x.width());
        let mut dx = want_input.then(|| FeatureMap::zeros(self.in_channels, h, w));
        for oc in 0..self.out_channels {
            let g = grad_out.channel(oc);
            grads.bias[oc] += g.iter().sum::<f64>();
            for ic in 0..self.in_channels {
                let src = x.channel(ic);
                let base = (oc * self.in_channels + ic) * 9;
                for k in 0..9 {
                    let (dy, ddx) = (k / 3, k % 3);
                    let (x_lo, x_hi) = (1usize.saturating_sub(ddx), (w + 1 - ddx).min(w));
                    let wv = self.weight[base + k];
                    let mut acc = 0.0;
                    for y in 0..h {
                        let sy = y + dy;
                        if sy == 0 || sy > h {
                            continue;
                        }
                        let srow = &src[(sy - 1) * w..sy * w];
                        let grow = &g[y * w..(y + 1) * w];
                        for xo in x_lo..x_hi {
                            acc += grow[xo] * srow[xo + ddx - 1];
                        }
                        if let Some(dx) = dx.as_mut() {
                            let drow = &mut dx.channel_mut(ic)[(sy - 1) * w..sy * w];
                            for xo in x_lo..x_hi {
                                drow[xo + ddx - 1] += wv * grow[xo];
                            }
                        }
                    }
                    grads.weight[base + k] += acc;
                }
            }
        }
        dx
    }
}

pub fn relu(x: &FeatureMap) -> FeatureMap {
    let mut out = x.clone();
    out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    out
}

/// Masks `grad` by `pre > 0`.
pub fn relu_backward(pre: &FeatureMap, grad: &FeatureMap) -> FeatureMap {
    let mut out = grad.clone();
    for (g, p) in out.data_mut().iter_mut().zip(pre.data()) {
        if *p <= 0.0 {
            *g = 0.0;
        }
    }
    out
}

/// 2×2 average pooling, stride 2 (odd trailing rows/cols are dropped).
pub fn avg_pool2(x: &FeatureMap) -> FeatureMap {
    let (c, h, w) = x.shape();
    let (oh, ow) = (h / 2, w / 2);
    let mut out = FeatureMap::zeros(c, oh, ow);
    for ch in 0..c {
        let src = x.channel(ch);
        let dst = out.channel_mut(ch);
        for y in 0..oh {
            for xo in 0..ow {
                let i = 2 * y * w + 2 * xo;
                dst[y * ow + xo] = 0.25 * (src[i] + src[i + 1] + src[i + w] + src[i + w + 1]);
            }
        }
    }
    out
}

pub fn avg_pool2_backward(grad: &FeatureMap, in_h: usize, in_w: usize) -> FeatureMap {
    let (c, oh, ow) = grad.shape();
    let mut out = FeatureMap::zeros(c, in_h, in_w);
    for ch in 0..c {
        let g = grad.channel(ch);
        let dst = out.channel_mut(ch);
        for y in 0..oh {
            for xo in 0..ow {
                let v = 0.25 * g[y * ow + xo];
                let i = 2 * y * in_w + 2 * xo;
                dst[i] += v;
                dst[i + 1] += v;
                dst[i + in_w] += v;
                dst[i + in_w + 1] += v;
            }
        }
    }
    out
}

/// Channel means.
pub fn global_avg_pool(x: &FeatureMap) -> Vec<f64> {
    let n = x.area() as f64;
    (0..x.channels())
        .map(|c| x.channel(c).iter().sum::<f64>() / n)
        .collect()
}

pub fn global_avg_pool_backward(grad: &[f64], h: usize, w: usize) -> FeatureMap {
    let n = (h * w) as f64;
    let mut out = FeatureMap::zeros(grad.len(), h, w);
    for (c, g) in grad.iter().enumerate() {
        out.channel_mut(c).iter_mut().for_each(|v| *v = g / n);
    }
    out
}

/// Dense layer `y = W x + b` with `W` stored `out × in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weight: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    /// Xavier-normal weights, zero bias.
    pub fn init<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let mut lin = Self::zeros(inputs, outputs);
        let std = (2.0 / (inputs + outputs) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        lin.weight.iter_mut().for_each(|w| *w = normal.sample(rng));
        lin
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        (0..self.outputs)
            .map(|o| {
                self.bias[o]
                    + self.weight[o * self.inputs..(o + 1) * self.inputs]
                        .iter()
                        .zip(x)
                        .map(|(w, v)| w * v)
                        .sum::<f64>()
            })
            .collect()
    }

    pub fn backward(&self, x: &[f64], grad_out: &[f64], grads: &mut Linear) -> Vec<f64> {
        let mut dx = vec![0.0; self.inputs];
        for (o, g) in grad_out.iter().enumerate() {
            grads.bias[o] += g;
            let row = o * self.inputs;
            for i in 0..self.inputs {
                grads.weight[row + i] += g * x[i];
                dx[i] += g * self.weight[row + i];
            }
        }
        dx
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Cross-entropy of one example and its gradient with respect to the logits.
pub fn cross_entropy(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    let loss = log_sum - logits[label];
    let mut grad = softmax(logits);
    grad[label] -= 1.0;
    (loss, grad)
}
