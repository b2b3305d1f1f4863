//! Channel-major feature maps and the small dense matrix kernels used by the
//! network layers.

use crate::error::{Error, Result};
use crate::plane::Plane;

/// A `C`×`H`×`W` tensor, channel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::arg("feature map dimensions must be positive"));
        }
        if data.len() != channels * height * width {
            return Err(Error::arg(format!(
                "feature data has {} entries, expected {channels}x{height}x{width}",
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    /// Stacks equally sized planes as channels.
    pub fn from_planes(planes: &[Plane]) -> Result<Self> {
        let first = planes
            .first()
            .ok_or_else(|| Error::arg("no planes to stack"))?;
        let (h, w) = first.dims();
        if planes.iter().any(|p| p.dims() != (h, w)) {
            return Err(Error::arg("planes differ in size"));
        }
        let mut data = Vec::with_capacity(planes.len() * h * w);
        for p in planes {
            data.extend_from_slice(p.data());
        }
        Self::from_vec(planes.len(), h, w, data)
    }

    pub fn to_planes(&self) -> Vec<Plane> {
        (0..self.channels)
            .map(|c| {
                Plane::from_vec(self.height, self.width, self.channel(c).to_vec()).expect("dims")
            })
            .collect()
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    /// `(C, H, W)`
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    /// Spatial size `H * W`.
    pub fn area(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.area();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.area();
        &mut self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn add_scaled(&mut self, other: &FeatureMap, k: f64) {
        assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += k * b;
        }
    }

    pub fn dot(&self, other: &FeatureMap) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    /// Concatenates along the channel axis.
    pub fn concat(a: &FeatureMap, b: &FeatureMap) -> Result<FeatureMap> {
        if (a.height, a.width) != (b.height, b.width) {
            return Err(Error::arg(
                "cannot concatenate maps of different spatial size",
            ));
        }
        let mut data = a.data.clone();
        data.extend_from_slice(&b.data);
        FeatureMap::from_vec(a.channels + b.channels, a.height, a.width, data)
    }

    /// Splits off the first `c` channels.
    pub fn split(&self, c: usize) -> (FeatureMap, FeatureMap) {
        assert!(c > 0 && c < self.channels);
        let n = c * self.area();
        (
            FeatureMap::from_vec(c, self.height, self.width, self.data[..n].to_vec()).unwrap(),
            FeatureMap::from_vec(
                self.channels - c,
                self.height,
                self.width,
                self.data[n..].to_vec(),
            )
            .unwrap(),
        )
    }

    /// Nearest-neighbour resampling to `out_h`×`out_w` (`floor(i * in / out)`).
    pub fn resize_nearest(&self, out_h: usize, out_w: usize) -> FeatureMap {
        let mut out = FeatureMap::zeros(self.channels, out_h, out_w);
        for c in 0..self.channels {
            for y in 0..out_h {
                let sy = y * self.height / out_h;
                for x in 0..out_w {
                    let sx = x * self.width / out_w;
                    out.data[(c * out_h + y) * out_w + x] = self.get(c, sy, sx);
                }
            }
        }
        out
    }

    /// Adjoint of [`resize_nearest`](Self::resize_nearest): scatters gradients
    /// of the resized map back onto a map of this tensor's source size.
    pub fn resize_nearest_backward(grad: &FeatureMap, in_h: usize, in_w: usize) -> FeatureMap {
        let (c, out_h, out_w) = grad.shape();
        let mut out = FeatureMap::zeros(c, in_h, in_w);
        for ch in 0..c {
            for y in 0..out_h {
                let sy = y * in_h / out_h;
                for x in 0..out_w {
                    let sx = x * in_w / out_w;
                    out.data[(ch * in_h + sy) * in_w + sx] += grad.get(ch, y, x);
                }
            }
        }
        out
    }
}

/// `out (m×n) = a (m×k) · b (k×n)`
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (o, bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `out (m×n) = a (m×k) · bᵀ` with `b` stored `n×k`.
pub fn matmul_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let ar = &a[i * k..(i + 1) * k];
        for j in 0..n {
            out[i * n + j] = ar
                .iter()
                .zip(&b[j * k..(j + 1) * k])
                .map(|(x, y)| x * y)
                .sum();
        }
    }
    out
}

/// `out (m×n) = aᵀ · b` with `a` stored `k×m` and `b` stored `k×n`.
pub fn matmul_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for p in 0..k {
        let br = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let av = a[p * m + i];
            if av == 0.0 {
                continue;
            }
            for (o, bv) in out[i * n..(i + 1) * n].iter_mut().zip(br) {
                *o += av * bv;
            }
        }
    }
    out
}
