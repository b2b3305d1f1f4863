//! Local frequency statistics.
//!
//! For every valid sliding window `p` and band `i`, the statistic is
//! `q_i = log10(max(eps, sum |D(p) * (base_i + sigma(raw_i))|))`. Windows are
//! taken without padding, so the map is `floor((H - w) / s) + 1` cells per side.
//! Colour inputs are reduced to Rec. 601 luma first.

use std::f64::consts::LN_10;

use crate::dct::{check_window, window_count, Dct2d};
use crate::error::{Error, Result};
use crate::filterbank::FilterBank;
use crate::image::Image;
use crate::plane::Plane;

pub const DEFAULT_WINDOW: usize = 10;
pub const DEFAULT_STRIDE: usize = 2;
pub const DEFAULT_BANDS: usize = 6;
pub const DEFAULT_EPSILON: f64 = 1e-12;

/// Window geometry and log floor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LfsParams {
    pub window: usize,
    pub stride: usize,
    pub epsilon: f64,
}

impl Default for LfsParams {
    fn default() -> Self {
        Self {
            window: DEFAULT_WINDOW,
            stride: DEFAULT_STRIDE,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

impl LfsParams {
    /// Map side for an input of side `len`.
    pub fn grid_len(&self, len: usize) -> usize {
        window_count(len, self.window, self.stride)
    }
}

/// `rows`×`cols`×`M` statistics, stored cell-major with bands innermost.
#[derive(Clone, Debug, PartialEq)]
pub struct LfsMap {
    rows: usize,
    cols: usize,
    m_bands: usize,
    data: Vec<f64>,
    params: LfsParams,
}

impl LfsMap {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn m_bands(&self) -> usize {
        self.m_bands
    }

    pub fn params(&self) -> LfsParams {
        self.params
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, band: usize) -> f64 {
        self.data[(i * self.cols + j) * self.m_bands + band]
    }

    /// One `rows`×`cols` plane per band, low to high.
    pub fn band_planes(&self) -> Vec<Plane> {
        (0..self.m_bands)
            .map(|b| Plane::from_fn(self.rows, self.cols, |i, j| self.get(i, j, b)))
            .collect()
    }

    /// Mean statistic of one band over the whole map.
    pub fn band_mean(&self, band: usize) -> f64 {
        let n = self.rows * self.cols;
        (0..n)
            .map(|k| self.data[k * self.m_bands + band])
            .sum::<f64>()
            / n as f64
    }
}

fn check_args(plane: &Plane, bank: &FilterBank, params: &LfsParams) -> Result<()> {
    check_window(plane.rows(), plane.cols(), params.window, params.stride)?;
    if !(params.epsilon > 0.0) {
        return Err(Error::arg(format!(
            "epsilon must be positive, got {}",
            params.epsilon
        )));
    }
    if bank.size() != params.window {
        return Err(Error::arg(format!(
            "filter bank side {} does not match window {}",
            bank.size(),
            params.window
        )));
    }
    Ok(())
}

/// Visits every window spectrum in raster order.
fn for_each_window(
    plane: &Plane,
    params: &LfsParams,
    mut f: impl FnMut(usize, usize, &[f64]),
) -> (usize, usize) {
    let (w, s) = (params.window, params.stride);
    let rows = window_count(plane.rows(), w, s);
    let cols = window_count(plane.cols(), w, s);
    let mut kernel = Dct2d::new(w, w);
    let mut spec = vec![0.0; w * w];
    let pitch = plane.cols();
    for i in 0..rows {
        for j in 0..cols {
            kernel.forward_into(&plane.data()[i * s * pitch + j * s..], pitch, &mut spec);
            f(i, j, &spec);
        }
    }
    (rows, cols)
}

/// L1 norm of each band-filtered window spectrum.
#[inline]
fn band_norms(spec: &[f64], effective: &[Plane], out: &mut [f64]) {
    for (o, filter) in out.iter_mut().zip(effective) {
        *o = spec
            .iter()
            .zip(filter.data())
            .map(|(d, e)| (d * e).abs())
            .sum();
    }
}

/// Statistics map of a single-channel plane.
pub fn lfs_forward_plane(plane: &Plane, bank: &FilterBank, params: &LfsParams) -> Result<LfsMap> {
    check_args(plane, bank, params)?;
    let effective = bank.effective();
    let m = effective.len();
    let mut data = Vec::new();
    let mut norms = vec![0.0; m];
    let (rows, cols) = for_each_window(plane, params, |_, _, spec| {
        band_norms(spec, &effective, &mut norms);
        data.extend(norms.iter().map(|&n| n.max(params.epsilon).log10()));
    });
    Ok(LfsMap {
        rows,
        cols,
        m_bands: m,
        data,
        params: *params,
    })
}

/// Statistics map of an image (luma for colour input).
pub fn lfs_forward(x: &Image, bank: &FilterBank, params: &LfsParams) -> Result<LfsMap> {
    lfs_forward_plane(&x.luminance(), bank, params)
}

/// Gradient of a scalar loss with respect to each band's raw filter, given
/// `dL/dq` as one `rows`×`cols` plane per band.
///
/// Floored entries (L1 norm below epsilon) pass no gradient; `sign(0) = 0`.
pub fn lfs_backward_plane(
    upstream: &[Plane],
    plane: &Plane,
    bank: &FilterBank,
    params: &LfsParams,
) -> Result<Vec<Plane>> {
    check_args(plane, bank, params)?;
    let effective = bank.effective();
    let m = effective.len();
    let rows = params.grid_len(plane.rows());
    let cols = params.grid_len(plane.cols());
    if upstream.len() != m || upstream.iter().any(|p| p.dims() != (rows, cols)) {
        return Err(Error::arg(format!(
            "upstream must be {m} planes of {rows}x{cols}"
        )));
    }
    let w = params.window;
    let signs: Vec<Vec<f64>> = effective
        .iter()
        .map(|e| e.data().iter().map(|&v| sign(v)).collect())
        .collect();
    let mut grads = vec![vec![0.0; w * w]; m];
    let mut norms = vec![0.0; m];
    for_each_window(plane, params, |i, j, spec| {
        band_norms(spec, &effective, &mut norms);
        for band in 0..m {
            let g = upstream[band].get(i, j);
            if g == 0.0 || norms[band] < params.epsilon {
                continue;
            }
            let coef = g / (LN_10 * norms[band]);
            for ((acc, d), sg) in grads[band].iter_mut().zip(spec).zip(&signs[band]) {
                *acc += coef * d.abs() * sg;
            }
        }
    });
    Ok(grads
        .into_iter()
        .zip(bank.raw_grad_factors())
        .map(|(g, factor)| {
            let data = g.iter().zip(factor.data()).map(|(a, f)| a * f).collect();
            Plane::from_vec(w, w, data).expect("window dims")
        })
        .collect())
}

pub fn lfs_backward(
    upstream: &[Plane],
    x: &Image,
    bank: &FilterBank,
    params: &LfsParams,
) -> Result<Vec<Plane>> {
    lfs_backward_plane(upstream, &x.luminance(), bank, params)
}

#[inline]
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}
