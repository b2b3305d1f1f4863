//! Orthonormal 2D DCT-II and its inverse.
//!
//! Coefficient `(u, v)` sits at row `u`, column `v`, so low frequencies occupy the
//! top-left corner. With orthonormal scaling the transform is an isometry: the
//! inverse is the transpose, Parseval holds exactly, and the forward transform
//! is its own adjoint's inverse, which the backward passes in `fad` rely on.

use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::plane::Plane;

/// DCT coefficients laid out like the plane they came from.
pub type Spectrum = Plane;

/// Orthonormal 1D DCT-II matrix for length `n`.
///
/// `matrix[k * n + i] = alpha(k) * cos(pi * (2i + 1) * k / 2n)`.
#[derive(Debug)]
pub struct DctBasis {
    n: usize,
    matrix: Vec<f64>,
}

impl DctBasis {
    pub fn new(n: usize) -> Self {
        assert!(n > 0, "DCT length must be positive");
        let nf = n as f64;
        let mut matrix = vec![0.0; n * n];
        for k in 0..n {
            let alpha = if k == 0 {
                (1.0 / nf).sqrt()
            } else {
                (2.0 / nf).sqrt()
            };
            for i in 0..n {
                matrix[k * n + i] =
                    alpha * (PI * (2.0 * i as f64 + 1.0) * k as f64 / (2.0 * nf)).cos();
            }
        }
        Self { n, matrix }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn coeff(&self, k: usize, i: usize) -> f64 {
        self.matrix[k * self.n + i]
    }

    /// Returns the cached basis for length `n` (per thread).
    pub fn cached(n: usize) -> Rc<DctBasis> {
        thread_local! {
            static CACHE: RefCell<HashMap<usize, Rc<DctBasis>>> = RefCell::new(HashMap::new());
        }
        CACHE.with(|cache| {
            cache
                .borrow_mut()
                .entry(n)
                .or_insert_with(|| Rc::new(DctBasis::new(n)))
                .clone()
        })
    }
}

/// A reusable separable 2D transform for `rows`×`cols` blocks.
///
/// The `*_into` methods read a strided source so sliding windows can be
/// transformed in place without copying the patch first.
pub struct Dct2d {
    row_basis: Rc<DctBasis>,
    col_basis: Rc<DctBasis>,
    scratch: Vec<f64>,
}

impl Dct2d {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            row_basis: DctBasis::cached(rows),
            col_basis: DctBasis::cached(cols),
            scratch: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.row_basis.len()
    }

    pub fn cols(&self) -> usize {
        self.col_basis.len()
    }

    /// Forward transform of the block starting at `src[0]` with row pitch `stride`.
    pub fn forward_into(&mut self, src: &[f64], stride: usize, out: &mut [f64]) {
        let (h, w) = (self.rows(), self.cols());
        let cb = &self.col_basis.matrix;
        let rb = &self.row_basis.matrix;
        // tmp[m][v] = sum_n x[m][n] * C_w[v][n]
        for m in 0..h {
            let row = &src[m * stride..m * stride + w];
            let tmp_row = &mut self.scratch[m * w..(m + 1) * w];
            for (v, t) in tmp_row.iter_mut().enumerate() {
                let basis = &cb[v * w..(v + 1) * w];
                *t = row.iter().zip(basis).map(|(a, b)| a * b).sum();
            }
        }
        // out[u][v] = sum_m C_h[u][m] * tmp[m][v]
        out[..h * w].iter_mut().for_each(|o| *o = 0.0);
        for u in 0..h {
            let out_row = &mut out[u * w..(u + 1) * w];
            for m in 0..h {
                let k = rb[u * h + m];
                let tmp_row = &self.scratch[m * w..(m + 1) * w];
                for (o, t) in out_row.iter_mut().zip(tmp_row) {
                    *o += k * t;
                }
            }
        }
    }

    /// Inverse transform of a contiguous `rows`×`cols` coefficient block.
    pub fn inverse_into(&mut self, coeffs: &[f64], out: &mut [f64]) {
        let (h, w) = (self.rows(), self.cols());
        let cb = &self.col_basis.matrix;
        let rb = &self.row_basis.matrix;
        // tmp[u][n] = sum_v X[u][v] * C_w[v][n]
        self.scratch.iter_mut().for_each(|t| *t = 0.0);
        for u in 0..h {
            let tmp_row = &mut self.scratch[u * w..(u + 1) * w];
            for v in 0..w {
                let x = coeffs[u * w + v];
                if x == 0.0 {
                    continue;
                }
                for (t, b) in tmp_row.iter_mut().zip(&cb[v * w..(v + 1) * w]) {
                    *t += x * b;
                }
            }
        }
        // out[m][n] = sum_u C_h[u][m] * tmp[u][n]
        out[..h * w].iter_mut().for_each(|o| *o = 0.0);
        for u in 0..h {
            let tmp_row = &self.scratch[u * w..(u + 1) * w];
            for m in 0..h {
                let k = rb[u * h + m];
                let out_row = &mut out[m * w..(m + 1) * w];
                for (o, t) in out_row.iter_mut().zip(tmp_row) {
                    *o += k * t;
                }
            }
        }
    }

    pub fn forward(&mut self, plane: &Plane) -> Spectrum {
        assert_eq!(plane.dims(), (self.rows(), self.cols()));
        let mut out = Plane::zeros(self.rows(), self.cols());
        self.forward_into(plane.data(), plane.cols(), out.data_mut());
        out
    }

    pub fn inverse(&mut self, spec: &Spectrum) -> Plane {
        assert_eq!(spec.dims(), (self.rows(), self.cols()));
        let mut out = Plane::zeros(self.rows(), self.cols());
        self.inverse_into(spec.data(), out.data_mut());
        out
    }
}

/// Orthonormal 2D DCT-II of a plane (separable evaluation).
pub fn dct2(plane: &Plane) -> Spectrum {
    assert!(
        plane.rows() > 0 && plane.cols() > 0,
        "dct2 of an empty plane"
    );
    Dct2d::new(plane.rows(), plane.cols()).forward(plane)
}

/// Inverse of [`dct2`] (orthonormal DCT-III).
pub fn idct2(spec: &Spectrum) -> Plane {
    assert!(
        spec.rows() > 0 && spec.cols() > 0,
        "idct2 of an empty spectrum"
    );
    Dct2d::new(spec.rows(), spec.cols()).inverse(spec)
}

fn alpha(k: usize, n: usize) -> f64 {
    if k == 0 {
        (1.0 / n as f64).sqrt()
    } else {
        (2.0 / n as f64).sqrt()
    }
}

/// `cos(pi (2i + 1) k / 2n)` indexed `[k * n + i]`.
fn cos_table(n: usize) -> Vec<f64> {
    let mut t = Vec::with_capacity(n * n);
    for k in 0..n {
        for i in 0..n {
            t.push((PI * (2 * i + 1) as f64 * k as f64 / (2 * n) as f64).cos());
        }
    }
    t
}

/// Direct quadruple-sum DCT-II. O(n^4); a reference path for checking [`dct2`].
pub fn dct2_naive(plane: &Plane) -> Spectrum {
    let (h, w) = plane.dims();
    let (ch, cw) = (cos_table(h), cos_table(w));
    Plane::from_fn(h, w, |u, v| {
        let mut acc = 0.0;
        for m in 0..h {
            let cu = ch[u * h + m];
            for n in 0..w {
                acc += plane.get(m, n) * cu * cw[v * w + n];
            }
        }
        alpha(u, h) * alpha(v, w) * acc
    })
}

/// Direct quadruple-sum inverse; reference path for [`idct2`].
pub fn idct2_naive(spec: &Spectrum) -> Plane {
    let (h, w) = spec.dims();
    let (ch, cw) = (cos_table(h), cos_table(w));
    Plane::from_fn(h, w, |m, n| {
        let mut acc = 0.0;
        for u in 0..h {
            let cu = alpha(u, h) * ch[u * h + m];
            for v in 0..w {
                acc += spec.get(u, v) * cu * alpha(v, w) * cw[v * w + n];
            }
        }
        acc
    })
}

/// Dense per-window spectra over a grid of valid (unpadded) windows.
#[derive(Clone, Debug)]
pub struct SlidingSpectra {
    rows: usize,
    cols: usize,
    window: usize,
    stride: usize,
    /// `rows * cols` blocks of `window * window` coefficients, block-major.
    data: Vec<f64>,
}

impl SlidingSpectra {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    /// Raw coefficients of block `(i, j)`.
    pub fn block_slice(&self, i: usize, j: usize) -> &[f64] {
        let n = self.window * self.window;
        let idx = (i * self.cols + j) * n;
        &self.data[idx..idx + n]
    }

    pub fn block(&self, i: usize, j: usize) -> Spectrum {
        Plane::from_vec(self.window, self.window, self.block_slice(i, j).to_vec())
            .expect("block dims")
    }
}

/// Number of valid window positions along an axis of length `len`.
pub fn window_count(len: usize, window: usize, stride: usize) -> usize {
    (len - window) / stride + 1
}

pub(crate) fn check_window(rows: usize, cols: usize, window: usize, stride: usize) -> Result<()> {
    if window == 0 {
        return Err(Error::arg("window must be at least 1"));
    }
    if stride == 0 {
        return Err(Error::arg("stride must be at least 1"));
    }
    if window > rows.min(cols) {
        return Err(Error::arg(format!(
            "window {window} exceeds plane {rows}x{cols}"
        )));
    }
    Ok(())
}

/// Sliding-window DCT: block `(i, j)` is `dct2` of the `window`×`window` patch at
/// `(i * stride, j * stride)`. No padding is applied.
pub fn sliding_dct(plane: &Plane, window: usize, stride: usize) -> Result<SlidingSpectra> {
    check_window(plane.rows(), plane.cols(), window, stride)?;
    let rows = window_count(plane.rows(), window, stride);
    let cols = window_count(plane.cols(), window, stride);
    let n = window * window;
    let mut data = vec![0.0; rows * cols * n];
    let mut kernel = Dct2d::new(window, window);
    let pitch = plane.cols();
    for i in 0..rows {
        for j in 0..cols {
            let offset = i * stride * pitch + j * stride;
            let idx = (i * cols + j) * n;
            kernel.forward_into(&plane.data()[offset..], pitch, &mut data[idx..idx + n]);
        }
    }
    Ok(SlidingSpectra {
        rows,
        cols,
        window,
        stride,
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_plane(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Plane {
        Plane::from_fn(h, w, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn constant_block_has_only_dc() {
        let spec = dct2(&Plane::filled(4, 4, 1.0));
        assert!((spec.get(0, 0) - 4.0).abs() < 1e-12);
        for (k, v) in spec.data().iter().enumerate().skip(1) {
            assert!(v.abs() < 1e-12, "coefficient {k} = {v}");
        }
    }

    #[test]
    fn delta_spectrum_inverts_to_constant() {
        let mut spec = Plane::zeros(4, 4);
        spec.set(0, 0, 4.0);
        let plane = idct2(&spec);
        assert!(plane.data().iter().all(|v| (v - 1.0).abs() < 1e-12));
        assert!(idct2(&Plane::zeros(5, 3)).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn separable_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (h, w) in [(8, 8), (5, 7), (1, 6), (10, 10)] {
            let p = random_plane(&mut rng, h, w);
            assert!(dct2(&p).max_abs_diff(&dct2_naive(&p)) < 1e-10);
            assert!(idct2(&p).max_abs_diff(&idct2_naive(&p)) < 1e-10);
        }
    }

    #[test]
    fn inverse_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s1 = random_plane(&mut rng, 6, 9);
        let s2 = random_plane(&mut rng, 6, 9);
        let (a, b) = (0.7, -2.3);
        let mut combo = s1.scale(a);
        combo.add_scaled(&s2, b);
        let mut expected = idct2(&s1).scale(a);
        expected.add_scaled(&idct2(&s2), b);
        assert!(idct2(&combo).max_abs_diff(&expected) < 1e-9);
    }

    #[test]
    fn basis_vectors_have_unit_norm() {
        let n = 8;
        for k in 0..n * n {
            let mut p = Plane::zeros(n, n);
            p.data_mut()[k] = 1.0;
            assert!((dct2(&p).energy() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sliding_grid_dims() {
        let p = Plane::zeros(64, 64);
        let s = sliding_dct(&p, 10, 2).unwrap();
        assert_eq!((s.rows(), s.cols()), (28, 28));
        let s = sliding_dct(&Plane::zeros(12, 17), 5, 3).unwrap();
        assert_eq!((s.rows(), s.cols()), (3, 5));
    }

    #[test]
    fn sliding_full_window_equals_dct2() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = random_plane(&mut rng, 9, 9);
        let s = sliding_dct(&p, 9, 1).unwrap();
        assert_eq!((s.rows(), s.cols()), (1, 1));
        assert!(s.block(0, 0).max_abs_diff(&dct2(&p)) < 1e-12);
    }

    #[test]
    fn sliding_blocks_match_naive_per_window() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = random_plane(&mut rng, 23, 19);
        let s = sliding_dct(&p, 6, 4).unwrap();
        for i in 0..s.rows() {
            for j in 0..s.cols() {
                let naive = dct2_naive(&p.window(i * 4, j * 4, 6, 6));
                assert!(s.block(i, j).max_abs_diff(&naive) < 1e-10);
            }
        }
    }

    #[test]
    fn sliding_rejects_oversized_window() {
        assert!(matches!(
            sliding_dct(&Plane::zeros(8, 12), 9, 1),
            Err(Error::Argument(_))
        ));
        assert!(sliding_dct(&Plane::zeros(8, 8), 4, 0).is_err());
    }
}
