//! Frequency-aware decomposition.
//!
//! Each channel is transformed with a full-image DCT, multiplied by the
//! effective filter of every band, and transformed back, giving one spatial
//! component per (band, channel). Components are stacked band-major:
//! `(band 1: channels..., band 2: channels..., ...)`.

use crate::dct::{Dct2d, Spectrum};
use crate::error::{Error, Result};
use crate::filterbank::FilterBank;
use crate::image::Image;
use crate::plane::Plane;

/// Band-filtered spatial components of an image.
#[derive(Clone, Debug, PartialEq)]
pub struct FrequencyComponents {
    n_bands: usize,
    channels: usize,
    planes: Vec<Plane>,
}

impl FrequencyComponents {
    pub fn new(n_bands: usize, channels: usize, planes: Vec<Plane>) -> Result<Self> {
        if planes.len() != n_bands * channels {
            return Err(Error::arg(format!(
                "{} planes for {n_bands} bands x {channels} channels",
                planes.len()
            )));
        }
        Ok(Self {
            n_bands,
            channels,
            planes,
        })
    }

    pub fn n_bands(&self) -> usize {
        self.n_bands
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn side(&self) -> usize {
        self.planes[0].rows()
    }

    /// Component of `band` for input channel `c`.
    pub fn plane(&self, band: usize, c: usize) -> &Plane {
        &self.planes[band * self.channels + c]
    }

    /// All components in stacking order.
    pub fn planes(&self) -> &[Plane] {
        &self.planes
    }

    pub fn into_planes(self) -> Vec<Plane> {
        self.planes
    }

    /// Sum over bands for each channel.
    pub fn reconstruct(&self) -> Vec<Plane> {
        (0..self.channels)
            .map(|c| {
                let mut acc = Plane::zeros(self.side(), self.side());
                for b in 0..self.n_bands {
                    acc.add_scaled(self.plane(b, c), 1.0);
                }
                acc
            })
            .collect()
    }
}

fn check_input(x: &Image, bank: &FilterBank) -> Result<()> {
    if x.height() != x.width() {
        return Err(Error::arg(format!(
            "decomposition needs a square image, got {}x{}",
            x.height(),
            x.width()
        )));
    }
    if bank.size() != x.height() {
        return Err(Error::arg(format!(
            "filter bank side {} does not match image side {}",
            bank.size(),
            x.height()
        )));
    }
    Ok(())
}

/// Per-channel DCT spectra of an image.
pub fn channel_spectra(x: &Image) -> Vec<Spectrum> {
    let mut kernel = Dct2d::new(x.height(), x.width());
    x.planes().iter().map(|p| kernel.forward(p)).collect()
}

/// `y_i = idct2(dct2(x) * (base_i + sigma(raw_i)))` for every band and channel.
pub fn fad_forward(x: &Image, bank: &FilterBank) -> Result<FrequencyComponents> {
    check_input(x, bank)?;
    let spectra = channel_spectra(x);
    Ok(forward_from_spectra(&spectra, bank))
}

pub(crate) fn forward_from_spectra(spectra: &[Spectrum], bank: &FilterBank) -> FrequencyComponents {
    let side = bank.size();
    let mut kernel = Dct2d::new(side, side);
    let effective = bank.effective();
    let mut planes = Vec::with_capacity(effective.len() * spectra.len());
    for filter in &effective {
        for spec in spectra {
            planes.push(kernel.inverse(&spec.hadamard(filter)));
        }
    }
    FrequencyComponents {
        n_bands: effective.len(),
        channels: spectra.len(),
        planes,
    }
}

/// Gradients of a scalar loss with respect to the input and the raw filters.
#[derive(Clone, Debug)]
pub struct FadGrads {
    /// One plane per input channel.
    pub input: Vec<Plane>,
    /// One plane per band, shaped like the raw filter.
    pub filters: Vec<Plane>,
}

fn check_upstream(upstream: &[Plane], x: &Image, bank: &FilterBank) -> Result<()> {
    check_input(x, bank)?;
    let expected = bank.len() * x.channels();
    if upstream.len() != expected {
        return Err(Error::arg(format!(
            "{} upstream planes, expected {expected}",
            upstream.len()
        )));
    }
    if upstream.iter().any(|p| p.dims() != (x.height(), x.width())) {
        return Err(Error::arg("upstream plane size mismatch"));
    }
    Ok(())
}

/// Backward pass of [`fad_forward`]. `upstream` holds `dL/dy` in stacking order.
///
/// Because the orthonormal DCT is its own inverse's adjoint, the gradient
/// reaching the filtered spectrum is `dct2(dL/dy)`.
pub fn fad_backward(upstream: &[Plane], x: &Image, bank: &FilterBank) -> Result<FadGrads> {
    check_upstream(upstream, x, bank)?;
    let spectra = channel_spectra(x);
    Ok(backward_from_spectra(upstream, &spectra, bank, true))
}

/// Filter gradients only; skips the input-gradient inverse transforms.
pub fn fad_filter_grads(upstream: &[Plane], x: &Image, bank: &FilterBank) -> Result<Vec<Plane>> {
    check_upstream(upstream, x, bank)?;
    let spectra = channel_spectra(x);
    Ok(backward_from_spectra(upstream, &spectra, bank, false).filters)
}

pub(crate) fn backward_from_spectra(
    upstream: &[Plane],
    spectra: &[Spectrum],
    bank: &FilterBank,
    want_input: bool,
) -> FadGrads {
    let side = bank.size();
    let channels = spectra.len();
    let mut kernel = Dct2d::new(side, side);
    let effective = bank.effective();
    let factors = bank.raw_grad_factors();
    let mut input = vec![Plane::zeros(side, side); if want_input { channels } else { 0 }];
    let mut filters = Vec::with_capacity(effective.len());
    for (band, (filter, factor)) in effective.iter().zip(&factors).enumerate() {
        let mut grad = Plane::zeros(side, side);
        for (c, spec) in spectra.iter().enumerate() {
            let g = kernel.forward(&upstream[band * channels + c]);
            for ((acc, gv), sv) in grad.data_mut().iter_mut().zip(g.data()).zip(spec.data()) {
                *acc += gv * sv;
            }
            if want_input {
                let back = kernel.inverse(&g.hadamard(filter));
                input[c].add_scaled(&back, 1.0);
            }
        }
        for (acc, f) in grad.data_mut().iter_mut().zip(factor.data()) {
            *acc *= f;
        }
        filters.push(grad);
    }
    FadGrads { input, filters }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dct::{dct2_naive, idct2_naive};
    use crate::filterbank::{make_fad_bands, LearnableFilter};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, side: usize, c: usize) -> Image {
        Image::from_fn(side, side, c, |_, _, _| rng.gen::<f64>()).unwrap()
    }

    fn random_bank(rng: &mut ChaCha8Rng, side: usize) -> FilterBank {
        let part = make_fad_bands(side).unwrap();
        let filters = (0..3)
            .map(|_| {
                LearnableFilter::from_raw(Plane::from_fn(side, side, |_, _| {
                    rng.gen_range(-1.5..1.5)
                }))
                .unwrap()
            })
            .collect();
        FilterBank::with_filters(part, filters).unwrap()
    }

    #[test]
    fn zero_filters_reconstruct_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_image(&mut rng, 16, 3);
        let out = fad_forward(&x, &FilterBank::fad(16).unwrap()).unwrap();
        assert_eq!(out.planes().len(), 9);
        for (c, rec) in out.reconstruct().iter().enumerate() {
            assert!(rec.max_abs_diff(&x.channel(c)) < 1e-9);
        }
    }

    #[test]
    fn constant_image_lives_in_low_band() {
        let x = Image::filled(8, 8, 1, 0.6).unwrap();
        let out = fad_forward(&x, &FilterBank::fad(8).unwrap()).unwrap();
        assert!(out.plane(0, 0).max_abs_diff(&x.channel(0)) < 1e-12);
        for b in 1..3 {
            assert!(out.plane(b, 0).data().iter().all(|v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn matches_brute_force_with_learned_filters() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_image(&mut rng, 16, 1);
        let bank = random_bank(&mut rng, 16);
        let out = fad_forward(&x, &bank).unwrap();
        let spec = dct2_naive(&x.channel(0));
        for (b, eff) in bank.effective().iter().enumerate() {
            let expected = idct2_naive(&spec.hadamard(eff));
            assert!(out.plane(b, 0).max_abs_diff(&expected) < 1e-8);
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        let x = Image::filled(8, 6, 1, 0.1).unwrap();
        assert!(fad_forward(&x, &FilterBank::fad(8).unwrap()).is_err());
        let x = Image::filled(8, 8, 1, 0.1).unwrap();
        assert!(fad_forward(&x, &FilterBank::fad(16).unwrap()).is_err());
        let up = vec![Plane::zeros(8, 8); 2];
        assert!(fad_backward(&up, &x, &FilterBank::fad(8).unwrap()).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_image(&mut rng, 8, 3);
        let bank = random_bank(&mut rng, 8);
        let g = fad_backward(&vec![Plane::zeros(8, 8); 9], &x, &bank).unwrap();
        assert!(g
            .input
            .iter()
            .chain(&g.filters)
            .all(|p| p.data().iter().all(|&v| v == 0.0)));
    }

    fn weighted_loss(x: &Image, bank: &FilterBank, weights: &[Plane]) -> f64 {
        fad_forward(x, bank)
            .unwrap()
            .planes()
            .iter()
            .zip(weights)
            .map(|(y, w)| y.hadamard(w).sum())
            .sum()
    }

    #[test]
    fn filter_grads_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let side = 8;
        let x = random_image(&mut rng, side, 3);
        let mut bank = FilterBank::fad(side).unwrap();
        let weights: Vec<_> = (0..9)
            .map(|_| Plane::from_fn(side, side, |_, _| rng.gen_range(-1.0..1.0)))
            .collect();
        let grads = fad_backward(&weights, &x, &bank).unwrap();
        let only = fad_filter_grads(&weights, &x, &bank).unwrap();
        assert_eq!(only, grads.filters);
        let h = 1e-4;
        for band in 0..3 {
            for k in [0, 1, 8, 9, 27, 63] {
                let orig = bank.filters()[band].raw().data()[k];
                bank.filters_mut()[band].raw_mut().data_mut()[k] = orig + h;
                let up = weighted_loss(&x, &bank, &weights);
                bank.filters_mut()[band].raw_mut().data_mut()[k] = orig - h;
                let down = weighted_loss(&x, &bank, &weights);
                bank.filters_mut()[band].raw_mut().data_mut()[k] = orig;
                let fd = (up - down) / (2.0 * h);
                let an = grads.filters[band].data()[k];
                assert!(
                    (fd - an).abs() <= 1e-4 * fd.abs().max(an.abs()).max(1e-6),
                    "band {band} k {k}: fd {fd} analytic {an}"
                );
            }
        }
    }
}
