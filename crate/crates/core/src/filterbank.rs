//! Band masks over a square DCT spectrum and the learnable residual filters
//! added on top of them.
//!
//! Coefficients are ordered by the normalized antidiagonal index
//! `d = (u + v) / (2 (S - 1))`, which runs from 0 at DC to 1 at the highest
//! frequency. Band membership is decided with exact integer arithmetic so ties
//! at a threshold always fall into the lower band.

use crate::error::{Error, Result};
use crate::plane::Plane;

/// Squashing function `(1 - e^-x) / (1 + e^-x)`, i.e. `tanh(x / 2)`.
#[inline]
pub fn sigma(x: f64) -> f64 {
    (x / 2.0).tanh()
}

/// Derivative of [`sigma`]: `(1 - sigma(x)^2) / 2`.
#[inline]
pub fn sigma_grad(x: f64) -> f64 {
    let s = sigma(x);
    (1.0 - s * s) / 2.0
}

/// A partition of an `S`×`S` spectrum into binary band masks.
#[derive(Clone, Debug, PartialEq)]
pub struct BandPartition {
    size: usize,
    bands: Vec<Plane>,
    /// Upper cut of each band on the normalized antidiagonal axis.
    thresholds: Vec<f64>,
}

impl BandPartition {
    /// Builds a partition from rational upper cut points `num / den` on the
    /// normalized antidiagonal axis. The last cut must be 1.
    fn from_cuts(size: usize, cuts: &[(usize, usize)]) -> Self {
        let span = 2 * (size - 1);
        let band_of = |u: usize, v: usize| {
            let k = u + v;
            // d <= num/den  <=>  k * den <= num * span
            cuts.iter()
                .position(|&(num, den)| k * den <= num * span)
                .expect("last cut covers the spectrum")
        };
        let mut bands = vec![Plane::zeros(size, size); cuts.len()];
        for u in 0..size {
            for v in 0..size {
                bands[band_of(u, v)].set(u, v, 1.0);
            }
        }
        let thresholds = cuts
            .iter()
            .map(|&(num, den)| num as f64 / den as f64)
            .collect();
        Self {
            size,
            bands,
            thresholds,
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn len(&self) -> usize {
        self.bands.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bands.is_empty()
    }

    pub fn bands(&self) -> &[Plane] {
        &self.bands
    }

    pub fn band(&self, i: usize) -> &Plane {
        &self.bands[i]
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    /// Number of coefficients in each band.
    pub fn counts(&self) -> Vec<usize> {
        self.bands.iter().map(|b| b.sum() as usize).collect()
    }
}

/// The three-band decomposition mask set: low band up to 1/16 of the
/// antidiagonal axis, middle band up to 1/8, high band for the remaining 7/8.
pub fn make_fad_bands(size: usize) -> Result<BandPartition> {
    if size < 2 {
        return Err(Error::arg(format!("spectrum side {size} < 2")));
    }
    Ok(BandPartition::from_cuts(size, &[(1, 16), (1, 8), (1, 1)]))
}

/// `m` equal-width bands from low to high frequency; band `i` covers
/// `d in ((i-1)/m, i/m]`, and band 1 also contains DC.
pub fn make_lfs_bands(size: usize, m: usize) -> Result<BandPartition> {
    if size < 2 {
        return Err(Error::arg(format!("spectrum side {size} < 2")));
    }
    if m == 0 {
        return Err(Error::arg("band count must be at least 1"));
    }
    if m > 2 * (size - 1) + 1 {
        return Err(Error::arg(format!(
            "{m} bands exceed the {} antidiagonals of a {size}x{size} spectrum",
            2 * (size - 1) + 1
        )));
    }
    let cuts: Vec<_> = (1..=m).map(|i| (i, m)).collect();
    Ok(BandPartition::from_cuts(size, &cuts))
}

/// Trainable residual added to a base mask through [`sigma`].
#[derive(Clone, Debug, PartialEq)]
pub struct LearnableFilter {
    raw: Plane,
    pub trainable: bool,
}

impl LearnableFilter {
    /// Zero-initialized filter, so the effective filter starts as the base mask.
    pub fn zeros(size: usize) -> Self {
        Self {
            raw: Plane::zeros(size, size),
            trainable: true,
        }
    }

    pub fn from_raw(raw: Plane) -> Result<Self> {
        if raw.rows() != raw.cols() {
            return Err(Error::arg("learnable filter must be square"));
        }
        if raw.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("learnable filter has non-finite entries"));
        }
        Ok(Self {
            raw,
            trainable: true,
        })
    }

    pub fn size(&self) -> usize {
        self.raw.rows()
    }

    pub fn raw(&self) -> &Plane {
        &self.raw
    }

    pub fn raw_mut(&mut self) -> &mut Plane {
        &mut self.raw
    }
}

/// `base + sigma(raw)`, element-wise.
pub fn effective_filter(base: &Plane, learnable: &LearnableFilter) -> Result<Plane> {
    if base.dims() != learnable.raw.dims() {
        return Err(Error::arg(format!(
            "base mask {:?} and learnable filter {:?} differ in size",
            base.dims(),
            learnable.raw.dims()
        )));
    }
    let data = base
        .data()
        .iter()
        .zip(learnable.raw.data())
        .map(|(b, r)| b + sigma(*r))
        .collect();
    Plane::from_vec(base.rows(), base.cols(), data)
}

/// Base masks paired with one learnable residual per band.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterBank {
    partition: BandPartition,
    filters: Vec<LearnableFilter>,
}

impl FilterBank {
    /// Bank with zero residuals on every band.
    pub fn new(partition: BandPartition) -> Self {
        let filters = (0..partition.len())
            .map(|_| LearnableFilter::zeros(partition.size()))
            .collect();
        Self { partition, filters }
    }

    pub fn with_filters(partition: BandPartition, filters: Vec<LearnableFilter>) -> Result<Self> {
        if filters.len() != partition.len() {
            return Err(Error::arg(format!(
                "{} filters for {} bands",
                filters.len(),
                partition.len()
            )));
        }
        if filters.iter().any(|f| f.size() != partition.size()) {
            return Err(Error::arg("filter size does not match partition"));
        }
        Ok(Self { partition, filters })
    }

    pub fn fad(size: usize) -> Result<Self> {
        Ok(Self::new(make_fad_bands(size)?))
    }

    pub fn lfs(size: usize, m: usize) -> Result<Self> {
        Ok(Self::new(make_lfs_bands(size, m)?))
    }

    pub fn size(&self) -> usize {
        self.partition.size()
    }

    pub fn len(&self) -> usize {
        self.partition.len()
    }

    pub fn is_empty(&self) -> bool {
        self.partition.is_empty()
    }

    pub fn partition(&self) -> &BandPartition {
        &self.partition
    }

    pub fn filters(&self) -> &[LearnableFilter] {
        &self.filters
    }

    pub fn filters_mut(&mut self) -> &mut [LearnableFilter] {
        &mut self.filters
    }

    /// Effective filter of every band.
    pub fn effective(&self) -> Vec<Plane> {
        self.partition
            .bands()
            .iter()
            .zip(&self.filters)
            .map(|(b, f)| effective_filter(b, f).expect("sizes checked at construction"))
            .collect()
    }

    /// `sigma'(raw)` for every band, the chain factor from effective filter to raw.
    pub fn raw_grad_factors(&self) -> Vec<Plane> {
        self.filters
            .iter()
            .map(|f| {
                let data = f.raw.data().iter().map(|&r| sigma_grad(r)).collect();
                Plane::from_vec(f.size(), f.size(), data).expect("square")
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn members(p: &Plane) -> Vec<(usize, usize)> {
        let mut out = vec![];
        for u in 0..p.rows() {
            for v in 0..p.cols() {
                if p.get(u, v) == 1.0 {
                    out.push((u, v));
                }
            }
        }
        out
    }

    fn assert_partition(p: &BandPartition) {
        let s = p.size();
        for u in 0..s {
            for v in 0..s {
                let vals: Vec<_> = p.bands().iter().map(|b| b.get(u, v)).collect();
                assert!(vals.iter().all(|&x| x == 0.0 || x == 1.0));
                assert_eq!(vals.iter().sum::<f64>(), 1.0, "({u},{v})");
            }
        }
    }

    #[test]
    fn sigma_basics() {
        assert_eq!(sigma(0.0), 0.0);
        let x = 2.0 * 0.5f64.atanh();
        assert!((sigma(x) - 0.5).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let x: f64 = rng.gen_range(-30.0..30.0);
            assert_eq!(sigma(x) + sigma(-x), 0.0);
            let logistic_form = (1.0 - (-x).exp()) / (1.0 + (-x).exp());
            assert!((sigma(x) - logistic_form).abs() < 1e-12);
        }
        assert!(sigma(1e6) <= 1.0 && sigma(-1e6) >= -1.0);
    }

    #[test]
    fn sigma_grad_matches_finite_difference() {
        assert_eq!(sigma_grad(0.0), 0.5);
        let h = 1e-5;
        for x in [-3.0, -1.0, 0.0, 1.0, 3.0] {
            let fd = (sigma(x + h) - sigma(x - h)) / (2.0 * h);
            assert!((fd - sigma_grad(x)).abs() < 1e-8);
        }
        for k in -200..=200 {
            assert!(sigma_grad(k as f64 * 0.1) > 0.0);
        }
    }

    #[test]
    fn fad_bands_for_s8() {
        let p = make_fad_bands(8).unwrap();
        assert_eq!(members(p.band(0)), vec![(0, 0)]);
        assert_eq!(members(p.band(1)), vec![(0, 1), (1, 0)]);
        assert_eq!(p.counts(), vec![1, 2, 61]);
        assert_partition(&p);
    }

    #[test]
    fn fad_bands_s64_high_band_dominates() {
        let c = make_fad_bands(64).unwrap().counts();
        assert!(c[0] + c[1] < c[2]);
        // d <= 1/16 <=> u + v <= 7.875, so u + v <= 7: 36 coefficients.
        assert_eq!(c[0], 36);
    }

    #[test]
    fn lfs_bands_s10_m6() {
        let p = make_lfs_bands(10, 6).unwrap();
        assert_eq!(p.len(), 6);
        let low = members(p.band(0));
        assert_eq!(low.len(), 10);
        assert!(low.iter().all(|&(u, v)| u + v <= 3));
        assert_partition(&p);
        assert_eq!(p.counts().iter().sum::<usize>(), 100);
    }

    #[test]
    fn lfs_single_band_is_all_ones() {
        let p = make_lfs_bands(5, 1).unwrap();
        assert!(p.band(0).data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn partitions_for_all_tested_sizes() {
        for s in [8, 10, 16, 64] {
            assert_partition(&make_fad_bands(s).unwrap());
            for m in [1, 3, 6] {
                assert_partition(&make_lfs_bands(s, m).unwrap());
            }
        }
    }

    #[test]
    fn band_argument_errors() {
        assert!(make_fad_bands(1).is_err());
        assert!(make_lfs_bands(1, 1).is_err());
        assert!(make_lfs_bands(4, 0).is_err());
        assert!(make_lfs_bands(4, 7).is_ok());
        assert!(make_lfs_bands(4, 8).is_err());
    }

    #[test]
    fn effective_filter_ranges() {
        let base = make_fad_bands(8).unwrap().band(2).clone();
        let zero = LearnableFilter::zeros(8);
        assert_eq!(effective_filter(&base, &zero).unwrap(), base);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let raw = Plane::from_fn(8, 8, |_, _| rng.gen_range(-5.0..5.0));
        let eff = effective_filter(&base, &LearnableFilter::from_raw(raw).unwrap()).unwrap();
        for (e, b) in eff.data().iter().zip(base.data()) {
            assert!((e - b).abs() < 1.0);
        }

        let big = LearnableFilter::from_raw(Plane::filled(8, 8, 80.0)).unwrap();
        let ones = Plane::filled(8, 8, 1.0);
        assert!(effective_filter(&ones, &big)
            .unwrap()
            .data()
            .iter()
            .all(|&v| (v - 2.0).abs() < 1e-12));
        let neg = LearnableFilter::from_raw(Plane::filled(8, 8, -80.0)).unwrap();
        assert!(effective_filter(&Plane::zeros(8, 8), &neg)
            .unwrap()
            .data()
            .iter()
            .all(|&v| (v + 1.0).abs() < 1e-12));

        assert!(effective_filter(&Plane::zeros(4, 4), &zero).is_err());
    }
}
